//! Output formatting: significant-digit rounding and regression tables.

use crate::estimator::{EstimationResult, INTERCEPT};

/// Default number of significant digits for serialized output.
pub const DEFAULT_SIG_DIGITS: usize = 6;

/// Rounds `x` to `digits` significant digits. Non-finite values pass through.
pub fn round_sig(x: f64, digits: usize) -> f64 {
    if !x.is_finite() || x == 0.0 || digits == 0 {
        return x;
    }
    format!("{:.*e}", digits - 1, x)
        .parse()
        .expect("scientific notation parses")
}

/// Recursively rounds every number in a JSON value.
pub fn round_json(value: &mut serde_json::Value, digits: usize) {
    match value {
        serde_json::Value::Number(n) => {
            if n.is_f64() {
                if let Some(r) = n
                    .as_f64()
                    .and_then(|v| serde_json::Number::from_f64(round_sig(v, digits)))
                {
                    *n = r;
                }
            }
        }
        serde_json::Value::Array(items) => items.iter_mut().for_each(|v| round_json(v, digits)),
        serde_json::Value::Object(map) => map.values_mut().for_each(|v| round_json(v, digits)),
        _ => {}
    }
}

/// Formats a float with `digits` significant digits for CSV/text output.
pub fn fmt_sig(x: f64, digits: Option<usize>) -> String {
    match digits {
        Some(d) => round_sig(x, d).to_string(),
        None => x.to_string(),
    }
}

/// Renders one or more fits as an aligned text table: coefficient, robust
/// standard error in parentheses and `*` when the two-sided p-value is at
/// most 0.05. The intercept is listed last.
pub fn regression_table(title: &str, columns: &[(&str, &EstimationResult)]) -> String {
    let mut names: Vec<&str> = Vec::new();
    for (_, r) in columns {
        for name in r.coefficients.keys() {
            if name != INTERCEPT && !names.contains(&name.as_str()) {
                names.push(name);
            }
        }
    }
    if columns
        .iter()
        .any(|(_, r)| r.coefficients.contains_key(INTERCEPT))
    {
        names.push(INTERCEPT);
    }

    let cell = |r: &EstimationResult, name: &str| -> String {
        match (r.coefficient(name), r.std_error(name)) {
            (Some(c), Some(se)) => {
                let star = if r.is_significant(name, 0.05) { "*" } else { "" };
                format!("{c:.4}{star} ({se:.4})")
            }
            _ => String::new(),
        }
    };
    let mut rows: Vec<Vec<String>> = Vec::new();
    rows.push(
        std::iter::once("Variable".to_string())
            .chain(columns.iter().map(|(label, _)| label.to_string()))
            .collect(),
    );
    for name in &names {
        rows.push(
            std::iter::once(name.to_string())
                .chain(columns.iter().map(|(_, r)| cell(r, name)))
                .collect(),
        );
    }
    rows.push(
        std::iter::once("Number of observations".to_string())
            .chain(columns.iter().map(|(_, r)| r.n_obs.to_string()))
            .collect(),
    );
    rows.push(
        std::iter::once("R^2".to_string())
            .chain(columns.iter().map(|(_, r)| format!("{:.4}", r.r_squared)))
            .collect(),
    );

    let widths: Vec<usize> = (0..rows[0].len())
        .map(|j| rows.iter().map(|r| r[j].len()).max().unwrap_or(0))
        .collect();
    let total: usize = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
    let rule = "-".repeat(total);
    let line = |row: &Vec<String>| -> String {
        row.iter()
            .enumerate()
            .map(|(j, c)| {
                if j == 0 {
                    format!("{c:<w$}", w = widths[j])
                } else {
                    format!("{c:>w$}", w = widths[j])
                }
            })
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    let n_coef = names.len();
    let mut out = String::new();
    out.push_str(title);
    out.push('\n');
    out.push_str(&rule);
    out.push('\n');
    out.push_str(&line(&rows[0]));
    out.push('\n');
    out.push_str(&rule);
    out.push('\n');
    for row in &rows[1..=n_coef] {
        out.push_str(&line(row));
        out.push('\n');
    }
    out.push_str(&rule);
    out.push('\n');
    for row in &rows[n_coef + 1..] {
        out.push_str(&line(row));
        out.push('\n');
    }
    out.push_str(&rule);
    out.push('\n');
    out.push_str("Robust standard errors in parentheses; * p <= 0.05 (two-sided z test).\n");
    for (label, r) in columns {
        for w in &r.warnings {
            out.push_str(&format!("warning [{label}]: {w}\n"));
        }
    }
    out
}
