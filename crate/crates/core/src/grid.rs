//! Parsing and printing of numeric grids such as `0.5:0.95:0.05`.

use crate::error::{Error, Result};

/// Rounds to nine decimals so grid points land on the double nearest their
/// decimal spelling.
pub fn snap(x: f64) -> f64 {
    (x * 1e9).round() / 1e9
}

/// Parses `start:end:step` (inclusive), a comma list, or a single number.
/// Square brackets are optional.
pub fn parse_grid(text: &str) -> Result<Vec<f64>> {
    let s = text.trim().trim_start_matches('[').trim_end_matches(']');
    let num = |t: &str| {
        t.trim()
            .parse::<f64>()
            .map_err(|_| Error::invalid("grid", format!("`{t}` in `{text}` is not a number")))
    };
    if s.contains(':') {
        let parts: Vec<&str> = s.split(':').collect();
        let [a, b, step] = parts[..] else {
            return Err(Error::invalid("grid", format!("`{text}` is not start:end:step")));
        };
        let (a, b, step) = (num(a)?, num(b)?, num(step)?);
        if step.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) || b < a {
            return Err(Error::invalid("grid", format!("`{text}` is empty or has a non-positive step")));
        }
        let n = ((b - a) / step + 1e-9).floor() as usize + 1;
        Ok((0..n).map(|i| snap(a + i as f64 * step)).collect())
    } else {
        s.split(',').map(num).collect()
    }
}

/// Compact text form: a single value, `start:end:step` for evenly spaced
/// grids, otherwise a comma list.
pub fn format_grid(values: &[f64]) -> String {
    match values {
        [] => String::new(),
        [v] => format!("{}", snap(*v)),
        [a, b, ..] => {
            let step = snap(b - a);
            let even = values
                .windows(2)
                .all(|w| (snap(w[1] - w[0]) - step).abs() < 1e-9);
            if even && values.len() > 2 {
                format!("{}:{}:{}", snap(*a), snap(values[values.len() - 1]), step)
            } else {
                values
                    .iter()
                    .map(|v| format!("{}", snap(*v)))
                    .collect::<Vec<_>>()
                    .join(",")
            }
        }
    }
}
