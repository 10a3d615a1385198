//! Benchmark fixtures.

use smrkit::coding::{CurvePoint, RateSmrCurve};

/// Rate-SMR curve with `n` points whose log-rate is a shifted cubic.
pub fn curve(label: &str, n: usize, shift: f64) -> RateSmrCurve {
    RateSmrCurve {
        label: label.into(),
        points: (0..n)
            .map(|i| {
                let s = 0.6 + 0.35 * i as f64 / (n - 1) as f64;
                let u = s - 0.75;
                CurvePoint {
                    threshold: s,
                    mean_bpp: 10f64.powf(shift + 2.0 * u + 4.0 * u * u * u),
                    mean_smr: s,
                }
            })
            .collect(),
    }
}
