//! Sinusoidal encoding of a 3-d coordinate over geometric periods.
//!
//! Layout per row: for each axis, for each period, `(sin, cos)`.

use std::f64::consts::TAU;

/// Values per axis per period.
pub const POSENC_PER_AXIS: usize = 2;

/// `n` periods `0.5·2^i`; 13 periods span 0.5 to 2048.
pub fn periods(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 * f64::powi(2.0, i as i32)).collect()
}

pub fn posenc_into(y: &[f64], periods: &[f64], out: &mut [f64]) {
    let per = periods.len() * POSENC_PER_AXIS;
    debug_assert_eq!(out.len(), 3 * per);
    for a in 0..3 {
        for (i, p) in periods.iter().enumerate() {
            let (s, c) = (TAU * y[a] / p).sin_cos();
            out[a * per + 2 * i] = s;
            out[a * per + 2 * i + 1] = c;
        }
    }
}

pub fn posenc(y: &[f64; 3], periods: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; 3 * periods.len() * POSENC_PER_AXIS];
    posenc_into(y, periods, &mut out);
    out
}

/// Accumulates `∂/∂y` of `⟨g, posenc(y)⟩` into `dy`.
pub fn posenc_backward_into(y: &[f64], periods: &[f64], g: &[f64], dy: &mut [f64]) {
    let per = periods.len() * POSENC_PER_AXIS;
    for a in 0..3 {
        let mut acc = 0.0;
        for (i, p) in periods.iter().enumerate() {
            let w = TAU / p;
            let (s, c) = (w * y[a]).sin_cos();
            acc += w * (c * g[a * per + 2 * i] - s * g[a * per + 2 * i + 1]);
        }
        dy[a] += acc;
    }
}
