use crate::error::{Error, Result};

/// Guard added to a vector norm before dividing.
pub const NORM_EPS: f64 = 1e-12;

/// Linear-interpolation percentile (numpy's default rule).
pub fn percentile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let i = (p.clamp(0.0, 100.0) / 100.0) * (v.len() - 1) as f64;
    let lo = i.floor() as usize;
    let hi = i.ceil() as usize;
    Ok(v[lo] + (i - lo as f64) * (v[hi] - v[lo]))
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

// Largest double below 1.
const P_MAX: f64 = 1.0 - f64::EPSILON / 2.0;

/// Max-subtracted softmax written into `out`. Outputs stay strictly inside
/// (0, 1) even when an exponential underflows.
pub fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &z) in out.iter_mut().zip(logits) {
        *o = (z - m).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o = (*o / sum).clamp(f64::MIN_POSITIVE, P_MAX);
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; logits.len()];
    softmax_into(logits, &mut out);
    out
}

/// `v / (‖v‖ + 1e-12)`. The flag is set when `‖v‖ < 1e-8`, in which case the
/// output is near zero rather than unit length.
pub fn l2_normalize(v: &[f64]) -> (Vec<f64>, bool) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let degenerate = norm < 1e-8;
    if degenerate {
        log::warn!("degenerate vector (norm {norm:e}) during l2 normalization");
    }
    let d = norm + NORM_EPS;
    (v.iter().map(|x| x / d).collect(), degenerate)
}
