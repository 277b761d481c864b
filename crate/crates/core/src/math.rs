//! Scalar helpers shared by the codec and the loss.

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Inverse of [`sigmoid`]; `None` outside the open unit interval.
pub fn logit(p: f64) -> Option<f64> {
    if p > 0.0 && p < 1.0 {
        let x = (p / (1.0 - p)).ln();
        x.is_finite().then_some(x)
    } else {
        None
    }
}

/// Binary cross-entropy of `sigmoid(x)` against target `y`, evaluated on the
/// logit in the overflow-free form `max(x, 0) - x*y + ln(1 + e^-|x|)`.
pub fn bce_with_logits(x: f64, y: f64) -> f64 {
    x.max(0.0) - x * y + (-x.abs()).exp().ln_1p()
}

/// Pairwise (tree) summation: fixed association order for a given length.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const LEAF: usize = 32;
    if values.len() <= LEAF {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}
