use crate::tensor::BCE_EPSILON;
use crate::{Error, Result};

/// Binary cross-entropy `−[y ln p + (1−y) ln(1−p)]` with `p` clamped to
/// `[1e-7, 1 − 1e-7]`.
pub fn bce_loss(p: f64, label: f64) -> Result<f64> {
    check_label(label)?;
    let p = p.clamp(BCE_EPSILON, 1.0 - BCE_EPSILON);
    Ok(-(label * p.ln() + (1.0 - label) * (1.0 - p).ln()))
}

/// `∂L/∂p = (p − y) / (p (1 − p))` inside the clamp range, zero outside.
pub fn bce_gradient(p: f64, label: f64) -> Result<f64> {
    check_label(label)?;
    if !(BCE_EPSILON..=1.0 - BCE_EPSILON).contains(&p) {
        return Ok(0.0);
    }
    Ok((p - label) / (p * (1.0 - p)))
}

fn check_label(label: f64) -> Result<()> {
    if label == 0.0 || label == 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidLabel(label))
    }
}
