//! Loss values on plain slices, for evaluation code that does not need a tape.

use crate::error::{NnError, Result};

/// Mean |pred − target| over cells where `target` is not NaN.
pub fn masked_mae(pred: &[f64], target: &[f64]) -> Result<f64> {
    masked_mean(pred, target, |d| d.abs())
}

/// Mean (pred − target)² over cells where `target` is not NaN.
pub fn masked_mse(pred: &[f64], target: &[f64]) -> Result<f64> {
    masked_mean(pred, target, |d| d * d)
}

fn masked_mean(pred: &[f64], target: &[f64], f: impl Fn(f64) -> f64) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(NnError::Argument(format!(
            "pred has {} cells, target {}",
            pred.len(),
            target.len()
        )));
    }
    let mut s = 0.0;
    let mut n = 0usize;
    for (p, t) in pred.iter().zip(target) {
        if !t.is_nan() {
            s += f(p - t);
            n += 1;
        }
    }
    if n == 0 {
        return Err(NnError::Contract("no valid target cells".into()));
    }
    Ok(s / n as f64)
}

/// KL(N(μ, σ²) ‖ N(0, 1)) summed over all coordinates.
pub fn kl_normal(mu: &[f64], sigma: &[f64]) -> Result<f64> {
    if mu.len() != sigma.len() {
        return Err(NnError::Argument("mu/sigma length mismatch".into()));
    }
    let mut s = 0.0;
    for (m, sg) in mu.iter().zip(sigma) {
        if !(*sg > 0.0) {
            return Err(NnError::Contract(format!("sigma must be positive, got {sg}")));
        }
        s += 0.5 * (m * m + sg * sg - 1.0 - 2.0 * sg.ln());
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_counted_mae() {
        let v = masked_mae(&[1.0, 2.0, 3.0], &[1.0, f64::NAN, 5.0]).unwrap();
        assert_eq!(v, 1.0);
        assert_eq!(masked_mae(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!(masked_mae(&[1.0], &[f64::NAN]).is_err());
    }

    #[test]
    fn kl_closed_forms() {
        assert_eq!(kl_normal(&[0.0], &[1.0]).unwrap(), 0.0);
        assert_eq!(kl_normal(&[1.0], &[1.0]).unwrap(), 0.5);
        assert!(kl_normal(&[0.0], &[0.0]).is_err());
    }
}
