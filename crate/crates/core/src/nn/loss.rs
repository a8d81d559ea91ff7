//! Batch-mean task losses and their gradients w.r.t. the head outputs.

use super::Tensor2;
use crate::error::{Error, Result};

/// Probabilities are clamped to [PROB_EPS, 1 - PROB_EPS] before logs.
pub const PROB_EPS: f64 = 1e-7;

fn check_len(context: &str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::shape(context, a, b));
    }
    if a == 0 {
        return Err(Error::Degenerate(format!("{context} on an empty batch")));
    }
    Ok(())
}

pub fn mse(pred: &[f64], target: &[f64]) -> Result<f64> {
    check_len("mse", target.len(), pred.len())?;
    let sum: f64 = pred
        .iter()
        .zip(target)
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok(sum / pred.len() as f64)
}

pub fn mse_grad(pred: &[f64], target: &[f64]) -> Result<Vec<f64>> {
    check_len("mse", target.len(), pred.len())?;
    let n = pred.len() as f64;
    Ok(pred
        .iter()
        .zip(target)
        .map(|(p, t)| 2.0 * (p - t) / n)
        .collect())
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

fn is_clamped(p: f64) -> bool {
    !(PROB_EPS..=1.0 - PROB_EPS).contains(&p)
}

/// Binary cross-entropy; `target` in {0, 1}.
pub fn bce(prob: &[f64], target: &[f64]) -> Result<f64> {
    check_len("bce", target.len(), prob.len())?;
    let sum: f64 = prob
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let p = clamp_prob(p);
            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        })
        .sum();
    Ok(sum / prob.len() as f64)
}

/// Gradient of [`bce`] w.r.t. the probabilities (zero where clamped).
pub fn bce_grad(prob: &[f64], target: &[f64]) -> Result<Vec<f64>> {
    check_len("bce", target.len(), prob.len())?;
    let n = prob.len() as f64;
    Ok(prob
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            if is_clamped(p) {
                0.0
            } else {
                (-t / p + (1.0 - t) / (1.0 - p)) / n
            }
        })
        .collect())
}

fn check_classes(probs: &Tensor2, classes: &[usize]) -> Result<()> {
    check_len("ce", probs.rows(), classes.len())?;
    if let Some(&c) = classes.iter().find(|&&c| c >= probs.cols()) {
        return Err(Error::Domain(format!(
            "class index {c} out of range 0..{}",
            probs.cols()
        )));
    }
    Ok(())
}

/// Categorical cross-entropy against one-hot targets.
pub fn ce(probs: &Tensor2, classes: &[usize]) -> Result<f64> {
    check_classes(probs, classes)?;
    let sum: f64 = classes
        .iter()
        .enumerate()
        .map(|(r, &c)| -clamp_prob(probs.get(r, c)).ln())
        .sum();
    Ok(sum / classes.len() as f64)
}

/// Gradient of [`ce`] w.r.t. the probabilities.
pub fn ce_grad(probs: &Tensor2, classes: &[usize]) -> Result<Tensor2> {
    check_classes(probs, classes)?;
    let n = classes.len() as f64;
    let mut grad = Tensor2::zeros(probs.rows(), probs.cols());
    for (r, &c) in classes.iter().enumerate() {
        let p = probs.get(r, c);
        if !is_clamped(p) {
            grad.set(r, c, -1.0 / (p * n));
        }
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{central_difference, relative_error};

    #[test]
    fn mse_zero_on_match() {
        assert_eq!(mse(&[1.0, 2.5], &[1.0, 2.5]).unwrap(), 0.0);
        assert_eq!(mse(&[1.0, 3.0], &[0.0, 1.0]).unwrap(), 2.5);
        assert!(mse(&[], &[]).is_err());
    }

    #[test]
    fn bce_half() {
        let l = bce(&[0.5], &[1.0]).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn ce_uniform() {
        let probs = Tensor2::filled(3, 4, 0.25);
        let l = ce(&probs, &[0, 3, 2]).unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-15);
        assert!((l - 1.386_294).abs() < 1e-6);
        assert!(ce(&probs, &[0, 4, 1]).is_err());
    }

    #[test]
    fn clamped_logs_are_finite() {
        assert!(bce(&[0.0, 1.0], &[1.0, 0.0]).unwrap().is_finite());
        assert!(ce(&Tensor2::new(1, 2, vec![0.0, 1.0]).unwrap(), &[0])
            .unwrap()
            .is_finite());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let pred = [1.3, 4.2, 6.9];
        let target = [2.0, 4.0, 7.0];
        let g = mse_grad(&pred, &target).unwrap();
        let fd = central_difference(&pred, 1e-5, |p| mse(p, &target).unwrap());
        assert!(relative_error(&g, &fd) < 1e-8);

        let prob = [0.2, 0.7, 0.55];
        let bins = [0.0, 1.0, 1.0];
        let g = bce_grad(&prob, &bins).unwrap();
        let fd = central_difference(&prob, 1e-6, |p| bce(p, &bins).unwrap());
        assert!(relative_error(&g, &fd) < 1e-8);

        let probs = Tensor2::new(2, 3, vec![0.2, 0.3, 0.5, 0.6, 0.1, 0.3]).unwrap();
        let classes = [2, 1];
        let g = ce_grad(&probs, &classes).unwrap();
        let fd = central_difference(probs.data(), 1e-6, |p| {
            ce(&Tensor2::new(2, 3, p.to_vec()).unwrap(), &classes).unwrap()
        });
        assert!(relative_error(g.data(), &fd) < 1e-8);
    }
}
