//! Pearson correlation, significance and auxiliary-task metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pearson product-moment correlation (two-pass, 64-bit accumulation).
pub fn pearson_r(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::shape("pearson_r", x.len(), y.len()));
    }
    let n = x.len();
    if n < 3 {
        return Err(Error::Degenerate(format!(
            "pearson_r needs at least 3 pairs, got {n}"
        )));
    }
    let mean_x = x.iter().sum::<f64>() / n as f64;
    let mean_y = y.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let dx = a - mean_x;
        let dy = b - mean_y;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Degenerate("pearson_r on a constant vector".into()));
    }
    let r = sxy / (sxx * syy).sqrt();
    if !r.is_finite() {
        return Err(Error::Numeric("pearson_r".into()));
    }
    Ok(r.clamp(-1.0, 1.0))
}

/// Two-sided p-value for a sample correlation `r` over `n` pairs
/// (Student's t with n-2 degrees of freedom).
pub fn p_value(r: f64, n: usize) -> Result<f64> {
    if n < 4 {
        return Err(Error::Degenerate(format!("p_value needs n >= 4, got {n}")));
    }
    if !(-1.0..=1.0).contains(&r) {
        return Err(Error::Domain(format!("correlation {r} outside [-1, 1]")));
    }
    if r.abs() == 1.0 {
        return Ok(0.0);
    }
    let df = (n - 2) as f64;
    let t2 = r * r * df / (1.0 - r * r);
    // P(|T| > t) = I_{df/(df+t^2)}(df/2, 1/2)
    regularized_incomplete_beta(df / (df + t2), df / 2.0, 0.5)
}

fn ln_gamma(x: f64) -> f64 {
    // Lanczos approximation, g = 7, n = 9.
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEF[0];
    for (i, c) in COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// I_x(a, b) by the Lentz continued fraction.
pub(crate) fn regularized_incomplete_beta(x: f64, a: f64, b: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::Domain(format!("incomplete beta at x = {x}")));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    if x == 1.0 {
        return Ok(1.0);
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    // The fraction converges fast for x < (a+1)/(a+b+2); use the symmetry otherwise.
    if x < (a + 1.0) / (a + b + 2.0) {
        Ok(ln_front.exp() * beta_cf(x, a, b)? / a)
    } else {
        Ok(1.0 - ln_front.exp() * beta_cf(1.0 - x, b, a)? / b)
    }
}

fn beta_cf(x: f64, a: f64, b: f64) -> Result<f64> {
    const MAX_ITER: usize = 500;
    const EPS: f64 = 1e-15;
    const TINY: f64 = 1e-300;

    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            return Ok(h);
        }
    }
    Err(Error::Numeric(format!(
        "incomplete beta continued fraction did not converge (x={x}, a={a}, b={b})"
    )))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub r_empathy: Option<f64>,
    pub r_distress: Option<f64>,
    /// Mean of the two correlations when both are present.
    pub r_average: Option<f64>,
    pub n: usize,
    pub p_empathy: Option<f64>,
    pub p_distress: Option<f64>,
}

impl CorrelationReport {
    /// Correlates whichever of the two targets are supplied as (pred, gold) pairs.
    pub fn compute(
        empathy: Option<(&[f64], &[f64])>,
        distress: Option<(&[f64], &[f64])>,
    ) -> Result<Self> {
        if empathy.is_none() && distress.is_none() {
            return Err(Error::Missing("no predictions to evaluate".into()));
        }
        let one = |pair: Option<(&[f64], &[f64])>| -> Result<(Option<f64>, Option<f64>, usize)> {
            match pair {
                None => Ok((None, None, 0)),
                Some((pred, gold)) => {
                    let r = pearson_r(pred, gold)?;
                    let p = if pred.len() >= 4 {
                        Some(p_value(r, pred.len())?)
                    } else {
                        None
                    };
                    Ok((Some(r), p, pred.len()))
                }
            }
        };
        let (r_empathy, p_empathy, n_e) = one(empathy)?;
        let (r_distress, p_distress, n_d) = one(distress)?;
        let r_average = match (r_empathy, r_distress) {
            (Some(e), Some(d)) => Some((e + d) / 2.0),
            _ => None,
        };
        Ok(Self {
            r_empathy,
            r_distress,
            r_average,
            n: n_e.max(n_d),
            p_empathy,
            p_distress,
        })
    }

    pub fn to_table(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"));
        let mut out = String::new();
        out.push_str(&format!(
            "{:<10} {:>8} {:>10}\n",
            "target", "pearson", "p-value"
        ));
        out.push_str(&format!(
            "{:<10} {:>8} {:>10}\n",
            "empathy",
            fmt(self.r_empathy),
            fmt(self.p_empathy)
        ));
        out.push_str(&format!(
            "{:<10} {:>8} {:>10}\n",
            "distress",
            fmt(self.r_distress),
            fmt(self.p_distress)
        ));
        out.push_str(&format!("{:<10} {:>8}\n", "average", fmt(self.r_average)));
        out.push_str(&format!("n = {}\n", self.n));
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub accuracy: f64,
    pub macro_f1: f64,
    /// Classes with no gold instances; left out of the macro average.
    pub excluded_classes: Vec<usize>,
}

/// Accuracy and macro-F1 over `n_classes` labels.
pub fn class_metrics(pred: &[usize], gold: &[usize], n_classes: usize) -> Result<ClassMetrics> {
    if pred.len() != gold.len() {
        return Err(Error::shape("class_metrics", gold.len(), pred.len()));
    }
    if gold.is_empty() {
        return Err(Error::Degenerate("class metrics on empty input".into()));
    }
    if let Some(&c) = pred.iter().chain(gold).find(|&&c| c >= n_classes) {
        return Err(Error::Domain(format!(
            "class {c} out of range 0..{n_classes}"
        )));
    }
    let mut tp = vec![0usize; n_classes];
    let mut pred_count = vec![0usize; n_classes];
    let mut gold_count = vec![0usize; n_classes];
    for (&p, &g) in pred.iter().zip(gold) {
        pred_count[p] += 1;
        gold_count[g] += 1;
        if p == g {
            tp[p] += 1;
        }
    }
    let correct: usize = tp.iter().sum();
    let mut f1_sum = 0.0;
    let mut included = 0usize;
    let mut excluded_classes = Vec::new();
    for c in 0..n_classes {
        if gold_count[c] == 0 {
            excluded_classes.push(c);
            continue;
        }
        included += 1;
        let denom = pred_count[c] + gold_count[c];
        f1_sum += 2.0 * tp[c] as f64 / denom as f64;
    }
    Ok(ClassMetrics {
        accuracy: correct as f64 / gold.len() as f64,
        macro_f1: f1_sum / included as f64,
        excluded_classes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuxMetrics {
    pub bin: ClassMetrics,
    pub emotion: ClassMetrics,
}

/// Metrics for the two classification heads; bins are thresholded at 0.5.
pub fn aux_metrics(
    bin_probs: &[f64],
    bin_gold: &[u8],
    emotion_probs: &[Vec<f64>],
    emotion_gold: &[usize],
) -> Result<AuxMetrics> {
    let bin_pred: Vec<usize> = bin_probs.iter().map(|&p| usize::from(p >= 0.5)).collect();
    let bin_gold: Vec<usize> = bin_gold.iter().map(|&b| usize::from(b)).collect();
    let n_classes = emotion_probs.first().map_or(0, Vec::len);
    let emotion_pred: Vec<usize> = emotion_probs.iter().map(|p| argmax(p)).collect();
    Ok(AuxMetrics {
        bin: class_metrics(&bin_pred, &bin_gold, 2)?,
        emotion: class_metrics(&emotion_pred, emotion_gold, n_classes)?,
    })
}

/// Index of the largest value; first wins on ties.
pub fn argmax(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| {
            if v > bv {
                (i, v)
            } else {
                (bi, bv)
            }
        })
        .0
}
