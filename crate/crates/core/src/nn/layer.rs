use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Tensor2;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Sigmoid,
    Softmax,
    Linear,
}

impl Activation {
    pub fn apply(self, pre: &Tensor2) -> Tensor2 {
        match self {
            Activation::Tanh => pre.map(f64::tanh),
            Activation::Sigmoid => pre.map(sigmoid),
            Activation::Linear => pre.clone(),
            Activation::Softmax => softmax_rows(pre),
        }
    }

    /// Gradient w.r.t. the pre-activation, given the activation output and
    /// the upstream gradient w.r.t. that output.
    pub fn backward(self, out: &Tensor2, upstream: &Tensor2) -> Result<Tensor2> {
        match self {
            Activation::Tanh => upstream.hadamard(&out.map(|y| 1.0 - y * y)),
            Activation::Sigmoid => upstream.hadamard(&out.map(|y| y * (1.0 - y))),
            Activation::Linear => Ok(upstream.clone()),
            Activation::Softmax => {
                if out.shape() != upstream.shape() {
                    return Err(Error::shape(
                        "softmax backward",
                        format!("{:?}", out.shape()),
                        format!("{:?}", upstream.shape()),
                    ));
                }
                let mut dz = Tensor2::zeros(out.rows(), out.cols());
                for r in 0..out.rows() {
                    let y = out.row(r);
                    let g = upstream.row(r);
                    let dot: f64 = y.iter().zip(g).map(|(a, b)| a * b).sum();
                    for ((d, &yi), &gi) in dz.row_mut(r).iter_mut().zip(y).zip(g) {
                        *d = yi * (gi - dot);
                    }
                }
                Ok(dz)
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Row-wise softmax with max-shift.
pub fn softmax_rows(x: &Tensor2) -> Tensor2 {
    let mut out = x.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    out
}

/// Fully connected layer `activation(x W + b)`; `l2` penalizes W only.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weight: Tensor2,
    pub bias: Tensor2,
    pub activation: Activation,
    pub l2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseCache {
    pub input: Tensor2,
    pub pre: Tensor2,
    pub out: Tensor2,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrads {
    pub weight: Tensor2,
    pub bias: Tensor2,
}

impl DenseLayer {
    /// Glorot-uniform weights, zero bias.
    pub fn init<R: Rng + ?Sized>(
        fan_in: usize,
        fan_out: usize,
        activation: Activation,
        l2: f64,
        rng: &mut R,
    ) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        Self {
            weight: Tensor2::uniform(fan_in, fan_out, limit, rng),
            bias: Tensor2::zeros(1, fan_out),
            activation,
            l2,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn forward(&self, x: &Tensor2) -> Result<DenseCache> {
        if x.cols() != self.in_dim() {
            return Err(Error::shape("dense forward input", self.in_dim(), x.cols()));
        }
        let mut pre = x.matmul(&self.weight)?;
        pre.add_row(&self.bias)?;
        let out = self.activation.apply(&pre);
        out.ensure_finite("dense forward")?;
        Ok(DenseCache {
            input: x.clone(),
            pre,
            out,
        })
    }

    /// Returns (grad w.r.t. input, parameter grads). The weight grad includes
    /// the L2 term `2 * l2 * W`.
    pub fn backward(
        &self,
        cache: &DenseCache,
        upstream: &Tensor2,
    ) -> Result<(Tensor2, DenseGrads)> {
        if upstream.shape() != cache.out.shape() {
            return Err(Error::shape(
                "dense backward upstream",
                format!("{:?}", cache.out.shape()),
                format!("{:?}", upstream.shape()),
            ));
        }
        let dz = self.activation.backward(&cache.out, upstream)?;
        let mut weight = cache.input.t_matmul(&dz)?;
        if self.l2 > 0.0 {
            let coeff = 2.0 * self.l2;
            for (g, w) in weight.data_mut().iter_mut().zip(self.weight.data()) {
                *g += coeff * w;
            }
        }
        let bias = dz.sum_rows();
        let grad_x = dz.matmul_t(&self.weight)?;
        Ok((grad_x, DenseGrads { weight, bias }))
    }

    pub fn l2_penalty(&self) -> f64 {
        if self.l2 > 0.0 {
            self.l2 * self.weight.sum_squares()
        } else {
            0.0
        }
    }

    pub fn zeros_like(&self) -> DenseGrads {
        DenseGrads {
            weight: Tensor2::zeros(self.weight.rows(), self.weight.cols()),
            bias: Tensor2::zeros(1, self.bias.cols()),
        }
    }
}

/// Trainable lookup table (one row per category index).
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub table: Tensor2,
}

impl EmbeddingTable {
    /// Uniform(-0.05, 0.05) initialization.
    pub fn init<R: Rng + ?Sized>(vocab_size: usize, dim: usize, rng: &mut R) -> Self {
        Self {
            table: Tensor2::uniform(vocab_size, dim, 0.05, rng),
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.table.rows()
    }

    pub fn dim(&self) -> usize {
        self.table.cols()
    }

    pub fn forward(&self, indices: &[usize]) -> Result<Tensor2> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.vocab_size()) {
            return Err(Error::Domain(format!(
                "embedding index {bad} out of range 0..{}",
                self.vocab_size()
            )));
        }
        Ok(self.table.select_rows(indices))
    }

    /// Scatter-adds the upstream rows into a table-shaped gradient.
    pub fn backward(&self, indices: &[usize], upstream: &Tensor2) -> Result<Tensor2> {
        if upstream.rows() != indices.len() || upstream.cols() != self.dim() {
            return Err(Error::shape(
                "embedding backward",
                format!("{}x{}", indices.len(), self.dim()),
                format!("{}x{}", upstream.rows(), upstream.cols()),
            ));
        }
        let mut grad = Tensor2::zeros(self.vocab_size(), self.dim());
        for (r, &i) in indices.iter().enumerate() {
            for (g, u) in grad.row_mut(i).iter_mut().zip(upstream.row(r)) {
                *g += u;
            }
        }
        Ok(grad)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Inverted dropout. In train mode returns the scaled output and the mask
/// (entries 0 or 1/(1-p)); eval mode and p = 0 are the identity.
pub fn dropout_forward<R: Rng + ?Sized>(
    p: f64,
    x: &Tensor2,
    mode: Mode,
    rng: &mut R,
) -> Result<(Tensor2, Option<Tensor2>)> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Config(format!(
            "dropout probability {p} not in [0, 1)"
        )));
    }
    if mode == Mode::Eval || p == 0.0 {
        return Ok((x.clone(), None));
    }
    let scale = 1.0 / (1.0 - p);
    let mask_data = (0..x.len())
        .map(|_| if rng.gen::<f64>() < p { 0.0 } else { scale })
        .collect();
    let mask = Tensor2::new(x.rows(), x.cols(), mask_data)?;
    Ok((x.hadamard(&mask)?, Some(mask)))
}
