use super::Tensor2;
use crate::error::{Error, Result};

/// Bias-corrected Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Number of steps taken.
    pub t: u64,
    m: Vec<Tensor2>,
    v: Vec<Tensor2>,
}

impl AdamState {
    pub fn new<'a>(lr: f64, shapes: impl IntoIterator<Item = &'a Tensor2>) -> Self {
        let m: Vec<Tensor2> = shapes
            .into_iter()
            .map(|p| Tensor2::zeros(p.rows(), p.cols()))
            .collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            v: m.clone(),
            m,
        }
    }

    pub fn step(&mut self, params: Vec<&mut Tensor2>, grads: Vec<&Tensor2>) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::shape(
                "adam tensor count",
                self.m.len(),
                format!("{} params / {} grads", params.len(), grads.len()),
            ));
        }
        for (i, (p, g)) in params.iter().zip(&grads).enumerate() {
            if p.shape() != self.m[i].shape() || g.shape() != self.m[i].shape() {
                return Err(Error::shape(
                    format!("adam tensor {i}"),
                    format!("{:?}", self.m[i].shape()),
                    format!("param {:?} grad {:?}", p.shape(), g.shape()),
                ));
            }
            g.ensure_finite(&format!("gradient of tensor {i}"))?;
        }
        self.t += 1;
        let t = self.t as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for ((param, grad), (m, v)) in params
            .into_iter()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for (((w, &g), mi), vi) in param
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * g;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * g * g;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *w -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
