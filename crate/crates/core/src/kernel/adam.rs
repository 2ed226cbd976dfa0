use super::{KernelError, Tensor};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Adam moment estimates for one parameter group. `first[i]`/`second[i]`
/// mirror the i-th parameter of the group in its fixed visiting order.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub first: Vec<Tensor>,
    pub second: Vec<Tensor>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new<'a>(shapes: impl IntoIterator<Item = &'a [usize]>) -> Self {
        let first: Vec<Tensor> = shapes.into_iter().map(Tensor::zeros).collect();
        Self {
            second: first.clone(),
            first,
            step: 0,
            beta1: BETA1,
            beta2: BETA2,
            eps: EPSILON,
        }
    }

    /// One bias-corrected Adam update. All gradients are validated before
    /// anything is mutated, so a rejected step leaves params and state intact.
    pub fn step(
        &mut self,
        params: &mut [(String, &mut Tensor)],
        grads: &[Tensor],
        lr: f64,
    ) -> Result<(), KernelError> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(KernelError::InvalidArgument(format!("learning rate {lr}")));
        }
        if params.len() != grads.len() || params.len() != self.first.len() {
            return Err(KernelError::InvalidArgument(format!(
                "adam: {} params, {} grads, {} moment slots",
                params.len(),
                grads.len(),
                self.first.len()
            )));
        }
        for ((name, p), (g, m)) in params.iter().zip(grads.iter().zip(&self.first)) {
            if p.shape() != g.shape() || p.shape() != m.shape() {
                return Err(KernelError::Shape {
                    op: "adam",
                    left: p.shape().to_vec(),
                    right: g.shape().to_vec(),
                });
            }
            if !g.is_finite() {
                return Err(KernelError::NonFiniteGradient(name.clone()));
            }
        }

        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for (i, (_, p)) in params.iter_mut().enumerate() {
            let g = grads[i].data();
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            for (j, w) in p.data_mut().iter_mut().enumerate() {
                m[j] = b1 * m[j] + (1.0 - b1) * g[j];
                v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Rescales `grads` so their joint L2 norm is at most `max_norm`. Returns the
/// norm before clipping. A non-positive `max_norm` disables clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads.iter().map(Tensor::squared_norm).sum::<f64>().sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let k = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= k);
        }
    }
    norm
}
