use super::TrainConfig;
use crate::error::{Error, Result};
use crate::params::{Decay, ParamStore};
use crate::tensor::Tensor;

/// First/second moments per parameter and the completed-step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
}

impl OptimizerState {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = store.entries().iter().map(|e| Tensor::zeros(e.tensor.shape())).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }
}

/// One bias-corrected AdamW update with decoupled weight decay.
///
/// `θ ← θ(1 − lr·wd) − lr·m̂/(√v̂ + eps)`; decay is skipped for biases and norm affines.
pub fn adamw_step(
    store: &mut ParamStore,
    grads: &[Tensor],
    state: &mut OptimizerState,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<()> {
    if grads.len() != store.len() || state.m.len() != store.len() || state.v.len() != store.len() {
        return Err(Error::ShapeMismatch {
            op: "adamw_step",
            lhs: vec![store.len()],
            rhs: vec![grads.len(), state.m.len(), state.v.len()],
        });
    }
    for (i, entry) in store.entries().iter().enumerate() {
        let shape = entry.tensor.shape();
        for other in [grads[i].shape(), state.m[i].shape(), state.v[i].shape()] {
            if other != shape {
                return Err(Error::ShapeMismatch {
                    op: "adamw_step",
                    lhs: shape.to_vec(),
                    rhs: other.to_vec(),
                });
            }
        }
    }

    state.t += 1;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let bc1 = 1.0 - b1.powi(state.t as i32);
    let bc2 = 1.0 - b2.powi(state.t as i32);
    for (i, grad) in grads.iter().enumerate() {
        let wd = match store.entries()[i].decay {
            Decay::Apply => cfg.weight_decay,
            Decay::Skip => 0.0,
        };
        let keep = 1.0 - lr * wd;
        let theta = store.tensor_mut(i).data_mut();
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (((p, m), v), &g) in theta.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(grad.data()) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p = *p * keep - lr * (m_hat / (v_hat.sqrt() + cfg.adam_eps));
        }
    }
    Ok(())
}
