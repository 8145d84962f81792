//! Central finite differences, the reference every analytic gradient is checked against.

use super::{Graph, Tensor, Var};
use crate::error::Result;

/// `(f(x + h·eᵢ) − f(x − h·eᵢ)) / 2h` for every coordinate `i`.
pub fn finite_diff_grad(mut f: impl FnMut(&Tensor) -> f64, x: &Tensor, h: f64) -> Tensor {
    let mut probe = x.clone();
    let mut grad = Tensor::zeros(x.shape());
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let plus = f(&probe);
        probe.data_mut()[i] = orig - h;
        let minus = f(&probe);
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (plus - minus) / (2.0 * h);
    }
    grad
}

/// `|a − b| / max(1e-8, |a| + |b|)`.
pub fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-8)
}

pub fn max_rel_error(a: &Tensor, b: &Tensor) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| rel_error(x, y))
        .fold(0.0, f64::max)
}

/// Compares `backward` against finite differences for a scalar function of
/// several tensors, each bound as a trainable leaf.
#[derive(Clone, Debug)]
pub struct GradCheck {
    pub h: f64,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self { h: 1e-5 }
    }
}

impl GradCheck {
    /// Worst relative error per input, in input order.
    pub fn run<F>(&self, inputs: &[Tensor], build: F) -> Result<Vec<f64>>
    where
        F: Fn(&mut Graph, &[Var]) -> Result<Var>,
    {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
        let loss = build(&mut g, &vars)?;
        g.backward(loss)?;
        let analytic: Vec<Tensor> = vars
            .iter()
            .zip(inputs)
            .map(|(&v, t)| g.grad(v).unwrap_or_else(|| Tensor::zeros(t.shape())))
            .collect();
        drop(g);

        let eval = |values: &[Tensor]| -> f64 {
            let mut g = Graph::new();
            let vars: Vec<Var> = values.iter().map(|t| g.constant(t.clone())).collect();
            let loss = build(&mut g, &vars).expect("forward succeeded once already");
            g.value(loss).data()[0]
        };

        let mut worst = Vec::with_capacity(inputs.len());
        for (i, grad) in analytic.iter().enumerate() {
            let mut values = inputs.to_vec();
            let numeric = finite_diff_grad(
                |x| {
                    values[i] = x.clone();
                    eval(&values)
                },
                &inputs[i],
                self.h,
            );
            worst.push(max_rel_error(grad, &numeric));
        }
        Ok(worst)
    }
}
