//! Gradient post-processing and the three update rules.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::hyper::{OptimizerConstants, OptimizerKind};
use crate::layers::{ParamRole, Parameterized};

/// Named gradients in parameter visiting order.
pub type Gradients = Vec<(String, Vec<f64>)>;

pub fn global_norm(grads: &Gradients) -> f64 {
    grads
        .iter()
        .flat_map(|(_, g)| g.iter())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
}

/// Rescales all gradients together so their global L2 norm is at most
/// `max_norm`. Returns the norm before clipping.
pub fn clip_by_norm(grads: &mut Gradients, max_norm: f64) -> Result<f64> {
    if !(max_norm > 0.0) {
        return Err(Error::invalid("max_norm must be positive"));
    }
    let norm = global_norm(grads);
    if norm > max_norm {
        let scale = max_norm / norm;
        for (_, g) in grads.iter_mut() {
            g.iter_mut().for_each(|x| *x *= scale);
        }
    }
    Ok(norm)
}

/// `λ·Σ w²` over weight matrices (biases and initial states excluded).
pub fn weight_decay_penalty<M: Parameterized>(model: &M, lambda: f64) -> f64 {
    if lambda == 0.0 {
        return 0.0;
    }
    let mut sum = 0.0;
    model.visit("", &mut |_, p, role| {
        if role == ParamRole::Weight {
            sum += p.data.iter().map(|w| w * w).sum::<f64>();
        }
    });
    lambda * sum
}

/// Adds `2λw` to the gradient of every weight matrix present in `grads`.
pub fn add_weight_decay<M: Parameterized>(model: &M, grads: &mut Gradients, lambda: f64) {
    if lambda == 0.0 {
        return;
    }
    let mut weights = HashMap::new();
    model.visit("", &mut |n, p, role| {
        if role == ParamRole::Weight {
            weights.insert(n, &p.data);
        }
    });
    for (name, g) in grads.iter_mut() {
        if let Some(w) = weights.get(name) {
            for (gi, wi) in g.iter_mut().zip(w.iter()) {
                *gi += 2.0 * lambda * wi;
            }
        }
    }
}

#[derive(Debug, Clone, Default)]
struct Slots {
    first: Vec<f64>,
    second: Vec<f64>,
}

/// Per-parameter optimizer state.
#[derive(Debug, Clone)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub constants: OptimizerConstants,
    steps: u64,
    slots: HashMap<String, Slots>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64, constants: OptimizerConstants) -> Self {
        Optimizer {
            kind,
            learning_rate,
            constants,
            steps: 0,
            slots: HashMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies one update to every parameter that has a gradient; parameters
    /// without one (frozen) are left untouched.
    pub fn step<M: Parameterized>(&mut self, model: &mut M, grads: &Gradients) -> Result<()> {
        self.steps += 1;
        let by_name: HashMap<&str, &Vec<f64>> = grads.iter().map(|(n, g)| (n.as_str(), g)).collect();
        let mut failure = None;
        model.visit_mut("", &mut |name, p, _| {
            if failure.is_some() {
                return;
            }
            if let Some(g) = by_name.get(name.as_str()) {
                if g.len() != p.data.len() {
                    failure = Some(Error::Shape {
                        op: "optimizer step",
                        left: p.shape.clone(),
                        right: vec![g.len()],
                    });
                    return;
                }
                let slots = self.slots.entry(name).or_default();
                update(self.kind, self.learning_rate, &self.constants, self.steps, slots, &mut p.data, g);
            }
        });
        failure.map_or(Ok(()), Err)
    }
}

fn update(
    kind: OptimizerKind,
    lr: f64,
    c: &OptimizerConstants,
    t: u64,
    slots: &mut Slots,
    param: &mut [f64],
    grad: &[f64],
) {
    if slots.first.len() != param.len() {
        slots.first = vec![0.0; param.len()];
        slots.second = vec![0.0; param.len()];
    }
    match kind {
        OptimizerKind::Adam => {
            let (b1, b2) = (c.adam_beta1, c.adam_beta2);
            let bias1 = 1.0 - b1.powi(t as i32);
            let bias2 = 1.0 - b2.powi(t as i32);
            for i in 0..param.len() {
                let g = grad[i];
                let m = &mut slots.first[i];
                let v = &mut slots.second[i];
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let m_hat = *m / bias1;
                let v_hat = *v / bias2;
                param[i] -= lr * m_hat / (v_hat.sqrt() + c.adam_epsilon);
            }
        }
        OptimizerKind::Rmsprop => {
            let rho = c.rmsprop_rho;
            for i in 0..param.len() {
                let g = grad[i];
                let a = &mut slots.second[i];
                *a = rho * *a + (1.0 - rho) * g * g;
                param[i] -= lr * g / (a.sqrt() + c.rmsprop_epsilon);
            }
        }
        OptimizerKind::Adadelta => {
            let (rho, eps) = (c.adadelta_rho, c.adadelta_epsilon);
            for i in 0..param.len() {
                let g = grad[i];
                let acc = &mut slots.second[i];
                *acc = rho * *acc + (1.0 - rho) * g * g;
                let delta = &mut slots.first[i];
                let step = g * (*delta + eps).sqrt() / (*acc + eps).sqrt();
                param[i] -= lr * step;
                *delta = rho * *delta + (1.0 - rho) * step * step;
            }
        }
    }
}
