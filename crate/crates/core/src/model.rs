//! Linear and one-hidden-layer softmax classifiers with manual backprop.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Architecture {
    #[default]
    Linear,
    /// One tanh hidden layer.
    Mlp1 { hidden: usize },
}

/// Default hidden width for [`Architecture::Mlp1`].
pub const DEFAULT_HIDDEN: usize = 64;

/// Dense layer, `out x in` weights in row-major order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, zero bias.
    fn init(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        let weights = (0..inputs * outputs)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        Self {
            inputs,
            outputs,
            weights,
            bias: vec![0.0; outputs],
        }
    }

    fn zeros_like(&self) -> Self {
        Self {
            inputs: self.inputs,
            outputs: self.outputs,
            weights: vec![0.0; self.weights.len()],
            bias: vec![0.0; self.bias.len()],
        }
    }

    fn forward(&self, x: &[f64], out: &mut [f64]) {
        for (o, (row, b)) in out
            .iter_mut()
            .zip(self.weights.chunks(self.inputs).zip(&self.bias))
        {
            *o = b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
    }

    /// Accumulates `dL/dW += g x^T`, `dL/db += g` into `grad`; writes the
    /// input gradient `W^T g` into `dx` when given.
    fn backward(&self, x: &[f64], g: &[f64], grad: &mut Dense, dx: Option<&mut [f64]>) {
        for (o, &go) in g.iter().enumerate() {
            if go == 0.0 {
                continue;
            }
            grad.bias[o] += go;
            let row = &mut grad.weights[o * self.inputs..(o + 1) * self.inputs];
            row.iter_mut().zip(x).for_each(|(w, v)| *w += go * v);
        }
        if let Some(dx) = dx {
            dx.iter_mut().for_each(|d| *d = 0.0);
            for (o, &go) in g.iter().enumerate() {
                let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
                dx.iter_mut().zip(row).for_each(|(d, w)| *d += go * w);
            }
        }
    }

    fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.bias).all(|v| v.is_finite())
    }
}

/// Classifier parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub architecture: Architecture,
    pub layers: Vec<Dense>,
}

/// Per-sample activations kept for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct Workspace {
    hidden: Vec<f64>,
    pub(crate) logits: Vec<f64>,
    pub(crate) dlogits: Vec<f64>,
    dhidden: Vec<f64>,
}

impl ModelParams {
    pub fn init(architecture: Architecture, input_dim: usize, class_count: usize, rng: &mut ChaCha8Rng) -> Self {
        let layers = match architecture {
            Architecture::Linear => vec![Dense::init(input_dim, class_count, rng)],
            Architecture::Mlp1 { hidden } => vec![
                Dense::init(input_dim, hidden, rng),
                Dense::init(hidden, class_count, rng),
            ],
        };
        Self {
            architecture,
            layers,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn class_count(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub(crate) fn workspace(&self) -> Workspace {
        let hidden = if self.layers.len() > 1 { self.layers[0].outputs } else { 0 };
        Workspace {
            hidden: vec![0.0; hidden],
            logits: vec![0.0; self.class_count()],
            dlogits: vec![0.0; self.class_count()],
            dhidden: vec![0.0; hidden],
        }
    }

    pub(crate) fn zeros_like(&self) -> Vec<Dense> {
        self.layers.iter().map(Dense::zeros_like).collect()
    }

    pub(crate) fn forward_into(&self, x: &[f64], ws: &mut Workspace) {
        match self.layers.as_slice() {
            [out] => out.forward(x, &mut ws.logits),
            [hid, out] => {
                hid.forward(x, &mut ws.hidden);
                ws.hidden.iter_mut().for_each(|h| *h = h.tanh());
                out.forward(&ws.hidden, &mut ws.logits);
            }
            _ => unreachable!("one or two layers"),
        }
    }

    /// Backprop of `ws.dlogits` for the input `x` last passed to `forward_into`.
    pub(crate) fn backward(&self, x: &[f64], ws: &mut Workspace, grads: &mut [Dense]) {
        match self.layers.as_slice() {
            [out] => out.backward(x, &ws.dlogits, &mut grads[0], None),
            [hid, out] => {
                out.backward(&ws.hidden, &ws.dlogits, &mut grads[1], Some(&mut ws.dhidden));
                for (d, h) in ws.dhidden.iter_mut().zip(&ws.hidden) {
                    *d *= 1.0 - h * h;
                }
                hid.backward(x, &ws.dhidden, &mut grads[0], None);
            }
            _ => unreachable!("one or two layers"),
        }
    }

    /// Class scores for one input.
    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        let mut ws = self.workspace();
        self.forward_into(x, &mut ws);
        ws.logits
    }

    /// Argmax of the logits; ties go to the lowest index.
    pub fn predict(&self, x: &[f64]) -> usize {
        argmax(&self.logits(x))
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(Dense::is_finite)
    }

    /// Flat view of every parameter, for comparisons in tests.
    pub fn flatten(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect()
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }
}

/// First index of the maximum.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[1.0, 1.0, 0.0]), 0);
        assert_eq!(argmax(&[0.0, 2.0, 2.0]), 1);
        assert_eq!(argmax(&[0.0; 4]), 0);
    }

    #[test]
    fn init_respects_fan_in_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = ModelParams::init(Architecture::Mlp1 { hidden: 8 }, 4, 3, &mut rng);
        assert!(m.layers[0].weights.iter().all(|w| w.abs() <= 0.5));
        assert!(m.layers[1].weights.iter().all(|w| w.abs() <= 1.0 / 8f64.sqrt()));
        assert_eq!(m.input_dim(), 4);
        assert_eq!(m.class_count(), 3);
    }

    #[test]
    fn backward_matches_finite_differences_through_hidden_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = ModelParams::init(Architecture::Mlp1 { hidden: 5 }, 3, 4, &mut rng);
        let x = [0.3, -0.7, 1.1];
        // objective: sum_k c_k * logit_k
        let c = [0.5, -1.0, 2.0, 0.25];
        let mut ws = m.workspace();
        m.forward_into(&x, &mut ws);
        ws.dlogits.copy_from_slice(&c);
        let mut grads = m.zeros_like();
        m.backward(&x, &mut ws, &mut grads);
        let f = |m: &ModelParams| -> f64 { m.logits(&x).iter().zip(&c).map(|(a, b)| a * b).sum() };
        let h = 1e-6;
        for (l, g) in grads.iter().enumerate() {
            for k in 0..g.weights.len() {
                let mut up = m.clone();
                let mut dn = m.clone();
                up.layers[l].weights[k] += h;
                dn.layers[l].weights[k] -= h;
                let fd = (f(&up) - f(&dn)) / (2.0 * h);
                assert!((fd - g.weights[k]).abs() < 1e-7, "layer {l} weight {k}");
            }
        }
    }
}
