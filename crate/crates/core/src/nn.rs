//! Multilayer perceptron with ReLU hidden layers and a bounded strategy head.
//!
//! The network maps a market feature vector of length `3N` to raw outputs
//! `z ∈ R^{1+2N}`, which the head squashes into a strategy:
//! `a = a̲ + (ā - a̲)·σ(z_0)` and `h_j = H̄·σ(z_j)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::market::Strategy;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("invalid layer dimensions {0:?}")]
    Dims(Vec<usize>),
    #[error("invalid head bounds: {0}")]
    Head(String),
    #[error("input has length {got}, network expects {expected}")]
    Input { expected: usize, got: usize },
    #[error("gradient shape does not match the model")]
    Shape,
}

/// Box the head maps into: `[a̲, ā] × [0, H̄]^{2N}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadBounds {
    pub cash_min: f64,
    pub cash_max: f64,
    pub position_max: f64,
}

impl HeadBounds {
    fn validate(&self) -> Result<(), NnError> {
        let ok = self.cash_min.is_finite()
            && self.cash_max.is_finite()
            && self.position_max.is_finite()
            && self.cash_min < self.cash_max
            && self.position_max > 0.0;
        if ok {
            Ok(())
        } else {
            Err(NnError::Head(format!("{self:?}")))
        }
    }
}

/// Affine map `x ↦ W x + b` with `W` stored row-major (`outputs × inputs`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.outputs {
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            out.push(self.bias[o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>());
        }
    }

    fn same_shape(&self, other: &Dense) -> bool {
        self.inputs == other.inputs && self.outputs == other.outputs
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    layers: Vec<Dense>,
    head: HeadBounds,
}

/// Intermediate values of one forward pass, consumed by [`Mlp::backward`].
#[derive(Debug, Clone)]
pub struct Trace {
    /// Input of every affine map (`activations[0]` is the network input).
    activations: Vec<Vec<f64>>,
    /// Raw network output `z`.
    pub raw: Vec<f64>,
    pub strategy: Strategy,
}

impl Trace {
    /// ReLU on/off pattern of the hidden layers.
    pub fn relu_pattern(&self) -> Vec<bool> {
        self.activations[1..].iter().flatten().map(|&v| v > 0.0).collect()
    }
}

impl Mlp {
    /// Glorot-uniform weights and zero biases, deterministic in `seed`.
    ///
    /// `dims = [d_in, h_1, …, h_l, d_out]`.
    pub fn new(dims: &[usize], head: HeadBounds, seed: u64) -> Result<Self, NnError> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(NnError::Dims(dims.to_vec()));
        }
        head.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = dims
            .windows(2)
            .map(|w| {
                let mut layer = Dense::zeros(w[0], w[1]);
                let limit = (6.0 / (w[0] + w[1]) as f64).sqrt();
                for v in &mut layer.weights {
                    *v = rng.gen_range(-limit..limit);
                }
                layer
            })
            .collect();
        Ok(Mlp { layers, head })
    }

    /// Network for a market with `n_options` options: `3N → hidden → 1+2N`.
    pub fn for_market(
        n_options: usize,
        hidden: &[usize],
        head: HeadBounds,
        seed: u64,
    ) -> Result<Self, NnError> {
        let mut dims = vec![3 * n_options];
        dims.extend_from_slice(hidden);
        dims.push(1 + 2 * n_options);
        Self::new(&dims, head, seed)
    }

    /// Sets the output biases so that, before any training signal from the
    /// weights, the head emits cash `cash` and every position at
    /// `position_fraction · H̄`.
    pub fn bias_head_towards(&mut self, cash: f64, position_fraction: f64) -> Result<(), NnError> {
        let h = self.head;
        let c = (cash - h.cash_min) / (h.cash_max - h.cash_min);
        let open = |v: f64| v > 0.0 && v < 1.0;
        if !open(c) || !open(position_fraction) {
            return Err(NnError::Head(format!(
                "initial cash {cash} or position fraction {position_fraction} outside the open head box"
            )));
        }
        let logit = |p: f64| (p / (1.0 - p)).ln();
        let last = self.layers.last_mut().expect("at least one layer");
        last.bias[0] = logit(c);
        let zp = logit(position_fraction);
        last.bias[1..].iter_mut().for_each(|b| *b = zp);
        Ok(())
    }

    /// Assembles a model from explicit layers (used when loading weights).
    pub fn from_layers(layers: Vec<Dense>, head: HeadBounds) -> Result<Self, NnError> {
        head.validate()?;
        let dims: Vec<usize> = layers
            .first()
            .map(|l| l.inputs)
            .into_iter()
            .chain(layers.iter().map(|l| l.outputs))
            .collect();
        let chained = layers.windows(2).all(|w| w[0].outputs == w[1].inputs);
        let sized = layers
            .iter()
            .all(|l| l.weights.len() == l.inputs * l.outputs && l.bias.len() == l.outputs);
        let out = layers.last().map_or(0, |l| l.outputs);
        if layers.is_empty() || !chained || !sized || out % 2 == 0 {
            return Err(NnError::Dims(dims));
        }
        Ok(Mlp { layers, head })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn head(&self) -> &HeadBounds {
        &self.head
    }

    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.layers[0].inputs)
            .chain(self.layers.iter().map(|l| l.outputs))
            .collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("at least one layer").outputs
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Maps raw outputs `z` to a strategy inside the head box.
    pub fn apply_head(&self, raw: &[f64]) -> Strategy {
        let h = &self.head;
        let cash = (h.cash_min + (h.cash_max - h.cash_min) * sigmoid(raw[0])).clamp(h.cash_min, h.cash_max);
        let positions: Vec<f64> = raw[1..].iter().map(|&z| h.position_max * sigmoid(z)).collect();
        let n = positions.len() / 2;
        Strategy {
            cash,
            long: positions[..n].to_vec(),
            short: positions[n..].to_vec(),
        }
    }

    pub fn forward_trace(&self, x: &[f64]) -> Result<Trace, NnError> {
        if x.len() != self.input_dim() {
            return Err(NnError::Input {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        let mut activations = Vec::with_capacity(self.layers.len());
        activations.push(x.to_vec());
        let mut out = Vec::new();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            layer.apply(activations.last().expect("nonempty"), &mut out);
            if i < last {
                for v in &mut out {
                    *v = v.max(0.0);
                }
                activations.push(std::mem::take(&mut out));
            }
        }
        let strategy = self.apply_head(&out);
        Ok(Trace {
            activations,
            raw: out,
            strategy,
        })
    }

    /// Strategy `(a, h⁺, h⁻)` for one feature vector.
    pub fn forward(&self, x: &[f64]) -> Result<Strategy, NnError> {
        Ok(self.forward_trace(x)?.strategy)
    }

    /// Reverse-mode gradients of `upstream · (a, h⁺, h⁻)` with respect to
    /// every weight and bias, accumulated into `grads`.
    pub fn backward_into(&self, trace: &Trace, upstream: &[f64], grads: &mut Gradients) {
        assert_eq!(upstream.len(), self.output_dim(), "upstream gradient length");
        let h = &self.head;
        let mut delta: Vec<f64> = trace
            .raw
            .iter()
            .zip(upstream)
            .enumerate()
            .map(|(i, (&z, &g))| {
                let s = sigmoid(z);
                let scale = if i == 0 {
                    h.cash_max - h.cash_min
                } else {
                    h.position_max
                };
                g * scale * s * (1.0 - s)
            })
            .collect();

        for (li, layer) in self.layers.iter().enumerate().rev() {
            let input = &trace.activations[li];
            let g = &mut grads.layers[li];
            for o in 0..layer.outputs {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                g.bias[o] += d;
                let row = &mut g.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (w, x) in row.iter_mut().zip(input) {
                    *w += d * x;
                }
            }
            if li == 0 {
                break;
            }
            let mut prev = vec![0.0; layer.inputs];
            for o in 0..layer.outputs {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (p, w) in prev.iter_mut().zip(row) {
                    *p += d * w;
                }
            }
            // ReLU derivative; `input` is the post-activation value
            for (p, &a) in prev.iter_mut().zip(input) {
                if a <= 0.0 {
                    *p = 0.0;
                }
            }
            delta = prev;
        }
    }

    pub fn backward(&self, trace: &Trace, upstream: &[f64]) -> Gradients {
        let mut g = Gradients::zeros_like(self);
        self.backward_into(trace, upstream, &mut g);
        g
    }

    /// All parameters, layer by layer, weights before biases.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn param_mut(&mut self, mut index: usize) -> &mut f64 {
        for l in &mut self.layers {
            if index < l.weights.len() {
                return &mut l.weights[index];
            }
            index -= l.weights.len();
            if index < l.bias.len() {
                return &mut l.bias[index];
            }
            index -= l.bias.len();
        }
        panic!("parameter index out of range");
    }
}

/// Parameter-shaped buffer (gradients, optimizer moments).
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Dense>,
}

impl Gradients {
    pub fn zeros_like(model: &Mlp) -> Self {
        Gradients {
            layers: model
                .layers
                .iter()
                .map(|l| Dense::zeros(l.inputs, l.outputs))
                .collect(),
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.weights.iter_mut().chain(l.bias.iter_mut()).for_each(|v| *v *= factor);
        }
    }

    fn matches(&self, model: &Mlp) -> bool {
        self.layers.len() == model.layers.len()
            && self.layers.iter().zip(&model.layers).all(|(a, b)| a.same_shape(b))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    first: Gradients,
    second: Gradients,
}

impl Adam {
    pub fn new(model: &Mlp) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: Gradients::zeros_like(model),
            second: Gradients::zeros_like(model),
        }
    }

    /// One bias-corrected Adam update of `model` along `grads`.
    pub fn step(&mut self, model: &mut Mlp, grads: &Gradients, lr: f64) -> Result<(), NnError> {
        if !grads.matches(model) || !self.first.matches(model) {
            return Err(NnError::Shape);
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for (((layer, g), m), v) in model
            .layers
            .iter_mut()
            .zip(&grads.layers)
            .zip(&mut self.first.layers)
            .zip(&mut self.second.layers)
        {
            let params = layer.weights.iter_mut().chain(layer.bias.iter_mut());
            let gs = g.weights.iter().chain(&g.bias);
            let ms = m.weights.iter_mut().chain(m.bias.iter_mut());
            let vs = v.weights.iter_mut().chain(v.bias.iter_mut());
            for (((p, &g), m), v) in params.zip(gs).zip(ms).zip(vs) {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let mhat = *m / c1;
                let vhat = *v / c2;
                *p -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop_assert, proptest};

    const HEAD: HeadBounds = HeadBounds {
        cash_min: -1.0,
        cash_max: 3.0,
        position_max: 1.0,
    };

    #[test]
    fn init_is_deterministic_in_seed() {
        let a = Mlp::new(&[6, 8, 5], HEAD, 7).unwrap();
        let b = Mlp::new(&[6, 8, 5], HEAD, 7).unwrap();
        let c = Mlp::new(&[6, 8, 5], HEAD, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.params(), c.params());
        assert_eq!(a.dims(), vec![6, 8, 5]);
        let m = Mlp::for_market(2, &[8], HEAD, 1).unwrap();
        assert_eq!(m.dims(), vec![6, 8, 5]);
        assert!(m.layers.iter().all(|l| l.bias.iter().all(|b| *b == 0.0)));
    }

    #[test]
    fn invalid_dims_rejected() {
        assert!(Mlp::new(&[6], HEAD, 0).is_err());
        assert!(Mlp::new(&[6, 0, 5], HEAD, 0).is_err());
        let bad_head = HeadBounds {
            cash_min: 1.0,
            cash_max: 1.0,
            position_max: 1.0,
        };
        assert!(Mlp::new(&[6, 5], bad_head, 0).is_err());
    }

    #[test]
    fn zero_weights_give_midpoint() {
        let mut m = Mlp::new(&[6, 4, 5], HEAD, 0).unwrap();
        for i in 0..m.n_params() {
            *m.param_mut(i) = 0.0;
        }
        let s = m.forward(&[0.3; 6]).unwrap();
        assert_eq!(s.cash, 1.0);
        assert!(s.long.iter().chain(&s.short).all(|h| *h == 0.5));
        assert!(m.forward(&[0.3; 5]).is_err());
    }

    #[test]
    fn head_saturates_at_bounds() {
        let m = Mlp::new(&[3, 3], HEAD, 0).unwrap();
        let s = m.apply_head(&[1e6, -1e6, 1e6]);
        assert_eq!(s.cash, 3.0);
        assert_eq!(s.long, vec![0.0]);
        assert_eq!(s.short, vec![1.0]);
        assert_eq!(m.apply_head(&[-1e6, 0.0, 0.0]).cash, -1.0);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let m = Mlp::new(&[6, 8, 8, 5], HEAD, 3).unwrap();
        let t = m.forward_trace(&[0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        let g = m.backward(&t, &[0.0; 5]);
        assert!(g.flat().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn single_layer_gradient_is_outer_product() {
        let m = Mlp::new(&[2, 3], HEAD, 5).unwrap();
        let x = [0.7, -0.4];
        let t = m.forward_trace(&x).unwrap();
        let up = [0.3, -1.2, 0.8];
        let g = m.backward(&t, &up);
        for o in 0..3 {
            let s = sigmoid(t.raw[o]);
            let scale = if o == 0 { 4.0 } else { 1.0 };
            let delta = up[o] * scale * s * (1.0 - s);
            assert!((g.layers[0].bias[o] - delta).abs() < 1e-15);
            for i in 0..2 {
                assert!((g.layers[0].weights[o * 2 + i] - delta * x[i]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for seed in 0..20 {
            let m = Mlp::new(&[6, 7, 5, 5], HEAD, seed).unwrap();
            let x: Vec<f64> = (0..6).map(|_| rng.gen_range(0.0..2.0)).collect();
            let up: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let objective = |m: &Mlp| -> f64 {
                let s = m.forward(&x).unwrap();
                s.to_vec().iter().zip(&up).map(|(a, b)| a * b).sum()
            };
            let trace = m.forward_trace(&x).unwrap();
            let pattern = trace.relu_pattern();
            let analytic = m.backward(&trace, &up).flat();
            let step = 1e-5;
            let (mut diff, mut norm) = (0.0f64, 0.0f64);
            for i in 0..m.n_params() {
                let mut plus = m.clone();
                *plus.param_mut(i) += step;
                let mut minus = m.clone();
                *minus.param_mut(i) -= step;
                if plus.forward_trace(&x).unwrap().relu_pattern() != pattern
                    || minus.forward_trace(&x).unwrap().relu_pattern() != pattern
                {
                    continue;
                }
                let fd = (objective(&plus) - objective(&minus)) / (2.0 * step);
                diff += (fd - analytic[i]).powi(2);
                norm += analytic[i].powi(2).max(fd * fd);
            }
            let rel = diff.sqrt() / norm.sqrt().max(1e-12);
            assert!(rel < 1e-5, "seed {seed}: relative error {rel}");
        }
    }

    #[test]
    fn adam_zero_gradient_leaves_params() {
        let mut m = Mlp::new(&[4, 3, 3], HEAD, 2).unwrap();
        let before = m.clone();
        let mut adam = Adam::new(&m);
        adam.step(&mut m, &Gradients::zeros_like(&before), 1e-3).unwrap();
        assert_eq!(m, before);
    }

    #[test]
    fn adam_first_step_moves_against_sign() {
        let mut m = Mlp::new(&[2, 3], HEAD, 2).unwrap();
        let before = m.params();
        let mut g = Gradients::zeros_like(&m);
        g.layers[0].weights = vec![0.5, -2.0, 1e-3, -1e-3, 4.0, 0.0];
        let lr = 1e-3;
        let mut adam = Adam::new(&m);
        adam.step(&mut m, &g, lr).unwrap();
        let after = m.params();
        for (i, gi) in g.layers[0].weights.iter().enumerate() {
            let moved = after[i] - before[i];
            if *gi == 0.0 {
                assert_eq!(moved, 0.0);
            } else {
                // |m̂| / (sqrt(v̂) + eps) = |g| / (|g| + eps)
                let expected = -gi.signum() * lr * gi.abs() / (gi.abs() + 1e-8);
                assert!((moved - expected).abs() < 1e-15, "{moved} vs {expected}");
            }
        }
    }

    #[test]
    fn adam_is_deterministic_and_checks_shapes() {
        let m0 = Mlp::new(&[3, 4, 3], HEAD, 9).unwrap();
        let t = m0.forward_trace(&[0.1, 0.5, 0.9]).unwrap();
        let g = m0.backward(&t, &[1.0, -1.0, 0.5]);
        let run = || {
            let mut m = m0.clone();
            let mut a = Adam::new(&m);
            for _ in 0..3 {
                a.step(&mut m, &g, 1e-2).unwrap();
            }
            m
        };
        assert_eq!(run(), run());
        let other = Mlp::new(&[3, 5, 3], HEAD, 9).unwrap();
        let mut m = m0.clone();
        assert_eq!(Adam::new(&m0).step(&mut m, &Gradients::zeros_like(&other), 1e-2), Err(NnError::Shape));
    }

    #[test]
    fn biased_head_hits_target() {
        let head = HeadBounds {
            cash_min: -1.0,
            cash_max: 41.0,
            position_max: 2.0,
        };
        let mut m = Mlp::new(&[4, 3], head, 0).unwrap();
        m.layers[0].weights.iter_mut().for_each(|w| *w = 0.0);
        m.bias_head_towards(0.0, 0.25).unwrap();
        let s = m.forward(&[1.0; 4]).unwrap();
        assert!(s.cash.abs() < 1e-12);
        assert!(s.long.iter().chain(&s.short).all(|&h| (h - 0.5).abs() < 1e-12));
        assert!(m.bias_head_towards(41.0, 0.5).is_err());
        assert!(m.bias_head_towards(0.0, 1.0).is_err());
    }

    #[test]
    fn from_layers_validates_chain() {
        let m = Mlp::new(&[6, 4, 5], HEAD, 1).unwrap();
        assert_eq!(Mlp::from_layers(m.layers().to_vec(), HEAD).unwrap(), m);
        let mut broken = m.layers().to_vec();
        broken[1].inputs = 3;
        assert!(Mlp::from_layers(broken, HEAD).is_err());
    }

    proptest! {
        #[test]
        fn outputs_stay_in_head_box(seed in any::<u64>(), x in proptest::collection::vec(-50.0..50.0f64, 6), scale in 0.1..50.0f64) {
            let mut m = Mlp::new(&[6, 8, 5], HEAD, seed).unwrap();
            for i in 0..m.n_params() {
                *m.param_mut(i) *= scale;
            }
            let s = m.forward(&x).unwrap();
            prop_assert!(s.cash >= HEAD.cash_min && s.cash <= HEAD.cash_max);
            prop_assert!(s.long.iter().chain(&s.short).all(|h| *h >= 0.0 && *h <= HEAD.position_max));
        }
    }
}
