//! Actor-critic MLP policy, its forward-pass FLOPs and PPO training.
//!
//! Actor and critic are separate `[obs, h1, h2, out]` tanh MLPs. The actor's
//! output is squashed by tanh into `[-1, 1]` and is the mean of a Gaussian
//! with a state-independent learned `log_std`. The critic head is linear.

mod flops;
mod ppo;

pub use flops::{count_flops, linear_flops, FlopsReport, LayerFlops, TANH_FLOPS};
pub use ppo::{
    gae, loss_and_grad, normalize_advantages, train, train_with_progress, Adam, LossCoefficients,
    LossParts, PpoConfig, Sample, TrainOutcome, CurvePoint,
};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tasks::Controller;

#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `outputs x inputs`.
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Linear {
            inputs,
            outputs,
            weight: vec![T::zero(); inputs * outputs],
            bias: vec![T::zero(); outputs],
        }
    }

    /// Weights drawn from N(0, gain^2 / inputs), zero biases.
    pub fn random<R: Rng + ?Sized>(inputs: usize, outputs: usize, gain: f64, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, gain / (inputs as f64).sqrt()).expect("finite std");
        Linear {
            inputs,
            outputs,
            weight: (0..inputs * outputs).map(|_| T::of(normal.sample(rng))).collect(),
            bias: vec![T::zero(); outputs],
        }
    }

    pub fn forward(&self, x: &[T]) -> Vec<T> {
        debug_assert_eq!(x.len(), self.inputs);
        self.weight
            .chunks_exact(self.inputs)
            .zip(&self.bias)
            .map(|(row, &b)| row.iter().zip(x).fold(b, |acc, (&w, &xi)| acc + w * xi))
            .collect()
    }

    /// Accumulates parameter gradients into `grad` and returns dL/dx.
    fn backward(&self, x: &[T], dy: &[T], grad: &mut Linear<T>) -> Vec<T> {
        let mut dx = vec![T::zero(); self.inputs];
        for (o, &d) in dy.iter().enumerate() {
            grad.bias[o] += d;
            let row = o * self.inputs;
            for i in 0..self.inputs {
                grad.weight[row + i] += d * x[i];
                dx[i] += d * self.weight[row + i];
            }
        }
        dx
    }
}

/// Layer inputs and outputs of one MLP evaluation, kept for backprop.
#[derive(Debug, Clone)]
pub(crate) struct Trace<T> {
    /// `acts[0]` is the input; `acts[k]` is the output of layer `k`.
    pub acts: Vec<Vec<T>>,
}

/// Feed-forward stack with tanh after every hidden layer and, when
/// `squash_output`, after the last layer as well.
fn mlp_forward<T: Scalar>(layers: &[Linear<T>], x: &[T], squash_output: bool) -> Trace<T> {
    let mut acts = Vec::with_capacity(layers.len() + 1);
    acts.push(x.to_vec());
    for (k, layer) in layers.iter().enumerate() {
        let mut y = layer.forward(acts.last().expect("input"));
        if k + 1 < layers.len() || squash_output {
            y.iter_mut().for_each(|v| *v = v.tanh());
        }
        acts.push(y);
    }
    Trace { acts }
}

fn mlp_backward<T: Scalar>(
    layers: &[Linear<T>],
    trace: &Trace<T>,
    d_out: &[T],
    squash_output: bool,
    grads: &mut [Linear<T>],
) {
    let mut d = d_out.to_vec();
    for k in (0..layers.len()).rev() {
        if k + 1 < layers.len() || squash_output {
            for (dv, &a) in d.iter_mut().zip(&trace.acts[k + 1]) {
                *dv *= T::one() - a * a;
            }
        }
        d = layers[k].backward(&trace.acts[k], &d, &mut grads[k]);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Policy<T> {
    /// `[obs_dim, h1, h2, act_dim]`
    pub layer_sizes: [usize; 4],
    pub actor: Vec<Linear<T>>,
    pub critic: Vec<Linear<T>>,
    pub log_std: Vec<T>,
}

impl<T: Scalar> Policy<T> {
    pub fn zeros(layer_sizes: [usize; 4]) -> Self {
        let [o, h1, h2, a] = layer_sizes;
        Policy {
            layer_sizes,
            actor: vec![Linear::zeros(o, h1), Linear::zeros(h1, h2), Linear::zeros(h2, a)],
            critic: vec![Linear::zeros(o, h1), Linear::zeros(h1, h2), Linear::zeros(h2, 1)],
            log_std: vec![T::zero(); a],
        }
    }

    /// Hidden layers with unit gain; small actor head so initial means sit
    /// near 0; `log_std` starts at 0.
    pub fn random<R: Rng + ?Sized>(layer_sizes: [usize; 4], rng: &mut R) -> Self {
        assert!(layer_sizes.iter().all(|&n| n >= 1), "layer sizes must be >= 1");
        let [o, h1, h2, a] = layer_sizes;
        let actor = vec![
            Linear::random(o, h1, 1.0, rng),
            Linear::random(h1, h2, 1.0, rng),
            Linear::random(h2, a, 0.01, rng),
        ];
        let critic = vec![
            Linear::random(o, h1, 1.0, rng),
            Linear::random(h1, h2, 1.0, rng),
            Linear::random(h2, 1, 1.0, rng),
        ];
        Policy {
            layer_sizes,
            actor,
            critic,
            log_std: vec![T::zero(); a],
        }
    }

    pub fn obs_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn act_dim(&self) -> usize {
        self.layer_sizes[3]
    }

    pub fn flops(&self) -> FlopsReport {
        count_flops(&self.layer_sizes)
    }

    fn check_input(&self, observation: &[T]) -> Result<()> {
        if observation.len() != self.obs_dim() {
            return Err(Error::DimensionMismatch {
                what: "observation",
                expected: self.obs_dim(),
                got: observation.len(),
            });
        }
        if observation.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalBlowup("non-finite observation".into()));
        }
        Ok(())
    }

    /// Action means in `[-1, 1]` and the value estimate.
    pub fn forward(&self, observation: &[T]) -> Result<(Vec<T>, T)> {
        self.check_input(observation)?;
        Ok((self.mean(observation), self.value(observation)))
    }

    pub fn mean(&self, observation: &[T]) -> Vec<T> {
        mlp_forward(&self.actor, observation, true).acts.pop().expect("output")
    }

    pub fn value(&self, observation: &[T]) -> T {
        mlp_forward(&self.critic, observation, false).acts[3][0]
    }

    pub(crate) fn actor_trace(&self, observation: &[T]) -> Trace<T> {
        mlp_forward(&self.actor, observation, true)
    }

    pub(crate) fn critic_trace(&self, observation: &[T]) -> Trace<T> {
        mlp_forward(&self.critic, observation, false)
    }

    pub(crate) fn actor_backward(&self, trace: &Trace<T>, d_mean: &[T], grad: &mut Policy<T>) {
        mlp_backward(&self.actor, trace, d_mean, true, &mut grad.actor);
    }

    pub(crate) fn critic_backward(&self, trace: &Trace<T>, d_value: T, grad: &mut Policy<T>) {
        mlp_backward(&self.critic, trace, &[d_value], false, &mut grad.critic);
    }

    /// Gaussian log-density of `action` under mean `mean`.
    pub fn log_prob(&self, mean: &[T], action: &[T]) -> T {
        let half_ln_2pi = T::of(0.5 * (2.0 * std::f64::consts::PI).ln());
        mean.iter()
            .zip(action)
            .zip(&self.log_std)
            .map(|((&m, &a), &ls)| {
                let z = (a - m) / ls.exp();
                -T::of(0.5) * z * z - ls - half_ln_2pi
            })
            .sum()
    }

    /// Entropy of the action distribution (state-independent).
    pub fn entropy(&self) -> T {
        let c = T::of(0.5 * (1.0 + (2.0 * std::f64::consts::PI).ln()));
        self.log_std.iter().map(|&ls| ls + c).sum()
    }

    /// All parameter tensors in a fixed order: actor (weight, bias) per
    /// layer, critic likewise, then `log_std`.
    pub fn tensors(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = Vec::with_capacity(13);
        for l in self.actor.iter().chain(&self.critic) {
            out.push(&l.weight);
            out.push(&l.bias);
        }
        out.push(&self.log_std);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = Vec::with_capacity(13);
        for l in self.actor.iter_mut().chain(self.critic.iter_mut()) {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out.push(&mut self.log_std);
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let layer = |l: &Linear<T>| LayerParams {
            inputs: l.inputs,
            outputs: l.outputs,
            weight: l.weight.iter().map(|v| v.to_f64_lossy()).collect(),
            bias: l.bias.iter().map(|v| v.to_f64_lossy()).collect(),
        };
        Checkpoint {
            format_version: CHECKPOINT_VERSION,
            layer_sizes: self.layer_sizes,
            actor: self.actor.iter().map(layer).collect(),
            critic: self.critic.iter().map(layer).collect(),
            log_std: self.log_std.iter().map(|v| v.to_f64_lossy()).collect(),
            flops: self.flops(),
        }
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        if c.format_version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!(
                "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                c.format_version
            )));
        }
        let mut p = Policy::zeros(c.layer_sizes);
        let check = |what: &'static str, expected: usize, got: usize| {
            if expected == got {
                Ok(())
            } else {
                Err(Error::DimensionMismatch { what, expected, got })
            }
        };
        check("actor layers", 3, c.actor.len())?;
        check("critic layers", 3, c.critic.len())?;
        check("log_std", p.act_dim(), c.log_std.len())?;
        for (dst, src) in p.actor.iter_mut().chain(p.critic.iter_mut()).zip(c.actor.iter().chain(&c.critic)) {
            check("layer inputs", dst.inputs, src.inputs)?;
            check("layer outputs", dst.outputs, src.outputs)?;
            check("weights", dst.weight.len(), src.weight.len())?;
            check("biases", dst.bias.len(), src.bias.len())?;
            dst.weight = src.weight.iter().map(|&v| T::of(v)).collect();
            dst.bias = src.bias.iter().map(|&v| T::of(v)).collect();
        }
        p.log_std = c.log_std.iter().map(|&v| T::of(v)).collect();
        if !p.is_finite() {
            return Err(Error::NumericalBlowup("checkpoint holds non-finite parameters".into()));
        }
        Ok(p)
    }
}

impl<T: Scalar> Controller<T> for Policy<T> {
    /// Deterministic action: the mean.
    fn act(&self, observation: &[T]) -> Result<Vec<T>> {
        self.check_input(observation)?;
        Ok(self.mean(observation))
    }
}

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// On-disk policy: sizes, every parameter, `log_std` and the FLOPs report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub layer_sizes: [usize; 4],
    pub actor: Vec<LayerParams>,
    pub critic: Vec<LayerParams>,
    pub log_std: Vec<f64>,
    pub flops: FlopsReport,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_network_outputs_zero() {
        let p = Policy::<f64>::zeros([5, 8, 8, 3]);
        let (m, v) = p.forward(&[1.0, -2.0, 3.0, 0.5, 0.1]).unwrap();
        assert_eq!(m, vec![0.0; 3]);
        assert_eq!(v, 0.0);
    }

    #[test]
    fn unit_toy_is_odd_fixed_point() {
        let mut p = Policy::<f64>::zeros([1, 1, 1, 1]);
        for l in p.actor.iter_mut().chain(p.critic.iter_mut()) {
            l.weight.iter_mut().for_each(|w| *w = 1.0);
        }
        let (m, v) = p.forward(&[0.0]).unwrap();
        assert_eq!(m, vec![0.0]);
        assert_eq!(v, 0.0);
        let (m, _) = p.forward(&[0.7]).unwrap();
        assert!((m[0] - 0.7f64.tanh().tanh().tanh()).abs() < 1e-15);
    }

    #[test]
    fn forward_is_deterministic_and_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = Policy::<f64>::random([6, 16, 16, 4], &mut rng);
        let obs = [0.3, -0.2, 1.0, 5.0, -7.0, 0.0];
        assert_eq!(p.forward(&obs).unwrap(), p.forward(&obs).unwrap());
        assert!(p.mean(&obs).iter().all(|m| m.abs() <= 1.0));
    }

    #[test]
    fn forward_rejects_bad_input() {
        let p = Policy::<f64>::zeros([3, 4, 4, 2]);
        assert!(matches!(p.forward(&[0.0; 2]), Err(Error::DimensionMismatch { .. })));
        assert!(matches!(
            p.forward(&[0.0, f64::NAN, 0.0]),
            Err(Error::NumericalBlowup(_))
        ));
    }

    #[test]
    fn matches_naive_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = Policy::<f64>::random([3, 4, 5, 2], &mut rng);
        let x = [0.4, -1.1, 0.25];
        let mut h = x.to_vec();
        for l in &p.actor {
            let mut y = vec![0.0; l.outputs];
            for o in 0..l.outputs {
                let mut s = l.bias[o];
                for i in 0..l.inputs {
                    s += l.weight[o * l.inputs + i] * h[i];
                }
                y[o] = s.tanh();
            }
            h = y;
        }
        for (a, b) in p.mean(&x).iter().zip(&h) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn log_prob_and_entropy_match_closed_forms() {
        let mut p = Policy::<f64>::zeros([1, 1, 1, 2]);
        p.log_std = vec![0.0, 0.5f64.ln()];
        let lp = p.log_prob(&[0.0, 1.0], &[1.0, 1.5]);
        let n = |x: f64, s: f64| (-(x * x) / (2.0 * s * s)).exp() / (s * (2.0 * std::f64::consts::PI).sqrt());
        assert!((lp - (n(1.0, 1.0) * n(0.5, 0.5)).ln()).abs() < 1e-12);
        let h = |s: f64| 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E * s * s).ln();
        assert!((p.entropy() - (h(1.0) + h(0.5))).abs() < 1e-12);
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = Policy::<f64>::random([7, 6, 5, 3], &mut rng);
        let c = p.to_checkpoint();
        assert_eq!(c.flops, count_flops(&[7, 6, 5, 3]));
        let json = serde_json::to_string(&c).unwrap();
        let back: Checkpoint = serde_json::from_str(&json).unwrap();
        assert_eq!(Policy::<f64>::from_checkpoint(&back).unwrap(), p);

        let mut bad = c.clone();
        bad.actor[1].weight.pop();
        assert!(Policy::<f64>::from_checkpoint(&bad).is_err());
        let mut bad = c;
        bad.format_version = 99;
        assert!(Policy::<f64>::from_checkpoint(&bad).is_err());
    }

    #[test]
    fn f32_policy_agrees_with_f64() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p64 = Policy::<f64>::random([4, 8, 8, 2], &mut rng);
        let p32 = Policy::<f32>::from_checkpoint(&p64.to_checkpoint()).unwrap();
        let x = [0.1, 0.2, -0.3, 0.4];
        let m64 = p64.mean(&x);
        let m32 = p32.mean(&x.map(|v| v as f32));
        for (a, b) in m64.iter().zip(&m32) {
            assert!((a - *b as f64).abs() < 1e-5);
        }
    }
}
