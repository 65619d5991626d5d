//! Clipped-surrogate PPO with GAE, Adam and global gradient-norm clipping.
//!
//! Loss = -clipped surrogate + vf_coef * mean (V - R)^2 - entropy_coef * H.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::Policy;
use crate::error::{Error, Result};
use crate::genome::Genome;
use crate::physics::SimConfig;
use crate::scalar::Scalar;
use crate::seed::derive_seed;
use crate::tasks::{observation_len, run_episode, TaskEnv, TaskSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpoConfig {
    pub learning_rate: f64,
    pub steps_per_update: usize,
    /// Minibatch size.
    pub batch_size: usize,
    pub epochs: usize,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub entropy_coef: f64,
    pub vf_coef: f64,
    pub clip_range: f64,
    pub max_grad_norm: f64,
    pub total_timesteps: usize,
    pub eval_interval: usize,
    pub hidden: [usize; 2],
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            learning_rate: 2.5e-4,
            steps_per_update: 128,
            batch_size: 4,
            epochs: 4,
            gamma: 0.99,
            gae_lambda: 0.95,
            entropy_coef: 0.01,
            vf_coef: 0.5,
            clip_range: 0.1,
            max_grad_norm: 0.5,
            total_timesteps: 200_000,
            eval_interval: 100_000,
            hidden: [64, 64],
        }
    }
}

impl PpoConfig {
    /// Full-size networks and budget.
    pub fn paper_scale() -> Self {
        PpoConfig {
            total_timesteps: 1_000_000,
            hidden: [256, 256],
            ..PpoConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        for (name, v) in [
            ("learning_rate", self.learning_rate),
            ("max_grad_norm", self.max_grad_norm),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        for (name, v) in [
            ("entropy_coef", self.entropy_coef),
            ("vf_coef", self.vf_coef),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be >= 0, got {v}"));
            }
        }
        for (name, v) in [
            ("steps_per_update", self.steps_per_update),
            ("batch_size", self.batch_size),
            ("epochs", self.epochs),
            ("total_timesteps", self.total_timesteps),
            ("eval_interval", self.eval_interval),
            ("hidden[0]", self.hidden[0]),
            ("hidden[1]", self.hidden[1]),
        ] {
            if v == 0 {
                return bad(format!("{name} must be >= 1"));
            }
        }
        if !(self.clip_range > 0.0 && self.clip_range < 1.0) {
            return bad(format!("clip_range must lie in (0, 1), got {}", self.clip_range));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad(format!("gamma must lie in (0, 1], got {}", self.gamma));
        }
        if !(self.gae_lambda >= 0.0 && self.gae_lambda <= 1.0) {
            return bad(format!("gae_lambda must lie in [0, 1], got {}", self.gae_lambda));
        }
        Ok(())
    }
}

/// One transition prepared for the PPO loss.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample<T> {
    pub obs: Vec<T>,
    pub action: Vec<T>,
    pub old_log_prob: T,
    pub advantage: T,
    /// Value target.
    pub ret: T,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossCoefficients<T> {
    pub policy: T,
    pub value: T,
    pub entropy: T,
    pub clip_range: T,
}

impl<T: Scalar> LossCoefficients<T> {
    pub fn from_config(cfg: &PpoConfig) -> Self {
        LossCoefficients {
            policy: T::one(),
            value: T::of(cfg.vf_coef),
            entropy: T::of(cfg.entropy_coef),
            clip_range: T::of(cfg.clip_range),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts<T> {
    /// Negated mean clipped surrogate.
    pub policy: T,
    /// Mean squared value error.
    pub value: T,
    pub entropy: T,
    pub total: T,
}

/// Evaluates the loss on `batch` and, when `grad` is given, accumulates
/// its gradient (same layout as the policy) into it.
pub fn loss_and_grad<T: Scalar>(
    policy: &Policy<T>,
    batch: &[&Sample<T>],
    coeffs: &LossCoefficients<T>,
    mut grad: Option<&mut Policy<T>>,
) -> LossParts<T> {
    let n = T::of_usize(batch.len());
    let (lo, hi) = (T::one() - coeffs.clip_range, T::one() + coeffs.clip_range);
    let mut policy_loss = T::zero();
    let mut value_loss = T::zero();
    let sigma: Vec<T> = policy.log_std.iter().map(|l| l.exp()).collect();
    for s in batch {
        let trace = policy.actor_trace(&s.obs);
        let mean = trace.acts.last().expect("output");
        let log_prob = policy.log_prob(mean, &s.action);
        let ratio = (log_prob - s.old_log_prob).exp();
        let unclipped = ratio * s.advantage;
        let clipped = ratio.max(lo).min(hi) * s.advantage;
        policy_loss -= unclipped.min(clipped) / n;

        let critic = policy.critic_trace(&s.obs);
        let err = critic.acts[3][0] - s.ret;
        value_loss += err * err / n;

        if let Some(g) = grad.as_deref_mut() {
            // the min picks the unclipped branch, else the gradient is 0
            if unclipped <= clipped && coeffs.policy != T::zero() {
                let d_log_prob = -coeffs.policy * s.advantage * ratio / n;
                let mut d_mean = vec![T::zero(); mean.len()];
                for j in 0..mean.len() {
                    let z = (s.action[j] - mean[j]) / sigma[j];
                    d_mean[j] = d_log_prob * z / sigma[j];
                    g.log_std[j] += d_log_prob * (z * z - T::one());
                }
                policy.actor_backward(&trace, &d_mean, g);
            }
            if coeffs.value != T::zero() {
                policy.critic_backward(&critic, coeffs.value * T::of(2.0) * err / n, g);
            }
        }
    }
    let entropy = policy.entropy();
    if let Some(g) = grad {
        for v in &mut g.log_std {
            *v -= coeffs.entropy;
        }
    }
    LossParts {
        policy: policy_loss,
        value: value_loss,
        entropy,
        total: coeffs.policy * policy_loss + coeffs.value * value_loss - coeffs.entropy * entropy,
    }
}

/// Generalized advantage estimates.
///
/// `next_values[t]` is the critic's value of the state reached by step `t`;
/// it is ignored when `terminal[t]`. `episode_end[t]` stops the backward
/// accumulation (set it for terminal and time-limit steps alike).
pub fn gae<T: Scalar>(
    rewards: &[T],
    values: &[T],
    next_values: &[T],
    terminal: &[bool],
    episode_end: &[bool],
    gamma: T,
    lambda: T,
) -> Vec<T> {
    let n = rewards.len();
    assert!(
        values.len() == n && next_values.len() == n && terminal.len() == n && episode_end.len() == n,
        "gae inputs must have equal lengths"
    );
    let mut adv = vec![T::zero(); n];
    let mut carry = T::zero();
    for t in (0..n).rev() {
        let bootstrap = if terminal[t] { T::zero() } else { next_values[t] };
        let delta = rewards[t] + gamma * bootstrap - values[t];
        if episode_end[t] {
            carry = T::zero();
        }
        carry = delta + gamma * lambda * carry;
        adv[t] = carry;
    }
    adv
}

/// Shifts to zero mean and scales to unit (population) std.
pub fn normalize_advantages<T: Scalar>(adv: &mut [T]) {
    if adv.is_empty() {
        return;
    }
    let n = T::of_usize(adv.len());
    let mean = adv.iter().copied().sum::<T>() / n;
    let var = adv.iter().map(|&a| (a - mean) * (a - mean)).sum::<T>() / n;
    let scale = var.sqrt() + T::of(1e-8);
    for a in adv {
        *a = (*a - mean) / scale;
    }
}

/// Scales `grad` so its global L2 norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_grad_norm<T: Scalar>(grad: &mut Policy<T>, max_norm: T) -> T {
    let norm = grad
        .tensors()
        .iter()
        .flat_map(|t| t.iter())
        .map(|&g| g * g)
        .sum::<T>()
        .sqrt();
    if norm > max_norm {
        let s = max_norm / (norm + T::of(1e-6));
        for t in grad.tensors_mut() {
            t.iter_mut().for_each(|g| *g *= s);
        }
    }
    norm
}

#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub learning_rate: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    steps: i32,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(shape_of: &Policy<T>, learning_rate: T) -> Self {
        let zeros: Vec<Vec<T>> = shape_of.tensors().iter().map(|t| vec![T::zero(); t.len()]).collect();
        Adam {
            learning_rate,
            beta1: T::of(0.9),
            beta2: T::of(0.999),
            eps: T::of(1e-5),
            steps: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, params: &mut Policy<T>, grad: &Policy<T>) {
        self.steps += 1;
        let c1 = T::one() - self.beta1.powi(self.steps);
        let c2 = T::one() - self.beta2.powi(self.steps);
        for (((p, g), m), v) in params
            .tensors_mut()
            .into_iter()
            .zip(grad.tensors())
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (T::one() - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (T::one() - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub timesteps: usize,
    pub eval_fitness: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub policy: Policy<T>,
    /// Deterministic evaluations at 0, every `eval_interval` steps and at
    /// the end of training.
    pub curve: Vec<CurvePoint>,
    pub updates: usize,
}

impl<T> TrainOutcome<T> {
    pub fn final_fitness(&self) -> f64 {
        self.curve.last().map_or(f64::NAN, |c| c.eval_fitness)
    }
}

pub fn train<T: Scalar>(
    g: &Genome,
    task: &TaskSpec,
    sim: &SimConfig<T>,
    cfg: &PpoConfig,
    seed: u64,
) -> Result<TrainOutcome<T>> {
    train_with_progress(g, task, sim, cfg, seed, |_| {})
}

/// As [`train`], calling `progress` after each evaluation.
pub fn train_with_progress<T: Scalar>(
    g: &Genome,
    task: &TaskSpec,
    sim: &SimConfig<T>,
    cfg: &PpoConfig,
    seed: u64,
    mut progress: impl FnMut(&CurvePoint),
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    let sizes = [
        observation_len(g, task.kind),
        cfg.hidden[0],
        cfg.hidden[1],
        g.actuator_count(),
    ];
    let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &["init"]));
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &["explore"]));
    let mut policy = Policy::<T>::random(sizes, &mut init_rng);
    let mut adam = Adam::new(&policy, T::of(cfg.learning_rate));
    let coeffs = LossCoefficients::from_config(cfg);
    let eval_seed = derive_seed(seed, &["eval"]);
    let (gamma, lambda) = (T::of(cfg.gamma), T::of(cfg.gae_lambda));

    let mut curve = Vec::new();
    let mut evaluate = |policy: &Policy<T>, timesteps: usize, curve: &mut Vec<CurvePoint>| -> Result<()> {
        let r = run_episode(g, policy, task, sim, eval_seed)?;
        let point = CurvePoint {
            timesteps,
            eval_fitness: r.fitness,
        };
        progress(&point);
        curve.push(point);
        Ok(())
    };
    evaluate(&policy, 0, &mut curve)?;

    let mut episodes = 0u64;
    let episode_seed = |k: u64| derive_seed(seed, &["episode", &k.to_string()]);
    let mut env = TaskEnv::new(g, task, sim, episode_seed(episodes))?;
    let mut obs = env.observe();
    let mut timesteps = 0usize;
    let mut updates = 0usize;
    let mut grad = Policy::<T>::zeros(sizes);

    while timesteps < cfg.total_timesteps {
        let n = cfg.steps_per_update.min(cfg.total_timesteps - timesteps);
        let mut observations = Vec::with_capacity(n);
        let mut actions = Vec::with_capacity(n);
        let mut log_probs = Vec::with_capacity(n);
        let mut values = Vec::with_capacity(n);
        let mut rewards = Vec::with_capacity(n);
        let mut next_values = Vec::with_capacity(n);
        let mut terminal = Vec::with_capacity(n);
        let mut episode_end = Vec::with_capacity(n);

        for _ in 0..n {
            let (mean, value) = policy.forward(&obs)?;
            let action: Vec<T> = mean
                .iter()
                .zip(&policy.log_std)
                .map(|(&m, &ls)| {
                    let eps: f64 = rng.sample(StandardNormal);
                    m + ls.exp() * T::of(eps)
                })
                .collect();
            let log_prob = policy.log_prob(&mean, &action);
            let (reward, next_obs, is_terminal, ended) = match env.step(&action) {
                Ok(out) => (out.reward, Some(env.observe()), false, out.done),
                // a blown-up body ends the episode without bootstrap
                Err(Error::NumericalBlowup(_)) => (0.0, None, true, true),
                Err(e) => return Err(e),
            };
            next_values.push(next_obs.as_ref().map_or(T::zero(), |o| policy.value(o)));
            observations.push(std::mem::take(&mut obs));
            obs = match next_obs {
                Some(o) if !ended => o,
                _ => {
                    episodes += 1;
                    env = TaskEnv::new(g, task, sim, episode_seed(episodes))?;
                    env.observe()
                }
            };
            actions.push(action);
            log_probs.push(log_prob);
            values.push(value);
            rewards.push(T::of(reward));
            terminal.push(is_terminal);
            episode_end.push(ended);
            timesteps += 1;
            if timesteps.is_multiple_of(cfg.eval_interval) && timesteps < cfg.total_timesteps {
                evaluate(&policy, timesteps, &mut curve)?;
            }
        }

        let mut advantages = gae(&rewards, &values, &next_values, &terminal, &episode_end, gamma, lambda);
        let returns: Vec<T> = advantages.iter().zip(&values).map(|(&a, &v)| a + v).collect();
        normalize_advantages(&mut advantages);
        let samples: Vec<Sample<T>> = observations
            .into_iter()
            .zip(actions)
            .zip(log_probs)
            .zip(advantages)
            .zip(returns)
            .map(|((((obs, action), old_log_prob), advantage), ret)| Sample {
                obs,
                action,
                old_log_prob,
                advantage,
                ret,
            })
            .collect();

        let mut order: Vec<usize> = (0..samples.len()).collect();
        for _ in 0..cfg.epochs {
            order.shuffle(&mut rng);
            for chunk in order.chunks(cfg.batch_size) {
                let batch: Vec<&Sample<T>> = chunk.iter().map(|&i| &samples[i]).collect();
                for t in grad.tensors_mut() {
                    t.iter_mut().for_each(|v| *v = T::zero());
                }
                let loss = loss_and_grad(&policy, &batch, &coeffs, Some(&mut grad));
                let norm = clip_grad_norm(&mut grad, T::of(cfg.max_grad_norm));
                if !loss.total.is_finite() || !norm.is_finite() {
                    return Err(Error::NumericalBlowup(format!(
                        "non-finite PPO loss at update {updates} (timestep {timesteps}): \
                         policy={} value={} entropy={} grad_norm={} log_std={:?}",
                        loss.policy, loss.value, loss.entropy, norm, policy.log_std
                    )));
                }
                adam.step(&mut policy, &grad);
            }
        }
        updates += 1;
    }
    evaluate(&policy, timesteps, &mut curve)?;
    Ok(TrainOutcome {
        policy,
        curve,
        updates,
    })
}
