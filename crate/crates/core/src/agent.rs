//! The Stein soft actor-critic: a Q-network critic with an entropy-augmented
//! Bellman target, an SVGD actor seeded by a learned state-conditioned
//! Gaussian, an optional amortized sampler network, and the training loop.
//!
//! The actor gradient is reverse mode by hand through the full SVGD unroll:
//! kernel terms analytically, target-gradient terms via one Hessian-vector
//! product per particle per step.

use std::path::Path;

use crate::entropy::{svgd_logq_closed_form, EntropyEstimate};
use crate::error::{Error, Result};
use crate::linalg::dist_sq;
use crate::nn::{polyak_update, Activation, AdamState, GaussianHead, HeadOutput, QNetwork};
use crate::replay::{ReplayBuffer, Transition};
use crate::rng::RngStream;
use crate::samplers::{select_in_range, Bandwidth, SamplerConfig, SvgdTrajectory};
use crate::targets::{QBackedTarget, QFunction};

pub const LN_2PI: f64 = 1.8378770664093453;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    pub state_dim: usize,
    pub action_dim: usize,
    pub hidden: usize,
    pub activation: Activation,
    /// Entropy temperature, fixed per run.
    pub alpha: f64,
    pub gamma: f64,
    pub lr: f64,
    /// Target smoothing coefficient.
    pub tau: f64,
    /// SVGD settings (epsilon, steps L, particles m, bandwidth, range t).
    pub sampler: SamplerConfig,
    /// Initial policy standard deviation before the head learns.
    pub initial_std: f64,
    pub buffer_capacity: usize,
    /// Train the amortized one-shot sampler alongside the actor.
    pub amortized: bool,
    /// Quadratic penalty coefficient on actor particles outside the action
    /// bounds; the actor's Q term is evaluated at the clipped action, so the
    /// untrained extrapolation of the Q-network beyond the box never enters
    /// the objective. Inactive once the policy settles inside the bounds.
    #[serde(default = "default_bound_penalty")]
    pub bound_penalty: f64,
    /// When false, the Bellman target bootstraps through episode ends
    /// (goal captures and time limits alike), so the entropy stream never
    /// makes termination avoidance profitable at high temperatures.
    #[serde(default = "default_mask_terminal")]
    pub mask_terminal: bool,
    /// Multiplier applied to states before they enter any network (feature
    /// conditioning; the arena spans +-7 while actions live in +-1).
    #[serde(default = "default_state_scale")]
    pub state_scale: f64,
}

fn default_state_scale() -> f64 {
    1.0
}

fn default_mask_terminal() -> bool {
    true
}

fn default_bound_penalty() -> f64 {
    20.0
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            state_dim: 2,
            action_dim: 2,
            hidden: 256,
            activation: Activation::Relu,
            alpha: 1.0,
            gamma: 0.8,
            lr: 3e-4,
            tau: 0.005,
            sampler: SamplerConfig {
                epsilon: 0.01,
                steps: 10,
                particles: 10,
                bandwidth: Bandwidth::Adaptive,
                hmc_mass: 1.0,
                range_t: Some(3.0),
            },
            initial_std: 0.3_f64.sqrt(),
            buffer_capacity: 1_000_000,
            amortized: false,
            bound_penalty: default_bound_penalty(),
            mask_terminal: default_mask_terminal(),
            state_scale: default_state_scale(),
        }
    }
}

pub struct S2acAgent {
    pub cfg: AgentConfig,
    pub q: QNetwork,
    pub q_target: QNetwork,
    pub head: GaussianHead,
    pub amortized: Option<crate::nn::MlpNetwork>,
    adam_q: AdamState,
    adam_head: AdamState,
    adam_amortized: Option<AdamState>,
}

impl S2acAgent {
    pub fn new(cfg: AgentConfig, rng: &mut RngStream) -> Self {
        let q = QNetwork::new(cfg.state_dim, cfg.action_dim, cfg.hidden, cfg.activation, rng);
        let q_target = q.clone();
        let mut head =
            GaussianHead::new(cfg.state_dim, cfg.action_dim, cfg.hidden, cfg.activation, rng);
        // seed the initial distribution at the configured width via the
        // log-std output biases
        let n = head.net.params.len();
        let bias_start = n - 2 * cfg.action_dim;
        for k in 0..cfg.action_dim {
            head.net.params[bias_start + cfg.action_dim + k] = cfg.initial_std.ln();
        }
        let amortized = if cfg.amortized {
            Some(crate::nn::MlpNetwork::new(
                vec![cfg.state_dim + cfg.action_dim, cfg.hidden, cfg.hidden, cfg.action_dim],
                cfg.activation,
                rng,
            ))
        } else {
            None
        };
        let adam_q = AdamState::new(q.net.params.len(), cfg.lr);
        let adam_head = AdamState::new(head.net.params.len(), cfg.lr);
        let adam_amortized = amortized.as_ref().map(|a| AdamState::new(a.params.len(), cfg.lr));
        S2acAgent { cfg, q, q_target, head, amortized, adam_q, adam_head, adam_amortized }
    }

    pub fn clip_action(&self, a: &[f64]) -> Vec<f64> {
        a.iter().map(|x| x.clamp(-1.0, 1.0)).collect()
    }

    /// State as the networks see it.
    pub fn scaled_state(&self, s: &[f64]) -> Vec<f64> {
        s.iter().map(|v| v * self.cfg.state_scale).collect()
    }
}

/// One policy sample: the unrolled particles with their tracked entropy and
/// the bookkeeping the actor backward needs.
pub struct PolicySample {
    /// Final particle positions (untruncated; clip at emission).
    pub particles: Vec<Vec<f64>>,
    pub entropy: EntropyEstimate,
    pub trajectory: SvgdTrajectory,
    pub head_out: HeadOutput,
    /// Selected reparameterization noise, one row per particle.
    pub xi: Vec<Vec<f64>>,
    pub log_q0: Vec<f64>,
    /// True when no pool particle was in range and all collapsed to the mean.
    pub fallback: bool,
}

/// Per-particle log N(a; mean, diag(std^2)) expressed through the noise.
fn gaussian_logq0(std: &[f64], xi: &[f64]) -> f64 {
    std.iter().zip(xi).map(|(s, x)| -(s.ln() + 0.5 * x * x + 0.5 * LN_2PI)).sum()
}

/// Draws the oversampled noise pool (2m rows).
pub fn draw_noise_pool(m: usize, d: usize, rng: &mut RngStream) -> Vec<Vec<f64>> {
    (0..2 * m).map(|_| rng.normal_vec(d)).collect()
}

/// Samples the policy at `state` with an explicit noise pool: particles from
/// N(mean, std) selected into the range band, then L SVGD steps on the
/// Q-backed target, with the closed-form entropy tracked along the way.
pub fn sample_policy_with_noise(
    agent: &S2acAgent,
    state: &[f64],
    noise_pool: &[Vec<f64>],
) -> Result<PolicySample> {
    let m = agent.cfg.sampler.particles;
    let d = agent.cfg.action_dim;
    let s_net = agent.scaled_state(state);
    let (_, head_out) = agent.head.forward(&s_net)?;

    let reparam = |xi: &[f64]| -> Vec<f64> {
        head_out
            .mean
            .iter()
            .zip(&head_out.std)
            .zip(xi)
            .map(|((mu, s), x)| mu + s * x)
            .collect()
    };
    let pool_positions: Vec<Vec<f64>> = noise_pool.iter().map(|xi| reparam(xi)).collect();

    let (xi, fallback) = match agent.cfg.sampler.range_t {
        Some(t) => match select_in_range(&pool_positions, m, &head_out.mean, &head_out.std, t) {
            Ok(idx) => {
                (idx.into_iter().map(|i| noise_pool[i].clone()).collect::<Vec<_>>(), false)
            }
            Err(Error::AllOutOfRange) => (vec![vec![0.0; d]; m], true),
            Err(e) => return Err(e),
        },
        None => (noise_pool.iter().take(m).cloned().collect(), false),
    };

    let positions: Vec<Vec<f64>> = xi.iter().map(|row| reparam(row)).collect();
    let log_q0: Vec<f64> = xi.iter().map(|row| gaussian_logq0(&head_out.std, row)).collect();

    let ps = crate::samplers::ParticleSet::new(positions, log_q0.clone())?;
    let target = QBackedTarget::new(&agent.q, &s_net, agent.cfg.alpha);
    let (final_ps, trajectory) =
        crate::samplers::run_svgd(&ps, &target, &agent.cfg.sampler, agent.cfg.alpha)?;
    let entropy = svgd_logq_closed_form(&trajectory);

    Ok(PolicySample {
        particles: final_ps.positions().to_vec(),
        entropy,
        trajectory,
        head_out,
        xi,
        log_q0,
        fallback,
    })
}

pub fn sample_policy(
    agent: &S2acAgent,
    state: &[f64],
    rng: &mut RngStream,
) -> Result<PolicySample> {
    let pool = draw_noise_pool(agent.cfg.sampler.particles, agent.cfg.action_dim, rng);
    sample_policy_with_noise(agent, state, &pool)
}

/// Bellman target y = r + gamma (1 - done) (mean_i Qbar(s', a'_i) + alpha H).
pub fn critic_target(
    reward: f64,
    done: bool,
    gamma: f64,
    alpha: f64,
    q_mean: f64,
    entropy: f64,
) -> f64 {
    if done {
        reward
    } else {
        reward + gamma * (q_mean + alpha * entropy)
    }
}

/// One critic gradient step over a batch; returns the pre-step MSE loss.
/// Next-state particles are sampled fresh at s'.
pub fn critic_update(
    agent: &mut S2acAgent,
    batch: &[Transition],
    rng: &mut RngStream,
) -> Result<f64> {
    assert!(!batch.is_empty());
    let b = batch.len() as f64;
    let mut grad = vec![0.0; agent.q.net.params.len()];
    let mut loss = 0.0;
    for tr in batch {
        let masked = tr.done && agent.cfg.mask_terminal;
        let y = if masked {
            tr.reward
        } else {
            let sample = sample_policy(agent, &tr.next_state, rng)?;
            let s_next_net = agent.scaled_state(&tr.next_state);
            let q_mean = sample
                .particles
                .iter()
                .map(|a| agent.q_target.value(&s_next_net, &agent.clip_action(a)))
                .sum::<f64>()
                / sample.particles.len() as f64;
            critic_target(
                tr.reward,
                false,
                agent.cfg.gamma,
                agent.cfg.alpha,
                q_mean,
                sample.entropy.value,
            )
        };
        let s_net = agent.scaled_state(&tr.state);
        let q_sa = agent.q.value(&s_net, &tr.action);
        let diff = q_sa - y;
        loss += diff * diff;
        let g = agent.q.param_grad(&s_net, &tr.action, 2.0 * diff / b)?;
        for (acc, gi) in grad.iter_mut().zip(&g) {
            *acc += gi;
        }
    }
    loss /= b;
    agent.adam_q.step(&mut agent.q.net.params, &grad);
    Ok(loss)
}

/// Forward value and head-parameter gradient of the actor objective
/// J = (1/m) sum_i Q(s, a^L_i) + alpha H(pi(.|s)) for one state and an
/// explicit noise pool. Reverse mode through the whole unroll; the Q-network
/// is frozen. Returns (J, dJ/d theta).
pub fn actor_objective_and_grad(
    agent: &S2acAgent,
    state: &[f64],
    noise_pool: &[Vec<f64>],
) -> Result<(f64, Vec<f64>)> {
    let m = agent.cfg.sampler.particles;
    let d = agent.cfg.action_dim;
    let alpha = agent.cfg.alpha;
    let eps = agent.cfg.sampler.epsilon;
    let m_f = m as f64;

    let sample = sample_policy_with_noise(agent, state, noise_pool)?;
    let s_net = agent.scaled_state(state);
    let (head_cache, head_out) = agent.head.forward(&s_net)?;
    let traj = &sample.trajectory;
    let steps = traj.steps();

    // J = (1/m) sum Qb(s, a^L) + alpha H, with Qb the bounded evaluation:
    // Q at the clipped action minus a quadratic pull on the excess, so the
    // objective never chases the network's extrapolation outside the box
    let c_bound = agent.cfg.bound_penalty;
    let bounded_q = |a: &[f64]| -> (f64, Vec<f64>) {
        let clipped = agent.clip_action(a);
        let v = agent.q.value(&s_net, &clipped);
        let g_in = agent.q.grad_action(&s_net, &clipped);
        let mut value = v;
        let mut grad = vec![0.0; a.len()];
        for t in 0..a.len() {
            let excess = a[t] - clipped[t];
            if excess == 0.0 {
                grad[t] = g_in[t];
            } else {
                value -= c_bound * excess * excess;
                grad[t] = -2.0 * c_bound * excess;
            }
        }
        (value, grad)
    };

    let evaluated: Vec<(f64, Vec<f64>)> =
        sample.particles.iter().map(|a| bounded_q(a)).collect();
    let objective =
        evaluated.iter().map(|(v, _)| v).sum::<f64>() / m_f + alpha * sample.entropy.value;

    // adjoint with respect to particle positions, starting at level L
    let mut adj: Vec<Vec<f64>> = evaluated
        .iter()
        .map(|(_, g)| g.iter().map(|v| v / m_f).collect())
        .collect();

    // weight on each per-step trace term c_i^l: J contains
    // +(alpha/m) sum_{i,l} c_i^l because H = -(1/m) sum_i (logq0_i - sum_l c_i^l)
    let w_c = alpha / m_f;
    let target = QBackedTarget::new(&agent.q, &s_net, alpha);

    for l in (0..steps).rev() {
        let positions = &traj.snapshots[l];
        let grads = &traj.grad_snapshots[l];
        let sigma = traj.sigmas[l];
        let s2 = sigma * sigma;

        let mut new_adj = adj.clone(); // identity part of a^{l+1} = a^l + eps drift
        let mut hvp_pending = vec![vec![0.0; d]; m];

        for i in 0..m {
            // cotangent into drift_i, with the 1/m particle mean folded in
            let u: Vec<f64> = adj[i].iter().map(|v| eps * v / m_f).collect();

            // moving self term (1/m) g(a_i): Hessian route
            for t in 0..d {
                hvp_pending[i][t] += u[t];
            }

            for j in 0..m {
                if j == i {
                    continue;
                }
                let a_i = &positions[i];
                let a_j = &positions[j];
                let r: Vec<f64> = a_i.iter().zip(a_j).map(|(x, y)| x - y).collect();
                let r_sq = dist_sq(a_i, a_j);
                let k = (-r_sq / (2.0 * s2)).exp();
                let g_j = &grads[j];
                let g_dot_u: f64 = g_j.iter().zip(&u).map(|(a, b)| a * b).sum();
                let r_dot_u: f64 = r.iter().zip(&u).map(|(a, b)| a * b).sum();

                // dynamics term T = k g_j + (alpha/s2) r k
                for t in 0..d {
                    let vjp_i = k
                        * (-(g_dot_u) * r[t] / s2 - (alpha / (s2 * s2)) * r_dot_u * r[t]
                            + (alpha / s2) * u[t]);
                    new_adj[i][t] += vjp_i;
                    new_adj[j][t] -= vjp_i;
                }
                // d/da_j routes through g_j as well: k H_j u
                for t in 0..d {
                    hvp_pending[j][t] += k * u[t];
                }

                // entropy term c_i^l = (eps/(m s2)) sum_{j != i} k S with
                // S = -r.g_j - (alpha/s2) r_sq + d alpha
                if r_sq == 0.0 {
                    continue;
                }
                let scale = w_c * eps / (m_f * s2);
                let r_dot_g: f64 = r.iter().zip(g_j).map(|(a, b)| a * b).sum();
                let s_val = -r_dot_g - (alpha / s2) * r_sq + d as f64 * alpha;
                for t in 0..d {
                    let dk_i = -(r[t] / s2) * k;
                    let ds_i = -g_j[t] - (2.0 * alpha / s2) * r[t];
                    new_adj[i][t] += scale * (dk_i * s_val + k * ds_i);
                    // mirrored pieces on a_j, excluding the Hessian route
                    let dk_j = (r[t] / s2) * k;
                    let ds_j = g_j[t] + (2.0 * alpha / s2) * r[t];
                    new_adj[j][t] += scale * (dk_j * s_val + k * ds_j);
                }
                // the -H_j r piece of dS/da_j
                for t in 0..d {
                    hvp_pending[j][t] -= scale * k * r[t];
                }
            }
        }

        // one Hessian-vector product per particle, through grad(Q)/alpha
        for j in 0..m {
            if hvp_pending[j].iter().all(|v| *v == 0.0) {
                continue;
            }
            let hv = target.hvp(&positions[j], &hvp_pending[j]);
            for t in 0..d {
                new_adj[j][t] += hv[t];
            }
        }
        adj = new_adj;
    }

    // level 0: a0 = mean + std * xi (fallback keeps xi = 0)
    let mut d_mean = vec![0.0; d];
    let mut d_log_std = vec![0.0; d];
    for (adj_i, xi_i) in adj.iter().zip(&sample.xi) {
        for t in 0..d {
            d_mean[t] += adj_i[t];
            d_log_std[t] += adj_i[t] * head_out.std[t] * xi_i[t];
        }
    }
    // logq0 contributes -(alpha/m) sum_i logq0_i and d logq0 / d log_std = -1
    for t in 0..d {
        d_log_std[t] += alpha;
    }

    let grad = agent.head.backward(&head_cache, &head_out, &d_mean, &d_log_std);
    Ok((objective, grad))
}

/// One actor gradient step over a batch of states (ascent on the objective);
/// returns the pre-step loss -mean J.
pub fn actor_update(
    agent: &mut S2acAgent,
    states: &[Vec<f64>],
    rng: &mut RngStream,
) -> Result<f64> {
    assert!(!states.is_empty());
    let b = states.len() as f64;
    let mut grad = vec![0.0; agent.head.net.params.len()];
    let mut total = 0.0;
    for s in states {
        let pool = draw_noise_pool(agent.cfg.sampler.particles, agent.cfg.action_dim, rng);
        let (j, g) = actor_objective_and_grad(agent, s, &pool)?;
        total += j;
        for (acc, gi) in grad.iter_mut().zip(&g) {
            // minimize -J
            *acc -= gi / b;
        }
    }
    agent.adam_head.step(&mut agent.head.net.params, &grad);
    Ok(-total / b)
}

/// Amortized sampler update: draws m noise vectors, maps them through
/// f_psi(s, z), and moves each output along the Stein direction assembled
/// from the current particles — the sampler's reference particles plus the
/// other amortized outputs, whose mutual repulsion keeps the one-shot
/// sampler from collapsing onto a single mode. Returns the mean squared
/// direction norm as a progress proxy.
pub fn amortized_update(
    agent: &mut S2acAgent,
    states: &[Vec<f64>],
    rng: &mut RngStream,
) -> Result<f64> {
    assert!(!states.is_empty());
    if agent.amortized.is_none() {
        return Err(Error::Config("amortized network not enabled".into()));
    }
    let d = agent.cfg.action_dim;
    let m = agent.cfg.sampler.particles;
    let alpha = agent.cfg.alpha;
    let b = states.len() as f64;
    let n_params = agent.amortized.as_ref().unwrap().params.len();
    let mut grad = vec![0.0; n_params];
    let mut proxy = 0.0;
    let mut directions = 0usize;

    for s in states {
        let refs = sample_policy(agent, s, rng)?;
        let s_net = agent.scaled_state(s);
        let net = agent.amortized.as_ref().unwrap();

        let mut caches = Vec::with_capacity(m);
        let mut outputs = Vec::with_capacity(m);
        for _ in 0..m {
            let z = rng.normal_vec(d);
            let mut x = Vec::with_capacity(agent.cfg.state_dim + d);
            x.extend_from_slice(&s_net);
            x.extend_from_slice(&z);
            let (cache, y) = net.forward_cached(&x)?;
            caches.push(cache);
            outputs.push(y);
        }

        // kernel pool: sampler references plus the other amortized outputs
        let mut pool: Vec<Vec<f64>> = refs.particles.clone();
        pool.extend(outputs.iter().cloned());
        let sigma = match agent.cfg.sampler.bandwidth {
            Bandwidth::Fixed(v) => v,
            Bandwidth::Adaptive => crate::kernel::adaptive_bandwidth(&pool)?,
        };
        let pool_grads: Vec<Vec<f64>> =
            pool.iter().map(|a| agent.q.grad_action(&s_net, a)).collect();

        for (k_idx, (cache, y)) in caches.iter().zip(&outputs).enumerate() {
            let mut direction = vec![0.0; d];
            let mut count = 0usize;
            for (a_i, gq) in pool.iter().zip(&pool_grads) {
                // skip this output's own pool entry (kernel center at itself)
                if std::ptr::eq(a_i.as_ptr(), outputs[k_idx].as_ptr()) {
                    continue;
                }
                let k = crate::kernel::rbf_kernel(a_i, y, sigma)?;
                let gk = crate::kernel::rbf_kernel_grad_wrt_first(a_i, y, sigma)?;
                for t in 0..d {
                    direction[t] += k * gq[t] + alpha * gk[t];
                }
                count += 1;
            }
            for v in &mut direction {
                *v /= count.max(1) as f64;
            }
            proxy += direction.iter().map(|v| v * v).sum::<f64>();
            directions += 1;

            // ascend along the direction: upstream -direction into the minimizer
            let upstream: Vec<f64> = direction.iter().map(|v| -v / (b * m as f64)).collect();
            let (pg, _) = net.backward(cache, &upstream);
            for (acc, gi) in grad.iter_mut().zip(&pg) {
                *acc += gi;
            }
        }
    }
    let adam = agent.adam_amortized.as_mut().unwrap();
    adam.step(&mut agent.amortized.as_mut().unwrap().params, &grad);
    Ok(proxy / directions.max(1) as f64)
}

/// Draws an action from the amortized sampler (test-time path).
pub fn amortized_action(agent: &S2acAgent, state: &[f64], rng: &mut RngStream) -> Result<Vec<f64>> {
    let net = agent
        .amortized
        .as_ref()
        .ok_or_else(|| Error::Config("amortized network not enabled".into()))?;
    let z = rng.normal_vec(agent.cfg.action_dim);
    let mut x = Vec::with_capacity(agent.cfg.state_dim + agent.cfg.action_dim);
    x.extend_from_slice(&agent.scaled_state(state));
    x.extend_from_slice(&z);
    Ok(agent.clip_action(&net.forward(&x)?))
}

/// Optimal MaxEnt policy over a discrete action set: softmax(q / alpha).
pub fn softmax_policy_oracle(q_values: &[f64], alpha: f64) -> Vec<f64> {
    assert!(alpha > 0.0);
    let max = q_values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = q_values.iter().map(|q| ((q - max) / alpha).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub total_env_steps: usize,
    /// Environment steps between gradient phases.
    pub train_every: usize,
    pub grad_steps_per_phase: usize,
    pub batch_size: usize,
    /// Environment steps before the first gradient phase.
    pub warmup_steps: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            total_env_steps: 100_000,
            train_every: 50,
            grad_steps_per_phase: 1,
            batch_size: 100,
            warmup_steps: 1_000,
        }
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct MetricRow {
    pub step: u64,
    pub env_step: u64,
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub entropy_mean: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub amortized_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub episode_return: Option<f64>,
}

/// Trains on the multigoal environment. Exploration picks a uniform-random
/// particle; each gradient phase runs critic then actor (then the amortized
/// head) with a Polyak target update every gradient step. Any non-finite
/// loss aborts with a diagnostic checkpoint under `diag_dir`.
pub fn train(
    agent: &mut S2acAgent,
    env_cfg: &crate::env::EnvConfig,
    schedule: &TrainConfig,
    rng: &mut RngStream,
    diag_dir: &Path,
) -> Result<Vec<MetricRow>> {
    train_with_hook(agent, env_cfg, schedule, rng, diag_dir, 0, &mut |_, _| Ok(()))
}

/// [`train`] with a periodic hook: every `hook_every` environment steps
/// (0 disables it) the hook sees the current agent, e.g. for mid-run
/// evaluation dumps.
pub fn train_with_hook(
    agent: &mut S2acAgent,
    env_cfg: &crate::env::EnvConfig,
    schedule: &TrainConfig,
    rng: &mut RngStream,
    diag_dir: &Path,
    hook_every: usize,
    hook: &mut dyn FnMut(&S2acAgent, usize) -> Result<()>,
) -> Result<Vec<MetricRow>> {
    env_cfg.validate()?;
    let mut buffer = ReplayBuffer::new(agent.cfg.buffer_capacity);
    let mut metrics = Vec::new();
    let mut state = crate::env::reset(env_cfg, rng);
    let mut episode_return = 0.0;
    let mut last_episode_return: Option<f64> = None;
    let mut grad_step: u64 = 0;
    let mut entropy_mean;

    for t in 0..schedule.total_env_steps {
        let sample = sample_policy(agent, &state.position, rng)?;
        let pick = rng.below(sample.particles.len());
        let action_v = agent.clip_action(&sample.particles[pick]);
        entropy_mean = sample.entropy.value;
        let action = [action_v[0], action_v[1]];
        let out = crate::env::step(&state, action, env_cfg)?;
        episode_return += out.reward;
        buffer.push(Transition {
            state: state.position.to_vec(),
            action: action_v,
            reward: out.reward,
            next_state: out.state.position.to_vec(),
            done: out.done,
        });
        state = if out.done {
            last_episode_return = Some(episode_return);
            episode_return = 0.0;
            crate::env::reset(env_cfg, rng)
        } else {
            out.state
        };

        let due = (t + 1) % schedule.train_every == 0;
        if due && t + 1 >= schedule.warmup_steps && buffer.len() >= schedule.batch_size {
            for _ in 0..schedule.grad_steps_per_phase {
                let batch: Vec<Transition> =
                    buffer.sample(schedule.batch_size, rng)?.into_iter().cloned().collect();
                let critic_loss = critic_update(agent, &batch, rng)?;
                let states: Vec<Vec<f64>> = batch.iter().map(|tr| tr.state.clone()).collect();
                let actor_loss = actor_update(agent, &states, rng)?;
                let amortized_loss = if agent.amortized.is_some() {
                    Some(amortized_update(agent, &states, rng)?)
                } else {
                    None
                };
                polyak_update(&mut agent.q_target.net.params, &agent.q.net.params, agent.cfg.tau);
                grad_step += 1;

                if !critic_loss.is_finite() || !actor_loss.is_finite() {
                    let ckpt = diag_dir.join(format!("nan_abort_step_{grad_step}"));
                    std::fs::create_dir_all(&ckpt)?;
                    crate::nn::save_network(&agent.q.net, &ckpt.join("q_net.bin"))?;
                    crate::nn::save_network(&agent.head.net, &ckpt.join("policy_head.bin"))?;
                    return Err(Error::NanAbort { step: grad_step, checkpoint: ckpt });
                }

                metrics.push(MetricRow {
                    step: grad_step,
                    env_step: (t + 1) as u64,
                    critic_loss,
                    actor_loss,
                    entropy_mean,
                    amortized_loss,
                    episode_return: last_episode_return.take(),
                });
            }
        }

        if hook_every > 0 && (t + 1) % hook_every == 0 && t + 1 < schedule.total_env_steps {
            hook(agent, t + 1)?;
        }
    }
    Ok(metrics)
}

/// Greedy evaluation: the particle with the highest Q-value.
pub fn greedy_action(agent: &S2acAgent, state: &[f64], rng: &mut RngStream) -> Result<Vec<f64>> {
    let sample = sample_policy(agent, state, rng)?;
    let s_net = agent.scaled_state(state);
    let mut best = 0;
    let mut best_q = f64::NEG_INFINITY;
    for (i, a) in sample.particles.iter().enumerate() {
        let q = agent.q.value(&s_net, &agent.clip_action(a));
        if q > best_q {
            best_q = q;
            best = i;
        }
    }
    Ok(agent.clip_action(&sample.particles[best]))
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct TrajectoryRow {
    pub episode: usize,
    pub t: usize,
    pub x: f64,
    pub y: f64,
    pub ax: f64,
    pub ay: f64,
    pub reward: f64,
    pub done: bool,
    pub hit_obstacle: bool,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct EvalReport {
    pub episodes: usize,
    pub returns: Vec<f64>,
    /// Reached-goal counts indexed like the config's goal list, with a final
    /// entry counting episodes that reached no goal.
    pub goal_counts: Vec<usize>,
    pub mean_return: f64,
    pub reached_after_hit: usize,
    pub hit_and_stuck: usize,
    pub never_hit: usize,
    #[serde(skip)]
    pub rows: Vec<TrajectoryRow>,
}

/// Runs greedy evaluation episodes, recording trajectories, the reached-goal
/// distribution, and the obstacle statistics.
pub fn evaluate(
    agent: &S2acAgent,
    env_cfg: &crate::env::EnvConfig,
    episodes: usize,
    rng: &mut RngStream,
) -> Result<EvalReport> {
    let mut returns = Vec::with_capacity(episodes);
    let mut goal_counts = vec![0usize; env_cfg.goals.len() + 1];
    let mut rows = Vec::new();
    let mut reached_after_hit = 0;
    let mut hit_and_stuck = 0;
    let mut never_hit = 0;

    for episode in 0..episodes {
        let mut state = crate::env::reset(env_cfg, rng);
        let mut total = 0.0;
        let mut hit = false;
        let mut reached: Option<usize> = None;
        for t in 0..env_cfg.horizon {
            let a = greedy_action(agent, &state.position, rng)?;
            let out = crate::env::step(&state, [a[0], a[1]], env_cfg)?;
            total += out.reward;
            hit |= out.hit_obstacle;
            rows.push(TrajectoryRow {
                episode,
                t,
                x: out.state.position[0],
                y: out.state.position[1],
                ax: a[0],
                ay: a[1],
                reward: out.reward,
                done: out.done,
                hit_obstacle: out.hit_obstacle,
            });
            state = out.state;
            if let Some(g) = out.reached_goal {
                reached = Some(g);
            }
            if out.done {
                break;
            }
        }
        returns.push(total);
        match reached {
            Some(g) => goal_counts[g] += 1,
            None => *goal_counts.last_mut().unwrap() += 1,
        }
        match (hit, reached.is_some()) {
            (true, true) => reached_after_hit += 1,
            (true, false) => hit_and_stuck += 1,
            (false, _) => never_hit += 1,
        }
    }
    let mean_return = returns.iter().sum::<f64>() / episodes.max(1) as f64;
    Ok(EvalReport {
        episodes,
        returns,
        goal_counts,
        mean_return,
        reached_after_hit,
        hit_and_stuck,
        never_hit,
        rows,
    })
}

/// Policy entropy H(pi(.|s)) on a lattice over the arena (heatmap support).
pub fn entropy_heatmap(
    agent: &S2acAgent,
    resolution: usize,
    rng: &mut RngStream,
) -> Result<Vec<(f64, f64, f64)>> {
    let half = crate::env::ARENA_HALF_WIDTH;
    let mut out = Vec::with_capacity(resolution * resolution);
    for iy in 0..resolution {
        for ix in 0..resolution {
            let x = -half + 2.0 * half * (ix as f64 + 0.5) / resolution as f64;
            let y = -half + 2.0 * half * (iy as f64 + 0.5) / resolution as f64;
            let sample = sample_policy(agent, &[x, y], rng)?;
            out.push((x, y, sample.entropy.value));
        }
    }
    Ok(out)
}
