//! Python bindings: target densities, particle-sampler entropy estimation,
//! the multigoal environment, and the actor-critic agent.
//!
//! Build with `cargo build --release -p s2ac-py`; the resulting
//! `libs2ac_py.so` imports as the module `s2ac_py` once renamed (see
//! python/smoke_test.py).

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use s2ac_core::agent::{
    greedy_action, sample_policy, train, AgentConfig, S2acAgent, TrainConfig,
};
use s2ac_core::config::{EntropyCell, InitSpec, SamplerKind, TargetSpec};
use s2ac_core::env::{EnvConfig, EnvState};
use s2ac_core::experiments::run_entropy_cell;
use s2ac_core::nn::Activation;
use s2ac_core::rng::RngStream;
use s2ac_core::samplers::{Bandwidth, SamplerConfig};

fn err<E: std::fmt::Display>(e: E) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

/// An analytic target distribution (Gaussian or ring mixture).
#[pyclass(from_py_object)]
#[derive(Clone)]
struct Target {
    spec: TargetSpec,
}

#[pymethods]
impl Target {
    /// Full-covariance Gaussian.
    #[staticmethod]
    fn gaussian(mean: Vec<f64>, covariance: Vec<Vec<f64>>) -> PyResult<Self> {
        let spec = TargetSpec::Gaussian { mean, covariance };
        spec.build().map_err(err)?;
        Ok(Target { spec })
    }

    /// 1-D Gaussian from mean and standard deviation.
    #[staticmethod]
    fn gaussian1d(mean: f64, std: f64) -> PyResult<Self> {
        let spec = TargetSpec::Gaussian1d { mean, std };
        spec.build().map_err(err)?;
        Ok(Target { spec })
    }

    /// Equal-weight mixture with means on a circle (2-D).
    #[staticmethod]
    fn gmm_ring(components: usize, radius: f64, component_variance: f64) -> PyResult<Self> {
        let spec = TargetSpec::GmmRing { components, radius, component_variance };
        spec.build().map_err(err)?;
        Ok(Target { spec })
    }

    fn dim(&self) -> usize {
        self.spec.dim()
    }

    fn log_density(&self, a: Vec<f64>) -> PyResult<f64> {
        let built = self.spec.build().map_err(err)?;
        if a.len() != self.spec.dim() {
            return Err(PyValueError::new_err("dimension mismatch"));
        }
        Ok(built.density().log_density(&a))
    }

    fn grad_log_density(&self, a: Vec<f64>) -> PyResult<Vec<f64>> {
        let built = self.spec.build().map_err(err)?;
        if a.len() != self.spec.dim() {
            return Err(PyValueError::new_err("dimension mismatch"));
        }
        Ok(built.density().grad_log_density(&a))
    }

    /// Differential entropy in nats (None for mixtures).
    fn entropy(&self) -> PyResult<Option<f64>> {
        Ok(self.spec.build().map_err(err)?.ground_truth_entropy())
    }
}

/// Runs one sampler on a target from a Gaussian initial distribution and
/// returns the tracked entropy report as a dict.
#[pyfunction]
#[pyo3(signature = (target, sampler="svgd", epsilon=0.5, steps=200, particles=200,
                    sigma=None, init_mean=None, init_variance=6.0, seed=1, repeats=1))]
#[allow(clippy::too_many_arguments)]
fn estimate_entropy(
    py: Python<'_>,
    target: Target,
    sampler: &str,
    epsilon: f64,
    steps: usize,
    particles: usize,
    sigma: Option<f64>,
    init_mean: Option<Vec<f64>>,
    init_variance: f64,
    seed: u64,
    repeats: usize,
) -> PyResult<Py<PyDict>> {
    let kind = match sampler {
        "svgd" => SamplerKind::Svgd,
        "sgld" => SamplerKind::Sgld,
        "dld" => SamplerKind::Dld,
        "hmc" => SamplerKind::Hmc,
        other => {
            return Err(PyValueError::new_err(format!(
                "sampler must be one of svgd/sgld/dld/hmc, got {other}"
            )))
        }
    };
    let cell = EntropyCell {
        name: format!("{sampler}"),
        sampler: kind,
        epsilon,
        steps,
        particles,
        bandwidth: sigma.map(Bandwidth::Fixed).unwrap_or(Bandwidth::Adaptive),
        hmc_mass: 1.0,
        repeats,
        target: target.spec.clone(),
        init: InitSpec {
            mean: init_mean.unwrap_or_else(|| vec![0.0; target.spec.dim()]),
            variance: init_variance,
        },
    };
    cell.validate().map_err(err)?;
    let (report, final_particles) = run_entropy_cell(&cell, seed).map_err(err)?;

    let out = PyDict::new(py);
    out.set_item("sampler", report.sampler)?;
    out.set_item("method", report.method)?;
    out.set_item("entropy", report.entropy)?;
    out.set_item("entropy_note", report.entropy_note)?;
    out.set_item("ground_truth", report.ground_truth)?;
    out.set_item("abs_error", report.abs_error)?;
    out.set_item("margin", report.margin)?;
    out.set_item("particles", final_particles)?;
    Ok(out.into())
}

/// The 2-D point-mass multigoal environment.
#[pyclass]
struct MultigoalEnv {
    cfg: EnvConfig,
    state: EnvState,
    rng: RngStream,
}

#[pymethods]
impl MultigoalEnv {
    #[new]
    #[pyo3(signature = (seed=0, obstacle=false))]
    fn new(seed: u64, obstacle: bool) -> Self {
        let mut cfg = EnvConfig::default();
        if obstacle {
            cfg.obstacle = Some(EnvConfig::standard_obstacle());
        }
        let mut rng = RngStream::new(seed);
        let state = s2ac_core::env::reset(&cfg, &mut rng);
        MultigoalEnv { cfg, state, rng }
    }

    fn reset(&mut self) -> (f64, f64) {
        self.state = s2ac_core::env::reset(&self.cfg, &mut self.rng);
        (self.state.position[0], self.state.position[1])
    }

    /// Returns ((x, y), reward, done, hit_obstacle).
    fn step(&mut self, action: Vec<f64>) -> PyResult<((f64, f64), f64, bool, bool)> {
        if action.len() != 2 {
            return Err(PyValueError::new_err("action must have 2 components"));
        }
        let out = s2ac_core::env::step(&self.state, [action[0], action[1]], &self.cfg)
            .map_err(err)?;
        self.state = out.state;
        Ok((
            (out.state.position[0], out.state.position[1]),
            out.reward,
            out.done,
            out.hit_obstacle,
        ))
    }

    fn goals(&self) -> Vec<(f64, f64)> {
        self.cfg.goals.iter().map(|g| (g[0], g[1])).collect()
    }

    fn horizon(&self) -> usize {
        self.cfg.horizon
    }
}

/// The Stein soft actor-critic agent on the multigoal environment.
#[pyclass]
struct Agent {
    inner: S2acAgent,
    rng: RngStream,
}

#[pymethods]
impl Agent {
    #[new]
    #[pyo3(signature = (alpha=1.0, hidden=32, svgd_steps=10, particles=10, epsilon=0.01,
                        gamma=0.8, lr=3e-4, seed=0))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        alpha: f64,
        hidden: usize,
        svgd_steps: usize,
        particles: usize,
        epsilon: f64,
        gamma: f64,
        lr: f64,
        seed: u64,
    ) -> PyResult<Self> {
        if alpha <= 0.0 || !(0.0..1.0).contains(&gamma) {
            return Err(PyValueError::new_err("need alpha > 0 and gamma in [0, 1)"));
        }
        let cfg = AgentConfig {
            state_dim: 2,
            action_dim: 2,
            hidden,
            activation: Activation::Elu,
            alpha,
            gamma,
            lr,
            tau: 0.005,
            sampler: SamplerConfig {
                epsilon,
                steps: svgd_steps,
                particles,
                bandwidth: Bandwidth::Adaptive,
                hmc_mass: 1.0,
                range_t: Some(3.0),
            },
            initial_std: 0.3_f64.sqrt(),
            buffer_capacity: 1_000_000,
            amortized: false,
            bound_penalty: 20.0,
            mask_terminal: false,
            state_scale: 1.0 / 7.0,
        };
        let mut rng = RngStream::new(seed);
        let inner = S2acAgent::new(cfg, &mut rng);
        Ok(Agent { inner, rng })
    }

    /// Trains on the multigoal environment; returns per-gradient-step
    /// metric dicts.
    #[pyo3(signature = (total_env_steps=5000, train_every=100, batch_size=64, warmup_steps=500))]
    fn train_multigoal(
        &mut self,
        py: Python<'_>,
        total_env_steps: usize,
        train_every: usize,
        batch_size: usize,
        warmup_steps: usize,
    ) -> PyResult<Vec<Py<PyDict>>> {
        let env_cfg = EnvConfig::default();
        let schedule = TrainConfig {
            total_env_steps,
            train_every,
            grad_steps_per_phase: 1,
            batch_size,
            warmup_steps,
        };
        let diag = std::env::temp_dir().join("s2ac_py_diag");
        std::fs::create_dir_all(&diag).map_err(err)?;
        let metrics =
            train(&mut self.inner, &env_cfg, &schedule, &mut self.rng, &diag).map_err(err)?;
        metrics
            .iter()
            .map(|m| {
                let d = PyDict::new(py);
                d.set_item("step", m.step)?;
                d.set_item("env_step", m.env_step)?;
                d.set_item("critic_loss", m.critic_loss)?;
                d.set_item("actor_loss", m.actor_loss)?;
                d.set_item("entropy_mean", m.entropy_mean)?;
                d.set_item("episode_return", m.episode_return)?;
                Ok(d.into())
            })
            .collect()
    }

    /// Greedy action (highest-Q particle), clipped to the action bounds.
    fn act(&mut self, state: Vec<f64>) -> PyResult<Vec<f64>> {
        greedy_action(&self.inner, &state, &mut self.rng).map_err(err)
    }

    /// Draws the particle set at a state; returns (particles, entropy).
    fn particles(&mut self, state: Vec<f64>) -> PyResult<(Vec<Vec<f64>>, f64)> {
        let sample = sample_policy(&self.inner, &state, &mut self.rng).map_err(err)?;
        Ok((sample.particles, sample.entropy.value))
    }

    /// Tracked policy entropy H(pi(.|state)) in nats.
    fn entropy_at(&mut self, state: Vec<f64>) -> PyResult<f64> {
        let sample = sample_policy(&self.inner, &state, &mut self.rng).map_err(err)?;
        Ok(sample.entropy.value)
    }
}

/// Deterministic counter-based RNG exposed for reproducibility checks.
#[pyclass]
struct Rng {
    inner: RngStream,
}

#[pymethods]
impl Rng {
    #[new]
    fn new(seed: u64) -> Self {
        Rng { inner: RngStream::new(seed) }
    }

    fn uniform(&mut self) -> f64 {
        self.inner.uniform()
    }

    fn normal(&mut self) -> f64 {
        self.inner.normal()
    }
}

#[pymodule]
fn s2ac_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<Target>()?;
    m.add_class::<MultigoalEnv>()?;
    m.add_class::<Agent>()?;
    m.add_class::<Rng>()?;
    m.add_function(wrap_pyfunction!(estimate_entropy, m)?)?;
    Ok(())
}
