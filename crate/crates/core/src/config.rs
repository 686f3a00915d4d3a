//! Experiment configuration: a typed TOML schema with strict unknown-key
//! rejection, plus the shipped presets. Silent hyperparameter typos are the
//! dominant reproduction failure, so unknown keys are errors, not warnings.

use std::path::Path;

use crate::agent::{AgentConfig, TrainConfig};
use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::nn::Activation;
use crate::samplers::{Bandwidth, SamplerConfig};
use crate::targets::{GaussianTarget, GmmTarget};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    EntropyEval,
    TrainMultigoal,
    EvalMultigoal,
    Robustness,
}

impl std::fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ExperimentKind::EntropyEval => "entropy-eval",
            ExperimentKind::TrainMultigoal => "train-multigoal",
            ExperimentKind::EvalMultigoal => "eval-multigoal",
            ExperimentKind::Robustness => "robustness",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentMeta {
    pub kind: ExperimentKind,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<String>,
}

/// Target specification for entropy evaluation cells.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TargetSpec {
    /// Full-covariance Gaussian.
    Gaussian { mean: Vec<f64>, covariance: Vec<Vec<f64>> },
    /// 1-D Gaussian by mean and standard deviation.
    Gaussian1d { mean: f64, std: f64 },
    /// Equal-weight mixture with means on a circle (2-D).
    GmmRing { components: usize, radius: f64, component_variance: f64 },
}

pub enum BuiltTarget {
    Gaussian(GaussianTarget),
    Gmm(GmmTarget),
}

impl BuiltTarget {
    pub fn density(&self) -> &dyn crate::targets::TargetDensity {
        match self {
            BuiltTarget::Gaussian(g) => g,
            BuiltTarget::Gmm(g) => g,
        }
    }

    pub fn ground_truth_entropy(&self) -> Option<f64> {
        match self {
            BuiltTarget::Gaussian(g) => Some(g.entropy()),
            BuiltTarget::Gmm(_) => None,
        }
    }
}

impl TargetSpec {
    pub fn build(&self) -> Result<BuiltTarget> {
        match self {
            TargetSpec::Gaussian { mean, covariance } => {
                let cov = Matrix::from_rows(covariance);
                Ok(BuiltTarget::Gaussian(GaussianTarget::new(mean.clone(), cov)?))
            }
            TargetSpec::Gaussian1d { mean, std } => {
                if *std <= 0.0 {
                    return Err(Error::Config(format!("gaussian-1d std must be > 0, got {std}")));
                }
                Ok(BuiltTarget::Gaussian(GaussianTarget::isotropic(vec![*mean], std * std)?))
            }
            TargetSpec::GmmRing { components, radius, component_variance } => {
                Ok(BuiltTarget::Gmm(GmmTarget::ring(*components, *radius, *component_variance)?))
            }
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            TargetSpec::Gaussian { mean, .. } => mean.len(),
            TargetSpec::Gaussian1d { .. } => 1,
            TargetSpec::GmmRing { .. } => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitSpec {
    pub mean: Vec<f64>,
    pub variance: f64,
}

impl InitSpec {
    pub fn build(&self) -> Result<GaussianTarget> {
        GaussianTarget::isotropic(self.mean.clone(), self.variance)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    Svgd,
    Sgld,
    Dld,
    Hmc,
}

impl std::fmt::Display for SamplerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SamplerKind::Svgd => "svgd",
            SamplerKind::Sgld => "sgld",
            SamplerKind::Dld => "dld",
            SamplerKind::Hmc => "hmc",
        };
        f.write_str(s)
    }
}

fn default_repeats() -> usize {
    1
}

fn default_mass_cfg() -> f64 {
    1.0
}

/// One entropy-evaluation grid cell: a sampler, its settings, a target and
/// an initial distribution. Sweeps are lists of cells.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntropyCell {
    pub name: String,
    pub sampler: SamplerKind,
    pub epsilon: f64,
    pub steps: usize,
    pub particles: usize,
    pub bandwidth: Bandwidth,
    #[serde(default = "default_mass_cfg")]
    pub hmc_mass: f64,
    /// Independent repetitions averaged in the report.
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    pub target: TargetSpec,
    pub init: InitSpec,
}

impl EntropyCell {
    pub fn sampler_config(&self) -> SamplerConfig {
        SamplerConfig {
            epsilon: self.epsilon,
            steps: self.steps,
            particles: self.particles,
            bandwidth: self.bandwidth,
            hmc_mass: self.hmc_mass,
            range_t: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.sampler_config().validate()?;
        if self.repeats == 0 {
            return Err(Error::Config(format!("cell {}: repeats must be >= 1", self.name)));
        }
        if self.init.variance <= 0.0 {
            return Err(Error::Config(format!("cell {}: init variance must be > 0", self.name)));
        }
        if self.init.mean.len() != self.target.dim() {
            return Err(Error::Config(format!(
                "cell {}: init dimension {} != target dimension {}",
                self.name,
                self.init.mean.len(),
                self.target.dim()
            )));
        }
        self.target.build()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(flatten)]
    pub schedule: TrainConfig,
    /// Environment steps between evaluation dumps (0 = final only).
    #[serde(default)]
    pub eval_every: usize,
    #[serde(default = "default_eval_episodes")]
    pub eval_episodes: usize,
    /// Lattice resolution for the entropy heatmap (0 = off).
    #[serde(default)]
    pub heatmap_resolution: usize,
}

fn default_eval_episodes() -> usize {
    20
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    /// One training run per temperature, in subdirectories.
    pub alphas: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointRef {
    pub name: String,
    pub dir: String,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub checkpoints: Vec<CheckpointRef>,
    #[serde(default = "default_eval_episodes")]
    pub episodes: usize,
    /// Evaluate with the obstacle segment enabled.
    #[serde(default)]
    pub obstacle: bool,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentMeta,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub cell: Vec<EntropyCell>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agent: Option<AgentConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub env: Option<EnvConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval: Option<EvalSection>,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        match self.experiment.kind {
            ExperimentKind::EntropyEval => {
                if self.cell.is_empty() {
                    return Err(Error::Config("entropy-eval needs at least one [[cell]]".into()));
                }
                for c in &self.cell {
                    c.validate()?;
                }
            }
            ExperimentKind::TrainMultigoal => {
                let agent = self
                    .agent
                    .as_ref()
                    .ok_or_else(|| Error::Config("train-multigoal needs [agent]".into()))?;
                let train = self
                    .train
                    .as_ref()
                    .ok_or_else(|| Error::Config("train-multigoal needs [train]".into()))?;
                agent.sampler.validate()?;
                if !(agent.alpha > 0.0) {
                    return Err(Error::Config("alpha must be > 0".into()));
                }
                if !(0.0..1.0).contains(&agent.gamma) {
                    return Err(Error::Config("gamma must be in [0, 1)".into()));
                }
                if !(agent.tau > 0.0 && agent.tau <= 1.0) {
                    return Err(Error::Config("tau must be in (0, 1]".into()));
                }
                if train.schedule.batch_size == 0 || train.schedule.train_every == 0 {
                    return Err(Error::Config("batch_size and train_every must be positive".into()));
                }
                if let Some(env) = &self.env {
                    env.validate()?;
                }
                if let Some(sweep) = &self.sweep {
                    if sweep.alphas.is_empty() || sweep.alphas.iter().any(|a| *a <= 0.0) {
                        return Err(Error::Config("sweep alphas must be positive".into()));
                    }
                }
            }
            ExperimentKind::EvalMultigoal | ExperimentKind::Robustness => {
                let eval = self
                    .eval
                    .as_ref()
                    .ok_or_else(|| Error::Config("evaluation needs [eval]".into()))?;
                if eval.checkpoints.is_empty() {
                    return Err(Error::Config("eval needs at least one checkpoint".into()));
                }
                if eval.episodes == 0 {
                    return Err(Error::Config("episodes must be positive".into()));
                }
            }
        }
        Ok(())
    }
}

/// Names accepted by `--preset`.
pub const PRESETS: &[&str] = &["fig4a", "fig4b", "fig4c", "multigoal-alpha-sweep", "smoke"];

/// Builds a shipped preset configuration.
pub fn preset(name: &str) -> Result<ExperimentConfig> {
    let table_target = TargetSpec::Gaussian {
        mean: vec![-0.69, 0.8],
        covariance: vec![vec![1.13, 0.82], vec![0.82, 3.39]],
    };
    let table_init = InitSpec { mean: vec![0.0, 0.0], variance: 6.0 };

    let base_cell = |name: &str, sampler: SamplerKind| EntropyCell {
        name: name.to_string(),
        sampler,
        epsilon: 0.5,
        steps: 200,
        particles: 200,
        bandwidth: Bandwidth::Fixed(5.0),
        hmc_mass: 1.0,
        repeats: 1,
        target: table_target.clone(),
        init: table_init.clone(),
    };

    let cfg = match name {
        "fig4a" => ExperimentConfig {
            experiment: ExperimentMeta { kind: ExperimentKind::EntropyEval, seed: 1, out_dir: None },
            cell: vec![
                base_cell("svgd", SamplerKind::Svgd),
                base_cell("sgld", SamplerKind::Sgld),
                base_cell("dld", SamplerKind::Dld),
                base_cell("hmc", SamplerKind::Hmc),
            ],
            train: None,
            agent: None,
            env: None,
            sweep: None,
            eval: None,
        },
        "fig4b" => {
            let cells = [0.1, 3.0, 5.0, 7.0, 100.0]
                .iter()
                .map(|&s| EntropyCell {
                    bandwidth: Bandwidth::Fixed(s),
                    ..base_cell(&format!("svgd-sigma-{s}"), SamplerKind::Svgd)
                })
                .collect();
            ExperimentConfig {
                experiment: ExperimentMeta {
                    kind: ExperimentKind::EntropyEval,
                    seed: 1,
                    out_dir: None,
                },
                cell: cells,
                train: None,
                agent: None,
                env: None,
                sweep: None,
                eval: None,
            }
        }
        "fig4c" => {
            // mixture sweep at small step/particle budget, averaged over
            // repeats, plus a 1-D scale sweep checked against analytic values
            let mut cells: Vec<EntropyCell> = (1..=4)
                .map(|m_comp| EntropyCell {
                    name: format!("gmm-{m_comp}"),
                    sampler: SamplerKind::Svgd,
                    epsilon: 0.5,
                    steps: 10,
                    particles: 10,
                    bandwidth: Bandwidth::Fixed(5.0),
                    hmc_mass: 1.0,
                    repeats: 50,
                    target: TargetSpec::GmmRing {
                        components: m_comp,
                        radius: 3.0,
                        component_variance: 0.1,
                    },
                    init: table_init.clone(),
                })
                .collect();
            for std in [0.5, 1.0, 2.0, 4.0] {
                cells.push(EntropyCell {
                    name: format!("gauss-scale-{std}"),
                    sampler: SamplerKind::Svgd,
                    epsilon: 0.5,
                    steps: 200,
                    particles: 200,
                    bandwidth: Bandwidth::Fixed(5.0),
                    hmc_mass: 1.0,
                    repeats: 1,
                    target: TargetSpec::Gaussian1d { mean: 0.0, std },
                    init: InitSpec { mean: vec![0.0], variance: 6.0 },
                });
            }
            ExperimentConfig {
                experiment: ExperimentMeta {
                    kind: ExperimentKind::EntropyEval,
                    seed: 1,
                    out_dir: None,
                },
                cell: cells,
                train: None,
                agent: None,
                env: None,
                sweep: None,
                eval: None,
            }
        }
        "multigoal-alpha-sweep" => ExperimentConfig {
            experiment: ExperimentMeta {
                kind: ExperimentKind::TrainMultigoal,
                seed: 7,
                out_dir: None,
            },
            cell: vec![],
            train: Some(TrainSection {
                schedule: TrainConfig {
                    total_env_steps: 100_000,
                    train_every: 50,
                    grad_steps_per_phase: 1,
                    batch_size: 100,
                    warmup_steps: 1_000,
                },
                eval_every: 0,
                eval_episodes: 20,
                heatmap_resolution: 25,
            }),
            agent: Some(multigoal_agent(1.0)),
            env: Some(EnvConfig::default()),
            sweep: Some(SweepSection { alphas: vec![0.2, 1.0, 10.0, 20.0] }),
            eval: None,
        },
        "smoke" => ExperimentConfig {
            experiment: ExperimentMeta {
                kind: ExperimentKind::TrainMultigoal,
                seed: 7,
                out_dir: None,
            },
            cell: vec![],
            train: Some(TrainSection {
                schedule: TrainConfig {
                    total_env_steps: 5_000,
                    train_every: 100,
                    grad_steps_per_phase: 1,
                    batch_size: 64,
                    warmup_steps: 500,
                },
                eval_every: 0,
                eval_episodes: 5,
                heatmap_resolution: 0,
            }),
            agent: Some(AgentConfig { hidden: 32, ..multigoal_agent(1.0) }),
            env: Some(EnvConfig::default()),
            sweep: None,
            eval: None,
        },
        other => {
            return Err(Error::Config(format!(
                "unknown preset \"{other}\"; available: {}",
                PRESETS.join(", ")
            )))
        }
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Agent settings for the multigoal runs.
pub fn multigoal_agent(alpha: f64) -> AgentConfig {
    AgentConfig {
        state_dim: 2,
        action_dim: 2,
        hidden: 64,
        activation: Activation::Elu,
        alpha,
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
        bound_penalty: 20.0,
        mask_terminal: false,
        state_scale: 1.0 / 7.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_parse_and_roundtrip() {
        for name in PRESETS {
            let cfg = preset(name).unwrap();
            let text = cfg.to_toml();
            let back = ExperimentConfig::parse(&text).unwrap();
            assert_eq!(cfg, back, "roundtrip mismatch for preset {name}");
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = r#"
[experiment]
kind = "entropy-eval"
seed = 1
tpyo_key = 3
"#;
        let err = ExperimentConfig::parse(text).unwrap_err();
        let msg = format!("{err}");
        assert!(msg.contains("tpyo_key"), "message: {msg}");
    }

    #[test]
    fn missing_sections_are_errors() {
        let text = r#"
[experiment]
kind = "train-multigoal"
seed = 1
"#;
        assert!(matches!(ExperimentConfig::parse(text), Err(Error::Config(_))));
    }

    #[test]
    fn bandwidth_accepts_number_or_adaptive() {
        #[derive(serde::Deserialize)]
        struct W {
            b: Bandwidth,
        }
        let w: W = toml::from_str("b = 5.0").unwrap();
        assert_eq!(w.b, Bandwidth::Fixed(5.0));
        let w: W = toml::from_str("b = \"adaptive\"").unwrap();
        assert_eq!(w.b, Bandwidth::Adaptive);
        assert!(toml::from_str::<W>("b = \"sometimes\"").is_err());
    }

    #[test]
    fn cell_dimension_mismatch_rejected() {
        let mut cfg = preset("fig4a").unwrap();
        cfg.cell[0].init.mean = vec![0.0];
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn out_of_range_values_rejected() {
        let mut cfg = preset("smoke").unwrap();
        cfg.agent.as_mut().unwrap().gamma = 1.5;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let mut cfg2 = preset("smoke").unwrap();
        cfg2.agent.as_mut().unwrap().alpha = -1.0;
        assert!(cfg2.validate().is_err());
    }
}
