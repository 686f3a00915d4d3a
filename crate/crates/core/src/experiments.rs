//! Batch experiment runners behind the CLI: entropy evaluation over sampler
//! grids, multigoal training/evaluation, and the obstacle robustness probe.
//! Every run directory carries its config snapshot, seed and version info so
//! reruns from the snapshot are bit-identical.

use std::io::Write as _;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::agent::{self, AgentConfig, S2acAgent};
use crate::config::{
    BuiltTarget, EntropyCell, EvalSection, ExperimentConfig, ExperimentKind, SamplerKind,
};
use crate::entropy::{
    dld_logq_generic_trace, hmc_logq_closed_form, invertibility_margin, svgd_logq_closed_form,
};
use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::samplers::{hmc_chain, run_dld, run_svgd, sgld_step, ParticleSet};
use crate::svg;

/// `git describe` of the working tree, or "unknown" outside a checkout.
pub fn git_describe() -> String {
    std::process::Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".to_string())
}

fn sweep_threads(cells: usize) -> usize {
    let requested = std::env::var("S2AC_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|v| *v > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1));
    requested.max(1).min(cells.max(1))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(text.as_bytes())?;
    Ok(())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("report serializes");
    write_text(path, &(text + "\n"))
}

#[derive(serde::Serialize)]
struct RunInfo {
    kind: String,
    seed: u64,
    git: String,
    version: String,
}

fn write_run_boilerplate(out_dir: &Path, cfg: &ExperimentConfig) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    write_text(&out_dir.join("config.toml"), &cfg.to_toml())?;
    write_json(
        &out_dir.join("run_info.json"),
        &RunInfo {
            kind: cfg.experiment.kind.to_string(),
            seed: cfg.experiment.seed,
            git: git_describe(),
            version: env!("CARGO_PKG_VERSION").to_string(),
        },
    )
}

/// Per-cell entropy report row.
#[derive(Debug, Clone, serde::Serialize)]
pub struct CellReport {
    pub name: String,
    pub sampler: String,
    pub method: String,
    /// Mean estimate over repeats; absent for SGLD.
    pub entropy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub entropy_note: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub entropy_std: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub abs_error: Option<f64>,
    /// Max invertibility margin over sampled steps (SVGD cells).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub margin: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub invertibility_violated: Option<bool>,
}

/// Runs one entropy cell (all repeats). Returns the report and the final
/// particle positions of the first repeat.
pub fn run_entropy_cell(cell: &EntropyCell, seed: u64) -> Result<(CellReport, Vec<Vec<f64>>)> {
    let built = cell.target.build()?;
    let target = built.density();
    let q0 = cell.init.build()?;
    let cfg = cell.sampler_config();
    let ground_truth = built.ground_truth_entropy();

    let mut estimates = Vec::with_capacity(cell.repeats);
    let mut margins: Vec<f64> = Vec::new();
    let mut first_particles: Option<Vec<Vec<f64>>> = None;
    let base = RngStream::new(seed);

    for rep in 0..cell.repeats {
        let mut rng = base.derive(rep as u64);
        let ps = ParticleSet::from_gaussian(&q0, cell.particles, &mut rng)?;
        let (final_ps, entropy, margin) = match cell.sampler {
            SamplerKind::Svgd => {
                let (out, traj) = run_svgd(&ps, target, &cfg, 1.0)?;
                let est = svgd_logq_closed_form(&traj);
                // margin sampled along the trajectory
                let stride = (cfg.steps / 20).max(1);
                let mut worst = 0.0f64;
                for snap in traj.snapshots.iter().step_by(stride).chain(traj.snapshots.last()) {
                    let probe = ParticleSet::new(snap.clone(), vec![0.0; snap.len()])?;
                    worst = worst.max(invertibility_margin(&probe, target, &cfg, 1.0)?);
                }
                (out, Some(est), Some(worst))
            }
            SamplerKind::Dld => {
                let (out, traj) = run_dld(&ps, target, &cfg)?;
                let est = dld_logq_generic_trace(&traj, target)?;
                (out, Some(est), None)
            }
            SamplerKind::Hmc => {
                let (out, traj) = hmc_chain(&ps, target, &cfg, &mut rng)?;
                let est = hmc_logq_closed_form(&traj);
                (out, Some(est), None)
            }
            SamplerKind::Sgld => {
                let mut current = ps;
                for _ in 0..cfg.steps {
                    current = sgld_step(&current, target, &cfg, &mut rng)?;
                }
                (current, None, None)
            }
        };
        if rep == 0 {
            first_particles = Some(final_ps.positions().to_vec());
        }
        if let Some(est) = entropy {
            estimates.push(est.value);
        }
        if let Some(m) = margin {
            margins.push(m);
        }
    }

    let (entropy, entropy_std, entropy_note, method) = if estimates.is_empty() {
        (None, None, Some("n/a (non-invertible)".to_string()), "none".to_string())
    } else {
        let n = estimates.len() as f64;
        let mean = estimates.iter().sum::<f64>() / n;
        let var = estimates.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / n;
        let method = match cell.sampler {
            SamplerKind::Svgd => "closed-form-svgd",
            SamplerKind::Dld => "generic-trace",
            SamplerKind::Hmc => "closed-form-hmc",
            SamplerKind::Sgld => "none",
        };
        (
            Some(mean),
            if estimates.len() > 1 { Some(var.sqrt()) } else { None },
            None,
            method.to_string(),
        )
    };
    let margin = margins.iter().cloned().fold(None, |acc: Option<f64>, m| {
        Some(acc.map_or(m, |a| a.max(m)))
    });
    let abs_error = match (entropy, ground_truth) {
        (Some(e), Some(g)) => Some((e - g).abs()),
        _ => None,
    };

    Ok((
        CellReport {
            name: cell.name.clone(),
            sampler: cell.sampler.to_string(),
            method,
            entropy,
            entropy_note,
            entropy_std,
            ground_truth,
            abs_error,
            margin,
            invertibility_violated: margin.map(|m| m > 1.0),
        },
        first_particles.unwrap_or_default(),
    ))
}

fn write_particles_csv(path: &Path, particles: &[Vec<f64>]) -> Result<()> {
    let d = particles.first().map(|p| p.len()).unwrap_or(0);
    let header: Vec<String> = (0..d).map(|k| format!("x{k}")).collect();
    let mut text = header.join(",") + "\n";
    for p in particles {
        let row: Vec<String> = p.iter().map(|v| format!("{v}")).collect();
        text.push_str(&(row.join(",") + "\n"));
    }
    write_text(path, &text)
}

/// Entropy evaluation over the configured cells, parallel across cells with
/// derived seeds (base seed + cell index). Writes per-cell artifacts, the
/// summary JSON/CSV, and the line/scatter SVGs.
pub fn run_entropy_eval(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Vec<CellReport>> {
    if cfg.experiment.kind != ExperimentKind::EntropyEval {
        return Err(Error::Config("config is not an entropy-eval experiment".into()));
    }
    write_run_boilerplate(out_dir, cfg)?;

    let n = cfg.cell.len();
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<(CellReport, Vec<Vec<f64>>)>>> = Mutex::new(vec![None; n]);
    let errors: Mutex<Vec<Error>> = Mutex::new(Vec::new());
    let workers = sweep_threads(n);

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let idx = next.fetch_add(1, Ordering::SeqCst);
                if idx >= n {
                    break;
                }
                let cell = &cfg.cell[idx];
                match run_entropy_cell(cell, cfg.experiment.seed + idx as u64) {
                    Ok(out) => {
                        results.lock().unwrap()[idx] = Some(out);
                    }
                    Err(e) => {
                        errors.lock().unwrap().push(e);
                        break;
                    }
                }
            });
        }
    });

    if let Some(e) = errors.into_inner().unwrap().into_iter().next() {
        return Err(e);
    }
    let mut reports = Vec::with_capacity(n);
    for (cell, slot) in cfg.cell.iter().zip(results.into_inner().unwrap()) {
        let (report, particles) = slot.expect("all cells completed");
        let cell_dir = out_dir.join("cells").join(&cell.name);
        write_particles_csv(&cell_dir.join("particles.csv"), &particles)?;
        write_text(
            &cell_dir.join("particles.svg"),
            &svg::scatter_plot(&particles, &format!("{} final particles", cell.name)),
        )?;
        reports.push(report);
    }

    write_json(&out_dir.join("summary.json"), &reports)?;

    // entropy table CSV + line plot over cells with a ground-truth reference
    let mut csv = String::from("cell,sampler,entropy,ground_truth,abs_error,margin\n");
    for r in &reports {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.name,
            r.sampler,
            r.entropy.map_or("n/a (non-invertible)".into(), |v| format!("{v}")),
            r.ground_truth.map_or(String::new(), |v| format!("{v}")),
            r.abs_error.map_or(String::new(), |v| format!("{v}")),
            r.margin.map_or(String::new(), |v| format!("{v}")),
        ));
    }
    write_text(&out_dir.join("entropy.csv"), &csv)?;

    let series: Vec<(f64, f64)> = reports
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.entropy.map(|e| (i as f64, e)))
        .collect();
    let reference = reports.iter().find_map(|r| r.ground_truth);
    write_text(
        &out_dir.join("entropy.svg"),
        &svg::line_plot(&[("estimate".to_string(), series)], reference, "entropy by cell"),
    )?;
    Ok(reports)
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct GoalHistogram {
    pub episodes: usize,
    pub counts: Vec<usize>,
    pub fractions: Vec<f64>,
    pub left_fraction: f64,
    pub mean_return: f64,
}

fn goal_histogram(report: &agent::EvalReport, env_cfg: &EnvConfig) -> GoalHistogram {
    let total = report.episodes.max(1) as f64;
    let fractions: Vec<f64> = report.goal_counts.iter().map(|c| *c as f64 / total).collect();
    // goals with negative x are the "left" group
    let left: usize = env_cfg
        .goals
        .iter()
        .enumerate()
        .filter(|(_, g)| g[0] < 0.0)
        .map(|(i, _)| report.goal_counts[i])
        .sum();
    GoalHistogram {
        episodes: report.episodes,
        counts: report.goal_counts.clone(),
        fractions,
        left_fraction: left as f64 / total,
        mean_return: report.mean_return,
    }
}

fn write_trajectories_csv(path: &Path, rows: &[agent::TrajectoryRow]) -> Result<()> {
    let mut text = String::from("episode,t,x,y,ax,ay,reward,done,hit_obstacle\n");
    for r in rows {
        text.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.episode, r.t, r.x, r.y, r.ax, r.ay, r.reward, r.done, r.hit_obstacle
        ));
    }
    write_text(path, &text)
}

fn dump_eval(
    dir: &Path,
    agent_ref: &S2acAgent,
    env_cfg: &EnvConfig,
    episodes: usize,
    rng: &mut RngStream,
) -> Result<agent::EvalReport> {
    let report = agent::evaluate(agent_ref, env_cfg, episodes, rng)?;
    std::fs::create_dir_all(dir)?;
    write_trajectories_csv(&dir.join("trajectories.csv"), &report.rows)?;
    write_json(&dir.join("goal_histogram.json"), &goal_histogram(&report, env_cfg))?;
    Ok(report)
}

fn save_agent(dir: &Path, agent_ref: &S2acAgent, env_cfg: &EnvConfig) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    crate::nn::save_network(&agent_ref.q.net, &dir.join("q_net.bin"))?;
    crate::nn::save_network(&agent_ref.head.net, &dir.join("policy_head.bin"))?;
    if let Some(am) = &agent_ref.amortized {
        crate::nn::save_network(am, &dir.join("amortized.bin"))?;
    }
    write_json(&dir.join("agent_config.json"), &agent_ref.cfg)?;
    write_json(&dir.join("env_config.json"), env_cfg)?;
    Ok(())
}

/// Rebuilds an agent from a run directory (checkpoint + config files).
pub fn load_agent(dir: &Path) -> Result<(S2acAgent, EnvConfig)> {
    let cfg_path = dir.join("agent_config.json");
    if !cfg_path.exists() {
        return Err(Error::MissingCheckpoint(cfg_path));
    }
    let cfg: AgentConfig = serde_json::from_str(&std::fs::read_to_string(&cfg_path)?)
        .map_err(|e| Error::BadCheckpoint { path: cfg_path.clone(), reason: e.to_string() })?;
    let env_path = dir.join("env_config.json");
    let env_cfg: EnvConfig = if env_path.exists() {
        serde_json::from_str(&std::fs::read_to_string(&env_path)?)
            .map_err(|e| Error::BadCheckpoint { path: env_path, reason: e.to_string() })?
    } else {
        EnvConfig::default()
    };

    let mut rng = RngStream::new(0);
    let mut agent_out = S2acAgent::new(cfg, &mut rng);
    let q = crate::nn::load_network(&dir.join("q_net.bin"))?;
    if q.sizes() != agent_out.q.net.sizes() {
        return Err(Error::BadCheckpoint {
            path: dir.join("q_net.bin"),
            reason: "network shape differs from agent config".into(),
        });
    }
    agent_out.q.net = q.clone();
    agent_out.q_target.net = q;
    let head = crate::nn::load_network(&dir.join("policy_head.bin"))?;
    if head.sizes() != agent_out.head.net.sizes() {
        return Err(Error::BadCheckpoint {
            path: dir.join("policy_head.bin"),
            reason: "network shape differs from agent config".into(),
        });
    }
    agent_out.head.net = head;
    let amortized_path = dir.join("amortized.bin");
    if amortized_path.exists() {
        agent_out.amortized = Some(crate::nn::load_network(&amortized_path)?);
    }
    Ok((agent_out, env_cfg))
}

fn write_heatmap(path: &Path, cells: &[(f64, f64, f64)]) -> Result<()> {
    let mut text = String::from("x,y,H\n");
    for (x, y, h) in cells {
        text.push_str(&format!("{x},{y},{h}\n"));
    }
    write_text(path, &text)
}

/// One training run (single temperature) into `dir`. Returns the final
/// evaluation report.
pub fn run_training(
    cfg: &ExperimentConfig,
    agent_cfg: &AgentConfig,
    dir: &Path,
    seed: u64,
) -> Result<agent::EvalReport> {
    let train_section = cfg.train.as_ref().expect("validated");
    let env_cfg = cfg.env.clone().unwrap_or_default();
    std::fs::create_dir_all(dir)?;

    let mut init_rng = RngStream::new(seed);
    let mut agent_inst = S2acAgent::new(agent_cfg.clone(), &mut init_rng);
    let mut train_rng = RngStream::new(seed).derive(1);
    let mut eval_rng = RngStream::new(seed).derive(2);

    let eval_every = train_section.eval_every;
    let eval_episodes = train_section.eval_episodes;
    let dir_owned = dir.to_path_buf();
    let env_for_hook = env_cfg.clone();
    let mut hook_rng = RngStream::new(seed).derive(3);
    let mut hook = |agent_ref: &S2acAgent, env_step: usize| -> Result<()> {
        dump_eval(
            &dir_owned.join(format!("eval_{env_step}")),
            agent_ref,
            &env_for_hook,
            eval_episodes,
            &mut hook_rng,
        )?;
        Ok(())
    };

    let metrics = agent::train_with_hook(
        &mut agent_inst,
        &env_cfg,
        &train_section.schedule,
        &mut train_rng,
        dir,
        eval_every,
        &mut hook,
    )?;

    let mut jsonl = String::new();
    for row in &metrics {
        jsonl.push_str(&serde_json::to_string(row).expect("metric serializes"));
        jsonl.push('\n');
    }
    write_text(&dir.join("metrics.jsonl"), &jsonl)?;

    save_agent(dir, &agent_inst, &env_cfg)?;
    let report = dump_eval(&dir.join("eval_final"), &agent_inst, &env_cfg, eval_episodes, &mut eval_rng)?;

    if train_section.heatmap_resolution > 0 {
        let cells =
            agent::entropy_heatmap(&agent_inst, train_section.heatmap_resolution, &mut eval_rng)?;
        write_heatmap(&dir.join("entropy_heatmap.csv"), &cells)?;
    }
    Ok(report)
}

/// Multigoal training: one run per sweep temperature (or a single run with
/// the configured alpha). Parallel across sweep cells with derived seeds.
pub fn run_train_multigoal(cfg: &ExperimentConfig, out_dir: &Path) -> Result<()> {
    if cfg.experiment.kind != ExperimentKind::TrainMultigoal {
        return Err(Error::Config("config is not a train-multigoal experiment".into()));
    }
    write_run_boilerplate(out_dir, cfg)?;
    let agent_cfg = cfg.agent.as_ref().expect("validated");

    let alphas: Vec<f64> = match &cfg.sweep {
        Some(s) => s.alphas.clone(),
        None => vec![agent_cfg.alpha],
    };
    let n = alphas.len();
    let next = AtomicUsize::new(0);
    let errors: Mutex<Vec<Error>> = Mutex::new(Vec::new());
    let workers = sweep_threads(n);

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let idx = next.fetch_add(1, Ordering::SeqCst);
                if idx >= n {
                    break;
                }
                let alpha = alphas[idx];
                let run_cfg = AgentConfig { alpha, ..agent_cfg.clone() };
                let dir = if n == 1 {
                    out_dir.to_path_buf()
                } else {
                    out_dir.join(format!("alpha_{alpha}"))
                };
                if let Err(e) =
                    run_training(cfg, &run_cfg, &dir, cfg.experiment.seed + idx as u64)
                {
                    errors.lock().unwrap().push(e);
                    break;
                }
            });
        }
    });
    if let Some(e) = errors.into_inner().unwrap().into_iter().next() {
        return Err(e);
    }
    Ok(())
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct RobustnessRow {
    pub name: String,
    pub episodes: usize,
    pub reached_after_hit: f64,
    pub hit_and_stuck: f64,
    pub never_hit: f64,
    pub reached_total: f64,
}

fn eval_checkpoints(
    eval: &EvalSection,
    seed: u64,
    out_dir: &Path,
    force_obstacle: bool,
) -> Result<Vec<RobustnessRow>> {
    let mut rows = Vec::new();
    for (i, ckpt) in eval.checkpoints.iter().enumerate() {
        let (agent_inst, mut env_cfg) = load_agent(Path::new(&ckpt.dir))?;
        if force_obstacle || eval.obstacle {
            env_cfg.obstacle = Some(EnvConfig::standard_obstacle());
        }
        let mut rng = RngStream::new(seed).derive(i as u64);
        let report = dump_eval(
            &out_dir.join(&ckpt.name),
            &agent_inst,
            &env_cfg,
            eval.episodes,
            &mut rng,
        )?;
        let total = report.episodes.max(1) as f64;
        let reached: usize =
            report.goal_counts[..report.goal_counts.len() - 1].iter().sum();
        rows.push(RobustnessRow {
            name: ckpt.name.clone(),
            episodes: report.episodes,
            reached_after_hit: report.reached_after_hit as f64 / total,
            hit_and_stuck: report.hit_and_stuck as f64 / total,
            never_hit: report.never_hit as f64 / total,
            reached_total: reached as f64 / total,
        });
    }
    Ok(rows)
}

/// Evaluates trained checkpoints in the plain environment.
pub fn run_eval_multigoal(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Vec<RobustnessRow>> {
    if cfg.experiment.kind != ExperimentKind::EvalMultigoal {
        return Err(Error::Config("config is not an eval-multigoal experiment".into()));
    }
    write_run_boilerplate(out_dir, cfg)?;
    let eval = cfg.eval.as_ref().expect("validated");
    let rows = eval_checkpoints(eval, cfg.experiment.seed, out_dir, false)?;
    write_json(&out_dir.join("evaluation.json"), &rows)?;
    Ok(rows)
}

/// Evaluates trained checkpoints with the obstacle enabled and reports the
/// reached-after-hit / hit-and-stuck / never-hit fractions per checkpoint.
pub fn run_robustness(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Vec<RobustnessRow>> {
    if cfg.experiment.kind != ExperimentKind::Robustness {
        return Err(Error::Config("config is not a robustness experiment".into()));
    }
    write_run_boilerplate(out_dir, cfg)?;
    let eval = cfg.eval.as_ref().expect("validated");
    let rows = eval_checkpoints(eval, cfg.experiment.seed, out_dir, true)?;
    write_json(&out_dir.join("robustness.json"), &rows)?;
    let mut csv = String::from("name,episodes,reached_after_hit,hit_and_stuck,never_hit,reached_total\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.name, r.episodes, r.reached_after_hit, r.hit_and_stuck, r.never_hit, r.reached_total
        ));
    }
    write_text(&out_dir.join("robustness.csv"), &csv)?;
    Ok(rows)
}

/// Dispatches on the config's experiment kind.
pub fn run(cfg: &ExperimentConfig, out_dir: &Path) -> Result<()> {
    match cfg.experiment.kind {
        ExperimentKind::EntropyEval => run_entropy_eval(cfg, out_dir).map(|_| ()),
        ExperimentKind::TrainMultigoal => run_train_multigoal(cfg, out_dir),
        ExperimentKind::EvalMultigoal => run_eval_multigoal(cfg, out_dir).map(|_| ()),
        ExperimentKind::Robustness => run_robustness(cfg, out_dir).map(|_| ()),
    }
}

#[allow(unused)]
fn built_target_dim(t: &BuiltTarget) -> usize {
    t.density().dim()
}
