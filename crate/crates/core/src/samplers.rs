//! Particle dynamics: SVGD, SGLD, DLD and HMC leapfrog, as pure step
//! functions over a [`ParticleSet`]. Each deterministic sampler also has a
//! `run_*` driver that records the trajectory snapshots the entropy module
//! needs.

use crate::error::{Error, Result};
use crate::fdiff::{fd_step, finite_diff_jacobian_trace};
use crate::kernel::adaptive_bandwidth;
use crate::linalg::{all_finite, dist_sq};
use crate::rng::RngStream;
use crate::targets::{GaussianTarget, TargetDensity};

/// m particles in R^d with per-particle initial log-density and the running
/// log-determinant correction of the density tracker.
#[derive(Debug, Clone)]
pub struct ParticleSet {
    positions: Vec<Vec<f64>>,
    log_q0: Vec<f64>,
    logdet_correction: Vec<f64>,
    step_index: usize,
}

impl ParticleSet {
    pub fn new(positions: Vec<Vec<f64>>, log_q0: Vec<f64>) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::InsufficientParticles { needed: 1, got: 0 });
        }
        if positions.len() != log_q0.len() {
            return Err(Error::DimensionMismatch {
                expected: positions.len(),
                got: log_q0.len(),
            });
        }
        let d = positions[0].len();
        for p in &positions {
            if p.len() != d {
                return Err(Error::DimensionMismatch { expected: d, got: p.len() });
            }
            if !all_finite(p) {
                return Err(Error::Divergence { step: 0 });
            }
        }
        if !all_finite(&log_q0) {
            return Err(Error::Divergence { step: 0 });
        }
        let m = positions.len();
        Ok(ParticleSet {
            positions,
            log_q0,
            logdet_correction: vec![0.0; m],
            step_index: 0,
        })
    }

    /// Draws m particles from a Gaussian initial distribution, recording the
    /// exact per-particle log q0.
    pub fn from_gaussian(q0: &GaussianTarget, m: usize, rng: &mut RngStream) -> Result<Self> {
        let positions: Vec<Vec<f64>> = (0..m).map(|_| q0.sample(rng)).collect();
        let log_q0 = positions.iter().map(|p| q0.log_density(p)).collect();
        ParticleSet::new(positions, log_q0)
    }

    pub fn m(&self) -> usize {
        self.positions.len()
    }

    pub fn dim(&self) -> usize {
        self.positions[0].len()
    }

    pub fn positions(&self) -> &[Vec<f64>] {
        &self.positions
    }

    pub fn log_q0(&self) -> &[f64] {
        &self.log_q0
    }

    pub fn logdet_correction(&self) -> &[f64] {
        &self.logdet_correction
    }

    pub fn step_index(&self) -> usize {
        self.step_index
    }

    /// Current per-particle log-density under the tracked dynamics.
    pub fn log_q(&self) -> Vec<f64> {
        self.log_q0
            .iter()
            .zip(&self.logdet_correction)
            .map(|(q0, c)| q0 + c)
            .collect()
    }

    /// Installs tracked per-particle log q values (correction = logq - logq0).
    pub fn set_log_q(&mut self, per_particle_logq: &[f64]) {
        assert_eq!(per_particle_logq.len(), self.m());
        for (c, (lq, q0)) in self
            .logdet_correction
            .iter_mut()
            .zip(per_particle_logq.iter().zip(&self.log_q0))
        {
            *c = lq - q0;
        }
    }

    pub fn empirical_mean(&self) -> Vec<f64> {
        let d = self.dim();
        let mut mean = vec![0.0; d];
        for p in &self.positions {
            for (mk, pk) in mean.iter_mut().zip(p) {
                *mk += pk;
            }
        }
        for mk in &mut mean {
            *mk /= self.m() as f64;
        }
        mean
    }

    pub fn empirical_covariance(&self) -> Vec<Vec<f64>> {
        let d = self.dim();
        let mean = self.empirical_mean();
        let mut cov = vec![vec![0.0; d]; d];
        for p in &self.positions {
            for i in 0..d {
                for j in 0..d {
                    cov[i][j] += (p[i] - mean[i]) * (p[j] - mean[j]);
                }
            }
        }
        let denom = (self.m().max(2) - 1) as f64;
        for row in &mut cov {
            for v in row {
                *v /= denom;
            }
        }
        cov
    }

    fn advanced(&self, positions: Vec<Vec<f64>>) -> ParticleSet {
        ParticleSet {
            positions,
            log_q0: self.log_q0.clone(),
            logdet_correction: self.logdet_correction.clone(),
            step_index: self.step_index + 1,
        }
    }
}

/// Bandwidth policy for the RBF kernel. Serializes as a bare number for
/// `Fixed` and the string `"adaptive"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bandwidth {
    Fixed(f64),
    Adaptive,
}

impl serde::Serialize for Bandwidth {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Bandwidth::Fixed(v) => s.serialize_f64(*v),
            Bandwidth::Adaptive => s.serialize_str("adaptive"),
        }
    }
}

impl<'de> serde::Deserialize<'de> for Bandwidth {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(serde::Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Word(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Bandwidth::Fixed(v)),
            Raw::Word(w) if w == "adaptive" => Ok(Bandwidth::Adaptive),
            Raw::Word(w) => Err(serde::de::Error::custom(format!(
                "bandwidth must be a number or \"adaptive\", got \"{w}\""
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    /// Step size epsilon.
    pub epsilon: f64,
    /// Number of steps L.
    pub steps: usize,
    /// Particle count m.
    pub particles: usize,
    pub bandwidth: Bandwidth,
    /// HMC mass; the momentum is drawn from N(0, mass I) and positions move
    /// by epsilon * p / mass, so mass -> infinity freezes the positions.
    #[serde(default = "default_mass")]
    pub hmc_mass: f64,
    /// Particle range constraint in standard deviations (actor side).
    #[serde(default)]
    pub range_t: Option<f64>,
}

fn default_mass() -> f64 {
    1.0
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            epsilon: 0.1,
            steps: 100,
            particles: 50,
            bandwidth: Bandwidth::Adaptive,
            hmc_mass: 1.0,
            range_t: None,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::Config(format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        if self.particles == 0 {
            return Err(Error::InsufficientParticles { needed: 1, got: 0 });
        }
        if let Bandwidth::Fixed(s) = self.bandwidth {
            if !(s > 0.0) {
                return Err(Error::InvalidBandwidth(s));
            }
        }
        if !(self.hmc_mass > 0.0) {
            return Err(Error::Config(format!("hmc_mass must be > 0, got {}", self.hmc_mass)));
        }
        Ok(())
    }

    pub fn resolve_bandwidth(&self, positions: &[Vec<f64>]) -> Result<f64> {
        match self.bandwidth {
            Bandwidth::Fixed(s) if s > 0.0 => Ok(s),
            Bandwidth::Fixed(s) => Err(Error::InvalidBandwidth(s)),
            Bandwidth::Adaptive => adaptive_bandwidth(positions),
        }
    }
}

/// SVGD drift at a free point `x` against a frozen ensemble:
/// mean_j [ k(x, a_j) grads[j] + alpha ((x - a_j)/sigma^2) k(x, a_j) ].
///
/// `grads` are the target log-density gradients at the frozen particle
/// positions. The same function backs the dynamics (evaluated at x = a_i),
/// the exact-Jacobian oracle, and the invertibility margin.
pub fn svgd_drift_at(
    x: &[f64],
    positions: &[Vec<f64>],
    grads: &[Vec<f64>],
    sigma: f64,
    alpha: f64,
) -> Vec<f64> {
    let m = positions.len() as f64;
    let d = x.len();
    let s2 = sigma * sigma;
    let mut drift = vec![0.0; d];
    for (a_j, g_j) in positions.iter().zip(grads) {
        let k = (-dist_sq(x, a_j) / (2.0 * s2)).exp();
        for t in 0..d {
            drift[t] += k * g_j[t] + alpha * ((x[t] - a_j[t]) / s2) * k;
        }
    }
    for v in &mut drift {
        *v /= m;
    }
    drift
}

/// One SVGD update a_i <- a_i + epsilon * drift_i. Returns the new particle
/// set and the per-particle drift for entropy tracking. `alpha` scales the
/// repulsion term (1 for analytic targets).
pub fn svgd_step(
    ps: &ParticleSet,
    target: &dyn TargetDensity,
    cfg: &SamplerConfig,
    alpha: f64,
) -> Result<(ParticleSet, Vec<Vec<f64>>)> {
    if cfg.particles != ps.m() {
        return Err(Error::DimensionMismatch { expected: cfg.particles, got: ps.m() });
    }
    let sigma = cfg.resolve_bandwidth(ps.positions())?;
    let grads: Vec<Vec<f64>> = ps.positions().iter().map(|p| target.grad_log_density(p)).collect();
    for g in &grads {
        if !all_finite(g) {
            return Err(Error::Divergence { step: ps.step_index() });
        }
    }
    let drifts: Vec<Vec<f64>> = ps
        .positions()
        .iter()
        .map(|x| svgd_drift_at(x, ps.positions(), &grads, sigma, alpha))
        .collect();
    let positions = ps
        .positions()
        .iter()
        .zip(&drifts)
        .map(|(p, dr)| p.iter().zip(dr).map(|(x, h)| x + cfg.epsilon * h).collect())
        .collect();
    Ok((ps.advanced(positions), drifts))
}

/// SGLD update a <- a + epsilon grad log p(a) + sqrt(2 epsilon) xi.
pub fn sgld_step(
    ps: &ParticleSet,
    target: &dyn TargetDensity,
    cfg: &SamplerConfig,
    rng: &mut RngStream,
) -> Result<ParticleSet> {
    let noise_scale = (2.0 * cfg.epsilon).sqrt();
    let positions = ps
        .positions()
        .iter()
        .map(|p| {
            let g = target.grad_log_density(p);
            p.iter()
                .zip(&g)
                .map(|(x, gk)| x + cfg.epsilon * gk + noise_scale * rng.normal())
                .collect()
        })
        .collect();
    Ok(ps.advanced(positions))
}

/// Deterministic Langevin update (SGLD without noise). Returns the drift
/// grad log p per particle for entropy tracking.
pub fn dld_step(
    ps: &ParticleSet,
    target: &dyn TargetDensity,
    cfg: &SamplerConfig,
) -> Result<(ParticleSet, Vec<Vec<f64>>)> {
    let drifts: Vec<Vec<f64>> = ps.positions().iter().map(|p| target.grad_log_density(p)).collect();
    for (i, g) in drifts.iter().enumerate() {
        if !all_finite(g) {
            let _ = i;
            return Err(Error::Divergence { step: ps.step_index() });
        }
    }
    let positions = ps
        .positions()
        .iter()
        .zip(&drifts)
        .map(|(p, g)| p.iter().zip(g).map(|(x, gk)| x + cfg.epsilon * gk).collect())
        .collect();
    Ok((ps.advanced(positions), drifts))
}

/// Recorded SVGD run: pre-step snapshots (length L+1, the last entry being
/// the final state), the target gradients the dynamics used at each
/// snapshot, the bandwidth each step resolved to, and the step settings.
/// The entropy estimators replay this record.
#[derive(Debug, Clone)]
pub struct SvgdTrajectory {
    pub snapshots: Vec<Vec<Vec<f64>>>,
    pub grad_snapshots: Vec<Vec<Vec<f64>>>,
    pub sigmas: Vec<f64>,
    pub epsilon: f64,
    pub alpha: f64,
    pub log_q0: Vec<f64>,
}

impl SvgdTrajectory {
    pub fn steps(&self) -> usize {
        self.sigmas.len()
    }
}

/// Runs L SVGD steps, recording the trajectory.
pub fn run_svgd(
    ps: &ParticleSet,
    target: &dyn TargetDensity,
    cfg: &SamplerConfig,
    alpha: f64,
) -> Result<(ParticleSet, SvgdTrajectory)> {
    cfg.validate()?;
    let mut current = ps.clone();
    let mut traj = SvgdTrajectory {
        snapshots: Vec::with_capacity(cfg.steps + 1),
        grad_snapshots: Vec::with_capacity(cfg.steps),
        sigmas: Vec::with_capacity(cfg.steps),
        epsilon: cfg.epsilon,
        alpha,
        log_q0: ps.log_q0().to_vec(),
    };
    for step in 0..cfg.steps {
        let sigma = cfg.resolve_bandwidth(current.positions())?;
        let grads: Vec<Vec<f64>> =
            current.positions().iter().map(|p| target.grad_log_density(p)).collect();
        for g in &grads {
            if !all_finite(g) {
                return Err(Error::Divergence { step });
            }
        }
        let drifts: Vec<Vec<f64>> = current
            .positions()
            .iter()
            .map(|x| svgd_drift_at(x, current.positions(), &grads, sigma, alpha))
            .collect();
        let positions: Vec<Vec<f64>> = current
            .positions()
            .iter()
            .zip(&drifts)
            .map(|(p, dr)| p.iter().zip(dr).map(|(x, h)| x + cfg.epsilon * h).collect())
            .collect();
        traj.snapshots.push(current.positions().to_vec());
        traj.grad_snapshots.push(grads);
        traj.sigmas.push(sigma);
        current = current.advanced(positions);
    }
    traj.snapshots.push(current.positions().to_vec());
    Ok((current, traj))
}

/// Recorded DLD run.
#[derive(Debug, Clone)]
pub struct DldTrajectory {
    pub snapshots: Vec<Vec<Vec<f64>>>,
    pub epsilon: f64,
    pub log_q0: Vec<f64>,
}

impl DldTrajectory {
    pub fn steps(&self) -> usize {
        self.snapshots.len().saturating_sub(1)
    }
}

pub fn run_dld(
    ps: &ParticleSet,
    target: &dyn TargetDensity,
    cfg: &SamplerConfig,
) -> Result<(ParticleSet, DldTrajectory)> {
    cfg.validate()?;
    let mut current = ps.clone();
    let mut snapshots = Vec::with_capacity(cfg.steps + 1);
    for _ in 0..cfg.steps {
        snapshots.push(current.positions().to_vec());
        let (next, _) = dld_step(&current, target, cfg)?;
        current = next;
    }
    snapshots.push(current.positions().to_vec());
    let traj = DldTrajectory { snapshots, epsilon: cfg.epsilon, log_q0: ps.log_q0().to_vec() };
    Ok((current, traj))
}

/// Recorded HMC chain: pre-step positions and momenta per step, plus the
/// per-step per-particle Hessian-trace estimates used by the closed form.
#[derive(Debug, Clone)]
pub struct HmcTrajectory {
    pub snapshots: Vec<Vec<Vec<f64>>>,
    pub momenta: Vec<Vec<Vec<f64>>>,
    pub hessian_traces: Vec<Vec<f64>>,
    pub epsilon: f64,
    pub mass: f64,
    pub log_q0: Vec<f64>,
}

impl HmcTrajectory {
    pub fn steps(&self) -> usize {
        self.momenta.len()
    }
}

/// Runs a chain of L leapfrog steps with one momentum draw at the start
/// (p ~ N(0, mass I)). Returns the final positions and the trajectory with
/// finite-difference Hessian traces Tr(grad^2 log p(a^l)) / mass per step.
pub fn hmc_chain(
    ps: &ParticleSet,
    target: &dyn TargetDensity,
    cfg: &SamplerConfig,
    rng: &mut RngStream,
) -> Result<(ParticleSet, HmcTrajectory)> {
    cfg.validate()?;
    let m = ps.m();
    let d = ps.dim();
    let eps = cfg.epsilon;
    let mass = cfg.hmc_mass;
    let mom_std = mass.sqrt();
    let mut momenta: Vec<Vec<f64>> = (0..m)
        .map(|_| (0..d).map(|_| mom_std * rng.normal()).collect())
        .collect();
    let mut positions = ps.positions().to_vec();

    let mut traj = HmcTrajectory {
        snapshots: Vec::with_capacity(cfg.steps + 1),
        momenta: Vec::with_capacity(cfg.steps),
        hessian_traces: Vec::with_capacity(cfg.steps),
        epsilon: eps,
        mass,
        log_q0: ps.log_q0().to_vec(),
    };

    for step in 0..cfg.steps {
        traj.snapshots.push(positions.clone());
        traj.momenta.push(momenta.clone());

        let mut traces = Vec::with_capacity(m);
        for pos in &positions {
            let h = fd_step(pos);
            let tr = finite_diff_jacobian_trace(|x| target.grad_log_density(x), pos, h)
                .map_err(|_| Error::Divergence { step })?;
            traces.push(tr / mass);
        }
        traj.hessian_traces.push(traces);

        for i in 0..m {
            let g = target.grad_log_density(&positions[i]);
            if !all_finite(&g) {
                return Err(Error::Divergence { step });
            }
            // half-step momentum, full-step position, half-step momentum
            for t in 0..d {
                momenta[i][t] += 0.5 * eps * g[t];
            }
            for t in 0..d {
                positions[i][t] += eps * momenta[i][t] / mass;
            }
            let g2 = target.grad_log_density(&positions[i]);
            if !all_finite(&g2) {
                return Err(Error::Divergence { step });
            }
            for t in 0..d {
                momenta[i][t] += 0.5 * eps * g2[t];
            }
        }
    }
    traj.snapshots.push(positions.clone());

    let mut out = ps.clone();
    out.positions = positions;
    out.step_index += cfg.steps;
    Ok((out, traj))
}

/// Picks the first `m` pool indices whose positions lie within
/// [mean - t std, mean + t std] componentwise. If fewer than m qualify, the
/// qualifying particle nearest the mean fills the remainder; if none qualify
/// the call fails and the caller falls back to the mean.
pub fn select_in_range(
    pool: &[Vec<f64>],
    m: usize,
    mean: &[f64],
    std: &[f64],
    t: f64,
) -> Result<Vec<usize>> {
    let in_range = |p: &[f64]| {
        p.iter()
            .zip(mean.iter().zip(std))
            .all(|(x, (mu, s))| (mu - t * s) <= *x && *x <= (mu + t * s))
    };
    let qualifying: Vec<usize> = pool
        .iter()
        .enumerate()
        .filter(|(_, p)| in_range(p))
        .map(|(i, _)| i)
        .collect();
    if qualifying.is_empty() {
        return Err(Error::AllOutOfRange);
    }
    let mut selected: Vec<usize> = qualifying.iter().take(m).copied().collect();
    if selected.len() < m {
        let nearest = *qualifying
            .iter()
            .min_by(|&&a, &&b| {
                dist_sq(&pool[a], mean)
                    .partial_cmp(&dist_sq(&pool[b], mean))
                    .unwrap()
            })
            .unwrap();
        while selected.len() < m {
            selected.push(nearest);
        }
    }
    Ok(selected)
}

/// [`select_in_range`] lifted to particle sets: keeps positions and their
/// log q0 entries, never truncating coordinates.
pub fn clamp_to_range(
    target_m: usize,
    mean: &[f64],
    std: &[f64],
    t: f64,
    oversample_pool: &ParticleSet,
) -> Result<ParticleSet> {
    if oversample_pool.m() < target_m {
        return Err(Error::InsufficientParticles {
            needed: target_m,
            got: oversample_pool.m(),
        });
    }
    let idx = select_in_range(oversample_pool.positions(), target_m, mean, std, t)?;
    let positions = idx.iter().map(|&i| oversample_pool.positions()[i].clone()).collect();
    let log_q0 = idx.iter().map(|&i| oversample_pool.log_q0()[i]).collect();
    ParticleSet::new(positions, log_q0)
}
