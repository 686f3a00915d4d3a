//! 2-D point-mass multigoal environment: asymmetric goals with equal terminal
//! reward, bounded actions, an optional diagonal obstacle segment, and the
//! Q-landscape smoothness metrics.

use crate::error::{Error, Result};
use crate::fdiff::fd_step;
use crate::rng::RngStream;
use crate::targets::QFunction;

pub const ARENA_HALF_WIDTH: f64 = 7.0;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    pub goals: Vec<[f64; 2]>,
    pub goal_radius: f64,
    pub terminal_reward: f64,
    pub action_cost: f64,
    pub action_scale: f64,
    pub horizon: usize,
    /// Obstacle segment endpoints; motion crossing it stops at the barrier.
    pub obstacle: Option<([f64; 2], [f64; 2])>,
    /// Reset jitter std around the origin (0 disables it).
    pub reset_jitter: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            // two goals on the left, one on the right; same terminal reward
            goals: vec![[4.0, 0.0], [-4.0, 2.0], [-4.0, -2.0]],
            goal_radius: 0.5,
            terminal_reward: 10.0,
            action_cost: 0.05,
            action_scale: 1.0,
            horizon: 30,
            obstacle: None,
            reset_jitter: 0.0,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.goals.is_empty() {
            return Err(Error::Config("environment needs at least one goal".into()));
        }
        if !(self.goal_radius > 0.0) {
            return Err(Error::Config("goal_radius must be positive".into()));
        }
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be positive".into()));
        }
        Ok(())
    }

    /// The default obstacle used by the robustness probe, blocking the
    /// diagonal approach to the upper-left goal.
    pub fn standard_obstacle() -> ([f64; 2], [f64; 2]) {
        ([-2.5, 0.5], [-0.5, 2.5])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvState {
    pub position: [f64; 2],
    pub step_count: usize,
    pub done: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct StepOutcome {
    pub state: EnvState,
    pub reward: f64,
    pub done: bool,
    pub hit_obstacle: bool,
    /// Index of the goal reached this step, if any.
    pub reached_goal: Option<usize>,
}

pub fn reset(cfg: &EnvConfig, rng: &mut RngStream) -> EnvState {
    let position = if cfg.reset_jitter > 0.0 {
        [cfg.reset_jitter * rng.normal(), cfg.reset_jitter * rng.normal()]
    } else {
        [0.0, 0.0]
    };
    EnvState { position, step_count: 0, done: false }
}

fn clip(v: f64, lo: f64, hi: f64) -> f64 {
    v.max(lo).min(hi)
}

/// Proper segment-segment intersection parameter along p->q, if the motion
/// crosses the obstacle. Touching with the start point exactly on the
/// obstacle line does not count as a crossing, so a particle stopped at the
/// barrier can slide away next step.
fn crossing_parameter(p: [f64; 2], q: [f64; 2], seg: ([f64; 2], [f64; 2])) -> Option<f64> {
    let (a, b) = seg;
    let r = [q[0] - p[0], q[1] - p[1]];
    let s = [b[0] - a[0], b[1] - a[1]];
    let denom = r[0] * s[1] - r[1] * s[0];
    if denom.abs() < 1e-14 {
        return None; // parallel
    }
    let ap = [a[0] - p[0], a[1] - p[1]];
    let t = (ap[0] * s[1] - ap[1] * s[0]) / denom; // along p->q
    let u = (ap[0] * r[1] - ap[1] * r[0]) / denom; // along a->b
    if t > 1e-12 && t <= 1.0 && (0.0..=1.0).contains(&u) {
        Some(t)
    } else {
        None
    }
}

/// One environment step. Actions are clipped to [-1, 1]^2, the position is
/// clipped to the arena, obstacle crossings stop at the barrier, and the
/// reward is -action_cost ||a||^2 plus the terminal bonus on reaching a goal.
pub fn step(state: &EnvState, action: [f64; 2], cfg: &EnvConfig) -> Result<StepOutcome> {
    if state.done {
        return Err(Error::EpisodeFinished);
    }
    let a = [clip(action[0], -1.0, 1.0), clip(action[1], -1.0, 1.0)];
    let p = state.position;
    let mut q = [
        clip(p[0] + cfg.action_scale * a[0], -ARENA_HALF_WIDTH, ARENA_HALF_WIDTH),
        clip(p[1] + cfg.action_scale * a[1], -ARENA_HALF_WIDTH, ARENA_HALF_WIDTH),
    ];
    let mut hit_obstacle = false;
    if let Some(seg) = cfg.obstacle {
        if let Some(t) = crossing_parameter(p, q, seg) {
            q = [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])];
            hit_obstacle = true;
        }
    }
    let mut reward = -cfg.action_cost * (a[0] * a[0] + a[1] * a[1]);
    let reached_goal = cfg.goals.iter().position(|g| {
        let dx = q[0] - g[0];
        let dy = q[1] - g[1];
        (dx * dx + dy * dy).sqrt() <= cfg.goal_radius
    });
    if reached_goal.is_some() {
        reward += cfg.terminal_reward;
    }
    let step_count = state.step_count + 1;
    let done = reached_goal.is_some() || step_count >= cfg.horizon;
    Ok(StepOutcome {
        state: EnvState { position: q, step_count, done },
        reward,
        done,
        hit_obstacle,
        reached_goal,
    })
}

/// Q-landscape smoothness over visited state-action pairs:
/// M1 = E[ ||grad_a Q||_1 / d ], M2 = E[ (1/d^2) sum_ij |H_ij| ] with the
/// Hessian taken by central differences of the action gradient.
pub fn smoothness_metrics(q: &dyn QFunction, pairs: &[(Vec<f64>, Vec<f64>)]) -> Result<(f64, f64)> {
    if pairs.is_empty() {
        return Err(Error::Config("smoothness metrics need at least one state-action pair".into()));
    }
    let d = q.action_dim() as f64;
    let mut m1 = 0.0;
    let mut m2 = 0.0;
    for (s, a) in pairs {
        let g = q.grad_action(s, a);
        m1 += g.iter().map(|v| v.abs()).sum::<f64>() / d;

        let h = fd_step(a);
        let mut hess_l1 = 0.0;
        let mut probe = a.clone();
        for k in 0..a.len() {
            probe[k] = a[k] + h;
            let gp = q.grad_action(s, &probe);
            probe[k] = a[k] - h;
            let gm = q.grad_action(s, &probe);
            probe[k] = a[k];
            for i in 0..a.len() {
                hess_l1 += ((gp[i] - gm[i]) / (2.0 * h)).abs();
            }
        }
        m2 += hess_l1 / (d * d);
    }
    let n = pairs.len() as f64;
    Ok((m1 / n, m2 / n))
}
