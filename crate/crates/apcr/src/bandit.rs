//! Linear bandit with noisy, low-rank contexts, and the PCR-UCB policy.
//!
//! Contexts `X_t` live in an r-dimensional subspace W*; the learner only sees
//! `Z_t = X_t + ε_t`. Rewards are `⟨θ(a_t), X_t⟩ + ξ_t`. Regret is tracked
//! three ways: weak (Z-optimal action scored on Z), intermediate (Z-optimal
//! action scored on X) and strong (X-optimal action scored on X).

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::concentration::BoundConfig;
use crate::error::{Error, Result};
use crate::pcr::PcrState;
use crate::sampling::{gaussian_vector, random_subspace, unit_vector};

/// Required best-arm payoff, as a multiple of √d.
pub const REWARD_FLOOR: f64 = 0.5;
const MAX_REJECTIONS: usize = 100_000;

#[derive(Debug, Clone, PartialEq)]
pub struct EnvConfig {
    pub dim: usize,
    pub rank: usize,
    pub num_actions: usize,
    /// ‖θ(a)‖ = L for every action.
    pub slope_bound: f64,
    /// Contexts satisfy ‖X_t‖ ≤ c_x·√d.
    pub context_scale: f64,
    /// Context noise is N(0, σ²I).
    pub sigma: f64,
    /// Reward noise is N(0, η²).
    pub eta: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig { dim: 10, rank: 2, num_actions: 3, slope_bound: 1.0, context_scale: 1.0, sigma: 0.1, eta: 0.1 }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 || self.rank > self.dim {
            return Err(Error::Config(format!("need 1 <= r <= d, got r = {}, d = {}", self.rank, self.dim)));
        }
        if self.num_actions == 0 {
            return Err(Error::Config("need at least one action".into()));
        }
        for (name, v) in [("slope_bound", self.slope_bound), ("sigma", self.sigma), ("eta", self.eta)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and nonnegative")));
            }
        }
        if !(self.context_scale > 0.0 && self.context_scale.is_finite()) {
            return Err(Error::Config("context_scale must be positive".into()));
        }
        if self.slope_bound * self.context_scale <= REWARD_FLOOR {
            return Err(Error::Config(format!(
                "L·c_x = {} cannot reach the reward floor {REWARD_FLOOR}·√d",
                self.slope_bound * self.context_scale
            )));
        }
        Ok(())
    }

    /// The learner's bound configuration matching this environment, with
    /// Gaussian noise (γ = σ², α = η²).
    pub fn bound_config(&self) -> BoundConfig {
        BoundConfig {
            slope_bound: self.slope_bound,
            ..BoundConfig::new(self.dim, self.rank, self.num_actions).with_gaussian_noise(self.sigma, self.eta)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BanditEnv {
    pub cfg: EnvConfig,
    /// d×r orthonormal basis of W*.
    pub basis: DMatrix<f64>,
    pub slopes: Vec<DVector<f64>>,
    pub seed: u64,
}

pub fn gen_environment(cfg: &EnvConfig, seed: u64) -> Result<BanditEnv> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let basis = random_subspace(&mut rng, cfg.dim, cfg.rank);
    let slopes = (0..cfg.num_actions)
        .map(|_| &basis * unit_vector(&mut rng, cfg.rank) * cfg.slope_bound)
        .collect();
    let env = BanditEnv { cfg: cfg.clone(), basis, slopes, seed };
    // Make sure the floor is reachable often enough to sample from.
    env.sample_context(&mut ChaCha8Rng::seed_from_u64(seed ^ 0xfeed))?;
    Ok(env)
}

impl BanditEnv {
    /// c_x·√d.
    pub fn context_bound(&self) -> f64 {
        self.cfg.context_scale * (self.cfg.dim as f64).sqrt()
    }

    /// Rejection sampler: uniform direction in W*, radius in [0.8, 1)·c_x√d,
    /// kept only if some action earns at least 0.5·√d.
    pub fn sample_context<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<DVector<f64>> {
        let bound = self.context_bound();
        let floor = REWARD_FLOOR * (self.cfg.dim as f64).sqrt();
        for _ in 0..MAX_REJECTIONS {
            let radius = bound * rng.random_range(0.8..1.0);
            let x = &self.basis * unit_vector(rng, self.cfg.rank) * radius;
            if x.norm() <= bound && self.best_payoff(&x) >= floor {
                return Ok(x);
            }
        }
        Err(Error::Config("context sampler cannot meet the reward floor".into()))
    }

    pub fn best_payoff(&self, v: &DVector<f64>) -> f64 {
        self.slopes.iter().map(|t| t.dot(v)).fold(f64::NEG_INFINITY, f64::max)
    }

    /// argmax_a ⟨θ(a), v⟩, lowest index on ties.
    pub fn best_action(&self, v: &DVector<f64>) -> usize {
        argmax(self.slopes.iter().map(|t| t.dot(v)))
    }
}

fn argmax<I: Iterator<Item = f64>>(scores: I) -> usize {
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (i, s) in scores.enumerate() {
        if s > best_score {
            best = i;
            best_score = s;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Policy {
    #[default]
    UcbEllipsoid,
    UcbBall,
    Greedy,
}

impl Policy {
    pub fn name(self) -> &'static str {
        match self {
            Policy::UcbEllipsoid => "ucb_ellipsoid",
            Policy::UcbBall => "ucb_ball",
            Policy::Greedy => "greedy",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ucb_ellipsoid" => Ok(Policy::UcbEllipsoid),
            "ucb_ball" => Ok(Policy::UcbBall),
            "greedy" => Ok(Policy::Greedy),
            other => Err(Error::Config(format!("unknown policy {other:?}"))),
        }
    }
}

/// The chosen action with the UCB quantities that produced it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Selection {
    pub action: usize,
    pub score: f64,
    /// √β(a) for the ellipsoid, √bound for the ball, 0 for greedy; ∞ when
    /// the action was forced.
    pub radius: f64,
    /// ‖Z_t‖ in V̂(a)⁻¹; ∞ when the action had no usable fit.
    pub ell_norm: f64,
}

pub fn select_action(state: &mut PcrState, z: &DVector<f64>, mode: Policy) -> Result<usize> {
    Ok(select_with_diagnostics(state, z, mode)?.action)
}

/// Scores every action and returns the best. Actions without data, or whose
/// fit is not yet usable (rank below r; for the ball, an invalid bound),
/// score +∞. Ties go to the lowest index.
pub fn select_with_diagnostics(state: &mut PcrState, z: &DVector<f64>, mode: Policy) -> Result<Selection> {
    if !z.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidInput("context has non-finite entries".into()));
    }
    let forced = |a| Selection { action: a, score: f64::INFINITY, radius: f64::INFINITY, ell_norm: f64::INFINITY };
    let mut best: Option<Selection> = None;
    for a in 0..state.num_actions() {
        let sel = if state.count(a) == 0 || !state.has_full_rank(a) {
            forced(a)
        } else {
            let mean = state.estimate(a)?.dot(z);
            let ell = state.elliptical_norm(a, z)?;
            match mode {
                Policy::Greedy => Selection { action: a, score: mean, radius: 0.0, ell_norm: ell },
                Policy::UcbEllipsoid => {
                    let radius = state.radius_sq(a)?.sqrt();
                    Selection { action: a, score: mean + radius * ell, radius, ell_norm: ell }
                }
                Policy::UcbBall => match state.empirical_error_bound(a)?.value() {
                    Some(b) => {
                        let radius = b.sqrt();
                        Selection { action: a, score: mean + radius * z.norm(), radius, ell_norm: ell }
                    }
                    None => Selection { ell_norm: ell, ..forced(a) },
                },
            }
        };
        if best.is_none_or(|b| sel.score > b.score) {
            best = Some(sel);
        }
    }
    best.ok_or_else(|| Error::InvalidInput("no actions".into()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    /// 1-based round index.
    pub t: usize,
    pub context: DVector<f64>,
    pub observed: DVector<f64>,
    pub action: usize,
    pub reward: f64,
    /// a*_t = argmax ⟨θ(a), Z_t⟩.
    pub z_optimal: usize,
    /// a□_t = argmax ⟨θ(a), X_t⟩.
    pub x_optimal: usize,
    pub weak_inst: f64,
    pub inter_inst: f64,
    pub strong_inst: f64,
    pub ucb_radius: f64,
    pub ell_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BanditTrace {
    pub rounds: Vec<RoundRecord>,
    /// Ground-truth slopes; needed to recompute regrets.
    pub slopes: Option<Vec<DVector<f64>>>,
    /// β_n(a) after the last round (0 for actions never played).
    pub final_radius_sq: Vec<f64>,
    /// Cap on instantaneous regret used by [`regret_bound_trace`].
    pub c_clamp: f64,
    pub num_actions: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Regrets {
    pub weak: f64,
    pub intermediate: f64,
    pub strong: f64,
}

pub fn run_episode(env: &BanditEnv, horizon: usize, mode: Policy, cfg: &BoundConfig, seed: u64) -> Result<BanditTrace> {
    if horizon == 0 {
        return Err(Error::InvalidInput("horizon must be at least 1".into()));
    }
    if cfg.dim != env.cfg.dim || cfg.num_actions != env.cfg.num_actions {
        return Err(Error::Config("bound config does not match the environment".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = PcrState::new(cfg.clone())?;
    let mut rounds = Vec::with_capacity(horizon);
    for t in 1..=horizon {
        let x = env.sample_context(&mut rng)?;
        let z = &x + gaussian_vector(&mut rng, env.cfg.dim, env.cfg.sigma);
        let sel = select_with_diagnostics(&mut state, &z, mode)?;
        let a = sel.action;
        let noise: f64 = env.cfg.eta * rng.sample::<f64, _>(rand_distr::StandardNormal);
        let reward = env.slopes[a].dot(&x) + noise;

        let a_star = env.best_action(&z);
        let a_box = env.best_action(&x);
        let gap_z = &env.slopes[a_star] - &env.slopes[a];
        rounds.push(RoundRecord {
            t,
            weak_inst: gap_z.dot(&z),
            inter_inst: gap_z.dot(&x),
            strong_inst: (&env.slopes[a_box] - &env.slopes[a]).dot(&x),
            context: x,
            observed: z.clone(),
            action: a,
            reward,
            z_optimal: a_star,
            x_optimal: a_box,
            ucb_radius: sel.radius,
            ell_norm: sel.ell_norm,
        });
        state.observe(z.as_slice(), a, reward)?;
    }
    let final_radius_sq = (0..cfg.num_actions)
        .map(|a| if state.count(a) > 0 { state.radius_sq(a) } else { Ok(0.0) })
        .collect::<Result<Vec<_>>>()?;
    Ok(BanditTrace {
        rounds,
        slopes: Some(env.slopes.clone()),
        final_radius_sq,
        c_clamp: 2.0 * cfg.slope_bound * env.context_bound(),
        num_actions: cfg.num_actions,
    })
}

/// Cumulative weak, intermediate and strong regret, recomputed from the
/// recorded contexts and the ground-truth slopes.
pub fn regrets(trace: &BanditTrace) -> Result<Regrets> {
    let slopes = trace
        .slopes
        .as_ref()
        .ok_or_else(|| Error::IncompleteTrace("ground-truth slopes not recorded".into()))?;
    let mut out = Regrets::default();
    for rec in &trace.rounds {
        let a_star = argmax(slopes.iter().map(|t| t.dot(&rec.observed)));
        let a_box = argmax(slopes.iter().map(|t| t.dot(&rec.context)));
        let played = &slopes[rec.action];
        out.weak += (&slopes[a_star] - played).dot(&rec.observed);
        out.intermediate += (&slopes[a_star] - played).dot(&rec.context);
        out.strong += (&slopes[a_box] - played).dot(&rec.context);
    }
    Ok(out)
}

/// Cumulative regrets after each round (entry t−1 covers rounds 1..=t).
pub fn cumulative_regrets(trace: &BanditTrace) -> Vec<Regrets> {
    let mut acc = Regrets::default();
    trace
        .rounds
        .iter()
        .map(|r| {
            acc.weak += r.weak_inst;
            acc.intermediate += r.inter_inst;
            acc.strong += r.strong_inst;
            acc
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegretBoundTerms {
    pub ellipsoid_term: f64,
    pub noise_term: f64,
}

/// The two terms of the intermediate-regret bound.
///
/// `ellipsoid_term = 2√(n·β·Σ_t min(1, ‖Z_t‖²_{V⁻¹}))` with
/// `β = max(max_a β_n(a), (c_clamp/2)²)`; the second argument of the max is
/// what capping instantaneous regret at `c_clamp` costs, and equals 1 for a
/// cap of 2. `noise_term = 2Lnσ√(2r·ln(An/δ))`.
pub fn regret_bound_trace(trace: &BanditTrace, cfg: &BoundConfig) -> RegretBoundTerms {
    let n = trace.rounds.len();
    if n == 0 {
        return RegretBoundTerms { ellipsoid_term: 0.0, noise_term: 0.0 };
    }
    let nf = n as f64;
    let beta_max = trace.final_radius_sq.iter().copied().fold(0.0, f64::max);
    let beta = beta_max.max((trace.c_clamp / 2.0).powi(2));
    let s: f64 = trace.rounds.iter().map(|r| (r.ell_norm * r.ell_norm).min(1.0)).sum();
    let a = trace.num_actions as f64;
    RegretBoundTerms {
        ellipsoid_term: 2.0 * (nf * beta * s).sqrt(),
        noise_term: 2.0
            * cfg.slope_bound
            * nf
            * cfg.sigma
            * (2.0 * cfg.rank as f64 * (a * nf / cfg.delta).ln()).sqrt(),
    }
}

pub const TRACE_HEADER: [&str; 11] = [
    "t",
    "action",
    "reward",
    "weak_inst",
    "inter_inst",
    "strong_inst",
    "weak_cum",
    "inter_cum",
    "strong_cum",
    "ucb_radius",
    "ell_norm",
];

/// One row per round, comma-separated, with a header row.
pub fn write_trace_csv<W: Write>(trace: &BanditTrace, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACE_HEADER)?;
    for (rec, cum) in trace.rounds.iter().zip(cumulative_regrets(trace)) {
        w.write_record([
            rec.t.to_string(),
            rec.action.to_string(),
            rec.reward.to_string(),
            rec.weak_inst.to_string(),
            rec.inter_inst.to_string(),
            rec.strong_inst.to_string(),
            cum.weak.to_string(),
            cum.intermediate.to_string(),
            cum.strong.to_string(),
            rec.ucb_radius.to_string(),
            rec.ell_norm.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
