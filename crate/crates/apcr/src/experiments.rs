//! Seeded Monte Carlo harnesses behind the CLI and the acceptance suite.
//!
//! Every harness fans replications out through
//! [`map_replications`](crate::parallel::map_replications). Replication `i`
//! draws everything from `replication_seed(seed, i)`, so results do not
//! depend on the execution path. A replication that hits a numerical error
//! is kept as a failed entry and the run carries on.

use std::collections::BTreeSet;
use std::fmt;
use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::bandit::{gen_environment, regret_bound_trace, run_episode, BanditTrace, EnvConfig, Policy, Regrets};
use crate::concentration::BoundConfig;
use crate::error::{Error, Result};
use crate::panel::{fit_and_estimate, gen_panel, reformulation_gap, Assignment, PanelConfig};
use crate::parallel::{map_replications, replication_seed, stream_seed};
use crate::pcr::{BoundStatus, PcrState, ProjectorScope};
use crate::sampling::{gaussian_vector, random_subspace, unit_vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Coverage,
    Rate,
    Bandit,
    Panel,
    Selftest,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::Coverage => "coverage",
            Kind::Rate => "rate",
            Kind::Bandit => "bandit",
            Kind::Panel => "panel",
            Kind::Selftest => "selftest",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "coverage" => Ok(Kind::Coverage),
            "rate" => Ok(Kind::Rate),
            "bandit" => Ok(Kind::Bandit),
            "panel" => Ok(Kind::Panel),
            "selftest" => Ok(Kind::Selftest),
            other => Err(Error::Config(format!("unknown experiment kind {other:?}"))),
        }
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Everything one experiment run needs.
///
/// `grid` is the list of checkpoints: round counts for coverage, rate and
/// bandit runs, unit counts for panel runs. Its last entry is the horizon
/// (or the number of generated units). Panel runs read A, r, σ and L from
/// `bound`; the bandit environment reads d, r, A, L, σ and η from it.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub kind: Kind,
    pub bound: BoundConfig,
    /// Context magnitude: rows have E‖X‖² = s²d in the balanced generator,
    /// and s is c_x for the bandit.
    pub signal_scale: f64,
    pub policy: Policy,
    pub scope: ProjectorScope,
    pub t_total: usize,
    pub t_pre: usize,
    pub assignment: Assignment,
    pub reps: usize,
    pub grid: Vec<usize>,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

/// Keys accepted by [`ExperimentConfig::parse`] besides the
/// [`BoundConfig`] field names.
pub const EXPERIMENT_KEYS: [&str; 11] = [
    "kind",
    "signal_scale",
    "policy",
    "scope",
    "t_total",
    "t_pre",
    "assignment",
    "reps",
    "grid",
    "seed",
    "out",
];

impl ExperimentConfig {
    /// The acceptance-suite setting of each kind.
    pub fn defaults(kind: Kind) -> Self {
        let gaussian = |d, r, a, s| BoundConfig::new(d, r, a).with_gaussian_noise(s, s);
        let base = ExperimentConfig {
            kind,
            bound: gaussian(20, 3, 3, 0.1),
            signal_scale: 10.0,
            policy: Policy::UcbEllipsoid,
            scope: ProjectorScope::PerAction,
            t_total: 40,
            t_pre: 20,
            assignment: Assignment::Uniform,
            reps: 200,
            grid: vec![50, 100, 250, 500],
            seed: 0,
            out: None,
        };
        match kind {
            Kind::Coverage | Kind::Selftest => base,
            Kind::Rate => ExperimentConfig {
                bound: gaussian(2000, 3, 1, 1.0),
                signal_scale: 1.0,
                reps: 50,
                grid: vec![100, 400, 1600],
                ..base
            },
            Kind::Bandit => ExperimentConfig {
                bound: gaussian(10, 2, 3, 0.1),
                signal_scale: 1.0,
                reps: 20,
                grid: vec![200, 2000],
                ..base
            },
            Kind::Panel => ExperimentConfig {
                bound: BoundConfig { slope_bound: 2.0, ..gaussian(20, 2, 2, 0.1) },
                reps: 200,
                grid: vec![200],
                ..base
            },
        }
    }

    /// Reads a flat `key = value` document on top of the defaults of
    /// `kind`. Blank lines and `#` comments are skipped; unknown or
    /// repeated keys are errors. Unless given, γ and α follow σ² and η².
    pub fn parse(kind: Kind, text: &str) -> Result<Self> {
        let mut cfg = Self::defaults(kind);
        let mut seen = BTreeSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if !seen.insert(k.to_string()) {
                return Err(Error::Config(format!("key {k:?} given twice")));
            }
            cfg.set(k, v)?;
        }
        if !seen.contains("gamma") {
            cfg.bound.gamma = cfg.bound.sigma * cfg.bound.sigma;
        }
        if !seen.contains("alpha") {
            cfg.bound.alpha = cfg.bound.eta * cfg.bound.eta;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Resolved configuration as `key = value` lines, readable by [`parse`](Self::parse).
    pub fn to_text(&self) -> String {
        let grid: Vec<String> = self.grid.iter().map(|g| g.to_string()).collect();
        let mut lines = vec![
            format!("kind = {}", self.kind),
            format!("signal_scale = {}", self.signal_scale),
            format!("policy = {}", self.policy.name()),
            format!("scope = {}", self.scope.name()),
            format!("t_total = {}", self.t_total),
            format!("t_pre = {}", self.t_pre),
            format!("assignment = {}", self.assignment.name()),
            format!("reps = {}", self.reps),
            format!("grid = {}", grid.join(", ")),
            format!("seed = {}", self.seed),
        ];
        if let Some(out) = &self.out {
            lines.push(format!("out = {}", out.display()));
        }
        lines.extend(self.bound.to_pairs().into_iter().map(|(k, v)| format!("{k} = {v}")));
        lines.join("\n") + "\n"
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value.parse().map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
        }
        match key {
            "kind" => {
                let k = Kind::parse(value)?;
                if k != self.kind {
                    return Err(Error::Config(format!("config is for {k}, not {}", self.kind)));
                }
            }
            "signal_scale" => self.signal_scale = num(key, value)?,
            "policy" => self.policy = Policy::parse(value)?,
            "scope" => self.scope = ProjectorScope::parse(value).map_err(|e| Error::Config(e.to_string()))?,
            "t_total" => self.t_total = num(key, value)?,
            "t_pre" => self.t_pre = num(key, value)?,
            "assignment" => self.assignment = Assignment::parse(value).map_err(|e| Error::Config(e.to_string()))?,
            "reps" => self.reps = num(key, value)?,
            "grid" => {
                self.grid = value
                    .split(|c: char| c == ',' || c.is_whitespace())
                    .filter(|s| !s.is_empty())
                    .map(|s| num(key, s))
                    .collect::<Result<_>>()?
            }
            "seed" => self.seed = num(key, value)?,
            "out" => self.out = Some(PathBuf::from(value)),
            _ => {
                if !self.bound.set(key, value).map_err(|e| Error::Config(e.to_string()))? {
                    return Err(Error::Config(format!("unknown key {key:?}")));
                }
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(Error::Config("reps must be at least 1".into()));
        }
        if self.grid.is_empty() || self.grid[0] == 0 || self.grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("grid must be a strictly increasing list of positive counts".into()));
        }
        if !(self.signal_scale > 0.0 && self.signal_scale.is_finite()) {
            return Err(Error::Config("signal_scale must be positive".into()));
        }
        match self.kind {
            Kind::Panel => {
                self.panel_config().validate()?;
                let pcfg = BoundConfig { dim: self.t_pre, ..self.bound.clone() };
                pcfg.validate()
            }
            Kind::Bandit => {
                self.bound.validate()?;
                self.env_config().validate()
            }
            _ => self.bound.validate(),
        }
    }

    /// Last grid entry.
    pub fn horizon(&self) -> usize {
        self.grid.last().copied().unwrap_or(0)
    }

    pub fn env_config(&self) -> EnvConfig {
        EnvConfig {
            dim: self.bound.dim,
            rank: self.bound.rank,
            num_actions: self.bound.num_actions,
            slope_bound: self.bound.slope_bound,
            context_scale: self.signal_scale,
            sigma: self.bound.sigma,
            eta: self.bound.eta,
        }
    }

    pub fn panel_config(&self) -> PanelConfig {
        PanelConfig {
            n_units: self.horizon(),
            t_total: self.t_total,
            t_pre: self.t_pre,
            num_interventions: self.bound.num_actions,
            rank: self.bound.rank,
            sigma: self.bound.sigma,
            slope_bound: self.bound.slope_bound,
            assignment: self.assignment,
        }
    }

    fn require(&self, kind: Kind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Config(format!("expected a {kind} config, got {}", self.kind)));
        }
        self.validate()
    }
}

/// Well-balanced synthetic stream: rows X_t = s·√(d/r)·B·g_t with B an
/// orthonormal d×r basis and g_t ~ N(0, I_r), so every nonzero singular
/// value of X grows like s·√(n·d/r). Actions rotate round-robin and
/// ‖θ(a)‖ = L with θ(a) in span(B).
#[derive(Debug, Clone, PartialEq)]
pub struct BalancedStream {
    pub basis: DMatrix<f64>,
    pub slopes: Vec<DVector<f64>>,
    pub scale: f64,
    pub sigma: f64,
    pub eta: f64,
}

/// One round of a [`BalancedStream`].
#[derive(Debug, Clone, PartialEq)]
pub struct Draw {
    pub action: usize,
    pub x: DVector<f64>,
    pub z: DVector<f64>,
    pub y: f64,
}

impl BalancedStream {
    pub fn new<R: Rng + ?Sized>(cfg: &BoundConfig, signal_scale: f64, rng: &mut R) -> Self {
        let basis = random_subspace(rng, cfg.dim, cfg.rank);
        let slopes = (0..cfg.num_actions)
            .map(|_| &basis * unit_vector(rng, cfg.rank) * cfg.slope_bound)
            .collect();
        let scale = signal_scale * (cfg.dim as f64 / cfg.rank as f64).sqrt();
        BalancedStream { basis, slopes, scale, sigma: cfg.sigma, eta: cfg.eta }
    }

    /// Round `t` (0-based) plays action `t mod A`.
    pub fn draw<R: Rng + ?Sized>(&self, t: usize, rng: &mut R) -> Draw {
        let (d, r) = self.basis.shape();
        let action = t % self.slopes.len();
        let x = &self.basis * gaussian_vector(rng, r, self.scale);
        let z = &x + gaussian_vector(rng, d, self.sigma);
        let y = self.slopes[action].dot(&x) + self.eta * rng.sample::<f64, _>(StandardNormal);
        Draw { action, x, z, y }
    }
}

/// Outcome of one replication.
#[derive(Debug, Clone, PartialEq)]
pub struct Replication<T> {
    pub index: usize,
    pub seed: u64,
    pub outcome: Result<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report<T> {
    pub config: ExperimentConfig,
    pub replications: Vec<Replication<T>>,
}

impl<T> Report<T> {
    pub fn failed(&self) -> usize {
        self.replications.iter().filter(|r| r.outcome.is_err()).count()
    }

    /// Successful replications.
    pub fn ok(&self) -> impl Iterator<Item = &T> {
        self.replications.iter().filter_map(|r| r.outcome.as_ref().ok())
    }
}

fn replicate<T: Send>(cfg: &ExperimentConfig, f: impl Fn(u64) -> Result<T> + Sync + Send) -> Report<T> {
    let replications = map_replications(cfg.reps, |i| {
        let seed = replication_seed(cfg.seed, i as u64);
        Replication { index: i, seed, outcome: f(seed) }
    });
    Report { config: cfg.clone(), replications }
}

/// Quantile by linear interpolation between order statistics; NaN when empty.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        f64::NAN
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

fn status_name(b: &BoundStatus) -> &'static str {
    match b {
        BoundStatus::Valid(_) => "valid",
        BoundStatus::NotYetValid { .. } => "not_yet_valid",
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// CSV view of a report: a summary with one row per grid point and one or
/// more rows per replication.
pub trait Tabular {
    fn summary_header(&self) -> Vec<&'static str>;
    fn summary_rows(&self) -> Vec<Vec<String>>;
    fn replication_header(&self) -> Vec<&'static str>;
    fn replication_rows(&self) -> Vec<Vec<String>>;
}

fn failed_row<T>(rep: &Replication<T>, width: usize) -> Option<Vec<String>> {
    let err = rep.outcome.as_ref().err()?;
    let mut row = vec![rep.index.to_string(), rep.seed.to_string(), format!("failed: {err}")];
    row.resize(width, String::new());
    Some(row)
}

// ---------------------------------------------------------------- coverage

#[derive(Debug, Clone, PartialEq)]
pub struct CoveragePoint {
    pub n: usize,
    pub action: usize,
    pub sq_error: f64,
    pub bound: BoundStatus,
}

impl CoveragePoint {
    /// Some(true) when a valid bound is exceeded; None while gated.
    pub fn violated(&self) -> Option<bool> {
        self.bound.value().map(|b| self.sq_error > b)
    }
}

/// Streams `horizon` balanced rounds into a fresh state and records
/// ‖θ̂_n(a) − θ(a)‖² against the error bound at every grid point.
pub fn coverage_replication(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<CoveragePoint>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stream = BalancedStream::new(&cfg.bound, cfg.signal_scale, &mut rng);
    let mut state = PcrState::with_scope(cfg.bound.clone(), cfg.scope)?;
    let mut points = Vec::new();
    let mut next = 0;
    for t in 0..cfg.horizon() {
        let d = stream.draw(t, &mut rng);
        state.observe(d.z.as_slice(), d.action, d.y)?;
        if t + 1 == cfg.grid[next] {
            for a in 0..cfg.bound.num_actions {
                if state.count(a) == 0 {
                    continue;
                }
                let sq_error = (state.estimate(a)? - &stream.slopes[a]).norm_squared();
                points.push(CoveragePoint { n: t + 1, action: a, sq_error, bound: state.empirical_error_bound(a)? });
            }
            next += 1;
        }
    }
    Ok(points)
}

pub fn run_coverage(cfg: &ExperimentConfig) -> Result<Report<Vec<CoveragePoint>>> {
    cfg.require(Kind::Coverage)?;
    Ok(replicate(cfg, |seed| coverage_replication(cfg, seed)))
}

/// Headline numbers of a coverage run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoverageSummary {
    pub replications: usize,
    pub failed: usize,
    /// Replications with a violated valid bound at some checkpoint.
    pub violating_replications: usize,
    /// (replication, checkpoint, action) triples still behind the gate.
    pub not_yet_valid: usize,
    pub evaluated: usize,
}

impl CoverageSummary {
    pub fn violation_rate(&self) -> f64 {
        self.violating_replications as f64 / (self.replications - self.failed).max(1) as f64
    }
}

impl Report<Vec<CoveragePoint>> {
    pub fn coverage_summary(&self) -> CoverageSummary {
        let mut s = CoverageSummary {
            replications: self.replications.len(),
            failed: self.failed(),
            violating_replications: 0,
            not_yet_valid: 0,
            evaluated: 0,
        };
        for points in self.ok() {
            if points.iter().any(|p| p.violated() == Some(true)) {
                s.violating_replications += 1;
            }
            for p in points {
                match p.violated() {
                    Some(_) => s.evaluated += 1,
                    None => s.not_yet_valid += 1,
                }
            }
        }
        s
    }

    /// Per-action share of replications with a violation at some checkpoint.
    pub fn per_action_violation_rate(&self) -> Vec<f64> {
        let ok = (self.replications.len() - self.failed()).max(1) as f64;
        (0..self.config.bound.num_actions)
            .map(|a| {
                self.ok()
                    .filter(|pts| pts.iter().any(|p| p.action == a && p.violated() == Some(true)))
                    .count() as f64
                    / ok
            })
            .collect()
    }
}

impl Tabular for Report<Vec<CoveragePoint>> {
    fn summary_header(&self) -> Vec<&'static str> {
        vec![
            "n",
            "replications",
            "failed",
            "mean_sq_error",
            "median_sq_error",
            "q90_sq_error",
            "mean_bound",
            "violations",
            "not_yet_valid",
        ]
    }

    fn summary_rows(&self) -> Vec<Vec<String>> {
        self.config
            .grid
            .iter()
            .map(|&n| {
                let pts: Vec<&CoveragePoint> = self.ok().flatten().filter(|p| p.n == n).collect();
                let errs: Vec<f64> = pts.iter().map(|p| p.sq_error).collect();
                let bounds: Vec<f64> = pts.iter().filter_map(|p| p.bound.value()).collect();
                let violations = self
                    .ok()
                    .filter(|r| r.iter().any(|p| p.n == n && p.violated() == Some(true)))
                    .count();
                let gated = pts.iter().filter(|p| p.violated().is_none()).count();
                vec![
                    n.to_string(),
                    self.replications.len().to_string(),
                    self.failed().to_string(),
                    mean(&errs).to_string(),
                    quantile(&errs, 0.5).to_string(),
                    quantile(&errs, 0.9).to_string(),
                    mean(&bounds).to_string(),
                    violations.to_string(),
                    gated.to_string(),
                ]
            })
            .collect()
    }

    fn replication_header(&self) -> Vec<&'static str> {
        vec!["replication", "seed", "status", "n", "action", "sq_error", "bound", "formula_value"]
    }

    fn replication_rows(&self) -> Vec<Vec<String>> {
        let mut rows = Vec::new();
        for rep in &self.replications {
            match &rep.outcome {
                Err(_) => rows.extend(failed_row(rep, 8)),
                Ok(points) => rows.extend(points.iter().map(|p| {
                    vec![
                        rep.index.to_string(),
                        rep.seed.to_string(),
                        status_name(&p.bound).to_string(),
                        p.n.to_string(),
                        p.action.to_string(),
                        p.sq_error.to_string(),
                        fmt_opt(p.bound.value()),
                        fmt_opt(p.bound.formula_value()),
                    ]
                })),
            }
        }
        rows
    }
}

// -------------------------------------------------------------------- rate

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatePoint {
    pub n: usize,
    pub sq_error: f64,
    /// r²/(d ∧ n).
    pub simp_rate: f64,
    /// κ²/ŝnr², when Z_n has rank r.
    pub kappa_sq_over_snr_sq: Option<f64>,
}

fn rate_state(cfg: &ExperimentConfig, seed: u64, mut visit: impl FnMut(&mut PcrState, &BalancedStream) -> Result<()>) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stream = BalancedStream::new(&cfg.bound, cfg.signal_scale, &mut rng);
    let mut state = PcrState::with_scope(cfg.bound.clone(), cfg.scope)?;
    let mut next = 0;
    for t in 0..cfg.horizon() {
        let d = stream.draw(t, &mut rng);
        state.observe(d.z.as_slice(), d.action, d.y)?;
        if t + 1 == cfg.grid[next] {
            visit(&mut state, &stream)?;
            next += 1;
        }
    }
    Ok(())
}

/// Squared error of action 0 at each grid point of one balanced stream.
pub fn rate_replication(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<RatePoint>> {
    let (r, d) = (cfg.bound.rank, cfg.bound.dim);
    let mut points = Vec::new();
    rate_state(cfg, seed, |state, stream| {
        let n = state.rounds();
        let sq_error = (state.estimate(0)? - &stream.slopes[0]).norm_squared();
        let kappa_sq_over_snr_sq = state.rate_diagnostic(0).ok().map(|x| x.snr_sq_inv_kappa_sq);
        points.push(RatePoint { n, sq_error, simp_rate: (r * r) as f64 / d.min(n) as f64, kappa_sq_over_snr_sq });
        Ok(())
    })?;
    Ok(points)
}

/// The state replication 0 of a rate run holds at the horizon.
pub fn rate_final_state(cfg: &ExperimentConfig) -> Result<PcrState> {
    cfg.require(Kind::Rate)?;
    let mut last = None;
    rate_state(cfg, replication_seed(cfg.seed, 0), |state, _| {
        last = Some(state.clone());
        Ok(())
    })?;
    last.ok_or_else(|| Error::InvalidInput("empty grid".into()))
}

pub fn run_rate(cfg: &ExperimentConfig) -> Result<Report<Vec<RatePoint>>> {
    cfg.require(Kind::Rate)?;
    Ok(replicate(cfg, |seed| rate_replication(cfg, seed)))
}

impl Report<Vec<RatePoint>> {
    /// Median squared error at each grid point.
    pub fn medians(&self) -> Vec<f64> {
        self.config
            .grid
            .iter()
            .map(|&n| {
                let errs: Vec<f64> = self.ok().flatten().filter(|p| p.n == n).map(|p| p.sq_error).collect();
                quantile(&errs, 0.5)
            })
            .collect()
    }
}

impl Tabular for Report<Vec<RatePoint>> {
    fn summary_header(&self) -> Vec<&'static str> {
        vec![
            "n",
            "replications",
            "failed",
            "mean_sq_error",
            "median_sq_error",
            "q90_sq_error",
            "simp_rate",
            "median_kappa_sq_over_snr_sq",
        ]
    }

    fn summary_rows(&self) -> Vec<Vec<String>> {
        let (r, d) = (self.config.bound.rank, self.config.bound.dim);
        self.config
            .grid
            .iter()
            .map(|&n| {
                let pts: Vec<&RatePoint> = self.ok().flatten().filter(|p| p.n == n).collect();
                let errs: Vec<f64> = pts.iter().map(|p| p.sq_error).collect();
                let diag: Vec<f64> = pts.iter().filter_map(|p| p.kappa_sq_over_snr_sq).collect();
                vec![
                    n.to_string(),
                    self.replications.len().to_string(),
                    self.failed().to_string(),
                    mean(&errs).to_string(),
                    quantile(&errs, 0.5).to_string(),
                    quantile(&errs, 0.9).to_string(),
                    ((r * r) as f64 / d.min(n) as f64).to_string(),
                    quantile(&diag, 0.5).to_string(),
                ]
            })
            .collect()
    }

    fn replication_header(&self) -> Vec<&'static str> {
        vec!["replication", "seed", "status", "n", "sq_error", "simp_rate", "kappa_sq_over_snr_sq"]
    }

    fn replication_rows(&self) -> Vec<Vec<String>> {
        let mut rows = Vec::new();
        for rep in &self.replications {
            match &rep.outcome {
                Err(_) => rows.extend(failed_row(rep, 7)),
                Ok(points) => rows.extend(points.iter().map(|p| {
                    vec![
                        rep.index.to_string(),
                        rep.seed.to_string(),
                        "ok".to_string(),
                        p.n.to_string(),
                        p.sq_error.to_string(),
                        p.simp_rate.to_string(),
                        fmt_opt(p.kappa_sq_over_snr_sq),
                    ]
                })),
            }
        }
        rows
    }
}

// ------------------------------------------------------------------ bandit

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BanditCheckpoint {
    pub t: usize,
    pub regrets: Regrets,
    /// Intermediate-regret bound, with β taken at the horizon.
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BanditRun {
    pub checkpoints: Vec<BanditCheckpoint>,
    /// Cumulative strong regret ≥ cumulative intermediate regret at every round.
    pub strong_dominates: bool,
    /// Mean over rounds of |intermediate − weak| instantaneous regret.
    pub mean_gap: f64,
    /// 2Lσ√(2r·ln(A·T/δ)).
    pub gap_threshold: f64,
    pub trace: BanditTrace,
}

pub fn bandit_replication(cfg: &ExperimentConfig, seed: u64) -> Result<BanditRun> {
    let env = gen_environment(&cfg.env_config(), stream_seed(seed, 0))?;
    let horizon = cfg.horizon();
    let trace = run_episode(&env, horizon, cfg.policy, &cfg.bound, stream_seed(seed, 1))?;

    let mut acc = Regrets::default();
    let mut strong_dominates = true;
    let mut gap_sum = 0.0;
    let mut checkpoints = Vec::new();
    let mut next = 0;
    for rec in &trace.rounds {
        acc.weak += rec.weak_inst;
        acc.intermediate += rec.inter_inst;
        acc.strong += rec.strong_inst;
        strong_dominates &= acc.strong >= acc.intermediate;
        gap_sum += (rec.inter_inst - rec.weak_inst).abs();
        if rec.t == cfg.grid[next] {
            let prefix = BanditTrace { rounds: trace.rounds[..rec.t].to_vec(), ..trace.clone() };
            let terms = regret_bound_trace(&prefix, &cfg.bound);
            checkpoints.push(BanditCheckpoint { t: rec.t, regrets: acc, bound: terms.ellipsoid_term + terms.noise_term });
            next += 1;
        }
    }
    let b = &cfg.bound;
    let gap_threshold = 2.0
        * b.slope_bound
        * b.sigma
        * (2.0 * b.rank as f64 * (b.num_actions as f64 * horizon as f64 / b.delta).ln()).sqrt();
    Ok(BanditRun { checkpoints, strong_dominates, mean_gap: gap_sum / horizon as f64, gap_threshold, trace })
}

pub fn run_bandit(cfg: &ExperimentConfig) -> Result<Report<BanditRun>> {
    cfg.require(Kind::Bandit)?;
    Ok(replicate(cfg, |seed| bandit_replication(cfg, seed)))
}

impl Report<BanditRun> {
    /// Mean over replications of R^w(t)/t at each grid point.
    pub fn mean_weak_per_round(&self) -> Vec<f64> {
        self.per_round(|r| r.weak)
    }

    fn per_round(&self, pick: impl Fn(&Regrets) -> f64) -> Vec<f64> {
        (0..self.config.grid.len())
            .map(|i| {
                let v: Vec<f64> = self
                    .ok()
                    .map(|run| pick(&run.checkpoints[i].regrets) / run.checkpoints[i].t as f64)
                    .collect();
                mean(&v)
            })
            .collect()
    }
}

impl Tabular for Report<BanditRun> {
    fn summary_header(&self) -> Vec<&'static str> {
        vec![
            "t",
            "replications",
            "failed",
            "mean_weak_per_round",
            "median_weak_per_round",
            "q90_weak_per_round",
            "mean_intermediate_per_round",
            "mean_strong_per_round",
            "mean_bound_per_round",
            "violations",
        ]
    }

    fn summary_rows(&self) -> Vec<Vec<String>> {
        let inter = self.per_round(|r| r.intermediate);
        let strong = self.per_round(|r| r.strong);
        self.config
            .grid
            .iter()
            .enumerate()
            .map(|(i, &t)| {
                let cps: Vec<&BanditCheckpoint> = self.ok().map(|run| &run.checkpoints[i]).collect();
                let weak: Vec<f64> = cps.iter().map(|c| c.regrets.weak / t as f64).collect();
                let bound: Vec<f64> = cps.iter().map(|c| c.bound / t as f64).collect();
                let violations = cps.iter().filter(|c| c.regrets.intermediate > c.bound).count();
                vec![
                    t.to_string(),
                    self.replications.len().to_string(),
                    self.failed().to_string(),
                    mean(&weak).to_string(),
                    quantile(&weak, 0.5).to_string(),
                    quantile(&weak, 0.9).to_string(),
                    inter[i].to_string(),
                    strong[i].to_string(),
                    mean(&bound).to_string(),
                    violations.to_string(),
                ]
            })
            .collect()
    }

    fn replication_header(&self) -> Vec<&'static str> {
        vec![
            "replication",
            "seed",
            "status",
            "t",
            "weak",
            "intermediate",
            "strong",
            "bound",
            "strong_dominates",
            "mean_gap",
            "gap_threshold",
        ]
    }

    fn replication_rows(&self) -> Vec<Vec<String>> {
        let mut rows = Vec::new();
        for rep in &self.replications {
            match &rep.outcome {
                Err(_) => rows.extend(failed_row(rep, 11)),
                Ok(run) => rows.extend(run.checkpoints.iter().map(|c| {
                    vec![
                        rep.index.to_string(),
                        rep.seed.to_string(),
                        "ok".to_string(),
                        c.t.to_string(),
                        c.regrets.weak.to_string(),
                        c.regrets.intermediate.to_string(),
                        c.regrets.strong.to_string(),
                        c.bound.to_string(),
                        run.strong_dominates.to_string(),
                        run.mean_gap.to_string(),
                        run.gap_threshold.to_string(),
                    ]
                })),
            }
        }
        rows
    }
}

// ------------------------------------------------------------------- panel

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PanelPoint {
    /// Units available; the query is unit n − 1, fitted on units 0..n−1.
    pub n: usize,
    pub intervention: usize,
    pub abs_error: f64,
    pub bound: BoundStatus,
}

impl PanelPoint {
    /// |estimate − truth| ≤ bound formula, whether or not the gate is met.
    pub fn covered(&self) -> Option<bool> {
        self.bound.formula_value().map(|b| self.abs_error <= b)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PanelRun {
    pub reformulation_gap: f64,
    pub points: Vec<PanelPoint>,
}

impl PanelRun {
    /// Every point carries a bound formula and is covered by it.
    pub fn covered(&self) -> bool {
        !self.points.is_empty() && self.points.iter().all(|p| p.covered() == Some(true))
    }
}

pub fn panel_replication(cfg: &ExperimentConfig, seed: u64) -> Result<PanelRun> {
    let ds = gen_panel(&cfg.panel_config(), seed)?;
    let reformulation_gap = reformulation_gap(&ds)?;
    let mut points = Vec::new();
    for &n in &cfg.grid {
        for a in 0..ds.num_interventions {
            let est = fit_and_estimate(&ds, n - 1, a, &cfg.bound)?;
            let truth = est.truth.ok_or_else(|| Error::InvalidInput("generated panel lacks truth".into()))?;
            points.push(PanelPoint { n, intervention: a, abs_error: (est.estimate - truth).abs(), bound: est.bound });
        }
    }
    Ok(PanelRun { reformulation_gap, points })
}

pub fn run_panel(cfg: &ExperimentConfig) -> Result<Report<PanelRun>> {
    cfg.require(Kind::Panel)?;
    Ok(replicate(cfg, |seed| panel_replication(cfg, seed)))
}

impl Tabular for Report<PanelRun> {
    fn summary_header(&self) -> Vec<&'static str> {
        vec![
            "n_units",
            "replications",
            "failed",
            "mean_abs_error",
            "median_abs_error",
            "q90_abs_error",
            "mean_bound",
            "violations",
            "gate_met",
        ]
    }

    fn summary_rows(&self) -> Vec<Vec<String>> {
        self.config
            .grid
            .iter()
            .map(|&n| {
                let pts: Vec<&PanelPoint> = self.ok().flat_map(|r| &r.points).filter(|p| p.n == n).collect();
                let errs: Vec<f64> = pts.iter().map(|p| p.abs_error).collect();
                let bounds: Vec<f64> = pts.iter().filter_map(|p| p.bound.formula_value()).collect();
                let violations = self
                    .ok()
                    .filter(|r| r.points.iter().any(|p| p.n == n && p.covered() != Some(true)))
                    .count();
                let gate_met = pts.iter().filter(|p| p.bound.is_valid()).count();
                vec![
                    n.to_string(),
                    self.replications.len().to_string(),
                    self.failed().to_string(),
                    mean(&errs).to_string(),
                    quantile(&errs, 0.5).to_string(),
                    quantile(&errs, 0.9).to_string(),
                    mean(&bounds).to_string(),
                    violations.to_string(),
                    gate_met.to_string(),
                ]
            })
            .collect()
    }

    fn replication_header(&self) -> Vec<&'static str> {
        vec![
            "replication",
            "seed",
            "status",
            "n_units",
            "intervention",
            "abs_error",
            "bound",
            "gate_met",
            "reformulation_gap",
        ]
    }

    fn replication_rows(&self) -> Vec<Vec<String>> {
        let mut rows = Vec::new();
        for rep in &self.replications {
            match &rep.outcome {
                Err(_) => rows.extend(failed_row(rep, 9)),
                Ok(run) => rows.extend(run.points.iter().map(|p| {
                    vec![
                        rep.index.to_string(),
                        rep.seed.to_string(),
                        "ok".to_string(),
                        p.n.to_string(),
                        p.intervention.to_string(),
                        p.abs_error.to_string(),
                        fmt_opt(p.bound.formula_value()),
                        p.bound.is_valid().to_string(),
                        run.reformulation_gap.to_string(),
                    ]
                })),
            }
        }
        rows
    }
}

/// Writes a header and rows as CSV.
pub fn write_table<W: std::io::Write>(header: &[&str], rows: &[Vec<String>], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(kind: Kind) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::defaults(kind);
        cfg.reps = 3;
        cfg
    }

    #[test]
    fn parse_applies_keys_and_rejects_unknown() {
        let cfg = ExperimentConfig::parse(Kind::Coverage, "# c\nreps = 4\ngrid = 10, 20\nsigma=0.2\n").unwrap();
        assert_eq!(cfg.reps, 4);
        assert_eq!(cfg.grid, vec![10, 20]);
        assert!((cfg.bound.gamma - 0.04).abs() < 1e-15);
        assert!(matches!(ExperimentConfig::parse(Kind::Coverage, "bogus = 1"), Err(Error::Config(_))));
        assert!(matches!(ExperimentConfig::parse(Kind::Coverage, "reps = 0"), Err(Error::Config(_))));
        assert!(matches!(ExperimentConfig::parse(Kind::Coverage, "grid = 5, 5"), Err(Error::Config(_))));
        assert!(matches!(ExperimentConfig::parse(Kind::Coverage, "kind = rate"), Err(Error::Config(_))));
    }

    #[test]
    fn text_round_trips() {
        for k in [Kind::Coverage, Kind::Rate, Kind::Bandit, Kind::Panel] {
            let mut cfg = ExperimentConfig::defaults(k);
            cfg.seed = 42;
            cfg.bound.gamma = 0.5;
            assert_eq!(ExperimentConfig::parse(k, &cfg.to_text()).unwrap(), cfg);
        }
    }

    #[test]
    fn defaults_validate() {
        for k in [Kind::Coverage, Kind::Rate, Kind::Bandit, Kind::Panel] {
            ExperimentConfig::defaults(k).validate().unwrap();
        }
    }

    #[test]
    fn quantiles() {
        assert_eq!(quantile(&[3.0, 1.0, 2.0], 0.5), 2.0);
        assert_eq!(quantile(&[1.0, 2.0], 0.5), 1.5);
        assert!(quantile(&[], 0.5).is_nan());
    }

    #[test]
    fn noiseless_coverage_has_no_violations() {
        let mut cfg = small(Kind::Coverage);
        cfg.bound = cfg.bound.with_gaussian_noise(0.0, 0.0);
        let s = run_coverage(&cfg).unwrap().coverage_summary();
        assert_eq!(s.failed, 0);
        assert_eq!(s.violating_replications, 0);
        assert!(s.evaluated > 0);
    }

    #[test]
    fn gated_checkpoints_are_counted_not_scored() {
        let mut cfg = small(Kind::Coverage);
        cfg.bound.delta = 0.5;
        cfg.signal_scale = 0.1;
        cfg.grid = vec![3, 6];
        let report = run_coverage(&cfg).unwrap();
        let s = report.coverage_summary();
        assert_eq!(s.failed, 0);
        assert!(s.not_yet_valid > 0);
        assert_eq!(report.summary_rows().len(), 2);
    }

    #[test]
    fn reports_are_deterministic() {
        let cfg = small(Kind::Coverage);
        let a = run_coverage(&cfg).unwrap();
        let b = run_coverage(&cfg).unwrap();
        assert_eq!(a.summary_rows(), b.summary_rows());
        assert_eq!(a.replication_rows(), b.replication_rows());
    }

    #[test]
    fn bandit_and_panel_run() {
        let mut cfg = small(Kind::Bandit);
        cfg.grid = vec![20, 50];
        let r = run_bandit(&cfg).unwrap();
        assert_eq!(r.failed(), 0);
        assert!(r.ok().all(|run| run.strong_dominates));

        let mut cfg = small(Kind::Panel);
        cfg.grid = vec![30, 60];
        let r = run_panel(&cfg).unwrap();
        assert_eq!(r.failed(), 0);
        assert!(r.ok().all(|run| run.reformulation_gap < 1e-8));
    }
}
