//! Synthetic interventions on panel data.
//!
//! Outcomes follow a latent factor model `Y_{n,t}^{(a)} = ⟨U_t^{(a)}, V_n⟩ + ε`.
//! Every unit is observed under control for `t ≤ T₀` and under a single
//! intervention `a_n` afterwards. The average post-period outcome of unit n
//! under intervention a is estimated by regressing, across earlier units
//! that received a, their summed post outcomes on their pre-period outcomes
//! with adaptive PCR, then applying the fitted θ̂(a) to unit n's own
//! pre-period outcomes.

mod io;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::concentration::BoundConfig;
use crate::error::{Error, Result};
use crate::pcr::{error_term, BoundStatus, GateFailure, PcrState};
use crate::sampling::gaussian_matrix;

pub use io::{export_panel, ingest_panel, meta_path, read_panel, write_panel, PANEL_HEADER};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Assignment {
    #[default]
    Uniform,
    /// Round-robin until every intervention has r units, then the
    /// intervention with the highest current estimate for the arriving unit.
    AdaptiveGreedy,
}

impl Assignment {
    pub fn name(self) -> &'static str {
        match self {
            Assignment::Uniform => "uniform",
            Assignment::AdaptiveGreedy => "adaptive_greedy",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Assignment::Uniform),
            "adaptive_greedy" => Ok(Assignment::AdaptiveGreedy),
            other => Err(Error::Config(format!("unknown assignment {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PanelConfig {
    pub n_units: usize,
    /// T.
    pub t_total: usize,
    /// T₀.
    pub t_pre: usize,
    pub num_interventions: usize,
    pub rank: usize,
    pub sigma: f64,
    /// Cap on ‖θ(a)‖; post factors are shrunk to respect it.
    pub slope_bound: f64,
    pub assignment: Assignment,
}

impl Default for PanelConfig {
    fn default() -> Self {
        PanelConfig {
            n_units: 200,
            t_total: 40,
            t_pre: 20,
            num_interventions: 2,
            rank: 2,
            sigma: 0.1,
            slope_bound: 2.0,
            assignment: Assignment::Uniform,
        }
    }
}

impl PanelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t_pre == 0 || self.t_pre >= self.t_total {
            return Err(Error::Config(format!("need 0 < T0 < T, got T0 = {}, T = {}", self.t_pre, self.t_total)));
        }
        if self.rank == 0 || self.rank > self.t_pre {
            return Err(Error::Config(format!("need 1 <= r <= T0, got r = {}", self.rank)));
        }
        if self.n_units == 0 || self.num_interventions == 0 {
            return Err(Error::Config("need at least one unit and one intervention".into()));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config("sigma must be finite and nonnegative".into()));
        }
        if !(self.slope_bound > 0.0 && self.slope_bound.is_finite()) {
            return Err(Error::Config("slope_bound must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PanelUnit {
    /// Y_{n,pre}, length T₀.
    pub pre: Vec<f64>,
    pub intervention: usize,
    /// Observed post outcomes under `intervention`, length T − T₀.
    pub post: Vec<f64>,
}

/// Ground truth behind a generated panel.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentFactors {
    /// U_t^{(0)} for t ≤ T₀, as rows of a T₀×r matrix.
    pub pre: DMatrix<f64>,
    /// U_t^{(a)} for t > T₀, one (T−T₀)×r matrix per intervention.
    pub post: Vec<DMatrix<f64>>,
    /// V_n as rows of an n×r matrix.
    pub units: DMatrix<f64>,
    pub sigma: f64,
    pub pre_noise: DMatrix<f64>,
    pub post_noise: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PanelDataset {
    pub t_total: usize,
    pub t_pre: usize,
    pub num_interventions: usize,
    pub rank: usize,
    pub units: Vec<PanelUnit>,
    pub truth: Option<LatentFactors>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SiEstimate {
    pub unit: usize,
    pub intervention: usize,
    /// (1/(T−T₀))·⟨θ̂(a), Y_{unit,pre}⟩.
    pub estimate: f64,
    pub bound: BoundStatus,
    /// E Ȳ^{(a)}_{unit,post}, when factors are known.
    pub truth: Option<f64>,
}

impl PanelDataset {
    pub fn post_len(&self) -> usize {
        self.t_total - self.t_pre
    }

    fn truth_ref(&self) -> Result<&LatentFactors> {
        self.truth
            .as_ref()
            .ok_or_else(|| Error::InvalidInput("dataset carries no latent factors".into()))
    }

    /// Builds a dataset from explicit factors, drawing N(0, σ²) noise.
    pub fn from_factors(
        pre: DMatrix<f64>,
        post: Vec<DMatrix<f64>>,
        units: DMatrix<f64>,
        assignment: &[usize],
        sigma: f64,
        seed: u64,
    ) -> Result<Self> {
        let (t_pre, r) = pre.shape();
        let n = units.nrows();
        if units.ncols() != r || post.is_empty() || assignment.len() != n {
            return Err(Error::InvalidInput("factor shapes are inconsistent".into()));
        }
        let post_len = post[0].nrows();
        if post.iter().any(|p| p.shape() != (post_len, r)) || post_len == 0 {
            return Err(Error::InvalidInput("post factor shapes are inconsistent".into()));
        }
        if assignment.iter().any(|&a| a >= post.len()) {
            return Err(Error::InvalidInput("assignment names an unknown intervention".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pre_noise = gaussian_matrix(&mut rng, n, t_pre, sigma);
        let post_noise = gaussian_matrix(&mut rng, n, post_len, sigma);
        let mut ds = PanelDataset {
            t_total: t_pre + post_len,
            t_pre,
            num_interventions: post.len(),
            rank: r,
            units: Vec::with_capacity(n),
            truth: Some(LatentFactors { pre, post, units, sigma, pre_noise, post_noise }),
        };
        for (i, &a) in assignment.iter().enumerate() {
            let unit = ds.realise_unit(i, a);
            ds.units.push(unit);
        }
        Ok(ds)
    }

    fn realise_unit(&self, i: usize, a: usize) -> PanelUnit {
        let f = self.truth.as_ref().expect("factors present");
        let v = f.units.row(i).transpose();
        let pre = (&f.pre * &v + f.pre_noise.row(i).transpose()).as_slice().to_vec();
        let post = (&f.post[a] * &v + f.post_noise.row(i).transpose()).as_slice().to_vec();
        PanelUnit { pre, intervention: a, post }
    }

    /// E Y_{n,pre} = U_pre·V_n.
    pub fn expected_pre(&self, unit: usize) -> Result<DVector<f64>> {
        let f = self.truth_ref()?;
        Ok(&f.pre * f.units.row(unit).transpose())
    }

    /// E Ȳ^{(a)}_{n,post}: the mean over t > T₀ of ⟨U_t^{(a)}, V_n⟩.
    pub fn expected_post_mean(&self, unit: usize, a: usize) -> Result<f64> {
        let f = self.truth_ref()?;
        let v = f.units.row(unit).transpose();
        Ok((&f.post[a] * v).sum() / self.post_len() as f64)
    }
}

pub fn gen_panel(cfg: &PanelConfig, seed: u64) -> Result<PanelDataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, t0, r) = (cfg.n_units, cfg.t_pre, cfg.rank);
    let post_len = cfg.t_total - cfg.t_pre;

    let mut pre = gaussian_matrix(&mut rng, t0, r, 1.0);
    // Post factors are explicit combinations of the pre factors, so they lie
    // in the pre-period span by construction.
    let mut post: Vec<DMatrix<f64>> = (0..cfg.num_interventions)
        .map(|_| gaussian_matrix(&mut rng, post_len, t0, 1.0 / (t0 as f64).sqrt()) * &pre)
        .collect();
    let units = gaussian_matrix(&mut rng, n, r, 1.0);

    let mut largest = (&units * pre.transpose()).amax();
    for p in &post {
        largest = largest.max((&units * p.transpose()).amax());
    }
    if largest > 0.0 {
        pre /= largest;
        for p in &mut post {
            *p /= largest;
        }
    }
    for p in &mut post {
        let norm = min_norm_theta(&pre, p)?.norm();
        if norm > cfg.slope_bound {
            *p *= cfg.slope_bound / norm;
        }
    }

    let assignment = match cfg.assignment {
        Assignment::Uniform => (0..n).map(|_| rng.random_range(0..cfg.num_interventions)).collect(),
        Assignment::AdaptiveGreedy => vec![0; n],
    };
    let noise_seed = rng.random::<u64>();
    let mut ds = PanelDataset::from_factors(pre, post, units, &assignment, cfg.sigma, noise_seed)?;

    if cfg.assignment == Assignment::AdaptiveGreedy {
        let base = BoundConfig { sigma: cfg.sigma, slope_bound: cfg.slope_bound, ..BoundConfig::default() };
        let bound_cfg = panel_bound_config(&base, &ds);
        let mut counts = vec![0usize; cfg.num_interventions];
        for i in 0..n {
            let (least, fewest) = counts.iter().enumerate().min_by_key(|(_, c)| **c).map(|(a, c)| (a, *c)).unwrap();
            let a = if fewest < r {
                least
            } else {
                let mut best = (0, f64::NEG_INFINITY);
                for a in 0..cfg.num_interventions {
                    let state = fit_prior(&ds.units[..i], a, &bound_cfg)?;
                    let value = apply_theta(&mut state.clone(), a, &ds.units[i].pre, post_len)?;
                    if value > best.1 {
                        best = (a, value);
                    }
                }
                best.0
            };
            counts[a] += 1;
            ds.units[i] = ds.realise_unit(i, a);
        }
    }
    Ok(ds)
}

fn min_norm_theta(pre: &DMatrix<f64>, post: &DMatrix<f64>) -> Result<DVector<f64>> {
    // Solve U_preᵀ θ = Σ_t U_t^{(a)} in the minimum-norm sense.
    let target: DVector<f64> = post.row_sum().transpose();
    let svd = pre.clone().svd(true, true);
    let top = svd.singular_values.max();
    let cut = 1e-10 * top.max(1.0);
    let w = svd.u.as_ref().expect("u requested");
    let qt = svd.v_t.as_ref().expect("v requested");
    // U_pre = W Σ Qᵀ, so θ = W Σ⁺ Qᵀ s.
    let coeffs = qt * &target;
    let mut theta = DVector::zeros(pre.nrows());
    for (j, s) in svd.singular_values.iter().enumerate() {
        if *s > cut {
            theta += w.column(j) * (coeffs[j] / s);
        }
    }
    let residual = (pre.tr_mul(&theta) - &target).norm();
    if residual > 1e-9 * target.norm().max(1.0) {
        return Err(Error::AssumptionViolated(format!(
            "post-period factors leave the pre-period span (residual {residual:e})"
        )));
    }
    Ok(theta)
}

/// Minimum-norm θ(a) with Σ_{t>T₀} U_t^{(a)} = Σ_{t≤T₀} θ_t·U_t^{(0)}.
pub fn theta_from_factors(ds: &PanelDataset, a: usize) -> Result<DVector<f64>> {
    let f = ds.truth_ref()?;
    if a >= f.post.len() {
        return Err(Error::InvalidInput(format!("intervention {a} out of range")));
    }
    min_norm_theta(&f.pre, &f.post[a])
}

/// Largest |E Ȳ^{(a)}_{n,post} − ⟨θ(a), E Y_{n,pre}⟩/(T−T₀)| over all
/// units and interventions.
pub fn reformulation_gap(ds: &PanelDataset) -> Result<f64> {
    let mut worst = 0.0_f64;
    for a in 0..ds.num_interventions {
        let theta = theta_from_factors(ds, a)?;
        for n in 0..ds.units.len() {
            let lhs = ds.expected_post_mean(n, a)?;
            let rhs = theta.dot(&ds.expected_pre(n)?) / ds.post_len() as f64;
            worst = worst.max((lhs - rhs).abs());
        }
    }
    Ok(worst)
}

/// The bound configuration in the regression frame of a panel: d = T₀,
/// η = σ√(T−T₀), α = σ²(T−T₀), γ = σ², with σ taken from `base`.
pub fn panel_bound_config(base: &BoundConfig, ds: &PanelDataset) -> BoundConfig {
    let post = ds.post_len() as f64;
    let s = base.sigma;
    BoundConfig {
        dim: ds.t_pre,
        rank: ds.rank,
        num_actions: ds.num_interventions,
        eta: s * post.sqrt(),
        alpha: s * s * post,
        gamma: s * s,
        ..base.clone()
    }
}

fn fit_prior(prior: &[PanelUnit], a: usize, cfg: &BoundConfig) -> Result<PcrState> {
    if !prior.iter().any(|u| u.intervention == a) {
        return Err(Error::NoData(a));
    }
    let mut state = PcrState::new(cfg.clone())?;
    for u in prior {
        state.observe(&u.pre, u.intervention, u.post.iter().sum())?;
    }
    Ok(state)
}

fn apply_theta(state: &mut PcrState, a: usize, pre: &[f64], post_len: usize) -> Result<f64> {
    let theta = state.estimate(a)?;
    Ok(theta.dot(&DVector::from_column_slice(pre)) / post_len as f64)
}

/// Estimate of E Ȳ^{(a)}_{unit,post} from the units before `unit`, with its
/// prediction-error bound.
pub fn fit_and_estimate(ds: &PanelDataset, unit: usize, a: usize, cfg: &BoundConfig) -> Result<SiEstimate> {
    if unit >= ds.units.len() || a >= ds.num_interventions {
        return Err(Error::InvalidInput(format!("unit {unit} or intervention {a} out of range")));
    }
    let pcfg = panel_bound_config(cfg, ds);
    let mut state = fit_prior(&ds.units[..unit], a, &pcfg)?;
    let post_len = ds.post_len();
    let estimate = apply_theta(&mut state, a, &ds.units[unit].pre, post_len)?;

    let u = state.noise_envelope()?;
    let count = state.count(a);
    let own = state.svd(a)?;
    let rank = own.numerical_rank();
    let bound = if rank < pcfg.rank {
        BoundStatus::NotYetValid { reason: GateFailure::RankDeficient { rank }, formula_value: None }
    } else {
        let (s1, sr) = (own.sigma(1), own.sigma(pcfg.rank));
        let snr = if u > 0.0 { sr / u } else { f64::INFINITY };
        let value = prediction_error_bound(&PanelBoundInputs {
            snr,
            kappa: s1 / sr,
            sigma_r: sr,
            err: error_term(&pcfg, s1, count)? / post_len as f64,
            t_total: ds.t_total,
            t_pre: ds.t_pre,
            slope_bound: pcfg.slope_bound,
            sigma: cfg.sigma,
            num_actions: ds.num_interventions,
            delta: pcfg.delta,
        })?;
        if snr < 2.0 {
            BoundStatus::NotYetValid { reason: GateFailure::LowSnr { snr }, formula_value: Some(value) }
        } else {
            BoundStatus::Valid(value)
        }
    };
    let truth = match ds.truth {
        Some(_) => Some(ds.expected_post_mean(unit, a)?),
        None => None,
    };
    Ok(SiEstimate { unit, intervention: a, estimate, bound, truth })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PanelBoundInputs {
    pub snr: f64,
    pub kappa: f64,
    pub sigma_r: f64,
    /// err_n(a) in the panel frame.
    pub err: f64,
    pub t_total: usize,
    pub t_pre: usize,
    pub slope_bound: f64,
    pub sigma: f64,
    pub num_actions: usize,
    pub delta: f64,
}

/// Bound on |Ê Ȳ^{(a)}_{n,post} − E Ȳ^{(a)}_{n,post}|, the sum of eight
/// terms written out below. `snr` may be +∞ (noiseless covariates).
pub fn prediction_error_bound(p: &PanelBoundInputs) -> Result<f64> {
    if !(p.snr > 0.0) || !(p.sigma_r > 0.0) || !p.sigma_r.is_finite() {
        return Err(Error::InvalidInput("snr and sigma_r must be positive".into()));
    }
    if p.t_pre == 0 || p.t_pre >= p.t_total || !(p.delta > 0.0) || p.num_actions == 0 {
        return Err(Error::InvalidInput("need 0 < T0 < T, delta > 0, A >= 1".into()));
    }
    if !(p.err >= 0.0 && p.kappa >= 1.0 - 1e-12 && p.slope_bound >= 0.0 && p.sigma >= 0.0) {
        return Err(Error::InvalidInput("err, L and sigma must be nonnegative and kappa >= 1".into()));
    }
    let t0 = p.t_pre as f64;
    let dt = (p.t_total - p.t_pre) as f64;
    let (snr, kappa, sr, err, l, s) = (p.snr, p.kappa, p.sigma_r, p.err, p.slope_bound, p.sigma);
    let lg = (p.num_actions as f64 / p.delta).ln();

    let inner = l * (74f64.sqrt() + 12.0 * 6f64.sqrt() * kappa) / (dt * snr) + (2.0 * err).sqrt() / (dt.sqrt() * sr);
    let terms = [
        3.0 * t0.sqrt() / snr * inner,
        2.0 * l * (24.0 * t0).sqrt() / (dt * snr),
        12.0 * l * kappa * (3.0 * t0).sqrt() / (dt * snr),
        2.0 * err.sqrt() / (dt.sqrt() * sr),
        l * s * lg.sqrt() / dt.sqrt(),
        l * s * (74.0 * lg).sqrt() / (snr * dt.sqrt()),
        12.0 * s * kappa * (6.0 * lg).sqrt() / (snr * dt.sqrt()),
        s * (2.0 * err * lg).sqrt() / sr,
    ];
    Ok(terms.iter().sum())
}
