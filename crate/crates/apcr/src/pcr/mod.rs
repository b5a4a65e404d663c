//! Adaptive principal component regression.
//!
//! Each action keeps its own noisy design `Z_n(a)` and responses `Y_n(a)`.
//! An estimate projects onto the top-r right singular subspace of the
//! design (per action, or of the pooled design) and solves a ridge problem
//! in the k-dimensional coordinates of that subspace:
//!
//! ```text
//! θ̂ = V (VᵀZᵀZV + ρI)⁻¹ VᵀZᵀY
//! ```
//!
//! which is `(ẐᵀẐ + ρP̂)⁺ẐᵀY` with `Ẑ = ZP̂`, `P̂ = VVᵀ`.

mod snapshot;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::concentration::{ell_delta, ellipsoid_radius_sq, noise_opnorm_bound_u, BoundConfig};
use crate::error::{Error, Result};
use crate::linalg::{rank_cutoff, truncated_svd, TruncatedSvd};

pub use snapshot::{read_snapshot, write_snapshot};

/// Which design the learned projector comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ProjectorScope {
    /// P̂(a) from `Z_n(a)`.
    #[default]
    PerAction,
    /// One P̂ from the pooled design `Z_n`.
    Global,
}

impl ProjectorScope {
    pub fn name(self) -> &'static str {
        match self {
            ProjectorScope::PerAction => "per_action",
            ProjectorScope::Global => "global",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "per_action" => Ok(ProjectorScope::PerAction),
            "global" => Ok(ProjectorScope::Global),
            other => Err(Error::Config(format!("unknown projector scope {other:?}"))),
        }
    }
}

/// Why a bound is not reported as a number yet.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GateFailure {
    /// Fewer than r singular values of `Z_n(a)` clear the rank tolerance.
    RankDeficient { rank: usize },
    /// Empirical snr below 2.
    LowSnr { snr: f64 },
}

/// A bound value, or the sentinel used before the bound's preconditions hold.
///
/// `formula_value` keeps the right-hand side evaluated anyway whenever it is
/// computable, for diagnostics only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BoundStatus {
    Valid(f64),
    NotYetValid { reason: GateFailure, formula_value: Option<f64> },
}

impl BoundStatus {
    pub fn value(&self) -> Option<f64> {
        match self {
            BoundStatus::Valid(v) => Some(*v),
            BoundStatus::NotYetValid { .. } => None,
        }
    }

    pub fn is_valid(&self) -> bool {
        matches!(self, BoundStatus::Valid(_))
    }

    pub fn formula_value(&self) -> Option<f64> {
        match self {
            BoundStatus::Valid(v) => Some(*v),
            BoundStatus::NotYetValid { formula_value, .. } => *formula_value,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateDiagnostic {
    /// κ(Z_n(a))²/ŝnr_n(a)².
    pub snr_sq_inv_kappa_sq: f64,
    /// r²/(d ∧ n).
    pub simp_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnrReport {
    pub action: usize,
    pub sigma_r_z: f64,
    pub u_n: f64,
    pub empirical_snr: f64,
    pub true_snr: Option<f64>,
}

#[derive(Debug, Clone)]
struct Fit {
    /// Rank-r SVD of Z_n(a); the bound is always stated in its values.
    own: TruncatedSvd,
    /// d×k orthonormal basis of range(P̂) actually used for the estimate.
    basis: DMatrix<f64>,
    /// (VᵀZᵀZV + ρI)⁻¹, for elliptical norms.
    coord_inv: DMatrix<f64>,
    theta: DVector<f64>,
}

#[derive(Debug, Clone, Default)]
struct ActionBuffer {
    rows: Vec<f64>,
    outcomes: Vec<f64>,
    fit: Option<Fit>,
}

/// Online state of the estimator over A actions in dimension d.
#[derive(Debug, Clone)]
pub struct PcrState {
    cfg: BoundConfig,
    scope: ProjectorScope,
    actions: Vec<ActionBuffer>,
    /// Action played in each round, in order.
    order: Vec<usize>,
    global: Option<TruncatedSvd>,
    clamp_events: usize,
}

impl PcrState {
    pub fn new(cfg: BoundConfig) -> Result<Self> {
        Self::with_scope(cfg, ProjectorScope::PerAction)
    }

    pub fn with_scope(cfg: BoundConfig, scope: ProjectorScope) -> Result<Self> {
        cfg.validate()?;
        Ok(PcrState {
            actions: vec![ActionBuffer::default(); cfg.num_actions],
            cfg,
            scope,
            order: Vec::new(),
            global: None,
            clamp_events: 0,
        })
    }

    pub fn config(&self) -> &BoundConfig {
        &self.cfg
    }

    pub fn scope(&self) -> ProjectorScope {
        self.scope
    }

    pub fn dim(&self) -> usize {
        self.cfg.dim
    }

    pub fn num_actions(&self) -> usize {
        self.cfg.num_actions
    }

    /// Global round index n.
    pub fn rounds(&self) -> usize {
        self.order.len()
    }

    /// c_n(a). Zero for unknown actions.
    pub fn count(&self, action: usize) -> usize {
        self.actions.get(action).map_or(0, |b| b.outcomes.len())
    }

    /// Number of times an estimate had to be rescaled onto the L-ball.
    pub fn clamp_events(&self) -> usize {
        self.clamp_events
    }

    /// Action of each round so far.
    pub fn history(&self) -> &[usize] {
        &self.order
    }

    pub fn observe(&mut self, z: &[f64], action: usize, y: f64) -> Result<()> {
        if action >= self.cfg.num_actions {
            return Err(Error::InvalidInput(format!(
                "action {action} outside 0..{}",
                self.cfg.num_actions
            )));
        }
        if z.len() != self.cfg.dim {
            return Err(Error::InvalidInput(format!(
                "covariate has length {}, expected {}",
                z.len(),
                self.cfg.dim
            )));
        }
        if !z.iter().all(|v| v.is_finite()) || !y.is_finite() {
            return Err(Error::InvalidInput("observation has non-finite entries".into()));
        }
        let buf = &mut self.actions[action];
        buf.rows.extend_from_slice(z);
        buf.outcomes.push(y);
        buf.fit = None;
        self.order.push(action);
        self.global = None;
        if self.scope == ProjectorScope::Global {
            for b in &mut self.actions {
                b.fit = None;
            }
        }
        Ok(())
    }

    fn check_action(&self, action: usize) -> Result<()> {
        if action >= self.cfg.num_actions {
            Err(Error::InvalidInput(format!("action {action} outside 0..{}", self.cfg.num_actions)))
        } else if self.count(action) == 0 {
            Err(Error::NoData(action))
        } else {
            Ok(())
        }
    }

    /// Z_n(a) as a c_n(a)×d matrix.
    pub fn design(&self, action: usize) -> DMatrix<f64> {
        let buf = &self.actions[action];
        DMatrix::from_row_slice(buf.outcomes.len(), self.cfg.dim, &buf.rows)
    }

    /// Y_n(a).
    pub fn responses(&self, action: usize) -> DVector<f64> {
        DVector::from_column_slice(&self.actions[action].outcomes)
    }

    /// Z_n with rows in round order.
    pub fn pooled_design(&self) -> DMatrix<f64> {
        let d = self.cfg.dim;
        let mut seen = vec![0usize; self.cfg.num_actions];
        let mut data = Vec::with_capacity(self.order.len() * d);
        for &a in &self.order {
            let i = seen[a];
            data.extend_from_slice(&self.actions[a].rows[i * d..(i + 1) * d]);
            seen[a] += 1;
        }
        DMatrix::from_row_slice(self.order.len(), d, &data)
    }

    fn fit(&mut self, action: usize) -> Result<&Fit> {
        self.check_action(action)?;
        if self.actions[action].fit.is_none() {
            if self.scope == ProjectorScope::Global && self.global.is_none() {
                self.global = Some(truncated_svd(&self.pooled_design(), self.cfg.rank)?);
            }
            let (fit, clamped) = self.compute_fit(action)?;
            if clamped {
                self.clamp_events += 1;
            }
            self.actions[action].fit = Some(fit);
        }
        Ok(self.actions[action].fit.as_ref().expect("fit just stored"))
    }

    fn compute_fit(&self, action: usize) -> Result<(Fit, bool)> {
        let z = self.design(action);
        let y = self.responses(action);
        let own = truncated_svd(&z, self.cfg.rank)?;
        let basis = match self.scope {
            ProjectorScope::PerAction => own.right.clone(),
            ProjectorScope::Global => self.global.as_ref().expect("global SVD computed").right.clone(),
        };
        let b = &z * &basis;
        let mut gram = b.tr_mul(&b);
        for i in 0..gram.nrows() {
            gram[(i, i)] += self.cfg.rho;
        }
        let chol = gram
            .cholesky()
            .ok_or_else(|| Error::DegenerateRank("ridge system is not positive definite".into()))?;
        let w = chol.solve(&b.tr_mul(&y));
        let mut theta = &basis * w;
        let norm = theta.norm();
        let clamped = norm > self.cfg.slope_bound;
        if clamped {
            theta *= self.cfg.slope_bound / norm;
        }
        let fit = Fit { own, basis, coord_inv: chol.inverse(), theta };
        Ok((fit, clamped))
    }

    /// θ̂_n(a).
    pub fn estimate(&mut self, action: usize) -> Result<DVector<f64>> {
        Ok(self.fit(action)?.theta.clone())
    }

    /// Rank-r SVD of Z_n(a).
    pub fn svd(&mut self, action: usize) -> Result<&TruncatedSvd> {
        Ok(&self.fit(action)?.own)
    }

    /// The projector P̂ used by `estimate(action)`.
    pub fn projector(&mut self, action: usize) -> Result<DMatrix<f64>> {
        let basis = &self.fit(action)?.basis;
        Ok(basis * basis.transpose())
    }

    /// True once Z_n(a) has r singular values above the rank tolerance.
    pub fn has_full_rank(&mut self, action: usize) -> bool {
        let r = self.cfg.rank;
        self.fit(action).map(|f| f.own.numerical_rank() >= r).unwrap_or(false)
    }

    /// ‖z‖ in the pseudo-inverse of V̂(a) = ẐᵀẐ + ρP̂, i.e. measured inside
    /// the learned subspace.
    pub fn elliptical_norm(&mut self, action: usize, z: &DVector<f64>) -> Result<f64> {
        if z.len() != self.cfg.dim {
            return Err(Error::InvalidInput(format!("vector has length {}, expected {}", z.len(), self.cfg.dim)));
        }
        let fit = self.fit(action)?;
        let coords = fit.basis.tr_mul(z);
        Ok(coords.dot(&(&fit.coord_inv * &coords)).max(0.0).sqrt())
    }

    /// U_n at the current global round count.
    pub fn noise_envelope(&self) -> Result<f64> {
        noise_opnorm_bound_u(self.rounds(), &self.cfg)
    }

    /// β_n(a): the squared confidence-ellipsoid radius for action a.
    pub fn radius_sq(&mut self, action: usize) -> Result<f64> {
        let u = self.noise_envelope()?;
        let cfg = self.cfg.clone();
        let s1 = self.fit(action)?.own.sigma(1);
        ellipsoid_radius_sq(&cfg, s1, u)
    }

    /// Bound on ‖θ̂_n(a) − θ(a)‖², or a sentinel before rank(Z_n(a)) = r and
    /// ŝnr_n(a) ≥ 2.
    pub fn empirical_error_bound(&mut self, action: usize) -> Result<BoundStatus> {
        let u = self.noise_envelope()?;
        let count = self.count(action);
        let cfg = self.cfg.clone();
        let r = cfg.rank;
        let own = &self.fit(action)?.own;
        let rank = own.numerical_rank();
        if rank < r {
            return Ok(BoundStatus::NotYetValid {
                reason: GateFailure::RankDeficient { rank },
                formula_value: None,
            });
        }
        let (s1, sr) = (own.sigma(1), own.sigma(r));
        let value = error_bound_from_parts(&cfg, s1, sr, u, count)?;
        let snr = empirical_snr(sr, u);
        if snr < 2.0 {
            return Ok(BoundStatus::NotYetValid { reason: GateFailure::LowSnr { snr }, formula_value: Some(value) });
        }
        Ok(BoundStatus::Valid(value))
    }

    pub fn rate_diagnostic(&mut self, action: usize) -> Result<RateDiagnostic> {
        let u = self.noise_envelope()?;
        let n = self.rounds();
        let r = self.cfg.rank;
        let d = self.cfg.dim;
        let own = &self.fit(action)?.own;
        let (s1, sr) = (own.sigma(1), own.sigma(r));
        if own.numerical_rank() < r {
            return Err(Error::DegenerateRank(format!("Z_n({action}) has rank below {r}")));
        }
        let kappa = s1 / sr;
        Ok(RateDiagnostic {
            snr_sq_inv_kappa_sq: kappa * kappa * u * u / (sr * sr),
            simp_rate: (r * r) as f64 / d.min(n) as f64,
        })
    }

    pub fn snr_report(&mut self, action: usize, true_x: Option<&DMatrix<f64>>) -> Result<SnrReport> {
        let u = self.noise_envelope()?;
        let r = self.cfg.rank;
        let sigma_r_z = self.fit(action)?.own.sigma(r);
        let true_snr = match true_x {
            None => None,
            Some(x) => {
                if x.shape() != (self.count(action), self.cfg.dim) {
                    return Err(Error::InvalidInput(format!(
                        "true covariates have shape {:?}, expected {:?}",
                        x.shape(),
                        (self.count(action), self.cfg.dim)
                    )));
                }
                Some(empirical_snr(truncated_svd(x, r)?.sigma(r), u))
            }
        };
        Ok(SnrReport { action, sigma_r_z, u_n: u, empirical_snr: empirical_snr(sigma_r_z, u), true_snr })
    }
}

fn empirical_snr(sigma_r: f64, u: f64) -> f64 {
    if sigma_r <= 0.0 {
        0.0
    } else if u <= 0.0 {
        f64::INFINITY
    } else {
        sigma_r / u
    }
}

/// err_n(a) = 32ρL² + 64η²(ln(A/δ) + r·ln(1 + σ₁²/ρ))
///          + 6η²√(2c·ℓ_δ(c)) + 10η²ℓ_δ(c) + 6cα.
pub fn error_term(cfg: &BoundConfig, sigma1: f64, count: usize) -> Result<f64> {
    let l2 = cfg.slope_bound * cfg.slope_bound;
    let eta2 = cfg.eta * cfg.eta;
    let log_term = (cfg.num_actions as f64 / cfg.delta).ln() + cfg.rank as f64 * (sigma1 * sigma1 / cfg.rho).ln_1p();
    let resp = if count == 0 {
        0.0
    } else {
        let ell = ell_delta(count, cfg.dim, cfg.delta)?;
        let c = count as f64;
        6.0 * eta2 * (2.0 * c * ell).sqrt() + 10.0 * eta2 * ell + 6.0 * c * cfg.alpha
    };
    Ok(32.0 * cfg.rho * l2 + 64.0 * eta2 * log_term + resp)
}

/// The empirical bound on ‖θ̂_n(a) − θ(a)‖²:
/// (L²/ŝnr²)(74 + 216κ²) + 2·err_n(a)/σ_r², with ŝnr = σ_r/U.
pub fn error_bound_from_parts(cfg: &BoundConfig, sigma1: f64, sigma_r: f64, u_n: f64, count: usize) -> Result<f64> {
    if !(sigma_r > 0.0) || sigma_r <= rank_cutoff(sigma1) {
        return Err(Error::DegenerateRank(format!("σ_r = {sigma_r:e} is at the rank tolerance")));
    }
    let kappa = sigma1 / sigma_r;
    let l2 = cfg.slope_bound * cfg.slope_bound;
    let inv_snr_sq = (u_n * u_n) / (sigma_r * sigma_r);
    let err = error_term(cfg, sigma1, count)?;
    Ok(l2 * inv_snr_sq * (74.0 + 216.0 * kappa * kappa) + 2.0 * err / (sigma_r * sigma_r))
}

/// Reference ridge fit over range(P): argmin ‖ZPθ − Y‖² + ρ‖θ‖² for θ in
/// range(P). Builds an orthonormal basis of range(P) from its eigenvectors
/// and solves the normal equations there with an LU factorisation, so it
/// shares no code path with [`PcrState::estimate`].
pub fn oracle_ridge_in_subspace(
    z: &DMatrix<f64>,
    y: &DVector<f64>,
    p: &DMatrix<f64>,
    rho: f64,
) -> Result<DVector<f64>> {
    if !(rho > 0.0) {
        return Err(Error::InvalidInput(format!("rho = {rho} must be positive")));
    }
    let d = z.ncols();
    if z.nrows() != y.len() || p.shape() != (d, d) {
        return Err(Error::InvalidInput("inconsistent shapes".into()));
    }
    let eig = SymmetricEigen::new((p + p.transpose()) * 0.5);
    let keep: Vec<usize> = (0..d).filter(|&i| eig.eigenvalues[i] > 0.5).collect();
    if keep.is_empty() {
        return Ok(DVector::zeros(d));
    }
    let q = DMatrix::from_fn(d, keep.len(), |i, j| eig.eigenvectors[(i, keep[j])]);
    let b = z * &q;
    let lhs = b.transpose() * &b + DMatrix::identity(keep.len(), keep.len()) * rho;
    let rhs = b.transpose() * y;
    let w = lhs
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::DegenerateRank("singular reference system".into()))?;
    Ok(q * w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn cfg(d: usize, r: usize, a: usize) -> BoundConfig {
        BoundConfig { slope_bound: 1e6, ..BoundConfig::new(d, r, a) }
    }

    #[test]
    fn counting() {
        let mut s = PcrState::new(cfg(2, 1, 2)).unwrap();
        s.observe(&[1.0, 0.0], 0, 1.0).unwrap();
        assert_eq!((s.count(0), s.rounds()), (1, 1));
        s.observe(&[0.0, 1.0], 1, 1.0).unwrap();
        assert_eq!((s.count(0), s.count(1), s.rounds()), (1, 1, 2));
        for i in 0..98 {
            s.observe(&[i as f64, 1.0], i % 2, 0.0).unwrap();
        }
        assert_eq!(s.count(0) + s.count(1), 100);
    }

    #[test]
    fn observe_rejects_bad_input() {
        let mut s = PcrState::new(cfg(2, 1, 1)).unwrap();
        assert!(s.observe(&[1.0], 0, 1.0).is_err());
        assert!(s.observe(&[1.0, 2.0], 1, 1.0).is_err());
        assert!(s.observe(&[f64::NAN, 2.0], 0, 1.0).is_err());
        assert_eq!(s.estimate(0), Err(Error::NoData(0)));
    }

    #[test]
    fn closed_form_example() {
        let c = BoundConfig { rho: 1.0, ..cfg(2, 2, 1) };
        let mut s = PcrState::new(c).unwrap();
        s.observe(&[1.0, 0.0], 0, 3.0).unwrap();
        s.observe(&[0.0, 1.0], 0, 4.0).unwrap();
        let t = s.estimate(0).unwrap();
        assert!((t[0] - 1.5).abs() < 1e-12 && (t[1] - 2.0).abs() < 1e-12, "{t}");
    }

    #[test]
    fn zero_response_gives_zero() {
        let mut s = PcrState::new(cfg(3, 2, 1)).unwrap();
        s.observe(&[1.0, 2.0, 0.5], 0, 0.0).unwrap();
        s.observe(&[0.0, 1.0, -1.0], 0, 0.0).unwrap();
        assert_eq!(s.estimate(0).unwrap().amax(), 0.0);
    }

    #[test]
    fn clamp_rescales_to_l() {
        let c = BoundConfig { rho: 1.0, slope_bound: 1.0, ..BoundConfig::new(2, 2, 1) };
        let mut s = PcrState::new(c).unwrap();
        s.observe(&[1.0, 0.0], 0, 3.0).unwrap();
        s.observe(&[0.0, 1.0], 0, 4.0).unwrap();
        let t = s.estimate(0).unwrap();
        assert!((t.norm() - 1.0).abs() < 1e-12);
        assert!((t[0] / t[1] - 0.75).abs() < 1e-12);
        assert_eq!(s.clamp_events(), 1);
    }

    #[test]
    fn matches_oracle_on_random_instance() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut s = PcrState::new(cfg(6, 2, 1)).unwrap();
        for _ in 0..30 {
            let z: Vec<f64> = (0..6).map(|_| rng.sample(StandardNormal)).collect();
            s.observe(&z, 0, rng.sample(StandardNormal)).unwrap();
        }
        let theta = s.estimate(0).unwrap();
        let p = s.projector(0).unwrap();
        let oracle = oracle_ridge_in_subspace(&s.design(0), &s.responses(0), &p, 0.01).unwrap();
        assert!((theta - oracle).amax() < 1e-8);
    }

    #[test]
    fn oracle_edge_cases() {
        let z = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let y = DVector::from_column_slice(&[1.0, -1.0]);
        assert_eq!(oracle_ridge_in_subspace(&z, &y, &DMatrix::zeros(2, 2), 1.0).unwrap().amax(), 0.0);
        let full = oracle_ridge_in_subspace(&z, &y, &DMatrix::identity(2, 2), 0.5).unwrap();
        let ridge = (z.transpose() * &z + DMatrix::identity(2, 2) * 0.5).try_inverse().unwrap() * z.transpose() * &y;
        assert!((full - ridge).amax() < 1e-12);
        assert!(oracle_ridge_in_subspace(&z, &y, &DMatrix::identity(2, 2), 0.0).is_err());
    }

    #[test]
    fn global_scope_uses_pooled_subspace() {
        let mut s = PcrState::with_scope(cfg(3, 1, 2), ProjectorScope::Global).unwrap();
        s.observe(&[1.0, 0.0, 0.0], 0, 1.0).unwrap();
        s.observe(&[0.0, 5.0, 0.0], 1, 1.0).unwrap();
        // The pooled top direction is e2, which action 0 never saw.
        let t = s.estimate(0).unwrap();
        assert!(t.amax() < 1e-12);
        let p = s.projector(0).unwrap();
        assert!((p[(1, 1)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn snr_examples() {
        assert_eq!(empirical_snr(10.0, 5.0), 2.0);
        let mut s = PcrState::new(BoundConfig::new(2, 1, 1)).unwrap();
        s.observe(&[0.0, 0.0], 0, 1.0).unwrap();
        let rep = s.snr_report(0, None).unwrap();
        assert_eq!(rep.empirical_snr, 0.0);
        assert!(rep.true_snr.is_none());
    }

    #[test]
    fn rate_diagnostic_simp_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut s = PcrState::new(BoundConfig::new(100, 3, 1)).unwrap();
        for _ in 0..16 {
            let z: Vec<f64> = (0..100).map(|_| rng.sample(StandardNormal)).collect();
            s.observe(&z, 0, 0.0).unwrap();
        }
        let diag = s.rate_diagnostic(0).unwrap();
        assert!((diag.simp_rate - 9.0 / 16.0).abs() < 1e-15);
    }

    #[test]
    fn bound_is_sentinel_before_rank() {
        let mut s = PcrState::new(BoundConfig::new(3, 2, 1)).unwrap();
        s.observe(&[1.0, 0.0, 0.0], 0, 1.0).unwrap();
        let b = s.empirical_error_bound(0).unwrap();
        assert!(matches!(b, BoundStatus::NotYetValid { reason: GateFailure::RankDeficient { rank: 1 }, .. }));
    }

    #[test]
    fn noiseless_bound_vanishes() {
        let c = BoundConfig {
            slope_bound: 0.0,
            rho: 1e-300,
            ..BoundConfig::new(2, 2, 1).with_gaussian_noise(0.0, 0.0)
        };
        let v = error_bound_from_parts(&c, 3.0, 1.0, 0.0, 10).unwrap();
        assert!(v < 1e-9, "{v}");
    }
}
