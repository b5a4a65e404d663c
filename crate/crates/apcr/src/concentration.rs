//! Closed-form concentration envelopes: the iterated-logarithm boundary
//! ℓ_δ(n), the stitched subGamma bound, the operator-norm envelope U_n on
//! the covariate noise, and the self-normalized ellipsoid radius.

use std::f64::consts::{E, PI};

use crate::error::{Error, Result};

/// How the covariate noise is controlled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoiseRegime {
    /// σ-subGaussian noise rows with E‖ε‖² ≤ dγ.
    #[default]
    SubGaussian,
    /// ‖ε‖² ≤ C·d almost surely, E‖ε‖² ≤ dγ.
    Bounded,
}

impl NoiseRegime {
    pub fn name(self) -> &'static str {
        match self {
            NoiseRegime::SubGaussian => "subgaussian",
            NoiseRegime::Bounded => "bounded",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "subgaussian" => Ok(NoiseRegime::SubGaussian),
            "bounded" => Ok(NoiseRegime::Bounded),
            other => Err(Error::Config(format!("unknown noise regime {other:?}"))),
        }
    }
}

/// Parameters shared by every bound in the crate.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundConfig {
    /// Failure probability δ ∈ (0, 1).
    pub delta: f64,
    /// Ridge parameter ρ > 0.
    pub rho: f64,
    /// Covariate noise subGaussian scale σ.
    pub sigma: f64,
    /// Response noise subGaussian scale η.
    pub eta: f64,
    /// Per-coordinate covariate noise variance bound γ.
    pub gamma: f64,
    /// Response noise variance bound α.
    pub alpha: f64,
    /// Slope norm bound L.
    pub slope_bound: f64,
    /// Constant C of the bounded regime.
    pub noise_bound_c: f64,
    /// Latent rank r.
    pub rank: usize,
    /// Ambient dimension d.
    pub dim: usize,
    /// Number of actions A.
    pub num_actions: usize,
    pub regime: NoiseRegime,
}

impl Default for BoundConfig {
    fn default() -> Self {
        BoundConfig {
            delta: 0.05,
            rho: 0.01,
            sigma: 0.1,
            eta: 0.1,
            gamma: 0.01,
            alpha: 0.01,
            slope_bound: 1.0,
            noise_bound_c: 1.0,
            rank: 1,
            dim: 1,
            num_actions: 1,
            regime: NoiseRegime::SubGaussian,
        }
    }
}

impl BoundConfig {
    pub fn new(dim: usize, rank: usize, num_actions: usize) -> Self {
        BoundConfig { dim, rank, num_actions, ..Default::default() }
    }

    /// Gaussian covariate and response noise: γ = σ², α = η².
    pub fn with_gaussian_noise(mut self, sigma: f64, eta: f64) -> Self {
        self.sigma = sigma;
        self.gamma = sigma * sigma;
        self.eta = eta;
        self.alpha = eta * eta;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(what.to_string()));
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad("delta must lie in (0, 1)");
        }
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return bad("rho must be positive and finite");
        }
        for (name, v) in [
            ("sigma", self.sigma),
            ("eta", self.eta),
            ("gamma", self.gamma),
            ("alpha", self.alpha),
            ("slope_bound", self.slope_bound),
            ("noise_bound_c", self.noise_bound_c),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and nonnegative")));
            }
        }
        if self.dim == 0 || self.rank == 0 || self.num_actions == 0 {
            return bad("dim, rank and num_actions must be at least 1");
        }
        if self.rank > self.dim {
            return bad("rank must not exceed dim");
        }
        Ok(())
    }

    /// Key/value view used by config files and state snapshots.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("delta", self.delta.to_string()),
            ("rho", self.rho.to_string()),
            ("sigma", self.sigma.to_string()),
            ("eta", self.eta.to_string()),
            ("gamma", self.gamma.to_string()),
            ("alpha", self.alpha.to_string()),
            ("slope_bound", self.slope_bound.to_string()),
            ("noise_bound_c", self.noise_bound_c.to_string()),
            ("rank", self.rank.to_string()),
            ("dim", self.dim.to_string()),
            ("num_actions", self.num_actions.to_string()),
            ("regime", self.regime.name().to_string()),
        ]
    }

    /// Sets one field by name. Returns `Ok(false)` for keys this struct
    /// does not own so callers can route them elsewhere.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
        }
        match key {
            "delta" => self.delta = num(key, value)?,
            "rho" => self.rho = num(key, value)?,
            "sigma" => self.sigma = num(key, value)?,
            "eta" => self.eta = num(key, value)?,
            "gamma" => self.gamma = num(key, value)?,
            "alpha" => self.alpha = num(key, value)?,
            "slope_bound" => self.slope_bound = num(key, value)?,
            "noise_bound_c" => self.noise_bound_c = num(key, value)?,
            "rank" => self.rank = num(key, value)?,
            "dim" => self.dim = num(key, value)?,
            "num_actions" => self.num_actions = num(key, value)?,
            "regime" => self.regime = NoiseRegime::parse(value.trim())?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("delta = {delta} must be positive")))
    }
}

/// ℓ_δ(n) = max(0, 2·ln ln(2n) + ln(dπ²/(12δ))).
pub fn ell_delta(n: usize, d: usize, delta: f64) -> Result<f64> {
    check_delta(delta)?;
    if n == 0 || d == 0 {
        return Err(Error::InvalidInput("ell_delta needs n >= 1 and d >= 1".into()));
    }
    Ok(ell_shifted(n, d, delta, 0.0))
}

// ℓ at a confidence level δ·e^{-shift}, kept in log space so the 17^d
// covering number never has to be formed.
fn ell_shifted(n: usize, d: usize, delta: f64, shift: f64) -> f64 {
    let n = n as f64;
    let raw = 2.0 * (2.0 * n).ln().ln() + (d as f64 * PI * PI / (12.0 * delta)).ln() + shift;
    raw.max(0.0)
}

/// 1.5·σ_g·√(n·ℓ_δ(n)) + 2.5·c·ℓ_δ(n): the time-uniform envelope for a sum
/// of (σ_g, c)-subGamma increments.
pub fn stitched_subgamma_bound(n: usize, sigma_g: f64, c: f64, d: usize, delta: f64) -> Result<f64> {
    if !(sigma_g >= 0.0 && c >= 0.0) {
        return Err(Error::InvalidInput("subGamma parameters must be nonnegative".into()));
    }
    let ell = ell_delta(n, d, delta)?;
    Ok(1.5 * sigma_g * (n as f64 * ell).sqrt() + 2.5 * c * ell)
}

/// U_n, the envelope on ‖E_n‖_op that holds for all n at once with
/// probability 1 − δ. U_0 = 0.
pub fn noise_opnorm_bound_u(n: usize, cfg: &BoundConfig) -> Result<f64> {
    check_delta(cfg.delta)?;
    if n == 0 {
        return Ok(0.0);
    }
    let nf = n as f64;
    let d = cfg.dim;
    let u_sq = match cfg.regime {
        NoiseRegime::SubGaussian => {
            // Union bound over a 1/4-net of the sphere (N = 17^d) at δ/(2N).
            let shift = 2f64.ln() + d as f64 * 17f64.ln();
            let ell = ell_shifted(n, d, cfg.delta, shift);
            let beta = 32.0 * cfg.sigma * cfg.sigma * E * E;
            beta * (3.0 * (nf * ell).sqrt() + 5.0 * ell) + nf * cfg.gamma
        }
        NoiseRegime::Bounded => {
            let ell = ell_shifted(n, d, cfg.delta, 0.0);
            let cd = cfg.noise_bound_c * d as f64;
            1.5 * (nf * cd * cfg.gamma * ell).sqrt() + 7.0 / 3.0 * cd * ell + nf * cfg.gamma
        }
    };
    Ok(u_sq.max(0.0).sqrt())
}

/// r·ln(1 + σ₁²/ρ), where σ₁ is the top singular value of Z (so σ₁² is the
/// top eigenvalue of ZᵀZ). Upper-bounds ln det(I + ρ⁻¹ZᵀZ) restricted to a
/// rank-r space.
pub fn det_trace_log_bound(r: usize, sigma1: f64, rho: f64) -> Result<f64> {
    if !(rho > 0.0) {
        return Err(Error::InvalidInput(format!("rho = {rho} must be positive")));
    }
    Ok(r as f64 * (sigma1 * sigma1 / rho).ln_1p())
}

/// Squared radius of the confidence ellipsoid for θ̂ in the learned
/// subspace: 4ρL² + 8η²[ln(A/δ) + r·ln(1 + σ₁²/ρ)] + 2L²U².
pub fn ellipsoid_radius_sq(cfg: &BoundConfig, sigma1_z: f64, u_n: f64) -> Result<f64> {
    check_delta(cfg.delta)?;
    let l2 = cfg.slope_bound * cfg.slope_bound;
    let log_term = (cfg.num_actions as f64 / cfg.delta).ln() + det_trace_log_bound(cfg.rank, sigma1_z, cfg.rho)?;
    Ok(4.0 * cfg.rho * l2 + 8.0 * cfg.eta * cfg.eta * log_term + 2.0 * l2 * u_n * u_n)
}

/// Envelope on ‖Ξ_n(a)‖² after n_a responses:
/// 6η²√(2n_a·ℓ_δ(n_a)) + 10η²ℓ_δ(n_a) + n_a·α.
pub fn response_sq_norm_bound(n_a: usize, cfg: &BoundConfig) -> Result<f64> {
    if n_a == 0 {
        return Ok(0.0);
    }
    let ell = ell_delta(n_a, cfg.dim, cfg.delta)?;
    let eta2 = cfg.eta * cfg.eta;
    let n = n_a as f64;
    Ok(6.0 * eta2 * (2.0 * n * ell).sqrt() + 10.0 * eta2 * ell + n * cfg.alpha)
}

/// min(1, 2U/gap): the perturbation bound on ‖P̂ − P‖_op given the
/// singular gap σ_r − σ_{r+1} of the clean matrix.
pub fn projection_convergence_bound(sv_gap: f64, u_n: f64) -> Result<f64> {
    if !(sv_gap > 0.0) {
        return Err(Error::DegenerateGap(format!("singular gap {sv_gap} is not positive")));
    }
    Ok((2.0 * u_n / sv_gap).min(1.0))
}
