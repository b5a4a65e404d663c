//! Scalar formula checks against committed reference values.
//!
//! The expected values were evaluated once at 40 significant digits by an
//! independent arbitrary-precision implementation of each formula and are
//! stored here rounded to 20 digits.

use crate::concentration::{ell_delta, ellipsoid_radius_sq, noise_opnorm_bound_u, BoundConfig, NoiseRegime};
use crate::error::Result;
use crate::panel::{prediction_error_bound, PanelBoundInputs};
use crate::pcr::{error_bound_from_parts, error_term};

pub const REL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct SelftestCase {
    pub name: &'static str,
    pub expected: f64,
    pub actual: f64,
}

impl SelftestCase {
    pub fn rel_error(&self) -> f64 {
        (self.actual - self.expected).abs() / self.expected.abs().max(f64::MIN_POSITIVE)
    }

    pub fn passed(&self) -> bool {
        self.rel_error() <= REL_TOL
    }
}

fn subgaussian(dim: usize, sigma: f64, gamma: f64, delta: f64) -> BoundConfig {
    BoundConfig { dim, sigma, gamma, delta, ..Default::default() }
}

fn bounded(dim: usize, c: f64, gamma: f64, delta: f64) -> BoundConfig {
    BoundConfig { dim, noise_bound_c: c, gamma, delta, regime: NoiseRegime::Bounded, ..Default::default() }
}

/// L = 1, η = 1, α = 1, ρ = 0.01, A = 2, r = 2, d = 5, δ = 0.05.
fn error_term_config() -> BoundConfig {
    BoundConfig {
        slope_bound: 1.0,
        eta: 1.0,
        alpha: 1.0,
        rho: 0.01,
        num_actions: 2,
        rank: 2,
        dim: 5,
        delta: 0.05,
        ..Default::default()
    }
}

/// Evaluates every case. Errors only if a formula rejects its inputs.
pub fn run() -> Result<Vec<SelftestCase>> {
    let case = |name, expected, actual| SelftestCase { name, expected, actual };
    let radius_cfg = BoundConfig {
        slope_bound: 1.5,
        eta: 0.3,
        rho: 0.01,
        num_actions: 3,
        rank: 2,
        delta: 0.05,
        ..Default::default()
    };
    let panel = PanelBoundInputs {
        snr: 3.0,
        kappa: 1.5,
        sigma_r: 40.0,
        err: 12.5,
        t_total: 40,
        t_pre: 20,
        slope_bound: 2.0,
        sigma: 0.1,
        num_actions: 2,
        delta: 0.05,
    };
    Ok(vec![
        case("ell_delta(n=2,d=2,delta=0.05)", 4.146_701_095_981_298_250_2, ell_delta(2, 2, 0.05)?),
        case("ell_delta(n=1000,d=20,delta=0.01)", 11.461_989_551_291_450_643, ell_delta(1000, 20, 0.01)?),
        case(
            "u_subgaussian(n=500,d=10,sigma=1)",
            378.399_698_737_404_924_06,
            noise_opnorm_bound_u(500, &subgaussian(10, 1.0, 1.0, 0.05))?,
        ),
        case(
            "u_subgaussian(n=50,d=20,sigma=0.1)",
            34.516_258_278_705_277_938,
            noise_opnorm_bound_u(50, &subgaussian(20, 0.1, 0.01, 0.05))?,
        ),
        case("u_bounded(n=4,d=1,c=1,gamma=1)", 4.488_390_714_072_863_835, noise_opnorm_bound_u(4, &bounded(1, 1.0, 1.0, 0.05))?),
        case(
            "u_bounded(n=100,d=5,c=2,gamma=0.5)",
            17.424_056_121_554_393_843,
            noise_opnorm_bound_u(100, &bounded(5, 2.0, 0.5, 0.1))?,
        ),
        case("ellipsoid_radius_sq(sigma1=12,u=4)", 88.826_004_300_540_142_17, ellipsoid_radius_sq(&radius_cfg, 12.0, 4.0)?),
        case("err_n(sigma1=10,count=20)", 1706.093_509_173_785_146_8, error_term(&error_term_config(), 10.0, 20)?),
        case(
            "error_bound(sigma1=10,sigma_r=5,u=2,count=20)",
            286.567_480_733_902_811_74,
            error_bound_from_parts(&error_term_config(), 10.0, 5.0, 2.0, 20)?,
        ),
        case("panel_prediction_bound", 15.115_117_801_047_438_761, prediction_error_bound(&panel)?),
    ])
}
