use crate::error::{Error, Result};
use crate::quadrature::Integrator;
use crate::scalar;

use super::maps::kl_iso;
use super::solver::state_residual;
use super::{ClassReport, FixedPointState, Regime, SEReport, SolverConfig, SystemParams};

/// Spectral efficiency at a fixed point. Fails when `fp` does not satisfy
/// the update maps to `config.tol`.
pub fn spectral_efficiency(
    params: &SystemParams,
    fp: &FixedPointState,
    config: &SolverConfig,
) -> Result<SEReport> {
    params.validate()?;
    config.validate()?;
    spectral_efficiency_with(params, fp, config, &config.integrator()?)
}

pub(crate) fn spectral_efficiency_with(
    params: &SystemParams,
    fp: &FixedPointState,
    config: &SolverConfig,
    rule: &Integrator,
) -> Result<SEReport> {
    let residual = state_residual(params, fp, config, rule)?;
    if !(residual <= config.tol) {
        return Err(Error::ResidualTooLarge {
            residual,
            tolerance: config.tol,
        });
    }
    let mu_bar = params.mu_bar();
    let mut classes = Vec::with_capacity(params.classes.len());
    let (mut total, mut mmse_detector) = (0.0, 0.0);
    for (class, s) in params.classes.iter().zip(&fp.classes) {
        let c_awgn = if s.xi2.is_infinite() {
            0.0
        } else {
            scalar::mutual_info(&class.constellation, s.xi2, rule)?
        };
        let kl_scatter_term = match config.regime {
            Regime::Scatterers => {
                let mut acc = 0.0;
                for &(g, w) in class.gains.atoms() {
                    let b = class.gamma * s.eps_awgn * g;
                    if b > 0.0 {
                        acc += w * kl_iso(s.zeta2, s.zeta2 + b)?;
                    }
                }
                acc / class.gamma
            }
            Regime::RichScattering => 0.0,
        };
        let kl_mimo_term = kl_iso(fp.r, s.zeta2)? / class.mu;
        let share = class.weight * params.beta * class.mu / mu_bar;
        total += share * (c_awgn + kl_scatter_term + kl_mimo_term);
        mmse_detector += share * c_awgn;
        classes.push(ClassReport {
            c_awgn,
            kl_scatter_term,
            kl_mimo_term,
        });
    }
    let kl_cdma_term = kl_iso(params.sigma2, fp.r)? / mu_bar;
    Ok(SEReport {
        se_total: total + kl_cdma_term,
        se_mmse_detector: mmse_detector,
        classes,
        kl_cdma_term,
        branch_id: 0,
        converged: true,
        iterations: 0,
    })
}
