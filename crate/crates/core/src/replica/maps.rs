use crate::error::{ensure_positive, Error, Result};
use crate::quadrature::Integrator;
use crate::scalar;

use super::fixed::{solve_monotone, Controls};
use super::{Regime, ScatterGainLaw, SolverConfig, SystemParams, UserClass};

const LOG2_E: f64 = std::f64::consts::LOG2_E;

/// KL divergence per complex dimension between `CN(0, s0 I)` and
/// `CN(0, s1 I)`, in bits.
pub fn kl_iso(sigma0_sq: f64, sigma1_sq: f64) -> Result<f64> {
    ensure_positive("sigma0_sq", sigma0_sq)?;
    ensure_positive("sigma1_sq", sigma1_sq)?;
    let u = sigma0_sq / sigma1_sq - 1.0;
    // u - ln(1 + u), with the series near u = 0 where the subtraction cancels
    let nats = if u.abs() < 0.05 {
        let mut acc = 0.0;
        for k in (2..=16).rev() {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            acc = sign / k as f64 + u * acc;
        }
        // acc = 1/2 - u/3 + u^2/4 - ...
        u * u * acc
    } else {
        u - u.ln_1p()
    };
    Ok(nats.max(0.0) * LOG2_E)
}

/// Scalar-channel noise `xi2` seen by one transmit antenna:
/// `[E |A|^2 / (zeta2 + gamma eps |A|^2)]^-1`, `+inf` when every gain is zero.
pub fn xi_update(zeta2: f64, gamma: f64, gains: &ScatterGainLaw, eps_awgn: f64) -> Result<f64> {
    ensure_positive("zeta2", zeta2)?;
    let a = gamma * eps_awgn;
    let inv = gains.expect(|g| if g == 0.0 { 0.0 } else { g / (zeta2 + a * g) });
    Ok(if inv > 0.0 { 1.0 / inv } else { f64::INFINITY })
}

/// Scatterer-level error `E[zeta2 - zeta2^2 / (zeta2 + gamma eps |A|^2)]`.
pub fn eps_mimo2_eval(zeta2: f64, gamma: f64, gains: &ScatterGainLaw, eps_awgn: f64) -> Result<f64> {
    ensure_positive("zeta2", zeta2)?;
    if !(eps_awgn >= 0.0) {
        return Err(Error::InvalidParams(format!("eps_awgn = {eps_awgn}")));
    }
    let a = gamma * eps_awgn;
    Ok(gains.expect(|g| {
        let b = a * g;
        if b == 0.0 {
            0.0
        } else {
            zeta2 * b / (zeta2 + b)
        }
    }))
}

/// Root of `z = r + rho E[z b / (z + b)]`, `b = gamma eps |A|^2`, for fixed
/// `eps`. The right side is concave in `z`, so Newton from the upper bound
/// `r + rho E[b]` decreases monotonically onto the unique root.
pub fn solve_zeta2(
    r: f64,
    rho: f64,
    gamma: f64,
    gains: &ScatterGainLaw,
    eps_awgn: f64,
) -> Result<f64> {
    ensure_positive("r", r)?;
    let a = gamma * eps_awgn;
    let upper = r + rho * a * gains.expect(|g| g);
    if upper == r {
        return Ok(r);
    }
    let mut z = upper;
    for _ in 0..200 {
        let (mut h, mut dh) = (0.0, 0.0);
        for &(g, w) in gains.atoms() {
            let b = a * g;
            if b > 0.0 {
                let d = z + b;
                h += w * z * b / d;
                dh += w * (b / d) * (b / d);
            }
        }
        let f = r + rho * h - z;
        let df = rho * dh - 1.0;
        if f >= 0.0 || df >= 0.0 {
            return Ok(z);
        }
        let step = f / df;
        let next = (z - step).max(r);
        if step <= 1e-16 * z || next == z {
            return Ok(next);
        }
        z = next;
    }
    Err(Error::NonConvergence {
        stage: "zeta2",
        iterations: 200,
        residual: f64::NAN,
    })
}

/// Converged inner solution of one class at a given CDMA-level noise `r`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MimoLevel {
    pub zeta2: f64,
    pub xi2: f64,
    pub eps_awgn: f64,
    pub eps_mimo2: f64,
    pub iterations: usize,
}

impl MimoLevel {
    /// Isotropic receive-domain error `r - r^2 / (r + rho eps_mimo2)`.
    pub fn eps_user(&self, r: f64, rho: f64) -> f64 {
        let d = rho * self.eps_mimo2;
        r * d / (r + d)
    }
}

/// Scatterer-level quantities for a given `eps_awgn`.
pub(crate) fn inner_given_eps(
    r: f64,
    class: &UserClass,
    regime: Regime,
    eps: f64,
) -> Result<(f64, f64, f64)> {
    match regime {
        Regime::Scatterers => {
            let zeta2 = solve_zeta2(r, class.rho, class.gamma, &class.gains, eps)?;
            let xi2 = xi_update(zeta2, class.gamma, &class.gains, eps)?;
            let eps_mimo2 = eps_mimo2_eval(zeta2, class.gamma, &class.gains, eps)?;
            Ok((zeta2, xi2, eps_mimo2))
        }
        Regime::RichScattering => {
            let zeta2 = r + class.mu * eps;
            Ok((zeta2, zeta2, class.mu * eps / class.rho))
        }
    }
}

pub(crate) fn mmse_at(class: &UserClass, xi2: f64, rule: &Integrator) -> Result<f64> {
    if xi2.is_infinite() {
        return Ok(class.power());
    }
    scalar::mmse(&class.constellation, xi2, rule)
}

/// Solves the scatterer and scalar levels of one class at noise `r`,
/// iterating on `eps_awgn` from `eps_start`.
pub fn mimo_level(
    r: f64,
    class: &UserClass,
    config: &SolverConfig,
    rule: &Integrator,
    eps_start: f64,
) -> Result<MimoLevel> {
    ensure_positive("r", r)?;
    let p = class.power();
    let controls = Controls {
        tol: config.inner_tol,
        damping: config.damping,
        max_iter: config.max_inner,
        lo: 0.0,
        hi: p,
        floor: p * 1e-300,
        stage: "mimo level",
    };
    let map = |eps: f64| -> Result<f64> {
        let (_, xi2, _) = inner_given_eps(r, class, config.regime, eps)?;
        mmse_at(class, xi2, rule)
    };
    let (eps, iterations) = solve_monotone(map, eps_start.clamp(0.0, p), &controls)?;
    let (zeta2, xi2, eps_mimo2) = inner_given_eps(r, class, config.regime, eps)?;
    Ok(MimoLevel {
        zeta2,
        xi2,
        eps_awgn: eps,
        eps_mimo2,
        iterations,
    })
}

/// `r - [sigma2 + beta sum_k w_k eps_user_k]` for per-class inner solutions
/// computed at this `r`.
pub fn cdma_level_residual(r: f64, params: &SystemParams, levels: &[MimoLevel]) -> Result<f64> {
    ensure_positive("r", r)?;
    if levels.len() != params.classes.len() {
        return Err(Error::Dimension(format!(
            "{} inner solutions for {} classes",
            levels.len(),
            params.classes.len()
        )));
    }
    let interference: f64 = params
        .classes
        .iter()
        .zip(levels)
        .map(|(c, l)| c.weight * l.eps_user(r, c.rho))
        .sum();
    Ok(r - (params.sigma2 + params.beta * interference))
}
