use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::Integrator;

use super::efficiency::spectral_efficiency_with;
use super::fixed::{solve_monotone, Controls};
use super::maps::{eps_mimo2_eval, inner_given_eps, mimo_level, mmse_at, xi_update, MimoLevel};
use super::{ClassState, FixedPointState, Regime, SEReport, SolverConfig, SystemParams};

/// Where an iteration was started.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StartKind {
    /// Supplied state, typically the neighbouring sweep point.
    Warm,
    /// `r = sigma2`, every symbol known.
    Low,
    /// `r = sigma2 + beta sum w mu P`, nothing detected.
    High,
}

/// One converged solution with its spectral efficiency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub state: FixedPointState,
    pub report: SEReport,
    pub start: StartKind,
}

/// All distinct fixed points reached from the low and high starts, sorted
/// by ascending `se_total`. `result[0]` is the selected solution.
pub fn solve(params: &SystemParams, config: &SolverConfig) -> Result<Vec<Branch>> {
    solve_from(params, config, None)
}

/// As [`solve`], with an extra start from `warm`.
pub fn solve_from(
    params: &SystemParams,
    config: &SolverConfig,
    warm: Option<&FixedPointState>,
) -> Result<Vec<Branch>> {
    params.validate()?;
    config.validate()?;
    let rule = config.integrator()?;

    let mut starts = Vec::with_capacity(3);
    if let Some(w) = warm {
        if w.classes.len() != params.classes.len() {
            return Err(Error::Dimension(format!(
                "warm start has {} classes, expected {}",
                w.classes.len(),
                params.classes.len()
            )));
        }
        starts.push((
            StartKind::Warm,
            w.r,
            w.classes.iter().map(|c| c.eps_awgn).collect::<Vec<_>>(),
        ));
    }
    starts.push((
        StartKind::Low,
        params.sigma2,
        vec![0.0; params.classes.len()],
    ));
    starts.push((
        StartKind::High,
        params.uncoded_noise(),
        params.classes.iter().map(|c| c.power()).collect(),
    ));

    let mut branches: Vec<Branch> = Vec::new();
    let mut failures = Vec::new();
    for (kind, r0, eps0) in starts {
        let (state, iterations) = match run_start(params, config, &rule, r0, eps0) {
            Ok(v) => v,
            Err(Error::NonConvergence { residual, .. }) => {
                failures.push(residual);
                continue;
            }
            Err(Error::ResidualTooLarge { residual, .. }) => {
                failures.push(residual);
                continue;
            }
            Err(e) => return Err(e),
        };
        if branches
            .iter()
            .any(|b| same_state(&b.state, &state, 10.0 * config.tol))
        {
            continue;
        }
        let mut report = spectral_efficiency_with(params, &state, config, &rule)?;
        report.iterations = iterations;
        branches.push(Branch {
            state,
            report,
            start: kind,
        });
    }
    if branches.is_empty() {
        return Err(Error::NoBranch {
            best_residuals: failures,
        });
    }

    order_branches(&mut branches);
    Ok(branches)
}

fn run_start(
    params: &SystemParams,
    config: &SolverConfig,
    rule: &Integrator,
    r0: f64,
    mut eps: Vec<f64>,
) -> Result<(FixedPointState, usize)> {
    let inner = |r: f64, eps: &mut Vec<f64>| -> Result<Vec<MimoLevel>> {
        let mut levels = Vec::with_capacity(params.classes.len());
        for (class, e) in params.classes.iter().zip(eps.iter_mut()) {
            let level = mimo_level(r, class, config, rule, *e)?;
            *e = level.eps_awgn;
            levels.push(level);
        }
        Ok(levels)
    };
    let interference = |r: f64, levels: &[MimoLevel]| -> f64 {
        params
            .classes
            .iter()
            .zip(levels)
            .map(|(c, l)| c.weight * l.eps_user(r, c.rho))
            .sum()
    };

    let hi = params.uncoded_noise() * (1.0 + 1e-12);
    let controls = Controls {
        tol: 0.1 * config.tol,
        damping: config.damping,
        max_iter: config.max_outer,
        lo: params.sigma2,
        hi,
        floor: params.sigma2,
        stage: "cdma level",
    };
    let map = |r: f64| -> Result<f64> {
        let levels = inner(r, &mut eps)?;
        Ok(params.sigma2 + params.beta * interference(r, &levels))
    };
    let (r, iterations) = solve_monotone(map, r0, &controls)?;

    // inner solutions at the returned r, continued from the last evaluation
    let state = assemble(params, config, rule, r, &eps)?;
    if state.residual > config.tol {
        return Err(Error::ResidualTooLarge {
            residual: state.residual,
            tolerance: config.tol,
        });
    }
    Ok((state, iterations))
}

/// Fixed-point state at noise `r` with inner solutions started from `eps`.
/// The residual field is filled in.
fn assemble(
    params: &SystemParams,
    config: &SolverConfig,
    rule: &Integrator,
    r: f64,
    eps: &[f64],
) -> Result<FixedPointState> {
    let mut classes = Vec::with_capacity(params.classes.len());
    for (class, &e0) in params.classes.iter().zip(eps) {
        let l = mimo_level(r, class, config, rule, e0)?;
        classes.push(ClassState {
            xi2: l.xi2,
            zeta2: l.zeta2,
            eps_awgn: l.eps_awgn,
            eps_mimo2: l.eps_mimo2,
            eps_user: l.eps_user(r, class.rho),
        });
    }
    let mut state = FixedPointState {
        r,
        classes,
        residual: f64::NAN,
    };
    state.residual = state_residual(params, &state, config, rule)?;
    Ok(state)
}

/// Sorts by ascending `se_total` and renumbers `branch_id`.
pub(crate) fn order_branches(branches: &mut [Branch]) {
    branches.sort_by(|a, b| a.report.se_total.total_cmp(&b.report.se_total));
    // numerically equal efficiencies: prefer the larger noise level
    for i in 1..branches.len() {
        let (a, b) = (&branches[i - 1], &branches[i]);
        let tie = (a.report.se_total - b.report.se_total).abs()
            <= 1e-12 * a.report.se_total.abs().max(1.0);
        if tie && b.state.r > a.state.r {
            branches.swap(i - 1, i);
        }
    }
    for (i, b) in branches.iter_mut().enumerate() {
        b.report.branch_id = i;
    }
}

fn rel(a: f64, b: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

/// Largest relative residual of every update map at `state`.
pub fn state_residual(
    params: &SystemParams,
    state: &FixedPointState,
    config: &SolverConfig,
    rule: &Integrator,
) -> Result<f64> {
    if state.classes.len() != params.classes.len() {
        return Err(Error::Dimension(format!(
            "state has {} classes, expected {}",
            state.classes.len(),
            params.classes.len()
        )));
    }
    let r = state.r;
    let mut worst: f64 = 0.0;
    let mut interference = 0.0;
    for (class, s) in params.classes.iter().zip(&state.classes) {
        let eps = s.eps_awgn;
        let (zeta_rhs, xi_rhs, e2_rhs) = match config.regime {
            Regime::Scatterers => {
                let e2 = eps_mimo2_eval(s.zeta2, class.gamma, &class.gains, eps)?;
                (
                    r + class.rho * e2,
                    xi_update(s.zeta2, class.gamma, &class.gains, eps)?,
                    e2,
                )
            }
            Regime::RichScattering => {
                let (z, x, e2) = inner_given_eps(r, class, config.regime, eps)?;
                (z, x, e2)
            }
        };
        let eps_rhs = mmse_at(class, s.xi2, rule)?;
        let d = class.rho * s.eps_mimo2;
        let user_rhs = r * d / (r + d);
        worst = worst
            .max(rel(s.zeta2, zeta_rhs))
            .max(rel(s.xi2, xi_rhs))
            .max(rel(eps, eps_rhs))
            .max(rel(s.eps_mimo2, e2_rhs))
            .max(rel(s.eps_user, user_rhs));
        interference += class.weight * s.eps_user;
    }
    worst = worst.max(rel(r, params.sigma2 + params.beta * interference));
    Ok(if worst.is_nan() { f64::INFINITY } else { worst })
}

pub(crate) fn same_state(a: &FixedPointState, b: &FixedPointState, tol: f64) -> bool {
    rel(a.r, b.r) < tol
        && a.classes.iter().zip(&b.classes).all(|(x, y)| {
            rel(x.eps_awgn, y.eps_awgn) < tol && rel(x.zeta2, y.zeta2) < tol
        })
}
