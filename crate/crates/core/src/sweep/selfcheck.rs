//! Fast invariant checks over the whole stack.

use serde::{Deserialize, Serialize};

use crate::constellation::Constellation;
use crate::error::{Error, Result};
use crate::oracle::{self, ChipLaw, Dims, OracleConfig, OracleInput};
use crate::par::Execution;
use crate::quadrature::Integrator;
use crate::replica::{solve, Regime, ScatterGainLaw, SolverConfig, SystemParams};
use crate::scalar;

use super::config::{Axis, BaseSpec, Directions, SweepConfig};
use super::run_sweep;
use super::table::fmt12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub passed: bool,
}

fn at_most(name: &str, value: f64, threshold: f64) -> Check {
    Check {
        name: name.into(),
        value,
        threshold,
        passed: value <= threshold,
    }
}

fn bisect(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    let flo = f(lo) > 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        if (f(mid) > 0.0) == flo {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Noise level of unit-power Gaussian inputs with rich scattering:
/// `r = sigma2 + beta r mu e / (r + mu e)` with the Wiener error `e` at
/// `r + mu e`.
fn gaussian_r(beta: f64, sigma2: f64, mu: f64) -> f64 {
    let eps = |r: f64| bisect(0.0, 1.0, |e| (r + mu * e) / (1.0 + r + mu * e) - e);
    bisect(sigma2, sigma2 + beta * mu, |r| {
        let e = eps(r);
        sigma2 + beta * r * mu * e / (r + mu * e) - r
    })
}

fn immse_error(rule: &Integrator) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for c in [Constellation::qpsk(1.0)?, Constellation::qam(16, 1.0)?] {
        for snr in [0.1, 1.0, 10.0] {
            let h = 1e-4 * snr;
            let nats = |s: f64| -> Result<f64> {
                Ok(scalar::mutual_info(&c, 1.0 / s, rule)? * std::f64::consts::LN_2)
            };
            let fd = (nats(snr + h)? - nats(snr - h)?) / (2.0 * h);
            let m = scalar::mmse(&c, 1.0 / snr, rule)?;
            worst = worst.max(((fd - m) / m).abs());
        }
    }
    Ok(worst)
}

/// Runs every check; all are deterministic for a given `seed`.
pub fn selfcheck(exec: Execution, seed: u64) -> Result<Vec<Check>> {
    let cfg = SolverConfig::default();
    let rule = cfg.integrator()?;
    let mut out = vec![at_most("i_mmse_relative_error", immse_error(&rule)?, 1e-3)];

    let rich = SolverConfig {
        regime: Regime::RichScattering,
        ..cfg.clone()
    };
    let mut worst: f64 = 0.0;
    for beta in [0.5, 2.0] {
        let p = SystemParams::homogeneous(beta, 0.1, 1.0, 1.0, Constellation::gaussian(1.0)?, ScatterGainLaw::unit())?;
        let r = solve(&p, &rich)?[0].state.r;
        let exact = gaussian_r(beta, 0.1, 1.0);
        worst = worst.max(((r - exact) / exact).abs());
    }
    out.push(at_most("gaussian_closed_form_relative_error", worst, 1e-8));

    let (mut residual, mut excess, mut neg_kl, mut neg_gap) = (0.0f64, f64::NEG_INFINITY, 0.0f64, 0.0f64);
    for snr_db in [5.0, 12.0, 30.0] {
        let sigma2 = 10f64.powf(-snr_db / 10.0);
        let p = SystemParams::homogeneous(2.0, sigma2, 1.0, 1.0, Constellation::qpsk(1.0)?, ScatterGainLaw::unit())?;
        for b in solve(&p, &cfg)? {
            residual = residual.max(b.state.residual);
            excess = excess.max(b.report.se_total - 2.0 * p.beta);
            let c = &b.report.classes[0];
            let least = c.kl_scatter_term.min(c.kl_mimo_term).min(b.report.kl_cdma_term);
            neg_kl = neg_kl.max(-least);
            neg_gap = neg_gap.max(b.report.se_mmse_detector - b.report.se_total);
        }
    }
    out.push(at_most("fixed_point_residual", residual, cfg.tol));
    out.push(at_most("entropy_ceiling_excess", excess, 1e-9));
    out.push(at_most("negative_divergence", neg_kl, 0.0));
    out.push(at_most("detector_above_total", neg_gap, 1e-12));

    let oc = OracleConfig {
        dims: Dims { k: 3, l: 4, n: 1, m: 1, s: 2 },
        gains: ScatterGainLaw::unit(),
        chip_law: ChipLaw::Quaternary,
        input: OracleInput::Qpsk,
        sigma2: 0.2,
        power: 1.0,
        first_seed: seed,
        seeds: 8,
        draws: 4,
    };
    let a = oracle::run(&oc, exec)?;
    let b = oracle::run(&oc, Execution::Sequential)?;
    out.push(at_most("oracle_nondeterminism", if a == b { 0.0 } else { 1.0 }, 0.0));

    let real = oracle::sample_channel(Dims { k: 1, l: 1, n: 1, m: 1, s: 1 }, &ScatterGainLaw::unit(), ChipLaw::Gaussian, seed)?;
    let g2 = real.system_matrix()[(0, 0)].norm_sqr();
    let e = oracle::lmmse_user_error(&real, 0.5, 1.0)?[0];
    out.push(at_most("wiener_filter_error", (e - 0.5 / (g2 + 0.5)).abs(), 1e-12));

    let mut sweep = SweepConfig::new(BaseSpec::single(2.0, 0.0, 1.0, 1.0, "qpsk"), Axis::SnrDb, vec![6.0, 11.0, 16.0]);
    sweep.directions = Directions::Both;
    sweep.execution = Execution::Sequential;
    let seq = run_sweep(&sweep)?;
    sweep.execution = exec;
    let par = run_sweep(&sweep)?;
    out.push(at_most("execution_mode_mismatch", if seq.rows == par.rows { 0.0 } else { 1.0 }, 0.0));
    let flagged_ok = seq
        .rows
        .iter()
        .zip(&seq.points)
        .all(|(r, p)| r.se_total == p.branches[0].report.se_total && (!r.hysteresis || r.n_branches >= 2));
    out.push(at_most("branch_selection_violations", if flagged_ok { 0.0 } else { 1.0 }, 0.0));
    Ok(out)
}

pub fn checks_to_csv(checks: &[Check]) -> Result<String> {
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["name", "value", "threshold", "passed"]).map_err(io)?;
    for c in checks {
        w.write_record([c.name.clone(), fmt12(c.value), fmt12(c.threshold), c.passed.to_string()])
            .map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    Ok(String::from_utf8(bytes).expect("csv output is ascii"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_checks_pass() {
        let checks = selfcheck(Execution::Parallel, 7).unwrap();
        for c in &checks {
            assert!(c.passed, "{c:?}");
        }
        assert!(checks.len() >= 9);
    }
}
