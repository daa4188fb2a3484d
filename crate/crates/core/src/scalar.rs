//! Decoupled scalar channel `y = x + n`, `n ~ CN(0, xi2)`.
//!
//! Gaussian inputs use closed forms. Discrete alphabets are averaged over the
//! noise with an [`Integrator`]; I/Q product alphabets are split into two real
//! channels of noise variance `xi2 / 2` each, whose MMSEs and rates add. The
//! generic path integrates both noise dimensions and is kept as a cross-check.
//!
//! All log-likelihoods are shifted by their maximum before exponentiation.
//! Internal rates are in nats; public rates are bits.

use std::f64::consts::LN_2;

use num_complex::Complex64;

use crate::constellation::{Constellation, Pam};
use crate::error::{ensure_positive, Result};
use crate::quadrature::Integrator;

/// One evaluation of the scalar channel at noise variance `noise_var`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarChannelResult {
    pub noise_var: f64,
    pub mmse: f64,
    pub rate_bits: f64,
    /// `H(x | y)` in bits (infinite for Gaussian inputs). Kept separately
    /// because it stays accurate when the rate saturates.
    pub equivocation_bits: f64,
}

/// `E[x | y]` for the scalar channel.
pub fn posterior_mean(c: &Constellation, y: Complex64, noise_var: f64) -> Result<Complex64> {
    ensure_positive("noise variance", noise_var)?;
    if c.is_gaussian() {
        let p = c.power();
        return Ok(y * (p / (p + noise_var)));
    }
    let logits: Vec<f64> = c
        .points()
        .iter()
        .zip(c.probs())
        .map(|(x, p)| p.ln() - (y - x).norm_sqr() / noise_var)
        .collect();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut num = Complex64::new(0.0, 0.0);
    let mut den = 0.0;
    for (x, l) in c.points().iter().zip(&logits) {
        let w = (l - max).exp();
        num += x * w;
        den += w;
    }
    Ok(num / den)
}

/// `E|x - E[x|y]|^2`.
pub fn mmse(c: &Constellation, noise_var: f64, rule: &Integrator) -> Result<f64> {
    Ok(evaluate(c, noise_var, rule)?.mmse)
}

/// `I(x; y)` in bits.
pub fn mutual_info(c: &Constellation, noise_var: f64, rule: &Integrator) -> Result<f64> {
    Ok(evaluate(c, noise_var, rule)?.rate_bits)
}

/// MMSE and mutual information in one pass. `noise_var = +inf` is the
/// disconnected channel: the MMSE is the input power and the rate is zero.
pub fn evaluate(c: &Constellation, noise_var: f64, rule: &Integrator) -> Result<ScalarChannelResult> {
    if noise_var == f64::INFINITY {
        return Ok(ScalarChannelResult {
            noise_var,
            mmse: c.power(),
            rate_bits: 0.0,
            equivocation_bits: c.entropy_bits(),
        });
    }
    ensure_positive("noise variance", noise_var)?;
    if c.is_gaussian() {
        let p = c.power();
        return Ok(ScalarChannelResult {
            noise_var,
            mmse: p * noise_var / (p + noise_var),
            rate_bits: (p / noise_var).ln_1p() / LN_2,
            equivocation_bits: f64::INFINITY,
        });
    }
    let (mmse, equiv_nats) = if let Some((i, q)) = c.iq() {
        let (mi, ei) = pam_channel(i, noise_var / 2.0, rule);
        if i == q {
            (2.0 * mi, 2.0 * ei)
        } else {
            let (mq, eq) = pam_channel(q, noise_var / 2.0, rule);
            (mi + mq, ei + eq)
        }
    } else {
        complex_channel(c, noise_var, rule)
    };
    let h = c.entropy_bits();
    let equivocation_bits = (equiv_nats / LN_2).clamp(0.0, h);
    Ok(ScalarChannelResult {
        noise_var,
        mmse: mmse.clamp(0.0, c.power()),
        rate_bits: h - equivocation_bits,
        equivocation_bits,
    })
}

/// Real channel `y = a + w`, `w ~ N(0, var)`. Returns (mmse, H(a|y) in nats).
pub(crate) fn pam_channel(pam: &Pam, var: f64, rule: &Integrator) -> (f64, f64) {
    let mut order: Vec<usize> = (0..pam.len()).collect();
    order.sort_by(|&i, &j| pam.levels()[i].total_cmp(&pam.levels()[j]));
    let levels: Vec<f64> = order.iter().map(|&i| pam.levels()[i]).collect();
    let probs: Vec<f64> = order.iter().map(|&i| pam.probs()[i]).collect();
    let log_p: Vec<f64> = probs.iter().map(|p| p.ln()).collect();
    let sd = var.sqrt();
    let two_var = 2.0 * var;
    // posterior switches between neighbours at these observations
    let switch_points: Vec<f64> = levels
        .windows(2)
        .zip(log_p.windows(2))
        .filter(|(_, lp)| lp[0].is_finite() && lp[1].is_finite())
        .map(|(b, lp)| 0.5 * (b[0] + b[1]) + var * (lp[0] - lp[1]) / (b[1] - b[0]))
        .collect();
    let mut logits = vec![0.0; levels.len()];
    let mut err = 0.0;
    let mut info = 0.0;
    for (i, (&a, &pa)) in levels.iter().zip(&probs).enumerate() {
        if pa == 0.0 {
            continue;
        }
        let breaks: Vec<f64> = std::iter::once(0.0)
            .chain(switch_points.iter().map(|y| (y - a) / sd))
            .collect();
        let [e, r] = rule.expect(
            |z| {
                let noise = sd * z;
                // log p_j - [(y - a_j)^2 - (y - a)^2] / (2 var) at y = a + noise
                for ((l, &b), &lp) in logits.iter_mut().zip(&levels).zip(&log_p) {
                    let d = a - b;
                    *l = lp - (d * d + 2.0 * d * noise) / two_var;
                }
                let (err, ent) = softmax_error(&logits, i, levels.iter().map(|b| a - b));
                [err * err, ent]
            },
            &breaks,
        );
        err += pa * e;
        info += pa * r;
    }
    (err, info)
}

/// Given logits `l_j` (the transmitted point is index `own` with offset
/// zero), returns `x - E[x|y] = sum_j w_j (x - x_j) / sum_j w_j` and
/// `-log posterior(x | y) = log sum_j exp(l_j - own)`, both without
/// cancellation when the posterior concentrates on `x`.
fn softmax_error<T>(logits: &[f64], own: usize, offsets: impl Iterator<Item = T>) -> (T, f64)
where
    T: Copy + std::ops::Mul<f64, Output = T> + std::ops::Add<Output = T> + std::ops::Div<f64, Output = T>,
{
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut den = 0.0;
    let mut acc: Option<T> = None;
    // sum of exp(l_j - max) over all points except the transmitted one
    let mut others = 0.0;
    for (j, (l, off)) in logits.iter().zip(offsets).enumerate() {
        let w = (l - max).exp();
        den += w;
        acc = Some(match acc {
            Some(a) => a + off * w,
            None => off * w,
        });
        if j != own {
            others += w;
        }
    }
    let err = acc.expect("non-empty alphabet") / den;
    let own = logits[own];
    let ent = if own >= max {
        others.ln_1p()
    } else {
        (max - own) + den.ln()
    };
    (err, ent)
}

/// Generic path: nested integration over both noise dimensions.
/// Returns (mmse, H(x|y) in nats).
pub(crate) fn complex_channel(c: &Constellation, noise_var: f64, rule: &Integrator) -> (f64, f64) {
    let pts = c.points();
    let log_p: Vec<f64> = c.probs().iter().map(|p| p.ln()).collect();
    let sd = (noise_var / 2.0).sqrt();
    let mut logits = vec![0.0; pts.len()];
    let mut err = 0.0;
    let mut info = 0.0;
    for (i, (&x, &px)) in pts.iter().zip(c.probs()).enumerate() {
        if px == 0.0 {
            continue;
        }
        let [e, r] = rule.expect(
            |z1| {
                rule.expect(
                    |z2| {
                        let n = Complex64::new(sd * z1, sd * z2);
                        for ((l, &xj), &lp) in logits.iter_mut().zip(pts).zip(&log_p) {
                            let d = x - xj;
                            *l = lp - (d.norm_sqr() + 2.0 * (d.conj() * n).re) / noise_var;
                        }
                        let (err, ent) = softmax_error(&logits, i, pts.iter().map(|p| x - p));
                        [err.norm_sqr(), ent]
                    },
                    &[0.0],
                )
            },
            &[0.0],
        );
        err += px * e;
        info += px * r;
    }
    (err, info)
}
