//! Scalar fixed points `x = T(x)` of nondecreasing maps on an interval.
//!
//! Damped iteration never crosses a fixed point of a nondecreasing map, so
//! the iterate moves toward the nearest fixed point in the direction of
//! travel, and a growing residual only means the map is steeper than 1
//! there; oscillation shows up as a sign change of `T(x) - x` instead. Steps are accelerated with a capped secant on `g = T(x) - x`; a
//! secant step that crosses the fixed point closes a bracket, which is then
//! finished with Illinois regula falsi.

use crate::error::{Error, Result};

/// Longest secant step, in units of the current damped step.
const MAX_JUMP: f64 = 1000.0;

pub(crate) struct Controls {
    /// Target relative error of the returned point.
    pub tol: f64,
    pub damping: f64,
    pub max_iter: usize,
    pub lo: f64,
    pub hi: f64,
    /// Absolute floor of the error scale.
    pub floor: f64,
    pub stage: &'static str,
}

impl Controls {
    fn scale(&self, x: f64) -> f64 {
        x.abs().max(self.floor)
    }
}

/// Returns the fixed point and the number of map evaluations.
pub(crate) fn solve_monotone<F>(mut map: F, x0: f64, c: &Controls) -> Result<(f64, usize)>
where
    F: FnMut(f64) -> Result<f64>,
{
    let mut evals = 0;
    let mut eval = |x: f64, evals: &mut usize| -> Result<f64> {
        *evals += 1;
        let t = map(x)?;
        if !t.is_finite() {
            return Err(Error::NonConvergence {
                stage: c.stage,
                iterations: *evals,
                residual: f64::NAN,
            });
        }
        Ok(t - x)
    };

    let mut x = x0.clamp(c.lo, c.hi);
    let mut g = eval(x, &mut evals)?;
    let lam = c.damping;
    let mut prev: Option<(f64, f64)> = None;
    let mut pos: Option<(f64, f64)> = None;
    let mut neg: Option<(f64, f64)> = None;

    loop {
        if g == 0.0 {
            return Ok((x, evals));
        }
        // g decreases through a stable fixed point; its slope sizes the error
        let slope = prev.map(|(xp, gp)| (g - gp) / (x - xp)).filter(|s| *s < 0.0);
        if let Some(s) = slope {
            if g.abs() / -s <= c.tol * c.scale(x) {
                return Ok((x, evals));
            }
        }
        if g > 0.0 {
            pos = Some((x, g));
        } else {
            neg = Some((x, g));
        }
        if let (Some(a), Some(b)) = (pos, neg) {
            return illinois(&mut eval, a, b, c, &mut evals);
        }
        if evals >= c.max_iter {
            return Err(Error::NonConvergence {
                stage: c.stage,
                iterations: evals,
                residual: g.abs() / c.scale(x),
            });
        }

        let plain = lam * g;
        let mut step = plain;
        if let (Some(s), Some((_, gp))) = (slope, prev) {
            if g.abs() < gp.abs() {
                let secant = -g / s;
                step = if secant.abs() > MAX_JUMP * plain.abs() {
                    MAX_JUMP * plain
                } else {
                    secant.abs().max(plain.abs()).copysign(plain)
                };
            }
        }
        let next = (x + step).clamp(c.lo, c.hi);
        if next == x {
            // pinned at a bound with the map pointing outward
            return Ok((x, evals));
        }
        let g_next = eval(next, &mut evals)?;
        prev = Some((x, g));
        x = next;
        g = g_next;
    }
}

fn illinois<E>(
    eval: &mut E,
    mut a: (f64, f64),
    mut b: (f64, f64),
    c: &Controls,
    evals: &mut usize,
) -> Result<(f64, usize)>
where
    E: FnMut(f64, &mut usize) -> Result<f64>,
{
    let mut side = 0i8;
    loop {
        let (xa, ga) = a;
        let (xb, gb) = b;
        let width = (xb - xa).abs();
        let mid = 0.5 * (xa + xb);
        if width <= c.tol * c.scale(mid) {
            let best = if ga.abs() <= gb.abs() { xa } else { xb };
            return Ok((best, *evals));
        }
        if *evals >= c.max_iter {
            return Err(Error::NonConvergence {
                stage: c.stage,
                iterations: *evals,
                residual: ga.abs().min(gb.abs()) / c.scale(mid),
            });
        }
        let mut xc = (xa * gb - xb * ga) / (gb - ga);
        if !(xc > xa.min(xb) && xc < xa.max(xb)) {
            xc = mid;
        }
        let gc = eval(xc, evals)?;
        let slope = ((gb - ga) / (xb - xa)).abs();
        if gc == 0.0 || gc.abs() / slope <= c.tol * c.scale(xc) {
            return Ok((xc, *evals));
        }
        if gc.signum() == gb.signum() {
            b = (xc, gc);
            if side == -1 {
                a.1 *= 0.5;
            }
            side = -1;
        } else {
            a = (xc, gc);
            if side == 1 {
                b.1 *= 0.5;
            }
            side = 1;
        }
    }
}
