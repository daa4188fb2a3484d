//! Expectations over standard normal noise: a fixed Gauss-Hermite grid and an
//! adaptive Gauss-Kronrod rule for integrands with sharp transitions.

use std::f64::consts::PI;

use crate::error::{Error, Result};

pub const DEFAULT_ORDER: usize = 50;

/// Nodes and weights such that `sum w_i f(z_i) ~= E[f(Z)]`, `Z ~ N(0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureGrid {
    order: usize,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl QuadratureGrid {
    /// Builds an `order`-point rule by Newton iteration on the Hermite
    /// recurrence, then rescales from the `exp(-x^2)` weight to the
    /// unit-variance Gaussian.
    pub fn gauss_hermite(order: usize) -> Result<Self> {
        if !(1..=400).contains(&order) {
            return Err(Error::InvalidParams(format!(
                "quadrature order must be in 1..=400, got {order}"
            )));
        }
        let n = order;
        let mut x = vec![0.0; n];
        let mut w = vec![0.0; n];
        let pim4 = PI.powf(-0.25);
        let m = n.div_ceil(2);
        let mut z = 0.0f64;
        for i in 0..m {
            z = match i {
                0 => (2.0 * n as f64 + 1.0).sqrt() - 1.85575 * (2.0 * n as f64 + 1.0).powf(-1.0 / 6.0),
                1 => z - 1.14 * (n as f64).powf(0.426) / z,
                2 => 1.86 * z - 0.86 * x[0],
                3 => 1.91 * z - 0.91 * x[1],
                _ => 2.0 * z - x[i - 2],
            };
            let mut pp = 0.0;
            for _ in 0..100 {
                // normalized Hermite recurrence
                let mut p1 = pim4;
                let mut p2 = 0.0;
                for j in 0..n {
                    let p3 = p2;
                    p2 = p1;
                    let jf = j as f64;
                    p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
                }
                pp = (2.0 * n as f64).sqrt() * p2;
                let z1 = z;
                z = z1 - p1 / pp;
                if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                    break;
                }
            }
            x[i] = z;
            x[n - 1 - i] = -z;
            w[i] = 2.0 / (pp * pp);
            w[n - 1 - i] = w[i];
        }
        if n % 2 == 1 {
            x[n / 2] = 0.0;
        }
        let sqrt2 = 2f64.sqrt();
        let mut nodes: Vec<f64> = x.iter().map(|xi| xi * sqrt2).collect();
        let total: f64 = w.iter().sum();
        let mut weights: Vec<f64> = w.iter().map(|wi| wi / total).collect();
        // ascending order
        nodes.reverse();
        weights.reverse();
        Ok(Self {
            order,
            nodes,
            weights,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `E[f(Z)]` for standard normal `Z`.
    pub fn expect(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(z, w)| w * f(*z))
            .sum()
    }

    /// `E[f(Z1, Z2)]` over two independent standard normals (tensor rule).
    pub fn expect2(&self, mut f: impl FnMut(f64, f64) -> f64) -> f64 {
        let mut acc = 0.0;
        for (z1, w1) in self.nodes.iter().zip(&self.weights) {
            for (z2, w2) in self.nodes.iter().zip(&self.weights) {
                acc += w1 * w2 * f(*z1, *z2);
            }
        }
        acc
    }
}

impl Default for QuadratureGrid {
    fn default() -> Self {
        Self::gauss_hermite(DEFAULT_ORDER).expect("default order is valid")
    }
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
// 7-point Gauss weights at XGK[1], XGK[3], XGK[5], XGK[7]
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// Half-width of the standard-normal range integrated by [`Integrator::Adaptive`];
/// the mass outside is below 1e-32.
pub const NORMAL_CUTOFF: f64 = 12.0;

fn gk15<const D: usize>(f: &mut impl FnMut(f64) -> [f64; D], lo: f64, hi: f64) -> ([f64; D], [f64; D]) {
    let c = 0.5 * (lo + hi);
    let h = 0.5 * (hi - lo);
    let mut k = [0.0; D];
    let mut g = [0.0; D];
    for (i, (&x, &wk)) in XGK.iter().zip(&WGK).enumerate() {
        let pts: &[f64] = if x == 0.0 { &[0.0] } else { &[-1.0, 1.0] };
        for s in pts {
            let v = f(c + s * h * x);
            for d in 0..D {
                k[d] += wk * v[d];
                if i % 2 == 1 {
                    g[d] += WG[i / 2] * v[d];
                }
            }
        }
    }
    let mut err = [0.0; D];
    for d in 0..D {
        k[d] *= h;
        g[d] *= h;
        err[d] = (k[d] - g[d]).abs();
    }
    (k, err)
}

/// Globally adaptive Gauss-Kronrod integral of a vector-valued `f` over
/// `[lo, hi]`, pre-split at `breaks`. The interval with the largest scaled
/// error is bisected until every component satisfies
/// `err <= max(abs_tol, rel_tol * |value|)`.
pub fn integrate_adaptive<const D: usize>(
    mut f: impl FnMut(f64) -> [f64; D],
    lo: f64,
    hi: f64,
    breaks: &[f64],
    rel_tol: f64,
    abs_tol: f64,
) -> [f64; D] {
    const MAX_INTERVALS: usize = 4000;
    let mut cuts: Vec<f64> = std::iter::once(lo)
        .chain(breaks.iter().copied().filter(|b| *b > lo && *b < hi))
        .chain(std::iter::once(hi))
        .collect();
    cuts.sort_by(|a, b| a.total_cmp(b));
    cuts.dedup();
    let mut parts: Vec<(f64, f64, [f64; D], [f64; D])> = cuts
        .windows(2)
        .map(|w| {
            let (v, e) = gk15(&mut f, w[0], w[1]);
            (w[0], w[1], v, e)
        })
        .collect();
    loop {
        let mut total = [0.0; D];
        let mut err = [0.0; D];
        for (_, _, v, e) in &parts {
            for d in 0..D {
                total[d] += v[d];
                err[d] += e[d];
            }
        }
        let tol: Vec<f64> = total.iter().map(|t| abs_tol.max(rel_tol * t.abs())).collect();
        if (0..D).all(|d| err[d] <= tol[d]) || parts.len() >= MAX_INTERVALS {
            return total;
        }
        let scaled = |e: &[f64; D]| (0..D).map(|d| e[d] / tol[d]).fold(0.0f64, f64::max);
        let (worst, _) = parts
            .iter()
            .enumerate()
            .map(|(i, p)| (i, scaled(&p.3)))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .expect("at least one interval");
        let (a, b, _, _) = parts[worst];
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            return total;
        }
        let (v1, e1) = gk15(&mut f, a, m);
        let (v2, e2) = gk15(&mut f, m, b);
        parts[worst] = (a, m, v1, e1);
        parts.push((m, b, v2, e2));
    }
}

/// Standard normal density.
pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

/// Rule used to average over Gaussian noise in the scalar-channel kernels.
#[derive(Debug, Clone, PartialEq)]
pub enum Integrator {
    /// Fixed tensor Gauss-Hermite rule.
    GaussHermite(QuadratureGrid),
    /// Adaptive Gauss-Kronrod on `[-NORMAL_CUTOFF, NORMAL_CUTOFF]` with
    /// breakpoints at the posterior transitions, to relative tolerance `tol`
    /// (absolute floor [`ABS_FLOOR`]).
    Adaptive { tol: f64 },
}

pub const DEFAULT_TOLERANCE: f64 = 1e-12;
pub const ABS_FLOOR: f64 = 1e-300;

impl Integrator {
    pub fn adaptive(tol: f64) -> Result<Self> {
        if !(tol > 0.0) {
            return Err(Error::InvalidParams(format!("tolerance must be positive, got {tol}")));
        }
        Ok(Self::Adaptive { tol })
    }

    pub fn gauss_hermite(order: usize) -> Result<Self> {
        Ok(Self::GaussHermite(QuadratureGrid::gauss_hermite(order)?))
    }

    /// `E[f(Z)]` for standard normal `Z`; `breaks` are hints in `z` where `f`
    /// changes quickly (ignored by the fixed rule).
    pub fn expect<const D: usize>(&self, mut f: impl FnMut(f64) -> [f64; D], breaks: &[f64]) -> [f64; D] {
        match self {
            Self::GaussHermite(g) => {
                let mut acc = [0.0; D];
                for (z, w) in g.nodes().iter().zip(g.weights()) {
                    let v = f(*z);
                    for d in 0..D {
                        acc[d] += w * v[d];
                    }
                }
                acc
            }
            Self::Adaptive { tol } => integrate_adaptive(
                |z| {
                    let p = normal_pdf(z);
                    let mut v = f(z);
                    for x in v.iter_mut() {
                        *x *= p;
                    }
                    v
                },
                -NORMAL_CUTOFF,
                NORMAL_CUTOFF,
                breaks,
                *tol,
                ABS_FLOOR,
            ),
        }
    }
}

impl Default for Integrator {
    fn default() -> Self {
        Self::Adaptive {
            tol: DEFAULT_TOLERANCE,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moments() {
        for n in [2, 5, 20, 40, 50, 60, 101] {
            let g = QuadratureGrid::gauss_hermite(n).unwrap();
            assert!(g.weights().iter().all(|w| *w > 0.0));
            let s: f64 = g.weights().iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
            assert!((g.expect(|_| 1.0) - 1.0).abs() < 1e-10);
            assert!((g.expect(|z| z * z) - 1.0).abs() < 1e-10, "order {n}");
            assert!(g.expect(|z| z).abs() < 1e-12);
            if n >= 3 {
                assert!((g.expect(|z| z.powi(4)) - 3.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn integrates_smooth_functions() {
        let g = QuadratureGrid::gauss_hermite(50).unwrap();
        // E[cos Z] = exp(-1/2)
        assert!((g.expect(f64::cos) - (-0.5f64).exp()).abs() < 1e-14);
        // E[exp(Z1 + Z2)] = e
        assert!((g.expect2(|a, b| (a + b).exp()) - 1f64.exp()).abs() < 1e-12);
    }

    #[test]
    fn rejects_zero_order() {
        assert!(QuadratureGrid::gauss_hermite(0).is_err());
    }

    #[test]
    fn adaptive_handles_steps() {
        let step = |z: f64| 1.0 / (1.0 + (-(z - 3.0) * 200.0).exp());
        let ig = Integrator::adaptive(1e-15).unwrap();
        let [v] = ig.expect(|z| [step(z)], &[3.0]);
        let exact = simpson(|z| step(z) * normal_pdf(z), 2.0, 12.0, 400_000);
        assert!((v - exact).abs() < 1e-12, "{v} vs {exact}");
        let [m0, m2] = ig.expect(|z| [1.0, z * z], &[]);
        assert!((m0 - 1.0).abs() < 1e-13 && (m2 - 1.0).abs() < 1e-13);
    }

    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(a + i as f64 * h);
        }
        s * h / 3.0
    }
}
