use mcdma::constellation::Constellation;
use mcdma::quadrature::Integrator;
use mcdma::scalar::{evaluate, mmse, mutual_info};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Independent Monte Carlo estimate of (mmse, I in bits) for a discrete
/// alphabet, with standard errors. Uses the direct softmax over the points.
fn monte_carlo(c: &Constellation, xi2: f64, draws: usize, seed: u64) -> ((f64, f64), (f64, f64)) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sd = (xi2 / 2.0).sqrt();
    let pts = c.points();
    let (mut s_e, mut s_e2, mut s_i, mut s_i2) = (0.0, 0.0, 0.0, 0.0);
    for _ in 0..draws {
        let x = pts[rng.random_range(0..pts.len())];
        let n = Complex64::new(
            sd * rng.sample::<f64, _>(StandardNormal),
            sd * rng.sample::<f64, _>(StandardNormal),
        );
        let y = x + n;
        let d_true = n.norm_sqr();
        let (mut num, mut den) = (Complex64::new(0.0, 0.0), 0.0);
        for p in pts {
            let w = (-((y - p).norm_sqr() - d_true) / xi2).exp();
            num += p * w;
            den += w;
        }
        let e = (x - num / den).norm_sqr();
        // log2 p(y|x) / p(y) with uniform prior
        let i = -(den / pts.len() as f64).log2();
        s_e += e;
        s_e2 += e * e;
        s_i += i;
        s_i2 += i * i;
    }
    let n = draws as f64;
    let (me, mi) = (s_e / n, s_i / n);
    let se_e = ((s_e2 / n - me * me) / n).sqrt();
    let se_i = ((s_i2 / n - mi * mi) / n).sqrt();
    ((me, se_e), (mi, se_i))
}

#[test]
fn qpsk_mmse_matches_monte_carlo() {
    let c = Constellation::qpsk(1.0).unwrap();
    let ((mc, se), _) = monte_carlo(&c, 0.5, 10_000_000, 11);
    let v = mmse(&c, 0.5, &Integrator::default()).unwrap();
    assert!((v - mc).abs() <= 3.0 * se, "quadrature {v} vs MC {mc} +- {se}");
}

#[test]
fn qpsk_mutual_info_matches_monte_carlo() {
    let c = Constellation::qpsk(1.0).unwrap();
    let (_, (mc, se)) = monte_carlo(&c, 1.0, 10_000_000, 12);
    let v = mutual_info(&c, 1.0, &Integrator::default()).unwrap();
    assert!((v - mc).abs() <= 3.0 * se, "quadrature {v} vs MC {mc} +- {se}");
}

fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| (lo.ln() + (hi.ln() - lo.ln()) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

fn shipped() -> Vec<Constellation> {
    vec![
        Constellation::qpsk(1.0).unwrap(),
        Constellation::qam(16, 1.0).unwrap(),
        Constellation::qam(64, 1.0).unwrap(),
        Constellation::gaussian(1.0).unwrap(),
    ]
}

#[test]
fn i_mmse_identity() {
    let rule = Integrator::default();
    for c in shipped() {
        for snr in log_grid(0.01, 100.0, 50) {
            let d = 1e-4 * snr;
            // I = H(x) - H(x|y); for discrete inputs difference H(x|y), which
            // keeps full precision when I saturates
            let i_nats = |s: f64| {
                let r = evaluate(&c, 1.0 / s, &rule).unwrap();
                let bits = if c.is_gaussian() { r.rate_bits } else { -r.equivocation_bits };
                bits * std::f64::consts::LN_2
            };
            let fd = (i_nats(snr + d) - i_nats(snr - d)) / (2.0 * d);
            let m = mmse(&c, 1.0 / snr, &rule).unwrap();
            assert!(
                ((fd - m) / m).abs() <= 1e-3,
                "{} snr {snr}: dI/dsnr {fd} vs mmse {m}",
                c.label()
            );
        }
    }
}

#[test]
fn mmse_strictly_decreasing_in_snr() {
    let rule = Integrator::default();
    for c in shipped() {
        let vals: Vec<f64> = log_grid(0.01, 100.0, 50)
            .iter()
            .map(|s| mmse(&c, 1.0 / s, &rule).unwrap())
            .collect();
        assert!(vals.windows(2).all(|w| w[1] < w[0]), "{}", c.label());
    }
}

#[test]
fn gaussian_input_bounds_discrete_rates() {
    let rule = Integrator::default();
    let g = Constellation::gaussian(1.0).unwrap();
    for c in &shipped()[..3] {
        for xi2 in log_grid(1e-4, 1e4, 40) {
            let a = evaluate(c, xi2, &rule).unwrap();
            let b = evaluate(&g, xi2, &rule).unwrap();
            assert!(a.rate_bits <= b.rate_bits + 1e-12);
            assert!(a.rate_bits <= (c.len() as f64).log2() + 1e-12);
            assert!(a.mmse >= 0.0 && a.mmse <= c.power());
        }
    }
}

#[test]
fn integration_converges() {
    let coarse = Integrator::adaptive(1e-10).unwrap();
    let fine = Integrator::adaptive(1e-14).unwrap();
    for c in &shipped()[..2] {
        for ratio in log_grid(0.01, 100.0, 25) {
            let a = evaluate(c, ratio * c.power(), &coarse).unwrap();
            let b = evaluate(c, ratio * c.power(), &fine).unwrap();
            assert!((a.mmse - b.mmse).abs() < 1e-8, "{} {ratio}", c.label());
            assert!((a.rate_bits - b.rate_bits).abs() < 1e-8);
        }
    }
}

#[test]
fn tiny_noise_is_finite() {
    let rule = Integrator::default();
    for c in &shipped()[..3] {
        let r = evaluate(c, 1e-6, &rule).unwrap();
        assert!(r.mmse.is_finite() && r.mmse >= 0.0 && r.mmse < 1e-12);
        assert!((r.rate_bits - (c.len() as f64).log2()).abs() < 1e-9);
    }
}
