//! Finite-size Monte Carlo of the spread MIMO uplink with scatterer fading.
//!
//! User `k` sends `x^k` (M symbols) through `H^k = Phi^* A Theta` (N x M) and
//! its spreading sequence `s^k` (L chips); the receiver sees
//! `y = sum_k s^k (x) H^k x^k + n`, i.e. `y = G x + n` with the LN x KM
//! matrix `G` whose column for antenna `m` of user `k` is `s^k (x) h^k_m`.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_positive, Error, Result};
use crate::par::Execution;
use crate::replica::ScatterGainLaw;

/// Largest `LN * KM` accepted.
pub const MAX_ELEMENTS: usize = 1 << 24;
/// Largest number of jointly enumerated QPSK symbols.
pub const MAX_QPSK_SYMBOLS: usize = 12;
/// Leaves this far (in nats) below the transmitted vector's likelihood are
/// dropped; the neglected posterior mass is below `4^12 e^-50 < 1e-14`.
const PRUNE_NATS: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    /// Users.
    pub k: usize,
    /// Chips per symbol.
    pub l: usize,
    /// Receive antennas.
    pub n: usize,
    /// Transmit antennas per user.
    pub m: usize,
    /// Scatterers per user.
    pub s: usize,
}

impl Dims {
    pub fn validate(&self) -> Result<()> {
        if [self.k, self.l, self.n, self.m, self.s].contains(&0) {
            return Err(Error::Dimension(format!("all dimensions must be >= 1: {self:?}")));
        }
        let elements = (self.l * self.n).checked_mul(self.k * self.m);
        match elements {
            Some(e) if e <= MAX_ELEMENTS => Ok(()),
            _ => Err(Error::Dimension(format!(
                "system matrix of {self:?} exceeds {MAX_ELEMENTS} entries"
            ))),
        }
    }

    pub fn symbols(&self) -> usize {
        self.k * self.m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChipLaw {
    /// Complex Gaussian chips.
    #[default]
    Gaussian,
    /// `(+-1 +-i) / sqrt(2L)`.
    Quaternary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub dims: Dims,
    /// L x K chips, variance `1/L` per complex chip.
    pub spreading: DMatrix<Complex64>,
    /// Per user, N x M.
    pub channels: Vec<DMatrix<Complex64>>,
    pub seed: u64,
}

impl ChannelRealization {
    /// The LN x KM matrix `G`.
    pub fn system_matrix(&self) -> DMatrix<Complex64> {
        let Dims { k, l, n, m, .. } = self.dims;
        DMatrix::from_fn(l * n, k * m, |row, col| {
            let (li, ni) = (row / n, row % n);
            let (ki, mi) = (col / m, col % m);
            self.spreading[(li, ki)] * self.channels[ki][(ni, mi)]
        })
    }

    /// Mean `|s|^2` over all chips.
    pub fn chip_variance(&self) -> f64 {
        self.spreading.iter().map(|c| c.norm_sqr()).sum::<f64>() / self.spreading.len() as f64
    }
}

fn complex_normal(rng: &mut ChaCha8Rng, var: f64) -> Complex64 {
    let sd = (0.5 * var).sqrt();
    Complex64::new(
        sd * rng.sample::<f64, _>(StandardNormal),
        sd * rng.sample::<f64, _>(StandardNormal),
    )
}

fn sample_gain(rng: &mut ChaCha8Rng, gains: &ScatterGainLaw) -> f64 {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for &(g, w) in gains.atoms() {
        acc += w;
        if u < acc {
            return g;
        }
    }
    gains.atoms().last().map_or(1.0, |a| a.0)
}

/// Draws spreading sequences and per-user `H = Phi^* A Theta`, with complex
/// Gaussian `Phi` (variance 1/N) and `Theta` (variance 1/S) and `A`
/// holding the square roots of gains drawn from `gains`.
pub fn sample_channel(
    dims: Dims,
    gains: &ScatterGainLaw,
    chip_law: ChipLaw,
    seed: u64,
) -> Result<ChannelRealization> {
    dims.validate()?;
    gains.validate()?;
    let Dims { k, l, n, m, s } = dims;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut spreading = DMatrix::zeros(l, k);
    let half = (0.5 / l as f64).sqrt();
    for ki in 0..k {
        for li in 0..l {
            spreading[(li, ki)] = match chip_law {
                ChipLaw::Gaussian => complex_normal(&mut rng, 1.0 / l as f64),
                ChipLaw::Quaternary => {
                    let re = if rng.random::<bool>() { half } else { -half };
                    let im = if rng.random::<bool>() { half } else { -half };
                    Complex64::new(re, im)
                }
            };
        }
    }

    let mut channels = Vec::with_capacity(k);
    for _ in 0..k {
        let phi = DMatrix::from_fn(s, n, |_, _| complex_normal(&mut rng, 1.0 / n as f64));
        let a: Vec<f64> = (0..s).map(|_| sample_gain(&mut rng, gains).sqrt()).collect();
        let theta = DMatrix::from_fn(s, m, |_, _| complex_normal(&mut rng, 1.0 / s as f64));
        let scaled = DMatrix::from_fn(s, m, |i, j| theta[(i, j)] * a[i]);
        channels.push(phi.adjoint() * scaled);
    }
    Ok(ChannelRealization {
        dims,
        spreading,
        channels,
        seed,
    })
}

/// Exact posterior quantities for Gaussian inputs on one realization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianSample {
    /// Per user, trace of the posterior error covariance block over M.
    pub user_error: Vec<f64>,
    /// Per user, `tr(H Sigma_kk H^*) / N`.
    pub receive_error: Vec<f64>,
    /// `log2 det(I + P/sigma2 G^* G) / (K M)`.
    pub mi_bits_per_symbol: f64,
}

/// Per-user error of the posterior mean for Gaussian inputs: block traces of
/// `(I/P + G^* G / sigma2)^-1`, divided by M.
pub fn lmmse_user_error(real: &ChannelRealization, sigma2: f64, power: f64) -> Result<Vec<f64>> {
    Ok(gaussian_sample(real, sigma2, power)?.user_error)
}

pub fn gaussian_sample(real: &ChannelRealization, sigma2: f64, power: f64) -> Result<GaussianSample> {
    ensure_positive("sigma2", sigma2)?;
    ensure_positive("power", power)?;
    let Dims { k, n, m, .. } = real.dims;
    let g = real.system_matrix();
    let mut a = g.ad_mul(&g) / Complex64::new(sigma2, 0.0);
    for i in 0..k * m {
        a[(i, i)] += 1.0 / power;
    }
    let chol = a
        .cholesky()
        .ok_or_else(|| Error::Dimension("posterior precision is not positive definite".into()))?;
    let log_det_a: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.re.ln()).sum::<f64>();
    let sigma = chol.inverse();

    let mut user_error = Vec::with_capacity(k);
    let mut receive_error = Vec::with_capacity(k);
    for (ki, h) in real.channels.iter().enumerate() {
        let block = sigma.view((ki * m, ki * m), (m, m));
        user_error.push(block.trace().re / m as f64);
        let hs = h * block;
        receive_error.push(hs.ad_mul(h).trace().re.max(0.0) / n as f64);
    }
    let symbols = (k * m) as f64;
    // det(I + P/sigma2 G^* G) = det(P A)
    let mi_nats = symbols * power.ln() + log_det_a;
    Ok(GaussianSample {
        user_error,
        receive_error,
        mi_bits_per_symbol: mi_nats / symbols / std::f64::consts::LN_2,
    })
}

/// Posterior statistics of one QPSK transmission.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpskSample {
    /// Per user, `|x - E[x|y]|^2` averaged over antennas.
    pub user_mse: Vec<f64>,
    /// Per user, `|H (x - E[x|y])|^2 / N`.
    pub receive_mse: Vec<f64>,
    /// `log2 p(y|x)/p(y)` per symbol.
    pub mi_bits_per_symbol: f64,
}

fn real_embedding(g: &DMatrix<Complex64>) -> DMatrix<f64> {
    let (p, q) = g.shape();
    DMatrix::from_fn(2 * p, 2 * q, |i, j| {
        let c = g[(i % p, j % q)];
        match (i < p, j < q) {
            (true, true) | (false, false) => c.re,
            (true, false) => -c.im,
            (false, true) => c.im,
        }
    })
}

/// Real-valued QR form of `y = G x + n` for tree search.
struct RealModel {
    q_t: DMatrix<f64>,
    r: DMatrix<f64>,
    rows: usize,
    cols: usize,
}

impl RealModel {
    fn new(g: &DMatrix<Complex64>) -> Self {
        let qr = real_embedding(g).qr();
        let r = qr.r();
        let q_t = qr.q().transpose();
        Self {
            rows: r.nrows(),
            cols: r.ncols(),
            q_t,
            r,
        }
    }
}

struct Search<'a> {
    model: &'a RealModel,
    z: Vec<f64>,
    amp: f64,
    limit: f64,
    base: f64,
    sigma2: f64,
    x: Vec<f64>,
    weight: f64,
    weighted_x: Vec<f64>,
}

impl Search<'_> {
    fn row_residual(&self, row: usize) -> f64 {
        let mut acc = self.z[row];
        for c in row..self.model.cols {
            acc -= self.model.r[(row, c)] * self.x[c];
        }
        acc
    }

    /// Assigns variable `idx` and below; rows are completed bottom-up.
    fn descend(&mut self, idx: usize, partial: f64) {
        for v in [-self.amp, self.amp] {
            self.x[idx] = v;
            let mut d = partial;
            if idx < self.model.rows {
                let e = self.row_residual(idx);
                d += e * e;
            }
            if d > self.limit {
                continue;
            }
            if idx == 0 {
                let w = (-(d - self.base) / self.sigma2).exp();
                self.weight += w;
                for (acc, xi) in self.weighted_x.iter_mut().zip(&self.x) {
                    *acc += w * xi;
                }
            } else {
                self.descend(idx - 1, d);
            }
        }
    }
}

/// Posterior mean and normalizer `sum_x' exp(-(|y - G x'|^2 - |y - G x|^2)/sigma2)`
/// over all QPSK vectors, by depth-first search with likelihood pruning.
fn qpsk_posterior(
    model: &RealModel,
    y: &[Complex64],
    x_true: &[Complex64],
    sigma2: f64,
    amp: f64,
) -> (Vec<Complex64>, f64) {
    let yr: Vec<f64> = y.iter().map(|c| c.re).chain(y.iter().map(|c| c.im)).collect();
    let z: Vec<f64> = (0..model.rows)
        .map(|i| (0..yr.len()).map(|j| model.q_t[(i, j)] * yr[j]).sum())
        .collect();
    let xt: Vec<f64> = x_true
        .iter()
        .map(|c| c.re)
        .chain(x_true.iter().map(|c| c.im))
        .collect();
    let mut s = Search {
        model,
        z,
        amp,
        limit: 0.0,
        base: 0.0,
        sigma2,
        x: xt,
        weight: 0.0,
        weighted_x: vec![0.0; model.cols],
    };
    let base: f64 = (0..model.rows).map(|i| s.row_residual(i).powi(2)).sum();
    s.base = base;
    s.limit = base + PRUNE_NATS * sigma2;
    s.descend(model.cols - 1, 0.0);
    let half = model.cols / 2;
    let mean = (0..half)
        .map(|i| Complex64::new(s.weighted_x[i], s.weighted_x[half + i]) / s.weight)
        .collect();
    (mean, s.weight)
}

/// Exact QPSK posterior mean on `draws` independent symbol and noise draws
/// over one channel realization. Noise uses its own stream of `seed`.
pub fn exact_qpsk_posterior(
    real: &ChannelRealization,
    sigma2: f64,
    power: f64,
    draws: usize,
) -> Result<EmpiricalStats> {
    ensure_positive("sigma2", sigma2)?;
    ensure_positive("power", power)?;
    let Dims { k, m, n, .. } = real.dims;
    if k * m > MAX_QPSK_SYMBOLS {
        return Err(Error::Dimension(format!(
            "{} QPSK symbols exceed the enumeration bound {MAX_QPSK_SYMBOLS}",
            k * m
        )));
    }
    let g = real.system_matrix();
    let model = RealModel::new(&g);
    let amp = (0.5 * power).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(real.seed);
    rng.set_stream(1);

    let mut samples = Vec::with_capacity(draws);
    for _ in 0..draws {
        let x: Vec<Complex64> = (0..k * m)
            .map(|_| {
                let re = if rng.random::<bool>() { amp } else { -amp };
                let im = if rng.random::<bool>() { amp } else { -amp };
                Complex64::new(re, im)
            })
            .collect();
        let xv = nalgebra::DVector::from_column_slice(&x);
        let y: Vec<Complex64> = (&g * xv)
            .iter()
            .map(|v| v + complex_normal(&mut rng, sigma2))
            .collect();
        let (mean, weight) = qpsk_posterior(&model, &y, &x, sigma2, amp);
        samples.push(qpsk_sample(real, &x, &mean, weight, n, m));
    }
    Ok(EmpiricalStats::from_qpsk(&samples))
}

fn qpsk_sample(
    real: &ChannelRealization,
    x: &[Complex64],
    mean: &[Complex64],
    weight: f64,
    n: usize,
    m: usize,
) -> QpskSample {
    let mut user_mse = Vec::with_capacity(real.channels.len());
    let mut receive_mse = Vec::with_capacity(real.channels.len());
    for (ki, h) in real.channels.iter().enumerate() {
        let e: Vec<Complex64> = (0..m).map(|j| x[ki * m + j] - mean[ki * m + j]).collect();
        user_mse.push(e.iter().map(|c| c.norm_sqr()).sum::<f64>() / m as f64);
        let he: f64 = (0..n)
            .map(|i| (0..m).map(|j| h[(i, j)] * e[j]).sum::<Complex64>().norm_sqr())
            .sum();
        receive_mse.push(he / n as f64);
    }
    let symbols = x.len() as f64;
    // log p(y|x)/p(y) with p(y) = 4^-KM sum_x' p(y|x')
    let mi_nats = symbols * 4f64.ln() - weight.ln();
    QpskSample {
        user_mse,
        receive_mse,
        mi_bits_per_symbol: mi_nats / symbols / std::f64::consts::LN_2,
    }
}

/// Sample mean and its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_err: f64,
}

impl Estimate {
    pub fn of(samples: &[f64]) -> Self {
        let n = samples.len() as f64;
        if samples.is_empty() {
            return Self {
                mean: f64::NAN,
                std_err: f64::NAN,
            };
        }
        let mean = samples.iter().sum::<f64>() / n;
        let var = if samples.len() > 1 {
            samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Self {
            mean,
            std_err: (var / n).sqrt(),
        }
    }
}

/// Monte Carlo averages; standard errors come from the spread across
/// realizations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalStats {
    /// Per user, x-domain error per antenna.
    pub per_user_mse: Vec<f64>,
    /// Per-symbol x-domain error.
    pub mse: Estimate,
    /// Receive-domain error per antenna, `|H e|^2 / N`.
    pub receive_mse: Estimate,
    /// Bits per transmitted symbol.
    pub mi_per_antenna: Estimate,
    pub n_realizations: usize,
}

impl EmpiricalStats {
    fn build(user: &[Vec<f64>], receive: &[Vec<f64>], mi: &[f64]) -> Self {
        let users = user.first().map_or(0, Vec::len);
        let per_user_mse = (0..users)
            .map(|u| user.iter().map(|s| s[u]).sum::<f64>() / user.len() as f64)
            .collect();
        let avg = |v: &Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
        let user_means: Vec<f64> = user.iter().map(avg).collect();
        let receive_means: Vec<f64> = receive.iter().map(avg).collect();
        Self {
            per_user_mse,
            mse: Estimate::of(&user_means),
            receive_mse: Estimate::of(&receive_means),
            mi_per_antenna: Estimate::of(mi),
            n_realizations: mi.len(),
        }
    }

    fn from_qpsk(samples: &[QpskSample]) -> Self {
        let user: Vec<Vec<f64>> = samples.iter().map(|s| s.user_mse.clone()).collect();
        let receive: Vec<Vec<f64>> = samples.iter().map(|s| s.receive_mse.clone()).collect();
        let mi: Vec<f64> = samples.iter().map(|s| s.mi_bits_per_symbol).collect();
        Self::build(&user, &receive, &mi)
    }

    fn from_gaussian(samples: &[GaussianSample]) -> Self {
        let user: Vec<Vec<f64>> = samples.iter().map(|s| s.user_error.clone()).collect();
        let receive: Vec<Vec<f64>> = samples.iter().map(|s| s.receive_error.clone()).collect();
        let mi: Vec<f64> = samples.iter().map(|s| s.mi_bits_per_symbol).collect();
        Self::build(&user, &receive, &mi)
    }

    /// Pools per-realization statistics, one realization per entry.
    fn pool(parts: &[EmpiricalStats]) -> Self {
        let user: Vec<Vec<f64>> = parts.iter().map(|p| p.per_user_mse.clone()).collect();
        let receive: Vec<Vec<f64>> = parts.iter().map(|p| vec![p.receive_mse.mean]).collect();
        let mi: Vec<f64> = parts.iter().map(|p| p.mi_per_antenna.mean).collect();
        Self::build(&user, &receive, &mi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OracleInput {
    Gaussian,
    Qpsk,
}

/// A batch of independent realizations with seeds `first_seed..first_seed + seeds`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    pub dims: Dims,
    pub gains: ScatterGainLaw,
    pub chip_law: ChipLaw,
    pub input: OracleInput,
    pub sigma2: f64,
    pub power: f64,
    pub first_seed: u64,
    pub seeds: usize,
    /// Symbol and noise draws per channel (QPSK only).
    pub draws: usize,
}

/// Runs every realization (in parallel when asked) and pools them in seed
/// order, so the result does not depend on the execution mode.
pub fn run(config: &OracleConfig, exec: Execution) -> Result<EmpiricalStats> {
    config.dims.validate()?;
    ensure_positive("sigma2", config.sigma2)?;
    ensure_positive("power", config.power)?;
    if config.seeds == 0 {
        return Err(Error::InvalidParams("oracle needs at least one seed".into()));
    }
    if config.input == OracleInput::Qpsk && config.draws == 0 {
        return Err(Error::InvalidParams("oracle needs at least one draw".into()));
    }
    let parts: Vec<Result<EmpiricalStats>> = exec.map(config.seeds, |i| {
        let real = sample_channel(
            config.dims,
            &config.gains,
            config.chip_law,
            config.first_seed.wrapping_add(i as u64),
        )?;
        match config.input {
            OracleInput::Gaussian => {
                let s = gaussian_sample(&real, config.sigma2, config.power)?;
                Ok(EmpiricalStats::from_gaussian(std::slice::from_ref(&s)))
            }
            OracleInput::Qpsk => exact_qpsk_posterior(&real, config.sigma2, config.power, config.draws),
        }
    });
    let parts = parts.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(EmpiricalStats::pool(&parts))
}
