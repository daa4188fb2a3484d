//! Large-system fixed points of the MIMO-CDMA channel and its spectral
//! efficiency.
//!
//! Three nested levels are solved in their isotropic scalar form (every
//! covariance is a multiple of the identity under i.i.d. spreading and
//! steering statistics):
//!
//! * CDMA level: `r = sigma2 + beta * sum_k w_k eps_user_k`, with the
//!   per-class receive-domain error `eps_user = r - r^2 / (r + rho eps_mimo2)`.
//! * scatterer level: `zeta2 = r + rho eps_mimo2` and
//!   `eps_mimo2 = E[zeta2 - zeta2^2 / (zeta2 + gamma eps_awgn |A|^2)]`.
//! * scalar level: `1 / xi2 = E[|A|^2 / (zeta2 + gamma eps_awgn |A|^2)]`,
//!   `eps_awgn = mmse(xi2)`.
//!
//! In the rich-scattering limit (`gamma -> 0` with `mu = rho gamma` fixed) the
//! scatterer level collapses to `xi2 = zeta2 = r + mu mmse(zeta2)`, selected
//! with [`Regime::RichScattering`].

mod efficiency;
mod fixed;
mod maps;
mod solver;

pub use efficiency::spectral_efficiency;
pub use maps::{
    cdma_level_residual, eps_mimo2_eval, kl_iso, mimo_level, solve_zeta2, xi_update, MimoLevel,
};
pub use solver::{solve, solve_from, state_residual, Branch, StartKind};
pub(crate) use solver::{order_branches, same_state};

use serde::{Deserialize, Serialize};

use crate::constellation::Constellation;
use crate::error::{ensure_positive, Error, Result};
use crate::quadrature::Integrator;

const SUM_TOL: f64 = 1e-12;

/// Distribution of the per-scatterer power gain `|A|^2` as weighted atoms,
/// normalized to `E|A|^2 = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterGainLaw {
    atoms: Vec<(f64, f64)>,
}

impl ScatterGainLaw {
    /// Atoms are `(gain_sq, weight)`.
    pub fn new(atoms: Vec<(f64, f64)>) -> Result<Self> {
        let law = Self { atoms };
        law.validate()?;
        Ok(law)
    }

    /// `|A|^2 = 1` with probability one.
    pub fn unit() -> Self {
        Self {
            atoms: vec![(1.0, 1.0)],
        }
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    pub fn validate(&self) -> Result<()> {
        if self.atoms.is_empty() {
            return Err(Error::InvalidDistribution("empty gain law".into()));
        }
        if self
            .atoms
            .iter()
            .any(|(g, w)| !(*g >= 0.0) || !(*w >= 0.0) || !g.is_finite())
        {
            return Err(Error::InvalidDistribution(
                "gain atoms need nonnegative gain and weight".into(),
            ));
        }
        let total: f64 = self.atoms.iter().map(|(_, w)| w).sum();
        if (total - 1.0).abs() > SUM_TOL {
            return Err(Error::InvalidDistribution(format!(
                "gain weights sum to {total}"
            )));
        }
        let mean: f64 = self.atoms.iter().map(|(g, w)| g * w).sum();
        if (mean - 1.0).abs() > SUM_TOL {
            return Err(Error::InvalidDistribution(format!(
                "E|A|^2 = {mean}, expected 1"
            )));
        }
        Ok(())
    }

    /// `E[f(|A|^2)]`.
    pub fn expect(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.atoms.iter().map(|(g, w)| w * f(*g)).sum()
    }
}

impl Default for ScatterGainLaw {
    fn default() -> Self {
        Self::unit()
    }
}

/// One homogeneous population of users.
#[derive(Debug, Clone, PartialEq)]
pub struct UserClass {
    /// Fraction of the users in this class.
    pub weight: f64,
    /// Transmit antennas per receive antenna, `M / N`.
    pub mu: f64,
    /// Scatterers per receive antenna, `S / N`.
    pub rho: f64,
    /// Transmit antennas per scatterer, `M / S`.
    pub gamma: f64,
    pub constellation: Constellation,
    pub gains: ScatterGainLaw,
}

impl UserClass {
    /// Class from the antenna ratio `mu` and scatterer ratio `gamma`
    /// (`rho = mu / gamma`).
    pub fn new(
        weight: f64,
        mu: f64,
        gamma: f64,
        constellation: Constellation,
        gains: ScatterGainLaw,
    ) -> Result<Self> {
        ensure_positive("mu", mu)?;
        ensure_positive("gamma", gamma)?;
        let class = Self {
            weight,
            mu,
            rho: mu / gamma,
            gamma,
            constellation,
            gains,
        };
        class.validate()?;
        Ok(class)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.weight > 0.0 && self.weight <= 1.0) {
            return Err(Error::InvalidParams(format!(
                "class weight must be in (0, 1], got {}",
                self.weight
            )));
        }
        ensure_positive("mu", self.mu)?;
        ensure_positive("rho", self.rho)?;
        ensure_positive("gamma", self.gamma)?;
        if (self.mu - self.rho * self.gamma).abs() > SUM_TOL * self.mu.max(1.0) {
            return Err(Error::InvalidParams(format!(
                "mu = {} differs from rho * gamma = {}",
                self.mu,
                self.rho * self.gamma
            )));
        }
        self.constellation.validate()?;
        self.gains.validate()
    }

    pub fn power(&self) -> f64 {
        self.constellation.power()
    }
}

/// Load, noise level and user population.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemParams {
    /// Users per chip, `K / L`.
    pub beta: f64,
    /// AWGN variance per receive antenna.
    pub sigma2: f64,
    pub classes: Vec<UserClass>,
    mu_bar: f64,
}

impl SystemParams {
    pub fn new(beta: f64, sigma2: f64, classes: Vec<UserClass>) -> Result<Self> {
        let mu_bar = classes.iter().map(|c| c.weight * c.mu).sum();
        let p = Self {
            beta,
            sigma2,
            classes,
            mu_bar,
        };
        p.validate()?;
        Ok(p)
    }

    /// A single class of users.
    pub fn homogeneous(
        beta: f64,
        sigma2: f64,
        mu: f64,
        gamma: f64,
        constellation: Constellation,
        gains: ScatterGainLaw,
    ) -> Result<Self> {
        Self::new(
            beta,
            sigma2,
            vec![UserClass::new(1.0, mu, gamma, constellation, gains)?],
        )
    }

    /// Average `M / N` over classes.
    pub fn mu_bar(&self) -> f64 {
        self.mu_bar
    }

    pub fn validate(&self) -> Result<()> {
        ensure_positive("beta", self.beta)?;
        ensure_positive("sigma2", self.sigma2)?;
        if self.classes.is_empty() {
            return Err(Error::InvalidParams("no user classes".into()));
        }
        for c in &self.classes {
            c.validate()?;
        }
        let w: f64 = self.classes.iter().map(|c| c.weight).sum();
        if (w - 1.0).abs() > SUM_TOL {
            return Err(Error::InvalidParams(format!("class weights sum to {w}")));
        }
        let mu_bar: f64 = self.classes.iter().map(|c| c.weight * c.mu).sum();
        if (mu_bar - self.mu_bar).abs() > SUM_TOL * mu_bar.max(1.0) {
            return Err(Error::InvalidParams("stale mu_bar".into()));
        }
        Ok(())
    }

    /// `sigma2 + beta * sum_k w_k mu_k P_k`: the CDMA-level noise when every
    /// user is left undetected.
    pub fn uncoded_noise(&self) -> f64 {
        self.sigma2
            + self.beta
                * self
                    .classes
                    .iter()
                    .map(|c| c.weight * c.mu * c.power())
                    .sum::<f64>()
    }
}

/// Which scatterer-level equations to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// Finite number of scatterers per antenna (`gamma > 0`).
    #[default]
    Scatterers,
    /// `gamma -> 0` with `mu` fixed: i.i.d. Rayleigh fading.
    RichScattering,
}

/// Iteration controls. All tolerances are relative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub tol: f64,
    pub inner_tol: f64,
    pub damping: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    /// Relative tolerance of the noise integrals.
    pub quad_tol: f64,
    pub regime: Regime,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            inner_tol: 1e-13,
            damping: 0.5,
            max_outer: 200_000,
            max_inner: 200_000,
            quad_tol: crate::quadrature::DEFAULT_TOLERANCE,
            regime: Regime::Scatterers,
        }
    }
}

impl SolverConfig {
    pub fn integrator(&self) -> Result<Integrator> {
        Integrator::adaptive(self.quad_tol)
    }

    pub fn validate(&self) -> Result<()> {
        ensure_positive("tol", self.tol)?;
        ensure_positive("inner_tol", self.inner_tol)?;
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::InvalidParams(format!(
                "damping must be in (0, 1], got {}",
                self.damping
            )));
        }
        ensure_positive("quad_tol", self.quad_tol)
    }
}

/// Per-class part of a fixed point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassState {
    pub xi2: f64,
    pub zeta2: f64,
    pub eps_awgn: f64,
    pub eps_mimo2: f64,
    pub eps_user: f64,
}

/// A solution of the coupled fixed-point system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedPointState {
    /// Isotropic CDMA-level noise variance.
    pub r: f64,
    pub classes: Vec<ClassState>,
    /// Largest relative residual of all update maps at this state.
    pub residual: f64,
}

/// Per-class terms of the spectral efficiency, in bits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub c_awgn: f64,
    pub kl_scatter_term: f64,
    pub kl_mimo_term: f64,
}

/// Spectral efficiency in bits per chip per transmit antenna.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SEReport {
    pub se_total: f64,
    pub se_mmse_detector: f64,
    pub classes: Vec<ClassReport>,
    pub kl_cdma_term: f64,
    pub branch_id: usize,
    pub converged: bool,
    pub iterations: usize,
}
