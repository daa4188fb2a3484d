//! Input distributions: finite complex alphabets and the Gaussian sentinel.
//!
//! Square QAM alphabets also carry their per-dimension real alphabet
//! ([`Pam`]) so the scalar-channel kernels can integrate the in-phase and
//! quadrature components separately.

use num_complex::Complex64;

use crate::error::{ensure_positive, Error, Result};

const SUM_TOL: f64 = 1e-12;

/// A finite real alphabet with probabilities (one real dimension of a
/// separable complex constellation).
#[derive(Debug, Clone, PartialEq)]
pub struct Pam {
    levels: Vec<f64>,
    probs: Vec<f64>,
}

impl Pam {
    pub fn new(levels: Vec<f64>, probs: Vec<f64>) -> Result<Self> {
        check_probs(&probs, levels.len())?;
        Ok(Self { levels, probs })
    }

    /// Equiprobable `{-a, +a}` with `a^2 = power`.
    pub fn antipodal(power: f64) -> Result<Self> {
        ensure_positive("power", power)?;
        let a = power.sqrt();
        Self::new(vec![-a, a], vec![0.5, 0.5])
    }

    /// Equiprobable uniform `m`-level alphabet with mean square `power`.
    pub fn uniform(m: usize, power: f64) -> Result<Self> {
        ensure_positive("power", power)?;
        if m < 2 {
            return Err(Error::InvalidDistribution(format!(
                "PAM needs at least two levels, got {m}"
            )));
        }
        // odd integers +-1, +-3, ... have mean square (m^2 - 1) / 3
        let scale = (3.0 * power / ((m * m - 1) as f64)).sqrt();
        let levels = (0..m)
            .map(|i| (2.0 * i as f64 - (m as f64 - 1.0)) * scale)
            .collect();
        Self::new(levels, vec![1.0 / m as f64; m])
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn power(&self) -> f64 {
        self.levels
            .iter()
            .zip(&self.probs)
            .map(|(a, p)| p * a * a)
            .sum()
    }

    pub fn entropy_bits(&self) -> f64 {
        entropy_bits(&self.probs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstellationKind {
    Discrete,
    Gaussian,
}

/// Distribution of one transmitted complex symbol.
#[derive(Debug, Clone, PartialEq)]
pub struct Constellation {
    kind: ConstellationKind,
    points: Vec<Complex64>,
    probs: Vec<f64>,
    power: f64,
    /// Per-dimension alphabets when the distribution is an I/Q product.
    iq: Option<(Pam, Pam)>,
    label: String,
}

impl Constellation {
    /// A general discrete alphabet. Power is computed from the points.
    pub fn discrete(points: Vec<Complex64>, probs: Vec<f64>) -> Result<Self> {
        check_probs(&probs, points.len())?;
        let power = points
            .iter()
            .zip(&probs)
            .map(|(x, p)| p * x.norm_sqr())
            .sum();
        ensure_positive("power", power)?;
        Ok(Self {
            kind: ConstellationKind::Discrete,
            points,
            probs,
            power,
            iq: None,
            label: "discrete".into(),
        })
    }

    /// Product distribution `x = a + i b` with `a ~ in_phase`, `b ~ quadrature` independent.
    pub fn from_iq(in_phase: &Pam, quadrature: &Pam) -> Result<Self> {
        let mut points = Vec::with_capacity(in_phase.len() * quadrature.len());
        let mut probs = Vec::with_capacity(points.capacity());
        for (b, pb) in quadrature.levels.iter().zip(&quadrature.probs) {
            for (a, pa) in in_phase.levels.iter().zip(&in_phase.probs) {
                points.push(Complex64::new(*a, *b));
                probs.push(pa * pb);
            }
        }
        let mut c = Self::discrete(points, probs)?;
        c.iq = Some((in_phase.clone(), quadrature.clone()));
        c.label = "iq".into();
        Ok(c)
    }

    /// Equiprobable square `order`-QAM with average energy `power`.
    pub fn qam(order: usize, power: f64) -> Result<Self> {
        if order < 4 || !order.is_power_of_two() || !order.trailing_zeros().is_multiple_of(2) {
            return Err(Error::InvalidQamOrder(order));
        }
        ensure_positive("power", power)?;
        let side = 1usize << (order.trailing_zeros() / 2);
        let pam = Pam::uniform(side, power / 2.0)?;
        let mut c = Self::from_iq(&pam, &pam)?;
        c.label = if order == 4 {
            "qpsk".into()
        } else {
            format!("qam{order}")
        };
        Ok(c)
    }

    pub fn qpsk(power: f64) -> Result<Self> {
        Self::qam(4, power)
    }

    /// Circularly symmetric complex Gaussian input of variance `power`.
    pub fn gaussian(power: f64) -> Result<Self> {
        ensure_positive("power", power)?;
        Ok(Self {
            kind: ConstellationKind::Gaussian,
            points: Vec::new(),
            probs: Vec::new(),
            power,
            iq: None,
            label: "gaussian".into(),
        })
    }

    /// Parses the identifiers used in config files.
    pub fn from_name(name: &str, power: f64) -> Result<Self> {
        match name {
            "qpsk" | "qam4" => Self::qam(4, power),
            "gaussian" => Self::gaussian(power),
            other => match other.strip_prefix("qam").and_then(|s| s.parse().ok()) {
                Some(order) => Self::qam(order, power),
                None => Err(Error::Config(format!("unknown constellation '{other}'"))),
            },
        }
    }

    pub fn kind(&self) -> ConstellationKind {
        self.kind
    }

    pub fn is_gaussian(&self) -> bool {
        self.kind == ConstellationKind::Gaussian
    }

    pub fn points(&self) -> &[Complex64] {
        &self.points
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn power(&self) -> f64 {
        self.power
    }

    pub fn iq(&self) -> Option<(&Pam, &Pam)> {
        self.iq.as_ref().map(|(a, b)| (a, b))
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn mean(&self) -> Complex64 {
        self.points
            .iter()
            .zip(&self.probs)
            .map(|(x, p)| x * *p)
            .sum()
    }

    /// Entropy of the alphabet in bits; infinite for the Gaussian sentinel.
    pub fn entropy_bits(&self) -> f64 {
        match self.kind {
            ConstellationKind::Gaussian => f64::INFINITY,
            ConstellationKind::Discrete => entropy_bits(&self.probs),
        }
    }

    /// Re-checks the type invariants.
    pub fn validate(&self) -> Result<()> {
        ensure_positive("power", self.power)?;
        if self.kind == ConstellationKind::Gaussian {
            return Ok(());
        }
        check_probs(&self.probs, self.points.len())?;
        let p: f64 = self
            .points
            .iter()
            .zip(&self.probs)
            .map(|(x, p)| p * x.norm_sqr())
            .sum();
        if (p - self.power).abs() > SUM_TOL * self.power.max(1.0) {
            return Err(Error::InvalidDistribution(format!(
                "stored power {} does not match alphabet power {p}",
                self.power
            )));
        }
        Ok(())
    }
}

fn check_probs(probs: &[f64], n: usize) -> Result<()> {
    if probs.len() != n || n == 0 {
        return Err(Error::InvalidDistribution(format!(
            "{} probabilities for {n} points",
            probs.len()
        )));
    }
    if probs.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
        return Err(Error::InvalidDistribution("negative probability".into()));
    }
    let s: f64 = probs.iter().sum();
    if (s - 1.0).abs() > SUM_TOL {
        return Err(Error::InvalidDistribution(format!(
            "probabilities sum to {s}"
        )));
    }
    Ok(())
}

fn entropy_bits(probs: &[f64]) -> f64 {
    probs
        .iter()
        .filter(|p| **p > 0.0)
        .map(|p| -p * p.log2())
        .sum()
}
