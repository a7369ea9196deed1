//! Elliptically contoured errors as scale mixtures of normals.
//!
//! A [`MixingMeasure`] `W` on `(0, ∞)` weights normal components with covariance
//! `t⁻¹ Σ`. Probability measures can be sampled two-stage (draw `t`, then the
//! conditional normal rows); signed atom lists are representable but only usable
//! through per-atom conditional computations in [`crate::risk`].

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};
use crate::spd::SpdMatrix;

/// Tolerance on the total mass of an atom list.
pub const MASS_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Atom {
    /// Precision multiplier `t > 0`; the component covariance is `Σ / t`.
    pub location: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum MixingKind {
    PointMass(f64),
    /// Gamma law on `t` with the given shape and rate.
    GammaRate { shape: f64, rate: f64 },
    DiscreteAtoms(Vec<Atom>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixingMeasure {
    kind: MixingKind,
    is_probability: bool,
}

impl MixingMeasure {
    pub fn gaussian() -> Self {
        Self {
            kind: MixingKind::PointMass(1.0),
            is_probability: true,
        }
    }

    pub fn point_mass(t0: f64) -> Result<Self> {
        if !(t0 > 0.0 && t0.is_finite()) {
            return Err(Error::InvalidParameter(format!("point mass location {t0} must be positive")));
        }
        Ok(Self {
            kind: MixingKind::PointMass(t0),
            is_probability: true,
        })
    }

    pub fn gamma_rate(shape: f64, rate: f64) -> Result<Self> {
        if !(shape > 1.0 && shape.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "gamma shape {shape} must exceed 1 for a finite inverse-scale mean"
            )));
        }
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(Error::InvalidParameter(format!("gamma rate {rate} must be positive")));
        }
        Ok(Self {
            kind: MixingKind::GammaRate { shape, rate },
            is_probability: true,
        })
    }

    /// Multivariate-t with `nu` degrees of freedom: `t ~ Gamma(ν/2, rate ν/2)`.
    pub fn student_t(nu: f64) -> Result<Self> {
        if !(nu > 2.0) {
            return Err(Error::InvalidParameter(format!("t family needs nu > 2, got {nu}")));
        }
        Self::gamma_rate(nu / 2.0, nu / 2.0)
    }

    pub fn atoms(atoms: Vec<Atom>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::InvalidParameter("atom list is empty".into()));
        }
        for (i, a) in atoms.iter().enumerate() {
            if !(a.location > 0.0 && a.location.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "atom location {} must be positive",
                    a.location
                )));
            }
            if !a.weight.is_finite() {
                return Err(Error::InvalidParameter("atom weight is not finite".into()));
            }
            if atoms[..i].iter().any(|b| b.location == a.location) {
                return Err(Error::InvalidParameter(format!(
                    "duplicate atom location {}",
                    a.location
                )));
            }
        }
        let total: f64 = atoms.iter().map(|a| a.weight).sum();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::InvalidParameter(format!("atom weights sum to {total}, not 1")));
        }
        let is_probability = atoms.iter().all(|a| a.weight >= 0.0);
        Ok(Self {
            kind: MixingKind::DiscreteAtoms(atoms),
            is_probability,
        })
    }

    /// Parses `gaussian` | `t:<nu>` | `atoms:<t1>=<w1>,<t2>=<w2>,...`.
    pub fn parse(spec: &str) -> Result<Self> {
        let spec = spec.trim();
        if spec == "gaussian" {
            return Ok(Self::gaussian());
        }
        if let Some(nu) = spec.strip_prefix("t:") {
            let nu: f64 = nu.trim().parse().map_err(|e| Error::bad_spec(spec, format!("{e}")))?;
            return Self::student_t(nu);
        }
        if let Some(list) = spec.strip_prefix("atoms:") {
            let atoms = list
                .split(',')
                .map(|pair| {
                    let (t, w) = pair
                        .split_once('=')
                        .ok_or_else(|| Error::bad_spec(spec, format!("`{pair}` is not <t>=<w>")))?;
                    let location = t.trim().parse::<f64>().map_err(|e| Error::bad_spec(spec, e.to_string()))?;
                    let weight = w.trim().parse::<f64>().map_err(|e| Error::bad_spec(spec, e.to_string()))?;
                    Ok(Atom { location, weight })
                })
                .collect::<Result<Vec<_>>>()?;
            return Self::atoms(atoms);
        }
        Err(Error::bad_spec(spec, "expected gaussian | t:<nu> | atoms:<t>=<w>,..."))
    }

    pub fn kind(&self) -> &MixingKind {
        &self.kind
    }

    pub fn is_probability(&self) -> bool {
        self.is_probability
    }

    pub fn atom_list(&self) -> Option<&[Atom]> {
        match &self.kind {
            MixingKind::DiscreteAtoms(a) => Some(a),
            _ => None,
        }
    }

    /// `m₁ = ∫ t⁻¹ W(dt)`, so that `Cov(εᵢ) = m₁ Σ`.
    pub fn inverse_scale_mean(&self) -> Result<f64> {
        match &self.kind {
            MixingKind::PointMass(t0) => Ok(1.0 / t0),
            MixingKind::GammaRate { shape, rate } => {
                if *shape <= 1.0 {
                    return Err(Error::DivergentMoment(format!("gamma shape {shape} <= 1")));
                }
                Ok(rate / (shape - 1.0))
            }
            MixingKind::DiscreteAtoms(atoms) => Ok(atoms.iter().map(|a| a.weight / a.location).sum()),
        }
    }

    /// Draws one precision multiplier `t ~ W`.
    pub fn sample_scale<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<f64> {
        if !self.is_probability {
            return Err(Error::SignedMeasureSampling);
        }
        match &self.kind {
            MixingKind::PointMass(t0) => Ok(*t0),
            MixingKind::GammaRate { shape, rate } => {
                let gamma = Gamma::new(*shape, 1.0 / rate)
                    .map_err(|e| Error::InvalidParameter(e.to_string()))?;
                Ok(gamma.sample(rng))
            }
            MixingKind::DiscreteAtoms(atoms) => {
                let u: f64 = rng.random();
                let mut cumulative = 0.0;
                for a in atoms {
                    cumulative += a.weight;
                    if u < cumulative {
                        return Ok(a.location);
                    }
                }
                // u landed in the round-off gap above the last partial sum
                Ok(atoms.iter().rev().find(|a| a.weight > 0.0).map_or(atoms[0].location, |a| a.location))
            }
        }
    }
}

impl fmt::Display for MixingMeasure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            MixingKind::PointMass(t) if *t == 1.0 => write!(f, "gaussian"),
            MixingKind::PointMass(t) => write!(f, "atoms:{t}=1"),
            MixingKind::GammaRate { shape, rate } if shape == rate => write!(f, "t:{}", 2.0 * shape),
            MixingKind::GammaRate { shape, rate } => write!(f, "gamma:{shape},{rate}"),
            MixingKind::DiscreteAtoms(atoms) => {
                let parts: Vec<String> = atoms.iter().map(|a| format!("{}={}", a.location, a.weight)).collect();
                write!(f, "atoms:{}", parts.join(","))
            }
        }
    }
}

pub fn make_mixing_measure(spec: &str) -> Result<MixingMeasure> {
    MixingMeasure::parse(spec)
}

/// `N` rows distributed `N(0, t⁻¹ Σ)` for a fixed precision multiplier `t`.
pub fn sample_errors_given_scale<R: Rng + ?Sized>(
    t: f64,
    sigma: &SpdMatrix,
    n: usize,
    rng: &mut R,
) -> DMatrix<f64> {
    let p = sigma.dim();
    let lower = sigma.cholesky_lower();
    let inv_sqrt_t = 1.0 / t.sqrt();
    let mut out = DMatrix::zeros(n, p);
    let mut z = DVector::<f64>::zeros(p);
    for i in 0..n {
        for j in 0..p {
            z[j] = rng.sample::<f64, _>(StandardNormal);
        }
        for a in 0..p {
            let mut acc = 0.0;
            for b in 0..=a {
                acc += lower[(a, b)] * z[b];
            }
            out[(i, a)] = acc * inv_sqrt_t;
        }
    }
    out
}

/// One shared `t ~ W` for all `N` rows, then conditionally normal rows.
pub fn sample_errors<R: Rng + ?Sized>(
    mixing: &MixingMeasure,
    sigma: &SpdMatrix,
    n: usize,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    if n == 0 {
        return Err(Error::InvalidParameter("need at least one error vector".into()));
    }
    let t = mixing.sample_scale(rng)?;
    Ok(sample_errors_given_scale(t, sigma, n, rng))
}

/// Wishart draw with the given scale and degrees of freedom, via the
/// lower-triangular factor with chi diagonal and standard-normal subdiagonal.
pub fn sample_wishart<R: Rng + ?Sized>(scale: &SpdMatrix, dof: usize, rng: &mut R) -> Result<SpdMatrix> {
    let p = scale.dim();
    if dof < p {
        return Err(Error::DofTooSmall { dof, dim: p });
    }
    let mut a = DMatrix::zeros(p, p);
    for i in 0..p {
        let chi2 = ChiSquared::new((dof - i) as f64).map_err(|e| Error::InvalidParameter(e.to_string()))?;
        a[(i, i)] = chi2.sample(rng).sqrt();
        for j in 0..i {
            a[(i, j)] = rng.sample(StandardNormal);
        }
    }
    let factor = scale.cholesky_lower() * a;
    let w = &factor * factor.transpose();
    SpdMatrix::new((&w + w.transpose()) * 0.5)
}
