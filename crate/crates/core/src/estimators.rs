//! Sample mean, James-Stein type and Baranchik-class estimators.
//!
//! The Baranchik class shrinks the sample mean by `1 − r(F)/F` with
//! `F = Ȳᵀ S⁻¹ Ȳ` and a nonnegative shrinkage function `r`.

use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::stats::SufficientStats;

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Family parameters carried alongside a shrinkage function.
#[derive(Debug, Clone, PartialEq)]
pub enum ShrinkageParams {
    Constant { k: f64 },
    AlamThompson { b: f64, c: f64, p: usize, n: usize },
    Custom,
}

#[derive(Clone)]
pub struct ShrinkageFunction {
    name: String,
    eval: ScalarFn,
    deriv: Option<ScalarFn>,
    params: ShrinkageParams,
}

impl fmt::Debug for ShrinkageFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ShrinkageFunction")
            .field("name", &self.name)
            .field("closed_form_deriv", &self.deriv.is_some())
            .field("params", &self.params)
            .finish()
    }
}

impl ShrinkageFunction {
    /// A black-box `r`; derivatives fall back to centered differences.
    pub fn custom(name: impl Into<String>, eval: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            name: name.into(),
            eval: Arc::new(eval),
            deriv: None,
            params: ShrinkageParams::Custom,
        }
    }

    pub fn with_derivative(mut self, deriv: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.deriv = Some(Arc::new(deriv));
        self
    }

    pub fn constant(k: f64) -> Result<Self> {
        if !(k >= 0.0 && k.is_finite()) {
            return Err(Error::InvalidParameter(format!("constant shrinkage {k} must be nonnegative")));
        }
        Ok(Self {
            name: format!("const(k={k})"),
            eval: Arc::new(move |_| k),
            deriv: Some(Arc::new(|_| 0.0)),
            params: ShrinkageParams::Constant { k },
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn params(&self) -> &ShrinkageParams {
        &self.params
    }

    pub fn has_closed_form_deriv(&self) -> bool {
        self.deriv.is_some()
    }

    pub fn eval(&self, x: f64) -> f64 {
        (self.eval)(x)
    }

    pub fn deriv(&self, x: f64) -> f64 {
        match &self.deriv {
            Some(d) => d(x),
            None => self.fd_deriv(x),
        }
    }

    /// Centered difference with step `max(1e-6, 1e-6·x)`, one-sided near zero.
    pub fn fd_deriv(&self, x: f64) -> f64 {
        let h = (1e-6 * x).max(1e-6);
        if x >= h {
            (self.eval(x + h) - self.eval(x - h)) / (2.0 * h)
        } else {
            (self.eval(x + h) - self.eval(x)) / h
        }
    }
}

/// Generalized Alam–Thompson shrinkage `r*(x) = (p−2)·b·x/(x + c)` with
/// `b = 1/(N(N−p+2))`.
///
/// The closed-form derivative is `(p−2)·b·c/(x + c)²`, obtained by direct
/// differentiation and cross-checked against finite differences.
pub fn alam_thompson_r(p: usize, n: usize, c: f64) -> Result<ShrinkageFunction> {
    if p < 3 {
        return Err(Error::InvalidParameter(format!("alam_thompson needs p >= 3, got {p}")));
    }
    if n <= p {
        return Err(Error::InvalidParameter(format!("alam_thompson needs N > p (N = {n}, p = {p})")));
    }
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::InvalidParameter(format!("alam_thompson needs c > 0, got {c}")));
    }
    let b = 1.0 / (n as f64 * (n - p + 2) as f64);
    let scale = (p - 2) as f64 * b;
    Ok(ShrinkageFunction {
        name: format!("alam_thompson(c={c})"),
        eval: Arc::new(move |x| scale * x / (x + c)),
        deriv: Some(Arc::new(move |x| scale * c / ((x + c) * (x + c)))),
        params: ShrinkageParams::AlamThompson { b, c, p, n },
    })
}

/// `1 − r(F)/F`, optionally clamped at zero.
pub fn shrinkage_factor(f: f64, r: &ShrinkageFunction, positive_part: bool) -> f64 {
    let factor = 1.0 - r.eval(f) / f;
    if positive_part {
        factor.max(0.0)
    } else {
        factor
    }
}

pub fn estimate_mean(stats: &SufficientStats) -> DVector<f64> {
    stats.ybar().clone()
}

pub fn estimate_baranchik(
    stats: &SufficientStats,
    r: &ShrinkageFunction,
    positive_part: bool,
) -> Result<DVector<f64>> {
    if stats.p() < 3 {
        return Err(Error::InvalidParameter(format!(
            "shrinkage estimators need p >= 3, got {}",
            stats.p()
        )));
    }
    let ybar = stats.ybar();
    let f = stats.scatter().quad_form_inv(ybar)?;
    if f == 0.0 {
        log::debug!("zero mean vector; returning it unshrunk");
        return Ok(ybar.clone());
    }
    Ok(ybar * shrinkage_factor(f, r, positive_part))
}

/// `[1 − (p−2)/F]·Ȳ`, the Baranchik member with constant `r ≡ p − 2`.
pub fn estimate_james_stein(stats: &SufficientStats, positive_part: bool) -> Result<DVector<f64>> {
    let p = stats.p();
    if p < 3 {
        return Err(Error::InvalidParameter(format!("James-Stein needs p >= 3, got {p}")));
    }
    estimate_baranchik(stats, &ShrinkageFunction::constant((p - 2) as f64)?, positive_part)
}

#[derive(Debug, Clone)]
pub enum EstimatorKind {
    Mean,
    JamesStein,
    Baranchik(ShrinkageFunction),
}

#[derive(Debug, Clone)]
pub struct EstimatorSpec {
    kind: EstimatorKind,
    positive_part: bool,
    label: String,
}

impl EstimatorSpec {
    pub fn mean() -> Self {
        Self {
            kind: EstimatorKind::Mean,
            positive_part: false,
            label: "mean".into(),
        }
    }

    pub fn james_stein(p: usize, positive_part: bool) -> Result<Self> {
        check_shrinkage_dim(p)?;
        Ok(Self {
            kind: EstimatorKind::JamesStein,
            positive_part,
            label: if positive_part { "js+" } else { "js" }.into(),
        })
    }

    pub fn baranchik(p: usize, r: ShrinkageFunction, positive_part: bool) -> Result<Self> {
        check_shrinkage_dim(p)?;
        let label = format!("baranchik:{}{}", r.name(), if positive_part { "+" } else { "" });
        Ok(Self {
            kind: EstimatorKind::Baranchik(r),
            positive_part,
            label,
        })
    }

    /// Grammar: `mean` | `js` | `js+` | `baranchik:at,c=<c>` | `baranchik:const,k=<k>`.
    pub fn parse(spec: &str, p: usize, n: usize) -> Result<Self> {
        let spec = spec.trim();
        let mut parsed = match spec {
            "mean" => Self::mean(),
            "js" => Self::james_stein(p, false)?,
            "js+" => Self::james_stein(p, true)?,
            _ => {
                let body = spec
                    .strip_prefix("baranchik:")
                    .ok_or_else(|| Error::bad_spec(spec, "expected mean | js | js+ | baranchik:<family>,<param>=<v>"))?;
                let (family, param) = body
                    .split_once(',')
                    .ok_or_else(|| Error::bad_spec(spec, "missing family parameter"))?;
                let (key, value) = param
                    .split_once('=')
                    .ok_or_else(|| Error::bad_spec(spec, format!("`{param}` is not <key>=<value>")))?;
                let value: f64 = value
                    .trim()
                    .parse()
                    .map_err(|e| Error::bad_spec(spec, format!("{e}")))?;
                let r = match (family.trim(), key.trim()) {
                    ("at", "c") => alam_thompson_r(p, n, value)?,
                    ("const", "k") => ShrinkageFunction::constant(value)?,
                    _ => return Err(Error::bad_spec(spec, "known families: at,c=<c> and const,k=<k>")),
                };
                Self::baranchik(p, r, false)?
            }
        };
        parsed.label = spec.to_string();
        Ok(parsed)
    }

    pub fn kind(&self) -> &EstimatorKind {
        &self.kind
    }

    pub fn positive_part(&self) -> bool {
        self.positive_part
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    /// The shrinkage function this estimator applies (`r ≡ 0` for the mean).
    pub fn shrinkage_function(&self, p: usize) -> Result<ShrinkageFunction> {
        match &self.kind {
            EstimatorKind::Mean => ShrinkageFunction::constant(0.0),
            EstimatorKind::JamesStein => ShrinkageFunction::constant(p.saturating_sub(2) as f64),
            EstimatorKind::Baranchik(r) => Ok(r.clone()),
        }
    }

    pub fn apply(&self, stats: &SufficientStats) -> Result<DVector<f64>> {
        match &self.kind {
            EstimatorKind::Mean => Ok(estimate_mean(stats)),
            EstimatorKind::JamesStein => estimate_james_stein(stats, self.positive_part),
            EstimatorKind::Baranchik(r) => estimate_baranchik(stats, r, self.positive_part),
        }
    }
}

impl fmt::Display for EstimatorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label)
    }
}

fn check_shrinkage_dim(p: usize) -> Result<()> {
    if p < 3 {
        Err(Error::InvalidParameter(format!("shrinkage estimators need p >= 3, got {p}")))
    } else {
        Ok(())
    }
}
