//! Batch experiments: config parsing, risk studies, condition checks and identity runs.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use sha2::{Digest, Sha256};

use crate::conditions::{
    check_minimax_conditions, check_necessary_conditions, check_schwartz_integrability_with, default_grid,
    default_tail, fmt_sig17, reference_f_samples, ConditionReport, Tolerances, CONDITION_CSV_HEADER,
};
use crate::elliptical::MixingMeasure;
use crate::error::{Error, Result};
use crate::estimators::EstimatorSpec;
use crate::risk::{risk, risk_difference, IdentityComparison, IdentityReport, IdentitySetup, RiskEstimate, Scenario, MIN_REPS};
use crate::spd::{parse_f64_list, read_csv_rows, spd_from_spec, SigmaSpec, SpdMatrix};

pub const ARTIFACT_VERSION: &str = concat!("ellipshrink/", env!("CARGO_PKG_VERSION"));

pub const CONFIG_KEYS: [&str; 10] = ["p", "N", "sigma", "theta", "mixing", "estimators", "reps", "seed", "compare", "out"];

pub const RISK_CSV_HEADER: [&str; 10] = [
    "scenario",
    "estimator",
    "p",
    "N",
    "mixing",
    "theta_norm",
    "reps",
    "seed",
    "risk",
    "std_error",
];

pub const DEFAULT_REPS: usize = 10_000;

/// Number of reference draws of `F` used by the integrability checks.
pub const SCHWARTZ_SAMPLES: usize = 20_000;

fn cfg_err(line: Option<usize>, key: &str, reason: impl Into<String>) -> Error {
    Error::Config {
        line,
        key: key.to_string(),
        reason: reason.into(),
    }
}

/// Direction of a θ ray, normalized to unit length when the points are built.
#[derive(Debug, Clone, PartialEq)]
pub enum Direction {
    /// `e<k>`, one-based.
    Axis(usize),
    Ones,
    Explicit(Vec<f64>),
}

impl Direction {
    fn parse(spec: &str) -> std::result::Result<Self, String> {
        if spec == "ones" {
            return Ok(Direction::Ones);
        }
        if let Some(k) = spec.strip_prefix('e') {
            let k: usize = k.parse().map_err(|_| format!("bad axis `{spec}`"))?;
            if k == 0 {
                return Err("axis index is one-based".into());
            }
            return Ok(Direction::Axis(k));
        }
        let v = parse_f64_list(&spec.replace(';', ","))?;
        Ok(Direction::Explicit(v))
    }

    fn unit(&self, p: usize) -> std::result::Result<DVector<f64>, String> {
        match self {
            Direction::Axis(k) => {
                if *k > p {
                    return Err(format!("axis e{k} exceeds dimension {p}"));
                }
                let mut v = DVector::zeros(p);
                v[k - 1] = 1.0;
                Ok(v)
            }
            Direction::Ones => Ok(DVector::from_element(p, 1.0 / (p as f64).sqrt())),
            Direction::Explicit(v) => {
                if v.len() != p {
                    return Err(format!("direction has {} entries, expected {p}", v.len()));
                }
                let v = DVector::from_column_slice(v);
                let norm = v.norm();
                if norm == 0.0 {
                    return Err("direction must be nonzero".into());
                }
                Ok(v / norm)
            }
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Direction::Axis(k) => write!(f, "e{k}"),
            Direction::Ones => f.write_str("ones"),
            Direction::Explicit(v) => {
                let parts: Vec<String> = v.iter().map(|x| x.to_string()).collect();
                f.write_str(&parts.join(";"))
            }
        }
    }
}

/// `zero | ray:<dir>:<norm>,<norm>,... | file:<path>` where `<dir>` is `e<k>`,
/// `ones` or a semicolon-separated vector.
#[derive(Debug, Clone, PartialEq)]
pub enum ThetaSpec {
    Zero,
    Ray { direction: Direction, norms: Vec<f64> },
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThetaPoint {
    pub label: String,
    pub norm: f64,
    pub theta: DVector<f64>,
}

impl ThetaSpec {
    pub fn parse(spec: &str) -> Result<Self> {
        let spec = spec.trim();
        if spec == "zero" {
            return Ok(ThetaSpec::Zero);
        }
        if let Some(rest) = spec.strip_prefix("ray:") {
            let (dir, norms) = rest
                .split_once(':')
                .ok_or_else(|| Error::bad_spec(spec, "expected ray:<dir>:<norms>"))?;
            let direction = Direction::parse(dir.trim()).map_err(|e| Error::bad_spec(spec, e))?;
            let norms = parse_f64_list(norms).map_err(|e| Error::bad_spec(spec, e))?;
            if norms.iter().any(|&n| n < 0.0) {
                return Err(Error::bad_spec(spec, "norms must be nonnegative"));
            }
            return Ok(ThetaSpec::Ray { direction, norms });
        }
        if let Some(path) = spec.strip_prefix("file:") {
            if path.trim().is_empty() {
                return Err(Error::bad_spec(spec, "empty path"));
            }
            return Ok(ThetaSpec::File(PathBuf::from(path.trim())));
        }
        Err(Error::bad_spec(spec, "expected zero, ray:<dir>:<norms> or file:<path>"))
    }

    pub fn points(&self, p: usize) -> Result<Vec<ThetaPoint>> {
        match self {
            ThetaSpec::Zero => Ok(vec![ThetaPoint {
                label: "zero".into(),
                norm: 0.0,
                theta: DVector::zeros(p),
            }]),
            ThetaSpec::Ray { direction, norms } => {
                let unit = direction.unit(p).map_err(|e| Error::bad_spec(&self.to_string(), e))?;
                Ok(norms
                    .iter()
                    .map(|&norm| ThetaPoint {
                        label: format!("ray:{direction}"),
                        norm,
                        theta: &unit * norm,
                    })
                    .collect())
            }
            ThetaSpec::File(path) => {
                let rows = read_csv_rows(path)?;
                if rows.is_empty() {
                    return Err(Error::bad_spec(&self.to_string(), "no rows"));
                }
                rows.into_iter()
                    .enumerate()
                    .map(|(i, row)| {
                        if row.len() != p {
                            return Err(Error::bad_spec(
                                &self.to_string(),
                                format!("row {} has {} fields, expected {p}", i + 1, row.len()),
                            ));
                        }
                        let theta = DVector::from_vec(row);
                        Ok(ThetaPoint {
                            label: format!("file:{}#{}", path.display(), i + 1),
                            norm: theta.norm(),
                            theta,
                        })
                    })
                    .collect()
            }
        }
    }
}

impl fmt::Display for ThetaSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ThetaSpec::Zero => f.write_str("zero"),
            ThetaSpec::Ray { direction, norms } => {
                let parts: Vec<String> = norms.iter().map(|x| x.to_string()).collect();
                write!(f, "ray:{direction}:{}", parts.join(","))
            }
            ThetaSpec::File(path) => write!(f, "file:{}", path.display()),
        }
    }
}

/// Splits a comma-separated estimator list, reattaching `key=value` parameters
/// to the spec they belong to (`baranchik:at,c=1, js` is two entries).
pub fn split_estimator_list(list: &str) -> std::result::Result<Vec<String>, String> {
    let mut out: Vec<String> = Vec::new();
    for tok in list.split(',') {
        let tok = tok.trim();
        if tok.is_empty() {
            return Err("empty entry in estimator list".into());
        }
        match out.last_mut() {
            Some(last) if tok.contains('=') && !tok.contains(':') => {
                last.push(',');
                last.push_str(tok);
            }
            _ => out.push(tok.to_string()),
        }
    }
    Ok(out)
}

/// Unvalidated `key = value` entries with the line each came from.
#[derive(Debug, Clone, Default)]
pub struct RawConfig {
    entries: BTreeMap<String, (Option<usize>, String)>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut raw = RawConfig::default();
        for (i, line) in text.lines().enumerate() {
            let lineno = Some(i + 1);
            let content = line.split_once('#').map_or(line, |(c, _)| c).trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| cfg_err(lineno, content, "expected `key = value`"))?;
            let (key, value) = (key.trim(), value.trim());
            if !CONFIG_KEYS.contains(&key) {
                return Err(cfg_err(lineno, key, format!("unknown key (expected one of {})", CONFIG_KEYS.join(", "))));
            }
            if value.is_empty() {
                return Err(cfg_err(lineno, key, "empty value"));
            }
            if let Some((prev, _)) = raw.entries.get(key) {
                let first = prev.map(|l| format!(" (first set on line {l})")).unwrap_or_default();
                return Err(cfg_err(lineno, key, format!("duplicate key{first}")));
            }
            raw.entries.insert(key.to_string(), (lineno, value.to_string()));
        }
        Ok(raw)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Overrides (or adds) one key, as a command-line flag would.
    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<()> {
        if !CONFIG_KEYS.contains(&key) {
            return Err(cfg_err(None, key, "unknown key"));
        }
        self.entries.insert(key.to_string(), (None, value.into()));
        Ok(())
    }

    fn get(&self, key: &str) -> Option<(Option<usize>, &str)> {
        self.entries.get(key).map(|(l, v)| (*l, v.as_str()))
    }

    fn required(&self, key: &str) -> Result<(Option<usize>, &str)> {
        self.get(key).ok_or_else(|| cfg_err(None, key, "missing required key"))
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str, default: Option<T>) -> Result<(Option<usize>, T)>
    where
        T::Err: fmt::Display,
    {
        match (self.get(key), default) {
            (Some((line, v)), _) => v
                .parse::<T>()
                .map(|x| (line, x))
                .map_err(|e| cfg_err(line, key, format!("`{v}`: {e}"))),
            (None, Some(d)) => Ok((None, d)),
            (None, None) => Err(cfg_err(None, key, "missing required key")),
        }
    }

    pub fn build(&self) -> Result<ExperimentConfig> {
        let (p_line, p) = self.parsed::<usize>("p", None)?;
        if p < 3 {
            return Err(cfg_err(p_line, "p", format!("need p >= 3, got {p}")));
        }
        let (n_line, n) = self.parsed::<usize>("N", None)?;
        if n <= p {
            return Err(cfg_err(n_line, "N", format!("need N > p, got N = {n}, p = {p}")));
        }

        let (line, spec) = self.get("sigma").unwrap_or((None, "identity"));
        let sigma_spec = SigmaSpec::parse(spec, p).map_err(|e| cfg_err(line, "sigma", e.to_string()))?;
        let sigma = spd_from_spec(&sigma_spec).map_err(|e| cfg_err(line, "sigma", e.to_string()))?;

        let (line, spec) = self.get("theta").unwrap_or((None, "zero"));
        let theta_spec = ThetaSpec::parse(spec).map_err(|e| cfg_err(line, "theta", e.to_string()))?;
        let theta_points = theta_spec.points(p).map_err(|e| cfg_err(line, "theta", e.to_string()))?;

        let (line, spec) = self.get("mixing").unwrap_or((None, "gaussian"));
        let mixing = MixingMeasure::parse(spec).map_err(|e| cfg_err(line, "mixing", e.to_string()))?;

        let (line, list) = self.required("estimators")?;
        let estimators = split_estimator_list(list)
            .map_err(|e| cfg_err(line, "estimators", e))?
            .iter()
            .map(|s| EstimatorSpec::parse(s, p, n).map_err(|e| cfg_err(line, "estimators", e.to_string())))
            .collect::<Result<Vec<_>>>()?;

        let (line, reps) = self.parsed::<usize>("reps", Some(DEFAULT_REPS))?;
        if reps < MIN_REPS {
            return Err(cfg_err(line, "reps", format!("need at least {MIN_REPS}, got {reps}")));
        }
        let (_, seed) = self.parsed::<u64>("seed", Some(0))?;
        let (_, compare) = self.parsed::<bool>("compare", Some(false))?;
        let out = self.get("out").map(|(_, v)| PathBuf::from(v));

        Ok(ExperimentConfig {
            p,
            n,
            sigma_spec,
            sigma,
            theta_spec,
            theta_points,
            mixing,
            estimators,
            reps,
            seed,
            compare,
            out,
        })
    }
}

/// A validated risk study.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub p: usize,
    pub n: usize,
    pub sigma_spec: SigmaSpec,
    pub sigma: SpdMatrix,
    pub theta_spec: ThetaSpec,
    pub theta_points: Vec<ThetaPoint>,
    pub mixing: MixingMeasure,
    pub estimators: Vec<EstimatorSpec>,
    pub reps: usize,
    pub seed: u64,
    pub compare: bool,
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        RawConfig::parse(text)?.build()
    }

    /// Resolved settings in a fixed key order; `out` is excluded since it does
    /// not affect results.
    pub fn canonical(&self) -> String {
        let estimators: Vec<&str> = self.estimators.iter().map(|e| e.label()).collect();
        format!(
            "p = {}\nN = {}\nsigma = {}\ntheta = {}\nmixing = {}\nestimators = {}\nreps = {}\nseed = {}\ncompare = {}\n",
            self.p,
            self.n,
            self.sigma_spec,
            self.theta_spec,
            self.mixing,
            estimators.join(", "),
            self.reps,
            self.seed,
            self.compare
        )
    }

    /// SHA-256 of [`canonical`](Self::canonical), lowercase hex.
    pub fn hash(&self) -> String {
        Sha256::digest(self.canonical().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn scenarios(&self) -> Result<Vec<(f64, Scenario)>> {
        self.theta_points
            .iter()
            .map(|pt| {
                let label = format!("sigma={};theta={}", self.sigma_spec, pt.label);
                Ok((
                    pt.norm,
                    Scenario::new(self.n, self.sigma.clone(), pt.theta.clone(), self.mixing.clone())?.with_label(label),
                ))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiskRow {
    pub p: usize,
    pub n: usize,
    pub mixing: String,
    pub theta_norm: f64,
    pub estimate: RiskEstimate,
}

/// One row per (estimator, θ point), then one paired-difference row per
/// estimator pair and θ point when `compare` is set.
pub fn run_risk(cfg: &ExperimentConfig) -> Result<Vec<RiskRow>> {
    let scenarios = cfg.scenarios()?;
    let mixing = cfg.mixing.to_string();
    let row = |norm: f64, estimate: RiskEstimate| RiskRow {
        p: cfg.p,
        n: cfg.n,
        mixing: mixing.clone(),
        theta_norm: norm,
        estimate,
    };
    let mut rows = Vec::new();
    for est in &cfg.estimators {
        for (norm, scn) in &scenarios {
            log::info!("risk of {} at {}", est.label(), scn.label());
            rows.push(row(*norm, risk(scn, est, cfg.reps, cfg.seed)?));
        }
    }
    if cfg.compare {
        for (i, a) in cfg.estimators.iter().enumerate() {
            for b in &cfg.estimators[i + 1..] {
                for (norm, scn) in &scenarios {
                    rows.push(row(*norm, risk_difference(scn, a, b, cfg.reps, cfg.seed)?));
                }
            }
        }
    }
    Ok(rows)
}

/// Writes `#`-prefixed provenance lines followed by the risk CSV.
pub fn write_risk_csv<W: Write>(cfg: &ExperimentConfig, rows: &[RiskRow], mut out: W) -> Result<()> {
    let meta = format!(
        "# artifact: {ARTIFACT_VERSION}\n# seed: {}\n# config_sha256: {}\n",
        cfg.seed,
        cfg.hash()
    );
    out.write_all(meta.as_bytes()).map_err(|e| Error::io("<output>", e))?;
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record(RISK_CSV_HEADER)?;
    for r in rows {
        writer.write_record([
            r.estimate.scenario.clone(),
            r.estimate.estimator.clone(),
            r.p.to_string(),
            r.n.to_string(),
            r.mixing.clone(),
            fmt_sig17(r.theta_norm),
            r.estimate.reps.to_string(),
            r.estimate.seed.to_string(),
            fmt_sig17(r.estimate.value),
            fmt_sig17(r.estimate.std_error),
        ])?;
    }
    writer.flush().map_err(|e| Error::io("<output>", e))?;
    Ok(())
}

pub fn render_risk_csv(cfg: &ExperimentConfig, rows: &[RiskRow]) -> Result<String> {
    let mut buf = Vec::new();
    write_risk_csv(cfg, rows, &mut buf)?;
    Ok(String::from_utf8(buf).expect("csv output is utf-8"))
}

/// Runs `f` on a dedicated pool of `threads` workers, or on the global pool.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(0) => Err(Error::InvalidParameter("thread count must be positive".into())),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::InvalidParameter(e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}

#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub minimax: ConditionReport,
    pub necessary: ConditionReport,
    pub schwartz: ConditionReport,
}

impl CheckOutcome {
    pub fn reports(&self) -> [&ConditionReport; 3] {
        [&self.minimax, &self.necessary, &self.schwartz]
    }

    pub fn has_failure(&self) -> bool {
        self.reports().iter().any(|r| r.has_failure())
    }

    pub fn render_text(&self) -> String {
        self.reports().iter().map(|r| r.render_text()).collect::<Vec<_>>().join("\n")
    }

    pub fn render_csv(&self) -> Result<String> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer.write_record(CONDITION_CSV_HEADER)?;
        for r in self.reports() {
            r.write_csv_rows(&mut writer)?;
        }
        let bytes = writer.into_inner().map_err(|e| Error::io("<output>", e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// Parses `spec` under the estimator grammar and checks its shrinkage function
/// on the default grid, tail sequence and reference `F` sample.
pub fn run_check(spec: &str, p: usize, n: usize, seed: u64) -> Result<CheckOutcome> {
    let r = EstimatorSpec::parse(spec, p, n)?.shrinkage_function(p)?;
    let minimax = check_minimax_conditions(&r, p, n, &default_grid())?;
    let necessary = check_necessary_conditions(&r, p, n, &default_tail())?;
    let samples = reference_f_samples(p, n, SCHWARTZ_SAMPLES, seed)?;
    let schwartz = check_schwartz_integrability_with(&r, &samples, &Tolerances::default())?;
    Ok(CheckOutcome {
        minimax,
        necessary,
        schwartz,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdentityParams {
    pub p: usize,
    /// Wishart degrees of freedom.
    pub n: usize,
    pub alpha: f64,
    pub beta: f64,
    /// θ is this multiple of `e₁`.
    pub theta_norm: f64,
    /// Shrinkage function, in the estimator grammar.
    pub function: String,
    /// Sample size used when the function spec depends on it.
    pub sample_size: usize,
    pub reps: usize,
    pub seed: u64,
    pub perturb: f64,
}

impl Default for IdentityParams {
    fn default() -> Self {
        Self {
            p: 5,
            n: 19,
            alpha: 0.05,
            beta: 1.0,
            theta_norm: 0.0,
            function: "baranchik:at,c=1".into(),
            sample_size: 20,
            reps: 200_000,
            seed: 0,
            perturb: 1.0,
        }
    }
}

impl IdentityParams {
    /// Validates the parameters and builds the check inputs (`Σ = I`).
    pub fn setup(&self) -> Result<IdentitySetup> {
        if self.p < 3 {
            return Err(Error::InvalidParameter(format!("need p >= 3, got {}", self.p)));
        }
        if self.n < self.p {
            return Err(Error::DofTooSmall { dof: self.n, dim: self.p });
        }
        if !(self.alpha > 0.0 && self.beta > 0.0) {
            return Err(Error::InvalidParameter("alpha and beta must be positive".into()));
        }
        if !(self.perturb.is_finite() && self.theta_norm.is_finite()) {
            return Err(Error::InvalidParameter("perturb and theta-norm must be finite".into()));
        }
        if self.reps < MIN_REPS {
            return Err(Error::InvalidParameter(format!("need at least {MIN_REPS} replicates")));
        }
        let r = EstimatorSpec::parse(&self.function, self.p, self.sample_size)?.shrinkage_function(self.p)?;
        let mut theta = DVector::zeros(self.p);
        theta[0] = self.theta_norm;
        Ok(IdentitySetup {
            alpha: self.alpha,
            beta: self.beta,
            dof: self.n,
            theta,
            sigma: SpdMatrix::identity(self.p),
            r,
            reps: self.reps,
            seed: self.seed,
            perturb: self.perturb,
        })
    }
}

pub fn render_identity(params: &IdentityParams, report: &IdentityReport) -> String {
    fn line(name: &str, c: &IdentityComparison) -> String {
        format!(
            "{name:<14} lhs={:.8e} (se {:.3e})  rhs={:.8e} (se {:.3e})  z={:+.3}  {}\n",
            c.lhs.mean,
            c.lhs.std_error,
            c.rhs.mean,
            c.rhs.std_error,
            c.z,
            if c.pass { "pass" } else { "FAIL" }
        )
    }
    let mut s = format!(
        "identity check: p={} n={} alpha={} beta={} theta_norm={} r={} reps={} seed={} perturb={}\n",
        params.p,
        params.n,
        params.alpha,
        params.beta,
        params.theta_norm,
        params.function,
        params.reps,
        params.seed,
        params.perturb
    );
    s += &line("cross", &report.cross);
    s += &line("quadratic", &report.quadratic);
    s += &line("cross(stein)", &report.cross_direct);
    s += &format!("overall: {}\n", if report.pass { "pass" } else { "FAIL" });
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "# minimal\np = 5\nN = 20\nestimators = mean\nreps = 200\nseed = 3\n";

    #[test]
    fn parses_minimal_config_with_defaults() {
        let cfg = ExperimentConfig::parse(MINIMAL).unwrap();
        assert_eq!((cfg.p, cfg.n, cfg.reps, cfg.seed, cfg.compare), (5, 20, 200, 3, false));
        assert_eq!(cfg.sigma_spec, SigmaSpec::Identity(5));
        assert_eq!(cfg.theta_spec, ThetaSpec::Zero);
        assert!(cfg.mixing.is_probability());
        assert_eq!(cfg.estimators.len(), 1);
        assert!(cfg.out.is_none());
    }

    #[test]
    fn diagnostics_name_line_and_key() {
        let err = ExperimentConfig::parse("p = 5\nN = 20\nestimators = mean\nreps = 10\n").unwrap_err();
        assert!(matches!(&err, Error::Config { line: Some(4), key, .. } if key == "reps"), "{err}");
        let err = ExperimentConfig::parse("p = 5\nsize = 20\n").unwrap_err();
        assert!(matches!(&err, Error::Config { line: Some(2), key, .. } if key == "size"));
        let err = ExperimentConfig::parse("p = 5\nN = 20\nN = 21\n").unwrap_err();
        assert!(err.to_string().contains("duplicate"));
        let err = ExperimentConfig::parse("p = 5\nN = 20\nestimators = baranchik:at\n").unwrap_err();
        assert!(matches!(&err, Error::Config { line: Some(3), key, .. } if key == "estimators"));
        let err = ExperimentConfig::parse("p = 5\nN = 5\nestimators = mean\n").unwrap_err();
        assert!(matches!(&err, Error::Config { key, .. } if key == "N"));
        let err = ExperimentConfig::parse("p = 5\nN = 20\n").unwrap_err();
        assert!(err.to_string().contains("missing"));
        let err = ExperimentConfig::parse("p = 5\nN 20\n").unwrap_err();
        assert!(matches!(err, Error::Config { line: Some(2), .. }));
        let err = ExperimentConfig::parse("p = 5\nN = 20\nestimators = mean\ncompare = maybe\n").unwrap_err();
        assert!(matches!(&err, Error::Config { line: Some(4), key, .. } if key == "compare"));
        let err = ExperimentConfig::parse("p = 5\nN = 20\nestimators = mean\ntheta = ray:e1:-1\n").unwrap_err();
        assert!(matches!(&err, Error::Config { key, .. } if key == "theta"));
    }

    #[test]
    fn overrides_replace_file_values() {
        let mut raw = RawConfig::parse(MINIMAL).unwrap();
        raw.set("reps", "300").unwrap();
        raw.set("seed", "9").unwrap();
        let cfg = raw.build().unwrap();
        assert_eq!((cfg.reps, cfg.seed), (300, 9));
        assert!(raw.set("bogus", "1").is_err());
    }

    #[test]
    fn estimator_list_reattaches_parameters() {
        assert_eq!(
            split_estimator_list("mean, js+, baranchik:at,c=1, baranchik:const,k=3").unwrap(),
            vec!["mean", "js+", "baranchik:at,c=1", "baranchik:const,k=3"]
        );
        assert!(split_estimator_list("mean,,js").is_err());
    }

    #[test]
    fn theta_grammar() {
        let ray = ThetaSpec::parse("ray:e2:0,1.5").unwrap();
        let pts = ray.points(3).unwrap();
        assert_eq!(pts.len(), 2);
        assert_eq!(pts[1].theta, DVector::from_vec(vec![0.0, 1.5, 0.0]));
        assert_eq!(pts[1].norm, 1.5);

        let ones = ThetaSpec::parse("ray:ones:2").unwrap().points(4).unwrap();
        assert!((ones[0].theta.norm() - 2.0).abs() < 1e-15);
        assert!((ones[0].theta[3] - 1.0).abs() < 1e-15);

        let explicit = ThetaSpec::parse("ray:3;4;0:5").unwrap().points(3).unwrap();
        assert!((explicit[0].theta[0] - 3.0).abs() < 1e-14);
        assert!((explicit[0].theta[1] - 4.0).abs() < 1e-14);

        assert!(ThetaSpec::parse("ray:e4:1").unwrap().points(3).is_err());
        assert!(ThetaSpec::parse("ray:e0:1").is_err());
        assert!(ThetaSpec::parse("ray:e1").is_err());
        assert!(ThetaSpec::parse("ray:0;0;0:1").unwrap().points(3).is_err());
        assert!(ThetaSpec::parse("polar:1").is_err());
        for s in ["zero", "ray:e2:0,1.5", "ray:ones:2", "file:th.csv"] {
            assert_eq!(ThetaSpec::parse(s).unwrap().to_string(), s);
        }
    }

    #[test]
    fn theta_from_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("theta.csv");
        std::fs::write(&path, "3,4,0\n0,0,1\n").unwrap();
        let pts = ThetaSpec::File(path.clone()).points(3).unwrap();
        assert_eq!(pts.len(), 2);
        assert_eq!(pts[0].norm, 5.0);
        assert!(ThetaSpec::File(path).points(2).is_err());
    }

    #[test]
    fn hash_tracks_settings_not_output_path() {
        let a = ExperimentConfig::parse(MINIMAL).unwrap();
        let b = ExperimentConfig::parse(&format!("{MINIMAL}out = x.csv\n")).unwrap();
        let c = ExperimentConfig::parse(&MINIMAL.replace("seed = 3", "seed = 4")).unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn risk_rows_and_csv() {
        let text = "p = 4\nN = 10\nestimators = mean, js\ntheta = ray:e1:0,3\nreps = 200\ncompare = true\n";
        let cfg = ExperimentConfig::parse(text).unwrap();
        let rows = run_risk(&cfg).unwrap();
        assert_eq!(rows.len(), 2 * 2 + 2);
        assert_eq!(rows[4].estimate.estimator, "diff[mean;js]");
        assert_eq!(rows[1].theta_norm, 3.0);
        let csv_text = render_risk_csv(&cfg, &rows).unwrap();
        let lines: Vec<&str> = csv_text.lines().collect();
        assert!(lines[0].starts_with("# artifact: ellipshrink/"));
        assert_eq!(lines[1], "# seed: 0");
        assert_eq!(lines[2], format!("# config_sha256: {}", cfg.hash()));
        assert_eq!(lines[3], RISK_CSV_HEADER.join(","));
        assert_eq!(lines.len(), 4 + rows.len());

        let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(csv_text.as_bytes());
        let risks: Vec<f64> = reader.records().map(|r| r.unwrap()[8].parse().unwrap()).collect();
        assert_eq!(risks[0], rows[0].estimate.value);
        assert_eq!(risks[5], rows[5].estimate.value);
    }

    #[test]
    fn signed_mixing_routes_through_atoms() {
        let text = "p = 5\nN = 20\nestimators = mean, js\nmixing = atoms:1=1.3,2=-0.3\nreps = 200\n";
        let cfg = ExperimentConfig::parse(text).unwrap();
        assert!(!cfg.mixing.is_probability());
        let rows = run_risk(&cfg).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows.iter().all(|r| r.estimate.value.is_finite()));
    }

    #[test]
    fn thread_count_does_not_change_output() {
        let text = "p = 3\nN = 8\nestimators = js+\nmixing = t:5\nreps = 500\nseed = 11\n";
        let cfg = ExperimentConfig::parse(text).unwrap();
        let one = with_threads(Some(1), || render_risk_csv(&cfg, &run_risk(&cfg).unwrap()).unwrap()).unwrap();
        let three = with_threads(Some(3), || render_risk_csv(&cfg, &run_risk(&cfg).unwrap()).unwrap()).unwrap();
        assert_eq!(one, three);
        assert!(with_threads(Some(0), || ()).is_err());
    }

    #[test]
    fn check_outcomes() {
        let at = run_check("baranchik:at,c=1", 5, 20, 0).unwrap();
        assert!(!at.has_failure(), "{}", at.render_text());
        let constant = run_check("baranchik:const,k=3", 5, 20, 0).unwrap();
        assert!(constant.has_failure());
        assert!(run_check("baranchik:at", 5, 20, 0).is_err());
        let csv_text = at.render_csv().unwrap();
        assert!(csv_text.starts_with("condition,verdict,witness_x,witness_value,detail"));
    }

    #[test]
    fn identity_params_validation() {
        let small = IdentityParams {
            n: 4,
            ..IdentityParams::default()
        };
        assert!(matches!(small.setup(), Err(Error::DofTooSmall { dof: 4, dim: 5 })));
        let bad_fn = IdentityParams {
            function: "baranchik:nope".into(),
            ..IdentityParams::default()
        };
        assert!(bad_fn.setup().is_err());
        let setup = IdentityParams {
            theta_norm: 2.0,
            ..IdentityParams::default()
        }
        .setup()
        .unwrap();
        assert_eq!(setup.theta[0], 2.0);
        assert_eq!(setup.dof, 19);
    }
}
