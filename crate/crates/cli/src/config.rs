//! Run configuration read from flat `key = value` files.
//!
//! Lines are `section.key = value`; `#` starts a comment, blank lines are
//! ignored. Unknown keys and repeated keys are rejected. Keys listed in
//! [`OPTIONAL_KEYS`] may be omitted; every other key in [`REQUIRED_KEYS`]
//! must be present.

use drfb_core::basis::{RbfBasis, WidthConvention};
use drfb_core::battery::{units, BatteryParams, LinearCrossover, StateVector, FARADAY, GAS_CONSTANT};
use drfb_core::bounds::BoundAssumptions;
use drfb_core::linalg::Mat;
use drfb_core::synthesis::SynthesisConfig;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: key `{key}` given twice")]
    Duplicate { line: usize, key: String },
    #[error("missing required key `{0}`")]
    Missing(String),
    #[error("key `{key}`: {reason}")]
    Invalid { key: String, reason: String },
}

pub const REQUIRED_KEYS: &[&str] = &[
    "battery.v_res_ml",
    "battery.v_cell_ml",
    "battery.c0",
    "battery.epsilon",
    "battery.e0_cell",
    "battery.temperature",
    "crossover.k_mt_l_per_min",
    "basis.m",
    "basis.lo",
    "basis.hi",
    "basis.variance",
    "synthesis.q_min_ml_min",
    "synthesis.q_max_ml_min",
    "synthesis.beta",
    "synthesis.kappa_z",
    "synthesis.kappa_f",
    "synthesis.omega_floor",
    "observer.sigma",
    "observer.x_hat0",
    "observer.theta_hat0",
    "run.dt",
    "run.t_end",
    "run.flow_ml_min",
    "run.x0",
];

pub const OPTIONAL_KEYS: &[&str] = &[
    "basis.convention",
    "synthesis.tol",
    "synthesis.max_iter",
    "observer.lambda_inv",
    "observer.lambda_inv_file",
    "run.noise_w",
    "run.seed",
    "bounds.gamma_theta",
    "bounds.w_bar",
    "bounds.eps_bar",
    "bounds.gamma_s_tilde",
    "bounds.rho",
    "bounds.varrho",
];

/// Raw key/value pairs with their line numbers.
#[derive(Debug, Clone, Default)]
pub struct RawConfig {
    entries: BTreeMap<String, (usize, String)>,
    base_dir: PathBuf,
}

impl RawConfig {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let (k, v) = body.split_once('=').ok_or(ConfigError::Syntax { line })?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() || v.is_empty() {
                return Err(ConfigError::Syntax { line });
            }
            if !REQUIRED_KEYS.contains(&k) && !OPTIONAL_KEYS.contains(&k) {
                return Err(ConfigError::UnknownKey { line, key: k.to_string() });
            }
            if entries.insert(k.to_string(), (line, v.to_string())).is_some() {
                return Err(ConfigError::Duplicate { line, key: k.to_string() });
            }
        }
        if let Some(k) = REQUIRED_KEYS.iter().find(|k| !entries.contains_key(**k)) {
            return Err(ConfigError::Missing(k.to_string()));
        }
        Ok(Self { entries, base_dir: base_dir.to_path_buf() })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(_, v)| v.as_str())
    }

    fn invalid(key: &str, reason: impl Into<String>) -> ConfigError {
        ConfigError::Invalid { key: key.to_string(), reason: reason.into() }
    }

    fn f64_opt(&self, key: &str) -> Result<Option<f64>, ConfigError> {
        self.raw(key)
            .map(|v| {
                v.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| Self::invalid(key, format!("`{v}` is not a finite number")))
            })
            .transpose()
    }

    fn f64(&self, key: &str) -> Result<f64, ConfigError> {
        self.f64_opt(key)?.ok_or_else(|| ConfigError::Missing(key.to_string()))
    }

    fn usize(&self, key: &str) -> Result<Option<usize>, ConfigError> {
        self.raw(key)
            .map(|v| v.parse::<usize>().map_err(|_| Self::invalid(key, format!("`{v}` is not a non-negative integer"))))
            .transpose()
    }

    fn list(&self, key: &str) -> Result<Vec<f64>, ConfigError> {
        let v = self.raw(key).ok_or_else(|| ConfigError::Missing(key.to_string()))?;
        v.split(',')
            .map(|s| {
                let s = s.trim();
                s.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| Self::invalid(key, format!("`{s}` is not a finite number")))
            })
            .collect()
    }
}

/// Parsed and cross-checked configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub battery: BatteryParams<f64>,
    pub crossover: LinearCrossover<f64>,
    pub basis: RbfBasis<f64>,
    pub synthesis: SynthesisConfig<f64>,
    pub lambda_inv: Mat<f64>,
    pub sigma: f64,
    pub x_hat0: StateVector<f64>,
    pub theta_hat0: Vec<f64>,
    /// Output and observer step [s].
    pub dt: f64,
    pub t_end: f64,
    /// [L/s]
    pub flow: f64,
    pub x0: StateVector<f64>,
    pub noise_w: f64,
    pub seed: u64,
    pub bounds: BoundOverrides,
}

/// Bound assumptions given explicitly; missing ones come from the basis fit.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BoundOverrides {
    pub gamma_theta: Option<f64>,
    pub w_bar: Option<f64>,
    pub eps_bar: Option<f64>,
    pub gamma_s_tilde: Option<f64>,
    pub rho: Option<f64>,
    pub varrho: Option<f64>,
}

impl BoundOverrides {
    pub fn apply(&self, mut a: BoundAssumptions<f64>) -> BoundAssumptions<f64> {
        a.gamma_theta = self.gamma_theta.unwrap_or(a.gamma_theta);
        a.w_bar = self.w_bar.unwrap_or(a.w_bar);
        a.eps_bar = self.eps_bar.unwrap_or(a.eps_bar);
        a.gamma_s_tilde = self.gamma_s_tilde.unwrap_or(a.gamma_s_tilde);
        a.rho = self.rho.unwrap_or(a.rho);
        a.varrho = self.varrho.unwrap_or(a.varrho);
        a
    }
}

fn pair(raw: &RawConfig, key: &str) -> Result<StateVector<f64>, ConfigError> {
    match raw.list(key)?.as_slice() {
        &[a, b] => Ok(StateVector::new(a, b)),
        other => Err(RawConfig::invalid(key, format!("expected 2 comma-separated values, got {}", other.len()))),
    }
}

/// Reads a whitespace or comma separated square matrix; `#` comments allowed.
pub fn read_matrix(path: &Path) -> Result<Mat<f64>, ConfigError> {
    let key = "observer.lambda_inv_file";
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for line in text.lines() {
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let row = body
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<f64>().map_err(|_| RawConfig::invalid(key, format!("`{s}` is not a number"))))
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(RawConfig::invalid(key, "matrix must be square and non-empty"));
    }
    Ok(Mat::from_fn(n, n, |i, j| rows[i][j]))
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::from_raw(&RawConfig::load(path)?)
    }

    pub fn from_raw(raw: &RawConfig) -> Result<Self, ConfigError> {
        let battery = BatteryParams {
            v_res: units::ml_to_l(raw.f64("battery.v_res_ml")?),
            v_cell: units::ml_to_l(raw.f64("battery.v_cell_ml")?),
            c0: raw.f64("battery.c0")?,
            epsilon: raw.f64("battery.epsilon")?,
            e0_cell: raw.f64("battery.e0_cell")?,
            temperature: raw.f64("battery.temperature")?,
            faraday: FARADAY,
            gas_constant: GAS_CONSTANT,
        };
        battery.validate().map_err(|e| RawConfig::invalid("battery", e.to_string()))?;
        let crossover = LinearCrossover::from_l_per_min(raw.f64("crossover.k_mt_l_per_min")?)
            .map_err(|e| RawConfig::invalid("crossover.k_mt_l_per_min", e.to_string()))?;

        let m = raw.usize("basis.m")?.ok_or_else(|| ConfigError::Missing("basis.m".into()))?;
        let convention = match raw.raw("basis.convention").unwrap_or("half") {
            "half" => WidthConvention::HalfVariance,
            "full" => WidthConvention::FullVariance,
            other => return Err(RawConfig::invalid("basis.convention", format!("expected `half` or `full`, got `{other}`"))),
        };
        let basis = RbfBasis::uniform_with(m, raw.f64("basis.lo")?, raw.f64("basis.hi")?, raw.f64("basis.variance")?, convention)
            .map_err(|e| RawConfig::invalid("basis", e.to_string()))?;

        let mut synthesis = SynthesisConfig::experiment();
        synthesis.q_min = units::ml_per_min_to_l_per_s(raw.f64("synthesis.q_min_ml_min")?);
        synthesis.q_max = units::ml_per_min_to_l_per_s(raw.f64("synthesis.q_max_ml_min")?);
        synthesis.beta = raw.f64("synthesis.beta")?;
        synthesis.kappa_z = raw.f64("synthesis.kappa_z")?;
        synthesis.kappa_f = raw.f64("synthesis.kappa_f")?;
        let floor = raw.f64("synthesis.omega_floor")?;
        synthesis.omega_floor = [floor, floor];
        if let Some(tol) = raw.f64_opt("synthesis.tol")? {
            synthesis.tol = tol;
        }
        if let Some(n) = raw.usize("synthesis.max_iter")? {
            synthesis.max_iter = n;
        }
        synthesis.validate().map_err(|e| RawConfig::invalid("synthesis", e.to_string()))?;

        let lambda_inv = match (raw.f64_opt("observer.lambda_inv")?, raw.raw("observer.lambda_inv_file")) {
            (Some(scale), None) => Mat::identity(m).scale(scale),
            (None, Some(file)) => read_matrix(&raw.base_dir.join(file))?,
            (Some(_), Some(_)) => {
                return Err(RawConfig::invalid("observer.lambda_inv", "give either lambda_inv or lambda_inv_file, not both"))
            }
            (None, None) => return Err(ConfigError::Missing("observer.lambda_inv".into())),
        };
        if lambda_inv.rows() != m {
            return Err(RawConfig::invalid("observer.lambda_inv_file", format!("matrix is {0}x{0}, basis.m = {m}", lambda_inv.rows())));
        }
        let theta_hat0 = match raw.raw("observer.theta_hat0") {
            Some("zero") => vec![0.0; m],
            _ => raw.list("observer.theta_hat0")?,
        };
        if theta_hat0.len() != m {
            return Err(RawConfig::invalid("observer.theta_hat0", format!("{} entries, basis.m = {m}", theta_hat0.len())));
        }

        let dt = raw.f64("run.dt")?;
        let t_end = raw.f64("run.t_end")?;
        if !(dt > 0.0) || !(t_end >= 0.0) {
            return Err(RawConfig::invalid("run.dt", "dt must be > 0 and t_end >= 0"));
        }
        let noise_w = raw.f64_opt("run.noise_w")?.unwrap_or(0.0);
        if noise_w < 0.0 {
            return Err(RawConfig::invalid("run.noise_w", "must be >= 0"));
        }
        let seed = match raw.raw("run.seed") {
            Some(v) => v.parse().map_err(|_| RawConfig::invalid("run.seed", format!("`{v}` is not an unsigned integer")))?,
            None => 0,
        };
        let bounds = BoundOverrides {
            gamma_theta: raw.f64_opt("bounds.gamma_theta")?,
            w_bar: raw.f64_opt("bounds.w_bar")?,
            eps_bar: raw.f64_opt("bounds.eps_bar")?,
            gamma_s_tilde: raw.f64_opt("bounds.gamma_s_tilde")?,
            rho: raw.f64_opt("bounds.rho")?,
            varrho: raw.f64_opt("bounds.varrho")?,
        };
        Ok(Self {
            battery,
            crossover,
            basis,
            synthesis,
            lambda_inv,
            sigma: raw.f64("observer.sigma")?,
            x_hat0: pair(raw, "observer.x_hat0")?,
            theta_hat0,
            dt,
            t_end,
            flow: units::ml_per_min_to_l_per_s(raw.f64("run.flow_ml_min")?),
            x0: pair(raw, "run.x0")?,
            noise_w,
            seed,
            bounds,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub const BASE: &str = include_str!("../../../configs/self_discharge.cfg");

    fn parse(text: &str) -> Result<RunConfig, ConfigError> {
        RunConfig::from_raw(&RawConfig::parse(text, Path::new("."))?)
    }

    #[test]
    fn base_config_parses() {
        let c = parse(BASE).unwrap();
        assert_eq!(c.basis.m(), 7);
        assert_eq!(c.theta_hat0, vec![0.0; 7]);
        assert_eq!(c.lambda_inv[(3, 3)], 4.798e-7);
        assert_eq!(c.battery, BatteryParams::reference_cell());
    }

    #[test]
    fn missing_key_named() {
        let text: String = BASE.lines().filter(|l| !l.starts_with("basis.m")).map(|l| format!("{l}\n")).collect();
        let err = parse(&text).unwrap_err();
        assert!(err.to_string().contains("basis.m"), "{err}");
    }

    #[test]
    fn unknown_and_duplicate_keys_rejected() {
        assert!(matches!(parse(&format!("{BASE}\nbasis.colour = 3\n")), Err(ConfigError::UnknownKey { .. })));
        assert!(matches!(parse(&format!("{BASE}\nbasis.m = 7\n")), Err(ConfigError::Duplicate { .. })));
        assert!(matches!(parse("basis.m 7\n"), Err(ConfigError::Syntax { line: 1 })));
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let text = BASE.replace("observer.theta_hat0 = zero", "observer.theta_hat0 = 0, 0, 0");
        assert!(parse(&text).unwrap_err().to_string().contains("theta_hat0"));
    }

    #[test]
    fn bound_overrides_applied() {
        let c = parse(&format!("{BASE}\nbounds.rho = 0\n")).unwrap();
        assert_eq!(c.bounds.rho, Some(0.0));
        assert_eq!(c.bounds.w_bar, None);
    }
}
