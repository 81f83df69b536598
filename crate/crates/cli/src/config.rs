//! Run configuration in TOML form.

use std::fmt;

use nsfide_core::density::Functional;
use nsfide_core::model::ModelSpec;
use nsfide_core::spectral::SpectralField;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSpec,
    #[serde(default)]
    pub monte_carlo: MonteCarlo,
    #[serde(default)]
    pub density: DensityOptions,
    #[serde(default)]
    pub fbm_test: FbmTest,
    #[serde(default)]
    pub output: OutputOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MonteCarlo {
    pub paths: usize,
    pub seed: u64,
}

impl Default for MonteCarlo {
    fn default() -> Self {
        Self { paths: 200, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DensityOptions {
    /// Evaluation time; the horizon when omitted.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
    pub epsilon: f64,
    /// `e<k>` for `⟨e_k, ·⟩`, `norm`, `norm_unnormalized`.
    pub functionals: Vec<String>,
}

impl Default for DensityOptions {
    fn default() -> Self {
        Self {
            t: None,
            epsilon: nsfide_core::density::DEFAULT_EPSILON,
            functionals: vec!["e1".into(), "norm".into(), "norm_unnormalized".into()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FbmTest {
    pub hurst: Vec<f64>,
    pub points: usize,
    pub paths: usize,
}

impl Default for FbmTest {
    fn default() -> Self {
        Self {
            hurst: vec![0.6, 0.75, 0.9],
            points: 8,
            paths: 20_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputOptions {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<String>,
}

/// Every problem found in a configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigErrors(pub Vec<String>);

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, e) in self.0.iter().enumerate() {
            if k > 0 {
                writeln!(f)?;
            }
            write!(f, "{e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigErrors {}

const REQUIRED_MODEL_KEYS: [&str; 9] = [
    "hurst", "horizon", "delay", "dt", "g", "f", "sigma", "kernel", "initial",
];

pub fn parse_config(text: &str) -> Result<RunConfig, ConfigErrors> {
    let value: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigErrors(vec![e.message().to_string()]))?;
    let mut missing = Vec::new();
    match value.get("model") {
        Some(toml::Value::Table(m)) => {
            for k in REQUIRED_MODEL_KEYS {
                if !m.contains_key(k) {
                    missing.push(format!("missing key model.{k}"));
                }
            }
        }
        Some(_) => missing.push("model must be a table".into()),
        None => missing.push("missing key model".into()),
    }
    if !missing.is_empty() {
        return Err(ConfigErrors(missing));
    }
    let cfg: RunConfig = toml::Value::Table(value)
        .try_into()
        .map_err(|e: toml::de::Error| ConfigErrors(vec![e.message().to_string()]))?;
    let problems = cfg.problems();
    if problems.is_empty() {
        Ok(cfg)
    } else {
        Err(ConfigErrors(problems))
    }
}

/// Functional by name for a model with `n_modes` modes.
pub fn functional(name: &str, n_modes: usize) -> Result<Functional, String> {
    match name {
        "norm" => Ok(Functional::Norm),
        "norm_unnormalized" => Ok(Functional::NormUnnormalized),
        _ => {
            let k = name
                .strip_prefix('e')
                .and_then(|k| k.parse::<usize>().ok())
                .ok_or_else(|| format!("unknown functional '{name}'"))?;
            if k == 0 || k > n_modes {
                return Err(format!("functional '{name}' needs a mode in 1..={n_modes}"));
            }
            Ok(Functional::Linear(SpectralField::basis_vector(n_modes, k).coeffs))
        }
    }
}

impl RunConfig {
    pub fn problems(&self) -> Vec<String> {
        let mut out = self.model.problems();
        if self.monte_carlo.paths < 2 {
            out.push(format!("monte_carlo.paths must be at least 2: {}", self.monte_carlo.paths));
        }
        let d = &self.density;
        if !(d.epsilon >= 0.0 && d.epsilon.is_finite()) {
            out.push(format!("density.epsilon must be nonnegative: {}", d.epsilon));
        }
        if let Some(t) = d.t {
            if !(t > 0.0 && t <= self.model.horizon) {
                out.push(format!("density.t outside (0, T]: {t}"));
            }
        }
        if d.functionals.is_empty() {
            out.push("density.functionals is empty".into());
        }
        for name in &d.functionals {
            if let Err(e) = functional(name, self.model.n_modes) {
                out.push(format!("density: {e}"));
            }
        }
        let f = &self.fbm_test;
        for h in &f.hurst {
            if !(*h > 0.5 && *h < 1.0) {
                out.push(format!("fbm_test: hurst out of (1/2,1): {h}"));
            }
        }
        if f.points == 0 || f.paths < 2 {
            out.push("fbm_test needs at least 1 point and 2 paths".into());
        }
        out
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// Default options around the given model.
    pub fn with_model(model: ModelSpec) -> Self {
        Self {
            model,
            monte_carlo: MonteCarlo::default(),
            density: DensityOptions::default(),
            fbm_test: FbmTest::default(),
            output: OutputOptions::default(),
        }
    }

    /// The built-in nonlinear reference model with default options.
    pub fn builtin() -> Self {
        Self::with_model(crate::validate::reference_spec())
    }
}
