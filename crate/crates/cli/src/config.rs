use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Basis,
    DecompVerify,
    Simulate,
    Solve,
    SolveType1,
    Lyapunov,
    LyapunovDist,
    Divergence,
    Fmeasure,
    EulerArnoldLimit,
}

pub const KINDS: [&str; 10] = [
    "basis",
    "decomp-verify",
    "simulate",
    "solve",
    "solve-type1",
    "lyapunov",
    "lyapunov-dist",
    "divergence",
    "fmeasure",
    "euler-arnold-limit",
];

impl FromStr for Kind {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        Ok(match s {
            "basis" => Kind::Basis,
            "decomp-verify" => Kind::DecompVerify,
            "simulate" => Kind::Simulate,
            "solve" => Kind::Solve,
            "solve-type1" => Kind::SolveType1,
            "lyapunov" => Kind::Lyapunov,
            "lyapunov-dist" => Kind::LyapunovDist,
            "divergence" => Kind::Divergence,
            "fmeasure" => Kind::Fmeasure,
            "euler-arnold-limit" => Kind::EulerArnoldLimit,
            _ => {
                return Err(CliError::Validation(format!(
                    "unknown kind '{s}'; expected one of: {}",
                    KINDS.join(", ")
                )))
            }
        })
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let i = match self {
            Kind::Basis => 0,
            Kind::DecompVerify => 1,
            Kind::Simulate => 2,
            Kind::Solve => 3,
            Kind::SolveType1 => 4,
            Kind::Lyapunov => 5,
            Kind::LyapunovDist => 6,
            Kind::Divergence => 7,
            Kind::Fmeasure => 8,
            Kind::EulerArnoldLimit => 9,
        };
        f.write_str(KINDS[i])
    }
}

impl Kind {
    /// Kinds that always draw random numbers.
    pub fn is_stochastic(self) -> bool {
        matches!(
            self,
            Kind::Solve | Kind::SolveType1 | Kind::Lyapunov | Kind::LyapunovDist | Kind::Divergence | Kind::Fmeasure
        )
    }

    /// Parameter keys accepted by this kind.
    pub fn allowed_keys(self) -> &'static [&'static str] {
        const SOURCE: [&str; 4] = ["fixture", "n", "k", "decomposition_file"];
        match self {
            Kind::Basis => &["n"],
            Kind::DecompVerify => &SOURCE,
            Kind::Simulate => &["fixture", "n", "k", "decomposition_file", "state", "state_norm", "t_end", "samples", "tol", "closed_form", "unitary"],
            Kind::Solve | Kind::SolveType1 => &[
                "fixture", "n", "k", "decomposition_file", "target", "n_starts", "budget", "start_norm", "method", "tol",
            ],
            Kind::Lyapunov => &[
                "fixture", "n", "k", "decomposition_file", "state", "state_norm", "n_perturbations", "grid_intervals", "d_rel", "tol",
            ],
            Kind::LyapunovDist => &[
                "fixture", "n", "k", "decomposition_file", "n_samples", "n_perturbations", "grid_intervals", "d_rel", "tol",
            ],
            Kind::Divergence => &[
                "fixture", "n", "k", "decomposition_file", "state", "state_norm", "n_perturbations", "grid_intervals", "d_rel", "tol",
            ],
            Kind::Fmeasure => &["fixture", "n", "k", "decomposition_file", "state", "state_norm", "d_rel", "n_samples", "tol"],
            Kind::EulerArnoldLimit => &["n", "k", "c", "q", "epsilons", "state", "state_norm", "tol"],
        }
    }
}

/// On-disk experiment description.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: String,
    #[serde(default)]
    pub parameters: Map<String, Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

/// Overrides coming from command-line flags.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub kind: Option<String>,
    pub n: Option<usize>,
    pub seed: Option<u64>,
    pub tol: Option<f64>,
    pub out: Option<PathBuf>,
}

pub fn json_error(path: &Path, e: &serde_json::Error) -> CliError {
    CliError::Validation(format!(
        "{}: invalid config at line {}, column {}: {}",
        path.display(),
        e.line(),
        e.column(),
        e
    ))
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| json_error(path, &e))
    }

    /// Config assembled from flags alone (`--kind` is then mandatory).
    pub fn from_overrides(o: &Overrides) -> Result<Self, CliError> {
        let kind = o
            .kind
            .clone()
            .ok_or_else(|| CliError::Validation(format!("either --config or --kind is required; kinds: {}", KINDS.join(", "))))?;
        Ok(Self {
            kind,
            parameters: Map::new(),
            seed: None,
            output_dir: None,
        })
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(k) = &o.kind {
            self.kind = k.clone();
        }
        if let Some(n) = o.n {
            self.parameters.insert("n".into(), Value::from(n));
        }
        if let Some(t) = o.tol {
            self.parameters.insert("tol".into(), Value::from(t));
        }
        if let Some(s) = o.seed {
            self.seed = Some(s);
        }
        if let Some(d) = &o.out {
            self.output_dir = Some(d.clone());
        }
    }

    /// Checks the kind, the parameter keys and the seed requirement.
    pub fn validate(&self) -> Result<Kind, CliError> {
        let kind: Kind = self.kind.parse()?;
        let allowed = kind.allowed_keys();
        let mut unknown: Vec<&str> = self
            .parameters
            .keys()
            .map(String::as_str)
            .filter(|k| !allowed.contains(k))
            .collect();
        if !unknown.is_empty() {
            unknown.sort_unstable();
            return Err(CliError::Validation(format!(
                "unknown parameter(s) for kind '{kind}': {}; accepted: {}",
                unknown.join(", "),
                allowed.join(", ")
            )));
        }
        if kind.is_stochastic() && self.seed.is_none() {
            return Err(CliError::Validation(format!("kind '{kind}' is stochastic and needs a seed")));
        }
        if kind == Kind::Basis && !self.parameters.contains_key("n") {
            return Err(CliError::Validation("kind 'basis' needs parameter n".into()));
        }
        Ok(kind)
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output_dir.clone().unwrap_or_else(|| PathBuf::from("brachx-out"))
    }

    /// Deserializes the parameter map into a kind-specific struct.
    pub fn params<T: for<'de> Deserialize<'de>>(&self) -> Result<T, CliError> {
        serde_json::from_value(Value::Object(self.parameters.clone()))
            .map_err(|e| CliError::Validation(format!("parameters for kind '{}': {e}", self.kind)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(kind: &str, params: Value, seed: Option<u64>) -> ExperimentConfig {
        ExperimentConfig {
            kind: kind.into(),
            parameters: params.as_object().cloned().unwrap_or_default(),
            seed,
            output_dir: None,
        }
    }

    #[test]
    fn kinds_round_trip() {
        for k in KINDS {
            assert_eq!(k.parse::<Kind>().unwrap().to_string(), k);
        }
        let err = "bogus".parse::<Kind>().unwrap_err().to_string();
        assert!(err.contains("euler-arnold-limit"));
    }

    #[test]
    fn validation_rules() {
        assert!(cfg("solve", serde_json::json!({"fixture": "su4_type1"}), None).validate().is_err());
        assert!(cfg("solve", serde_json::json!({"fixture": "su4_type1"}), Some(1)).validate().is_ok());
        assert!(cfg("basis", serde_json::json!({}), None).validate().is_err());
        let e = cfg("basis", serde_json::json!({"n": 3, "colour": 1}), None).validate().unwrap_err();
        assert!(e.to_string().contains("colour"));
    }

    #[test]
    fn overrides_win() {
        let mut c = cfg("basis", serde_json::json!({"n": 2}), None);
        c.apply(&Overrides {
            n: Some(3),
            seed: Some(4),
            ..Default::default()
        });
        assert_eq!(c.parameters["n"], 3);
        assert_eq!(c.seed, Some(4));
    }
}
