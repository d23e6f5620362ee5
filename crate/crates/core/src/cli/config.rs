use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::evolution::GaConfig;
use crate::fitness::{AccuracyTriple, Endpoint, PlantedOracle};
use crate::rope::RotaryConfig;
use crate::toy::{ToyModelConfig, DEFAULT_TRIALS};

use super::CliError;

/// Which backend scores schedules.
#[derive(Debug, Clone, PartialEq)]
pub enum EvaluatorSpec {
    Planted,
    Toy,
    Constant(AccuracyTriple),
    External(Endpoint),
}

impl FromStr for EvaluatorSpec {
    type Err = String;

    /// `planted`, `toy`, `constant:a,b,c`, `external:<host:port>` or `external-cmd:<argv>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        match s {
            "planted" => return Ok(Self::Planted),
            "toy" => return Ok(Self::Toy),
            _ => {}
        }
        if let Some(rest) = s.strip_prefix("constant:") {
            let v: Vec<f64> = rest
                .split(',')
                .map(|p| p.trim().parse::<f64>().map_err(|e| format!("bad accuracy `{p}`: {e}")))
                .collect::<Result<_, _>>()?;
            let [f, m, l] = v[..] else {
                return Err(format!("constant evaluator needs three accuracies, got `{rest}`"));
            };
            return AccuracyTriple::percent(f, m, l)
                .map(Self::Constant)
                .map_err(|e| e.to_string());
        }
        if let Some(argv) = s.strip_prefix("external-cmd:") {
            return Endpoint::from_str(&format!("cmd:{argv}")).map(Self::External);
        }
        if let Some(addr) = s.strip_prefix("external:") {
            return Endpoint::from_str(addr).map(Self::External);
        }
        Err(format!(
            "unknown evaluator `{s}`; expected planted, toy, constant:a,b,c, external:<addr> or external-cmd:<argv>"
        ))
    }
}

impl std::fmt::Display for EvaluatorSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Planted => write!(f, "planted"),
            Self::Toy => write!(f, "toy"),
            Self::Constant(t) => write!(f, "constant:{},{},{}", t.first, t.middle, t.last),
            Self::External(Endpoint::Tcp(addr)) => write!(f, "external:{addr}"),
            Self::External(Endpoint::Command(argv)) => write!(f, "external-cmd:{}", argv.join(" ")),
        }
    }
}

/// Joins the one- or two-token command-line form into a spec string.
pub fn parse_evaluator_tokens(tokens: &[String]) -> Result<EvaluatorSpec, String> {
    match tokens {
        [one] => one.parse(),
        [kind, arg] if kind == "external-cmd" || kind == "external" || kind == "constant" => {
            format!("{kind}:{arg}").parse()
        }
        _ => Err(format!("cannot parse evaluator from {tokens:?}")),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantedSection {
    pub sharpness: f64,
    /// Hidden schedule; defaults to the built-in curve sampled at `n_layers`.
    pub hidden: Option<Vec<f64>>,
}

impl Default for PlantedSection {
    fn default() -> Self {
        Self {
            sharpness: PlantedOracle::DEFAULT_SHARPNESS,
            hidden: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluatorSection {
    pub spec: String,
    pub timeout_secs: f64,
    /// Client-side retries per request for external evaluators.
    pub retries: u32,
    /// Toy oracle trials per position.
    pub trials: usize,
    /// Toy oracle instance seed.
    pub instance_seed: u64,
}

impl Default for EvaluatorSection {
    fn default() -> Self {
        Self {
            spec: "planted".into(),
            timeout_secs: 300.0,
            retries: 3,
            trials: DEFAULT_TRIALS,
            instance_seed: 0,
        }
    }
}

/// Everything a run needs, as read from a TOML file.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub ga: GaConfig,
    pub toy: ToyModelConfig,
    pub rope: RotaryConfig,
    pub planted: PlantedSection,
    pub evaluator: EvaluatorSection,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("invalid config {}: {e}", path.display())))
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self, CliError> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn evaluator_spec(&self) -> Result<EvaluatorSpec, CliError> {
        self.evaluator.spec.parse().map_err(CliError::Config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn evaluator_specs() {
        assert_eq!("planted".parse::<EvaluatorSpec>().unwrap(), EvaluatorSpec::Planted);
        let c: EvaluatorSpec = "constant:70,55.6,60.2".parse().unwrap();
        assert_eq!(c.to_string(), "constant:70,55.6,60.2");
        assert!("constant:1,2".parse::<EvaluatorSpec>().is_err());
        assert!("constant:1,2,300".parse::<EvaluatorSpec>().is_err());
        assert_eq!(
            "external:127.0.0.1:5000".parse::<EvaluatorSpec>().unwrap(),
            EvaluatorSpec::External(Endpoint::Tcp("127.0.0.1:5000".into()))
        );
        let two = parse_evaluator_tokens(&["external-cmd".into(), "python3 bridge.py --stdio".into()])
            .unwrap();
        assert_eq!(
            two,
            EvaluatorSpec::External(Endpoint::Command(vec![
                "python3".into(),
                "bridge.py".into(),
                "--stdio".into()
            ]))
        );
        assert_eq!(two.to_string(), "external-cmd:python3 bridge.py --stdio");
        assert!("magic".parse::<EvaluatorSpec>().is_err());
    }

    #[test]
    fn config_sections_parse() {
        let cfg: RunConfig = toml::from_str(
            r#"
            [ga]
            population_size = 16
            top_k = 4
            [toy]
            seq_len = 128
            [planted]
            sharpness = 3.0
            [evaluator]
            spec = "toy"
            trials = 8
            "#,
        )
        .unwrap();
        assert_eq!(cfg.ga.population_size, 16);
        assert_eq!(cfg.ga.mutation_size, 16);
        assert_eq!(cfg.toy.seq_len, 128);
        assert_eq!(cfg.planted.sharpness, 3.0);
        assert_eq!(cfg.evaluator_spec().unwrap(), EvaluatorSpec::Toy);
        assert_eq!(cfg.evaluator.timeout_secs, 300.0);
        assert!(toml::from_str::<RunConfig>("[gaa]\nx = 1").is_err());
    }
}
