//! Experiment configuration files.
//!
//! An experiment file is one JSON object: the fields of
//! [`RunConfig`](fedopt_core::federation::RunConfig) plus three optional
//! runner keys, `output_dir`, `sweep` and `repetitions`.

use std::path::{Path, PathBuf};

use fedopt_core::federation::{Algorithm, RunConfig};
use fedopt_core::partition::PartitionRule;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::CliError;

/// Lists of values to sweep. Absent axes keep the base configuration's value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxes {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub algorithm: Option<Vec<Algorithm>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub participating: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub local_steps: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blocks: Option<Vec<PartitionRule>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warm_start_v: Option<Vec<bool>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub run: RunConfig,
    pub output_dir: Option<PathBuf>,
    pub sweep: SweepAxes,
    pub repetitions: usize,
}

/// One point of the sweep grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub index: usize,
    pub config: RunConfig,
}

const RUNNER_KEYS: [&str; 3] = ["output_dir", "sweep", "repetitions"];

fn config_err(source: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{source}: {msg}"))
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Parses and validates an experiment document; `source` names it in
    /// diagnostics.
    pub fn parse(text: &str, source: &str) -> Result<Self, CliError> {
        let value: Value = serde_json::from_str(text).map_err(|e| config_err(source, e))?;
        let Value::Object(mut fields) = value else {
            return Err(config_err(source, "expected a JSON object at the top level"));
        };
        let mut runner = Map::new();
        for key in RUNNER_KEYS {
            if let Some(v) = fields.remove(key) {
                runner.insert(key.to_string(), v);
            }
        }
        let run: RunConfig = serde_json::from_value(Value::Object(fields)).map_err(|e| config_err(source, e))?;
        run.validate().map_err(|e| config_err(source, e))?;

        let output_dir = match runner.remove("output_dir") {
            None | Some(Value::Null) => None,
            Some(Value::String(s)) => Some(PathBuf::from(s)),
            Some(other) => return Err(config_err(source, format!("output_dir must be a string, got {other}"))),
        };
        let sweep: SweepAxes = match runner.remove("sweep") {
            None | Some(Value::Null) => SweepAxes::default(),
            Some(v) => serde_json::from_value(v).map_err(|e| config_err(source, format!("sweep: {e}")))?,
        };
        sweep.check().map_err(|e| config_err(source, e))?;
        let repetitions = match runner.remove("repetitions") {
            None | Some(Value::Null) => 1,
            Some(v) => serde_json::from_value::<usize>(v)
                .map_err(|e| config_err(source, format!("repetitions: {e}")))?,
        };
        if repetitions == 0 {
            return Err(config_err(source, "repetitions must be >= 1"));
        }
        Ok(ExperimentConfig {
            run,
            output_dir,
            sweep,
            repetitions,
        })
    }
}

impl SweepAxes {
    fn check(&self) -> Result<(), String> {
        let lens = [
            ("algorithm", self.algorithm.as_ref().map(Vec::len)),
            ("alpha", self.alpha.as_ref().map(Vec::len)),
            ("lambda", self.lambda.as_ref().map(Vec::len)),
            ("participating", self.participating.as_ref().map(Vec::len)),
            ("local_steps", self.local_steps.as_ref().map(Vec::len)),
            ("blocks", self.blocks.as_ref().map(Vec::len)),
            ("warm_start_v", self.warm_start_v.as_ref().map(Vec::len)),
        ];
        match lens.iter().find(|(_, n)| *n == Some(0)) {
            Some((name, _)) => Err(format!("sweep axis '{name}' is empty")),
            None => Ok(()),
        }
    }

    /// Cartesian product over the axes, in the order algorithm, alpha,
    /// lambda, participating, local_steps, blocks, warm_start_v (last varies
    /// fastest).
    pub fn cells(&self, base: &RunConfig) -> Vec<Cell> {
        fn axis<T: Clone>(values: &Option<Vec<T>>, default: T) -> Vec<T> {
            values.clone().unwrap_or_else(|| vec![default])
        }
        let mut out = Vec::new();
        for algorithm in axis(&self.algorithm, base.algorithm) {
            for alpha in axis(&self.alpha, base.optim.alpha) {
                for lambda in axis(&self.lambda, base.optim.lambda) {
                    for participating in axis(&self.participating, base.participating) {
                        for local_steps in axis(&self.local_steps, base.local_steps) {
                            for partition in axis(&self.blocks, base.partition.clone()) {
                                for warm_start_v in axis(&self.warm_start_v, base.warm_start_v) {
                                    let mut config = base.clone();
                                    config.algorithm = algorithm;
                                    config.optim.alpha = alpha;
                                    config.optim.lambda = lambda;
                                    config.participating = participating;
                                    config.local_steps = local_steps;
                                    config.partition = partition.clone();
                                    config.warm_start_v = warm_start_v;
                                    out.push(Cell {
                                        index: out.len(),
                                        config,
                                    });
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

/// Configuration of repetition `rep`: every seed shifted by `rep`.
pub fn repetition(cfg: &RunConfig, rep: usize) -> RunConfig {
    let rep = rep as u64;
    RunConfig {
        seed: cfg.seed.wrapping_add(rep),
        task_seed: Some(cfg.resolved_task_seed().wrapping_add(rep)),
        ..cfg.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "algorithm": "fedadamw",
        "task": {"kind": "quadratic", "dim": 4, "clients": 5, "sigma_g": 1.0, "sigma_l": 0.0},
        "participating": 2,
        "local_steps": 3,
        "rounds": 4,
        "optim": {"eta": 0.05}
    }"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let e = ExperimentConfig::parse(MINIMAL, "t").unwrap();
        assert_eq!(e.repetitions, 1);
        assert!(e.run.warm_start_v);
        assert_eq!(e.run.optim.beta2, 0.999);
        assert_eq!(e.sweep.cells(&e.run).len(), 1);
    }

    #[test]
    fn missing_field_is_named() {
        let text = MINIMAL.replace("\"algorithm\": \"fedadamw\",", "");
        let err = ExperimentConfig::parse(&text, "t").unwrap_err();
        assert!(matches!(&err, CliError::Config(m) if m.contains("algorithm")), "{err}");
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let text = MINIMAL.replace("\"rounds\": 4", "\"rounds\": 4, \"round\": 3");
        assert!(matches!(ExperimentConfig::parse(&text, "t"), Err(CliError::Config(m)) if m.contains("round")));
        let text = MINIMAL.replace("\"rounds\": 4", "\"rounds\": 4, \"sweep\": {\"beta\": [1]}");
        assert!(ExperimentConfig::parse(&text, "t").is_err());
    }

    #[test]
    fn invalid_values_are_config_errors() {
        let text = MINIMAL.replace("\"participating\": 2", "\"participating\": 6");
        assert!(matches!(ExperimentConfig::parse(&text, "t"), Err(CliError::Config(_))));
        let text = MINIMAL.replace("\"rounds\": 4", "\"rounds\": 4, \"sweep\": {\"alpha\": []}");
        assert!(matches!(ExperimentConfig::parse(&text, "t"), Err(CliError::Config(m)) if m.contains("alpha")));
    }

    #[test]
    fn sweep_grid_is_cartesian() {
        let text = MINIMAL.replace(
            "\"rounds\": 4",
            "\"rounds\": 4, \"repetitions\": 3, \"sweep\": {\"alpha\": [0, 0.5, 1], \"algorithm\": [\"fedadamw\", \"local_adamw\"]}",
        );
        let e = ExperimentConfig::parse(&text, "t").unwrap();
        let cells = e.sweep.cells(&e.run);
        assert_eq!(cells.len(), 6);
        assert_eq!(cells[1].config.optim.alpha, 0.5);
        assert_eq!(cells[3].config.algorithm, Algorithm::LocalAdamw);
        assert_eq!(e.repetitions, 3);
    }

    #[test]
    fn repetitions_shift_both_seeds() {
        let e = ExperimentConfig::parse(MINIMAL, "t").unwrap();
        let r = repetition(&e.run, 2);
        assert_eq!(r.seed, 2);
        assert_eq!(r.task_seed, Some(2));
    }
}
