//! The JSON run report: config echo, per-iteration trace, final metrics.

use serde::Serialize;

use lsqtune::tuner::{Termination, TunerIteration};

use crate::config::ExperimentConfig;

#[derive(Debug, Clone, Serialize)]
pub struct TraceEntry {
    pub k: usize,
    pub f_value: f64,
    pub step_size: f64,
    pub accepted: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stopping_metric: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub monitor_loss: Option<f64>,
}

impl TraceEntry {
    pub fn from_iteration(it: &TunerIteration, monitor_loss: Option<f64>) -> Self {
        TraceEntry {
            k: it.k,
            f_value: it.f_value,
            step_size: it.step_size,
            accepted: it.accepted,
            stopping_metric: it.stopping_metric,
            monitor_loss,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct WeightExtremes {
    /// Source-row indices of the 6 lowest-weight training examples.
    pub lowest: Vec<usize>,
    /// Source-row indices of the 6 highest-weight training examples.
    pub highest: Vec<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FinalMetrics {
    pub validation_loss: f64,
    pub test_error: f64,
    pub hyperparam_count: usize,
    pub wall_seconds: f64,
    pub termination: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub omega_feat: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub omega_reg: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weight_extremes: Option<WeightExtremes>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub trace: Vec<TraceEntry>,
    #[serde(rename = "final")]
    pub final_metrics: FinalMetrics,
}

#[derive(Debug, Clone, Serialize)]
pub struct LadderReport {
    pub runs: Vec<RunReport>,
}

pub fn termination_name(t: &Termination) -> String {
    match t {
        Termination::Converged => "converged",
        Termination::MaxIter => "max_iter",
        Termination::CallbackStop => "early_stop",
    }
    .to_string()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{Model, Scale, TunerSettings};

    #[test]
    fn report_serializes_with_fixed_field_names() {
        let report = RunReport {
            config: ExperimentConfig {
                data_path: "d".into(),
                dataset_scale: Scale::Small,
                model: Model::Ls,
                seed: 0,
                tuner: TunerSettings::default(),
                early_stopping: false,
                output_path: None,
            },
            trace: vec![TraceEntry {
                k: 1,
                f_value: 2.0,
                step_size: 1.0,
                accepted: true,
                stopping_metric: Some(0.5),
                monitor_loss: None,
            }],
            final_metrics: FinalMetrics {
                validation_loss: 1.5,
                test_error: 0.13,
                hyperparam_count: 0,
                wall_seconds: 2.5,
                termination: "converged".into(),
                omega_feat: None,
                omega_reg: None,
                weight_extremes: None,
            },
        };
        let json: serde_json::Value =
            serde_json::from_str(&serde_json::to_string(&report).unwrap()).unwrap();
        assert!(json.get("config").is_some());
        assert!(json["trace"].as_array().unwrap().len() == 1);
        let f = &json["final"];
        for key in ["validation_loss", "test_error", "hyperparam_count", "wall_seconds"] {
            assert!(f.get(key).is_some(), "missing final.{key}");
        }
        assert_eq!(f["hyperparam_count"], 0);
    }
}
