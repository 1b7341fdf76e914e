use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{epdms, pdms, sub_metrics, MetricConfig, SubScores};
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::scenegen::Scenario;
use crate::trajcore::Trajectory;

pub const CSV_HEADER: &str = "scenario_id,nc,dac,ttc,comfort,ep,ddc,lk,pdms,epdms,failed";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub scenario_id: String,
    pub scores: SubScores,
    pub pdms: f64,
    pub epdms: f64,
    pub failed: bool,
}

/// Arithmetic means over per-scenario values. `pdms` is the mean of
/// per-scenario PDMS, not PDMS applied to the mean sub-scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanScores {
    pub nc: f64,
    pub dac: f64,
    pub ttc: f64,
    pub comfort: f64,
    pub ep: f64,
    pub ddc: f64,
    pub lk: f64,
    pub pdms: f64,
    pub epdms: f64,
    pub count: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub planner: String,
    pub config_hash: String,
    pub means: MeanScores,
    pub rows: Vec<ScenarioResult>,
}

#[derive(Serialize)]
struct Aggregate<'a> {
    planner: &'a str,
    config_hash: &'a str,
    means: &'a MeanScores,
}

/// Runs `planner` on every scenario and scores the result. A planner error is
/// recorded as all-zero sub-scores with `failed = true`. Rows are ordered by
/// scenario id.
pub fn evaluate_planner<F>(
    scenarios: &[Scenario],
    mut planner: F,
    cfg: &MetricConfig,
    planner_name: &str,
    config_hash: &str,
) -> Result<EvalReport>
where
    F: FnMut(&Scenario) -> Result<Trajectory>,
{
    if scenarios.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut rows = Vec::with_capacity(scenarios.len());
    for sc in scenarios {
        let scored = planner(sc).and_then(|t| sub_metrics(&t, sc, cfg));
        let row = match scored {
            Ok(s) => ScenarioResult {
                scenario_id: sc.id.clone(),
                scores: s,
                pdms: pdms(&s),
                epdms: epdms(&s),
                failed: false,
            },
            Err(_) => ScenarioResult {
                scenario_id: sc.id.clone(),
                scores: SubScores::ZEROS,
                pdms: 0.0,
                epdms: 0.0,
                failed: true,
            },
        };
        rows.push(row);
    }
    rows.sort_by(|a, b| a.scenario_id.cmp(&b.scenario_id));
    Ok(EvalReport {
        planner: planner_name.to_string(),
        config_hash: config_hash.to_string(),
        means: mean_scores(&rows),
        rows,
    })
}

fn mean_scores(rows: &[ScenarioResult]) -> MeanScores {
    let n = rows.len() as f64;
    let mean = |f: &dyn Fn(&ScenarioResult) -> f64| rows.iter().map(f).sum::<f64>() / n;
    MeanScores {
        nc: mean(&|r| r.scores.nc),
        dac: mean(&|r| r.scores.dac),
        ttc: mean(&|r| r.scores.ttc),
        comfort: mean(&|r| r.scores.comfort),
        ep: mean(&|r| r.scores.ep),
        ddc: mean(&|r| r.scores.ddc),
        lk: mean(&|r| r.scores.lk),
        pdms: mean(&|r| r.pdms),
        epdms: mean(&|r| r.epdms),
        count: rows.len(),
        failures: rows.iter().filter(|r| r.failed).count(),
    }
}

impl EvalReport {
    /// Mean PDMS over the rows whose id satisfies `keep`.
    pub fn mean_pdms_where(&self, keep: impl Fn(&str) -> bool) -> Option<f64> {
        let sel: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| keep(&r.scenario_id))
            .map(|r| r.pdms)
            .collect();
        (!sel.is_empty()).then(|| sel.iter().sum::<f64>() / sel.len() as f64)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let s = &r.scores;
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.scenario_id,
                s.nc,
                s.dac,
                s.ttc,
                s.comfort,
                s.ep,
                s.ddc,
                s.lk,
                r.pdms,
                r.epdms,
                u8::from(r.failed)
            )
            .unwrap();
        }
        out
    }

    pub fn aggregate_json(&self) -> String {
        let agg = Aggregate {
            planner: &self.planner,
            config_hash: &self.config_hash,
            means: &self.means,
        };
        let mut s = serde_json::to_string_pretty(&agg).expect("aggregate serializes");
        s.push('\n');
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_csv().as_bytes())
    }

    pub fn write_aggregate(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.aggregate_json().as_bytes())
    }
}
