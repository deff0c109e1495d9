use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::mdp::ValueTable;

pub(crate) const CSV_HEADER: &str = "iter,inner_obj,l1_dev,exact_value_true_reward,entropy,seconds";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub inner_obj: f64,
    pub l1_dev: f64,
    /// `V^{pi^t}_1(s_1)` under the true reward, when an oracle was supplied.
    pub exact_value_true_reward: Option<f64>,
    /// Mean row entropy of the updated policy.
    pub entropy: f64,
    /// Wall time since the run started.
    pub seconds: f64,
}

/// Append-only per-iteration log. Also keeps the table each policy update
/// consumed (`f^t`, or the Monte Carlo `Q` in the rollout solver).
#[derive(Debug, Clone, Default)]
pub struct RunLog {
    records: Vec<IterationRecord>,
    models: Vec<ValueTable>,
}

impl RunLog {
    pub(crate) fn push(&mut self, record: IterationRecord, model: ValueTable) {
        self.records.push(record);
        self.models.push(model);
    }

    pub fn records(&self) -> &[IterationRecord] {
        &self.records
    }

    pub fn models(&self) -> &[ValueTable] {
        &self.models
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Writes the CSV. With `include_timing = false` the `seconds` column is
    /// left empty so the body depends only on the inputs and seed.
    pub fn write_csv<W: Write>(&self, mut w: W, include_timing: bool) -> std::io::Result<()> {
        writeln!(w, "{CSV_HEADER}")?;
        for r in &self.records {
            let exact = r.exact_value_true_reward.map(|v| v.to_string()).unwrap_or_default();
            let seconds = if include_timing { r.seconds.to_string() } else { String::new() };
            writeln!(w, "{},{},{},{},{},{}", r.iter, r.inner_obj, r.l1_dev, exact, r.entropy, seconds)?;
        }
        Ok(())
    }
}
