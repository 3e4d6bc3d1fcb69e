//! The cumulative component ladder: each row trains and evaluates a model
//! with one more component switched on than the row before.

use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::data::SyntheticSample;
use crate::error::Result;
use crate::eval::{evaluate, EvalReport};
use crate::metrics::Scores;
use crate::network::{Flags, Model};
use crate::tensor::Real;
use crate::train::train;

pub fn checkpoint_bytes<T: Real>(model: &Model<T>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    model.save(&mut buf)?;
    Ok(buf)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug)]
pub struct AblationRow {
    pub label: &'static str,
    pub flags: Flags,
    pub scores: Scores,
    pub first_loss: f64,
    pub final_loss: f64,
    pub checkpoint_sha256: String,
}

#[derive(Clone, Debug)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    /// Indices of rows whose F-measure is below the previous row's.
    pub fn regressions(&self) -> Vec<usize> {
        (1..self.rows.len())
            .filter(|&i| self.rows[i].scores.f_measure_mean < self.rows[i - 1].scores.f_measure_mean)
            .collect()
    }

    pub fn full_vs_baseline(&self) -> Option<(f64, f64)> {
        Some((self.rows.last()?.scores.f_measure_mean, self.rows.first()?.scores.f_measure_mean))
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::from("| Variant | S_m | F_m | E_m |\n|---|---|---|---|\n");
        for r in &self.rows {
            out.push_str(&format!(
                "| {} | {:.4} | {:.4} | {:.4} |\n",
                r.label, r.scores.s_measure, r.scores.f_measure_mean, r.scores.e_measure_mean
            ));
        }
        out.push_str("\nCheckpoints (sha256):\n\n");
        for r in &self.rows {
            out.push_str(&format!("- {}: `{}`\n", r.label, r.checkpoint_sha256));
        }
        let reg = self.regressions();
        out.push_str("\nF_m regressions against the previous row: ");
        if reg.is_empty() {
            out.push_str("none\n");
        } else {
            let names: Vec<&str> = reg.iter().map(|&i| self.rows[i].label).collect();
            out.push_str(&format!("{}\n", names.join(", ")));
        }
        out
    }
}

/// Trains one model and scores it on `test`.
pub fn train_and_score<T: Real>(
    cfg: &RunConfig,
    train_set: &[SyntheticSample],
    test: &[SyntheticSample],
) -> Result<(Model<T>, EvalReport, Vec<f64>)> {
    let out = train::<T>(cfg, train_set)?;
    let report = evaluate(&out.model, test)?;
    let losses = out.log.iter().map(|e| e.loss).collect();
    Ok((out.model, report, losses))
}

/// Runs the seven-row ladder with the seed, epochs and data of `cfg`.
/// `on_row` sees each row as soon as it is finished.
pub fn ablate<T: Real>(
    cfg: &RunConfig,
    train_set: &[SyntheticSample],
    test: &[SyntheticSample],
    mut on_row: impl FnMut(&AblationRow),
) -> Result<AblationReport> {
    let mut rows = Vec::new();
    for (label, flags) in Flags::ladder() {
        let mut c = cfg.clone();
        c.network.flags = flags;
        let (model, report, losses) = train_and_score::<T>(&c, train_set, test)?;
        let row = AblationRow {
            label,
            flags,
            scores: report.summary,
            first_loss: losses.first().copied().unwrap_or(f64::NAN),
            final_loss: losses.last().copied().unwrap_or(f64::NAN),
            checkpoint_sha256: sha256_hex(&checkpoint_bytes(&model)?),
        };
        on_row(&row);
        rows.push(row);
    }
    Ok(AblationReport { rows })
}
