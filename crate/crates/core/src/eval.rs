//! Per-sample and dataset-level evaluation of saliency maps.

use rayon::prelude::*;

use crate::data::SyntheticSample;
use crate::error::Result;
use crate::metrics::{MapPair, Scores};
use crate::network::Model;
use crate::tensor::{Real, Tensor};
use crate::train::prepare;

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<(usize, Scores)>,
    pub summary: Scores,
}

impl EvalReport {
    pub const HEADER: &'static str = "sample_id,s_measure,f_measure_mean,e_measure_mean,mae";

    pub fn from_rows(rows: Vec<(usize, Scores)>) -> Self {
        let scores: Vec<Scores> = rows.iter().map(|r| r.1).collect();
        Self { summary: Scores::mean(&scores), rows }
    }

    /// One row per sample, then a `mean` row.
    pub fn to_csv(&self) -> String {
        let line = |id: &str, s: &Scores| {
            format!("{id},{:.10},{:.10},{:.10},{:.10}\n", s.s_measure, s.f_measure_mean, s.e_measure_mean, s.mae)
        };
        let mut out = format!("{}\n", Self::HEADER);
        for (id, s) in &self.rows {
            out.push_str(&line(&id.to_string(), s));
        }
        out.push_str(&line("mean", &self.summary));
        out
    }
}

/// Scores `(1,H,W)` prediction maps against ground truth, in parallel.
pub fn evaluate_maps(items: &[(usize, Tensor<f64>, Tensor<f64>)]) -> Result<EvalReport> {
    let rows = items
        .par_iter()
        .map(|(id, pred, gt)| {
            let (h, w) = (gt.shape()[1], gt.shape()[2]);
            Ok((*id, Scores::of(&MapPair::new(pred.data(), gt.data(), h, w)?)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::from_rows(rows))
}

/// Final maps `Ŝ_K` of `model` on every sample.
pub fn predict_all<T: Real>(model: &Model<T>, samples: &[SyntheticSample]) -> Result<Vec<(usize, Tensor<f64>, Tensor<f64>)>> {
    let data = prepare(model, samples)?;
    data.par_iter()
        .zip(samples)
        .map(|(p, s)| {
            let pred = model.predict(&p.input)?;
            Ok((p.id, pred.final_map().cast::<f64>(), s.gt.clone()))
        })
        .collect()
}

pub fn evaluate<T: Real>(model: &Model<T>, samples: &[SyntheticSample]) -> Result<EvalReport> {
    evaluate_maps(&predict_all(model, samples)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_dataset;

    #[test]
    fn ground_truth_scores_one() {
        let samples = generate_dataset(4, 16, 16, 3).unwrap();
        let items: Vec<_> = samples.iter().map(|s| (s.id, s.gt.clone(), s.gt.clone())).collect();
        let r = evaluate_maps(&items).unwrap();
        for s in r.rows.iter().map(|r| r.1).chain([r.summary]) {
            assert!((s.s_measure - 1.0).abs() < 1e-9);
            assert!((s.f_measure_mean - 1.0).abs() < 1e-9);
            assert!((s.e_measure_mean - 1.0).abs() < 1e-9);
            assert_eq!(s.mae, 0.0);
        }
        let csv = r.to_csv();
        assert!(csv.starts_with(EvalReport::HEADER));
        assert_eq!(csv.lines().count(), 6);
        assert!(csv.lines().last().unwrap().starts_with("mean,"));
    }
}
