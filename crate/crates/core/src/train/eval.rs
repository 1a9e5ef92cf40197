//! Count metrics over full images.

use rayon::prelude::*;
use serde::Serialize;

use crate::data::{limit_shorter_side, AnnotatedScene};
use crate::error::{Error, Result};
use crate::model::{pad_to_stride, Pscnet};
use crate::params::ModelParams;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalEntry {
    pub id: String,
    pub predicted: f64,
    pub actual: f64,
    pub abs_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub entries: Vec<EvalEntry>,
    pub k: usize,
    pub mae: f64,
    pub rmse: f64,
}

impl EvalReport {
    pub fn from_entries(entries: Vec<EvalEntry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::invalid("evaluate", "no scenes"));
        }
        let k = entries.len();
        let mut abs = 0.0;
        let mut sq = 0.0;
        for e in &entries {
            abs += e.abs_error;
            sq += e.abs_error * e.abs_error;
        }
        Ok(Self {
            entries,
            k,
            mae: abs / k as f64,
            rmse: (sq / k as f64).sqrt(),
        })
    }

    pub fn from_counts(predicted: &[f64], actual: &[f64]) -> Result<Self> {
        if predicted.len() != actual.len() {
            return Err(Error::invalid(
                "evaluate",
                format!("{} predictions for {} scenes", predicted.len(), actual.len()),
            ));
        }
        let entries = predicted
            .iter()
            .zip(actual)
            .enumerate()
            .map(|(i, (&p, &a))| EvalEntry {
                id: i.to_string(),
                predicted: p,
                actual: a,
                abs_error: (p - a).abs(),
            })
            .collect();
        Self::from_entries(entries)
    }

    /// `{"k":…,"mae":…,"rmse":…}`
    pub fn json_line(&self) -> String {
        serde_json::json!({ "k": self.k, "mae": self.mae, "rmse": self.rmse }).to_string()
    }

    pub fn table(&self) -> String {
        let mut out = format!("{:<24} {:>12} {:>8} {:>10}\n", "scene", "predicted", "actual", "abs_err");
        for e in &self.entries {
            out += &format!("{:<24} {:>12.4} {:>8} {:>10.4}\n", e.id, e.predicted, e.actual, e.abs_error);
        }
        out += &format!("K={} MAE={:.4} RMSE={:.4}\n", self.k, self.mae, self.rmse);
        out
    }
}

/// Predicted count of one full image: capped, stride-padded, then summed
/// over the cells covering the original extent.
pub fn predict_count(model: &Pscnet, params: &ModelParams<f32>, scene: &AnnotatedScene, max_side: usize) -> Result<f64> {
    let scene = limit_shorter_side(scene, max_side)?;
    let padded = pad_to_stride(&scene.image, &scene.points)?;
    let density = model.predict(params, &padded.image)?;
    let (kept, _) = padded.crop_density(&density)?;
    Ok(kept.data().iter().map(|&v| v as f64).sum())
}

pub fn evaluate(model: &Pscnet, params: &ModelParams<f32>, scenes: &[AnnotatedScene], max_side: usize) -> Result<EvalReport> {
    if scenes.is_empty() {
        return Err(Error::invalid("evaluate", "no scenes"));
    }
    let entries = scenes
        .par_iter()
        .map(|s| {
            let predicted = predict_count(model, params, s, max_side)?;
            let actual = s.count() as f64;
            Ok(EvalEntry {
                id: s.id.clone(),
                predicted,
                actual,
                abs_error: (predicted - actual).abs(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    EvalReport::from_entries(entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn fixture_values() {
        let r = EvalReport::from_counts(&[10.0, 20.0], &[12.0, 16.0]).unwrap();
        assert_eq!(r.mae, 3.0);
        assert!((r.rmse - 10f64.sqrt()).abs() < 1e-12);
        assert_eq!(r.json_line(), format!("{{\"k\":2,\"mae\":3.0,\"rmse\":{}}}", 10f64.sqrt()));
    }

    #[test]
    fn perfect_and_single() {
        let r = EvalReport::from_counts(&[4.0, 5.0], &[4.0, 5.0]).unwrap();
        assert_eq!((r.mae, r.rmse), (0.0, 0.0));
        let r = EvalReport::from_counts(&[7.5], &[3.0]).unwrap();
        assert_eq!(r.mae, r.rmse);
        assert!(EvalReport::from_counts(&[], &[]).is_err());
    }

    proptest! {
        #[test]
        fn mae_le_rmse_and_order_free(pairs in prop::collection::vec((0.0f64..500.0, 0u32..500), 1..40)) {
            let (p, a): (Vec<f64>, Vec<f64>) = pairs.iter().map(|&(p, a)| (p, a as f64)).unzip();
            let r = EvalReport::from_counts(&p, &a).unwrap();
            prop_assert!(r.mae <= r.rmse + 1e-12);
            let (pr, ar): (Vec<f64>, Vec<f64>) = p.iter().rev().zip(a.iter().rev()).map(|(&x, &y)| (x, y)).unzip();
            let s = EvalReport::from_counts(&pr, &ar).unwrap();
            prop_assert!((r.mae - s.mae).abs() < 1e-9 && (r.rmse - s.rmse).abs() < 1e-9);
        }
    }
}
