//! Seeded single-image training loop.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::{adam_step, AdamConfig, AdamState};
use super::eval::{evaluate, EvalReport};
use crate::data::{augment, limit_shorter_side, AnnotatedScene};
use crate::error::{Error, Result};
use crate::model::{pad_to_stride, update_running_stats, Pscnet};
use crate::params::ModelParams;
use crate::supervision::{
    bayesian_loss, build_posterior, counting_loss, density_grid, masked_count, overall_loss, pixel_mse_loss,
    LossKind, LossParts, SupervisionConfig,
};
use crate::tensor::{Tape, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub crop_size: usize,
    pub adam: AdamConfig,
    /// One epoch is one shuffled pass over the training split.
    pub epochs: usize,
    /// Stops early once this many steps have run.
    pub max_steps: Option<usize>,
    pub seed: u64,
    pub val_fraction: f64,
    pub max_shorter_side: usize,
    pub bn_momentum: f64,
    pub supervision: SupervisionConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            crop_size: 256,
            adam: AdamConfig::default(),
            epochs: 10,
            max_steps: None,
            seed: 0,
            val_fraction: 0.1,
            max_shorter_side: 2048,
            bn_momentum: 0.1,
            supervision: SupervisionConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.supervision.validate()?;
        if self.crop_size == 0 || self.crop_size % 16 != 0 {
            return Err(Error::invalid("train", format!("crop_size must be a positive multiple of 16, got {}", self.crop_size)));
        }
        if !(self.adam.lr.is_finite() && self.adam.lr > 0.0) {
            return Err(Error::invalid("train", format!("lr must be > 0, got {}", self.adam.lr)));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::invalid("train", format!("val_fraction must be in [0, 1), got {}", self.val_fraction)));
        }
        Ok(())
    }

    pub fn total_steps(&self, train_scenes: usize) -> usize {
        let full = self.epochs * train_scenes;
        self.max_steps.map_or(full, |m| m.min(full))
    }
}

/// Seeded shuffle of scene indices into `(train, validation)`.
pub fn split_indices(n: usize, val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    idx.shuffle(&mut rng);
    let mut n_val = (val_fraction * n as f64).round() as usize;
    if val_fraction > 0.0 {
        n_val = n_val.max(1);
    }
    let n_val = n_val.min(n.saturating_sub(1));
    let val = idx[..n_val].to_vec();
    (idx[n_val..].to_vec(), val)
}

/// Forward, loss, backward and optimizer update on one prepared crop.
pub fn train_step(
    model: &Pscnet,
    params: &mut ModelParams<f32>,
    state: &mut AdamState<f32>,
    crop: &AnnotatedScene,
    cfg: &TrainConfig,
) -> Result<LossParts<f64>> {
    let padded = pad_to_stride(&crop.image, &crop.points)?;
    let mut tape = Tape::new();
    let (d, stats) = model.forward_train(&mut tape, params, &padded.image)?;
    let (_, dh, dw) = tape.value(d).chw()?;
    let (ch, cw) = padded.density_extent();
    let mask = ((ch, cw) != (dh, dw)).then(|| {
        let data = (0..dh * dw).map(|i| if i / dw < ch && i % dw < cw { 1.0 } else { 0.0 }).collect();
        Tensor::from_vec(vec![1, dh, dw], data).expect("mask shape")
    });
    let sup = &cfg.supervision;
    let posterior = build_posterior(
        &crop.points,
        &density_grid(dh, dw),
        &sup.posterior_spec(crop.height(), crop.width()),
    )?;
    let bayes = bayesian_loss(&mut tape, d, &posterior)?;
    let pred = masked_count(&mut tape, d, mask.as_ref())?;
    let count = counting_loss(&mut tape, pred, crop.count() as f64)?;
    let total = match sup.kind {
        LossKind::Combined => overall_loss(&mut tape, bayes, count, sup.lambda)?,
        LossKind::PixelMse => pixel_mse_loss(&mut tape, d, &crop.points, sup.sigma, crate::model::OUTPUT_STRIDE)?,
    };
    let parts = LossParts {
        bayes: tape.value(bayes).data()[0] as f64,
        count: tape.value(count).data()[0] as f64,
        total: tape.value(total).data()[0] as f64,
    };
    if !parts.total.is_finite() {
        return Err(Error::NonFinite { op: "loss", index: 0 });
    }
    let grads = tape.backward(total)?;
    adam_step(params, state, &grads, &cfg.adam)?;
    update_running_stats(params, &stats, cfg.bn_momentum)?;
    Ok(parts)
}

pub fn log_line(step: u64, parts: &LossParts<f64>, val: Option<&EvalReport>) -> String {
    let mut line = format!(
        "step={step} bayes={:.6} count={:.6} total={:.6}",
        parts.bayes, parts.count, parts.total
    );
    if let Some(r) = val {
        line += &format!(" val_mae={:.6} val_rmse={:.6}", r.mae, r.rmse);
    }
    line
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best: ModelParams<f32>,
    pub last: ModelParams<f32>,
    /// Step of the retained best parameters and its validation MAE.
    pub best_step: u64,
    pub best_val_mae: Option<f64>,
    pub log: Vec<String>,
    pub losses: Vec<LossParts<f64>>,
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
}

/// Trains from freshly initialised parameters seeded by `cfg.seed`.
pub fn train(model: &Pscnet, scenes: &[AnnotatedScene], cfg: &TrainConfig) -> Result<TrainOutcome> {
    let params = model.init_params(cfg.seed)?;
    train_from(model, params, scenes, cfg, |_| {})
}

/// Trains `params`, calling `on_log` with each log line as it is produced.
pub fn train_from(
    model: &Pscnet,
    mut params: ModelParams<f32>,
    scenes: &[AnnotatedScene],
    cfg: &TrainConfig,
    mut on_log: impl FnMut(&str),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if scenes.len() < 2 {
        return Err(Error::invalid("train", format!("need at least 2 scenes, got {}", scenes.len())));
    }
    let prepared = scenes
        .iter()
        .map(|s| limit_shorter_side(s, cfg.max_shorter_side))
        .collect::<Result<Vec<_>>>()?;
    let (train_idx, val_idx) = split_indices(prepared.len(), cfg.val_fraction, cfg.seed);
    let val: Vec<AnnotatedScene> = val_idx.iter().map(|&i| prepared[i].clone()).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = AdamState::new(&params);
    let total_steps = cfg.total_steps(train_idx.len());
    let mut log = Vec::new();
    let mut losses = Vec::new();
    let mut best: Option<(u64, f64, ModelParams<f32>)> = None;
    let mut order = train_idx.clone();

    'epochs: for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for (pos, &i) in order.iter().enumerate() {
            let step = state.step + 1;
            let scene = &prepared[i];
            let wrap = |e: Error| Error::Training {
                step,
                scene: scene.id.clone(),
                source: Box::new(e),
            };
            let crop = augment(scene, cfg.crop_size, &mut rng).map_err(wrap)?;
            let parts = train_step(model, &mut params, &mut state, &crop, cfg).map_err(wrap)?;
            let done = step as usize >= total_steps;
            let report = if !val.is_empty() && (pos + 1 == order.len() || done) {
                let r = evaluate(model, &params, &val, cfg.max_shorter_side)?;
                if best.as_ref().is_none_or(|b| r.mae < b.1) {
                    best = Some((step, r.mae, params.clone()));
                }
                Some(r)
            } else {
                None
            };
            let line = log_line(step, &parts, report.as_ref());
            on_log(&line);
            log.push(line);
            losses.push(parts);
            if done {
                break 'epochs;
            }
        }
    }

    let ids = |idx: &[usize]| idx.iter().map(|&i| prepared[i].id.clone()).collect();
    let (best_step, best_val_mae, best_params) = match best {
        Some((s, m, p)) => (s, Some(m), p),
        None => (state.step, None, params.clone()),
    };
    Ok(TrainOutcome {
        best: best_params,
        last: params,
        best_step,
        best_val_mae,
        log,
        losses,
        train_ids: ids(&train_idx),
        val_ids: ids(&val_idx),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_is_seeded_and_disjoint() {
        let (t, v) = split_indices(20, 0.1, 3);
        assert_eq!((t.len(), v.len()), (18, 2));
        assert_eq!(split_indices(20, 0.1, 3), (t.clone(), v.clone()));
        let mut all: Vec<usize> = t.iter().chain(&v).copied().collect();
        all.sort();
        assert_eq!(all, (0..20).collect::<Vec<_>>());
        assert_eq!(split_indices(8, 0.0, 1).1.len(), 0);
        assert_eq!(split_indices(8, 0.1, 1).1.len(), 1);
    }

    #[test]
    fn log_format() {
        let p = LossParts { bayes: 1.5, count: 0.25, total: 1.525 };
        assert_eq!(log_line(3, &p, None), "step=3 bayes=1.500000 count=0.250000 total=1.525000");
        let r = EvalReport::from_counts(&[1.0], &[2.0]).unwrap();
        assert!(log_line(3, &p, Some(&r)).ends_with("val_mae=1.000000 val_rmse=1.000000"));
    }
}
