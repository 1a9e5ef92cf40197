//! Fixed configurations of the seeded training experiments.

use crate::data::SynthConfig;
use crate::train::{AdamConfig, TrainConfig};

/// Eight 128×128 scenes with 5–20 points.
pub fn overfit_data() -> SynthConfig {
    SynthConfig {
        n_scenes: 8,
        size: 128,
        min_points: 5,
        max_points: 20,
        seed: 1,
        ..SynthConfig::default()
    }
}

/// 300 Adam steps at lr 1e-3, λ = 0.1, no validation split.
pub fn overfit_train() -> TrainConfig {
    let mut cfg = TrainConfig {
        crop_size: 128,
        adam: AdamConfig {
            lr: 1e-3,
            ..AdamConfig::default()
        },
        epochs: 38,
        max_steps: Some(300),
        seed: 1,
        val_fraction: 0.0,
        ..TrainConfig::default()
    };
    cfg.supervision.lambda = 0.1;
    cfg
}

pub const OVERFIT_MAE_BOUND: f64 = 1.0;
pub const OVERFIT_TIME_LIMIT_SECS: f64 = 600.0;

pub const GENERALIZATION_TRAIN: usize = 64;
pub const GENERALIZATION_TEST: usize = 16;

/// 80 scenes: the first 64 train, the last 16 are held out.
pub fn generalization_data() -> SynthConfig {
    SynthConfig {
        n_scenes: GENERALIZATION_TRAIN + GENERALIZATION_TEST,
        seed: 2,
        ..overfit_data()
    }
}

/// Ten epochs at lr 3e-4; the best-validation parameters are evaluated.
pub fn generalization_train() -> TrainConfig {
    let mut cfg = TrainConfig {
        epochs: 10,
        max_steps: None,
        seed: 2,
        val_fraction: 0.1,
        ..overfit_train()
    };
    cfg.adam.lr = 3e-4;
    cfg
}

pub const LAMBDA_GRID: [f64; 3] = [0.0, 0.1, 1.0];

/// Small scenes and few steps; used where only plumbing is under test.
pub fn short_data() -> SynthConfig {
    SynthConfig {
        n_scenes: 5,
        size: 64,
        seed: 3,
        ..overfit_data()
    }
}

pub fn short_train() -> TrainConfig {
    TrainConfig {
        crop_size: 64,
        epochs: 3,
        max_steps: None,
        seed: 3,
        val_fraction: 0.2,
        ..overfit_train()
    }
}
