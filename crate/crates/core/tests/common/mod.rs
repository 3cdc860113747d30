#![allow(dead_code)]

use heightbins::losses::LossConfig;
use heightbins::model::{HeadConfig, Level, ModelConfig};
use heightbins::pipeline::{Dataset, RunConfig};
use heightbins::synth::{SceneSpec, SplitFractions, SynthSpec};

/// A model small enough to train for a few epochs inside a test.
pub fn tiny_run(seed: u64) -> RunConfig {
    RunConfig {
        model: ModelConfig {
            widths: [4, 4, 8, 8, 8],
            levels: vec![Level::F4, Level::F5],
            head: HeadConfig {
                n_bins: 8,
                tokens: 4,
                patch_size: 4,
                embed_dim: 8,
                depth: 1,
                heads: 2,
                mlp_dim: 16,
                ..Default::default()
            },
            ..Default::default()
        },
        loss: LossConfig {
            lambdas: vec![0.5, 1.0],
            ..Default::default()
        },
        batch_size: 4,
        max_epochs: 3,
        seed,
        ..Default::default()
    }
}

/// `count` default 32×32 scenes split 50/25/25.
pub fn corpus(count: usize, seed: u64) -> Dataset {
    let spec = SynthSpec {
        scene: SceneSpec {
            seed,
            ..Default::default()
        },
        splits: SplitFractions {
            train: 0.5,
            val: 0.25,
        },
    };
    Dataset::synthetic(&spec, count).unwrap()
}
