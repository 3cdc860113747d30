//! Finite-difference verification of every primitive and of the full
//! multi-term loss on a small head.

use heightbins_tensor::fdcheck::{self, FD_STEP};
use heightbins_tensor::{Graph, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::losses::{prepare_targets, total_loss, Family, LossConfig};
use crate::model::{HeadConfig, HtcHead, Level};

/// Largest accepted relative error.
pub const TOLERANCE: f64 = 1e-4;

pub const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

#[derive(Debug, Clone, PartialEq)]
pub struct CheckLine {
    pub name: String,
    pub seed: u64,
    /// Perturbed elements, when known.
    pub checked: Option<usize>,
    pub max_rel_error: f64,
}

impl CheckLine {
    pub fn passed(&self) -> bool {
        self.max_rel_error < TOLERANCE
    }

    pub fn to_line(&self) -> String {
        let checked = self.checked.map_or(String::new(), |n| format!(" checked={n}"));
        format!(
            "check={} seed={}{checked} max_rel_error={:.3e} status={}",
            self.name,
            self.seed,
            self.max_rel_error,
            if self.passed() { "ok" } else { "FAIL" }
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub lines: Vec<CheckLine>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.lines.iter().all(CheckLine::passed)
    }

    pub fn worst(&self) -> Option<&CheckLine> {
        self.lines
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }
}

/// Toy head used for the composite check: 4×4 map, N=8, m=4.
pub fn toy_head_config() -> HeadConfig {
    HeadConfig {
        n_bins: 8,
        tokens: 4,
        patch_size: 2,
        embed_dim: 8,
        depth: 1,
        heads: 2,
        mlp_dim: 16,
        h_min: 0.0,
        h_max: 10.0,
        fg_threshold: 1.0,
    }
}

const TOY_SIZE: usize = 4;
const TOY_CHANNELS: usize = 4;

/// Compares the gradient of the full loss with respect to every head
/// parameter and the input feature map. Reference probabilities are built
/// once from the unperturbed forward pass and held fixed.
pub fn composite_check(seed: u64, htc: bool, loss: &LossConfig) -> Result<CheckLine> {
    let head_cfg = toy_head_config();
    let (head, params) = HtcHead::standalone(&head_cfg, htc, TOY_CHANNELS, TOY_SIZE, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xC0FFEE);

    // move every parameter (biases and norm gains included) off its
    // structured initial value
    let mut inputs: Vec<Tensor> = params
        .iter()
        .map(|(_, _, t)| {
            let mut t = t.clone();
            t.data_mut()
                .iter_mut()
                .for_each(|v| *v += rng.gen_range(-0.2..0.2));
            t
        })
        .collect();
    inputs.push(Tensor::uniform(
        vec![TOY_CHANNELS, TOY_SIZE, TOY_SIZE],
        -1.0,
        1.0,
        &mut rng,
    ));
    let gt: Vec<f64> = (0..TOY_SIZE * TOY_SIZE)
        .map(|i| {
            if i % 3 == 0 {
                rng.gen_range(1.5..9.0)
            } else {
                rng.gen_range(0.0..0.9)
            }
        })
        .collect();
    let loss = LossConfig {
        lambdas: vec![1.0],
        ..loss.clone()
    };
    let n = inputs.len() - 1;

    let targets = {
        let g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t)).collect();
        let out = head.run(&g, &vars[..n], vars[n])?;
        prepare_targets(&g, &[(Level::F5, out)], &gt, TOY_SIZE, &head_cfg, &loss)?
    };

    let report = fdcheck::check(&inputs, FD_STEP, None, |g, v| {
        let out = head
            .run(g, &v[..n], v[n])
            .map_err(|e| heightbins_tensor::TensorError::contract("gradcheck", e.to_string()))?;
        let terms = total_loss(g, &[(Level::F5, out)], &targets, &head_cfg, &loss)
            .map_err(|e| heightbins_tensor::TensorError::contract("gradcheck", e.to_string()))?;
        Ok(terms.total)
    })?;
    let name = format!(
        "composite_loss[htc={htc},fg={},bg={}]",
        loss.fg_family.name(),
        loss.bg_family.name()
    );
    Ok(CheckLine {
        name,
        seed,
        checked: Some(report.iter().map(|r| r.checked).sum()),
        max_rel_error: fdcheck::worst(&report),
    })
}

/// Every primitive and the composite loss for seeds 0–4. The composite is
/// run with the configured families, with HTC on and off, and once more
/// with the families not covered by the configuration.
pub fn run(loss: &LossConfig) -> Result<GradcheckReport> {
    let mut lines = Vec::new();
    for &seed in &SEEDS {
        for c in fdcheck::primitive_suite(seed)? {
            lines.push(CheckLine {
                name: c.name.to_string(),
                seed,
                checked: None,
                max_rel_error: c.max_rel_error,
            });
        }
    }
    let mut family_pairs = vec![(loss.fg_family, loss.bg_family)];
    for pair in [
        (Family::Laplace, Family::Delta),
        (Family::Delta, Family::Gaussian),
    ] {
        if !family_pairs.contains(&pair) {
            family_pairs.push(pair);
        }
    }
    for &seed in &SEEDS {
        for (i, &(fg, bg)) in family_pairs.iter().enumerate() {
            let cfg = LossConfig {
                fg_family: fg,
                bg_family: bg,
                ..loss.clone()
            };
            lines.push(composite_check(seed, true, &cfg)?);
            if i == 0 {
                lines.push(composite_check(seed, false, &cfg)?);
            }
        }
    }
    Ok(GradcheckReport { lines })
}
