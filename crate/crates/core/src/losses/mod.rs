//! Training losses: pixel L1, Chamfer bin-edge loss, head-tail-cut
//! cross-entropy, distribution-based constraint, and their weighted sum.

pub mod chamfer;
pub mod dc;
pub mod reference;

use heightbins_tensor::{Graph, TensorError, Var};
use serde::{Deserialize, Serialize};

pub use chamfer::{chamfer_bin_loss, chamfer_distance};
pub use dc::{dc_loss, kl_divergence, kl_loss, reference_probabilities};
pub use reference::{
    solve_gaussian_sigma, solve_laplace_b, solve_uniform_bounds, Family, ReferenceDistribution,
};

use crate::error::{Error, Result};
use crate::model::{HeadConfig, HeadVars, Level};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// Weight of the Chamfer bin loss (μ1).
    pub mu_bins: f64,
    /// Weight of the head-tail-cut loss (μ2).
    pub mu_htc: f64,
    /// Weight of the distribution constraint (μ3).
    pub mu_dist: f64,
    /// One weight per headed level, coarse to fine.
    pub lambdas: Vec<f64>,
    pub fg_family: Family,
    pub bg_family: Family,
    /// Bounds applied to the mode probability before solving a scale.
    pub pm_clamp: [f64; 2],
    /// Floor on predicted probabilities inside the logarithm.
    pub prob_floor: f64,
    /// Subsample ground-truth values for the Chamfer loss above this count.
    pub chamfer_max_targets: Option<usize>,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            mu_bins: 0.01,
            mu_htc: 1.0,
            mu_dist: 1.0,
            lambdas: vec![0.125, 0.25, 0.5, 1.0],
            fg_family: Family::Gaussian,
            bg_family: Family::Uniform,
            pm_clamp: [1e-3, 1.0 - 1e-3],
            prob_floor: 1e-12,
            chamfer_max_targets: None,
        }
    }
}

impl LossConfig {
    pub fn problems(&self, out: &mut Vec<String>) {
        for (name, v) in [
            ("mu_bins", self.mu_bins),
            ("mu_htc", self.mu_htc),
            ("mu_dist", self.mu_dist),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                out.push(format!("loss.{name} = {v} must be a nonnegative number"));
            }
        }
        if self.lambdas.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
            out.push("loss.lambdas must be nonnegative numbers".into());
        }
        if self.lambdas.windows(2).any(|w| w[1] < w[0]) {
            out.push("loss.lambdas must be nondecreasing from coarse to fine".into());
        }
        let [lo, hi] = self.pm_clamp;
        if !(lo > 0.0 && lo < hi && hi < 1.0) {
            out.push(format!("loss.pm_clamp [{lo}, {hi}] must satisfy 0 < lo < hi < 1"));
        }
        if !(self.prob_floor > 0.0 && self.prob_floor < 1.0) {
            out.push("loss.prob_floor must lie in (0, 1)".into());
        }
        if self.chamfer_max_targets == Some(0) {
            out.push("loss.chamfer_max_targets must be positive when set".into());
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut p = Vec::new();
        self.problems(&mut p);
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(p))
        }
    }
}

/// Mean absolute difference of two same-shaped maps.
pub fn l1_height_loss(g: &Graph, pred: Var, gt: Var) -> Result<Var> {
    let (a, b) = (g.shape(pred), g.shape(gt));
    if a != b {
        return Err(TensorError::shapes("l1_height_loss", &a, &b).into());
    }
    Ok(g.mean(g.abs(g.sub(pred, gt)?)))
}

/// Mean binary cross-entropy of `p_fg` against `gt > threshold`. The log
/// arguments are floored at `floor`.
pub fn htc_loss(g: &Graph, p_fg: Var, gt: &[f64], threshold: f64, floor: f64) -> Result<Var> {
    let shape = g.shape(p_fg);
    if shape.iter().product::<usize>() != gt.len() {
        return Err(TensorError::shapes("htc_loss", &shape, &[gt.len()]).into());
    }
    let y: Vec<f64> = gt
        .iter()
        .map(|&h| if h > threshold { 1.0 } else { 0.0 })
        .collect();
    let not_y: Vec<f64> = y.iter().map(|v| 1.0 - v).collect();
    let y = g.constant_from(shape.clone(), y)?;
    let not_y = g.constant_from(shape, not_y)?;
    let log_p = g.log(g.clamp_min(p_fg, floor))?;
    let log_q = g.log(g.clamp_min(g.add_scalar(g.neg(p_fg), 1.0), floor))?;
    let ll = g.add(g.mul(y, log_p)?, g.mul(not_y, log_q)?)?;
    Ok(g.neg(g.mean(ll)))
}

/// Average pooling of a `size`×`size` map by `factor`.
pub fn pool_heights(gt: &[f64], size: usize, factor: usize) -> Vec<f64> {
    if factor == 1 {
        return gt.to_vec();
    }
    let s = size / factor;
    let norm = (factor * factor) as f64;
    let mut out = vec![0.0; s * s];
    for y in 0..s {
        for x in 0..s {
            let mut acc = 0.0;
            for dy in 0..factor {
                for dx in 0..factor {
                    acc += gt[(y * factor + dy) * size + x * factor + dx];
                }
            }
            out[y * s + x] = acc / norm;
        }
    }
    out
}

/// Constant targets of one level, computed before the loss is built so that
/// they can be held fixed (e.g. across finite-difference evaluations).
#[derive(Debug, Clone, PartialEq)]
pub struct LevelTarget {
    pub level: Level,
    pub size: usize,
    pub heights: Vec<f64>,
    /// Reference bin probabilities `[N, HW]`, absent when both families are `none`.
    pub reference: Option<Vec<f64>>,
}

/// Pools `gt` (`gt_size`² pixels) to each head's resolution and derives the
/// reference probabilities from the current predictions.
pub fn prepare_targets(
    g: &Graph,
    outputs: &[(Level, HeadVars)],
    gt: &[f64],
    gt_size: usize,
    head: &HeadConfig,
    cfg: &LossConfig,
) -> Result<Vec<LevelTarget>> {
    outputs
        .iter()
        .map(|(level, out)| {
            let size = g.shape(out.height)[1];
            if size == 0 || gt_size % size != 0 {
                return Err(TensorError::shapes("prepare_targets", &[gt_size], &[size]).into());
            }
            let heights = pool_heights(gt, gt_size, gt_size / size);
            let reference = if cfg.fg_family == Family::None && cfg.bg_family == Family::None {
                None
            } else {
                Some(reference_probabilities(
                    &g.value(out.p),
                    &heights,
                    &g.value(out.bins.edges),
                    head.fg_threshold,
                    cfg,
                )?)
            };
            Ok(LevelTarget {
                level: *level,
                size,
                heights,
                reference,
            })
        })
        .collect()
}

/// Unweighted component values of one level.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LevelTerms {
    pub height: f64,
    pub bins: f64,
    pub htc: f64,
    pub dist: f64,
}

#[derive(Debug, Clone)]
pub struct LossTerms {
    pub total: Var,
    pub levels: Vec<(Level, LevelTerms)>,
}

/// `Σ_i λ_i (L_h + μ1 L_b + μ2 L_htc + μ3 L_dist)`.
pub fn total_loss(
    g: &Graph,
    outputs: &[(Level, HeadVars)],
    targets: &[LevelTarget],
    head: &HeadConfig,
    cfg: &LossConfig,
) -> Result<LossTerms> {
    if cfg.lambdas.len() != outputs.len() || targets.len() != outputs.len() {
        return Err(Error::config(format!(
            "{} loss weights for {} headed levels",
            cfg.lambdas.len(),
            outputs.len()
        )));
    }
    let mut total = g.scalar(0.0);
    let mut levels = Vec::with_capacity(outputs.len());
    for (((level, out), t), &lambda) in outputs.iter().zip(targets).zip(&cfg.lambdas) {
        let shape = g.shape(out.height);
        let gt = g.constant_from(shape, t.heights.clone())?;
        let l_h = l1_height_loss(g, out.height, gt)?;
        let mut sum = l_h;
        let mut terms = LevelTerms {
            height: g.item(l_h),
            ..Default::default()
        };

        let sample = chamfer::subsample(&t.heights, cfg.chamfer_max_targets);
        let l_b = chamfer_bin_loss(g, out.bins.edges, &sample)?;
        terms.bins = g.item(l_b);
        sum = g.add(sum, g.mul_scalar(l_b, cfg.mu_bins))?;

        if let Some(p_fg) = out.p_fg {
            let l_htc = htc_loss(g, p_fg, &t.heights, head.fg_threshold, cfg.prob_floor)?;
            terms.htc = g.item(l_htc);
            sum = g.add(sum, g.mul_scalar(l_htc, cfg.mu_htc))?;
        }
        if let Some(reference) = &t.reference {
            let l_d = kl_loss(g, out.p, reference, cfg.prob_floor)?;
            terms.dist = g.item(l_d);
            sum = g.add(sum, g.mul_scalar(l_d, cfg.mu_dist))?;
        }
        total = g.add(total, g.mul_scalar(sum, lambda))?;
        levels.push((*level, terms));
    }
    Ok(LossTerms { total, levels })
}
