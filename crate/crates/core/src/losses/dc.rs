//! Distribution-based constraint: KL divergence from per-pixel reference
//! bin probabilities to the predicted ones.

use heightbins_tensor::{Graph, TensorError, Var};

use super::reference::{Family, ReferenceDistribution};
use super::LossConfig;
use crate::error::Result;
use crate::model::head::containing_bin;

/// `Σ_i q_i ln(q_i / max(p_i, floor))`, with `0 · ln 0 = 0`.
pub fn kl_divergence(reference: &[f64], p: &[f64], floor: f64) -> f64 {
    reference
        .iter()
        .zip(p)
        .filter(|(&q, _)| q > 0.0)
        .map(|(&q, &pi)| q * (q.ln() - pi.max(floor).ln()))
        .sum()
}

/// Reference probabilities `[N, HW]` for predicted `p` (`[N, HW]`, only
/// read for the mode probability), ground truth `gt` (`[HW]`) and `edges`.
///
/// Pixels above `threshold` use `cfg.fg_family`, the rest `cfg.bg_family`.
/// The mode probability is the predicted mass of the bin holding the truth,
/// clamped to `cfg.pm_clamp`.
pub fn reference_probabilities(
    p: &[f64],
    gt: &[f64],
    edges: &[f64],
    threshold: f64,
    cfg: &LossConfig,
) -> Result<Vec<f64>> {
    let hw = gt.len();
    let n = edges.len() - 1;
    if p.len() != n * hw {
        return Err(TensorError::shapes("dc_loss", &[n, hw], &[p.len()]).into());
    }
    let [lo, hi] = cfg.pm_clamp;
    let mut out = vec![0.0; n * hw];
    for (j, &h) in gt.iter().enumerate() {
        let family = if h > threshold {
            cfg.fg_family
        } else {
            cfg.bg_family
        };
        if family == Family::None {
            continue;
        }
        let k = containing_bin(edges, h);
        let p_m = p[k * hw + j].clamp(lo, hi);
        let delta = edges[k + 1] - edges[k];
        let dist = ReferenceDistribution::solve(family, h, p_m, delta)?;
        for (i, q) in dist.bin_probabilities(edges).into_iter().enumerate() {
            out[i * hw + j] = q;
        }
    }
    Ok(out)
}

/// Mean over pixels of `KL(reference ‖ p)`; `p` is `[N, H, W]` or `[N, HW]`
/// and `reference` a constant of the same size.
pub fn kl_loss(g: &Graph, p: Var, reference: &[f64], floor: f64) -> Result<Var> {
    let shape = g.shape(p);
    let total: usize = shape.iter().product();
    if reference.len() != total || shape.is_empty() {
        return Err(TensorError::shapes("dc_loss", &shape, &[reference.len()]).into());
    }
    let hw = (total / shape[0]) as f64;
    let entropy: f64 = reference
        .iter()
        .filter(|&&q| q > 0.0)
        .map(|&q| q * q.ln())
        .sum();
    let q = g.constant_from(shape, reference.to_vec())?;
    let logp = g.log(g.clamp_min(p, floor))?;
    let cross = g.sum(g.mul(q, logp)?);
    Ok(g.add_scalar(g.mul_scalar(cross, -1.0 / hw), entropy / hw))
}

/// Reference construction plus KL, with the reference held constant.
pub fn dc_loss(
    g: &Graph,
    p: Var,
    gt: &[f64],
    edges: &[f64],
    threshold: f64,
    cfg: &LossConfig,
) -> Result<Var> {
    let reference = reference_probabilities(&g.value(p), gt, edges, threshold, cfg)?;
    kl_loss(g, p, &reference, cfg.prob_floor)
}
