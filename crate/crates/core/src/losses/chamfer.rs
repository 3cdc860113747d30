//! Bidirectional squared 1-D Chamfer distance between bin edges and
//! ground-truth heights, each direction averaged over its own set.

use heightbins_tensor::{Graph, TensorError, Var};

use crate::error::Result;

/// Position in `sorted` of a value nearest to `x`.
fn nearest(sorted: &[f64], x: f64) -> usize {
    let i = sorted.partition_point(|&v| v < x);
    if i == 0 {
        0
    } else if i == sorted.len() || x - sorted[i - 1] <= sorted[i] - x {
        i - 1
    } else {
        i
    }
}

fn sorted_copy(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// Every `len/cap`-th value (rounded up) when `len` exceeds `cap`.
pub fn subsample(targets: &[f64], cap: Option<usize>) -> Vec<f64> {
    match cap {
        Some(c) if c > 0 && targets.len() > c => {
            let stride = targets.len().div_ceil(c);
            targets.iter().step_by(stride).copied().collect()
        }
        _ => targets.to_vec(),
    }
}

fn check(edges: usize, targets: usize) -> Result<()> {
    if edges == 0 || targets == 0 {
        return Err(TensorError::contract(
            "chamfer_bin_loss",
            format!("needs nonempty sets, got {edges} edges and {targets} targets"),
        )
        .into());
    }
    Ok(())
}

/// Plain-value distance.
pub fn chamfer_distance(edges: &[f64], targets: &[f64]) -> Result<f64> {
    check(edges.len(), targets.len())?;
    let st = sorted_copy(targets);
    let se = sorted_copy(edges);
    let a: f64 = edges
        .iter()
        .map(|&e| (e - st[nearest(&st, e)]).powi(2))
        .sum::<f64>()
        / edges.len() as f64;
    let b: f64 = targets
        .iter()
        .map(|&t| (t - se[nearest(&se, t)]).powi(2))
        .sum::<f64>()
        / targets.len() as f64;
    Ok(a + b)
}

/// Differentiable in `edges` (1-D); `targets` are constants.
pub fn chamfer_bin_loss(g: &Graph, edges: Var, targets: &[f64]) -> Result<Var> {
    let ev = g.value(edges);
    if g.shape(edges).len() != 1 {
        return Err(TensorError::contract(
            "chamfer_bin_loss",
            format!("edges must be 1-D, got {:?}", g.shape(edges)),
        )
        .into());
    }
    check(ev.len(), targets.len())?;
    let st = sorted_copy(targets);
    let matched: Vec<f64> = ev.iter().map(|&e| st[nearest(&st, e)]).collect();
    let to_targets = g.sub(edges, g.constant_from(vec![ev.len()], matched)?)?;
    let to_targets = g.mean(g.square(to_targets));

    let mut order: Vec<usize> = (0..ev.len()).collect();
    order.sort_by(|&i, &j| ev[i].total_cmp(&ev[j]));
    let se: Vec<f64> = order.iter().map(|&i| ev[i]).collect();
    let index: Vec<usize> = targets.iter().map(|&t| order[nearest(&se, t)]).collect();
    let picked = g.gather(edges, &index)?;
    let to_edges = g.sub(picked, g.constant_from(vec![targets.len()], targets.to_vec())?)?;
    let to_edges = g.mean(g.square(to_edges));
    Ok(g.add(to_targets, to_edges)?)
}
