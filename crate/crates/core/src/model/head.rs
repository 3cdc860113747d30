//! Adaptive-bin head with a head-tail cut.
//!
//! A 3×3 local branch gives per-pixel features `L`; a patch transformer with
//! learned prepended tokens gives one bin-width token, `m` foreground tokens
//! and `m` background tokens. Token/pixel dot products form range attention
//! maps, which a 1×1 convolution and softmax turn into bin probabilities.

use heightbins_tensor::{Graph, ParamId, Params, TensorError, Var};

use super::config::HeadConfig;
use super::layers::{Conv, Init, Linear, Norm};
use crate::error::{Error, Result};

/// Numeric view of one image's discretisation.
#[derive(Debug, Clone, PartialEq)]
pub struct BinSet {
    pub h_min: f64,
    pub h_max: f64,
    pub rel_widths: Vec<f64>,
    pub edges: Vec<f64>,
    pub centers: Vec<f64>,
}

impl BinSet {
    /// Edges from relative widths scaled to span `[h_min, h_max]`.
    pub fn from_widths(rel_widths: &[f64], h_min: f64, h_max: f64) -> BinSet {
        let range = h_max - h_min;
        let mut edges = Vec::with_capacity(rel_widths.len() + 1);
        edges.push(h_min);
        let mut acc = 0.0;
        for w in rel_widths {
            acc += w * range;
            edges.push(h_min + acc);
        }
        let centers = edges.windows(2).map(|e| (e[0] + e[1]) * 0.5).collect();
        BinSet {
            h_min,
            h_max,
            rel_widths: rel_widths.to_vec(),
            edges,
            centers,
        }
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    /// Smallest `i` with `h ≤ b_{i+1}`, clamped to the valid bins; a value
    /// on an edge belongs to the lower bin.
    pub fn containing_bin(&self, h: f64) -> usize {
        containing_bin(&self.edges, h)
    }

    /// Invariant violations, empty when the set is valid.
    pub fn violations(&self, tol: f64) -> Vec<String> {
        let mut v = Vec::new();
        let sum: f64 = self.rel_widths.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            v.push(format!("relative widths sum to {sum}"));
        }
        if self.rel_widths.iter().any(|&w| !(w > 0.0)) {
            v.push("non-positive relative width".into());
        }
        if self.edges.windows(2).any(|e| !(e[1] > e[0])) {
            v.push("edges not strictly increasing".into());
        }
        if self.edges.first() != Some(&self.h_min) {
            v.push(format!("b_0 = {:?} != h_min", self.edges.first()));
        }
        if let Some(&last) = self.edges.last() {
            if (last - self.h_max).abs() > tol {
                v.push(format!("b_N = {last} != h_max = {}", self.h_max));
            }
        }
        for (i, c) in self.centers.iter().enumerate() {
            if *c != (self.edges[i] + self.edges[i + 1]) * 0.5 {
                v.push(format!("center {i} is not the edge midpoint"));
            }
        }
        v
    }
}

/// Index of the bin holding `h` over sorted `edges` (lower bin on ties).
pub fn containing_bin(edges: &[f64], h: f64) -> usize {
    let n = edges.len() - 1;
    // first upper edge ≥ h
    let upper = &edges[1..];
    upper.partition_point(|&b| b < h).min(n - 1)
}

/// Differentiable bin tensors: widths and centers `[N]`, edges `[N+1]`.
#[derive(Debug, Clone, Copy)]
pub struct BinVars {
    pub rel_widths: Var,
    pub edges: Var,
    pub centers: Var,
}

impl BinVars {
    pub fn snapshot(&self, g: &Graph, h_min: f64, h_max: f64) -> BinSet {
        BinSet {
            h_min,
            h_max,
            rel_widths: g.value(self.rel_widths),
            edges: g.value(self.edges),
            centers: g.value(self.centers),
        }
    }
}

fn expect_rank(g: &Graph, op: &'static str, v: Var, rank: usize) -> Result<Vec<usize>> {
    let s = g.shape(v);
    if s.len() != rank {
        return Err(TensorError::contract(op, format!("expected rank {rank}, got {s:?}")).into());
    }
    Ok(s)
}

/// `L = conv3×3(F)` with padding 1. `weight` is `[d, C, 3, 3]`.
pub fn local_branch(g: &Graph, f: Var, weight: Var, bias: Var) -> Result<Var> {
    let fs = expect_rank(g, "local_branch", f, 3)?;
    let ws = g.shape(weight);
    if ws.len() != 4 || ws[1] != fs[0] || ws[2] != 3 || ws[3] != 3 {
        return Err(TensorError::contract(
            "local_branch",
            format!("kernel {ws:?} does not fit a {}-channel feature map", fs[0]),
        )
        .into());
    }
    Ok(g.conv2d(f, weight, Some(bias), 1, 1)?)
}

/// Non-overlapping `p×p` patch projection, flattened to `[HW/p², d]`, plus
/// optional positional encodings of the same shape.
pub fn patch_embed(
    g: &Graph,
    f: Var,
    weight: Var,
    bias: Var,
    pos: Option<Var>,
) -> Result<Var> {
    let fs = expect_rank(g, "global_branch", f, 3)?;
    let ws = g.shape(weight);
    let p = ws[2];
    if p == 0 || fs[1] % p != 0 || fs[2] % p != 0 {
        return Err(TensorError::contract(
            "global_branch",
            format!(
                "feature map {}x{} is not divisible by patch size {p}",
                fs[1], fs[2]
            ),
        )
        .into());
    }
    let y = g.conv2d(f, weight, Some(bias), p, 0)?;
    let d = ws[0];
    let n = (fs[1] / p) * (fs[2] / p);
    let y = g.transpose(g.reshape(y, &[d, n])?)?;
    Ok(match pos {
        Some(pe) => g.add(y, pe)?,
        None => y,
    })
}

/// Pre-norm transformer block: `x + MHSA(LN x)`, then `x + MLP(LN x)`.
#[derive(Debug, Clone)]
pub struct Block {
    pub ln1: Norm,
    pub qkv: Linear,
    pub proj: Linear,
    pub ln2: Norm,
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Block {
    pub fn apply(&self, g: &Graph, p: &[Var], x: Var, heads: usize) -> Result<Var> {
        let s = g.shape(x);
        let (t, d) = (s[0], s[1]);
        let dh = d / heads;
        let h = self.ln1.apply(g, p, x)?;
        let qkv = self.qkv.apply(g, p, h)?;
        let split = |i: usize| -> Result<Var> {
            let part = g.slice(qkv, 1, i * d, (i + 1) * d)?;
            Ok(g.reshape(part, &[t, heads, dh])?)
        };
        let q = g.permute(split(0)?, &[1, 0, 2])?;
        let k = g.permute(split(1)?, &[1, 2, 0])?;
        let v = g.permute(split(2)?, &[1, 0, 2])?;
        let scores = g.mul_scalar(g.matmul(q, k)?, 1.0 / (dh as f64).sqrt());
        let att = g.softmax(scores, 2)?;
        let o = g.matmul(att, v)?;
        let o = g.reshape(g.permute(o, &[1, 0, 2])?, &[t, d])?;
        let x = g.add(x, self.proj.apply(g, p, o)?)?;

        let h = self.ln2.apply(g, p, x)?;
        let h = g.gelu(self.fc1.apply(g, p, h)?);
        Ok(g.add(x, self.fc2.apply(g, p, h)?)?)
    }
}

/// Runs `blocks` over a `[T, d]` sequence.
pub fn encode(g: &Graph, p: &[Var], x: Var, blocks: &[Block], heads: usize) -> Result<Var> {
    let s = expect_rank(g, "transformer", x, 2)?;
    if heads == 0 || s[1] % heads != 0 {
        return Err(TensorError::contract(
            "transformer",
            format!("embedding dim {} not divisible by {heads} heads", s[1]),
        )
        .into());
    }
    blocks.iter().try_fold(x, |x, b| b.apply(g, p, x, heads))
}

/// Softmax-normalised widths from `logits [N]`, scaled to `[h_min, h_max]`
/// and accumulated into edges; centers are edge midpoints.
pub fn bins_from_logits(g: &Graph, logits: Var, h_min: f64, h_max: f64) -> Result<BinVars> {
    let n = g.shape(logits).iter().product::<usize>();
    let logits = g.reshape(logits, &[n])?;
    let rel_widths = g.softmax(logits, 0)?;
    let cum = g.cumsum(g.mul_scalar(rel_widths, h_max - h_min), 0)?;
    let first = g.constant_from(vec![1], vec![h_min])?;
    let edges = g.concat(&[first, g.add_scalar(cum, h_min)], 0)?;
    let lower = g.slice(edges, 0, 0, n)?;
    let upper = g.slice(edges, 0, 1, n + 1)?;
    let centers = g.mul_scalar(g.add(lower, upper)?, 0.5);
    Ok(BinVars {
        rel_widths,
        edges,
        centers,
    })
}

/// Bin set from the bin-width embedding `e_b` (`[1, d]`) through a dense layer.
pub fn compute_bins(
    g: &Graph,
    e_b: Var,
    weight: Var,
    bias: Var,
    h_min: f64,
    h_max: f64,
) -> Result<BinVars> {
    let logits = g.add(g.matmul(e_b, weight)?, bias)?;
    bins_from_logits(g, logits, h_min, h_max)
}

/// `R[k, h, w] = Σ_d G[k, d] · L[d, h, w]`; `tokens` is `[m, d]`.
pub fn range_attention(g: &Graph, l: Var, tokens: Var) -> Result<Var> {
    let ls = expect_rank(g, "range_attention", l, 3)?;
    let ts = expect_rank(g, "range_attention", tokens, 2)?;
    if ts[1] != ls[0] {
        return Err(TensorError::shapes("range_attention", &ts, &ls).into());
    }
    let flat = g.reshape(l, &[ls[0], ls[1] * ls[2]])?;
    let r = g.matmul(tokens, flat)?;
    Ok(g.reshape(r, &[ts[0], ls[1], ls[2]])?)
}

/// Softmax over the bin axis of a 1×1 convolution of `R` (`[m,H,W] → [N,H,W]`).
pub fn bin_probabilities(g: &Graph, r: Var, weight: Var, bias: Var) -> Result<Var> {
    let logits = g.conv2d(r, weight, Some(bias), 1, 0)?;
    Ok(g.softmax(logits, 0)?)
}

/// Foreground probability `sigmoid(conv1×1(R_fg))`, `[1, H, W]`.
pub fn head_tail_cut(g: &Graph, r_fg: Var, weight: Var, bias: Var) -> Result<Var> {
    Ok(g.sigmoid(g.conv2d(r_fg, weight, Some(bias), 1, 0)?))
}

/// Per pixel, `P_fg` where `p_fg > 0.5`, else `P_bg`. The mask is constant.
pub fn combine(g: &Graph, p_fg_bins: Var, p_bg_bins: Var, p_fg: Var) -> Result<Var> {
    let s = g.shape(p_fg_bins);
    let ps = g.shape(p_fg);
    if s.len() != 3 || ps.len() != 3 || ps[0] != 1 || ps[1..] != s[1..] {
        return Err(TensorError::shapes("combine", &s, &ps).into());
    }
    let pixels = s[1] * s[2];
    let fg = g.value_ref(p_fg).iter().map(|&v| v > 0.5).collect::<Vec<_>>();
    let mask: Vec<bool> = (0..s[0] * pixels).map(|i| fg[i % pixels]).collect();
    Ok(g.select(&mask, p_fg_bins, p_bg_bins)?)
}

/// Handles into the tape for one head's forward pass.
///
/// Without the head-tail cut there is a single token set: its map is
/// `r_fg`, its probabilities `p_fg_bins` (equal to `p`), and the
/// background and mask fields are `None`.
#[derive(Debug, Clone, Copy)]
pub struct HeadVars {
    pub bins: BinVars,
    pub local: Var,
    pub embeddings: Var,
    pub r_fg: Var,
    pub r_bg: Option<Var>,
    pub p_fg_bins: Var,
    pub p_bg_bins: Option<Var>,
    pub p: Var,
    pub p_fg: Option<Var>,
    /// Predicted heights, `[1, H, W]`.
    pub height: Var,
}

/// Plain-value copy of a head's outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutput {
    pub bins: BinSet,
    pub width: usize,
    pub height_px: usize,
    pub r_fg: Vec<f64>,
    pub r_bg: Option<Vec<f64>>,
    pub p_fg_bins: Vec<f64>,
    pub p_bg_bins: Option<Vec<f64>>,
    pub p: Vec<f64>,
    pub p_fg: Option<Vec<f64>>,
    pub height: Vec<f64>,
}

impl HeadOutput {
    pub fn from_vars(g: &Graph, v: &HeadVars, cfg: &HeadConfig) -> HeadOutput {
        let s = g.shape(v.height);
        HeadOutput {
            bins: v.bins.snapshot(g, cfg.h_min, cfg.h_max),
            height_px: s[1],
            width: s[2],
            r_fg: g.value(v.r_fg),
            r_bg: v.r_bg.map(|x| g.value(x)),
            p_fg_bins: g.value(v.p_fg_bins),
            p_bg_bins: v.p_bg_bins.map(|x| g.value(x)),
            p: g.value(v.p),
            p_fg: v.p_fg.map(|x| g.value(x)),
            height: g.value(v.height),
        }
    }

    /// Bin probabilities of one pixel.
    pub fn pixel_probabilities(&self, row: usize, col: usize) -> Vec<f64> {
        let hw = self.width * self.height_px;
        let i = row * self.width + col;
        (0..self.bins.len()).map(|k| self.p[k * hw + i]).collect()
    }
}

#[derive(Debug, Clone)]
pub struct HtcHead {
    pub cfg: HeadConfig,
    pub htc: bool,
    pub local: Conv,
    pub patch: Conv,
    pub pos: ParamId,
    pub tokens: ParamId,
    pub blocks: Vec<Block>,
    pub fc_bins: Linear,
    pub conv_fg: Conv,
    pub conv_bg: Option<Conv>,
    pub cut: Option<Conv>,
}

impl HtcHead {
    /// `channels` and `size` describe the `[C, size, size]` feature map.
    pub(crate) fn new(
        name: &str,
        cfg: &HeadConfig,
        htc: bool,
        channels: usize,
        size: usize,
        init: &mut Init,
    ) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.embed_dim;
        let m = cfg.tokens;
        if cfg.patch_size == 0 || size % cfg.patch_size != 0 {
            return Err(Error::config(format!(
                "{name}: {size}x{size} map is not divisible by patch_size {}",
                cfg.patch_size
            )));
        }
        let n_patches = (size / cfg.patch_size).pow(2);
        let n_tokens = if htc { 2 * m + 1 } else { m + 1 };
        let mut blocks = Vec::new();
        for i in 0..cfg.depth {
            let b = format!("{name}.block{i}");
            blocks.push(Block {
                ln1: init.norm(&format!("{b}.ln1"), d)?,
                qkv: init.linear(&format!("{b}.qkv"), d, 3 * d)?,
                proj: init.linear(&format!("{b}.proj"), d, d)?,
                ln2: init.norm(&format!("{b}.ln2"), d)?,
                fc1: init.linear(&format!("{b}.fc1"), d, cfg.mlp_dim)?,
                fc2: init.linear(&format!("{b}.fc2"), cfg.mlp_dim, d)?,
            });
        }
        Ok(HtcHead {
            cfg: cfg.clone(),
            htc,
            local: init.conv(&format!("{name}.local"), d, channels, 3, 1, 1)?,
            patch: init.conv(
                &format!("{name}.patch"),
                d,
                channels,
                cfg.patch_size,
                cfg.patch_size,
                0,
            )?,
            pos: init.uniform(&format!("{name}.pos"), vec![n_patches, d], 0.1)?,
            tokens: init.uniform(&format!("{name}.tokens"), vec![n_tokens, d], 1.0)?,
            blocks,
            fc_bins: init.linear(&format!("{name}.fc_bins"), d, cfg.n_bins)?,
            conv_fg: init.pointwise(&format!("{name}.bins_fg"), cfg.n_bins, m)?,
            conv_bg: if htc {
                Some(init.pointwise(&format!("{name}.bins_bg"), cfg.n_bins, m)?)
            } else {
                None
            },
            cut: if htc {
                Some(init.pointwise(&format!("{name}.cut"), 1, m)?)
            } else {
                None
            },
        })
    }

    /// A head with its own parameter store, for use without a backbone.
    pub fn standalone(
        cfg: &HeadConfig,
        htc: bool,
        channels: usize,
        size: usize,
        seed: u64,
    ) -> Result<(HtcHead, Params)> {
        use rand::SeedableRng;
        let mut params = Params::new();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut init = Init {
            params: &mut params,
            rng: &mut rng,
        };
        let head = HtcHead::new("head", cfg, htc, channels, size, &mut init)?;
        Ok((head, params))
    }

    /// Number of learned tokens prepended to the patch sequence.
    pub fn token_count(&self) -> usize {
        if self.htc {
            2 * self.cfg.tokens + 1
        } else {
            self.cfg.tokens + 1
        }
    }

    /// Transformer output over `[tokens; patches]`.
    pub fn global_branch(&self, g: &Graph, p: &[Var], f: Var) -> Result<Var> {
        let patches = patch_embed(
            g,
            f,
            p[self.patch.weight.0],
            p[self.patch.bias.0],
            Some(p[self.pos.0]),
        )?;
        let seq = g.concat(&[p[self.tokens.0], patches], 0)?;
        encode(g, p, seq, &self.blocks, self.cfg.heads)
    }

    pub fn run(&self, g: &Graph, p: &[Var], f: Var) -> Result<HeadVars> {
        let m = self.cfg.tokens;
        let local = local_branch(g, f, p[self.local.weight.0], p[self.local.bias.0])?;
        let e = self.global_branch(g, p, f)?;
        if g.shape(e)[0] < self.token_count() {
            return Err(Error::config(format!(
                "sequence of {} embeddings is shorter than the {} tokens required",
                g.shape(e)[0],
                self.token_count()
            )));
        }
        let e_b = g.slice(e, 0, 0, 1)?;
        let bins = compute_bins(
            g,
            e_b,
            p[self.fc_bins.weight.0],
            p[self.fc_bins.bias.0],
            self.cfg.h_min,
            self.cfg.h_max,
        )?;
        let g_fg = g.slice(e, 0, 1, m + 1)?;
        let r_fg = range_attention(g, local, g_fg)?;
        let p_fg_bins =
            bin_probabilities(g, r_fg, p[self.conv_fg.weight.0], p[self.conv_fg.bias.0])?;

        let (r_bg, p_bg_bins, p_fg, prob) = match (&self.conv_bg, &self.cut) {
            (Some(bg), Some(cut)) => {
                let g_bg = g.slice(e, 0, m + 1, 2 * m + 1)?;
                let r_bg = range_attention(g, local, g_bg)?;
                let p_bg_bins = bin_probabilities(g, r_bg, p[bg.weight.0], p[bg.bias.0])?;
                let p_fg = head_tail_cut(g, r_fg, p[cut.weight.0], p[cut.bias.0])?;
                let prob = combine(g, p_fg_bins, p_bg_bins, p_fg)?;
                (Some(r_bg), Some(p_bg_bins), Some(p_fg), prob)
            }
            _ => (None, None, None, p_fg_bins),
        };
        let height = crate::regression::predict_heights(g, prob, bins.centers)?;
        Ok(HeadVars {
            bins,
            local,
            embeddings: e,
            r_fg,
            r_bg,
            p_fg_bins,
            p_bg_bins,
            p: prob,
            p_fg,
            height,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn containing_bin_ties_go_low() {
        let e = [0.0, 1.0, 3.0, 6.0];
        assert_eq!(containing_bin(&e, 0.0), 0);
        assert_eq!(containing_bin(&e, 1.0), 0);
        assert_eq!(containing_bin(&e, 1.0 + 1e-12), 1);
        assert_eq!(containing_bin(&e, 3.0), 1);
        assert_eq!(containing_bin(&e, 5.0), 2);
        assert_eq!(containing_bin(&e, 99.0), 2);
        assert_eq!(containing_bin(&e, -1.0), 0);
    }

    #[test]
    fn from_widths_matches_hand_arithmetic() {
        let b = BinSet::from_widths(&[0.1, 0.2, 0.3, 0.4], 0.0, 10.0);
        assert_eq!(b.edges, vec![0.0, 1.0, 3.0, 6.0, 10.0]);
        assert_eq!(b.centers, vec![0.5, 2.0, 4.5, 8.0]);
        assert!(b.violations(1e-6).is_empty());
    }
}
