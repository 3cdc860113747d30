use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Decoder stage a head can attach to. `F5` is the finest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Level {
    F1,
    F2,
    F3,
    F4,
    F5,
}

impl Level {
    pub const ALL: [Level; 5] = [Level::F1, Level::F2, Level::F3, Level::F4, Level::F5];

    /// Zero-based position in the pyramid (F1 → 0).
    pub fn index(self) -> usize {
        self as usize
    }

    /// Downsampling factor relative to the input.
    pub fn stride(self) -> usize {
        1 << (4 - self.index())
    }
}

impl std::fmt::Display for Level {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "F{}", self.index() + 1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeadConfig {
    pub n_bins: usize,
    /// Tokens per range-attention set (m).
    pub tokens: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub mlp_dim: usize,
    pub h_min: f64,
    pub h_max: f64,
    pub fg_threshold: f64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        HeadConfig {
            n_bins: 32,
            tokens: 16,
            patch_size: 4,
            embed_dim: 32,
            depth: 2,
            heads: 4,
            mlp_dim: 64,
            h_min: 0.0,
            h_max: 100.0,
            fg_threshold: 1.0,
        }
    }
}

impl HeadConfig {
    pub fn problems(&self, out: &mut Vec<String>) {
        if self.n_bins < 2 {
            out.push(format!("head.n_bins = {} must be at least 2", self.n_bins));
        }
        if self.tokens == 0 {
            out.push("head.tokens must be positive".into());
        }
        if self.patch_size == 0 {
            out.push("head.patch_size must be positive".into());
        }
        if self.embed_dim == 0 || self.heads == 0 || self.embed_dim % self.heads != 0 {
            out.push(format!(
                "head.embed_dim = {} must be a positive multiple of head.heads = {}",
                self.embed_dim, self.heads
            ));
        }
        if self.depth > 0 && self.mlp_dim == 0 {
            out.push("head.mlp_dim must be positive".into());
        }
        if !(self.h_min.is_finite() && self.h_max.is_finite() && self.h_max > self.h_min) {
            out.push(format!(
                "head.h_max = {} must exceed head.h_min = {}",
                self.h_max, self.h_min
            ));
        }
        if !(self.fg_threshold > self.h_min && self.fg_threshold < self.h_max) {
            out.push("head.fg_threshold must lie inside (h_min, h_max)".into());
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

    /// 256 bins and 256 tokens per set, with the desk defaults otherwise.
    pub fn full_scale() -> Self {
        HeadConfig {
            n_bins: 256,
            tokens: 256,
            ..Default::default()
        }
    }

    pub fn range(&self) -> f64 {
        self.h_max - self.h_min
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub input_channels: usize,
    /// Channel widths of F5, F4, F3, F2, F1.
    pub widths: [usize; 5],
    /// Decoder stages carrying a head.
    pub levels: Vec<Level>,
    /// Separate foreground/background paths with a head-tail cut.
    pub htc: bool,
    pub head: HeadConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_channels: 3,
            widths: [8, 16, 32, 64, 64],
            levels: vec![Level::F2, Level::F3, Level::F4, Level::F5],
            htc: true,
            head: HeadConfig::default(),
        }
    }
}

impl ModelConfig {
    /// Channel count of a pyramid level.
    pub fn width(&self, level: Level) -> usize {
        self.widths[4 - level.index()]
    }

    pub fn problems(&self, out: &mut Vec<String>) {
        if self.input_channels == 0 {
            out.push("model.input_channels must be positive".into());
        }
        if self.widths.iter().any(|&w| w == 0) {
            out.push("model.widths must all be positive".into());
        }
        if self.levels.is_empty() {
            out.push("model.levels must name at least one of F2, F3, F4, F5".into());
        }
        if self.levels.contains(&Level::F1) {
            out.push("model.levels: F1 cannot carry a head".into());
        }
        if self.levels.windows(2).any(|w| w[0] >= w[1]) {
            out.push("model.levels must be strictly increasing".into());
        }
        self.head.problems(out);
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

    /// Checks that every headed level of a `size`×`size` input splits into
    /// whole patches.
    pub fn check_input_size(&self, size: usize) -> Result<()> {
        let mut p = Vec::new();
        if size == 0 || size % 16 != 0 {
            p.push(format!("input size {size} must be divisible by 16"));
        }
        for &l in &self.levels {
            let s = size / l.stride();
            if s == 0 || s % self.head.patch_size != 0 {
                p.push(format!(
                    "level {l} is {s}x{s}, not divisible by patch_size {}",
                    self.head.patch_size
                ));
            }
        }
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(p))
        }
    }
}
