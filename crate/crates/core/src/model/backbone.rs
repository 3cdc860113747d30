//! Small U-Net: four stride-2 downsampling stages, two 3×3 convolutions per
//! stage with GELU, nearest-neighbour upsampling and skip concatenation.

use heightbins_tensor::{Graph, TensorError, Var};

use super::config::ModelConfig;
use super::layers::{Conv, Init};
use crate::error::Result;

/// Decoded features, `levels[0]` = F1 (coarsest) … `levels[4]` = F5.
#[derive(Debug, Clone, Copy)]
pub struct FeaturePyramid {
    pub levels: [Var; 5],
}

#[derive(Debug, Clone)]
struct Stage {
    a: Conv,
    b: Conv,
}

impl Stage {
    fn apply(&self, g: &Graph, p: &[Var], x: Var) -> Result<Var> {
        let x = g.gelu(self.a.apply(g, p, x)?);
        Ok(g.gelu(self.b.apply(g, p, x)?))
    }
}

#[derive(Debug, Clone)]
pub struct Backbone {
    input_channels: usize,
    /// enc[0] runs at full resolution, enc[4] at 1/16.
    enc: Vec<Stage>,
    /// dec[0] produces F2, dec[3] produces F5.
    dec: Vec<Stage>,
}

impl Backbone {
    pub(crate) fn new(cfg: &ModelConfig, init: &mut Init) -> Result<Self> {
        // widths ordered F5..F1 = full resolution .. 1/16
        let w = cfg.widths;
        let mut enc = Vec::new();
        let mut prev = cfg.input_channels;
        for (i, &c) in w.iter().enumerate() {
            let stride = if i == 0 { 1 } else { 2 };
            enc.push(Stage {
                a: init.conv(&format!("backbone.enc{i}.a"), c, prev, 3, stride, 1)?,
                b: init.conv(&format!("backbone.enc{i}.b"), c, c, 3, 1, 1)?,
            });
            prev = c;
        }
        let mut dec = Vec::new();
        for i in (0..4).rev() {
            let c = w[i];
            let name = format!("backbone.dec{}", 4 - i);
            dec.push(Stage {
                a: init.conv(&format!("{name}.a"), c, prev + c, 3, 1, 1)?,
                b: init.conv(&format!("{name}.b"), c, c, 3, 1, 1)?,
            });
            prev = c;
        }
        Ok(Backbone {
            input_channels: cfg.input_channels,
            enc,
            dec,
        })
    }

    /// `image` is `[C, S, S]` with S divisible by 16.
    pub fn extract_features(&self, g: &Graph, p: &[Var], image: Var) -> Result<FeaturePyramid> {
        let shape = g.shape(image);
        if shape.len() != 3 || shape[0] != self.input_channels {
            return Err(TensorError::contract(
                "extract_features",
                format!(
                    "expected [{}, H, W] input, got {shape:?}",
                    self.input_channels
                ),
            )
            .into());
        }
        if shape[1] % 16 != 0 || shape[2] % 16 != 0 || shape[1] == 0 || shape[2] == 0 {
            return Err(TensorError::contract(
                "extract_features",
                format!(
                    "spatial extents {}x{} must be divisible by 2^4 = 16",
                    shape[1], shape[2]
                ),
            )
            .into());
        }
        let mut skips = Vec::with_capacity(5);
        let mut x = image;
        for s in &self.enc {
            x = s.apply(g, p, x)?;
            skips.push(x);
        }
        let mut levels = [x; 5];
        for (i, s) in self.dec.iter().enumerate() {
            let up = g.upsample2x(x)?;
            let cat = g.concat(&[up, skips[3 - i]], 0)?;
            x = s.apply(g, p, cat)?;
            levels[i + 1] = x;
        }
        Ok(FeaturePyramid { levels })
    }
}
