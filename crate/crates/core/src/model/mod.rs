//! Backbone plus one adaptive-bin head per selected decoder level.

pub mod backbone;
pub mod config;
pub mod head;
pub(crate) mod layers;

use heightbins_tensor::{Graph, Params, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use backbone::{Backbone, FeaturePyramid};
pub use config::{HeadConfig, Level, ModelConfig};
pub use head::{BinSet, BinVars, HeadOutput, HeadVars, HtcHead};

use crate::error::{Error, Result};
use layers::Init;

#[derive(Debug, Clone)]
pub struct Model {
    pub cfg: ModelConfig,
    pub image_size: usize,
    pub backbone: Backbone,
    pub heads: Vec<(Level, HtcHead)>,
}

impl Model {
    /// Builds the network for `image_size`² inputs and draws its parameters
    /// from `seed`.
    pub fn new(cfg: &ModelConfig, image_size: usize, seed: u64) -> Result<(Model, Params)> {
        cfg.validate()?;
        cfg.check_input_size(image_size)?;
        let mut params = Params::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = Init {
            params: &mut params,
            rng: &mut rng,
        };
        let backbone = Backbone::new(cfg, &mut init)?;
        let mut heads = Vec::new();
        for &level in &cfg.levels {
            let name = format!("head.{level}");
            let size = image_size / level.stride();
            let h = HtcHead::new(&name, &cfg.head, cfg.htc, cfg.width(level), size, &mut init)?;
            heads.push((level, h));
        }
        Ok((
            Model {
                cfg: cfg.clone(),
                image_size,
                backbone,
                heads,
            },
            params,
        ))
    }

    /// Rebuilds the network and adopts `stored` parameters, which must match
    /// the architecture name for name and shape for shape.
    pub fn with_params(cfg: &ModelConfig, image_size: usize, stored: &Params) -> Result<(Model, Params)> {
        let (model, mut params) = Model::new(cfg, image_size, 0)?;
        if stored.len() != params.len() {
            return Err(Error::Data(format!(
                "checkpoint holds {} tensors, model expects {}",
                stored.len(),
                params.len()
            )));
        }
        params
            .load_from(stored)
            .map_err(|e| Error::Data(format!("checkpoint does not fit model: {e}")))?;
        Ok((model, params))
    }

    /// Runs backbone and heads on one `[C, S, S]` image; outputs follow
    /// `cfg.levels`.
    pub fn forward(&self, g: &Graph, p: &[Var], image: Var) -> Result<Vec<HeadVars>> {
        let pyramid = self.backbone.extract_features(g, p, image)?;
        self.heads
            .iter()
            .map(|(level, head)| head.run(g, p, pyramid.levels[level.index()]))
            .collect()
    }
}
