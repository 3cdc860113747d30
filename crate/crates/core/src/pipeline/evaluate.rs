//! Prediction at full resolution, split evaluation and checkpoint I/O.

use std::path::Path;

use heightbins_tensor::{Checkpoint, Graph, Params, Tensor};

use crate::error::{Error, Result};
use crate::metrics::{Connectivity, EvalAccumulator, EvalReport};
use crate::model::{HeadOutput, Model, ModelConfig};
use crate::pipeline::data::Sample;

/// Output of the finest headed level, upsampled to the input resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub size: usize,
    pub height: Vec<f64>,
    pub p_fg: Option<Vec<f64>>,
    /// Native-resolution output of the finest head.
    pub head: HeadOutput,
    /// Input pixels per head pixel along each axis.
    pub factor: usize,
}

fn upsample(values: &[f64], size: usize, factor: usize) -> Vec<f64> {
    if factor == 1 {
        return values.to_vec();
    }
    let full = size * factor;
    let mut out = vec![0.0; full * full];
    for y in 0..full {
        for x in 0..full {
            out[y * full + x] = values[(y / factor) * size + x / factor];
        }
    }
    out
}

pub fn predict(model: &Model, params: &Params, image: &[f64]) -> Result<Prediction> {
    let s = model.image_size;
    let c = model.cfg.input_channels;
    if image.len() != c * s * s {
        return Err(Error::Data(format!(
            "image holds {} values, model expects {c}x{s}x{s}",
            image.len()
        )));
    }
    let g = Graph::new();
    let p = g.bind_frozen(params);
    let x = g.constant(&Tensor::new(vec![c, s, s], image.to_vec())?);
    let outs = model.forward(&g, &p, x)?;
    let (last, vars) = model
        .heads
        .iter()
        .zip(&outs)
        .last()
        .map(|((l, _), v)| (*l, v))
        .expect("at least one head");
    let head = HeadOutput::from_vars(&g, vars, &model.cfg.head);
    let factor = last.stride();
    let size = s / factor;
    Ok(Prediction {
        size: s,
        height: upsample(&head.height, size, factor),
        p_fg: head.p_fg.as_ref().map(|p| upsample(p, size, factor)),
        head,
        factor,
    })
}

/// Metrics of the finest head's upsampled predictions over `samples`.
pub fn evaluate(
    model: &Model,
    params: &Params,
    samples: &[&Sample],
    conn: Connectivity,
) -> Result<EvalReport> {
    let mut acc = EvalAccumulator::new(model.cfg.head.fg_threshold, conn);
    for s in samples {
        let pred = predict(model, params, &s.image)?;
        acc.add_patch(
            &pred.height,
            &s.height,
            &s.footprint,
            pred.p_fg.as_deref(),
            s.size,
            s.size,
        );
    }
    Ok(acc.finish())
}

const META_MODEL: &str = "model";
const META_SIZE: &str = "image_size";

/// Writes parameters with the model description needed to rebuild them.
pub fn save_checkpoint(
    path: &Path,
    model: &Model,
    params: &Params,
    extra: &[(&str, String)],
) -> Result<()> {
    let mut ck = Checkpoint::new(params.clone());
    ck.meta.insert(
        META_MODEL.into(),
        serde_json::to_string(&model.cfg).expect("model config serializes"),
    );
    ck.meta.insert(META_SIZE.into(), model.image_size.to_string());
    for (k, v) in extra {
        ck.meta.insert((*k).into(), v.clone());
    }
    ck.save(path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(Model, Params, Checkpoint)> {
    let ck = Checkpoint::load(path)?;
    let cfg_text = ck
        .meta
        .get(META_MODEL)
        .ok_or_else(|| Error::Data(format!("{}: checkpoint lacks model metadata", path.display())))?;
    let cfg: ModelConfig = serde_json::from_str(cfg_text)
        .map_err(|e| Error::Data(format!("{}: bad model metadata: {e}", path.display())))?;
    let size: usize = ck
        .meta
        .get(META_SIZE)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::Data(format!("{}: checkpoint lacks image_size", path.display())))?;
    let (model, params) = Model::with_params(&cfg, size, &ck.params)?;
    Ok((model, params, ck))
}
