//! In-memory samples loaded from a manifest or generated on the fly.

use std::path::Path;

use crate::error::{Error, Result};
use crate::synth::{
    generate_scene, read_raster, Manifest, RasterKind, RasterPatch, Scene, Split, SynthSpec,
};

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub size: usize,
    pub channels: usize,
    pub gsd: f64,
    /// `[C, S, S]` image values.
    pub image: Vec<f64>,
    /// `[S, S]` heights in meters.
    pub height: Vec<f64>,
    pub footprint: Vec<bool>,
}

impl Sample {
    pub fn from_rasters(image: &RasterPatch, height: &RasterPatch, footprint: &RasterPatch) -> Result<Self> {
        let kinds = [
            (image, RasterKind::Image),
            (height, RasterKind::Height),
            (footprint, RasterKind::Footprint),
        ];
        for (r, k) in kinds {
            if r.kind != k {
                return Err(Error::Data(format!("expected a {k:?} raster, got {:?}", r.kind)));
            }
        }
        let s = image.width;
        if image.height != s {
            return Err(Error::Data(format!(
                "image is {}x{}; only square patches are supported",
                image.width, image.height
            )));
        }
        for r in [height, footprint] {
            if r.width != s || r.height != s {
                return Err(Error::Data(format!(
                    "{:?} raster is {}x{}, image is {s}x{s}",
                    r.kind, r.width, r.height
                )));
            }
        }
        Ok(Sample {
            size: s,
            channels: image.channels,
            gsd: image.gsd,
            image: image.to_f64(),
            height: height.to_f64(),
            footprint: footprint.values.iter().map(|&v| v == 1.0).collect(),
        })
    }

    pub fn from_scene(scene: &Scene) -> Result<Self> {
        Sample::from_rasters(&scene.image, &scene.height, &scene.footprint)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub splits: Vec<Split>,
}

impl Dataset {
    pub fn push(&mut self, sample: Sample, split: Split) {
        self.samples.push(sample);
        self.splits.push(split);
    }

    pub fn load(manifest_path: &Path) -> Result<Self> {
        let manifest = Manifest::load(manifest_path)?;
        let mut ds = Dataset::default();
        for e in &manifest.entries {
            let image = read_raster(&e.image)?;
            let height = read_raster(&e.height)?;
            let footprint = read_raster(&e.footprint)?;
            ds.push(Sample::from_rasters(&image, &height, &footprint)?, e.split);
        }
        ds.check_uniform()?;
        Ok(ds)
    }

    /// Generates `count` patches in memory, split like `synth` would.
    pub fn synthetic(spec: &SynthSpec, count: usize) -> Result<Self> {
        spec.validate()?;
        let mut ds = Dataset::default();
        for i in 0..count {
            let scene = generate_scene(&spec.scene.for_index(i as u64))?;
            ds.push(Sample::from_scene(&scene)?, spec.splits.assign(i, count));
        }
        Ok(ds)
    }

    fn check_uniform(&self) -> Result<()> {
        if let Some(first) = self.samples.first() {
            if let Some(bad) = self
                .samples
                .iter()
                .find(|s| s.size != first.size || s.channels != first.channels)
            {
                return Err(Error::Data(format!(
                    "mixed patch geometry: {}x{}x{} and {}x{}x{}",
                    first.channels, first.size, first.size, bad.channels, bad.size, bad.size
                )));
            }
        }
        Ok(())
    }

    /// Positions of the samples tagged `split`, in manifest order.
    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.samples.len())
            .filter(|&i| self.splits[i] == split)
            .collect()
    }

    pub fn subset(&self, split: Split) -> Vec<&Sample> {
        self.indices(split).into_iter().map(|i| &self.samples[i]).collect()
    }

    pub fn patch_size(&self) -> Option<usize> {
        self.samples.first().map(|s| s.size)
    }
}
