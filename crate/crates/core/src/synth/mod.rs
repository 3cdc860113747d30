//! Synthetic height rasters and their file format.

pub mod manifest;
pub mod raster;
pub mod scene;

pub use manifest::{write_corpus, Manifest, ManifestEntry, Split, SplitFractions, SynthSpec};
pub use raster::{read_raster, write_raster, RasterError, RasterKind, RasterPatch};
pub use scene::{derive_seed, generate_scene, Scene, SceneSpec, FG_THRESHOLD};
