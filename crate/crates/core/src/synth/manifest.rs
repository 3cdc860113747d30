//! Dataset manifest: a JSON array of raster triples with split tags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::raster::write_raster;
use super::scene::{generate_scene, SceneSpec};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::config(format!(
                "unknown split {s:?}; expected train, val or test"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub image: PathBuf,
    pub height: PathBuf,
    pub footprint: PathBuf,
    pub split: Split,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Data(format!("manifest {}: {e}", path.display())))?;
        let mut m: Manifest = serde_json::from_str(&text)
            .map_err(|e| Error::Data(format!("manifest {}: {e}", path.display())))?;
        // relative entries resolve against the manifest's directory
        let base = path.parent().unwrap_or(Path::new("."));
        for e in &mut m.entries {
            for p in [&mut e.image, &mut e.height, &mut e.footprint] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Split shares used by `synth`; the test share is what remains.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions {
            train: 0.8,
            val: 0.1,
        }
    }
}

impl SplitFractions {
    /// Split of patch `index` out of `count`: contiguous train, val, test runs.
    pub fn assign(&self, index: usize, count: usize) -> Split {
        let n_train = (self.train * count as f64).round() as usize;
        let n_val = (self.val * count as f64).round() as usize;
        if index < n_train {
            Split::Train
        } else if index < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        }
    }
}

/// Contents of a `synth --spec` file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub scene: SceneSpec,
    pub splits: SplitFractions,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        let SplitFractions { train, val } = self.splits;
        if !(train >= 0.0 && val >= 0.0 && train + val <= 1.0) {
            return Err(Error::config(
                "splits.train and splits.val must be nonnegative with sum at most 1",
            ));
        }
        Ok(())
    }
}

/// Writes `count` generated patches into `out` with relative paths in
/// `out/manifest.json`.
pub fn write_corpus(spec: &SynthSpec, out: &Path, count: usize) -> Result<Manifest> {
    spec.validate()?;
    std::fs::create_dir_all(out)?;
    let mut manifest = Manifest::default();
    for i in 0..count {
        let scene = generate_scene(&spec.scene.for_index(i as u64))?;
        let names = [
            format!("{i:05}_image.hmr"),
            format!("{i:05}_height.hmr"),
            format!("{i:05}_footprint.hmr"),
        ];
        write_raster(&scene.image, &out.join(&names[0]))?;
        write_raster(&scene.height, &out.join(&names[1]))?;
        write_raster(&scene.footprint, &out.join(&names[2]))?;
        let [image, height, footprint] = names.map(PathBuf::from);
        manifest.entries.push(ManifestEntry {
            image,
            height,
            footprint,
            split: spec.splits.assign(i, count),
        });
    }
    manifest.save(&out.join("manifest.json"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_assignment_is_contiguous() {
        let f = SplitFractions::default();
        let splits: Vec<Split> = (0..10).map(|i| f.assign(i, 10)).collect();
        assert_eq!(&splits[..8], &[Split::Train; 8]);
        assert_eq!(splits[8], Split::Val);
        assert_eq!(splits[9], Split::Test);
    }

    #[test]
    fn manifest_json_is_a_list_of_triples() {
        let m = Manifest {
            entries: vec![ManifestEntry {
                image: "a.hmr".into(),
                height: "b.hmr".into(),
                footprint: "c.hmr".into(),
                split: Split::Val,
            }],
        };
        let text = serde_json::to_string(&m).unwrap();
        assert_eq!(
            text,
            r#"[{"image":"a.hmr","height":"b.hmr","footprint":"c.hmr","split":"val"}]"#
        );
    }
}
