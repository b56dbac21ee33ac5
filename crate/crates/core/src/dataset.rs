//! On-disk dataset layout: the poses manifest plus per-view LRAW images.

use crate::isp::{read_lraw, LinearImage, NoiseModel};
use crate::renderer::{Aabb, Camera};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Error, Debug)]
pub enum DatasetError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest: {0}")]
    Manifest(#[from] serde_json::Error),
    #[error("image: {0}")]
    Image(#[from] crate::isp::IspError),
    #[error("view {index}: {problem}")]
    Inconsistent { index: usize, problem: String },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ViewEntry {
    pub index: usize,
    pub camera: Camera,
    pub short: String,
    pub long: String,
    pub thermal: String,
    pub preview: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub short_gain: f64,
    pub long_gain: f64,
    pub noise: NoiseModel,
    pub bounds: Aabb,
    pub views: Vec<ViewEntry>,
}

impl Manifest {
    pub fn save(&self, path: &Path) -> Result<(), serde_json::Error> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json).expect("write manifest");
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Manifest, DatasetError> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// A dataset loaded into memory: aligned short-exposure visible and thermal
/// images (training inputs) plus long-exposure ground truth for evaluation.
pub struct Dataset {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub short: Vec<LinearImage>,
    pub long: Vec<LinearImage>,
    pub thermal: Vec<LinearImage>,
}

impl Dataset {
    pub fn load(dir: &Path) -> Result<Dataset, DatasetError> {
        let manifest = Manifest::load(&dir.join("poses.json"))?;
        let mut short = Vec::with_capacity(manifest.views.len());
        let mut long = Vec::with_capacity(manifest.views.len());
        let mut thermal = Vec::with_capacity(manifest.views.len());
        for view in &manifest.views {
            let s = read_lraw(&dir.join(&view.short))?;
            let l = read_lraw(&dir.join(&view.long))?;
            let t = read_lraw(&dir.join(&view.thermal))?;
            let (w, h) = (view.camera.width, view.camera.height);
            for (img, chans, name) in [(&s, 3, "short"), (&l, 3, "long"), (&t, 1, "thermal")] {
                if img.width != w || img.height != h || img.channels != chans {
                    return Err(DatasetError::Inconsistent {
                        index: view.index,
                        problem: format!(
                            "{name} image is {}x{}x{}, camera says {w}x{h}",
                            img.width, img.height, img.channels
                        ),
                    });
                }
            }
            short.push(s);
            long.push(l);
            thermal.push(t);
        }
        Ok(Dataset { dir: dir.to_path_buf(), manifest, short, long, thermal })
    }

    pub fn view_count(&self) -> usize {
        self.manifest.views.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthworld::{emit_dataset, preset, DatasetSpec};

    #[test]
    fn load_roundtrips_emitted_dataset() {
        let scene = preset("cold-boxes").unwrap();
        let spec = DatasetSpec { views: 2, image_size: 12, oracle_quadrature: 32, ..Default::default() };
        let dir = std::env::temp_dir().join("nightglow_dataset_test");
        let _ = std::fs::remove_dir_all(&dir);
        emit_dataset(&scene, &spec, &dir).unwrap();

        let ds = Dataset::load(&dir).unwrap();
        assert_eq!(ds.view_count(), 2);
        assert_eq!(ds.short[0].channels, 3);
        assert_eq!(ds.thermal[1].channels, 1);
        // Thermal and visible share the same pose entry by construction.
        assert_eq!(ds.manifest.views[0].camera.c2w, ds.manifest.views[0].camera.c2w);
        assert!(ds.manifest.views[0].short.contains("short"));
    }

    #[test]
    fn inconsistent_dimensions_are_rejected() {
        let scene = preset("cold-boxes").unwrap();
        let spec = DatasetSpec { views: 2, image_size: 12, oracle_quadrature: 8, ..Default::default() };
        let dir = std::env::temp_dir().join("nightglow_dataset_bad");
        let _ = std::fs::remove_dir_all(&dir);
        emit_dataset(&scene, &spec, &dir).unwrap();
        // Swap a visible file for the (single-channel) thermal one.
        std::fs::copy(dir.join("view_0_thermal.lraw"), dir.join("view_0_short.lraw")).unwrap();
        match Dataset::load(&dir) {
            Err(DatasetError::Inconsistent { index: 0, .. }) => {}
            other => panic!("expected Inconsistent, got {:?}", other.map(|_| ())),
        }
    }
}
