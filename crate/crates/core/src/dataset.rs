//! Calibrated views with foreground masks.

use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::image::{Image, Mask};
use crate::math::{Aabb, V3};

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub cameras: Vec<Camera>,
    pub images: Vec<Image>,
    pub masks: Vec<Mask>,
    pub bbox: Aabb,
    /// Views held out of training; empty when the dataset declares no split.
    pub test_views: Vec<usize>,
}

impl Dataset {
    pub fn validate(&self) -> Result<()> {
        let n = self.cameras.len();
        if self.images.len() != n || self.masks.len() != n {
            return Err(Error::DimensionMismatch {
                expected: alloc::format!("{n} images and masks"),
                got: alloc::format!("{} images, {} masks", self.images.len(), self.masks.len()),
            });
        }
        if self.bbox.is_degenerate() {
            return Err(Error::DegenerateBbox);
        }
        for (i, ((cam, img), mask)) in self.cameras.iter().zip(&self.images).zip(&self.masks).enumerate() {
            cam.validate()?;
            let dims_ok = img.width == cam.width
                && img.height == cam.height
                && mask.width == cam.width
                && mask.height == cam.height
                && img.data.len() == cam.pixels() * 3
                && mask.data.len() == cam.pixels();
            if !dims_ok {
                return Err(Error::DimensionMismatch {
                    expected: alloc::format!("view {i}: {}x{}", cam.width, cam.height),
                    got: alloc::format!("{}x{} image, {}x{} mask", img.width, img.height, mask.width, mask.height),
                });
            }
            if img.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(alloc::format!("view {i}: non-finite pixel")));
            }
        }
        if self.test_views.iter().any(|&v| v >= n) {
            return Err(Error::InvalidInput("test view index out of range".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.cameras.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cameras.is_empty()
    }

    pub fn train_views(&self) -> Vec<usize> {
        (0..self.len()).filter(|v| !self.test_views.contains(v)).collect()
    }

    /// Training target of view `v`: the image with background zeroed.
    pub fn target(&self, v: usize) -> Image {
        self.images[v].masked(&self.masks[v])
    }

    /// Whether `p` projects inside the mask of every view that sees it, and
    /// is seen by at least two views.
    pub fn in_hull(&self, p: V3, views: &[usize]) -> bool {
        let mut seen = 0;
        for &v in views {
            let cam = &self.cameras[v];
            let Some([u, w]) = cam.project_point(p) else { continue };
            if u < 0.0 || w < 0.0 || u >= cam.width as f64 || w >= cam.height as f64 {
                continue;
            }
            if !self.masks[v].get(u as usize, w as usize) {
                return false;
            }
            seen += 1;
        }
        seen >= 2
    }

    /// Uniform bbox samples that survive silhouette carving over the
    /// training views.
    pub fn visual_hull_points(&self, n_candidates: usize, seed: u64) -> Vec<V3> {
        let views = self.train_views();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = self.bbox;
        (0..n_candidates)
            .map(|_| core::array::from_fn(|i| b.min[i] + rng.gen::<f64>() * (b.max[i] - b.min[i])))
            .filter(|p| self.in_hull(*p, &views))
            .collect()
    }
}
