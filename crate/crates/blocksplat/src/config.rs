//! Flat TOML run configuration. Keys not present take their defaults.

use std::path::Path;

use blocksplat_core::hybrid::{EpsRange, HybridConfig};
use blocksplat_core::losses::LossWeights;
use blocksplat_core::optimize::{LearningRates, OptimConfig};
use serde::{Deserialize, Serialize};

use crate::error::{io_err, IoError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub lambda_ssim: f64,
    pub lambda_cov: f64,
    pub lambda_over: f64,
    pub lambda_par: f64,
    pub lambda_opa: f64,
    pub lambda_enter: f64,
    pub lambda_scale: f64,
    pub lambda_mask: f64,
    pub gamma: f64,
    pub k_overlap: f64,

    pub level: u32,
    pub gaussians_per_face: usize,
    pub face_scale: f64,
    pub sh_degree: u32,
    pub eps_min: f64,
    pub eps_max: f64,

    pub m_init: usize,
    pub max_blocks: usize,
    pub iters_block: usize,
    pub iters_point: usize,
    pub add_iters: Vec<usize>,
    pub prune_tau: f64,
    pub seed: u64,
    /// Absent means 4% of the bbox diagonal.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dbscan_eps: Option<f64>,
    pub dbscan_min_pts: usize,
    pub rays_per_iter: usize,
    pub samples_per_ray: usize,
    pub overlap_points: usize,
    pub hull_candidates: usize,
    pub init_from_points: bool,
    pub enter_points: usize,
    /// Absent means 2% of the bbox diagonal.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub s_max: Option<f64>,
    pub checkpoint_every: usize,

    pub lr_translation: f64,
    pub lr_rotation: f64,
    pub lr_scale: f64,
    pub lr_shape: f64,
    pub lr_opacity: f64,
    pub lr_sh: f64,
    pub lr_point_center: f64,
    pub lr_point_rotation: f64,
    pub lr_point_scale: f64,
    pub lr_point_opacity: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::from_parts(&OptimConfig::default(), &LossWeights::default(), &HybridConfig::default())
    }
}

impl RunConfig {
    pub fn from_parts(o: &OptimConfig, w: &LossWeights, h: &HybridConfig) -> Self {
        RunConfig {
            lambda_ssim: w.lambda_ssim,
            lambda_cov: w.w_cov,
            lambda_over: w.w_over,
            lambda_par: w.w_par,
            lambda_opa: w.w_opa,
            lambda_enter: w.w_enter,
            lambda_scale: w.w_scale,
            lambda_mask: w.w_mask,
            gamma: w.gamma,
            k_overlap: w.k_overlap,
            level: h.level,
            gaussians_per_face: h.gaussians_per_face,
            face_scale: h.face_scale,
            sh_degree: h.sh_degree,
            eps_min: h.eps_range.min,
            eps_max: h.eps_range.max,
            m_init: o.m_init,
            max_blocks: o.max_blocks,
            iters_block: o.iters_block,
            iters_point: o.iters_point,
            add_iters: o.add_iters.clone(),
            prune_tau: o.prune_tau,
            seed: o.seed,
            dbscan_eps: o.dbscan_eps,
            dbscan_min_pts: o.dbscan_min_pts,
            rays_per_iter: o.rays_per_iter,
            samples_per_ray: o.samples_per_ray,
            overlap_points: o.overlap_points,
            hull_candidates: o.hull_candidates,
            init_from_points: o.init_from_points,
            enter_points: o.enter_points,
            s_max: o.s_max,
            checkpoint_every: o.checkpoint_every,
            lr_translation: o.lr.translation,
            lr_rotation: o.lr.rotation,
            lr_scale: o.lr.scale,
            lr_shape: o.lr.shape,
            lr_opacity: o.lr.opacity,
            lr_sh: o.lr.sh,
            lr_point_center: o.lr.point_center,
            lr_point_rotation: o.lr.point_rotation,
            lr_point_scale: o.lr.point_scale,
            lr_point_opacity: o.lr.point_opacity,
        }
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            lambda_ssim: self.lambda_ssim,
            w_cov: self.lambda_cov,
            w_over: self.lambda_over,
            w_par: self.lambda_par,
            w_opa: self.lambda_opa,
            w_enter: self.lambda_enter,
            w_scale: self.lambda_scale,
            w_mask: self.lambda_mask,
            gamma: self.gamma,
            k_overlap: self.k_overlap,
        }
    }

    pub fn hybrid(&self) -> HybridConfig {
        HybridConfig {
            level: self.level,
            gaussians_per_face: self.gaussians_per_face,
            face_scale: self.face_scale,
            sh_degree: self.sh_degree,
            eps_range: EpsRange {
                min: self.eps_min,
                max: self.eps_max,
            },
        }
    }

    pub fn optim(&self) -> OptimConfig {
        OptimConfig {
            m_init: self.m_init,
            max_blocks: self.max_blocks,
            iters_block: self.iters_block,
            iters_point: self.iters_point,
            add_iters: self.add_iters.clone(),
            prune_tau: self.prune_tau,
            lr: LearningRates {
                translation: self.lr_translation,
                rotation: self.lr_rotation,
                scale: self.lr_scale,
                shape: self.lr_shape,
                opacity: self.lr_opacity,
                sh: self.lr_sh,
                point_center: self.lr_point_center,
                point_rotation: self.lr_point_rotation,
                point_scale: self.lr_point_scale,
                point_opacity: self.lr_point_opacity,
            },
            seed: self.seed,
            dbscan_eps: self.dbscan_eps,
            dbscan_min_pts: self.dbscan_min_pts,
            rays_per_iter: self.rays_per_iter,
            samples_per_ray: self.samples_per_ray,
            overlap_points: self.overlap_points,
            hull_candidates: self.hull_candidates,
            init_from_points: self.init_from_points,
            enter_points: self.enter_points,
            s_max: self.s_max,
            checkpoint_every: self.checkpoint_every,
        }
    }

    /// Checks every derived configuration.
    pub fn validate(&self) -> Result<()> {
        self.weights().validate()?;
        self.optim().validate()?;
        let h = self.hybrid();
        let ok = h.level <= blocksplat_core::sq::MAX_LEVEL
            && h.gaussians_per_face > 0
            && h.face_scale > 0.0
            && h.sh_degree <= 3
            && h.eps_range.min > 0.0
            && h.eps_range.min < h.eps_range.max;
        if !ok {
            return Err(IoError::Config("invalid representation settings".into()));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| IoError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).unwrap_or_default()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_toml(&text).map_err(|e| IoError::Config(format!("{}: {e}", path.display())))
    }
}
