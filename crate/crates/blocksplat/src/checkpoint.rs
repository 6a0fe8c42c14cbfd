//! JSON snapshots of the full training state.

use std::path::Path;

use blocksplat_core::free::FreeSplats;
use blocksplat_core::hybrid::{Block, HybridScene};
use blocksplat_core::math::Aabb;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{format_err, read_json, write_json, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Block,
    Point,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub stage: Stage,
    /// Completed iterations of `stage`.
    pub iteration: usize,
    pub config: RunConfig,
    pub bbox: Aabb,
    pub blocks: Vec<Block>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub free: Option<FreeSplats>,
}

impl Checkpoint {
    pub fn new(stage: Stage, iteration: usize, config: &RunConfig, scene: &HybridScene, free: Option<&FreeSplats>) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            stage,
            iteration,
            config: config.clone(),
            bbox: scene.bbox,
            blocks: scene.blocks.clone(),
            free: free.cloned(),
        }
    }

    /// Rebuilds the scene; the loss weights and representation settings come
    /// from the stored config.
    pub fn scene(&self) -> Result<HybridScene> {
        let mut scene = HybridScene::new(self.config.hybrid(), self.config.weights(), self.bbox)?;
        scene.blocks = self.blocks.clone();
        Ok(scene)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck: Checkpoint = read_json(path)?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(format_err(path, format!("unsupported checkpoint version {}", ck.version)));
        }
        ck.config.validate()?;
        let h = ck.config.hybrid();
        let (n, d) = (h.splats_per_block(), h.sh_dim());
        for (i, b) in ck.blocks.iter().enumerate() {
            let finite = b.params.to_array().iter().all(|v| v.is_finite()) && b.sh.iter().all(|v| v.is_finite());
            if b.bary.len() != n || b.sh.len() != n * d || !finite {
                return Err(format_err(path, format!("block {i} is inconsistent with the stored config")));
            }
        }
        if let Some(f) = &ck.free {
            let n = f.len();
            let ok = f.center_delta.len() == n
                && f.rotation.len() == n
                && f.log_scale_delta.len() == n
                && f.opacity_logit.len() == n
                && f.sh.len() == f.base.sh.len()
                && f.base.block_ids.iter().all(|&b| (b as usize) < ck.blocks.len());
            if !ok {
                return Err(format_err(path, "inconsistent free splats"));
            }
        }
        Ok(ck)
    }
}
