//! Point-level stage: splats decoupled from their blocks and refined as
//! residuals over the block-bound state at decoupling time.
//!
//! `center = base + delta`, `frame = R(q) * base_frame`,
//! `scale = base_scale * exp(log_delta)`, `opacity = sigmoid(logit)`.
//! With `delta = 0`, `q = identity`, `log_delta = 0` and the block's opacity
//! logit, [`FreeSplats::materialize`] reproduces the bound splats exactly.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::Result;
use crate::hybrid::{HybridScene, SplatSet};
use crate::math::{self, V3};
use crate::optimize::{AdamState, LearningRates};
use crate::par;
use crate::real::{self, Dual, Real};
use crate::render::SplatGrads;

pub const IDENTITY_QUAT: [f64; 4] = [1.0, 0.0, 0.0, 0.0];

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FreeSplats {
    /// Block-bound splats at decoupling time; never modified.
    pub base: SplatSet,
    pub center_delta: Vec<V3>,
    pub rotation: Vec<[f64; 4]>,
    pub log_scale_delta: Vec<[f64; 2]>,
    pub opacity_logit: Vec<f64>,
    pub sh: Vec<f64>,
}

/// Gradients with respect to the free parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct FreeGrads {
    pub center: Vec<V3>,
    pub rotation: Vec<[f64; 4]>,
    pub log_scale: Vec<[f64; 2]>,
    pub opacity_logit: Vec<f64>,
    pub sh: Vec<f64>,
}

/// Detaches the splats of every alive block from its superquadric.
pub fn decouple(scene: &HybridScene) -> Result<FreeSplats> {
    let base = scene.bound_splats()?;
    let n = base.len();
    let opacity_logit = base
        .block_ids
        .iter()
        .map(|&b| scene.blocks[b as usize].params.opacity_logit)
        .collect();
    Ok(FreeSplats {
        center_delta: vec![[0.0; 3]; n],
        rotation: vec![IDENTITY_QUAT; n],
        log_scale_delta: vec![[0.0; 2]; n],
        opacity_logit,
        sh: base.sh.clone(),
        base,
    })
}

impl FreeSplats {
    pub fn len(&self) -> usize {
        self.base.len()
    }

    pub fn is_empty(&self) -> bool {
        self.base.is_empty()
    }

    pub fn materialize(&self) -> SplatSet {
        let b = &self.base;
        let n = b.len();
        let mut out = SplatSet::new(b.sh_degree);
        out.centers = (0..n).map(|i| math::add(b.centers[i], self.center_delta[i])).collect();
        out.frames = (0..n)
            .map(|i| {
                let r = math::quat_to_mat(self.rotation[i]);
                b.frames[i].map(|col| math::mat_vec(&r, col))
            })
            .collect();
        out.scales = (0..n)
            .map(|i| {
                let d = self.log_scale_delta[i];
                [b.scales[i][0] * Real::exp(d[0]), b.scales[i][1] * Real::exp(d[1])]
            })
            .collect();
        out.opacities = self.opacity_logit.iter().map(|x| real::sigmoid(*x)).collect();
        out.sh = self.sh.clone();
        out.block_ids = b.block_ids.clone();
        out
    }

    /// Chain rule from gradients of the materialized splats.
    pub fn pull_back(&self, g: &SplatGrads) -> FreeGrads {
        let b = &self.base;
        let rotation = par::map(self.len(), |i| {
            let q = Dual::<4>::vars(self.rotation[i]);
            let r = math::quat_to_mat(q);
            let mut out = [0.0; 4];
            for (k, gk) in [(1, g.r2[i]), (2, g.r3[i])] {
                let col = math::mat_vec(&r, math::lift(b.frames[i][k]));
                for c in 0..3 {
                    for j in 0..4 {
                        out[j] += gk[c] * col[c].eps[j];
                    }
                }
            }
            out
        });
        let log_scale = (0..self.len())
            .map(|i| {
                let d = self.log_scale_delta[i];
                [
                    g.scale[i][0] * b.scales[i][0] * Real::exp(d[0]),
                    g.scale[i][1] * b.scales[i][1] * Real::exp(d[1]),
                ]
            })
            .collect();
        let opacity_logit = self
            .opacity_logit
            .iter()
            .zip(&g.opacity)
            .map(|(x, go)| {
                let s = real::sigmoid(*x);
                go * s * (1.0 - s)
            })
            .collect();
        FreeGrads {
            center: g.center.clone(),
            rotation,
            log_scale,
            opacity_logit,
            sh: g.sh.clone(),
        }
    }
}

/// Adam state of every free parameter group.
#[derive(Clone, Debug)]
pub struct FreeOpt {
    center: AdamState,
    rotation: AdamState,
    scale: AdamState,
    opacity: AdamState,
    sh: AdamState,
}

fn flat<const K: usize>(v: &[[f64; K]]) -> Vec<f64> {
    v.iter().flatten().copied().collect()
}

fn unflat<const K: usize>(src: &[f64], dst: &mut [[f64; K]]) {
    for (d, s) in dst.iter_mut().zip(src.chunks_exact(K)) {
        d.copy_from_slice(s);
    }
}

impl FreeOpt {
    pub fn new(free: &FreeSplats) -> Self {
        let n = free.len();
        FreeOpt {
            center: AdamState::new(3 * n),
            rotation: AdamState::new(4 * n),
            scale: AdamState::new(2 * n),
            opacity: AdamState::new(n),
            sh: AdamState::new(free.sh.len()),
        }
    }

    pub fn step(&mut self, free: &mut FreeSplats, g: &FreeGrads, lr: &LearningRates) {
        let mut x = flat(&free.center_delta);
        self.center.step(&mut x, &flat(&g.center), |_| lr.point_center);
        unflat(&x, &mut free.center_delta);

        let mut x = flat(&free.rotation);
        self.rotation.step(&mut x, &flat(&g.rotation), |_| lr.point_rotation);
        unflat(&x, &mut free.rotation);
        for q in &mut free.rotation {
            *q = math::quat_normalize(*q);
        }

        let mut x = flat(&free.log_scale_delta);
        self.scale.step(&mut x, &flat(&g.log_scale), |_| lr.point_scale);
        unflat(&x, &mut free.log_scale_delta);

        self.opacity.step(&mut free.opacity_logit, &g.opacity_logit, |_| lr.point_opacity);
        self.sh.step(&mut free.sh, &g.sh, |_| lr.sh);
    }
}
