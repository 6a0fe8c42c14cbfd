//! Block-bound splats together with their Jacobians with respect to the
//! block parameters, and the chain rule from splat gradients to block
//! gradients.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::Result;
use crate::hybrid::{self, FaceFrame, HybridScene, SplatSet, NPARAM, P_OPACITY};
use crate::math::V3;
use crate::par;
use crate::real::Dual;
use crate::render::SplatGrads;
use crate::sq;

type D = Dual<NPARAM>;

struct BlockJacobian {
    id: usize,
    first_splat: usize,
    per_face: usize,
    /// `d vertex / d params`, per vertex and coordinate.
    vertices: Vec<[[f64; NPARAM]; 3]>,
    faces: Vec<FaceFrame<D>>,
    tau_slope: f64,
}

/// Splats of all alive blocks plus what is needed to pull gradients back.
pub struct BoundGeometry {
    pub splats: SplatSet,
    blocks: Vec<BlockJacobian>,
}

struct BlockOut {
    splats: SplatSet,
    jac: BlockJacobian,
}

fn block_geometry(scene: &HybridScene, id: usize) -> Result<BlockOut> {
    let block = &scene.blocks[id];
    let cfg = &scene.config;
    let x = D::vars(block.params.to_array());
    let (shape, pose, tau) = hybrid::decode(&x, cfg.eps_range);
    let world: Vec<V3<D>> = sq::map_vertices(&scene.ico.angles, &shape)
        .into_iter()
        .map(|v| pose.apply(v))
        .collect();
    let per_face = cfg.gaussians_per_face;
    let d = cfg.sh_dim();
    let mut splats = SplatSet::new(cfg.sh_degree);
    let mut faces = Vec::with_capacity(scene.ico.faces.len());
    for (f, face) in scene.ico.faces.iter().enumerate() {
        let [a, b, c] = face.map(|i| world[i as usize]);
        let ff = hybrid::face_frame(a, b, c, cfg.face_scale)?;
        let frame = ff.frame.map(|col| col.map(|v| v.re));
        for k in 0..per_face {
            let s = f * per_face + k;
            let center = hybrid::barycentric_point(block.bary[s], a, b, c);
            splats.centers.push(center.map(|v| v.re));
            splats.frames.push(frame);
            splats.scales.push([ff.scale2.re, ff.scale3.re]);
            splats.opacities.push(tau.re);
            splats.sh.extend_from_slice(&block.sh[s * d..(s + 1) * d]);
            splats.block_ids.push(id as u32);
        }
        faces.push(ff);
    }
    let vertices = world.iter().map(|v| v.map(|c| c.eps)).collect();
    Ok(BlockOut {
        splats,
        jac: BlockJacobian {
            id,
            first_splat: 0,
            per_face,
            vertices,
            faces,
            tau_slope: tau.eps[P_OPACITY],
        },
    })
}

impl BoundGeometry {
    pub fn new(scene: &HybridScene) -> Result<Self> {
        Self::for_blocks(scene, &scene.alive_ids())
    }

    /// Geometry of the listed blocks only.
    pub fn for_blocks(scene: &HybridScene, ids: &[usize]) -> Result<Self> {
        let outs = par::map(ids.len(), |k| block_geometry(scene, ids[k]));
        let mut splats = SplatSet::new(scene.config.sh_degree);
        let mut blocks = Vec::with_capacity(ids.len());
        for out in outs {
            let mut out = out?;
            out.jac.first_splat = splats.len();
            splats.centers.extend(out.splats.centers);
            splats.frames.extend(out.splats.frames);
            splats.scales.extend(out.splats.scales);
            splats.opacities.extend(out.splats.opacities);
            splats.sh.extend(out.splats.sh);
            splats.block_ids.extend(out.splats.block_ids);
            blocks.push(out.jac);
        }
        Ok(BoundGeometry { splats, blocks })
    }

    /// Block parameter gradients and per-block SH gradients (laid out like
    /// `Block::sh`) from splat gradients.
    pub fn pull_back(&self, scene: &HybridScene, g: &SplatGrads) -> (Vec<[f64; NPARAM]>, Vec<Vec<f64>>) {
        let d = self.splats.sh_dim();
        let per_block = par::map(self.blocks.len(), |k| {
            let b = &self.blocks[k];
            let n_faces = b.faces.len();
            let mut gv = vec![[0.0; 3]; b.vertices.len()];
            let mut out = [0.0; NPARAM];
            let mut g_tau = 0.0;
            let bary = &scene.blocks[b.id].bary;
            for (f, face) in scene.ico.faces.iter().enumerate().take(n_faces) {
                let mut gf = [0.0; 8];
                for j in 0..b.per_face {
                    let local = f * b.per_face + j;
                    let s = b.first_splat + local;
                    let w = bary[local];
                    for (corner, wc) in face.iter().zip(w) {
                        let dst = &mut gv[*corner as usize];
                        for c in 0..3 {
                            dst[c] += wc * g.center[s][c];
                        }
                    }
                    for c in 0..3 {
                        gf[c] += g.r2[s][c];
                        gf[3 + c] += g.r3[s][c];
                    }
                    gf[6] += g.scale[s][0];
                    gf[7] += g.scale[s][1];
                    g_tau += g.opacity[s];
                }
                let ff = &b.faces[f];
                for c in 0..3 {
                    axpy(&mut out, gf[c], &ff.frame[1][c].eps);
                    axpy(&mut out, gf[3 + c], &ff.frame[2][c].eps);
                }
                axpy(&mut out, gf[6], &ff.scale2.eps);
                axpy(&mut out, gf[7], &ff.scale3.eps);
            }
            for (v, gvv) in gv.iter().enumerate() {
                for c in 0..3 {
                    axpy(&mut out, gvv[c], &b.vertices[v][c]);
                }
            }
            out[P_OPACITY] += g_tau * b.tau_slope;
            let n = n_faces * b.per_face;
            let sh = g.sh[b.first_splat * d..(b.first_splat + n) * d].to_vec();
            (out, sh)
        });
        let mut grads = vec![[0.0; NPARAM]; scene.blocks.len()];
        let mut sh = vec![Vec::new(); scene.blocks.len()];
        for (b, (g_params, g_sh)) in self.blocks.iter().zip(per_block) {
            grads[b.id] = g_params;
            sh[b.id] = g_sh;
        }
        (grads, sh)
    }
}

#[inline]
fn axpy(dst: &mut [f64; NPARAM], a: f64, x: &[f64; NPARAM]) {
    if a == 0.0 {
        return;
    }
    for i in 0..NPARAM {
        dst[i] += a * x[i];
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hybrid::{Block, BlockParams, HybridConfig};
    use crate::losses::LossWeights;
    use crate::math::{self, Aabb};
    use crate::sq::{Pose, SqShape};

    #[test]
    fn bound_splats_match_attach() {
        let cfg = HybridConfig {
            level: 1,
            ..HybridConfig::default()
        };
        let mut scene = HybridScene::new(cfg, LossWeights::default(), Aabb::normalized_cube()).unwrap();
        let pose = Pose {
            rotation: math::quat_normalize([0.9, 0.1, -0.3, 0.2]),
            translation: [0.1, 0.2, -0.3],
        };
        let p = BlockParams::from_values(&SqShape::new(0.6, 1.3, [0.3, 0.2, 0.4]), &pose, 0.7, cfg.eps_range);
        scene.blocks.push(Block::new(p, &cfg, 3));
        let geom = BoundGeometry::new(&scene).unwrap();
        let direct = scene.bound_splats().unwrap();
        assert_eq!(geom.splats.len(), direct.len());
        for i in 0..direct.len() {
            assert!(math::dist2(geom.splats.centers[i], direct.centers[i]) < 1e-24);
            assert!((geom.splats.opacities[i] - direct.opacities[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn frames_rotate_with_the_block() {
        let cfg = HybridConfig {
            level: 1,
            gaussians_per_face: 1,
            ..HybridConfig::default()
        };
        let shape = SqShape::new(0.7, 1.1, [0.3, 0.2, 0.4]);
        let mut scene = HybridScene::new(cfg, LossWeights::default(), Aabb::normalized_cube()).unwrap();
        scene
            .blocks
            .push(Block::new(BlockParams::from_values(&shape, &Pose::identity(), 0.5, cfg.eps_range), &cfg, 1));
        let q = math::quat_normalize([0.8, -0.2, 0.5, 0.1]);
        let rot = math::quat_to_mat(q);
        let mut turned = scene.clone();
        turned.blocks[0].params.rotation = q;
        let a = BoundGeometry::new(&scene).unwrap().splats;
        let b = BoundGeometry::new(&turned).unwrap().splats;
        for i in 0..a.len() {
            for k in 0..3 {
                let expect = math::mat_vec(&rot, a.frames[i][k]);
                assert!(math::norm(math::sub(expect, b.frames[i][k])) < 1e-5);
            }
            assert!(math::norm(math::sub(math::mat_vec(&rot, a.centers[i]), b.centers[i])) < 1e-9);
        }
    }
}
