//! The coupled block representation: superquadric parameters, splats bound
//! to mesh faces, shared per-block opacity and soft occupancy.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::math::{self, Aabb, V3};
use crate::real::{self, Real};
use crate::sq::{self, Icosphere, Pose, SqShape};

/// Number of free parameters of one block.
pub const NPARAM: usize = 13;
pub const P_EPS: usize = 0;
pub const P_SCALE: usize = 2;
pub const P_ROT: usize = 5;
pub const P_TRANS: usize = 9;
pub const P_OPACITY: usize = 12;

/// Area below which a face cannot carry a frame.
pub const MIN_FACE_AREA: f64 = 1e-12;

/// Unconstrained block parameters.
///
/// `eps = eps_min + (eps_max - eps_min) * sigmoid(eps_logit)`,
/// `scale = exp(log_scale)`, `tau = sigmoid(opacity_logit)`; the rotation
/// quaternion is normalized wherever it is used.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BlockParams {
    pub eps_logit: [f64; 2],
    pub log_scale: [f64; 3],
    pub rotation: [f64; 4],
    pub translation: V3,
    pub opacity_logit: f64,
}

impl BlockParams {
    pub fn from_values(shape: &SqShape, pose: &Pose, tau: f64, range: EpsRange) -> Self {
        let to_logit = |e: f64| real::logit(((e - range.min) / (range.max - range.min)).clamp(1e-9, 1.0 - 1e-9));
        BlockParams {
            eps_logit: [to_logit(shape.eps1), to_logit(shape.eps2)],
            log_scale: shape.scale.map(|s| Real::ln(s)),
            rotation: pose.rotation,
            translation: pose.translation,
            opacity_logit: real::logit(tau),
        }
    }

    pub fn to_array(&self) -> [f64; NPARAM] {
        let mut a = [0.0; NPARAM];
        a[P_EPS..P_EPS + 2].copy_from_slice(&self.eps_logit);
        a[P_SCALE..P_SCALE + 3].copy_from_slice(&self.log_scale);
        a[P_ROT..P_ROT + 4].copy_from_slice(&self.rotation);
        a[P_TRANS..P_TRANS + 3].copy_from_slice(&self.translation);
        a[P_OPACITY] = self.opacity_logit;
        a
    }

    pub fn from_array(a: &[f64; NPARAM]) -> Self {
        BlockParams {
            eps_logit: [a[P_EPS], a[P_EPS + 1]],
            log_scale: [a[P_SCALE], a[P_SCALE + 1], a[P_SCALE + 2]],
            rotation: [a[P_ROT], a[P_ROT + 1], a[P_ROT + 2], a[P_ROT + 3]],
            translation: [a[P_TRANS], a[P_TRANS + 1], a[P_TRANS + 2]],
            opacity_logit: a[P_OPACITY],
        }
    }

    pub fn shape(&self, range: EpsRange) -> SqShape {
        decode(&self.to_array(), range).0
    }

    pub fn pose(&self) -> Pose {
        Pose {
            rotation: math::quat_normalize(self.rotation),
            translation: self.translation,
        }
    }

    pub fn tau(&self) -> f64 {
        real::sigmoid(self.opacity_logit)
    }
}

/// Admissible range of the shape exponents.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EpsRange {
    pub min: f64,
    pub max: f64,
}

impl Default for EpsRange {
    fn default() -> Self {
        EpsRange {
            min: sq::EPS_MIN,
            max: sq::EPS_MAX,
        }
    }
}

/// Maps the raw parameter vector to shape, pose and opacity.
pub fn decode<T: Real>(x: &[T; NPARAM], range: EpsRange) -> (SqShape<T>, Pose<T>, T) {
    let eps = |l: T| l.sigmoid() * (range.max - range.min) + range.min;
    let shape = SqShape {
        eps1: eps(x[P_EPS]),
        eps2: eps(x[P_EPS + 1]),
        scale: [x[P_SCALE].exp(), x[P_SCALE + 1].exp(), x[P_SCALE + 2].exp()],
    };
    let pose = Pose {
        rotation: [x[P_ROT], x[P_ROT + 1], x[P_ROT + 2], x[P_ROT + 3]],
        translation: [x[P_TRANS], x[P_TRANS + 1], x[P_TRANS + 2]],
    };
    (shape, pose, x[P_OPACITY].sigmoid())
}

/// Scene-wide settings of the hybrid representation.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct HybridConfig {
    pub level: u32,
    pub gaussians_per_face: usize,
    /// Splat size relative to the face (`c`).
    pub face_scale: f64,
    pub sh_degree: u32,
    pub eps_range: EpsRange,
}

impl Default for HybridConfig {
    fn default() -> Self {
        HybridConfig {
            level: 2,
            gaussians_per_face: 4,
            face_scale: 0.1,
            sh_degree: 2,
            eps_range: EpsRange::default(),
        }
    }
}

impl HybridConfig {
    /// SH coefficients per splat (all three channels).
    pub fn sh_dim(&self) -> usize {
        sh_dim(self.sh_degree)
    }

    pub fn face_count(&self) -> usize {
        20 * 4usize.pow(self.level)
    }

    pub fn splats_per_block(&self) -> usize {
        self.face_count() * self.gaussians_per_face
    }
}

pub fn sh_dim(degree: u32) -> usize {
    3 * ((degree as usize) + 1).pow(2)
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Block {
    pub params: BlockParams,
    /// Per-splat SH coefficients, `splat * sh_dim + k * 3 + channel`.
    pub sh: Vec<f64>,
    /// Barycentric position of every splat, face-major; fixed at creation.
    pub bary: Vec<[f64; 3]>,
    pub alive: bool,
}

impl Block {
    pub fn new(params: BlockParams, cfg: &HybridConfig, seed: u64) -> Self {
        let n = cfg.splats_per_block();
        Block {
            params,
            sh: alloc::vec![0.0; n * cfg.sh_dim()],
            bary: sample_barycentric(n, seed),
            alive: true,
        }
    }

    pub fn tau(&self) -> f64 {
        self.params.tau()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HybridScene {
    pub blocks: Vec<Block>,
    pub config: HybridConfig,
    pub loss_weights: LossWeights,
    pub bbox: Aabb,
    pub ico: Icosphere,
}

impl HybridScene {
    pub fn new(config: HybridConfig, loss_weights: LossWeights, bbox: Aabb) -> Result<Self> {
        Ok(HybridScene {
            blocks: Vec::new(),
            ico: Icosphere::new(config.level)?,
            config,
            loss_weights,
            bbox,
        })
    }

    pub fn alive_ids(&self) -> Vec<usize> {
        (0..self.blocks.len()).filter(|&i| self.blocks[i].alive).collect()
    }

    pub fn alive_count(&self) -> usize {
        self.blocks.iter().filter(|b| b.alive).count()
    }

    pub fn block_shape(&self, i: usize) -> SqShape {
        self.blocks[i].params.shape(self.config.eps_range)
    }

    pub fn block_pose(&self, i: usize) -> Pose {
        self.blocks[i].params.pose()
    }

    /// World-frame mesh of block `i`.
    pub fn block_mesh(&self, i: usize) -> sq::SqMesh {
        let local = sq::mesh_from_icosphere(&self.ico, &self.block_shape(i));
        sq::to_world(&local, &self.block_pose(i))
    }

    /// Signed distance of `p` to block `i`.
    pub fn distance(&self, i: usize, p: V3) -> f64 {
        sq::signed_distance(p, &self.block_shape(i), &self.block_pose(i))
    }

    /// Splats of every alive block, in block order.
    pub fn bound_splats(&self) -> Result<SplatSet> {
        let mut out = SplatSet::new(self.config.sh_degree);
        for i in self.alive_ids() {
            let mesh = self.block_mesh(i);
            attach_into(&mut out, i, &self.blocks[i], &mesh, self.config.face_scale)?;
        }
        Ok(out)
    }
}

/// Barycentric weights for the uniform-in-triangle map of `(r1, r2)`.
pub fn barycentric_from(r1: f64, r2: f64) -> [f64; 3] {
    let u = Real::sqrt(r1);
    let v = r2;
    [1.0 - u, u * (1.0 - v), u * v]
}

/// `n` barycentric triples uniformly distributed over a triangle.
pub fn sample_barycentric(n: usize, seed: u64) -> Vec<[f64; 3]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let r1: f64 = rng.gen();
            let r2: f64 = rng.gen();
            barycentric_from(r1, r2)
        })
        .collect()
}

/// Tangent frame and extents of the splats carried by one face.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FaceFrame<T = f64> {
    /// Columns `r1` (normal), `r2`, `r3`.
    pub frame: [V3<T>; 3],
    pub scale2: T,
    pub scale3: T,
}

/// Frame of the face `(v1, v2, v3)`: `r1` the unit normal, `r2` towards `v1`
/// from the centroid, `r3` the Gram-Schmidt remainder of `v2 - m`.
pub fn face_frame<T: Real>(v1: V3<T>, v2: V3<T>, v3: V3<T>, c: f64) -> Result<FaceFrame<T>> {
    let n = math::cross(math::sub(v2, v1), math::sub(v3, v1));
    let area = 0.5 * math::norm(math::values(n));
    if !(area >= MIN_FACE_AREA) {
        return Err(Error::DegenerateFace(area));
    }
    let m = math::scale(math::add(math::add(v1, v2), v3), T::cst(1.0 / 3.0));
    let r1 = math::normalize(n);
    let to_v1 = math::sub(v1, m);
    let r2 = math::normalize(to_v1);
    let e = math::sub(v2, m);
    let ort = math::sub(
        math::sub(e, math::scale(r1, math::dot(e, r1))),
        math::scale(r2, math::dot(e, r2)),
    );
    let r3 = math::normalize(ort);
    let scale2 = math::norm(to_v1) * c;
    let scale3 = math::dot(e, r3).abs() * c;
    Ok(FaceFrame {
        frame: [r1, r2, r3],
        scale2,
        scale3,
    })
}

/// Soft occupancy `tau * sigmoid(-D / gamma)`.
pub fn soft_occupancy<T: Real>(distance: T, tau: T, gamma: f64) -> T {
    tau * (-distance / gamma).sigmoid()
}

/// Flat structure-of-arrays splat storage.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SplatSet {
    pub centers: Vec<V3>,
    /// Columns `r1`, `r2`, `r3`; `r1` is the zero-extent axis.
    pub frames: Vec<[V3; 3]>,
    pub scales: Vec<[f64; 2]>,
    pub opacities: Vec<f64>,
    pub sh: Vec<f64>,
    pub sh_degree: u32,
    pub block_ids: Vec<u32>,
}

/// One splat, copied out of a [`SplatSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct Splat {
    pub center: V3,
    pub frame: [V3; 3],
    pub scale2: f64,
    pub scale3: f64,
    pub opacity: f64,
    pub sh: Vec<f64>,
    pub block_id: u32,
}

impl SplatSet {
    pub fn new(sh_degree: u32) -> Self {
        SplatSet {
            centers: Vec::new(),
            frames: Vec::new(),
            scales: Vec::new(),
            opacities: Vec::new(),
            sh: Vec::new(),
            sh_degree,
            block_ids: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn sh_dim(&self) -> usize {
        sh_dim(self.sh_degree)
    }

    pub fn sh_of(&self, i: usize) -> &[f64] {
        let d = self.sh_dim();
        &self.sh[i * d..(i + 1) * d]
    }

    pub fn push(&mut self, s: &Splat) {
        assert_eq!(s.sh.len(), self.sh_dim());
        self.centers.push(s.center);
        self.frames.push(s.frame);
        self.scales.push([s.scale2, s.scale3]);
        self.opacities.push(s.opacity);
        self.sh.extend_from_slice(&s.sh);
        self.block_ids.push(s.block_id);
    }

    pub fn get(&self, i: usize) -> Splat {
        Splat {
            center: self.centers[i],
            frame: self.frames[i],
            scale2: self.scales[i][0],
            scale3: self.scales[i][1],
            opacity: self.opacities[i],
            sh: self.sh_of(i).to_vec(),
            block_id: self.block_ids[i],
        }
    }

    /// Keeps only the splats whose index satisfies `keep`.
    pub fn filter(&self, mut keep: impl FnMut(usize) -> bool) -> SplatSet {
        let mut out = SplatSet::new(self.sh_degree);
        for i in 0..self.len() {
            if keep(i) {
                out.push(&self.get(i));
            }
        }
        out
    }
}

/// Splats of `block` on its world-frame `mesh`.
pub fn attach(block_id: usize, block: &Block, mesh: &sq::SqMesh, c: f64, sh_degree: u32) -> Result<SplatSet> {
    let mut out = SplatSet::new(sh_degree);
    attach_into(&mut out, block_id, block, mesh, c)?;
    Ok(out)
}

fn attach_into(out: &mut SplatSet, block_id: usize, block: &Block, mesh: &sq::SqMesh, c: f64) -> Result<()> {
    let per_face = block.bary.len() / mesh.faces.len();
    let d = out.sh_dim();
    let tau = block.tau();
    for (f, face) in mesh.faces.iter().enumerate() {
        let [a, b, cc] = face.map(|i| mesh.vertices[i as usize]);
        let ff = face_frame(a, b, cc, c)?;
        for k in 0..per_face {
            let s = f * per_face + k;
            let w = block.bary[s];
            out.centers.push(barycentric_point(w, a, b, cc));
            out.frames.push(ff.frame);
            out.scales.push([ff.scale2, ff.scale3]);
            out.opacities.push(tau);
            out.sh.extend_from_slice(&block.sh[s * d..(s + 1) * d]);
            out.block_ids.push(block_id as u32);
        }
    }
    Ok(())
}

#[inline]
pub fn barycentric_point<T: Real>(w: [f64; 3], a: V3<T>, b: V3<T>, c: V3<T>) -> V3<T> {
    core::array::from_fn(|i| a[i] * w[0] + b[i] * w[1] + c[i] * w[2])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::real::Dual;

    #[test]
    fn barycentric_boundaries() {
        assert_eq!(barycentric_from(0.0, 0.0), [1.0, 0.0, 0.0]);
        assert_eq!(barycentric_from(1.0, 1.0), [0.0, 0.0, 1.0]);
        for w in sample_barycentric(1000, 7) {
            assert!(w.iter().all(|&x| x >= 0.0));
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert_eq!(sample_barycentric(10, 3), sample_barycentric(10, 3));
    }

    #[test]
    fn barycentric_centroid_monte_carlo() {
        let h = Real::sqrt(3.0) / 2.0;
        let (a, b, c) = ([1.0, 0.0, 0.0], [-0.5, h, 0.0], [-0.5, -h, 0.0]);
        let n = 100_000;
        let mut acc = [0.0; 3];
        for w in sample_barycentric(n, 11) {
            let p = barycentric_point(w, a, b, c);
            acc = math::add(acc, p);
        }
        let mean = math::scale(acc, 1.0 / n as f64);
        // Geometric centroid is the origin; 1% of the circumradius.
        assert!(math::norm(mean) < 0.01, "{mean:?}");
    }

    #[test]
    fn equilateral_frame() {
        let h = Real::sqrt(3.0) / 2.0;
        let f = face_frame([1.0, 0.0, 0.0], [-0.5, h, 0.0], [-0.5, -h, 0.0], 0.1).unwrap();
        assert!((f.frame[0][2].abs() - 1.0).abs() < 1e-12);
        assert!(math::norm(math::sub(f.frame[1], [1.0, 0.0, 0.0])) < 1e-12);
    }

    #[test]
    fn right_triangle_frame_constants() {
        // m = (1/3, 1/3, 0); scale2 = 0.1 * |m - v1| = 0.1 * sqrt(2)/3.
        // r2 = -(1,1,0)/sqrt2, r3 is perpendicular to r2 in-plane: (1,-1,0)/sqrt2 up to sign,
        // v2 - m = (2/3, -1/3, 0), |<v2 - m, r3>| = (2/3 + 1/3)/sqrt2 = 1/sqrt2.
        let f = face_frame([0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], 0.1).unwrap();
        assert!((f.scale2 - 0.047_140_452_079_103_17).abs() < 1e-15);
        assert!((f.scale3 - 0.070_710_678_118_654_75).abs() < 1e-15);
        for i in 0..3 {
            assert!((math::norm(f.frame[i]) - 1.0).abs() < 1e-12);
            for j in 0..i {
                assert!(math::dot(f.frame[i], f.frame[j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn degenerate_face_rejected() {
        let r = face_frame([0.0; 3], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0], 0.1);
        assert!(matches!(r, Err(Error::DegenerateFace(_))));
    }

    #[test]
    fn occupancy_values() {
        let o = soft_occupancy(-1.0, 1.0, 0.005);
        assert!((o - 1.0).abs() < 1e-12);
        assert_eq!(soft_occupancy(0.0, 0.6, 0.005), 0.3);
        let o = soft_occupancy(0.01, 1.0, 0.005);
        // sigmoid(-2) = 1 / (1 + e^2)
        assert!((o - 0.119_202_922_022_117_57).abs() < 1e-12);
    }

    fn one_block_scene(cfg: HybridConfig, tau: f64) -> HybridScene {
        let mut scene = HybridScene::new(cfg, LossWeights::default(), Aabb::normalized_cube()).unwrap();
        let p = BlockParams::from_values(
            &SqShape::new(0.8, 1.2, [0.3, 0.4, 0.5]),
            &Pose::identity(),
            tau,
            cfg.eps_range,
        );
        scene.blocks.push(Block::new(p, &cfg, 1));
        scene
    }

    #[test]
    fn attach_counts_and_shared_opacity() {
        let cfg = HybridConfig {
            gaussians_per_face: 100,
            ..HybridConfig::default()
        };
        let scene = one_block_scene(cfg, 0.5);
        let splats = scene.bound_splats().unwrap();
        assert_eq!(splats.len(), 32_000);
        assert!(splats.opacities.iter().all(|&o| (o - 0.5).abs() < 1e-15));
        assert!(splats.block_ids.iter().all(|&b| b == 0));
    }

    #[test]
    fn one_gaussian_per_face_sits_on_its_face() {
        let cfg = HybridConfig {
            gaussians_per_face: 1,
            ..HybridConfig::default()
        };
        let scene = one_block_scene(cfg, 0.5);
        let mesh = scene.block_mesh(0);
        let splats = scene.bound_splats().unwrap();
        for (f, face) in mesh.faces.iter().enumerate() {
            let [a, b, c] = face.map(|i| mesh.vertices[i as usize]);
            let ff = face_frame(a, b, c, cfg.face_scale).unwrap();
            assert_eq!(splats.frames[f], ff.frame);
            let offset = math::sub(splats.centers[f], a);
            assert!(math::dot(offset, ff.frame[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn splat_centers_follow_translation_with_identity_jacobian() {
        let cfg = HybridConfig::default();
        let scene = one_block_scene(cfg, 0.5);
        let x = Dual::<NPARAM>::vars(scene.blocks[0].params.to_array());
        let (shape, pose, _) = decode(&x, cfg.eps_range);
        let verts = sq::map_vertices(&scene.ico.angles, &shape);
        let face = scene.ico.faces[17];
        let w = scene.blocks[0].bary[17 * cfg.gaussians_per_face];
        let world: [V3<Dual<NPARAM>>; 3] = face.map(|i| pose.apply(verts[i as usize]));
        let c = barycentric_point(w, world[0], world[1], world[2]);
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((c[i].eps[P_TRANS + j] - expect).abs() < 1e-12);
            }
        }
    }
}
