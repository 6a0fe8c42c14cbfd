//! Synthetic multi-view scenes with known part decomposition.

use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::camera::Camera;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::eval;
use crate::hybrid::{self, SplatSet};
use crate::image::Mask;
use crate::math::{self, Aabb, V3};
use crate::real::Real;
use crate::render;
use crate::sh;
use crate::sq::{self, Icosphere, Pose, SqShape};

/// One ground-truth solid; primitives sharing `part` form a single part.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Primitive {
    pub shape: SqShape,
    pub pose: Pose,
    pub color: [f64; 3],
    pub part: u32,
}

impl Primitive {
    /// Axis-aligned box-like superquadric with half extents `half`.
    pub fn cuboid(center: V3, half: V3, color: [f64; 3], part: u32) -> Self {
        Primitive {
            shape: SqShape::new(sq::EPS_MIN, sq::EPS_MIN, half),
            pose: Pose::from_translation(center),
            color,
            part,
        }
    }
}

/// Rendering and sampling settings of [`make_synthetic`].
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SynthOptions {
    pub n_views: usize,
    pub resolution: usize,
    /// Focal length relative to the resolution.
    pub focal_factor: f64,
    pub camera_distance: f64,
    pub truth_points: usize,
    pub level: u32,
    pub gaussians_per_face: usize,
    pub splat_opacity: f64,
    pub seed: u64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions {
            n_views: 20,
            resolution: 64,
            focal_factor: 1.375,
            camera_distance: 3.0,
            truth_points: 100_000,
            level: 3,
            gaussians_per_face: 16,
            splat_opacity: 0.99,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticTruth {
    pub primitives: Vec<Primitive>,
    pub points: Vec<V3>,
    /// Part id of every point.
    pub labels: Vec<u32>,
    pub part_count: usize,
}

/// Camera centers on a Fibonacci sphere of radius `r`, rotated by a
/// seed-dependent angle about the vertical axis.
pub fn sphere_cameras(n: usize, r: f64, focal: f64, res: usize, seed: u64) -> Result<Vec<Camera>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spin: f64 = rng.gen::<f64>() * core::f64::consts::TAU;
    let golden = core::f64::consts::PI * (3.0 - Real::sqrt(5.0));
    (0..n)
        .map(|k| {
            // Elevations stay clear of the poles so `up` is never parallel.
            let y = 0.9 * (1.0 - 2.0 * (k as f64 + 0.5) / n as f64);
            let rad = Real::sqrt(1.0 - y * y);
            let t = golden * k as f64 + spin;
            let eye = [r * rad * Real::cos(t), r * y, r * rad * Real::sin(t)];
            Camera::look_at(eye, [0.0; 3], [0.0, 1.0, 0.0], focal, res, res)
        })
        .collect()
}

fn validate(prims: &[Primitive], opts: &SynthOptions) -> Result<()> {
    if prims.is_empty() {
        return Err(Error::InvalidInput("synthetic scene needs at least one primitive".into()));
    }
    if opts.n_views == 0 || opts.resolution == 0 || opts.truth_points == 0 {
        return Err(Error::InvalidConfig("views, resolution and truth points must be positive".into()));
    }
    let cube = Aabb::normalized_cube();
    for p in prims {
        let s = &p.shape;
        let ok = (sq::EPS_MIN..=sq::EPS_MAX).contains(&s.eps1)
            && (sq::EPS_MIN..=sq::EPS_MAX).contains(&s.eps2)
            && s.scale.iter().all(|v| *v > 0.0)
            && p.color.iter().all(|c| (0.0..=1.0).contains(c));
        if !ok {
            return Err(Error::InvalidInput("primitive parameters out of range".into()));
        }
        let mesh = sq::to_world(&sq::tessellate(s, 1)?, &p.pose);
        if mesh.vertices.iter().any(|v| !cube.contains(*v)) {
            return Err(Error::InvalidInput("primitive extends outside the unit box".into()));
        }
    }
    Ok(())
}

/// Renders `prims` from cameras on a sphere and samples labeled truth
/// points on the surface of each part.
pub fn make_synthetic(prims: &[Primitive], opts: &SynthOptions) -> Result<(Dataset, SyntheticTruth)> {
    validate(prims, opts)?;
    let ico = Icosphere::new(opts.level)?;
    let mut splats = SplatSet::new(0);
    for (i, p) in prims.iter().enumerate() {
        let mesh = sq::to_world(&sq::mesh_from_icosphere(&ico, &p.shape), &p.pose);
        let n = mesh.faces.len() * opts.gaussians_per_face;
        let bary = hybrid::sample_barycentric(n, opts.seed ^ (0x5eed_0000 + i as u64));
        let dc = p.color.map(sh::dc_from_rgb);
        for (f, face) in mesh.faces.iter().enumerate() {
            let [a, b, c] = face.map(|v| mesh.vertices[v as usize]);
            let ff = hybrid::face_frame(a, b, c, 0.1)?;
            for k in 0..opts.gaussians_per_face {
                splats.push(&hybrid::Splat {
                    center: hybrid::barycentric_point(bary[f * opts.gaussians_per_face + k], a, b, c),
                    frame: ff.frame,
                    scale2: ff.scale2,
                    scale3: ff.scale3,
                    opacity: opts.splat_opacity,
                    sh: dc.to_vec(),
                    block_id: p.part,
                });
            }
        }
    }
    let focal = opts.focal_factor * opts.resolution as f64;
    let cameras = sphere_cameras(opts.n_views, opts.camera_distance, focal, opts.resolution, opts.seed)?;
    let mut images = Vec::with_capacity(cameras.len());
    let mut masks = Vec::with_capacity(cameras.len());
    for cam in &cameras {
        let img = render::render(&splats, cam);
        masks.push(Mask {
            width: cam.width,
            height: cam.height,
            data: img.alpha.iter().map(|a| *a > 0.5).collect(),
        });
        images.push(img.rgb);
    }
    let truth = sample_truth(prims, opts)?;
    let dataset = Dataset {
        name: String::from("synthetic"),
        cameras,
        images,
        masks,
        bbox: Aabb::normalized_cube(),
        test_views: Vec::new(),
    };
    Ok((dataset, truth))
}

/// Area-weighted samples on each primitive, dropping points buried inside
/// another primitive.
fn sample_truth(prims: &[Primitive], opts: &SynthOptions) -> Result<SyntheticTruth> {
    let fine = Icosphere::new(sq::MAX_LEVEL)?;
    let fine_meshes: Vec<sq::SqMesh> = prims
        .iter()
        .map(|p| sq::to_world(&sq::mesh_from_icosphere(&fine, &p.shape), &p.pose))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x7a75_7468);
    let mut points = Vec::with_capacity(opts.truth_points);
    let mut labels = Vec::with_capacity(opts.truth_points);
    while points.len() < opts.truth_points {
        let before = points.len();
        for (p, m) in eval::sample_meshes(&fine_meshes, opts.truth_points, &mut rng)? {
            let buried = prims
                .iter()
                .enumerate()
                .any(|(j, q)| j != m && sq::signed_distance(p, &q.shape, &q.pose) < -1e-3);
            if !buried && points.len() < opts.truth_points {
                points.push(p);
                labels.push(prims[m].part);
            }
        }
        if points.len() == before {
            return Err(Error::NoGeometry);
        }
    }
    let mut parts: Vec<u32> = prims.iter().map(|p| p.part).collect();
    parts.sort_unstable();
    parts.dedup();
    let remap = |l: u32| parts.binary_search(&l).unwrap_or(0) as u32;
    Ok(SyntheticTruth {
        primitives: prims.to_vec(),
        points,
        labels: labels.into_iter().map(remap).collect(),
        part_count: parts.len(),
    })
}

/// Three disjoint boxes along a diagonal.
pub fn three_boxes() -> Vec<Primitive> {
    alloc::vec![
        Primitive::cuboid([-0.5, -0.3, 0.0], [0.22, 0.25, 0.2], [0.9, 0.2, 0.2], 0),
        Primitive::cuboid([0.0, 0.25, -0.1], [0.2, 0.2, 0.25], [0.2, 0.8, 0.3], 1),
        Primitive::cuboid([0.5, -0.25, 0.1], [0.25, 0.2, 0.22], [0.2, 0.3, 0.9], 2),
    ]
}

/// An L-shaped single part built from two overlapping boxes.
pub fn l_shape() -> Vec<Primitive> {
    let color = [0.8, 0.6, 0.3];
    alloc::vec![
        Primitive::cuboid([-0.15, -0.35, 0.0], [0.55, 0.18, 0.25], color, 0),
        Primitive::cuboid([-0.52, 0.15, 0.0], [0.18, 0.4, 0.25], color, 0),
    ]
}

/// Centers of the truth parts (mean of their primitives' translations).
pub fn part_centers(truth: &SyntheticTruth) -> Vec<V3> {
    let mut acc = alloc::vec![([0.0; 3], 0usize); truth.part_count];
    let mut parts: Vec<u32> = truth.primitives.iter().map(|p| p.part).collect();
    parts.sort_unstable();
    parts.dedup();
    for p in &truth.primitives {
        let k = parts.binary_search(&p.part).unwrap_or(0);
        acc[k].0 = math::add(acc[k].0, p.pose.translation);
        acc[k].1 += 1;
    }
    acc.into_iter().map(|(s, n)| math::scale(s, 1.0 / n as f64)).collect()
}
