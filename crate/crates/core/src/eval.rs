//! Reconstruction metrics: Chamfer distance, PSNR, SSIM and surface
//! sampling of the fitted representation.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::hybrid::{self, HybridScene, SplatSet};
use crate::image::{self, Image};
use crate::math::{self, V3};
use crate::par;
use crate::real::Real;
use crate::sq::{self, SqMesh};

pub const PSNR_CAP: f64 = 99.0;

/// Static 3-d tree for exact nearest-neighbor queries.
pub struct KdTree {
    points: Vec<V3>,
    /// Implicit balanced tree over a permutation of `points`.
    order: Vec<u32>,
}

impl KdTree {
    pub fn new(points: &[V3]) -> Self {
        let mut order: Vec<u32> = (0..points.len() as u32).collect();
        build(points, &mut order, 0);
        KdTree {
            points: points.to_vec(),
            order,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Squared distance to, and index of, the nearest stored point.
    pub fn nearest(&self, q: V3) -> Option<(f64, usize)> {
        if self.points.is_empty() {
            return None;
        }
        let mut best = (f64::INFINITY, 0usize);
        self.search(q, 0, self.order.len(), 0, &mut best);
        Some(best)
    }

    /// Indices of all stored points within distance `r` of `q`, ascending.
    pub fn within(&self, q: V3, r: f64) -> Vec<usize> {
        let mut out = Vec::new();
        self.collect(q, r * r, 0, self.order.len(), 0, &mut out);
        out.sort_unstable();
        out
    }

    fn collect(&self, q: V3, r2: f64, lo: usize, hi: usize, depth: usize, out: &mut Vec<usize>) {
        if lo >= hi {
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let i = self.order[mid] as usize;
        let p = self.points[i];
        if math::dist2(p, q) <= r2 {
            out.push(i);
        }
        let delta = q[depth % 3] - p[depth % 3];
        if delta <= 0.0 || delta * delta <= r2 {
            self.collect(q, r2, lo, mid, depth + 1, out);
        }
        if delta >= 0.0 || delta * delta <= r2 {
            self.collect(q, r2, mid + 1, hi, depth + 1, out);
        }
    }

    fn search(&self, q: V3, lo: usize, hi: usize, depth: usize, best: &mut (f64, usize)) {
        if lo >= hi {
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let i = self.order[mid] as usize;
        let p = self.points[i];
        let d2 = math::dist2(p, q);
        if d2 < best.0 || (d2 == best.0 && i < best.1) {
            *best = (d2, i);
        }
        let axis = depth % 3;
        let delta = q[axis] - p[axis];
        let (near, far) = if delta < 0.0 { ((lo, mid), (mid + 1, hi)) } else { ((mid + 1, hi), (lo, mid)) };
        self.search(q, near.0, near.1, depth + 1, best);
        if delta * delta <= best.0 {
            self.search(q, far.0, far.1, depth + 1, best);
        }
    }
}

fn build(points: &[V3], idx: &mut [u32], depth: usize) {
    if idx.len() <= 1 {
        return;
    }
    let axis = depth % 3;
    let mid = idx.len() / 2;
    idx.select_nth_unstable_by(mid, |a, b| {
        points[*a as usize][axis]
            .total_cmp(&points[*b as usize][axis])
            .then(a.cmp(b))
    });
    let (left, right) = idx.split_at_mut(mid);
    build(points, left, depth + 1);
    build(points, &mut right[1..], depth + 1);
}

fn mean_nn_distance(from: &[V3], tree: &KdTree) -> f64 {
    let d = par::map(from.len(), |i| Real::sqrt(tree.nearest(from[i]).map_or(0.0, |v| v.0)));
    d.iter().sum::<f64>() / from.len() as f64
}

/// Symmetric mean Chamfer distance
/// `0.5 * (mean_a min_b |a - b| + mean_b min_a |a - b|)`.
pub fn chamfer(a: &[V3], b: &[V3]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyPointSet);
    }
    let ta = KdTree::new(a);
    let tb = KdTree::new(b);
    Ok(0.5 * (mean_nn_distance(a, &tb) + mean_nn_distance(b, &ta)))
}

/// `10 log10(1 / MSE)`, capped at [`PSNR_CAP`].
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    a.same_dims(b)?;
    let mse = a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.data.len() as f64;
    if mse <= 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * num_traits::Float::log10(1.0 / mse)).min(PSNR_CAP))
}

pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    image::ssim(a, b)
}

/// Evaluation summary.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MetricsReport {
    #[cfg_attr(feature = "serde", serde(rename = "cd", skip_serializing_if = "Option::is_none", default))]
    pub chamfer: Option<f64>,
    pub psnr: f64,
    pub ssim: f64,
    #[cfg_attr(feature = "serde", serde(rename = "parts"))]
    pub part_count: usize,
}

/// `n` area-weighted uniform samples on the union of `meshes`.
pub fn sample_meshes(meshes: &[SqMesh], n: usize, rng: &mut impl Rng) -> Result<Vec<(V3, usize)>> {
    let mut cdf = Vec::new();
    let mut acc = 0.0;
    for (m, mesh) in meshes.iter().enumerate() {
        for f in 0..mesh.faces.len() {
            acc += mesh.face_area(f);
            cdf.push((acc, m, f));
        }
    }
    if cdf.is_empty() || !(acc > 0.0) {
        return Err(Error::NoGeometry);
    }
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let t = rng.gen::<f64>() * acc;
        let k = cdf.partition_point(|e| e.0 <= t).min(cdf.len() - 1);
        let (_, m, f) = cdf[k];
        let mesh = &meshes[m];
        let [a, b, c] = mesh.faces[f].map(|i| mesh.vertices[i as usize]);
        let w = hybrid::barycentric_from(rng.gen(), rng.gen());
        out.push((hybrid::barycentric_point(w, a, b, c), m));
    }
    Ok(out)
}

/// Surface samples of the block-level representation: area-weighted points
/// on the alive block meshes, pushed radially onto the exact surface.
pub fn sample_blocks(scene: &HybridScene, n: usize, seed: u64) -> Result<Vec<V3>> {
    let ids = scene.alive_ids();
    let meshes: Vec<SqMesh> = ids.iter().map(|&i| scene.block_mesh(i)).collect();
    if meshes.is_empty() || n == 0 {
        return Err(Error::NoGeometry);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = sample_meshes(&meshes, n, &mut rng)?;
    Ok(samples
        .into_iter()
        .map(|(p, m)| {
            let (shape, pose) = (scene.block_shape(ids[m]), scene.block_pose(ids[m]));
            let local = pose.apply_inverse(p);
            // Psi is homogeneous of degree 2 / eps1 along rays from the center.
            let psi = sq::inside_outside(local, &shape);
            if psi > 0.0 && psi.is_finite() {
                pose.apply(math::scale(local, psi.powr(-0.5 * shape.eps1)))
            } else {
                p
            }
        })
        .collect())
}

/// Point-level representation: centers of splats with opacity at least
/// `min_opacity`, subsampled without replacement to at most `n`.
pub fn sample_splats(splats: &SplatSet, n: usize, min_opacity: f64, seed: u64) -> Result<Vec<V3>> {
    let mut idx: Vec<usize> = (0..splats.len()).filter(|&i| splats.opacities[i] >= min_opacity).collect();
    if idx.is_empty() || n == 0 {
        return Err(Error::NoGeometry);
    }
    if idx.len() > n {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in 0..n {
            let j = rng.gen_range(i..idx.len());
            idx.swap(i, j);
        }
        idx.truncate(n);
        idx.sort_unstable();
    }
    Ok(idx.into_iter().map(|i| splats.centers[i]).collect())
}

/// Brute-force reference used by tests and small inputs.
pub fn chamfer_brute_force(a: &[V3], b: &[V3]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyPointSet);
    }
    let one = |from: &[V3], to: &[V3]| {
        from.iter()
            .map(|p| Real::sqrt(to.iter().map(|q| math::dist2(*p, *q)).fold(f64::INFINITY, f64::min)))
            .sum::<f64>()
            / from.len() as f64
    };
    Ok(0.5 * (one(a, b) + one(b, a)))
}

/// Count of points per mesh index in `samples`.
pub fn per_source_counts(samples: &[(V3, usize)], n_sources: usize) -> Vec<usize> {
    let mut c = vec![0; n_sources];
    for (_, m) in samples {
        c[*m] += 1;
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chamfer_trivial() {
        let a = [[0.0, 0.0, 0.0]];
        let b = [[1.0, 0.0, 0.0]];
        assert_eq!(chamfer(&a, &b).unwrap(), 1.0);
        let pts: Vec<V3> = (0..50).map(|i| [i as f64 * 0.1, (i * 7 % 5) as f64, 0.3]).collect();
        assert_eq!(chamfer(&pts, &pts).unwrap(), 0.0);
        assert_eq!(chamfer(&[], &pts), Err(Error::EmptyPointSet));
    }

    #[test]
    fn kdtree_agrees_with_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a: Vec<V3> = (0..700).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
        let b: Vec<V3> = (0..300).map(|_| [rng.gen(), rng.gen::<f64>() * 2.0, rng.gen()]).collect();
        let fast = chamfer(&a, &b).unwrap();
        let slow = chamfer_brute_force(&a, &b).unwrap();
        assert!((fast - slow).abs() < 1e-12);
    }

    #[test]
    fn radius_query_agrees_with_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let a: Vec<V3> = (0..500).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
        let tree = KdTree::new(&a);
        for q in a.iter().take(20) {
            let brute: Vec<usize> = (0..a.len()).filter(|&i| math::dist2(a[i], *q) <= 0.04).collect();
            assert_eq!(tree.within(*q, 0.2), brute);
        }
    }

    #[test]
    fn psnr_values() {
        let a = Image::filled(4, 4, 0.2);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
        assert!((psnr(&a, &Image::filled(4, 4, 0.3)).unwrap() - 20.0).abs() < 1e-9);
        assert!((psnr(&a, &Image::filled(4, 4, 0.7)).unwrap() - 6.020_599_913_279_624).abs() < 1e-9);
    }
}
