//! Training objectives. Every `*_grad` variant returns the same value as its
//! plain counterpart together with exact first derivatives.
//!
//! Block parameter gradients are `Vec<[f64; NPARAM]>` indexed by block id;
//! dead blocks keep zero rows.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::hybrid::{self, EpsRange, HybridScene, SplatSet, NPARAM, P_OPACITY};
use crate::image::{self, Image, Mask};
use crate::math::{self, Aabb, M3, V3};
use crate::par;
use crate::real::{Dual, Real};
use crate::render::RenderedImage;
use crate::sq::{self, Pose, SqShape};

/// Probability clamp of the cross-entropy terms.
pub const BCE_CLAMP: f64 = 1e-6;
/// Occupancy slopes below this are treated as zero.
const SLOPE_FLOOR: f64 = 1e-14;

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LossWeights {
    /// D-SSIM share of the rendering loss.
    pub lambda_ssim: f64,
    pub w_cov: f64,
    pub w_over: f64,
    pub w_par: f64,
    pub w_opa: f64,
    pub w_enter: f64,
    pub w_scale: f64,
    pub w_mask: f64,
    /// Soft-occupancy temperature.
    pub gamma: f64,
    /// Overlap allowance `k`.
    pub k_overlap: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_ssim: 0.2,
            w_cov: 10.0,
            w_over: 1.0,
            w_par: 0.002,
            w_opa: 0.01,
            w_enter: 1.0,
            w_scale: 1.0,
            w_mask: 0.1,
            gamma: 0.005,
            k_overlap: 1.95,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.lambda_ssim,
            self.w_cov,
            self.w_over,
            self.w_par,
            self.w_opa,
            self.w_enter,
            self.w_scale,
            self.w_mask,
            self.k_overlap,
        ];
        if all.iter().any(|w| !(*w >= 0.0 && w.is_finite())) || self.lambda_ssim > 1.0 || !(self.gamma > 0.0) {
            return Err(Error::InvalidConfig("loss weights must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// Per-term loss values of one iteration.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LossReport {
    pub iter: usize,
    pub ren: f64,
    pub cov: f64,
    pub over: f64,
    pub par: f64,
    pub opa: f64,
    pub enter: f64,
    pub scale: f64,
    pub mask: f64,
    pub total: f64,
}

impl LossReport {
    /// Weighted sum of the terms; the rendering term has unit weight.
    pub fn combine(&self, w: &LossWeights) -> f64 {
        self.ren
            + w.w_cov * self.cov
            + w.w_over * self.over
            + w.w_par * self.par
            + w.w_opa * self.opa
            + w.w_enter * self.enter
            + w.w_scale * self.scale
            + w.w_mask * self.mask
    }
}

/// Sampled rays with mask labels and stratified points inside the scene box.
#[derive(Clone, Debug, PartialEq)]
pub struct RayBatch {
    pub origins: Vec<V3>,
    pub directions: Vec<V3>,
    pub labels: Vec<bool>,
    /// `samples_per_ray` points per ray, ray-major.
    pub samples: Vec<V3>,
    pub samples_per_ray: usize,
}

impl RayBatch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn ray_samples(&self, r: usize) -> &[V3] {
        &self.samples[r * self.samples_per_ray..(r + 1) * self.samples_per_ray]
    }
}

/// Points `Omega` for the overlap term.
#[derive(Clone, Debug, PartialEq)]
pub struct PointSample {
    pub points: Vec<V3>,
    pub owner: Option<Vec<u32>>,
}

impl PointSample {
    pub fn uniform(bbox: &Aabb, n: usize, rng: &mut impl Rng) -> Self {
        let points = (0..n)
            .map(|_| core::array::from_fn(|i| bbox.min[i] + rng.gen::<f64>() * (bbox.max[i] - bbox.min[i])))
            .collect();
        PointSample { points, owner: None }
    }
}

/// Rays through random pixels of every view, `rays_per_view` each.
pub fn sample_rays(
    cams: &[Camera],
    masks: &[Mask],
    bbox: &Aabb,
    rays_per_view: usize,
    samples_per_ray: usize,
    rng: &mut impl Rng,
) -> Result<RayBatch> {
    if cams.len() != masks.len() {
        return Err(Error::DimensionMismatch {
            expected: alloc::format!("{} masks", cams.len()),
            got: alloc::format!("{}", masks.len()),
        });
    }
    if samples_per_ray == 0 {
        return Err(Error::InvalidConfig("samples_per_ray must be positive".into()));
    }
    let mut batch = RayBatch {
        origins: Vec::new(),
        directions: Vec::new(),
        labels: Vec::new(),
        samples: Vec::new(),
        samples_per_ray,
    };
    for (cam, mask) in cams.iter().zip(masks) {
        let mut drawn = 0;
        let mut attempts = 0;
        while drawn < rays_per_view {
            attempts += 1;
            if attempts > 100 * rays_per_view.max(1) {
                return Err(Error::InvalidInput("camera rays miss the scene box".into()));
            }
            let px = rng.gen_range(0..cam.width);
            let py = rng.gen_range(0..cam.height);
            let (o, d) = cam.pixel_ray(px, py);
            let Some((t0, t1)) = bbox.ray_interval(o, d) else {
                continue;
            };
            let step = (t1 - t0) / samples_per_ray as f64;
            for j in 0..samples_per_ray {
                let u: f64 = rng.gen();
                let t = t0 + (j as f64 + u) * step;
                let p = math::add(o, math::scale(d, t));
                batch.samples.push(core::array::from_fn(|i| p[i].clamp(bbox.min[i], bbox.max[i])));
            }
            batch.origins.push(o);
            batch.directions.push(d);
            batch.labels.push(mask.get(px, py));
            drawn += 1;
        }
    }
    Ok(batch)
}

/// Cached world-to-local transform of one alive block.
#[derive(Clone, Debug)]
pub struct BlockField {
    pub id: usize,
    pub params: [f64; NPARAM],
    pub shape: SqShape,
    rot: M3,
    t: V3,
    pub tau: f64,
    range: EpsRange,
}

impl BlockField {
    pub fn distance(&self, p: V3) -> f64 {
        let local = math::mat_t_vec(&self.rot, math::sub(p, self.t));
        sq::inside_outside(local, &self.shape) - 1.0
    }

    /// Distance and its gradient with respect to the block parameters.
    pub fn distance_grad(&self, p: V3) -> (f64, [f64; NPARAM]) {
        let x = Dual::<NPARAM>::vars(self.params);
        let (shape, pose, _) = hybrid::decode(&x, self.range);
        let d = sq::signed_distance(math::lift(p), &shape, &pose);
        (d.re, d.eps)
    }

    /// Distance and its gradient with respect to the point.
    pub fn distance_point_grad(&self, p: V3) -> (f64, V3) {
        let x = Dual::<3>::vars(p);
        let local = math::mat_t_vec(&crate::camera::lift_m(&self.rot), math::sub(x, math::lift(self.t)));
        let d = sq::inside_outside(local, &self.shape.lift()) - 1.0;
        (d.re, d.eps)
    }

    pub fn occupancy(&self, p: V3, gamma: f64) -> f64 {
        hybrid::soft_occupancy(self.distance(p), self.tau, gamma)
    }
}

/// Fields of every alive block, in block order.
pub fn fields(scene: &HybridScene) -> Vec<BlockField> {
    scene
        .alive_ids()
        .into_iter()
        .map(|i| {
            let params = scene.blocks[i].params.to_array();
            let (shape, pose, tau) = hybrid::decode(&params, scene.config.eps_range);
            let pose = Pose {
                rotation: math::quat_normalize(pose.rotation),
                translation: pose.translation,
            };
            BlockField {
                id: i,
                params,
                shape,
                rot: pose.matrix(),
                t: pose.translation,
                tau,
                range: scene.config.eps_range,
            }
        })
        .collect()
}

fn zero_grads(scene: &HybridScene) -> Vec<[f64; NPARAM]> {
    vec![[0.0; NPARAM]; scene.blocks.len()]
}

fn axpy(dst: &mut [f64; NPARAM], a: f64, x: &[f64; NPARAM]) {
    for i in 0..NPARAM {
        dst[i] += a * x[i];
    }
}

/// `(1 - lambda) * L1 + lambda * (1 - SSIM) / 2`.
pub fn rendering_loss(rendered: &Image, target: &Image, lambda: f64) -> Result<f64> {
    rendered.same_dims(target)?;
    let l1 = rendered.data.iter().zip(&target.data).map(|(a, b)| (a - b).abs()).sum::<f64>() / rendered.data.len() as f64;
    let ssim = if lambda > 0.0 { image::ssim(rendered, target)? } else { 1.0 };
    Ok((1.0 - lambda) * l1 + lambda * (1.0 - ssim) / 2.0)
}

/// Rendering loss and its gradient with respect to the rendered pixels.
pub fn rendering_loss_grad(rendered: &Image, target: &Image, lambda: f64) -> Result<(f64, Vec<f64>)> {
    rendered.same_dims(target)?;
    let n = rendered.data.len() as f64;
    let mut l1 = 0.0;
    let mut grad: Vec<f64> = rendered
        .data
        .iter()
        .zip(&target.data)
        .map(|(a, b)| {
            let d = a - b;
            l1 += d.abs();
            let s = if d > 0.0 {
                1.0
            } else if d < 0.0 {
                -1.0
            } else {
                0.0
            };
            (1.0 - lambda) * s / n
        })
        .collect();
    l1 /= n;
    let mut ssim = 1.0;
    if lambda > 0.0 {
        let (s, g) = image::ssim_with_grad(rendered, target)?;
        ssim = s;
        for (dst, gs) in grad.iter_mut().zip(g) {
            *dst -= lambda * 0.5 * gs;
        }
    }
    Ok(((1.0 - lambda) * l1 + lambda * (1.0 - ssim) / 2.0, grad))
}

/// Smallest block distance over a ray's samples, with its block and sample.
/// Distances of every ray sample to every field, laid out
/// `[ray][field][sample]`.
fn ray_distances(fields: &[BlockField], batch: &RayBatch) -> Vec<f64> {
    par::map(batch.len(), |r| {
        let samples = batch.ray_samples(r);
        fields.iter().flat_map(|f| samples.iter().map(move |p| f.distance(*p))).collect::<Vec<f64>>()
    })
    .concat()
}

fn ray_min_distance(table: &[f64], n_fields: usize, n_samples: usize) -> Option<(f64, usize, usize)> {
    let mut best: Option<(f64, usize, usize)> = None;
    for b in 0..n_fields {
        for j in 0..n_samples {
            let d = table[b * n_samples + j];
            if best.is_none_or(|(bd, _, _)| d < bd) {
                best = Some((d, b, j));
            }
        }
    }
    best
}

/// Coverage term: inside-mask rays must meet a block, outside-mask rays
/// must not. Mean over rays.
pub fn coverage_loss(batch: &RayBatch, scene: &HybridScene) -> f64 {
    coverage_impl(batch, scene, false).0
}

pub fn coverage_loss_grad(batch: &RayBatch, scene: &HybridScene) -> (f64, Vec<[f64; NPARAM]>) {
    coverage_impl(batch, scene, true)
}

fn coverage_impl(batch: &RayBatch, scene: &HybridScene, with_grad: bool) -> (f64, Vec<[f64; NPARAM]>) {
    let fl = fields(scene);
    let table = ray_distances(&fl, batch);
    coverage_from(batch, scene, &fl, &table, with_grad)
}

/// Coverage and opacity-entropy terms with their gradients, sharing one
/// evaluation of the ray-sample distances.
pub fn coverage_and_opacity_grad(
    batch: &RayBatch,
    scene: &HybridScene,
    gamma: f64,
) -> ((f64, Vec<[f64; NPARAM]>), (f64, Vec<[f64; NPARAM]>)) {
    let fl = fields(scene);
    let table = ray_distances(&fl, batch);
    (
        coverage_from(batch, scene, &fl, &table, true),
        opacity_from(batch, scene, &fl, &table, gamma, true),
    )
}

fn coverage_from(
    batch: &RayBatch,
    scene: &HybridScene,
    fl: &[BlockField],
    table: &[f64],
    with_grad: bool,
) -> (f64, Vec<[f64; NPARAM]>) {
    let mut grads = zero_grads(scene);
    if batch.is_empty() || fl.is_empty() {
        return (0.0, grads);
    }
    let ns = batch.samples_per_ray;
    let stride = fl.len() * ns;
    let per_ray: Vec<_> = (0..batch.len())
        .map(|r| ray_min_distance(&table[r * stride..(r + 1) * stride], fl.len(), ns))
        .collect();
    let inv = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    for (r, best) in per_ray.into_iter().enumerate() {
        let Some((d, b, j)) = best else { continue };
        let sign = if batch.labels[r] { 1.0 } else { -1.0 };
        let v = sign * d;
        if v > 0.0 {
            total += v;
            if with_grad {
                let (_, g) = fl[b].distance_grad(batch.ray_samples(r)[j]);
                axpy(&mut grads[fl[b].id], sign * inv, &g);
            }
        }
    }
    (total * inv, grads)
}

/// `(1/N) sum_x ReLU(sum_i O_i(x) - k)`.
pub fn overlap_loss(pts: &PointSample, scene: &HybridScene, gamma: f64, k: f64) -> f64 {
    overlap_impl(pts, scene, gamma, k, false).0
}

pub fn overlap_loss_grad(pts: &PointSample, scene: &HybridScene, gamma: f64, k: f64) -> (f64, Vec<[f64; NPARAM]>) {
    overlap_impl(pts, scene, gamma, k, true)
}

fn overlap_impl(
    pts: &PointSample,
    scene: &HybridScene,
    gamma: f64,
    k: f64,
    with_grad: bool,
) -> (f64, Vec<[f64; NPARAM]>) {
    let fl = fields(scene);
    let n = pts.points.len();
    if n == 0 {
        return (0.0, zero_grads(scene));
    }
    let inv = 1.0 / n as f64;
    let per_point: Vec<(f64, Vec<(usize, [f64; NPARAM])>)> = par::map(n, |i| {
        let p = pts.points[i];
        let ds: Vec<f64> = fl.iter().map(|f| f.distance(p)).collect();
        let sum: f64 = fl.iter().zip(&ds).map(|(f, d)| hybrid::soft_occupancy(*d, f.tau, gamma)).sum();
        let excess = sum - k;
        let mut g = Vec::new();
        if excess > 0.0 && with_grad {
            for (f, d) in fl.iter().zip(&ds) {
                let s = (-d / gamma).sigmoid();
                let mut row = [0.0; NPARAM];
                // dO/dlogit = O (1 - tau)
                row[P_OPACITY] = f.tau * s * (1.0 - f.tau);
                let slope = s * (1.0 - s);
                if slope > SLOPE_FLOOR {
                    let (_, dg) = f.distance_grad(p);
                    axpy(&mut row, -f.tau * slope / gamma, &dg);
                }
                g.push((f.id, row));
            }
        }
        (excess.max(0.0), g)
    });
    let mut grads = zero_grads(scene);
    let mut total = 0.0;
    for (v, g) in per_point {
        total += v;
        for (id, row) in g {
            axpy(&mut grads[id], inv, &row);
        }
    }
    (total * inv, grads)
}

/// `(1/M) sum_i sqrt(tau_i)` over alive blocks.
pub fn parsimony_loss(scene: &HybridScene) -> f64 {
    parsimony_loss_grad(scene).0
}

pub fn parsimony_loss_grad(scene: &HybridScene) -> (f64, Vec<[f64; NPARAM]>) {
    let ids = scene.alive_ids();
    let mut grads = zero_grads(scene);
    if ids.is_empty() {
        return (0.0, grads);
    }
    let inv = 1.0 / ids.len() as f64;
    let mut total = 0.0;
    for i in ids {
        let tau = scene.blocks[i].tau();
        let r = Real::sqrt(tau);
        total += r;
        // d sqrt(tau) / d logit = 0.5 sqrt(tau) (1 - tau)
        grads[i][P_OPACITY] = inv * 0.5 * r * (1.0 - tau);
    }
    (total * inv, grads)
}

/// Binary cross-entropy with the probability clamped to
/// `[BCE_CLAMP, 1 - BCE_CLAMP]`, and its derivative in `p`.
pub fn bce(p: f64, label: bool) -> (f64, f64) {
    let clamped = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
    let slope_live = clamped == p;
    if label {
        (-Real::ln(clamped), if slope_live { -1.0 / p } else { 0.0 })
    } else {
        (-Real::ln(1.0 - clamped), if slope_live { 1.0 / (1.0 - p) } else { 0.0 })
    }
}

/// Cross-entropy between the strongest interior occupancy on each ray and
/// its mask label; rays without interior samples are skipped.
pub fn opacity_entropy_loss(batch: &RayBatch, scene: &HybridScene, gamma: f64) -> f64 {
    opacity_impl(batch, scene, gamma, false).0
}

pub fn opacity_entropy_loss_grad(batch: &RayBatch, scene: &HybridScene, gamma: f64) -> (f64, Vec<[f64; NPARAM]>) {
    opacity_impl(batch, scene, gamma, true)
}

fn opacity_impl(batch: &RayBatch, scene: &HybridScene, gamma: f64, with_grad: bool) -> (f64, Vec<[f64; NPARAM]>) {
    let fl = fields(scene);
    let table = ray_distances(&fl, batch);
    opacity_from(batch, scene, &fl, &table, gamma, with_grad)
}

fn opacity_from(
    batch: &RayBatch,
    scene: &HybridScene,
    fl: &[BlockField],
    table: &[f64],
    gamma: f64,
    with_grad: bool,
) -> (f64, Vec<[f64; NPARAM]>) {
    let mut grads = zero_grads(scene);
    let ns = batch.samples_per_ray;
    let stride = fl.len() * ns;
    let per_ray: Vec<Option<(f64, usize, usize, f64)>> = (0..batch.len()).map(|r| {
        let mut best: Option<(f64, usize, usize, f64)> = None;
        for (b, f) in fl.iter().enumerate() {
            for j in 0..ns {
                let d = table[r * stride + b * ns + j];
                if d > 0.0 {
                    continue;
                }
                let o = hybrid::soft_occupancy(d, f.tau, gamma);
                if best.is_none_or(|(bo, _, _, _)| o > bo) {
                    best = Some((o, b, j, d));
                }
            }
        }
        best
    }).collect();
    let counted = per_ray.iter().filter(|v| v.is_some()).count();
    if counted == 0 {
        return (0.0, grads);
    }
    let inv = 1.0 / counted as f64;
    let mut total = 0.0;
    for (r, best) in per_ray.into_iter().enumerate() {
        let Some((o, b, j, d)) = best else { continue };
        let (v, dv) = bce(o, batch.labels[r]);
        total += v;
        if with_grad && dv != 0.0 {
            let f = &fl[b];
            let s = (-d / gamma).sigmoid();
            let row = &mut grads[f.id];
            row[P_OPACITY] += inv * dv * f.tau * s * (1.0 - f.tau);
            let slope = s * (1.0 - s);
            if slope > SLOPE_FLOOR {
                let (_, dg) = f.distance_grad(batch.ray_samples(r)[j]);
                axpy(row, -inv * dv * f.tau * slope / gamma, &dg);
            }
        }
    }
    (total * inv, grads)
}

/// `(1/N) sum_x sum_{m != owner(x)} ReLU(-D_m(center(x)))` over `subset`
/// (all splats when `None`).
pub fn enter_loss(splats: &SplatSet, scene: &HybridScene, subset: Option<&[usize]>) -> f64 {
    enter_impl(splats, scene, subset, false).0
}

/// Enter loss and its gradient with respect to the splat centers.
pub fn enter_loss_grad(splats: &SplatSet, scene: &HybridScene, subset: Option<&[usize]>) -> (f64, Vec<V3>) {
    enter_impl(splats, scene, subset, true)
}

fn enter_impl(splats: &SplatSet, scene: &HybridScene, subset: Option<&[usize]>, with_grad: bool) -> (f64, Vec<V3>) {
    let fl = fields(scene);
    let all: Vec<usize>;
    let idx = match subset {
        Some(s) => s,
        None => {
            all = (0..splats.len()).collect();
            &all
        }
    };
    let mut grads = vec![[0.0; 3]; splats.len()];
    if idx.is_empty() {
        return (0.0, grads);
    }
    let per: Vec<(f64, V3)> = par::map(idx.len(), |k| {
        let i = idx[k];
        let c = splats.centers[i];
        let owner = splats.block_ids[i] as usize;
        let mut v = 0.0;
        let mut g = [0.0; 3];
        for f in fl.iter().filter(|f| f.id != owner) {
            if f.distance(c) >= 0.0 {
                continue;
            }
            let (d, dg) = if with_grad { f.distance_point_grad(c) } else { (f.distance(c), [0.0; 3]) };
            if d < 0.0 {
                v -= d;
                g = math::sub(g, dg);
            }
        }
        (v, g)
    });
    let inv = 1.0 / idx.len() as f64;
    let mut total = 0.0;
    for (k, (v, g)) in per.into_iter().enumerate() {
        total += v;
        let dst = &mut grads[idx[k]];
        *dst = math::add(*dst, math::scale(g, inv));
    }
    (total * inv, grads)
}

/// `mean_x ReLU(max(scale2, scale3) - s_max)`.
pub fn scale_regularization(splats: &SplatSet, s_max: f64) -> f64 {
    scale_regularization_grad(splats, s_max).0
}

/// Scale regularizer and its gradient with respect to `(scale2, scale3)`.
pub fn scale_regularization_grad(splats: &SplatSet, s_max: f64) -> (f64, Vec<[f64; 2]>) {
    let n = splats.len();
    let mut grads = vec![[0.0; 2]; n];
    if n == 0 {
        return (0.0, grads);
    }
    let inv = 1.0 / n as f64;
    let mut total = 0.0;
    for (i, s) in splats.scales.iter().enumerate() {
        let (m, k) = if s[0] >= s[1] { (s[0], 0) } else { (s[1], 1) };
        if m > s_max {
            total += m - s_max;
            grads[i][k] = inv;
        }
    }
    (total * inv, grads)
}

/// Mean cross-entropy between accumulated alpha and the mask.
pub fn mask_loss(rendered: &RenderedImage, mask: &Mask) -> Result<f64> {
    Ok(mask_loss_grad(rendered, mask)?.0)
}

pub fn mask_loss_grad(rendered: &RenderedImage, mask: &Mask) -> Result<(f64, Vec<f64>)> {
    if rendered.width() != mask.width || rendered.height() != mask.height {
        return Err(Error::DimensionMismatch {
            expected: alloc::format!("{}x{}", rendered.width(), rendered.height()),
            got: alloc::format!("{}x{}", mask.width, mask.height),
        });
    }
    let n = rendered.alpha.len();
    let inv = 1.0 / n as f64;
    let mut total = 0.0;
    let mut grad = vec![0.0; n];
    for i in 0..n {
        let (v, dv) = bce(rendered.alpha[i], mask.data[i]);
        total += v;
        grad[i] = dv * inv;
    }
    Ok((total * inv, grad))
}

/// Block-level objective values for one batch, without gradients.
pub fn total_loss(
    scene: &HybridScene,
    batch: &RayBatch,
    pts: &PointSample,
    rendered: &Image,
    target: &Image,
    weights: &LossWeights,
) -> Result<LossReport> {
    let mut rep = LossReport {
        ren: rendering_loss(rendered, target, weights.lambda_ssim)?,
        cov: coverage_loss(batch, scene),
        over: overlap_loss(pts, scene, weights.gamma, weights.k_overlap),
        par: parsimony_loss(scene),
        opa: opacity_entropy_loss(batch, scene, weights.gamma),
        ..LossReport::default()
    };
    rep.total = rep.combine(weights);
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hybrid::{Block, BlockParams, HybridConfig};

    fn scene_with(blocks: &[(SqShape, Pose, f64)]) -> HybridScene {
        let cfg = HybridConfig {
            level: 1,
            gaussians_per_face: 1,
            sh_degree: 0,
            ..HybridConfig::default()
        };
        let mut s = HybridScene::new(cfg, LossWeights::default(), Aabb::normalized_cube()).unwrap();
        for (i, (shape, pose, tau)) in blocks.iter().enumerate() {
            let p = BlockParams::from_values(shape, pose, *tau, cfg.eps_range);
            s.blocks.push(Block::new(p, &cfg, i as u64));
        }
        s
    }

    fn one_ray(samples: Vec<V3>, label: bool) -> RayBatch {
        let n = samples.len();
        RayBatch {
            origins: vec![[0.0; 3]],
            directions: vec![[1.0, 0.0, 0.0]],
            labels: vec![label],
            samples,
            samples_per_ray: n,
        }
    }

    #[test]
    fn bce_at_half() {
        assert!((bce(0.5, true).0 - core::f64::consts::LN_2).abs() < 1e-15);
        assert!((bce(0.5, false).0 - core::f64::consts::LN_2).abs() < 1e-15);
        assert!((bce(1.0, false).0 + Real::ln(BCE_CLAMP)).abs() < 1e-9);
    }

    #[test]
    fn parsimony_values() {
        let sph = SqShape::sphere(0.2);
        let s = scene_with(&[(sph, Pose::identity(), 0.25), (sph, Pose::identity(), 0.25)]);
        assert!((parsimony_loss(&s) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn coverage_nearest_sample() {
        // Psi([1.5,0,0]) = 2.25 on the unit sphere, so D = 1.25.
        let s = scene_with(&[(SqShape::sphere(1.0), Pose::identity(), 0.5)]);
        let b = one_ray(vec![[2.0, 0.0, 0.0], [1.5, 0.0, 0.0]], true);
        assert!((coverage_loss(&b, &s) - 1.25).abs() < 1e-9);
        let b = one_ray(vec![[2.0, 0.0, 0.0], [0.5, 0.0, 0.0]], true);
        assert_eq!(coverage_loss(&b, &s), 0.0);
        let b = one_ray(vec![[2.0, 0.0, 0.0]], false);
        assert_eq!(coverage_loss(&b, &s), 0.0);
    }

    #[test]
    fn overlap_of_two_coincident_blocks() {
        let sph = SqShape::sphere(0.5);
        let s = scene_with(&[(sph, Pose::identity(), 1.0 - 1e-12), (sph, Pose::identity(), 1.0 - 1e-12)]);
        let pts = PointSample {
            points: vec![[0.0; 3]],
            owner: None,
        };
        assert!((overlap_loss(&pts, &s, 0.005, 1.95) - 0.05).abs() < 1e-9);
    }
}
