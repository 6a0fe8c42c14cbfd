//! Tile-based splat rasterizer with an exact reverse pass.
//!
//! A splat is a degenerate 3D Gaussian with zero extent along its normal
//! `r1`. Its screen footprint is the affine (EWA) projection
//! `cov2d = J W Sigma W^T J^T + LOW_PASS * I`. Pixels are composited front to
//! back: `C = sum_i c_i a_i T_i`, `T_i = prod_{j<i} (1 - a_j)`.

use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use crate::camera::{lift_m, Camera};
use crate::hybrid::SplatSet;
use crate::image::Image;
use crate::math::{self, V3};
use crate::par;
use crate::real::{Dual, Real};
use crate::sh;

pub const Z_NEAR: f64 = 0.01;
/// Added to the diagonal of every screen covariance (px^2).
pub const LOW_PASS: f64 = 0.3;
pub const ALPHA_MAX: f64 = 0.999;
/// Contributions below this alpha are skipped.
pub const ALPHA_MIN: f64 = 1e-5;
/// Compositing stops before transmittance would drop below this.
pub const T_MIN: f64 = 1e-4;
pub const TILE: usize = 16;

/// Screen-space footprint of one splat.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProjectedSplat {
    pub mean: [f64; 2],
    /// Upper triangle `(xx, xy, yy)` of the screen covariance.
    pub cov: [f64; 3],
    /// Upper triangle of the inverse covariance.
    pub conic: [f64; 3],
    pub depth: f64,
    pub color: [f64; 3],
    /// Channels whose raw SH value was clamped at zero.
    pub clamped: [bool; 3],
    pub opacity: f64,
    /// Pixel radius outside which alpha is below [`ALPHA_MIN`].
    pub radius: f64,
    /// Gaussian exponent beyond which alpha is certainly below [`ALPHA_MIN`].
    pub power_cut: f64,
    /// Index into the source [`SplatSet`].
    pub source: usize,
}

/// Mean, covariance, conic and depth of a flat splat.
#[allow(clippy::type_complexity)]
pub fn project_geometry<T: Real>(
    cam: &Camera,
    center: V3<T>,
    r2: V3<T>,
    r3: V3<T>,
    s2: T,
    s3: T,
) -> Option<([T; 2], [T; 3], [T; 3], T)> {
    let rc = lift_m::<T>(&cam.rotation_cv());
    let t = cam.translation();
    let p = math::add(math::mat_vec(&rc, center), math::lift([t[0], -t[1], -t[2]]));
    if !(p[2].value() >= Z_NEAR) {
        return None;
    }
    let iz = T::one() / p[2];
    let (fx, fy) = (cam.fx, cam.fy);
    let jac = |v: V3<T>| -> [T; 2] {
        [
            (v[0] - p[0] * iz * v[2]) * iz * fx,
            (v[1] - p[1] * iz * v[2]) * iz * fy,
        ]
    };
    let a = jac(math::scale(math::mat_vec(&rc, r2), s2));
    let b = jac(math::scale(math::mat_vec(&rc, r3), s3));
    let cov = [
        a[0] * a[0] + b[0] * b[0] + LOW_PASS,
        a[0] * a[1] + b[0] * b[1],
        a[1] * a[1] + b[1] * b[1] + LOW_PASS,
    ];
    let det = cov[0] * cov[2] - cov[1] * cov[1];
    let conic = [cov[2] / det, -cov[1] / det, cov[0] / det];
    let mean = [p[0] * iz * fx + cam.cx, p[1] * iz * fy + cam.cy];
    Some((mean, cov, conic, p[2]))
}

/// Unit direction from the camera center to `p`.
pub fn view_dir<T: Real>(cam: &Camera, p: V3<T>) -> V3<T> {
    math::normalize(math::sub(p, math::lift(cam.position())))
}

/// Projects splat `i`; `None` when culled.
pub fn project(splats: &SplatSet, i: usize, cam: &Camera) -> Option<ProjectedSplat> {
    let f = splats.frames[i];
    let [s2, s3] = splats.scales[i];
    let opacity = splats.opacities[i];
    if !(opacity > ALPHA_MIN) {
        return None;
    }
    let (mean, cov, conic, depth) = project_geometry(cam, splats.centers[i], f[1], f[2], s2, s3)?;
    let raw = sh::eval_raw(splats.sh_of(i), splats.sh_degree, view_dir(cam, splats.centers[i]));
    let half = 0.5 * (cov[0] + cov[2]);
    let disc = Real::sqrt(0.25 * (cov[0] - cov[2]) * (cov[0] - cov[2]) + cov[1] * cov[1]);
    let lambda_max = half + disc;
    let log_ratio = Real::ln(opacity / ALPHA_MIN);
    let radius = Real::sqrt(2.0 * log_ratio * lambda_max);
    if !radius.is_finite() || !mean[0].is_finite() || !mean[1].is_finite() {
        return None;
    }
    let (w, h) = (cam.width as f64, cam.height as f64);
    if mean[0] + radius < 0.0 || mean[0] - radius > w || mean[1] + radius < 0.0 || mean[1] - radius > h {
        return None;
    }
    Some(ProjectedSplat {
        mean,
        cov,
        conic,
        depth,
        color: raw.map(|v| v.max(0.0)),
        clamped: raw.map(|v| v < 0.0),
        opacity,
        radius,
        power_cut: log_ratio + 1e-9,
        source: i,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderedImage {
    pub rgb: Image,
    /// Accumulated opacity `1 - T_final` per pixel.
    pub alpha: Vec<f64>,
    /// Alpha-weighted camera depth per pixel.
    pub depth: Vec<f64>,
}

impl RenderedImage {
    pub fn width(&self) -> usize {
        self.rgb.width
    }

    pub fn height(&self) -> usize {
        self.rgb.height
    }
}

/// Forward state consumed by the reverse pass.
#[derive(Clone, Debug)]
pub struct RasterContext {
    pub projected: Vec<ProjectedSplat>,
    /// Per tile, indices into `projected` sorted front to back.
    pub tiles: Vec<Vec<u32>>,
    pub tiles_x: usize,
    pub width: usize,
    pub height: usize,
    pub final_t: Vec<f64>,
    /// Per pixel, the tile-list prefix length that was composited.
    pub n_contrib: Vec<u32>,
}

#[inline]
fn footprint(s: &ProjectedSplat, px: f64, py: f64) -> Option<(f64, f64, f64, f64)> {
    let dx = px - s.mean[0];
    let dy = py - s.mean[1];
    let power = 0.5 * (s.conic[0] * dx * dx + s.conic[2] * dy * dy) + s.conic[1] * dx * dy;
    if power > s.power_cut {
        return None;
    }
    let g = Real::exp(-power);
    Some((dx, dy, g, s.opacity * g))
}

fn pixel_range(c: f64, r: f64, n: usize) -> Option<(usize, usize)> {
    let lo = Float::ceil(c - r - 0.5).max(0.0);
    let hi = Float::floor(c + r - 0.5).min(n as f64 - 1.0);
    if hi < lo {
        None
    } else {
        Some((lo as usize, hi as usize))
    }
}

struct TileOut {
    rgb: Vec<[f64; 3]>,
    final_t: Vec<f64>,
    depth: Vec<f64>,
    n_contrib: Vec<u32>,
}

fn tile_bounds(t: usize, tiles_x: usize, w: usize, h: usize) -> (usize, usize, usize, usize) {
    let (tx, ty) = (t % tiles_x, t / tiles_x);
    let x0 = tx * TILE;
    let y0 = ty * TILE;
    (x0, y0, (x0 + TILE).min(w), (y0 + TILE).min(h))
}

/// Composites already projected splats.
pub fn rasterize(mut projected: Vec<ProjectedSplat>, width: usize, height: usize) -> (RenderedImage, RasterContext) {
    projected.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.source.cmp(&b.source)));
    let tiles_x = width.div_ceil(TILE);
    let tiles_y = height.div_ceil(TILE);
    let mut tiles: Vec<Vec<u32>> = vec![Vec::new(); tiles_x * tiles_y];
    for (i, s) in projected.iter().enumerate() {
        let (Some((x0, x1)), Some((y0, y1))) = (
            pixel_range(s.mean[0], s.radius, width),
            pixel_range(s.mean[1], s.radius, height),
        ) else {
            continue;
        };
        for ty in y0 / TILE..=y1 / TILE {
            for tx in x0 / TILE..=x1 / TILE {
                tiles[ty * tiles_x + tx].push(i as u32);
            }
        }
    }
    let outs: Vec<TileOut> = par::map(tiles.len(), |t| {
        let (x0, y0, x1, y1) = tile_bounds(t, tiles_x, width, height);
        let list = &tiles[t];
        let n = (x1 - x0) * (y1 - y0);
        let mut out = TileOut {
            rgb: Vec::with_capacity(n),
            final_t: Vec::with_capacity(n),
            depth: Vec::with_capacity(n),
            n_contrib: Vec::with_capacity(n),
        };
        for y in y0..y1 {
            for x in x0..x1 {
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                let mut tr = 1.0;
                let mut c = [0.0; 3];
                let mut d = 0.0;
                let mut last = 0u32;
                for (j, &si) in list.iter().enumerate() {
                    let s = &projected[si as usize];
                    let Some((_, _, _, raw_a)) = footprint(s, px, py) else {
                        continue;
                    };
                    let a = raw_a.min(ALPHA_MAX);
                    if a < ALPHA_MIN {
                        continue;
                    }
                    let next = tr * (1.0 - a);
                    if next < T_MIN {
                        break;
                    }
                    let w = a * tr;
                    for k in 0..3 {
                        c[k] += s.color[k] * w;
                    }
                    d += s.depth * w;
                    tr = next;
                    last = j as u32 + 1;
                }
                out.rgb.push(c);
                out.final_t.push(tr);
                out.depth.push(d);
                out.n_contrib.push(last);
            }
        }
        out
    });
    let mut rgb = Image::new(width, height);
    let mut alpha = vec![0.0; width * height];
    let mut depth = vec![0.0; width * height];
    let mut final_t = vec![1.0; width * height];
    let mut n_contrib = vec![0u32; width * height];
    for (t, out) in outs.into_iter().enumerate() {
        let (x0, y0, x1, y1) = tile_bounds(t, tiles_x, width, height);
        let mut k = 0;
        for y in y0..y1 {
            for x in x0..x1 {
                let p = y * width + x;
                rgb.set(x, y, out.rgb[k]);
                alpha[p] = 1.0 - out.final_t[k];
                depth[p] = out.depth[k];
                final_t[p] = out.final_t[k];
                n_contrib[p] = out.n_contrib[k];
                k += 1;
            }
        }
    }
    (
        RenderedImage { rgb, alpha, depth },
        RasterContext {
            projected,
            tiles,
            tiles_x,
            width,
            height,
            final_t,
            n_contrib,
        },
    )
}

/// Projects and composites every splat; opaque black background.
pub fn render_with_context(splats: &SplatSet, cam: &Camera) -> (RenderedImage, RasterContext) {
    let projected: Vec<ProjectedSplat> = par::map(splats.len(), |i| project(splats, i, cam))
        .into_iter()
        .flatten()
        .collect();
    rasterize(projected, cam.width, cam.height)
}

pub fn render(splats: &SplatSet, cam: &Camera) -> RenderedImage {
    render_with_context(splats, cam).0
}

/// Loss gradients with respect to the screen-space quantities, indexed like
/// `RasterContext::projected`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectedGrads {
    pub mean: Vec<[f64; 2]>,
    pub conic: Vec<[f64; 3]>,
    pub color: Vec<[f64; 3]>,
    pub opacity: Vec<f64>,
}

/// Reverse pass of [`rasterize`] for adjoints `g_rgb` (interleaved, like
/// [`Image::data`]) and optionally `g_alpha` per pixel.
pub fn rasterize_backward(ctx: &RasterContext, g_rgb: &[f64], g_alpha: Option<&[f64]>) -> ProjectedGrads {
    let (width, height) = (ctx.width, ctx.height);
    let per_tile: Vec<Vec<[f64; 9]>> = par::map(ctx.tiles.len(), |t| {
        let list = &ctx.tiles[t];
        let mut acc = vec![[0.0; 9]; list.len()];
        if list.is_empty() {
            return acc;
        }
        let (x0, y0, x1, y1) = tile_bounds(t, ctx.tiles_x, width, height);
        for y in y0..y1 {
            for x in x0..x1 {
                let p = y * width + x;
                let gp = [g_rgb[p * 3], g_rgb[p * 3 + 1], g_rgb[p * 3 + 2]];
                let ga = g_alpha.map_or(0.0, |g| g[p]);
                if gp == [0.0; 3] && ga == 0.0 {
                    continue;
                }
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                let t_final = ctx.final_t[p];
                let mut tr = t_final;
                let mut accum = [0.0; 3];
                let mut last_alpha = 0.0;
                let mut last_color = [0.0; 3];
                for j in (0..ctx.n_contrib[p] as usize).rev() {
                    let s = &ctx.projected[list[j] as usize];
                    let Some((dx, dy, g, raw_a)) = footprint(s, px, py) else {
                        continue;
                    };
                    let a = raw_a.min(ALPHA_MAX);
                    if a < ALPHA_MIN {
                        continue;
                    }
                    tr /= 1.0 - a;
                    let mut g_a = 0.0;
                    for k in 0..3 {
                        accum[k] = last_alpha * last_color[k] + (1.0 - last_alpha) * accum[k];
                        g_a += (s.color[k] - accum[k]) * gp[k];
                    }
                    g_a *= tr;
                    g_a += ga * t_final / (1.0 - a);
                    last_alpha = a;
                    last_color = s.color;
                    let e = &mut acc[j];
                    for k in 0..3 {
                        e[5 + k] += a * tr * gp[k];
                    }
                    if raw_a >= ALPHA_MAX {
                        continue;
                    }
                    e[8] += g * g_a;
                    let g_power = -a * g_a;
                    e[0] -= g_power * (s.conic[0] * dx + s.conic[1] * dy);
                    e[1] -= g_power * (s.conic[1] * dx + s.conic[2] * dy);
                    e[2] += g_power * 0.5 * dx * dx;
                    e[3] += g_power * dx * dy;
                    e[4] += g_power * 0.5 * dy * dy;
                }
            }
        }
        acc
    });
    let n = ctx.projected.len();
    let mut out = ProjectedGrads {
        mean: vec![[0.0; 2]; n],
        conic: vec![[0.0; 3]; n],
        color: vec![[0.0; 3]; n],
        opacity: vec![0.0; n],
    };
    for (t, acc) in per_tile.iter().enumerate() {
        for (j, e) in acc.iter().enumerate() {
            let i = ctx.tiles[t][j] as usize;
            out.mean[i][0] += e[0];
            out.mean[i][1] += e[1];
            for k in 0..3 {
                out.conic[i][k] += e[2 + k];
                out.color[i][k] += e[5 + k];
            }
            out.opacity[i] += e[8];
        }
    }
    out
}

/// Loss gradients with respect to the splat attributes, indexed like the
/// source [`SplatSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct SplatGrads {
    pub center: Vec<V3>,
    pub r2: Vec<V3>,
    pub r3: Vec<V3>,
    pub scale: Vec<[f64; 2]>,
    pub opacity: Vec<f64>,
    pub sh: Vec<f64>,
}

impl SplatGrads {
    pub fn zeros(n: usize, sh_dim: usize) -> Self {
        SplatGrads {
            center: vec![[0.0; 3]; n],
            r2: vec![[0.0; 3]; n],
            r3: vec![[0.0; 3]; n],
            scale: vec![[0.0; 2]; n],
            opacity: vec![0.0; n],
            sh: vec![0.0; n * sh_dim],
        }
    }
}

struct OneSplatGrad {
    geom: [f64; 11],
    opacity: f64,
    sh: Vec<f64>,
}

/// Chains screen-space gradients of splat `p` back to its attributes.
fn splat_backward(splats: &SplatSet, cam: &Camera, p: &ProjectedSplat, g: &ProjectedGrads, k: usize) -> OneSplatGrad {
    let i = p.source;
    let f = splats.frames[i];
    let c = splats.centers[i];
    let [s2, s3] = splats.scales[i];
    let x = Dual::<11>::vars([
        c[0], c[1], c[2], f[1][0], f[1][1], f[1][2], f[2][0], f[2][1], f[2][2], s2, s3,
    ]);
    let center = [x[0], x[1], x[2]];
    let mut geom = [0.0; 11];
    if let Some((mean, _, conic, _)) = project_geometry(cam, center, [x[3], x[4], x[5]], [x[6], x[7], x[8]], x[9], x[10]) {
        for (o, gv) in mean.iter().zip(g.mean[k]) {
            for (dst, e) in geom.iter_mut().zip(o.eps) {
                *dst += gv * e;
            }
        }
        for (o, gv) in conic.iter().zip(g.conic[k]) {
            for (dst, e) in geom.iter_mut().zip(o.eps) {
                *dst += gv * e;
            }
        }
    }
    let deg = splats.sh_degree;
    let nb = sh::basis_len(deg);
    let coeffs = splats.sh_of(i);
    let mut g_sh = vec![0.0; coeffs.len()];
    let gc: [f64; 3] = core::array::from_fn(|ch| if p.clamped[ch] { 0.0 } else { g.color[k][ch] });
    if gc != [0.0; 3] {
        let cd = Dual::<3>::vars(c);
        let basis = sh::basis(deg, view_dir(cam, cd));
        for (b, bk) in basis.iter().enumerate().take(nb) {
            let mut w = 0.0;
            for ch in 0..3 {
                g_sh[b * 3 + ch] = gc[ch] * bk.re;
                w += gc[ch] * coeffs[b * 3 + ch];
            }
            for d in 0..3 {
                geom[d] += w * bk.eps[d];
            }
        }
    }
    OneSplatGrad {
        geom,
        opacity: g.opacity[k],
        sh: g_sh,
    }
}

/// Full reverse pass: pixel adjoints to splat attribute gradients.
pub fn backward(
    splats: &SplatSet,
    cam: &Camera,
    ctx: &RasterContext,
    g_rgb: &[f64],
    g_alpha: Option<&[f64]>,
) -> SplatGrads {
    let pg = rasterize_backward(ctx, g_rgb, g_alpha);
    let per: Vec<OneSplatGrad> = par::map(ctx.projected.len(), |k| {
        splat_backward(splats, cam, &ctx.projected[k], &pg, k)
    });
    let d = splats.sh_dim();
    let mut out = SplatGrads::zeros(splats.len(), d);
    for (k, g) in per.into_iter().enumerate() {
        let i = ctx.projected[k].source;
        out.center[i] = [g.geom[0], g.geom[1], g.geom[2]];
        out.r2[i] = [g.geom[3], g.geom[4], g.geom[5]];
        out.r3[i] = [g.geom[6], g.geom[7], g.geom[8]];
        out.scale[i] = [g.geom[9], g.geom[10]];
        out.opacity[i] = g.opacity;
        out.sh[i * d..(i + 1) * d].copy_from_slice(&g.sh);
    }
    out
}
