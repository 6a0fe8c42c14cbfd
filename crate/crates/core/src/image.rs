//! Interleaved RGB images, binary masks and the windowed structural-similarity
//! kernel shared by the rendering loss and the evaluation metrics.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::real::Real;

/// Interleaved RGB image, `data[(y * width + x) * 3 + c]`.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Image {
            width,
            height,
            data: vec![0.0; width * height * 3],
        }
    }

    pub fn filled(width: usize, height: usize, v: f64) -> Self {
        Image {
            width,
            height,
            data: vec![v; width * height * 3],
        }
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn same_dims(&self, o: &Image) -> Result<()> {
        if self.width != o.width || self.height != o.height || self.data.len() != o.data.len() {
            return Err(Error::DimensionMismatch {
                expected: alloc::format!("{}x{}", self.width, self.height),
                got: alloc::format!("{}x{}", o.width, o.height),
            });
        }
        Ok(())
    }

    /// Multiplies every pixel by its mask value.
    pub fn masked(&self, mask: &Mask) -> Image {
        let mut out = self.clone();
        for (i, m) in mask.data.iter().enumerate() {
            if !*m {
                out.data[i * 3..i * 3 + 3].fill(0.0);
            }
        }
        out
    }
}

/// Binary foreground mask, row-major.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|m| **m).count()
    }
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

/// 1D Gaussian filter whose taps are renormalized over the in-bounds part of
/// the window, so a constant signal is reproduced at every position.
#[derive(Clone, Debug)]
struct Filter1d {
    n: usize,
    /// Per output position: first input index and its weights.
    rows: Vec<(usize, Vec<f64>)>,
}

impl Filter1d {
    fn new(n: usize) -> Self {
        let half = (SSIM_WINDOW / 2) as isize;
        let taps: Vec<f64> = (-half..=half)
            .map(|k| Real::exp(-((k * k) as f64) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)))
            .collect();
        let rows = (0..n as isize)
            .map(|p| {
                let lo = (p - half).max(0);
                let hi = (p + half).min(n as isize - 1);
                let w: Vec<f64> = (lo..=hi).map(|q| taps[(q - p + half) as usize]).collect();
                let s: f64 = w.iter().sum();
                (lo as usize, w.into_iter().map(|v| v / s).collect())
            })
            .collect();
        Filter1d { n, rows }
    }

    fn apply(&self, src: &[f64], stride: usize, dst: &mut [f64]) {
        for (p, (lo, w)) in self.rows.iter().enumerate() {
            let mut acc = 0.0;
            for (j, wj) in w.iter().enumerate() {
                acc += wj * src[(lo + j) * stride];
            }
            dst[p * stride] = acc;
        }
    }

    fn apply_t(&self, src: &[f64], stride: usize, dst: &mut [f64]) {
        for q in 0..self.n {
            dst[q * stride] = 0.0;
        }
        for (p, (lo, w)) in self.rows.iter().enumerate() {
            let g = src[p * stride];
            for (j, wj) in w.iter().enumerate() {
                dst[(lo + j) * stride] += wj * g;
            }
        }
    }
}

/// Separable windowed mean over a single-channel `w x h` plane.
struct Window {
    w: usize,
    h: usize,
    fx: Filter1d,
    fy: Filter1d,
}

impl Window {
    fn new(w: usize, h: usize) -> Self {
        Window {
            w,
            h,
            fx: Filter1d::new(w),
            fy: Filter1d::new(h),
        }
    }

    fn filter(&self, src: &[f64], transpose: bool) -> Vec<f64> {
        let mut tmp = vec![0.0; src.len()];
        let mut out = vec![0.0; src.len()];
        if transpose {
            for x in 0..self.w {
                self.fy.apply_t(&src[x..], self.w, &mut tmp[x..]);
            }
            for y in 0..self.h {
                let r = y * self.w..(y + 1) * self.w;
                self.fx.apply_t(&tmp[r.clone()], 1, &mut out[r]);
            }
        } else {
            for y in 0..self.h {
                let r = y * self.w..(y + 1) * self.w;
                self.fx.apply(&src[r.clone()], 1, &mut tmp[r]);
            }
            for x in 0..self.w {
                self.fy.apply(&tmp[x..], self.w, &mut out[x..]);
            }
        }
        out
    }
}

fn channel(img: &Image, c: usize) -> Vec<f64> {
    img.data.iter().skip(c).step_by(3).copied().collect()
}

/// Per-channel windowed statistics of an image pair.
struct SsimTerms {
    mu_a: Vec<f64>,
    mu_b: Vec<f64>,
    map: Vec<f64>,
    n1: Vec<f64>,
    n2: Vec<f64>,
    d1: Vec<f64>,
    d2: Vec<f64>,
}

fn ssim_terms(win: &Window, a: &[f64], b: &[f64]) -> SsimTerms {
    let aa: Vec<f64> = a.iter().map(|v| v * v).collect();
    let bb: Vec<f64> = b.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    let mu_a = win.filter(a, false);
    let mu_b = win.filter(b, false);
    let e_aa = win.filter(&aa, false);
    let e_bb = win.filter(&bb, false);
    let e_ab = win.filter(&ab, false);
    let n = a.len();
    let (mut map, mut n1, mut n2, mut d1, mut d2) = (
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
    );
    for i in 0..n {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let t1 = (ma * mb) * 2.0 + SSIM_C1;
        let t2 = (e_ab[i] - ma * mb) * 2.0 + SSIM_C2;
        let b1 = ma * ma + mb * mb + SSIM_C1;
        let b2 = (e_aa[i] - ma * ma) + (e_bb[i] - mb * mb) + SSIM_C2;
        map.push((t1 * t2) / (b1 * b2));
        n1.push(t1);
        n2.push(t2);
        d1.push(b1);
        d2.push(b2);
    }
    SsimTerms {
        mu_a,
        mu_b,
        map,
        n1,
        n2,
        d1,
        d2,
    }
}

/// Mean structural similarity over all pixels and channels.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    a.same_dims(b)?;
    if a.pixels() == 0 {
        return Err(Error::InvalidInput("empty image".into()));
    }
    let win = Window::new(a.width, a.height);
    let mut total = 0.0;
    for c in 0..3 {
        let t = ssim_terms(&win, &channel(a, c), &channel(b, c));
        total += t.map.iter().sum::<f64>();
    }
    Ok(total / a.data.len() as f64)
}

/// Mean SSIM and its gradient with respect to `a`.
pub fn ssim_with_grad(a: &Image, b: &Image) -> Result<(f64, Vec<f64>)> {
    a.same_dims(b)?;
    if a.pixels() == 0 {
        return Err(Error::InvalidInput("empty image".into()));
    }
    let win = Window::new(a.width, a.height);
    let norm = 1.0 / a.data.len() as f64;
    let mut total = 0.0;
    let mut grad = vec![0.0; a.data.len()];
    for c in 0..3 {
        let ca = channel(a, c);
        let cb = channel(b, c);
        let t = ssim_terms(&win, &ca, &cb);
        total += t.map.iter().sum::<f64>();
        let n = ca.len();
        let mut g_mu = vec![0.0; n];
        let mut g_eaa = vec![0.0; n];
        let mut g_eab = vec![0.0; n];
        for i in 0..n {
            let s = t.map[i];
            let (ma, mb) = (t.mu_a[i], t.mu_b[i]);
            g_mu[i] = norm
                * s
                * (2.0 * mb / t.n1[i] - 2.0 * ma / t.d1[i] - 2.0 * mb / t.n2[i] + 2.0 * ma / t.d2[i]);
            g_eab[i] = norm * s * 2.0 / t.n2[i];
            g_eaa[i] = -norm * s / t.d2[i];
        }
        let b_mu = win.filter(&g_mu, true);
        let b_eaa = win.filter(&g_eaa, true);
        let b_eab = win.filter(&g_eab, true);
        for i in 0..n {
            grad[i * 3 + c] = b_mu[i] + 2.0 * ca[i] * b_eaa[i] + cb[i] * b_eab[i];
        }
    }
    Ok((total * norm, grad))
}
