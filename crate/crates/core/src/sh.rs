//! Real spherical-harmonic color model.
//!
//! Coefficients are stored `k * 3 + channel`; the evaluated color is offset
//! by `0.5` and clamped at zero.

use crate::math::V3;
use crate::real::Real;

pub const MAX_DEGREE: u32 = 3;
pub const C0: f64 = 0.282_094_791_773_878_14;
const C1: f64 = 0.488_602_511_902_919_9;
const C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
const C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

/// Number of basis functions up to `degree`.
pub const fn basis_len(degree: u32) -> usize {
    ((degree + 1) * (degree + 1)) as usize
}

/// Basis values at the unit direction `d`; entries past `basis_len(degree)`
/// are zero.
pub fn basis<T: Real>(degree: u32, d: V3<T>) -> [T; 16] {
    let mut b = [T::zero(); 16];
    b[0] = T::cst(C0);
    if degree == 0 {
        return b;
    }
    let [x, y, z] = d;
    b[1] = y * -C1;
    b[2] = z * C1;
    b[3] = x * -C1;
    if degree == 1 {
        return b;
    }
    let (xx, yy, zz) = (x * x, y * y, z * z);
    let (xy, yz, xz) = (x * y, y * z, x * z);
    b[4] = xy * C2[0];
    b[5] = yz * C2[1];
    b[6] = (zz * 2.0 - xx - yy) * C2[2];
    b[7] = xz * C2[3];
    b[8] = (xx - yy) * C2[4];
    if degree == 2 {
        return b;
    }
    b[9] = y * (xx * 3.0 - yy) * C3[0];
    b[10] = xy * z * C3[1];
    b[11] = y * (zz * 4.0 - xx - yy) * C3[2];
    b[12] = z * (zz * 2.0 - xx * 3.0 - yy * 3.0) * C3[3];
    b[13] = x * (zz * 4.0 - xx - yy) * C3[4];
    b[14] = z * (xx - yy) * C3[5];
    b[15] = x * (xx - yy * 3.0) * C3[6];
    b
}

/// Unclamped color `sum_k sh[k, c] * Y_k + 0.5`.
pub fn eval_raw<T: Real>(sh: &[f64], degree: u32, d: V3<T>) -> [T; 3] {
    let b = basis(degree, d);
    let mut rgb = [T::cst(0.5); 3];
    for (k, bk) in b.iter().enumerate().take(basis_len(degree)) {
        for (c, v) in rgb.iter_mut().enumerate() {
            *v += *bk * sh[k * 3 + c];
        }
    }
    rgb
}

/// Clamped RGB seen along `view_dir`.
pub fn eval_sh(sh: &[f64], view_dir: V3, degree: u32) -> [f64; 3] {
    eval_raw(sh, degree, view_dir).map(|v| v.max(0.0))
}

/// Degree-0 coefficient producing the constant color `rgb`.
pub fn dc_from_rgb(rgb: f64) -> f64 {
    (rgb - 0.5) / C0
}
