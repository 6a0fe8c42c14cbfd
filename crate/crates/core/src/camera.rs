//! Pinhole cameras.
//!
//! Camera frame: right-handed, looking down `-z`, `y` up. `w2c` is a
//! row-major rigid world-to-camera transform. Pixel `(px, py)` covers
//! `[px, px + 1) x [py, py + 1)` with rows growing downwards, so
//! `u = fx * x / d + cx`, `v = -fy * y / d + cy` for camera point `(x, y, -d)`.

use crate::error::{Error, Result};
use crate::math::{self, M3, V3};
use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub w2c: [[f64; 4]; 4],
}

impl Camera {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize, w2c: [[f64; 4]; 4]) -> Result<Self> {
        let cam = Camera {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            w2c,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Camera at `eye` looking at `target`.
    pub fn look_at(eye: V3, target: V3, up: V3, focal: f64, width: usize, height: usize) -> Result<Self> {
        let f = math::normalize(math::sub(target, eye));
        let x = math::cross(f, up);
        if !(math::norm(x) > 1e-9) {
            return Err(Error::InvalidInput("up vector parallel to view direction".into()));
        }
        let x = math::normalize(x);
        let y = math::cross(x, f);
        let rows = [x, y, math::scale(f, -1.0)];
        let mut w2c = [[0.0; 4]; 4];
        for i in 0..3 {
            w2c[i][..3].copy_from_slice(&rows[i]);
            w2c[i][3] = -math::dot(rows[i], eye);
        }
        w2c[3][3] = 1.0;
        Camera::new(focal, focal, width as f64 / 2.0, height as f64 / 2.0, width, height, w2c)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.width > 0
            && self.height > 0
            && self.cx >= 0.0
            && self.cx < self.width as f64
            && self.cy >= 0.0
            && self.cy < self.height as f64
            && self.w2c.iter().flatten().all(|v| v.is_finite());
        if !ok {
            return Err(Error::InvalidInput("camera intrinsics out of range".into()));
        }
        let r = self.rotation();
        let rrt = math::mat_mul(&r, &math::transpose(&r));
        for (i, row) in rrt.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                let e = if i == j { 1.0 } else { 0.0 };
                if (v - e).abs() > 1e-6 {
                    return Err(Error::InvalidInput("w2c rotation is not orthonormal".into()));
                }
            }
        }
        Ok(())
    }

    pub fn rotation(&self) -> M3 {
        let m = &self.w2c;
        [
            [m[0][0], m[0][1], m[0][2]],
            [m[1][0], m[1][1], m[1][2]],
            [m[2][0], m[2][1], m[2][2]],
        ]
    }

    pub fn translation(&self) -> V3 {
        [self.w2c[0][3], self.w2c[1][3], self.w2c[2][3]]
    }

    /// Camera center in world coordinates.
    pub fn position(&self) -> V3 {
        math::scale(math::mat_t_vec(&self.rotation(), self.translation()), -1.0)
    }

    /// World-to-camera rotation in the image-aligned frame (`x` right, `y`
    /// down, `z` forward).
    pub fn rotation_cv(&self) -> M3 {
        let r = self.rotation();
        [r[0], math::scale(r[1], -1.0), math::scale(r[2], -1.0)]
    }

    /// World point in the image-aligned frame; `z` is the depth.
    pub fn to_cv<T: Real>(&self, p: V3<T>) -> V3<T> {
        let r = self.rotation();
        let t = self.translation();
        let q = math::add(math::mat_vec(&lift_m(&r), p), math::lift(t));
        [q[0], -q[1], -q[2]]
    }

    /// Pixel coordinates of a world point, `None` behind the camera.
    pub fn project_point(&self, p: V3) -> Option<[f64; 2]> {
        let q = self.to_cv(p);
        if q[2] <= 0.0 {
            return None;
        }
        Some([self.fx * q[0] / q[2] + self.cx, self.fy * q[1] / q[2] + self.cy])
    }

    /// World-space ray through the center of pixel `(px, py)`; unit direction.
    pub fn pixel_ray(&self, px: usize, py: usize) -> (V3, V3) {
        self.ray_at(px as f64 + 0.5, py as f64 + 0.5)
    }

    pub fn ray_at(&self, u: f64, v: f64) -> (V3, V3) {
        let d_cv = [(u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0];
        let d = math::mat_t_vec(&self.rotation_cv(), d_cv);
        (self.position(), math::normalize(d))
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }
}

pub(crate) fn lift_m<T: Real>(m: &M3) -> M3<T> {
    [math::lift(m[0]), math::lift(m[1]), math::lift(m[2])]
}

pub fn identity4() -> [[f64; 4]; 4] {
    let mut m = [[0.0; 4]; 4];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    m
}
