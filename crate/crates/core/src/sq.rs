//! Superquadric geometry: parametric surface, inside-outside field,
//! icosphere-topology tessellation and local/world transforms.
//!
//! Axis convention: `y` carries the `eps1` (elevation) exponent, the `x`/`z`
//! plane carries `eps2` (azimuth).

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use num_traits::Float;

use crate::error::{Error, Result};
use crate::math::{self, M3, V3};
use crate::real::Real;

pub const EPS_MIN: f64 = 0.1;
pub const EPS_MAX: f64 = 1.9;
/// Lower clamp on `|base|` before fractional powers.
pub const BASE_FLOOR: f64 = 1e-8;
pub const MAX_LEVEL: u32 = 4;

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SqShape<T = f64> {
    pub eps1: T,
    pub eps2: T,
    pub scale: [T; 3],
}

impl SqShape {
    pub fn new(eps1: f64, eps2: f64, scale: [f64; 3]) -> Self {
        SqShape { eps1, eps2, scale }
    }

    pub fn sphere(r: f64) -> Self {
        SqShape::new(1.0, 1.0, [r; 3])
    }

    pub fn lift<T: Real>(&self) -> SqShape<T> {
        SqShape {
            eps1: T::cst(self.eps1),
            eps2: T::cst(self.eps2),
            scale: math::lift(self.scale),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Pose<T = f64> {
    /// Quaternion `(w, x, y, z)`.
    pub rotation: [T; 4],
    pub translation: V3<T>,
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            rotation: [1.0, 0.0, 0.0, 0.0],
            translation: [0.0; 3],
        }
    }

    pub fn from_translation(t: V3) -> Self {
        Pose {
            translation: t,
            ..Pose::identity()
        }
    }

    pub fn lift<T: Real>(&self) -> Pose<T> {
        Pose {
            rotation: [
                T::cst(self.rotation[0]),
                T::cst(self.rotation[1]),
                T::cst(self.rotation[2]),
                T::cst(self.rotation[3]),
            ],
            translation: math::lift(self.translation),
        }
    }
}

impl<T: Real> Pose<T> {
    pub fn matrix(&self) -> M3<T> {
        math::quat_to_mat(self.rotation)
    }

    pub fn apply(&self, v: V3<T>) -> V3<T> {
        math::add(math::mat_vec(&self.matrix(), v), self.translation)
    }

    pub fn apply_inverse(&self, p: V3<T>) -> V3<T> {
        math::mat_t_vec(&self.matrix(), math::sub(p, self.translation))
    }
}

/// `max(|x|, BASE_FLOOR)`; the floor has zero derivative.
#[inline]
fn floored_abs<T: Real>(x: T) -> T {
    if x.value().abs() < BASE_FLOOR {
        T::cst(BASE_FLOOR)
    } else {
        x.abs()
    }
}

/// Signed power `sign(x) * |x|^e`.
#[inline]
pub fn spow<T: Real>(x: T, e: T) -> T {
    let v = x.value();
    if v == 0.0 {
        return T::zero();
    }
    let mag = floored_abs(x).powr(e);
    if v < 0.0 {
        -mag
    } else {
        mag
    }
}

/// Surface point at elevation `theta` and azimuth `phi` in the local frame.
pub fn sq_vertex<T: Real>(theta: T, phi: T, shape: &SqShape<T>) -> V3<T> {
    let ct = spow(theta.cos(), shape.eps1);
    let st = spow(theta.sin(), shape.eps1);
    let cp = spow(phi.cos(), shape.eps2);
    let sp = spow(phi.sin(), shape.eps2);
    [
        shape.scale[0] * ct * cp,
        shape.scale[1] * st,
        shape.scale[2] * ct * sp,
    ]
}

/// Inside-outside function: `< 1` inside, `1` on the surface, `> 1` outside.
pub fn inside_outside<T: Real>(p: V3<T>, shape: &SqShape<T>) -> T {
    let two = T::cst(2.0);
    let ax = floored_abs(p[0] / shape.scale[0]);
    let ay = floored_abs(p[1] / shape.scale[1]);
    let az = floored_abs(p[2] / shape.scale[2]);
    let e_xz = two / shape.eps2;
    let xz = ax.powr(e_xz) + az.powr(e_xz);
    xz.powr(shape.eps2 / shape.eps1) + ay.powr(two / shape.eps1)
}

/// Approximate signed distance `D = Psi(pose^-1 p) - 1` of a world point.
pub fn signed_distance<T: Real>(p: V3<T>, shape: &SqShape<T>, pose: &Pose<T>) -> T {
    inside_outside(pose.apply_inverse(p), shape) - 1.0
}

/// Unit icosphere with per-vertex spherical angles.
#[derive(Clone, Debug, PartialEq)]
pub struct Icosphere {
    pub level: u32,
    pub vertices: Vec<V3>,
    pub faces: Vec<[u32; 3]>,
    /// `(theta, phi)`: elevation towards `+y` and azimuth in the `x`/`z` plane.
    pub angles: Vec<[f64; 2]>,
}

impl Icosphere {
    pub fn new(level: u32) -> Result<Self> {
        if level > MAX_LEVEL {
            return Err(Error::InvalidLevel(level));
        }
        let t = (1.0 + Real::sqrt(5.0)) / 2.0;
        let mut vertices: Vec<V3> = [
            [-1.0, t, 0.0],
            [1.0, t, 0.0],
            [-1.0, -t, 0.0],
            [1.0, -t, 0.0],
            [0.0, -1.0, t],
            [0.0, 1.0, t],
            [0.0, -1.0, -t],
            [0.0, 1.0, -t],
            [t, 0.0, -1.0],
            [t, 0.0, 1.0],
            [-t, 0.0, -1.0],
            [-t, 0.0, 1.0],
        ]
        .iter()
        .map(|v| math::normalize(*v))
        .collect();
        let mut faces: Vec<[u32; 3]> = alloc::vec![
            [0, 11, 5],
            [0, 5, 1],
            [0, 1, 7],
            [0, 7, 10],
            [0, 10, 11],
            [1, 5, 9],
            [5, 11, 4],
            [11, 10, 2],
            [10, 7, 6],
            [7, 1, 8],
            [3, 9, 4],
            [3, 4, 2],
            [3, 2, 6],
            [3, 6, 8],
            [3, 8, 9],
            [4, 9, 5],
            [2, 4, 11],
            [6, 2, 10],
            [8, 6, 7],
            [9, 8, 1],
        ];
        for _ in 0..level {
            let mut cache: BTreeMap<(u32, u32), u32> = BTreeMap::new();
            let mut midpoint = |a: u32, b: u32, verts: &mut Vec<V3>| -> u32 {
                let key = if a < b { (a, b) } else { (b, a) };
                *cache.entry(key).or_insert_with(|| {
                    let m = math::normalize(math::add(verts[a as usize], verts[b as usize]));
                    verts.push(m);
                    (verts.len() - 1) as u32
                })
            };
            let mut next = Vec::with_capacity(faces.len() * 4);
            for f in &faces {
                let ab = midpoint(f[0], f[1], &mut vertices);
                let bc = midpoint(f[1], f[2], &mut vertices);
                let ca = midpoint(f[2], f[0], &mut vertices);
                next.push([f[0], ab, ca]);
                next.push([f[1], bc, ab]);
                next.push([f[2], ca, bc]);
                next.push([ab, bc, ca]);
            }
            faces = next;
        }
        let angles = vertices
            .iter()
            .map(|v| {
                let theta = Float::asin(v[1].clamp(-1.0, 1.0));
                let phi = Float::atan2(v[2], v[0]);
                [theta, phi]
            })
            .collect();
        Ok(Icosphere {
            level,
            vertices,
            faces,
            angles,
        })
    }
}

/// Superquadric surface mesh sharing icosphere connectivity.
#[derive(Clone, Debug, PartialEq)]
pub struct SqMesh {
    pub vertices: Vec<V3>,
    pub faces: Vec<[u32; 3]>,
    pub angular_coords: Vec<[f64; 2]>,
}

/// Maps every icosphere angle pair through [`sq_vertex`].
pub fn map_vertices<T: Real>(angles: &[[f64; 2]], shape: &SqShape<T>) -> Vec<V3<T>> {
    angles
        .iter()
        .map(|a| sq_vertex(T::cst(a[0]), T::cst(a[1]), shape))
        .collect()
}

pub fn tessellate(shape: &SqShape, level: u32) -> Result<SqMesh> {
    let ico = Icosphere::new(level)?;
    Ok(mesh_from_icosphere(&ico, shape))
}

pub fn mesh_from_icosphere(ico: &Icosphere, shape: &SqShape) -> SqMesh {
    SqMesh {
        vertices: map_vertices(&ico.angles, shape),
        faces: ico.faces.clone(),
        angular_coords: ico.angles.clone(),
    }
}

pub fn to_world(mesh: &SqMesh, pose: &Pose) -> SqMesh {
    let rot = pose.matrix();
    SqMesh {
        vertices: mesh
            .vertices
            .iter()
            .map(|v| math::add(math::mat_vec(&rot, *v), pose.translation))
            .collect(),
        faces: mesh.faces.clone(),
        angular_coords: mesh.angular_coords.clone(),
    }
}

impl SqMesh {
    pub fn face_area(&self, f: usize) -> f64 {
        let [a, b, c] = self.faces[f];
        let (a, b, c) = (
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        );
        0.5 * math::norm(math::cross(math::sub(b, a), math::sub(c, a)))
    }

    pub fn area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }
}
