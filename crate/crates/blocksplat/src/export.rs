//! Block meshes (OBJ + `scene.json`) and splats (binary PLY).

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use blocksplat_core::hybrid::{sh_dim, BlockParams, HybridScene, SplatSet};
use blocksplat_core::math::{self, V3};
use blocksplat_core::sq::SqMesh;
use serde::{Deserialize, Serialize};

use crate::error::{format_err, io_err, read_json, write_json, Result};

/// One alive block in `scene.json`. `raw` holds the unconstrained
/// parameters, from which reloading is exact.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockRecord {
    pub id: usize,
    pub eps1: f64,
    pub eps2: f64,
    pub s: [f64; 3],
    pub quaternion: [f64; 4],
    pub t: [f64; 3],
    pub tau: f64,
    pub raw: BlockParams,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneFile {
    pub blocks: Vec<BlockRecord>,
}

pub fn write_obj(mesh: &SqMesh, path: &Path) -> Result<()> {
    let f = std::fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(f);
    let mut body = String::new();
    for v in &mesh.vertices {
        body.push_str(&format!("v {} {} {}\n", v[0], v[1], v[2]));
    }
    for f in &mesh.faces {
        body.push_str(&format!("f {} {} {}\n", f[0] + 1, f[1] + 1, f[2] + 1));
    }
    w.write_all(body.as_bytes()).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

/// Vertices and faces of an OBJ written by [`write_obj`].
pub fn read_obj(path: &Path) -> Result<(Vec<V3>, Vec<[u32; 3]>)> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let mut verts = Vec::new();
    let mut faces = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let mut it = line.split_whitespace();
        let bad = || format_err(path, format!("line {}: malformed", n + 1));
        match it.next() {
            Some("v") => {
                let mut v = [0.0; 3];
                for c in &mut v {
                    *c = it.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
                }
                verts.push(v);
            }
            Some("f") => {
                let mut f = [0u32; 3];
                for c in &mut f {
                    let i: u32 = it.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
                    if i == 0 {
                        return Err(bad());
                    }
                    *c = i - 1;
                }
                faces.push(f);
            }
            _ => {}
        }
    }
    Ok((verts, faces))
}

/// Writes `block_<i>.obj` for every alive block and `scene.json`; returns
/// the written paths.
pub fn export_blocks(scene: &HybridScene, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut out = Vec::new();
    let mut records = Vec::new();
    for i in scene.alive_ids() {
        let path = dir.join(format!("block_{i}.obj"));
        write_obj(&scene.block_mesh(i), &path)?;
        out.push(path);
        let shape = scene.block_shape(i);
        let p = scene.blocks[i].params;
        records.push(BlockRecord {
            id: i,
            eps1: shape.eps1,
            eps2: shape.eps2,
            s: shape.scale,
            quaternion: math::quat_normalize(p.rotation),
            t: p.translation,
            tau: p.tau(),
            raw: p,
        });
    }
    let path = dir.join("scene.json");
    write_json(&path, &SceneFile { blocks: records })?;
    out.push(path);
    Ok(out)
}

pub fn load_scene_json(path: &Path) -> Result<SceneFile> {
    read_json(path)
}

const PLY_MAGIC: &str = "ply";

fn ply_header(n: usize, sh_degree: u32) -> String {
    let mut h = String::new();
    h.push_str("ply\nformat binary_little_endian 1.0\n");
    h.push_str("comment blocksplat splats\n");
    h.push_str("comment frame = R(qw, qx, qy, qz) with columns (normal, tangent2, tangent3)\n");
    h.push_str("comment scale2, scale3 = standard deviations along tangent2, tangent3; zero along the normal\n");
    h.push_str("comment block_id = index of the owning block\n");
    h.push_str(&format!("comment sh_degree {sh_degree}; f_sh_k is basis function k / 3 of channel k % 3\n"));
    h.push_str(&format!("element vertex {n}\n"));
    for p in ["x", "y", "z", "qw", "qx", "qy", "qz", "scale2", "scale3", "opacity"] {
        h.push_str(&format!("property float {p}\n"));
    }
    h.push_str("property int block_id\n");
    for k in 0..sh_dim(sh_degree) {
        h.push_str(&format!("property float f_sh_{k}\n"));
    }
    h.push_str("end_header\n");
    h
}

/// Proper rotation whose first two columns are the splat normal and first
/// tangent; the second tangent's sign is irrelevant to a planar Gaussian.
fn frame_quat(frame: &[V3; 3]) -> [f64; 4] {
    let r3 = math::cross(frame[0], frame[1]);
    let m = [
        [frame[0][0], frame[1][0], r3[0]],
        [frame[0][1], frame[1][1], r3[1]],
        [frame[0][2], frame[1][2], r3[2]],
    ];
    math::mat_to_quat(&m)
}

fn canonical_f32(q: [f64; 4]) -> [f32; 4] {
    let sign = if q.iter().find(|v| **v != 0.0).is_some_and(|v| *v < 0.0) { -1.0 } else { 1.0 };
    q.map(|v| (sign * v) as f32)
}

fn reencode(q: [f32; 4]) -> [f32; 4] {
    let rot = math::quat_to_mat(q.map(f64::from));
    let col = |k: usize| [rot[0][k], rot[1][k], rot[2][k]];
    canonical_f32(frame_quat(&[col(0), col(1), col(2)]))
}

/// Stored quaternion of a frame: among the f32 values within one ulp of the
/// rounded quaternion, the closest one that reproduces itself when decoded by
/// [`import_splats`] and encoded again, so re-exporting an imported file is
/// byte-identical.
fn stored_quat(frame: &[V3; 3]) -> [f32; 4] {
    let exact = frame_quat(frame);
    let sign = if exact.iter().find(|v| **v != 0.0).is_some_and(|v| *v < 0.0) { -1.0 } else { 1.0 };
    let exact = exact.map(|v| sign * v);
    let rounded = canonical_f32(exact);
    let mut best: Option<(f64, [f32; 4])> = None;
    for code in 0..81 {
        let mut v = rounded;
        let mut c = code;
        for x in &mut v {
            *x = match c % 3 {
                0 => *x,
                1 => x.next_up(),
                _ => x.next_down(),
            };
            c /= 3;
        }
        if reencode(v) != v {
            continue;
        }
        let err: f64 = v.iter().zip(&exact).map(|(a, b)| (f64::from(*a) - b).powi(2)).sum();
        if best.is_none_or(|(e, _)| err < e) {
            best = Some((err, v));
        }
    }
    best.map_or(rounded, |(_, v)| v)
}

pub fn export_splats(splats: &SplatSet, path: &Path) -> Result<()> {
    let f = std::fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(f);
    let d = splats.sh_dim();
    let mut buf = Vec::with_capacity(splats.len() * (44 + 4 * d));
    for i in 0..splats.len() {
        let q = stored_quat(&splats.frames[i]).map(f64::from);
        let c = splats.centers[i];
        let fields = [
            c[0],
            c[1],
            c[2],
            q[0],
            q[1],
            q[2],
            q[3],
            splats.scales[i][0],
            splats.scales[i][1],
            splats.opacities[i],
        ];
        for v in fields {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        buf.extend_from_slice(&(splats.block_ids[i] as i32).to_le_bytes());
        for v in splats.sh_of(i) {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    w.write_all(ply_header(splats.len(), splats.sh_degree).as_bytes()).map_err(io_err(path))?;
    w.write_all(&buf).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

struct Header {
    count: usize,
    properties: Vec<(String, String)>,
}

fn read_header(r: &mut impl BufRead, path: &Path) -> Result<Header> {
    let mut line = String::new();
    let mut next = |line: &mut String| -> Result<String> {
        line.clear();
        let n = r.read_line(line).map_err(io_err(path))?;
        if n == 0 {
            return Err(format_err(path, "truncated header"));
        }
        Ok(line.trim_end().to_string())
    };
    if next(&mut line)? != PLY_MAGIC {
        return Err(format_err(path, "not a PLY file"));
    }
    if next(&mut line)? != "format binary_little_endian 1.0" {
        return Err(format_err(path, "expected binary_little_endian 1.0"));
    }
    let mut count = None;
    let mut properties = Vec::new();
    loop {
        let l = next(&mut line)?;
        let parts: Vec<&str> = l.split_whitespace().collect();
        match parts.as_slice() {
            ["end_header"] => break,
            ["comment", ..] => {}
            ["element", "vertex", n] if count.is_none() => {
                count = Some(n.parse().map_err(|_| format_err(path, "bad vertex count"))?);
            }
            ["property", ty, name] if count.is_some() => properties.push((ty.to_string(), name.to_string())),
            _ => return Err(format_err(path, format!("unsupported header line '{l}'"))),
        }
    }
    Ok(Header {
        count: count.ok_or_else(|| format_err(path, "missing vertex element"))?,
        properties,
    })
}

fn read_body(r: &mut impl Read, len: usize, path: &Path) -> Result<Vec<u8>> {
    let mut body = Vec::new();
    r.read_to_end(&mut body).map_err(io_err(path))?;
    if body.len() != len {
        return Err(format_err(path, format!("expected {len} data bytes, found {}", body.len())));
    }
    Ok(body)
}

pub fn import_splats(path: &Path) -> Result<SplatSet> {
    let f = std::fs::File::open(path).map_err(io_err(path))?;
    let mut r = BufReader::new(f);
    let h = read_header(&mut r, path)?;
    let n_sh = h.properties.len().saturating_sub(11);
    let degree = (0..=3u32)
        .find(|&d| sh_dim(d) == n_sh)
        .ok_or_else(|| format_err(path, format!("{n_sh} SH coefficients match no degree")))?;
    let expected: Vec<(String, String)> = ply_header(0, degree)
        .lines()
        .filter_map(|l| l.strip_prefix("property "))
        .map(|l| {
            let (t, n) = l.split_once(' ').unwrap_or_default();
            (t.to_string(), n.to_string())
        })
        .collect();
    if h.properties != expected {
        return Err(format_err(path, "unexpected property layout"));
    }
    let stride = 4 * (11 + n_sh);
    let body = read_body(&mut r, h.count * stride, path)?;
    let mut out = SplatSet::new(degree);
    let f32_at = |o: usize| f32::from_le_bytes(body[o..o + 4].try_into().unwrap_or_default()) as f64;
    for i in 0..h.count {
        let o = i * stride;
        let v: Vec<f64> = (0..10).map(|k| f32_at(o + 4 * k)).collect();
        if v.iter().any(|x| !x.is_finite()) {
            return Err(format_err(path, format!("splat {i}: non-finite value")));
        }
        let rot = math::quat_to_mat([v[3], v[4], v[5], v[6]]);
        let col = |k: usize| [rot[0][k], rot[1][k], rot[2][k]];
        out.centers.push([v[0], v[1], v[2]]);
        out.frames.push([col(0), col(1), col(2)]);
        out.scales.push([v[7], v[8]]);
        out.opacities.push(v[9]);
        let id = i32::from_le_bytes(body[o + 40..o + 44].try_into().unwrap_or_default());
        if id < 0 {
            return Err(format_err(path, format!("splat {i}: negative block id")));
        }
        out.block_ids.push(id as u32);
        for k in 0..n_sh {
            out.sh.push(f32_at(o + 44 + 4 * k));
        }
    }
    Ok(out)
}

/// Labeled points as a binary PLY with `double x, y, z` and `int label`.
pub fn write_labeled_points(points: &[V3], labels: &[u32], path: &Path) -> Result<()> {
    if points.len() != labels.len() {
        return Err(format_err(path, "point and label counts differ"));
    }
    let f = std::fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(f);
    let header = format!(
        "ply\nformat binary_little_endian 1.0\ncomment blocksplat labeled points\nelement vertex {}\n\
         property double x\nproperty double y\nproperty double z\nproperty int label\nend_header\n",
        points.len()
    );
    let mut buf = Vec::with_capacity(points.len() * 28);
    for (p, l) in points.iter().zip(labels) {
        for c in p {
            buf.extend_from_slice(&c.to_le_bytes());
        }
        buf.extend_from_slice(&(*l as i32).to_le_bytes());
    }
    w.write_all(header.as_bytes()).map_err(io_err(path))?;
    w.write_all(&buf).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

pub fn read_labeled_points(path: &Path) -> Result<(Vec<V3>, Vec<u32>)> {
    let f = std::fs::File::open(path).map_err(io_err(path))?;
    let mut r = BufReader::new(f);
    let h = read_header(&mut r, path)?;
    let expected: Vec<(String, String)> = [("double", "x"), ("double", "y"), ("double", "z"), ("int", "label")]
        .iter()
        .map(|(t, n)| (t.to_string(), n.to_string()))
        .collect();
    if h.properties != expected {
        return Err(format_err(path, "unexpected property layout"));
    }
    let body = read_body(&mut r, h.count * 28, path)?;
    let mut pts = Vec::with_capacity(h.count);
    let mut labels = Vec::with_capacity(h.count);
    for i in 0..h.count {
        let o = i * 28;
        let p: V3 = std::array::from_fn(|k| f64::from_le_bytes(body[o + 8 * k..o + 8 * k + 8].try_into().unwrap_or_default()));
        if p.iter().any(|x| !x.is_finite()) {
            return Err(format_err(path, format!("point {i}: non-finite value")));
        }
        let l = i32::from_le_bytes(body[o + 24..o + 28].try_into().unwrap_or_default());
        if l < 0 {
            return Err(format_err(path, format!("point {i}: negative label")));
        }
        pts.push(p);
        labels.push(l as u32);
    }
    Ok((pts, labels))
}
