//! Dataset folders:
//!
//! ```text
//! cameras.json   {"views": [{"name", "fx", "fy", "cx", "cy", "width", "height", "w2c"}],
//!                 "bbox": {"min", "max"}?, "test_views": [..]?}
//! images/<name>.png
//! masks/<name>.png
//! truth.ply      optional labeled ground-truth points
//! ```
//!
//! A bare JSON array of views is accepted for `cameras.json` as well. View
//! names default to the zero-padded view index.

use std::path::Path;

use blocksplat_core::camera::Camera;
use blocksplat_core::dataset::Dataset;
use blocksplat_core::math::Aabb;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{format_err, io_err, read_json, write_json, Result};
use crate::image_io;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub w2c: [[f64; 4]; 4],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CamerasFile {
    pub views: Vec<ViewRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<Aabb>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub test_views: Vec<usize>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum CamerasJson {
    Full(CamerasFile),
    Views(Vec<ViewRecord>),
}

fn view_name(rec: &ViewRecord, i: usize) -> String {
    rec.name.clone().unwrap_or_else(|| format!("{i:03}"))
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let cams_path = dir.join("cameras.json");
    let file = match read_json::<CamerasJson>(&cams_path)? {
        CamerasJson::Full(f) => f,
        CamerasJson::Views(views) => CamerasFile {
            views,
            bbox: None,
            test_views: Vec::new(),
        },
    };
    if file.views.is_empty() {
        return Err(format_err(&cams_path, "no views"));
    }
    for sub in ["images", "masks"] {
        if !dir.join(sub).is_dir() {
            return Err(format_err(&dir.join(sub), "missing directory"));
        }
    }
    let views: Vec<_> = file
        .views
        .par_iter()
        .enumerate()
        .map(|(i, rec)| -> Result<_> {
            let cam = Camera::new(rec.fx, rec.fy, rec.cx, rec.cy, rec.width, rec.height, rec.w2c)
                .map_err(|e| format_err(&cams_path, format!("view {i}: {e}")))?;
            let name = view_name(rec, i);
            let img_path = dir.join("images").join(format!("{name}.png"));
            let mask_path = dir.join("masks").join(format!("{name}.png"));
            let img = image_io::load_image(&img_path)?;
            let mask = image_io::load_mask(&mask_path)?;
            if img.width != cam.width || img.height != cam.height {
                return Err(format_err(&img_path, format!("size {}x{} does not match its camera", img.width, img.height)));
            }
            if mask.width != cam.width || mask.height != cam.height {
                return Err(format_err(&mask_path, format!("size {}x{} does not match its camera", mask.width, mask.height)));
            }
            Ok((cam, img, mask))
        })
        .collect::<Result<Vec<_>>>()?;
    let name = dir
        .file_name()
        .map_or_else(|| "dataset".to_string(), |n| n.to_string_lossy().into_owned());
    let mut data = Dataset {
        name,
        cameras: Vec::with_capacity(views.len()),
        images: Vec::with_capacity(views.len()),
        masks: Vec::with_capacity(views.len()),
        bbox: file.bbox.unwrap_or_else(Aabb::normalized_cube),
        test_views: file.test_views,
    };
    for (c, i, m) in views {
        data.cameras.push(c);
        data.images.push(i);
        data.masks.push(m);
    }
    data.validate().map_err(|e| format_err(dir, e.to_string()))?;
    Ok(data)
}

/// Writes `data` in the folder layout read by [`load_dataset`].
pub fn save_dataset(data: &Dataset, dir: &Path) -> Result<()> {
    data.validate()?;
    for sub in ["images", "masks"] {
        let d = dir.join(sub);
        std::fs::create_dir_all(&d).map_err(io_err(&d))?;
    }
    let views: Vec<ViewRecord> = data
        .cameras
        .iter()
        .enumerate()
        .map(|(i, c)| ViewRecord {
            name: Some(format!("{i:03}")),
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            width: c.width,
            height: c.height,
            w2c: c.w2c,
        })
        .collect();
    for (i, v) in views.iter().enumerate() {
        let name = view_name(v, i);
        image_io::save_image(&data.images[i], &dir.join("images").join(format!("{name}.png")))?;
        image_io::save_mask(&data.masks[i], &dir.join("masks").join(format!("{name}.png")))?;
    }
    let file = CamerasFile {
        views,
        bbox: Some(data.bbox),
        test_views: data.test_views.clone(),
    };
    write_json(&dir.join("cameras.json"), &file)
}
