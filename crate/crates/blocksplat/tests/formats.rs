use blocksplat::checkpoint::{Checkpoint, Stage};
use blocksplat::config::RunConfig;
use blocksplat::core::camera::{identity4, Camera};
use blocksplat::core::free;
use blocksplat::core::hybrid::{Block, BlockParams, HybridConfig, HybridScene, SplatSet};
use blocksplat::core::image::{Image, Mask};
use blocksplat::core::losses::LossWeights;
use blocksplat::core::math::{self, Aabb};
use blocksplat::core::sq::{Pose, SqShape};
use blocksplat::core::synth::{self, SynthOptions};
use blocksplat::{dataset_io, export, image_io};
use proptest::prelude::*;

fn small_opts() -> SynthOptions {
    SynthOptions {
        n_views: 3,
        resolution: 12,
        truth_points: 300,
        level: 1,
        gaussians_per_face: 2,
        ..SynthOptions::default()
    }
}

fn scene(n: usize, level: u32) -> HybridScene {
    let cfg = HybridConfig {
        level,
        gaussians_per_face: 2,
        sh_degree: 1,
        ..HybridConfig::default()
    };
    let mut s = HybridScene::new(cfg, LossWeights::default(), Aabb::normalized_cube()).unwrap();
    for i in 0..n {
        let pose = Pose {
            rotation: math::quat_normalize([1.0, 0.1 * i as f64, -0.2, 0.05]),
            translation: [-0.5 + 0.5 * i as f64, 0.1, -0.1],
        };
        let p = BlockParams::from_values(&SqShape::new(0.6, 1.3, [0.2, 0.15, 0.1]), &pose, 0.7, cfg.eps_range);
        let mut b = Block::new(p, &cfg, i as u64 + 3);
        for (k, v) in b.sh.iter_mut().enumerate() {
            *v = 0.01 * (k % 13) as f64 - 0.05;
        }
        s.blocks.push(b);
    }
    s
}

#[test]
fn dataset_round_trip() {
    let (data, _) = synth::make_synthetic(&synth::three_boxes(), &small_opts()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    dataset_io::save_dataset(&data, dir.path()).unwrap();
    let back = dataset_io::load_dataset(dir.path()).unwrap();
    assert_eq!(back.cameras, data.cameras);
    assert_eq!(back.masks, data.masks);
    assert_eq!(back.bbox, data.bbox);
    for (a, b) in back.images.iter().zip(&data.images) {
        let q: Vec<f64> = b.data.iter().map(|v| image_io::quantize(*v) as f64 / 255.0).collect();
        assert_eq!(a.data, q);
    }
}

#[test]
fn missing_masks_directory_is_an_error() {
    let (data, _) = synth::make_synthetic(&synth::three_boxes(), &small_opts()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    dataset_io::save_dataset(&data, dir.path()).unwrap();
    std::fs::remove_dir_all(dir.path().join("masks")).unwrap();
    let err = dataset_io::load_dataset(dir.path()).unwrap_err();
    assert!(err.to_string().contains("masks"), "{err}");
}

#[test]
fn mask_threshold_is_128() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.png");
    image::save_buffer(&path, &[0, 127, 128, 255], 4, 1, image::ExtendedColorType::L8).unwrap();
    let m = image_io::load_mask(&path).unwrap();
    assert_eq!(m.data, vec![false, false, true, true]);
}

#[test]
fn image_quantization() {
    assert_eq!(image_io::quantize(0.5), 128);
    assert_eq!(image_io::quantize(0.0), 0);
    assert_eq!(image_io::quantize(1.0), 255);
    assert_eq!(image_io::quantize(-3.0), 0);
    assert_eq!(image_io::quantize(7.0), 255);
    assert_eq!(image_io::quantize(f64::NAN), 0);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("i.png");
    let img = Image::filled(2, 2, 0.5);
    image_io::save_image(&img, &path).unwrap();
    let back = image_io::load_image(&path).unwrap();
    assert!(back.data.iter().all(|v| *v == 128.0 / 255.0));
}

#[test]
fn identity_pose_looks_down_negative_z() {
    let cam = Camera::new(10.0, 10.0, 8.0, 6.0, 16, 12, identity4()).unwrap();
    let p = cam.project_point([0.0, 0.0, -2.0]).unwrap();
    assert_eq!(p, [8.0, 6.0]);
    assert!(cam.project_point([0.0, 0.0, 2.0]).is_none());
    // +y is up in the world and down in pixel rows.
    let up = cam.project_point([0.0, 1.0, -2.0]).unwrap();
    assert!(up[1] < 6.0);
}

#[test]
fn scene_json_reloads_exactly() {
    let s = scene(3, 2);
    let dir = tempfile::tempdir().unwrap();
    let paths = export::export_blocks(&s, dir.path()).unwrap();
    let objs = paths.iter().filter(|p| p.extension().is_some_and(|e| e == "obj")).count();
    let jsons = paths.iter().filter(|p| p.extension().is_some_and(|e| e == "json")).count();
    assert_eq!((objs, jsons), (3, 1));
    let file = export::load_scene_json(&dir.path().join("scene.json")).unwrap();
    for (rec, b) in file.blocks.iter().zip(&s.blocks) {
        assert_eq!(rec.raw, b.params);
        assert_eq!(rec.tau, b.tau());
    }
    let (v, f) = export::read_obj(&dir.path().join("block_0.obj")).unwrap();
    assert_eq!(v.len(), 162);
    assert_eq!(f.len(), 320);
    let mesh = s.block_mesh(0);
    for (a, b) in v.iter().zip(&mesh.vertices) {
        assert_eq!(a, b);
    }
}

#[test]
fn dead_blocks_are_not_exported() {
    let mut s = scene(3, 1);
    s.blocks[1].alive = false;
    let dir = tempfile::tempdir().unwrap();
    export::export_blocks(&s, dir.path()).unwrap();
    assert!(!dir.path().join("block_1.obj").exists());
    let file = export::load_scene_json(&dir.path().join("scene.json")).unwrap();
    assert_eq!(file.blocks.iter().map(|b| b.id).collect::<Vec<_>>(), vec![0, 2]);
}

fn assert_splats_close(a: &SplatSet, b: &SplatSet) {
    assert_eq!(a.len(), b.len());
    assert_eq!(a.block_ids, b.block_ids);
    let f32_close = |x: f64, y: f64| (x - y).abs() <= 1e-6 * (1.0 + x.abs());
    for i in 0..a.len() {
        for k in 0..3 {
            assert!(f32_close(a.centers[i][k], b.centers[i][k]));
        }
        // Normal and first tangent survive; the second tangent may flip sign.
        for c in 0..2 {
            for k in 0..3 {
                assert!((a.frames[i][c][k] - b.frames[i][c][k]).abs() < 1e-5);
            }
        }
        let cross = math::cross(b.frames[i][0], b.frames[i][1]);
        assert!((math::dot(cross, b.frames[i][2]).abs() - 1.0).abs() < 1e-5);
        assert!(f32_close(a.opacities[i], b.opacities[i]));
    }
}

#[test]
fn ply_round_trip_is_byte_stable() {
    let splats = scene(2, 1).bound_splats().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p1 = dir.path().join("a.ply");
    let p2 = dir.path().join("b.ply");
    export::export_splats(&splats, &p1).unwrap();
    let back = export::import_splats(&p1).unwrap();
    assert_splats_close(&splats, &back);
    export::export_splats(&back, &p2).unwrap();
    assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
}

#[test]
fn empty_ply_is_valid() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("e.ply");
    export::export_splats(&SplatSet::new(2), &p).unwrap();
    let back = export::import_splats(&p).unwrap();
    assert!(back.is_empty());
    assert_eq!(back.sh_degree, 2);
}

#[test]
fn truncated_ply_is_rejected() {
    let splats = scene(1, 1).bound_splats().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("t.ply");
    export::export_splats(&splats, &p).unwrap();
    let mut bytes = std::fs::read(&p).unwrap();
    bytes.truncate(bytes.len() - 3);
    std::fs::write(&p, bytes).unwrap();
    assert!(export::import_splats(&p).is_err());
}

#[test]
fn labeled_points_round_trip() {
    let pts = vec![[0.1, -0.2, 0.3], [1.0 / 3.0, 2.0, -7.5]];
    let labels = vec![4, 0];
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("truth.ply");
    export::write_labeled_points(&pts, &labels, &p).unwrap();
    assert_eq!(export::read_labeled_points(&p).unwrap(), (pts, labels));
}

#[test]
fn checkpoint_round_trip() {
    let s = scene(2, 1);
    let mut cfg = RunConfig::default();
    cfg.level = 1;
    cfg.gaussians_per_face = 2;
    cfg.sh_degree = 1;
    let mut fr = free::decouple(&s).unwrap();
    fr.center_delta[2] = [0.01, 0.0, -0.02];
    fr.opacity_logit[0] = -1.25;
    let ck = Checkpoint::new(Stage::Point, 17, &cfg, &s, Some(&fr));
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("ck.json");
    ck.save(&p).unwrap();
    let back = Checkpoint::load(&p).unwrap();
    assert_eq!(back, ck);
    assert_eq!(back.scene().unwrap().bound_splats().unwrap(), s.bound_splats().unwrap());
    assert_eq!(back.free.unwrap().materialize(), fr.materialize());
}

#[test]
fn checkpoint_inconsistent_with_config_is_rejected() {
    let s = scene(1, 1);
    let cfg = RunConfig::default();
    let ck = Checkpoint::new(Stage::Block, 0, &cfg, &s, None);
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("ck.json");
    ck.save(&p).unwrap();
    assert!(Checkpoint::load(&p).is_err());
}

#[test]
fn config_toml_round_trip() {
    let mut cfg = RunConfig::default();
    cfg.lambda_par = 0.037;
    cfg.add_iters = vec![3, 9];
    cfg.dbscan_eps = Some(0.125);
    let back = RunConfig::from_toml(&cfg.to_toml()).unwrap();
    assert_eq!(back, cfg);
    assert!(RunConfig::from_toml("no_such_key = 1").is_err());
    let partial = RunConfig::from_toml("lambda_cov = 2.5").unwrap();
    assert_eq!(partial.lambda_cov, 2.5);
    assert_eq!(partial.iters_block, RunConfig::default().iters_block);
}

#[test]
fn mask_and_image_sizes_must_match_the_camera() {
    let (data, _) = synth::make_synthetic(&synth::three_boxes(), &small_opts()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    dataset_io::save_dataset(&data, dir.path()).unwrap();
    image_io::save_mask(
        &Mask {
            width: 5,
            height: 5,
            data: vec![true; 25],
        },
        &dir.path().join("masks").join("001.png"),
    )
    .unwrap();
    assert!(dataset_io::load_dataset(dir.path()).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn quantize_is_monotone_and_within_half_a_step(a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(image_io::quantize(lo) <= image_io::quantize(hi));
        prop_assert!((image_io::quantize(a) as f64 / 255.0 - a).abs() <= 0.5 / 255.0 + 1e-12);
    }

    #[test]
    fn scene_json_quaternion_is_unit(q in prop::array::uniform4(-1.0f64..1.0)) {
        prop_assume!(q.iter().map(|v| v * v).sum::<f64>() > 1e-3);
        let mut s = scene(1, 1);
        s.blocks[0].params.rotation = q;
        let dir = tempfile::tempdir().unwrap();
        export::export_blocks(&s, dir.path()).unwrap();
        let file = export::load_scene_json(&dir.path().join("scene.json")).unwrap();
        let n: f64 = file.blocks[0].quaternion.iter().map(|v| v * v).sum();
        prop_assert!((n - 1.0).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn ply_reexport_is_byte_identical(qs in prop::collection::vec(prop::array::uniform4(-1.0f64..1.0), 1..40)) {
        let mut set = SplatSet::new(0);
        for (i, q) in qs.iter().enumerate() {
            prop_assume!(q.iter().map(|v| v * v).sum::<f64>() > 1e-3);
            let r = math::quat_to_mat(*q);
            let col = |k: usize| [r[0][k], r[1][k], r[2][k]];
            set.centers.push([q[1], q[2], q[3]]);
            set.frames.push([col(0), col(1), col(2)]);
            set.scales.push([0.01 + q[0].abs(), 0.02]);
            set.opacities.push(0.5);
            set.block_ids.push(i as u32 % 3);
            set.sh.extend_from_slice(&[q[0], q[1], q[2]]);
        }
        let dir = tempfile::tempdir().unwrap();
        let (p1, p2) = (dir.path().join("a.ply"), dir.path().join("b.ply"));
        export::export_splats(&set, &p1).unwrap();
        export::export_splats(&export::import_splats(&p1).unwrap(), &p2).unwrap();
        prop_assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }
}
