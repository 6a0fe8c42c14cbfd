//! Module invariants as property tests.

use blocksplat_core::camera::Camera;
use blocksplat_core::eval;
use blocksplat_core::hybrid::{self, Block, BlockParams, HybridConfig, HybridScene, Splat, SplatSet};
use blocksplat_core::image::{Image, Mask};
use blocksplat_core::losses::{self, LossReport, LossWeights, PointSample};
use blocksplat_core::math::{self, Aabb, V3};
use blocksplat_core::render;
use blocksplat_core::sq::{self, Pose, SqShape};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn unit_quat() -> impl Strategy<Value = [f64; 4]> {
    prop::array::uniform4(-1.0f64..1.0)
        .prop_filter("non-degenerate", |q| q.iter().map(|v| v * v).sum::<f64>() > 1e-2)
        .prop_map(math::quat_normalize)
}

fn shape(lo: f64) -> impl Strategy<Value = SqShape> {
    (lo..1.9f64, lo..1.9f64, prop::array::uniform3(0.1f64..1.0)).prop_map(|(e1, e2, s)| SqShape::new(e1, e2, s))
}

fn random_splats(seed: u64, n: usize, deg: u32) -> SplatSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut set = SplatSet::new(deg);
    for _ in 0..n {
        let r = math::quat_to_mat(math::quat_normalize([rng.gen(), rng.gen(), rng.gen(), rng.gen::<f64>() - 0.5]));
        let col = |k: usize| [r[0][k], r[1][k], r[2][k]];
        set.push(&Splat {
            center: [rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)],
            frame: [col(0), col(1), col(2)],
            scale2: rng.gen_range(0.02..0.2),
            scale3: rng.gen_range(0.02..0.2),
            opacity: rng.gen_range(0.05..1.0),
            sh: (0..hybrid::sh_dim(deg)).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            block_id: 0,
        });
    }
    set
}

fn camera(seed: u64, res: usize) -> Camera {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xca);
    let eye = math::scale(math::normalize([rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), 1.0]), 2.5);
    Camera::look_at(eye, [0.0; 3], [0.0, 1.0, 0.0], res as f64, res, res).unwrap()
}

fn random_scene(seed: u64, n: usize) -> HybridScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = HybridConfig {
        level: 1,
        gaussians_per_face: 1,
        sh_degree: 1,
        ..HybridConfig::default()
    };
    let mut s = HybridScene::new(cfg, LossWeights::default(), Aabb::normalized_cube()).unwrap();
    for i in 0..n {
        let sh = SqShape::new(rng.gen_range(0.2..1.8), rng.gen_range(0.2..1.8), [rng.gen_range(0.1..0.4); 3]);
        let pose = Pose {
            rotation: math::quat_normalize([rng.gen(), rng.gen(), rng.gen(), rng.gen()]),
            translation: [rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)],
        };
        let p = BlockParams::from_values(&sh, &pose, rng.gen_range(0.02..0.98), cfg.eps_range);
        let mut b = Block::new(p, &cfg, i as u64);
        for v in &mut b.sh {
            *v = rng.gen_range(-0.5..0.5);
        }
        s.blocks.push(b);
    }
    s
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn tessellated_vertices_lie_on_the_surface(sh in shape(0.3), level in 0u32..3) {
        let mesh = sq::tessellate(&sh, level).unwrap();
        for v in &mesh.vertices {
            let psi = sq::inside_outside(*v, &sh);
            prop_assert!((psi - 1.0).abs() < 1e-5, "psi {}", psi);
        }
    }

    #[test]
    fn inside_outside_increases_along_rays(sh in shape(0.1), d in prop::array::uniform3(-1.0f64..1.0), c in 0.05f64..3.0) {
        prop_assume!(d.iter().all(|x| x.abs() > 1e-3));
        let a = sq::inside_outside(math::scale(d, c), &sh);
        let b = sq::inside_outside(math::scale(d, c * 1.01), &sh);
        prop_assert!(b > a);
    }

    #[test]
    fn sphere_inside_outside_is_squared_norm(r in 0.1f64..2.0, p in prop::array::uniform3(-2.0f64..2.0)) {
        prop_assume!(p.iter().all(|x| x.abs() > 1e-3));
        let psi = sq::inside_outside(p, &SqShape::sphere(r));
        let want = math::dot(p, p) / (r * r);
        prop_assert!((psi - want).abs() <= 1e-12 * want.max(1.0));
    }

    #[test]
    fn face_frames_are_orthonormal(v in prop::array::uniform3(prop::array::uniform3(-1.0f64..1.0))) {
        let n = math::cross(math::sub(v[1], v[0]), math::sub(v[2], v[0]));
        prop_assume!(math::norm(n) > 1e-3);
        let f = hybrid::face_frame(v[0], v[1], v[2], 0.1).unwrap();
        for i in 0..3 {
            prop_assert!((math::norm(f.frame[i]) - 1.0).abs() < 1e-6);
            for j in 0..i {
                prop_assert!(math::dot(f.frame[i], f.frame[j]).abs() < 1e-6);
            }
        }
        let normal = math::normalize(n);
        prop_assert!((math::dot(f.frame[0], normal).abs() - 1.0).abs() < 1e-6);
        prop_assert!(f.scale2 > 0.0 && f.scale3 > 0.0);
    }

    #[test]
    fn bound_frames_are_orthonormal(seed in 0u64..1000) {
        let s = random_scene(seed, 2);
        let set = s.bound_splats().unwrap();
        prop_assert_eq!(set.len(), 2 * s.config.splats_per_block());
        for f in &set.frames {
            for i in 0..3 {
                prop_assert!((math::norm(f[i]) - 1.0).abs() < 1e-5);
                for j in 0..i {
                    prop_assert!(math::dot(f[i], f[j]).abs() < 1e-5);
                }
            }
        }
        prop_assert!(set.scales.iter().all(|s| s[0] > 0.0 && s[1] > 0.0));
    }

    #[test]
    fn occupancy_is_bounded_and_decreasing(d in -1.5f64..1.0, step in 1e-3f64..0.5, tau in 0.01f64..0.99) {
        // |D| / gamma stays below 36, where the f64 sigmoid is still below 1.
        let gamma = 0.05;
        let a = hybrid::soft_occupancy(d, tau, gamma);
        let b = hybrid::soft_occupancy(d + step, tau, gamma);
        prop_assert!(a > 0.0 && a < tau);
        prop_assert!(b < a);
    }

    #[test]
    fn alpha_is_bounded_and_render_is_deterministic(seed in 0u64..1000, n in 0usize..40) {
        let set = random_splats(seed, n, 1);
        let cam = camera(seed, 20);
        let a = render::render(&set, &cam);
        prop_assert!(a.alpha.iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert!(a.rgb.data.iter().all(|v| v.is_finite() && *v >= 0.0));
        let b = render::render(&set, &cam);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn render_is_invariant_to_input_order(seed in 0u64..1000, n in 2usize..30) {
        let set = random_splats(seed, n, 0);
        let cam = camera(seed, 16);
        let mut order: Vec<usize> = (0..n).collect();
        order.reverse();
        order.rotate_left(seed as usize % n);
        let mut perm = SplatSet::new(0);
        for &i in &order {
            perm.push(&set.get(i));
        }
        let a = render::render(&set, &cam);
        let b = render::render(&perm, &cam);
        let diff = a.rgb.data.iter().zip(&b.rgb.data).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        prop_assert!(diff <= 1e-6, "diff {}", diff);
    }

    #[test]
    fn rendering_is_rigidly_equivariant(seed in 0u64..1000, t in prop::array::uniform3(-1.0f64..1.0), q in unit_quat()) {
        let set = random_splats(seed, 12, 1);
        let cam = camera(seed, 16);
        let r = math::quat_to_mat(q);
        let mut moved = set.clone();
        for i in 0..set.len() {
            moved.centers[i] = math::add(math::mat_vec(&r, set.centers[i]), t);
            moved.frames[i] = set.frames[i].map(|c| math::mat_vec(&r, c));
        }
        // Degree-1 SH is view dependent; rotate its coefficients along with the scene.
        let sh_rot = |c: V3| math::mat_vec(&r, c);
        for i in 0..set.len() {
            let coeffs = set.sh_of(i);
            for ch in 0..3 {
                // Real degree-1 basis is (-y, z, -x) up to a shared constant.
                let v = [-coeffs[9 + ch], -coeffs[3 + ch], coeffs[6 + ch]];
                let w = sh_rot(v);
                let d = hybrid::sh_dim(1);
                moved.sh[i * d + 3 + ch] = -w[1];
                moved.sh[i * d + 6 + ch] = w[2];
                moved.sh[i * d + 9 + ch] = -w[0];
            }
        }
        let eye = math::add(math::mat_vec(&r, cam.position()), t);
        let target = math::add(math::mat_vec(&r, [0.0; 3]), t);
        let up = math::mat_vec(&r, [0.0, 1.0, 0.0]);
        let cam2 = Camera::look_at(eye, target, up, cam.fx, cam.width, cam.height).unwrap();
        let a = render::render(&set, &cam);
        let b = render::render(&moved, &cam2);
        let diff = a.rgb.data.iter().zip(&b.rgb.data).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        prop_assert!(diff <= 1e-6, "diff {}", diff);
    }

    #[test]
    fn losses_are_finite_and_non_negative(seed in 0u64..1000, n in 1usize..4) {
        let s = random_scene(seed, n);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cam = camera(seed, 12);
        let mask = Mask { width: 12, height: 12, data: (0..144).map(|_| rng.gen_bool(0.5)).collect() };
        let batch = losses::sample_rays(&[cam], &[mask.clone()], &s.bbox, 10, 8, &mut rng).unwrap();
        let pts = PointSample::uniform(&s.bbox, 64, &mut rng);
        let img = render::render(&s.bound_splats().unwrap(), &cam);
        let target = Image { width: 12, height: 12, data: (0..432).map(|_| rng.gen()).collect() };
        let w = s.loss_weights;
        let rep = losses::total_loss(&s, &batch, &pts, &img.rgb, &target, &w).unwrap();
        let splats = s.bound_splats().unwrap();
        let extra = [
            losses::enter_loss(&splats, &s, None),
            losses::scale_regularization(&splats, 0.01),
            losses::mask_loss(&img, &mask).unwrap(),
        ];
        for v in [rep.ren, rep.cov, rep.over, rep.par, rep.opa, rep.total].iter().chain(&extra) {
            prop_assert!(v.is_finite() && *v >= 0.0, "{:?}", rep);
        }
    }

    #[test]
    fn parsimony_increases_with_every_tau(seed in 0u64..1000, k in 0usize..3, bump in 0.01f64..2.0) {
        let mut s = random_scene(seed, 3);
        let before = losses::parsimony_loss(&s);
        s.blocks[k].params.opacity_logit += bump;
        prop_assert!(losses::parsimony_loss(&s) > before);
    }

    #[test]
    fn total_is_the_weighted_sum(terms in prop::array::uniform8(0.0f64..10.0), k in 0usize..7, dw in 0.0f64..5.0) {
        let rep = LossReport {
            ren: terms[0], cov: terms[1], over: terms[2], par: terms[3], opa: terms[4],
            enter: terms[5], scale: terms[6], mask: terms[7], ..LossReport::default()
        };
        let w = LossWeights::default();
        let mut w2 = w;
        let (slot, term) = match k {
            0 => (&mut w2.w_cov, rep.cov),
            1 => (&mut w2.w_over, rep.over),
            2 => (&mut w2.w_par, rep.par),
            3 => (&mut w2.w_opa, rep.opa),
            4 => (&mut w2.w_enter, rep.enter),
            5 => (&mut w2.w_scale, rep.scale),
            _ => (&mut w2.w_mask, rep.mask),
        };
        *slot += dw;
        let expected = rep.ren + w.w_cov * rep.cov + w.w_over * rep.over + w.w_par * rep.par + w.w_opa * rep.opa
            + w.w_enter * rep.enter + w.w_scale * rep.scale + w.w_mask * rep.mask;
        prop_assert_eq!(rep.combine(&w), expected);
        let delta = rep.combine(&w2) - rep.combine(&w);
        prop_assert!((delta - dw * term).abs() <= 1e-12 * (1.0 + expected));
    }

    #[test]
    fn chamfer_is_symmetric_and_non_negative(seed in 0u64..1000, na in 1usize..60, nb in 1usize..60) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pts = |n: usize| -> Vec<V3> { (0..n).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect() };
        let a = pts(na);
        let b = pts(nb);
        let ab = eval::chamfer(&a, &b).unwrap();
        prop_assert_eq!(ab, eval::chamfer(&b, &a).unwrap());
        prop_assert!(ab > 0.0);
        prop_assert!((ab - eval::chamfer_brute_force(&a, &b).unwrap()).abs() < 1e-12);
        prop_assert_eq!(eval::chamfer(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn ssim_of_an_image_with_itself_is_one(seed in 0u64..1000, w in 1usize..24, h in 1usize..24) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let img = Image { width: w, height: h, data: (0..w * h * 3).map(|_| rng.gen()).collect() };
        prop_assert_eq!(eval::ssim(&img, &img).unwrap(), 1.0);
        prop_assert_eq!(eval::psnr(&img, &img).unwrap(), eval::PSNR_CAP);
    }

    #[test]
    fn psnr_falls_as_noise_grows(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = Image { width: 16, height: 16, data: (0..768).map(|_| rng.gen_range(0.3..0.7)).collect() };
        let noise: Vec<f64> = (0..768).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let noisy = |amp: f64| Image {
            data: base.data.iter().zip(&noise).map(|(v, n)| v + amp * n).collect(),
            ..base.clone()
        };
        let p: Vec<f64> = [0.01, 0.05, 0.2].iter().map(|a| eval::psnr(&base, &noisy(*a)).unwrap()).collect();
        prop_assert!(p[0] > p[1] && p[1] > p[2], "{:?}", p);
    }
}
