//! Block-level objective gradients against central finite differences.

use blocksplat_core::camera::Camera;
use blocksplat_core::hybrid::{Block, BlockParams, HybridConfig, HybridScene, NPARAM};
use blocksplat_core::image::{Image, Mask};
use blocksplat_core::losses::{self, LossWeights, PointSample, RayBatch};
use blocksplat_core::math::{self, Aabb};
use blocksplat_core::optimize::{self, random_rotation};
use blocksplat_core::sq::{Pose, SqShape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-4;

struct Case {
    scene: HybridScene,
    cam: Camera,
    target: Image,
    batch: RayBatch,
    pts: PointSample,
}

fn case(seed: u64, res: usize) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = HybridConfig {
        level: 1,
        gaussians_per_face: 2,
        sh_degree: 1,
        ..HybridConfig::default()
    };
    let weights = LossWeights {
        w_par: 0.5,
        w_opa: 0.5,
        k_overlap: 0.9,
        gamma: 0.05,
        ..LossWeights::default()
    };
    let mut scene = HybridScene::new(cfg, weights, Aabb::normalized_cube()).unwrap();
    for b in 0..2 {
        let sign = if b == 0 { -1.0 } else { 1.0 };
        let shape = SqShape::new(
            rng.gen_range(0.4..1.4),
            rng.gen_range(0.4..1.4),
            [rng.gen_range(0.2..0.45), rng.gen_range(0.2..0.45), rng.gen_range(0.2..0.45)],
        );
        let pose = Pose {
            rotation: random_rotation(&mut rng),
            translation: [sign * rng.gen_range(0.05..0.25), rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1)],
        };
        let p = BlockParams::from_values(&shape, &pose, rng.gen_range(0.5..0.9), cfg.eps_range);
        let mut block = Block::new(p, &cfg, rng.gen());
        for v in block.sh.iter_mut() {
            *v = rng.gen_range(-0.3..0.3);
        }
        scene.blocks.push(block);
    }
    let eye = math::scale(math::normalize([rng.gen_range(-1.0..1.0), 0.6, 1.0]), 2.6);
    let cam = Camera::look_at(eye, [0.0; 3], [0.0, 1.0, 0.0], 1.2 * res as f64, res, res).unwrap();
    let target = Image {
        width: res,
        height: res,
        data: (0..res * res * 3).map(|_| rng.gen()).collect(),
    };
    let mask = Mask {
        width: res,
        height: res,
        data: (0..res * res).map(|_| rng.gen_bool(0.5)).collect(),
    };
    let batch = losses::sample_rays(&[cam], &[mask], &scene.bbox, 24, 16, &mut rng).unwrap();
    let pts = PointSample::uniform(&scene.bbox, 256, &mut rng);
    Case {
        scene,
        cam,
        target,
        batch,
        pts,
    }
}

fn loss(c: &Case, scene: &HybridScene) -> f64 {
    optimize::block_objective(scene, &c.cam, &c.target, &c.batch, &c.pts)
        .unwrap()
        .total
}

/// Which scalar a probe perturbs.
#[derive(Clone, Copy)]
enum Coord {
    Param(usize, usize),
    Sh(usize, usize),
}

fn nudge(s: &mut HybridScene, c: Coord, e: f64) {
    match c {
        Coord::Param(b, k) => {
            let mut x = s.blocks[b].params.to_array();
            x[k] += e;
            s.blocks[b].params = BlockParams::from_array(&x);
        }
        Coord::Sh(b, k) => s.blocks[b].sh[k] += e,
    }
}

/// `(analytic, central difference)` at the first base point, among shifts
/// of `c` by multiples of `2.5 H`, where the central differences at `H` and
/// `H / 2` agree; a disagreement means a depth-order swap or a max/ReLU
/// switch lies within `H`. `None` when every shift straddles one.
fn probe(case: &Case, c: Coord) -> Option<(f64, f64)> {
    for attempt in 0..4 {
        let mut base = case.scene.clone();
        nudge(&mut base, c, attempt as f64 * 2.5 * H);
        let central = |h: f64| {
            let mut p = base.clone();
            nudge(&mut p, c, h);
            let mut m = base.clone();
            nudge(&mut m, c, -h);
            (loss(case, &p) - loss(case, &m)) / (2.0 * h)
        };
        let (wide, narrow) = (central(H), central(0.5 * H));
        if (wide - narrow).abs() > 2e-4 * wide.abs().max(1e-3) {
            continue;
        }
        let (_, g, g_sh) = optimize::block_objective_grad(&base, &case.cam, &case.target, &case.batch, &case.pts).unwrap();
        let a = match c {
            Coord::Param(b, k) => g[b][k],
            Coord::Sh(b, k) => g_sh[b][k],
        };
        return Some((a, wide));
    }
    None
}

fn rel(a: &[f64], n: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(n).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let norm: f64 = n.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / norm.max(1e-8)
}

fn check(seed: u64, res: usize) {
    let c = case(seed, res);
    let (rep, _, _) = optimize::block_objective_grad(&c.scene, &c.cam, &c.target, &c.batch, &c.pts).unwrap();
    assert!((rep.total - loss(&c, &c.scene)).abs() < 1e-12);
    let groups: [(&str, core::ops::Range<usize>); 5] =
        [("eps", 0..2), ("scale", 2..5), ("rotation", 5..9), ("translation", 9..12), ("opacity", 12..13)];
    let mut probed = 0;
    let mut skipped = 0;
    for b in 0..2 {
        let sh: Vec<Coord> = (0..c.scene.blocks[b].sh.len()).step_by(7).map(|k| Coord::Sh(b, k)).collect();
        let mut all: Vec<(&str, Vec<Coord>)> = groups
            .iter()
            .map(|(name, r)| (*name, r.clone().map(|k| Coord::Param(b, k)).collect()))
            .collect();
        all.push(("sh", sh));
        for (name, coords) in all {
            let (mut a, mut n) = (Vec::new(), Vec::new());
            for co in coords {
                probed += 1;
                match probe(&c, co) {
                    Some((x, y)) => {
                        a.push(x);
                        n.push(y);
                    }
                    None => skipped += 1,
                }
            }
            let r = rel(&a, &n);
            assert!(r < 1e-3, "seed {seed} res {res} block {b} {name}: rel {r:e} analytic {a:?} fd {n:?}");
        }
    }
    println!("seed {seed} res {res}: {skipped} of {probed} probes skipped");
    assert!(skipped * 10 <= probed, "{skipped} of {probed} probes straddle kinks");
    assert_eq!(NPARAM, 13);
}

#[test]
fn block_objective_gradients_8px() {
    for seed in 0..3 {
        check(seed, 8);
    }
}

#[test]
fn block_objective_gradients_16px() {
    for seed in 10..13 {
        check(seed, 16);
    }
}
