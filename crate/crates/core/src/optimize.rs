//! Two-stage fitting: block-level decomposition with an adaptive block
//! count, then point-level refinement of decoupled splats.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bound::BoundGeometry;
use crate::camera::Camera;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::eval::KdTree;
use crate::free::FreeSplats;
use crate::hybrid::{Block, BlockParams, HybridConfig, HybridScene, NPARAM, P_EPS, P_OPACITY, P_ROT, P_SCALE, P_TRANS};
use crate::image::Image;
use crate::losses::{self, LossReport, LossWeights, PointSample, RayBatch};
use crate::math::{self, Aabb, V3};
use crate::real::Real;
use crate::render;
use crate::sq::{Pose, SqShape};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-15;

/// Constant per-group learning rates.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LearningRates {
    pub translation: f64,
    pub rotation: f64,
    pub scale: f64,
    pub shape: f64,
    pub opacity: f64,
    pub sh: f64,
    pub point_center: f64,
    pub point_rotation: f64,
    pub point_scale: f64,
    pub point_opacity: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        LearningRates {
            translation: 1.6e-3,
            rotation: 1e-3,
            scale: 5e-3,
            shape: 5e-3,
            opacity: 5e-2,
            sh: 2.5e-3,
            point_center: 5e-4,
            point_rotation: 1e-3,
            point_scale: 5e-3,
            point_opacity: 5e-2,
        }
    }
}

impl LearningRates {
    fn block_table(&self) -> [f64; NPARAM] {
        let mut lr = [0.0; NPARAM];
        lr[P_EPS..P_EPS + 2].fill(self.shape);
        lr[P_SCALE..P_SCALE + 3].fill(self.scale);
        lr[P_ROT..P_ROT + 4].fill(self.rotation);
        lr[P_TRANS..P_TRANS + 3].fill(self.translation);
        lr[P_OPACITY] = self.opacity;
        lr
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct OptimConfig {
    pub m_init: usize,
    /// Upper bound on blocks ever created.
    pub max_blocks: usize,
    pub iters_block: usize,
    pub iters_point: usize,
    /// Iterations after which uncovered points seed new blocks.
    pub add_iters: Vec<usize>,
    pub prune_tau: f64,
    pub lr: LearningRates,
    pub seed: u64,
    /// Clustering radius; `None` means 4% of the bbox diagonal.
    pub dbscan_eps: Option<f64>,
    pub dbscan_min_pts: usize,
    /// Rays per iteration, spread evenly over the training views.
    pub rays_per_iter: usize,
    pub samples_per_ray: usize,
    pub overlap_points: usize,
    /// Candidate bbox samples carved into the persistent reference cloud.
    pub hull_candidates: usize,
    /// Seed block centers by k-means on the reference cloud.
    pub init_from_points: bool,
    /// Splat centers per iteration in the enter loss.
    pub enter_points: usize,
    /// Scale-regularizer threshold; `None` means 2% of the bbox diagonal.
    pub s_max: Option<f64>,
    pub checkpoint_every: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            m_init: 8,
            max_blocks: 16,
            iters_block: 30_000,
            iters_point: 30_000,
            add_iters: vec![5_000, 10_000],
            prune_tau: 0.1,
            lr: LearningRates::default(),
            seed: 0,
            dbscan_eps: None,
            dbscan_min_pts: 10,
            rays_per_iter: 512,
            samples_per_ray: 64,
            overlap_points: 4096,
            hull_candidates: 20_000,
            init_from_points: true,
            enter_points: 4096,
            s_max: None,
            checkpoint_every: 5_000,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if !(self.prune_tau > 0.0 && self.prune_tau < 1.0) {
            return bad("prune_tau must lie in (0, 1)");
        }
        if self.m_init == 0 || self.m_init > self.max_blocks {
            return bad("m_init must be in 1..=max_blocks");
        }
        if self.add_iters.iter().any(|&i| i >= self.iters_block.max(1)) {
            return bad("add_iters must lie in [0, iters_block)");
        }
        if self.samples_per_ray == 0 || self.rays_per_iter == 0 {
            return bad("ray sampling counts must be positive");
        }
        if self.dbscan_eps.is_some_and(|e| !(e > 0.0)) || self.s_max.is_some_and(|s| !(s > 0.0)) {
            return bad("dbscan_eps and s_max must be positive");
        }
        Ok(())
    }

    pub fn dbscan_radius(&self, bbox: &Aabb) -> f64 {
        self.dbscan_eps.unwrap_or(0.04 * bbox.diagonal())
    }

    pub fn scale_threshold(&self, bbox: &Aabb) -> f64 {
        self.s_max.unwrap_or(0.02 * bbox.diagonal())
    }
}

/// First and second moment estimates for one parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    /// One bias-corrected step; `lr(i)` is the rate of entry `i`.
    pub fn step(&mut self, x: &mut [f64], g: &[f64], lr: impl Fn(usize) -> f64) {
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - Real::powr(ADAM_BETA1, t as f64);
        let c2 = 1.0 - Real::powr(ADAM_BETA2, t as f64);
        for i in 0..x.len() {
            self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * g[i];
            self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            x[i] -= lr(i) * mh / (Real::sqrt(vh) + ADAM_EPS);
        }
    }
}

#[derive(Clone, Debug)]
struct BlockOpt {
    params: AdamState,
    sh: AdamState,
}

/// Structural change of the block set.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum BlockEvent {
    Pruned { iter: usize, block: usize },
    Added { iter: usize, block: usize },
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FitReport {
    pub records: Vec<LossReport>,
    /// Surviving block count `#P`.
    pub part_count: usize,
    pub wall_clock_seconds: f64,
    pub events: Vec<BlockEvent>,
    /// Parameters of the surviving blocks, in block order.
    pub final_params: Vec<BlockParams>,
}

/// Uniformly distributed unit quaternion.
pub fn random_rotation(rng: &mut impl Rng) -> [f64; 4] {
    let (u1, u2, u3): (f64, f64, f64) = (rng.gen(), rng.gen(), rng.gen());
    let tau = core::f64::consts::TAU;
    let (a, b) = (Real::sqrt(1.0 - u1), Real::sqrt(u1));
    [
        b * Real::cos(tau * u3),
        a * Real::sin(tau * u2),
        a * Real::cos(tau * u2),
        b * Real::sin(tau * u3),
    ]
}

/// k-means++ seeding followed by Lloyd iterations.
pub fn kmeans(points: &[V3], k: usize, iters: usize, rng: &mut impl Rng) -> Result<Vec<V3>> {
    if points.is_empty() || k == 0 {
        return Err(Error::EmptyPointSet);
    }
    let mut centers = vec![points[rng.gen_range(0..points.len())]];
    let mut d2: Vec<f64> = points.iter().map(|p| math::dist2(*p, centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut t = rng.gen::<f64>() * total;
            let mut pick = points.len() - 1;
            for (i, d) in d2.iter().enumerate() {
                if t < *d {
                    pick = i;
                    break;
                }
                t -= d;
            }
            points[pick]
        } else {
            points[rng.gen_range(0..points.len())]
        };
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(math::dist2(*p, next));
        }
        centers.push(next);
    }
    for _ in 0..iters {
        let mut sum = vec![[0.0; 3]; k];
        let mut count = vec![0usize; k];
        for p in points {
            let c = nearest_center(&centers, *p);
            sum[c] = math::add(sum[c], *p);
            count[c] += 1;
        }
        let mut moved = false;
        for c in 0..k {
            if count[c] > 0 {
                let m = math::scale(sum[c], 1.0 / count[c] as f64);
                moved |= m != centers[c];
                centers[c] = m;
            }
        }
        if !moved {
            break;
        }
    }
    Ok(centers)
}

fn nearest_center(centers: &[V3], p: V3) -> usize {
    let mut best = 0;
    let mut bd = f64::INFINITY;
    for (i, c) in centers.iter().enumerate() {
        let d = math::dist2(*c, p);
        if d < bd {
            bd = d;
            best = i;
        }
    }
    best
}

/// Density clustering; returns one label per point, `None` for noise.
pub fn dbscan(points: &[V3], eps: f64, min_pts: usize) -> Vec<Option<usize>> {
    let tree = KdTree::new(points);
    let mut labels: Vec<Option<usize>> = vec![None; points.len()];
    let mut visited = vec![false; points.len()];
    let mut cluster = 0;
    for i in 0..points.len() {
        if visited[i] {
            continue;
        }
        visited[i] = true;
        let nb = tree.within(points[i], eps);
        if nb.len() < min_pts {
            continue;
        }
        labels[i] = Some(cluster);
        let mut queue = nb;
        let mut head = 0;
        while head < queue.len() {
            let j = queue[head];
            head += 1;
            if labels[j].is_none() {
                labels[j] = Some(cluster);
            }
            if visited[j] {
                continue;
            }
            visited[j] = true;
            let nb_j = tree.within(points[j], eps);
            if nb_j.len() >= min_pts {
                queue.extend(nb_j);
            }
        }
        cluster += 1;
    }
    labels
}

/// Initial edge length of a block for `m` blocks in `bbox`.
pub fn init_scale(bbox: &Aabb, m: usize) -> f64 {
    bbox.diagonal() / (4.0 * Real::powr(m as f64, 1.0 / 3.0))
}

fn new_block(scene: &HybridScene, center: V3, scale: V3, rng: &mut impl Rng) -> Block {
    let pose = Pose {
        rotation: random_rotation(rng),
        translation: center,
    };
    let params = BlockParams::from_values(&SqShape::new(1.0, 1.0, scale), &pose, 0.5, scene.config.eps_range);
    Block::new(params, &scene.config, rng.gen())
}

/// `m_init` blocks, centered at k-means centers of `init_points` when given,
/// else uniformly in the central 60% of `bbox`.
pub fn init_scene(
    cfg: &OptimConfig,
    hybrid: HybridConfig,
    weights: LossWeights,
    bbox: Aabb,
    init_points: Option<&[V3]>,
) -> Result<HybridScene> {
    if bbox.is_degenerate() {
        return Err(Error::DegenerateBbox);
    }
    cfg.validate()?;
    weights.validate()?;
    let mut scene = HybridScene::new(hybrid, weights, bbox)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let centers: Vec<V3> = match init_points {
        Some(pts) if pts.len() >= cfg.m_init => kmeans(pts, cfg.m_init, 50, &mut rng)?,
        _ => {
            let c = bbox.center();
            let e = bbox.extent();
            (0..cfg.m_init)
                .map(|_| core::array::from_fn(|i| c[i] + (rng.gen::<f64>() - 0.5) * 0.6 * e[i]))
                .collect()
        }
    };
    let s = init_scale(&bbox, cfg.m_init);
    for c in centers {
        let b = new_block(&scene, c, [s; 3], &mut rng);
        scene.blocks.push(b);
    }
    Ok(scene)
}

/// Marks blocks with `tau < prune_tau` dead; returns their ids.
pub fn prune_blocks(scene: &mut HybridScene, prune_tau: f64) -> Vec<usize> {
    let mut removed = Vec::new();
    for (i, b) in scene.blocks.iter_mut().enumerate() {
        if b.alive && b.tau() < prune_tau {
            b.alive = false;
            removed.push(i);
        }
    }
    removed
}

/// Points not inside any alive block.
pub fn uncovered(scene: &HybridScene, pts: &[V3]) -> Vec<V3> {
    let fields = losses::fields(scene);
    pts.iter()
        .copied()
        .filter(|p| fields.iter().all(|f| f.distance(*p) > 0.0))
        .collect()
}

/// One new block per density cluster of `uncovered_pts`, placed at the
/// cluster centroid; returns the new block ids.
pub fn add_blocks(scene: &mut HybridScene, uncovered_pts: &[V3], cfg: &OptimConfig, rng: &mut impl Rng) -> Vec<usize> {
    if uncovered_pts.is_empty() {
        return Vec::new();
    }
    let labels = dbscan(uncovered_pts, cfg.dbscan_radius(&scene.bbox), cfg.dbscan_min_pts);
    let n_clusters = labels.iter().flatten().max().map_or(0, |m| m + 1);
    let mut sums = vec![([0.0; 3], 0usize); n_clusters];
    for (p, l) in uncovered_pts.iter().zip(&labels) {
        if let Some(c) = l {
            sums[*c].0 = math::add(sums[*c].0, *p);
            sums[*c].1 += 1;
        }
    }
    let s = init_scale(&scene.bbox, cfg.m_init);
    let mut added = Vec::new();
    for (sum, n) in sums {
        if scene.blocks.len() >= cfg.max_blocks {
            break;
        }
        let center = math::scale(sum, 1.0 / n as f64);
        let scale = [s * (0.5 + 0.5 * rng.gen::<f64>()); 3];
        let b = new_block(scene, center, scale, rng);
        added.push(scene.blocks.len());
        scene.blocks.push(b);
    }
    added
}

fn now() -> f64 {
    #[cfg(feature = "std")]
    {
        use std::time::{SystemTime, UNIX_EPOCH};
        SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
    }
    #[cfg(not(feature = "std"))]
    {
        0.0
    }
}

fn check_dataset(data: &Dataset) -> Result<Vec<usize>> {
    data.validate()?;
    let views = data.train_views();
    if views.len() < 2 {
        return Err(Error::InvalidInput("fitting needs at least two training views".into()));
    }
    Ok(views)
}

/// Observer of training progress: iteration, scene and loss record.
pub trait Observer {
    fn block_step(&mut self, _iter: usize, _scene: &HybridScene, _rep: &LossReport) -> Result<()> {
        Ok(())
    }
    fn point_step(&mut self, _iter: usize, _free: &FreeSplats, _rep: &LossReport) -> Result<()> {
        Ok(())
    }
}

impl Observer for () {}

/// Block-level objective and its gradients for one rendered view: block
/// parameter rows indexed by block id, and per-block SH gradients laid out
/// like `Block::sh`.
pub fn block_objective_grad(
    scene: &HybridScene,
    cam: &Camera,
    target: &Image,
    batch: &RayBatch,
    pts: &PointSample,
) -> Result<(LossReport, Vec<[f64; NPARAM]>, Vec<Vec<f64>>)> {
    let w = scene.loss_weights;
    let geom = BoundGeometry::new(scene)?;
    let (img, ctx) = render::render_with_context(&geom.splats, cam);
    let (ren, g_img) = losses::rendering_loss_grad(&img.rgb, target, w.lambda_ssim)?;
    let sg = render::backward(&geom.splats, cam, &ctx, &g_img, None);
    let (mut grads, sh) = geom.pull_back(scene, &sg);
    let mut rep = LossReport {
        ren,
        ..LossReport::default()
    };
    let mut add = |gs: Vec<[f64; NPARAM]>, wt: f64| {
        for (dst, g) in grads.iter_mut().zip(gs) {
            for k in 0..NPARAM {
                dst[k] += wt * g[k];
            }
        }
    };
    let ((v, g), opa) = losses::coverage_and_opacity_grad(batch, scene, w.gamma);
    rep.cov = v;
    add(g, w.w_cov);
    let (v, g) = losses::overlap_loss_grad(pts, scene, w.gamma, w.k_overlap);
    rep.over = v;
    add(g, w.w_over);
    let (v, g) = losses::parsimony_loss_grad(scene);
    rep.par = v;
    add(g, w.w_par);
    let (v, g) = opa;
    rep.opa = v;
    add(g, w.w_opa);
    rep.total = rep.combine(&w);
    Ok((rep, grads, sh))
}

/// Value of [`block_objective_grad`] without gradients.
pub fn block_objective(scene: &HybridScene, cam: &Camera, target: &Image, batch: &RayBatch, pts: &PointSample) -> Result<LossReport> {
    let img = render::render(&scene.bound_splats()?, cam);
    losses::total_loss(scene, batch, pts, &img.rgb, target, &scene.loss_weights)
}

/// Mutable state of a block-level run.
pub struct BlockTrainer<'a> {
    pub data: &'a Dataset,
    pub cfg: OptimConfig,
    views: Vec<usize>,
    targets: Vec<Image>,
    reference: Vec<V3>,
    opt: Vec<BlockOpt>,
    rng: ChaCha8Rng,
    pub iter: usize,
    pub report: FitReport,
}

impl<'a> BlockTrainer<'a> {
    pub fn new(scene: &HybridScene, data: &'a Dataset, cfg: &OptimConfig, reference: Vec<V3>) -> Result<Self> {
        cfg.validate()?;
        let views = check_dataset(data)?;
        let targets = (0..data.len()).map(|v| data.target(v)).collect();
        let mut t = BlockTrainer {
            data,
            cfg: cfg.clone(),
            views,
            targets,
            reference,
            opt: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xb10c),
            iter: 0,
            report: FitReport {
                records: Vec::new(),
                part_count: scene.alive_count(),
                wall_clock_seconds: 0.0,
                events: Vec::new(),
                final_params: Vec::new(),
            },
        };
        t.sync_opt(scene);
        Ok(t)
    }

    fn sync_opt(&mut self, scene: &HybridScene) {
        while self.opt.len() < scene.blocks.len() {
            let n = scene.blocks[self.opt.len()].sh.len();
            self.opt.push(BlockOpt {
                params: AdamState::new(NPARAM),
                sh: AdamState::new(n),
            });
        }
    }

    /// Loss values and gradients at the current scene for view `view`.
    pub fn evaluate(
        &mut self,
        scene: &HybridScene,
        view: usize,
    ) -> Result<(LossReport, Vec<[f64; NPARAM]>, Vec<Vec<f64>>)> {
        let cams: Vec<_> = self.views.iter().map(|&v| self.data.cameras[v]).collect();
        let masks: Vec<_> = self.views.iter().map(|&v| self.data.masks[v].clone()).collect();
        let per_view = (self.cfg.rays_per_iter / self.views.len()).max(1);
        let batch = losses::sample_rays(&cams, &masks, &scene.bbox, per_view, self.cfg.samples_per_ray, &mut self.rng)?;
        let pts = PointSample::uniform(&scene.bbox, self.cfg.overlap_points, &mut self.rng);
        let mut out = block_objective_grad(scene, &self.data.cameras[view], &self.targets[view], &batch, &pts)?;
        out.0.iter = self.iter;
        Ok(out)
    }

    /// One optimization step followed by pruning and scheduled block adds.
    pub fn step(&mut self, scene: &mut HybridScene) -> Result<LossReport> {
        let view = self.views[self.rng.gen_range(0..self.views.len())];
        let (rep, grads, g_sh) = self.evaluate(scene, view)?;
        let lr = self.cfg.lr.block_table();
        let lr_sh = self.cfg.lr.sh;
        for id in scene.alive_ids() {
            let b = &mut scene.blocks[id];
            let mut x = b.params.to_array();
            self.opt[id].params.step(&mut x, &grads[id], |i| lr[i]);
            let mut p = BlockParams::from_array(&x);
            p.rotation = math::quat_normalize(p.rotation);
            b.params = p;
            if !g_sh[id].is_empty() {
                self.opt[id].sh.step(&mut b.sh, &g_sh[id], |_| lr_sh);
            }
            debug_assert!(x.iter().all(|v| v.is_finite()), "non-finite block parameters");
        }
        for id in prune_blocks(scene, self.cfg.prune_tau) {
            self.report.events.push(BlockEvent::Pruned {
                iter: self.iter,
                block: id,
            });
        }
        if scene.alive_count() == 0 {
            return Err(Error::AllBlocksPruned(self.iter));
        }
        if self.cfg.add_iters.contains(&self.iter) {
            let pts = uncovered(scene, &self.reference);
            for id in add_blocks(scene, &pts, &self.cfg, &mut self.rng) {
                self.report.events.push(BlockEvent::Added {
                    iter: self.iter,
                    block: id,
                });
            }
            self.sync_opt(scene);
        }
        self.report.records.push(rep);
        self.iter += 1;
        Ok(rep)
    }

    pub fn finish(mut self, scene: &HybridScene, started: f64) -> FitReport {
        self.report.part_count = scene.alive_count();
        self.report.final_params = scene.alive_ids().into_iter().map(|i| scene.blocks[i].params).collect();
        self.report.wall_clock_seconds = now() - started;
        self.report
    }
}

/// Persistent reference cloud for initialization and block adds: bbox
/// samples carved by the training silhouettes.
pub fn reference_points(data: &Dataset, cfg: &OptimConfig) -> Vec<V3> {
    data.visual_hull_points(cfg.hull_candidates, cfg.seed ^ 0x9e37_79b9)
}

/// Runs `cfg.iters_block` block-level steps on `scene`.
pub fn block_level_fit(scene: &mut HybridScene, data: &Dataset, cfg: &OptimConfig) -> Result<FitReport> {
    block_level_fit_with(scene, data, cfg, &mut ())
}

pub fn block_level_fit_with(
    scene: &mut HybridScene,
    data: &Dataset,
    cfg: &OptimConfig,
    obs: &mut dyn Observer,
) -> Result<FitReport> {
    let started = now();
    let reference = reference_points(data, cfg);
    let mut trainer = BlockTrainer::new(scene, data, cfg, reference)?;
    for _ in 0..cfg.iters_block {
        let rep = trainer.step(scene)?;
        obs.block_step(trainer.iter, scene, &rep)?;
    }
    Ok(trainer.finish(scene, started))
}

/// Initializes from the reference cloud (when configured) and runs the
/// block-level stage.
pub fn fit_blocks(
    data: &Dataset,
    cfg: &OptimConfig,
    hybrid: HybridConfig,
    weights: LossWeights,
    obs: &mut dyn Observer,
) -> Result<(HybridScene, FitReport)> {
    check_dataset(data)?;
    let reference = reference_points(data, cfg);
    let init = cfg.init_from_points.then_some(reference.as_slice());
    let mut scene = init_scene(cfg, hybrid, weights, data.bbox, init)?;
    let started = now();
    let mut trainer = BlockTrainer::new(&scene, data, cfg, reference)?;
    for _ in 0..cfg.iters_block {
        let rep = trainer.step(&mut scene)?;
        obs.block_step(trainer.iter, &scene, &rep)?;
    }
    let report = trainer.finish(&scene, started);
    Ok((scene, report))
}

/// Mutable state of a point-level run.
pub struct PointTrainer<'a> {
    pub data: &'a Dataset,
    pub cfg: OptimConfig,
    views: Vec<usize>,
    targets: Vec<Image>,
    opt: crate::free::FreeOpt,
    rng: ChaCha8Rng,
    pub iter: usize,
    records: Vec<LossReport>,
}

impl<'a> PointTrainer<'a> {
    pub fn new(free: &FreeSplats, data: &'a Dataset, cfg: &OptimConfig) -> Result<Self> {
        cfg.validate()?;
        let views = check_dataset(data)?;
        Ok(PointTrainer {
            data,
            cfg: cfg.clone(),
            targets: (0..data.len()).map(|v| data.target(v)).collect(),
            views,
            opt: crate::free::FreeOpt::new(free),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9017),
            iter: 0,
            records: Vec::new(),
        })
    }

    /// Loss values and free-splat gradients for view `view`.
    pub fn evaluate(
        &mut self,
        free: &FreeSplats,
        scene: &HybridScene,
        view: usize,
    ) -> Result<(LossReport, crate::free::FreeGrads)> {
        let w = scene.loss_weights;
        let splats = free.materialize();
        let cam = &self.data.cameras[view];
        let (img, ctx) = render::render_with_context(&splats, cam);
        let (ren, g_img) = losses::rendering_loss_grad(&img.rgb, &self.targets[view], w.lambda_ssim)?;
        let (mask, g_mask) = losses::mask_loss_grad(&img, &self.data.masks[view])?;
        let g_alpha: Vec<f64> = g_mask.iter().map(|g| g * w.w_mask).collect();
        let mut sg = render::backward(&splats, cam, &ctx, &g_img, Some(&g_alpha));
        let subset: Vec<usize> = if splats.len() <= self.cfg.enter_points {
            (0..splats.len()).collect()
        } else {
            let mut s: Vec<usize> = (0..self.cfg.enter_points)
                .map(|_| self.rng.gen_range(0..splats.len()))
                .collect();
            s.sort_unstable();
            s.dedup();
            s
        };
        let (enter, g_enter) = losses::enter_loss_grad(&splats, scene, Some(&subset));
        let (scale, g_scale) = losses::scale_regularization_grad(&splats, self.cfg.scale_threshold(&scene.bbox));
        for i in 0..splats.len() {
            for c in 0..3 {
                sg.center[i][c] += w.w_enter * g_enter[i][c];
            }
            for c in 0..2 {
                sg.scale[i][c] += w.w_scale * g_scale[i][c];
            }
        }
        let mut rep = LossReport {
            iter: self.iter,
            ren,
            enter,
            scale,
            mask,
            ..LossReport::default()
        };
        rep.total = rep.combine(&w);
        Ok((rep, free.pull_back(&sg)))
    }

    pub fn step(&mut self, free: &mut FreeSplats, scene: &HybridScene) -> Result<LossReport> {
        let view = self.views[self.rng.gen_range(0..self.views.len())];
        let (rep, g) = self.evaluate(free, scene, view)?;
        self.opt.step(free, &g, &self.cfg.lr);
        self.records.push(rep);
        self.iter += 1;
        Ok(rep)
    }
}

/// Runs `cfg.iters_point` refinement steps; block geometry stays fixed.
pub fn point_level_refine(free: &mut FreeSplats, scene: &HybridScene, data: &Dataset, cfg: &OptimConfig) -> Result<FitReport> {
    point_level_refine_with(free, scene, data, cfg, &mut ())
}

pub fn point_level_refine_with(
    free: &mut FreeSplats,
    scene: &HybridScene,
    data: &Dataset,
    cfg: &OptimConfig,
    obs: &mut dyn Observer,
) -> Result<FitReport> {
    let started = now();
    let mut trainer = PointTrainer::new(free, data, cfg)?;
    for _ in 0..cfg.iters_point {
        let rep = trainer.step(free, scene)?;
        obs.point_step(trainer.iter, free, &rep)?;
    }
    Ok(FitReport {
        records: trainer.records,
        part_count: scene.alive_count(),
        wall_clock_seconds: now() - started,
        events: Vec::new(),
        final_params: scene.alive_ids().into_iter().map(|i| scene.blocks[i].params).collect(),
    })
}

/// Mean training-view rendering loss of `splats`.
pub fn mean_rendering_loss(splats: &crate::hybrid::SplatSet, data: &Dataset, lambda: f64) -> Result<f64> {
    let views = data.train_views();
    let mut total = 0.0;
    for &v in &views {
        let img = render::render(splats, &data.cameras[v]);
        total += losses::rendering_loss(&img.rgb, &data.target(v), lambda)?;
    }
    Ok(total / views.len().max(1) as f64)
}
