use std::cell::RefCell;
use std::io::Write;
use std::rc::Rc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::{train_test_split, Dataset};
use crate::diff::Tape;
use crate::error::Result;
use crate::gauss::{densify_and_prune, DensifyOpts, DensifyStats, RasterizeOp};
use crate::train::adam::Adam;
use crate::train::metrics::{depth_pearson_loss, psnr};
use crate::train::model::{build_context, shade_and_render, Model, BACKGROUND};
use crate::train::TrainConfig;
use crate::transient::{mask_regularizer, masked_photometric_loss};

/// Scalars logged for one iteration.
#[derive(Clone, Copy, Debug, Default)]
pub struct StepLog {
    pub loss_photo: f64,
    pub loss_mask: f64,
    pub loss_depth: f64,
    pub lambda_mask: f64,
    pub train_psnr: f64,
    pub rolled_back: bool,
}

pub struct Trainer {
    pub model: Model,
    pub data: Dataset,
    pub train_views: Vec<usize>,
    pub test_views: Vec<usize>,
    pub opt: Adam,
    /// Iterations abandoned because the forward or backward pass went
    /// non-finite.
    pub faults: usize,
    view_rng: ChaCha8Rng,
    densify_rng: ChaCha8Rng,
    epoch: Vec<usize>,
    stats: Rc<RefCell<DensifyStats>>,
    /// Center learning rate is expressed in scene units.
    extent: f64,
}

impl Trainer {
    pub fn new(config: TrainConfig, data: Dataset) -> Trainer {
        let model = Model::new(config.clone(), &data);
        let (train_views, test_views) = train_test_split(data.spec.views);
        let n = model.n_gaussians();
        let extent = scene_extent(&data.points.positions);
        Trainer {
            model,
            data,
            train_views,
            test_views,
            opt: Adam::new(),
            faults: 0,
            view_rng: ChaCha8Rng::seed_from_u64(config.seed ^ 0x51ab),
            densify_rng: ChaCha8Rng::seed_from_u64(config.seed ^ 0xde5f),
            epoch: Vec::new(),
            stats: Rc::new(RefCell::new(DensifyStats::new(n))),
            extent,
        }
    }

    /// Next view, random order without replacement within each epoch.
    fn next_view(&mut self) -> usize {
        if self.epoch.is_empty() {
            self.epoch = self.train_views.clone();
            self.epoch.shuffle(&mut self.view_rng);
        }
        self.epoch.pop().expect("no training views")
    }

    /// Runs the whole schedule, writing one tab-separated metrics line per
    /// logging interval.
    pub fn run(&mut self, log: &mut dyn Write) -> Result<()> {
        writeln!(log, "iter\tloss_photo\tloss_mask\tloss_depth\tlambda_mask\ttrain_psnr")
            .map_err(|e| crate::error::Error::io("<metrics log>", e))?;
        let iters = self.model.config.iters;
        for iter in 0..iters {
            let s = self.step(iter);
            if iter % self.model.config.log_every == 0 || iter + 1 == iters {
                writeln!(
                    log,
                    "{iter}\t{}\t{}\t{}\t{}\t{}",
                    s.loss_photo, s.loss_mask, s.loss_depth, s.lambda_mask, s.train_psnr
                )
                .map_err(|e| crate::error::Error::io("<metrics log>", e))?;
            }
        }
        Ok(())
    }

    /// One optimization step; `iter` is zero-based.
    pub fn step(&mut self, iter: usize) -> StepLog {
        let view = self.next_view();
        let outcome = self.step_on_view(iter, view);
        self.model.set_iters_done(iter + 1);
        if self.densify_due(iter) {
            self.densify();
        }
        outcome
    }

    fn densify_due(&self, iter: usize) -> bool {
        let cfg = &self.model.config;
        let step = iter + 1;
        step % cfg.densify_interval == 0 && (step as f64) <= cfg.densify_until * cfg.iters as f64
    }

    fn step_on_view(&mut self, iter: usize, view: usize) -> StepLog {
        let cfg = self.model.config.clone();
        let warm = iter < cfg.warmup();
        let (w, h) = (self.data.spec.width, self.data.spec.height);
        let cam = self.data.cameras[view].clone();

        let mut tape = Tape::new();
        let staged = self.model.store.stage(&mut tape);
        let mut ctx = build_context(&mut tape, &staged, &self.model, &self.data, view, warm);
        let out5 = shade_and_render(
            &mut tape,
            &staged,
            &self.model,
            &ctx.appearance,
            &cam,
            warm,
            Some(self.stats.clone()),
        );
        let color = tape.slice_ch(out5, 0, 3);
        let target = tape.constant(&[3, h, w], self.data.images[view].clone());

        // warm-up trains photometry over the full frame
        let photo_mask = if warm || !cfg.use_mask {
            tape.constant(&[1, h, w], vec![1.0; w * h])
        } else {
            ctx.mask
        };
        let photo = masked_photometric_loss(&mut tape, color, target, photo_mask);
        let mut total = photo;
        let lambda = cfg.lambda_mask(iter);

        let mut log = StepLog { lambda_mask: lambda, ..Default::default() };
        if cfg.use_mask {
            let reg = mask_regularizer(&mut tape, ctx.mask);
            log.loss_mask = tape.scalar(reg);
            let weighted = tape.scale(reg, lambda);
            total = tape.add(total, weighted);
        }
        // pixels where the sensor saw nothing carry a zero sentinel and
        // must stay out of the correlation
        let depth_weights: Vec<f64> = {
            let mask_vals = tape.value(ctx.mask);
            let accum = &tape.value(out5)[4 * w * h..];
            mask_vals
                .iter()
                .zip(accum)
                .zip(&self.data.depths[view])
                .map(|((&m, &a), &g)| {
                    if m > cfg.mask_threshold && a > 0.5 && g > 0.0 {
                        1.0
                    } else {
                        0.0
                    }
                })
                .collect()
        };
        if cfg.use_depth && !warm && depth_weights.iter().sum::<f64>() >= 2.0 {
            let accum = tape.value(out5)[4 * w * h..].to_vec();
            // the depth term moves centers only: a second rasterize with
            // everything else detached keeps it from gaming the correlation
            // through opacity or footprint instead of actual geometry
            let depth = {
                let n = self.model.n_gaussians();
                let k = self.model.sh_count();
                let scales = tape
                    .constant(&[n, 3], self.model.store.get("gauss.log_scales").values.clone());
                let rots = tape
                    .constant(&[n, 4], self.model.store.get("gauss.rotations").values.clone());
                let opac =
                    tape.constant(&[n], self.model.store.get("gauss.opacity").values.clone());
                let sh = tape.constant(&[n, k * 3], vec![0.0; n * k * 3]);
                let op = RasterizeOp {
                    cam: cam.clone(),
                    sh_degree: cfg.sh_degree,
                    background: BACKGROUND,
                    tiled: true,
                    stats: None,
                };
                let centers = staged.id("gauss.centers");
                // the detached prepass rendered exactly these splats
                let d5 = match ctx.prepass.take() {
                    Some(pre) => op.record_with(&mut tape, centers, scales, rots, opac, sh, pre),
                    None => op.record(&mut tape, centers, scales, rots, opac, sh),
                };
                tape.slice_ch(d5, 3, 1)
            };
            // correlate expected depth, not alpha-weighted depth: divide out
            // the coverage (detached) so partially opaque pixels do not skew
            // the affine fit
            let inv: Vec<f64> =
                accum.iter().map(|&a| if a > 0.5 { 1.0 / a } else { 0.0 }).collect();
            let inv_cov = tape.constant(&[1, h, w], inv);
            let depth = tape.mul(depth, inv_cov);
            let d = depth_pearson_loss(&mut tape, depth, &self.data.depths[view], &depth_weights);
            log.loss_depth = tape.scalar(d);
            let weighted = tape.scale(d, cfg.lambda_depth);
            total = tape.add(total, weighted);
        }
        log.loss_photo = tape.scalar(photo);
        log.train_psnr = psnr(&tape.value(color).to_vec(), &self.data.images[view]);

        // snapshot densify stats so aborted iterations leave no trace
        let stats_before = self.stats.borrow().clone();
        tape.backward(total);

        if !tape.scalar(total).is_finite() || tape.fault().is_some() {
            *self.stats.borrow_mut() = stats_before;
            self.faults += 1;
            log.rolled_back = true;
            return log;
        }

        let names: Vec<String> = self.model.store.names().to_vec();
        for name in names {
            if name.starts_with("meta.") {
                continue;
            }
            let Some(lr) = self.lr_for(&name) else { continue };
            let grad = tape.grad(staged.id(&name)).to_vec();
            self.opt.step(&mut self.model.store, &name, &grad, lr);
        }
        log
    }

    fn lr_for(&self, name: &str) -> Option<f64> {
        let cfg = &self.model.config;
        Some(match name {
            "gauss.centers" => cfg.lr_center * self.extent,
            "gauss.log_scales" => cfg.lr_scale,
            "gauss.rotations" => cfg.lr_rotation,
            "gauss.opacity" => cfg.lr_opacity,
            "gauss.intrinsic" => cfg.lr_intrinsic,
            _ => cfg.lr_nets,
        })
    }

    fn densify(&mut self) {
        let cfg = &self.model.config;
        let opts = DensifyOpts { max_gaussians: cfg.max_gaussians, ..Default::default() };
        let cloud = self.model.cloud();
        let stats = self.stats.borrow().clone();
        let (new_cloud, sources) = densify_and_prune(&cloud, &stats, &opts, &mut self.densify_rng);
        self.model.write_cloud(&new_cloud);
        self.opt.remap("gauss.centers", &sources, 3);
        self.opt.remap("gauss.log_scales", &sources, 3);
        self.opt.remap("gauss.rotations", &sources, 4);
        self.opt.remap("gauss.opacity", &sources, 1);
        self.opt.remap("gauss.intrinsic", &sources, new_cloud.intrinsic_dim);
        *self.stats.borrow_mut() = DensifyStats::new(new_cloud.len());
    }
}

/// Half the diagonal of the initial point cloud's bounding box.
pub(crate) fn scene_extent(positions: &[f64]) -> f64 {
    let mut min = [f64::INFINITY; 3];
    let mut max = [f64::NEG_INFINITY; 3];
    for p in positions.chunks_exact(3) {
        for a in 0..3 {
            min[a] = min[a].min(p[a]);
            max[a] = max[a].max(p[a]);
        }
    }
    let d: f64 = (0..3).map(|a| (max[a] - min[a]).powi(2)).sum::<f64>().sqrt();
    (d * 0.5).max(1e-6)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{load_dataset, save_checkpoint, write_dataset};
    use crate::scenegen::SceneSpec;
    use crate::train::{render_blend, render_view};

    fn tiny_data() -> Dataset {
        let dir = tempfile::tempdir().unwrap();
        let spec = SceneSpec { width: 24, height: 16, views: 8, points: 80, ..Default::default() };
        write_dataset(&spec, dir.path()).unwrap();
        load_dataset(dir.path()).unwrap()
    }

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            iters: 14,
            warmup_iters: 4,
            densify_interval: 6,
            triplane_resolution: 8,
            parse_base: 4,
            parse_depth: 2,
            encoder_base: 4,
            encoder_depth: 2,
            hidden: 8,
            log_every: 5,
            ..Default::default()
        }
    }

    #[test]
    fn short_run_is_finite_and_deterministic() {
        let data = tiny_data();
        let mut sink1 = Vec::new();
        let mut t1 = Trainer::new(tiny_config(), data.clone());
        t1.run(&mut sink1).unwrap();
        assert_eq!(t1.faults, 0, "training produced numeric faults");
        assert_eq!(t1.model.iters_done(), 14);

        let mut sink2 = Vec::new();
        let mut t2 = Trainer::new(tiny_config(), data);
        t2.run(&mut sink2).unwrap();
        assert_eq!(sink1, sink2, "metrics logs differ between identical runs");

        let d1 = tempfile::NamedTempFile::new().unwrap();
        let d2 = tempfile::NamedTempFile::new().unwrap();
        save_checkpoint(d1.path(), &t1.model.store).unwrap();
        save_checkpoint(d2.path(), &t2.model.store).unwrap();
        let b1 = std::fs::read(d1.path()).unwrap();
        let b2 = std::fs::read(d2.path()).unwrap();
        assert_eq!(b1, b2, "checkpoints differ between identical runs");
    }

    #[test]
    fn warmup_ignores_the_triplane_weights() {
        let data = tiny_data();
        let mut t = Trainer::new(tiny_config(), data.clone());
        for i in 0..3 {
            t.step(i);
        }
        assert!(t.model.in_warmup());
        let before = render_view(&t.model, &data, 0, 1);
        // scramble every plane-encoder weight; a warm-up render must not move
        let names: Vec<String> =
            t.model.store.names().iter().filter(|n| n.starts_with("plane.")).cloned().collect();
        assert!(!names.is_empty());
        for n in &names {
            for v in &mut t.model.store.get_mut(n).values {
                *v += 123.456;
            }
        }
        let after = render_view(&t.model, &data, 0, 1);
        assert_eq!(before.color, after.color);
    }

    #[test]
    fn blend_endpoint_matches_plain_render_bitwise() {
        let data = tiny_data();
        let mut t = Trainer::new(tiny_config(), data.clone());
        for i in 0..6 {
            t.step(i);
        }
        assert!(!t.model.in_warmup());
        let plain = render_view(&t.model, &data, 0, 1);
        let blend0 = render_blend(&t.model, &data, 0, 1, 3, 0.0);
        let blend1 = render_blend(&t.model, &data, 0, 3, 1, 1.0);
        assert_eq!(plain.color, blend0.color);
        assert_eq!(plain.color, blend1.color);
    }

    #[test]
    fn densification_resizes_every_per_gaussian_block() {
        let data = tiny_data();
        let mut cfg = tiny_config();
        cfg.iters = 8;
        let mut t = Trainer::new(cfg, data);
        for i in 0..8 {
            t.step(i);
        }
        let n = t.model.n_gaussians();
        assert_eq!(t.model.store.get("gauss.centers").shape, vec![n, 3]);
        assert_eq!(t.model.store.get("gauss.intrinsic").shape[0], n);
        t.model.cloud(); // validates internally
    }
}
