use std::cell::RefCell;
use std::fmt::Write as _;
use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::appearance::{
    backproject_masked, blend_appearance, encode_global, fuse_to_sh, sample_local_embedding,
    splat_triplane_color, triplane_encode, Aabb, AppearanceContext, TriplaneFeatures,
    FEATURE_CHANNELS, GLOBAL_DIM, INTRINSIC_DIM, LOCAL_DIM,
};
use crate::dataset::Dataset;
use crate::diff::{Tape, TensorId};
use crate::error::{Error, Result};
use crate::gauss::{Camera, DensifyStats, GaussianCloud, RasterizeOp, RenderOutput, SplatParams};
use crate::nn::{normal, Mlp, ParamStore, Staged, UNet};
use crate::train::{psnr, ssim, TrainConfig};
use crate::transient::ParsingNet;

pub const BACKGROUND: [f64; 3] = [0.0, 0.0, 0.0];

const OPACITY_INIT: f64 = 0.1;
const INTRINSIC_INIT_STD: f64 = 0.1;
const SCALE_CLAMP: (f64, f64) = (1e-3, 0.3);

/// The trainable scene: Gaussian parameters plus every network, all living
/// in one [`ParamStore`] so checkpoints are a single deterministic blob.
pub struct Model {
    pub config: TrainConfig,
    pub store: ParamStore,
    pub parsing: ParsingNet,
    pub encoder: UNet,
    pub global_head: Mlp,
    pub local_head: Mlp,
    pub fuse_head: Mlp,
    pub aabb: Aabb,
}

impl Model {
    pub fn sh_count(&self) -> usize {
        (self.config.sh_degree + 1) * (self.config.sh_degree + 1)
    }

    pub fn n_gaussians(&self) -> usize {
        self.store.get("gauss.opacity").shape[0]
    }

    /// Completed training iterations, tracked inside the store so a
    /// checkpoint knows whether it is still in warm-up.
    pub fn iters_done(&self) -> usize {
        self.store.get("meta.iter").values[0] as usize
    }

    pub fn set_iters_done(&mut self, n: usize) {
        self.store.get_mut("meta.iter").values[0] = n as f64;
    }

    pub fn in_warmup(&self) -> bool {
        self.iters_done() < self.config.warmup()
    }

    fn nets(config: &TrainConfig) -> (ParsingNet, UNet, Mlp, Mlp, Mlp) {
        let parsing = ParsingNet::new("parse", config.parse_base, config.parse_depth);
        let encoder = UNet::new(
            "plane",
            crate::appearance::ENCODER_IN_CHANNELS,
            config.encoder_base,
            config.encoder_depth,
            FEATURE_CHANNELS,
        );
        let k = (config.sh_degree + 1) * (config.sh_degree + 1);
        let global_head = Mlp::new("ghead", &[parsing.bottleneck_ch(), config.hidden, GLOBAL_DIM]);
        let local_head = Mlp::new("lhead", &[FEATURE_CHANNELS, config.hidden, LOCAL_DIM]);
        let fuse_head =
            Mlp::new("fuse", &[GLOBAL_DIM + LOCAL_DIM + INTRINSIC_DIM, config.hidden, k * 3]);
        (parsing, encoder, global_head, local_head, fuse_head)
    }

    /// Fresh model seeded from the dataset's point cloud.
    pub fn new(config: TrainConfig, data: &Dataset) -> Model {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let pts = &data.points;
        let n = pts.len();
        assert!(n > 0, "cannot initialize from an empty point cloud");
        let aabb = Aabb::from_points(&pts.positions, config.crop_ratio);

        let mut store = ParamStore::new();
        store.register("gauss.centers", &[n, 3], pts.positions.clone());
        let scales = init_log_scales(&pts.positions);
        store.register("gauss.log_scales", &[n, 3], scales);
        let mut rots = Vec::with_capacity(n * 4);
        for _ in 0..n {
            rots.extend_from_slice(&[1.0, 0.0, 0.0, 0.0]);
        }
        store.register("gauss.rotations", &[n, 4], rots);
        let logit = (OPACITY_INIT / (1.0 - OPACITY_INIT)).ln();
        store.register("gauss.opacity", &[n], vec![logit; n]);
        let intr: Vec<f64> =
            (0..n * INTRINSIC_DIM).map(|_| normal(&mut rng) * INTRINSIC_INIT_STD).collect();
        store.register("gauss.intrinsic", &[n, INTRINSIC_DIM], intr);
        store.register("fallback.v", &[LOCAL_DIM], vec![0.0; LOCAL_DIM]);

        let (parsing, encoder, global_head, local_head, fuse_head) = Self::nets(&config);
        parsing.register(&mut store, &mut rng);
        encoder.register(&mut store, &mut rng);
        global_head.register(&mut store, &mut rng);
        local_head.register(&mut store, &mut rng);
        fuse_head.register(&mut store, &mut rng);

        let cfg_block = config.encode();
        store.register("meta.config", &[cfg_block.len()], cfg_block);
        let mut ab = aabb.min.to_vec();
        ab.extend_from_slice(&aabb.max);
        store.register("meta.aabb", &[6], ab);
        store.register("meta.iter", &[1], vec![0.0]);

        Model { config, store, parsing, encoder, global_head, local_head, fuse_head, aabb }
    }

    /// Rebuilds a model from a loaded checkpoint store.
    pub fn from_store(store: ParamStore) -> Result<Model> {
        if !store.contains("meta.config") {
            return Err(Error::Validation("checkpoint is missing its config block".into()));
        }
        let config = TrainConfig::decode(&store.get("meta.config").values)?;
        let ab = &store.get("meta.aabb").values;
        if ab.len() != 6 {
            return Err(Error::Validation("checkpoint aabb block must have 6 values".into()));
        }
        let aabb = Aabb { min: [ab[0], ab[1], ab[2]], max: [ab[3], ab[4], ab[5]] };
        let (parsing, encoder, global_head, local_head, fuse_head) = Self::nets(&config);
        for required in ["gauss.centers", "gauss.opacity", "meta.iter", "fallback.v"] {
            if !store.contains(required) {
                return Err(Error::Validation(format!("checkpoint is missing {required}")));
            }
        }
        Ok(Model { config, store, parsing, encoder, global_head, local_head, fuse_head, aabb })
    }

    pub fn cloud(&self) -> GaussianCloud {
        let cloud = GaussianCloud {
            centers: self.store.get("gauss.centers").values.clone(),
            log_scales: self.store.get("gauss.log_scales").values.clone(),
            rotations: self.store.get("gauss.rotations").values.clone(),
            opacity_logits: self.store.get("gauss.opacity").values.clone(),
            intrinsics: self.store.get("gauss.intrinsic").values.clone(),
            intrinsic_dim: INTRINSIC_DIM,
        };
        cloud.validate();
        cloud
    }

    pub fn write_cloud(&mut self, cloud: &GaussianCloud) {
        let n = cloud.len();
        self.store.replace("gauss.centers", &[n, 3], cloud.centers.clone());
        self.store.replace("gauss.log_scales", &[n, 3], cloud.log_scales.clone());
        self.store.replace("gauss.rotations", &[n, 4], cloud.rotations.clone());
        self.store.replace("gauss.opacity", &[n], cloud.opacity_logits.clone());
        self.store.replace("gauss.intrinsic", &[n, INTRINSIC_DIM], cloud.intrinsics.clone());
    }
}

/// Per-point isotropic scale from the nearest-neighbor distance, clamped to
/// a sane range for a desk-sized scene.
fn init_log_scales(positions: &[f64]) -> Vec<f64> {
    let n = positions.len() / 3;
    let mut out = Vec::with_capacity(n * 3);
    for i in 0..n {
        let pi = &positions[i * 3..i * 3 + 3];
        let mut best = f64::INFINITY;
        for j in 0..n {
            if i == j {
                continue;
            }
            let pj = &positions[j * 3..j * 3 + 3];
            let d2 = (pi[0] - pj[0]).powi(2) + (pi[1] - pj[1]).powi(2) + (pi[2] - pj[2]).powi(2);
            if d2 < best {
                best = d2;
            }
        }
        let s = best.sqrt().clamp(SCALE_CLAMP.0, SCALE_CLAMP.1).ln();
        out.extend_from_slice(&[s, s, s]);
    }
    out
}

/// Everything extracted from one reference image in one tape lifetime.
pub struct ViewContext {
    pub appearance: AppearanceContext,
    /// (1, h, w); constant ones when mask prediction is disabled.
    pub mask: TensorId,
    /// Detached geometry prepass (zeroed colors), when one was run; lets the
    /// caller reuse it instead of rasterizing the same splats again.
    pub prepass: Option<RenderOutput>,
}

/// Runs the reference image through the parsing net, builds the triplane
/// from masked back-projection, and assembles the appearance context.
pub fn build_context(
    tape: &mut Tape,
    staged: &Staged,
    model: &Model,
    data: &Dataset,
    ref_view: usize,
    warm: bool,
) -> ViewContext {
    let cfg = &model.config;
    let (w, h) = (data.spec.width, data.spec.height);
    let image = &data.images[ref_view];
    let cam = &data.cameras[ref_view];

    let (mask, bottleneck) = if cfg.use_mask || cfg.use_global {
        let img = tape.constant(&[3, h, w], image.clone());
        let out = model.parsing.forward(tape, staged, img);
        (out.mask, Some(out.bottleneck))
    } else {
        (tape.constant(&[1, h, w], vec![1.0; w * h]), None)
    };
    let mask = if cfg.use_mask {
        mask
    } else {
        tape.constant(&[1, h, w], vec![1.0; w * h])
    };

    let global = if cfg.use_global {
        encode_global(tape, staged, &model.global_head, bottleneck.expect("parsing ran"))
    } else {
        tape.constant(&[1, GLOBAL_DIM], vec![0.0; GLOBAL_DIM])
    };

    let mut prepass = None;
    let features = if cfg.use_local && !warm {
        // depth never depends on the coefficients, so the geometry prepass
        // runs with zeroed colors and entirely off the tape
        let n = model.n_gaussians();
        let zeros_sh = vec![0.0; n * model.sh_count() * 3];
        let op = RasterizeOp {
            cam: cam.clone(),
            sh_degree: cfg.sh_degree,
            background: BACKGROUND,
            tiled: true,
            stats: None,
        };
        let pre = op.forward(&SplatParams {
            centers: &model.store.get("gauss.centers").values,
            log_scales: &model.store.get("gauss.log_scales").values,
            rotations: &model.store.get("gauss.rotations").values,
            opacity_logits: &model.store.get("gauss.opacity").values,
            sh: &zeros_sh,
            sh_degree: cfg.sh_degree,
        });
        let mask_vals = tape.value(mask).to_vec();
        let pts = backproject_masked(cam, image, &mask_vals, &pre.depth, &pre.accum, cfg.mask_threshold);
        let tri = splat_triplane_color(&pts, &model.aabb, cfg.triplane_resolution);
        prepass = Some(pre);
        triplane_encode(tape, staged, &model.encoder, &tri)
    } else {
        let r = cfg.triplane_resolution;
        let planes = std::array::from_fn(|_| tape.constant(&[FEATURE_CHANNELS, r, r], vec![0.0; FEATURE_CHANNELS * r * r]));
        TriplaneFeatures { resolution: r, planes }
    };

    let fallback = staged.id("fallback.v");
    ViewContext { appearance: AppearanceContext { global, features, fallback }, mask, prepass }
}

/// Shades every Gaussian under the given appearance and rasterizes to a
/// (5,h,w) tensor: rgb, alpha-weighted depth, accumulated alpha.
pub fn shade_and_render(
    tape: &mut Tape,
    staged: &Staged,
    model: &Model,
    ctx: &AppearanceContext,
    cam: &Camera,
    warm: bool,
    stats: Option<Rc<RefCell<DensifyStats>>>,
) -> TensorId {
    let cfg = &model.config;
    let n = model.n_gaussians();
    let local = if cfg.use_local && !warm {
        let centers = model.store.get("gauss.centers").values.clone();
        sample_local_embedding(
            tape,
            staged,
            &model.local_head,
            &ctx.features,
            ctx.fallback,
            &centers,
            &model.aabb,
        )
    } else {
        tape.broadcast_row(ctx.fallback, n)
    };
    let sh = fuse_to_sh(tape, staged, &model.fuse_head, ctx.global, local, staged.id("gauss.intrinsic"));
    let op = RasterizeOp {
        cam: cam.clone(),
        sh_degree: cfg.sh_degree,
        background: BACKGROUND,
        tiled: true,
        stats,
    };
    op.record(
        tape,
        staged.id("gauss.centers"),
        staged.id("gauss.log_scales"),
        staged.id("gauss.rotations"),
        staged.id("gauss.opacity"),
        sh,
    )
}

/// A detached render: planar (3,h,w) color.
pub struct Rendered {
    pub color: Vec<f64>,
    pub width: usize,
    pub height: usize,
}

/// Renders the camera of `view` under the appearance of `ref_view`.
pub fn render_view(model: &Model, data: &Dataset, view: usize, ref_view: usize) -> Rendered {
    render_blend(model, data, view, ref_view, ref_view, 0.0)
}

/// Renders `view` under a blend of two reference appearances. A weight of
/// zero reproduces `render_view(.., ref_a)` bit for bit.
pub fn render_blend(
    model: &Model,
    data: &Dataset,
    view: usize,
    ref_a: usize,
    ref_b: usize,
    alpha: f64,
) -> Rendered {
    let warm = model.in_warmup();
    let mut tape = Tape::new();
    let staged = model.store.stage(&mut tape);
    let ca = build_context(&mut tape, &staged, model, data, ref_a, warm);
    let blended = if alpha == 0.0 && ref_a == ref_b {
        ca.appearance
    } else {
        let cb = build_context(&mut tape, &staged, model, data, ref_b, warm);
        blend_appearance(&mut tape, &ca.appearance, &cb.appearance, alpha)
    };
    let out = shade_and_render(&mut tape, &staged, model, &blended, &data.cameras[view], warm, None);
    let (w, h) = (data.spec.width, data.spec.height);
    Rendered { color: tape.value(out)[..3 * w * h].to_vec(), width: w, height: h }
}

/// Deterministic reference pick for evaluating a held-out view: the first
/// training view showing the same appearance variant, preferring clean ones.
pub fn pick_reference(data: &Dataset, train_views: &[usize], view: usize) -> usize {
    let want = data.spec.variant_of(view);
    let same: Vec<usize> =
        train_views.iter().copied().filter(|&v| data.spec.variant_of(v) == want).collect();
    same.iter().copied().find(|&v| !data.spec.view_occluded(v)).unwrap_or_else(|| {
        *same.first().unwrap_or_else(|| {
            panic!("no training view shares a variant with view {view}")
        })
    })
}

pub struct EvalRow {
    pub view: usize,
    pub reference: usize,
    pub psnr: f64,
    pub ssim: f64,
}

pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
}

impl EvalReport {
    pub fn to_text(&self) -> String {
        let mut s = String::from("view\tref\tpsnr\tssim\n");
        for r in &self.rows {
            writeln!(s, "{}\t{}\t{}\t{}", r.view, r.reference, r.psnr, r.ssim).unwrap();
        }
        writeln!(s, "mean_psnr\t{}", self.mean_psnr).unwrap();
        writeln!(s, "mean_ssim\t{}", self.mean_ssim).unwrap();
        s
    }
}

/// Held-out metrics over the given views.
pub fn evaluate(model: &Model, data: &Dataset, test_views: &[usize], train_views: &[usize]) -> EvalReport {
    let mut rows = Vec::with_capacity(test_views.len());
    let (mut sp, mut ss) = (0.0, 0.0);
    for &view in test_views {
        let reference = pick_reference(data, train_views, view);
        let r = render_view(model, data, view, reference);
        let p = psnr(&r.color, &data.images[view]);
        let s = ssim(&r.color, &data.images[view], r.width, r.height);
        sp += p;
        ss += s;
        rows.push(EvalRow { view, reference, psnr: p, ssim: s });
    }
    let n = rows.len().max(1) as f64;
    EvalReport { rows, mean_psnr: sp / n, mean_ssim: ss / n }
}
