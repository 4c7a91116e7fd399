use std::cell::RefCell;
use std::rc::Rc;

use super::camera::Camera;
use super::cloud::DensifyStats;
use super::project::{self, Projected, ProjectedGrad};
use super::sh;
use crate::diff::{CustomOp, Tape, TensorId};

/// Per-pixel contributions with effective alpha below this are skipped in
/// both the reference and tiled paths. Shared skip semantics plus a
/// conservative tile radius make the two renderers bitwise identical.
pub const ALPHA_MIN: f64 = 1e-12;

/// Front-to-back compositing stops once transmittance drops below this.
pub const T_STOP: f64 = 1e-4;

/// Projected covariances with determinant at or below this are skipped.
pub const DET_MIN: f64 = 1e-12;

const TILE: usize = 16;

/// One visible Gaussian readied for compositing. `index` is the position in
/// the original cloud arrays; depth ties break on it ascending.
#[derive(Clone, Debug)]
pub struct Splat {
    pub index: usize,
    pub center2d: [f64; 2],
    pub conic: [f64; 3], // inverse cov2d as (xx, xy, yy)
    pub depth: f64,
    pub opacity: f64,
    pub color: [f64; 3],
    pub radius: f64,
    /// Mahalanobis power below which the splat's alpha falls under
    /// [`ALPHA_MIN`]; lets compositing skip the exp outside the support.
    pub power_floor: f64,
    pub dir: [f64; 3],
    pub dir_len: f64,
    pub proj: Projected,
}

/// Planar render buffers: color is (3, h, w), depth and accum are (h, w).
#[derive(Clone, Debug)]
pub struct RenderOutput {
    pub color: Vec<f64>,
    pub depth: Vec<f64>,
    pub accum: Vec<f64>,
    pub width: usize,
    pub height: usize,
}

/// Raw parameter slices for a cloud of `n` Gaussians. `sh` holds
/// `num_coeffs(sh_degree) * 3` values per Gaussian, coefficient-major.
#[derive(Clone, Copy)]
pub struct SplatParams<'a> {
    pub centers: &'a [f64],
    pub log_scales: &'a [f64],
    pub rotations: &'a [f64],
    pub opacity_logits: &'a [f64],
    pub sh: &'a [f64],
    pub sh_degree: usize,
}

impl<'a> SplatParams<'a> {
    pub fn len(&self) -> usize {
        self.opacity_logits.len()
    }
}

/// Projects, culls and sorts the cloud front to back.
pub fn prepare_splats(cam: &Camera, p: &SplatParams) -> Vec<Splat> {
    let n = p.len();
    let k3 = sh::num_coeffs(p.sh_degree) * 3;
    assert_eq!(p.sh.len(), n * k3);
    let eye = cam.center();
    let mut splats = Vec::with_capacity(n);
    for i in 0..n {
        let center = [p.centers[i * 3], p.centers[i * 3 + 1], p.centers[i * 3 + 2]];
        let ls = [p.log_scales[i * 3], p.log_scales[i * 3 + 1], p.log_scales[i * 3 + 2]];
        let rot = [
            p.rotations[i * 4],
            p.rotations[i * 4 + 1],
            p.rotations[i * 4 + 2],
            p.rotations[i * 4 + 3],
        ];
        let proj = match project::project(cam, &center, &ls, &rot) {
            Some(pr) => pr,
            None => continue,
        };
        let [a, b, c] = proj.cov2d;
        let det = a * c - b * b;
        if det <= DET_MIN {
            continue;
        }
        let opacity = 1.0 / (1.0 + (-p.opacity_logits[i]).exp());
        if opacity <= ALPHA_MIN {
            continue;
        }
        let conic = [c / det, -b / det, a / det];
        let (lmax, _) = super::math::sym2_eigenvalues(a, b, c);
        let radius = (2.0 * lmax * (opacity / ALPHA_MIN).ln()).max(0.0).sqrt() + 1.0;
        let power_floor = (ALPHA_MIN / opacity).ln();

        let raw = [center[0] - eye[0], center[1] - eye[1], center[2] - eye[2]];
        let dir_len = (raw[0] * raw[0] + raw[1] * raw[1] + raw[2] * raw[2]).sqrt();
        let dir = if dir_len > 0.0 {
            [raw[0] / dir_len, raw[1] / dir_len, raw[2] / dir_len]
        } else {
            [0.0, 0.0, 1.0]
        };
        let color = sh::eval(p.sh_degree, &p.sh[i * k3..(i + 1) * k3], &dir);

        splats.push(Splat {
            index: i,
            center2d: proj.center2d,
            conic,
            depth: proj.depth,
            opacity,
            color,
            radius,
            power_floor,
            dir,
            dir_len,
            proj,
        });
    }
    // stable sort keeps ascending cloud index on equal depth
    splats.sort_by(|x, y| x.depth.total_cmp(&y.depth));
    splats
}

#[inline]
fn splat_alpha(s: &Splat, px: f64, py: f64) -> f64 {
    let dx = px - s.center2d[0];
    let dy = py - s.center2d[1];
    let power = -0.5 * (s.conic[0] * dx * dx + s.conic[2] * dy * dy) - s.conic[1] * dx * dy;
    if power < s.power_floor {
        return 0.0;
    }
    s.opacity * power.exp()
}

#[inline]
fn composite_pixel<'a>(
    order: impl Iterator<Item = &'a Splat>,
    px: f64,
    py: f64,
    background: &[f64; 3],
) -> ([f64; 3], f64, f64) {
    let mut t = 1.0;
    let mut rgb = [0.0f64; 3];
    let mut depth = 0.0;
    let mut accum = 0.0;
    for s in order {
        let alpha = splat_alpha(s, px, py);
        if alpha < ALPHA_MIN {
            continue;
        }
        let w = t * alpha;
        rgb[0] += w * s.color[0];
        rgb[1] += w * s.color[1];
        rgb[2] += w * s.color[2];
        depth += w * s.depth;
        accum += w;
        t *= 1.0 - alpha;
        if t < T_STOP {
            break;
        }
    }
    rgb[0] += t * background[0];
    rgb[1] += t * background[1];
    rgb[2] += t * background[2];
    (rgb, depth, accum)
}

/// Reference renderer: every pixel walks the full sorted list.
pub fn render_reference(cam: &Camera, splats: &[Splat], background: &[f64; 3]) -> RenderOutput {
    let (w, h) = (cam.width, cam.height);
    let mut out = RenderOutput {
        color: vec![0.0; 3 * w * h],
        depth: vec![0.0; w * h],
        accum: vec![0.0; w * h],
        width: w,
        height: h,
    };
    for y in 0..h {
        for x in 0..w {
            let (rgb, d, a) = composite_pixel(splats.iter(), x as f64 + 0.5, y as f64 + 0.5, background);
            let pix = y * w + x;
            for ch in 0..3 {
                out.color[ch * w * h + pix] = rgb[ch];
            }
            out.depth[pix] = d;
            out.accum[pix] = a;
        }
    }
    out
}

/// Tile-binned renderer. Bins preserve the global depth order and the inner
/// arithmetic is shared with the reference path, so outputs are bitwise
/// equal to [`render_reference`].
pub fn render_tiled(cam: &Camera, splats: &[Splat], background: &[f64; 3]) -> RenderOutput {
    let (w, h) = (cam.width, cam.height);
    let tx = (w + TILE - 1) / TILE;
    let ty = (h + TILE - 1) / TILE;
    let mut bins: Vec<Vec<usize>> = vec![Vec::new(); tx * ty];
    for (si, s) in splats.iter().enumerate() {
        let x0 = ((s.center2d[0] - s.radius - 0.5).floor().max(0.0) as usize).min(w.saturating_sub(1)) / TILE;
        let x1 = ((s.center2d[0] + s.radius - 0.5).ceil().max(0.0) as usize).min(w.saturating_sub(1)) / TILE;
        let y0 = ((s.center2d[1] - s.radius - 0.5).floor().max(0.0) as usize).min(h.saturating_sub(1)) / TILE;
        let y1 = ((s.center2d[1] + s.radius - 0.5).ceil().max(0.0) as usize).min(h.saturating_sub(1)) / TILE;
        for by in y0..=y1 {
            for bx in x0..=x1 {
                bins[by * tx + bx].push(si);
            }
        }
    }
    let mut out = RenderOutput {
        color: vec![0.0; 3 * w * h],
        depth: vec![0.0; w * h],
        accum: vec![0.0; w * h],
        width: w,
        height: h,
    };
    for by in 0..ty {
        for bx in 0..tx {
            let bin = &bins[by * tx + bx];
            for y in by * TILE..((by + 1) * TILE).min(h) {
                for x in bx * TILE..((bx + 1) * TILE).min(w) {
                    let (rgb, d, a) = composite_pixel(
                        bin.iter().map(|&si| &splats[si]),
                        x as f64 + 0.5,
                        y as f64 + 0.5,
                        background,
                    );
                    let pix = y * w + x;
                    for ch in 0..3 {
                        out.color[ch * w * h + pix] = rgb[ch];
                    }
                    out.depth[pix] = d;
                    out.accum[pix] = a;
                }
            }
        }
    }
    out
}

/// Upstream gradients for a render, planar like [`RenderOutput`].
pub struct RenderGrad<'a> {
    pub d_color: &'a [f64],
    pub d_depth: &'a [f64],
    pub d_accum: &'a [f64],
}

/// Gradients w.r.t. the cloud parameter arrays, plus the screen-space
/// positional gradient norm per Gaussian (NDC units) used for densification.
#[derive(Clone, Debug)]
pub struct RasterGrads {
    pub d_centers: Vec<f64>,
    pub d_log_scales: Vec<f64>,
    pub d_rotations: Vec<f64>,
    pub d_opacity_logits: Vec<f64>,
    pub d_sh: Vec<f64>,
    pub ndc_grad_norm: Vec<f64>,
}

pub fn rasterize_backward(
    cam: &Camera,
    p: &SplatParams,
    splats: &[Splat],
    background: &[f64; 3],
    grad: &RenderGrad,
) -> RasterGrads {
    let n = p.len();
    let (w, h) = (cam.width, cam.height);
    let k3 = sh::num_coeffs(p.sh_degree) * 3;
    let mut g = RasterGrads {
        d_centers: vec![0.0; n * 3],
        d_log_scales: vec![0.0; n * 3],
        d_rotations: vec![0.0; n * 4],
        d_opacity_logits: vec![0.0; n],
        d_sh: vec![0.0; n * k3],
        ndc_grad_norm: vec![0.0; n],
    };
    // per-splat accumulators over all pixels
    let m = splats.len();
    let mut d_center2d = vec![[0.0f64; 2]; m];
    let mut d_conic = vec![[0.0f64; 3]; m];
    let mut d_depth = vec![0.0f64; m];
    let mut d_alpha_op = vec![0.0f64; m]; // dL/d opacity (pre-logit)
    let mut d_rgb = vec![[0.0f64; 3]; m];

    let mut contribs: Vec<(usize, f64, f64)> = Vec::new(); // (splat idx, alpha, T before)
    for y in 0..h {
        for x in 0..w {
            let pix = y * w + x;
            let gc = [
                grad.d_color[pix],
                grad.d_color[w * h + pix],
                grad.d_color[2 * w * h + pix],
            ];
            let gd = grad.d_depth[pix];
            let ga = grad.d_accum[pix];
            if gc == [0.0; 3] && gd == 0.0 && ga == 0.0 {
                continue;
            }
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);

            // replay the forward walk to recover contributions
            contribs.clear();
            let mut t = 1.0;
            for (si, s) in splats.iter().enumerate() {
                let alpha = splat_alpha(s, px, py);
                if alpha < ALPHA_MIN {
                    continue;
                }
                contribs.push((si, alpha, t));
                t *= 1.0 - alpha;
                if t < T_STOP {
                    break;
                }
            }
            let t_final = t;

            // reverse sweep with suffix sums of the downstream contributions
            let mut sc = [t_final * background[0], t_final * background[1], t_final * background[2]];
            let mut sd = 0.0;
            let mut sa = 0.0;
            for &(si, alpha, t_before) in contribs.iter().rev() {
                let s = &splats[si];
                let inv1m = 1.0 / (1.0 - alpha);
                let mut da = 0.0;
                if gc != [0.0; 3] {
                    for ch in 0..3 {
                        da += gc[ch] * (t_before * s.color[ch] - sc[ch] * inv1m);
                        d_rgb[si][ch] += gc[ch] * t_before * alpha;
                    }
                }
                da += gd * (t_before * s.depth - sd * inv1m);
                da += ga * (t_before - sa * inv1m);
                d_depth[si] += gd * t_before * alpha;

                // alpha = opacity * exp(power)
                let gexp = alpha / s.opacity; // exp(power)
                d_alpha_op[si] += da * gexp;
                let dpower = da * alpha;
                let dx = px - s.center2d[0];
                let dy = py - s.center2d[1];
                d_conic[si][0] += dpower * (-0.5 * dx * dx);
                d_conic[si][1] += dpower * (-dx * dy);
                d_conic[si][2] += dpower * (-0.5 * dy * dy);
                let ddx = dpower * (-(s.conic[0] * dx + s.conic[1] * dy));
                let ddy = dpower * (-(s.conic[1] * dx + s.conic[2] * dy));
                d_center2d[si][0] -= ddx;
                d_center2d[si][1] -= ddy;

                let wgt = t_before * alpha;
                if gc != [0.0; 3] {
                    for ch in 0..3 {
                        sc[ch] += wgt * s.color[ch];
                    }
                }
                sd += wgt * s.depth;
                sa += wgt;
            }
        }
    }

    for (si, s) in splats.iter().enumerate() {
        let i = s.index;
        // a splat that touched no gradient-carrying pixel contributes exact
        // zeros everywhere; skipping it changes nothing
        if d_center2d[si] == [0.0; 2]
            && d_conic[si] == [0.0; 3]
            && d_depth[si] == 0.0
            && d_alpha_op[si] == 0.0
            && d_rgb[si] == [0.0; 3]
        {
            continue;
        }
        // conic is the inverse of cov2d: dSigma' = -K dK K with K symmetric
        let k = [s.conic[0], s.conic[1], s.conic[1], s.conic[2]];
        let dk = [d_conic[si][0], 0.5 * d_conic[si][1], 0.5 * d_conic[si][1], d_conic[si][2]];
        let mut kdk = [0.0f64; 4];
        for r in 0..2 {
            for c in 0..2 {
                kdk[r * 2 + c] = k[r * 2] * dk[c] + k[r * 2 + 1] * dk[2 + c];
            }
        }
        let mut dcov = [0.0f64; 4];
        for r in 0..2 {
            for c in 0..2 {
                dcov[r * 2 + c] = -(kdk[r * 2] * k[c] + kdk[r * 2 + 1] * k[2 + c]);
            }
        }
        let pg = ProjectedGrad {
            d_center2d: d_center2d[si],
            d_cov2d: [dcov[0], dcov[1] + dcov[2], dcov[3]],
            d_depth: d_depth[si],
        };
        let ls = [p.log_scales[i * 3], p.log_scales[i * 3 + 1], p.log_scales[i * 3 + 2]];
        let rot = [
            p.rotations[i * 4],
            p.rotations[i * 4 + 1],
            p.rotations[i * 4 + 2],
            p.rotations[i * 4 + 3],
        ];
        let pback = project::project_backward(cam, &ls, &rot, &s.proj, &pg);
        for a in 0..3 {
            g.d_centers[i * 3 + a] += pback.d_center[a];
            g.d_log_scales[i * 3 + a] += pback.d_log_scale[a];
        }
        for a in 0..4 {
            g.d_rotations[i * 4 + a] += pback.d_rot[a];
        }

        let op = s.opacity;
        g.d_opacity_logits[i] += d_alpha_op[si] * op * (1.0 - op);

        if d_rgb[si] != [0.0; 3] {
            let d_dir = sh::eval_backward(
                p.sh_degree,
                &p.sh[i * k3..(i + 1) * k3],
                &s.dir,
                &s.color,
                &d_rgb[si],
                &mut g.d_sh[i * k3..(i + 1) * k3],
            );
            if s.dir_len > 0.0 {
                // normalize backward: (I - d d^T) / r
                let dot = d_dir[0] * s.dir[0] + d_dir[1] * s.dir[1] + d_dir[2] * s.dir[2];
                for a in 0..3 {
                    g.d_centers[i * 3 + a] += (d_dir[a] - s.dir[a] * dot) / s.dir_len;
                }
            }
        }

        let gx = d_center2d[si][0] * cam.width as f64 * 0.5;
        let gy = d_center2d[si][1] * cam.height as f64 * 0.5;
        g.ndc_grad_norm[i] = (gx * gx + gy * gy).sqrt();
    }
    g
}

/// Tape-integrated rasterization. Inputs, in order: centers (n,3),
/// log scales (n,3), rotations (n,4), opacity logits (n,), sh (n, k*3).
/// Output is (5, h, w): three color planes, depth, accumulation.
pub struct RasterizeOp {
    pub cam: Camera,
    pub sh_degree: usize,
    pub background: [f64; 3],
    pub tiled: bool,
    /// Optional sink for densification statistics; filled during backward.
    pub stats: Option<Rc<RefCell<DensifyStats>>>,
}

impl RasterizeOp {
    fn params<'a>(&self, inputs: &[(&'a [f64], &'a [usize])]) -> SplatParams<'a> {
        SplatParams {
            centers: inputs[0].0,
            log_scales: inputs[1].0,
            rotations: inputs[2].0,
            opacity_logits: inputs[3].0,
            sh: inputs[4].0,
            sh_degree: self.sh_degree,
        }
    }

    pub fn forward(&self, p: &SplatParams) -> RenderOutput {
        let splats = prepare_splats(&self.cam, p);
        if self.tiled {
            render_tiled(&self.cam, &splats, &self.background)
        } else {
            render_reference(&self.cam, &splats, &self.background)
        }
    }

    /// Records the op on the tape and returns the output tensor id.
    pub fn record(
        self,
        tape: &mut Tape,
        centers: TensorId,
        log_scales: TensorId,
        rotations: TensorId,
        opacity_logits: TensorId,
        sh: TensorId,
    ) -> TensorId {
        let p = SplatParams {
            centers: tape.value(centers),
            log_scales: tape.value(log_scales),
            rotations: tape.value(rotations),
            opacity_logits: tape.value(opacity_logits),
            sh: tape.value(sh),
            sh_degree: self.sh_degree,
        };
        let out = self.forward(&p);
        self.record_with(tape, centers, log_scales, rotations, opacity_logits, sh, out)
    }

    /// Records the op with a forward output that was already computed for
    /// exactly these inputs and settings. The caller vouches for the match;
    /// the backward pass re-derives everything else from the inputs.
    pub fn record_with(
        self,
        tape: &mut Tape,
        centers: TensorId,
        log_scales: TensorId,
        rotations: TensorId,
        opacity_logits: TensorId,
        sh: TensorId,
        out: RenderOutput,
    ) -> TensorId {
        let (w, h) = (out.width, out.height);
        assert_eq!((w, h), (self.cam.width, self.cam.height));
        let mut vals = out.color;
        vals.extend_from_slice(&out.depth);
        vals.extend_from_slice(&out.accum);
        tape.custom(
            &[centers, log_scales, rotations, opacity_logits, sh],
            Box::new(self),
            &[5, h, w],
            vals,
        )
    }
}

impl CustomOp for RasterizeOp {
    fn name(&self) -> &'static str {
        "rasterize"
    }

    fn backward(&self, inputs: &[(&[f64], &[usize])], out_grad: &[f64]) -> Vec<Vec<f64>> {
        let p = self.params(inputs);
        let splats = prepare_splats(&self.cam, &p);
        let (w, h) = (self.cam.width, self.cam.height);
        let grad = RenderGrad {
            d_color: &out_grad[..3 * w * h],
            d_depth: &out_grad[3 * w * h..4 * w * h],
            d_accum: &out_grad[4 * w * h..],
        };
        let g = rasterize_backward(&self.cam, &p, &splats, &self.background, &grad);
        if let Some(stats) = &self.stats {
            let mut st = stats.borrow_mut();
            if st.grad_norm_sum.len() == p.len() {
                for (i, &nrm) in g.ndc_grad_norm.iter().enumerate() {
                    if nrm > 0.0 {
                        st.grad_norm_sum[i] += nrm;
                        st.observations[i] += 1;
                    }
                }
            }
        }
        vec![g.d_centers, g.d_log_scales, g.d_rotations, g.d_opacity_logits, g.d_sh]
    }
}
