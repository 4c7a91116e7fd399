use crate::diff::{Tape, TensorId};
use crate::gauss::Camera;
use crate::nn::{Staged, UNet};

use super::aabb::Aabb;

/// Colored point set, flat (n,3) positions and (n,3) rgb.
#[derive(Clone, Debug, Default)]
pub struct PointCloudRGB {
    pub positions: Vec<f64>,
    pub colors: Vec<f64>,
}

impl PointCloudRGB {
    pub fn len(&self) -> usize {
        self.positions.len() / 3
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Minimum accumulated opacity for a pixel's rendered depth to be trusted
/// during back-projection.
pub const ACCUM_CUTOFF: f64 = 0.5;

/// Lifts masked static pixels into world space using the rendered depth.
/// `image` is (3,h,w) planar, `mask`, `depth` and `accum` are (h,w).
/// Rendered depth is alpha-weighted, so it is renormalized by the
/// accumulation before unprojection.
pub fn backproject_masked(
    cam: &Camera,
    image: &[f64],
    mask: &[f64],
    depth: &[f64],
    accum: &[f64],
    mask_threshold: f64,
) -> PointCloudRGB {
    let (w, h) = (cam.width, cam.height);
    assert_eq!(image.len(), 3 * w * h);
    assert_eq!(mask.len(), w * h);
    assert_eq!(depth.len(), w * h);
    assert_eq!(accum.len(), w * h);
    let mut out = PointCloudRGB::default();
    for y in 0..h {
        for x in 0..w {
            let pix = y * w + x;
            if mask[pix] <= mask_threshold || accum[pix] <= ACCUM_CUTOFF {
                continue;
            }
            let z = depth[pix] / accum[pix];
            if !(z > 0.0) {
                continue;
            }
            let world = cam.unproject(x, y, z);
            out.positions.extend_from_slice(&world);
            out.colors.push(image[pix]);
            out.colors.push(image[w * h + pix]);
            out.colors.push(image[2 * w * h + pix]);
        }
    }
    out
}

/// Rasterized point-cloud projections: three planes (xy, xz, yz), each a
/// planar (6, R, R) buffer holding front rgb (channels 0..3, nearest point
/// along the dropped axis) and back rgb (channels 3..6, farthest point),
/// plus a (R, R) occupancy plane.
#[derive(Clone, Debug)]
pub struct TriplaneColor {
    pub resolution: usize,
    pub planes: [Vec<f64>; 3],
    pub occupancy: [Vec<f64>; 3],
}

pub const COLOR_CHANNELS: usize = 6;
/// Encoder input: color channels plus occupancy.
pub const ENCODER_IN_CHANNELS: usize = COLOR_CHANNELS + 1;
pub const FEATURE_CHANNELS: usize = 16;

/// Which point axes feed each plane's (u, v) and which axis is depth.
const PLANE_AXES: [(usize, usize, usize); 3] = [(0, 1, 2), (0, 2, 1), (1, 2, 0)];

/// Z-buffer splat of the cloud onto the three planes. Ties on depth break
/// on the rgb triple, so the result is invariant to point order.
pub fn splat_triplane_color(points: &PointCloudRGB, aabb: &Aabb, resolution: usize) -> TriplaneColor {
    assert!(resolution.is_power_of_two(), "triplane resolution must be a power of two");
    let r = resolution;
    let mut planes = [vec![0.0; COLOR_CHANNELS * r * r], vec![0.0; COLOR_CHANNELS * r * r], vec![0.0; COLOR_CHANNELS * r * r]];
    let mut occupancy = [vec![0.0; r * r], vec![0.0; r * r], vec![0.0; r * r]];
    // per-texel best keys: (depth, r, g, b); forward wants the minimum,
    // reverse the maximum
    let mut front: Vec<[f64; 4]> = vec![[f64::INFINITY; 4]; 3 * r * r];
    let mut back: Vec<[f64; 4]> = vec![[f64::NEG_INFINITY; 4]; 3 * r * r];
    for i in 0..points.len() {
        let p = [points.positions[i * 3], points.positions[i * 3 + 1], points.positions[i * 3 + 2]];
        if !aabb.contains(&p) {
            continue;
        }
        let npt = aabb.normalize(&p);
        let col = [points.colors[i * 3], points.colors[i * 3 + 1], points.colors[i * 3 + 2]];
        for (pi, &(ua, va, da)) in PLANE_AXES.iter().enumerate() {
            // align-corners texel grid, same convention as bilinear sampling
            let u = (npt[ua] * (r - 1) as f64).round() as usize;
            let v = (npt[va] * (r - 1) as f64).round() as usize;
            let tex = pi * r * r + v * r + u;
            let key = [npt[da], col[0], col[1], col[2]];
            if lex_less(&key, &front[tex]) {
                front[tex] = key;
            }
            if lex_less(&back[tex], &key) {
                back[tex] = key;
            }
        }
    }
    for pi in 0..3 {
        for t in 0..r * r {
            let f = &front[pi * r * r + t];
            if f[0].is_finite() {
                let b = &back[pi * r * r + t];
                occupancy[pi][t] = 1.0;
                for ch in 0..3 {
                    planes[pi][ch * r * r + t] = f[ch + 1];
                    planes[pi][(ch + 3) * r * r + t] = b[ch + 1];
                }
            }
        }
    }
    TriplaneColor { resolution, planes, occupancy }
}

fn lex_less(a: &[f64; 4], b: &[f64; 4]) -> bool {
    for k in 0..4 {
        if a[k] < b[k] {
            return true;
        }
        if a[k] > b[k] {
            return false;
        }
    }
    false
}

/// Encoded feature planes on the tape, each (FEATURE_CHANNELS, R, R).
#[derive(Clone, Copy, Debug)]
pub struct TriplaneFeatures {
    pub resolution: usize,
    pub planes: [TensorId; 3],
}

/// Runs the shared-weight plane encoder over the three color planes. The
/// splatted colors enter as constants; gradients reach only the encoder.
pub fn triplane_encode(tape: &mut Tape, staged: &Staged, encoder: &UNet, tri: &TriplaneColor) -> TriplaneFeatures {
    assert_eq!(encoder.in_ch, ENCODER_IN_CHANNELS);
    assert_eq!(encoder.out_ch, FEATURE_CHANNELS);
    let r = tri.resolution;
    let ids = std::array::from_fn(|pi| {
        let mut vals = tri.planes[pi].clone();
        vals.extend_from_slice(&tri.occupancy[pi]);
        let x = tape.constant(&[ENCODER_IN_CHANNELS, r, r], vals);
        encoder.forward(tape, staged, x).head
    });
    TriplaneFeatures { resolution: r, planes: ids }
}

/// Bilinearly samples the three feature planes at each point, sums them and
/// maps the result through the local-embedding head. Points outside the box
/// get the learned fallback vector exactly: their rows are masked to zero
/// and replaced, so no sampled value can perturb them.
pub fn sample_local_embedding(
    tape: &mut Tape,
    staged: &Staged,
    local_head: &crate::nn::Mlp,
    feats: &TriplaneFeatures,
    fallback: TensorId,
    points: &[f64],
    aabb: &Aabb,
) -> TensorId {
    assert!(points.len() % 3 == 0);
    let n = points.len() / 3;
    let dim = *local_head.dims.last().unwrap();
    let mut coords = [Vec::with_capacity(n * 2), Vec::with_capacity(n * 2), Vec::with_capacity(n * 2)];
    let mut inside = vec![0.0f64; n];
    for i in 0..n {
        let p = [points[i * 3], points[i * 3 + 1], points[i * 3 + 2]];
        if aabb.contains(&p) {
            inside[i] = 1.0;
        }
        let npt = aabb.normalize(&p);
        for (pi, &(ua, va, _)) in PLANE_AXES.iter().enumerate() {
            coords[pi].push(npt[ua]);
            coords[pi].push(npt[va]);
        }
    }
    let mut summed = None;
    for pi in 0..3 {
        let cid = tape.constant(&[n, 2], std::mem::take(&mut coords[pi]));
        let s = tape.grid_sample(feats.planes[pi], cid);
        summed = Some(match summed {
            None => s,
            Some(acc) => tape.add(acc, s),
        });
    }
    let emb = local_head.forward(tape, staged, summed.unwrap());
    assert_eq!(tape.shape(emb), &[n, dim]);

    let mask_rows: Vec<f64> = inside.iter().flat_map(|&m| std::iter::repeat(m).take(dim)).collect();
    let inv_rows: Vec<f64> = inside.iter().flat_map(|&m| std::iter::repeat(1.0 - m).take(dim)).collect();
    let mask = tape.constant(&[n, dim], mask_rows);
    let inv = tape.constant(&[n, dim], inv_rows);
    let vb = tape.broadcast_row(fallback, n);
    let kept = tape.mul(mask, emb);
    let filled = tape.mul(inv, vb);
    tape.add(kept, filled)
}
