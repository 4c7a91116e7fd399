use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::appearance::PointCloudRGB;
use crate::gauss::Camera;

use super::primitives::SceneModel;
use super::spec::SceneSpec;

/// Everything produced for one view: the toned (and possibly occluded)
/// image, the analytic pre-occluder depth, and the ground-truth visibility
/// mask (1 static, 0 occluder).
#[derive(Clone, Debug)]
pub struct ViewData {
    pub camera: Camera,
    /// (3, h, w) planar, values in [0,1]
    pub image: Vec<f64>,
    /// (h, w), view-space depth in meters
    pub depth: Vec<f64>,
    /// (h, w)
    pub mask: Vec<f64>,
}

/// Camera on the orbit for a given view index.
pub fn view_camera(spec: &SceneSpec, view: usize) -> Camera {
    let theta = std::f64::consts::TAU * view as f64 / spec.views as f64;
    let eye = [
        spec.orbit_radius * theta.sin(),
        spec.orbit_height,
        spec.orbit_radius * theta.cos(),
    ];
    Camera::look_at(
        eye,
        [0.0, -0.1, 0.0],
        [0.0, -1.0, 0.0],
        spec.focal,
        spec.focal,
        spec.width,
        spec.height,
    )
}

struct VariantTone {
    gain: [f64; 3],
    gamma: f64,
    wb: [f64; 3],
    spots: Vec<Spot>,
}

struct Spot {
    u: f64,
    v: f64,
    sigma: f64,
    amp: f64,
}

fn variant_tone(spec: &SceneSpec, variant: usize) -> VariantTone {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ (0xa99e + 131 * variant as u64));
    let gain = [
        rng.gen_range(0.7..1.3),
        rng.gen_range(0.7..1.3),
        rng.gen_range(0.7..1.3),
    ];
    let gamma = rng.gen_range(0.8..1.25);
    let wb = [
        rng.gen_range(0.85..1.15),
        rng.gen_range(0.85..1.15),
        rng.gen_range(0.85..1.15),
    ];
    let spots = (0..2)
        .map(|_| Spot {
            u: rng.gen_range(0.15..0.85),
            v: rng.gen_range(0.15..0.85),
            sigma: rng.gen_range(0.10..0.25),
            amp: rng.gen_range(0.15..0.45),
        })
        .collect();
    VariantTone { gain, gamma, wb, spots }
}

impl VariantTone {
    /// gain -> gamma -> white balance -> clamp, with local light spots
    /// applied up front in image space.
    fn apply(&self, rgb: [f64; 3], u: f64, v: f64) -> [f64; 3] {
        let mut lift = 1.0;
        for s in &self.spots {
            let du = u - s.u;
            let dv = v - s.v;
            lift += s.amp * (-(du * du + dv * dv) / (2.0 * s.sigma * s.sigma)).exp();
        }
        let mut out = [0.0; 3];
        for c in 0..3 {
            let g = (rgb[c] * lift * self.gain[c]).max(0.0);
            out[c] = (g.powf(self.gamma) * self.wb[c]).clamp(0.0, 1.0);
        }
        out
    }
}

struct Occluder {
    /// convex polygon vertices in pixel coordinates, counter-clockwise
    verts: Vec<[f64; 2]>,
    color: [f64; 3],
}

impl Occluder {
    fn covers(&self, px: f64, py: f64) -> bool {
        let n = self.verts.len();
        for i in 0..n {
            let a = self.verts[i];
            let b = self.verts[(i + 1) % n];
            let cross = (b[0] - a[0]) * (py - a[1]) - (b[1] - a[1]) * (px - a[0]);
            if cross < 0.0 {
                return false;
            }
        }
        true
    }
}

/// Total sprite coverage budget as a fraction of the image; kept below the
/// 15% contract with margin for rasterization slack.
const COVERAGE_BUDGET: f64 = 0.12;

fn view_occluders(spec: &SceneSpec, view: usize) -> Vec<Occluder> {
    if !spec.view_occluded(view) {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ (0x0cc1 + 7919 * view as u64));
    let k = rng.gen_range(1..=spec.max_occluders.max(1));
    let area_each = COVERAGE_BUDGET * (spec.width * spec.height) as f64 / k as f64;
    (0..k)
        .map(|_| {
            let m = rng.gen_range(3..=6usize);
            // area of a regular m-gon with circumradius r: m r^2 sin(tau/m) / 2
            let r = (2.0 * area_each / (m as f64 * (std::f64::consts::TAU / m as f64).sin())).sqrt();
            let cx = rng.gen_range(0.2..0.8) * spec.width as f64;
            let cy = rng.gen_range(0.2..0.8) * spec.height as f64;
            let phase = rng.gen_range(0.0..std::f64::consts::TAU);
            let verts = (0..m)
                .map(|i| {
                    let a = phase + std::f64::consts::TAU * i as f64 / m as f64;
                    [cx + r * a.cos(), cy + r * a.sin()]
                })
                .collect();
            // saturated palette so transients are visually distinct
            let hue = rng.gen_range(0..3usize);
            let mut color = [rng.gen_range(0.0..0.25); 3];
            color[hue] = rng.gen_range(0.85..1.0);
            Occluder { verts, color }
        })
        .collect()
}

pub fn generate_view(spec: &SceneSpec, model: &SceneModel, view: usize) -> ViewData {
    let cam = view_camera(spec, view);
    let (w, h) = (spec.width, spec.height);
    let tone = variant_tone(spec, spec.variant_of(view));
    let occluders = view_occluders(spec, view);
    let mut image = vec![0.0; 3 * w * h];
    let mut depth = vec![0.0; w * h];
    let mut mask = vec![1.0; w * h];
    let eye = cam.center();
    for y in 0..h {
        for x in 0..w {
            let pix = y * w + x;
            let dir = cam.ray_dir(x, y);
            let hit = model.intersect(&eye, &dir);
            let p = [eye[0] + hit.t * dir[0], eye[1] + hit.t * dir[1], eye[2] + hit.t * dir[2]];
            depth[pix] = cam.to_view(&p)[2];
            let shaded = model.shade(&hit);
            let (u, v) = ((x as f64 + 0.5) / w as f64, (y as f64 + 0.5) / h as f64);
            let mut rgb = tone.apply(shaded, u, v);
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            for occ in &occluders {
                if occ.covers(px, py) {
                    rgb = occ.color;
                    mask[pix] = 0.0;
                    // depth stays pre-occluder by contract
                }
            }
            for c in 0..3 {
                image[c * w * h + pix] = rgb[c];
            }
        }
    }
    ViewData { camera: cam, image, depth, mask }
}

/// Initial point cloud with shaded base colors, before any tone variant.
pub fn generate_points(spec: &SceneSpec, model: &SceneModel) -> PointCloudRGB {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x9015);
    let mut out = PointCloudRGB::default();
    for _ in 0..spec.points {
        let (p, c) = model.sample_surface(&mut rng);
        out.positions.extend_from_slice(&p);
        out.colors.extend_from_slice(&c);
    }
    out
}
