use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Cells per texture axis on every face.
const GRID: usize = 4;

/// Radius of the enclosing dome; bounds every depth value well inside the
/// 16-bit millimeter range.
pub const DOME_RADIUS: f64 = 50.0;

// normalize(0.4, 1.0, 0.5)
const LIGHT_DIR: [f64; 3] = [0.336860767684873, 0.8421519192121825, 0.4210759596060912];

#[derive(Clone, Debug)]
pub struct FaceTex {
    cells: Vec<[f64; 3]>,
}

impl FaceTex {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        let cells = (0..GRID * GRID)
            .map(|_| {
                [
                    rng.gen_range(0.15..0.85),
                    rng.gen_range(0.15..0.85),
                    rng.gen_range(0.15..0.85),
                ]
            })
            .collect();
        FaceTex { cells }
    }

    fn sample(&self, u: f64, v: f64) -> [f64; 3] {
        let iu = ((u.clamp(0.0, 1.0) * GRID as f64) as usize).min(GRID - 1);
        let iv = ((v.clamp(0.0, 1.0) * GRID as f64) as usize).min(GRID - 1);
        self.cells[iv * GRID + iu]
    }
}

/// A closest-hit record. `t` is the ray parameter (unit direction, so also
/// the euclidean distance).
#[derive(Clone, Copy, Debug)]
pub struct Hit {
    pub t: f64,
    pub normal: [f64; 3],
    pub albedo: [f64; 3],
    /// Dome hits are background, not scene surface.
    pub is_dome: bool,
}

/// The static world: a textured box, a sphere, a floor disc and an
/// enclosing sky dome. Built deterministically from the scene seed.
#[derive(Clone, Debug)]
pub struct SceneModel {
    box_min: [f64; 3],
    box_max: [f64; 3],
    box_faces: Vec<FaceTex>, // 6, indexed axis*2 + (positive side)
    sphere_center: [f64; 3],
    sphere_radius: f64,
    sphere_tex: FaceTex,
    floor_y: f64,
    floor_radius: f64,
    floor_tex: FaceTex,
    sky_top: [f64; 3],
    sky_horizon: [f64; 3],
}

impl SceneModel {
    pub fn from_seed(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5ce9e);
        SceneModel {
            box_min: [-0.9, -0.5, -0.55],
            box_max: [-0.1, 0.3, 0.25],
            box_faces: (0..6).map(|_| FaceTex::random(&mut rng)).collect(),
            sphere_center: [0.55, 0.05, 0.1],
            sphere_radius: 0.45,
            sphere_tex: FaceTex::random(&mut rng),
            floor_y: -0.5,
            floor_radius: 2.2,
            floor_tex: FaceTex::random(&mut rng),
            sky_top: [
                rng.gen_range(0.3..0.5),
                rng.gen_range(0.4..0.6),
                rng.gen_range(0.6..0.8),
            ],
            sky_horizon: [
                rng.gen_range(0.6..0.8),
                rng.gen_range(0.6..0.8),
                rng.gen_range(0.7..0.9),
            ],
        }
    }

    /// Closest intersection along a unit-direction ray; the dome guarantees
    /// a hit for any origin near the scene core.
    pub fn intersect(&self, origin: &[f64; 3], dir: &[f64; 3]) -> Hit {
        let mut best: Option<Hit> = None;
        let mut consider = |h: Option<Hit>| {
            if let Some(hit) = h {
                if best.map_or(true, |b| hit.t < b.t) {
                    best = Some(hit);
                }
            }
        };
        consider(self.hit_box(origin, dir));
        consider(self.hit_sphere(origin, dir));
        consider(self.hit_floor(origin, dir));
        match best {
            Some(h) => h,
            None => self.hit_dome(origin, dir),
        }
    }

    /// Lambertian shading with a fixed light and ambient floor; dome pixels
    /// pass through unshaded.
    pub fn shade(&self, hit: &Hit) -> [f64; 3] {
        if hit.is_dome {
            return hit.albedo;
        }
        let ndl = hit.normal[0] * LIGHT_DIR[0] + hit.normal[1] * LIGHT_DIR[1] + hit.normal[2] * LIGHT_DIR[2];
        let lum = 0.35 + 0.65 * ndl.max(0.0);
        [hit.albedo[0] * lum, hit.albedo[1] * lum, hit.albedo[2] * lum]
    }

    fn hit_box(&self, o: &[f64; 3], d: &[f64; 3]) -> Option<Hit> {
        let mut tmin = 1e-9;
        let mut tmax = f64::INFINITY;
        let mut axis_in = 0usize;
        for a in 0..3 {
            if d[a].abs() < 1e-15 {
                if o[a] < self.box_min[a] || o[a] > self.box_max[a] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / d[a];
            let mut t0 = (self.box_min[a] - o[a]) * inv;
            let mut t1 = (self.box_max[a] - o[a]) * inv;
            if t0 > t1 {
                std::mem::swap(&mut t0, &mut t1);
            }
            if t0 > tmin {
                tmin = t0;
                axis_in = a;
            }
            tmax = tmax.min(t1);
            if tmin > tmax {
                return None;
            }
        }
        if !tmin.is_finite() || tmin <= 1e-9 || tmin >= tmax {
            return None;
        }
        let p = [o[0] + tmin * d[0], o[1] + tmin * d[1], o[2] + tmin * d[2]];
        let positive = d[axis_in] < 0.0; // entering from the positive side
        let mut normal = [0.0; 3];
        normal[axis_in] = if positive { 1.0 } else { -1.0 };
        let (ua, va) = match axis_in {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        };
        let u = (p[ua] - self.box_min[ua]) / (self.box_max[ua] - self.box_min[ua]);
        let v = (p[va] - self.box_min[va]) / (self.box_max[va] - self.box_min[va]);
        let tex = &self.box_faces[axis_in * 2 + positive as usize];
        Some(Hit { t: tmin, normal, albedo: tex.sample(u, v), is_dome: false })
    }

    fn hit_sphere(&self, o: &[f64; 3], d: &[f64; 3]) -> Option<Hit> {
        let oc = [
            o[0] - self.sphere_center[0],
            o[1] - self.sphere_center[1],
            o[2] - self.sphere_center[2],
        ];
        let b = oc[0] * d[0] + oc[1] * d[1] + oc[2] * d[2];
        let c = oc[0] * oc[0] + oc[1] * oc[1] + oc[2] * oc[2] - self.sphere_radius * self.sphere_radius;
        let disc = b * b - c;
        if disc < 0.0 {
            return None;
        }
        let t = -b - disc.sqrt();
        if t <= 1e-9 {
            return None;
        }
        let p = [o[0] + t * d[0], o[1] + t * d[1], o[2] + t * d[2]];
        let n = [
            (p[0] - self.sphere_center[0]) / self.sphere_radius,
            (p[1] - self.sphere_center[1]) / self.sphere_radius,
            (p[2] - self.sphere_center[2]) / self.sphere_radius,
        ];
        let u = 0.5 + n[2].atan2(n[0]) / std::f64::consts::TAU;
        let v = 0.5 - n[1].asin() / std::f64::consts::PI;
        Some(Hit { t, normal: n, albedo: self.sphere_tex.sample(u, v), is_dome: false })
    }

    fn hit_floor(&self, o: &[f64; 3], d: &[f64; 3]) -> Option<Hit> {
        if d[1].abs() < 1e-15 {
            return None;
        }
        let t = (self.floor_y - o[1]) / d[1];
        if t <= 1e-9 {
            return None;
        }
        let px = o[0] + t * d[0];
        let pz = o[2] + t * d[2];
        if px * px + pz * pz > self.floor_radius * self.floor_radius {
            return None;
        }
        let u = 0.5 + 0.5 * px / self.floor_radius;
        let v = 0.5 + 0.5 * pz / self.floor_radius;
        Some(Hit { t, normal: [0.0, 1.0, 0.0], albedo: self.floor_tex.sample(u, v), is_dome: false })
    }

    fn hit_dome(&self, o: &[f64; 3], d: &[f64; 3]) -> Hit {
        // sphere centered at the origin, origin inside: take the far root
        let b = o[0] * d[0] + o[1] * d[1] + o[2] * d[2];
        let c = o[0] * o[0] + o[1] * o[1] + o[2] * o[2] - DOME_RADIUS * DOME_RADIUS;
        let t = -b + (b * b - c).sqrt();
        let up = (o[1] + t * d[1]) / DOME_RADIUS; // -1..1
        let w = 0.5 * (up + 1.0);
        let albedo = [
            self.sky_horizon[0] * (1.0 - w) + self.sky_top[0] * w,
            self.sky_horizon[1] * (1.0 - w) + self.sky_top[1] * w,
            self.sky_horizon[2] * (1.0 - w) + self.sky_top[2] * w,
        ];
        Hit { t, normal: [0.0, 0.0, 0.0], albedo, is_dome: true }
    }

    /// Deterministic surface sample with its shaded base color, used for
    /// the initial point cloud.
    pub fn sample_surface(&self, rng: &mut ChaCha8Rng) -> ([f64; 3], [f64; 3]) {
        let pick = rng.gen_range(0..3u32);
        let (p, hit) = match pick {
            0 => {
                // sphere
                let z: f64 = rng.gen_range(-1.0..1.0);
                let th: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                let r = (1.0 - z * z).sqrt();
                let n = [r * th.cos(), z, r * th.sin()];
                let p = [
                    self.sphere_center[0] + self.sphere_radius * n[0],
                    self.sphere_center[1] + self.sphere_radius * n[1],
                    self.sphere_center[2] + self.sphere_radius * n[2],
                ];
                let u = 0.5 + n[2].atan2(n[0]) / std::f64::consts::TAU;
                let v = 0.5 - n[1].asin() / std::f64::consts::PI;
                (p, Hit { t: 0.0, normal: n, albedo: self.sphere_tex.sample(u, v), is_dome: false })
            }
            1 => {
                // box face
                let axis = rng.gen_range(0..3usize);
                let side = rng.gen_bool(0.5);
                let mut p = [
                    rng.gen_range(self.box_min[0]..self.box_max[0]),
                    rng.gen_range(self.box_min[1]..self.box_max[1]),
                    rng.gen_range(self.box_min[2]..self.box_max[2]),
                ];
                p[axis] = if side { self.box_max[axis] } else { self.box_min[axis] };
                let mut normal = [0.0; 3];
                normal[axis] = if side { 1.0 } else { -1.0 };
                let (ua, va) = match axis {
                    0 => (1, 2),
                    1 => (0, 2),
                    _ => (0, 1),
                };
                let u = (p[ua] - self.box_min[ua]) / (self.box_max[ua] - self.box_min[ua]);
                let v = (p[va] - self.box_min[va]) / (self.box_max[va] - self.box_min[va]);
                let tex = &self.box_faces[axis * 2 + side as usize];
                (p, Hit { t: 0.0, normal, albedo: tex.sample(u, v), is_dome: false })
            }
            _ => {
                // floor disc, area-uniform
                let r = self.floor_radius * rng.gen::<f64>().sqrt();
                let th: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                let p = [r * th.cos(), self.floor_y, r * th.sin()];
                let u = 0.5 + 0.5 * p[0] / self.floor_radius;
                let v = 0.5 + 0.5 * p[2] / self.floor_radius;
                (
                    p,
                    Hit { t: 0.0, normal: [0.0, 1.0, 0.0], albedo: self.floor_tex.sample(u, v), is_dome: false },
                )
            }
        };
        (p, self.shade(&hit))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_ray_hits_something() {
        let m = SceneModel::from_seed(1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..500 {
            let o = [rng.gen_range(-2.0..2.0), rng.gen_range(0.0..2.0), rng.gen_range(-2.0..2.0)];
            let mut d = [
                rng.gen_range(-1.0..1.0f64),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ];
            let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            if n < 1e-6 {
                continue;
            }
            for v in &mut d {
                *v /= n;
            }
            let h = m.intersect(&o, &d);
            assert!(h.t.is_finite() && h.t > 0.0 && h.t < 2.0 * DOME_RADIUS);
        }
    }

    #[test]
    fn hit_point_lies_on_surface_to_high_precision() {
        // analytic depth contract: the hit point must satisfy the surface
        // equation to 1e-9
        let m = SceneModel::from_seed(5);
        let o = [0.0f64, 0.5, -3.0];
        // aim at the sphere center
        let sc = [0.55, 0.05, 0.1];
        let mut d = [sc[0] - o[0], sc[1] - o[1], sc[2] - o[2]];
        let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        for v in &mut d {
            *v /= n;
        }
        let h = m.intersect(&o, &d);
        assert!(!h.is_dome);
        let p = [o[0] + h.t * d[0], o[1] + h.t * d[1], o[2] + h.t * d[2]];
        let dist = ((p[0] - sc[0]).powi(2) + (p[1] - sc[1]).powi(2) + (p[2] - sc[2]).powi(2)).sqrt();
        assert!((dist - 0.45).abs() < 1e-9, "sphere hit off-surface by {}", (dist - 0.45).abs());
    }

    #[test]
    fn model_is_deterministic_per_seed() {
        let a = SceneModel::from_seed(42);
        let b = SceneModel::from_seed(42);
        let o = [1.0, 1.0, -2.0];
        let d = [-0.3, -0.2, 0.932737905308882];
        let ha = a.intersect(&o, &d);
        let hb = b.intersect(&o, &d);
        assert_eq!(ha.t, hb.t);
        assert_eq!(ha.albedo, hb.albedo);
    }
}
