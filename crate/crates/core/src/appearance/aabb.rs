/// Axis-aligned box used to normalize scene points for triplane lookups.
/// Built from the robust extent of the initial point cloud: per axis the
/// 1st and 99th percentiles bound the box, then the half extent is shrunk
/// by `crop_ratio` around the center. Points near the scene core get full
/// triplane resolution; stragglers fall back to the learned default
/// embedding.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

pub const DEFAULT_CROP_RATIO: f64 = 0.5;

impl Aabb {
    /// `points` is a flat (n, 3) array; needs at least one point.
    pub fn from_points(points: &[f64], crop_ratio: f64) -> Aabb {
        assert!(!points.is_empty() && points.len() % 3 == 0, "points must be (n,3)");
        assert!(crop_ratio > 0.0, "crop ratio must be positive");
        let n = points.len() / 3;
        let mut min = [0.0; 3];
        let mut max = [0.0; 3];
        let mut axis: Vec<f64> = Vec::with_capacity(n);
        for a in 0..3 {
            axis.clear();
            axis.extend((0..n).map(|i| points[i * 3 + a]));
            axis.sort_by(f64::total_cmp);
            let lo = percentile(&axis, 1.0);
            let hi = percentile(&axis, 99.0);
            let center = 0.5 * (lo + hi);
            let half = 0.5 * (hi - lo) * crop_ratio;
            min[a] = center - half;
            max[a] = center + half;
        }
        Aabb { min, max }
    }

    pub fn contains(&self, p: &[f64; 3]) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] <= self.max[a])
    }

    /// Maps a point into [0,1]^3; only meaningful for contained points.
    pub fn normalize(&self, p: &[f64; 3]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for a in 0..3 {
            let ext = self.max[a] - self.min[a];
            out[a] = if ext > 0.0 { (p[a] - self.min[a]) / ext } else { 0.5 };
        }
        out
    }
}

/// Linear-interpolation percentile on a sorted slice.
fn percentile(sorted: &[f64], pct: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let rank = pct / 100.0 * (n - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn outliers_barely_move_the_box() {
        // 99 points in [0,1]^3 plus one far outlier per axis
        let mut pts = Vec::new();
        for i in 0..99 {
            let t = i as f64 / 98.0;
            pts.extend_from_slice(&[t, t, t]);
        }
        pts.extend_from_slice(&[1000.0, -1000.0, 1000.0]);
        let bb = Aabb::from_points(&pts, 1.0);
        assert!(bb.max[0] < 20.0, "outlier dominated the box: {:?}", bb);
        assert!(bb.min[1] > -20.0);
    }

    #[test]
    fn crop_ratio_halves_the_extent() {
        let pts: Vec<f64> = (0..300).map(|i| (i % 3) as f64 + (i / 3) as f64 / 100.0).collect();
        let full = Aabb::from_points(&pts, 1.0);
        let half = Aabb::from_points(&pts, 0.5);
        for a in 0..3 {
            let fe = full.max[a] - full.min[a];
            let he = half.max[a] - half.min[a];
            assert!((he - 0.5 * fe).abs() < 1e-12);
            // same center
            assert!((full.min[a] + full.max[a] - half.min[a] - half.max[a]).abs() < 1e-12);
        }
    }

    #[test]
    fn normalize_maps_corners_to_unit_cube() {
        let bb = Aabb { min: [-1.0, 0.0, 2.0], max: [1.0, 4.0, 6.0] };
        assert_eq!(bb.normalize(&[-1.0, 0.0, 2.0]), [0.0, 0.0, 0.0]);
        assert_eq!(bb.normalize(&[1.0, 4.0, 6.0]), [1.0, 1.0, 1.0]);
        assert_eq!(bb.normalize(&[0.0, 2.0, 4.0]), [0.5, 0.5, 0.5]);
        assert!(bb.contains(&[0.0, 1.0, 3.0]));
        assert!(!bb.contains(&[0.0, 5.0, 3.0]));
    }
}
