use rand::Rng;

use super::math;

/// Structure-of-arrays Gaussian scene. SH coefficient blocks are not stored
/// here: they are produced per reference image by the appearance fusion
/// network (or held as a separate parameter block in the plain-3DGS
/// baseline).
#[derive(Clone, Debug, Default)]
pub struct GaussianCloud {
    pub centers: Vec<f64>,        // n * 3
    pub log_scales: Vec<f64>,     // n * 3
    pub rotations: Vec<f64>,      // n * 4, (w,x,y,z)
    pub opacity_logits: Vec<f64>, // n
    pub intrinsics: Vec<f64>,     // n * intrinsic_dim
    pub intrinsic_dim: usize,
}

impl GaussianCloud {
    pub fn len(&self) -> usize {
        self.opacity_logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) {
        let n = self.len();
        assert_eq!(self.centers.len(), n * 3);
        assert_eq!(self.log_scales.len(), n * 3);
        assert_eq!(self.rotations.len(), n * 4);
        assert_eq!(self.intrinsics.len(), n * self.intrinsic_dim);
    }

    pub fn center(&self, i: usize) -> [f64; 3] {
        [self.centers[i * 3], self.centers[i * 3 + 1], self.centers[i * 3 + 2]]
    }

    pub fn opacity(&self, i: usize) -> f64 {
        1.0 / (1.0 + (-self.opacity_logits[i]).exp())
    }
}

#[derive(Clone, Debug)]
pub struct DensifyOpts {
    /// Mean screen-space positional gradient (NDC units) above which a
    /// Gaussian is densified.
    pub grad_threshold: f64,
    /// Opacity below which a Gaussian is pruned.
    pub alpha_threshold: f64,
    /// World-space scale above which a densified Gaussian is split rather
    /// than cloned.
    pub split_scale_threshold: f64,
    /// Scale divisor applied to split halves.
    pub split_factor: f64,
    /// Hard cap on the cloud size; densification stops adding above it.
    pub max_gaussians: usize,
}

impl Default for DensifyOpts {
    fn default() -> Self {
        DensifyOpts {
            grad_threshold: 2e-4,
            alpha_threshold: 0.01,
            split_scale_threshold: 0.05,
            split_factor: 1.6,
            max_gaussians: usize::MAX,
        }
    }
}

/// Accumulated positional-gradient statistics over a densification interval.
#[derive(Clone, Debug, Default)]
pub struct DensifyStats {
    pub grad_norm_sum: Vec<f64>,
    pub observations: Vec<u32>,
}

impl DensifyStats {
    pub fn new(n: usize) -> Self {
        DensifyStats { grad_norm_sum: vec![0.0; n], observations: vec![0; n] }
    }
}

/// Densification / pruning pass. Returns the new cloud plus, per new
/// Gaussian, the index it was derived from in the old cloud (survivors map
/// to themselves; clones and split halves map to their source so intrinsic
/// features are inherited and optimizer state can be remapped).
pub fn densify_and_prune(
    cloud: &GaussianCloud,
    stats: &DensifyStats,
    opts: &DensifyOpts,
    rng: &mut impl Rng,
) -> (GaussianCloud, Vec<DensifySource>) {
    let n = cloud.len();
    assert_eq!(stats.grad_norm_sum.len(), n);
    let mut out = GaussianCloud { intrinsic_dim: cloud.intrinsic_dim, ..Default::default() };
    let mut sources = Vec::new();

    let push = |out: &mut GaussianCloud,
                    sources: &mut Vec<DensifySource>,
                    center: [f64; 3],
                    log_scale: [f64; 3],
                    rot: [f64; 4],
                    logit: f64,
                    src: usize,
                    kind: DensifyKind| {
        out.centers.extend_from_slice(&center);
        out.log_scales.extend_from_slice(&log_scale);
        out.rotations.extend_from_slice(&rot);
        out.opacity_logits.push(logit);
        out.intrinsics
            .extend_from_slice(&cloud.intrinsics[src * cloud.intrinsic_dim..(src + 1) * cloud.intrinsic_dim]);
        sources.push(DensifySource { index: src, kind });
    };

    for i in 0..n {
        if cloud.opacity(i) < opts.alpha_threshold {
            continue; // pruned
        }
        let center = cloud.center(i);
        let ls = [cloud.log_scales[i * 3], cloud.log_scales[i * 3 + 1], cloud.log_scales[i * 3 + 2]];
        let rot = [
            cloud.rotations[i * 4],
            cloud.rotations[i * 4 + 1],
            cloud.rotations[i * 4 + 2],
            cloud.rotations[i * 4 + 3],
        ];
        let logit = cloud.opacity_logits[i];
        let mean_grad = if stats.observations[i] > 0 {
            stats.grad_norm_sum[i] / stats.observations[i] as f64
        } else {
            0.0
        };
        let max_scale = ls.iter().cloned().fold(f64::NEG_INFINITY, f64::max).exp();
        let room = out.opacity_logits.len() + (n - i) < opts.max_gaussians;
        if mean_grad > opts.grad_threshold && room {
            if max_scale > opts.split_scale_threshold {
                // split: two samples from the Gaussian, scales shrunk
                let shrunk = [
                    ls[0] - opts.split_factor.ln(),
                    ls[1] - opts.split_factor.ln(),
                    ls[2] - opts.split_factor.ln(),
                ];
                for _ in 0..2 {
                    let s = sample_from_gaussian(&center, &ls, &rot, rng);
                    push(&mut out, &mut sources, s, shrunk, rot, logit, i, DensifyKind::Split);
                }
            } else {
                // clone: keep the original and add a copy at the same spot
                push(&mut out, &mut sources, center, ls, rot, logit, i, DensifyKind::Kept);
                push(&mut out, &mut sources, center, ls, rot, logit, i, DensifyKind::Clone);
            }
        } else {
            push(&mut out, &mut sources, center, ls, rot, logit, i, DensifyKind::Kept);
        }
    }
    (out, sources)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DensifyKind {
    Kept,
    Clone,
    Split,
}

#[derive(Clone, Copy, Debug)]
pub struct DensifySource {
    pub index: usize,
    pub kind: DensifyKind,
}

fn normal_sample(rng: &mut impl Rng) -> f64 {
    // Box-Muller; u1 bounded away from zero so ln is finite
    let u1: f64 = rng.gen_range(1e-12..1.0);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn sample_from_gaussian(center: &[f64; 3], log_scale: &[f64; 3], rot: &[f64; 4], rng: &mut impl Rng) -> [f64; 3] {
    let r = math::quat_to_rot(rot);
    let z: [f64; 3] = [normal_sample(rng), normal_sample(rng), normal_sample(rng)];
    let scaled = [z[0] * log_scale[0].exp(), z[1] * log_scale[1].exp(), z[2] * log_scale[2].exp()];
    let w = math::mat3_mul_vec(&r, &scaled);
    [center[0] + w[0], center[1] + w[1], center[2] + w[2]]
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_cloud() -> GaussianCloud {
        GaussianCloud {
            centers: vec![0.0, 0.0, 0.0, 1.0, 0.0, 0.0],
            log_scales: vec![0.0; 6],
            rotations: vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0],
            opacity_logits: vec![2.0, 2.0],
            intrinsics: vec![0.1, 0.2, 0.3, 0.4],
            intrinsic_dim: 2,
        }
    }

    #[test]
    fn no_op_when_nothing_crosses_thresholds() {
        let cloud = small_cloud();
        let stats = DensifyStats::new(2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (out, src) = densify_and_prune(&cloud, &stats, &DensifyOpts::default(), &mut rng);
        assert_eq!(out.len(), 2);
        assert_eq!(out.centers, cloud.centers);
        assert!(src.iter().all(|s| s.kind == DensifyKind::Kept));
    }

    #[test]
    fn zero_opacity_gaussian_pruned() {
        let mut cloud = small_cloud();
        cloud.opacity_logits[1] = -50.0; // alpha ~ 0
        let stats = DensifyStats::new(2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (out, _) = densify_and_prune(&cloud, &stats, &DensifyOpts::default(), &mut rng);
        assert_eq!(out.len(), 1);
        assert_eq!(out.center(0), [0.0, 0.0, 0.0]);
    }

    #[test]
    fn clone_and_split_inherit_intrinsics() {
        let mut cloud = small_cloud();
        cloud.log_scales = vec![0.0, 0.0, 0.0, -5.0, -5.0, -5.0]; // g0 large, g1 tiny
        let mut stats = DensifyStats::new(2);
        stats.grad_norm_sum = vec![1.0, 1.0];
        stats.observations = vec![1, 1];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let opts = DensifyOpts { split_scale_threshold: 0.5, ..Default::default() };
        let (out, src) = densify_and_prune(&cloud, &stats, &opts, &mut rng);
        // g0 split into 2, g1 cloned into 2
        assert_eq!(out.len(), 4);
        assert!(src.iter().filter(|s| s.kind == DensifyKind::Split).count() == 2);
        assert!(src.iter().filter(|s| s.kind == DensifyKind::Clone).count() == 1);
        for (row, s) in src.iter().enumerate() {
            let want = &cloud.intrinsics[s.index * 2..s.index * 2 + 2];
            assert_eq!(&out.intrinsics[row * 2..row * 2 + 2], want);
        }
    }
}
