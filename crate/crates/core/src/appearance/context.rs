use crate::diff::{Tape, TensorId};
use crate::nn::{Mlp, Staged};

use super::triplane::TriplaneFeatures;

pub const GLOBAL_DIM: usize = 16;
pub const LOCAL_DIM: usize = 16;
pub const INTRINSIC_DIM: usize = 32;

/// Everything needed to shade Gaussians under one reference image: the
/// image-level embedding, the encoded triplane, and the fallback local
/// embedding for points outside the box.
#[derive(Clone, Copy, Debug)]
pub struct AppearanceContext {
    /// (1, GLOBAL_DIM)
    pub global: TensorId,
    pub features: TriplaneFeatures,
    /// (LOCAL_DIM,)
    pub fallback: TensorId,
}

/// Image-level appearance code: global average pool of the parsing
/// network's deepest features, mapped through a small head.
pub fn encode_global(tape: &mut Tape, staged: &Staged, head: &Mlp, bottleneck: TensorId) -> TensorId {
    assert_eq!(head.dims[0], tape.shape(bottleneck)[0], "global head input dim mismatch");
    let gap = tape.global_avg_pool(bottleneck);
    let row = tape.broadcast_row(gap, 1);
    let out = head.forward(tape, staged, row);
    assert_eq!(tape.shape(out), &[1, GLOBAL_DIM]);
    out
}

/// Concatenates [global | local | intrinsic] per Gaussian and maps through
/// the fusion head to a flat SH coefficient block of `k * 3` per row.
pub fn fuse_to_sh(
    tape: &mut Tape,
    staged: &Staged,
    head: &Mlp,
    global: TensorId,
    local: TensorId,
    intrinsic: TensorId,
) -> TensorId {
    let n = tape.shape(local)[0];
    assert_eq!(tape.shape(intrinsic)[0], n);
    assert_eq!(head.dims[0], GLOBAL_DIM + LOCAL_DIM + INTRINSIC_DIM);
    assert_eq!(tape.shape(global), &[1, GLOBAL_DIM], "global embedding must be (1, {GLOBAL_DIM})");
    let grow = tape.broadcast_row(global, n);
    let gl = tape.concat_cols(grow, local);
    let all = tape.concat_cols(gl, intrinsic);
    head.forward(tape, staged, all)
}

/// Linear interpolation between two appearance contexts. The endpoints are
/// returned untouched so a zero or one weight reproduces the source context
/// bit for bit.
pub fn blend_appearance(tape: &mut Tape, a: &AppearanceContext, b: &AppearanceContext, alpha: f64) -> AppearanceContext {
    assert!((0.0..=1.0).contains(&alpha), "blend weight must be in [0,1]");
    if alpha == 0.0 {
        return *a;
    }
    if alpha == 1.0 {
        return *b;
    }
    let mut lerp = |x: TensorId, y: TensorId| {
        let xs = tape.scale(x, 1.0 - alpha);
        let ys = tape.scale(y, alpha);
        tape.add(xs, ys)
    };
    let global = lerp(a.global, b.global);
    let planes = [
        lerp(a.features.planes[0], b.features.planes[0]),
        lerp(a.features.planes[1], b.features.planes[1]),
        lerp(a.features.planes[2], b.features.planes[2]),
    ];
    let fallback = lerp(a.fallback, b.fallback);
    AppearanceContext {
        global,
        features: TriplaneFeatures { resolution: a.features.resolution, planes },
        fallback,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gauss::sh;
    use crate::nn::ParamStore;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn global_encoding_shape_and_gradient() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let head = Mlp::new("gh", &[8, 16, GLOBAL_DIM]);
        head.register(&mut store, &mut rng);
        let mut tape = Tape::new();
        let staged = store.stage(&mut tape);
        let bn = tape.constant(&[8, 4, 4], (0..128).map(|i| (i as f64).sin()).collect());
        let g = encode_global(&mut tape, &staged, &head, bn);
        assert_eq!(tape.shape(g), &[1, GLOBAL_DIM]);
        let loss = tape.sum(g);
        tape.backward(loss);
        assert!(tape.grad(staged.id("gh.w0")).iter().any(|v| v.abs() > 0.0));
    }

    #[test]
    fn fusion_produces_sh_blocks() {
        let degree = 2;
        let k3 = sh::num_coeffs(degree) * 3;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let head = Mlp::new("fuse", &[GLOBAL_DIM + LOCAL_DIM + INTRINSIC_DIM, 32, 32, k3]);
        head.register(&mut store, &mut rng);
        let mut tape = Tape::new();
        let staged = store.stage(&mut tape);
        let n = 5;
        let global = tape.constant(&[1, GLOBAL_DIM], vec![0.2; GLOBAL_DIM]);
        let local = tape.leaf(&[n, LOCAL_DIM], vec![0.1; n * LOCAL_DIM]);
        let intrinsic = tape.leaf(&[n, INTRINSIC_DIM], vec![-0.05; n * INTRINSIC_DIM]);
        let shc = fuse_to_sh(&mut tape, &staged, &head, global, local, intrinsic);
        assert_eq!(tape.shape(shc), &[n, k3]);
        let loss = tape.sum(shc);
        tape.backward(loss);
        assert!(tape.grad(intrinsic).iter().any(|v| v.abs() > 0.0));
        assert!(tape.grad(local).iter().any(|v| v.abs() > 0.0));
    }

    fn toy_context(tape: &mut Tape, seedv: f64) -> AppearanceContext {
        let global = tape.leaf(&[1, GLOBAL_DIM], vec![seedv; GLOBAL_DIM]);
        let planes = std::array::from_fn(|pi| {
            tape.leaf(&[2, 4, 4], vec![seedv + pi as f64; 32])
        });
        let fallback = tape.leaf(&[LOCAL_DIM], vec![seedv * 2.0; LOCAL_DIM]);
        AppearanceContext { global, features: TriplaneFeatures { resolution: 4, planes }, fallback }
    }

    #[test]
    fn blend_endpoints_are_the_sources() {
        let mut tape = Tape::new();
        let a = toy_context(&mut tape, 0.3);
        let b = toy_context(&mut tape, -0.8);
        let at0 = blend_appearance(&mut tape, &a, &b, 0.0);
        assert_eq!(at0.global, a.global);
        assert_eq!(at0.features.planes, a.features.planes);
        assert_eq!(at0.fallback, a.fallback);
        let at1 = blend_appearance(&mut tape, &a, &b, 1.0);
        assert_eq!(at1.global, b.global);
    }

    #[test]
    fn blend_midpoint_averages_values() {
        let mut tape = Tape::new();
        let a = toy_context(&mut tape, 1.0);
        let b = toy_context(&mut tape, 3.0);
        let mid = blend_appearance(&mut tape, &a, &b, 0.5);
        for v in tape.value(mid.global) {
            assert!((v - 2.0).abs() < 1e-12);
        }
        for v in tape.value(mid.fallback) {
            assert!((v - 4.0).abs() < 1e-12);
        }
    }
}
