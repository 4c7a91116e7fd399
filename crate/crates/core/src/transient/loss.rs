use crate::diff::{kernels, Tape, TensorId};

/// Weight of the L1 term in the photometric loss; the rest goes to the
/// structural term.
pub const PHOTO_L1_WEIGHT: f64 = 0.8;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

/// Mean structural similarity between two (C,H,W) tensors, computed with a
/// separable Gaussian window and zero padding at the border.
pub fn ssim_index(tape: &mut Tape, x: TensorId, y: TensorId) -> TensorId {
    let kernel = kernels::gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA);
    let mu_x = tape.blur_same(x, &kernel);
    let mu_y = tape.blur_same(y, &kernel);
    let xx = tape.mul(x, x);
    let yy = tape.mul(y, y);
    let xy = tape.mul(x, y);
    let exx = tape.blur_same(xx, &kernel);
    let eyy = tape.blur_same(yy, &kernel);
    let exy = tape.blur_same(xy, &kernel);
    let mu_xx = tape.mul(mu_x, mu_x);
    let mu_yy = tape.mul(mu_y, mu_y);
    let mu_xy = tape.mul(mu_x, mu_y);
    let var_x = tape.sub(exx, mu_xx);
    let var_y = tape.sub(eyy, mu_yy);
    let cov = tape.sub(exy, mu_xy);

    let two_mu = tape.scale(mu_xy, 2.0);
    let num_a = tape.add_scalar(two_mu, SSIM_C1);
    let two_cov = tape.scale(cov, 2.0);
    let num_b = tape.add_scalar(two_cov, SSIM_C2);
    let num = tape.mul(num_a, num_b);

    let mu_sum = tape.add(mu_xx, mu_yy);
    let den_a = tape.add_scalar(mu_sum, SSIM_C1);
    let var_sum = tape.add(var_x, var_y);
    let den_b = tape.add_scalar(var_sum, SSIM_C2);
    let den = tape.mul(den_a, den_b);

    let map = tape.div(num, den);
    tape.mean(map)
}

/// Photometric loss on mask-multiplied images:
/// w * L1 + (1 - w) * (1 - SSIM). `mask` is (1,H,W) and multiplies every
/// channel of both images, so gradients reach the mask as well.
pub fn masked_photometric_loss(tape: &mut Tape, pred: TensorId, target: TensorId, mask: TensorId) -> TensorId {
    let sp = tape.shape(pred).to_vec();
    assert_eq!(sp.len(), 3);
    assert_eq!(sp[0], 3, "pred must be (3,H,W)");
    assert_eq!(tape.shape(target), &sp[..]);
    assert_eq!(tape.shape(mask), &[1, sp[1], sp[2]]);
    let m2 = tape.concat_ch(mask, mask);
    let m3 = tape.concat_ch(m2, mask);
    let pm = tape.mul(pred, m3);
    let tm = tape.mul(target, m3);

    let diff = tape.sub(pm, tm);
    let absdiff = tape.abs(diff);
    let l1 = tape.mean(absdiff);

    let ssim = ssim_index(tape, pm, tm);
    let one_minus = tape.scale(ssim, -1.0);
    let dssim = tape.add_scalar(one_minus, 1.0);

    let a = tape.scale(l1, PHOTO_L1_WEIGHT);
    let b = tape.scale(dssim, 1.0 - PHOTO_L1_WEIGHT);
    tape.add(a, b)
}

/// Pulls the mask toward one: mean((1 - M)^2).
pub fn mask_regularizer(tape: &mut Tape, mask: TensorId) -> TensorId {
    let neg = tape.scale(mask, -1.0);
    let inv = tape.add_scalar(neg, 1.0);
    let sq = tape.mul(inv, inv);
    tape.mean(sq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Straight-loop SSIM oracle sharing no code with the tape path.
    fn ssim_oracle(x: &[f64], y: &[f64], c: usize, h: usize, w: usize) -> f64 {
        let k = kernels::gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA);
        let half = SSIM_WINDOW / 2;
        let blur = |img: &[f64]| -> Vec<f64> {
            let mut out = vec![0.0; c * h * w];
            for ci in 0..c {
                for yy in 0..h {
                    for xx in 0..w {
                        let mut acc = 0.0;
                        for dy in 0..SSIM_WINDOW {
                            for dx in 0..SSIM_WINDOW {
                                let sy = yy as isize + dy as isize - half as isize;
                                let sx = xx as isize + dx as isize - half as isize;
                                if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                    continue; // zero padding
                                }
                                acc += k[dy] * k[dx] * img[ci * h * w + sy as usize * w + sx as usize];
                            }
                        }
                        out[ci * h * w + yy * w + xx] = acc;
                    }
                }
            }
            out
        };
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
        let (mx, my) = (blur(x), blur(y));
        let (exx, eyy, exy) = (blur(&xx), blur(&yy), blur(&xy));
        let mut total = 0.0;
        for i in 0..c * h * w {
            let vx = exx[i] - mx[i] * mx[i];
            let vy = eyy[i] - my[i] * my[i];
            let cv = exy[i] - mx[i] * my[i];
            let num = (2.0 * mx[i] * my[i] + SSIM_C1) * (2.0 * cv + SSIM_C2);
            let den = (mx[i] * mx[i] + my[i] * my[i] + SSIM_C1) * (vx + vy + SSIM_C2);
            total += num / den;
        }
        total / (c * h * w) as f64
    }

    #[test]
    fn ssim_matches_independent_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (c, h, w) = (3, 14, 17);
        let xv: Vec<f64> = (0..c * h * w).map(|_| rng.gen::<f64>()).collect();
        let yv: Vec<f64> = xv.iter().map(|v| (v + 0.1 * rng.gen::<f64>()).min(1.0)).collect();
        let mut tape = Tape::new();
        let x = tape.constant(&[c, h, w], xv.clone());
        let y = tape.constant(&[c, h, w], yv.clone());
        let s = ssim_index(&mut tape, x, y);
        let want = ssim_oracle(&xv, &yv, c, h, w);
        assert!((tape.scalar(s) - want).abs() < 1e-6, "{} vs {}", tape.scalar(s), want);
    }

    #[test]
    fn identical_images_score_near_one() {
        let mut tape = Tape::new();
        let v: Vec<f64> = (0..3 * 144).map(|i| (i as f64 * 0.37).fract()).collect();
        let x = tape.constant(&[3, 12, 12], v.clone());
        let y = tape.constant(&[3, 12, 12], v);
        let s = ssim_index(&mut tape, x, y);
        assert!(tape.scalar(s) > 0.999);
    }

    #[test]
    fn masked_loss_ignores_masked_out_differences() {
        // images differ only where the mask is zero -> loss must vanish
        let (h, w) = (12, 12);
        let mut a = vec![0.3; 3 * h * w];
        let b = vec![0.3; 3 * h * w];
        let mut mask = vec![1.0; h * w];
        for x in 0..4 {
            mask[5 * w + x] = 0.0;
            a[5 * w + x] = 0.9;
        }
        let mut tape = Tape::new();
        let pa = tape.constant(&[3, h, w], a);
        let pb = tape.constant(&[3, h, w], b);
        let m = tape.constant(&[1, h, w], mask);
        let l = masked_photometric_loss(&mut tape, pa, pb, m);
        assert!(tape.scalar(l).abs() < 1e-9, "loss leaked: {}", tape.scalar(l));
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        use crate::diff::grad_check;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (h, w) = (8, 8);
        let pv: Vec<f64> = (0..3 * h * w).map(|_| rng.gen::<f64>()).collect();
        let tv: Vec<f64> = (0..3 * h * w).map(|_| rng.gen::<f64>()).collect();
        let mv: Vec<f64> = (0..h * w).map(|_| rng.gen_range(0.2..0.8)).collect();
        let f = |params: &[Vec<f64>]| {
            let mut tape = Tape::new();
            let p = tape.leaf(&[3, h, w], params[0].clone());
            let t = tape.constant(&[3, h, w], tv.clone());
            let m = tape.leaf(&[1, h, w], params[1].clone());
            let l = masked_photometric_loss(&mut tape, p, t, m);
            tape.scalar(l)
        };
        let mut tape = Tape::new();
        let p = tape.leaf(&[3, h, w], pv.clone());
        let t = tape.constant(&[3, h, w], tv.clone());
        let m = tape.leaf(&[1, h, w], mv.clone());
        let l = masked_photometric_loss(&mut tape, p, t, m);
        tape.backward(l);
        let analytic = vec![tape.grad(p).to_vec(), tape.grad(m).to_vec()];
        let err = grad_check(f, &[pv, mv], &analytic, 1e-6);
        assert!(err < 1e-5, "photometric loss grad error {err}");
    }

    #[test]
    fn mask_regularizer_value_and_minimum() {
        let mut tape = Tape::new();
        let half = tape.constant(&[1, 2, 2], vec![0.5; 4]);
        let r = mask_regularizer(&mut tape, half);
        assert!((tape.scalar(r) - 0.25).abs() < 1e-12);
        let ones = tape.constant(&[1, 2, 2], vec![1.0; 4]);
        let r1 = mask_regularizer(&mut tape, ones);
        assert_eq!(tape.scalar(r1), 0.0);
    }
}
