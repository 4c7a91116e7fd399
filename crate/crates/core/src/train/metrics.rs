use crate::diff::{Tape, TensorId};
use crate::transient::ssim_index;

/// Variance floor inside the correlation denominator.
pub const PEARSON_VAR_FLOOR: f64 = 1e-8;

/// Peak signal-to-noise ratio for [0,1] images; identical inputs give +inf.
pub fn psnr(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    assert!(!a.is_empty());
    let mse = a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    }
}

/// Detached SSIM between two (3,h,w) images, via the differentiable kernel
/// on a scratch tape.
pub fn ssim(a: &[f64], b: &[f64], width: usize, height: usize) -> f64 {
    let mut tape = Tape::new();
    let x = tape.constant(&[3, height, width], a.to_vec());
    let y = tape.constant(&[3, height, width], b.to_vec());
    let s = ssim_index(&mut tape, x, y);
    tape.scalar(s)
}

/// Decorrelation penalty `1 - pearson(pred, target)` over the pixels where
/// `weights` is 1. The target and weights are data; only `pred` carries
/// gradient. Fewer than two selected pixels leaves nothing to correlate:
/// the loss is a constant zero and the caller is warned on stderr.
pub fn depth_pearson_loss(
    tape: &mut Tape,
    pred: TensorId,
    target: &[f64],
    weights: &[f64],
) -> TensorId {
    let n = tape.value(pred).len();
    assert_eq!(target.len(), n);
    assert_eq!(weights.len(), n);
    let m: f64 = weights.iter().sum();
    if m < 2.0 {
        eprintln!("warning: depth loss skipped, fewer than 2 pixels selected");
        return tape.scalar_const(0.0);
    }

    let p = tape.reshape(pred, &[n, 1]);
    let w = tape.constant(&[n, 1], weights.to_vec());
    let t = tape.constant(&[n, 1], target.to_vec());

    // two-pass, centered moments for numerical headroom
    let wp = tape.mul(w, p);
    let sp = tape.sum(wp);
    let mean_p = tape.scale(sp, 1.0 / m);
    let mp = tape.broadcast_row(mean_p, n);
    let pd = tape.sub(p, mp);
    let pc = tape.mul(w, pd);

    let wt = tape.mul(w, t);
    let st = tape.sum(wt);
    let mean_t = tape.scale(st, 1.0 / m);
    let mt = tape.broadcast_row(mean_t, n);
    let td = tape.sub(t, mt);
    let tc = tape.mul(w, td);

    let pt = tape.mul(pc, tc);
    let cov = tape.sum(pt);
    let pp = tape.mul(pc, pc);
    let var_p = tape.sum(pp);
    let tt = tape.mul(tc, tc);
    let var_t = tape.sum(tt);

    // floor each variance; exact when well above the floor
    let floor = PEARSON_VAR_FLOOR * m;
    let vp = floored(tape, var_p, floor);
    let vt = floored(tape, var_t, floor);
    let sp2 = tape.sqrt(vp);
    let st2 = tape.sqrt(vt);
    let denom = tape.mul(sp2, st2);
    let rho = tape.div(cov, denom);
    let neg = tape.neg(rho);
    tape.add_scalar(neg, 1.0)
}

fn floored(tape: &mut Tape, x: TensorId, floor: f64) -> TensorId {
    let shifted = tape.add_scalar(x, -floor);
    let clipped = tape.relu(shifted);
    tape.add_scalar(clipped, floor)
}
