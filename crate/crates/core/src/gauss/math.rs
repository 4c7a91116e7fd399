//! Small fixed-size matrix helpers (row-major [f64; 9] for 3x3).

pub fn mat3_mul(a: &[f64; 9], b: &[f64; 9]) -> [f64; 9] {
    let mut out = [0.0; 9];
    for i in 0..3 {
        for j in 0..3 {
            out[i * 3 + j] = a[i * 3] * b[j] + a[i * 3 + 1] * b[3 + j] + a[i * 3 + 2] * b[6 + j];
        }
    }
    out
}

pub fn mat3_transpose(a: &[f64; 9]) -> [f64; 9] {
    [a[0], a[3], a[6], a[1], a[4], a[7], a[2], a[5], a[8]]
}

pub fn mat3_mul_vec(a: &[f64; 9], v: &[f64; 3]) -> [f64; 3] {
    [
        a[0] * v[0] + a[1] * v[1] + a[2] * v[2],
        a[3] * v[0] + a[4] * v[1] + a[5] * v[2],
        a[6] * v[0] + a[7] * v[1] + a[8] * v[2],
    ]
}

pub fn mat3t_mul_vec(a: &[f64; 9], v: &[f64; 3]) -> [f64; 3] {
    [
        a[0] * v[0] + a[3] * v[1] + a[6] * v[2],
        a[1] * v[0] + a[4] * v[1] + a[7] * v[2],
        a[2] * v[0] + a[5] * v[1] + a[8] * v[2],
    ]
}

/// Rotation matrix from a quaternion given as (w, x, y, z); the input is
/// normalized first.
pub fn quat_to_rot(q: &[f64; 4]) -> [f64; 9] {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    assert!(n > 0.0, "zero quaternion");
    let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
    [
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    ]
}

/// Pulls dL/dR back to the raw (unnormalized) quaternion.
pub fn quat_rot_backward(q: &[f64; 4], d_rot: &[f64; 9]) -> [f64; 4] {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
    // partials of R wrt the normalized quaternion
    let dw = [0.0, -z, y, z, 0.0, -x, -y, x, 0.0];
    let dx = [0.0, y, z, y, -2.0 * x, -w, z, w, -2.0 * x];
    let dy = [-2.0 * y, x, w, x, 0.0, z, -w, z, -2.0 * y];
    let dz = [-2.0 * z, -w, x, w, -2.0 * z, y, x, y, 0.0];
    let dot = |m: &[f64; 9]| 2.0 * m.iter().zip(d_rot).map(|(a, b)| a * b).sum::<f64>();
    let gq_hat = [dot(&dw), dot(&dx), dot(&dy), dot(&dz)];
    // through normalization: dq = (g - q_hat (q_hat . g)) / n
    let qh = [w, x, y, z];
    let proj: f64 = qh.iter().zip(&gq_hat).map(|(a, b)| a * b).sum();
    let mut out = [0.0; 4];
    for i in 0..4 {
        out[i] = (gq_hat[i] - qh[i] * proj) / n;
    }
    out
}

/// Σ = R diag(exp(2s)) R^T
pub fn covariance_from(log_scale: &[f64; 3], q: &[f64; 4]) -> [f64; 9] {
    let r = quat_to_rot(q);
    let d2 = [(2.0 * log_scale[0]).exp(), (2.0 * log_scale[1]).exp(), (2.0 * log_scale[2]).exp()];
    let mut rd = [0.0; 9]; // R * D2
    for i in 0..3 {
        for j in 0..3 {
            rd[i * 3 + j] = r[i * 3 + j] * d2[j];
        }
    }
    mat3_mul(&rd, &mat3_transpose(&r))
}

/// Given dL/dΣ (per-entry, symmetric), returns (dL/dlog_scale, dL/dq).
pub fn covariance_backward(log_scale: &[f64; 3], q: &[f64; 4], d_sigma: &[f64; 9]) -> ([f64; 3], [f64; 4]) {
    let r = quat_to_rot(q);
    let rt = mat3_transpose(&r);
    let d2 = [(2.0 * log_scale[0]).exp(), (2.0 * log_scale[1]).exp(), (2.0 * log_scale[2]).exp()];
    // only the symmetric part of the upstream gradient can act on Σ
    let mut gs = [0.0; 9];
    for i in 0..3 {
        for j in 0..3 {
            gs[i * 3 + j] = 0.5 * (d_sigma[i * 3 + j] + d_sigma[j * 3 + i]);
        }
    }
    // ds_k = 2 e^{2 s_k} (R^T G R)_{kk}
    let rtgr = mat3_mul(&mat3_mul(&rt, &gs), &r);
    let ds = [2.0 * d2[0] * rtgr[0], 2.0 * d2[1] * rtgr[4], 2.0 * d2[2] * rtgr[8]];
    // dR = (G + G^T) R D2
    let gr = mat3_mul(&gs, &r);
    let mut drot = [0.0; 9];
    for i in 0..3 {
        for j in 0..3 {
            drot[i * 3 + j] = 2.0 * gr[i * 3 + j] * d2[j];
        }
    }
    (ds, quat_rot_backward(q, &drot))
}

pub fn sym2_eigenvalues(a: f64, b: f64, c: f64) -> (f64, f64) {
    let mid = 0.5 * (a + c);
    let rad = (0.25 * (a - c) * (a - c) + b * b).sqrt();
    (mid + rad, mid - rad)
}
