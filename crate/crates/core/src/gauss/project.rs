use super::camera::Camera;
use super::math;

/// Screen-space dilation floor added to both diagonal entries of the
/// projected covariance, in squared pixels. Keeps tiny Gaussians at least
/// roughly a pixel wide and the conic invertible.
pub const COV2D_FLOOR: f64 = 0.3;

/// Near-plane used for culling, in view-space depth.
pub const NEAR_CLIP: f64 = 1e-3;

/// A Gaussian after perspective projection. `cov2d` stores the symmetric
/// 2x2 matrix as (xx, xy, yy). `view_pos` and `jr` are retained for the
/// backward pass.
#[derive(Clone, Debug)]
pub struct Projected {
    pub center2d: [f64; 2],
    pub cov2d: [f64; 3],
    pub depth: f64,
    pub view_pos: [f64; 3],
    pub jr: [f64; 6], // (J * R), 2x3 row-major
}

/// Projects one Gaussian into the image plane. Returns `None` when the
/// center is on or behind the near plane.
pub fn project(cam: &Camera, center: &[f64; 3], log_scale: &[f64; 3], rot: &[f64; 4]) -> Option<Projected> {
    let t = cam.to_view(center);
    if t[2] <= NEAR_CLIP {
        return None;
    }
    let (tx, ty, tz) = (t[0], t[1], t[2]);
    let inv_z = 1.0 / tz;
    let center2d = [cam.fx * tx * inv_z + cam.cx, cam.fy * ty * inv_z + cam.cy];

    // J is the Jacobian of the pinhole map at t, rows (x', y'), cols t.
    let j = [
        cam.fx * inv_z,
        0.0,
        -cam.fx * tx * inv_z * inv_z,
        0.0,
        cam.fy * inv_z,
        -cam.fy * ty * inv_z * inv_z,
    ];
    let jr = mat23_mul_mat3(&j, &cam.rot);

    let sigma = math::covariance_from(log_scale, rot);
    // cov2d = JR * Sigma * (JR)^T + floor
    let mut ms = [0.0f64; 6]; // JR * Sigma, 2x3
    for r in 0..2 {
        for c in 0..3 {
            let mut acc = 0.0;
            for k in 0..3 {
                acc += jr[r * 3 + k] * sigma[k * 3 + c];
            }
            ms[r * 3 + c] = acc;
        }
    }
    let mut cov = [0.0f64; 3];
    for (slot, (r, c)) in [(0usize, 0usize), (0, 1), (1, 1)].iter().enumerate() {
        let mut acc = 0.0;
        for k in 0..3 {
            acc += ms[r * 3 + k] * jr[c * 3 + k];
        }
        cov[slot] = acc;
    }
    cov[0] += COV2D_FLOOR;
    cov[2] += COV2D_FLOOR;

    Some(Projected { center2d, cov2d: cov, depth: tz, view_pos: t, jr })
}

/// Adjoints flowing out of the rasterizer for one projected Gaussian.
/// `d_cov2d` is w.r.t. the stored (xx, xy, yy) triple, so the off-diagonal
/// entry carries the combined sensitivity of both symmetric positions.
#[derive(Clone, Copy, Debug, Default)]
pub struct ProjectedGrad {
    pub d_center2d: [f64; 2],
    pub d_cov2d: [f64; 3],
    pub d_depth: f64,
}

/// Gradients w.r.t. the Gaussian's world-space parameters.
#[derive(Clone, Debug, Default)]
pub struct GaussianParamGrad {
    pub d_center: [f64; 3],
    pub d_log_scale: [f64; 3],
    pub d_rot: [f64; 4],
}

pub fn project_backward(
    cam: &Camera,
    log_scale: &[f64; 3],
    rot: &[f64; 4],
    proj: &Projected,
    grad: &ProjectedGrad,
) -> GaussianParamGrad {
    let (tx, ty, tz) = (proj.view_pos[0], proj.view_pos[1], proj.view_pos[2]);
    let inv_z = 1.0 / tz;

    // Spread the symmetric triple into a full 2x2 adjoint.
    let dc = [grad.d_cov2d[0], 0.5 * grad.d_cov2d[1], 0.5 * grad.d_cov2d[1], grad.d_cov2d[2]];

    let sigma = math::covariance_from(log_scale, rot);
    // d(JR) = (dC + dC^T) * JR * Sigma ; dC already symmetric here.
    let sym = [2.0 * dc[0], 2.0 * dc[1], 2.0 * dc[2], 2.0 * dc[3]];
    let mut sym_m = [0.0f64; 6]; // (dC+dC^T) * JR, 2x3
    for r in 0..2 {
        for c in 0..3 {
            sym_m[r * 3 + c] = sym[r * 2] * proj.jr[c] + sym[r * 2 + 1] * proj.jr[3 + c];
        }
    }
    let mut d_jr = [0.0f64; 6];
    for r in 0..2 {
        for c in 0..3 {
            let mut acc = 0.0;
            for k in 0..3 {
                acc += sym_m[r * 3 + k] * sigma[k * 3 + c];
            }
            d_jr[r * 3 + c] = acc;
        }
    }

    // dSigma = (JR)^T * dC * JR
    let mut d_sigma = [0.0f64; 9];
    for a in 0..3 {
        for b in 0..3 {
            let mut acc = 0.0;
            for r in 0..2 {
                for c in 0..2 {
                    acc += proj.jr[r * 3 + a] * dc[r * 2 + c] * proj.jr[c * 3 + b];
                }
            }
            d_sigma[a * 3 + b] = acc;
        }
    }
    let (d_log_scale, d_rot) = math::covariance_backward(log_scale, rot, &d_sigma);

    // dJ = d(JR) * R^T
    let mut d_j = [0.0f64; 6];
    for r in 0..2 {
        for c in 0..3 {
            let mut acc = 0.0;
            for k in 0..3 {
                acc += d_jr[r * 3 + k] * cam.rot[c * 3 + k];
            }
            d_j[r * 3 + c] = acc;
        }
    }

    // View-space gradient: J entries, the pinhole map, and depth all touch t.
    let iz2 = inv_z * inv_z;
    let iz3 = iz2 * inv_z;
    let mut d_t = [0.0f64; 3];
    d_t[0] += d_j[2] * (-cam.fx * iz2);
    d_t[1] += d_j[5] * (-cam.fy * iz2);
    d_t[2] += d_j[0] * (-cam.fx * iz2)
        + d_j[4] * (-cam.fy * iz2)
        + d_j[2] * (2.0 * cam.fx * tx * iz3)
        + d_j[5] * (2.0 * cam.fy * ty * iz3);

    d_t[0] += grad.d_center2d[0] * cam.fx * inv_z;
    d_t[1] += grad.d_center2d[1] * cam.fy * inv_z;
    d_t[2] += grad.d_center2d[0] * (-cam.fx * tx * iz2) + grad.d_center2d[1] * (-cam.fy * ty * iz2);

    d_t[2] += grad.d_depth;

    let d_center = math::mat3t_mul_vec(&cam.rot, &d_t);
    GaussianParamGrad { d_center, d_log_scale, d_rot }
}

fn mat23_mul_mat3(a: &[f64; 6], b: &[f64; 9]) -> [f64; 6] {
    let mut out = [0.0f64; 6];
    for r in 0..2 {
        for c in 0..3 {
            let mut acc = 0.0;
            for k in 0..3 {
                acc += a[r * 3 + k] * b[k * 3 + c];
            }
            out[r * 3 + c] = acc;
        }
    }
    out
}
