use serde::{Deserialize, Serialize};

use super::math;
use crate::error::{Error, Result};

/// Pinhole camera with a world-to-camera rigid transform: x_cam = R x + t.
/// Camera looks down +z in its own frame; pixel (0,0) is the top-left corner
/// and pixel centers sit at integer + 0.5.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// Row-major 3x3 rotation of the world-to-camera transform.
    pub rot: [f64; 9],
    pub trans: [f64; 3],
}

impl Camera {
    pub fn validate(&self) -> Result<()> {
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::Validation("camera focal lengths must be positive".into()));
        }
        // orthonormality within 1e-9
        let r = &self.rot;
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| r[i * 3 + k] * r[j * 3 + k]).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                if (dot - expect).abs() > 1e-9 {
                    return Err(Error::Validation(format!(
                        "camera rotation not orthonormal: row {i}.row {j} = {dot}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn to_view(&self, p: &[f64; 3]) -> [f64; 3] {
        let r = math::mat3_mul_vec(&self.rot, p);
        [r[0] + self.trans[0], r[1] + self.trans[1], r[2] + self.trans[2]]
    }

    /// World-space camera position: -R^T t.
    pub fn center(&self) -> [f64; 3] {
        let v = math::mat3t_mul_vec(&self.rot, &self.trans);
        [-v[0], -v[1], -v[2]]
    }

    /// Pixel coordinates of a view-space point (z > 0 assumed).
    pub fn project_view(&self, v: &[f64; 3]) -> [f64; 2] {
        [self.fx * v[0] / v[2] + self.cx, self.fy * v[1] / v[2] + self.cy]
    }

    /// World-space point on the ray of pixel center (px+0.5, py+0.5) at
    /// view-space depth z.
    pub fn unproject(&self, px: usize, py: usize, z: f64) -> [f64; 3] {
        let u = px as f64 + 0.5;
        let v = py as f64 + 0.5;
        let view = [(u - self.cx) / self.fx * z, (v - self.cy) / self.fy * z, z];
        let shifted = [view[0] - self.trans[0], view[1] - self.trans[1], view[2] - self.trans[2]];
        math::mat3t_mul_vec(&self.rot, &shifted)
    }

    /// World-space unit direction of the ray through pixel center (px, py).
    pub fn ray_dir(&self, px: usize, py: usize) -> [f64; 3] {
        let u = px as f64 + 0.5;
        let v = py as f64 + 0.5;
        let d = [(u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0];
        let w = math::mat3t_mul_vec(&self.rot, &d);
        let n = (w[0] * w[0] + w[1] * w[1] + w[2] * w[2]).sqrt();
        [w[0] / n, w[1] / n, w[2] / n]
    }

    /// Look-at constructor: camera at `eye` looking toward `target`, with
    /// `up` fixing the roll (world-space, usually +y or -y depending on the
    /// image convention; we use y-down pixels so pass up = (0,-1,0) for an
    /// upright image).
    pub fn look_at(eye: [f64; 3], target: [f64; 3], up: [f64; 3], fx: f64, fy: f64, width: usize, height: usize) -> Self {
        let fwd = norm3(sub3(target, eye));
        let right = norm3(cross3(up, fwd));
        let down = cross3(fwd, right);
        // rows of R are the camera axes expressed in world coordinates
        let rot = [
            right[0], right[1], right[2],
            down[0], down[1], down[2],
            fwd[0], fwd[1], fwd[2],
        ];
        let re = math::mat3_mul_vec(&rot, &eye);
        Camera {
            fx,
            fy,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
            rot,
            trans: [-re[0], -re[1], -re[2]],
        }
    }
}

fn sub3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn norm3(a: [f64; 3]) -> [f64; 3] {
    let n = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
    [a[0] / n, a[1] / n, a[2] / n]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn axis_camera() -> Camera {
        Camera {
            fx: 50.0,
            fy: 50.0,
            cx: 16.0,
            cy: 12.0,
            width: 32,
            height: 24,
            rot: [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
            trans: [0.0; 3],
        }
    }

    #[test]
    fn unproject_project_round_trip() {
        let c = Camera::look_at([3.0, 2.0, -5.0], [0.0, 0.0, 0.0], [0.0, -1.0, 0.0], 40.0, 40.0, 32, 24);
        c.validate().unwrap();
        let p = c.unproject(10, 7, 2.5);
        let v = c.to_view(&p);
        assert!((v[2] - 2.5).abs() < 1e-12);
        let px = c.project_view(&v);
        assert!((px[0] - 10.5).abs() < 1e-9);
        assert!((px[1] - 7.5).abs() < 1e-9);
    }

    #[test]
    fn principal_point_unprojects_on_axis() {
        let mut c = axis_camera();
        // half-integer principal point lands on the center of pixel (15, 11)
        c.cx = 15.5;
        c.cy = 11.5;
        let p = c.unproject(15, 11, 3.0);
        assert!(p[0].abs() < 1e-12 && p[1].abs() < 1e-12 && (p[2] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn camera_center_inverts_pose() {
        let c = Camera::look_at([1.0, -2.0, 4.0], [0.0, 1.0, 0.0], [0.0, -1.0, 0.0], 30.0, 30.0, 16, 16);
        let cen = c.center();
        assert!((cen[0] - 1.0).abs() < 1e-12);
        assert!((cen[1] + 2.0).abs() < 1e-12);
        assert!((cen[2] - 4.0).abs() < 1e-12);
    }
}
