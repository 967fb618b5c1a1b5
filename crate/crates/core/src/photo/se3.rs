//! SE(3) rigid transforms parameterized by a 6-vector (translation, rotation
//! vector) through the exponential map, with analytic derivatives of the
//! transformed point with respect to the 6 parameters.

use crate::linalg::DenseVector;
use serde::{Deserialize, Serialize};

/// Below this angle the Rodrigues coefficients switch to series expansions.
const SMALL_ANGLE: f64 = 1e-6;

/// Relative pose as a 6-vector: translation t (scene units) then rotation
/// vector alpha (radians), interpreted through the SE(3) exponential map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Se3Pose {
    pub t: [f64; 3],
    pub alpha: [f64; 3],
}

impl Se3Pose {
    pub fn identity() -> Self {
        Se3Pose {
            t: [0.0; 3],
            alpha: [0.0; 3],
        }
    }

    pub fn new(t: [f64; 3], alpha: [f64; 3]) -> Self {
        Se3Pose { t, alpha }
    }

    pub fn from_slice(p: &[f64]) -> Self {
        assert_eq!(p.len(), 6);
        Se3Pose {
            t: [p[0], p[1], p[2]],
            alpha: [p[3], p[4], p[5]],
        }
    }

    pub fn to_vector(self) -> DenseVector {
        DenseVector::from_vec(vec![
            self.t[0],
            self.t[1],
            self.t[2],
            self.alpha[0],
            self.alpha[1],
            self.alpha[2],
        ])
    }

    pub fn negated(self) -> Self {
        Se3Pose {
            t: [-self.t[0], -self.t[1], -self.t[2]],
            alpha: [-self.alpha[0], -self.alpha[1], -self.alpha[2]],
        }
    }

    pub fn rotation_angle(&self) -> f64 {
        norm3(self.alpha)
    }
}

/// Homogeneous 4x4 rigid transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transform {
    pub r: [[f64; 3]; 3],
    pub t: [f64; 3],
}

impl Transform {
    pub fn identity() -> Self {
        Transform {
            r: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            t: [0.0; 3],
        }
    }

    pub fn apply(&self, x: [f64; 3]) -> [f64; 3] {
        [
            self.r[0][0] * x[0] + self.r[0][1] * x[1] + self.r[0][2] * x[2] + self.t[0],
            self.r[1][0] * x[0] + self.r[1][1] * x[1] + self.r[1][2] * x[2] + self.t[1],
            self.r[2][0] * x[0] + self.r[2][1] * x[1] + self.r[2][2] * x[2] + self.t[2],
        ]
    }

    pub fn compose(&self, other: &Transform) -> Transform {
        let mut r = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                r[i][j] = (0..3).map(|k| self.r[i][k] * other.r[k][j]).sum();
            }
        }
        let t = self.apply(other.t);
        Transform { r, t }
    }

    pub fn matrix4(&self) -> [[f64; 4]; 4] {
        let mut m = [[0.0; 4]; 4];
        for i in 0..3 {
            m[i][..3].copy_from_slice(&self.r[i]);
            m[i][3] = self.t[i];
        }
        m[3][3] = 1.0;
        m
    }
}

pub fn norm3(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

pub fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn skew(v: [f64; 3]) -> [[f64; 3]; 3] {
    [
        [0.0, -v[2], v[1]],
        [v[2], 0.0, -v[0]],
        [-v[1], v[0], 0.0],
    ]
}

fn mat_mul3(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

fn mat_vec3(a: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    [
        a[0][0] * v[0] + a[0][1] * v[1] + a[0][2] * v[2],
        a[1][0] * v[0] + a[1][1] * v[1] + a[1][2] * v[2],
        a[2][0] * v[0] + a[2][1] * v[1] + a[2][2] * v[2],
    ]
}

/// Rodrigues coefficients s(θ) = sinθ/θ, f(θ) = (1-cosθ)/θ², g(θ) = (θ-sinθ)/θ³
/// and their derivatives with respect to θ, with series below [`SMALL_ANGLE`].
struct RodriguesCoeffs {
    s: f64,
    f: f64,
    g: f64,
    ds: f64,
    df: f64,
    dg: f64,
}

fn rodrigues_coeffs(theta: f64) -> RodriguesCoeffs {
    if theta < SMALL_ANGLE {
        let t2 = theta * theta;
        RodriguesCoeffs {
            s: 1.0 - t2 / 6.0 + t2 * t2 / 120.0,
            f: 0.5 - t2 / 24.0 + t2 * t2 / 720.0,
            g: 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0,
            ds: -theta / 3.0 + theta * t2 / 30.0,
            df: -theta / 12.0 + theta * t2 / 180.0,
            dg: -theta / 60.0 + theta * t2 / 840.0,
        }
    } else {
        let (sin, cos) = theta.sin_cos();
        let t2 = theta * theta;
        let s = sin / theta;
        let f = (1.0 - cos) / t2;
        let g = (theta - sin) / (t2 * theta);
        RodriguesCoeffs {
            s,
            f,
            g,
            ds: (cos - s) / theta,
            df: (sin - 2.0 * theta * f) / (t2),
            dg: (1.0 - cos - 3.0 * t2 * g) / (t2 * theta),
        }
    }
}

/// SE(3) exponential map: rotation by Rodrigues, translation through the
/// standard V(alpha) matrix.
pub fn se3_exp(p: &Se3Pose) -> Transform {
    let theta = norm3(p.alpha);
    let c = rodrigues_coeffs(theta);
    let k = skew(p.alpha);
    let k2 = mat_mul3(&k, &k);
    let mut r = [[0.0; 3]; 3];
    let mut v = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let id = if i == j { 1.0 } else { 0.0 };
            r[i][j] = id + c.s * k[i][j] + c.f * k2[i][j];
            v[i][j] = id + c.f * k[i][j] + c.g * k2[i][j];
        }
    }
    Transform {
        r,
        t: mat_vec3(&v, p.t),
    }
}

/// Derivatives of the transformed point y = R(alpha)·x + V(alpha)·t with
/// respect to the six pose parameters, evaluated once per (pose, point).
///
/// The parts that do not depend on the point (V and the three 3x3 matrices
/// dR/dalpha_k plus the three vectors dV/dalpha_k · t) are precomputed by
/// [`PosePointJacobian::new`] and shared across all pixels of a frame.
pub struct PosePointJacobian {
    pub transform: Transform,
    /// dy/dt = V(alpha).
    pub v: [[f64; 3]; 3],
    /// dR/dalpha_k for k = 0, 1, 2.
    dr: [[[f64; 3]; 3]; 3],
    /// (dV/dalpha_k) · t for k = 0, 1, 2.
    dv_t: [[f64; 3]; 3],
}

impl PosePointJacobian {
    pub fn new(p: &Se3Pose) -> Self {
        let theta = norm3(p.alpha);
        let c = rodrigues_coeffs(theta);
        let k = skew(p.alpha);
        let k2 = mat_mul3(&k, &k);
        let mut v = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                let id = if i == j { 1.0 } else { 0.0 };
                v[i][j] = id + c.f * k[i][j] + c.g * k2[i][j];
            }
        }
        let mut dr = [[[0.0; 3]; 3]; 3];
        let mut dv_t = [[0.0; 3]; 3];
        for axis in 0..3 {
            let mut e = [0.0; 3];
            e[axis] = 1.0;
            let ke = skew(e);
            let ke_k = mat_mul3(&ke, &k);
            let k_ke = mat_mul3(&k, &ke);
            // d theta / d alpha_axis = alpha_axis / theta (0 in the limit).
            let dtheta = if theta < SMALL_ANGLE {
                0.0
            } else {
                p.alpha[axis] / theta
            };
            let mut dv = [[0.0; 3]; 3];
            for i in 0..3 {
                for j in 0..3 {
                    dr[axis][i][j] = c.ds * dtheta * k[i][j]
                        + c.s * ke[i][j]
                        + c.df * dtheta * k2[i][j]
                        + c.f * (ke_k[i][j] + k_ke[i][j]);
                    dv[i][j] = c.df * dtheta * k[i][j]
                        + c.f * ke[i][j]
                        + c.dg * dtheta * k2[i][j]
                        + c.g * (ke_k[i][j] + k_ke[i][j]);
                }
            }
            dv_t[axis] = mat_vec3(&dv, p.t);
        }
        PosePointJacobian {
            transform: se3_exp(p),
            v,
            dr,
            dv_t,
        }
    }

    /// dy/dalpha (3x3, columns indexed by alpha component) at target point x.
    pub fn dy_dalpha(&self, x: [f64; 3]) -> [[f64; 3]; 3] {
        let mut out = [[0.0; 3]; 3];
        for axis in 0..3 {
            let col = [
                mat_vec3(&self.dr[axis], x)[0] + self.dv_t[axis][0],
                mat_vec3(&self.dr[axis], x)[1] + self.dv_t[axis][1],
                mat_vec3(&self.dr[axis], x)[2] + self.dv_t[axis][2],
            ];
            for i in 0..3 {
                out[i][axis] = col[i];
            }
        }
        out
    }

    /// Same derivative for the projective point y' = R·ray + z·(V t):
    /// columns are dR_k·ray + z·(dV_k·t).
    pub fn dy_dalpha_projective(&self, ray: [f64; 3], z: f64) -> [[f64; 3]; 3] {
        let mut out = [[0.0; 3]; 3];
        for axis in 0..3 {
            let rr = mat_vec3(&self.dr[axis], ray);
            for i in 0..3 {
                out[i][axis] = rr[i] + z * self.dv_t[axis][i];
            }
        }
        out
    }
}

/// Angle of the relative rotation between two rotation vectors, in radians.
pub fn rotation_error(alpha_a: [f64; 3], alpha_b: [f64; 3]) -> f64 {
    let ra = se3_exp(&Se3Pose::new([0.0; 3], alpha_a)).r;
    let rb = se3_exp(&Se3Pose::new([0.0; 3], alpha_b)).r;
    // trace(Ra·Rbᵀ) = 1 + 2 cos(angle)
    let mut trace = 0.0;
    for i in 0..3 {
        for k in 0..3 {
            trace += ra[i][k] * rb[i][k];
        }
    }
    ((trace - 1.0) * 0.5).clamp(-1.0, 1.0).acos()
}

/// Angle between two translation directions, in radians.
pub fn translation_direction_error(ta: [f64; 3], tb: [f64; 3]) -> f64 {
    let na = norm3(ta);
    let nb = norm3(tb);
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let dot = (ta[0] * tb[0] + ta[1] * tb[1] + ta[2] * tb[2]) / (na * nb);
    dot.clamp(-1.0, 1.0).acos()
}
