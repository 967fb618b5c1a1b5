//! Photometric residuals and their structured Jacobian.
//!
//! One residual per target pixel: r_p = I_t(p) - I_s(warp(p)). The Jacobian
//! has one nonzero inverse-depth column entry per row plus a dense 6-column
//! pose block, so it is stored in that block form; the dense materialization
//! exists for tests and finite-difference validation only.

use super::camera::{bilinear_sample, project, CameraIntrinsics, Image, Z_MIN};
use super::se3::{PosePointJacobian, Se3Pose};
use crate::linalg::{DenseMatrix, DenseVector};
use crate::problem::LeastSquaresProblem;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Per-pixel inverse depth map (row-major, entries >= Z_MIN).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InverseDepthMap {
    pub width: usize,
    pub height: usize,
    pub z: Vec<f64>,
}

impl InverseDepthMap {
    pub fn constant(width: usize, height: usize, z: f64) -> Self {
        InverseDepthMap {
            width,
            height,
            z: vec![z.max(Z_MIN); width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, z: Vec<f64>) -> Self {
        assert_eq!(z.len(), width * height);
        InverseDepthMap { width, height, z }
    }

    pub fn clamp_min(&mut self) {
        for v in &mut self.z {
            if *v < Z_MIN {
                *v = Z_MIN;
            }
        }
    }

    pub fn l1_error(&self, other: &InverseDepthMap) -> f64 {
        self.z
            .iter()
            .zip(&other.z)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / self.z.len() as f64
    }
}

/// A two-view problem instance: target/source images, intrinsics, ground
/// truth and the visibility mask of the ground-truth warp.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StereoInstance {
    pub target: Image,
    pub source: Image,
    pub intrinsics: CameraIntrinsics,
    pub truth_z: InverseDepthMap,
    pub truth_pose: Se3Pose,
    pub mask: Vec<bool>,
    pub mean_scene_depth: f64,
    pub seed: u64,
}

impl StereoInstance {
    pub fn pixels(&self) -> usize {
        self.intrinsics.pixels()
    }

    /// Default solver initialization: constant inverse depth at the mean
    /// scene depth, zero pose.
    pub fn default_init(&self) -> (InverseDepthMap, Se3Pose) {
        (
            InverseDepthMap::constant(
                self.intrinsics.width,
                self.intrinsics.height,
                1.0 / self.mean_scene_depth,
            ),
            Se3Pose::identity(),
        )
    }

    /// Pack (z, pose) into the solver's parameter vector layout
    /// [z_0 .. z_{n-1}, t, alpha].
    pub fn pack(&self, z: &InverseDepthMap, pose: &Se3Pose) -> DenseVector {
        let mut data = z.z.clone();
        data.extend_from_slice(&pose.t);
        data.extend_from_slice(&pose.alpha);
        DenseVector::from_vec(data)
    }

    pub fn unpack(&self, x: &DenseVector) -> (InverseDepthMap, Se3Pose) {
        let n = self.pixels();
        let z = InverseDepthMap::from_vec(
            self.intrinsics.width,
            self.intrinsics.height,
            x.as_slice()[..n].to_vec(),
        );
        let pose = Se3Pose::from_slice(&x.as_slice()[n..]);
        (z, pose)
    }
}

/// Photometric residual vector. Masked pixels (warp out of bounds or behind
/// the camera) contribute residual 0 and are flagged false; the residual
/// vector keeps its full length so shapes stay fixed across iterations.
pub fn photometric_residuals(
    instance: &StereoInstance,
    z: &InverseDepthMap,
    pose: &Se3Pose,
) -> (DenseVector, Vec<bool>) {
    let k = &instance.intrinsics;
    let t = super::se3::se3_exp(pose);
    let n = k.pixels();
    let mut r = vec![0.0; n];
    let mut mask = vec![false; n];
    for v in 0..k.height {
        for u in 0..k.width {
            let idx = v * k.width + u;
            let w = project(k, &t, z.z[idx], u as f64, v as f64);
            if !w.in_front {
                continue;
            }
            let s = bilinear_sample(&instance.source, w.u, w.v);
            if !s.in_bounds {
                continue;
            }
            r[idx] = instance.target.get(u, v) - s.value;
            mask[idx] = true;
        }
    }
    (DenseVector::from_vec(r), mask)
}

/// The photometric Jacobian in block form: one inverse-depth derivative per
/// pixel plus a dense pose block, with the residual-to-pixel map implicit in
/// row-major pixel order.
#[derive(Debug, Clone)]
pub struct StructuredJacobian {
    pub width: usize,
    pub height: usize,
    /// dr_p/dz_p, one scalar per pixel (0 where masked).
    pub jz: Vec<f64>,
    /// dr_p/dpose, n x 6 (rows zero where masked).
    pub jp: DenseMatrix,
    pub mask: Vec<bool>,
}

impl StructuredJacobian {
    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    /// Dense n x (n+6) materialization. Test/validation use only; the solver
    /// works on the blocks.
    pub fn dense(&self) -> DenseMatrix {
        let n = self.pixels();
        let mut j = DenseMatrix::zeros(n, n + 6);
        for p in 0..n {
            j.set(p, p, self.jz[p]);
            for c in 0..6 {
                j.set(p, n + c, self.jp.get(p, c));
            }
        }
        j
    }
}

/// JᵀJ and Jᵀr assembled from the structured blocks:
/// depth diagonal, depth-pose coupling, dense 6x6 pose Gram block.
#[derive(Debug, Clone)]
pub struct NormalBlocks {
    /// (JᵀJ)_{z_p z_p} = jz_p².
    pub depth_diag: Vec<f64>,
    /// (JᵀJ)_{z_p, pose_k} = jz_p · jp_{p,k}; n x 6.
    pub coupling: DenseMatrix,
    /// Σ_p jp_pᵀ jp_p, 6 x 6.
    pub pose_gram: [[f64; 6]; 6],
    /// (Jᵀr)_{z_p} = jz_p · r_p.
    pub jtr_depth: Vec<f64>,
    /// (Jᵀr)_pose.
    pub jtr_pose: [f64; 6],
}

impl NormalBlocks {
    pub fn build(sj: &StructuredJacobian, r: &DenseVector) -> Self {
        let n = sj.pixels();
        assert_eq!(r.len(), n);
        let mut depth_diag = vec![0.0; n];
        let mut coupling = DenseMatrix::zeros(n, 6);
        let mut pose_gram = [[0.0; 6]; 6];
        let mut jtr_depth = vec![0.0; n];
        let mut jtr_pose = [0.0; 6];
        for p in 0..n {
            let jz = sj.jz[p];
            let jp = sj.jp.row(p);
            depth_diag[p] = jz * jz;
            jtr_depth[p] = jz * r[p];
            for k in 0..6 {
                coupling.set(p, k, jz * jp[k]);
                jtr_pose[k] += jp[k] * r[p];
                for l in 0..=k {
                    pose_gram[k][l] += jp[k] * jp[l];
                }
            }
        }
        for k in 0..6 {
            for l in (k + 1)..6 {
                pose_gram[k][l] = pose_gram[l][k];
            }
        }
        NormalBlocks {
            depth_diag,
            coupling,
            pose_gram,
            jtr_depth,
            jtr_pose,
        }
    }

    /// Dense (n+6) x (n+6) JᵀJ; tests only.
    pub fn dense_jtj(&self) -> DenseMatrix {
        let n = self.depth_diag.len();
        let mut m = DenseMatrix::zeros(n + 6, n + 6);
        for p in 0..n {
            m.set(p, p, self.depth_diag[p]);
            for k in 0..6 {
                m.set(p, n + k, self.coupling.get(p, k));
                m.set(n + k, p, self.coupling.get(p, k));
            }
        }
        for k in 0..6 {
            for l in 0..6 {
                m.set(n + k, n + l, self.pose_gram[k][l]);
            }
        }
        m
    }

    /// Right-hand side -Jᵀr in solver layout.
    pub fn neg_jtr(&self) -> DenseVector {
        let n = self.jtr_depth.len();
        let mut g = Vec::with_capacity(n + 6);
        g.extend(self.jtr_depth.iter().map(|v| -v));
        g.extend(self.jtr_pose.iter().map(|v| -v));
        DenseVector::from_vec(g)
    }

    /// Fill `packed` with the lower triangle of JᵀJ + λ·D where D is
    /// diag(JᵀJ) with zero entries replaced by `zero_diag_damping` scaled by
    /// the largest positive diagonal entry (bare value when the diagonal is
    /// entirely zero). Returns the largest diagonal entry of the damped
    /// matrix.
    pub fn fill_packed_damped(
        &self,
        lambda: f64,
        zero_diag_damping: f64,
        packed: &mut Vec<f64>,
    ) -> f64 {
        let n = self.depth_diag.len();
        let total = n + 6;
        packed.clear();
        packed.resize(total * (total + 1) / 2, 0.0);
        let mut scale = 0.0_f64;
        for &d in &self.depth_diag {
            scale = scale.max(d);
        }
        for k in 0..6 {
            scale = scale.max(self.pose_gram[k][k]);
        }
        let zero_damp = zero_diag_damping * scale.max(1.0);
        let mut max_diag = 0.0_f64;
        for (p, &d) in self.depth_diag.iter().enumerate() {
            let damp = if d > 0.0 { d } else { zero_damp };
            let val = d + lambda * damp;
            packed[crate::linalg::packed_row_start(p) + p] = val;
            max_diag = max_diag.max(val);
        }
        for k in 0..6 {
            let row = crate::linalg::packed_row_start(n + k);
            for p in 0..n {
                packed[row + p] = self.coupling.get(p, k);
            }
            for l in 0..=k {
                let mut val = self.pose_gram[k][l];
                if l == k {
                    let damp = if val > 0.0 { val } else { zero_damp };
                    val += lambda * damp;
                    max_diag = max_diag.max(val);
                }
                packed[row + n + l] = val;
            }
        }
        max_diag
    }
}

/// Analytic structured Jacobian of the photometric residuals: chain rule
/// through bilinear sampling, projection and the SE(3) exponential map.
/// Masked rows are zero.
pub fn photometric_jacobian(
    instance: &StereoInstance,
    z: &InverseDepthMap,
    pose: &Se3Pose,
) -> StructuredJacobian {
    let k = &instance.intrinsics;
    let n = k.pixels();
    let pj = PosePointJacobian::new(pose);
    let t = &pj.transform;
    let mut jz = vec![0.0; n];
    let mut jp = DenseMatrix::zeros(n, 6);
    let mut mask = vec![false; n];
    for v in 0..k.height {
        for u in 0..k.width {
            let idx = v * k.width + u;
            let zp = z.z[idx].max(Z_MIN);
            let w = project(k, t, zp, u as f64, v as f64);
            if !w.in_front {
                continue;
            }
            let s = bilinear_sample(&instance.source, w.u, w.v);
            if !s.in_bounds {
                continue;
            }
            mask[idx] = true;
            // Chain rule on the projective point y' = R·ray + z·(V t):
            // the projection is scale invariant, so its differential at y'
            // with dy'/dz = V t, dy'/dt = z·V and dy'/dalpha from the
            // Rodrigues derivatives gives the residual derivatives directly.
            let y = w.point;
            let inv_w = 1.0 / y[2];
            let duv_dy = [
                [k.fx * inv_w, 0.0, -k.fx * y[0] * inv_w * inv_w],
                [0.0, k.fy * inv_w, -k.fy * y[1] * inv_w * inv_w],
            ];
            // dr/dy' (1x3) with r = I_t - I_s(warp).
            let mut dr_dy = [0.0; 3];
            for c in 0..3 {
                dr_dy[c] = -(s.grad_u * duv_dy[0][c] + s.grad_v * duv_dy[1][c]);
            }
            jz[idx] = dr_dy[0] * t.t[0] + dr_dy[1] * t.t[1] + dr_dy[2] * t.t[2];
            // Translation block: dy'/dt = z·V(alpha).
            for c in 0..3 {
                let mut acc = 0.0;
                for rr in 0..3 {
                    acc += dr_dy[rr] * pj.v[rr][c];
                }
                jp.set(idx, c, zp * acc);
            }
            // Rotation block.
            let ray = k.ray(u as f64, v as f64);
            let dy_da = pj.dy_dalpha_projective(ray, zp);
            for c in 0..3 {
                let mut acc = 0.0;
                for rr in 0..3 {
                    acc += dr_dy[rr] * dy_da[rr][c];
                }
                jp.set(idx, 3 + c, acc);
            }
        }
    }
    StructuredJacobian {
        width: k.width,
        height: k.height,
        jz,
        jp,
        mask,
    }
}

/// Dense problem adapter over a stereo instance with parameter layout
/// [z_0 .. z_{n-1}, t, alpha]. The Jacobian here is the materialized
/// structured form; solvers use the blocks directly.
pub struct StereoProblem<'a> {
    pub instance: &'a StereoInstance,
}

impl<'a> StereoProblem<'a> {
    pub fn new(instance: &'a StereoInstance) -> Self {
        StereoProblem { instance }
    }

    fn split(&self, x: &DenseVector) -> (InverseDepthMap, Se3Pose) {
        self.instance.unpack(x)
    }
}

impl LeastSquaresProblem for StereoProblem<'_> {
    fn dim_x(&self) -> usize {
        self.instance.pixels() + 6
    }

    fn dim_r(&self) -> usize {
        self.instance.pixels()
    }

    fn residuals(&self, x: &DenseVector) -> Result<DenseVector> {
        if x.len() != self.dim_x() {
            return Err(Error::DimensionMismatch {
                context: "stereo residuals",
                expected: self.dim_x(),
                got: x.len(),
            });
        }
        let (z, pose) = self.split(x);
        Ok(photometric_residuals(self.instance, &z, &pose).0)
    }

    fn jacobian(&self, x: &DenseVector) -> Result<DenseMatrix> {
        let (z, pose) = self.split(x);
        Ok(photometric_jacobian(self.instance, &z, &pose).dense())
    }

    fn ground_truth(&self) -> Option<&DenseVector> {
        None
    }

    fn family(&self) -> &str {
        "photometric"
    }

    /// Restrict finite-difference validation to pixels whose warp sits well
    /// inside the image and away from the integer grid lines where bilinear
    /// interpolation has curvature kinks.
    fn fd_validation_mask(&self, x: &DenseVector) -> Option<Vec<bool>> {
        let (z, pose) = self.split(x);
        let k = &self.instance.intrinsics;
        let t = super::se3::se3_exp(&pose);
        let margin = 1e-3;
        let mut mask = vec![false; k.pixels()];
        for v in 0..k.height {
            for u in 0..k.width {
                let idx = v * k.width + u;
                let w = project(k, &t, z.z[idx], u as f64, v as f64);
                if !w.in_front {
                    continue;
                }
                let interior = w.u >= 1.0 + margin
                    && w.u <= (k.width - 2) as f64 - margin
                    && w.v >= 1.0 + margin
                    && w.v <= (k.height - 2) as f64 - margin;
                let off_grid = w.u.fract() > margin
                    && w.u.fract() < 1.0 - margin
                    && w.v.fract() > margin
                    && w.v.fract() < 1.0 - margin;
                mask[idx] = interior && off_grid;
            }
        }
        Some(mask)
    }
}
