//! Pinhole camera model, grayscale images, warping and bilinear sampling.

use super::se3::Transform;
use serde::{Deserialize, Serialize};

/// Minimum inverse depth; iterates are clamped here after each update.
pub const Z_MIN: f64 = 1e-4;

/// Minimum depth in front of the source camera for a warp to count.
pub const D_MIN: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    /// Standard test camera for a given resolution: ~53 degree horizontal
    /// field of view, principal point at the pixel-grid center. The focal
    /// length equals the width so that for power-of-two resolutions the
    /// ray/projection arithmetic is exact in binary floating point.
    pub fn standard(width: usize, height: usize) -> Self {
        let f = width as f64;
        CameraIntrinsics {
            fx: f,
            fy: f,
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
            width,
            height,
        }
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    /// Unit-depth ray through pixel (u, v): K⁻¹ [u, v, 1].
    #[inline]
    pub fn ray(&self, u: f64, v: f64) -> [f64; 3] {
        [(u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0]
    }

    /// Perspective projection of a camera-frame point (assumes y[2] > 0).
    #[inline]
    pub fn project_point(&self, y: [f64; 3]) -> (f64, f64) {
        (
            self.fx * y[0] / y[2] + self.cx,
            self.fy * y[1] / y[2] + self.cy,
        )
    }
}

/// Outcome of warping one target pixel into the source view.
#[derive(Debug, Clone, Copy)]
pub struct Warp {
    /// Continuous source coordinate.
    pub u: f64,
    pub v: f64,
    /// Transformed point in projective form: z times the metric source-frame
    /// point, i.e. R·ray + z·t. Any positive scaling projects identically.
    pub point: [f64; 3],
    /// False when the point lands behind the source camera.
    pub in_front: bool,
}

/// Back-project target pixel (u, v) at inverse depth `z`, transform by `t`
/// and reproject into the source camera. Works on the scaled point
/// R·ray + z·t so the identity transform is exactly the identity on pixel
/// coordinates.
pub fn project(k: &CameraIntrinsics, t: &Transform, z: f64, u: f64, v: f64) -> Warp {
    let ray = k.ray(u, v);
    let z = z.max(Z_MIN);
    let yp = [
        t.r[0][0] * ray[0] + t.r[0][1] * ray[1] + t.r[0][2] * ray[2] + z * t.t[0],
        t.r[1][0] * ray[0] + t.r[1][1] * ray[1] + t.r[1][2] * ray[2] + z * t.t[1],
        t.r[2][0] * ray[0] + t.r[2][1] * ray[1] + t.r[2][2] * ray[2] + z * t.t[2],
    ];
    // Metric depth is yp[2]/z; require it in front of the camera.
    if yp[2] < D_MIN * z {
        return Warp {
            u: 0.0,
            v: 0.0,
            point: yp,
            in_front: false,
        };
    }
    let (us, vs) = k.project_point(yp);
    Warp {
        u: us,
        v: vs,
        point: yp,
        in_front: true,
    }
}

/// Grayscale image with intensities in [0, 1], row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Image {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for v in 0..height {
            for u in 0..width {
                data.push(f(u, v));
            }
        }
        Image {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.data[v * self.width + u]
    }

    #[inline]
    pub fn set(&mut self, u: usize, v: usize, val: f64) {
        self.data[v * self.width + u] = val;
    }
}

/// Result of a bilinear lookup: the interpolated intensity, its spatial
/// gradient (the exact derivative of the piecewise-bilinear surface), and
/// whether all four neighbors were inside the image.
#[derive(Debug, Clone, Copy)]
pub struct Sample {
    pub value: f64,
    pub grad_u: f64,
    pub grad_v: f64,
    pub in_bounds: bool,
}

/// Four-neighbor bilinear interpolation at a continuous coordinate.
/// `in_bounds` is false when any neighbor lies outside the image; the caller
/// masks the corresponding residual.
pub fn bilinear_sample(img: &Image, u: f64, v: f64) -> Sample {
    let u0f = u.floor();
    let v0f = v.floor();
    let u0 = u0f as isize;
    let v0 = v0f as isize;
    if u0 < 0 || v0 < 0 || u0 + 1 >= img.width as isize || v0 + 1 >= img.height as isize {
        return Sample {
            value: 0.0,
            grad_u: 0.0,
            grad_v: 0.0,
            in_bounds: false,
        };
    }
    let (u0, v0) = (u0 as usize, v0 as usize);
    let fu = u - u0f;
    let fv = v - v0f;
    let i00 = img.get(u0, v0);
    let i10 = img.get(u0 + 1, v0);
    let i01 = img.get(u0, v0 + 1);
    let i11 = img.get(u0 + 1, v0 + 1);
    let value = (1.0 - fu) * (1.0 - fv) * i00
        + fu * (1.0 - fv) * i10
        + (1.0 - fu) * fv * i01
        + fu * fv * i11;
    Sample {
        value,
        grad_u: (1.0 - fv) * (i10 - i00) + fv * (i11 - i01),
        grad_v: (1.0 - fu) * (i01 - i00) + fu * (i11 - i10),
        in_bounds: true,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::photo::se3::{se3_exp, Se3Pose};
    use crate::rng::RngState;

    #[test]
    fn identity_warp_is_identity_on_pixels() {
        let k = CameraIntrinsics::standard(32, 24);
        let t = Transform::identity();
        for (u, v) in [(0.0, 0.0), (13.0, 7.0), (31.0, 23.0), (15.5, 11.5)] {
            let w = project(&k, &t, 0.5, u, v);
            assert!(w.in_front);
            assert_eq!(w.u, u);
            assert_eq!(w.v, v);
        }
    }

    #[test]
    fn pure_x_translation_gives_closed_form_parallax() {
        let k = CameraIntrinsics::standard(32, 24);
        let tx = 0.3;
        let d = 2.0;
        let t = se3_exp(&Se3Pose::new([tx, 0.0, 0.0], [0.0; 3]));
        let w = project(&k, &t, 1.0 / d, 10.0, 6.0);
        assert!(w.in_front);
        assert!((w.u - (10.0 + k.fx * tx / d)).abs() < 1e-12);
        assert!((w.v - 6.0).abs() < 1e-12);
    }

    #[test]
    fn warp_matches_homogeneous_oracle() {
        let k = CameraIntrinsics::standard(32, 24);
        let mut rng = RngState::new(73);
        for _ in 0..100 {
            let pose = Se3Pose::new(
                [
                    rng.uniform(-0.3, 0.3),
                    rng.uniform(-0.3, 0.3),
                    rng.uniform(-0.3, 0.3),
                ],
                [
                    rng.uniform(-0.2, 0.2),
                    rng.uniform(-0.2, 0.2),
                    rng.uniform(-0.2, 0.2),
                ],
            );
            let t = se3_exp(&pose);
            let z = rng.uniform(0.2, 1.5);
            let u = rng.uniform(0.0, 31.0);
            let v = rng.uniform(0.0, 23.0);
            let w = project(&k, &t, z, u, v);
            // Independent homogeneous-coordinates computation.
            let m = t.matrix4();
            let d = 1.0 / z;
            let xh = [
                (u - k.cx) / k.fx * d,
                (v - k.cy) / k.fy * d,
                d,
                1.0,
            ];
            let mut yh = [0.0; 4];
            for i in 0..4 {
                for j in 0..4 {
                    yh[i] += m[i][j] * xh[j];
                }
            }
            if yh[2] < D_MIN {
                assert!(!w.in_front);
                continue;
            }
            let us = k.fx * yh[0] / yh[2] + k.cx;
            let vs = k.fy * yh[1] / yh[2] + k.cy;
            assert!((w.u - us).abs() < 1e-10);
            assert!((w.v - vs).abs() < 1e-10);
        }
    }

    #[test]
    fn behind_camera_flagged() {
        let k = CameraIntrinsics::standard(32, 24);
        let t = se3_exp(&Se3Pose::new([0.0, 0.0, -3.0], [0.0; 3]));
        let w = project(&k, &t, 1.0, 16.0, 12.0);
        assert!(!w.in_front);
    }

    #[test]
    fn integer_coordinates_are_exact() {
        let img = Image::from_fn(4, 3, |u, v| (u * 10 + v) as f64 / 100.0);
        for v in 0..2 {
            for u in 0..3 {
                let s = bilinear_sample(&img, u as f64, v as f64);
                assert!(s.in_bounds);
                assert_eq!(s.value, img.get(u, v));
            }
        }
    }

    #[test]
    fn checkerboard_center_is_half() {
        let mut img = Image::new(2, 2);
        img.set(0, 0, 0.0);
        img.set(1, 0, 1.0);
        img.set(0, 1, 1.0);
        img.set(1, 1, 0.0);
        let s = bilinear_sample(&img, 0.5, 0.5);
        assert_eq!(s.value, 0.5);
    }

    #[test]
    fn random_points_match_weight_sum_oracle() {
        let mut rng = RngState::new(79);
        let img = Image::from_fn(8, 6, |_, _| rng.uniform(0.0, 1.0));
        for _ in 0..200 {
            let u = rng.uniform(0.0, 6.999);
            let v = rng.uniform(0.0, 4.999);
            let s = bilinear_sample(&img, u, v);
            assert!(s.in_bounds);
            let (u0, v0) = (u.floor() as usize, v.floor() as usize);
            let (fu, fv) = (u - u.floor(), v - v.floor());
            let oracle = img.get(u0, v0) * (1.0 - fu) * (1.0 - fv)
                + img.get(u0 + 1, v0) * fu * (1.0 - fv)
                + img.get(u0, v0 + 1) * (1.0 - fu) * fv
                + img.get(u0 + 1, v0 + 1) * fu * fv;
            assert!((s.value - oracle).abs() < 1e-12);
        }
    }

    #[test]
    fn out_of_bounds_flagged() {
        let img = Image::new(4, 4);
        assert!(!bilinear_sample(&img, -0.5, 1.0).in_bounds);
        assert!(!bilinear_sample(&img, 3.5, 1.0).in_bounds);
        assert!(!bilinear_sample(&img, 1.0, 3.2).in_bounds);
    }

    #[test]
    fn gradient_matches_finite_difference_of_sample() {
        let mut rng = RngState::new(83);
        let img = Image::from_fn(8, 8, |_, _| rng.uniform(0.0, 1.0));
        for _ in 0..50 {
            let u = rng.uniform(1.2, 5.8);
            let v = rng.uniform(1.2, 5.8);
            let s = bilinear_sample(&img, u, v);
            let h = 1e-7;
            let du = (bilinear_sample(&img, u + h, v).value
                - bilinear_sample(&img, u - h, v).value)
                / (2.0 * h);
            let dv = (bilinear_sample(&img, u, v + h).value
                - bilinear_sample(&img, u, v - h).value)
                / (2.0 * h);
            // Away from integer lines the surface is smooth.
            if (u.fract() - 0.0).abs() > 1e-3 && (v.fract() - 0.0).abs() > 1e-3 {
                assert!((s.grad_u - du).abs() < 1e-6);
                assert!((s.grad_v - dv).abs() < 1e-6);
            }
        }
    }
}
