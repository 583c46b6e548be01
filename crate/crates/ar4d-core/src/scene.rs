use nalgebra::{Matrix3, Vector3, Vector4};

use crate::camera::OrbitCamera;
use crate::error::{Error, Result};
use crate::img::{ImageRgb, ScalarImage};

/// A cloud of anisotropic 3D Gaussians, stored as flat parallel arrays.
/// Opacity lives in logit space and scale in log space so gradient steps
/// cannot leave the valid domain; quaternions are stored unnormalized and
/// normalized wherever a rotation matrix is built.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianCloud {
    /// xyz per splat, len 3N
    pub positions: Vec<f64>,
    /// len N
    pub opacity_logits: Vec<f64>,
    /// xyz per splat, len 3N
    pub log_scales: Vec<f64>,
    /// wxyz per splat, len 4N
    pub rotations: Vec<f64>,
    /// rgb in [0,1] per splat, len 3N
    pub colors: Vec<f64>,
}

impl GaussianCloud {
    pub fn new(
        positions: Vec<f64>,
        opacity_logits: Vec<f64>,
        log_scales: Vec<f64>,
        rotations: Vec<f64>,
        colors: Vec<f64>,
    ) -> Result<Self> {
        let cloud = GaussianCloud {
            positions,
            opacity_logits,
            log_scales,
            rotations,
            colors,
        };
        if cloud.opacity_logits.is_empty() {
            return Err(Error::InvalidCloud("cloud must hold at least one splat".into()));
        }
        let violations = cloud.validate();
        if let Some(v) = violations.first() {
            return Err(Error::InvalidCloud(format!(
                "{} ({} violation(s) total)",
                v,
                violations.len()
            )));
        }
        for (i, c) in cloud.colors.iter().enumerate() {
            if !(0.0..=1.0).contains(c) {
                return Err(Error::InvalidCloud(format!(
                    "color component {} of splat {} outside [0,1]: {}",
                    i % 3,
                    i / 3,
                    c
                )));
            }
        }
        Ok(cloud)
    }

    pub fn len(&self) -> usize {
        self.opacity_logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.opacity_logits.is_empty()
    }

    #[inline]
    pub fn position(&self, i: usize) -> Vector3<f64> {
        Vector3::new(
            self.positions[3 * i],
            self.positions[3 * i + 1],
            self.positions[3 * i + 2],
        )
    }

    #[inline]
    pub fn log_scale(&self, i: usize) -> Vector3<f64> {
        Vector3::new(
            self.log_scales[3 * i],
            self.log_scales[3 * i + 1],
            self.log_scales[3 * i + 2],
        )
    }

    #[inline]
    pub fn rotation(&self, i: usize) -> Vector4<f64> {
        Vector4::new(
            self.rotations[4 * i],
            self.rotations[4 * i + 1],
            self.rotations[4 * i + 2],
            self.rotations[4 * i + 3],
        )
    }

    #[inline]
    pub fn color(&self, i: usize) -> Vector3<f64> {
        Vector3::new(self.colors[3 * i], self.colors[3 * i + 1], self.colors[3 * i + 2])
    }

    #[inline]
    pub fn opacity(&self, i: usize) -> f64 {
        sigmoid(self.opacity_logits[i])
    }

    /// World-space covariance of splat `i`.
    pub fn covariance(&self, i: usize) -> Result<Matrix3<f64>> {
        build_covariance(&self.log_scale(i).into(), &self.rotation(i).into(), i)
    }

    /// Structural check: every violation found, not just the first.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let n = self.len();
        let lens = [
            ("positions", self.positions.len(), 3 * n),
            ("opacity_logits", self.opacity_logits.len(), n),
            ("log_scales", self.log_scales.len(), 3 * n),
            ("rotations", self.rotations.len(), 4 * n),
            ("colors", self.colors.len(), 3 * n),
        ];
        for (field, got, expected) in lens {
            if got != expected {
                out.push(Violation::LengthMismatch {
                    field,
                    expected,
                    got,
                });
            }
        }
        if !out.is_empty() {
            // Per-splat checks index past the short array otherwise.
            return out;
        }
        let fields: [(&str, &[f64], usize); 5] = [
            ("positions", &self.positions, 3),
            ("opacity_logits", &self.opacity_logits, 1),
            ("log_scales", &self.log_scales, 3),
            ("rotations", &self.rotations, 4),
            ("colors", &self.colors, 3),
        ];
        for (field, data, stride) in fields {
            for (i, v) in data.iter().enumerate() {
                if !v.is_finite() {
                    out.push(Violation::NonFinite {
                        field,
                        splat: i / stride,
                        value: *v,
                    });
                }
            }
        }
        for i in 0..n {
            let q = self.rotation(i);
            if q.norm_squared() == 0.0 {
                out.push(Violation::ZeroQuaternion { splat: i });
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NonFinite {
        field: &'static str,
        splat: usize,
        value: f64,
    },
    ZeroQuaternion {
        splat: usize,
    },
    LengthMismatch {
        field: &'static str,
        expected: usize,
        got: usize,
    },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::NonFinite {
                field,
                splat,
                value,
            } => write!(f, "non-finite {field} at splat {splat}: {value}"),
            Violation::ZeroQuaternion { splat } => {
                write!(f, "zero quaternion at splat {splat}")
            }
            Violation::LengthMismatch {
                field,
                expected,
                got,
            } => write!(f, "{field} length {got}, expected {expected}"),
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Rotation matrix of a quaternion (w, x, y, z), normalizing first.
pub fn rotation_matrix(q: &Vector4<f64>) -> Matrix3<f64> {
    let q = q / q.norm();
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Sigma = R diag(exp(log_scale)^2) R^T. The splat index is only for the
/// error message.
pub fn build_covariance(
    log_scale: &[f64; 3],
    rotation: &[f64; 4],
    splat: usize,
) -> Result<Matrix3<f64>> {
    let q = Vector4::new(rotation[0], rotation[1], rotation[2], rotation[3]);
    if q.norm_squared() == 0.0 {
        return Err(Error::ZeroQuaternion { index: splat });
    }
    let r = rotation_matrix(&q);
    let s2 = Vector3::new(
        (2.0 * log_scale[0]).exp(),
        (2.0 * log_scale[1]).exp(),
        (2.0 * log_scale[2]).exp(),
    );
    Ok(r * Matrix3::from_diagonal(&s2) * r.transpose())
}

/// One rendered view: color, expected depth, and accumulated alpha planes.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedFrame {
    pub color: ImageRgb,
    pub depth: ScalarImage,
    pub accum_alpha: ScalarImage,
}

/// Fixed-viewpoint input video: per-frame images plus the shared camera.
#[derive(Debug, Clone)]
pub struct VideoSequence {
    pub frames: Vec<ImageRgb>,
    pub camera: OrbitCamera,
}

impl VideoSequence {
    pub fn new(frames: Vec<ImageRgb>, camera: OrbitCamera) -> Result<Self> {
        if frames.len() < 2 {
            return Err(Error::DimensionMismatch {
                what: "video frame count",
                expected: 2,
                got: frames.len(),
            });
        }
        for f in &frames {
            if f.width != camera.width || f.height != camera.height {
                return Err(Error::DimensionMismatch {
                    what: "video frame pixels",
                    expected: camera.width * camera.height,
                    got: f.width * f.height,
                });
            }
        }
        Ok(VideoSequence { frames, camera })
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn unit_cloud(n: usize) -> GaussianCloud {
        GaussianCloud::new(
            vec![0.0; 3 * n],
            vec![0.0; n],
            vec![0.0; 3 * n],
            (0..n).flat_map(|_| [1.0, 0.0, 0.0, 0.0]).collect(),
            vec![0.5; 3 * n],
        )
        .unwrap()
    }

    #[test]
    fn identity_quaternion_unit_scales_give_identity_covariance() {
        let cov = build_covariance(&[0.0; 3], &[1.0, 0.0, 0.0, 0.0], 0).unwrap();
        assert_relative_eq!(cov, Matrix3::identity(), epsilon = 1e-15);
    }

    #[test]
    fn axis_aligned_scales_give_diagonal_squares() {
        let ls = [2f64.ln(), 3f64.ln(), 0.5f64.ln()];
        let cov = build_covariance(&ls, &[1.0, 0.0, 0.0, 0.0], 0).unwrap();
        assert_relative_eq!(
            cov,
            Matrix3::from_diagonal(&Vector3::new(4.0, 9.0, 0.25)),
            epsilon = 1e-12
        );
    }

    #[test]
    fn zero_quaternion_is_an_error() {
        let err = build_covariance(&[0.0; 3], &[0.0; 4], 7).unwrap_err();
        assert!(err.to_string().contains("quaternion 7"));
    }

    #[test]
    fn covariance_eigenvalues_match_squared_scales() {
        // Property over 1000 random splats: spectrum of Sigma = squared scales.
        let mut rng = crate::rng::substream(11, &[crate::rng::stream::GRADCHECK]);
        for _ in 0..1000 {
            let ls: [f64; 3] = std::array::from_fn(|_| rng.random_range(-2.0..1.0));
            let q: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0f64));
            if Vector4::from(q).norm() < 1e-3 {
                continue;
            }
            let cov = build_covariance(&ls, &q, 0).unwrap();
            let mut eig: Vec<f64> = cov.symmetric_eigen().eigenvalues.iter().copied().collect();
            let mut want: Vec<f64> = ls.iter().map(|l| (2.0 * l).exp()).collect();
            eig.sort_by(f64::total_cmp);
            want.sort_by(f64::total_cmp);
            for (e, w) in eig.iter().zip(&want) {
                assert_relative_eq!(e, w, max_relative = 1e-10, epsilon = 1e-12);
            }
        }
    }

    proptest! {
        #[test]
        fn quaternion_sign_flip_keeps_covariance(
            ls in prop::array::uniform3(-1.5f64..1.0),
            q in prop::array::uniform4(-1.0f64..1.0),
        ) {
            prop_assume!(Vector4::from(q).norm() > 1e-3);
            let a = build_covariance(&ls, &q, 0).unwrap();
            let neg = [-q[0], -q[1], -q[2], -q[3]];
            let b = build_covariance(&ls, &neg, 0).unwrap();
            for (x, y) in a.iter().zip(b.iter()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn validate_names_splat_and_field() {
        let mut cloud = unit_cloud(3);
        cloud.positions[4] = f64::NAN;
        cloud.rotations[8..12].copy_from_slice(&[0.0; 4]);
        let v = cloud.validate();
        let messages: Vec<String> = v.iter().map(|v| v.to_string()).collect();
        assert!(messages.iter().any(|m| m == "non-finite positions at splat 1: NaN"));
        assert!(messages.iter().any(|m| m == "zero quaternion at splat 2"));
    }

    #[test]
    fn validate_reports_length_mismatch() {
        let mut cloud = unit_cloud(3);
        cloud.colors.pop();
        let v = cloud.validate();
        assert_eq!(
            v,
            vec![Violation::LengthMismatch {
                field: "colors",
                expected: 9,
                got: 8
            }]
        );
    }

    #[test]
    fn clean_cloud_validates_empty() {
        assert!(unit_cloud(4).validate().is_empty());
    }

    #[test]
    fn empty_cloud_rejected() {
        let err = GaussianCloud::new(vec![], vec![], vec![], vec![], vec![]).unwrap_err();
        assert!(err.to_string().contains("at least one"));
    }

    #[test]
    fn clone_is_deep() {
        let a = unit_cloud(2);
        let mut b = a.clone();
        assert_eq!(a, b);
        b.positions[0] = 9.0;
        b.colors[1] = 0.0;
        assert_eq!(a.positions[0], 0.0);
        assert_eq!(a.colors[1], 0.5);
    }

    #[test]
    fn video_requires_two_frames_and_matching_sizes() {
        let cam = OrbitCamera {
            width: 4,
            height: 4,
            ..OrbitCamera::default()
        };
        let f = ImageRgb::new(4, 4);
        assert!(VideoSequence::new(vec![f.clone()], cam).is_err());
        assert!(VideoSequence::new(vec![f.clone(), ImageRgb::new(5, 4)], cam).is_err());
        assert!(VideoSequence::new(vec![f.clone(), f], cam).is_ok());
    }
}
