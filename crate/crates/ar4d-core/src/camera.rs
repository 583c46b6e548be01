use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

/// Camera on an origin-centered orbit, always looking at the origin with
/// +Y up. Angles in degrees; azimuth 0 / elevation 0 puts the eye on +Z.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OrbitCamera {
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
    pub radius: f64,
    pub fov_y_deg: f64,
    pub width: usize,
    pub height: usize,
    pub near: f64,
    pub far: f64,
}

impl Default for OrbitCamera {
    fn default() -> Self {
        OrbitCamera {
            azimuth_deg: 0.0,
            elevation_deg: 0.0,
            radius: 1.5,
            fov_y_deg: 49.1,
            width: 64,
            height: 64,
            near: 0.1,
            far: 10.0,
        }
    }
}

impl OrbitCamera {
    pub fn with_azimuth(&self, azimuth_deg: f64) -> OrbitCamera {
        OrbitCamera {
            azimuth_deg,
            ..*self
        }
    }

    pub fn with_size(&self, width: usize, height: usize) -> OrbitCamera {
        OrbitCamera {
            width,
            height,
            ..*self
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.radius > 0.0) {
            return Err(format!("camera radius must be positive, got {}", self.radius));
        }
        if !(self.near < self.far) {
            return Err(format!("camera near {} must be below far {}", self.near, self.far));
        }
        if self.width < 1 || self.height < 1 {
            return Err(format!("camera size {}x{} degenerate", self.width, self.height));
        }
        if !(self.fov_y_deg > 0.0 && self.fov_y_deg < 180.0) {
            return Err(format!("fov_y {} outside (0, 180)", self.fov_y_deg));
        }
        Ok(())
    }

    pub fn eye(&self) -> Vector3<f64> {
        let az = self.azimuth_deg.to_radians();
        let el = self.elevation_deg.to_radians();
        Vector3::new(
            self.radius * el.cos() * az.sin(),
            self.radius * el.sin(),
            self.radius * el.cos() * az.cos(),
        )
    }

    /// World-to-camera rotation, camera convention x right, y down, z forward.
    pub fn world_to_cam(&self) -> Matrix3<f64> {
        let eye = self.eye();
        let fwd = (-eye).normalize();
        let mut up = Vector3::new(0.0, 1.0, 0.0);
        if fwd.cross(&up).norm() < 1e-9 {
            // Eye on the Y axis: pick a stand-in up so the basis stays defined.
            up = Vector3::new(0.0, 0.0, 1.0);
        }
        let right = fwd.cross(&up).normalize();
        let down = fwd.cross(&right).normalize();
        Matrix3::from_rows(&[right.transpose(), down.transpose(), fwd.transpose()])
    }

    /// Focal length in pixels (square pixels, set by the vertical fov).
    pub fn focal_px(&self) -> f64 {
        0.5 * self.height as f64 / (0.5 * self.fov_y_deg.to_radians()).tan()
    }

    pub fn principal_point(&self) -> (f64, f64) {
        (self.width as f64 / 2.0, self.height as f64 / 2.0)
    }

    /// World point to camera space (z is depth along the view axis).
    pub fn to_cam(&self, p: Vector3<f64>) -> Vector3<f64> {
        self.world_to_cam() * (p - self.eye())
    }
}
