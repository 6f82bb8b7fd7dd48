use crate::error::{Error, Result};
use crate::math::{Mat3, Vec3};

/// Tolerance on `R·Rᵀ = I` for a constructed camera.
pub const ROTATION_TOLERANCE: f64 = 1e-6;

/// Calibrated pinhole camera. Camera space looks down +z with +x right and
/// +y down the image; pixel centers sit at integer coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    /// World-to-camera rotation.
    pub rotation: Mat3,
    /// World-to-camera translation (meters).
    pub translation: Vec3,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        rotation: Mat3,
        translation: Vec3,
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let cam = Camera {
            rotation,
            translation,
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Camera at `eye` looking at `target`; principal point at the image center.
    pub fn look_at(
        eye: Vec3,
        target: Vec3,
        up: Vec3,
        focal: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        // Image +y points down, so the camera's y axis is the negated up hint.
        let rotation = Mat3::look_rotation(target - eye, -up);
        let translation = -rotation.mul_vec(eye);
        Camera::new(
            rotation,
            translation,
            focal,
            focal,
            (width as f64 - 1.0) * 0.5,
            (height as f64 - 1.0) * 0.5,
            width,
            height,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let err = self.rotation.orthonormality_error();
        if !(err <= ROTATION_TOLERANCE) {
            return Err(Error::InvalidCamera(format!(
                "rotation is not orthonormal (max |R·Rᵀ − I| = {err:.3e})"
            )));
        }
        if self.rotation.determinant() <= 0.0 {
            return Err(Error::InvalidCamera("rotation is a reflection".into()));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidCamera(format!(
                "focal lengths must be positive, got ({}, {})",
                self.fx, self.fy
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidCamera("zero resolution".into()));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64 && self.cy >= 0.0 && self.cy < self.height as f64)
        {
            return Err(Error::InvalidCamera(format!(
                "principal point ({}, {}) outside the {}x{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        if !self.translation.is_finite() {
            return Err(Error::InvalidCamera("non-finite translation".into()));
        }
        Ok(())
    }

    /// Camera center in world space.
    pub fn center(&self) -> Vec3 {
        -self.rotation.transpose().mul_vec(self.translation)
    }

    #[inline]
    pub fn world_to_camera(&self, p: Vec3) -> Vec3 {
        self.rotation.mul_vec(p) + self.translation
    }

    #[inline]
    pub fn camera_to_world(&self, p: Vec3) -> Vec3 {
        self.rotation.transpose().mul_vec(p - self.translation)
    }

    /// Rotates a world direction into camera space.
    #[inline]
    pub fn direction_to_camera(&self, d: Vec3) -> Vec3 {
        self.rotation.mul_vec(d)
    }

    /// World point on the ray through `pixel` at camera-space depth `depth`.
    pub fn unproject(&self, pixel: [f64; 2], depth: f64) -> Vec3 {
        let x = (pixel[0] - self.cx) / self.fx * depth;
        let y = (pixel[1] - self.cy) / self.fy * depth;
        self.camera_to_world(Vec3::new(x, y, depth))
    }

    /// Unit world-space direction of the ray through `pixel`.
    pub fn pixel_ray(&self, pixel: [f64; 2]) -> Vec3 {
        let d = Vec3::new(
            (pixel[0] - self.cx) / self.fx,
            (pixel[1] - self.cy) / self.fy,
            1.0,
        );
        self.rotation.transpose().mul_vec(d).normalize()
    }

    #[inline]
    pub fn contains_pixel(&self, pixel: [f64; 2]) -> bool {
        pixel[0] >= 0.0
            && pixel[1] >= 0.0
            && pixel[0] <= (self.width - 1) as f64
            && pixel[1] <= (self.height - 1) as f64
    }
}
