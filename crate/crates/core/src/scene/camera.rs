use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{self, Mat3, Vec3};
use crate::real::Real;

/// Pixel window `[x0, x1) x [y0, y1)` of the full image that a camera renders.
///
/// Sub-viewports keep the full-image pixel coordinates, so projection
/// arithmetic is identical whether or not the image is split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Viewport {
    pub x0: u32,
    pub x1: u32,
    pub y0: u32,
    pub y1: u32,
}

impl Viewport {
    pub fn full(width: u32, height: u32) -> Self {
        Self {
            x0: 0,
            x1: width,
            y0: 0,
            y1: height,
        }
    }

    pub fn width(&self) -> u32 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> u32 {
        self.y1 - self.y0
    }

    pub fn pixels(&self) -> usize {
        self.width() as usize * self.height() as usize
    }
}

/// Pinhole camera. `rot`/`trans` map world points to camera space
/// (x right, y down, z forward).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Camera<T> {
    pub rot: Mat3<T>,
    pub trans: Vec3<T>,
    pub fx: T,
    pub fy: T,
    pub cx: T,
    pub cy: T,
    pub width: u32,
    pub height: u32,
    pub near: T,
    pub far: T,
    pub viewport: Viewport,
}

impl<T: Real> Camera<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        rot: Mat3<T>,
        trans: Vec3<T>,
        fx: T,
        fy: T,
        cx: T,
        cy: T,
        width: u32,
        height: u32,
        near: T,
        far: T,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Config(format!("camera size {width}x{height} is empty")));
        }
        if !(near > T::zero() && near < far) {
            return Err(Error::Config(format!("camera planes must satisfy 0 < near < far, got {near}, {far}")));
        }
        Ok(Self {
            rot,
            trans,
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            near,
            far,
            viewport: Viewport::full(width, height),
        })
    }

    /// Camera at `eye` looking at `target`, with a horizontal field of view in radians.
    pub fn look_at(eye: Vec3<T>, target: Vec3<T>, up: Vec3<T>, fov_x: T, width: u32, height: u32) -> Result<Self> {
        let forward = math::normalize(math::sub(target, eye));
        let mut right = math::cross(forward, up);
        if math::norm(right) < T::c(1e-9) {
            right = math::cross(forward, [T::one(), T::zero(), T::zero()]);
        }
        let right = math::normalize(right);
        let down = math::cross(forward, right);
        let rot = [right, down, forward];
        let trans = math::scale(math::mat_vec(&rot, eye), -T::one());
        let two = T::c(2.0);
        let fx = T::of_usize(width as usize) / (two * (fov_x / two).tan());
        Self::new(
            rot,
            trans,
            fx,
            fx,
            T::of_usize(width as usize) / two,
            T::of_usize(height as usize) / two,
            width,
            height,
            T::c(0.01),
            T::c(100.0),
        )
    }

    pub fn with_planes(mut self, near: T, far: T) -> Self {
        self.near = near;
        self.far = far;
        self
    }

    /// World-space optical center.
    pub fn center(&self) -> Vec3<T> {
        math::scale(math::mat_t_vec(&self.rot, self.trans), -T::one())
    }

    #[inline]
    pub fn to_camera(&self, p: Vec3<T>) -> Vec3<T> {
        math::add(math::mat_vec(&self.rot, p), self.trans)
    }

    /// Same pose and intrinsics restricted to columns `[x0, x1)`.
    pub fn crop_columns(&self, x0: u32, x1: u32) -> Self {
        assert!(x0 < x1 && x1 <= self.width);
        let mut c = self.clone();
        c.viewport = Viewport {
            x0,
            x1,
            y0: self.viewport.y0,
            y1: self.viewport.y1,
        };
        c
    }

    pub fn cast<U: Real>(&self) -> Camera<U> {
        let f = |x: T| U::c(x.f64());
        Camera {
            rot: self.rot.map(|r| r.map(f)),
            trans: self.trans.map(f),
            fx: f(self.fx),
            fy: f(self.fy),
            cx: f(self.cx),
            cy: f(self.cy),
            width: self.width,
            height: self.height,
            near: f(self.near),
            far: f(self.far),
            viewport: self.viewport,
        }
    }
}
