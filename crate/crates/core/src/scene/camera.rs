use crate::linalg::{cross, mat3_det, mat3_t_vec, mat3_transpose, mat3_vec, normalize3, Mat3, Vec3};
use crate::{Error, Real, Result, Tensor};

/// Pinhole camera. `rotation`/`translation` map world to camera
/// (`x_cam = R·x_world + T`); the camera looks along `+z`, `x` right, `y`
/// down. Pixel `(px, py)` has its center at `(px + 0.5, py + 0.5)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraView {
    pub intrinsics: Mat3<f64>,
    pub rotation: Mat3<f64>,
    pub translation: Vec3<f64>,
    pub near: f64,
    pub far: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraView {
    pub fn new(
        intrinsics: Mat3<f64>,
        rotation: Mat3<f64>,
        translation: Vec3<f64>,
        near: f64,
        far: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let cam = CameraView { intrinsics, rotation, translation, near, far, width, height };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        let r = &self.rotation;
        let rtr = crate::linalg::mat3_mul(&mat3_transpose(r), r);
        for (i, row) in rtr.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                let expect = if i == j { 1.0 } else { 0.0 };
                if !v.is_finite() || (v - expect).abs() > 1e-6 {
                    return Err(Error::InvalidCamera("rotation is not orthonormal".into()));
                }
            }
        }
        if (mat3_det(r) - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidCamera("rotation determinant is not +1".into()));
        }
        if !(self.near > 0.0 && self.near < self.far && self.far.is_finite()) {
            return Err(Error::InvalidCamera(format!("need 0 < near < far, got {} / {}", self.near, self.far)));
        }
        let k = &self.intrinsics;
        if k[1][0] != 0.0 || k[2][0] != 0.0 || k[2][1] != 0.0 || k[2][2] != 1.0 {
            return Err(Error::InvalidCamera("intrinsics must be upper triangular with K[2][2] = 1".into()));
        }
        if !(k[0][0] > 0.0 && k[1][1] > 0.0) {
            return Err(Error::InvalidCamera("focal lengths must be positive".into()));
        }
        if self.translation.iter().chain(k.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidCamera("non-finite camera parameter".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidCamera("zero image size".into()));
        }
        Ok(())
    }

    /// Camera looking from `eye` at `target` with focal length `focal` (px)
    /// and the principal point at the image center.
    #[allow(clippy::too_many_arguments)]
    pub fn look_at(
        eye: Vec3<f64>,
        target: Vec3<f64>,
        up: Vec3<f64>,
        focal: f64,
        width: usize,
        height: usize,
        near: f64,
        far: f64,
    ) -> Result<Self> {
        let fwd = normalize3(&[target[0] - eye[0], target[1] - eye[1], target[2] - eye[2]]);
        let right = cross(&fwd, &up);
        if crate::linalg::dot3(&right, &right) < 1e-12 {
            return Err(Error::InvalidCamera("up vector parallel to viewing direction".into()));
        }
        let right = normalize3(&right);
        let down = cross(&fwd, &right);
        let rotation = [right, down, fwd];
        let re = mat3_vec(&rotation, &eye);
        let translation = [-re[0], -re[1], -re[2]];
        let intrinsics = [[focal, 0.0, width as f64 / 2.0], [0.0, focal, height as f64 / 2.0], [0.0, 0.0, 1.0]];
        CameraView::new(intrinsics, rotation, translation, near, far, width, height)
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vec3<f64> {
        let c = mat3_t_vec(&self.rotation, &self.translation);
        [-c[0], -c[1], -c[2]]
    }

    pub fn world_to_camera(&self, p: &Vec3<f64>) -> Vec3<f64> {
        let q = mat3_vec(&self.rotation, p);
        [q[0] + self.translation[0], q[1] + self.translation[1], q[2] + self.translation[2]]
    }

    /// Continuous pixel coordinates and view depth of a world point, or
    /// `None` behind the camera.
    pub fn project(&self, p: &Vec3<f64>) -> Option<(f64, f64, f64)> {
        let c = self.world_to_camera(p);
        if c[2] <= 0.0 {
            return None;
        }
        let k = &self.intrinsics;
        let u = (k[0][0] * c[0] + k[0][1] * c[1]) / c[2] + k[0][2];
        let v = k[1][1] * c[1] / c[2] + k[1][2];
        Some((u, v, c[2]))
    }

    /// World point at view depth `depth` along continuous pixel coordinate
    /// `(u, v)`: `Rᵀ(depth·K⁻¹·(u, v, 1) − T)`.
    pub fn unproject_point(&self, u: f64, v: f64, depth: f64) -> Vec3<f64> {
        let k = &self.intrinsics;
        let yn = (v - k[1][2]) / k[1][1];
        let xn = (u - k[0][2] - k[0][1] * yn) / k[0][0];
        let c = [depth * xn - self.translation[0], depth * yn - self.translation[1], depth - self.translation[2]];
        mat3_t_vec(&self.rotation, &c)
    }

    /// Same pose, intrinsics for an image downsampled by `factor`.
    pub fn downsampled(&self, factor: usize) -> CameraView {
        let s = factor as f64;
        let mut k = self.intrinsics;
        for row in k.iter_mut().take(2) {
            for v in row.iter_mut() {
                *v /= s;
            }
        }
        CameraView {
            intrinsics: k,
            width: self.width.div_ceil(factor),
            height: self.height.div_ceil(factor),
            ..self.clone()
        }
    }

    /// Pose as 12 floats, row-major `[R|T]`.
    pub fn pose12(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [r[0][0], r[0][1], r[0][2], t[0], r[1][0], r[1][1], r[1][2], t[1], r[2][0], r[2][1], r[2][2], t[2]]
    }

    /// Replaces the pose with a row-major `[R|T]`, validating the rotation.
    pub fn with_pose12(&self, pose: &[f64]) -> Result<CameraView> {
        if pose.len() != 12 {
            return Err(Error::InvalidCamera(format!("pose needs 12 values, got {}", pose.len())));
        }
        let rotation = [
            [pose[0], pose[1], pose[2]],
            [pose[4], pose[5], pose[6]],
            [pose[8], pose[9], pose[10]],
        ];
        let cam = CameraView { rotation, translation: [pose[3], pose[7], pose[11]], ..self.clone() };
        cam.validate()?;
        Ok(cam)
    }

    pub(crate) fn cast_intrinsics<T: Real>(&self) -> Mat3<T> {
        crate::linalg::mat3_cast(&self.intrinsics)
    }
}

/// Cameras on a horizontal ring (z up) around `center`, all facing it.
/// `phase` offsets the azimuth as a fraction of one ring step.
pub fn ring_cameras(
    template: &CameraView,
    center: Vec3<f64>,
    radius: f64,
    elevation_deg: f64,
    n: usize,
    phase: f64,
) -> Result<Vec<CameraView>> {
    let el = elevation_deg.to_radians();
    (0..n)
        .map(|k| {
            let az = std::f64::consts::TAU * (k as f64 + phase) / n as f64;
            let eye = [
                center[0] + radius * el.cos() * az.cos(),
                center[1] + radius * el.cos() * az.sin(),
                center[2] + radius * el.sin(),
            ];
            let mut cam = CameraView::look_at(
                eye,
                center,
                [0.0, 0.0, 1.0],
                template.intrinsics[0][0],
                template.width,
                template.height,
                template.near,
                template.far,
            )?;
            cam.intrinsics = template.intrinsics;
            Ok(cam)
        })
        .collect()
}

/// Lifts a depth map to world positions `[H,W,3]`, one per pixel center.
pub fn unproject<T: Real>(depth: &Tensor<T>, cam: &CameraView) -> Result<Tensor<T>> {
    let (h, w, c) = depth.hwc()?;
    if c != 1 {
        return Err(Error::shape(format!("depth map must have one channel, got {c}")));
    }
    if let Some(i) = depth.first_nonfinite() {
        return Err(Error::NonFinite { what: "depth", index: i });
    }
    let mut out = Vec::with_capacity(h * w * 3);
    for (i, &d) in depth.data().iter().enumerate() {
        let (px, py) = (i % w, i / w);
        let p = cam.unproject_point(px as f64 + 0.5, py as f64 + 0.5, d.to_f64_lossy());
        out.extend(p.iter().map(|&v| T::lit(v)));
    }
    Tensor::new(vec![h, w, 3], out)
}
