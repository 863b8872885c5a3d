use super::{BLUR_FLOOR, KERNEL_CUTOFF};
use crate::linalg::{mat3_cast, mat3_mul, mat3_transpose, Mat3};
use crate::scene::{CameraView, Gaussian, GaussianField};
use crate::Real;

/// A Gaussian after projection into one view.
#[derive(Debug, Clone, PartialEq)]
pub struct Projected2DGaussian<T = f32> {
    /// Index of the source Gaussian in its field.
    pub index: usize,
    /// Kernel center in continuous pixel coordinates.
    pub mean: [T; 2],
    /// Screen covariance `[xx, xy, yy]` in px², blur floor included.
    pub cov: [T; 3],
    /// Inverse of `cov`, `[xx, xy, yy]`.
    pub conic: [T; 3],
    pub view_depth: T,
    pub opacity: T,
    /// Pixel range `[x0, x1) × [y0, y1)` that can reach the kernel cutoff.
    pub bbox: [usize; 4],
}

/// Camera converted to the working precision.
#[derive(Debug, Clone)]
pub(crate) struct CamT<T> {
    pub r: Mat3<T>,
    pub t: [T; 3],
    pub k: Mat3<T>,
    pub near: T,
    pub far: T,
    pub width: usize,
    pub height: usize,
}

impl<T: Real> CamT<T> {
    pub fn new(cam: &CameraView) -> Self {
        CamT {
            r: mat3_cast(&cam.rotation),
            t: cam.translation.map(T::lit),
            k: cam.cast_intrinsics(),
            near: T::lit(cam.near),
            far: T::lit(cam.far),
            width: cam.width,
            height: cam.height,
        }
    }
}

/// Intermediate quantities kept for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct ProjectionAux<T> {
    pub p_cam: [T; 3],
    /// Projection Jacobian rows `d(u, v)/d(x, y, z)`.
    pub jac: [[T; 3]; 2],
    pub sigma_cam: Mat3<T>,
}

pub(crate) fn project_raw<T: Real>(
    cam: &CamT<T>,
    index: usize,
    position: &[T; 3],
    cov3d: &Mat3<T>,
    opacity: T,
) -> Option<(Projected2DGaussian<T>, ProjectionAux<T>)> {
    let r = &cam.r;
    let p = [
        r[0][0] * position[0] + r[0][1] * position[1] + r[0][2] * position[2] + cam.t[0],
        r[1][0] * position[0] + r[1][1] * position[1] + r[1][2] * position[2] + cam.t[1],
        r[2][0] * position[0] + r[2][1] * position[1] + r[2][2] * position[2] + cam.t[2],
    ];
    let z = p[2];
    if !(z >= cam.near && z <= cam.far) {
        return None;
    }
    let (fx, sk, cx) = (cam.k[0][0], cam.k[0][1], cam.k[0][2]);
    let (fy, cy) = (cam.k[1][1], cam.k[1][2]);
    let iz = T::one() / z;
    let num_u = fx * p[0] + sk * p[1];
    let mean = [num_u * iz + cx, fy * p[1] * iz + cy];
    let jac = [[fx * iz, sk * iz, -num_u * iz * iz], [T::zero(), fy * iz, -fy * p[1] * iz * iz]];

    let sigma_cam = mat3_mul(&mat3_mul(r, cov3d), &mat3_transpose(r));
    // cov2d = J Σc Jᵀ
    let mut js = [[T::zero(); 3]; 2];
    for a in 0..2 {
        for b in 0..3 {
            js[a][b] = jac[a][0] * sigma_cam[0][b] + jac[a][1] * sigma_cam[1][b] + jac[a][2] * sigma_cam[2][b];
        }
    }
    let dot = |u: &[T; 3], v: &[T; 3]| u[0] * v[0] + u[1] * v[1] + u[2] * v[2];
    let blur = T::lit(BLUR_FLOOR);
    let cxx = dot(&js[0], &jac[0]) + blur;
    let cxy = dot(&js[0], &jac[1]);
    let cyy = dot(&js[1], &jac[1]) + blur;
    let det = cxx * cyy - cxy * cxy;
    if !(det > T::zero()) {
        return None;
    }
    let conic = [cyy / det, -cxy / det, cxx / det];

    let mid = T::lit(0.5) * (cxx + cyy);
    let lambda_max = mid + (mid * mid - det).max(T::zero()).sqrt();
    let reach = (T::lit(-2.0 * KERNEL_CUTOFF.ln()) * lambda_max).sqrt() + T::one();
    let to_f = |v: T| v.to_f64_lossy();
    let (w, h) = (cam.width as f64, cam.height as f64);
    let x0 = (to_f(mean[0] - reach)).floor().max(0.0);
    let x1 = (to_f(mean[0] + reach)).ceil().min(w);
    let y0 = (to_f(mean[1] - reach)).floor().max(0.0);
    let y1 = (to_f(mean[1] + reach)).ceil().min(h);
    if !(x0 < x1 && y0 < y1) {
        return None;
    }
    let proj = Projected2DGaussian {
        index,
        mean,
        cov: [cxx, cxy, cyy],
        conic,
        view_depth: z,
        opacity,
        bbox: [x0 as usize, x1 as usize, y0 as usize, y1 as usize],
    };
    Some((proj, ProjectionAux { p_cam: p, jac, sigma_cam }))
}

pub(crate) fn project_index<T: Real>(
    field: &GaussianField<T>,
    cam: &CamT<T>,
    i: usize,
) -> Option<(Projected2DGaussian<T>, ProjectionAux<T>)> {
    project_raw(cam, i, &field.position(i), &field.covariance(i), field.opacity(i))
}

/// Projects one Gaussian, or `None` when it is culled (view depth outside
/// `[near, far]` or footprint entirely off-screen).
pub fn project_gaussian<T: Real>(g: &Gaussian<T>, cam: &CameraView) -> Option<Projected2DGaussian<T>> {
    let cam_t = CamT::new(cam);
    project_raw(&cam_t, 0, &g.position, &g.covariance(), g.opacity()).map(|(p, _)| p)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn axis_cam(w: usize) -> CameraView {
        let k = [[100.0, 0.0, w as f64 / 2.0], [0.0, 100.0, w as f64 / 2.0], [0.0, 0.0, 1.0]];
        let i3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        CameraView::new(k, i3, [0.0; 3], 0.1, 100.0, w, w).unwrap()
    }

    fn iso(z: f64, sigma: f64) -> Gaussian<f64> {
        Gaussian {
            position: [0.0, 0.0, z],
            opacity_logit: 0.0,
            log_scale: [sigma.ln(); 3],
            rotation: [1.0, 0.0, 0.0, 0.0],
            color: [0.0; 3],
            latent: vec![],
        }
    }

    #[test]
    fn isotropic_on_axis() {
        let cam = axis_cam(64);
        for z in [2.0, 4.0] {
            let p = project_gaussian(&iso(z, 0.1), &cam).unwrap();
            let expect = (100.0 * 0.1 / z).powi(2) + BLUR_FLOOR;
            assert!((p.cov[0] - expect).abs() < 1e-9);
            assert!((p.cov[2] - expect).abs() < 1e-9);
            assert!(p.cov[1].abs() < 1e-12);
            assert_eq!(p.mean, [32.0, 32.0]);
        }
    }

    #[test]
    fn doubling_depth_halves_radius() {
        let cam = axis_cam(64);
        let r = |z: f64| {
            let p = project_gaussian(&iso(z, 0.1), &cam).unwrap();
            (p.cov[0] - BLUR_FLOOR).sqrt()
        };
        assert!((r(2.0) / r(4.0) - 2.0).abs() < 1e-9);
    }

    #[test]
    fn behind_camera_is_culled() {
        assert!(project_gaussian(&iso(-2.0, 0.1), &axis_cam(64)).is_none());
        let mut off = iso(2.0, 0.01);
        off.position = [5.0, 0.0, 2.0];
        assert!(project_gaussian(&off, &axis_cam(64)).is_none());
    }
}
