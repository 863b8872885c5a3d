//! Plane-sweep cost volumes and depth regression.

use std::path::Path;

use crate::scene::CameraView;
use crate::tensor::{resample_bilinear, write_tensor};
use crate::{Error, Exec, Result, Tensor};

/// Per-view correlation scores over depth candidates.
#[derive(Debug, Clone, PartialEq)]
pub struct CostVolume {
    /// `[h,w,D]` correlation scores.
    pub corr: Tensor<f32>,
    pub candidates: Vec<f64>,
    /// Index of the reference view.
    pub view: usize,
    pub downsample: usize,
    /// Pixels observed by at least one other view at every candidate depth.
    pub valid: Vec<bool>,
}

impl CostVolume {
    pub fn height(&self) -> usize {
        self.corr.dims()[0]
    }

    pub fn width(&self) -> usize {
        self.corr.dims()[1]
    }

    pub fn spacing(&self) -> f64 {
        let d = &self.candidates;
        (d[d.len() - 1] - d[0]) / (d.len() - 1) as f64
    }

    pub fn dump(&self, path: impl AsRef<Path>) -> Result<()> {
        write_tensor(&self.corr, path)
    }
}

/// `D` evenly spaced depths from `near` to `far` inclusive.
pub fn depth_candidates(near: f64, far: f64, d: usize) -> Result<Vec<f64>> {
    if !(near > 0.0 && far > near && far.is_finite()) {
        return Err(Error::invalid(format!("need 0 < near < far, got near={near} far={far}")));
    }
    if d < 2 {
        return Err(Error::invalid(format!("need at least 2 depth candidates, got {d}")));
    }
    let step = (far - near) / (d - 1) as f64;
    Ok((0..d).map(|m| if m == d - 1 { far } else { near + m as f64 * step }).collect())
}

/// Bilinear sample at continuous pixel coordinates `(u, v)`, or `None` when
/// the point falls outside the span of pixel centers.
fn sample(f: &Tensor<f32>, u: f64, v: f64, out: &mut [f32]) -> bool {
    let (h, w, c) = (f.dims()[0], f.dims()[1], out.len());
    let (x, y) = (u - 0.5, v - 0.5);
    if !(x >= 0.0 && y >= 0.0 && x <= (w - 1) as f64 && y <= (h - 1) as f64) {
        out.iter_mut().for_each(|o| *o = 0.0);
        return false;
    }
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (tx, ty) = ((x - x0 as f64) as f32, (y - y0 as f64) as f32);
    let d = f.data();
    let p00 = &d[(y0 * w + x0) * c..][..c];
    let p01 = &d[(y0 * w + x1) * c..][..c];
    let p10 = &d[(y1 * w + x0) * c..][..c];
    let p11 = &d[(y1 * w + x1) * c..][..c];
    for k in 0..c {
        let top = p00[k] + (p01[k] - p00[k]) * tx;
        let bot = p10[k] + (p11[k] - p10[k]) * tx;
        out[k] = top + (bot - top) * ty;
    }
    true
}

/// Warps view `j`'s features into view `i` through the fronto-parallel plane
/// at view-`i` depth `d`. Returns the warped map and per-pixel validity.
pub fn warp_features(fj: &Tensor<f32>, cam_i: &CameraView, cam_j: &CameraView, d: f64) -> Result<(Tensor<f32>, Vec<bool>)> {
    let (_, _, c) = fj.hwc()?;
    let (h, w) = (cam_i.height, cam_i.width);
    let mut out = vec![0.0f32; h * w * c];
    let mut valid = vec![false; h * w];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let p = cam_i.unproject_point(x as f64 + 0.5, y as f64 + 0.5, d);
            if let Some((u, v, _)) = cam_j.project(&p) {
                valid[i] = sample(fj, u, v, &mut out[i * c..(i + 1) * c]);
            }
        }
    }
    Ok((Tensor::new(vec![h, w, c], out)?, valid))
}

/// Per-pixel feature norms, `[h,w,1]`.
fn feature_norms(f: &Tensor<f32>) -> Result<Tensor<f32>> {
    let (h, w, c) = f.hwc()?;
    Tensor::new(vec![h, w, 1], f.data().chunks_exact(c).map(|v| v.iter().map(|x| x * x).sum::<f32>().sqrt()).collect())
}

/// Cost volume of every view against all others, with cameras given at
/// feature resolution. Other views are summed in index order. Warped
/// features are rescaled to the interpolated norm of their source pixels,
/// so sub-pixel warps do not lose correlation.
pub fn build_cost_volume(
    features: &[&Tensor<f32>],
    cams: &[CameraView],
    candidates: &[f64],
    downsample: usize,
    exec: Exec,
) -> Result<Vec<CostVolume>> {
    if features.len() < 2 || features.len() != cams.len() {
        return Err(Error::invalid(format!("need >= 2 views with cameras, got {} features and {} cameras", features.len(), cams.len())));
    }
    if candidates.len() < 2 || candidates.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("depth candidates must be strictly increasing, at least 2"));
    }
    let c = features[0].hwc()?.2;
    for (k, (f, cam)) in features.iter().zip(cams).enumerate() {
        let (h, w, ck) = f.hwc()?;
        if ck != c {
            return Err(Error::shape(format!("view {k} has {ck} feature channels, view 0 has {c}")));
        }
        if (h, w) != (cam.height, cam.width) {
            return Err(Error::shape(format!("view {k} features {h}x{w} but camera is {}x{}", cam.height, cam.width)));
        }
    }
    let dn = candidates.len();
    let inv_c = 1.0 / c as f32;
    let norms: Vec<Tensor<f32>> = features.iter().map(|f| feature_norms(f)).collect::<Result<_>>()?;
    exec.map_range(features.len(), |i| {
        let fi = features[i].data();
        let (h, w) = (cams[i].height, cams[i].width);
        let mut corr = vec![0.0f32; h * w * dn];
        let mut covered = vec![true; h * w];
        for (m, &d) in candidates.iter().enumerate() {
            let mut sum = vec![0.0f32; h * w];
            let mut count = vec![0u32; h * w];
            for j in (0..features.len()).filter(|&j| j != i) {
                let (warped, valid) = warp_features(features[j], &cams[i], &cams[j], d)?;
                let (wn, _) = warp_features(&norms[j], &cams[i], &cams[j], d)?;
                let (wd, wn) = (warped.data(), wn.data());
                for p in 0..h * w {
                    if valid[p] {
                        let a = &fi[p * c..(p + 1) * c];
                        let b = &wd[p * c..(p + 1) * c];
                        let bn = b.iter().map(|x| x * x).sum::<f32>().sqrt();
                        let scale = if bn > 1e-12 { wn[p] / bn } else { 0.0 };
                        sum[p] += a.iter().zip(b).map(|(x, y)| x * y).sum::<f32>() * scale * inv_c;
                        count[p] += 1;
                    }
                }
            }
            for p in 0..h * w {
                if count[p] > 0 {
                    corr[p * dn + m] = sum[p] / count[p] as f32;
                } else {
                    covered[p] = false;
                }
            }
        }
        Ok(CostVolume {
            corr: Tensor::new(vec![h, w, dn], corr)?,
            candidates: candidates.to_vec(),
            view: i,
            downsample,
            valid: covered,
        })
    })
    .into_iter()
    .collect()
}

/// Softmax-weighted expectation of the candidate depths, `[h,w]`.
pub fn regress_depth(cv: &CostVolume, temperature: f64) -> Result<Tensor<f32>> {
    if !(temperature > 0.0) {
        return Err(Error::invalid(format!("temperature must be positive, got {temperature}")));
    }
    let dn = cv.candidates.len();
    let (lo, hi) = (cv.candidates[0], cv.candidates[dn - 1]);
    let out = cv
        .corr
        .data()
        .chunks_exact(dn)
        .map(|row| {
            let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
            let (mut num, mut den) = (0.0f64, 0.0f64);
            for (&s, &d) in row.iter().zip(&cv.candidates) {
                let e = ((s as f64 - max) / temperature).exp();
                num += e * d;
                den += e;
            }
            (num / den).clamp(lo, hi) as f32
        })
        .collect();
    Tensor::new(vec![cv.height(), cv.width()], out)
}

/// Concatenates the correlation volume with feature maps resampled to the
/// volume resolution, channels in argument order.
pub fn fuse_conditions(cv: &CostVolume, feat_maps: &[&Tensor<f32>]) -> Result<Tensor<f32>> {
    let (h, w) = (cv.height(), cv.width());
    let maps: Vec<Tensor<f32>> = feat_maps.iter().map(|f| resample_bilinear(f, h, w)).collect::<Result<_>>()?;
    let mut parts: Vec<(&[f32], usize)> = vec![(cv.corr.data(), cv.candidates.len())];
    for m in &maps {
        let (mh, mw, c) = m.hwc()?;
        assert_eq!((mh, mw), (h, w), "resampled map does not match the volume");
        parts.push((m.data(), c));
    }
    let total: usize = parts.iter().map(|p| p.1).sum();
    let mut out = Vec::with_capacity(h * w * total);
    for p in 0..h * w {
        for &(data, c) in &parts {
            out.extend_from_slice(&data[p * c..(p + 1) * c]);
        }
    }
    Tensor::new(vec![h, w, total], out)
}

/// Matching features from image luminance: zero-mean, unit-norm 3×3
/// patches scaled by 3 so a perfect match correlates to 1.
pub fn patch_features(image: &Tensor<f32>, h: usize, w: usize) -> Result<Tensor<f32>> {
    let img = resample_bilinear(image, h, w)?;
    let (_, _, c) = img.hwc()?;
    let lum: Vec<f32> = img
        .data()
        .chunks_exact(c)
        .map(|p| if c >= 3 { 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2] } else { p[0] })
        .collect();
    let at = |y: isize, x: isize| lum[y.clamp(0, h as isize - 1) as usize * w + x.clamp(0, w as isize - 1) as usize];
    let mut out = Vec::with_capacity(h * w * 9);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut patch = [0.0f32; 9];
            for (k, v) in patch.iter_mut().enumerate() {
                *v = at(y + k as isize / 3 - 1, x + k as isize % 3 - 1);
            }
            let mean = patch.iter().sum::<f32>() / 9.0;
            patch.iter_mut().for_each(|v| *v -= mean);
            let n = patch.iter().map(|v| v * v).sum::<f32>().sqrt();
            if n > 1e-6 {
                patch.iter_mut().for_each(|v| *v *= 3.0 / n);
            } else {
                patch = [0.0; 9];
            }
            out.extend_from_slice(&patch);
        }
    }
    Tensor::new(vec![h, w, 9], out)
}

/// Per-pixel chromaticity: the RGB vector scaled to norm `√3`, zero for
/// pixels darker than `dark` in RGB norm. Brightness-invariant, so it
/// matches colored surfaces across wide baselines where luminance patches
/// are nearly flat.
pub fn color_features(image: &Tensor<f32>, dark: f32) -> Result<Tensor<f32>> {
    let (h, w, c) = image.hwc()?;
    if c != 3 {
        return Err(Error::shape(format!("color features need 3 channels, got {c}")));
    }
    let k = 3f32.sqrt();
    let mut out = Vec::with_capacity(h * w * 3);
    for p in image.data().chunks_exact(3) {
        let n = p.iter().map(|v| v * v).sum::<f32>().sqrt();
        if n > dark {
            out.extend(p.iter().map(|v| v * k / n));
        } else {
            out.extend([0.0; 3]);
        }
    }
    Tensor::new(vec![h, w, 3], out)
}
