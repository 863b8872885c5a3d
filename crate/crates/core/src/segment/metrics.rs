use crate::tensor::ensure_same_dims;
use crate::{Error, Real, Result, Tensor};

/// PSNR reported when the mean squared error is below `1e-10`.
pub const PSNR_CAP: f64 = 99.0;

fn check_unit_range<T: Real>(t: &Tensor<T>) -> Result<()> {
    if t.data().iter().any(|v| !(v.to_f64_lossy() >= -1e-6 && v.to_f64_lossy() <= 1.0 + 1e-6)) {
        return Err(Error::invalid("image values must lie in [0, 1]"));
    }
    Ok(())
}

/// `−10·log10(MSE)` for images in `[0, 1]`.
pub fn psnr<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    ensure_same_dims(a, b, "psnr")?;
    check_unit_range(a)?;
    check_unit_range(b)?;
    if a.is_empty() {
        return Err(Error::invalid("psnr of empty images"));
    }
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x.to_f64_lossy() - y.to_f64_lossy();
            d * d
        })
        .sum::<f64>()
        / a.len() as f64;
    if mse < 1e-10 {
        Ok(PSNR_CAP)
    } else {
        Ok(-10.0 * mse.log10())
    }
}

fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let w: Vec<f64> = (0..size).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" Gaussian filtering of one channel.
fn filter_valid(img: &[f64], h: usize, w: usize, wh: usize, ww: usize) -> (Vec<f64>, usize, usize) {
    let oh = h - wh + 1;
    let ow = w - ww + 1;
    let kh = gaussian_window(wh, 1.5);
    let kw = gaussian_window(ww, 1.5);
    let mut tmp = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            tmp[y * ow + x] = (0..ww).map(|k| kw[k] * img[y * w + x + k]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..wh).map(|k| kh[k] * tmp[(y + k) * ow + x]).sum();
        }
    }
    (out, oh, ow)
}

/// Mean SSIM with an 11×11 Gaussian window (σ = 1.5), `K1 = 0.01`,
/// `K2 = 0.03`, dynamic range 1, averaged over valid window positions and
/// channels. Images smaller than the window use a window clipped to the
/// image size.
pub fn ssim<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    ensure_same_dims(a, b, "ssim")?;
    check_unit_range(a)?;
    check_unit_range(b)?;
    let (h, w, c) = a.hwc()?;
    if h == 0 || w == 0 {
        return Err(Error::invalid("ssim of empty images"));
    }
    let (wh, ww) = (h.min(11), w.min(11));
    let c1 = (0.01f64).powi(2);
    let c2 = (0.03f64).powi(2);
    let mut total = 0.0;
    for ch in 0..c {
        let x: Vec<f64> = a.data().iter().skip(ch).step_by(c).map(|v| v.to_f64_lossy()).collect();
        let y: Vec<f64> = b.data().iter().skip(ch).step_by(c).map(|v| v.to_f64_lossy()).collect();
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let (mx, oh, ow) = filter_valid(&x, h, w, wh, ww);
        let (my, _, _) = filter_valid(&y, h, w, wh, ww);
        let (sxx, _, _) = filter_valid(&xx, h, w, wh, ww);
        let (syy, _, _) = filter_valid(&yy, h, w, wh, ww);
        let (sxy, _, _) = filter_valid(&xy, h, w, wh, ww);
        let mut s = 0.0;
        for i in 0..oh * ow {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cxy = sxy[i] - ux * uy;
            s += ((2.0 * ux * uy + c1) * (2.0 * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
        }
        total += s / (oh * ow) as f64;
    }
    Ok(total / c as f64)
}

/// Mean IoU and mean pixel accuracy over label maps. Pixels whose ground
/// truth is negative are ignored. IoU averages over classes present in the
/// prediction or the ground truth; accuracy over classes present in the
/// ground truth.
pub fn miou_macc<T: Real>(pred: &Tensor<T>, gt: &Tensor<T>, n_classes: usize) -> Result<(f64, f64)> {
    ensure_same_dims(pred, gt, "miou")?;
    let mut inter = vec![0u64; n_classes];
    let mut pred_count = vec![0u64; n_classes];
    let mut gt_count = vec![0u64; n_classes];
    let mut valid = 0u64;
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        let g = g.to_f64_lossy();
        if g < 0.0 {
            continue;
        }
        let (p, g) = (p.to_f64_lossy().round(), g.round());
        if p < 0.0 || p as usize >= n_classes || g as usize >= n_classes {
            return Err(Error::invalid(format!("label {p}/{g} outside {n_classes} classes")));
        }
        let (p, g) = (p as usize, g as usize);
        valid += 1;
        gt_count[g] += 1;
        pred_count[p] += 1;
        if p == g {
            inter[g] += 1;
        }
    }
    if valid == 0 {
        return Err(Error::invalid("no valid pixels"));
    }
    let mut iou_sum = 0.0;
    let mut iou_n = 0;
    let mut acc_sum = 0.0;
    let mut acc_n = 0;
    for k in 0..n_classes {
        let union = gt_count[k] + pred_count[k] - inter[k];
        if union > 0 {
            iou_sum += inter[k] as f64 / union as f64;
            iou_n += 1;
        }
        if gt_count[k] > 0 {
            acc_sum += inter[k] as f64 / gt_count[k] as f64;
            acc_n += 1;
        }
    }
    Ok((iou_sum / iou_n as f64, acc_sum / acc_n.max(1) as f64))
}
