use super::Tensor;
use crate::{Error, Real, Result};

/// Source coordinate and blend weight for target index `i` along an axis.
///
/// Pixel centers sit at half-integers in both grids, so target center
/// `i + 0.5` maps to source coordinate `(i + 0.5)·src/dst − 0.5`. Samples
/// beyond the outermost source centers clamp to the edge.
#[inline]
pub(crate) fn axis_sample(i: usize, src: usize, dst: usize) -> (usize, usize, f64) {
    let s = (i as f64 + 0.5) * src as f64 / dst as f64 - 0.5;
    let s = s.clamp(0.0, (src - 1) as f64);
    let i0 = s.floor() as usize;
    let i1 = (i0 + 1).min(src - 1);
    (i0, i1, s - i0 as f64)
}

/// Bilinear resize of an `[H,W,C]` (or `[H,W]`) tensor with half-pixel
/// centered alignment.
pub fn resample_bilinear<T: Real>(t: &Tensor<T>, new_h: usize, new_w: usize) -> Result<Tensor<T>> {
    let (h, w, c) = t.hwc()?;
    if new_h == 0 || new_w == 0 {
        return Err(Error::invalid(format!("zero target extent {new_h}x{new_w}")));
    }
    if h == 0 || w == 0 {
        return Err(Error::invalid("empty source tensor"));
    }
    let dims: Vec<usize> = if t.ndim() == 2 { vec![new_h, new_w] } else { vec![new_h, new_w, c] };
    if h == new_h && w == new_w {
        return Ok(t.clone());
    }
    let src = t.data();
    let xs: Vec<_> = (0..new_w).map(|x| axis_sample(x, w, new_w)).collect();
    let mut out = Vec::with_capacity(new_h * new_w * c);
    for y in 0..new_h {
        let (y0, y1, ty) = axis_sample(y, h, new_h);
        let ty = T::lit(ty);
        for &(x0, x1, tx) in &xs {
            let tx = T::lit(tx);
            let p00 = &src[(y0 * w + x0) * c..][..c];
            let p01 = &src[(y0 * w + x1) * c..][..c];
            let p10 = &src[(y1 * w + x0) * c..][..c];
            let p11 = &src[(y1 * w + x1) * c..][..c];
            for k in 0..c {
                let top = p00[k] + (p01[k] - p00[k]) * tx;
                let bot = p10[k] + (p11[k] - p10[k]) * tx;
                out.push(top + (bot - top) * ty);
            }
        }
    }
    Tensor::new(dims, out)
}
