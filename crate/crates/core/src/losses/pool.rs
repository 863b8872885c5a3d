use crate::{Error, Real, Result, Tensor};

/// Replaces the features inside each mask by the mask's mean feature, once
/// per scale. `masks[h]` is a `[K,H,W]` stack of binary masks; pixels in no
/// mask keep their features and where masks overlap the later one wins.
/// Empty masks are skipped.
pub fn hierarchical_pool<T: Real>(feat: &Tensor<T>, masks: &[&Tensor<T>]) -> Result<Vec<Tensor<T>>> {
    let (h, w, c) = feat.hwc()?;
    let half = T::lit(0.5);
    masks
        .iter()
        .enumerate()
        .map(|(scale, m)| {
            let d = m.dims();
            if d.len() != 3 || d[1] != h || d[2] != w {
                return Err(Error::shape(format!("scale {scale} masks {d:?} do not match features {h}x{w}")));
            }
            let mut out = feat.clone();
            for (k, mask) in m.data().chunks_exact(h * w).enumerate() {
                let mut mean = vec![T::zero(); c];
                let mut count = 0usize;
                for (p, &mv) in mask.iter().enumerate() {
                    if mv >= half {
                        count += 1;
                        mean.iter_mut().zip(&feat.data()[p * c..(p + 1) * c]).for_each(|(a, &b)| *a += b);
                    }
                }
                if count == 0 {
                    log::warn!("scale {scale} mask {k} is empty; skipped");
                    continue;
                }
                let n = T::lit(count as f64);
                mean.iter_mut().for_each(|v| *v /= n);
                let od = out.data_mut();
                for (p, &mv) in mask.iter().enumerate() {
                    if mv >= half {
                        od[p * c..(p + 1) * c].copy_from_slice(&mean);
                    }
                }
            }
            Ok(out)
        })
        .collect()
}
