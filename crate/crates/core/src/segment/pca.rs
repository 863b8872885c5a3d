use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::{Error, Real, Result, Tensor};

const POWER_ITERS: usize = 100;
const POWER_TOL: f64 = 1e-9;

/// Leading principal directions of a feature map.
#[derive(Debug, Clone)]
pub struct PcaBasis {
    pub mean: Vec<f64>,
    /// Up to three unit components, largest variance first.
    pub components: Vec<Vec<f64>>,
    pub variances: Vec<f64>,
}

fn matvec(cov: &[f64], c: usize, v: &[f64]) -> Vec<f64> {
    (0..c).map(|i| (0..c).map(|j| cov[i * c + j] * v[j]).sum()).collect()
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

/// Top-3 principal directions by power iteration with deflation.
pub fn pca_basis<T: Real>(feat: &Tensor<T>) -> Result<PcaBasis> {
    let (h, w, c) = feat.hwc()?;
    let n = h * w;
    if c < 3 {
        return Err(Error::invalid(format!("PCA needs at least 3 channels, got {c}")));
    }
    if n < 3 {
        return Err(Error::invalid(format!("PCA needs at least 3 pixels, got {n}")));
    }
    let x: Vec<f64> = feat.data().iter().map(|v| v.to_f64_lossy()).collect();
    let mut mean = vec![0.0; c];
    for px in x.chunks_exact(c) {
        mean.iter_mut().zip(px).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut cov = vec![0.0; c * c];
    let mut centered = vec![0.0; c];
    for px in x.chunks_exact(c) {
        for k in 0..c {
            centered[k] = px[k] - mean[k];
        }
        for i in 0..c {
            let ci = centered[i];
            if ci == 0.0 {
                continue;
            }
            for j in 0..c {
                cov[i * c + j] += ci * centered[j];
            }
        }
    }
    cov.iter_mut().for_each(|v| *v /= (n - 1) as f64);
    let trace: f64 = (0..c).map(|i| cov[i * c + i]).sum();

    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut components = Vec::new();
    let mut variances = Vec::new();
    let mut work = cov.clone();
    for _ in 0..3 {
        if !(trace > 1e-24) {
            break;
        }
        let mut v: Vec<f64> = (0..c).map(|_| StandardNormal.sample(&mut rng)).collect();
        normalize(&mut v);
        for _ in 0..POWER_ITERS {
            let mut next = matvec(&work, c, &v);
            // keep iterates orthogonal to the components already found
            for u in &components {
                let d: f64 = next.iter().zip(u).map(|(a, b): (&f64, &f64)| a * b).sum();
                next.iter_mut().zip(u).for_each(|(a, b)| *a -= d * b);
            }
            if normalize(&mut next) == 0.0 {
                break;
            }
            let delta: f64 = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            v = next;
            if delta < POWER_TOL {
                break;
            }
        }
        let cv = matvec(&cov, c, &v);
        let lambda: f64 = cv.iter().zip(&v).map(|(a, b)| a * b).sum();
        if !(lambda > 1e-10 * trace) {
            break;
        }
        let big = v.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        if big < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        for i in 0..c {
            for j in 0..c {
                work[i * c + j] -= lambda * v[i] * v[j];
            }
        }
        components.push(v);
        variances.push(lambda);
    }
    Ok(PcaBasis { mean, components, variances })
}

/// Projects features onto their top-3 principal directions and min-max
/// normalizes each channel to `[0, 1]`. Missing components (rank < 3) fill
/// their channel with 0.5.
pub fn pca_project<T: Real>(feat: &Tensor<T>) -> Result<Tensor<f32>> {
    let (h, w, c) = feat.hwc()?;
    let basis = pca_basis(feat)?;
    let n = h * w;
    let mut proj = vec![[0.5f64; 3]; n];
    for (k, u) in basis.components.iter().enumerate() {
        let mut vals = Vec::with_capacity(n);
        for px in feat.data().chunks_exact(c) {
            vals.push(px.iter().zip(u).zip(&basis.mean).map(|((v, ui), m)| (v.to_f64_lossy() - m) * ui).sum::<f64>());
        }
        let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        for (p, v) in proj.iter_mut().zip(vals) {
            p[k] = if span > 1e-12 { (v - lo) / span } else { 0.5 };
        }
    }
    Tensor::new(vec![h, w, 3], proj.into_iter().flatten().map(|v| v as f32).collect())
}
