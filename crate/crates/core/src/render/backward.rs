use super::forward::{kernel_power, prepare, row_spans, Prepared};
use super::project::project_index;
use super::{RenderOptions, KERNEL_CUTOFF, TILE_SIZE, TRANSMITTANCE_EPS};
use crate::linalg::{mat3_t_vec, quat_to_mat, quat_to_mat_vjp, Mat3};
use crate::scene::{CameraView, GaussianField, LinearHead};
use crate::{Error, Real, Result, Tensor};

/// Upstream gradients of a scalar loss with respect to each rendered map.
/// Missing maps count as zero.
#[derive(Debug, Clone, Default)]
pub struct RenderGrads<T = f32> {
    pub color: Option<Tensor<T>>,
    pub feat_seg: Option<Tensor<T>>,
    pub feat_lang: Option<Tensor<T>>,
    pub depth: Option<Tensor<T>>,
    pub alpha: Option<Tensor<T>>,
}

/// Per visible Gaussian: d mean (2), d conic (3, full-matrix entries
/// xx, xy, yy), d opacity (1), then d values (layout stride).
const FIXED: usize = 6;

fn upstream_buffer<T: Real>(prep: &Prepared<T>, grads: &RenderGrads<T>) -> Result<Vec<T>> {
    let (w, h) = (prep.cam.width, prep.cam.height);
    let l = &prep.layout;
    let ps = l.pixel_stride();
    let mut buf = vec![T::zero(); w * h * ps];
    let mut put = |t: &Option<Tensor<T>>, off: usize, len: usize, name: &str| -> Result<()> {
        let Some(t) = t else { return Ok(()) };
        let expect: Vec<usize> = if name == "depth" || name == "alpha" { vec![h, w] } else { vec![h, w, len] };
        if t.dims() != expect.as_slice() {
            return Err(Error::shape(format!("{name} gradient dims {:?}, expected {expect:?}", t.dims())));
        }
        if len == 0 {
            return Err(Error::invalid(format!("{name} gradient given but the head was not rendered")));
        }
        for (px, src) in buf.chunks_exact_mut(ps).zip(t.data().chunks_exact(len)) {
            px[off..off + len].copy_from_slice(src);
        }
        Ok(())
    };
    put(&grads.color, 0, 3, "color")?;
    put(&grads.feat_seg, l.seg, l.seg_len, "feat_seg")?;
    put(&grads.feat_lang, l.lang, l.lang_len, "feat_lang")?;
    put(&grads.depth, l.depth, 1, "depth")?;
    put(&grads.alpha, l.stride, 1, "alpha")?;
    Ok(buf)
}

struct Contribution<T> {
    k: usize,
    gval: T,
    a: T,
    trans: T,
    dx: T,
    dy: T,
}

fn backward_band<T: Real>(prep: &Prepared<T>, band: usize, upstream: &[T]) -> Vec<T> {
    let width = prep.cam.width;
    let height = prep.cam.height;
    let l = &prep.layout;
    let ps = l.pixel_stride();
    let stride = l.stride;
    let gs = FIXED + stride;
    let ln_cut = T::lit(KERNEL_CUTOFF.ln());
    let t_eps = T::lit(TRANSMITTANCE_EPS);
    let half = T::lit(0.5);
    let mut acc = vec![T::zero(); prep.proj.len() * gs];
    let mut contrib: Vec<Contribution<T>> = Vec::new();
    let mut behind = vec![T::zero(); stride];
    let mut spans = Vec::new();
    let y0 = band * TILE_SIZE;
    let y1 = (y0 + TILE_SIZE).min(height);
    for tx in 0..prep.tiles_x {
        let bin = &prep.bins[band * prep.tiles_x + tx];
        if bin.is_empty() {
            continue;
        }
        let tile_x1 = ((tx + 1) * TILE_SIZE).min(width);
        for py in y0..y1 {
            let yc = T::lit(py as f64 + 0.5);
            row_spans(prep, bin, py, tx * TILE_SIZE, tile_x1, &mut spans);
            if spans.is_empty() {
                continue;
            }
            for px in tx * TILE_SIZE..tile_x1 {
                let g = &upstream[(py * width + px) * ps..(py * width + px + 1) * ps];
                if g.iter().all(|v| *v == T::zero()) {
                    continue;
                }
                let xc = T::lit(px as f64 + 0.5);
                contrib.clear();
                let mut trans = T::one();
                let pxu = px as u32;
                for sp in &spans {
                    if pxu < sp.x0 || pxu >= sp.x1 {
                        continue;
                    }
                    let k = sp.k;
                    let p = &prep.proj[k as usize];
                    let Some((power, dx, dy)) = kernel_power(p, xc, yc, ln_cut) else { continue };
                    let gval = power.exp();
                    let a = p.opacity * gval;
                    contrib.push(Contribution { k: k as usize, gval, a, trans, dx, dy });
                    trans *= T::one() - a;
                    if trans < t_eps {
                        break;
                    }
                }
                behind.iter_mut().for_each(|v| *v = T::zero());
                let mut behind_alpha = T::zero();
                let g_alpha = g[stride];
                for c in contrib.iter().rev() {
                    let v = &prep.values[c.k * stride..(c.k + 1) * stride];
                    let out = &mut acc[c.k * gs..(c.k + 1) * gs];
                    let w = c.a * c.trans;
                    let one_minus = T::one() - c.a;
                    let mut da = g_alpha * c.trans * (T::one() - behind_alpha);
                    for ch in 0..stride {
                        out[FIXED + ch] += w * g[ch];
                        da += g[ch] * c.trans * (v[ch] - behind[ch]);
                        behind[ch] = c.a * v[ch] + one_minus * behind[ch];
                    }
                    behind_alpha = c.a + one_minus * behind_alpha;
                    let p = &prep.proj[c.k];
                    out[5] += c.gval * da;
                    let dpower = p.opacity * da * c.gval;
                    let qx = p.conic[0] * c.dx + p.conic[1] * c.dy;
                    let qy = p.conic[1] * c.dx + p.conic[2] * c.dy;
                    out[0] += dpower * qx;
                    out[1] += dpower * qy;
                    out[2] -= dpower * half * c.dx * c.dx;
                    out[3] -= dpower * half * c.dx * c.dy;
                    out[4] -= dpower * half * c.dy * c.dy;
                }
            }
        }
    }
    acc
}

fn head_backward<T: Real>(head: &LinearHead<T>, grad: &mut LinearHead<T>, f: &[T], d_out: &[T], d_f: &mut [T]) {
    let od = head.out_dim;
    for (j, &fj) in f.iter().enumerate() {
        let w = &head.weight[j * od..(j + 1) * od];
        let gw = &mut grad.weight[j * od..(j + 1) * od];
        let mut s = T::zero();
        for k in 0..od {
            gw[k] += fj * d_out[k];
            s += w[k] * d_out[k];
        }
        d_f[j] += s;
    }
    for (b, &d) in grad.bias.iter_mut().zip(d_out) {
        *b += d;
    }
}

/// Analytic gradients of a scalar loss with respect to every field
/// parameter, given the loss gradients on the rendered maps. Must be called
/// with the same options as the forward pass that produced those maps.
pub fn render_backward<T: Real>(
    field: &GaussianField<T>,
    cam: &CameraView,
    opts: &RenderOptions,
    grads: &RenderGrads<T>,
) -> Result<GaussianField<T>> {
    let prep = prepare(field, cam, opts)?;
    let upstream = upstream_buffer(&prep, grads)?;
    let partials = opts.exec.map_range(prep.tiles_y, |band| backward_band(&prep, band, &upstream));
    let l = prep.layout;
    let gs = FIXED + l.stride;
    let mut total = vec![T::zero(); prep.proj.len() * gs];
    for part in &partials {
        for (t, &p) in total.iter_mut().zip(part) {
            *t += p;
        }
    }

    let mut out = field.zeros_like();
    let d = field.latent_dim;
    let mut d_latent = vec![T::zero(); d];
    for (k, proj) in prep.proj.iter().enumerate() {
        let i = proj.index;
        let acc = &total[k * gs..(k + 1) * gs];
        if acc.iter().all(|v| *v == T::zero()) {
            continue;
        }
        let dv = &acc[FIXED..];

        let color = field.color(i);
        for c in 0..3 {
            out.colors[3 * i + c] += dv[c] * color[c] * (T::one() - color[c]);
        }
        let alpha = proj.opacity;
        out.opacity_logits[i] += acc[5] * alpha * (T::one() - alpha);

        d_latent.iter_mut().for_each(|v| *v = T::zero());
        let f = field.latent(i);
        if l.seg_len > 0 {
            head_backward(&field.seg_head, &mut out.seg_head, f, &dv[l.seg..l.seg + l.seg_len], &mut d_latent);
        }
        if l.lang_len > 0 {
            head_backward(&field.lang_head, &mut out.lang_head, f, &dv[l.lang..l.lang + l.lang_len], &mut d_latent);
        }
        for (o, &g) in out.latents[i * d..(i + 1) * d].iter_mut().zip(&d_latent) {
            *o += g;
        }

        let (_, aux) = project_index(field, &prep.cam, i).expect("visible gaussian projects");
        let q = proj.conic;
        let qm = [[q[0], q[1]], [q[1], q[2]]];
        let gq = [[acc[2], acc[3]], [acc[3], acc[4]]];
        // d cov = −Q · dQ · Q
        let mut tmp = [[T::zero(); 2]; 2];
        for a in 0..2 {
            for b in 0..2 {
                tmp[a][b] = gq[a][0] * qm[0][b] + gq[a][1] * qm[1][b];
            }
        }
        let mut gc = [[T::zero(); 2]; 2];
        for a in 0..2 {
            for b in 0..2 {
                gc[a][b] = -(qm[a][0] * tmp[0][b] + qm[a][1] * tmp[1][b]);
            }
        }
        let jac = &aux.jac;
        let sc = &aux.sigma_cam;
        let mut d_sigma_cam = [[T::zero(); 3]; 3];
        for a in 0..3 {
            for b in 0..3 {
                let mut s = T::zero();
                for m in 0..2 {
                    for n in 0..2 {
                        s += jac[m][a] * gc[m][n] * jac[n][b];
                    }
                }
                d_sigma_cam[a][b] = s;
            }
        }
        let mut js = [[T::zero(); 3]; 2];
        for n in 0..2 {
            for b in 0..3 {
                js[n][b] = jac[n][0] * sc[0][b] + jac[n][1] * sc[1][b] + jac[n][2] * sc[2][b];
            }
        }
        let two = T::lit(2.0);
        let mut d_jac = [[T::zero(); 3]; 2];
        for m in 0..2 {
            for b in 0..3 {
                d_jac[m][b] = two * (gc[m][0] * js[0][b] + gc[m][1] * js[1][b]);
            }
        }

        let [x, y, z] = aux.p_cam;
        let kk = &prep.cam.k;
        let (fx, sk, fy) = (kk[0][0], kk[0][1], kk[1][1]);
        let iz2 = T::one() / (z * z);
        let iz3 = iz2 / z;
        let dmean = [acc[0], acc[1]];
        let mut dp = [T::zero(); 3];
        for (b, v) in dp.iter_mut().enumerate() {
            *v = jac[0][b] * dmean[0] + jac[1][b] * dmean[1];
        }
        dp[0] += d_jac[0][2] * (-fx * iz2);
        dp[1] += d_jac[0][2] * (-sk * iz2) + d_jac[1][2] * (-fy * iz2);
        dp[2] += d_jac[0][0] * (-fx * iz2)
            + d_jac[0][1] * (-sk * iz2)
            + d_jac[0][2] * (two * (fx * x + sk * y) * iz3)
            + d_jac[1][1] * (-fy * iz2)
            + d_jac[1][2] * (two * fy * y * iz3);
        dp[2] += dv[l.depth];
        let dmu = mat3_t_vec(&prep.cam.r, &dp);
        for c in 0..3 {
            out.positions[3 * i + c] += dmu[c];
        }

        // Σc = W Σ Wᵀ  ⇒  dΣ = Wᵀ dΣc W
        let r = &prep.cam.r;
        let mut d_sigma: Mat3<T> = [[T::zero(); 3]; 3];
        for a in 0..3 {
            for b in 0..3 {
                let mut s = T::zero();
                for m in 0..3 {
                    for n in 0..3 {
                        s += r[m][a] * d_sigma_cam[m][n] * r[n][b];
                    }
                }
                d_sigma[a][b] = s;
            }
        }
        let raw_q = field.rotation(i);
        let qn = raw_q.iter().map(|&v| v * v).sum::<T>().sqrt();
        let qh = raw_q.map(|v| v / qn);
        let rq = quat_to_mat(&qh);
        let s = field.log_scale(i).map(|v| v.exp());
        // d M = (dΣ + dΣᵀ) M with M = Rq·S
        let mut dm = [[T::zero(); 3]; 3];
        for a in 0..3 {
            for b in 0..3 {
                let mut acc_m = T::zero();
                for c in 0..3 {
                    acc_m += (d_sigma[a][c] + d_sigma[c][a]) * rq[c][b] * s[b];
                }
                dm[a][b] = acc_m;
            }
        }
        let mut d_rq = [[T::zero(); 3]; 3];
        for a in 0..3 {
            for b in 0..3 {
                d_rq[a][b] = dm[a][b] * s[b];
            }
        }
        for b in 0..3 {
            let ds: T = (0..3).map(|a| rq[a][b] * dm[a][b]).sum();
            out.log_scales[3 * i + b] += ds * s[b];
        }
        let dqh = quat_to_mat_vjp(&qh, &d_rq);
        let proj_dot: T = (0..4).map(|c| qh[c] * dqh[c]).sum();
        for c in 0..4 {
            out.rotations[4 * i + c] += (dqh[c] - qh[c] * proj_dot) / qn;
        }
    }
    Ok(out)
}
