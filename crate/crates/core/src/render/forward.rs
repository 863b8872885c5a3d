use super::project::{project_index, CamT, Projected2DGaussian};
use super::{Layout, RenderOptions, KERNEL_CUTOFF, TILE_SIZE, TRANSMITTANCE_EPS};
use crate::scene::{CameraView, GaussianField};
use crate::{Real, Result, Tensor};

/// Rendered maps of one view. Disabled feature heads come back with zero
/// channels.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput<T = f32> {
    pub color: Tensor<T>,
    pub feat_seg: Tensor<T>,
    pub feat_lang: Tensor<T>,
    pub depth: Tensor<T>,
    pub alpha: Tensor<T>,
    /// Index of the highest-weight Gaussian per pixel, `-1` where nothing
    /// contributes. Only filled with [`RenderOptions::track_dominant`].
    pub dominant: Option<Vec<i32>>,
}

impl<T: Real> RenderOutput<T> {
    pub fn height(&self) -> usize {
        self.alpha.dims()[0]
    }

    pub fn width(&self) -> usize {
        self.alpha.dims()[1]
    }
}

/// Projection, depth sort, per-Gaussian channel values and tile bins for
/// one (field, camera) pair. Shared by the forward and backward passes.
pub(crate) struct Prepared<T> {
    pub cam: CamT<T>,
    pub layout: Layout,
    pub proj: Vec<Projected2DGaussian<T>>,
    pub values: Vec<T>,
    pub tiles_x: usize,
    pub tiles_y: usize,
    /// Per tile, indices into `proj` in compositing order.
    pub bins: Vec<Vec<u32>>,
}

pub(crate) fn prepare<T: Real>(field: &GaussianField<T>, cam: &CameraView, opts: &RenderOptions) -> Result<Prepared<T>> {
    field.validate()?;
    cam.validate()?;
    let cam_t = CamT::new(cam);
    let layout = Layout::new(
        if opts.seg { field.seg_dim() } else { 0 },
        if opts.lang { field.lang_dim() } else { 0 },
    );
    let mut proj: Vec<Projected2DGaussian<T>> = opts
        .exec
        .map_range(field.len(), |i| project_index(field, &cam_t, i).map(|(p, _)| p))
        .into_iter()
        .flatten()
        .collect();
    proj.sort_by(|a, b| a.view_depth.partial_cmp(&b.view_depth).unwrap().then(a.index.cmp(&b.index)));

    let stride = layout.stride;
    let mut values = vec![T::zero(); proj.len() * stride];
    for (p, v) in proj.iter().zip(values.chunks_exact_mut(stride)) {
        let i = p.index;
        v[..3].copy_from_slice(&field.color(i));
        if opts.seg {
            field.seg_head.apply(field.latent(i), &mut v[layout.seg..layout.seg + layout.seg_len]);
        }
        if opts.lang {
            field.lang_head.apply(field.latent(i), &mut v[layout.lang..layout.lang + layout.lang_len]);
        }
        v[layout.depth] = p.view_depth;
    }

    let tiles_x = cam.width.div_ceil(TILE_SIZE);
    let tiles_y = cam.height.div_ceil(TILE_SIZE);
    let mut bins = vec![Vec::new(); tiles_x * tiles_y];
    for (k, p) in proj.iter().enumerate() {
        let [x0, x1, y0, y1] = p.bbox;
        for ty in y0 / TILE_SIZE..=(y1 - 1) / TILE_SIZE {
            for tx in x0 / TILE_SIZE..=(x1 - 1) / TILE_SIZE {
                bins[ty * tiles_x + tx].push(k as u32);
            }
        }
    }
    Ok(Prepared { cam: cam_t, layout, proj, values, tiles_x, tiles_y, bins })
}

/// Kernel exponent at pixel center `(x, y)`; `None` below the cutoff.
#[inline]
pub(crate) fn kernel_power<T: Real>(p: &Projected2DGaussian<T>, x: T, y: T, ln_cut: T) -> Option<(T, T, T)> {
    let dx = x - p.mean[0];
    let dy = y - p.mean[1];
    let power = T::lit(-0.5) * (p.conic[0] * dx * dx + p.conic[2] * dy * dy) - p.conic[1] * dx * dy;
    if power < ln_cut || power > T::zero() {
        None
    } else {
        Some((power, dx, dy))
    }
}

/// Bin entry restricted to one pixel row: Gaussian `k` can only pass the
/// kernel cutoff at columns `x0..x1`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Span {
    pub k: u32,
    pub x0: u32,
    pub x1: u32,
}

/// Fills `out` with the entries of `bin` that reach row `py` inside columns
/// `tile_x0..tile_x1`, keeping compositing order. Column ranges come from
/// solving the cutoff ellipse for the row center and are padded by a pixel;
/// the per-pixel cutoff test stays authoritative.
pub(crate) fn row_spans<T: Real>(prep: &Prepared<T>, bin: &[u32], py: usize, tile_x0: usize, tile_x1: usize, out: &mut Vec<Span>) {
    out.clear();
    let yc = py as f64 + 0.5;
    let lim = -KERNEL_CUTOFF.ln();
    for &k in bin {
        let p = &prep.proj[k as usize];
        if py < p.bbox[2] || py >= p.bbox[3] {
            continue;
        }
        let (a, b, c) = (p.conic[0].to_f64_lossy(), p.conic[1].to_f64_lossy(), p.conic[2].to_f64_lossy());
        let dy = yc - p.mean[1].to_f64_lossy();
        // ½a·dx² + b·dy·dx + ½c·dy² ≤ lim
        let disc = b * b * dy * dy - a * (c * dy * dy - 2.0 * lim);
        if disc < 0.0 {
            continue;
        }
        let r = disc.sqrt();
        let mx = p.mean[0].to_f64_lossy() - 0.5;
        let lo = (mx + (-b * dy - r) / a).floor() - 1.0;
        let hi = (mx + (-b * dy + r) / a).ceil() + 2.0;
        let x0 = (lo.max(0.0) as usize).max(p.bbox[0]).max(tile_x0);
        let x1 = (hi.max(0.0) as usize).min(p.bbox[1]).min(tile_x1);
        if x0 < x1 {
            out.push(Span { k, x0: x0 as u32, x1: x1 as u32 });
        }
    }
}

/// Composites one band of `TILE_SIZE` image rows into `out`
/// (`rows × width × pixel_stride`).
fn composite_band<T: Real>(prep: &Prepared<T>, band: usize, out: &mut [T], dominant: Option<&mut [i32]>) {
    let width = prep.cam.width;
    let ps = prep.layout.pixel_stride();
    let stride = prep.layout.stride;
    let ln_cut = T::lit(KERNEL_CUTOFF.ln());
    let t_eps = T::lit(TRANSMITTANCE_EPS);
    let y_base = band * TILE_SIZE;
    let rows = out.len() / (width * ps);
    let mut dominant = dominant;
    let mut spans = Vec::new();
    for tx in 0..prep.tiles_x {
        let bin = &prep.bins[band * prep.tiles_x + tx];
        if bin.is_empty() {
            continue;
        }
        let tile_x1 = ((tx + 1) * TILE_SIZE).min(width);
        for ly in 0..rows {
            let py = y_base + ly;
            let yc = T::lit(py as f64 + 0.5);
            row_spans(prep, bin, py, tx * TILE_SIZE, tile_x1, &mut spans);
            if spans.is_empty() {
                continue;
            }
            for px in tx * TILE_SIZE..tile_x1 {
                let xc = T::lit(px as f64 + 0.5);
                let o = (ly * width + px) * ps;
                let acc = &mut out[o..o + ps];
                let mut trans = T::one();
                let mut best = (T::zero(), -1i32);
                let pxu = px as u32;
                for sp in &spans {
                    if pxu < sp.x0 || pxu >= sp.x1 {
                        continue;
                    }
                    let k = sp.k;
                    let g = &prep.proj[k as usize];
                    let Some((power, _, _)) = kernel_power(g, xc, yc, ln_cut) else { continue };
                    let a = g.opacity * power.exp();
                    let w = a * trans;
                    let v = &prep.values[k as usize * stride..(k as usize + 1) * stride];
                    for (dst, &val) in acc[..stride].iter_mut().zip(v) {
                        *dst += w * val;
                    }
                    acc[stride] += w;
                    if w > best.0 {
                        best = (w, g.index as i32);
                    }
                    trans *= T::one() - a;
                    if trans < t_eps {
                        break;
                    }
                }
                if let Some(d) = dominant.as_deref_mut() {
                    d[ly * width + px] = best.1;
                }
            }
        }
    }
}

pub(crate) fn composite<T: Real>(prep: &Prepared<T>, exec: crate::Exec, track_dominant: bool) -> (Vec<T>, Option<Vec<i32>>) {
    let (w, h) = (prep.cam.width, prep.cam.height);
    let ps = prep.layout.pixel_stride();
    let mut buf = vec![T::zero(); h * w * ps];
    let band_len = TILE_SIZE * w * ps;
    if !track_dominant {
        exec.for_chunks_mut(&mut buf, band_len, |band, out| composite_band(prep, band, out, None));
        return (buf, None);
    }
    let mut dom = vec![-1i32; h * w];
    let mut bands: Vec<(&mut [T], &mut [i32])> = buf.chunks_mut(band_len).zip(dom.chunks_mut(TILE_SIZE * w)).collect();
    exec.for_each_mut(&mut bands, |band, (out, d)| composite_band(prep, band, out, Some(d)));
    drop(bands);
    (buf, Some(dom))
}

/// Renders with the default options.
pub fn render<T: Real>(field: &GaussianField<T>, cam: &CameraView) -> Result<RenderOutput<T>> {
    render_with(field, cam, &RenderOptions::default())
}

pub fn render_with<T: Real>(field: &GaussianField<T>, cam: &CameraView, opts: &RenderOptions) -> Result<RenderOutput<T>> {
    let prep = prepare(field, cam, opts)?;
    let (buf, dominant) = composite(&prep, opts.exec, opts.track_dominant);
    split_output(&prep.layout, cam.height, cam.width, &buf, dominant)
}

fn split_output<T: Real>(
    layout: &Layout,
    h: usize,
    w: usize,
    buf: &[T],
    dominant: Option<Vec<i32>>,
) -> Result<RenderOutput<T>> {
    let ps = layout.pixel_stride();
    let n = h * w;
    let mut color = Vec::with_capacity(n * 3);
    let mut seg = Vec::with_capacity(n * layout.seg_len);
    let mut lang = Vec::with_capacity(n * layout.lang_len);
    let mut depth = Vec::with_capacity(n);
    let mut alpha = Vec::with_capacity(n);
    for px in buf.chunks_exact(ps) {
        color.extend_from_slice(&px[..3]);
        seg.extend_from_slice(&px[layout.seg..layout.seg + layout.seg_len]);
        lang.extend_from_slice(&px[layout.lang..layout.lang + layout.lang_len]);
        depth.push(px[layout.depth]);
        alpha.push(px[layout.stride]);
    }
    Ok(RenderOutput {
        color: Tensor::new(vec![h, w, 3], color)?,
        feat_seg: Tensor::new(vec![h, w, layout.seg_len], seg)?,
        feat_lang: Tensor::new(vec![h, w, layout.lang_len], lang)?,
        depth: Tensor::new(vec![h, w], depth)?,
        alpha: Tensor::new(vec![h, w], alpha)?,
        dominant,
    })
}

/// Renders a sequence of poses.
pub fn render_pose_path<T: Real>(
    field: &GaussianField<T>,
    cams: &[CameraView],
    opts: &RenderOptions,
) -> Result<Vec<RenderOutput<T>>> {
    cams.iter().map(|c| render_with(field, c, opts)).collect()
}

