use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use crate::linalg::{mat3_mul, mat3_transpose, quat_to_mat, Mat3};
use crate::real::sigmoid;
use crate::tensor::{read_tensor_from, write_tensor_to};
use crate::{Error, Real, Result, Tensor};

/// Per-Gaussian scalars stored per row of the packed field file, before the
/// latent vector: position 3, opacity logit 1, log-scale 3, rotation 4,
/// color logits 3.
pub const PACKED_FIXED: usize = 14;

/// Affine map `out = Wᵀ·f + b` with `W` stored row-major as `in_dim × out_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearHead<T = f32> {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> LinearHead<T> {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        LinearHead { in_dim, out_dim, weight: vec![T::zero(); in_dim * out_dim], bias: vec![T::zero(); out_dim] }
    }

    /// Identity map (requires `in_dim == out_dim`).
    pub fn identity(dim: usize) -> Self {
        let mut h = Self::zeros(dim, dim);
        for i in 0..dim {
            h.weight[i * dim + i] = T::one();
        }
        h
    }

    #[inline]
    pub fn apply(&self, f: &[T], out: &mut [T]) {
        out.copy_from_slice(&self.bias);
        for (j, &fj) in f.iter().enumerate() {
            let row = &self.weight[j * self.out_dim..(j + 1) * self.out_dim];
            for (o, &wjk) in out.iter_mut().zip(row) {
                *o += fj * wjk;
            }
        }
    }

    pub fn cast<U: Real>(&self) -> LinearHead<U> {
        LinearHead {
            in_dim: self.in_dim,
            out_dim: self.out_dim,
            weight: self.weight.iter().map(|&v| U::from_real(v)).collect(),
            bias: self.bias.iter().map(|&v| U::from_real(v)).collect(),
        }
    }
}

/// One Gaussian by value.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian<T = f32> {
    pub position: [T; 3],
    pub opacity_logit: T,
    pub log_scale: [T; 3],
    /// `(w, x, y, z)`, normalized before use.
    pub rotation: [T; 4],
    /// Color logits; the rendered color is `sigmoid(color)`.
    pub color: [T; 3],
    pub latent: Vec<T>,
}

impl<T: Real> Gaussian<T> {
    pub fn opacity(&self) -> T {
        sigmoid(self.opacity_logit)
    }

    pub fn covariance(&self) -> Mat3<T> {
        covariance(&self.rotation, &self.log_scale)
    }
}

/// Parameter groups, in the order used by the optimizer and gradient buffers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    Positions,
    OpacityLogits,
    LogScales,
    Rotations,
    Colors,
    Latents,
    SegWeight,
    SegBias,
    LangWeight,
    LangBias,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 10] = [
        ParamGroup::Positions,
        ParamGroup::OpacityLogits,
        ParamGroup::LogScales,
        ParamGroup::Rotations,
        ParamGroup::Colors,
        ParamGroup::Latents,
        ParamGroup::SegWeight,
        ParamGroup::SegBias,
        ParamGroup::LangWeight,
        ParamGroup::LangBias,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::Positions => "positions",
            ParamGroup::OpacityLogits => "opacity_logits",
            ParamGroup::LogScales => "log_scales",
            ParamGroup::Rotations => "rotations",
            ParamGroup::Colors => "colors",
            ParamGroup::Latents => "latents",
            ParamGroup::SegWeight => "seg_weight",
            ParamGroup::SegBias => "seg_bias",
            ParamGroup::LangWeight => "lang_weight",
            ParamGroup::LangBias => "lang_bias",
        }
    }
}

/// Set of semantic anisotropic Gaussians plus the segmentation and language
/// heads. Per-Gaussian attributes live in flat struct-of-arrays buffers; the
/// same type doubles as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianField<T = f32> {
    pub positions: Vec<T>,
    pub opacity_logits: Vec<T>,
    pub log_scales: Vec<T>,
    pub rotations: Vec<T>,
    pub colors: Vec<T>,
    pub latents: Vec<T>,
    pub latent_dim: usize,
    pub seg_head: LinearHead<T>,
    pub lang_head: LinearHead<T>,
}

pub(crate) fn covariance<T: Real>(rotation: &[T; 4], log_scale: &[T; 3]) -> Mat3<T> {
    let n = rotation.iter().map(|&v| v * v).sum::<T>().sqrt();
    let q = rotation.map(|v| v / n);
    let r = quat_to_mat(&q);
    let s = log_scale.map(|v| v.exp());
    let mut m = r;
    for row in m.iter_mut() {
        for (v, &sj) in row.iter_mut().zip(&s) {
            *v *= sj;
        }
    }
    mat3_mul(&m, &mat3_transpose(&m))
}

impl<T: Real> GaussianField<T> {
    pub fn empty(latent_dim: usize, seg_dim: usize, lang_dim: usize) -> Self {
        GaussianField {
            positions: Vec::new(),
            opacity_logits: Vec::new(),
            log_scales: Vec::new(),
            rotations: Vec::new(),
            colors: Vec::new(),
            latents: Vec::new(),
            latent_dim,
            seg_head: LinearHead::zeros(latent_dim, seg_dim),
            lang_head: LinearHead::zeros(latent_dim, lang_dim),
        }
    }

    pub fn len(&self) -> usize {
        self.opacity_logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.opacity_logits.is_empty()
    }

    pub fn seg_dim(&self) -> usize {
        self.seg_head.out_dim
    }

    pub fn lang_dim(&self) -> usize {
        self.lang_head.out_dim
    }

    pub fn push(&mut self, g: Gaussian<T>) -> Result<()> {
        if g.latent.len() != self.latent_dim {
            return Err(Error::shape(format!("latent has {} dims, field uses {}", g.latent.len(), self.latent_dim)));
        }
        self.positions.extend_from_slice(&g.position);
        self.opacity_logits.push(g.opacity_logit);
        self.log_scales.extend_from_slice(&g.log_scale);
        self.rotations.extend_from_slice(&g.rotation);
        self.colors.extend_from_slice(&g.color);
        self.latents.extend_from_slice(&g.latent);
        Ok(())
    }

    pub fn gaussian(&self, i: usize) -> Gaussian<T> {
        Gaussian {
            position: self.position(i),
            opacity_logit: self.opacity_logits[i],
            log_scale: self.log_scale(i),
            rotation: self.rotation(i),
            color: [self.colors[3 * i], self.colors[3 * i + 1], self.colors[3 * i + 2]],
            latent: self.latent(i).to_vec(),
        }
    }

    #[inline]
    pub fn position(&self, i: usize) -> [T; 3] {
        [self.positions[3 * i], self.positions[3 * i + 1], self.positions[3 * i + 2]]
    }

    #[inline]
    pub fn log_scale(&self, i: usize) -> [T; 3] {
        [self.log_scales[3 * i], self.log_scales[3 * i + 1], self.log_scales[3 * i + 2]]
    }

    #[inline]
    pub fn rotation(&self, i: usize) -> [T; 4] {
        let r = &self.rotations[4 * i..4 * i + 4];
        [r[0], r[1], r[2], r[3]]
    }

    #[inline]
    pub fn latent(&self, i: usize) -> &[T] {
        &self.latents[i * self.latent_dim..(i + 1) * self.latent_dim]
    }

    #[inline]
    pub fn opacity(&self, i: usize) -> T {
        sigmoid(self.opacity_logits[i])
    }

    #[inline]
    pub fn color(&self, i: usize) -> [T; 3] {
        [sigmoid(self.colors[3 * i]), sigmoid(self.colors[3 * i + 1]), sigmoid(self.colors[3 * i + 2])]
    }

    /// `Σ = R(q)·diag(exp(s))²·R(q)ᵀ` with `q` normalized first.
    pub fn covariance(&self, i: usize) -> Mat3<T> {
        covariance(&self.rotation(i), &self.log_scale(i))
    }

    /// Same-shaped field of zeros, used to accumulate gradients.
    pub fn zeros_like(&self) -> Self {
        let z = |v: &Vec<T>| vec![T::zero(); v.len()];
        GaussianField {
            positions: z(&self.positions),
            opacity_logits: z(&self.opacity_logits),
            log_scales: z(&self.log_scales),
            rotations: z(&self.rotations),
            colors: z(&self.colors),
            latents: z(&self.latents),
            latent_dim: self.latent_dim,
            seg_head: LinearHead::zeros(self.seg_head.in_dim, self.seg_head.out_dim),
            lang_head: LinearHead::zeros(self.lang_head.in_dim, self.lang_head.out_dim),
        }
    }

    pub fn cast<U: Real>(&self) -> GaussianField<U> {
        let c = |v: &Vec<T>| v.iter().map(|&x| U::from_real(x)).collect();
        GaussianField {
            positions: c(&self.positions),
            opacity_logits: c(&self.opacity_logits),
            log_scales: c(&self.log_scales),
            rotations: c(&self.rotations),
            colors: c(&self.colors),
            latents: c(&self.latents),
            latent_dim: self.latent_dim,
            seg_head: self.seg_head.cast(),
            lang_head: self.lang_head.cast(),
        }
    }

    pub fn group(&self, g: ParamGroup) -> &[T] {
        match g {
            ParamGroup::Positions => &self.positions,
            ParamGroup::OpacityLogits => &self.opacity_logits,
            ParamGroup::LogScales => &self.log_scales,
            ParamGroup::Rotations => &self.rotations,
            ParamGroup::Colors => &self.colors,
            ParamGroup::Latents => &self.latents,
            ParamGroup::SegWeight => &self.seg_head.weight,
            ParamGroup::SegBias => &self.seg_head.bias,
            ParamGroup::LangWeight => &self.lang_head.weight,
            ParamGroup::LangBias => &self.lang_head.bias,
        }
    }

    pub fn group_mut(&mut self, g: ParamGroup) -> &mut [T] {
        match g {
            ParamGroup::Positions => &mut self.positions,
            ParamGroup::OpacityLogits => &mut self.opacity_logits,
            ParamGroup::LogScales => &mut self.log_scales,
            ParamGroup::Rotations => &mut self.rotations,
            ParamGroup::Colors => &mut self.colors,
            ParamGroup::Latents => &mut self.latents,
            ParamGroup::SegWeight => &mut self.seg_head.weight,
            ParamGroup::SegBias => &mut self.seg_head.bias,
            ParamGroup::LangWeight => &mut self.lang_head.weight,
            ParamGroup::LangBias => &mut self.lang_head.bias,
        }
    }

    /// Keeps the Gaussians whose `keep` flag is set, in order. Heads are
    /// untouched.
    pub fn retain(&mut self, keep: &[bool]) -> Result<()> {
        if keep.len() != self.len() {
            return Err(Error::shape(format!("retain mask has {} flags for {} Gaussians", keep.len(), self.len())));
        }
        fn filter<T: Copy>(v: &mut Vec<T>, width: usize, keep: &[bool]) {
            let mut k = 0;
            for (i, &on) in keep.iter().enumerate() {
                if on {
                    v.copy_within(i * width..(i + 1) * width, k * width);
                    k += 1;
                }
            }
            v.truncate(k * width);
        }
        filter(&mut self.positions, 3, keep);
        filter(&mut self.opacity_logits, 1, keep);
        filter(&mut self.log_scales, 3, keep);
        filter(&mut self.rotations, 4, keep);
        filter(&mut self.colors, 3, keep);
        filter(&mut self.latents, self.latent_dim, keep);
        Ok(())
    }

    /// Elementwise `self += other`.
    pub fn add_assign(&mut self, other: &Self) {
        for g in ParamGroup::ALL {
            for (a, &b) in self.group_mut(g).iter_mut().zip(other.group(g)) {
                *a += b;
            }
        }
    }

    pub fn scale(&mut self, k: T) {
        for g in ParamGroup::ALL {
            self.group_mut(g).iter_mut().for_each(|v| *v *= k);
        }
    }

    /// Checks buffer lengths and finiteness. A non-finite per-Gaussian value
    /// reports the Gaussian index; head values report the element index.
    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        let d = self.latent_dim;
        let ok = self.positions.len() == 3 * n
            && self.log_scales.len() == 3 * n
            && self.rotations.len() == 4 * n
            && self.colors.len() == 3 * n
            && self.latents.len() == d * n
            && self.seg_head.in_dim == d
            && self.lang_head.in_dim == d
            && self.seg_head.weight.len() == d * self.seg_head.out_dim
            && self.lang_head.weight.len() == d * self.lang_head.out_dim
            && self.seg_head.bias.len() == self.seg_head.out_dim
            && self.lang_head.bias.len() == self.lang_head.out_dim;
        if !ok {
            return Err(Error::shape("inconsistent Gaussian field buffers"));
        }
        let per_gaussian = [
            (&self.positions, 3),
            (&self.opacity_logits, 1),
            (&self.log_scales, 3),
            (&self.rotations, 4),
            (&self.colors, 3),
            (&self.latents, d.max(1)),
        ];
        let mut worst: Option<usize> = None;
        for (buf, stride) in per_gaussian {
            if let Some(k) = buf.iter().position(|v| !v.is_finite()) {
                let gi = k / stride;
                worst = Some(worst.map_or(gi, |w| w.min(gi)));
            }
        }
        if let Some(index) = worst {
            return Err(Error::NonFinite { what: "gaussian", index });
        }
        for (what, buf) in [
            ("seg_head", self.seg_head.weight.iter().chain(&self.seg_head.bias)),
            ("lang_head", self.lang_head.weight.iter().chain(&self.lang_head.bias)),
        ] {
            if let Some(index) = buf.into_iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite { what, index });
            }
        }
        for i in 0..n {
            let q = self.rotation(i);
            if q.iter().all(|v| *v == T::zero()) {
                return Err(Error::invalid(format!("gaussian {i} has a zero rotation quaternion")));
            }
        }
        Ok(())
    }

    /// Writes the field as five concatenated `SSPT` tensors: packed Gaussians
    /// `[N, 14 + d]`, seg weight `[d, d_S]`, seg bias `[d_S]`, lang weight
    /// `[d, d_L]`, lang bias `[d_L]`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let n = self.len();
        let d = self.latent_dim;
        let row = PACKED_FIXED + d;
        let mut packed = Vec::with_capacity(n * row);
        for i in 0..n {
            packed.extend_from_slice(&self.positions[3 * i..3 * i + 3]);
            packed.push(self.opacity_logits[i]);
            packed.extend_from_slice(&self.log_scales[3 * i..3 * i + 3]);
            packed.extend_from_slice(&self.rotations[4 * i..4 * i + 4]);
            packed.extend_from_slice(&self.colors[3 * i..3 * i + 3]);
            packed.extend_from_slice(self.latent(i));
        }
        let mut out = BufWriter::new(File::create(path)?);
        write_tensor_to(&Tensor::new(vec![n, row], packed)?, &mut out)?;
        for head in [&self.seg_head, &self.lang_head] {
            write_tensor_to(&Tensor::new(vec![head.in_dim, head.out_dim], head.weight.clone())?, &mut out)?;
            write_tensor_to(&Tensor::new(vec![head.out_dim], head.bias.clone())?, &mut out)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let mut input = BufReader::new(File::open(path)?);
        let packed: Tensor<T> = read_tensor_from(&mut input)?;
        let (n, row) = match packed.dims() {
            &[n, row] if row >= PACKED_FIXED => (n, row),
            d => return Err(Error::shape(format!("packed gaussians have dims {d:?}"))),
        };
        let d = row - PACKED_FIXED;
        let mut heads = Vec::new();
        for _ in 0..2 {
            let w: Tensor<T> = read_tensor_from(&mut input)?;
            let b: Tensor<T> = read_tensor_from(&mut input)?;
            let (din, dout) = match w.dims() {
                &[a, b] => (a, b),
                other => return Err(Error::shape(format!("head weight dims {other:?}"))),
            };
            if din != d || b.dims() != [dout] {
                return Err(Error::shape("head dims disagree with latent size"));
            }
            heads.push(LinearHead { in_dim: din, out_dim: dout, weight: w.into_data(), bias: b.into_data() });
        }
        let lang_head = heads.pop().unwrap();
        let seg_head = heads.pop().unwrap();
        let mut field = GaussianField::empty(d, seg_head.out_dim, lang_head.out_dim);
        field.seg_head = seg_head;
        field.lang_head = lang_head;
        for r in packed.data().chunks_exact(row).take(n) {
            field.positions.extend_from_slice(&r[0..3]);
            field.opacity_logits.push(r[3]);
            field.log_scales.extend_from_slice(&r[4..7]);
            field.rotations.extend_from_slice(&r[7..11]);
            field.colors.extend_from_slice(&r[11..14]);
            field.latents.extend_from_slice(&r[14..]);
        }
        field.validate()?;
        Ok(field)
    }
}
