//! Dense row-major tensors and their file/image boundaries.

mod image_io;
mod io;
mod resample;

pub use image_io::{decode_png, encode_gray_png, encode_png, read_image, write_gray_image, write_image};
pub use io::{read_tensor, read_tensor_from, write_tensor, write_tensor_to, HEADER_MAGIC, FORMAT_VERSION};
pub use resample::resample_bilinear;

use crate::{Error, Real, Result};

/// Dense n-dimensional array, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T = f32> {
    dims: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(dims: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let n = checked_len(&dims)?;
        if n != data.len() {
            return Err(Error::shape(format!(
                "dims {dims:?} hold {n} elements, data has {}",
                data.len()
            )));
        }
        Ok(Tensor { dims, data })
    }

    pub fn zeros(dims: &[usize]) -> Self {
        Self::full(dims, T::zero())
    }

    pub fn full(dims: &[usize], value: T) -> Self {
        let n = dims.iter().product();
        Tensor { dims: dims.to_vec(), data: vec![value; n] }
    }

    pub fn scalar(value: T) -> Self {
        Tensor { dims: Vec::new(), data: vec![value] }
    }

    pub fn from_fn(dims: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let n = dims.iter().product();
        Tensor { dims: dims.to_vec(), data: (0..n).map(&mut f).collect() }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn reshape(self, dims: Vec<usize>) -> Result<Self> {
        Tensor::new(dims, self.data)
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor { dims: self.dims.clone(), data: self.data.iter().map(|&v| U::from_real(v)).collect() }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor { dims: self.dims.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    /// `(height, width, channels)` of an image-like tensor. A 2-D tensor
    /// counts as one channel.
    pub fn hwc(&self) -> Result<(usize, usize, usize)> {
        match self.dims.as_slice() {
            &[h, w] => Ok((h, w, 1)),
            &[h, w, c] => Ok((h, w, c)),
            d => Err(Error::shape(format!("expected [H,W] or [H,W,C], got {d:?}"))),
        }
    }

    /// Channel slice at pixel `(y, x)` of an `[H,W,C]` tensor.
    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> &[T] {
        let w = self.dims[1];
        let c = if self.dims.len() == 3 { self.dims[2] } else { 1 };
        let o = (y * w + x) * c;
        &self.data[o..o + c]
    }

    pub fn first_nonfinite(&self) -> Option<usize> {
        self.data.iter().position(|v| !v.is_finite())
    }

    /// Copies channels `[start, end)` of an `[H,W,C]` tensor.
    pub fn channel_slice(&self, start: usize, end: usize) -> Result<Self> {
        let (h, w, c) = self.hwc()?;
        if start > end || end > c {
            return Err(Error::shape(format!("channel range {start}..{end} outside {c}")));
        }
        let k = end - start;
        let mut data = Vec::with_capacity(h * w * k);
        for px in self.data.chunks_exact(c) {
            data.extend_from_slice(&px[start..end]);
        }
        Tensor::new(vec![h, w, k], data)
    }
}

pub(crate) fn checked_len(dims: &[usize]) -> Result<usize> {
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::DimOverflow(dims.iter().map(|&d| d as u64).collect()))
}

pub(crate) fn ensure_same_dims<T: Real>(a: &Tensor<T>, b: &Tensor<T>, what: &str) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::shape(format!("{what}: {:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_checks_length() {
        assert!(Tensor::<f32>::new(vec![2, 3], vec![0.0; 5]).is_err());
        let t = Tensor::<f32>::new(vec![2, 3], vec![0.0; 6]).unwrap();
        assert_eq!(t.hwc().unwrap(), (2, 3, 1));
    }

    #[test]
    fn channel_slice_picks_columns() {
        let t = Tensor::<f32>::from_fn(&[1, 2, 3], |i| i as f32);
        let s = t.channel_slice(1, 3).unwrap();
        assert_eq!(s.data(), &[1.0, 2.0, 4.0, 5.0]);
    }
}
