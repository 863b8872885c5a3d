use std::path::Path;

use image::{GrayImage, ImageFormat, ImageReader, Luma, Rgb, RgbImage};

use super::Tensor;
use crate::{Error, Real, Result};

fn quantize<T: Real>(v: T) -> u8 {
    let x = v.to_f64_lossy();
    if x.is_nan() {
        return 0;
    }
    (255.0 * x.clamp(0.0, 1.0)).round() as u8
}

fn image_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Image { path: path.to_path_buf(), message: e.to_string() }
}

/// Reads an 8-bit PNG into `[H,W,3]` with values `u/255`.
pub fn read_image<T: Real>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let reader = ImageReader::open(path)?.with_guessed_format()?;
    if reader.format() != Some(ImageFormat::Png) {
        return Err(image_err(path, "not a PNG file"));
    }
    let img = reader.decode().map_err(|e| image_err(path, e))?.to_rgb8();
    let (w, h) = img.dimensions();
    let inv = T::lit(1.0 / 255.0);
    let data = img.into_raw().into_iter().map(|u| T::lit(u as f64) * inv).collect();
    Tensor::new(vec![h as usize, w as usize, 3], data)
}

fn rgb_image<T: Real>(t: &Tensor<T>) -> Result<RgbImage> {
    let (h, w, c) = t.hwc()?;
    if c != 3 && c != 1 {
        return Err(Error::shape(format!("image needs 1 or 3 channels, got {c}")));
    }
    let mut img = RgbImage::new(w as u32, h as u32);
    for (i, px) in t.data().chunks_exact(c).enumerate() {
        let rgb = if c == 3 { [quantize(px[0]), quantize(px[1]), quantize(px[2])] } else { [quantize(px[0]); 3] };
        img.put_pixel((i % w) as u32, (i / w) as u32, Rgb(rgb));
    }
    Ok(img)
}

fn gray_image<T: Real>(t: &Tensor<T>) -> Result<GrayImage> {
    let (h, w, c) = t.hwc()?;
    if c != 1 {
        return Err(Error::shape(format!("gray image needs 1 channel, got {c}")));
    }
    let mut img = GrayImage::new(w as u32, h as u32);
    for (i, &v) in t.data().iter().enumerate() {
        img.put_pixel((i % w) as u32, (i / w) as u32, Luma([quantize(v)]));
    }
    Ok(img)
}

fn png_bytes<P: image::PixelWithColorType>(img: &image::ImageBuffer<P, Vec<P::Subpixel>>) -> Result<Vec<u8>>
where
    [P::Subpixel]: image::EncodableLayout,
{
    let mut out = std::io::Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png).map_err(|e| image_err(Path::new("<memory>"), e))?;
    Ok(out.into_inner())
}

/// PNG bytes of `[H,W,3]` (or `[H,W,1]`/`[H,W]` as gray replicated to RGB),
/// quantizing `round(255·x)` after clamping to `[0,1]`.
pub fn encode_png<T: Real>(t: &Tensor<T>) -> Result<Vec<u8>> {
    png_bytes(&rgb_image(t)?)
}

/// 8-bit grayscale PNG bytes of a single-channel tensor.
pub fn encode_gray_png<T: Real>(t: &Tensor<T>) -> Result<Vec<u8>> {
    png_bytes(&gray_image(t)?)
}

/// Decodes PNG bytes into `[H,W,3]` with values `u/255`.
pub fn decode_png<T: Real>(bytes: &[u8]) -> Result<Tensor<T>> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)
        .map_err(|e| image_err(Path::new("<memory>"), e))?
        .to_rgb8();
    let (w, h) = img.dimensions();
    let inv = T::lit(1.0 / 255.0);
    let data = img.into_raw().into_iter().map(|u| T::lit(u as f64) * inv).collect();
    Tensor::new(vec![h as usize, w as usize, 3], data)
}

/// Writes [`encode_png`] output to `path`.
pub fn write_image<T: Real>(t: &Tensor<T>, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_png(t)?)?;
    Ok(())
}

/// Writes [`encode_gray_png`] output to `path`.
pub fn write_gray_image<T: Real>(t: &Tensor<T>, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_gray_png(t)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn black_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.png");
        write_image(&Tensor::<f32>::zeros(&[4, 5, 3]), &p).unwrap();
        let r: Tensor<f32> = read_image(&p).unwrap();
        assert_eq!(r.dims(), &[4, 5, 3]);
        assert!(r.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn half_gray_quantizes_to_128() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.png");
        write_image(&Tensor::<f32>::full(&[2, 2, 3], 0.5), &p).unwrap();
        let r: Tensor<f64> = read_image(&p).unwrap();
        assert!(r.data().iter().all(|&v| (v - 128.0 / 255.0).abs() < 1e-12));
    }

    #[test]
    fn roundtrip_error_bounded() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.png");
        let t = Tensor::<f64>::from_fn(&[8, 9, 3], |i| ((i * 7919) % 1000) as f64 / 999.0);
        write_image(&t, &p).unwrap();
        let r: Tensor<f64> = read_image(&p).unwrap();
        for (a, b) in t.data().iter().zip(r.data()) {
            assert!((a - b).abs() <= 1.0 / 510.0 + 1e-12);
        }
    }

    #[test]
    fn non_png_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.png");
        std::fs::write(&p, b"definitely not an image").unwrap();
        assert!(matches!(read_image::<f32>(&p), Err(Error::Image { .. })));
    }

    #[test]
    fn memory_encoding_matches_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.png");
        let t = Tensor::<f32>::from_fn(&[5, 6, 3], |i| (i % 17) as f32 / 16.0);
        write_image(&t, &p).unwrap();
        let bytes = encode_png(&t).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), bytes);
        assert_eq!(decode_png::<f32>(&bytes).unwrap(), read_image::<f32>(&p).unwrap());
        assert!(decode_png::<f32>(b"nope").is_err());
        let g = Tensor::<f32>::full(&[3, 2], 1.0);
        let gray: Tensor<f32> = decode_png(&encode_gray_png(&g).unwrap()).unwrap();
        assert!(gray.data().iter().all(|&v| v == 1.0));
    }
}
