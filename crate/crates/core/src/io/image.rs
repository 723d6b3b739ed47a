use std::path::Path;

use image::{DynamicImage, ImageFormat, RgbImage};

use super::{read_bytes, write_atomic};
use crate::error::{Error, Result};
use crate::ops::Frame;
use crate::tensor::Tensor;

/// Load an 8-bit image as a frame in `[0, 1]`. Grayscale is promoted to
/// three identical channels; other layouts are rejected.
pub fn read_image(path: &Path) -> Result<Frame<f32>> {
    let bytes = read_bytes(path)?;
    let img = image::load_from_memory(&bytes).map_err(|e| Error::format(path, format!("unreadable image: {e}")))?;
    let rgb = match img {
        DynamicImage::ImageRgb8(i) => i,
        DynamicImage::ImageLuma8(_) => img.to_rgb8(),
        other => {
            return Err(Error::format(
                path,
                format!("unsupported pixel layout {:?}: expected 8-bit RGB or grayscale", other.color()),
            ))
        }
    };
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let mut t = Tensor::<f32>::zeros(&[3, h, w]);
    for (x, y, px) in rgb.enumerate_pixels() {
        for c in 0..3 {
            t.set(c, y as usize, x as usize, px.0[c] as f32 / 255.0);
        }
    }
    Frame::new(t)
}

/// Quantise to 8 bits and write a PNG.
pub fn write_image(frame: &Frame<f32>, path: &Path) -> Result<()> {
    let (h, w) = (frame.height(), frame.width());
    let t = frame.tensor();
    let img = RgbImage::from_fn(w as u32, h as u32, |x, y| {
        image::Rgb(std::array::from_fn(|c| (t.at(c, y as usize, x as usize).clamp(0.0, 1.0) * 255.0).round() as u8))
    });
    let mut buf = std::io::Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png).map_err(|e| Error::format(path, format!("png encoding failed: {e}")))?;
    write_atomic(path, &buf.into_inner())
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::GrayImage;

    #[test]
    fn round_trip_within_quantisation() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.png");
        let f = Frame::new(Tensor::from_fn(&[3, 5, 7], |i| ((i * 31) % 97) as f32 / 96.0)).unwrap();
        write_image(&f, &p).unwrap();
        let g = read_image(&p).unwrap();
        assert!(f.tensor().max_abs_diff(g.tensor()) <= 1.0 / 255.0);
    }

    #[test]
    fn grayscale_is_promoted() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.png");
        GrayImage::from_fn(4, 3, |x, y| image::Luma([(x * 40 + y) as u8])).save(&p).unwrap();
        let f = read_image(&p).unwrap();
        assert_eq!(f.tensor().shape(), &[3, 3, 4]);
        assert_eq!(f.tensor().channel(0), f.tensor().channel(2));
        assert_eq!(f.tensor().at(1, 2, 3), 122.0 / 255.0);
    }

    #[test]
    fn truncated_file_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.png");
        let f = Frame::filled(16, 16, 0.5f32);
        write_image(&f, &p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() / 2]).unwrap();
        assert!(read_image(&p).is_err());
    }
}
