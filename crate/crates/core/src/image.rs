//! RGB images in planar `[3, H, W]` layout with values in `[0, 1]`.

use std::path::Path;

use image::imageops::{self, FilterType};
use image::{ImageBuffer, Rgb, RgbImage};
use pipgan_autograd::Tensor;

use crate::error::{Error, Result};

pub const CHANNELS: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        let expected = CHANNELS * height * width;
        if data.len() != expected {
            return Err(Error::ShapeMismatch {
                context: "image buffer".into(),
                expected: vec![CHANNELS, height, width],
                actual: vec![data.len()],
            });
        }
        Ok(Image { height, width, data })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Image { height, width, data: vec![value; CHANNELS * height * width] }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> [usize; 3] {
        [CHANNELS, self.height, self.width]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn clamped(&self) -> Image {
        Image { height: self.height, width: self.width, data: self.data.iter().map(|v| v.clamp(0.0, 1.0)).collect() }
    }

    /// Decodes a PNG/JPEG file, resizes the short side to `size` (bilinear)
    /// and center-crops to `size × size`.
    pub fn load(path: &Path, size: usize) -> Result<Image> {
        if !path.exists() {
            return Err(Error::MissingImage(path.to_path_buf()));
        }
        let img = image::open(path).map_err(|source| Error::Image { path: path.to_path_buf(), source })?;
        Ok(Self::from_rgb8(&fit_square(img.to_rgb8(), size as u32)))
    }

    pub fn from_rgb8(img: &RgbImage) -> Image {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut data = vec![0.0; CHANNELS * h * w];
        for (x, y, px) in img.enumerate_pixels() {
            for c in 0..CHANNELS {
                data[(c * h + y as usize) * w + x as usize] = px[c] as f64 / 255.0;
            }
        }
        Image { height: h, width: w, data }
    }

    pub fn to_rgb8(&self) -> RgbImage {
        ImageBuffer::from_fn(self.width as u32, self.height as u32, |x, y| {
            let mut px = [0u8; 3];
            for (c, p) in px.iter_mut().enumerate() {
                *p = quantize(self.get(c, y as usize, x as usize));
            }
            Rgb(px)
        })
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        self.to_rgb8()
            .save_with_format(path, image::ImageFormat::Png)
            .map_err(|source| Error::Image { path: path.to_path_buf(), source })
    }

    /// Same image after an 8-bit PNG round trip.
    pub fn quantized(&self) -> Image {
        Image {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| quantize(v) as f64 / 255.0).collect(),
        }
    }
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn fit_square(img: RgbImage, size: u32) -> RgbImage {
    let (w, h) = img.dimensions();
    if w == size && h == size {
        return img;
    }
    let scale = size as f64 / w.min(h) as f64;
    let nw = ((w as f64 * scale).round() as u32).max(size);
    let nh = ((h as f64 * scale).round() as u32).max(size);
    let resized = imageops::resize(&img, nw, nh, FilterType::Triangle);
    let x0 = (nw - size) / 2;
    let y0 = (nh - size) / 2;
    imageops::crop_imm(&resized, x0, y0, size, size).to_image()
}

/// Stacks images into an `[N, 3, H, W]` constant tensor.
pub fn batch_tensor<'a>(images: impl IntoIterator<Item = &'a Image>) -> Result<Tensor> {
    let mut data = Vec::new();
    let mut n = 0;
    let mut hw: Option<(usize, usize)> = None;
    for img in images {
        match hw {
            None => hw = Some((img.height, img.width)),
            Some((h, w)) if (h, w) != (img.height, img.width) => {
                return Err(Error::ShapeMismatch {
                    context: "image batch".into(),
                    expected: vec![CHANNELS, h, w],
                    actual: img.shape().to_vec(),
                })
            }
            _ => {}
        }
        data.extend_from_slice(&img.data);
        n += 1;
    }
    let (h, w) = hw.ok_or_else(|| Error::Empty("image batch".into()))?;
    Ok(Tensor::from_vec(data, &[n, CHANNELS, h, w]))
}

/// Splits an `[N, 3, H, W]` tensor back into images.
pub fn tensor_images(t: &Tensor) -> Vec<Image> {
    let s = t.shape();
    assert_eq!(s.len(), 4, "expected NCHW tensor");
    assert_eq!(s[1], CHANNELS, "expected 3 channels");
    let per = CHANNELS * s[2] * s[3];
    t.data()
        .chunks(per)
        .map(|c| Image { height: s[2], width: s[3], data: c.to_vec() })
        .collect()
}

/// Tiles equally sized images into a `rows × cols` grid (row-major order).
pub fn contact_sheet(images: &[Image], rows: usize, cols: usize) -> Result<Image> {
    if images.len() != rows * cols || images.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "contact sheet of {rows}×{cols} needs {} images, got {}",
            rows * cols,
            images.len()
        )));
    }
    let (h, w) = (images[0].height, images[0].width);
    let mut sheet = Image::filled(rows * h, cols * w, 0.0);
    let (sh, sw) = (rows * h, cols * w);
    for (i, img) in images.iter().enumerate() {
        let (r, c) = (i / cols, i % cols);
        for ch in 0..CHANNELS {
            for y in 0..h {
                for x in 0..w {
                    sheet.data[(ch * sh + r * h + y) * sw + c * w + x] = img.get(ch, y, x);
                }
            }
        }
    }
    Ok(sheet)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_roundtrip_is_quantized_identity() {
        let dir = tempfile::tempdir().unwrap();
        let data: Vec<f64> = (0..3 * 4 * 5).map(|i| (i as f64 * 0.37).fract()).collect();
        let img = Image::new(4, 5, data).unwrap();
        let p = dir.path().join("a.png");
        img.save_png(&p).unwrap();
        let back = Image::load(&p, 4);
        // 4x5 is not square: load crops to 4x4
        let back = back.unwrap();
        assert_eq!(back.shape(), [3, 4, 4]);
        let q = img.quantized();
        for c in 0..3 {
            for y in 0..4 {
                for x in 0..4 {
                    assert_eq!(back.get(c, y, x), q.get(c, y, x));
                }
            }
        }
    }

    #[test]
    fn load_resizes_and_crops() {
        let dir = tempfile::tempdir().unwrap();
        let img = Image::filled(20, 40, 0.5);
        let p = dir.path().join("wide.png");
        img.save_png(&p).unwrap();
        let back = Image::load(&p, 16).unwrap();
        assert_eq!(back.shape(), [3, 16, 16]);
        assert!(back.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn missing_image_is_named_error() {
        let err = Image::load(Path::new("/no/such/file.png"), 8).unwrap_err();
        assert!(matches!(err, Error::MissingImage(_)));
    }

    #[test]
    fn contact_sheet_places_tiles() {
        let tiles: Vec<Image> = (0..6).map(|i| Image::filled(2, 2, i as f64 / 10.0)).collect();
        let sheet = contact_sheet(&tiles, 2, 3).unwrap();
        assert_eq!(sheet.shape(), [3, 4, 6]);
        assert_eq!(sheet.get(0, 0, 0), 0.0);
        assert_eq!(sheet.get(1, 3, 5), 0.5);
        assert_eq!(sheet.get(2, 0, 4), 0.2);
    }
}
