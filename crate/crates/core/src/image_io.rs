//! 8-bit PNG / PGM / PPM reading and writing with `[0, 1]` planar floats,
//! plus BT.601 luminance and YCbCr conversion.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const KR: f64 = 0.299;
const KG: f64 = 0.587;
const KB: f64 = 0.114;

/// Planar image, one `(1, 1, h, w)` tensor per channel (1 = gray, 3 = RGB).
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub channels: Vec<Tensor>,
}

impl Image {
    pub fn gray(plane: Tensor) -> Self {
        Image { channels: vec![plane] }
    }

    pub fn dims(&self) -> (usize, usize) {
        self.channels[0].plane_dims().expect("image plane")
    }

    pub fn is_rgb(&self) -> bool {
        self.channels.len() == 3
    }

    /// BT.601 luminance; a gray image is returned as is.
    pub fn luminance(&self) -> Tensor {
        if !self.is_rgb() {
            return self.channels[0].clone();
        }
        let [r, g, b] = [&self.channels[0], &self.channels[1], &self.channels[2]];
        let mut y = r.scale(KR);
        y.add_assign(&g.scale(KG)).expect("same dims");
        y.add_assign(&b.scale(KB)).expect("same dims");
        y
    }

    /// `[Y, Cb, Cr]` with chroma centred on 0.5.
    pub fn to_ycbcr(&self) -> Result<[Tensor; 3]> {
        if !self.is_rgb() {
            return Err(Error::param("image", "YCbCr needs an RGB image"));
        }
        let y = self.luminance();
        let cb = self.channels[2].zip_map(&y, |b, y| 0.5 + (b - y) / (2.0 * (1.0 - KB)))?;
        let cr = self.channels[0].zip_map(&y, |r, y| 0.5 + (r - y) / (2.0 * (1.0 - KR)))?;
        Ok([y, cb, cr])
    }

    pub fn from_ycbcr(y: &Tensor, cb: &Tensor, cr: &Tensor) -> Result<Self> {
        let r = y.zip_map(cr, |y, cr| y + 2.0 * (1.0 - KR) * (cr - 0.5))?;
        let b = y.zip_map(cb, |y, cb| y + 2.0 * (1.0 - KB) * (cb - 0.5))?;
        let mut g = y.clone();
        for (i, v) in g.data_mut().iter_mut().enumerate() {
            *v = (*v - KR * r.data()[i] - KB * b.data()[i]) / KG;
        }
        Ok(Image { channels: vec![r, g, b] })
    }
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn read_image(path: &Path) -> Result<Image> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let plane = |data: Vec<f64>| Tensor::new(vec![1, 1, h, w], data);
    let gray_like = matches!(
        img.color(),
        image::ColorType::L8 | image::ColorType::L16 | image::ColorType::La8 | image::ColorType::La16
    );
    if gray_like {
        let g = img.to_luma8();
        return Ok(Image::gray(plane(g.as_raw().iter().map(|&v| v as f64 / 255.0).collect())?));
    }
    let rgb = img.to_rgb8();
    let raw = rgb.as_raw();
    let channels = (0..3)
        .map(|c| plane(raw.iter().skip(c).step_by(3).map(|&v| v as f64 / 255.0).collect()))
        .collect::<Result<Vec<_>>>()?;
    Ok(Image { channels })
}

/// Writes 8-bit PNG, PGM or PPM depending on the extension.
pub fn write_image(path: &Path, img: &Image) -> Result<()> {
    let (h, w) = img.dims();
    let err = |source| Error::Image {
        path: path.to_path_buf(),
        source,
    };
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default();
    if img.is_rgb() {
        let mut raw = Vec::with_capacity(h * w * 3);
        for i in 0..h * w {
            for c in &img.channels {
                raw.push(to_u8(c.data()[i]));
            }
        }
        let buf = image::RgbImage::from_raw(w as u32, h as u32, raw).expect("buffer size");
        match ext.as_str() {
            "ppm" | "pnm" => buf.save_with_format(path, image::ImageFormat::Pnm),
            _ => buf.save_with_format(path, image::ImageFormat::Png),
        }
        .map_err(err)
    } else {
        let raw = img.channels[0].data().iter().map(|&v| to_u8(v)).collect();
        let buf = image::GrayImage::from_raw(w as u32, h as u32, raw).expect("buffer size");
        match ext.as_str() {
            "pgm" | "pnm" => buf.save_with_format(path, image::ImageFormat::Pnm),
            _ => buf.save_with_format(path, image::ImageFormat::Png),
        }
        .map_err(err)
    }
}

/// Gray PNG of a non-negative map scaled so `max` maps to white
/// (`max` defaults to the map's own maximum).
pub fn write_heatmap(path: &Path, map: &Tensor, max: Option<f64>) -> Result<()> {
    let (h, w) = map.plane_dims()?;
    let top = max.unwrap_or_else(|| map.max_abs());
    let scaled = if top > 0.0 { map.scale(1.0 / top) } else { map.map(|_| 0.0) };
    write_image(path, &Image::gray(Tensor::new(vec![1, 1, h, w], scaled.into_data())?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ycbcr_round_trip() {
        let p = |v: &[f64]| Tensor::new(vec![1, 1, 1, 3], v.to_vec()).unwrap();
        let img = Image {
            channels: vec![p(&[1.0, 0.2, 0.0]), p(&[0.0, 0.4, 0.5]), p(&[0.3, 0.9, 1.0])],
        };
        let [y, cb, cr] = img.to_ycbcr().unwrap();
        assert!((y.data()[0] - (0.299 + 0.114 * 0.3)).abs() < 1e-15);
        let back = Image::from_ycbcr(&y, &cb, &cr).unwrap();
        for (a, b) in back.channels.iter().zip(&img.channels) {
            assert!(a.sub(b).unwrap().max_abs() < 1e-12);
        }
    }

    #[test]
    fn png_and_pgm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let plane = Tensor::new(vec![1, 1, 2, 3], vec![0.0, 1.0, 0.2, 0.4, 0.6, 0.8]).unwrap();
        for name in ["g.png", "g.pgm"] {
            let path = dir.path().join(name);
            write_image(&path, &Image::gray(plane.clone())).unwrap();
            let back = read_image(&path).unwrap();
            assert_eq!(back.channels.len(), 1);
            assert!(back.channels[0].sub(&plane).unwrap().max_abs() <= 0.5 / 255.0 + 1e-12);
        }
        let rgb = Image {
            channels: vec![plane.clone(), plane.map(|v| 1.0 - v), plane.scale(0.5)],
        };
        let path = dir.path().join("c.png");
        write_image(&path, &rgb).unwrap();
        assert!(read_image(&path).unwrap().is_rgb());
    }

    #[test]
    fn unreadable_file_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.png");
        std::fs::write(&path, b"not an image").unwrap();
        assert!(matches!(read_image(&path), Err(Error::Image { .. })));
    }
}
