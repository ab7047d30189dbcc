//! CHW float images in [0,1], plus the two on-disk forms used everywhere:
//! 8-bit PNG (previews, dataset images) and a raw little-endian f32 tensor
//! container (exact storage for perturbed images, where 8-bit quantization
//! would destroy small perturbations).

use crate::error::{CoreError, Result};
use crate::tensor::Tensor;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

/// Desk experiment image shape as (channels, height, width).
pub const DESK_IMAGE_SHAPE: [usize; 3] = [3, 64, 64];

/// An image as channel-major float intensities, every element finite and
/// inside [0,1].
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl ImageTensor {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(CoreError::InvalidImage("zero-sized image".into()));
        }
        if data.len() != channels * height * width {
            return Err(CoreError::InvalidImage(format!(
                "data length {} does not match {}x{}x{}",
                data.len(),
                channels,
                height,
                width
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(CoreError::InvalidImage(format!(
                "pixel value {v} outside [0,1]"
            )));
        }
        Ok(ImageTensor {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        ImageTensor {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.channels, self.height, self.width]
    }

    pub fn channels(&self) -> usize {
        self.channels
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        debug_assert!(v.is_finite() && (0.0..=1.0).contains(&v));
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec(&[self.channels, self.height, self.width], self.data.clone())
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let (c, h, w) = t.chw();
        ImageTensor::new(c, h, w, t.data().to_vec())
    }

    /// Like `from_tensor` but clamps into [0,1] first; NaN stays an error.
    pub fn from_tensor_clamped(t: &Tensor) -> Result<Self> {
        let (c, h, w) = t.chw();
        let mut data = t.data().to_vec();
        for v in &mut data {
            if !v.is_finite() {
                return Err(CoreError::InvalidImage("non-finite pixel".into()));
            }
            *v = v.clamp(0.0, 1.0);
        }
        ImageTensor::new(c, h, w, data)
    }

    pub fn l2_distance(&self, other: &ImageTensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| {
                let d = (*a - *b) as f64;
                d * d
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn linf_distance(&self, other: &ImageTensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| ((*a - *b) as f64).abs())
            .fold(0.0, f64::max)
    }

    /// Encode as 8-bit RGB (or grayscale) PNG. Values are scaled by 255 and
    /// rounded; this is lossy and meant for previews and dataset images.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let to_u8 = |v: f32| (v * 255.0).round().clamp(0.0, 255.0) as u8;
        match self.channels {
            3 => {
                let mut buf = image::RgbImage::new(self.width as u32, self.height as u32);
                for y in 0..self.height {
                    for x in 0..self.width {
                        buf.put_pixel(
                            x as u32,
                            y as u32,
                            image::Rgb([
                                to_u8(self.get(0, y, x)),
                                to_u8(self.get(1, y, x)),
                                to_u8(self.get(2, y, x)),
                            ]),
                        );
                    }
                }
                buf.save(path)
                    .map_err(|e| CoreError::Persistence(format!("{}: {e}", path.display())))
            }
            1 => {
                let mut buf = image::GrayImage::new(self.width as u32, self.height as u32);
                for y in 0..self.height {
                    for x in 0..self.width {
                        buf.put_pixel(x as u32, y as u32, image::Luma([to_u8(self.get(0, y, x))]));
                    }
                }
                buf.save(path)
                    .map_err(|e| CoreError::Persistence(format!("{}: {e}", path.display())))
            }
            c => Err(CoreError::InvalidImage(format!(
                "PNG export supports 1 or 3 channels, got {c}"
            ))),
        }
    }

    /// Decode a PNG into floats by dividing the 8-bit values by 255 exactly.
    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path)
            .map_err(|e| CoreError::Persistence(format!("{}: {e}", path.display())))?
            .to_rgb8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut data = vec![0.0f32; 3 * h * w];
        for y in 0..h {
            for x in 0..w {
                let p = img.get_pixel(x as u32, y as u32);
                for c in 0..3 {
                    data[(c * h + y) * w + x] = p[c] as f32 / 255.0;
                }
            }
        }
        ImageTensor::new(3, h, w, data)
    }
}

const TENSOR_MAGIC: &[u8; 8] = b"DFLABF32";
const TENSOR_VERSION: u32 = 1;

/// Write a raw f32 tensor: magic, version, rank, dims, then little-endian
/// payload in storage order.
pub fn write_tensor(path: &Path, t: &Tensor) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(TENSOR_MAGIC)?;
    w.write_all(&TENSOR_VERSION.to_le_bytes())?;
    w.write_all(&(t.dims().len() as u32).to_le_bytes())?;
    for &d in t.dims() {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    for v in t.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_tensor(path: &Path) -> Result<Tensor> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != TENSOR_MAGIC {
        return Err(CoreError::Persistence(format!(
            "{}: bad magic",
            path.display()
        )));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)?;
    let version = u32::from_le_bytes(u32buf);
    if version != TENSOR_VERSION {
        return Err(CoreError::Persistence(format!(
            "{}: unsupported version {version}",
            path.display()
        )));
    }
    r.read_exact(&mut u32buf)?;
    let rank = u32::from_le_bytes(u32buf) as usize;
    if rank == 0 || rank > 8 {
        return Err(CoreError::Persistence(format!(
            "{}: implausible rank {rank}",
            path.display()
        )));
    }
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        r.read_exact(&mut u32buf)?;
        dims.push(u32::from_le_bytes(u32buf) as usize);
    }
    let n: usize = dims.iter().product();
    let mut data = vec![0.0f32; n];
    let mut fbuf = [0u8; 4];
    for v in &mut data {
        r.read_exact(&mut fbuf)?;
        *v = f32::from_le_bytes(fbuf);
    }
    Ok(Tensor::from_vec(&dims, data))
}

pub fn write_image_tensor(path: &Path, img: &ImageTensor) -> Result<()> {
    write_tensor(path, &img.to_tensor())
}

pub fn read_image_tensor(path: &Path) -> Result<ImageTensor> {
    ImageTensor::from_tensor(&read_tensor(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range_and_nan() {
        assert!(ImageTensor::new(1, 1, 2, vec![0.0, 1.5]).is_err());
        assert!(ImageTensor::new(1, 1, 2, vec![0.0, f32::NAN]).is_err());
        assert!(ImageTensor::new(1, 1, 2, vec![0.0, 1.0]).is_ok());
    }

    #[test]
    fn tensor_container_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.f32");
        let t = Tensor::from_vec(&[2, 3], vec![0.1, -0.5, 3.25, 0.0, 1.0, -2.0]);
        write_tensor(&p, &t).unwrap();
        let back = read_tensor(&p).unwrap();
        assert_eq!(t, back);
    }

    #[test]
    fn png_round_trip_is_quantized_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("img.png");
        let img = ImageTensor::new(
            3,
            2,
            2,
            (0..12).map(|i| i as f32 / 11.0).collect(),
        )
        .unwrap();
        img.save_png(&p).unwrap();
        let back = ImageTensor::load_png(&p).unwrap();
        assert_eq!(back.shape(), [3, 2, 2]);
        for (a, b) in img.data().iter().zip(back.data()) {
            // round trip error bounded by half a quantization step
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
        }
    }
}
