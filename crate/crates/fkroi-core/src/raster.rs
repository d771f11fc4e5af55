//! Row-major 8-bit RGB rasters and PNG round-tripping.

use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("raster dimensions {width}x{height} do not match buffer of {len} bytes")]
    DimensionMismatch { width: u32, height: u32, len: usize },
    #[error("empty raster ({width}x{height})")]
    Empty { width: u32, height: u32 },
    #[error("failed to read image {path}: {source}")]
    Read {
        path: String,
        source: Box<image::ImageError>,
    },
    #[error("failed to write image {path}: {source}")]
    Write {
        path: String,
        source: Box<image::ImageError>,
    },
}

/// An owned RGB8 image, rows stored top to bottom.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbRaster {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl RgbRaster {
    pub fn new(width: u32, height: u32, data: Vec<u8>) -> Result<Self, RasterError> {
        if width == 0 || height == 0 {
            return Err(RasterError::Empty { width, height });
        }
        if data.len() != width as usize * height as usize * 3 {
            return Err(RasterError::DimensionMismatch {
                width,
                height,
                len: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: u32, height: u32, color: [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(width as usize * height as usize * 3);
        for _ in 0..width as usize * height as usize {
            data.extend_from_slice(&color);
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: u32, y: u32, color: [u8; 3]) {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        self.data[i..i + 3].copy_from_slice(&color);
    }

    pub fn load_png(path: &Path) -> Result<Self, RasterError> {
        let img = image::open(path)
            .map_err(|source| RasterError::Read {
                path: path.display().to_string(),
                source: Box::new(source),
            })?
            .to_rgb8();
        let (width, height) = img.dimensions();
        Ok(Self {
            width,
            height,
            data: img.into_raw(),
        })
    }

    pub fn save_png(&self, path: &Path) -> Result<(), RasterError> {
        let img = image::RgbImage::from_raw(self.width, self.height, self.data.clone())
            .expect("raster invariant guarantees matching buffer size");
        img.save_with_format(path, image::ImageFormat::Png)
            .map_err(|source| RasterError::Write {
                path: path.display().to_string(),
                source: Box::new(source),
            })
    }

    /// PNG bytes in memory; used for checksumming without temp files.
    pub fn encode_png(&self) -> Vec<u8> {
        let img = image::RgbImage::from_raw(self.width, self.height, self.data.clone())
            .expect("raster invariant guarantees matching buffer size");
        let mut bytes = std::io::Cursor::new(Vec::new());
        img.write_to(&mut bytes, image::ImageFormat::Png)
            .expect("in-memory PNG encoding cannot fail");
        bytes.into_inner()
    }
}
