//! Single-channel images and class-index masks.

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Number of segmentation classes: background plus three foreground organs.
pub const NUM_CLASSES: usize = 4;

/// Grayscale image, row-major. Raw intensities live in `[0, 1]`; normalized
/// images may leave that range.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::shape(
                "image",
                format!("{} pixels for {width}x{height}", data.len()),
            ));
        }
        Ok(Image {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Image {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    pub fn row(&self, y: usize) -> &[f64] {
        &self.data[y * self.width..(y + 1) * self.width]
    }

    /// Horizontal mirror.
    pub fn mirrored(&self) -> Image {
        let mut out = self.clone();
        for y in 0..self.height {
            out.data[y * self.width..(y + 1) * self.width].reverse();
        }
        out
    }

    /// `(1, 1, H, W)` tensor view of the pixels.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_parts(Shape::new(1, 1, self.height, self.width), self.data.clone())
    }
}

/// Per-pixel class indices in `0..NUM_CLASSES`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl Mask {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::shape(
                "mask",
                format!("{} pixels for {width}x{height}", data.len()),
            ));
        }
        if let Some(bad) = data.iter().find(|&&v| v as usize >= NUM_CLASSES) {
            return Err(Error::invalid(
                "mask",
                format!("class {bad} outside 0..{NUM_CLASSES}"),
            ));
        }
        Ok(Mask {
            width,
            height,
            data,
        })
    }

    pub fn background(width: usize, height: usize) -> Self {
        Mask {
            width,
            height,
            data: vec![0; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, class: u8) {
        self.data[y * self.width + x] = class;
    }

    pub fn same_extent(&self, other: &Mask) -> bool {
        self.width == other.width && self.height == other.height
    }
}

/// One grayscale image with its label mask.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: Image,
    pub mask: Mask,
}

impl Sample {
    pub fn new(id: impl Into<String>, image: Image, mask: Mask) -> Result<Self> {
        if image.width != mask.width || image.height != mask.height {
            return Err(Error::shape(
                "sample",
                format!(
                    "image {}x{} vs mask {}x{}",
                    image.width, image.height, mask.width, mask.height
                ),
            ));
        }
        Ok(Sample {
            id: id.into(),
            image,
            mask,
        })
    }
}
