use alloc::vec::Vec;

use crate::error::{dim_err, Result};
use crate::tensor::Tensor;

/// `height × width × channels` image, row-major with interleaved channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(&[height, width, channels], data).map(|t| Self::from_tensor_unchecked(&t))
    }

    fn from_tensor_unchecked(t: &Tensor) -> Self {
        Self {
            height: t.shape()[0],
            width: t.shape()[1],
            channels: t.shape()[2],
            data: t.data().to_vec(),
        }
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        if t.rank() != 3 {
            return Err(dim_err!("image tensor must be rank 3, got {:?}", t.shape()));
        }
        Ok(Self::from_tensor_unchecked(t))
    }

    pub fn filled(height: usize, width: usize, color: &[f64]) -> Result<Self> {
        let data = (0..height * width).flat_map(|_| color.iter().copied()).collect();
        Self::new(height, width, color.len(), data)
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_parts(
            alloc::vec![self.height, self.width, self.channels],
            self.data.clone(),
        )
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn pixel(&self, y: usize, x: usize) -> &[f64] {
        let o = (y * self.width + x) * self.channels;
        &self.data[o..o + self.channels]
    }

    pub(crate) fn pixel_mut(&mut self, y: usize, x: usize) -> &mut [f64] {
        let o = (y * self.width + x) * self.channels;
        &mut self.data[o..o + self.channels]
    }

    /// Side-by-side concatenation.
    pub fn hconcat(&self, other: &Image) -> Result<Image> {
        if self.height != other.height || self.channels != other.channels {
            return Err(dim_err!(
                "hconcat of {}x{}x{} with {}x{}x{}",
                self.height,
                self.width,
                self.channels,
                other.height,
                other.width,
                other.channels
            ));
        }
        let mut data = Vec::with_capacity(self.data.len() + other.data.len());
        let (ra, rb) = (self.width * self.channels, other.width * other.channels);
        for y in 0..self.height {
            data.extend_from_slice(&self.data[y * ra..(y + 1) * ra]);
            data.extend_from_slice(&other.data[y * rb..(y + 1) * rb]);
        }
        Ok(Image {
            height: self.height,
            width: self.width + other.width,
            channels: self.channels,
            data,
        })
    }

    /// Non-overlapping `patch×patch` tiles flattened to rows of `patch·patch·channels`
    /// values in `(dy, dx, channel)` order; rows follow the tile grid row-major.
    pub fn patchify(&self, patch: usize) -> Result<Tensor> {
        if patch == 0 || self.height % patch != 0 || self.width % patch != 0 {
            return Err(dim_err!(
                "{}x{} image not divisible into {patch}x{patch} patches",
                self.height,
                self.width
            ));
        }
        let (gh, gw) = (self.height / patch, self.width / patch);
        let cols = patch * patch * self.channels;
        let mut out = Vec::with_capacity(gh * gw * cols);
        for gy in 0..gh {
            for gx in 0..gw {
                for dy in 0..patch {
                    for dx in 0..patch {
                        out.extend_from_slice(self.pixel(gy * patch + dy, gx * patch + dx));
                    }
                }
            }
        }
        Ok(Tensor::from_parts(alloc::vec![gh * gw, cols], out))
    }
}
