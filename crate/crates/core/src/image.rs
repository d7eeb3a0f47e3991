use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `channels × height × width` dimensions of an image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Shape {
            channels,
            height,
            width,
        }
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_array(self) -> [usize; 3] {
        [self.channels, self.height, self.width]
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.height, self.width)
    }
}

/// Channel-major, row-major image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    shape: Shape,
    data: Vec<f32>,
}

impl ImageTensor {
    pub fn new(shape: Shape, data: Vec<f32>) -> Result<Self> {
        if shape.channels == 0 || shape.height == 0 || shape.width == 0 {
            return Err(Error::invalid(format!("degenerate image shape {shape}")));
        }
        if data.len() != shape.len() {
            return Err(Error::invalid(format!(
                "image data has {} values, shape {shape} needs {}",
                data.len(),
                shape.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(ImageTensor { shape, data })
    }

    /// Builds an image from values the caller guarantees are in range,
    /// clamping anything that strayed.
    pub(crate) fn from_clamped(shape: Shape, mut data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), shape.len());
        for v in &mut data {
            *v = v.clamp(0.0, 1.0);
        }
        ImageTensor { shape, data }
    }

    pub fn filled(shape: Shape, value: f32) -> Result<Self> {
        Self::new(shape, vec![value; shape.len()])
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.shape.height + y) * self.shape.width + x]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub image: ImageTensor,
    pub label: usize,
}
