use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Extent of a `[frames x height x width]` grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape3 {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape3 {
    pub const fn new(frames: usize, height: usize, width: usize) -> Self {
        Shape3 { frames, height, width }
    }

    pub fn len(&self) -> usize {
        self.frames * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn frame_len(&self) -> usize {
        self.height * self.width
    }

    pub fn index(&self, f: usize, y: usize, x: usize) -> usize {
        (f * self.height + y) * self.width + x
    }

    /// Inverse of [`Shape3::index`].
    pub fn coords(&self, i: usize) -> (usize, usize, usize) {
        let x = i % self.width;
        let y = (i / self.width) % self.height;
        let f = i / self.frame_len();
        (f, y, x)
    }
}

impl std::fmt::Display for Shape3 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.frames, self.height, self.width)
    }
}

impl std::str::FromStr for Shape3 {
    type Err = Error;

    /// Parses `FxHxW`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(['x', 'X']).collect();
        let bad = || Error::param(format!("expected FRAMESxHEIGHTxWIDTH, got {s:?}"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let n: Vec<usize> = parts
            .iter()
            .map(|p| p.trim().parse::<usize>().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        Ok(Shape3::new(n[0], n[1], n[2]))
    }
}

/// Real values over a `[frames x height x width]` grid, frame-major then row-major.
///
/// Used both for latent attention maps and for upsampled, display-ready volumes.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    shape: Shape3,
    values: Vec<f64>,
}

/// One token's attention over the latent video grid.
pub type LatentVolume = Volume;

impl Volume {
    pub fn new(shape: Shape3, values: Vec<f64>) -> Result<Self> {
        if values.len() != shape.len() {
            return Err(Error::param(format!(
                "volume {shape} needs {} values, got {}",
                shape.len(),
                values.len()
            )));
        }
        Ok(Volume { shape, values })
    }

    pub fn filled(shape: Shape3, value: f64) -> Self {
        Volume {
            shape,
            values: vec![value; shape.len()],
        }
    }

    pub fn from_fn(shape: Shape3, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(shape.len());
        for t in 0..shape.frames {
            for y in 0..shape.height {
                for x in 0..shape.width {
                    values.push(f(t, y, x));
                }
            }
        }
        Volume { shape, values }
    }

    pub fn shape(&self) -> Shape3 {
        self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, f: usize, y: usize, x: usize) -> f64 {
        self.values[self.shape.index(f, y, x)]
    }

    pub fn frame(&self, f: usize) -> &[f64] {
        let n = self.shape.frame_len();
        &self.values[f * n..(f + 1) * n]
    }

    pub fn frame_owned(&self, f: usize) -> Frame {
        Frame {
            height: self.shape.height,
            width: self.shape.width,
            values: self.frame(f).to_vec(),
        }
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn min_max(&self) -> (f64, f64) {
        min_max(&self.values)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Flat index of the largest value (first one on ties).
    pub fn argmax(&self) -> usize {
        argmax(&self.values)
    }
}

/// A single 2-D slice of values, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl Frame {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::param(format!(
                "frame {height}x{width} needs {} values, got {}",
                height * width,
                values.len()
            )));
        }
        Ok(Frame { height, width, values })
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.values[y * self.width + x]
    }
}

pub(crate) fn min_max(values: &[f64]) -> (f64, f64) {
    values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    })
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_and_coords_agree() {
        let s = Shape3::new(3, 4, 5);
        for i in 0..s.len() {
            let (f, y, x) = s.coords(i);
            assert_eq!(s.index(f, y, x), i);
        }
    }

    #[test]
    fn parses_shape() {
        assert_eq!("4x15x26".parse::<Shape3>().unwrap(), Shape3::new(4, 15, 26));
        assert!("4x15".parse::<Shape3>().is_err());
        assert!("4xax2".parse::<Shape3>().is_err());
    }

    #[test]
    fn new_checks_length() {
        assert!(Volume::new(Shape3::new(1, 2, 2), vec![0.0; 3]).is_err());
    }
}
