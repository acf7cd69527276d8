use crate::error::{Error, Result};

/// Row-major grayscale intensity grid. Pixel `(i, j)` is row `i`, column `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument(format!(
                "image dimensions must be positive, got {height}x{width}"
            )));
        }
        if data.len() != height * width {
            return Err(Error::LengthMismatch {
                expected: height * width,
                got: data.len(),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("pixel {pos} of image")));
        }
        Ok(Self { height, width, data })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, 0.0)
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        assert!(height > 0 && width > 0, "image dimensions must be positive");
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(height > 0 && width > 0, "image dimensions must be positive");
        let mut data = Vec::with_capacity(height * width);
        for i in 0..height {
            for j in 0..width {
                data.push(f(i, j));
            }
        }
        Self { height, width, data }
    }

    /// Builds an image without the finiteness scan. Used on hot paths whose
    /// inputs are already known to be finite.
    pub(crate) fn from_raw(height: usize, width: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), height * width);
        Self { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.width + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.width + j] = v;
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn check_shape(&self, other: &Image) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::ShapeMismatch {
                expected: format!("{}x{}", self.height, self.width),
                got: format!("{}x{}", other.height, other.width),
            })
        }
    }

    pub fn check_dims(&self, height: usize, width: usize) -> Result<()> {
        if self.height == height && self.width == width {
            Ok(())
        } else {
            Err(Error::ShapeMismatch {
                expected: format!("{height}x{width}"),
                got: format!("{}x{}", self.height, self.width),
            })
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn dot(&self, other: &Image) -> f64 {
        debug_assert!(self.same_shape(other));
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// `a * self + b * other`, elementwise.
    pub fn lincomb(&self, a: f64, other: &Image, b: f64) -> Image {
        debug_assert!(self.same_shape(other));
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(x, y)| a * x + b * y)
            .collect();
        Image::from_raw(self.height, self.width, data)
    }

    pub fn scale(&self, a: f64) -> Image {
        self.map(|v| a * v)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image::from_raw(self.height, self.width, self.data.iter().map(|&v| f(v)).collect())
    }

    /// `self += a * other`
    pub fn add_scaled(&mut self, a: f64, other: &Image) {
        debug_assert!(self.same_shape(other));
        for (x, y) in self.data.iter_mut().zip(&other.data) {
            *x += a * y;
        }
    }

    pub fn squared_distance(&self, other: &Image) -> f64 {
        debug_assert!(self.same_shape(other));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }

    /// Cyclic shift by `(di, dj)` pixels: output `(i, j)` takes input `(i - di, j - dj)`.
    pub fn roll(&self, di: isize, dj: isize) -> Image {
        let (h, w) = (self.height as isize, self.width as isize);
        Image::from_fn(self.height, self.width, |i, j| {
            let si = (i as isize - di).rem_euclid(h) as usize;
            let sj = (j as isize - dj).rem_euclid(w) as usize;
            self.get(si, sj)
        })
    }

    /// Mirror left-right.
    pub fn flip_horizontal(&self) -> Image {
        Image::from_fn(self.height, self.width, |i, j| self.get(i, self.width - 1 - j))
    }
}
