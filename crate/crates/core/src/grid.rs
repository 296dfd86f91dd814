//! Row-major rasters: images, depth maps and disparity maps.

use crate::error::{Error, Result};

/// An H×W raster with `channels` interleaved values per pixel.
///
/// Pixel (u, v) is column u, row v; row 0 is the top of the image.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid<T> {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<T>,
}

/// Intensity image with values in [0, 1].
pub type ImageGrid = Grid<f64>;

impl<T> Grid<T> {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn same_shape<U>(&self, other: &Grid<U>) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub fn shape_string(&self) -> String {
        format!("{}x{}x{}", self.width, self.height, self.channels)
    }

    pub(crate) fn check_shape<U>(&self, other: &Grid<U>) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::dims(self.shape_string(), other.shape_string()))
        }
    }

    pub(crate) fn check_plane<U>(&self, other: &Grid<U>) -> Result<()> {
        if self.width == other.width && self.height == other.height {
            Ok(())
        } else {
            Err(Error::dims(
                format!("{}x{}", self.width, self.height),
                format!("{}x{}", other.width, other.height),
            ))
        }
    }
}

impl<T: Copy> Grid<T> {
    pub fn filled(width: usize, height: usize, channels: usize, value: T) -> Self {
        Grid {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        if width == 0 || height == 0 || channels == 0 {
            return Err(Error::InvalidArgument("grid dimensions must be positive".into()));
        }
        if data.len() != width * height * channels {
            return Err(Error::dims(width * height * channels, data.len()));
        }
        Ok(Grid {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Self {
        let mut data = Vec::with_capacity(width * height * channels);
        for v in 0..height {
            for u in 0..width {
                for c in 0..channels {
                    data.push(f(u, v, c));
                }
            }
        }
        Grid {
            width,
            height,
            channels,
            data,
        }
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn index(&self, u: usize, v: usize, c: usize) -> usize {
        (v * self.width + u) * self.channels + c
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize, c: usize) -> T {
        self.data[self.index(u, v, c)]
    }

    #[inline]
    pub fn set(&mut self, u: usize, v: usize, c: usize, value: T) {
        let i = self.index(u, v, c);
        self.data[i] = value;
    }

    pub fn map<U: Copy>(&self, f: impl FnMut(T) -> U) -> Grid<U> {
        Grid {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.data.iter().copied().map(f).collect(),
        }
    }

}

/// Per-pixel depth in meters, single channel, strictly positive.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthField(Grid<f64>);

/// Per-pixel horizontal disparity in pixels, single channel, non-negative.
#[derive(Clone, Debug, PartialEq)]
pub struct DisparityField(Grid<f64>);

impl DepthField {
    pub fn new(grid: Grid<f64>) -> Result<Self> {
        if grid.channels() != 1 {
            return Err(Error::dims("1 channel", grid.channels()));
        }
        if let Some(z) = grid.data().iter().find(|z| !(**z > 0.0) || !z.is_finite()) {
            return Err(Error::InvalidArgument(format!("depth must be positive and finite, found {z}")));
        }
        Ok(DepthField(grid))
    }

    pub fn constant(width: usize, height: usize, depth: f64) -> Result<Self> {
        Self::new(Grid::filled(width, height, 1, depth))
    }

    pub fn grid(&self) -> &Grid<f64> {
        &self.0
    }

    pub fn into_grid(self) -> Grid<f64> {
        self.0
    }

    pub fn width(&self) -> usize {
        self.0.width()
    }

    pub fn height(&self) -> usize {
        self.0.height()
    }

    pub fn at(&self, u: usize, v: usize) -> f64 {
        self.0.get(u, v, 0)
    }
}

impl DisparityField {
    pub fn new(grid: Grid<f64>) -> Result<Self> {
        if grid.channels() != 1 {
            return Err(Error::dims("1 channel", grid.channels()));
        }
        if let Some(d) = grid.data().iter().find(|d| !(**d >= 0.0) || !d.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "disparity must be non-negative and finite, found {d}"
            )));
        }
        Ok(DisparityField(grid))
    }

    pub fn constant(width: usize, height: usize, disparity: f64) -> Result<Self> {
        Self::new(Grid::filled(width, height, 1, disparity))
    }

    pub fn grid(&self) -> &Grid<f64> {
        &self.0
    }

    pub fn into_grid(self) -> Grid<f64> {
        self.0
    }

    pub fn width(&self) -> usize {
        self.0.width()
    }

    pub fn height(&self) -> usize {
        self.0.height()
    }

    pub fn at(&self, u: usize, v: usize) -> f64 {
        self.0.get(u, v, 0)
    }
}
