//! Grid conventions shared by every module.
//!
//! The detector axis samples `t_i = -1 + 2i/(n_t - 1)` on `[-1, 1]` inclusive,
//! so index `n_t - 1 - i` is the mirror of index `i`. Images cover `[-1, 1]^2`
//! with pixel centers at `-1 + (2k + 1)/n`; columns run along `u1` and rows
//! along `u2`. Sinograms are stored angle-major.

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Uniform detector sampling on `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DetectorAxis {
    n_t: usize,
}

impl DetectorAxis {
    pub fn new(n_t: usize) -> Result<Self> {
        if n_t < 2 {
            return Err(Error::InvalidParameter(format!(
                "detector axis needs at least 2 samples, got {n_t}"
            )));
        }
        Ok(Self { n_t })
    }

    pub fn len(&self) -> usize {
        self.n_t
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing<T: Real>(&self) -> T {
        T::lit(2.0) / T::from_index(self.n_t - 1)
    }

    /// `t_i`, or an error when `i` is past the last sample.
    pub fn coordinate<T: Real>(&self, i: usize) -> Result<T> {
        if i >= self.n_t {
            return Err(Error::IndexOutOfRange {
                index: i,
                len: self.n_t,
            });
        }
        Ok(self.coordinate_unchecked(i))
    }

    pub(crate) fn coordinate_unchecked<T: Real>(&self, i: usize) -> T {
        T::from_index(2 * i) / T::from_index(self.n_t - 1) - T::one()
    }

    /// All sample positions in index order.
    pub fn coordinates<T: Real>(&self) -> Vec<T> {
        (0..self.n_t).map(|i| self.coordinate_unchecked(i)).collect()
    }
}

/// Free-function form of [`DetectorAxis::coordinate`].
pub fn detector_coordinate<T: Real>(axis: &DetectorAxis, i: usize) -> Result<T> {
    axis.coordinate(i)
}

/// Angular coverage of a sinogram.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AngleSpan {
    /// `[0, π)`, as measured.
    Half,
    /// `[0, 2π)`, produced by the parallel-beam symmetry extension.
    Full,
}

/// Uniform projection angles `θ_j = j·span/V`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AngleAxis {
    n_theta: usize,
    span: AngleSpan,
}

impl AngleAxis {
    /// Half-open `[0, π)` with `n_theta` angles.
    pub fn new(n_theta: usize) -> Result<Self> {
        Self::with_span(n_theta, AngleSpan::Half)
    }

    pub fn with_span(n_theta: usize, span: AngleSpan) -> Result<Self> {
        if n_theta == 0 {
            return Err(Error::InvalidParameter(
                "angle axis needs at least one angle".into(),
            ));
        }
        Ok(Self { n_theta, span })
    }

    pub fn len(&self) -> usize {
        self.n_theta
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn span(&self) -> AngleSpan {
        self.span
    }

    pub fn extent<T: Real>(&self) -> T {
        match self.span {
            AngleSpan::Half => T::PI(),
            AngleSpan::Full => T::TAU(),
        }
    }

    pub fn spacing<T: Real>(&self) -> T {
        self.extent::<T>() / T::from_index(self.n_theta)
    }

    pub fn angle<T: Real>(&self, j: usize) -> Result<T> {
        if j >= self.n_theta {
            return Err(Error::IndexOutOfRange {
                index: j,
                len: self.n_theta,
            });
        }
        Ok(self.angle_unchecked(j))
    }

    pub(crate) fn angle_unchecked<T: Real>(&self, j: usize) -> T {
        T::from_index(j) * self.extent::<T>() / T::from_index(self.n_theta)
    }

    pub fn angles<T: Real>(&self) -> Vec<T> {
        (0..self.n_theta).map(|j| self.angle_unchecked(j)).collect()
    }
}

/// Coordinate of pixel center `k` on a side of `n` pixels.
pub(crate) fn pixel_coordinate<T: Real>(n: usize, k: usize) -> T {
    T::from_index(2 * k + 1) / T::from_index(n) - T::one()
}

/// Slice coordinate `s_k` for slice `k` of `n_slices`, same convention as pixels.
pub fn slice_coordinate<T: Real>(k: usize, n_slices: usize) -> T {
    pixel_coordinate(n_slices, k)
}

/// One slice's line-integral data, indexed `[angle][detector]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sinogram<T> {
    detector: DetectorAxis,
    angles: AngleAxis,
    data: Vec<T>,
}

impl<T: Real> Sinogram<T> {
    pub fn new(detector: DetectorAxis, angles: AngleAxis, data: Vec<T>) -> Result<Self> {
        let expected = detector.len() * angles.len();
        if data.len() != expected {
            return Err(Error::shape(
                format!("{} x {}", angles.len(), detector.len()),
                format!("{} values", data.len()),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("sinogram"));
        }
        Ok(Self {
            detector,
            angles,
            data,
        })
    }

    pub fn zeros(detector: DetectorAxis, angles: AngleAxis) -> Self {
        Self {
            detector,
            angles,
            data: vec![T::zero(); detector.len() * angles.len()],
        }
    }

    /// Builds a sinogram from `f(angle_index, detector_index)`.
    pub fn from_fn(
        detector: DetectorAxis,
        angles: AngleAxis,
        mut f: impl FnMut(usize, usize) -> T,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(detector.len() * angles.len());
        for j in 0..angles.len() {
            for i in 0..detector.len() {
                data.push(f(j, i));
            }
        }
        Self::new(detector, angles, data)
    }

    /// Wraps data already known to be finite and correctly sized.
    pub(crate) fn from_parts(detector: DetectorAxis, angles: AngleAxis, data: Vec<T>) -> Self {
        debug_assert_eq!(data.len(), detector.len() * angles.len());
        Self {
            detector,
            angles,
            data,
        }
    }

    pub fn detector(&self) -> DetectorAxis {
        self.detector
    }

    pub fn angles(&self) -> AngleAxis {
        self.angles
    }

    pub fn n_t(&self) -> usize {
        self.detector.len()
    }

    pub fn n_theta(&self) -> usize {
        self.angles.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn row(&self, j: usize) -> &[T] {
        let n = self.n_t();
        &self.data[j * n..(j + 1) * n]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, T> {
        self.data.chunks_exact(self.n_t())
    }

    pub fn get(&self, j: usize, i: usize) -> T {
        self.data[j * self.n_t() + i]
    }

    /// Same axes, values mapped through `f`.
    pub fn map(&self, f: impl Fn(T) -> T) -> Result<Self> {
        Self::new(self.detector, self.angles, self.data.iter().map(|&v| f(v)).collect())
    }

    /// Element type conversion, e.g. `f32` container data to `f64` working precision.
    pub fn cast<U: Real>(&self) -> Sinogram<U> {
        Sinogram {
            detector: self.detector,
            angles: self.angles,
            data: self.data.iter().map(|&v| U::lit(v.to_f64_lossy())).collect(),
        }
    }
}

/// Square image on `[-1, 1]^2`, indexed `[row][col]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid<T> {
    n: usize,
    data: Vec<T>,
}

impl<T: Real> ImageGrid<T> {
    pub fn new(n: usize, data: Vec<T>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter("image side must be positive".into()));
        }
        if data.len() != n * n {
            return Err(Error::shape(format!("{n} x {n}"), format!("{} values", data.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("image"));
        }
        Ok(Self { n, data })
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![T::zero(); n * n],
        }
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> T) -> Result<Self> {
        let mut data = Vec::with_capacity(n * n);
        for row in 0..n {
            for col in 0..n {
                data.push(f(row, col));
            }
        }
        Self::new(n, data)
    }

    pub(crate) fn from_parts(n: usize, data: Vec<T>) -> Self {
        debug_assert_eq!(data.len(), n * n);
        Self { n, data }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn get(&self, row: usize, col: usize) -> T {
        self.data[row * self.n + col]
    }

    pub fn row(&self, row: usize) -> &[T] {
        &self.data[row * self.n..(row + 1) * self.n]
    }

    /// `(u1, u2)` of the pixel center at `(row, col)`.
    pub fn pixel_center(&self, row: usize, col: usize) -> Result<(T, T)> {
        pixel_center(self.n, row, col)
    }

    /// Pixel area `(2/n)^2`.
    pub fn cell_area(&self) -> T {
        let h = T::lit(2.0) / T::from_index(self.n);
        h * h
    }

    pub fn cast<U: Real>(&self) -> ImageGrid<U> {
        ImageGrid {
            n: self.n,
            data: self.data.iter().map(|&v| U::lit(v.to_f64_lossy())).collect(),
        }
    }
}

/// `(u1, u2)` of pixel `(row, col)` on an `n x n` grid.
pub fn pixel_center<T: Real>(n: usize, row: usize, col: usize) -> Result<(T, T)> {
    for index in [row, col] {
        if index >= n {
            return Err(Error::IndexOutOfRange { index, len: n });
        }
    }
    Ok((pixel_coordinate(n, col), pixel_coordinate(n, row)))
}

/// Interpolation used when sampling between grid nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Interpolation {
    #[default]
    Bilinear,
    Nearest,
}

/// Which pipeline stage last produced a [`VolumeBlock`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StageTag {
    Read,
    Normalize,
    Center,
    Rings,
    Filter,
    Backproject,
    Write,
}

/// A run of contiguous slices moving through the pipeline as one job.
#[derive(Debug, Clone, PartialEq)]
pub struct VolumeBlock<P> {
    pub first_slice: usize,
    pub slices: Vec<P>,
    pub stage: StageTag,
}

impl<P> VolumeBlock<P> {
    pub fn len(&self) -> usize {
        self.slices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slices.is_empty()
    }

    /// Global slice indices covered by this block.
    pub fn slice_range(&self) -> std::ops::Range<usize> {
        self.first_slice..self.first_slice + self.slices.len()
    }

    /// Applies `f` to every slice, tagging the result with `stage`.
    pub fn try_map<Q, E>(
        self,
        stage: StageTag,
        f: impl FnMut(P) -> std::result::Result<Q, E>,
    ) -> std::result::Result<VolumeBlock<Q>, E> {
        Ok(VolumeBlock {
            first_slice: self.first_slice,
            slices: self.slices.into_iter().map(f).collect::<std::result::Result<_, _>>()?,
            stage,
        })
    }
}
