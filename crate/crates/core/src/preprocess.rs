//! Sinogram corrections applied before filtering: dark/flat normalization,
//! rotation-center alignment and stripe (ring) suppression.

use crate::error::{Error, Result};
use crate::grid::Sinogram;
use crate::scalar::Real;

/// Clamp used by [`normalize`] when none is given.
pub const DEFAULT_EPS: f64 = 1e-6;
/// Default smoothing width for [`suppress_rings`].
pub const DEFAULT_RING_WINDOW: usize = 9;

/// Flat (`I0`) and dark (`D`) detector counts.
///
/// Each is either one detector line, applied to every angle, or a full
/// `[angle][detector]` frame matching the counts.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatDarkFrames<T> {
    pub flat: Vec<T>,
    pub dark: Vec<T>,
}

impl<T: Real> FlatDarkFrames<T> {
    pub fn new(flat: Vec<T>, dark: Vec<T>) -> Result<Self> {
        if flat.len() != dark.len() {
            return Err(Error::shape(
                format!("{} dark values", flat.len()),
                format!("{}", dark.len()),
            ));
        }
        Ok(Self { flat, dark })
    }

    /// Uniform flat level with zero dark current over `n_det` pixels.
    pub fn uniform(n_det: usize, flat: T, dark: T) -> Self {
        Self {
            flat: vec![flat; n_det],
            dark: vec![dark; n_det],
        }
    }
}

/// `y = -log(max(I - D, eps) / max(I0 - D, eps))` elementwise.
pub fn normalize<T: Real>(
    counts: &Sinogram<T>,
    frames: &FlatDarkFrames<T>,
    eps: T,
) -> Result<Sinogram<T>> {
    if !(eps > T::zero()) {
        return Err(Error::InvalidParameter("eps must be positive".into()));
    }
    let n_t = counts.n_t();
    let len = frames.flat.len();
    if len != n_t && len != counts.data().len() {
        return Err(Error::shape(
            format!("{n_t} or {} flat/dark values", counts.data().len()),
            format!("{len}"),
        ));
    }
    let data = counts
        .data()
        .iter()
        .enumerate()
        .map(|(idx, &i)| {
            let k = if len == n_t { idx % n_t } else { idx };
            let d = frames.dark[k];
            let num = (i - d).max(eps);
            let den = (frames.flat[k] - d).max(eps);
            -(num / den).ln()
        })
        .collect();
    Sinogram::new(counts.detector(), counts.angles(), data)
}

/// Estimated rotation-center offset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CenteringResult<T> {
    /// Shift `β` in detector bins; the data look like `y(t - β)`.
    pub beta_bins: T,
    /// Normalized correlation at the peak, in `[0, 1]`.
    pub confidence: T,
}

impl<T: Real> CenteringResult<T> {
    /// `β` in detector coordinates.
    pub fn beta(&self, y: &Sinogram<T>) -> T {
        self.beta_bins * y.detector().spacing::<T>()
    }
}

/// Estimates the center shift from the first projection and the mirrored
/// last one, which for a centered rotation axis nearly coincide
/// (`y(t, θ + π) = y(-t, θ)`). The mirrored copy sits `2β` bins away; the
/// correlation peak is refined to sub-bin precision with a parabola.
pub fn estimate_center<T: Real>(y: &Sinogram<T>) -> Result<CenteringResult<T>> {
    if y.n_theta() < 2 {
        return Err(Error::InvalidParameter(
            "centering needs at least two angles".into(),
        ));
    }
    let n = y.n_t();
    // Projections of a compact object vanish at both detector ends; the
    // mean of the two end samples is taken as the baseline. Subtracting the
    // row mean instead would leave negative tails that pull the peak toward
    // zero shift as the overlap shrinks.
    let debase = |row: &mut Vec<f64>| {
        let base = 0.5 * (row[0] + row[row.len() - 1]);
        row.iter_mut().for_each(|v| *v -= base);
    };
    let mut first: Vec<f64> = y.row(0).iter().map(|v| v.to_f64_lossy()).collect();
    let mut mirrored: Vec<f64> = y
        .row(y.n_theta() - 1)
        .iter()
        .rev()
        .map(|v| v.to_f64_lossy())
        .collect();
    debase(&mut first);
    debase(&mut mirrored);
    let energy = |row: &[f64]| row.iter().map(|v| v * v).sum::<f64>();
    let (ea, eb) = (energy(&first), energy(&mirrored));
    let scale = y
        .data()
        .iter()
        .fold(0.0f64, |acc, v| acc.max(v.to_f64_lossy().abs()));
    let tiny = 1e-20 * (scale * scale * n as f64).max(f64::MIN_POSITIVE);
    if ea <= tiny || eb <= tiny {
        return Err(Error::CenteringUndetermined);
    }
    let max_shift = (n / 2) as isize;
    // corr[d] = Σ_i first[i] · mirrored[i - d]
    let corr = |d: isize| -> f64 {
        let lo = d.max(0) as usize;
        let hi = (n as isize + d.min(0)) as usize;
        (lo..hi)
            .map(|i| first[i] * mirrored[(i as isize - d) as usize])
            .sum()
    };
    let values: Vec<f64> = (-max_shift..=max_shift).map(corr).collect();
    let (best, &peak) = values
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty search range");
    let mut offset = best as f64 - max_shift as f64;
    if best > 0 && best + 1 < values.len() {
        let (l, c, r) = (values[best - 1], peak, values[best + 1]);
        let denom = l - 2.0 * c + r;
        if denom < 0.0 {
            offset += (0.5 * (l - r) / denom).clamp(-0.5, 0.5);
        }
    }
    let confidence = (peak / (ea * eb).sqrt()).clamp(0.0, 1.0);
    Ok(CenteringResult {
        beta_bins: T::lit(offset / 2.0),
        confidence: T::lit(confidence),
    })
}

/// Shifts every row by `-beta_bins` with linear interpolation; samples that
/// fall outside the detector become zero.
pub fn apply_center<T: Real>(y: &Sinogram<T>, beta_bins: T) -> Result<Sinogram<T>> {
    if !beta_bins.is_finite() {
        return Err(Error::NonFinite("center shift"));
    }
    let n = y.n_t();
    if beta_bins.abs() > T::from_index(n) {
        return Err(Error::InvalidParameter(format!(
            "center shift {beta_bins} exceeds the detector"
        )));
    }
    if beta_bins == T::zero() {
        return Ok(y.clone());
    }
    let whole = beta_bins.floor();
    let frac = beta_bins - whole;
    let base = whole.to_isize().unwrap_or(0);
    let mut data = Vec::with_capacity(y.data().len());
    for row in y.rows() {
        let at = |k: isize| -> T {
            if k < 0 || k as usize >= n {
                T::zero()
            } else {
                row[k as usize]
            }
        };
        for i in 0..n as isize {
            let k = i + base;
            let v = if frac == T::zero() {
                at(k)
            } else if k < 0 || k + 1 >= n as isize {
                // Keep partially covered edge samples at zero.
                T::zero()
            } else {
                at(k) * (T::one() - frac) + at(k + 1) * frac
            };
            data.push(v);
        }
    }
    Ok(Sinogram::from_parts(y.detector(), y.angles(), data))
}

/// Removes angle-independent stripes: the column mean `m(t)` minus its
/// moving median of width `window` is subtracted from every row.
///
/// The median reproduces monotone stretches of `m` exactly and ignores
/// isolated outlier columns, so smooth projections pass nearly untouched
/// while narrow stripes are removed almost completely. Near the detector
/// ends the window shrinks symmetrically.
pub fn suppress_rings<T: Real>(y: &Sinogram<T>, window: usize) -> Result<Sinogram<T>> {
    if window < 3 || window % 2 == 0 {
        return Err(Error::InvalidParameter(format!(
            "ring window must be odd and at least 3, got {window}"
        )));
    }
    let n = y.n_t();
    let mut mean = vec![T::zero(); n];
    for row in y.rows() {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    let inv_v = T::one() / T::from_index(y.n_theta());
    mean.iter_mut().for_each(|m| *m *= inv_v);
    let half = window / 2;
    let mut scratch = Vec::with_capacity(window);
    let stripe: Vec<T> = (0..n)
        .map(|i| {
            let h = half.min(i).min(n - 1 - i);
            scratch.clear();
            scratch.extend_from_slice(&mean[i - h..=i + h]);
            scratch.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
            mean[i] - scratch[h]
        })
        .collect();
    let data = y
        .rows()
        .flat_map(|row| row.iter().zip(&stripe).map(|(&v, &s)| v - s))
        .collect();
    Ok(Sinogram::from_parts(y.detector(), y.angles(), data))
}
