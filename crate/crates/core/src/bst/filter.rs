//! Ramp filtering along the detector axis.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::grid::Sinogram;
use crate::parallel::for_each_rows;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterKind {
    Ramp,
    RampApodized,
}

/// Ramp filter settings; `rolloff` is the fraction of Nyquist where a
/// raised-cosine taper starts, `1.0` meaning no taper.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterPlan {
    pub kind: FilterKind,
    pub rolloff: f64,
}

impl Default for FilterPlan {
    fn default() -> Self {
        Self::ramp()
    }
}

impl FilterPlan {
    pub fn ramp() -> Self {
        Self {
            kind: FilterKind::Ramp,
            rolloff: 1.0,
        }
    }

    pub fn apodized(rolloff: f64) -> Result<Self> {
        let plan = Self {
            kind: FilterKind::RampApodized,
            rolloff,
        };
        plan.validate()?;
        Ok(plan)
    }

    /// Plain ramp for `rolloff == 1`, apodized otherwise.
    pub fn from_rolloff(rolloff: f64) -> Result<Self> {
        if rolloff == 1.0 {
            Ok(Self::ramp())
        } else {
            Self::apodized(rolloff)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rolloff > 0.0 && self.rolloff <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "apodization rolloff must lie in (0, 1], got {}",
                self.rolloff
            )));
        }
        Ok(())
    }

    /// Taper at `x = |ω|/π`, the fraction of Nyquist.
    pub fn taper(&self, x: f64) -> f64 {
        let f = self.rolloff;
        if self.kind == FilterKind::Ramp || x <= f {
            return 1.0;
        }
        if x >= 1.0 {
            return 0.0;
        }
        0.5 * (1.0 + (std::f64::consts::PI * (x - f) / (1.0 - f)).cos())
    }

    /// `|ω_k| · taper` for a length-`len` DFT, `ω_k` in radians per sample.
    fn multiplier<T: Real>(&self, len: usize) -> Vec<T> {
        (0..len)
            .map(|k| {
                let folded = k.min(len - k) as f64;
                let omega = std::f64::consts::TAU * folded / len as f64;
                T::lit(omega * self.taper(omega / std::f64::consts::PI) / len as f64)
            })
            .collect()
    }
}

/// Prepared ramp filter for sinograms with `n_t` detector samples.
///
/// Each row is zero-padded to twice the next power of two before filtering,
/// so the circular convolution of the DFT does not wrap around.
pub struct RampFilter<T: Real> {
    n_t: usize,
    len: usize,
    forward: Arc<dyn Fft<T>>,
    inverse: Arc<dyn Fft<T>>,
    multiplier: Vec<T>,
}

impl<T: Real> std::fmt::Debug for RampFilter<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RampFilter")
            .field("n_t", &self.n_t)
            .field("len", &self.len)
            .finish_non_exhaustive()
    }
}

impl<T: Real> RampFilter<T> {
    pub fn new(n_t: usize, plan: &FilterPlan) -> Result<Self> {
        plan.validate()?;
        let len = 2 * n_t.next_power_of_two();
        Ok(Self::with_len(n_t, len, plan))
    }

    fn with_len(n_t: usize, len: usize, plan: &FilterPlan) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            n_t,
            len,
            forward: planner.plan_fft_forward(len),
            inverse: planner.plan_fft_inverse(len),
            multiplier: plan.multiplier(len),
        }
    }

    /// Filtered row samples, in per-sample units (divide by `2πΔt` for physical units).
    pub fn apply(&self, y: &Sinogram<T>, workers: usize) -> Result<Sinogram<T>> {
        if y.n_t() != self.n_t {
            return Err(Error::shape(
                format!("{} detector samples", self.n_t),
                format!("{} detector samples", y.n_t()),
            ));
        }
        let n_t = self.n_t;
        let mut out = y.data().to_vec();
        for_each_rows(&mut out, n_t, workers, |_, rows| {
            let mut buf = vec![Complex::new(T::zero(), T::zero()); self.len];
            let mut scratch = vec![
                Complex::new(T::zero(), T::zero());
                self.forward
                    .get_inplace_scratch_len()
                    .max(self.inverse.get_inplace_scratch_len())
            ];
            for row in rows.chunks_exact_mut(n_t) {
                for (slot, &v) in buf.iter_mut().zip(row.iter()) {
                    *slot = Complex::new(v, T::zero());
                }
                for slot in &mut buf[n_t..] {
                    *slot = Complex::new(T::zero(), T::zero());
                }
                self.forward.process_with_scratch(&mut buf, &mut scratch);
                for (slot, &m) in buf.iter_mut().zip(&self.multiplier) {
                    *slot = *slot * m;
                }
                self.inverse.process_with_scratch(&mut buf, &mut scratch);
                for (v, slot) in row.iter_mut().zip(&buf) {
                    *v = slot.re;
                }
            }
        });
        Ok(Sinogram::from_parts(y.detector(), y.angles(), out))
    }
}

/// Ramp-filters every row of `y` (zero-padded, linear convolution).
pub fn ramp_filter<T: Real>(y: &Sinogram<T>, plan: &FilterPlan, workers: usize) -> Result<Sinogram<T>> {
    RampFilter::new(y.n_t(), plan)?.apply(y, workers)
}

/// Ramp-filters every row as one period of a periodic signal (no padding).
///
/// This is the filter's action on a single DFT buffer, where row harmonics
/// are exact eigenfunctions and constants are annihilated.
pub fn ramp_filter_periodic<T: Real>(y: &Sinogram<T>, plan: &FilterPlan) -> Result<Sinogram<T>> {
    plan.validate()?;
    RampFilter::with_len(y.n_t(), y.n_t(), plan).apply(y, 1)
}
