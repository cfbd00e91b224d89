//! Backprojection through the Backprojection-Slice Theorem.
//!
//! For a sinogram on the full circle, the 2D Fourier transform of the
//! backprojection satisfies `b̂(σ cos θ, σ sin θ) = ŷ(σ, θ)/σ`. The stage
//! chain below evaluates this with FFTs:
//!
//! * P0: extend to `[0, 2π)` and treat each row as a radial line through the origin,
//! * P1: remove the low-order origin moments with a Kaiser-Bessel windowed basis,
//! * P2: zero-pad each radial line,
//! * P3: per-angle radial DFT,
//! * P4: divide by `max(|σ|, σ_min)`,
//! * P5: interpolate from the polar to the Cartesian frequency grid,
//! * P6–P7: 2D inverse DFT and quadrant shift,
//! * P8: resample to the output pixel centers.
//!
//! The component removed in P1 is backprojected exactly and added back.

mod filter;
mod origin;
mod stages;
pub mod window;

use std::str::FromStr;
use std::sync::Arc;

use rustfft::{Fft, FftPlanner};

pub use filter::{ramp_filter, ramp_filter_periodic, FilterKind, FilterPlan, RampFilter};
pub use origin::OriginMoments;
pub use stages::{
    apply_bst_kernel, extend_to_full_circle, grid_to_cartesian, inverse_dft2_and_shift,
    origin_backprojection, radial_dft, resample_polar, split_origin, zero_pad, CartesianSpectrum,
    PaddedPolar, PolarSpectrum,
};

use crate::error::{Error, Result};
use crate::grid::{AngleAxis, AngleSpan, DetectorAxis, ImageGrid, Interpolation, Sinogram};
use crate::radon::backproject_ss;
use crate::scalar::Real;
use origin::{OriginModel, SharedOrigin};

/// Tunable parameters of the BST kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BstConfig {
    /// Cartesian grid side as a multiple of the detector length, rounded up to a power of two.
    pub pad_factor: usize,
    /// Radial samples per Cartesian frequency step on the polar grid.
    pub radial_oversampling: usize,
    pub kb_beta: f64,
    /// Half-width of the origin window in detector units.
    pub kb_support: f64,
    /// Number of origin moments removed in P1; `0` disables the split.
    pub origin_moments: usize,
    pub sigma_min_bins: usize,
    pub interp: Interpolation,
}

impl Default for BstConfig {
    fn default() -> Self {
        Self {
            pad_factor: 2,
            radial_oversampling: 2,
            kb_beta: 10.0,
            kb_support: 1.0,
            origin_moments: 3,
            sigma_min_bins: 1,
            interp: Interpolation::Bilinear,
        }
    }
}

impl BstConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidParameter(msg));
        if self.pad_factor < 2 {
            return fail(format!("pad_factor must be at least 2, got {}", self.pad_factor));
        }
        if self.radial_oversampling < 1 {
            return fail("radial_oversampling must be at least 1".into());
        }
        if self.sigma_min_bins < 1 {
            return fail("sigma_min_bins must be at least 1".into());
        }
        if !(self.kb_beta >= 0.0 && self.kb_beta.is_finite()) {
            return fail(format!("kb_beta must be finite and non-negative, got {}", self.kb_beta));
        }
        if !(self.kb_support > 0.0 && self.kb_support.is_finite()) {
            return fail(format!("kb_support must be positive, got {}", self.kb_support));
        }
        Ok(())
    }
}

/// Immutable tables and FFT plans for one sinogram geometry.
///
/// Cheap to clone and safe to share between workers.
#[derive(Clone)]
pub struct BstPlan<T: Real> {
    detector: DetectorAxis,
    angles: AngleAxis,
    output_n: usize,
    config: BstConfig,
    radial_samples: usize,
    polar_len: usize,
    /// `1/max(|σ_k|, σ_min)` per polar bin.
    inv_sigma: Arc<Vec<T>>,
    /// `e^{-2πiσ_k t_0}` per polar bin.
    phase: Arc<Vec<rustfft::num_complex::Complex<T>>>,
    origin: SharedOrigin<T>,
    radial_fft: Arc<dyn Fft<T>>,
    cartesian_ifft: Arc<dyn Fft<T>>,
}

impl<T: Real> std::fmt::Debug for BstPlan<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BstPlan")
            .field("n_t", &self.detector.len())
            .field("n_theta", &self.angles.len())
            .field("output_n", &self.output_n)
            .field("radial_samples", &self.radial_samples)
            .field("polar_len", &self.polar_len)
            .field("config", &self.config)
            .finish_non_exhaustive()
    }
}

impl<T: Real> BstPlan<T> {
    pub fn new(
        detector: DetectorAxis,
        angles: AngleAxis,
        output_n: usize,
        config: BstConfig,
    ) -> Result<Self> {
        config.validate()?;
        if output_n == 0 {
            return Err(Error::InvalidParameter("output size must be positive".into()));
        }
        let n_t = detector.len();
        let radial_samples = (config.pad_factor * n_t).next_power_of_two();
        let polar_len = radial_samples * config.radial_oversampling;
        if config.sigma_min_bins >= polar_len / 2 {
            return Err(Error::InvalidParameter(format!(
                "sigma_min_bins {} must stay below the Nyquist bin {}",
                config.sigma_min_bins,
                polar_len / 2
            )));
        }
        let dt: f64 = detector.spacing();
        let df = 1.0 / (polar_len as f64 * dt);
        let sigma_min = config.sigma_min_bins as f64 * df;
        let signed_bin = |k: usize| -> f64 {
            if k < polar_len.div_ceil(2) {
                k as f64
            } else {
                k as f64 - polar_len as f64
            }
        };
        let inv_sigma: Vec<T> = (0..polar_len)
            .map(|k| T::lit(1.0 / (signed_bin(k).abs() * df).max(sigma_min)))
            .collect();
        let t0: f64 = detector.coordinate_unchecked(0);
        let phase = (0..polar_len)
            .map(|k| {
                let arg = -std::f64::consts::TAU * signed_bin(k) * df * t0;
                rustfft::num_complex::Complex::new(T::lit(arg.cos()), T::lit(arg.sin()))
            })
            .collect();
        let full_angles = match angles.span() {
            AngleSpan::Half => 2 * angles.len(),
            AngleSpan::Full => angles.len(),
        };
        let origin = OriginModel::new(
            detector,
            full_angles,
            output_n,
            config.kb_beta,
            config.kb_support,
            config.origin_moments,
        )?;
        let mut planner = FftPlanner::new();
        Ok(Self {
            detector,
            angles,
            output_n,
            config,
            radial_samples,
            polar_len,
            inv_sigma: Arc::new(inv_sigma),
            phase: Arc::new(phase),
            origin: Arc::new(origin),
            radial_fft: planner.plan_fft_forward(polar_len),
            cartesian_ifft: planner.plan_fft_inverse(radial_samples),
        })
    }

    /// Plan for the geometry of `y` with default parameters and an `n_t`-sized output.
    pub fn for_sinogram(y: &Sinogram<T>) -> Result<Self> {
        Self::new(y.detector(), y.angles(), y.n_t(), BstConfig::default())
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

    pub fn output_n(&self) -> usize {
        self.output_n
    }

    pub fn config(&self) -> &BstConfig {
        &self.config
    }

    /// Side of the Cartesian frequency grid (a power of two).
    pub fn radial_samples(&self) -> usize {
        self.radial_samples
    }

    /// Length of each zero-padded radial line.
    pub fn polar_len(&self) -> usize {
        self.polar_len
    }

    /// Number of angles on the full circle.
    pub fn full_angles(&self) -> usize {
        match self.angles.span() {
            AngleSpan::Half => 2 * self.angles.len(),
            AngleSpan::Full => self.angles.len(),
        }
    }

    /// Radial frequency step of the polar grid, in cycles per unit length.
    pub fn frequency_step(&self) -> T {
        T::one() / (T::from_index(self.polar_len) * self.detector.spacing::<T>())
    }

    /// `σ_min`, the magnitude substituted for smaller frequencies in P4.
    pub fn sigma_min(&self) -> T {
        T::from_index(self.config.sigma_min_bins) * self.frequency_step()
    }

    /// Angular harmonics kept per origin moment in the add-back.
    pub fn origin_harmonics(&self) -> &[usize] {
        self.origin.harmonics()
    }

    /// Overall constant of P7, `Δt / P^2` with `P` the Cartesian period.
    ///
    /// It carries the radial DFT's `Δt` quadrature weight and the inverse 2D
    /// DFT's frequency cell `1/P^2`; the constant-sinogram identity `b = πc`
    /// confirms no further calibration factor is needed.
    pub fn amplitude(&self) -> T {
        let dt = self.detector.spacing::<T>();
        let period = T::from_index(self.radial_samples) * dt;
        dt / (period * period)
    }

    /// Approximate bytes of scratch memory one backprojection uses.
    pub fn working_bytes(&self) -> u64 {
        let real = std::mem::size_of::<T>() as u64;
        let complex = 2 * real;
        let a = self.full_angles() as u64;
        let polar = a * self.polar_len as u64 * (real + complex);
        let cart = (self.radial_samples as u64).pow(2) * complex;
        let ext = a * self.n_t() as u64 * real;
        let image = 2 * (self.output_n as u64).pow(2) * real;
        polar + cart + ext + image
    }

    fn check_input(&self, y: &Sinogram<T>) -> Result<()> {
        if y.detector() != self.detector || y.angles() != self.angles {
            return Err(Error::shape(
                format!("{} x {} sinogram", self.angles.len(), self.detector.len()),
                format!("{} x {}", y.n_theta(), y.n_t()),
            ));
        }
        Ok(())
    }
}

/// Full BST chain: `b = P8 P7 P6 P5 P4 P3 P2 P1 P0 y` plus the origin add-back.
pub fn bst_backproject<T: Real>(
    y: &Sinogram<T>,
    plan: &BstPlan<T>,
    workers: usize,
) -> Result<ImageGrid<T>> {
    plan.check_input(y)?;
    let extended = extend_to_full_circle(y);
    let padded = resample_polar(&extended, plan)?;
    let spectrum = apply_bst_kernel(radial_dft(&padded, plan, workers)?, plan)?;
    let cartesian = grid_to_cartesian(&spectrum, plan, workers)?;
    let main = inverse_dft2_and_shift(cartesian, plan, workers)?;
    let origin = origin_backprojection(&padded.moments, plan, workers);
    let data: Vec<T> = main
        .data()
        .iter()
        .zip(origin.data())
        .map(|(&m, &o)| m + o)
        .collect();
    let out = ImageGrid::from_parts(plan.output_n, data);
    if out.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("BST backprojection"));
    }
    Ok(out)
}

/// Backprojection kernel selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Kernel {
    Ss,
    #[default]
    Bst,
}

impl Kernel {
    pub fn name(self) -> &'static str {
        match self {
            Kernel::Ss => "ss",
            Kernel::Bst => "bst",
        }
    }
}

impl std::fmt::Display for Kernel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Kernel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ss" => Ok(Kernel::Ss),
            "bst" => Ok(Kernel::Bst),
            other => Err(Error::UnknownKernel(other.to_string())),
        }
    }
}

/// Runs the selected backprojection kernel.
pub fn backproject<T: Real>(
    y: &Sinogram<T>,
    plan: &BstPlan<T>,
    kernel: Kernel,
    workers: usize,
) -> Result<ImageGrid<T>> {
    match kernel {
        Kernel::Ss => {
            plan.check_input(y)?;
            backproject_ss(y, plan.output_n, workers)
        }
        Kernel::Bst => bst_backproject(y, plan, workers),
    }
}

/// `1/(2πΔt)`: turns the per-sample ramp and the backprojection into density units.
pub fn fbp_scale<T: Real>(detector: DetectorAxis) -> T {
    T::one() / (T::TAU() * detector.spacing::<T>())
}

/// Filtered backprojection `x = B[F y]` with either kernel.
pub fn fbp<T: Real>(
    y: &Sinogram<T>,
    plan: &BstPlan<T>,
    fplan: &FilterPlan,
    kernel: Kernel,
    workers: usize,
) -> Result<ImageGrid<T>> {
    let filtered = ramp_filter(y, fplan, workers)?;
    let b = backproject(&filtered, plan, kernel, workers)?;
    let scale = fbp_scale::<T>(y.detector());
    Ok(ImageGrid::from_parts(
        b.n(),
        b.into_data().into_iter().map(|v| v * scale).collect(),
    ))
}
