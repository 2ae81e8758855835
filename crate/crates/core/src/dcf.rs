//! Single-channel discriminative correlation filter.
//!
//! Training solves ridge regression over all circular shifts of a patch
//! in closed form, elementwise in the Fourier domain:
//!
//! ```text
//! C = (Y . conj(X)) / (|X|^2 + lambda)
//! ```
//!
//! and localization evaluates `r = IDFT(C . Z)` on a new patch. The peak of
//! `r` relative to the label peak is the target displacement.

use std::cell::RefCell;
use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use thiserror::Error;

/// Half-width of the square excluded around the peak when measuring the
/// sidelobe (an 11 x 11 window).
pub const PSR_EXCLUSION_RADIUS: usize = 5;

/// Lambda substituted for a zero regularizer.
pub const MIN_LAMBDA: f64 = 1e-12;

/// Largest tolerated `max|imag| / max|real|` after the inverse transform.
pub const MAX_IMAGINARY_RESIDUE: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DcfError {
    #[error("dimension mismatch: {left:?} vs {right:?}")]
    Dimension {
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("regularizer must be >= 0, got {0}")]
    Lambda(f64),
    #[error("learning rate must lie in (0, 1], got {0}")]
    LearningRate(f64),
    #[error("gaussian sigma must be > 0, got {0}")]
    Sigma(f64),
    #[error("patch has {got} pixels, expected {expected}")]
    PixelCount { got: usize, expected: usize },
    #[error("patch contains a non-finite pixel")]
    NonFinite,
    #[error("inverse transform left an imaginary residue of {0:e} (relative)")]
    ImaginaryResidue(f64),
}

/// Grayscale target region, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
    preprocessed: bool,
}

impl Patch {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self, DcfError> {
        if pixels.len() != width * height {
            return Err(DcfError::PixelCount {
                got: pixels.len(),
                expected: width * height,
            });
        }
        if pixels.iter().any(|p| !p.is_finite()) {
            return Err(DcfError::NonFinite);
        }
        Ok(Self {
            width,
            height,
            pixels,
            preprocessed: false,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn is_preprocessed(&self) -> bool {
        self.preprocessed
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }

    /// Circular shift: output(r, c) = input(r - dr, c - dc).
    pub fn shifted(&self, dr: isize, dc: isize) -> Self {
        let (w, h) = (self.width as isize, self.height as isize);
        let mut out = vec![0.0; self.pixels.len()];
        for r in 0..h {
            for c in 0..w {
                let sr = (r - dr).rem_euclid(h) as usize;
                let sc = (c - dc).rem_euclid(w) as usize;
                out[(r * w + c) as usize] = self.pixels[sr * self.width + sc];
            }
        }
        Self {
            pixels: out,
            ..self.clone()
        }
    }
}

/// Periodic Hann window value at index `i` of `n`; 0 at both ends.
pub fn hann(i: usize, n: usize) -> f64 {
    if n < 2 {
        return 1.0;
    }
    0.5 * (1.0 - (2.0 * PI * i as f64 / (n - 1) as f64).cos())
}

/// Mean subtraction followed by a 2-D Hann window.
pub fn preprocess(raw: &Patch) -> Patch {
    let mean = raw.pixels.iter().sum::<f64>() / raw.pixels.len().max(1) as f64;
    let (w, h) = raw.dims();
    let wx: Vec<f64> = (0..w).map(|i| hann(i, w)).collect();
    let wy: Vec<f64> = (0..h).map(|i| hann(i, h)).collect();
    let pixels = raw
        .pixels
        .iter()
        .enumerate()
        .map(|(k, p)| (p - mean) * wy[k / w] * wx[k % w])
        .collect();
    Patch {
        width: w,
        height: h,
        pixels,
        preprocessed: true,
    }
}

/// Desired response: a Gaussian bump of height 1 at `peak`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianLabel {
    pub width: usize,
    pub height: usize,
    pub sigma: f64,
    /// `(row, col)`
    pub peak: (usize, usize),
}

impl GaussianLabel {
    /// Label peaked at `(height / 2, width / 2)`.
    pub fn centered(width: usize, height: usize, sigma: f64) -> Result<Self, DcfError> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(DcfError::Sigma(sigma));
        }
        Ok(Self {
            width,
            height,
            sigma,
            peak: (height / 2, width / 2),
        })
    }

    pub fn values(&self) -> Vec<f64> {
        let denom = 2.0 * self.sigma * self.sigma;
        let (pr, pc) = (self.peak.0 as f64, self.peak.1 as f64);
        (0..self.height)
            .flat_map(|r| {
                (0..self.width).map(move |c| {
                    let d2 = (r as f64 - pr).powi(2) + (c as f64 - pc).powi(2);
                    (-d2 / denom).exp()
                })
            })
            .collect()
    }
}

/// Filter coefficients in the frequency domain.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationFilter {
    width: usize,
    height: usize,
    coefficients: Vec<Complex64>,
    lambda: f64,
}

impl CorrelationFilter {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn coefficients(&self) -> &[Complex64] {
        &self.coefficients
    }

    /// The filter as a real spatial kernel (inverse transform of the
    /// coefficients).
    pub fn spatial(&self) -> Vec<f64> {
        let mut buf = self.coefficients.clone();
        fft2(&mut buf, self.width, self.height, true);
        buf.iter().map(|c| c.re).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResponseMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
    /// `(row, col)` of the maximum; the first one in row-major order on ties.
    pub peak: (usize, usize),
    pub psr: f64,
}

impl ResponseMap {
    pub fn from_values(width: usize, height: usize, values: Vec<f64>) -> Self {
        let mut best = 0;
        for (i, v) in values.iter().enumerate() {
            if *v > values[best] {
                best = i;
            }
        }
        let peak = (best / width, best % width);
        let psr = psr_of(&values, width, height, peak);
        Self {
            width,
            height,
            values,
            peak,
            psr,
        }
    }

    pub fn peak_value(&self) -> f64 {
        self.values[self.peak.0 * self.width + self.peak.1]
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    /// Peak position refined by a three-point parabola along each axis
    /// (neighbors taken circularly), as `(row, col)`.
    pub fn subpixel_peak(&self) -> (f64, f64) {
        let (pr, pc) = self.peak;
        let at = |r: isize, c: isize| {
            let r = r.rem_euclid(self.height as isize) as usize;
            let c = c.rem_euclid(self.width as isize) as usize;
            self.get(r, c)
        };
        let refine = |l: f64, m: f64, r: f64| {
            let denom = l - 2.0 * m + r;
            if denom.abs() < 1e-15 {
                0.0
            } else {
                (0.5 * (l - r) / denom).clamp(-0.5, 0.5)
            }
        };
        let (ir, ic) = (pr as isize, pc as isize);
        let m = at(ir, ic);
        let dr = refine(at(ir - 1, ic), m, at(ir + 1, ic));
        let dc = refine(at(ir, ic - 1), m, at(ir, ic + 1));
        (pr as f64 + dr, pc as f64 + dc)
    }
}

/// Peak-to-sidelobe ratio of a response map.
pub fn psr(r: &ResponseMap) -> f64 {
    psr_of(&r.values, r.width, r.height, r.peak)
}

/// `(peak - mean(sidelobe)) / std(sidelobe)`, where the sidelobe is every
/// value outside the 11 x 11 square around the peak. Returns `+inf` when the
/// sidelobe has no spread (or is empty).
fn psr_of(values: &[f64], width: usize, height: usize, peak: (usize, usize)) -> f64 {
    let (pr, pc) = peak;
    let in_window = |r: usize, c: usize| {
        r.abs_diff(pr) <= PSR_EXCLUSION_RADIUS && c.abs_diff(pc) <= PSR_EXCLUSION_RADIUS
    };
    let mut n = 0usize;
    let mut sum = 0.0;
    for r in 0..height {
        for c in 0..width {
            if !in_window(r, c) {
                n += 1;
                sum += values[r * width + c];
            }
        }
    }
    if n == 0 {
        return f64::INFINITY;
    }
    let mean = sum / n as f64;
    let mut var = 0.0;
    for r in 0..height {
        for c in 0..width {
            if !in_window(r, c) {
                var += (values[r * width + c] - mean).powi(2);
            }
        }
    }
    let sd = (var / n as f64).sqrt();
    // Rounding in the mean leaves a tiny spread on a constant sidelobe.
    let scale = values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if sd <= 64.0 * f64::EPSILON * scale {
        return f64::INFINITY;
    }
    (values[pr * width + pc] - mean) / sd
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// In-place 2-D DFT of a row-major buffer. The inverse is scaled by
/// `1 / (width * height)`.
pub fn fft2(buf: &mut [Complex64], width: usize, height: usize, inverse: bool) {
    debug_assert_eq!(buf.len(), width * height);
    PLANNER.with(|p| {
        let mut planner = p.borrow_mut();
        let (row_fft, col_fft) = if inverse {
            (planner.plan_fft_inverse(width), planner.plan_fft_inverse(height))
        } else {
            (planner.plan_fft_forward(width), planner.plan_fft_forward(height))
        };
        for row in buf.chunks_exact_mut(width) {
            row_fft.process(row);
        }
        let mut column = vec![Complex64::new(0.0, 0.0); height];
        for c in 0..width {
            for r in 0..height {
                column[r] = buf[r * width + c];
            }
            col_fft.process(&mut column);
            for r in 0..height {
                buf[r * width + c] = column[r];
            }
        }
    });
    if inverse {
        let scale = 1.0 / (width * height) as f64;
        buf.iter_mut().for_each(|v| *v *= scale);
    }
}

fn spectrum(values: &[f64], width: usize, height: usize) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft2(&mut buf, width, height, false);
    buf
}

/// Closed-form filter for one training patch. A zero `lambda` is replaced
/// by [`MIN_LAMBDA`].
pub fn train_filter(x: &Patch, y: &GaussianLabel, lambda: f64) -> Result<CorrelationFilter, DcfError> {
    if x.dims() != (y.width, y.height) {
        return Err(DcfError::Dimension {
            left: x.dims(),
            right: (y.width, y.height),
        });
    }
    if lambda.is_nan() || lambda < 0.0 || !lambda.is_finite() {
        return Err(DcfError::Lambda(lambda));
    }
    let lambda = if lambda == 0.0 {
        log::warn!("regularizer 0 clamped to {MIN_LAMBDA:e}");
        MIN_LAMBDA
    } else {
        lambda
    };
    let (w, h) = x.dims();
    let xf = spectrum(&x.pixels, w, h);
    let yf = spectrum(&y.values(), w, h);
    let coefficients = xf
        .iter()
        .zip(&yf)
        .map(|(xk, yk)| yk * xk.conj() / (xk.norm_sqr() + lambda))
        .collect();
    Ok(CorrelationFilter {
        width: w,
        height: h,
        coefficients,
        lambda,
    })
}

/// Response of the filter on a new patch.
pub fn respond(f: &CorrelationFilter, z: &Patch) -> Result<ResponseMap, DcfError> {
    if f.dims() != z.dims() {
        return Err(DcfError::Dimension {
            left: f.dims(),
            right: z.dims(),
        });
    }
    let (w, h) = f.dims();
    let mut buf = spectrum(&z.pixels, w, h);
    for (b, c) in buf.iter_mut().zip(&f.coefficients) {
        *b *= c;
    }
    fft2(&mut buf, w, h, true);
    let max_re = buf.iter().fold(0.0_f64, |m, v| m.max(v.re.abs()));
    let max_im = buf.iter().fold(0.0_f64, |m, v| m.max(v.im.abs()));
    if max_im > MAX_IMAGINARY_RESIDUE * max_re.max(f64::MIN_POSITIVE) && max_im > 1e-300 {
        return Err(DcfError::ImaginaryResidue(max_im / max_re.max(f64::MIN_POSITIVE)));
    }
    Ok(ResponseMap::from_values(
        w,
        h,
        buf.into_iter().map(|v| v.re).collect(),
    ))
}

/// Linear interpolation between filters: `(1 - eta) old + eta fresh`.
pub fn update_filter(
    old: &CorrelationFilter,
    fresh: &CorrelationFilter,
    eta: f64,
) -> Result<CorrelationFilter, DcfError> {
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(DcfError::LearningRate(eta));
    }
    if old.dims() != fresh.dims() {
        return Err(DcfError::Dimension {
            left: old.dims(),
            right: fresh.dims(),
        });
    }
    if eta == 1.0 {
        return Ok(fresh.clone());
    }
    let coefficients = old
        .coefficients
        .iter()
        .zip(&fresh.coefficients)
        .map(|(o, n)| o * (1.0 - eta) + n * eta)
        .collect();
    Ok(CorrelationFilter {
        width: old.width,
        height: old.height,
        coefficients,
        lambda: fresh.lambda,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noise_patch(w: usize, h: usize, seed: u64) -> Patch {
        // Small LCG; these tests only need arbitrary non-degenerate input.
        let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let pixels = (0..w * h)
            .map(|_| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (state >> 11) as f64 / (1u64 << 53) as f64
            })
            .collect();
        Patch::new(w, h, pixels).unwrap()
    }

    #[test]
    fn constant_patch_becomes_zero() {
        let p = preprocess(&Patch::new(8, 8, vec![0.7; 64]).unwrap());
        assert!(p.pixels().iter().all(|v| v.abs() < 1e-15));
        assert!(p.is_preprocessed());
    }

    #[test]
    fn window_zeroes_corners() {
        let p = preprocess(&noise_patch(16, 8, 3));
        for (r, c) in [(0, 0), (0, 15), (7, 0), (7, 15)] {
            assert_eq!(p.get(r, c), 0.0);
        }
    }

    #[test]
    fn mean_removed_before_window() {
        let raw = noise_patch(16, 16, 9);
        let mean = raw.pixels().iter().sum::<f64>() / 256.0;
        let centered: f64 = raw.pixels().iter().map(|v| v - mean).sum::<f64>() / 256.0;
        assert!(centered.abs() < 1e-9);
    }

    #[test]
    fn impulse_patch_reproduces_label() {
        let mut px = vec![0.0; 64];
        px[0] = 1.0;
        let x = Patch::new(8, 8, px).unwrap();
        let y = GaussianLabel::centered(8, 8, 1.5).unwrap();
        let f = train_filter(&x, &y, 1e-12).unwrap();
        let r = respond(&f, &x).unwrap();
        for (a, b) in r.values.iter().zip(y.values()) {
            assert!((a - b).abs() < 1e-6);
        }
        // Zero lambda takes the same path.
        let f0 = train_filter(&x, &y, 0.0).unwrap();
        assert_eq!(f0.lambda(), MIN_LAMBDA);
    }

    #[test]
    fn huge_lambda_shrinks_filter() {
        let x = preprocess(&noise_patch(8, 8, 1));
        let norm = x.pixels().iter().map(|v| v * v).sum::<f64>().sqrt();
        let x = Patch::new(8, 8, x.pixels().iter().map(|v| v / norm).collect()).unwrap();
        let y = GaussianLabel::centered(8, 8, 1.0).unwrap();
        let f = train_filter(&x, &y, 1e12).unwrap();
        assert!(f.coefficients().iter().all(|c| c.norm() < 1e-6));
    }

    #[test]
    fn negative_lambda_rejected() {
        let x = noise_patch(4, 4, 1);
        let y = GaussianLabel::centered(4, 4, 1.0).unwrap();
        assert_eq!(train_filter(&x, &y, -1.0), Err(DcfError::Lambda(-1.0)));
    }

    #[test]
    fn zero_patch_zero_response() {
        let x = preprocess(&noise_patch(16, 16, 5));
        let f = train_filter(&x, &GaussianLabel::centered(16, 16, 2.0).unwrap(), 1e-2).unwrap();
        let r = respond(&f, &Patch::new(16, 16, vec![0.0; 256]).unwrap()).unwrap();
        assert!(r.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn response_peaks_at_label_peak() {
        let x = preprocess(&noise_patch(32, 32, 11));
        let y = GaussianLabel::centered(32, 32, 2.0).unwrap();
        let f = train_filter(&x, &y, 1e-2).unwrap();
        let r = respond(&f, &x).unwrap();
        assert!(r.peak.0.abs_diff(16) <= 1 && r.peak.1.abs_diff(16) <= 1);
    }

    #[test]
    fn dimension_mismatch() {
        let x = noise_patch(8, 8, 1);
        let f = train_filter(&x, &GaussianLabel::centered(8, 8, 1.0).unwrap(), 1e-2).unwrap();
        assert!(matches!(
            respond(&f, &noise_patch(16, 8, 2)),
            Err(DcfError::Dimension { .. })
        ));
        assert!(train_filter(&x, &GaussianLabel::centered(4, 4, 1.0).unwrap(), 1e-2).is_err());
    }

    #[test]
    fn psr_sentinels() {
        let flat = ResponseMap::from_values(16, 16, vec![0.3; 256]);
        assert_eq!(flat.psr, f64::INFINITY);
        let mut v = vec![0.0; 256];
        v[5 * 16 + 7] = 1.0;
        assert!(ResponseMap::from_values(16, 16, v).psr > 50.0);
        let mut v: Vec<f64> = (0..256).map(|i| ((i * 7919) % 13) as f64 * 0.01).collect();
        v[8 * 16 + 8] = 5.0;
        let r = ResponseMap::from_values(16, 16, v);
        assert!(r.psr.is_finite() && r.psr > 10.0);
    }

    #[test]
    fn update_filter_blends() {
        let y = GaussianLabel::centered(8, 8, 1.0).unwrap();
        let a = train_filter(&noise_patch(8, 8, 1), &y, 1e-2).unwrap();
        let b = train_filter(&noise_patch(8, 8, 2), &y, 1e-2).unwrap();
        assert_eq!(update_filter(&a, &b, 1.0).unwrap(), b);
        let tiny = update_filter(&a, &b, 1e-9).unwrap();
        for (t, o) in tiny.coefficients().iter().zip(a.coefficients()) {
            assert!((t - o).norm() < 1e-6);
        }
        let mid = update_filter(&a, &b, 0.5).unwrap();
        for ((m, o), n) in mid.coefficients().iter().zip(a.coefficients()).zip(b.coefficients()) {
            assert!((m - (o + n) * 0.5).norm() < 1e-12);
        }
        assert!(update_filter(&a, &b, 0.0).is_err());
        assert!(update_filter(&a, &b, 1.5).is_err());
    }

    #[test]
    fn subpixel_peak_on_symmetric_bump() {
        let mut v = vec![0.0; 64];
        v[3 * 8 + 4] = 1.0;
        v[3 * 8 + 5] = 1.0;
        let r = ResponseMap::from_values(8, 8, v);
        let (row, col) = r.subpixel_peak();
        assert_eq!(row, 3.0);
        assert!((col - 4.5).abs() < 1e-12);
    }
}
