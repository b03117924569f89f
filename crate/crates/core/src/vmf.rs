//! Von Mises-Fisher distributions on the unit sphere in R^p.
//!
//! All Bessel work happens in log or ratio space so that concentrations up
//! to [`KAPPA_MAX`] and dimensions in the hundreds stay finite in f64.

use rand::Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use thiserror::Error;

use crate::embedding::{dot, normalize};

/// Upper clamp for fitted concentrations. Beyond this the density is a
/// numerical point mass and the Newton solve loses meaning.
pub const KAPPA_MAX: f64 = 1e5;

#[derive(Debug, Error)]
pub enum VmfError {
    #[error("no observations provided")]
    NoObservations,
    #[error("dimension must be at least 2, got {0}")]
    DimensionTooSmall(usize),
    #[error("resultant vector has near-zero length; direction is undefined")]
    ZeroResultant,
}

/// Lanczos approximation, g = 7, valid for x > 0.
fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 9] = [
        0.99999999999980993,
        676.5203681218851,
        -1259.1392167224028,
        771.32342877765313,
        -176.61502916214059,
        12.507343278686905,
        -0.13857109526572012,
        9.9843695780195716e-6,
        1.5056327351493116e-7,
    ];
    debug_assert!(x > 0.0);
    if x < 0.5 {
        // Reflection keeps the approximation in its accurate range.
        return std::f64::consts::PI.ln()
            - (std::f64::consts::PI * x).sin().ln()
            - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEF[0];
    for (i, &c) in COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Ratio I_{nu+1}(x) / I_nu(x) by the continued fraction
/// 1 / (2(nu+1)/x + 1 / (2(nu+2)/x + ...)), evaluated with modified Lentz.
fn ratio(nu: f64, x: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    assert!(x > 0.0 && nu >= 0.0);
    const TINY: f64 = 1e-300;
    let mut f = TINY;
    let mut c = f;
    let mut d = 0.0;
    // The fraction's terms b_k = 2(nu+k)/x only start dominating once
    // k exceeds x, so the iteration budget must scale with x.
    let max_iter = 200 + x as usize;
    for k in 1..=max_iter {
        let b = 2.0 * (nu + k as f64) / x;
        d = b + d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + 1.0 / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-15 {
            break;
        }
    }
    f
}

/// ln I_0(x): direct series while e^x is representable, otherwise the
/// large-argument asymptotic expansion.
fn log_bessel_i0(x: f64) -> f64 {
    debug_assert!(x > 0.0);
    if x <= 600.0 {
        let q = x * x / 4.0;
        let mut term = 1.0;
        let mut sum = 1.0;
        for k in 1..2000 {
            term *= q / ((k * k) as f64);
            sum += term;
            if term < sum * 1e-18 {
                break;
            }
        }
        sum.ln()
    } else {
        // I_0(x) ~ e^x / sqrt(2 pi x) * (1 + 1/(8x) + 9/(128 x^2) + ...)
        let mut term = 1.0;
        let mut sum = 1.0;
        for k in 1..=6u32 {
            let odd = (2 * k - 1) as f64;
            term *= odd * odd / (8.0 * k as f64 * x);
            sum += term;
        }
        x - 0.5 * (2.0 * std::f64::consts::PI * x).ln() + sum.ln()
    }
}

/// ln I_{1/2}(x) = ln sqrt(2/(pi x)) + ln sinh(x), in overflow-safe form.
fn log_bessel_i_half(x: f64) -> f64 {
    debug_assert!(x > 0.0);
    0.5 * (2.0 / (std::f64::consts::PI * x)).ln() + x + (-(-2.0 * x).exp()).ln_1p()
        - std::f64::consts::LN_2
}

/// ln I_nu(x) for half-integral nu >= 0, built from the nu = 0 or nu = 1/2
/// base case by chaining log ratios: ln I_{m+1} = ln I_m + ln r_m.
pub fn log_bessel_i(nu: f64, x: f64) -> f64 {
    assert!(x > 0.0 && nu >= 0.0);
    let doubled = 2.0 * nu;
    assert!(
        (doubled - doubled.round()).abs() < 1e-9,
        "nu must be a multiple of 1/2"
    );
    let steps = nu.floor() as usize;
    let base_nu = nu - steps as f64;
    let mut acc = if base_nu == 0.0 {
        log_bessel_i0(x)
    } else {
        log_bessel_i_half(x)
    };
    for m in 0..steps {
        acc += ratio(base_nu + m as f64, x).ln();
    }
    acc
}

/// Mean resultant length A_p(kappa) = I_{p/2}(kappa) / I_{p/2-1}(kappa),
/// strictly increasing in kappa from 0 toward 1.
pub fn bessel_ratio(p: usize, kappa: f64) -> f64 {
    assert!(p >= 2);
    ratio(p as f64 / 2.0 - 1.0, kappa)
}

/// Invert A_p(kappa) = r_bar: Banerjee initialization, then Newton steps on
/// g(kappa) = A_p(kappa) - r_bar until |g| < 1e-10 or 50 iterations.
/// The result is clamped to [0, KAPPA_MAX].
pub fn solve_kappa(p: usize, r_bar: f64) -> f64 {
    assert!(p >= 2 && (0.0..1.0).contains(&r_bar));
    if r_bar == 0.0 {
        return 0.0;
    }
    let pf = p as f64;
    let mut kappa = r_bar * (pf - r_bar * r_bar) / (1.0 - r_bar * r_bar);
    kappa = kappa.clamp(1e-10, KAPPA_MAX);
    for _ in 0..50 {
        let a = bessel_ratio(p, kappa);
        let g = a - r_bar;
        if g.abs() < 1e-10 {
            break;
        }
        let g_prime = 1.0 - a * a - (pf - 1.0) / kappa * a;
        let mut next = kappa - g / g_prime;
        if !next.is_finite() || next <= 0.0 {
            next = kappa / 2.0;
        }
        kappa = next.min(KAPPA_MAX);
        if kappa == KAPPA_MAX {
            break;
        }
    }
    kappa
}

/// A von Mises-Fisher distribution with unit mean direction `mu` and
/// concentration `kappa` on the sphere S^{p-1}.
#[derive(Debug, Clone, PartialEq)]
pub struct VmfDistribution {
    mu: Vec<f64>,
    kappa: f64,
}

impl VmfDistribution {
    /// `mu` is normalized on entry. Panics if the dimension is below 2,
    /// `mu` is a zero vector, or `kappa` is negative or non-finite.
    pub fn new(mut mu: Vec<f64>, kappa: f64) -> Self {
        assert!(mu.len() >= 2, "dimension must be at least 2");
        assert!(kappa.is_finite() && kappa >= 0.0);
        let norm = dot(&mu, &mu).sqrt();
        assert!(norm > 1e-12, "mean direction must be non-zero");
        for x in mu.iter_mut() {
            *x /= norm;
        }
        VmfDistribution { mu, kappa }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    /// Maximum likelihood fit from unit vectors: mu is the normalized
    /// resultant, kappa inverts the mean resultant length (clamped to
    /// [`KAPPA_MAX`], which is also the short-circuit when r_bar reaches 1).
    pub fn estimate<P: AsRef<[f64]>>(points: &[P]) -> Result<Self, VmfError> {
        if points.is_empty() {
            return Err(VmfError::NoObservations);
        }
        let p = points[0].as_ref().len();
        if p < 2 {
            return Err(VmfError::DimensionTooSmall(p));
        }
        let mut resultant = vec![0.0f64; p];
        for point in points {
            let point = point.as_ref();
            assert_eq!(point.len(), p);
            for (r, x) in resultant.iter_mut().zip(point) {
                *r += x;
            }
        }
        let norm = dot(&resultant, &resultant).sqrt();
        if norm < 1e-12 {
            return Err(VmfError::ZeroResultant);
        }
        for x in resultant.iter_mut() {
            *x /= norm;
        }
        let r_bar = norm / points.len() as f64;
        let kappa = if r_bar >= 1.0 - 1e-12 {
            KAPPA_MAX
        } else {
            solve_kappa(p, r_bar)
        };
        Ok(VmfDistribution {
            mu: resultant,
            kappa,
        })
    }

    /// ln of the normalization constant c_p(kappa).
    pub fn log_normalizer(&self) -> f64 {
        let p = self.dim() as f64;
        if self.kappa < 1e-12 {
            // Uniform on the sphere: 1 / surface area of S^{p-1}.
            ln_gamma(p / 2.0) - std::f64::consts::LN_2 - (p / 2.0) * std::f64::consts::PI.ln()
        } else {
            (p / 2.0 - 1.0) * self.kappa.ln()
                - (p / 2.0) * (2.0 * std::f64::consts::PI).ln()
                - log_bessel_i(p / 2.0 - 1.0, self.kappa)
        }
    }

    /// Log density at a unit vector `x`.
    pub fn log_density(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim());
        self.log_normalizer() + self.kappa * dot(&self.mu, x)
    }

    /// Draw one unit vector with Wood's rejection sampler. A zero
    /// concentration falls back to the uniform sphere distribution.
    pub fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let p = self.dim();
        if self.kappa < 1e-12 {
            let mut x: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
            normalize(&mut x);
            return x;
        }

        let kappa = self.kappa;
        let pm1 = (p - 1) as f64;
        // Rationalized form of (-2k + sqrt(4k^2 + (p-1)^2)) / (p-1): immune
        // to cancellation at large kappa.
        let b = pm1 / (2.0 * kappa + (4.0 * kappa * kappa + pm1 * pm1).sqrt());
        let x0 = (1.0 - b) / (1.0 + b);
        let c = kappa * x0 + pm1 * (1.0 - x0 * x0).ln();
        let beta = Beta::new(pm1 / 2.0, pm1 / 2.0).unwrap();

        let w = loop {
            let z: f64 = beta.sample(rng);
            let w = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z);
            let u: f64 = rng.random();
            if kappa * w + pm1 * (1.0 - x0 * w).ln() - c >= u.ln() {
                break w;
            }
        };

        // Tangent direction, uniform on S^{p-2}.
        let mut v: Vec<f64> = (0..p - 1).map(|_| rng.sample(StandardNormal)).collect();
        normalize(&mut v);

        // Sample in the frame where mu = e1, then reflect e1 onto mu with
        // the Householder transform through their bisector.
        let mut y = Vec::with_capacity(p);
        y.push(w);
        let s = (1.0 - w * w).max(0.0).sqrt();
        for t in &v {
            y.push(s * t);
        }

        let mut u: Vec<f64> = self.mu.clone();
        u[0] -= 1.0;
        for x in u.iter_mut() {
            *x = -*x;
        }
        let uu = dot(&u, &u);
        if uu > 1e-24 {
            let scale = 2.0 * dot(&u, &y) / uu;
            for (yi, ui) in y.iter_mut().zip(&u) {
                *yi -= scale * ui;
            }
        }
        normalize(&mut y);
        y
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<Vec<f64>> {
        (0..n).map(|_| self.sample_one(rng)).collect()
    }
}
