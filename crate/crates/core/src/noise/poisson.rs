//! Exact Poisson sampling.
//!
//! Small rates use sequential-search inversion; rates of ten and above use
//! Hörmann's transformed rejection with squeeze (PTRS).

use rand::Rng;
use statrs::function::gamma::ln_gamma;

const INVERSION_LIMIT: f64 = 10.0;

/// Draws one Poisson variate with mean `lambda`.
///
/// `lambda` must be finite and non-negative; callers validate.
pub fn sample_poisson<R: Rng + ?Sized>(rng: &mut R, lambda: f64) -> u64 {
    debug_assert!(lambda.is_finite() && lambda >= 0.0);
    if lambda <= 0.0 {
        0
    } else if lambda < INVERSION_LIMIT {
        inversion(rng, lambda)
    } else {
        Ptrs::new(lambda).sample(rng)
    }
}

fn inversion<R: Rng + ?Sized>(rng: &mut R, lambda: f64) -> u64 {
    let u: f64 = rng.random();
    let mut k = 0u64;
    let mut p = (-lambda).exp();
    let mut cdf = p;
    // The tail beyond 200 for rates below 10 is far under f64 resolution.
    while u > cdf && k < 200 {
        k += 1;
        p *= lambda / k as f64;
        cdf += p;
    }
    k
}

struct Ptrs {
    lambda: f64,
    log_lambda: f64,
    a: f64,
    b: f64,
    inv_alpha: f64,
    v_r: f64,
}

impl Ptrs {
    fn new(lambda: f64) -> Self {
        let slam = lambda.sqrt();
        let b = 0.931 + 2.53 * slam;
        Ptrs {
            lambda,
            log_lambda: lambda.ln(),
            a: -0.059 + 0.02483 * b,
            b,
            inv_alpha: 1.1239 + 1.1328 / (b - 3.4),
            v_r: 0.9277 - 3.6224 / (b - 2.0),
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        loop {
            let u = rng.random::<f64>() - 0.5;
            let v: f64 = rng.random();
            let us = 0.5 - u.abs();
            let k = ((2.0 * self.a / us + self.b) * u + self.lambda + 0.43).floor();
            if us >= 0.07 && v <= self.v_r {
                return k as u64;
            }
            if k < 0.0 || (us < 0.013 && v > us) {
                continue;
            }
            let lhs = v.ln() + self.inv_alpha.ln() - (self.a / (us * us) + self.b).ln();
            let rhs = -self.lambda + k * self.log_lambda - ln_gamma(k + 1.0);
            if lhs <= rhs {
                return k as u64;
            }
        }
    }
}
