//! One-sided truncated normal draws for probit data augmentation.
//!
//! Within 4 standard deviations of the mean the inverse-CDF method is
//! exact and cheap; deeper in the tail it collapses numerically, so the
//! sampler switches to the shifted-exponential rejection scheme of
//! Robert (1995), whose acceptance rate approaches one as the truncation
//! point recedes. Draws are finite for any bound.

use rand::Rng;
use statrs::distribution::{ContinuousCDF, Normal};

const TAIL_SWITCH: f64 = 4.0;

/// Draw from N(mean, sd^2) truncated to [lower, infinity).
pub fn truncnorm_lower<R: Rng + ?Sized>(rng: &mut R, mean: f64, sd: f64, lower: f64) -> f64 {
    debug_assert!(sd > 0.0);
    let a = (lower - mean) / sd;
    mean + sd * std_truncnorm_lower(rng, a)
}

/// Draw from N(mean, sd^2) truncated to (-infinity, upper].
pub fn truncnorm_upper<R: Rng + ?Sized>(rng: &mut R, mean: f64, sd: f64, upper: f64) -> f64 {
    let b = (upper - mean) / sd;
    mean - sd * std_truncnorm_lower(rng, -b)
}

/// Standard normal truncated to [a, infinity).
fn std_truncnorm_lower<R: Rng + ?Sized>(rng: &mut R, a: f64) -> f64 {
    if a <= TAIL_SWITCH {
        // map a uniform into the upper tail mass below the survival at a;
        // the quantile function is accurate for small arguments
        let normal = Normal::new(0.0, 1.0).unwrap();
        let tail = normal.sf(a);
        loop {
            let u: f64 = rng.random();
            let p = u * tail;
            if p > 0.0 {
                let x = -normal.inverse_cdf(p);
                // rounding can push the draw a hair below the bound
                return x.max(a);
            }
        }
    } else {
        // shifted-exponential rejection
        let lambda = 0.5 * (a + (a * a + 4.0).sqrt());
        loop {
            let e: f64 = rng.random::<f64>();
            let x = a - (1.0 - e).ln() / lambda;
            let d = x - lambda;
            let u: f64 = rng.random();
            if u <= (-0.5 * d * d).exp() {
                return x;
            }
        }
    }
}
