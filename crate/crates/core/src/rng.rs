//! Reproducible random-number streams.
//!
//! Every source of randomness in the crate flows through [`RngStream`].
//! Streams are derived from a master seed and a path of indices with a
//! splitmix-style mixer, so `(seed, [rep])`, `(seed, [rep, 1])`, ... name
//! independent streams regardless of thread scheduling. All continuous
//! variates are produced by inverse-CDF transforms of open-interval
//! uniforms, which is what lets the augmentation machinery freeze and
//! re-use the underlying uniforms.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E3779B97F4A7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// A deterministic random stream addressable by (seed, path).
pub struct RngStream {
    root: u64,
    rng: ChaCha12Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self::from_path(seed, &[])
    }

    /// Derive the stream named by `path` under `seed`. Distinct paths give
    /// statistically independent streams.
    pub fn from_path(seed: u64, path: &[u64]) -> Self {
        let mut h = seed ^ 0xA5A5_5A5A_D00D_F00D;
        let mut s = h;
        h ^= splitmix64(&mut s);
        for &p in path {
            let mut t = h ^ p.wrapping_mul(0x9E3779B97F4A7C15);
            h = splitmix64(&mut t) ^ p;
        }
        let mut key = [0u8; 32];
        let mut ks = h;
        for chunk in key.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut ks).to_le_bytes());
        }
        RngStream {
            root: h,
            rng: ChaCha12Rng::from_seed(key),
        }
    }

    /// Child stream `index` of this stream. Does not consume state, so the
    /// same child can be re-derived at any time.
    pub fn child(&self, index: u64) -> RngStream {
        Self::from_path(self.root, &[index])
    }

    /// Uniform on the open interval (0, 1), 53-bit resolution.
    pub fn uniform(&mut self) -> f64 {
        let bits = self.rng.next_u64() >> 11;
        (bits as f64 + 0.5) * (1.0 / 9007199254740992.0)
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        // modulo bias is < 2^-40 for the n used here (subject counts)
        (self.rng.next_u64() % n as u64) as usize
    }

    /// Standard normal via the inverse CDF.
    pub fn normal(&mut self) -> f64 {
        inv_norm_cdf(self.uniform())
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Draw an index from a discrete distribution by inverting its CDF.
    pub fn discrete(&mut self, probs: &[f64]) -> usize {
        discrete_inverse_cdf(probs, self.uniform())
    }

    /// Student t with 3 degrees of freedom: Z * sqrt(3 / X) with
    /// X ~ chi-square(3) built as Z'^2 - 2 ln U.
    pub fn student_t3(&mut self) -> f64 {
        let z = self.normal();
        let z1 = self.normal();
        let u = self.uniform();
        let chi3 = z1 * z1 - 2.0 * u.ln();
        z * (3.0 / chi3).sqrt()
    }
}

/// Invert a discrete CDF at `u`: smallest k with cum(probs[..=k]) >= u.
pub fn discrete_inverse_cdf(probs: &[f64], u: f64) -> usize {
    let mut cum = 0.0;
    for (k, &p) in probs.iter().enumerate() {
        cum += p;
        if u <= cum {
            return k;
        }
    }
    probs.len() - 1
}

/// Inverse standard-normal CDF (Wichura's AS 241, PPND16).
///
/// Max absolute error around 1e-15 over (0, 1); far below the 1e-9 the
/// coverage computations require.
#[allow(clippy::excessive_precision)] // published constants kept verbatim
pub fn inv_norm_cdf(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "inv_norm_cdf domain is (0,1), got {p}");
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        let num = (((((((2.5090809287301226727e3 * r + 3.3430575583588128105e4) * r
            + 6.7265770927008700853e4)
            * r
            + 4.5921953931549871457e4)
            * r
            + 1.3731693765509461125e4)
            * r
            + 1.9715909503065514427e3)
            * r
            + 1.3314166789178437745e2)
            * r
            + 3.3871328727963666080e0)
            * q;
        let den = ((((((5.2264952788528545610e3 * r + 2.8729085735721942674e4) * r
            + 3.9307895800092710610e4)
            * r
            + 2.1213794301586595867e4)
            * r
            + 5.3941960214247511077e3)
            * r
            + 6.8718700749205790830e2)
            * r
            + 4.2313330701600911252e1)
            * r
            + 1.0;
        return num / den;
    }
    let r = if q < 0.0 { p } else { 1.0 - p };
    let mut r = (-r.ln()).sqrt();
    let x = if r <= 5.0 {
        r -= 1.6;
        let num = ((((((7.74545014278341407640e-4 * r + 2.27238449892691845833e-2) * r
            + 2.41780725177450611770e-1)
            * r
            + 1.27045825245236838258e0)
            * r
            + 3.64784832476320460504e0)
            * r
            + 5.76949722146069140550e0)
            * r
            + 4.63033784615654529590e0)
            * r
            + 1.42343711074968357734e0;
        let den = ((((((1.05075007164441684324e-9 * r + 5.47593808499534494600e-4) * r
            + 1.51986665636164571966e-2)
            * r
            + 1.48103976427480074590e-1)
            * r
            + 6.89767334985100004550e-1)
            * r
            + 1.67638483018380384940e0)
            * r
            + 2.05319162663775882187e0)
            * r
            + 1.0;
        num / den
    } else {
        r -= 5.0;
        let num = ((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r
            + 1.24266094738807843860e-3)
            * r
            + 2.65321895265761230930e-2)
            * r
            + 2.96560571828504891230e-1)
            * r
            + 1.78482653991729133580e0)
            * r
            + 5.46378491116411436990e0)
            * r
            + 6.65790464350110377720e0;
        let den = ((((((2.04426310338993978564e-15 * r + 1.42151175831644588870e-7) * r
            + 1.84631831751005468180e-5)
            * r
            + 7.86869131145613259100e-4)
            * r
            + 1.48753612908506148525e-2)
            * r
            + 1.36929880922735805310e-1)
            * r
            + 5.99832206555887937690e-1)
            * r
            + 1.0;
        num / den
    };
    if q < 0.0 {
        -x
    } else {
        x
    }
}
