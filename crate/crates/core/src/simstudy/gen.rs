//! Forward data generation for the two simulation designs.
//!
//! Draw order is fixed per subject, so a given stream always yields the
//! same table: the covariates first, then the response, then the
//! missingness machinery.

use crate::glm::expit;
use crate::rng::RngStream;
use crate::simstudy::{Sim1Config, Sim2Config};
use crate::tabular::{ColumnRole, ObservationTable, TableBuilder};

/// Logistic outcome with a masked 3-level covariate.
///
/// Per subject: z1 ~ N(0,1); z2 in {1,2,3} with probabilities
/// (0.5, 0.3, 0.2); y | z logistic with coefficients
/// (-0.2, 0.5, -0.75, 0.25) on (1, z1, I(z2=2), I(z2=3)); auxiliary
/// a = log 1.5 + I(z2=2) - I(z2=3) - y + N(0,1); z2 masked with
/// probability expit(eta + a). The masking direction is pinned by the
/// target rates: eta = -1.1 must average 32.2% missing and eta = -0.2
/// must average 48.1%.
pub fn gen_sim1(config: &Sim1Config, rng: &mut RngStream) -> ObservationTable {
    let n = config.n;
    let mut z1 = Vec::with_capacity(n);
    let mut z2 = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut a = Vec::with_capacity(n);
    let mut mask = Vec::with_capacity(n);
    for _ in 0..n {
        let z1i = rng.normal();
        let z2i = rng.discrete(&[0.5, 0.3, 0.2]) + 1; // level code
        let i2 = if z2i == 2 { 1.0 } else { 0.0 };
        let i3 = if z2i == 3 { 1.0 } else { 0.0 };
        let eta_y = -0.2 + 0.5 * z1i - 0.75 * i2 + 0.25 * i3;
        let yi = if rng.bernoulli(expit(eta_y)) { 1.0 } else { 0.0 };
        let ai = 1.5f64.ln() + i2 - i3 - yi + rng.normal();
        let missing = rng.bernoulli(expit(config.eta + ai));
        z1.push(z1i);
        z2.push(z2i as f64);
        y.push(yi);
        a.push(ai);
        mask.push(missing);
    }
    TableBuilder::new()
        .numeric("y", ColumnRole::Response, y)
        .numeric("z1", ColumnRole::Covariate, z1)
        .categorical("z2", ColumnRole::Covariate, vec![1, 2, 3], z2)
        .numeric("a", ColumnRole::Auxiliary, a)
        .incomplete("z2", mask)
        .build()
        .expect("generated table is valid")
}

/// Continuous outcome with a nonlinear auxiliary effect and t(3) errors.
///
/// Per subject: z1 ~ N(0,1); z2 ~ Bernoulli(0.4); a ~ U[0,5];
/// y = 1 + z1 + z2 + h(a) + t3; R | (z1, z2, a) logistic with linear
/// predictor -4.5 + z1 + z2 + 2a; y masked where R = 0.
pub fn gen_sim2(config: &Sim2Config, rng: &mut RngStream) -> ObservationTable {
    let n = config.n;
    let h = config.scenario;
    let mut z1 = Vec::with_capacity(n);
    let mut z2 = Vec::with_capacity(n);
    let mut a = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut mask = Vec::with_capacity(n);
    for _ in 0..n {
        let z1i = rng.normal();
        let z2i = if rng.bernoulli(0.4) { 1.0 } else { 0.0 };
        let ai = 5.0 * rng.uniform();
        let yi = 1.0 + z1i + z2i + h.h(ai) + rng.student_t3();
        let observed = rng.bernoulli(expit(-4.5 + z1i + z2i + 2.0 * ai));
        z1.push(z1i);
        z2.push(z2i);
        a.push(ai);
        y.push(yi);
        mask.push(!observed);
    }
    TableBuilder::new()
        .numeric("y", ColumnRole::Response, y)
        .numeric("z1", ColumnRole::Covariate, z1)
        .numeric("z2", ColumnRole::Covariate, z2)
        .numeric("a", ColumnRole::Auxiliary, a)
        .incomplete("y", mask)
        .build()
        .expect("generated table is valid")
}
