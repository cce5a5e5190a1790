//! Shared oracles and fixtures for the integration tests.
#![allow(dead_code)]

use blockstein::dgp::{CandidateModel, Dgp};
use blockstein::numerics::{Matrix, RngStream, Vector};
use dashu_float::round::mode::HalfEven;
use dashu_float::FBig;

pub type Big = FBig<HalfEven>;

/// Working precision of the extended-precision oracle, in bits.
pub const PRECISION: usize = 256;

pub fn big(x: f64) -> Big {
    Big::try_from(x)
        .expect("finite")
        .with_precision(PRECISION)
        .value()
}

pub fn int(n: u64) -> Big {
    Big::from(n).with_precision(PRECISION).value()
}

fn pow(x: &Big, k: u32) -> Big {
    (0..k).fold(int(1), |acc, _| acc * x)
}

/// `ln` of `prefactor · exp(−n·ratio²·(1 − size/n)⁵·ε²/(C·(c0 + c1·ε)²·signal²))`,
/// evaluated in 256-bit arithmetic. Returns `(value, ln value)` rounded to f64.
#[allow(clippy::too_many_arguments)]
pub fn headline_oracle(
    prefactor: u64,
    n: u64,
    ratio_num: Option<u64>,
    size: u64,
    eps: f64,
    c0: u64,
    c1: u64,
    constant: u64,
    signal: f64,
) -> (f64, f64) {
    let nn = int(n);
    let e = big(eps);
    let slack = int(1) - int(size) / &nn;
    let ratio_sq = match ratio_num {
        Some(r) => pow(&(int(r) / &nn), 2),
        None => int(1),
    };
    let denom = int(constant) * pow(&(int(c0) + int(c1) * &e), 2) * pow(&big(signal), 2);
    let exponent = nn * ratio_sq * pow(&slack, 5) * pow(&e, 2) / denom;
    let ln = int(prefactor).ln() - exponent;
    (ln.exp().to_f64().value(), ln.to_f64().value())
}

/// Intermediate-lemma bounds, same conventions. `kind` is the serialized kind name.
pub fn intermediate_oracle(
    kind: &str,
    n: u64,
    size: u64,
    size1: u64,
    delta: f64,
    mu: f64,
) -> (f64, f64) {
    let nn = int(n);
    let k1 = int(size1);
    let ed = big(delta).exp();
    let em1 = pow(&(ed.clone() - int(1)), 2);
    let slack = int(1) - int(size) / &nn;
    let one_mu = int(1) + big(mu);
    let (pre, exponent) = match kind {
        "rhohat_pos" => (int(22), k1 * pow(&slack, 3) * em1 / (int(210) * ed)),
        "rhohat_neg" => (
            int(22),
            k1 * pow(&slack, 3) * em1 / (int(840) * pow(&ed, 2)),
        ),
        "rhohat_mu_pos" => (
            int(22),
            nn * pow(&slack, 3) * em1 / (int(210) * ed * one_mu),
        ),
        "rhohat_mu_neg" => (
            int(22),
            nn * pow(&slack, 3) * em1 / (int(840) * pow(&ed, 2) * one_mu),
        ),
        "rho_pos" | "rho_neg" => {
            let c = if kind == "rho_pos" { 10477 } else { 13089 };
            let e = k1.clone() * (k1.clone() / &nn) * pow(&slack, 5) * em1 / (int(c) * pow(&ed, 2));
            (int(58) + int(2) * k1, e)
        }
        "rho_mu_pos" | "rho_mu_neg" => {
            let c = if kind == "rho_mu_pos" { 19371 } else { 22534 };
            let e = nn * pow(&slack, 5) * em1 / (int(c) * pow(&one_mu, 2) * pow(&ed, 2));
            (int(58) + int(2) * k1, e)
        }
        other => panic!("unknown kind {other}"),
    };
    let ln = pre.ln() - exponent;
    (ln.exp().to_f64().value(), ln.to_f64().value())
}

/// Total-variation distance between `N(0, v1)` and `N(0, v2)` by composite
/// Simpson quadrature of `½∫|φ₁ − φ₂|`, split at the density crossings.
pub fn tv_quadrature(v1: f64, v2: f64) -> f64 {
    let dens =
        |x: f64, v: f64| (-x * x / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt();
    let f = |x: f64| (dens(x, v1) - dens(x, v2)).abs();
    let half = 40.0 * v1.max(v2).sqrt();
    // The integrand has kinks where the densities cross; integrate piecewise.
    let (lo, hi) = (v1.min(v2), v1.max(v2));
    let mut cuts = vec![0.0, half];
    if hi > lo {
        let cross = (lo * hi * (hi / lo).ln() / (hi - lo)).sqrt();
        cuts.insert(1, cross);
    }
    let simpson = |a: f64, b: f64| {
        let m = 20_000;
        let h = (b - a) / m as f64;
        let mut s = f(a) + f(b);
        for i in 1..m {
            s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    };
    // Symmetric integrand: ½ · 2 · ∫₀^∞.
    cuts.windows(2).map(|w| simpson(w[0], w[1])).sum()
}

pub fn random_spd(p: usize, rng: &mut RngStream) -> Matrix {
    let a = rng.normal_matrix(p, p);
    let s = a.transpose() * a / p as f64 + Matrix::identity(p, p) * 0.3;
    (&s + s.transpose()) * 0.5
}

pub fn model(b1: &[usize], b2: &[usize]) -> CandidateModel {
    CandidateModel::new(b1.to_vec(), b2.to_vec()).unwrap()
}

/// A random process of dimension `p` with SPD `Σ` and Gaussian `β`.
pub fn random_dgp(p: usize, rng: &mut RngStream) -> Dgp {
    let sigma = random_spd(p, rng);
    let beta: Vector = rng.normal_vector(p) * 0.7;
    Dgp::new(beta, sigma, 0.5 + rng.uniform()).unwrap()
}

/// Nested collection `{0,1,2} ∪ {3,…,5+j}` for `j = 0..count`, signal only on
/// the smallest model's six regressors.
pub fn nested_world(count: usize) -> (Dgp, blockstein::selection::ModelCollection) {
    let p = 6 + count - 1;
    let mut beta = vec![0.0; p];
    beta[..6].copy_from_slice(&[1.0, -0.8, 0.6, 0.5, -0.4, 0.3]);
    let dgp = Dgp::new(Vector::from_vec(beta), Matrix::identity(p, p), 1.0).unwrap();
    let models = (0..count)
        .map(|j| model(&[0, 1, 2], &(3..6 + j).collect::<Vec<_>>()))
        .collect();
    (
        dgp,
        blockstein::selection::ModelCollection::new("nested", models).unwrap(),
    )
}
