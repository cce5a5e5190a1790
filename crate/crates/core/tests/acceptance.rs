//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! The process exits 0 after printing every line so that `cargo test` keeps
//! running the remaining test targets; set `ACCEPTANCE_STRICT=1` to make any
//! FAIL line produce a non-zero exit status.

mod common;

use std::time::Instant;

use blockstein::bounds::{
    bound_corollary3, bound_pi_short, bound_pi_valid, bound_theorem1, bound_tv, bound_uniform,
    intermediate_lemma_bounds, latin_hypercube_unit, latin_hypercube_weights,
    prop_inequality_check, BoundInput, IntermediateKind, PerfKind, PropGrid,
};
use blockstein::dgp::{conditional_params, generate_sample, CandidateModel, Dgp};
use blockstein::harness::{
    experiment_coverage, experiment_ratio, experiment_selection, verify_distribution,
    verify_tail_bound, CoverageOptions, DistributionKind, DistributionParams, ExperimentReport,
    ExperimentSetup, McConfig, Side, TailCheck, WishartBranch,
};
use blockstein::inference::{build_interval, conditional_coverage, tv_centered_normals};
use blockstein::mspe::{empirical_mspe, true_mspe, true_mspe_expanded};
use blockstein::numerics::{Matrix, RngStream, Vector};
use blockstein::selection::{CollectionSummary, ModelCollection};
use blockstein::shrinkage::{fit, predict, ShrinkageChoice, ShrinkageConfig};
use common::{
    headline_oracle, intermediate_oracle, model, nested_world, random_dgp, tv_quadrature,
};
use rayon::prelude::*;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

/// Random model with block sizes in 3..=6 and `extra` omitted regressors.
fn random_world(rng: &mut RngStream, extra: usize) -> (Dgp, CandidateModel) {
    let k1 = 3 + rng.below(4);
    let k2 = 3 + rng.below(4);
    let p = k1 + k2 + extra;
    let dgp = random_dgp(p, rng);
    let m = model(
        &(0..k1).collect::<Vec<_>>(),
        &(k1..k1 + k2).collect::<Vec<_>>(),
    );
    (dgp, m)
}

fn criterion_1() -> Outcome {
    let worst = (0..1000u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = RngStream::new(101, i);
            let n = [50, 100, 200][rng.below(3)];
            let (dgp, m) = random_world(&mut rng, 2);
            let cfg = ShrinkageConfig::new(2.0 * rng.uniform(), 2.0 * rng.uniform()).unwrap();
            let sample = generate_sample(&dgp, n, &mut rng).unwrap();
            let f = fit(&sample, &m, &cfg).unwrap();
            let cp = conditional_params(&dgp, &m).unwrap();
            let rho = true_mspe(&f, &cp).unwrap();
            (rho - true_mspe_expanded(&f, &cp, &sample, &m).unwrap()).abs() / rho
        })
        .reduce(|| 0.0, f64::max);
    outcome(
        worst <= 1e-8,
        format!("1000 configurations, max relative deviation {worst:.2e} (limit 1e-8)"),
    )
}

fn criterion_2() -> Outcome {
    const DRAWS: u64 = 1_000_000;
    let results: Vec<(f64, f64)> = (0..20u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = RngStream::new(202, i);
            let n = [50, 100, 200][rng.below(3)];
            let (dgp, m) = random_world(&mut rng, 2);
            let cfg = ShrinkageConfig::new(2.0 * rng.uniform(), 2.0 * rng.uniform()).unwrap();
            let sample = generate_sample(&dgp, n, &mut rng).unwrap();
            let f = fit(&sample, &m, &cfg).unwrap();
            let rho = true_mspe(&f, &conditional_params(&dgp, &m).unwrap()).unwrap();
            let mut future = RngStream::new(203, i);
            let (mut s, mut s2) = (0.0, 0.0);
            for _ in 0..DRAWS {
                let (x, y) = dgp.draw_observation(&mut future);
                let e = (predict(&f, &x).unwrap() - y).powi(2);
                s += e;
                s2 += e * e;
            }
            let mean = s / DRAWS as f64;
            let se = ((s2 / DRAWS as f64 - mean * mean) / DRAWS as f64).sqrt();
            (rho, (mean - rho).abs() / se)
        })
        .collect();
    let within = results.iter().filter(|r| r.1 <= 4.0).count();
    let worst = results.iter().map(|r| r.1).fold(0.0, f64::max);
    outcome(
        within >= 19,
        format!("{within}/20 configurations within 4 MC standard errors (worst {worst:.2} SE)"),
    )
}

fn criterion_3() -> Outcome {
    let (mut worst_ols, mut worst_full) = (0.0f64, 0.0f64);
    let mut full_hits = 0;
    for i in 0..100u64 {
        let mut rng = RngStream::new(303, i);
        let n = [50, 100, 200][rng.below(3)];
        let (dgp, m) = random_world(&mut rng, 2);
        let sample = generate_sample(&dgp, n, &mut rng).unwrap();
        let f = fit(&sample, &m, &ShrinkageConfig::ols()).unwrap();
        let k = m.size() as f64;
        let expected = f.sigma_hat_sq * (1.0 + k / (n as f64 - k + 1.0));
        worst_ols =
            worst_ols.max((empirical_mspe(&sample, &m, &f).unwrap() - expected).abs() / expected);
        // Constants large enough that both factors clip at 1.
        let f = fit(&sample, &m, &ShrinkageConfig::new(1e12, 1e12).unwrap()).unwrap();
        if f.a1 == 1.0 && f.a2 == 1.0 {
            full_hits += 1;
        }
        let yy = sample.y.norm_squared() / n as f64;
        worst_full = worst_full.max((empirical_mspe(&sample, &m, &f).unwrap() - yy).abs() / yy);
    }
    outcome(
        worst_ols <= 1e-12 && worst_full <= 1e-12 && full_hits == 100,
        format!("100 datasets: OLS collapse max rel dev {worst_ols:.2e}, full-shrinkage collapse {worst_full:.2e}"),
    )
}

fn criterion_4() -> Outcome {
    let cfg = McConfig {
        reps: 10_000,
        master_seed: 404,
        ..McConfig::default()
    };
    let mut rng = RngStream::new(405, 0);
    let dgp = random_dgp(10, &mut rng);
    let m = model(&[0, 1, 2], &[3, 4, 5, 6]);
    let regression = DistributionParams::Regression {
        dgp,
        model: m,
        n: 50,
    };
    let checks = [
        (DistributionKind::HotRatio, &regression),
        (DistributionKind::SigmaHat, &regression),
        (DistributionKind::WishartSchur, &regression),
        (
            DistributionKind::InvChisqDiag,
            &DistributionParams::Gaussian { d: 30, k: 5 },
        ),
    ];
    let mut lines = Vec::new();
    let mut pass = true;
    for (kind, params) in checks {
        let r = verify_distribution(kind, params, &cfg).unwrap();
        pass &= r.pass;
        lines.push(format!("{kind:?} p={:.3}", r.p_value));
    }
    outcome(pass, format!("KS at 10^4 reps: {}", lines.join(", ")))
}

fn criterion_5() -> Outcome {
    let cfg = |grid: &[f64]| McConfig {
        reps: 100_000,
        master_seed: 505,
        epsilon_grid: grid.to_vec(),
        ..McConfig::default()
    };
    let checks: Vec<(TailCheck, Vec<f64>)> = vec![
        (
            TailCheck::ChiSq {
                k: 200,
                two_sided: false,
            },
            vec![0.25, 0.3, 0.4],
        ),
        (
            TailCheck::QuadForm {
                a: Matrix::identity(5, 5) / 5.0,
                side: Side::TwoSided,
            },
            vec![0.6, 0.8, 1.0],
        ),
        (
            TailCheck::Wishart {
                d: 100,
                k: 10,
                branch: WishartBranch::Lower,
            },
            vec![0.4, 0.5],
        ),
        (
            TailCheck::Wishart {
                d: 100,
                k: 10,
                branch: WishartBranch::Upper,
            },
            vec![0.4, 0.5],
        ),
        (
            TailCheck::Wishart {
                d: 100,
                k: 10,
                branch: WishartBranch::UpperShift,
            },
            vec![0.4, 0.5],
        ),
        (
            TailCheck::Trace {
                d: 60,
                k: 5,
                relative: true,
            },
            vec![0.5, 1.0],
        ),
        (
            TailCheck::Trace {
                d: 60,
                k: 5,
                relative: false,
            },
            vec![0.5, 1.0],
        ),
    ];
    let mut pass = true;
    let mut notes = Vec::new();
    for (check, grid) in checks {
        for v in verify_tail_bound(&check, &cfg(&grid)).unwrap() {
            if !v.pass {
                pass = false;
                notes.push(format!(
                    "{} at {}: wilson {:.2e} > bound {:.2e}",
                    check.name(),
                    v.epsilon,
                    v.wilson_upper,
                    v.clipped_bound
                ));
            }
        }
    }
    let detail = if notes.is_empty() {
        "all grid points within bound".to_string()
    } else {
        notes.join("; ")
    };
    outcome(pass, detail)
}

fn criterion_6() -> Outcome {
    let weights = PropGrid::Weights(latin_hypercube_weights(100_000, 2000, 606));
    let unit = PropGrid::Unit(latin_hypercube_unit(100_000, 607));
    let v1 = prop_inequality_check(&weights).unwrap();
    let v2 = prop_inequality_check(&unit).unwrap();
    outcome(
        v1.is_empty() && v2.is_empty(),
        format!(
            "10^5-point grids: {} + {} violations over 12 inequality links",
            v1.len(),
            v2.len()
        ),
    )
}

fn criterion_7() -> Outcome {
    let mut rng = RngStream::new(707, 0);
    let mut worst_quad = 0.0f64;
    for _ in 0..100 {
        let v1 = (4.0 * rng.uniform() - 2.0).exp();
        let v2 = (4.0 * rng.uniform() - 2.0).exp();
        worst_quad =
            worst_quad.max((tv_centered_normals(v1, v2).unwrap() - tv_quadrature(v1, v2)).abs());
    }
    let mut log_violations = 0;
    for _ in 0..10_000 {
        let v1 = (6.0 * rng.uniform() - 3.0).exp();
        let v2 = (6.0 * rng.uniform() - 3.0).exp();
        if tv_centered_normals(v1, v2).unwrap() > (v1 / v2).ln().abs() / 4.0 + 1e-15 {
            log_violations += 1;
        }
    }
    let coverage: Vec<f64> = (0..20u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = RngStream::new(708, i);
            let (dgp, m) = random_world(&mut rng, 2);
            let sample = generate_sample(&dgp, 60, &mut rng).unwrap();
            let f = fit(&sample, &m, &ShrinkageConfig::james_stein_default(&m)).unwrap();
            let hat = empirical_mspe(&sample, &m, &f).unwrap();
            let rho = true_mspe(&f, &conditional_params(&dgp, &m).unwrap()).unwrap();
            let alpha = 0.05 + 0.2 * rng.uniform();
            let exact = conditional_coverage(hat, rho, alpha).unwrap();
            let draws = 200_000;
            let mut future = RngStream::new(709, i);
            let hits = (0..draws)
                .filter(|_| {
                    let (x, y) = dgp.draw_observation(&mut future);
                    build_interval(&f, &x, hat, alpha).unwrap().contains(y)
                })
                .count();
            let freq = hits as f64 / draws as f64;
            (freq - exact).abs() / (exact * (1.0 - exact) / draws as f64).sqrt()
        })
        .collect();
    let within = coverage.iter().filter(|z| **z <= 4.0).count();
    let injected = (0..50)
        .map(|i| {
            let alpha = 0.01 + 0.019 * i as f64;
            (conditional_coverage(2.5, 2.5, alpha).unwrap() - (1.0 - alpha)).abs()
        })
        .fold(0.0, f64::max);
    outcome(
        worst_quad <= 1e-6 && log_violations == 0 && within == 20 && injected <= 1e-12,
        format!(
            "quadrature max |diff| {worst_quad:.1e}; TV>|log|/4 violations {log_violations}; coverage within 4 SE {within}/20; injected coverage error {injected:.1e}"
        ),
    )
}

fn rel(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / b.abs()
    }
}

fn criterion_8_oracle() -> (f64, usize) {
    let mut rng = RngStream::new(808, 0);
    let mut worst = 0.0f64;
    let mut evaluated = 0;
    for _ in 0..50 {
        let n = 50 + rng.below(100_000);
        let size = 6 + rng.below((n - 6).min(200));
        let size1 = 3 + rng.below(size - 5);
        let count = 1 + rng.below(50);
        let eps = (8.0 * rng.uniform() - 5.0).exp();
        let mu = 3.0 * rng.uniform();
        let d = 1.0 + 4.0 * rng.uniform();
        let (nu, s, s1, c) = (n as u64, size as u64, size1 as u64, count as u64);
        let pm = BoundInput::per_model(n, size, size1, eps);
        let un = BoundInput::uniform(
            n,
            CollectionSummary {
                r_n: size1,
                s_n: size,
                count,
            },
            eps,
        )
        .with_d(d);
        let pairs = [
            (
                bound_theorem1(&pm).unwrap(),
                headline_oracle(31 * s, nu, Some(s1), s, eps, 1, 1, 14397, 1.0),
            ),
            (
                bound_theorem1(&pm.with_mu(mu)).unwrap(),
                headline_oracle(31 * s, nu, None, s, eps, 1, 1, 28279, 1.0 + mu),
            ),
            (
                bound_uniform(&un, false).unwrap(),
                headline_oracle(31 * c * s, nu, Some(s1), s, eps, 1, 1, 14397, 1.0),
            ),
            (
                bound_uniform(&un, true).unwrap(),
                headline_oracle(31 * c * s, nu, None, s, eps, 1, 1, 28279, d),
            ),
            (
                bound_corollary3(&un, PerfKind::TruePerf, false).unwrap(),
                headline_oracle(31 * c * s, nu, Some(s1), s, eps, 2, 1, 14397, 1.0),
            ),
            (
                bound_corollary3(&un, PerfKind::TruePerf, true).unwrap(),
                headline_oracle(31 * c * s, nu, None, s, eps, 2, 1, 28279, d),
            ),
            (
                bound_corollary3(&un, PerfKind::EstPerf, false).unwrap(),
                headline_oracle(31 * c * s, nu, Some(s1), s, eps, 1, 1, 14397, 1.0),
            ),
            (
                bound_tv(&pm, false, false).unwrap(),
                headline_oracle(31 * s, nu, Some(s1), s, eps, 1, 4, 900, 1.0),
            ),
            (
                bound_tv(&pm.with_mu(mu), false, true).unwrap(),
                headline_oracle(31 * s, nu, None, s, eps, 1, 4, 1768, 1.0 + mu),
            ),
            (
                bound_tv(&un, true, false).unwrap(),
                headline_oracle(31 * c * s, nu, Some(s1), s, eps, 1, 4, 900, 1.0),
            ),
            (
                bound_tv(&un, true, true).unwrap(),
                headline_oracle(31 * c * s, nu, None, s, eps, 1, 4, 1768, d),
            ),
            (
                bound_pi_valid(&un, false).unwrap(),
                headline_oracle(31 * c * s, nu, Some(s1), s, eps, 1, 4, 900, 1.0),
            ),
            (
                bound_pi_short(&un, false).unwrap(),
                headline_oracle(31 * c * s, nu, Some(s1), s, eps, 1, 2, 3600, 1.0),
            ),
            (
                bound_pi_short(&un, true).unwrap(),
                headline_oracle(31 * c * s, nu, None, s, eps, 1, 2, 7070, d),
            ),
        ];
        for (got, (value, ln)) in pairs {
            // Compare values where they are representable, logarithms otherwise.
            let dev = if value > 1e-300 {
                rel(got.value, value)
            } else {
                rel(got.ln_value, ln)
            };
            worst = worst.max(dev);
            evaluated += 1;
        }
        for kind in IntermediateKind::ALL {
            let name = serde_json::to_value(kind).unwrap();
            let got = intermediate_lemma_bounds(kind, n, size, size1, eps, Some(mu)).unwrap();
            let (value, ln) = intermediate_oracle(name.as_str().unwrap(), nu, s, s1, eps, mu);
            worst = worst.max(if value > 1e-300 {
                rel(got.value, value)
            } else {
                rel(got.ln_value, ln)
            });
            evaluated += 1;
        }
    }
    (worst, evaluated)
}

fn experiment_world() -> (Dgp, ModelCollection) {
    let p = 20;
    let mut beta = vec![0.0; p];
    for (j, b) in beta.iter_mut().enumerate().take(10) {
        *b = 1.0 / (1.0 + j as f64);
    }
    let dgp = Dgp::new(
        Vector::from_vec(beta),
        blockstein::cli::SigmaSpec::Shorthand("ar1:0.4".into())
            .build(p)
            .unwrap(),
        1.0,
    )
    .unwrap();
    let mut models = Vec::new();
    for k1 in 3..=6 {
        for k2 in [3, 5, 8, 12] {
            if k1 + k2 <= p {
                models.push(model(
                    &(0..k1).collect::<Vec<_>>(),
                    &(k1..k1 + k2).collect::<Vec<_>>(),
                ));
            }
        }
    }
    (dgp, ModelCollection::new("grid", models).unwrap())
}

fn criterion_8() -> Outcome {
    let (worst, evaluated) = criterion_8_oracle();
    let (dgp, collection) = experiment_world();
    let shrink = ShrinkageChoice::Default;
    let setup = ExperimentSetup {
        dgp: &dgp,
        collection: &collection,
        n: 200,
        shrink: &shrink,
    };
    let cfg = McConfig {
        reps: 1000,
        master_seed: 809,
        epsilon_grid: vec![0.1, 0.25, 0.5, 1.0, 2.0],
        ..McConfig::default()
    };
    let reports: Vec<ExperimentReport> = vec![
        experiment_ratio(&setup, &cfg).unwrap(),
        experiment_selection(&setup, &cfg).unwrap(),
        experiment_coverage(
            &setup,
            &cfg,
            CoverageOptions {
                alpha: 0.1,
                oracle_injection: false,
            },
        )
        .unwrap(),
    ];
    let verdicts: Vec<_> = reports.iter().flat_map(|r| &r.per_epsilon).collect();
    let failed = verdicts.iter().filter(|v| !v.verdict.pass).count();
    let vacuous = verdicts.iter().filter(|v| v.verdict.vacuous).count();
    let labelled = verdicts
        .iter()
        .all(|v| v.verdict.vacuous == (v.verdict.clipped_bound >= 1.0));
    outcome(
        worst <= 1e-12 && failed == 0 && labelled,
        format!(
            "oracle: {evaluated} evaluations, max rel dev {worst:.1e}; experiments (n=200, |M|={}, 1000 reps): {} verdicts, {failed} failed, {vacuous} vacuous",
            collection.len(),
            verdicts.len()
        ),
    )
}

fn criterion_9() -> Outcome {
    let (dgp, collection) = nested_world(10);
    let shrink = ShrinkageChoice::Default;
    let mut freq = Vec::new();
    let mut median = Vec::new();
    for n in [100, 200, 400] {
        let setup = ExperimentSetup {
            dgp: &dgp,
            collection: &collection,
            n,
            shrink: &shrink,
        };
        let cfg = McConfig {
            reps: 500,
            master_seed: 909,
            ..McConfig::default()
        };
        let r = experiment_selection(&setup, &cfg).unwrap();
        freq.push(r.summaries["freq_selected_equals_best"].as_f64().unwrap());
        median.push(r.summaries["median_log_true_ratio"].as_f64().unwrap());
    }
    let monotone = freq.windows(2).all(|w| w[1] >= w[0]);
    outcome(
        monotone && median[2] < median[0],
        format!("P(selected = best) at n=100,200,400: {freq:.3?}; median log regret {median:.3?}"),
    )
}

fn criterion_10() -> Outcome {
    let (dgp, collection) = experiment_world();
    let shrink = ShrinkageChoice::Default;
    let setup = ExperimentSetup {
        dgp: &dgp,
        collection: &collection,
        n: 200,
        shrink: &shrink,
    };
    let mut identical = true;
    for experiment in 0..3 {
        let payloads: Vec<String> = [1, 8]
            .iter()
            .map(|&parallelism| {
                let cfg = McConfig {
                    reps: 200,
                    master_seed: 1010,
                    parallelism,
                    ..McConfig::default()
                };
                let r = match experiment {
                    0 => experiment_ratio(&setup, &cfg),
                    1 => experiment_selection(&setup, &cfg),
                    _ => experiment_coverage(
                        &setup,
                        &cfg,
                        CoverageOptions {
                            alpha: 0.1,
                            oracle_injection: false,
                        },
                    ),
                };
                r.unwrap().payload_json().unwrap()
            })
            .collect();
        identical &= payloads[0] == payloads[1];
    }
    outcome(
        identical,
        "ratio, selection and coverage payloads compared at parallelism 1 and 8",
    )
}

type Criterion = fn() -> Outcome;

fn main() {
    let criteria: [(&str, Criterion); 10] = [
        ("1 expansion identity", criterion_1),
        ("2 conditional-expectation oracle", criterion_2),
        ("3 collapse identities", criterion_3),
        ("4 distribution checks", criterion_4),
        ("5 non-vacuous tail bounds", criterion_5),
        ("6 deterministic inequalities", criterion_6),
        ("7 TV and coverage", criterion_7),
        ("8 headline-bound sanity", criterion_8),
        ("9 selection trend", criterion_9),
        ("10 determinism", criterion_10),
    ];
    let mut failures = Vec::new();
    for (name, run) in criteria {
        let t = Instant::now();
        let o = run();
        let status = if o.pass { "PASS" } else { "FAIL" };
        println!(
            "{status} criterion {name}: {} [{:.1}s]",
            o.detail,
            t.elapsed().as_secs_f64()
        );
        if !o.pass {
            failures.push(name);
        }
    }
    println!("acceptance: {}/10 criteria passed", 10 - failures.len());
    if !failures.is_empty() && std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
