//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Criterion 7 runs at desk scale (2000/2000 points, m = 128, 20 epochs);
//! set `DSOFTKI_FULL_SCALE=1` to run the 10000/10000, m = 512, 50-epoch
//! configuration instead.

mod common;

use std::time::{Duration, Instant};

use dsoftki_core::datasets::{generate, normalize, split};
use dsoftki_core::exact::exact_gpwd_posterior;
use dsoftki_core::interp::{assemble_interp, softmax_weight_grads, softmax_weights};
use dsoftki_core::kernels::kernel_matrix;
use dsoftki_core::linalg::DEFAULT_JITTER_SCHEDULE;
use dsoftki_core::metrics::{evaluate, Evaluation};
use dsoftki_core::model::{
    build_factor, fit, lowrank_logpdf, lowrank_objective_value, omega_diagnostic,
    predict_normalized, pseudoloss_objective_value, FitOptions, LowRankGaussian, ObjectiveOptions,
};
use dsoftki_core::trainer::{batch_labels, grad_check, initial_params, train, TrainConfig};
use dsoftki_core::{GpwdNoise, InterpField, KernelParams, NormOptions, NormTransform, Observations};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn run(id: usize, name: &str, limit: Option<Duration>, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let out = f();
    let elapsed = start.elapsed();
    let in_time = limit.is_none_or(|l| elapsed <= l);
    let pass = out.pass && in_time;
    let timing = match limit {
        Some(l) => format!("{:.1}s, limit {}s", elapsed.as_secs_f64(), l.as_secs()),
        None => format!("{:.1}s", elapsed.as_secs_f64()),
    };
    println!(
        "[{}] criterion {id}: {name} — {} ({timing})",
        if pass { "PASS" } else { "FAIL" },
        out.detail
    );
    pass
}

fn secs(s: u64) -> Option<Duration> {
    Some(Duration::from_secs(s))
}

fn interpolation_gradients() -> Outcome {
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for (i, d) in [1, 2, 6, 20].into_iter().enumerate() {
        let mut r = common::rng(10 + i as u64);
        for _ in 0..100 {
            let m = r.random_range(1..=8);
            let field = InterpField::new(
                common::uniform(&mut r, m, d, -1.0, 1.0),
                common::uniform(&mut r, m, d, 0.3, 2.0),
            );
            let x: Vec<f64> = (0..d).map(|_| r.random_range(-1.0..1.0)).collect();
            let g = softmax_weight_grads(&x, &field);
            let mut err: f64 = 0.0;
            let mut scale: f64 = 1e-12;
            for k in 0..d {
                let mut up = x.clone();
                up[k] += h;
                let mut dn = x.clone();
                dn[k] -= h;
                let fd = (softmax_weights(&up, &field) - softmax_weights(&dn, &field)) / (2.0 * h);
                for j in 0..m {
                    err = err.max((fd[j] - g[(j, k)]).abs());
                    scale = scale.max(fd[j].abs());
                }
            }
            worst = worst.max(err / scale);
        }
    }
    Outcome {
        pass: worst <= 1e-5,
        detail: format!("max relative error {worst:.2e} over d ∈ {{1,2,6,20}} (≤ 1e-5)"),
    }
}

fn lowrank_oracle() -> Outcome {
    let mut r = common::rng(2);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let p = r.random_range(1..=60);
        let m = r.random_range(1..=8);
        let f = common::uniform(&mut r, p, m, -1.0, 1.0);
        let noise = DVector::from_fn(p, |_, _| r.random_range(0.05..1.0));
        let y = DVector::from_fn(p, |_, _| r.random_range(-2.0..2.0));
        let mut cov = &f * f.transpose();
        cov.set_diagonal(&(cov.diagonal() + &noise));
        let expected = common::dense_logpdf(&cov, &y);
        let got = lowrank_logpdf(&LowRankGaussian { factor: f, noise_diag: noise }, &y).unwrap();
        worst = worst.max((got - expected).abs() / expected.abs());
    }
    Outcome {
        pass: worst <= 1e-8,
        detail: format!("max relative error {worst:.2e} on 50 instances (≤ 1e-8)"),
    }
}

fn dense_alpha(x: &DMatrix<f64>, y: &DVector<f64>, params: &dsoftki_core::DsoftkiParams, jitter: f64) -> DVector<f64> {
    let q = params.dim() + 1;
    let s = assemble_interp(x, &params.field, Observations::ValuesAndGradients).matrix;
    let mut k = kernel_matrix(&params.field.points, &params.field.points, &params.kernel);
    for i in 0..k.nrows() {
        k[(i, i)] += jitter;
    }
    let khat = &s * &k;
    let linv = params.noise.diagonal(x.nrows(), q).map(|v| 1.0 / v);
    let weighted = DMatrix::from_fn(khat.nrows(), khat.ncols(), |i, j| khat[(i, j)] * linv[i]);
    (&k + khat.tr_mul(&weighted)).lu().solve(&weighted.tr_mul(y)).unwrap()
}

fn posterior_solve() -> Outcome {
    let mut r = common::rng(3);
    let (mut wa, mut wm): (f64, f64) = (0.0, 0.0);
    for s in 0..20u64 {
        let n = r.random_range(1..=20);
        let m = r.random_range(1..=8);
        let d = r.random_range(1..=2);
        let obs = Observations::ValuesAndGradients;
        let (x, y, mut params) = common::instance(30 + s, n, m, d, obs);
        // Short lengthscales keep K_zz well conditioned so α is identifiable.
        params.kernel = KernelParams::new((0..d).map(|_| r.random_range(0.15..0.4)).collect(), params.kernel.scale);
        let opts = FitOptions { block_size: 7, ..FitOptions::default() };
        let model = fit(&x, &y, &params, NormTransform::identity(d), &opts).unwrap();
        wa = wa.max(common::rel_err(&model.alpha, &dense_alpha(&x, &y, &params, model.jitter)));
        let xs = common::uniform(&mut r, 6, d, 0.0, 1.0);
        let p = predict_normalized(&model, &xs, false);
        let got = DVector::from_fn(6 * (d + 1), |i, _| {
            let (pt, c) = (i / (d + 1), i % (d + 1));
            if c == 0 { p.values[pt] } else { p.gradients[(pt, c - 1)] }
        });
        let dense = common::dense_posterior_mean(&x, &y, &params, obs, &xs, model.jitter);
        wm = wm.max(common::rel_err(&got, &dense));
    }
    Outcome {
        pass: wa <= 1e-6 && wm <= 1e-6,
        detail: format!("α relative error {wa:.2e}, mean relative error {wm:.2e} (≤ 1e-6)"),
    }
}

fn exact_self_consistency() -> Outcome {
    let mut r = common::rng(4);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for d in 1..=3 {
        let n = 20;
        let x = common::uniform(&mut r, n, d, 0.0, 1.0);
        let y = DVector::from_fn(n * (d + 1), |_, _| r.random_range(-1.0..1.0));
        let kp = KernelParams::isotropic(d, 0.6, 1.0);
        let noise = GpwdNoise::new(0.0, 0.0);
        let xs = common::uniform(&mut r, 5, d, 0.0, 1.0);
        let (mean, _) = exact_gpwd_posterior(&x, &y, &kp, noise, &xs).unwrap();
        let mut err: f64 = 0.0;
        let mut scale: f64 = 1e-12;
        for k in 0..d {
            let mut up = xs.clone();
            let mut dn = xs.clone();
            for i in 0..5 {
                up[(i, k)] += h;
                dn[(i, k)] -= h;
            }
            let (mu, _) = exact_gpwd_posterior(&x, &y, &kp, noise, &up).unwrap();
            let (md, _) = exact_gpwd_posterior(&x, &y, &kp, noise, &dn).unwrap();
            for i in 0..5 {
                let fd = (mu[i * (d + 1)] - md[i * (d + 1)]) / (2.0 * h);
                let g = mean[i * (d + 1) + 1 + k];
                err = err.max((fd - g).abs());
                scale = scale.max(g.abs());
            }
        }
        worst = worst.max(err / scale);
    }
    Outcome {
        pass: worst <= 1e-4,
        detail: format!("value-channel FD vs gradient channel, relative error {worst:.2e} (≤ 1e-4)"),
    }
}

fn gradient_contract() -> Outcome {
    let mut worst: f64 = 0.0;
    for s in 0..20u64 {
        let mut r = common::rng(50 + s);
        let d = r.random_range(1..=2);
        let n = r.random_range(2..=6);
        let m = r.random_range(1..=4);
        let (x, y, params) = common::instance(60 + s, n, m, d, Observations::ValuesAndGradients);
        let report = grad_check(&params, &x, &y, 1e-4, Observations::ValuesAndGradients).unwrap();
        worst = worst.max(report.max_error());
    }
    Outcome {
        pass: worst <= 1e-3,
        detail: format!("worst group error {worst:.2e} on 20 instances, all six groups (≤ 1e-3)"),
    }
}

fn hutchinson_alignment() -> Outcome {
    let (mut min10, mut min200) = (1.0f64, 1.0f64);
    let mut count = 0;
    for name in ["branin", "styblinski_tang", "hartmann6"] {
        for inst in 0..10u64 {
            // Eight-point training batch at the trainer's initial parameters.
            let ds = generate(name, 8, inst).unwrap();
            let (_, tr, _) = normalize(&ds, &[], NormOptions::default()).unwrap();
            let cfg = TrainConfig { m: 5, seed: inst, ..TrainConfig::default() };
            let params = initial_params(&tr, &cfg).unwrap();
            let y = batch_labels(&tr, Observations::ValuesAndGradients);
            let exact = lowrank_objective_value(&tr.x, &y, &params, &ObjectiveOptions::default())
                .unwrap()
                .gradient;
            for (l, slot) in [(10, &mut min10), (200, &mut min200)] {
                let mean = (0..10u64)
                    .map(|seed| {
                        let opts = ObjectiveOptions { num_probes: l, probe_seed: seed, ..ObjectiveOptions::default() };
                        let g = pseudoloss_objective_value(&tr.x, &y, &params, &opts).unwrap().gradient;
                        common::cosine(&g, &exact)
                    })
                    .sum::<f64>()
                    / 10.0;
                *slot = slot.min(mean);
            }
            count += 1;
        }
    }
    Outcome {
        pass: min10 >= 0.9 && min200 >= 0.99,
        detail: format!(
            "worst per-instance mean cosine over {count} instances: {min10:.4} at l = 10 (≥ 0.9), {min200:.4} at l = 200 (≥ 0.99)"
        ),
    }
}

/// Train/test data normalized on the training split.
struct Split {
    train: dsoftki_core::LabeledDerivDataset,
    test: dsoftki_core::LabeledDerivDataset,
    norm: NormTransform,
}

fn make_split(name: &str, n: usize, seed: u64) -> Split {
    let ds = generate(name, 2 * n, seed).unwrap();
    let (tr, te) = split(&ds, n, seed).unwrap();
    let (norm, train, _) = normalize(&tr, &[], NormOptions::default()).unwrap();
    Split { train, test: te, norm }
}

#[derive(Clone, Copy)]
struct Scale {
    n: usize,
    m: usize,
    epochs: usize,
    batch: usize,
}

/// Desk scale keeps the full configuration's ~10 optimizer steps per epoch.
const DESK: Scale = Scale { n: 2000, m: 128, epochs: 20, batch: 200 };
const FULL: Scale = Scale { n: 10000, m: 512, epochs: 50, batch: 1024 };

fn run_model(data: &Split, scale: Scale, seed: u64, value_only: bool, shared: bool) -> Evaluation {
    let cfg = TrainConfig {
        batch_size: scale.batch,
        epochs: scale.epochs,
        m: scale.m,
        seed,
        value_only,
        shared_temperature: shared,
        ..TrainConfig::default()
    };
    let out = train(&data.train, &data.norm, &cfg, None).unwrap();
    evaluate(&out.model, &data.test)
}

struct Runs {
    branin: Vec<Evaluation>,
    branin_softki: Vec<Evaluation>,
    st: Vec<Evaluation>,
    st_softki: Vec<Evaluation>,
    st_shared: Vec<Evaluation>,
    hart: Vec<Evaluation>,
    hart_shared: Vec<Evaluation>,
}

fn mean(v: &[Evaluation], f: impl Fn(&Evaluation) -> f64) -> f64 {
    v.iter().map(f).sum::<f64>() / v.len() as f64
}

fn branin_reproduction(runs: &mut Option<Runs>, scale: Scale, full: bool) -> Outcome {
    let evals: Vec<Evaluation> = (0..3)
        .map(|seed| run_model(&make_split("branin", scale.n, seed), scale, seed, false, false))
        .collect();
    let rmse = mean(&evals, |e| e.normalized.value_rmse);
    let raw = mean(&evals, |e| e.raw.value_rmse);
    let threshold = if full { 0.01 } else { 0.05 };
    let detail = format!(
        "{} scale, mean normalized test RMSE {rmse:.4} over seeds {{0,1,2}} (≤ {threshold}); raw-unit RMSE {raw:.3}",
        if full { "full" } else { "desk" }
    );
    if let Some(r) = runs.as_mut() {
        r.branin = evals;
    } else {
        *runs = Some(Runs {
            branin: evals,
            branin_softki: vec![],
            st: vec![],
            st_softki: vec![],
            st_shared: vec![],
            hart: vec![],
            hart_shared: vec![],
        });
    }
    Outcome { pass: rmse <= threshold, detail }
}

fn derivative_beats_value_only(runs: &mut Runs) -> Outcome {
    runs.branin_softki = (0..3)
        .map(|s| run_model(&make_split("branin", DESK.n, s), DESK, s, true, false))
        .collect();
    runs.st = (0..3)
        .map(|s| run_model(&make_split("styblinski_tang", DESK.n, s), DESK, s, false, false))
        .collect();
    runs.st_softki = (0..3)
        .map(|s| run_model(&make_split("styblinski_tang", DESK.n, s), DESK, s, true, false))
        .collect();
    let mut pass = true;
    let mut parts = vec![];
    for (name, with, without) in [
        ("branin", &runs.branin, &runs.branin_softki),
        ("styblinski_tang", &runs.st, &runs.st_softki),
    ] {
        let (r1, r0) = (mean(with, |e| e.normalized.value_rmse), mean(without, |e| e.normalized.value_rmse));
        let (n1, n0) = (mean(with, |e| e.normalized.nll), mean(without, |e| e.normalized.nll));
        pass &= r1 < r0 && n1 < n0;
        parts.push(format!("{name}: RMSE {r1:.4} vs {r0:.4}, NLL {n1:.3} vs {n0:.3}"));
    }
    Outcome { pass, detail: format!("DSoftKI vs value-only — {}", parts.join("; ")) }
}

fn ablation_direction(runs: &mut Runs) -> Outcome {
    runs.st_shared = (0..3)
        .map(|s| run_model(&make_split("styblinski_tang", DESK.n, s), DESK, s, false, true))
        .collect();
    runs.hart = (0..3)
        .map(|s| run_model(&make_split("hartmann6", DESK.n, s), DESK, s, false, false))
        .collect();
    runs.hart_shared = (0..3)
        .map(|s| run_model(&make_split("hartmann6", DESK.n, s), DESK, s, false, true))
        .collect();
    let mut pass = true;
    let mut parts = vec![];
    for (name, per_point, shared) in [
        ("styblinski_tang", &runs.st, &runs.st_shared),
        ("hartmann6", &runs.hart, &runs.hart_shared),
    ] {
        let deltas: Vec<f64> = shared
            .iter()
            .zip(per_point)
            .map(|(s, p)| s.normalized.value_rmse - p.normalized.value_rmse)
            .collect();
        let nonneg = deltas.iter().filter(|d| **d >= 0.0).count();
        pass &= nonneg >= 2;
        let dnll = mean(shared, |e| e.normalized.nll) - mean(per_point, |e| e.normalized.nll);
        parts.push(format!(
            "{name}: ΔRMSE [{}] ({nonneg}/3 ≥ 0), mean ΔNLL {dnll:+.3}",
            deltas.iter().map(|d| format!("{d:+.4}")).collect::<Vec<_>>().join(", ")
        ));
    }
    Outcome { pass, detail: format!("shared minus per-point temperature — {}", parts.join("; ")) }
}

fn invariant_suite() -> Outcome {
    let mut r = common::rng(10);
    let mut failures = vec![];
    // Softmax normalization and gradient-row zero sums.
    let (mut norm_err, mut sum_err): (f64, f64) = (0.0, 0.0);
    for _ in 0..100 {
        let d = r.random_range(1..=6);
        let m = r.random_range(1..=16);
        let field = InterpField::new(common::uniform(&mut r, m, d, -1.0, 1.0), common::uniform(&mut r, m, d, 0.1, 2.0));
        let x = common::uniform(&mut r, 10, d, -1.5, 1.5);
        let s = assemble_interp(&x, &field, Observations::ValuesAndGradients);
        for i in 0..10 {
            norm_err = norm_err.max((s.value_row(i).sum() - 1.0).abs());
            let g = s.gradient_rows(i).unwrap();
            sum_err = sum_err.max(g.column_sum().amax());
        }
    }
    if norm_err > 1e-7 {
        failures.push(format!("softmax sum error {norm_err:.1e}"));
    }
    if sum_err > 1e-6 {
        failures.push(format!("gradient row sum {sum_err:.1e}"));
    }
    // Gram positivity, variance contraction and the ω identity.
    let (mut eig, mut contraction, mut omega): (f64, f64, f64) = (0.0, f64::NEG_INFINITY, 0.0);
    for s in 0..20u64 {
        let obs = Observations::ValuesAndGradients;
        let (x, y, params) = common::instance(80 + s, 10, 6, 2, obs);
        let f = build_factor(&x, &params, obs, &DEFAULT_JITTER_SCHEDULE).unwrap();
        let ff = &f.f * f.f.transpose();
        eig = eig.min(ff.clone().symmetric_eigen().eigenvalues.min() / ff.trace());
        let model = fit(&x, &y, &params, NormTransform::identity(2), &FitOptions::default()).unwrap();
        let xs = common::uniform(&mut r, 8, 2, -0.5, 1.5);
        let var = predict_normalized(&model, &xs, true).variances.unwrap();
        let prior = common::dense_kernel(&xs, &xs, &params, obs, obs, model.jitter).diagonal();
        contraction = contraction.max((var - prior).max());
        let w = omega_diagnostic(&x, &y, &params, obs);
        let sm = assemble_interp(&x, &params.field, obs).matrix;
        let k = kernel_matrix(&params.field.points, &params.field.points, &params.kernel);
        let rhs = (&sm * &k).transpose() * y.component_div(&params.noise.diagonal(10, 3));
        omega = omega.max((&k * &w - rhs).amax());
    }
    if eig < -1e-8 {
        failures.push(format!("FFᵀ min eigenvalue / trace {eig:.1e}"));
    }
    if contraction > 1e-8 {
        failures.push(format!("variance exceeds prior by {contraction:.1e}"));
    }
    if omega > 1e-8 {
        failures.push(format!("ω identity error {omega:.1e}"));
    }
    // Determinism of seeded runs.
    let data = make_split("branin", 300, 11);
    let cfg = TrainConfig { batch_size: 100, epochs: 3, m: 32, seed: 5, ..TrainConfig::default() };
    let a = train(&data.train, &data.norm, &cfg, None).unwrap();
    let b = train(&data.train, &data.norm, &cfg, None).unwrap();
    let deterministic = a.model == b.model && a.telemetry.to_csv(false) == b.telemetry.to_csv(false);
    if !deterministic {
        failures.push("seeded runs differ".into());
    }
    Outcome {
        pass: failures.is_empty(),
        detail: if failures.is_empty() {
            format!(
                "Σσ err {norm_err:.1e}, gradient-row sum {sum_err:.1e}, min eig/trace {eig:.1e}, \
                 max var − prior {contraction:.1e}, ω err {omega:.1e}, deterministic"
            )
        } else {
            failures.join("; ")
        },
    }
}

fn main() {
    let full = std::env::var("DSOFTKI_FULL_SCALE").is_ok_and(|v| v == "1");
    let mut results = vec![];
    results.push(run(1, "interpolation gradient correctness", secs(10), interpolation_gradients));
    results.push(run(2, "low-rank Gaussian oracle equivalence", secs(10), lowrank_oracle));
    results.push(run(3, "posterior solve equivalence", secs(10), posterior_solve));
    results.push(run(4, "exact GPwD self-consistency", None, exact_self_consistency));
    results.push(run(5, "hyperparameter gradient contract", None, gradient_contract));
    results.push(run(6, "Hutchinson gradient alignment", None, hutchinson_alignment));
    let mut runs = None;
    let (scale, limit) = if full { (FULL, None) } else { (DESK, secs(600)) };
    results.push(run(7, "Branin reproduction", limit, || branin_reproduction(&mut runs, scale, full)));
    if full {
        // Criteria 8 and 9 reuse desk-scale Branin runs.
        runs.as_mut().unwrap().branin = (0..3)
            .map(|s| run_model(&make_split("branin", DESK.n, s), DESK, s, false, false))
            .collect();
    }
    let runs = runs.as_mut().unwrap();
    results.push(run(8, "derivative fitting beats value-only", None, || derivative_beats_value_only(runs)));
    results.push(run(9, "shared-temperature ablation direction", None, || ablation_direction(runs)));
    results.push(run(10, "invariant suite", secs(60), invariant_suite));
    let passed = results.iter().filter(|p| **p).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
