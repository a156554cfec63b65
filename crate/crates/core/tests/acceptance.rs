//! Acceptance run: one PASS/FAIL line per criterion. Failures are always
//! printed and counted; the exit status is nonzero on failure only with
//! `ACCEPTANCE_STRICT=1`, so the regular test run stays usable.
//!
//! Training runs use scaled initialisation. For "best of 3 seeds" the seed
//! with the lowest evaluated mean CR is kept; no ground truth enters the
//! choice.

mod common;

use std::collections::BTreeMap;
use std::time::Instant;

use idras::data::{ObservationSet, SystemSeries};
use idras::diffnet::{init_params_with, InitScheme, Mlp, MlpSpec, OutputActivation};
use idras::metrics::{correlation, mean, rho, std_dev, Standardizer};
use idras::model::{Estimator, Integrator, Mode, ModelConfig};
use idras::rng;
use idras::simulators::{
    drive, growth_rate_distribution, simulate_bacteria, simulate_feynman, simulate_kinetic, simulate_ou_path, steady_state_coefficient, system_phase,
    BacteriaParams, FeynmanEquation, FeynmanSpec, KineticParams, OuProcess,
};
use idras::surrogate::DrawMode;
use idras::trainer::{evaluate, frozen_objective, naive_draws, train, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const SEEDS: [u64; 3] = [1, 2, 3];

struct Outcome {
    pass: bool,
    detail: String,
}

#[derive(Clone, Copy)]
struct Run {
    seed: u64,
    cr: f64,
    rho_val: f64,
    rho_chat: f64,
    first10: f64,
    last10: f64,
}

impl Run {
    fn line(&self) -> String {
        format!(
            "seed {}: cr={:.3} rho_val={:.3} rho_chat={:.3}",
            self.seed, self.cr, self.rho_val, self.rho_chat
        )
    }
}

fn run_once(data: &ObservationSet, mode: Mode, seed: u64) -> Run {
    let cfg = TrainConfig {
        model: ModelConfig { mode, ..ModelConfig::default() },
        seed,
        init: InitScheme::Scaled,
        ..TrainConfig::default()
    };
    let rec = train(data, &cfg).expect("training");
    let rep = evaluate(&rec.omega, data, None).expect("evaluation");
    let avg = |s: &[idras::trainer::EpochRecord]| s.iter().map(|e| e.mean_cr).sum::<f64>() / s.len() as f64;
    let n = rec.epochs.len();
    Run {
        seed,
        cr: rep.mean_cr,
        rho_val: rep.rho_validation.and_then(|v| v.rho).unwrap_or(f64::NAN),
        rho_chat: rep.rho_prediction.rho.unwrap_or(f64::NAN),
        first10: avg(&rec.epochs[..10.min(n)]),
        last10: avg(&rec.epochs[n.saturating_sub(10)..]),
    }
}

/// Lowest evaluated CR wins; ties go to the earlier seed.
fn best(runs: &[Run]) -> Run {
    *runs.iter().min_by(|a, b| a.cr.total_cmp(&b.cr)).unwrap()
}

fn seeds_of(make: impl Fn(u64) -> ObservationSet, mode: Mode, trend: &mut Vec<(String, Run)>, tag: &str) -> Vec<Run> {
    SEEDS
        .iter()
        .map(|&s| {
            let r = run_once(&make(s), mode, s);
            println!("       {tag} {mode} {}", r.line());
            trend.push((format!("{tag} {mode} seed {s}"), r));
            r
        })
        .collect()
}

fn kinetic_data(seed: u64) -> ObservationSet {
    let p = KineticParams {
        n_systems: 20,
        n_samples: 100,
        sample_rate: 100.0,
        ..KineticParams::default()
    };
    simulate_kinetic(&p, seed).expect("kinetic")
}

fn bacteria_data(seed: u64) -> ObservationSet {
    let p = BacteriaParams {
        n_lineages: 30,
        generations: 100,
        ..BacteriaParams::default()
    };
    simulate_bacteria(&p, seed).expect("bacteria")
}

fn kinetic(trend: &mut Vec<(String, Run)>) -> Outcome {
    let t0 = Instant::now();
    let idras = best(&seeds_of(kinetic_data, Mode::Idras, trend, "kinetic"));
    let iras = best(&seeds_of(kinetic_data, Mode::Iras, trend, "kinetic"));
    let secs = t0.elapsed().as_secs_f64();
    Outcome {
        pass: idras.rho_val < 0.15 && idras.rho_chat < 0.5 && iras.rho_val > 0.5 && secs < 600.0,
        detail: format!(
            "IDRAS rho(c,c*)={:.3} (<0.15) rho(c,c_hat)={:.3} (<0.5); IRAS rho(c,c*)={:.3} (>0.5); {secs:.0}s (<600)",
            idras.rho_val, idras.rho_chat, iras.rho_val
        ),
    }
}

fn bacteria(trend: &mut Vec<(String, Run)>) -> Outcome {
    let idras = best(&seeds_of(bacteria_data, Mode::Idras, trend, "bacteria"));
    let iras = best(&seeds_of(bacteria_data, Mode::Iras, trend, "bacteria"));
    Outcome {
        pass: idras.rho_val < 0.2 && (0.1..=0.45).contains(&idras.rho_chat) && iras.rho_val >= 2.0 * idras.rho_val,
        detail: format!(
            "IDRAS rho(c,c*)={:.3} (<0.2) rho(c,c_hat)={:.3} (in [0.1,0.45]); IRAS rho(c,c*)={:.3} (>= {:.3})",
            idras.rho_val,
            idras.rho_chat,
            iras.rho_val,
            2.0 * idras.rho_val
        ),
    }
}

fn feynman(trend: &mut Vec<(String, Run)>) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for eq in FeynmanEquation::ALL {
        let make = |s| simulate_feynman(&FeynmanSpec::new(eq), s).expect("feynman");
        let b = best(&seeds_of(make, Mode::Idras, trend, eq.id()));
        pass &= b.rho_val < 0.15;
        parts.push(format!("{} rho(c,c*)={:.3}", eq.id(), b.rho_val));
    }
    Outcome {
        pass,
        detail: format!("{} (each <0.15)", parts.join(", ")),
    }
}

fn chain_oracle() -> Outcome {
    let t0 = Instant::now();
    let zeta = common::brute_force_zeta();
    let ks: Vec<f64> = [1_000, 10_000, 100_000]
        .iter()
        .map(|&n| {
            let (e, t, _) = common::errors_under(&zeta, n, 64, 40);
            common::ks(&e, &t)
        })
        .collect();
    let secs = t0.elapsed().as_secs_f64();
    Outcome {
        pass: ks[1] < 0.05 && ks[0] > ks[1] && ks[1] > ks[2] && secs < 30.0,
        detail: format!("KS at 1e3/1e4/1e5 = {:.4}/{:.4}/{:.4} (1e4 <0.05, decreasing); {secs:.1}s (<30)", ks[0], ks[1], ks[2]),
    }
}

fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

fn network_check(r: &mut ChaCha8Rng, seed: u64) -> f64 {
    let m = r.random_range(1..6);
    let hidden: Vec<usize> = (0..r.random_range(1..4)).map(|_| r.random_range(1..9)).collect();
    let out = r.random_range(1..4);
    let head = if r.random::<bool>() { OutputActivation::Sigmoid } else { OutputActivation::Linear };
    let spec = MlpSpec::new(m, hidden, out, head, r.random_range(0.01..0.3)).unwrap();
    let net = Mlp::new(spec.clone()).unwrap();
    let p: Vec<f64> = init_params_with(&spec, seed, InitScheme::Scaled).iter().map(|v| v + 0.1 * r.sample::<f64, _>(StandardNormal)).collect();
    let x: Vec<f64> = (0..m).map(|_| r.random_range(-2.0..2.0)).collect();
    let up: Vec<f64> = (0..out).map(|_| r.random_range(-1.0..1.0)).collect();
    let (_, tape) = net.forward(&p, &x).unwrap();
    let mut g = vec![0.0; p.len()];
    net.backward(&p, &tape, &up, &mut g).unwrap();
    let f = |q: &[f64]| -> f64 { net.eval(q, &x).unwrap().iter().zip(&up).map(|(a, b)| a * b).sum() };
    let h = 1e-5;
    let mut q = p.clone();
    let mut worst: f64 = 0.0;
    for i in 0..p.len() {
        q[i] = p[i] + h;
        let fp = f(&q);
        q[i] = p[i] - h;
        let fm = f(&q);
        q[i] = p[i];
        worst = worst.max(rel_err(g[i], (fp - fm) / (2.0 * h), 1e-7));
    }
    worst
}

fn objective_check(r: &mut ChaCha8Rng, seed: u64) -> (f64, f64) {
    let m = r.random_range(1..4);
    let window = r.random_range(1..5);
    let model = ModelConfig {
        window,
        latent_dim: r.random_range(1..4),
        hidden_dims: vec![r.random_range(2..7), r.random_range(2..5)],
        leaky_slope: r.random_range(0.01..0.3),
        sigmoid_all_heads: r.random_bool(0.25),
        substeps: r.random_range(1..4),
        dt: 1.0,
        integrator: if r.random::<bool>() { Integrator::Euler } else { Integrator::Rk4 },
        mode: if r.random_bool(0.7) { Mode::Idras } else { Mode::Iras },
    };
    let draw = if r.random::<bool>() { DrawMode::WholeVector } else { DrawMode::PerComponent };
    let n = window + r.random_range(6..12);
    let systems: Vec<Vec<Vec<f64>>> = (0..r.random_range(1..4))
        .map(|_| {
            let w = r.random_range(0.2..1.0);
            (0..n)
                .map(|k| (0..m).map(|j| ((k + j) as f64 * w).sin() + 0.3 * r.sample::<f64, _>(StandardNormal)).collect())
                .collect()
        })
        .collect();
    let st = Standardizer::fit(systems.iter().flatten().map(|z| z.as_slice()), m);
    let systems: Vec<Vec<Vec<f64>>> = systems.iter().map(|s| s.iter().map(|z| st.apply(z)).collect()).collect();
    let est = Estimator::new(m, model).unwrap();
    let draws = naive_draws(&systems, window, draw, seed).unwrap();
    let omega: Vec<f64> = est.init_params(seed, InitScheme::Scaled).iter().map(|v| v + 0.05 * r.sample::<f64, _>(StandardNormal)).collect();
    let (_, grad) = frozen_objective(&est, &omega, &systems, &draws, draw).unwrap();
    let h = 1e-6;
    let mut p = omega.clone();
    let mut fd = vec![0.0; omega.len()];
    for i in 0..omega.len() {
        p[i] = omega[i] + h;
        let up = frozen_objective(&est, &p, &systems, &draws, draw).unwrap().0;
        p[i] = omega[i] - h;
        let dn = frozen_objective(&est, &p, &systems, &draws, draw).unwrap().0;
        p[i] = omega[i];
        fd[i] = (up - dn) / (2.0 * h);
    }
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = grad.iter().zip(&fd).map(|(a, b)| a - b).collect();
    let elem = grad.iter().zip(&fd).map(|(a, b)| rel_err(*a, *b, 1e-6)).fold(0.0, f64::max);
    (norm(&diff) / norm(&grad).max(norm(&fd)), elem)
}

/// The objective is checked norm-wise. Entries whose true gradient is zero
/// read ~1e-7 from rounding noise at this step, and larger steps cross
/// Leaky-ReLU kinks, so the element-wise worst is reported but not gated.
fn gradient_suite() -> Outcome {
    let (mut net_worst, mut obj_worst, mut elem_worst): (f64, f64, f64) = (0.0, 0.0, 0.0);
    let (mut net_fail, mut obj_fail) = (0, 0);
    for i in 0..100u64 {
        let mut r = ChaCha8Rng::seed_from_u64(1000 + i);
        let a = network_check(&mut r, i);
        let (b, e) = objective_check(&mut r, i);
        elem_worst = elem_worst.max(e);
        net_fail += usize::from(a >= 1e-4);
        obj_fail += usize::from(b >= 1e-3);
        net_worst = net_worst.max(a);
        obj_worst = obj_worst.max(b);
    }
    Outcome {
        pass: net_fail == 0 && obj_fail == 0,
        detail: format!(
            "100 configs: network worst element rel err {net_worst:.1e} (<1e-4, {net_fail} over); objective worst norm-wise rel err {obj_worst:.1e} (<1e-3, {obj_fail} over), element-wise worst {elem_worst:.1e}"
        ),
    }
}

fn metric_identities() -> Outcome {
    let mut r = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let n = r.random_range(3..200);
        let x: Vec<f64> = (0..n).map(|_| r.random_range(-10.0..10.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| r.random_range(-10.0..10.0)).collect();
        let score = |a: &[f64], b: &[f64]| rho(a, b).unwrap().rho.unwrap();
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        let (a, b) = (r.random_range(0.1..50.0), r.random_range(-100.0..100.0));
        let aff: Vec<f64> = y.iter().map(|v| a * v + b).collect();
        let base = score(&x, &y);
        worst = worst
            .max(score(&x, &x).abs())
            .max((score(&x, &neg) - 4.0).abs())
            .max((score(&x, &aff) - base).abs())
            .max((base - 2.0 * (1.0 - correlation(&x, &y).unwrap())).abs());
    }
    Outcome {
        pass: worst < 1e-10,
        detail: format!("200 random series: worst deviation {worst:.1e} (<1e-10)"),
    }
}

fn null_control() -> Outcome {
    let mut r = ChaCha8Rng::seed_from_u64(3);
    let systems = (0..20)
        .map(|id| SystemSeries {
            id,
            times: (0..100).map(|k| k as f64).collect(),
            obs: (0..100).map(|_| vec![r.sample(StandardNormal), r.sample(StandardNormal)]).collect(),
            c_star: None,
        })
        .collect();
    let data = ObservationSet {
        feature_names: vec!["a".into(), "b".into()],
        systems,
        metadata: BTreeMap::new(),
    };
    let cfg = TrainConfig {
        model: ModelConfig { mode: Mode::Iras, ..ModelConfig::default() },
        seed: 1,
        init: InitScheme::Scaled,
        freeze_zeta: true,
        ..TrainConfig::default()
    };
    let rec = train(&data, &cfg).expect("training");
    let tail = &rec.epochs[rec.epochs.len() - 10..];
    let trained = tail.iter().map(|e| e.mean_cr).sum::<f64>() / tail.len() as f64;
    let (lo, hi) = tail.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), e| (l.min(e.mean_cr), h.max(e.mean_cr)));
    Outcome {
        pass: lo >= 0.8 && hi <= 1.2,
        detail: format!("last 10 epochs mean CR {trained:.3}, range [{lo:.3}, {hi:.3}] (within [0.8,1.2])"),
    }
}

fn simulator_statistics() -> Outcome {
    let bp = BacteriaParams::default();
    let ou = OuProcess {
        mu: bp.mu_u,
        sigma: bp.sigma_u,
        tau: bp.tau_u,
    };
    let n = 4_000_000;
    let dt = bp.grid_dt;
    let mut g = rng::substream(21, &[rng::stage::SIM_BACTERIA, 5000]);
    let path = simulate_ou_path(ou, ou.mu, dt, n, &mut g);
    let ou_se = ou.sigma / (n as f64 * dt / (2.0 * ou.tau)).sqrt();
    let ou_mean_ok = (mean(&path) - ou.mu).abs() < 3.0 * ou_se;
    let ou_var = std_dev(&path).powi(2) / (ou.sigma * ou.sigma);
    let ou_var_ok = (ou_var - 1.0).abs() < 0.1;

    let gamma = growth_rate_distribution(&bp).unwrap();
    let draws: Vec<f64> = (0..10_000).map(|_| gamma.sample(&mut g)).collect();
    let (k, th) = (bp.alpha_shape, bp.alpha_scale);
    let gm = mean(&draws);
    let g_mean_ok = (gm - k * th).abs() < 3.0 * (k * th * th / draws.len() as f64).sqrt();
    let g_var = std_dev(&draws).powi(2) / (k * th * th);
    let g_var_ok = (g_var - 1.0).abs() < 0.1;

    let coef = steady_state_coefficient(&KineticParams::default());
    let kp = KineticParams {
        n_systems: 3,
        n_samples: 40,
        sample_rate: 10.0,
        noise_amplitude: 0.0,
        constant_k: true,
        ..KineticParams::default()
    };
    let set = simulate_kinetic(&kp, 3).unwrap();
    let sim_ratio = set
        .systems
        .iter()
        .map(|s| s.c_star.as_ref().unwrap().last().unwrap() / drive(&kp, system_phase(3, s.id), 0.0) / 4.954e-4)
        .fold(1.0_f64, |w, v| if (v - 1.0).abs() > (w - 1.0).abs() { v } else { w });
    let coef_ok = (coef / 4.954e-4 - 1.0).abs() < 0.02 && (sim_ratio - 1.0).abs() < 0.02;
    Outcome {
        pass: ou_mean_ok && ou_var_ok && g_mean_ok && g_var_ok && coef_ok,
        detail: format!(
            "OU mean err {:.2} SE, var ratio {ou_var:.3}; Gamma mean err {:.2} SE, var ratio {g_var:.3}; coef {coef:.4e}, zero-noise (P+S)/K / 4.954e-4 = {sim_ratio:.4}",
            (mean(&path) - ou.mu) / ou_se,
            (gm - k * th) / (k * th * th / draws.len() as f64).sqrt(),
        ),
    }
}

fn report(id: &str, name: &str, o: &Outcome, failed: &mut usize) {
    if !o.pass {
        *failed += 1;
    }
    println!("{} {id} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
}

fn main() {
    let t0 = Instant::now();
    let mut failed = 0;
    let mut trend = Vec::new();

    report("1", "kinetic desk scale", &kinetic(&mut trend), &mut failed);
    report("2", "bacterial sizer desk scale", &bacteria(&mut trend), &mut failed);
    report("3", "Feynman equations", &feynman(&mut trend), &mut failed);
    report("4", "resampling oracle on a two-state chain", &chain_oracle(), &mut failed);
    report("5", "gradient suite", &gradient_suite(), &mut failed);
    report("6", "metric identities", &metric_identities(), &mut failed);
    report("7", "null-regulation control", &null_control(), &mut failed);
    report("8", "simulator statistics", &simulator_statistics(), &mut failed);

    let flat: Vec<&String> = trend.iter().filter(|(_, r)| !(r.last10 < r.first10)).map(|(n, _)| n).collect();
    let o = Outcome {
        pass: flat.is_empty(),
        detail: format!("last-10 mean CR below first-10 on {}/{} runs {:?}", trend.len() - flat.len(), trend.len(), flat),
    };
    report("T", "CR trend on every training run", &o, &mut failed);

    println!("{} failed, {:.0}s total", failed, t0.elapsed().as_secs_f64());
    if failed > 0 && std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
