//! End-to-end acceptance suite. Every criterion prints one PASS/FAIL line
//! and then asserts it.

use std::io::Write;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, MutexGuard, OnceLock};
use std::time::Instant;

use mnl_lab::analysis::{check_elliptical_potential, check_pilot_convergence, check_reverse_lipschitz, PilotConvergenceConfig};
use mnl_lab::assortment::{best_assortment, AssortmentSolver, SolverMethod};
use mnl_lab::choice::choice_probabilities;
use mnl_lab::confidence::GramState;
use mnl_lab::estimation::{Anchor, LinearizedLoss, PilotLoss};
use mnl_lab::experiment::{run_experiment, ExperimentConfig, ExperimentOutcome};
use mnl_lab::model::{uniform_assortment_sample, ChoiceRecord, ContextSet, ParamVector, RevenueVector};
use mnl_lab::rng::{stream, Stream};
use mnl_lab::utility::{ModelKind, UtilityModel};
use rand::Rng;

/// Criteria run one at a time so wall-clock limits are not shared.
fn serial() -> MutexGuard<'static, ()> {
    static LOCK: Mutex<()> = Mutex::new(());
    LOCK.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(criterion: u32, pass: bool, detail: &str) {
    // written past the harness's output capture so passing criteria show up too
    let line = format!("criterion {criterion:>2}: {} | {detail}\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(pass, "criterion {criterion} failed: {detail}");
}

fn preset(name: &str) -> ExperimentConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(format!("{name}.toml"));
    let cfg = ExperimentConfig::load(&path, &[]).unwrap();
    cfg.validate().unwrap();
    cfg
}

fn fig2a() -> &'static (ExperimentConfig, ExperimentOutcome) {
    static RUN: OnceLock<(ExperimentConfig, ExperimentOutcome)> = OnceLock::new();
    RUN.get_or_init(|| {
        let cfg = preset("fig2a");
        let out = run_experiment(&cfg, None).unwrap();
        (cfg, out)
    })
}

fn finals(out: &ExperimentOutcome) -> String {
    out.aggregate
        .policies
        .iter()
        .map(|p| format!("{} {:.3}", p.label, p.final_mean))
        .collect::<Vec<_>>()
        .join(", ")
}

fn onl_beats_baselines(out: &ExperimentOutcome) -> bool {
    let onl = out.aggregate.get("onl-mnl").unwrap().final_mean;
    out.aggregate.policies.iter().filter(|p| p.label != "onl-mnl").all(|p| onl < p.final_mean)
}

/// Mean per-round regret over rounds `a+1 ..= b` of a mean cumulative curve.
fn per_round(mean: &[f64], a: usize, b: usize) -> f64 {
    let start = if a == 0 { 0.0 } else { mean[a - 1] };
    (mean[b - 1] - start) / (b - a) as f64
}

#[test]
fn criterion_01_realizable_ordering_and_slope() {
    let _serial = serial();
    let (cfg, out) = fig2a();
    let onl = out.aggregate.get("onl-mnl").unwrap();
    let t0 = cfg.onl_mnl_config(&cfg.policies[0]).unwrap().schedule().t0;
    let phase1 = per_round(&onl.mean, 0, t0);
    let late = per_round(&onl.mean, 500, 1000);
    let ordering = onl_beats_baselines(out);
    let slope = late < 0.5 * phase1;
    report(
        1,
        ordering && slope,
        &format!(
            "final means [{}]; phase I {phase1:.4}/round, rounds 501..1000 {late:.4}/round",
            finals(out)
        ),
    );
}

#[test]
fn criterion_02_misspecified_ordering() {
    let _serial = serial();
    let mut details = Vec::new();
    let mut pass = true;
    for name in ["fig2b", "fig5b"] {
        let cfg = preset(name);
        let out = run_experiment(&cfg, None).unwrap();
        pass &= onl_beats_baselines(&out);
        details.push(format!("{name}: [{}]", finals(&out)));
    }
    report(2, pass, &details.join("; "));
}

fn ls_slope(ys: &[f64], xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

#[test]
fn criterion_03_item_count_scaling() {
    let _serial = serial();
    let mut slopes = Vec::new();
    let mut eps = Vec::new();
    for name in ["fig3_n100", "fig3_n800"] {
        let cfg = preset(name);
        let t0 = cfg.onl_mnl_config(&cfg.policies[0]).unwrap().schedule().t0;
        let out = run_experiment(&cfg, None).unwrap();
        let onl = out.aggregate.get("onl-mnl").unwrap();
        let rounds: Vec<usize> = (t0 + 100..=500).collect();
        let xs: Vec<f64> = rounds.iter().map(|&t| t as f64).collect();
        let ys: Vec<f64> = rounds.iter().map(|&t| onl.mean[t - 1]).collect();
        slopes.push(ls_slope(&ys, &xs));
        eps.push(out.aggregate.get("eps-greedy-mnl").unwrap().final_mean);
    }
    let ratio = slopes[0].max(slopes[1]) / slopes[0].min(slopes[1]);
    let pass = slopes.iter().all(|s| *s > 0.0) && ratio <= 2.0 && eps[1] > eps[0];
    report(
        3,
        pass,
        &format!(
            "onl slopes N=100 {:.5}, N=800 {:.5} (ratio {ratio:.3}); eps-greedy final N=100 {:.3}, N=800 {:.3}",
            slopes[0], slopes[1], eps[0], eps[1]
        ),
    );
}

#[test]
fn criterion_04_sublinear_regret() {
    let _serial = serial();
    let (_, out) = fig2a();
    let mut ratios: Vec<f64> = out
        .runs
        .iter()
        .filter(|r| r.label == "onl-mnl")
        .map(|r| (r.trace.regret_at(1000) / 1000.0) / (r.trace.regret_at(250) / 250.0))
        .collect();
    ratios.sort_by(f64::total_cmp);
    let n = ratios.len();
    let median = if n % 2 == 1 { ratios[n / 2] } else { 0.5 * (ratios[n / 2 - 1] + ratios[n / 2]) };
    report(4, median < 0.6, &format!("median (R(1000)/1000)/(R(250)/250) = {median:.4} over {n} seeds"));
}

#[test]
fn criterion_05_elliptical_potential() {
    let _serial = serial();
    let (cfg, out) = fig2a();
    let schedule = cfg.onl_mnl_config(&cfg.policies[0]).unwrap().schedule();
    let mut worst = f64::INFINITY;
    let mut pass = true;
    let mut runs = 0;
    for r in out.runs.iter().filter(|r| r.label == "onl-mnl") {
        let c_g = r.trace.max_grad_norm().unwrap();
        let check = check_elliptical_potential(&r.trace.potentials(), &schedule, schedule.lambda(), c_g);
        assert_eq!(check.margins.len(), 1000 - schedule.t0);
        pass &= check.pass;
        worst = worst.min(check.worst_margin().unwrap());
        runs += 1;
    }
    report(5, pass && runs == 10, &format!("{runs} runs, worst margin rhs - lhs = {worst:.4}"));
}

#[test]
fn criterion_06_reverse_lipschitz() {
    let _serial = serial();
    let mut pass = true;
    let mut worst = f64::INFINITY;
    for dim in [1, 2, 3] {
        for cap in [0.5, 1.0, 3.0] {
            let r = check_reverse_lipschitz(dim, cap, 10_000, 0);
            assert_eq!(r.margins.len(), 10_000);
            pass &= r.pass;
            worst = worst.min(r.worst_margin().unwrap());
        }
    }
    report(6, pass, &format!("9 (dim, cap) cells x 10^4 pairs, worst margin {worst:.3e}"));
}

/// `||fd - g|| / max(||fd||, ||g||)` with central differences.
fn fd_relative_error(f: impl Fn(&[f64]) -> f64, w: &[f64], g: &[f64]) -> f64 {
    let h = 1e-5;
    let mut p = w.to_vec();
    let mut diff = 0.0;
    let mut scale = 0.0_f64;
    let mut gn = 0.0;
    for j in 0..w.len() {
        p[j] = w[j] + h;
        let up = f(&p);
        p[j] = w[j] - h;
        let down = f(&p);
        p[j] = w[j];
        let fd = (up - down) / (2.0 * h);
        diff += (fd - g[j]).powi(2);
        scale += fd * fd;
        gn += g[j] * g[j];
    }
    diff.sqrt() / scale.max(gn).sqrt().max(1e-12)
}

fn random_params(rng: &mut impl Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

fn random_records(model: &dyn UtilityModel, rounds: usize, n: usize, k: usize, rng: &mut impl Rng) -> Vec<ChoiceRecord> {
    (0..rounds)
        .map(|t| {
            let items = (0..n).map(|_| random_params(rng, model.input_dim(), 1.0)).collect();
            let ctx = Arc::new(ContextSet::new(items, t + 1).unwrap());
            let s = uniform_assortment_sample(n, k, rng).unwrap();
            let chosen = rng.random_range(0..=s.len()).checked_sub(1).map(|p| s.items()[p]);
            ChoiceRecord::new(ctx, s, chosen).unwrap()
        })
        .collect()
}

#[test]
fn criterion_07_gradient_suites() {
    let _serial = serial();
    let start = Instant::now();
    let mut rng = stream(7, Stream::Audit);
    let mut worst = [0.0_f64; 3];
    let models = [
        ModelKind::TwoLayer { input_dim: 3, hidden: 3 }.build(),
        ModelKind::TwoLayer { input_dim: 4, hidden: 15 }.build(),
        ModelKind::Cosine { dim: 3 }.build(),
        ModelKind::Linear { dim: 5 }.build(),
    ];
    for inst in 0..100 {
        let model = models[inst % models.len()].as_ref();
        let dw = model.param_dim();

        let w = random_params(&mut rng, dw, 1.0);
        let x = random_params(&mut rng, model.input_dim(), 1.0);
        let mut g = vec![0.0; dw];
        model.eval_grad(&w, &x, &mut g);
        worst[0] = worst[0].max(fd_relative_error(|p| model.eval(p, &x), &w, &g));

        let records = random_records(model, 8, 6, 3, &mut rng);
        let loss = PilotLoss::new(&records, model);
        let wp = ParamVector(w.clone());
        let (_, g) = loss.value_and_grad(&wp).unwrap();
        worst[1] = worst[1].max(fd_relative_error(|p| loss.value(&ParamVector(p.to_vec())).unwrap(), &w, &g.0));

        let center = ParamVector(random_params(&mut rng, dw, 1.0));
        let mut lin = LinearizedLoss::new(rng.random_range(0.1..2.0), center).unwrap();
        for r in &records {
            let anchor_point = ParamVector(random_params(&mut rng, dw, 1.0));
            let anchor = Anchor::compute(model, &anchor_point, &r.context, &r.assortment).unwrap();
            lin.push(&anchor, r.chosen_position()).unwrap();
        }
        let (_, g) = lin.value_and_grad(&wp).unwrap();
        worst[2] = worst[2].max(fd_relative_error(|p| lin.value(&ParamVector(p.to_vec())).unwrap(), &w, &g.0));
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst.iter().all(|&e| e <= 1e-4) && secs < 10.0;
    report(
        7,
        pass,
        &format!(
            "worst relative error: network {:.2e}, pilot {:.2e}, linearized {:.2e}; {secs:.2}s",
            worst[0], worst[1], worst[2]
        ),
    );
}

/// Enumerates every non-empty subset of size at most `k` with its own reward formula.
fn enumerate_best(u: &[f64], r: &[f64], k: usize) -> f64 {
    let n = u.len();
    let mut best = f64::NEG_INFINITY;
    for mask in 1u32..(1 << n) {
        if mask.count_ones() as usize > k {
            continue;
        }
        let (mut num, mut den) = (0.0, 1.0);
        for i in (0..n).filter(|i| mask >> i & 1 == 1) {
            num += r[i] * u[i].exp();
            den += u[i].exp();
        }
        best = best.max(num / den);
    }
    best
}

#[test]
fn criterion_08_assortment_oracle() {
    let _serial = serial();
    let mut rng = stream(8, Stream::Audit);
    let brute = AssortmentSolver::new(SolverMethod::BruteForce);
    let topk = AssortmentSolver::new(SolverMethod::TopKUniform);
    let (mut worst, mut worst_topk, mut uniform_cases) = (0.0_f64, 0.0_f64, 0);
    for inst in 0..1000 {
        let n = rng.random_range(1..=10);
        let k = rng.random_range(1..=4.min(n));
        let u = random_params(&mut rng, n, 3.0);
        let uniform = inst % 3 == 0;
        let r: Vec<f64> = if uniform {
            vec![rng.random_range(0.2..=1.0); n]
        } else {
            (0..n).map(|_| rng.random_range(0.0..=1.0)).collect()
        };
        let rev = RevenueVector::new(r.clone()).unwrap();
        let reference = enumerate_best(&u, &r, k);
        let sol = best_assortment(&u, &rev, k, &brute).unwrap();
        assert!(sol.assortment.len() <= k);
        worst = worst.max((sol.reward - reference).abs());
        if uniform {
            uniform_cases += 1;
            let t = best_assortment(&u, &rev, k, &topk).unwrap();
            worst_topk = worst_topk.max((t.reward - reference).abs());
        }
    }
    report(
        8,
        worst <= 1e-12 && worst_topk <= 1e-12,
        &format!("1000 instances, max |brute - enumerator| {worst:.1e}; {uniform_cases} uniform-revenue top-K, max gap {worst_topk:.1e}"),
    );
}

#[test]
fn criterion_09_numerical_hygiene() {
    let _serial = serial();
    let mut rng = stream(9, Stream::Audit);
    let mut worst_norm = 0.0_f64;
    for inst in 0..2000 {
        let n = rng.random_range(1..=10);
        let mut u = random_params(&mut rng, n, 700.0);
        if inst % 4 == 0 {
            u[0] = if inst % 8 == 0 { 700.0 } else { -700.0 };
        }
        let p = choice_probabilities(&u).unwrap();
        assert!(p.p_items.iter().chain([&p.p_outside]).all(|v| (0.0..=1.0).contains(v)));
        worst_norm = worst_norm.max((p.total() - 1.0).abs());
    }
    for extreme in [vec![700.0; 5], vec![-700.0; 5], vec![700.0, -700.0, 0.0]] {
        worst_norm = worst_norm.max((choice_probabilities(&extreme).unwrap().total() - 1.0).abs());
    }

    let mut worst_drift = 0.0_f64;
    for dw in [8, 32, 64] {
        let mut g = GramState::new(dw, 1.0).unwrap().with_refresh_every(usize::MAX);
        for _ in 0..1000 {
            let grads: Vec<Vec<f64>> = (0..5).map(|_| random_params(&mut rng, dw, 1.0 / (dw as f64).sqrt())).collect();
            g.update(&grads).unwrap();
        }
        worst_drift = worst_drift.max(g.inverse_drift());
    }
    report(
        9,
        worst_norm <= 1e-12 && worst_drift <= 1e-8,
        &format!("max |sum p - 1| = {worst_norm:.1e}; max drift after 1000 updates (d_w 8/32/64) = {worst_drift:.1e}"),
    );
}

#[test]
fn criterion_10_pilot_scaling() {
    let _serial = serial();
    let table = check_pilot_convergence(&PilotConvergenceConfig::default()).unwrap();
    let ratios: Vec<String> = table
        .median_ratios
        .iter()
        .map(|(a, b, r)| format!("{a}->{b}: {r:.3}"))
        .collect();
    report(10, table.passes(0.75), &format!("median function-error ratios {}", ratios.join(", ")));
}
