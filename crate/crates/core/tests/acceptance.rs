//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.
//!
//! Training artifacts (logs, checkpoints, qgrid.csv) are kept under the
//! cargo target tmpdir in `acceptance/`.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use hiusac_core::config::ExperimentConfig;
use hiusac_core::gauss::{CompositionRule, LinearComposition, ProductComposition};
use hiusac_core::grad::{Adam, AdamConfig, ParamSet, Tensor};
use hiusac_core::nets::{is_task_param, is_weight_param, Checkpoint, HierarchicalPolicyNet, MultiHeadQNet};
use hiusac_core::qgrid::{argmax_action, qgrid, write_qgrid, GridSpec};
use hiusac_core::trainer::losses::{composable_policy_loss, compound_policy_loss};
use hiusac_core::trainer::{run_experiment, TaskMetrics, TRAIN_LOG};
use hiusac_core::verify::{grad_suite, linear_oracle, product_oracle, GradSuite};

struct Criterion {
    name: &'static str,
    passed: bool,
    detail: String,
}

fn report(out: &mut Vec<Criterion>, name: &'static str, passed: bool, detail: String) {
    println!("{} {name}: {detail}", if passed { "PASS" } else { "FAIL" });
    out.push(Criterion { name, passed, detail });
}

fn secs(d: Duration) -> String {
    format!("{:.1} s", d.as_secs_f64())
}

fn work_dir() -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn linear_composition(out: &mut Vec<Criterion>) {
    let t = Instant::now();
    let r = linear_oracle(100, 1_000_000, 11).unwrap();
    let elapsed = t.elapsed();
    let ok = r.passed() && elapsed < Duration::from_secs(30);
    report(out, "linear composition matches Monte-Carlo moments", ok, format!("{r}, {}", secs(elapsed)));
}

fn product_composition(out: &mut Vec<Criterion>) {
    let t = Instant::now();
    let r = product_oracle(100, 200_001, 12).unwrap();
    let elapsed = t.elapsed();
    let ok = r.passed() && elapsed < Duration::from_secs(30);
    report(out, "product composition matches grid moments", ok, format!("{r}, {}", secs(elapsed)));
}

fn gradients(out: &mut Vec<Criterion>) {
    let t = Instant::now();
    let results = grad_suite(&GradSuite::default()).unwrap();
    let elapsed = t.elapsed();
    let worst = results.iter().map(|r| r.error).fold(0.0, f64::max);
    let failed: Vec<String> = results.iter().filter(|r| !r.passed()).map(|r| r.to_string()).collect();
    let min_cases = results.iter().map(|r| r.cases).min().unwrap_or(0);
    let ok = failed.is_empty() && min_cases >= 20 && elapsed < Duration::from_secs(120);
    report(
        out,
        "every loss passes finite-difference checks",
        ok,
        format!(
            "{} checks, worst relative error {worst:.2e}, {min_cases}+ draws each, {}{}",
            results.len(),
            secs(elapsed),
            if failed.is_empty() { String::new() } else { format!("; {}", failed.join("; ")) }
        ),
    );
}

fn normal(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::new(vec![rows, cols], data).unwrap()
}

fn changed(before: &ParamSet, after: &ParamSet, keep: impl Fn(&str) -> bool) -> (usize, usize) {
    let (mut moved, mut total) = (0, 0);
    for (name, t) in before.iter().filter(|(n, _)| keep(n)) {
        total += 1;
        let now = after.get(name).unwrap();
        if t.data().iter().zip(now.data()).any(|(a, b)| a.to_bits() != b.to_bits()) {
            moved += 1;
        }
    }
    (moved, total)
}

fn partition(out: &mut Vec<Criterion>) {
    let mut problems = Vec::new();
    let mut steps = 0;
    for (seed, rule) in [
        (0u64, Arc::new(LinearComposition) as Arc<dyn CompositionRule>),
        (1, Arc::new(ProductComposition)),
    ] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut policy = HierarchicalPolicyNet::new(2, 2, 2, 16, vec![4.0, 4.0], rule, &mut rng).unwrap();
        let q = [
            MultiHeadQNet::new(2, 2, 3, 16, &mut rng).unwrap(),
            MultiHeadQNet::new(2, 2, 3, 16, &mut rng).unwrap(),
        ];
        let mut task_opt = Adam::new(AdamConfig::with_lr(3e-4));
        let mut weight_opt = Adam::new(AdamConfig::with_lr(3e-4));
        for _ in 0..5 {
            let states = normal(&mut rng, 8, 2);
            let noise = [normal(&mut rng, 8, 2), normal(&mut rng, 8, 2), normal(&mut rng, 8, 2)];

            let before = policy.params.clone();
            let grads = composable_policy_loss(&q, &policy, &states, &[0.2, 0.3], &noise[..2]).unwrap().grads;
            task_opt.step(&mut policy.params, &grads).unwrap();
            let (w_moved, _) = changed(&before, &policy.params, is_weight_param);
            let (t_moved, _) = changed(&before, &policy.params, is_task_param);
            if w_moved > 0 || t_moved == 0 {
                problems.push(format!("composable step moved {w_moved} weight tensors, {t_moved} task tensors"));
            }

            let before = policy.params.clone();
            let grads = compound_policy_loss(&q, &policy, &states, 0.4, &noise[2]).unwrap().grads;
            weight_opt.step(&mut policy.params, &grads).unwrap();
            let (w_moved, _) = changed(&before, &policy.params, is_weight_param);
            let (t_moved, _) = changed(&before, &policy.params, is_task_param);
            if t_moved > 0 || w_moved == 0 {
                problems.push(format!("compound step moved {t_moved} task tensors, {w_moved} weight tensors"));
            }
            steps += 2;
        }
    }
    let ok = problems.is_empty();
    report(
        out,
        "composable and compound steps stay in their partitions",
        ok,
        if ok {
            format!("{steps} optimizer steps over both rules, bit-exact")
        } else {
            problems.join("; ")
        },
    );
}

struct NavRun {
    algo: String,
    seed: u64,
    dir: PathBuf,
    metrics: Vec<TaskMetrics>,
}

impl NavRun {
    fn distance(&self, label: &str) -> f64 {
        self.metrics.iter().find(|m| m.task == label).map(|m| m.final_distance).unwrap_or(f64::NAN)
    }
}

fn train(root: &Path, algo: &str, seed: u64) -> NavRun {
    let mut cfg = ExperimentConfig::defaults("nav2d", algo);
    cfg.seed = seed;
    cfg.checkpoint_interval = 0;
    cfg.out_dir = root.join(format!("{algo}_seed{seed}"));
    let t = Instant::now();
    let summary = run_experiment(&cfg).unwrap();
    let dists: Vec<String> = summary
        .final_metrics
        .iter()
        .map(|m| format!("{}={:.3}", m.task, m.final_distance))
        .collect();
    println!("  trained {algo} seed {seed} in {}: {}", secs(t.elapsed()), dists.join(" "));
    NavRun {
        algo: algo.to_string(),
        seed,
        dir: cfg.out_dir,
        metrics: summary.final_metrics,
    }
}

fn reproduction(out: &mut Vec<Criterion>, runs: &[NavRun]) {
    let sac: Vec<&NavRun> = runs.iter().filter(|r| r.algo == "sac").collect();
    let sac_ok = sac.iter().filter(|r| r.distance("M") < 0.5).count();
    println!("  single-task baseline reaches the goal in {sac_ok}/{} seeds", sac.len());
    for algo in ["hiusac-1", "hiusac-2"] {
        let mut lines = Vec::new();
        let mut good = 0;
        for run in runs.iter().filter(|r| r.algo == algo) {
            let baseline = sac.iter().find(|s| s.seed == run.seed).map(|s| s.distance("M")).unwrap_or(f64::NAN);
            let (m, d1, d2) = (run.distance("M"), run.distance("1"), run.distance("2"));
            let checks = [m < 0.5, d1 < 0.5, d2 < 0.5, (m - baseline).abs() < 0.3];
            let all = checks.iter().all(|&c| c);
            good += usize::from(all);
            lines.push(format!(
                "seed {} {}: M {m:.3} (baseline {baseline:.3}), |x+2| {d1:.3}, |y+2| {d2:.3}",
                run.seed,
                if all { "ok" } else { "miss" }
            ));
        }
        for l in &lines {
            println!("  {algo} {l}");
        }
        let name = if algo == "hiusac-1" {
            "nav2d reproduction, linear composition"
        } else {
            "nav2d reproduction, product composition"
        };
        report(out, name, good >= 4, format!("{good}/5 seeds meet every target (need 4)"));
    }
}

fn action_field(out: &mut Vec<Criterion>, runs: &[NavRun]) {
    let run = runs.iter().find(|r| r.algo == "hiusac-1" && r.seed == 0).unwrap();
    let ckpt = Checkpoint::load(&run.dir.join("checkpoints/final.json")).unwrap();
    let rows = qgrid(&ckpt, &GridSpec::default()).unwrap();
    write_qgrid(&run.dir.join("qgrid.csv"), &rows).unwrap();
    let start = [4.0, 4.0];
    let a1 = argmax_action(&rows, "1", start).unwrap();
    let a2 = argmax_action(&rows, "2", start).unwrap();
    let am = argmax_action(&rows, "M", start).unwrap();
    let finite = rows.iter().all(|r| r.q_value.is_finite());
    let ok = finite && a1[0] < 0.0 && a2[1] < 0.0 && am[0] < 0.0 && am[1] < 0.0;
    report(
        out,
        "soft-Q argmax at (4,4) points toward each target",
        ok,
        format!("task 1 {a1:?}, task 2 {a2:?}, compound {am:?} ({} rows)", rows.len()),
    );
}

fn determinism(out: &mut Vec<Criterion>, root: &Path) {
    let logs: Vec<Vec<u8>> = ["a", "b"]
        .iter()
        .map(|tag| {
            let mut cfg = ExperimentConfig::defaults("nav2d", "hiusac-2");
            cfg.seed = 9;
            cfg.total_steps = 2000;
            cfg.eval_interval = 500;
            cfg.checkpoint_interval = 0;
            cfg.out_dir = root.join(format!("determinism_{tag}"));
            run_experiment(&cfg).unwrap();
            std::fs::read(cfg.out_dir.join(TRAIN_LOG)).unwrap()
        })
        .collect();
    let ok = logs[0] == logs[1] && !logs[0].is_empty();
    report(
        out,
        "identical config and seed give identical train_log.csv",
        ok,
        format!("{} bytes each, {}", logs[0].len(), if ok { "byte-identical" } else { "differ" }),
    );
}

fn main() {
    // `cargo test -- --list` and filters should not start the long run.
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let root = work_dir();
    let mut out = Vec::new();
    linear_composition(&mut out);
    product_composition(&mut out);
    gradients(&mut out);
    partition(&mut out);
    determinism(&mut out, &root);

    let t = Instant::now();
    let mut runs = Vec::new();
    for algo in ["sac", "hiusac-1", "hiusac-2"] {
        for seed in 0..5 {
            runs.push(train(&root, algo, seed));
        }
    }
    println!("  15 training runs took {}", secs(t.elapsed()));
    reproduction(&mut out, &runs);
    action_field(&mut out, &runs);

    let failed: Vec<&str> = out.iter().filter(|c| !c.passed).map(|c| c.name).collect();
    println!("acceptance: {} criteria, {} failed", out.len(), failed.len());
    if !failed.is_empty() {
        for c in out.iter().filter(|c| !c.passed) {
            eprintln!("failed: {} ({})", c.name, c.detail);
        }
        std::process::exit(1);
    }
}
