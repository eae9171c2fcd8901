//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use conveyance::noise::{build_transition, NoiseSpec};
use conveyance::par::Execution;
use conveyance::{
    conveyance_grad, conveyance_loss_logits, conveyance_loss_prob, naive_probability_loss, LogitVector,
    LossParams, PlausibleSet, ProbVector,
};
use conveyance_cli::commands::{loss_eval, run_experiment, LossEvalArgs, RunOverrides};
use conveyance_cli::config::{ExperimentConfig, ExperimentKind};
use conveyance_cli::experiments::{self, ExperimentOutcome, METHOD_CE, METHOD_CE_CLEAN, METHOD_CONVEYANCE};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_logits(r: &mut ChaCha8Rng, c: usize, scale: f64) -> Vec<f64> {
    (0..c).map(|_| r.random_range(-scale..=scale)).collect()
}

fn random_set(r: &mut ChaCha8Rng, c: usize, t: usize) -> PlausibleSet {
    let mask: Vec<bool> = (0..c).map(|_| r.random_bool(0.4)).collect();
    PlausibleSet::new(mask, t).unwrap()
}

fn random_params(r: &mut ChaCha8Rng) -> LossParams {
    let alpha = 10f64.powf(r.random_range(-2.0..=2.0));
    let beta = 10f64.powf(r.random_range(-2.0..=2.0));
    LossParams::new(alpha, beta).unwrap()
}

fn stable_loss(z: &[f64], s: &PlausibleSet, p: &LossParams) -> f64 {
    conveyance_loss_logits(&LogitVector::new(z.to_vec()).unwrap(), s, p)
        .unwrap()
        .loss
}

/// Independent reference: `-log softmax(z)_t` with a max shift.
fn reference_ce(z: &[f64], t: usize) -> f64 {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = z.iter().map(|v| (v - m).exp()).sum();
    m + sum.ln() - z[t]
}

fn ce_reduction() -> Verdict {
    let mut r = rng(1);
    let params = LossParams::new(1.0, 0.0).unwrap();
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let c = r.random_range(2..=50);
        let t = r.random_range(0..c);
        let z = random_logits(&mut r, c, 10.0);
        let s = random_set(&mut r, c, t);
        worst = worst.max((stable_loss(&z, &s, &params) - reference_ce(&z, t)).abs());
    }
    verdict(worst < 1e-12, format!("max |diff| = {worst:.3e}"))
}

fn form_equivalence() -> Verdict {
    let mut r = rng(2);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let c = r.random_range(2..=50);
        let t = r.random_range(0..c);
        let z = LogitVector::new(random_logits(&mut r, c, 20.0)).unwrap();
        let s = random_set(&mut r, c, t);
        let p = random_params(&mut r);
        let stable = conveyance_loss_logits(&z, &s, &p).unwrap().loss;
        let prob = conveyance_loss_prob(&ProbVector::from_logits(&z), &s, &p).unwrap();
        worst = worst.max((stable - prob).abs() / stable.abs().max(f64::MIN_POSITIVE));
    }
    verdict(worst < 1e-10, format!("max relative diff = {worst:.3e}"))
}

fn stability() -> Verdict {
    let mut r = rng(3);
    let (mut finite, mut naive_broken) = (0usize, 0usize);
    let n = 1000;
    for _ in 0..n {
        let c = r.random_range(2..=50);
        let t = r.random_range(0..c);
        let scale = r.random_range(1e3..=1e4);
        let mut z = random_logits(&mut r, c, scale);
        let big = r.random_range(0..c);
        z[big] = scale;
        let s = random_set(&mut r, c, t);
        let p = random_params(&mut r);
        let zv = LogitVector::new(z.clone()).unwrap();
        let loss = conveyance_loss_logits(&zv, &s, &p).unwrap().loss;
        let grad = conveyance_grad(&zv, &s, &p).unwrap();
        if loss.is_finite() && grad.iter().all(|g| g.is_finite()) {
            finite += 1;
        }
        let naive = naive_probability_loss(&z, &s, &p);
        if !naive.is_finite() || (naive - loss).abs() > 1e-6 * loss.abs().max(1.0) {
            naive_broken += 1;
        }
    }
    verdict(
        finite == n && naive_broken == n,
        format!("stable finite {finite}/{n}, naive overflowed or saturated {naive_broken}/{n}"),
    )
}

fn gradient_check() -> Verdict {
    let mut r = rng(4);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let c = r.random_range(2..=50);
        let t = r.random_range(0..c);
        let z = random_logits(&mut r, c, 5.0);
        let s = random_set(&mut r, c, t);
        let p = random_params(&mut r);
        let g = conveyance_grad(&LogitVector::new(z.clone()).unwrap(), &s, &p).unwrap();
        for k in 0..c {
            let mut up = z.clone();
            let mut down = z.clone();
            up[k] += h;
            down[k] -= h;
            let fd = (stable_loss(&up, &s, &p) - stable_loss(&down, &s, &p)) / (2.0 * h);
            let rel = (g[k] - fd).abs() / g[k].abs().max(fd.abs()).max(1e-3);
            worst = worst.max(rel);
        }
    }
    verdict(worst < 1e-6, format!("max relative error = {worst:.3e}"))
}

/// Moves probability mass out of `N` into `t` and the rest of `S`, so that
/// both `p_t` and `p_S` grow.
fn reallocate(r: &mut ChaCha8Rng, p: &[f64], s: &PlausibleSet) -> Option<Vec<f64>> {
    let t = s.target();
    let mut q = p.to_vec();
    let n: Vec<usize> = (0..p.len()).filter(|&c| !s.contains(c)).collect();
    let p_n: f64 = n.iter().map(|&c| p[c]).sum();
    if p_n <= 1e-6 {
        return None;
    }
    let frac = r.random_range(0.01..=0.9);
    let mut moved = 0.0;
    for &c in &n {
        let d = q[c] * frac;
        q[c] -= d;
        moved += d;
    }
    let to_t = moved * r.random_range(0.1..=1.0);
    q[t] += to_t;
    let others: Vec<usize> = s.members().into_iter().filter(|&c| c != t).collect();
    let rest = moved - to_t;
    if others.is_empty() {
        q[t] += rest;
    } else {
        for &c in &others {
            q[c] += rest / others.len() as f64;
        }
    }
    Some(q)
}

fn monotonicity() -> Verdict {
    let mut r = rng(5);
    let (mut trials, mut violations) = (0usize, 0usize);
    let mut worst = f64::NEG_INFINITY;
    while trials < 10_000 {
        let c = r.random_range(2..=50);
        let t = r.random_range(0..c);
        let z = LogitVector::new(random_logits(&mut r, c, 4.0)).unwrap();
        let s = random_set(&mut r, c, t);
        let params = random_params(&mut r);
        let p = ProbVector::from_logits(&z);
        let Some(q) = reallocate(&mut r, p.as_slice(), &s) else {
            continue;
        };
        let p_s: f64 = s.members().iter().map(|&c| p.as_slice()[c]).sum();
        let q_s: f64 = s.members().iter().map(|&c| q[c]).sum();
        if !(q[t] > p.as_slice()[t] && q_s > p_s) {
            continue;
        }
        trials += 1;
        let before = conveyance_loss_prob(&p, &s, &params).unwrap();
        let after = conveyance_loss_prob(&ProbVector::new(q).unwrap(), &s, &params).unwrap();
        worst = worst.max(after - before);
        if after - before > 1e-12 {
            violations += 1;
        }
    }
    verdict(
        violations == 0 && worst < 0.0,
        format!("{violations} violations in {trials} reallocations, largest change {worst:.3e}"),
    )
}

fn midpoint_gap(z1: &[f64], z2: &[f64], s: &PlausibleSet, p: &LossParams) -> f64 {
    let mid: Vec<f64> = z1.iter().zip(z2).map(|(a, b)| 0.5 * (a + b)).collect();
    stable_loss(&mid, s, p) - 0.5 * (stable_loss(z1, s, p) + stable_loss(z2, s, p))
}

fn convexity() -> Verdict {
    let mut r = rng(6);
    let mut worst_partial = f64::NEG_INFINITY;
    let mut partial_bad = 0usize;
    for _ in 0..10_000 {
        let c = r.random_range(2..=50);
        let t = r.random_range(0..c);
        let s = random_set(&mut r, c, t);
        let p = random_params(&mut r);
        let z1 = random_logits(&mut r, c, 8.0);
        let mut z2 = random_logits(&mut r, c, 8.0);
        for k in s.members() {
            z2[k] = z1[k];
        }
        let gap = midpoint_gap(&z1, &z2, &s, &p);
        worst_partial = worst_partial.max(gap);
        partial_bad += usize::from(gap > 1e-10);
    }
    let mut worst_full = f64::NEG_INFINITY;
    let mut full_bad = 0usize;
    for _ in 0..10_000 {
        let c = r.random_range(2..=50);
        let t = r.random_range(0..c);
        let s = PlausibleSet::singleton(c, t).unwrap();
        let p = random_params(&mut r);
        let z1 = random_logits(&mut r, c, 8.0);
        let z2 = random_logits(&mut r, c, 8.0);
        let gap = midpoint_gap(&z1, &z2, &s, &p);
        worst_full = worst_full.max(gap);
        full_bad += usize::from(gap > 1e-10);
    }
    verdict(
        partial_bad == 0 && full_bad == 0,
        format!(
            "N-logit violations {partial_bad} (max gap {worst_partial:.2e}), |S|=1 violations {full_bad} (max gap {worst_full:.2e})"
        ),
    )
}

fn transition_exactness() -> Verdict {
    let mut problems = Vec::new();
    let mut check = |name: &str, spec: NoiseSpec, c: usize, expect: &dyn Fn(usize, usize) -> f64| {
        let t = build_transition(&spec, c).unwrap();
        for i in 0..c {
            let sum: f64 = t.row(i).iter().sum();
            if (sum - 1.0).abs() > 1e-12 {
                problems.push(format!("{name} row {i} sums to {sum}"));
            }
            for j in 0..c {
                if t.get(i, j) != expect(i, j) {
                    problems.push(format!("{name} T[{i}][{j}] = {} expected {}", t.get(i, j), expect(i, j)));
                }
            }
        }
    };
    check("column", NoiseSpec::column_cifar10(), 10, &|i, j| match (i, j) {
        (3, 3) | (5, 5) => 0.6,
        (3, 5) | (5, 3) => 0.4,
        (i, j) if i == j => 0.4,
        (_, 3) | (_, 5) => 0.3,
        _ => 0.0,
    });
    let pairs = [(9, 1), (2, 0), (3, 5), (4, 7)];
    check("asymmetric", NoiseSpec::asymmetric_cifar10(), 10, &|i, j| {
        let flips = pairs.iter().any(|&(s, _)| s == i);
        if i == j {
            if flips {
                0.55
            } else {
                1.0
            }
        } else if pairs.contains(&(i, j)) {
            0.45
        } else {
            0.0
        }
    });
    check(
        "cyclic",
        NoiseSpec::CyclicSuperclass { eta: 0.6, group_size: 5 },
        20,
        &|i, j| {
            if i == j {
                0.4
            } else if j == i / 5 * 5 + (i % 5 + 1) % 5 {
                0.6
            } else {
                0.0
            }
        },
    );
    check(
        "block",
        NoiseSpec::BlockSuperclass { eta: 0.6, group_size: 5 },
        20,
        &|i, j| {
            if i == j {
                0.4
            } else if i / 5 == j / 5 {
                0.15
            } else {
                0.0
            }
        },
    );
    let n = problems.len();
    let detail = if n == 0 {
        "all entries exact, rows sum to 1".to_string()
    } else {
        format!("{n} mismatches, first: {}", problems[0])
    };
    verdict(n == 0, detail)
}

fn mean(o: &ExperimentOutcome, method: &str) -> f64 {
    o.mean_accuracy(method).unwrap_or(f64::NAN)
}

fn noise_recovery() -> Verdict {
    let cfg = ExperimentConfig::defaults(ExperimentKind::NoiseRecovery);
    let o = experiments::run(&cfg, Execution::default()).unwrap();
    let (ce, conv) = (mean(&o, METHOD_CE), mean(&o, METHOD_CONVEYANCE));
    let diag = |m: &str| o.summary_for(m).unwrap().diagonal_mass.as_ref().unwrap().mean;
    let (d_ce, d_conv) = (diag(METHOD_CE), diag(METHOD_CONVEYANCE));
    verdict(
        conv - ce >= 0.10 && d_conv > d_ce,
        format!(
            "CE {:.2}%, Conveyance {:.2}% (+{:.2} pts); diagonal mass {d_ce:.3} vs {d_conv:.3}",
            100.0 * ce,
            100.0 * conv,
            100.0 * (conv - ce)
        ),
    )
}

fn asymmetric_recovery() -> Verdict {
    let mut cfg = ExperimentConfig::defaults(ExperimentKind::NoiseRecovery);
    cfg.noise = Some(NoiseSpec::asymmetric_cifar10());
    let o = experiments::run(&cfg, Execution::default()).unwrap();
    let (clean, conv) = (mean(&o, METHOD_CE_CLEAN), mean(&o, METHOD_CONVEYANCE));
    verdict(
        (clean - conv).abs() <= 0.03,
        format!(
            "clean CE {:.2}%, Conveyance on noisy {:.2}% (gap {:.2} pts)",
            100.0 * clean,
            100.0 * conv,
            100.0 * (clean - conv)
        ),
    )
}

fn sweep_landscape() -> Verdict {
    let cfg = ExperimentConfig::defaults(ExperimentKind::Sweep);
    let o = experiments::run(&cfg, Execution::default()).unwrap();
    let ce = mean(&o, METHOD_CE);
    let grid = cfg.sweep.as_ref().unwrap();
    let mut best = (f64::NEG_INFINITY, 0.0, 0.0);
    let mut worst_collapse: f64 = 0.0;
    for &a in &grid.alpha_values {
        for &b in &grid.beta_values {
            let acc = o.cell(a, b).unwrap().accuracy.as_ref().unwrap().mean;
            if acc > best.0 {
                best = (acc, a, b);
            }
            if a >= 100.0 {
                worst_collapse = worst_collapse.max((acc - ce).abs());
            }
        }
    }
    let peak_ok = best.1 <= 1.0 && best.2 >= 1.0;
    let collapse_ok = worst_collapse <= 0.03;
    verdict(
        peak_ok && collapse_ok,
        format!(
            "best cell alpha={} beta={} at {:.2}% ({}); alpha>=100 cells within {:.2} pts of CE {:.2}% ({})",
            best.1,
            best.2,
            100.0 * best.0,
            if peak_ok { "ok" } else { "misplaced" },
            100.0 * worst_collapse,
            100.0 * ce,
            if collapse_ok { "ok" } else { "too far" },
        ),
    )
}

fn mil_asymmetry() -> Verdict {
    let cfg = ExperimentConfig::defaults(ExperimentKind::MilToy);
    let o = experiments::run(&cfg, Execution::default()).unwrap();
    let (ce, conv) = (mean(&o, METHOD_CE), mean(&o, METHOD_CONVEYANCE));
    let recall = |m: &str, f: fn(&experiments::RunMetrics) -> Option<f64>| {
        let v: Vec<f64> = o.runs_for(m).filter_map(|r| r.metrics.as_ref().and_then(f)).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let in_pos = |m: &str| recall(m, |x| x.negative_recall_in_positive_bags);
    let in_neg = |m: &str| recall(m, |x| x.negative_recall_in_negative_bags);
    let (ce_pos, conv_pos) = (in_pos(METHOD_CE), in_pos(METHOD_CONVEYANCE));
    let conv_drop = in_neg(METHOD_CONVEYANCE) - conv_pos;
    // CE counts as degraded when it trails Conveyance by 10 points on these
    // instances; Conveyance is not degraded when it does as well on them as on
    // negatives from negative bags, within 5 points.
    let ok = conv >= ce && conv_pos - ce_pos >= 0.10 && conv_drop <= 0.05;
    verdict(
        ok,
        format!(
            "instance accuracy CE {:.2}% vs Conveyance {:.2}%; recall of negatives in positive bags CE {:.2}% vs Conveyance {:.2}% (Conveyance {:.2} pts below its negative-bag recall)",
            100.0 * ce,
            100.0 * conv,
            100.0 * ce_pos,
            100.0 * conv_pos,
            100.0 * conv_drop
        ),
    )
}

fn toy2d() -> Verdict {
    let cfg = ExperimentConfig::defaults(ExperimentKind::Toy2d);
    let o = experiments::run(&cfg, Execution::default()).unwrap();
    let (ce, conv) = (mean(&o, METHOD_CE), mean(&o, METHOD_CONVEYANCE));
    verdict(
        conv >= ce,
        format!("CE {:.3}%, Conveyance {:.3}% over {} seeds", 100.0 * ce, 100.0 * conv, cfg.seeds.len()),
    )
}

fn metric_files(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap() != "timing.json")
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

fn determinism() -> Verdict {
    let root = tempfile::tempdir().unwrap();
    let config = root.path().join("small.toml");
    std::fs::write(
        &config,
        "seeds = [0, 1]\n[dataset]\nn_per_class = 40\ntest_n_per_class = 40\nn_bags = 20\ngrid_resolution = 8\n\
         [train]\nepochs = 3\n[sweep]\nalpha_values = [0.1, 100.0]\nbeta_values = [1.0, 10.0]\n",
    )
    .unwrap();
    let mut mismatched = Vec::new();
    let kinds = [
        ExperimentKind::Toy2d,
        ExperimentKind::NoiseRecovery,
        ExperimentKind::Sweep,
        ExperimentKind::MilToy,
    ];
    for kind in kinds {
        let mut outputs = Vec::new();
        let modes = [Execution::default(), Execution::default(), Execution::Sequential];
        for (k, exec) in modes.into_iter().enumerate() {
            let out = root.path().join(format!("{}_{k}", kind.name()));
            let o = RunOverrides {
                config: Some(config.clone()),
                out: Some(out.clone()),
                ..Default::default()
            };
            run_experiment(kind, &o, exec).unwrap();
            outputs.push(metric_files(&out));
        }
        for other in &outputs[1..] {
            if &outputs[0] != other {
                let names: Vec<&str> = outputs[0]
                    .iter()
                    .zip(other)
                    .filter(|(a, b)| a != b)
                    .map(|(a, _)| a.0.as_str())
                    .collect();
                mismatched.push(format!("{} ({})", kind.name(), names.join(" ")));
            }
        }
    }
    let dir = root.path();
    std::fs::write(dir.join("z.txt"), "2 1 0 -1\n").unwrap();
    std::fs::write(dir.join("q.txt"), "1 1 0 0\n1 1 0 0\n0 0 1 0\n0 0 0 1\n").unwrap();
    std::fs::write(dir.join("t.txt"), "0\n").unwrap();
    let eval = |out: &str| {
        let args = LossEvalArgs {
            logits: dir.join("z.txt"),
            q: dir.join("q.txt"),
            targets: dir.join("t.txt"),
            alpha: 0.1,
            beta: 10.0,
            out: Some(dir.join(out)),
        };
        loss_eval(&args).unwrap();
        metric_files(&dir.join(out))
    };
    if eval("le0") != eval("le1") {
        mismatched.push("loss_eval".to_string());
    }
    let detail = if mismatched.is_empty() {
        format!("{} commands byte-identical across repeats and execution modes", kinds.len() + 1)
    } else {
        format!("outputs differ for {}", mismatched.join(", "))
    };
    verdict(mismatched.is_empty(), detail)
}

type Criterion = (&'static str, Duration, fn() -> Verdict);

fn main() -> ExitCode {
    let criteria: [Criterion; 13] = [
        ("CE reduction", Duration::from_secs(5), ce_reduction),
        ("form equivalence", Duration::from_secs(10), form_equivalence),
        ("stability", Duration::from_secs(5), stability),
        ("gradient check", Duration::from_secs(30), gradient_check),
        ("monotonicity", Duration::from_secs(10), monotonicity),
        ("partial convexity", Duration::from_secs(20), convexity),
        ("transition exactness", Duration::from_secs(1), transition_exactness),
        ("noise recovery", Duration::from_secs(300), noise_recovery),
        ("asymmetric near-clean recovery", Duration::from_secs(300), asymmetric_recovery),
        ("sweep landscape", Duration::from_secs(1800), sweep_landscape),
        ("MIL instance asymmetry", Duration::from_secs(180), mil_asymmetry),
        ("toy 2D ring", Duration::from_secs(120), toy2d),
        ("determinism", Duration::from_secs(600), determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, budget, f)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !filter.is_empty() && !filter.iter().any(|x| x == &n.to_string() || name.contains(x.as_str())) {
            continue;
        }
        let start = Instant::now();
        let v = f();
        let elapsed = start.elapsed();
        let pass = v.pass && elapsed <= *budget;
        failed += usize::from(!pass);
        println!(
            "criterion {n:>2} {:<32} {}  {} [{:.1}s of {}s]",
            name,
            if pass { "PASS" } else { "FAIL" },
            v.detail,
            elapsed.as_secs_f64(),
            budget.as_secs(),
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
