//! Acceptance criteria, one line each. Run with `cargo test --test acceptance`.

mod support;

use leibniz_link::audit::{exchange_deficit, Audit};
use leibniz_link::kbp::enumerate_maximal_states;
use leibniz_link::link::explore::{explore, Bounds};
use leibniz_link::netsim::metrics::to_csv;
use leibniz_link::netsim::{run, Protocol, Scenario};
use leibniz_link::trace::to_jsonl;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};
use support::{mismatches, random_history, scenario};

const KBP_LIMIT: Duration = Duration::from_secs(1);
const ORACLE_HISTORIES: u64 = 10_000;
const ORACLE_LIMIT: Duration = Duration::from_secs(60);
const TRIANGLE_TXNS: u32 = 100;
const TRIANGLE_LIMIT: Duration = Duration::from_secs(5);
const EXPLORE_LIMIT: Duration = Duration::from_secs(60);
const LAMBDA_P: f64 = 0.1;
const LAMBDA_EXCHANGES: u32 = 10_000;
const LAMBDA_TOLERANCE: f64 = 0.02;
const SWEEP_LIMIT: Duration = Duration::from_secs(120);
const DELAYS: [u64; 3] = [1, 10, 1000];

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, ok: String, bad: impl FnOnce() -> String) -> Outcome {
    if cond {
        Ok(ok)
    } else {
        Err(bad())
    }
}

fn within(t: Duration, limit: Duration) -> Outcome {
    check(t <= limit, format!("{:.2?}", t), || format!("took {:.2?}, limit {:.0?}", t, limit))
}

fn kbp_counts() -> Outcome {
    let t = Instant::now();
    let one = enumerate_maximal_states(1).map_err(|e| e.to_string())?;
    let two = enumerate_maximal_states(2).map_err(|e| e.to_string())?;
    let got = (one.single, two.product, two.entangled);
    let el = within(t.elapsed(), KBP_LIMIT)?;
    check(got == (6, 36, 24), format!("6/36/24 in {el}"), || format!("got {got:?}"))
}

fn causal_oracle() -> Outcome {
    let t = Instant::now();
    let mut pairs = 0usize;
    for seed in 0..ORACLE_HISTORIES {
        let h = random_history(seed, 50, 20);
        let n = h.events().len();
        pairs += n * n.saturating_sub(1);
        let bad = mismatches(&h);
        if let Some(m) = bad.first() {
            return Err(format!("seed {seed}: {} mismatches, first {m:?}", bad.len()));
        }
    }
    let el = within(t.elapsed(), ORACLE_LIMIT)?;
    Ok(format!("{ORACLE_HISTORIES} histories, {pairs} ordered pairs, 0 mismatches in {el}"))
}

fn triangle_text(from: &str, to: &str, cut: (&str, &str), delay: u64, relay: bool, count: u32) -> String {
    let interval = 5 * delay;
    format!(
        "name = \"triangle-cut\"\nseed = 1\nduration = {}\n[topology]\nkind = \"triangle\"\n\
         [link]\ndelay = {delay}\n[[link.partitions]]\na = \"{}\"\nb = \"{}\"\nstart = 0\n\
         [workload]\nhorizon = {}\nrelay = {relay}\n\
         [[workload.flows]]\nfrom = \"{from}\"\nto = \"{to}\"\ncount = {count}\ninterval = {interval}\n",
        count as u64 * interval + 10 * delay,
        cut.0,
        cut.1,
        12 * delay,
    )
}

fn triangle_recovery(delay: u64) -> Outcome {
    let mut worst = Duration::ZERO;
    for (x, y) in [("a", "b"), ("b", "c"), ("a", "c")] {
        let t = Instant::now();
        let m = run(&scenario(&triangle_text(x, y, (x, y), delay, true, TRIANGLE_TXNS)))
            .map_err(|e| e.to_string())?
            .metrics;
        within(t.elapsed(), TRIANGLE_LIMIT)?;
        worst = worst.max(t.elapsed());
        let want = TRIANGLE_TXNS as u64;
        if (m.commits, m.relay_uses, m.silent_corruptions) != (want, want, 0) {
            return Err(format!(
                "{x}-{y} cut: {} commits, {} via relay, {} silent",
                m.commits, m.relay_uses, m.silent_corruptions
            ));
        }
    }
    Ok(format!("3 cuts x {TRIANGLE_TXNS} txns all committed via the third vertex, slowest {worst:.2?}"))
}

fn bilateral_safety() -> Outcome {
    let t = Instant::now();
    let r = explore(Bounds::default());
    let el = within(t.elapsed(), EXPLORE_LIMIT)?;
    check(
        r.violations.is_empty(),
        format!("{} states, {} transitions, no violations in {el}", r.states, r.transitions),
        || format!("{} violations, first {:?}", r.violations.len(), r.violations[0]),
    )
}

fn lossless_text(delay: u64) -> String {
    let h = 12 * delay;
    let i = 3 * delay;
    format!(
        "seed = 5\nduration = {}\n[topology]\nkind = \"complete\"\nn = 4\n[link]\ndelay = {delay}\n\
         [workload]\nhorizon = {h}\n\
         [[workload.flows]]\nfrom = 0\nto = 1\ncount = 60\ninterval = {i}\n\
         [[workload.flows]]\nfrom = 1\nto = 0\ncount = 60\ninterval = {i}\n\
         [[workload.flows]]\nfrom = 2\nto = 3\ncount = 60\ninterval = {i}\n\
         [[workload.flows]]\nfrom = 3\nto = 1\ncount = 60\ninterval = {i}\nstart = {delay}\n",
        60 * i + 10 * delay
    )
}

fn lambda_text(delay: u64) -> String {
    let interval = 10 * delay;
    format!(
        "seed = 11\nduration = {}\n[topology]\nkind = \"triangle\"\n[link]\ndelay = {delay}\nloss = {LAMBDA_P}\n\
         [workload]\nhorizon = {}\nrelay = false\nretry = \"agreement-only\"\n\
         [[workload.flows]]\nfrom = \"a\"\nto = \"b\"\ncount = {LAMBDA_EXCHANGES}\ninterval = {interval}\n",
        LAMBDA_EXCHANGES as u64 * interval,
        40 * delay
    )
}

fn conservation(delay: u64) -> Outcome {
    let r = run(&scenario(&lossless_text(delay))).map_err(|e| e.to_string())?;
    let audit = Audit::from_trace(&r.trace).map_err(|e| e.to_string())?;
    let report = audit.check();
    if !(report.lossless && report.passed() && report.triangles_checked == 4 && report.entropy_produced == 0) {
        return Err(format!("lossless run: {report:?}"));
    }
    for n in audit.ledger().nodes() {
        for s in 0..=audit.ledger().last_slot() {
            let res = audit.node_residual(*n, s).map_err(|e| e.to_string())?;
            if res != 0 {
                return Err(format!("node {n} slot {s} residual {res}"));
            }
        }
    }

    let r = run(&scenario(&lambda_text(delay))).map_err(|e| e.to_string())?;
    let audit = Audit::from_trace(&r.trace).map_err(|e| e.to_string())?;
    let mut sum = 0.0;
    for o in audit.outcomes().values() {
        sum += exchange_deficit(o).map_err(|e| e.to_string())?;
    }
    let n = audit.outcomes().len();
    let mean = sum / n as f64;
    let want = 1.0 - (1.0 - LAMBDA_P).powi(2);
    check(
        n == LAMBDA_EXCHANGES as usize && (mean - want).abs() <= LAMBDA_TOLERANCE,
        format!(
            "{} (node, slot) residuals 0, {} triangles 0; mean Λ {mean:.4} vs {want:.2} ± {LAMBDA_TOLERANCE} over {n}",
            report.nodes as u64 * (report.last_slot + 1),
            report.triangles_checked
        ),
        || format!("mean Λ {mean:.4} over {n} exchanges, want {want:.2} ± {LAMBDA_TOLERANCE}"),
    )
}

fn pif_identity() -> Outcome {
    let mut lines = Vec::new();
    for loss in [0.0, 0.3] {
        let text = format!(
            "seed = 2\nduration = 6000\n[topology]\nkind = \"triangle\"\n[link]\nloss = {loss}\n\
             [workload]\nhorizon = 40\nrelay = false\nretry = \"agreement-only\"\n\
             [[workload.flows]]\nfrom = \"a\"\nto = \"b\"\ncount = 500\ninterval = 6\n\
             [[workload.flows]]\nfrom = \"b\"\nto = \"a\"\ncount = 500\ninterval = 6\nstart = 3\n"
        );
        let r = run(&scenario(&text)).map_err(|e| e.to_string())?;
        let audit = Audit::from_trace(&r.trace).map_err(|e| e.to_string())?;
        let a = leibniz_link::ids::NodeId(0);
        let b = leibniz_link::ids::NodeId(1);
        for (x, y) in [(a, b), (b, a)] {
            let p = audit.pif_throughput(x, y);
            if !p.symmetric || p.one_way == 0.0 || p.bilateral_confirmed != 2.0 * p.one_way {
                return Err(format!("loss {loss} {x}->{y}: {p:?}"));
            }
        }
        let p = audit.pif_throughput(a, b);
        lines.push(format!("loss {loss}: {:.4} = 2 x {:.4}", p.bilateral_confirmed, p.one_way));
    }
    Ok(lines.join("; "))
}

fn sweep_base() -> Scenario {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/lossy-compare.toml");
    Scenario::load(&path).expect("bundled scenario")
}

fn fito_contrast() -> Outcome {
    let t = Instant::now();
    let base = sweep_base();
    let mut cells = 0;
    let mut totals = [0u64; 3];
    for loss in [0.05, 0.1, 0.2] {
        for partition in [true, false] {
            for seed in 1..=3 {
                let mut s = base.clone();
                s.link.loss = loss;
                s.seed = seed;
                if !partition {
                    s.link.partitions.clear();
                }
                let mut got = [0u64; 3];
                for (k, p) in Protocol::ALL.into_iter().enumerate() {
                    s.protocol = p;
                    got[k] = run(&s).map_err(|e| e.to_string())?.metrics.silent_corruptions;
                    totals[k] += got[k];
                }
                cells += 1;
                let cell = format!("loss {loss} partition {partition} seed {seed}");
                if got[0] != 0 {
                    return Err(format!("{cell}: oae {}", got[0]));
                }
                if got[1] == 0 {
                    return Err(format!("{cell}: fireforget 0"));
                }
                if got[2] == 0 {
                    return Err(format!("{cell}: lww 0 despite concurrent writers on one key"));
                }
            }
        }
    }
    let el = within(t.elapsed(), SWEEP_LIMIT)?;
    Ok(format!(
        "{cells} cells: silent corruptions oae {} / fireforget {} / lww {} in {el}",
        totals[0], totals[1], totals[2]
    ))
}

fn scale_independence() -> Outcome {
    let mut lines = Vec::new();
    for d in DELAYS {
        triangle_recovery(d).map_err(|e| format!("delay {d}: {e}"))?;
        let c = conservation(d).map_err(|e| format!("delay {d}: {e}"))?;
        let lambda = c.split("mean Λ ").nth(1).and_then(|s| s.split(' ').next()).unwrap_or("?");
        lines.push(format!("delay {d}: Λ {lambda}"));
    }
    Ok(format!("triangle, residuals and Λ hold at {}", lines.join(", ")))
}

fn determinism() -> Outcome {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    let mut files: Vec<_> = std::fs::read_dir(&dir)
        .map_err(|e| e.to_string())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    files.sort();
    let mut runs = 0;
    for f in &files {
        let base = Scenario::load(f).map_err(|e| e.to_string())?;
        for seed in [base.seed, 99] {
            let mut s = base.clone();
            s.seed = seed;
            let r1 = run(&s).map_err(|e| e.to_string())?;
            let r2 = run(&s).map_err(|e| e.to_string())?;
            if to_jsonl(&r1.trace) != to_jsonl(&r2.trace) || to_csv(&[r1.metrics]) != to_csv(&[r2.metrics]) {
                return Err(format!("{} seed {seed} differs between runs", f.display()));
            }
            runs += 1;
        }
    }
    Ok(format!("{runs} (scenario, seed) pairs rerun byte-identical"))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("kbp-golden-counts", kbp_counts),
        ("causal-oracle-equivalence", causal_oracle),
        ("triangle-consistency", || triangle_recovery(1)),
        ("bilateral-safety", bilateral_safety),
        ("conservation-laws", || conservation(1)),
        ("pif-accounting", pif_identity),
        ("fito-contrast", fito_contrast),
        ("scale-independence", scale_independence),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let r = f();
        let el = t.elapsed();
        match r {
            Ok(msg) => println!("PASS {} {name} [{el:.2?}] {msg}", i + 1),
            Err(msg) => {
                failed += 1;
                println!("FAIL {} {name} [{el:.2?}] {msg}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
