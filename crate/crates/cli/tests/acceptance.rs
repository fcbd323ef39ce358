//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails. Runs the `pdmpq` binary for the end-to-end criteria.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

#[path = "../../core/tests/support/mod.rs"]
mod support;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use pdmpq::pdmp::sample_inter_jump_time;
use pdmpq::policy::{apply_policy, plan};
use pdmpq::quantizer::io::{read_chain, write_chain};
use pdmpq::solver::{read_solve, write_solve};
use pdmpq::{
    derive_seed, estimate_scales, simulate, simulate_batch, solve, stage_samples, substream, thickness_increment,
    train, Chain, Corrosion, CorrosionParams, CorrosionStateF64, JumpRecord, Mode, PdmpModel, Solution, TrainOptions,
    Trajectory, WeightedNorm,
};
use pdmpq_cli::artifacts::{self, OutcomeRow};
use pdmpq_cli::commands::ConvergenceRow;
use pdmpq_cli::RunConfig;
use rand::{Rng, SeedableRng};
use statrs::function::gamma::gamma;

type Outcome = std::result::Result<String, String>;

const SEEDS: [u64; 3] = [2012, 2013, 2014];
const HORIZON: usize = 25;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn model() -> Corrosion {
    Corrosion::new(CorrosionParams::default()).unwrap()
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pdmpq"))
}

/// Runs the binary; returns its exit code and standard error.
fn run(args: &[&str]) -> (i32, String) {
    let out = bin().args(args).arg("--quiet").output().expect("spawn pdmpq");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stderr).trim().to_string(),
    )
}

/// Runs a step that must succeed.
fn pdmpq(args: &[&str]) -> Result<(), String> {
    match run(args) {
        (0, _) => Ok(()),
        (code, err) => Err(format!("pdmpq {} exited with {code}: {err}", args[0])),
    }
}

fn within(elapsed: Duration, limit: Duration) -> Outcome {
    if elapsed <= limit {
        Ok(String::new())
    } else {
        Err(format!(
            "took {:.1} s, limit {:.0} s",
            elapsed.as_secs_f64(),
            limit.as_secs_f64()
        ))
    }
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    xs[xs.len() / 2]
}

// 1. Flow correctness.
fn flow() -> Outcome {
    const INV_E: f64 = 0.367_879_441_171_442_321_595_523_770_161_460_867;
    let got = thickness_increment(1e-5, 0.0, 30_000.0, 30_000.0).map_err(|e| e.to_string())?;
    let want = 1e-5 * 30_000.0 * INV_E;
    ensure!((got - want).abs() <= 1e-9, "increment {got} vs {want}");

    let m = model();
    let mut rng = substream(derive_seed(1, "flow"), 0);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let mode = [Mode::Workshop, Mode::Operation, Mode::DryDock][rng.gen_range(0..3)];
        let env = m.params().env(mode).unwrap();
        let z = CorrosionStateF64 {
            mode,
            thickness_loss: rng.gen_range(0.0..0.15),
            protection: rng.gen_range(0.0..30_000.0),
            rate: rng.gen_range(env.rate_low..env.rate_high),
            clock: 0.0,
        };
        let (s, t) = (rng.gen_range(0.0..100_000.0), rng.gen_range(0.0..100_000.0));
        let a = m.flow(&m.flow(&z, s), t);
        let b = m.flow(&z, s + t);
        ensure!(a.mode == b.mode, "mode changed along the flow");
        worst = worst.max((a.thickness_loss - b.thickness_loss).abs());
        for (x, y) in [(a.protection, b.protection), (a.clock, b.clock)] {
            ensure!(
                (x - y).abs() <= 1e-12 * (s + t),
                "protection or clock not additive: {x} vs {y}"
            );
        }
    }
    ensure!(worst <= 1e-10, "semigroup defect {worst:e} mm");
    Ok(format!(
        "increment {got:.9} mm, semigroup defect {worst:.1e} over 1000 cases"
    ))
}

// 2. Distribution correctness.
fn distributions() -> Outcome {
    const N: u64 = 100_000;
    let m = model();
    let seed = derive_seed(2, "distributions");
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;

    let init: Vec<CorrosionStateF64> = (0..N).map(|i| m.sample_initial(&mut substream(seed, i))).collect();
    let gammas: Vec<f64> = init.iter().map(|z| z.protection).collect();
    let expected = 11_800.0 * gamma(1.4);
    let rel = mean(&gammas) / expected - 1.0;
    ensure!(rel.abs() < 0.02, "Weibull mean {} vs {expected}", mean(&gammas));
    let mut detail = format!("Weibull mean {:+.2}%", 100.0 * rel);
    let env0 = m.params().env(Mode::Workshop).unwrap();
    ensure!(
        init.iter().all(|z| z.rate >= env0.rate_low && z.rate <= env0.rate_high),
        "initial rate out of range"
    );

    for (k, (mode, hours)) in [
        (Mode::Workshop, 17_520.0),
        (Mode::Operation, 131_400.0),
        (Mode::DryDock, 8_760.0),
    ]
    .into_iter()
    .enumerate()
    {
        let env = m.params().env(mode).unwrap();
        let z = CorrosionStateF64 {
            mode,
            thickness_loss: 0.0,
            protection: 0.0,
            rate: env.rate_low,
            clock: 0.0,
        };
        let xs: Vec<f64> = (0..N)
            .map(|i| {
                sample_inter_jump_time(&m, &z, &mut substream(seed + 1 + k as u64, i))
                    .unwrap()
                    .0
            })
            .collect();
        let rel = mean(&xs) / hours - 1.0;
        ensure!(
            rel.abs() < 0.02,
            "mode {} sojourn mean {} vs {hours}",
            mode.label(),
            mean(&xs)
        );
        detail += &format!(", sojourn {} {:+.2}%", mode.label(), 100.0 * rel);

        let next = m.params().env(mode.next()).unwrap();
        for i in 0..N {
            let post = m.jump(&z, &mut substream(seed + 10 + k as u64, i));
            ensure!(
                post.rate >= next.rate_low && post.rate <= next.rate_high,
                "post-jump rate out of range"
            );
        }
    }
    let trajs = simulate_batch(&m, |r: &mut _| m.sample_initial(r), HORIZON, 2_000, seed).map_err(|e| e.to_string())?;
    for j in trajs.iter().flat_map(|t| &t.jumps) {
        if let Some(env) = m.params().env(j.state.mode) {
            ensure!(
                j.state.rate >= env.rate_low && j.state.rate <= env.rate_high,
                "simulated rate out of range"
            );
        }
    }
    Ok(detail + ", rates inside ranges")
}

// 3. Exceedance within the horizon.
fn exceedance(work: &Path) -> Outcome {
    let dir = work.join("simulate");
    pdmpq(&[
        "simulate",
        "--runs",
        "10000",
        "--seed",
        "2012",
        "--out",
        dir.to_str().unwrap(),
    ])?;
    let s: serde_json::Value =
        serde_json::from_reader(std::fs::File::open(dir.join(artifacts::SIMULATE_SUMMARY)).unwrap()).unwrap();
    let fraction = s["fraction_reached"].as_f64().unwrap();
    let detail = format!(
        "{:.2}% of 10000 trajectories reach 0.2 mm within 25 jumps (need 99%)",
        100.0 * fraction
    );
    ensure!(fraction >= 0.99, "{detail}");
    Ok(detail)
}

// 4. Quantizer oracle.
fn quantizer() -> Outcome {
    let src = support::UniformBox {
        hi: vec![1.0],
        seed: 41,
    };
    let chain = train(&src, &WeightedNorm::unit(1), &TrainOptions::new(2, 100_000, 41)).map_err(|e| e.to_string())?;
    let sample = stage_samples(&src, 20_000).unwrap();
    let (a, b) = support::exhaustive_two_point(&sample[0].iter().map(|p| p[0]).collect::<Vec<_>>(), 0.001);
    let mut p = chain.grids[0].points.clone();
    p.sort_by(f64::total_cmp);
    ensure!(
        (p[0] - a).abs() < 0.03 && (p[1] - b).abs() < 0.03 && (p[0] - 0.25).abs() < 0.03 && (p[1] - 0.75).abs() < 0.03,
        "CLVQ {p:?}, exhaustive ({a}, {b})"
    );

    let hi = vec![1.0, 5000.0];
    let src = support::UniformBox {
        hi: hi.clone(),
        seed: 42,
    };
    let norm = estimate_scales(&stage_samples(&src, 10_000).unwrap(), &[]).map_err(|e| e.to_string())?;
    let chain = train(&src, &norm, &TrainOptions::new(16, 100_000, 42)).map_err(|e| e.to_string())?;
    let test = &stage_samples(
        &support::UniformBox {
            hi: hi.clone(),
            seed: 43,
        },
        20_000,
    )
    .unwrap()[0];
    let d = support::axis_distortion(&chain, &norm, test, &hi);
    let ratio = d[0] / d[1];
    ensure!((0.5..=2.0).contains(&ratio), "per-axis distortion ratio {ratio:.3}");
    Ok(format!(
        "K=2 grid ({:.4}, {:.4}) vs exhaustive ({a:.3}, {b:.3}); scaled-axis distortion ratio {ratio:.3}",
        p[0], p[1]
    ))
}

// 5. Solver against brute force.
fn solver_oracle() -> Outcome {
    let mut rng = pdmpq::ChaCha8Rng::seed_from_u64(5);
    let mut decided = 0;
    for case in 0..100 {
        let inst = support::random_instance(&mut rng);
        let got = solve(&inst.chain(), &inst.model(), &inst.reward(), inst.target_points).map_err(|e| e.to_string())?;
        let want = support::brute_force(&inst, inst.step());
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1e-300);
        ensure!(close(got.v0, want.v0), "case {case}: v0 {} vs {}", got.v0, want.v0);
        for n in 0..=inst.horizon() {
            for (a, b) in got.values(n).iter().zip(&want.values[n]) {
                ensure!(close(*a, *b), "case {case}, stage {n}: {a} vs {b}");
            }
        }
        for n in 1..=inst.horizon() {
            let records = &got.stage(n).unwrap().records;
            for (i, r) in records.iter().enumerate() {
                if want.margins[n - 1][i] > 1e-9 {
                    ensure!(
                        r.decision.best_time() == want.stops[n - 1][i],
                        "case {case}, stage {n}, point {i}"
                    );
                    decided += 1;
                }
            }
        }
    }
    Ok(format!(
        "100 instances agree to 1e-12 relative, {decided} decisions identical"
    ))
}

fn pipeline_dir(work: &Path, seed: u64) -> PathBuf {
    work.join(format!("pipeline-{seed}"))
}

// 6. Convergence in K.
fn convergence(work: &Path) -> Outcome {
    let mut rows: Vec<Vec<ConvergenceRow>> = Vec::new();
    for seed in SEEDS {
        let dir = pipeline_dir(work, seed);
        pdmpq(&[
            "pipeline",
            "--k",
            "10,50,100,1000",
            "--runs",
            "100000",
            "--seed",
            &seed.to_string(),
            "--out",
            dir.to_str().unwrap(),
        ])?;
        rows.push(artifacts::read_csv(&dir, artifacts::CONVERGENCE, "pipeline").map_err(|e| e.to_string())?);
    }
    let at = |k: usize, f: fn(&ConvergenceRow) -> f64| {
        median(rows.iter().map(|r| f(r.iter().find(|x| x.k == k).unwrap())).collect())
    };
    let v = |k| at(k, |r| r.v0);
    let mc = |k| at(k, |r| r.mc_mean);
    let table: Vec<String> = [10, 50, 100, 1000]
        .iter()
        .map(|k| format!("K={k} {:.3}/{:.3}", v(*k), mc(*k)))
        .collect();
    let detail = format!("median direct/MC: {}", table.join(", "));
    ensure!(
        v(10) <= v(100) && v(100) <= v(1000),
        "direct value not nondecreasing; {detail}"
    );
    ensure!(
        (3.2..=3.9).contains(&v(1000)),
        "direct value at K=1000 outside [3.2, 3.9]; {detail}"
    );
    ensure!(
        (3.1..=3.7).contains(&mc(1000)),
        "MC mean at K=1000 outside [3.1, 3.7]; {detail}"
    );
    for (seed, rs) in SEEDS.iter().zip(&rows) {
        for r in rs {
            ensure!(
                r.mc_mean <= r.v0 + 3.0 * r.mc_se + 0.15,
                "seed {seed}, K={}: MC {} above direct {}",
                r.k,
                r.mc_mean,
                r.v0
            );
        }
        let gap = |k| rs.iter().find(|x| x.k == k).map(|x| (x.v0 - x.mc_mean).abs()).unwrap();
        ensure!(
            gap(1000) < gap(50),
            "seed {seed}: gap {} at K=1000 vs {} at K=50",
            gap(1000),
            gap(50)
        );
    }
    Ok(detail)
}

fn k1000(work: &Path) -> PathBuf {
    pipeline_dir(work, SEEDS[0]).join("k1000")
}

// 7. Where the rule intervenes.
fn stopping_quality(work: &Path) -> Outcome {
    let dir = k1000(work);
    let args = [
        "evaluate",
        "--k",
        "1000",
        "--runs",
        "10000",
        "--seed",
        "2012",
        "--out",
        dir.to_str().unwrap(),
    ];
    pdmpq(&args)?;
    let rows: Vec<OutcomeRow> =
        artifacts::read_csv(&dir, artifacts::OUTCOMES, "evaluate").map_err(|e| e.to_string())?;
    ensure!(rows.len() == 10_000, "{} outcome rows", rows.len());
    let band = rows.iter().filter(|r| (0.14..=0.20).contains(&r.thickness_mm)).count();
    let frac = band as f64 / rows.len() as f64;
    let late = rows
        .iter()
        .filter(|r| r.stop_time_hours > r.last_jump_time_hours)
        .count();
    let g_fail = pdmpq::RewardFn::corrosion_default().eval(0.2);
    let bad = rows
        .iter()
        .filter(|r| (r.mode == 0 || r.thickness_mm >= 0.2) && r.reward > g_fail)
        .count();
    let detail = format!(
        "{:.2}% stopped in [0.14, 0.20] mm, {late} stops after T_N, {bad} failed-state stops above g(0.2)",
        100.0 * frac
    );
    ensure!(frac >= 0.9 && late == 0 && bad == 0, "{detail}");
    Ok(detail)
}

fn load_k1000(work: &Path) -> (Chain, Solution) {
    let cfg = RunConfig {
        seed: SEEDS[0],
        ..RunConfig::default()
    }
    .with_k(1000);
    let dir = k1000(work);
    let hash = cfg.hash_hex();
    (
        artifacts::load_chain(&dir, &hash).unwrap(),
        artifacts::load_solve(&dir, &hash).unwrap(),
    )
}

/// The first `n` jumps of `t` followed by a fresh future from `Z_n`.
fn with_future(
    m: &Corrosion,
    t: &Trajectory<f64, CorrosionStateF64>,
    n: usize,
    seed: u64,
) -> Trajectory<f64, CorrosionStateF64> {
    let mut jumps = t.jumps[..n].to_vec();
    let z = *t.post_jump_state(n).unwrap();
    let t0 = t.jump_time(n).unwrap();
    let fresh = simulate(m, z, HORIZON - n, &mut substream(seed, 0)).unwrap();
    jumps.extend(fresh.jumps.into_iter().map(|j| JumpRecord {
        index: j.index + n,
        time: j.time + t0,
        ..j
    }));
    Trajectory {
        initial: t.initial,
        jumps,
        horizon: HORIZON,
        absorbed: fresh.absorbed,
    }
}

// 8. Plans use the past only.
fn stopping_time(work: &Path) -> Outcome {
    let m = model();
    let (chain, sol) = load_k1000(work);
    let reward = pdmpq::RewardFn::corrosion_default();
    let seed = derive_seed(8, "prefixes");
    let trajs = simulate_batch(&m, |r: &mut _| m.sample_initial(r), HORIZON, 100, seed).map_err(|e| e.to_string())?;
    let mut prefix_rng = substream(seed, u64::MAX);
    let mut compared = 0;
    for (p, t) in trajs.iter().enumerate() {
        let n = prefix_rng.gen_range(0..t.jumps.len().min(HORIZON));
        let futures: Vec<_> = (0..10)
            .map(|f| with_future(&m, t, n, derive_seed(seed, &format!("{p}/{f}"))))
            .collect();
        let plans = |tr: &Trajectory<f64, CorrosionStateF64>| -> Vec<_> {
            (0..=n)
                .map(|k| {
                    let inter = if k == 0 { 0.0 } else { tr.jumps[k - 1].inter_jump };
                    plan(&m, &chain, &sol, k, tr.post_jump_state(k).unwrap(), inter).unwrap()
                })
                .collect()
        };
        let base = plans(&futures[0]);
        let tn = t.jump_time(n).unwrap();
        let outcome = apply_policy(&m, &chain, &sol, &reward, &futures[0]).map_err(|e| e.to_string())?;
        for (f, tr) in futures.iter().enumerate() {
            ensure!(plans(tr) == base, "prefix {p}: plans differ for future {f}");
            // A stop decided inside the common prefix cannot depend on the future.
            let o = apply_policy(&m, &chain, &sol, &reward, tr).map_err(|e| e.to_string())?;
            if outcome.stop_time <= tn {
                ensure!(
                    o.stop_time == outcome.stop_time && o.stop_state == outcome.stop_state,
                    "prefix {p}: stop moved"
                );
            }
            // Nor can a stop before the next jump of any future that jumps later.
            let spliced = support::splice(&m, tr, o.stop_time, &mut substream(seed ^ 1, (p * 10 + f) as u64));
            let again = apply_policy(&m, &chain, &sol, &reward, &spliced).map_err(|e| e.to_string())?;
            ensure!(
                again.stop_time == o.stop_time && again.reason == o.reason && again.stop_state == o.stop_state,
                "prefix {p}, future {f}: stop changed after splicing at the stop time"
            );
            compared += 1;
        }
    }
    Ok(format!(
        "{compared} spliced futures over 100 prefixes give identical plans and stops"
    ))
}

// 9. Artifact integrity.
fn artifacts_integrity(work: &Path) -> Outcome {
    let dir = k1000(work);
    let bytes = std::fs::read(dir.join(artifacts::GRIDS)).unwrap();
    let chain: Chain = read_chain(bytes.as_slice()).map_err(|e| e.to_string())?;
    let mut again = Vec::new();
    write_chain(&chain, &mut again).unwrap();
    ensure!(again == bytes, "grid file does not round-trip");
    ensure!(
        read_chain::<f64, _>(again.as_slice()).unwrap() == chain,
        "grid reread differs"
    );

    let bytes = std::fs::read(dir.join(artifacts::SOLVE)).unwrap();
    let sol: Solution = read_solve(bytes.as_slice()).map_err(|e| e.to_string())?;
    let mut again = Vec::new();
    write_solve(&sol, &mut again).unwrap();
    ensure!(again == bytes, "solve file does not round-trip");
    ensure!(
        read_solve::<f64, _>(again.as_slice()).unwrap() == sol,
        "solve reread differs"
    );

    let d = dir.to_str().unwrap();
    for args in [["--k", "1000", "--seed", "7"], ["--k", "50", "--seed", "2012"]] {
        let (code, err) = run(&[&["evaluate", "--runs", "10", "--out", d][..], &args[..]].concat());
        ensure!(
            code == 3 && err.contains("config hash"),
            "evaluate {args:?} on other artifacts: exit {code}, {err}"
        );
    }
    Ok(format!(
        "grids.bin ({} KiB) and solve.bin round-trip bit-exactly; mismatches exit 3",
        bytes.len() / 1024
    ))
}

fn main() -> ExitCode {
    let work = tempfile::tempdir().expect("temporary directory");
    let w = work.path();
    type Check<'a> = (usize, &'a str, Duration, Box<dyn Fn() -> Outcome + 'a>);
    let checks: Vec<Check> = vec![
        (1, "flow correctness", Duration::from_secs(1), Box::new(flow)),
        (
            2,
            "distribution correctness",
            Duration::from_secs(10),
            Box::new(distributions),
        ),
        (
            3,
            "threshold exceedance",
            Duration::from_secs(30),
            Box::new(|| exceedance(w)),
        ),
        (4, "quantizer oracle", Duration::from_secs(60), Box::new(quantizer)),
        (5, "solver oracle", Duration::from_secs(10), Box::new(solver_oracle)),
        (
            6,
            "convergence in K",
            Duration::from_secs(30 * 60 * 3),
            Box::new(|| convergence(w)),
        ),
        (
            7,
            "stopping-rule quality",
            Duration::MAX,
            Box::new(|| stopping_quality(w)),
        ),
        (
            8,
            "stopping-time property",
            Duration::MAX,
            Box::new(|| stopping_time(w)),
        ),
        (
            9,
            "artifact integrity",
            Duration::MAX,
            Box::new(|| artifacts_integrity(w)),
        ),
    ];
    let mut failed = 0;
    for (id, name, limit, check) in checks {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default())
        });
        let elapsed = start.elapsed();
        let result = result.and_then(|d| within(elapsed, limit).map(|_| d));
        let (tag, detail) = match result {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {id} {tag}: {name} ({:.1} s) {detail}", elapsed.as_secs_f64());
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
