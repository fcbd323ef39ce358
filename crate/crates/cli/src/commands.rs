use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use pdmpq::policy::{apply_policy, check_artifacts, evaluate_policy, summarize, PolicySummary, SummaryOptions};
use pdmpq::{
    derive_seed, estimate_scales, simulate, simulate_batch, solve, stage_samples, substream, train, ChaCha8Rng, Chain,
    ChainEmbedding, Corrosion, CorrosionState, Mode, Outcome, PdmpModel, RewardFn, SimulatedChain, Solution,
    TrainOptions, Trajectory, WeightedNorm,
};
use serde::Serialize;

use crate::artifacts::{self as art, OutcomeRow, PathRow, ScalesFile, SolveSummary};
use crate::config::{RunConfig, HOURS_PER_YEAR};
use crate::error::CliError;

/// Validated configuration plus everything derived from it.
pub struct Context {
    pub cfg: RunConfig,
    pub model: Corrosion,
    pub reward: RewardFn,
    pub hash: String,
    pub quiet: bool,
}

impl Context {
    pub fn new(cfg: RunConfig, quiet: bool) -> Result<Self, CliError> {
        cfg.validate()?;
        let model = Corrosion::new(cfg.model_params())?;
        let reward = cfg.reward_function()?;
        let hash = cfg.hash_hex();
        Ok(Self {
            cfg,
            model,
            reward,
            hash,
            quiet,
        })
    }

    fn out(&self) -> &PathBuf {
        &self.cfg.out
    }

    fn say(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", msg.as_ref());
        }
    }

    fn seed(&self, stage: &str) -> u64 {
        derive_seed(self.cfg.seed, stage)
    }

    fn initial(&self) -> impl Fn(&mut ChaCha8Rng) -> CorrosionState<f64> + Sync + '_ {
        move |rng: &mut ChaCha8Rng| self.model.sample_initial(rng)
    }
}

#[derive(Debug, Serialize)]
struct SimulateSummary {
    config_hash: String,
    runs: usize,
    horizon: usize,
    reached_threshold: usize,
    fraction_reached: f64,
}

fn reached_threshold(traj: &Trajectory<f64, CorrosionState<f64>>) -> bool {
    traj.jumps.iter().any(|j| j.state.mode == Mode::Failed)
}

pub fn simulate_cmd(ctx: &Context) -> Result<f64, CliError> {
    let dir = ctx.out();
    art::ensure_dir(dir)?;
    let runs = ctx.cfg.simulate.runs;
    let trajs = simulate_batch(&ctx.model, ctx.initial(), ctx.cfg.horizon, runs, ctx.seed("simulate"))?;
    let reached = trajs.iter().filter(|t| reached_threshold(t)).count();
    let fraction = reached as f64 / runs as f64;
    let keep = &trajs[..ctx.cfg.simulate.paths.min(runs)];
    let json: Vec<_> = keep.iter().map(|t| t.to_json(&ctx.model)).collect();
    art::write_json(dir, art::TRAJECTORIES, &json)?;
    let mut rows = Vec::new();
    for (i, t) in keep.iter().enumerate() {
        rows.extend(sample_path(&ctx.model, i as u64, t, None));
    }
    art::write_csv(dir, art::TRAJECTORY_PATHS, &rows)?;
    art::write_json(
        dir,
        art::SIMULATE_SUMMARY,
        &SimulateSummary {
            config_hash: ctx.hash.clone(),
            runs,
            horizon: ctx.cfg.horizon,
            reached_threshold: reached,
            fraction_reached: fraction,
        },
    )?;
    ctx.say(format!(
        "{reached} of {runs} trajectories reached {} mm within {} jumps ({:.4})",
        ctx.model.params().failure_threshold,
        ctx.cfg.horizon,
        fraction
    ));
    Ok(fraction)
}

fn compute_scales(ctx: &Context) -> Result<WeightedNorm<f64>, CliError> {
    let pilot = SimulatedChain::new(&ctx.model, ctx.initial(), ctx.cfg.horizon, ctx.seed("pilot"));
    let samples = stage_samples(&pilot, ctx.cfg.quantizer.pilot)?;
    Ok(estimate_scales(&samples, ctx.model.mode_coordinates())?)
}

pub fn scales_cmd(ctx: &Context) -> Result<WeightedNorm<f64>, CliError> {
    art::ensure_dir(ctx.out())?;
    let norm = compute_scales(ctx)?;
    art::write_json(
        ctx.out(),
        art::SCALES,
        &ScalesFile {
            config_hash: ctx.hash.clone(),
            pilot: ctx.cfg.quantizer.pilot,
            scales: norm.scales().to_vec(),
        },
    )?;
    ctx.say(format!("scales {:?}", norm.scales()));
    Ok(norm)
}

fn train_chain(ctx: &Context, norm: &WeightedNorm<f64>) -> Result<Chain, CliError> {
    let seed = ctx.seed("train");
    let source = SimulatedChain::new(&ctx.model, ctx.initial(), ctx.cfg.horizon, seed);
    let mut opts = TrainOptions::new(ctx.cfg.quantizer.k, ctx.cfg.training_samples(), seed);
    opts.fingerprint = ctx.cfg.hash();
    Ok(train(&source, norm, &opts)?)
}

pub fn train_cmd(ctx: &Context) -> Result<Chain, CliError> {
    let dir = ctx.out();
    let scales = art::load_scales(dir, &ctx.hash)?;
    let norm = WeightedNorm::new(scales.scales).map_err(|e| CliError::Config(format!("{}: {e}", art::SCALES)))?;
    let chain = train_chain(ctx, &norm)?;
    art::save_chain(dir, &chain)?;
    if ctx.cfg.quantizer.export_json {
        art::write_json(dir, art::GRIDS_JSON, &chain.to_json())?;
    }
    let worst = chain.meta.distortion.iter().cloned().fold(0.0, f64::max);
    ctx.say(format!(
        "trained {} grids of {} points on {} samples; worst distortion {worst:.4}; {} flagged rows",
        chain.grids.len(),
        chain.k(),
        chain.meta.samples,
        chain.flagged_rows()
    ));
    Ok(chain)
}

fn solve_chain(ctx: &Context, chain: &Chain) -> Result<Solution, CliError> {
    Ok(solve(chain, &ctx.model, &ctx.reward, ctx.cfg.solver.target_points)?)
}

fn solve_summary(ctx: &Context, s: &Solution) -> SolveSummary {
    SolveSummary {
        config_hash: ctx.hash.clone(),
        k: s.k,
        horizon: s.horizon,
        v0: s.v0,
        step_hours: s.step,
        min_boundary_time_hours: s.min_boundary_time,
        flagged_rows: s.flagged_rows,
    }
}

pub fn solve_cmd(ctx: &Context) -> Result<Solution, CliError> {
    let dir = ctx.out();
    let chain = art::load_chain(dir, &ctx.hash)?;
    let s = solve_chain(ctx, &chain)?;
    art::save_solve(dir, &s)?;
    art::write_json(dir, art::SOLVE_SUMMARY, &solve_summary(ctx, &s))?;
    ctx.say(format!("v0 = {:.6} (time step {:.3} h)", s.v0, s.step));
    Ok(s)
}

#[derive(Debug, Serialize)]
struct EvaluationFile<'a> {
    config_hash: &'a str,
    k: usize,
    horizon: usize,
    v0: f64,
    summary: &'a PolicySummary,
}

fn summary_options(ctx: &Context) -> SummaryOptions {
    SummaryOptions {
        bin_width: ctx.cfg.evaluate.bin_width_years * HOURS_PER_YEAR,
        ..SummaryOptions::default()
    }
}

fn outcome_row(run: u64, o: &Outcome) -> OutcomeRow {
    OutcomeRow {
        run,
        stop_time_hours: o.stop_time,
        stop_time_years: o.stop_time / HOURS_PER_YEAR,
        reason: o.reason.as_str().to_string(),
        thickness_mm: o.stop_state.thickness_loss,
        mode: o.stop_state.mode.label(),
        reward: o.reward,
        jumps_at_stop: o.jumps_at_stop,
        last_jump_time_hours: o.last_jump_time,
    }
}

fn evaluate_chain(ctx: &Context, chain: &Chain, s: &Solution) -> Result<PolicySummary, CliError> {
    check_artifacts(chain, s, ctx.cfg.horizon).map_err(|e| CliError::Mismatch(e.to_string()))?;
    let ev = evaluate_policy(
        &ctx.model,
        ctx.initial(),
        ctx.cfg.horizon,
        chain,
        s,
        &ctx.reward,
        ctx.cfg.evaluate.runs,
        ctx.seed("evaluate"),
        &summary_options(ctx),
    )?;
    let rows: Vec<OutcomeRow> = ev
        .outcomes
        .iter()
        .enumerate()
        .map(|(i, o)| outcome_row(i as u64, o))
        .collect();
    art::write_csv(ctx.out(), art::OUTCOMES, &rows)?;
    art::write_json(
        ctx.out(),
        art::SUMMARY,
        &EvaluationFile {
            config_hash: &ctx.hash,
            k: s.k,
            horizon: s.horizon,
            v0: s.v0,
            summary: &ev.summary,
        },
    )?;
    Ok(ev.summary)
}

pub fn evaluate_cmd(ctx: &Context) -> Result<PolicySummary, CliError> {
    let dir = ctx.out();
    let chain = art::load_chain(dir, &ctx.hash)?;
    let s = art::load_solve(dir, &ctx.hash)?;
    let summary = evaluate_chain(ctx, &chain, &s)?;
    ctx.say(format!(
        "{} runs: mean reward {:.6} (se {:.6}), mean stopping time {:.2} years",
        summary.runs,
        summary.mean_reward,
        summary.std_error,
        summary.mean_stop_time / HOURS_PER_YEAR
    ));
    Ok(summary)
}

#[derive(Debug, Serialize)]
struct HistogramRow {
    bin_start_years: f64,
    bin_end_years: f64,
    count: u64,
}

#[derive(Debug, Serialize)]
struct QuantileRow {
    level: f64,
    tau_hours: f64,
    tau_years: f64,
}

#[derive(Debug, Serialize)]
struct ExceedanceRow {
    date_years: f64,
    /// `P(τ <= t)`.
    p_stopped: f64,
    /// `P(τ > t)`: no maintenance before the date.
    p_no_maintenance: f64,
}

/// Thickness along a trajectory, sampled inside each inter-jump interval,
/// optionally cut at a stopping time.
pub fn sample_path(
    model: &Corrosion,
    run: u64,
    traj: &Trajectory<f64, CorrosionState<f64>>,
    stop: Option<f64>,
) -> Vec<PathRow> {
    const PER_SEGMENT: usize = 16;
    let row = |t: f64, z: &CorrosionState<f64>, event: &str| PathRow {
        run,
        time_hours: t,
        time_years: t / HOURS_PER_YEAR,
        thickness_mm: z.thickness_loss,
        mode: z.mode.label(),
        event: event.to_string(),
    };
    let end = stop.unwrap_or(f64::INFINITY);
    let mut rows = vec![row(0.0, &traj.initial, "start")];
    let mut origin = (0.0, traj.initial);
    for j in &traj.jumps {
        let seg_end = j.time.min(end);
        for k in 1..PER_SEGMENT {
            let t = origin.0 + (seg_end - origin.0) * k as f64 / PER_SEGMENT as f64;
            rows.push(row(t, &model.flow(&origin.1, t - origin.0), "flow"));
        }
        if end <= j.time {
            break;
        }
        rows.push(row(j.time, &j.state, "jump"));
        origin = (j.time, j.state);
    }
    if let Some(t) = stop {
        let z = if t >= origin.0 {
            model.flow(&origin.1, t - origin.0)
        } else {
            origin.1
        };
        rows.push(row(t, &z, "stop"));
    }
    rows
}

pub fn report_cmd(ctx: &Context) -> Result<PolicySummary, CliError> {
    let dir = ctx.out();
    let rows: Vec<OutcomeRow> = art::read_csv(dir, art::OUTCOMES, "evaluate")?;
    if rows.is_empty() {
        return Err(CliError::Config(format!("{} holds no runs", art::OUTCOMES)));
    }
    let times: Vec<f64> = rows.iter().map(|r| r.stop_time_hours).collect();
    let rewards: Vec<f64> = rows.iter().map(|r| r.reward).collect();
    let summary = summarize(&times, &rewards, &summary_options(ctx))?;

    let w = summary.histogram.bin_width / HOURS_PER_YEAR;
    let hist: Vec<HistogramRow> = summary
        .histogram
        .counts
        .iter()
        .enumerate()
        .map(|(k, &count)| HistogramRow {
            bin_start_years: k as f64 * w,
            bin_end_years: (k + 1) as f64 * w,
            count,
        })
        .collect();
    art::write_csv(dir, art::HISTOGRAM, &hist)?;
    let quant: Vec<QuantileRow> = summary
        .quantiles
        .iter()
        .map(|&(level, t)| QuantileRow {
            level,
            tau_hours: t,
            tau_years: t / HOURS_PER_YEAR,
        })
        .collect();
    art::write_csv(dir, art::QUANTILES, &quant)?;
    let exc: Vec<ExceedanceRow> = summary
        .exceedance
        .iter()
        .map(|&(t, p)| ExceedanceRow {
            date_years: t / HOURS_PER_YEAR,
            p_stopped: p,
            p_no_maintenance: 1.0 - p,
        })
        .collect();
    art::write_csv(dir, art::EXCEEDANCE, &exc)?;

    let chain = art::load_chain(dir, &ctx.hash)?;
    let s = art::load_solve(dir, &ctx.hash)?;
    check_artifacts(&chain, &s, ctx.cfg.horizon).map_err(|e| CliError::Mismatch(e.to_string()))?;
    let seed = ctx.seed("evaluate");
    let mut paths = Vec::new();
    for run in 0..ctx.cfg.evaluate.paths.min(rows.len()) as u64 {
        let mut rng = substream(seed, run);
        let z0 = ctx.model.sample_initial(&mut rng);
        let traj = simulate(&ctx.model, z0, ctx.cfg.horizon, &mut rng)?;
        let o = apply_policy(&ctx.model, &chain, &s, &ctx.reward, &traj)?;
        paths.extend(sample_path(&ctx.model, run, &traj, Some(o.stop_time)));
    }
    art::write_csv(dir, art::STOPPED_PATHS, &paths)?;

    let mut text = String::new();
    let _ = writeln!(text, "runs                 {}", summary.runs);
    let _ = writeln!(
        text,
        "mean reward          {:.6} (se {:.6})",
        summary.mean_reward, summary.std_error
    );
    let _ = writeln!(
        text,
        "mean stopping time   {:.3} years",
        summary.mean_stop_time / HOURS_PER_YEAR
    );
    let _ = writeln!(text, "stopping-time quantiles (years)");
    for q in &quant {
        let _ = writeln!(text, "  {:>5.1}%  {:>8.3}", q.level * 100.0, q.tau_years);
    }
    art::write_text(dir, art::REPORT, &text)?;
    ctx.say(text.trim_end());
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct ConvergenceRow {
    pub k: usize,
    pub v0: f64,
    pub mc_mean: f64,
    pub mc_se: f64,
    pub train_seconds: f64,
    pub solve_seconds: f64,
    pub evaluate_seconds: f64,
}

fn convergence_table(rows: &[ConvergenceRow]) -> String {
    let mut t = String::new();
    let _ = writeln!(
        t,
        "{:>6}  {:>10}  {:>10}  {:>9}  {:>9}  {:>9}  {:>9}",
        "K", "direct", "MC", "MC se", "train s", "solve s", "eval s"
    );
    for r in rows {
        let _ = writeln!(
            t,
            "{:>6}  {:>10.4}  {:>10.4}  {:>9.5}  {:>9.2}  {:>9.2}  {:>9.2}",
            r.k, r.v0, r.mc_mean, r.mc_se, r.train_seconds, r.solve_seconds, r.evaluate_seconds
        );
    }
    t
}

/// Trains, solves and evaluates for every K in `ks` (sorted), writing the
/// convergence table after each row. Artifacts of each K go to `out/k<K>/`.
pub fn pipeline_cmd(ctx: &Context, ks: &[usize]) -> Result<Vec<ConvergenceRow>, CliError> {
    let dir = ctx.out().clone();
    art::ensure_dir(&dir)?;
    let mut ks = ks.to_vec();
    ks.sort_unstable();
    ks.dedup();
    let stage = |name: String| {
        move |e: CliError| CliError::Stage {
            stage: name,
            source: Box::new(e),
        }
    };
    let norm = compute_scales(ctx).map_err(stage("scales".into()))?;
    let mut rows = Vec::new();
    for k in ks {
        let mut cfg = ctx.cfg.with_k(k);
        cfg.out = dir.join(format!("k{k}"));
        let sub = Context::new(cfg, ctx.quiet)?;
        art::ensure_dir(sub.out())?;
        art::write_json(
            sub.out(),
            art::SCALES,
            &ScalesFile {
                config_hash: sub.hash.clone(),
                pilot: sub.cfg.quantizer.pilot,
                scales: norm.scales().to_vec(),
            },
        )?;

        let t = Instant::now();
        let chain = train_chain(&sub, &norm).map_err(stage(format!("K={k} train")))?;
        art::save_chain(sub.out(), &chain)?;
        let train_seconds = t.elapsed().as_secs_f64();

        let t = Instant::now();
        let s = solve_chain(&sub, &chain).map_err(stage(format!("K={k} solve")))?;
        art::save_solve(sub.out(), &s)?;
        art::write_json(sub.out(), art::SOLVE_SUMMARY, &solve_summary(&sub, &s))?;
        let solve_seconds = t.elapsed().as_secs_f64();

        let t = Instant::now();
        let summary = evaluate_chain(&sub, &chain, &s).map_err(stage(format!("K={k} evaluate")))?;
        let evaluate_seconds = t.elapsed().as_secs_f64();

        rows.push(ConvergenceRow {
            k,
            v0: s.v0,
            mc_mean: summary.mean_reward,
            mc_se: summary.std_error,
            train_seconds,
            solve_seconds,
            evaluate_seconds,
        });
        art::write_csv(&dir, art::CONVERGENCE, &rows)?;
        art::write_text(&dir, art::CONVERGENCE_TABLE, &convergence_table(&rows))?;
        ctx.say(format!(
            "K={k}: direct {:.4}, MC {:.4} (se {:.4})",
            s.v0, summary.mean_reward, summary.std_error
        ));
    }
    Ok(rows)
}
