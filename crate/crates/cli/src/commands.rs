use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::Serialize;
use simtrans_core::gradcheck::{run_gradcheck, GradCheckConfig};
use simtrans_core::io::{read_jsonl, read_lattices, HypothesisRecord, PathRecord, RefRecord, TargetRecord};
use simtrans_core::mask::{build_mask, BlockSpec};
use simtrans_core::objective::params_for_lattice;
use simtrans_core::policy::default_max_target;
use simtrans_core::toy::{
    sentence_quality, tradeoff_curve, train as train_model, BoundScorer, Checkpoint, CurveConfig, ScorerConfig,
    SyntheticTask, TinyScorer, TrainConfig, TrainError,
};
use simtrans_core::{
    average_lagging, differentiable_average_lagging, greedy_decode, loss_and_grad, path_latency, ActionPath,
    ChunkConfig, DelayVector, Execution, LatencyParams, LossConfig,
};

use crate::error::CliError;
use crate::manifest::RunManifest;
use crate::{
    CurveArgs, DecodeArgs, EvalArgs, GradcheckArgs, LossArgs, MaskArgs, MaskFormat, OptimArgs, Status, TrainArgs,
};

type CmdResult = Result<Status, CliError>;

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path).map(BufReader::new).map_err(|e| CliError::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::io(path, e))
}

fn csv_writer(path: &Path, header: &[&str]) -> Result<csv::Writer<File>, CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::io(path, e))?;
    w.write_record(header)?;
    Ok(w)
}

/// Shortest text that parses back to the same `f64`.
fn num(x: f64) -> String {
    format!("{x}")
}

fn write_json_line(w: &mut impl Write, path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    serde_json::to_writer(&mut *w, value).map_err(|e| CliError::io(path, e))?;
    w.write_all(b"\n").map_err(|e| CliError::io(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut w = create(path)?;
    write_json_line(&mut w, path, value)?;
    w.flush().map_err(|e| CliError::io(path, e))
}

fn check_aligned(what: &str, left: usize, right: usize) -> Result<(), CliError> {
    if left != right {
        return Err(CliError::Io(format!("{what}: {left} vs {right} records")));
    }
    Ok(())
}

fn train_config(optim: &OptimArgs, loss: LossConfig, seed: u64, log_every: usize) -> TrainConfig {
    TrainConfig {
        loss,
        steps: optim.steps,
        lr: optim.lr,
        momentum: optim.momentum,
        batch_size: optim.batch_size,
        clip_norm: (optim.clip_norm > 0.0).then_some(optim.clip_norm),
        seed,
        log_every,
    }
}

pub fn loss(args: &LossArgs, exec: Execution) -> CmdResult {
    let cfg = LossConfig { lambda_latency: args.lambda_latency, lambda_ce: args.lambda_ce, d: args.d };
    cfg.validate()?;
    let lattices = read_lattices(open(&args.lattices)?)?;
    let targets: Vec<(usize, TargetRecord)> = read_jsonl(open(&args.targets)?)?;
    check_aligned("lattices and targets", lattices.len(), targets.len())?;
    let pairs: Vec<_> = lattices.iter().zip(&targets).collect();
    let results = exec.map(&pairs, |_, ((_, lattice), (_, target))| {
        let params = params_for_lattice(lattice, target.src_len, cfg.d)?;
        loss_and_grad(lattice, &target.tokens, &params, &cfg).map(|(l, _)| l)
    });

    let mut w = csv_writer(&args.out, &["sentence_id", "nll", "latency", "ce", "total", "error"])?;
    let mut failed = 0;
    for (idx, r) in results.iter().enumerate() {
        let id = idx.to_string();
        match r {
            Ok(l) => w.write_record([id, num(l.nll), num(l.latency), num(l.ce), num(l.total), String::new()])?,
            Err(e) => {
                failed += 1;
                let line = pairs[idx].0 .0;
                w.write_record([
                    id,
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    format!("line {line}: {e}"),
                ])?;
            }
        }
    }
    w.flush().map_err(|e| CliError::io(&args.out, e))?;
    RunManifest::new("loss", args)?
        .input(&args.lattices)
        .input(&args.targets)
        .output(&args.out)
        .write_for(&args.out)?;
    Ok(if failed == 0 {
        Status::Ok
    } else {
        Status::Failed(format!("{failed} of {} sentences could not be scored", results.len()))
    })
}

#[derive(Serialize)]
struct GradcheckOutput {
    passed: bool,
    trials: usize,
    coords_checked: usize,
    max_rel_err_nll: f64,
    max_rel_err_latency: f64,
    nll_tol: f64,
    latency_tol: f64,
}

pub fn gradcheck(args: &GradcheckArgs) -> CmdResult {
    let (t, u) = args.size;
    let cfg = GradCheckConfig {
        num_decisions: t,
        target_len: u,
        vocab: args.vocab,
        trials: args.trials,
        coords_per_trial: args.coords,
        seed: args.seed,
        step: args.step,
        nll_tol: args.nll_tol,
        latency_tol: args.latency_tol,
    };
    let report = run_gradcheck(&cfg)?;
    let verdict = |ok: bool| if ok { "PASS" } else { "FAIL" };
    println!(
        "{} nll gradient: max rel err {:e} (tol {:e})",
        verdict(report.nll_passed()),
        report.max_rel_err_nll,
        report.nll_tol
    );
    println!(
        "{} latency gradient: max rel err {:e} (tol {:e})",
        verdict(report.latency_passed()),
        report.max_rel_err_latency,
        report.latency_tol
    );
    println!("{} {t}x{u}, {} trials, {} coordinates", verdict(report.passed()), report.trials, report.coords_checked);
    if let Some(out) = &args.out {
        write_json(
            out,
            &GradcheckOutput {
                passed: report.passed(),
                trials: report.trials,
                coords_checked: report.coords_checked,
                max_rel_err_nll: report.max_rel_err_nll,
                max_rel_err_latency: report.max_rel_err_latency,
                nll_tol: report.nll_tol,
                latency_tol: report.latency_tol,
            },
        )?;
        RunManifest::new("gradcheck", args)?.seed(args.seed).output(out).write_for(out)?;
    }
    Ok(if report.passed() { Status::Ok } else { Status::Failed("gradient check exceeded tolerance".into()) })
}

struct EvalRow {
    al: f64,
    dal: f64,
    path_latency: f64,
    quality: f64,
}

fn strip_eos(tokens: &[usize], eos: Option<usize>) -> &[usize] {
    match (tokens.last(), eos) {
        (Some(&t), Some(e)) if t == e => &tokens[..tokens.len() - 1],
        _ => tokens,
    }
}

fn eval_one(hyp: &HypothesisRecord, reference: &RefRecord, eos: Option<usize>) -> simtrans_core::Result<EvalRow> {
    let (path, delays, tokens, params): (ActionPath, DelayVector, &[usize], LatencyParams) = match hyp {
        HypothesisRecord::Path(p) => {
            let params = LatencyParams::new(p.src_len, p.tokens.len(), p.d)?;
            let path = p.to_path()?;
            let delays = DelayVector::from_path(&path, &params);
            (path, delays, &p.tokens, params)
        }
        HypothesisRecord::Delays(h) => {
            let params = LatencyParams::new(h.src_len, h.tokens.len(), h.d)?;
            let delays = DelayVector::new(h.delays.clone(), h.src_len)?;
            let path = delays.to_path(&h.tokens, &params)?;
            (path, delays, &h.tokens, params)
        }
    };
    Ok(EvalRow {
        al: average_lagging(&delays, &params)?,
        dal: differentiable_average_lagging(&delays, &params)?,
        path_latency: path_latency(&path, &params)?,
        quality: sentence_quality(strip_eos(tokens, eos), strip_eos(&reference.tokens, eos)),
    })
}

pub fn eval(args: &EvalArgs, exec: Execution) -> CmdResult {
    let hyps: Vec<(usize, HypothesisRecord)> = read_jsonl(open(&args.paths)?)?;
    let refs: Vec<(usize, RefRecord)> = read_jsonl(open(&args.refs)?)?;
    check_aligned("paths and refs", hyps.len(), refs.len())?;
    let pairs: Vec<_> = hyps.iter().zip(&refs).collect();
    let rows = exec.map(&pairs, |_, ((_, h), (_, r))| eval_one(h, r, args.eos_id));

    let mut w = csv_writer(&args.out, &["sentence_id", "al", "dal", "path_latency", "quality", "flag"])?;
    let mut sums = [0.0; 4];
    let mut good = 0usize;
    for (id, row) in rows.iter().enumerate() {
        match row {
            Ok(r) => {
                for (s, x) in sums.iter_mut().zip([r.al, r.dal, r.path_latency, r.quality]) {
                    *s += x;
                }
                good += 1;
                w.write_record([
                    id.to_string(),
                    num(r.al),
                    num(r.dal),
                    num(r.path_latency),
                    num(r.quality),
                    String::new(),
                ])?;
            }
            Err(e) => {
                let line = pairs[id].0 .0;
                w.write_record([
                    id.to_string(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    format!("line {line}: {e}"),
                ])?;
            }
        }
    }
    let mean = |s: f64| if good == 0 { String::new() } else { num(s / good as f64) };
    w.write_record(["mean".to_string(), mean(sums[0]), mean(sums[1]), mean(sums[2]), mean(sums[3]), String::new()])?;
    w.flush().map_err(|e| CliError::io(&args.out, e))?;
    RunManifest::new("eval", args)?.input(&args.paths).input(&args.refs).output(&args.out).write_for(&args.out)?;
    let flagged = rows.len() - good;
    Ok(if flagged == 0 { Status::Ok } else { Status::Failed(format!("{flagged} of {} rows flagged", rows.len())) })
}

fn write_log(path: &Path, log: &[simtrans_core::toy::LogRow]) -> Result<(), CliError> {
    let mut w = csv_writer(path, &["step", "nll", "latency_loss", "ce_loss", "total"])?;
    for r in log {
        w.write_record([r.step.to_string(), num(r.nll), num(r.latency_loss), num(r.ce_loss), num(r.total)])?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn train(args: &TrainArgs, exec: Execution) -> CmdResult {
    let spec = args.task.spec(args.seed);
    let task = SyntheticTask::new(spec.clone())?;
    let corpus = task.sample(args.optim.train_size, 0);
    let loss = LossConfig { lambda_latency: args.lambda_latency, lambda_ce: args.optim.lambda_ce, d: args.d };
    let cfg = train_config(&args.optim, loss, args.seed, args.log_every);
    let log_path = args.log.clone().unwrap_or_else(|| {
        let mut name = args.out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
        name.push(".log.csv");
        args.out.with_file_name(name)
    });
    let (model, log, outcome) = match train_model(&corpus, ScorerConfig::for_task(&spec), &cfg, exec) {
        Ok(t) => (t.model, t.log, Ok(Status::Ok)),
        Err(TrainError::Diverged { step, reason, checkpoint, log }) => {
            let msg = format!("training diverged at step {step}: {reason}; wrote last finite checkpoint");
            (*checkpoint, log, Err(CliError::Validation(msg)))
        }
        Err(e) => return Err(e.into()),
    };
    write_json(&args.out, &model.to_checkpoint())?;
    write_log(&log_path, &log)?;
    RunManifest::new("train", args)?.seed(args.seed).output(&args.out).output(&log_path).write_for(&args.out)?;
    outcome
}

pub fn decode(args: &DecodeArgs, exec: Execution) -> CmdResult {
    let ckpt: Checkpoint =
        serde_json::from_reader(open(&args.checkpoint)?).map_err(|e| CliError::io(&args.checkpoint, e))?;
    let model = TinyScorer::from_checkpoint(ckpt)?;
    let task = SyntheticTask::new(args.task.spec(args.seed))?;
    let heldout = task.sample(args.n, 1);
    let chunks = ChunkConfig::new(args.d)?;
    let decoded = exec.map(&heldout, |_, ex| {
        let scorer = BoundScorer { model: &model, source: &ex.source };
        greedy_decode(&scorer, ex.source.len(), chunks, default_max_target(ex.source.len()))
    });
    let mut paths = create(&args.out)?;
    let mut refs = create(&args.refs)?;
    for (ex, out) in heldout.iter().zip(decoded) {
        let out = out?;
        write_json_line(&mut paths, &args.out, &PathRecord::from_path(&out.path, ex.source.len(), args.d))?;
        write_json_line(&mut refs, &args.refs, &RefRecord { tokens: ex.target.clone() })?;
    }
    paths.flush().map_err(|e| CliError::io(&args.out, e))?;
    refs.flush().map_err(|e| CliError::io(&args.refs, e))?;
    RunManifest::new("decode", args)?
        .seed(args.seed)
        .input(&args.checkpoint)
        .output(&args.out)
        .output(&args.refs)
        .write_for(&args.out)?;
    Ok(Status::Ok)
}

pub fn curve(args: &CurveArgs, exec: Execution) -> CmdResult {
    let grid = args.d.iter().flat_map(|&d| args.lambda_latency.iter().map(move |&l| (d, l))).collect();
    let loss = LossConfig { lambda_ce: args.optim.lambda_ce, ..LossConfig::default() };
    let cfg = CurveConfig {
        grid,
        seeds: args.seeds.clone(),
        task: args.task.spec(0),
        train_size: args.optim.train_size,
        heldout_size: args.heldout_size,
        train: TrainConfig { log_every: args.optim.steps.max(1), ..train_config(&args.optim, loss, 0, 1) },
    };
    let rows = tradeoff_curve(&cfg, exec)?;
    let mut w = csv_writer(
        &args.out,
        &["d", "lambda_latency", "mean_al", "mean_dal", "mean_quality", "mean_path_latency", "token_accuracy"],
    )?;
    for r in &rows {
        w.write_record([
            r.d.to_string(),
            num(r.lambda_latency),
            num(r.mean_al),
            num(r.mean_dal),
            num(r.mean_quality),
            num(r.mean_path_latency),
            num(r.token_accuracy),
        ])?;
    }
    w.flush().map_err(|e| CliError::io(&args.out, e))?;
    RunManifest::new("curve", args)?.output(&args.out).write_for(&args.out)?;
    Ok(Status::Ok)
}

pub fn mask(args: &MaskArgs) -> CmdResult {
    let spec = BlockSpec::new(args.m, args.r, args.len)?;
    let mask = build_mask(&spec);
    match args.format {
        MaskFormat::Packed => write_json(&args.out, &mask.to_packed())?,
        MaskFormat::Intervals => write_json(&args.out, &mask.to_intervals())?,
    }
    RunManifest::new("mask", args)?.output(&args.out).write_for(&args.out)?;
    Ok(Status::Ok)
}
