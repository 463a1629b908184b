use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use duskmot::gradsuite::{self, SuiteConfig};
use duskmot::metrics::{evaluate, Aggregation, EvalResult};
use duskmot::mot_io::{
    group_by_frame, load_sequence, parse_det, parse_gt, parse_results, read_embeddings, stats_adjacent_iou,
    stats_appearance_cosine, write_result, Histogram,
};
use duskmot::noise::{model_variance, synthesize};
use duskmot::raw::{max_code, read_raw, simple_isp, write_raw, RawFrame};
use duskmot::toynet::{paired_set, toy_train};
use duskmot::tracker::{linear_interpolation, Detection, Tracker};
use duskmot::Error;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::exit::{Failure, Usage};

const VARIANCE_TOL: f64 = 0.05;

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
    }
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

fn require_seed(cfg: &RunConfig, cmd: &str) -> Result<u64> {
    cfg.seed
        .ok_or_else(|| Usage(format!("{cmd} requires --seed")).into())
}

fn frame_hash(frame: &RawFrame) -> String {
    let mut h = Sha256::new();
    for v in frame.data() {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

struct Variance {
    signal: f64,
    sample: f64,
    model: f64,
}

impl Variance {
    fn ok(&self) -> bool {
        if self.model == 0.0 {
            self.sample == 0.0
        } else {
            ((self.sample - self.model) / self.model).abs() <= VARIANCE_TOL
        }
    }
}

fn frame_variance(clean: &RawFrame, noisy: &RawFrame, cfg: &RunConfig) -> Result<Option<Variance>> {
    let first = clean.data()[0];
    if clean.data().iter().any(|&v| v != first) || first < clean.black_level() {
        return Ok(None);
    }
    let params = cfg.noise()?;
    let signal = (first - clean.black_level()) as f64 * params.ratio;
    let n = noisy.data().len() as f64;
    let mean = noisy.data().iter().map(|&v| v as f64).sum::<f64>() / n;
    let sample = noisy.data().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(Some(Variance {
        signal,
        sample,
        model: model_variance(signal, &params)?,
    }))
}

pub fn synth(cfg: &RunConfig, input: &Path, output: &Path, verify: bool) -> Result<()> {
    let seed = require_seed(cfg, "synth")?;
    let params = cfg.noise()?;
    let seq = load_sequence(input)?;
    if seq.raw_frames.is_empty() {
        return Err(Error::Format(format!("{}: no raw/*.raw16 frames", input.display())).into());
    }
    let raw_out = output.join("raw");
    fs::create_dir_all(&raw_out).map_err(|e| Error::Io {
        path: raw_out.clone(),
        source: e,
    })?;
    for rel in ["seqinfo", "seqinfo.ini", "gt/gt.txt", "det/det.txt"] {
        let src = input.join(rel);
        if src.is_file() {
            let text = fs::read_to_string(&src).map_err(|e| Error::Io { path: src.clone(), source: e })?;
            write(&output.join(rel), &text)?;
        }
    }

    let rows: Vec<(u64, String, Option<Variance>)> = seq
        .raw_frames
        .par_iter()
        .map(|(idx, path)| -> Result<_> {
            let clean = read_raw(path)?;
            let mut keyed = clean.clone();
            keyed.frame_index.get_or_insert(*idx);
            let mut noisy = synthesize(&keyed, &params, seed)?;
            noisy.frame_index = clean.frame_index;
            let name = path.file_name().context("raw frame without a file name")?;
            write_raw(&raw_out.join(name), &noisy)?;
            let var = if verify { frame_variance(&clean, &noisy, cfg)? } else { None };
            Ok((*idx, frame_hash(&noisy), var))
        })
        .collect::<Result<_>>()?;

    let mut log = String::new();
    let _ = writeln!(log, "input={}", input.display());
    let _ = writeln!(log, "config_sha256={}", cfg.hash());
    log.push_str(&cfg.resolved());
    for (idx, hash, _) in &rows {
        let _ = writeln!(log, "frame.{idx}.sha256={hash}");
    }
    write(&output.join("synth.log"), &log)?;
    log::info!("synthesized {} frames into {}", rows.len(), output.display());

    if verify {
        let mut failed = Vec::new();
        let mut checked = 0;
        for (idx, _, v) in &rows {
            match v {
                Some(v) => {
                    checked += 1;
                    println!(
                        "verify frame={idx} signal={:.4} sample_var={:.6} model_var={:.6} {}",
                        v.signal,
                        v.sample,
                        v.model,
                        if v.ok() { "ok" } else { "FAIL" }
                    );
                    if !v.ok() {
                        failed.push(*idx);
                    }
                }
                None => println!("verify frame={idx} skipped (not a constant frame)"),
            }
        }
        if checked == 0 {
            println!("verify: no constant frames to check");
        }
        if !failed.is_empty() {
            return Err(Failure(format!("variance check failed on frames {failed:?}")).into());
        }
    }
    Ok(())
}

/// Frames `first..=last`, empty ones included, so track ages advance.
fn dense_frames(dets: Vec<Detection>, length: Option<u64>) -> Vec<(u64, Vec<Detection>)> {
    let grouped = group_by_frame(dets);
    let last = length
        .into_iter()
        .chain(grouped.last().map(|g| g.0))
        .max();
    let Some(last) = last else { return Vec::new() };
    let first = if length.is_some() { 1 } else { grouped[0].0 };
    let mut it = grouped.into_iter().peekable();
    (first.min(last)..=last)
        .map(|f| match it.peek() {
            Some((g, _)) if *g == f => it.next().unwrap(),
            _ => (f, Vec::new()),
        })
        .collect()
}

pub fn track(cfg: &RunConfig, seq: Option<&Path>, det: Option<&Path>, out: &Path, no_interp: bool) -> Result<()> {
    let seq = seq.map(load_sequence).transpose()?;
    let dets = match (det, &seq) {
        (Some(p), _) => parse_det(p)?.records,
        (None, Some(s)) => s
            .det
            .clone()
            .ok_or_else(|| Usage(format!("{}: no det/det.txt; pass --det", s.dir.display())))?,
        (None, None) => return Err(Usage("track needs --det or --seq".into()).into()),
    };
    let fps = seq.as_ref().map_or(20.0, |s| s.meta.fps);
    let tcfg = cfg.tracker(fps)?;
    let frames = dense_frames(dets, seq.as_ref().map(|s| s.meta.length));

    let mut tracker = Tracker::new(tcfg.clone())?;
    let mut timing = String::from("frame,detections,tracks,micros\n");
    for (f, d) in &frames {
        let t0 = Instant::now();
        let live = tracker.step(*f, d)?;
        let _ = writeln!(timing, "{f},{},{},{}", d.len(), live.len(), t0.elapsed().as_micros());
    }
    let mut tracklets = tracker.finish();
    let interpolate: bool = cfg.get("tracker.interpolate")?;
    if interpolate && !no_interp {
        tracklets = linear_interpolation(&tracklets, tcfg.max_gap);
    }
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
    }
    write_result(&tracklets, out)?;
    if cfg.get::<bool>("io.timing")? {
        write(&with_suffix(out, ".timing.csv"), &timing)?;
    }
    log::info!("{} frames, {} tracks -> {}", frames.len(), tracklets.len(), out.display());
    Ok(())
}

pub fn eval(cfg: &RunConfig, gt: &Path, result: &Path, out: Option<&Path>) -> Result<()> {
    let gt = parse_gt(gt)?;
    let pred = parse_results(result)?;
    for (what, n) in [("ground truth", gt.rejected), ("result", pred.rejected)] {
        if n > 0 {
            log::warn!("{n} {what} lines with non-positive size dropped");
        }
    }
    let primary = cfg.aggregation()?;
    let other = match primary {
        Aggregation::DetAvg => Aggregation::ClassAvg,
        Aggregation::ClassAvg => Aggregation::DetAvg,
    };
    let results: Vec<EvalResult> = [primary, other]
        .iter()
        .map(|&a| Ok(evaluate(&gt.records, &pred.records, &cfg.metrics(a)?)?))
        .collect::<Result<_>>()?;

    let mut text = String::new();
    let mut kv = String::new();
    for r in &results {
        text.push_str(&r.to_text());
        text.push('\n');
        let mode = r.to_kv();
        let prefix = mode.lines().next().and_then(|l| l.strip_prefix("aggregation=")).unwrap_or("");
        for line in mode.lines().skip(1) {
            let _ = writeln!(kv, "{prefix}.{line}");
        }
    }
    print!("{text}");
    if let Some(out) = out {
        write(&with_suffix(out, ".txt"), &text)?;
        write(&with_suffix(out, ".kv"), &kv)?;
    }
    if results.iter().any(EvalResult::has_undefined) {
        return Err(Failure("undefined metrics in report".into()).into());
    }
    Ok(())
}

fn histogram_csv(h: &Histogram) -> String {
    let width = (h.hi - h.lo) / h.counts.len() as f64;
    let mut s = String::from("lo,hi,count\n");
    for (i, c) in h.counts.iter().enumerate() {
        let lo = h.lo + width * i as f64;
        let _ = writeln!(s, "{lo:.4},{:.4},{c}", lo + width);
    }
    s
}

pub fn stats(gt: &Path, embeddings: Option<&Path>, out: Option<&Path>) -> Result<()> {
    let gt = parse_gt(gt)?.records;
    let iou = stats_adjacent_iou(&gt);
    let mut kv = iou.to_kv("adjacent_iou");
    let mut csv = vec![("adjacent_iou.csv", histogram_csv(&iou))];
    match embeddings {
        Some(path) => {
            let emb = read_embeddings(path)?;
            let cos = stats_appearance_cosine(&gt, &emb)?;
            kv.push_str(&cos.same_id.to_kv("cosine.same_id"));
            kv.push_str(&cos.cross_id.to_kv("cosine.cross_id"));
            let _ = writeln!(kv, "cosine.missing={}", cos.missing.len());
            csv.push(("cosine_same_id.csv", histogram_csv(&cos.same_id)));
            csv.push(("cosine_cross_id.csv", histogram_csv(&cos.cross_id)));
        }
        None => println!("notice: no embeddings given; cosine statistics skipped"),
    }
    print!("{kv}");
    if let Some(out) = out {
        write(&with_suffix(out, ".kv"), &kv)?;
        for (name, body) in csv {
            write(&with_suffix(out, &format!(".{name}")), &body)?;
        }
    }
    Ok(())
}

pub fn gradcheck(seeds: usize, mutate: bool) -> Result<()> {
    let report = gradsuite::run(&SuiteConfig {
        seeds,
        mutate,
        ..Default::default()
    })?;
    println!("{:<28} {:>6} {:>12}  {:<6} worst case", "op", "cases", "max_rel_err", "status");
    for op in &report.ops {
        println!(
            "{:<28} {:>6} {:>12.3e}  {:<6} {}",
            op.op,
            op.cases,
            op.max_rel_err,
            if op.pass { "ok" } else { "FAIL" },
            op.worst_case
        );
    }
    println!("elapsed {:.2}s", report.seconds);
    if report.pass() {
        Ok(())
    } else {
        let bad: Vec<&str> = report.ops.iter().filter(|o| !o.pass).map(|o| o.op.as_str()).collect();
        Err(Failure(format!("gradient check failed: {}", bad.join(", "))).into())
    }
}

pub fn toytrain(cfg: &RunConfig, out: Option<&Path>, snapshot: Option<&Path>) -> Result<()> {
    let seed = require_seed(cfg, "toytrain")?;
    let tcfg = cfg.train(seed)?;
    let (set_cfg, heldout) = cfg.paired_set()?;
    let data = paired_set(&set_cfg, seed)?;
    let (train, held) = data.split_at(data.len() - heldout);

    let mut kv = String::new();
    let _ = writeln!(kv, "config_sha256={}", cfg.hash());
    let base = toy_train(train, held, &tcfg, false)?;
    kv.push_str(&base.to_kv("baseline."));
    let mut dsl_snapshot = None;
    if tcfg.steps > 0 {
        let dsl = toy_train(train, held, &tcfg, true)?;
        kv.push_str(&dsl.to_kv("dsl."));
        let _ = writeln!(kv, "ratio.feature_distance={:.6}", dsl.feature_distance / base.feature_distance);
        let _ = writeln!(kv, "ratio.det_loss_low={:.6}", dsl.det_loss_low / base.det_loss_low);
        dsl_snapshot = Some(dsl.snapshot);
    }
    print!("{kv}");
    if let Some(out) = out {
        write(out, &kv)?;
    }
    if let Some(path) = snapshot {
        let tensors = dsl_snapshot.unwrap_or(base.snapshot);
        duskmot::blob::write(path, &tensors, serde_json::json!({ "config_sha256": cfg.hash() }))?;
    }
    Ok(())
}

pub fn isp(cfg: &RunConfig, input: &Path, output: &Path) -> Result<()> {
    let mut raw = read_raw(input)?;
    let exposure: f64 = cfg.get("io.exposure")?;
    if !(exposure > 0.0 && exposure.is_finite()) {
        return Err(Usage(format!("io.exposure={exposure} must be positive")).into());
    }
    if exposure != 1.0 {
        let black = raw.black_level() as f64;
        let max = max_code(raw.bit_depth()) as f64;
        let data = raw
            .data()
            .iter()
            .map(|&v| (black + (v as f64 - black) * exposure).round().clamp(0.0, max) as u16)
            .collect();
        raw = raw.with_data(data)?;
    }
    let rgb = simple_isp(&raw, cfg.wb_gains()?, cfg.get("io.gamma")?)?;
    rgb.save_png(output)?;
    log::info!("{}x{} preview -> {}", rgb.width(), rgb.height(), output.display());
    Ok(())
}
