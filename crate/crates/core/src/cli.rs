//! Command-line front end.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use crate::cobb::{grade, is_boundary_case, CobbResult, SeverityLevel};
use crate::curve::View;
use crate::error::{Error, Result};
use crate::euformer::checkpoint::{load_generator, save_discriminator, save_generator};
use crate::euformer::{flops_attention, train, AttentionMode, DiscriminatorConfig, EUFormerConfig, Generator, TrainConfig, TrainingPair};
use crate::imageio::{read_netpbm, resize_bilinear, resize_nearest, write_atomic, write_pgm};
use crate::metrics::{class_metrics, confusion, iou_dice, macro_avg_sensitivity, mean_sd, ClassMetrics};
use crate::pipeline::{assess_maps, GeometryOptions};
use crate::selfcheck::gradient_suite;
use crate::synth::{self, DatasetConfig, SeverityBand};
use crate::tensor::{GradCheckConfig, Tensor};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const THREADS_ENV: &str = "SPINE3D_THREADS";

#[derive(Debug, Parser)]
#[command(name = "spine3d", version, about = "Biplanar spine curve synthesis and 3D Cobb angle assessment")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset of analytic spines.
    Synth(SynthArgs),
    /// Curve maps, 3D curve, 3D Cobb angle and grade for one PA/LAT pair.
    Assess(AssessArgs),
    /// Severity grade for an angle in degrees.
    Grade(GradeArgs),
    /// Overlap and grading metrics of predicted maps against a synthetic dataset.
    Eval(EvalArgs),
    /// Train the generator on a synthetic dataset.
    Train(TrainArgs),
    /// Finite-difference check of every differentiable op and the tiny generator.
    Gradcheck(GradcheckArgs),
    /// Attention multiply-accumulate counts, channel vs spatial.
    Flops(FlopsArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// mild, moderate or severe; cases rotate through all three when absent.
    #[arg(long, value_parser = parse_band)]
    pub severity: Option<SeverityBand>,
    #[arg(long, default_value_t = 320)]
    pub height: usize,
    #[arg(long, default_value_t = 160)]
    pub width: usize,
    #[arg(long, default_value_t = 5.0)]
    pub thickness: f64,
}

#[derive(Debug, Args)]
pub struct AssessArgs {
    /// PA input: RGB image (PPM), or curve map (PGM) with --maps-only.
    #[arg(long)]
    pub pa: PathBuf,
    /// LAT input, as for --pa.
    #[arg(long)]
    pub lat: PathBuf,
    /// Generator checkpoint (shared by both views unless --lat-params is given).
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Separate generator checkpoint for the LAT view.
    #[arg(long)]
    pub lat_params: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Treat the inputs as curve maps and skip the network.
    #[arg(long)]
    pub maps_only: bool,
    #[arg(long, default_value_t = 320)]
    pub height: usize,
    #[arg(long, default_value_t = 160)]
    pub width: usize,
    #[arg(long, default_value_t = crate::curve::DEFAULT_THRESHOLD)]
    pub threshold: f64,
    #[arg(long, default_value_t = crate::curve::DEFAULT_DEGREE)]
    pub degree: usize,
    #[arg(long, default_value_t = crate::curve::DEFAULT_SAMPLES)]
    pub samples: usize,
    /// Add sagittal inflections to the landmark set.
    #[arg(long)]
    pub sagittal_landmarks: bool,
    /// Also print a plot-ready CSV row (angle, grade).
    #[arg(long)]
    pub csv: bool,
}

#[derive(Debug, Args)]
pub struct GradeArgs {
    #[arg(long, allow_negative_numbers = true)]
    pub angle: f64,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Directory of predicted `case_####/{pa,lat}.pgm` maps.
    #[arg(long)]
    pub pred: PathBuf,
    /// Synthetic dataset directory with the ground truth.
    #[arg(long)]
    pub truth: PathBuf,
    /// Report path; defaults to `<pred>/eval_report.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = crate::curve::DEFAULT_THRESHOLD)]
    pub threshold: f64,
    /// Print per-case CSV rows (case, angle, grade, iou, dice) instead of JSON.
    #[arg(long)]
    pub csv: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Generator checkpoint to write.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub steps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 4)]
    pub batch: usize,
    /// Training resolution; defaults to the dataset's.
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
    /// Generator configuration JSON; the default architecture otherwise.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    pub disc_width: usize,
    #[arg(long)]
    pub no_augment: bool,
    /// Train one generator per view; the LAT checkpoint goes to `<out>.lat`.
    #[arg(long)]
    pub separate_views: bool,
    /// Loss history CSV; defaults to `<out>.csv`.
    #[arg(long)]
    pub history: Option<PathBuf>,
    /// Also save the discriminator.
    #[arg(long)]
    pub disc_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct FlopsArgs {
    #[arg(long)]
    pub h: usize,
    #[arg(long)]
    pub w: usize,
    #[arg(long)]
    pub c: usize,
    #[arg(long, default_value_t = 1)]
    pub heads: usize,
}

fn parse_band(s: &str) -> std::result::Result<SeverityBand, String> {
    SeverityBand::parse(s).ok_or_else(|| format!("unknown severity band {s:?} (mild, moderate, severe)"))
}

/// Parse `argv` (including the program name), run, and return the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let mut stdout = std::io::stdout().lock();
    match execute(cli.command, &mut stdout) {
        Ok(code) => code,
        Err(e) => {
            let _ = stdout.flush();
            eprintln!("error: {e}");
            EXIT_FAILURE
        }
    }
}

/// Run a parsed command, writing its primary output to `out`.
pub fn execute(command: Command, out: &mut dyn Write) -> Result<i32> {
    match command {
        Command::Synth(a) => cmd_synth(a, out),
        Command::Assess(a) => cmd_assess(a, out),
        Command::Grade(a) => cmd_grade(a, out),
        Command::Eval(a) => cmd_eval(a, out),
        Command::Train(a) => cmd_train(a, out),
        Command::Gradcheck(a) => cmd_gradcheck(a, out),
        Command::Flops(a) => cmd_flops(a, out),
    }
}

/// Worker count from `SPINE3D_THREADS`, else the available parallelism.
pub fn thread_count() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Map `f` over `items` on up to [`thread_count`] scoped threads, keeping order.
fn parallel_map<T: Sync, R: Send>(items: &[T], f: impl Fn(usize, &T) -> R + Sync) -> Vec<R> {
    let threads = thread_count().min(items.len()).max(1);
    if threads == 1 {
        return items.iter().enumerate().map(|(i, t)| f(i, t)).collect();
    }
    let chunk = items.len().div_ceil(threads);
    std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .enumerate()
            .map(|(c, part)| {
                let f = &f;
                s.spawn(move || {
                    part.iter()
                        .enumerate()
                        .map(|(i, t)| f(c * chunk + i, t))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker panicked"))
            .collect()
    })
}

fn print_json(out: &mut dyn Write, value: &impl Serialize) -> Result<()> {
    serde_json::to_writer_pretty(&mut *out, value)?;
    writeln!(out)?;
    Ok(())
}

fn cmd_synth(a: SynthArgs, out: &mut dyn Write) -> Result<i32> {
    let config = DatasetConfig {
        height: a.height,
        width: a.width,
        thickness: a.thickness,
    };
    fs::create_dir_all(&a.out)?;
    let seeds = synth::case_seeds(a.seed, a.n);
    let results = parallel_map(&seeds, |i, &s| {
        synth::write_case(&a.out, i, s, synth::case_band(a.severity, i), &config)
    });
    let truths = results.into_iter().collect::<Result<Vec<_>>>()?;
    let summary: Vec<_> = truths
        .iter()
        .map(|t| json!({"case": t.case, "analytic_angle_deg": t.analytic_angle_deg, "grade": t.grade}))
        .collect();
    print_json(out, &json!({"out": a.out, "cases": summary}))?;
    Ok(EXIT_OK)
}

#[derive(Debug, Serialize)]
pub struct AssessReport {
    pub inputs: InputPaths,
    pub maps: Option<InputPaths>,
    pub maps_only: bool,
    pub cobb3d: Option<CobbResult>,
    pub cobb2d: Option<CobbResult>,
    pub curve3d: Option<crate::curve::Curve3D>,
    pub error: Option<String>,
    pub timing_ms: f64,
}

#[derive(Debug, Serialize)]
pub struct InputPaths {
    pub pa: PathBuf,
    pub lat: PathBuf,
}

fn load_map(path: &Path, h: usize, w: usize) -> Result<Tensor> {
    let m = read_netpbm(path)?;
    if m.shape().c != 1 {
        return Err(Error::format("curve map", format!("{} is not a single-channel PGM", path.display())));
    }
    resize_nearest(&m, h, w)
}

fn load_rgb(path: &Path, h: usize, w: usize) -> Result<Tensor> {
    let m = read_netpbm(path)?;
    if m.shape().c != 3 {
        return Err(Error::format("trunk image", format!("{} is not an RGB PPM", path.display())));
    }
    resize_bilinear(&m, h, w)
}

fn cmd_assess(a: AssessArgs, out: &mut dyn Write) -> Result<i32> {
    let start = Instant::now();
    let (pa_map, lat_map, maps) = if a.maps_only {
        (
            load_map(&a.pa, a.height, a.width)?,
            load_map(&a.lat, a.height, a.width)?,
            None,
        )
    } else {
        let params = a
            .params
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("--params is required unless --maps-only is set".into()))?;
        let pa_gen = load_generator(params)?;
        let lat_gen: Option<Generator> = a.lat_params.as_deref().map(load_generator).transpose()?;
        let pa_map = pa_gen.forward(&load_rgb(&a.pa, a.height, a.width)?)?;
        let lat_map = lat_gen
            .as_ref()
            .unwrap_or(&pa_gen)
            .forward(&load_rgb(&a.lat, a.height, a.width)?)?;
        let paths = InputPaths {
            pa: a.out.join("pa.pgm"),
            lat: a.out.join("lat.pgm"),
        };
        write_pgm(&paths.pa, &pa_map)?;
        write_pgm(&paths.lat, &lat_map)?;
        (pa_map, lat_map, Some(paths))
    };
    let options = GeometryOptions {
        threshold: a.threshold,
        degree: a.degree,
        samples: a.samples,
        include_sagittal: a.sagittal_landmarks,
    };
    let geometry = assess_maps(&pa_map, &lat_map, &options);
    let mut report = AssessReport {
        inputs: InputPaths {
            pa: a.pa.clone(),
            lat: a.lat.clone(),
        },
        maps,
        maps_only: a.maps_only,
        cobb3d: None,
        cobb2d: None,
        curve3d: None,
        error: None,
        timing_ms: 0.0,
    };
    let failure = match geometry {
        Ok(g) => {
            report.cobb3d = Some(g.cobb3d);
            report.cobb2d = Some(g.cobb2d);
            report.curve3d = Some(g.curve);
            None
        }
        Err(e) => {
            report.error = Some(e.to_string());
            Some(e)
        }
    };
    report.timing_ms = start.elapsed().as_secs_f64() * 1e3;
    write_atomic(&a.out.join("report.json"), &serde_json::to_vec_pretty(&report)?)?;
    if let Some(e) = failure {
        return Err(e);
    }
    let cobb = report.cobb3d.as_ref().expect("set on success");
    if a.csv {
        writeln!(out, "angle_deg,grade")?;
        writeln!(out, "{},{}", cobb.max_angle_deg, cobb.severity)?;
    } else {
        print_json(out, &report)?;
    }
    Ok(EXIT_OK)
}

fn cmd_grade(a: GradeArgs, out: &mut dyn Write) -> Result<i32> {
    let severity = grade(a.angle)?;
    serde_json::to_writer(&mut *out, &json!({"severity": severity}))?;
    writeln!(out)?;
    if is_boundary_case(a.angle) {
        eprintln!("note: {} lies on a grade boundary", a.angle);
    }
    Ok(EXIT_OK)
}

#[derive(Debug, Serialize)]
struct EvalCase {
    case: String,
    iou_pa: f64,
    dice_pa: f64,
    iou_lat: f64,
    dice_lat: f64,
    iou: f64,
    dice: f64,
    angle_truth_deg: f64,
    angle_pred_deg: Option<f64>,
    grade_truth: SeverityLevel,
    grade_pred: Option<SeverityLevel>,
    error: Option<String>,
}

fn eval_case(case_dir: &Path, pred_root: &Path, threshold: f64) -> Result<EvalCase> {
    let name = case_dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let truth = synth::read_truth(case_dir)?;
    let pred_dir = pred_root.join(&name);
    let mut overlaps = Vec::new();
    let mut preds = Vec::new();
    for view in [View::Pa, View::Lat] {
        let stem = view.name().to_ascii_lowercase();
        let gt = read_netpbm(&case_dir.join(format!("{stem}.pgm")))?;
        let s = gt.shape();
        let pred = load_map(&pred_dir.join(format!("{stem}.pgm")), s.h, s.w)?;
        overlaps.push(iou_dice(&pred, &gt, threshold)?);
        preds.push(pred);
    }
    let options = GeometryOptions {
        threshold,
        ..GeometryOptions::default()
    };
    let geometry = assess_maps(&preds[0], &preds[1], &options);
    let (angle, grade_pred, error) = match geometry {
        Ok(g) => (Some(g.cobb3d.max_angle_deg), Some(g.cobb3d.severity), None),
        Err(e) => (None, None, Some(e.to_string())),
    };
    Ok(EvalCase {
        case: name,
        iou_pa: overlaps[0].0,
        dice_pa: overlaps[0].1,
        iou_lat: overlaps[1].0,
        dice_lat: overlaps[1].1,
        iou: 0.5 * (overlaps[0].0 + overlaps[1].0),
        dice: 0.5 * (overlaps[0].1 + overlaps[1].1),
        angle_truth_deg: truth.analytic_angle_deg,
        angle_pred_deg: angle,
        grade_truth: truth.grade,
        grade_pred,
        error,
    })
}

fn cmd_eval(a: EvalArgs, out: &mut dyn Write) -> Result<i32> {
    let cases = synth::list_cases(&a.truth)?;
    if cases.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let rows = parallel_map(&cases, |_, c| eval_case(c, &a.pred, a.threshold))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;

    let labels: Vec<String> = SeverityLevel::ALL.iter().map(|l| l.name().to_string()).collect();
    let graded: Vec<&EvalCase> = rows.iter().filter(|r| r.grade_pred.is_some()).collect();
    let pred: Vec<usize> = graded.iter().map(|r| r.grade_pred.expect("filtered").index()).collect();
    let gt: Vec<usize> = graded.iter().map(|r| r.grade_truth.index()).collect();
    let matrix = confusion(&pred, &gt, labels.clone())?;
    let mut per_class = serde_json::Map::new();
    if matrix.total() > 0 {
        for (i, label) in labels.iter().enumerate() {
            let m: ClassMetrics = class_metrics(&matrix, i)?;
            per_class.insert(label.clone(), serde_json::to_value(m)?);
        }
    }
    let macro_sens = macro_avg_sensitivity(&matrix).ok();
    let ious: Vec<f64> = rows.iter().map(|r| r.iou).collect();
    let dices: Vec<f64> = rows.iter().map(|r| r.dice).collect();
    let (iou_mean, iou_sd) = mean_sd(&ious).expect("non-empty");
    let (dice_mean, dice_sd) = mean_sd(&dices).expect("non-empty");

    let report = json!({
        "threshold": a.threshold,
        "cases": rows,
        "overlap": {"iou_mean": iou_mean, "iou_sd": iou_sd, "dice_mean": dice_mean, "dice_sd": dice_sd},
        "grading": {
            "classes": labels,
            "per_class": per_class,
            "macro_avg_sensitivity": macro_sens,
            "confusion_matrix": matrix,
            "ungraded_cases": rows.len() - graded.len(),
        },
    });
    let path = a.out.unwrap_or_else(|| a.pred.join("eval_report.json"));
    write_atomic(&path, &serde_json::to_vec_pretty(&report)?)?;
    if a.csv {
        writeln!(out, "case,angle_deg,grade,iou,dice")?;
        for r in &rows {
            let angle = r.angle_pred_deg.map(|v| v.to_string()).unwrap_or_default();
            let grade = r.grade_pred.map(|g| g.name()).unwrap_or("");
            writeln!(out, "{},{},{},{},{}", r.case, angle, grade, r.iou, r.dice)?;
        }
    } else {
        print_json(out, &report)?;
    }
    Ok(EXIT_OK)
}

/// Training pairs of one view (or both) from a synthetic dataset.
pub fn load_training_pairs(root: &Path, views: &[View], size: Option<(usize, usize)>) -> Result<Vec<TrainingPair>> {
    let mut pairs = Vec::new();
    for case in synth::list_cases(root)? {
        for &view in views {
            let (mut rgb, mut map) = synth::read_view(&case, view)?;
            if let Some((h, w)) = size {
                rgb = resize_bilinear(&rgb, h, w)?;
                map = resize_bilinear(&map, h, w)?;
            }
            pairs.push(TrainingPair::new(rgb, map, view)?);
        }
    }
    if pairs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(pairs)
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn cmd_train(a: TrainArgs, out: &mut dyn Write) -> Result<i32> {
    let size = match (a.height, a.width) {
        (Some(h), Some(w)) => Some((h, w)),
        (None, None) => None,
        _ => return Err(Error::InvalidArgument("--height and --width go together".into())),
    };
    let gen_config = match &a.config {
        Some(p) => serde_json::from_slice(&fs::read(p)?)?,
        None => EUFormerConfig::default(),
    };
    let config = TrainConfig {
        learning_rate: a.lr,
        steps: Some(a.steps),
        batch_size: a.batch,
        seed: a.seed,
        augment_rotation: !a.no_augment,
        augment_flip: !a.no_augment,
        discriminator: DiscriminatorConfig {
            base_width: a.disc_width,
            ..DiscriminatorConfig::default()
        },
        ..TrainConfig::default()
    };
    let history_path = a.history.clone().unwrap_or_else(|| sibling(&a.out, ".csv"));
    let runs: Vec<(Vec<View>, PathBuf, PathBuf)> = if a.separate_views {
        vec![
            (vec![View::Pa], a.out.clone(), history_path.clone()),
            (vec![View::Lat], sibling(&a.out, ".lat"), sibling(&history_path, ".lat")),
        ]
    } else {
        vec![(vec![View::Pa, View::Lat], a.out.clone(), history_path)]
    };
    let mut summary = Vec::new();
    for (views, ckpt, history) in runs {
        let pairs = load_training_pairs(&a.data, &views, size)?;
        let outcome = train(&pairs, &gen_config, &config)?;
        save_generator(&ckpt, &outcome.generator)?;
        crate::euformer::train::write_history_csv(&history, &outcome.history)?;
        if let Some(d) = &a.disc_out {
            let path = if views.len() == 1 && views[0] == View::Lat {
                sibling(d, ".lat")
            } else {
                d.clone()
            };
            save_discriminator(&path, &outcome.discriminator)?;
        }
        let last = outcome.history.last();
        summary.push(json!({
            "views": views,
            "pairs": pairs.len(),
            "steps": outcome.history.len(),
            "checkpoint": ckpt,
            "history": history,
            "final_loss_mse": last.map(|r| r.loss_mse),
            "final_loss_total": last.map(|r| r.loss_total),
        }));
    }
    print_json(out, &json!({"runs": summary}))?;
    Ok(EXIT_OK)
}

fn cmd_gradcheck(a: GradcheckArgs, out: &mut dyn Write) -> Result<i32> {
    let config = GradCheckConfig::default();
    let start = Instant::now();
    let entries = gradient_suite(a.seed, config)?;
    let mut failed = 0;
    for e in &entries {
        if !e.report.passed {
            failed += 1;
        }
        writeln!(
            out,
            "{} {:<24} max_rel {:.3e} max_abs {:.3e} ({:.2}s)",
            if e.report.passed { "PASS" } else { "FAIL" },
            e.name,
            e.report.max_rel_error,
            e.report.max_abs_error,
            e.elapsed.as_secs_f64()
        )?;
    }
    writeln!(
        out,
        "{} checks, {} failed, h = {:e}, tolerance = {:e}, {:.1}s",
        entries.len(),
        failed,
        config.step,
        config.tolerance,
        start.elapsed().as_secs_f64()
    )?;
    Ok(if failed == 0 { EXIT_OK } else { EXIT_FAILURE })
}

fn cmd_flops(a: FlopsArgs, out: &mut dyn Write) -> Result<i32> {
    if a.heads == 0 || !a.c.is_multiple_of(a.heads) {
        return Err(Error::Divisibility {
            op: "flops channels per head",
            value: a.c,
            divisor: a.heads,
        });
    }
    let channel = flops_attention(a.h, a.w, a.c, a.heads, AttentionMode::Channel);
    let spatial = flops_attention(a.h, a.w, a.c, a.heads, AttentionMode::Spatial);
    print_json(
        out,
        &json!({
            "h": a.h, "w": a.w, "c": a.c, "heads": a.heads,
            "channel": channel,
            "spatial": spatial,
            "ratio_channel_to_spatial": channel as f64 / spatial as f64,
        }),
    )?;
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> std::result::Result<Cli, clap::Error> {
        Cli::try_parse_from(std::iter::once("spine3d").chain(args.iter().copied()))
    }

    #[test]
    fn parses_subcommands() {
        assert!(matches!(parse(&["grade", "--angle", "12.5"]).unwrap().command, Command::Grade(_)));
        assert!(matches!(parse(&["flops", "--h", "8", "--w", "8", "--c", "4"]).unwrap().command, Command::Flops(_)));
        assert!(parse(&["grade"]).is_err());
        assert!(parse(&["synth", "--severity", "extreme", "--out", "x"]).is_err());
    }

    #[test]
    fn grade_writes_json() {
        let cli = parse(&["grade", "--angle", "5"]).unwrap();
        let mut buf = Vec::new();
        assert_eq!(execute(cli.command, &mut buf).unwrap(), EXIT_OK);
        assert_eq!(String::from_utf8(buf).unwrap().trim(), r#"{"severity":"normal-mild"}"#);
    }

    #[test]
    fn parallel_map_keeps_order() {
        let items: Vec<usize> = (0..37).collect();
        let out = parallel_map(&items, |i, &x| (i, x * x));
        assert!(out.iter().enumerate().all(|(k, &(i, sq))| k == i && sq == k * k));
        assert!(thread_count() >= 1);
    }
}
