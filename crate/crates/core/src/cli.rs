//! The `nvsig` command line.

use std::collections::HashMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::acquisition::{measurement_time, noisy_signal, Design, MeasurementTime};
use crate::config::{Preset, RunConfig};
use crate::dataset::{
    generate_dataset, rasterize_truth, read_rasters, write_rasters_csv, Manifest, RasterWriter, Record,
    RASTER_MAGIC,
};
use crate::error::{Error, Result};
use crate::metrics::{aggregate_by_n, extract_peaks, score_sample, DetectedPeak, GroupScore};
use crate::seed::tag;
use crate::sig::{design_from_selection, select_top, sig_curves, Selection, SigCurve};
use crate::simulate::Simulator;
use crate::spin_model::{HyperfineCoupling, SpinCluster};

#[derive(Debug, Parser)]
#[command(name = "nvsig", version, about = "Experimental design for NV-center nuclear spin detection")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PresetArg {
    High,
    Low,
}

/// Options shared by every subcommand.
#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Run configuration (TOML, or a JSON sidecar from an earlier run).
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Start from a shipped preset instead of a file.
    #[arg(long, value_enum, conflicts_with = "config")]
    pub preset: Option<PresetArg>,
    /// Override the master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (0 = all cores). Never changes results.
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
    /// Output file or directory.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    /// Override repetitions per point.
    #[arg(long)]
    pub nm: Option<u32>,
    /// Override points kept per grid.
    #[arg(long)]
    pub np: Option<usize>,
    /// Override the sample count (SIG samples, or dataset size for gen-dataset).
    #[arg(long)]
    pub samples: Option<u64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum RasterFormat {
    Bin,
    Csv,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Survival probability of one cluster (no bath) on every grid.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Spin as `az_khz,aperp_khz`; repeatable.
        #[arg(long = "spin", allow_hyphen_values = true)]
        spins: Vec<String>,
        /// CSV of spins with columns a_par_hz,a_perp_hz.
        #[arg(long)]
        cluster: Option<PathBuf>,
        /// Add shot noise.
        #[arg(long)]
        noisy: bool,
    },
    /// Per-delay mean and variance of the signal over the prior.
    Sig {
        #[command(flatten)]
        common: Common,
    },
    /// Keep the N_p highest-variance delays of each grid.
    Select {
        #[command(flatten)]
        common: Common,
    },
    /// SIG, selection and time budget in one go.
    Pipeline {
        #[command(flatten)]
        common: Common,
    },
    /// Measurement time of the configured grids.
    Time {
        #[command(flatten)]
        common: Common,
    },
    /// Write a synthetic dataset (shards plus manifest) to --out.
    GenDataset {
        #[command(flatten)]
        common: Common,
    },
    /// Rasterise the truth of a dataset.
    Rasterize {
        #[command(flatten)]
        common: Common,
        /// Dataset directory.
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum, default_value = "bin")]
        format: RasterFormat,
    },
    /// Score predictions against a dataset, grouped by true spin count.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Dataset directory.
        #[arg(long)]
        dataset: PathBuf,
        /// Raster export of predicted images, or a CSV of peaks
        /// (sample_index,a_par_hz,a_perp_hz).
        #[arg(long)]
        pred: PathBuf,
    },
}

/// Exit status for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 2,
        Error::Io { .. } | Error::Format { .. } | Error::Truncated { .. } | Error::HashMismatch { .. } => 3,
        Error::Domain(_) => 4,
    }
}

/// Parse arguments, run, and return the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn effective_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match (&common.config, common.preset) {
        (Some(path), _) => RunConfig::load(path)?,
        (None, Some(PresetArg::Low)) => RunConfig::preset(Preset::LowField),
        (None, _) => RunConfig::preset(Preset::HighField),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(nm) = common.nm {
        cfg.shot.n_m = nm;
    }
    if let Some(np) = common.np {
        cfg.sig.n_p = np;
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Serialize)]
struct Sidecar<'a, T: Serialize> {
    command: &'a str,
    config_hash: String,
    config: &'a RunConfig,
    #[serde(flatten)]
    details: T,
}

fn sidecar_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".json");
    PathBuf::from(name)
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_sidecar<T: Serialize>(path: &Path, command: &str, cfg: &RunConfig, details: T) -> Result<()> {
    let sidecar = Sidecar {
        command,
        config_hash: cfg.hash(),
        config: cfg,
        details,
    };
    let text = serde_json::to_string_pretty(&sidecar).map_err(|e| Error::format(path, e.to_string()))?;
    write_file(path, &(text + "\n"))
}

/// Write to `--out` (with a sidecar) or to stdout.
fn emit<T: Serialize>(common: &Common, command: &str, cfg: &RunConfig, text: &str, details: T) -> Result<()> {
    match &common.out {
        Some(out) => {
            write_file(out, text)?;
            write_sidecar(&sidecar_path(out), command, cfg, details)
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            match stdout.write_all(text.as_bytes()) {
                // a closed pipe (`| head`) is not a failure
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Error::io("<stdout>", e)),
                _ => Ok(()),
            }
        }
    }
}

fn require_out<'a>(common: &'a Common, command: &str) -> Result<&'a Path> {
    common
        .out
        .as_deref()
        .ok_or_else(|| Error::config(format!("{command} needs --out")))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate {
            common,
            spins,
            cluster,
            noisy,
        } => cmd_simulate(&common, &spins, cluster.as_deref(), noisy),
        Command::Sig { common } => cmd_sig(&common),
        Command::Select { common } => cmd_select(&common),
        Command::Pipeline { common } => cmd_pipeline(&common),
        Command::Time { common } => cmd_time(&common),
        Command::GenDataset { common } => cmd_gen_dataset(&common),
        Command::Rasterize {
            common,
            dataset,
            format,
        } => cmd_rasterize(&common, &dataset, format),
        Command::Evaluate { common, dataset, pred } => cmd_evaluate(&common, &dataset, &pred),
    }
}

// ---------------------------------------------------------------- simulate

fn parse_spin(text: &str) -> Result<HyperfineCoupling> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    let bad = || Error::config(format!("--spin expects az_khz,aperp_khz, got {text:?}"));
    if parts.len() != 2 {
        return Err(bad());
    }
    let az: f64 = parts[0].parse().map_err(|_| bad())?;
    let ap: f64 = parts[1].parse().map_err(|_| bad())?;
    HyperfineCoupling::from_khz(az, ap).map_err(|e| Error::config(e.to_string()))
}

fn read_cluster_csv(path: &Path) -> Result<Vec<HyperfineCoupling>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut spins = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("a_par") {
            continue;
        }
        let bad = || Error::format(path, format!("line {}: expected a_par_hz,a_perp_hz", i + 1));
        let mut it = line.split(',').map(str::trim);
        let (Some(a), Some(b), None) = (it.next(), it.next(), it.next()) else {
            return Err(bad());
        };
        let a: f64 = a.parse().map_err(|_| bad())?;
        let b: f64 = b.parse().map_err(|_| bad())?;
        spins.push(HyperfineCoupling::new(a, b).map_err(|e| Error::format(path, e.to_string()))?);
    }
    Ok(spins)
}

fn cmd_simulate(common: &Common, spins: &[String], cluster_file: Option<&Path>, noisy: bool) -> Result<()> {
    let cfg = effective_config(common)?;
    let mut list = Vec::new();
    if let Some(path) = cluster_file {
        list.extend(read_cluster_csv(path)?);
    }
    for s in spins {
        list.push(parse_spin(s)?);
    }
    let cluster = SpinCluster::new(list);
    let mut model = cfg.model()?;
    model.bath = None;
    let sim = Simulator::new(model, cfg.grids()?, cfg.seed())?;
    let shot = cfg.shot();

    let mut csv = String::from("grid,n_pulses,tau_ns,p_x\n");
    let mut signal = Vec::new();
    for (g, grid) in sim.grids().iter().enumerate() {
        sim.ideal_signal(&cluster, None, g, &mut signal)?;
        if noisy {
            signal = noisy_signal(&signal, &shot, cfg.seed().derive(tag::NOISE, g as u64))?;
        }
        for (tau, p) in grid.taus_ns.iter().zip(&signal) {
            writeln!(csv, "{},{},{tau},{p}", grid.label, grid.n_pulses).unwrap();
        }
    }
    #[derive(Serialize)]
    struct Details<'a> {
        cluster: &'a SpinCluster,
        noisy: bool,
    }
    emit(common, "simulate", &cfg, &csv, Details { cluster: &cluster, noisy })
}

// ---------------------------------------------------------------- sig / select / pipeline

fn sig_samples(common: &Common, cfg: &RunConfig) -> u64 {
    common.samples.unwrap_or(cfg.sig.n_samples)
}

fn compute_sig(common: &Common, cfg: &RunConfig) -> Result<Vec<SigCurve>> {
    let sim = Simulator::new(cfg.model()?, cfg.grids()?, cfg.seed())?;
    let n = sig_samples(common, cfg);
    log::info!("estimating SIG from {n} prior samples");
    sig_curves(&sim, n, cfg.seed(), common.workers)
}

fn sig_csv(curves: &[SigCurve]) -> String {
    let mut csv = String::from("grid,n_pulses,tau_ns,mean,variance\n");
    for c in curves {
        for ((tau, m), v) in c.grid.taus_ns.iter().zip(&c.mean).zip(&c.variance) {
            writeln!(csv, "{},{},{tau},{m},{v}", c.grid.label, c.grid.n_pulses).unwrap();
        }
    }
    csv
}

#[derive(Serialize)]
struct SigDetails {
    seed: u64,
    n_samples: u64,
}

fn cmd_sig(common: &Common) -> Result<()> {
    let cfg = effective_config(common)?;
    let curves = compute_sig(common, &cfg)?;
    let details = SigDetails {
        seed: cfg.seed,
        n_samples: sig_samples(common, &cfg),
    };
    emit(common, "sig", &cfg, &sig_csv(&curves), details)
}

#[derive(Serialize)]
struct SelectedGrid {
    label: String,
    n_pulses: u32,
    file: String,
    points: usize,
    clamped: bool,
}

#[derive(Serialize)]
struct SelectDetails {
    seed: u64,
    n_samples: u64,
    n_p: usize,
    grids: Vec<SelectedGrid>,
}

fn select_all(curves: &[SigCurve], n_p: usize) -> Result<Vec<Selection>> {
    curves.iter().map(|c| select_top(c, n_p)).collect()
}

fn selection_text(sel: &Selection) -> String {
    let mut s = String::new();
    for t in sel.taus_ns() {
        writeln!(s, "{t}").unwrap();
    }
    s
}

fn write_selections(dir: &Path, cfg: &RunConfig, selections: &[Selection], n_samples: u64) -> Result<SelectDetails> {
    let mut grids = Vec::new();
    for sel in selections {
        let file = format!("selection_{}.txt", sel.grid.label);
        write_file(&dir.join(&file), &selection_text(sel))?;
        grids.push(SelectedGrid {
            label: sel.grid.label.clone(),
            n_pulses: sel.grid.n_pulses,
            file,
            points: sel.indices.len(),
            clamped: sel.clamped,
        });
    }
    Ok(SelectDetails {
        seed: cfg.seed,
        n_samples,
        n_p: cfg.sig.n_p,
        grids,
    })
}

/// The configuration restricted to the selected delays, so `time` or
/// `gen-dataset` can be rerun on the selected design.
fn selected_config(cfg: &RunConfig, dir: &Path, details: &SelectDetails) -> RunConfig {
    let mut out = cfg.clone();
    for (g, sel) in out.grids.iter_mut().zip(&details.grids) {
        g.selection_file = Some(dir.join(&sel.file));
    }
    out
}

fn cmd_select(common: &Common) -> Result<()> {
    let cfg = effective_config(common)?;
    let dir = require_out(common, "select")?;
    create_dir(dir)?;
    let curves = compute_sig(common, &cfg)?;
    let selections = select_all(&curves, cfg.sig.n_p)?;
    let details = write_selections(dir, &cfg, &selections, sig_samples(common, &cfg))?;
    write_file(&dir.join("selected.toml"), &selected_config(&cfg, dir, &details).to_toml())?;
    write_sidecar(&dir.join("selection.json"), "select", &cfg, details)
}

fn hours(t: &MeasurementTime) -> String {
    format!("{:.2}", t.hours())
}

#[derive(Serialize)]
struct TimeReport {
    n_m: u32,
    full_hours: f64,
    selected_hours: f64,
    reduction_percent: f64,
    full: MeasurementTime,
    selected: MeasurementTime,
}

fn time_report(full: &Design, selected: &Design) -> TimeReport {
    let f = measurement_time(full);
    let s = measurement_time(selected);
    let reduction = if f.total_nanos == 0 {
        0.0
    } else {
        100.0 * (1.0 - s.total_nanos as f64 / f.total_nanos as f64)
    };
    TimeReport {
        n_m: f.n_m,
        full_hours: f.hours(),
        selected_hours: s.hours(),
        reduction_percent: reduction,
        full: f,
        selected: s,
    }
}

fn report_text(r: &TimeReport) -> String {
    let mut s = String::new();
    writeln!(s, "{:<10} {:>5} {:>8} {:>10} {:>8} {:>10}", "grid", "N", "points", "full_h", "kept", "selected_h").unwrap();
    for (f, k) in r.full.grids.iter().zip(&r.selected.grids) {
        writeln!(
            s,
            "{:<10} {:>5} {:>8} {:>10.2} {:>8} {:>10.2}",
            f.label,
            f.n_pulses,
            f.points,
            f.hours(),
            k.points,
            k.hours()
        )
        .unwrap();
    }
    writeln!(s, "N_m = {}", r.n_m).unwrap();
    writeln!(s, "full design:     {} h", hours(&r.full)).unwrap();
    writeln!(s, "selected design: {} h", hours(&r.selected)).unwrap();
    writeln!(s, "reduction:       {:.1} %", r.reduction_percent).unwrap();
    s
}

fn cmd_pipeline(common: &Common) -> Result<()> {
    let cfg = effective_config(common)?;
    let curves = compute_sig(common, &cfg)?;
    let selections = select_all(&curves, cfg.sig.n_p)?;
    let full = cfg.design()?;
    let selected = design_from_selection(&selections, full.shot)?;
    let report = time_report(&full, &selected);
    let text = report_text(&report);
    print!("{text}");
    if let Some(dir) = &common.out {
        create_dir(dir)?;
        write_file(&dir.join("sig.csv"), &sig_csv(&curves))?;
        let details = write_selections(dir, &cfg, &selections, sig_samples(common, &cfg))?;
        write_file(&dir.join("selected.toml"), &selected_config(&cfg, dir, &details).to_toml())?;
        write_sidecar(&dir.join("selection.json"), "select", &cfg, details)?;
        write_file(&dir.join("report.txt"), &text)?;
        write_sidecar(&dir.join("report.json"), "pipeline", &cfg, &report)?;
    }
    Ok(())
}

// ---------------------------------------------------------------- time

fn time_text(t: &MeasurementTime) -> String {
    let mut s = String::new();
    writeln!(s, "{:<10} {:>5} {:>8} {:>8}", "grid", "N", "points", "hours").unwrap();
    for g in &t.grids {
        writeln!(s, "{:<10} {:>5} {:>8} {:>8.2}", g.label, g.n_pulses, g.points, g.hours()).unwrap();
    }
    writeln!(s, "{:<10} {:>5} {:>8} {:>8}", "total", "", "", hours(t)).unwrap();
    s
}

fn cmd_time(common: &Common) -> Result<()> {
    let cfg = effective_config(common)?;
    let t = measurement_time(&cfg.design()?);
    let text = time_text(&t);
    match &common.out {
        Some(out) => {
            let mut csv = String::from("grid,n_pulses,points,seconds,hours\n");
            for g in &t.grids {
                writeln!(csv, "{},{},{},{},{:.2}", g.label, g.n_pulses, g.points, g.seconds(), g.hours()).unwrap();
            }
            writeln!(csv, "total,,{},{},{}", t.grids.iter().map(|g| g.points).sum::<usize>(), t.seconds(), hours(&t)).unwrap();
            write_file(out, &csv)?;
            write_sidecar(&sidecar_path(out), "time", &cfg, &t)?;
            print!("{text}");
            Ok(())
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

// ---------------------------------------------------------------- datasets

fn cmd_gen_dataset(common: &Common) -> Result<()> {
    let mut cfg = effective_config(common)?;
    if let Some(n) = common.samples {
        cfg.dataset.n_samples = n;
    }
    let dir = require_out(common, "gen-dataset")?;
    let sim = Simulator::new(cfg.model()?, cfg.grids()?, cfg.seed())?;
    let manifest = generate_dataset(&sim, &cfg.shot(), cfg.dataset.n_samples, dir, cfg.dataset_options(common.workers))?;
    #[derive(Serialize)]
    struct Details {
        n_samples: u64,
        shards: usize,
        dataset_hash: String,
    }
    write_sidecar(
        &dir.join("run.json"),
        "gen-dataset",
        &cfg,
        Details {
            n_samples: manifest.n_samples,
            shards: manifest.shards.len(),
            dataset_hash: manifest.config_hash.clone(),
        },
    )?;
    println!("{} samples in {} shards under {}", manifest.n_samples, manifest.shards.len(), dir.display());
    Ok(())
}

fn load_dataset(dir: &Path) -> Result<Vec<Record>> {
    Manifest::load(dir)?.read_all(dir)
}

fn cmd_rasterize(common: &Common, dataset: &Path, format: RasterFormat) -> Result<()> {
    let cfg = effective_config(common)?;
    let out = require_out(common, "rasterize")?;
    let spec = cfg.image_spec();
    let records = load_dataset(dataset)?;
    let count = match format {
        RasterFormat::Bin => {
            let mut w = RasterWriter::create(out, spec.height, spec.width)?;
            for r in &records {
                w.push(r.sample_index, &rasterize_truth(&r.cluster, &spec))?;
            }
            w.finish()?
        }
        RasterFormat::Csv => {
            let images: Vec<_> = records
                .iter()
                .map(|r| (r.sample_index, rasterize_truth(&r.cluster, &spec)))
                .collect();
            write_rasters_csv(out, images.iter().map(|(i, img)| (*i, img)))?
        }
    };
    #[derive(Serialize)]
    struct Details {
        dataset: PathBuf,
        images: u64,
    }
    write_sidecar(
        &sidecar_path(out),
        "rasterize",
        &cfg,
        Details {
            dataset: dataset.to_path_buf(),
            images: count,
        },
    )
}

fn read_peak_csv(path: &Path) -> Result<HashMap<u64, Vec<DetectedPeak>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out: HashMap<u64, Vec<DetectedPeak>> = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("sample_index") {
            continue;
        }
        let bad = || Error::format(path, format!("line {}: expected sample_index,a_par_hz,a_perp_hz[,intensity]", i + 1));
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if !(3..=4).contains(&fields.len()) {
            return Err(bad());
        }
        let index: u64 = fields[0].parse().map_err(|_| bad())?;
        let a_par: f64 = fields[1].parse().map_err(|_| bad())?;
        let a_perp: f64 = fields[2].parse().map_err(|_| bad())?;
        let intensity: f64 = match fields.get(3) {
            Some(v) => v.parse().map_err(|_| bad())?,
            None => 1.0,
        };
        out.entry(index).or_default().push(DetectedPeak {
            a_par,
            a_perp,
            intensity,
        });
    }
    Ok(out)
}

fn is_raster_export(path: &Path) -> Result<bool> {
    let mut head = [0u8; 5];
    let mut f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    use std::io::Read;
    Ok(f.read_exact(&mut head).is_ok() && &head == RASTER_MAGIC)
}

fn evaluate_csv(groups: &[GroupScore]) -> String {
    let opt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| format!("{x:.3}"));
    let mut csv = String::from("n,f1,mae_az_hz,mae_aperp_hz\n");
    for g in groups {
        writeln!(csv, "{},{:.6},{},{}", g.n, g.f1, opt(g.mae_az), opt(g.mae_aperp)).unwrap();
    }
    csv
}

/// Raster predictions are scored on the samples they cover; peak lists on
/// every sample of the dataset, a missing sample meaning no peaks.
fn cmd_evaluate(common: &Common, dataset: &Path, pred: &Path) -> Result<()> {
    let cfg = effective_config(common)?;
    let records = load_dataset(dataset)?;
    let by_index: HashMap<u64, &Record> = records.iter().map(|r| (r.sample_index, r)).collect();
    let radius = cfg.metrics.radius_hz;
    let mut scores = Vec::new();
    if is_raster_export(pred)? {
        let spec = cfg.image_spec();
        for (index, image) in read_rasters(pred)? {
            let record = by_index
                .get(&index)
                .ok_or_else(|| Error::format(pred, format!("sample {index} is not in the dataset")))?;
            let peaks = extract_peaks(&image, &spec, cfg.metrics.threshold)?;
            scores.push(score_sample(&record.cluster, &peaks, radius)?);
        }
    } else {
        let mut peaks = read_peak_csv(pred)?;
        if let Some(index) = peaks.keys().find(|i| !by_index.contains_key(i)) {
            return Err(Error::format(pred, format!("sample {index} is not in the dataset")));
        }
        for r in &records {
            let p = peaks.remove(&r.sample_index).unwrap_or_default();
            scores.push(score_sample(&r.cluster, &p, radius)?);
        }
    }
    let groups = aggregate_by_n(&scores);
    #[derive(Serialize)]
    struct Details<'a> {
        dataset: PathBuf,
        predictions: PathBuf,
        samples: usize,
        groups: &'a [GroupScore],
    }
    let details = Details {
        dataset: dataset.to_path_buf(),
        predictions: pred.to_path_buf(),
        samples: scores.len(),
        groups: &groups,
    };
    emit(common, "evaluate", &cfg, &evaluate_csv(&groups), details)
}
