//! Command-line front end: feasibility analysis, masks, phantom datasets,
//! training, evaluation and the placement ablation.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dualrecon::autodiff::Checkpoint;
use dualrecon::data::{
    evaluate, write_container, Dataset, DatasetManifest, DatasetSpec, Method, MetricsReport, Split,
};
use dualrecon::error::Error;
use dualrecon::feasibility::{feasibility_grid, grid_to_csv, min_accel_below};
use dualrecon::fourier::{make_cartesian_mask, ComplexTensor};
use dualrecon::io::write_atomic;
use dualrecon::train::{
    load_model, log_csv, run_ablation, Adam, Placement, Preset, Session, TrainConfig,
};

const EXIT_USAGE: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_NUMERIC: u8 = 4;

#[derive(Parser)]
#[command(
    name = "dualrecon",
    version,
    about = "Dual-domain undersampled MRI reconstruction"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Global {
    /// Seed for weights, batch order, masks and phantoms.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON configuration; unknown keys are rejected.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Acceleration rate.
    #[arg(long, global = true)]
    accel: Option<f64>,
    /// Fully sampled central fraction of k-space lines.
    #[arg(long, global = true)]
    acs: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Probability of a feasible k-space interpolation over a (k, a) grid.
    Analyze {
        /// Window sizes, `lo..hi` inclusive.
        #[arg(long, default_value = "2..32")]
        k: String,
        /// Acceleration rates, `lo..hi` in unit steps or a comma list.
        #[arg(long, default_value = "1..8")]
        a: String,
    },
    /// Cartesian line mask in its one-line text form.
    Mask {
        #[arg(long, default_value_t = 64)]
        height: usize,
    },
    /// Phantom train/val/test containers plus a manifest.
    GenData {
        #[arg(long)]
        size: Option<usize>,
        #[arg(long)]
        train: Option<usize>,
        #[arg(long)]
        val: Option<usize>,
        #[arg(long)]
        test: Option<usize>,
    },
    /// Trains a model and writes `log.csv`, `best.ckpt` and `last.ckpt`.
    Train {
        /// Dataset directory from `gen-data`.
        #[arg(long)]
        data: PathBuf,
        /// desk, ablation or full; `--config` overrides individual fields.
        #[arg(long, default_value = "desk")]
        preset: String,
        #[arg(long)]
        epochs: Option<usize>,
        /// Continue from a `last.ckpt`.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Scores a checkpoint (or zero filling) on a dataset split.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, required_unless_present = "zero_fill")]
        checkpoint: Option<PathBuf>,
        /// Score the zero-filled reconstruction instead of a model.
        #[arg(long)]
        zero_fill: bool,
        #[arg(long, default_value = "test")]
        split: String,
        /// Also write the reconstructions as a container and a PGM grid.
        #[arg(long)]
        export: bool,
    },
    /// Trains and tests each module placement with one seed and budget.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "ablation")]
        preset: String,
        /// Placements such as `baseline`, `full` or `glim=kspace,plde=image`;
        /// defaults to the eight-row preset.
        #[arg(long = "row")]
        rows: Vec<String>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Run rows on separate threads.
        #[arg(long)]
        parallel: bool,
    },
}

/// Failure with the process exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Param(_) | Error::InfeasibleBudget { .. } => EXIT_USAGE,
            Error::NonFinite { .. } => EXIT_NUMERIC,
            Error::Shape(_) | Error::Format(_) | Error::Io(_) | Error::Json(_) => EXIT_DATA,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> CmdResult {
    let g = cli.global;
    match cli.command {
        Command::Analyze { k, a } => analyze(&g, &k, &a),
        Command::Mask { height } => mask(&g, height),
        Command::GenData {
            size,
            train,
            val,
            test,
        } => gen_data(&g, size, [train, val, test]),
        Command::Train {
            data,
            preset,
            epochs,
            resume,
        } => train(&g, &data, &preset, epochs, resume.as_deref()),
        Command::Eval {
            data,
            checkpoint,
            zero_fill,
            split,
            export,
        } => eval(&g, &data, checkpoint.as_deref(), zero_fill, &split, export),
        Command::Ablate {
            data,
            preset,
            rows,
            epochs,
            parallel,
        } => ablate(&g, &data, &preset, &rows, epochs, parallel),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure {
        code: EXIT_DATA,
        message: format!("{}: {e}", path.display()),
    })?;
    serde_json::from_str(&text).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

fn write(dir: &Path, name: &str, bytes: &[u8]) -> CmdResult {
    std::fs::create_dir_all(dir).map_err(Error::from)?;
    write_atomic(dir.join(name), bytes)?;
    Ok(())
}

fn parse_k(s: &str) -> Result<Vec<usize>, Failure> {
    let bad = || Failure::usage(format!("window range `{s}` must look like 2..32"));
    let (lo, hi) = s.split_once("..").ok_or_else(bad)?;
    let (lo, hi): (usize, usize) = (
        lo.trim().parse().map_err(|_| bad())?,
        hi.trim().parse().map_err(|_| bad())?,
    );
    if lo == 0 || lo > hi {
        return Err(bad());
    }
    Ok((lo..=hi).collect())
}

fn parse_a(s: &str) -> Result<Vec<f64>, Failure> {
    let bad = || {
        Failure::usage(format!(
            "acceleration list `{s}` must look like 1..8 or 2,4,6"
        ))
    };
    let values: Vec<f64> = if let Some((lo, hi)) = s.split_once("..") {
        let (lo, hi): (u32, u32) = (
            lo.trim().parse().map_err(|_| bad())?,
            hi.trim().parse().map_err(|_| bad())?,
        );
        if lo > hi {
            return Err(bad());
        }
        (lo..=hi).map(f64::from).collect()
    } else {
        s.split(',')
            .map(|v| v.trim().parse().map_err(|_| bad()))
            .collect::<Result<_, _>>()?
    };
    if values.is_empty() || values.iter().any(|&v| !(v >= 1.0 && v.is_finite())) {
        return Err(bad());
    }
    Ok(values)
}

fn analyze(g: &Global, k: &str, a: &str) -> CmdResult {
    let ks = parse_k(k)?;
    let accels = parse_a(a)?;
    let acs = g.acs.unwrap_or(0.125);
    if !(0.0..=1.0).contains(&acs) {
        return Err(Failure::usage(format!(
            "--acs must lie in [0, 1], got {acs}"
        )));
    }
    let cells = feasibility_grid(ks[0]..=ks[ks.len() - 1], &accels, acs)?;
    write(&g.out, "feasibility.csv", grid_to_csv(&cells).as_bytes())?;
    match min_accel_below(&cells, 0.5) {
        Some(a) => println!("smallest acceleration with P < 0.5 for every window: {a}"),
        None => println!("no acceleration on the grid has P < 0.5 for every window"),
    }
    println!(
        "wrote {} cells to {}",
        cells.len(),
        g.out.join("feasibility.csv").display()
    );
    Ok(())
}

fn mask(g: &Global, height: usize) -> CmdResult {
    let m = make_cartesian_mask(
        height,
        g.accel.unwrap_or(4.0),
        g.acs.unwrap_or(0.125),
        g.seed.unwrap_or(0),
    )?;
    let line = format!("{m}\n");
    write(&g.out, "mask.txt", line.as_bytes())?;
    print!("{line}");
    Ok(())
}

fn gen_data(g: &Global, size: Option<usize>, counts: [Option<usize>; 3]) -> CmdResult {
    let mut spec: DatasetSpec = match &g.config {
        Some(p) => read_json(p)?,
        None => DatasetSpec::default(),
    };
    if let Some(s) = g.seed {
        spec.phantom.seed = s;
    }
    if let Some(s) = size {
        spec.phantom.size = s;
    }
    for (slot, v) in [&mut spec.train, &mut spec.val, &mut spec.test]
        .into_iter()
        .zip(counts)
    {
        if let Some(v) = v {
            *slot = v;
        }
    }
    spec.validate()?;
    let m = spec.write_all(&g.out)?;
    for s in &m.splits {
        println!(
            "{}: {} images, seeds {}..{}",
            s.split.name(),
            s.count,
            s.seed_start,
            s.seed_end
        );
    }
    Ok(())
}

/// Preset, then the JSON config, then command-line overrides.
fn run_preset(g: &Global, preset: &str, epochs: Option<usize>) -> Result<Preset, Failure> {
    let mut p = match &g.config {
        Some(path) => read_json::<Preset>(path)?,
        None => Preset::by_name(preset)
            .ok_or_else(|| Failure::usage(format!("unknown preset `{preset}`")))?,
    };
    if let Some(s) = g.seed {
        p.train.seed = s;
    }
    if let Some(a) = g.accel {
        p.train.accel = a;
    }
    if let Some(a) = g.acs {
        p.train.acs = a;
    }
    if let Some(e) = epochs {
        p.train.epochs = e;
    }
    p.model.validate()?;
    p.train.validate()?;
    Ok(p)
}

fn load_split(dir: &Path, split: Split) -> Result<(Dataset, usize), Failure> {
    let m = DatasetManifest::read(dir)?;
    Ok((Dataset::load(dir, split)?, m.height))
}

fn train(
    g: &Global,
    data: &Path,
    preset: &str,
    epochs: Option<usize>,
    resume: Option<&Path>,
) -> CmdResult {
    let (train, height) = load_split(data, Split::Train)?;
    let (val, _) = load_split(data, Split::Val)?;
    let mut session = match resume {
        Some(path) => {
            let best_path = path.with_file_name("best.ckpt");
            let best = best_path
                .exists()
                .then(|| Checkpoint::read(&best_path))
                .transpose()?;
            let mut s = Session::resume(&Checkpoint::read(path)?, best.as_ref(), height)?;
            if let Some(e) = epochs {
                s.config.epochs = e;
            }
            s
        }
        None => {
            let p = run_preset(g, preset, epochs)?;
            Session::new(p.model, p.train, height)?
        }
    };
    let cfg = session.config.clone();
    let val_view = val.clone().truncated(cfg.val_limit.unwrap_or(usize::MAX));
    let zf = evaluate(
        Method::ZeroFill,
        &val_view.targets,
        None,
        session.mask(),
        cfg.batch_size,
    )?;
    println!(
        "{} parameters, {} training images, zero-filled val PSNR {:.3} dB",
        session.model.param_count(),
        train.len().min(cfg.train_limit.unwrap_or(usize::MAX)),
        zf.psnr.mean
    );
    session.run(&train, &val, Some(&g.out), |r| {
        println!(
            "epoch {:>3}  lr {:.1e}  train {:.6}  val {:.6}  val PSNR {:.3} dB",
            r.epoch, r.lr, r.train_loss, r.val_loss, r.val_psnr
        );
    })?;
    let summary = serde_json::json!({
        "version": 1,
        "optimizer": Adam::new(&session.model.store, cfg.beta1, cfg.beta2, cfg.eps).describe(),
        "parameters": session.model.param_count(),
        "epochs": session.state.epochs_done,
        "best_epoch": session.state.best_epoch,
        "zero_filled_val_psnr": zf.psnr.mean,
        "model": session.model.config(),
        "train": cfg,
    });
    write(
        &g.out,
        "train.json",
        serde_json::to_string_pretty(&summary)
            .map_err(Error::from)?
            .as_bytes(),
    )?;
    // a resumed run with nothing left to do still leaves a complete log
    write(&g.out, "log.csv", log_csv(&session.state.log).as_bytes())?;
    Ok(())
}

fn parse_split(s: &str) -> Result<Split, Failure> {
    Split::ALL
        .into_iter()
        .find(|x| x.name() == s)
        .ok_or_else(|| Failure::usage(format!("unknown split `{s}` (train, val or test)")))
}

fn report_files(dir: &Path, report: &MetricsReport) -> CmdResult {
    write(dir, "metrics.csv", report.to_csv().as_bytes())?;
    let json = serde_json::to_string_pretty(&report.to_json()).map_err(Error::from)?;
    write(dir, "metrics.json", json.as_bytes())
}

fn eval(
    g: &Global,
    data: &Path,
    checkpoint: Option<&Path>,
    zero_fill: bool,
    split: &str,
    export: bool,
) -> CmdResult {
    let split = parse_split(split)?;
    let (ds, height) = load_split(data, split)?;
    if ds.is_empty() {
        return Err(Failure {
            code: EXIT_DATA,
            message: format!("{} split is empty", split.name()),
        });
    }
    let loaded = match (zero_fill, checkpoint) {
        (false, Some(p)) => Some(load_model(&Checkpoint::read(p)?)?),
        _ => None,
    };
    let mut cfg = loaded
        .as_ref()
        .map_or_else(TrainConfig::default, |(_, c)| c.clone());
    if let Some(path) = &g.config {
        let p: Preset = read_json(path)?;
        if let Some((m, _)) = &loaded {
            if &p.model != m.config() {
                return Err(Failure {
                    code: EXIT_DATA,
                    message: "checkpoint was trained with a different model configuration".into(),
                });
            }
        }
    }
    // a model is scored with the mask it was trained on unless overridden
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(a) = g.accel {
        cfg.accel = a;
    }
    if let Some(a) = g.acs {
        cfg.acs = a;
    }
    let mask = cfg.mask(height)?;
    let method = match &loaded {
        Some((m, _)) => Method::Model(m),
        None => Method::ZeroFill,
    };
    let report = evaluate(
        method,
        &ds.targets,
        ds.references.as_deref(),
        &mask,
        cfg.batch_size,
    )?;
    report_files(&g.out, &report)?;
    println!(
        "{} images: PSNR {:.3} ± {:.3} dB, SSIM {:.4} ± {:.4}, MSE {:.3} ± {:.3} (x1e-5)",
        report.per_image.len(),
        report.psnr.mean,
        report.psnr.std,
        report.ssim.mean,
        report.ssim.std,
        report.mse.mean,
        report.mse.std
    );
    if export {
        let recon = reconstruct_all(method, &ds, &mask, cfg.batch_size)?;
        write_container(g.out.join("recon.cplx"), &recon)?;
        write(&g.out, "recon.pgm", &pgm_grid(&recon, &ds.targets))?;
    }
    Ok(())
}

fn reconstruct_all(
    method: Method<'_>,
    ds: &Dataset,
    mask: &dualrecon::fourier::SamplingMask,
    batch: usize,
) -> Result<Vec<ComplexTensor>, Failure> {
    let mut out = Vec::with_capacity(ds.len());
    for start in (0..ds.len()).step_by(batch.max(1)) {
        let idx: Vec<usize> = (start..(start + batch.max(1)).min(ds.len())).collect();
        let with_ref = matches!(method, Method::Model(m) if m.config().uses_reference());
        let (input, _) = dualrecon::train::batch(ds, &idx, mask, with_ref)?;
        let recon = match method {
            Method::ZeroFill => input.zero_filled()?,
            Method::Model(m) => m.forward(&input)?.image,
        };
        out.extend((0..idx.len()).map(|j| recon.plane_at(j)));
    }
    Ok(out)
}

/// Binary PGM with one row per image: reconstruction left, target right,
/// both scaled by the target's peak.
fn pgm_grid(recon: &[ComplexTensor], targets: &[ComplexTensor]) -> Vec<u8> {
    let (h, w) = targets[0].plane();
    let (rows, cols) = (recon.len() * h, 2 * w);
    let mut px = vec![0u8; rows * cols];
    for (i, (r, t)) in recon.iter().zip(targets).enumerate() {
        let peak = t.magnitude().into_iter().fold(0.0, f64::max);
        let s = if peak > 0.0 { 255.0 / peak } else { 0.0 };
        for (col_off, img) in [(0, r), (w, t)] {
            for (p, m) in img.magnitude().into_iter().enumerate() {
                let (y, x) = (p / w, p % w);
                px[(i * h + y) * cols + col_off + x] = (m * s).round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    let mut out = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    out.extend(px);
    out
}

fn ablate(
    g: &Global,
    data: &Path,
    preset: &str,
    rows: &[String],
    epochs: Option<usize>,
    parallel: bool,
) -> CmdResult {
    let p = run_preset(g, preset, epochs)?;
    let placements = if rows.is_empty() {
        Placement::preset()
    } else {
        rows.iter()
            .map(|r| {
                Placement::parse(r)
                    .ok_or_else(|| Failure::usage(format!("cannot parse placement `{r}`")))
            })
            .collect::<Result<_, _>>()?
    };
    let (train, _) = load_split(data, Split::Train)?;
    let (val, _) = load_split(data, Split::Val)?;
    let (test, _) = load_split(data, Split::Test)?;
    let matrix = run_ablation(
        &placements,
        &p.model,
        &p.train,
        (&train, &val, &test),
        Some(&g.out),
        parallel,
    );
    write(&g.out, "ablation.csv", matrix.to_csv().as_bytes())?;
    let json = serde_json::json!({ "version": 1, "preset": p, "rows": matrix.rows });
    write(
        &g.out,
        "ablation.json",
        serde_json::to_string_pretty(&json)
            .map_err(Error::from)?
            .as_bytes(),
    )?;
    print!("{}", matrix.to_csv());
    Ok(())
}
