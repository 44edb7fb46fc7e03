//! Command-line front end. [`run`] parses arguments, executes one subcommand
//! and returns the process exit code: 0 on success, 1 when the pipeline
//! itself fails, 2 for usage, I/O and malformed-input errors.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::io::{read_image, read_pfm};
use crate::lsf::{fit_lsf, FitOptions, LsfParams, DEFAULT_FIT_INIT};
use crate::pipeline::{run_pipeline, SaturationOutcome};
use crate::sweep::{run_sweep, SweepConfig, SweepKind};
use crate::synth::{
    calibration_pair, degrade, render_scene, save_pair, DegradeSpec, SceneSpec, BENCH_LSF,
};

pub const THREADS_ENV: &str = "SATURADEBLUR_THREADS";

/// Side length of the `synth --calib` target.
pub const CALIB_SIZE: usize = 65;

#[derive(Debug, Parser)]
#[command(name = "saturadeblur", version, about = "Saturation-aware blind deblurring")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit LSF parameters to a calibration capture and its ground truth.
    LsfFit {
        capture: PathBuf,
        groundtruth: PathBuf,
        #[arg(short, long, default_value = "lsf.txt")]
        out: PathBuf,
        /// Starting parameters, either an LSF file or `p1,p2,p3,p4`.
        #[arg(long)]
        init: Option<String>,
        #[arg(long, default_value_t = FitOptions::default().max_evals)]
        max_evals: usize,
    },
    /// Restore a clipped, blurred image.
    Deblur {
        input: PathBuf,
        #[arg(long)]
        lsf: PathBuf,
        /// Output path; `.pfm` and `.png` are written next to each other.
        #[arg(short, long, default_value = "restored.pfm")]
        out: PathBuf,
        #[command(flatten)]
        tuning: Tuning,
    },
    /// Run an exposure or blur ladder with and without saturation handling.
    Sweep {
        kind: SweepKind,
        #[arg(long, default_value = "sweep")]
        out_dir: PathBuf,
        #[command(flatten)]
        tuning: Tuning,
    },
    /// Write a synthetic ground truth and its degraded observation.
    Synth {
        /// Scene spec file; a random two-source scene when absent.
        #[arg(long, conflicts_with = "calib")]
        spec: Option<PathBuf>,
        /// Degradation spec file; the benchmark LSF with 3-frame blur when absent.
        #[arg(long, conflicts_with = "calib")]
        degrade: Option<PathBuf>,
        /// Write the point-source LSF calibration pair instead.
        #[arg(long)]
        calib: bool,
        /// LSF used for `--calib`.
        #[arg(long, requires = "calib")]
        lsf: Option<PathBuf>,
        #[arg(long, default_value = "synth")]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Pipeline flags. Each one overrides the same key from `--config`.
#[derive(Debug, Args)]
struct Tuning {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    patch_size: Option<usize>,
    #[arg(long)]
    stride: Option<usize>,
    /// Saturation threshold as a fraction of full scale.
    #[arg(long)]
    ts: Option<f64>,
    #[arg(long)]
    tau_b: Option<f64>,
    #[arg(long)]
    tau_g: Option<f64>,
    #[arg(long)]
    top_n: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    kernel_size: Option<usize>,
    /// `off` or `NxM`.
    #[arg(long)]
    tiles: Option<String>,
    #[arg(long)]
    no_saturation: bool,
    /// Directory for patch and solver diagnostics.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Any other config key, as `key=value`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    extra: Vec<String>,
}

impl Tuning {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::read(p)?,
            None => RunConfig::default(),
        };
        for kv in &self.extra {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("--set expects key=value, got {kv:?}")))?;
            cfg.set(k, v)?;
        }
        let flags: [(&str, Option<String>); 11] = [
            ("patch_size", self.patch_size.map(|v| v.to_string())),
            ("stride", self.stride.map(|v| v.to_string())),
            ("ts", self.ts.map(|v| v.to_string())),
            ("tau_b", self.tau_b.map(|v| v.to_string())),
            ("tau_g", self.tau_g.map(|v| v.to_string())),
            ("top_n", self.top_n.map(|v| v.to_string())),
            ("lambda", self.lambda.map(|v| v.to_string())),
            ("kernel_size", self.kernel_size.map(|v| v.to_string())),
            ("tiles", self.tiles.clone()),
            ("report", self.report.as_ref().map(|p| p.display().to_string())),
            ("seed", self.seed.map(|v| v.to_string())),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                cfg.set(k, &v)?;
            }
        }
        if self.no_saturation {
            cfg.pipeline.no_saturation = true;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Exit code for an error: 2 for anything the caller can fix by changing
/// the inputs, 1 for failures inside the pipeline.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io { .. } | Error::Format { .. } | Error::InvalidArgument(_) => 2,
        _ => 1,
    }
}

fn configure_threads() {
    if let Some(n) = std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok()) {
        // A second call in the same process fails harmlessly.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

fn print_config(cfg: &RunConfig) {
    println!("# resolved config");
    print!("{}", cfg.to_kv_string());
}

fn parse_init(s: &str) -> Result<LsfParams> {
    if Path::new(s).is_file() {
        return LsfParams::read(s);
    }
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse().map_err(|_| Error::invalid(format!("bad --init value {s:?}"))))
        .collect::<Result<_>>()?;
    match v[..] {
        [p1, p2, p3, p4] => LsfParams::new(p1, p2, p3, p4),
        _ => Err(Error::invalid("--init needs an LSF file or four comma-separated values")),
    }
}

/// Splits `dir/stem.ext` for [`save_pair`].
fn split_out(out: &Path) -> (PathBuf, String) {
    let dir = out.parent().map(Path::to_path_buf).unwrap_or_default();
    let stem = out
        .file_stem()
        .map_or_else(|| "restored".to_string(), |s| s.to_string_lossy().into_owned());
    (dir, stem)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn cmd_lsf_fit(capture: &Path, gt: &Path, out: &Path, init: Option<&str>, max_evals: usize) -> Result<()> {
    let capt = read_pfm(capture)?;
    let truth = read_pfm(gt)?;
    let init = init.map(parse_init).transpose()?.unwrap_or(DEFAULT_FIT_INIT);
    println!("# init {}", init.to_kv_string().replace('\n', " ").trim_end());
    let opts = FitOptions {
        max_evals,
        ..FitOptions::default()
    };
    let fit = fit_lsf(&capt, &truth, &init, &opts)?;
    fit.params.write(out)?;
    println!(
        "residual {:.6e} (initial {:.6e}, {} evaluations)",
        fit.residual, fit.initial_residual, fit.evals
    );
    print!("{}", fit.params.to_kv_string());
    Ok(())
}

fn cmd_deblur(input: &Path, lsf: &Path, out: &Path, tuning: &Tuning) -> Result<()> {
    let cfg = tuning.resolve()?;
    print_config(&cfg);
    let lsf = LsfParams::read(lsf)?;
    let y = read_image(input, cfg.gamma)?.clamp_unit();
    let res = run_pipeline(&y, &lsf, &cfg.pipeline)?;
    match &res.outcome {
        SaturationOutcome::NoSaturation => eprintln!("warning: no saturated pixels, deblurring without recovery"),
        SaturationOutcome::SelectionEmpty => {
            eprintln!("warning: no patch passed the selection thresholds, deblurring without recovery")
        }
        SaturationOutcome::Unavailable(why) => eprintln!("warning: saturation recovery skipped: {why}"),
        SaturationOutcome::Disabled | SaturationOutcome::Recovered => {}
    }
    let (dir, stem) = split_out(out);
    save_pair(&dir, &stem, &res.image)?;
    if let Some(r) = &cfg.report {
        res.write_report(r)?;
    }
    println!("outcome {:?}", res.outcome);
    Ok(())
}

fn cmd_sweep(kind: SweepKind, out_dir: &Path, tuning: &Tuning) -> Result<()> {
    let cfg = tuning.resolve()?;
    print_config(&cfg);
    let mut sweep = SweepConfig::new(kind, cfg.seed);
    sweep.pipeline = cfg.pipeline;
    let points = run_sweep(&sweep)?;
    let scene = format!("seed{}", sweep.seed);
    crate::sweep::write_sweep(out_dir, &scene, &points)?;
    write_text(&out_dir.join("scene.cfg"), &sweep.scene().to_kv_string())?;
    for p in &points {
        println!(
            "{kind} level {} exposure {} frames {}: aware {:.2} dB, plain {:.2} dB",
            p.level, p.exposure, p.blur_level, p.aware.psnr, p.plain.psnr
        );
    }
    Ok(())
}

fn cmd_synth(
    spec: Option<&Path>,
    degrade_spec: Option<&Path>,
    calib: bool,
    lsf: Option<&Path>,
    out_dir: &Path,
    seed: u64,
) -> Result<()> {
    create_dir(out_dir)?;
    if calib {
        let lsf = lsf.map(LsfParams::read).transpose()?.unwrap_or(BENCH_LSF);
        let (capture, target) = calibration_pair(CALIB_SIZE, &lsf, 0.0, seed)?;
        save_pair(out_dir, "calib_groundtruth", &target)?;
        save_pair(out_dir, "calib_capture", &capture)?;
        lsf.write(out_dir.join("lsf_true.txt"))?;
        println!("wrote calibration pair to {}", out_dir.display());
        return Ok(());
    }
    let scene = match spec {
        Some(p) => SceneSpec::parse_kv(&std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?)?,
        None => SceneSpec::random(128, 128, 2, (4.0, 16.0), seed),
    };
    let deg = match degrade_spec {
        Some(p) => DegradeSpec::parse_kv(&std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?)?,
        None => DegradeSpec {
            lsf: BENCH_LSF,
            ..DegradeSpec::default()
        }
        .with_frames(3)?,
    };
    let x = render_scene(&scene)?;
    let y = degrade(&x, &deg, seed)?;
    save_pair(out_dir, "groundtruth", &x)?;
    save_pair(out_dir, "degraded", y.as_radiance())?;
    write_text(&out_dir.join("scene.cfg"), &scene.to_kv_string())?;
    write_text(&out_dir.join("degrade.cfg"), &deg.to_kv_string())?;
    deg.lsf.write(out_dir.join("lsf.txt"))?;
    println!("wrote scene and degraded pair to {}", out_dir.display());
    Ok(())
}

/// Runs the CLI on `args` (including the program name) and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    configure_threads();
    let res = match &cli.command {
        Command::LsfFit {
            capture,
            groundtruth,
            out,
            init,
            max_evals,
        } => cmd_lsf_fit(capture, groundtruth, out, init.as_deref(), *max_evals),
        Command::Deblur { input, lsf, out, tuning } => cmd_deblur(input, lsf, out, tuning),
        Command::Sweep { kind, out_dir, tuning } => cmd_sweep(*kind, out_dir, tuning),
        Command::Synth {
            spec,
            degrade,
            calib,
            lsf,
            out_dir,
            seed,
        } => cmd_synth(spec.as_deref(), degrade.as_deref(), *calib, lsf.as_deref(), out_dir, *seed),
    };
    match res {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
