use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use sha2::{Digest, Sha256};

use evrecon::config::KeyValues;
use evrecon::events::{read_stream, write_stream};
use evrecon::metrics::evaluate_sequence;
use evrecon::model::Model;
use evrecon::simulator::{read_manifest, simulate, SimConfig};
use evrecon::training::{build_surrogate_corpus, run_stage, RecipeRanges, TrainingConfig};
use evrecon::{Error, Image};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const MANIFEST_FILE: &str = "run_manifest.txt";

#[derive(Parser, Debug)]
#[command(name = "evrecon", version, about = "Event-camera video reconstruction toolkit")]
struct Cli {
    /// Seed for every random stream of the command.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Single-threaded, bit-reproducible execution.
    #[arg(long, global = true)]
    deterministic: bool,
    /// key=value configuration file (or a previous run manifest).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate events from a frame manifest (`timestamp_us path` lines).
    Simulate {
        #[arg(long)]
        manifest: PathBuf,
        /// Event file to write; `.csv` selects the text format. Defaults to `<out>/events.evs`.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Build a degraded/clean surrogate corpus from a directory of images.
    Degrade {
        #[arg(long)]
        hq_dir: PathBuf,
        /// Square side of the output pairs.
        #[arg(long, default_value_t = 64)]
        size: usize,
    },
    /// Run one training stage.
    Train {
        #[arg(long)]
        stage: u8,
    },
    /// Reconstruct frames from an event file.
    Reconstruct(ReconstructArgs),
    /// Compare two directories of frames (sorted by name) in gray.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
    },
    /// Re-run the command recorded in a run manifest, writing to `--out`.
    Replay {
        #[arg(long)]
        manifest: PathBuf,
    },
}

#[derive(Args, Debug)]
#[group(required = true, multiple = false, id = "span")]
struct WindowArgs {
    /// Window length in microseconds.
    #[arg(long, group = "span")]
    window_us: Option<u64>,
    /// Split the stream's duration into this many windows.
    #[arg(long, group = "span")]
    frames: Option<usize>,
}

#[derive(Args, Debug)]
struct ReconstructArgs {
    #[arg(long)]
    events: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    window: WindowArgs,
    /// Sensor size `WxH`, required for CSV input.
    #[arg(long)]
    sensor: Option<String>,
}

#[derive(Debug)]
enum Failure {
    Validation(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_validation() {
            Failure::Validation(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

type CmdResult<T = ()> = Result<T, Failure>;

fn require_exists(path: &Path, what: &str) -> CmdResult {
    if path.exists() {
        Ok(())
    } else {
        Err(Failure::Validation(format!("{what} {} does not exist", path.display())))
    }
}

fn sha256_file(path: &Path) -> CmdResult<String> {
    let bytes = std::fs::read(path).map_err(|e| Failure::from(Error::io(path, e)))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

/// Everything needed to re-run a command: argv, resolved config, seed and input hashes.
struct RunManifest {
    kv: KeyValues,
    path: PathBuf,
}

impl RunManifest {
    fn begin(cli: &Cli, argv: &[String], command: &str, config: &KeyValues, inputs: &[&Path]) -> CmdResult<Self> {
        let mut kv = KeyValues::new();
        kv.set("command", command);
        kv.set("version", env!("CARGO_PKG_VERSION"));
        kv.set("seed", cli.seed);
        kv.set("deterministic", cli.deterministic);
        kv.set("started_unix", unix_now());
        for (i, a) in argv.iter().enumerate() {
            kv.set(&format!("argv.{i:03}"), a);
        }
        for k in config.keys() {
            kv.set(&format!("config.{k}"), config.raw(k).unwrap_or_default());
        }
        for p in inputs {
            for file in files_under(p) {
                kv.set(&format!("input.{}", file.display()), sha256_file(&file)?);
            }
        }
        std::fs::create_dir_all(&cli.out).map_err(|e| Failure::from(Error::io(&cli.out, e)))?;
        let m = RunManifest {
            kv,
            path: cli.out.join(MANIFEST_FILE),
        };
        m.write()?;
        Ok(m)
    }

    fn output(&mut self, path: &Path) -> CmdResult {
        let h = sha256_file(path)?;
        self.kv.set(&format!("output.{}", path.display()), h);
        Ok(())
    }

    fn finish(mut self) -> CmdResult {
        self.kv.set("finished_unix", unix_now());
        self.write()
    }

    fn write(&self) -> CmdResult {
        std::fs::write(&self.path, self.kv.render()).map_err(|e| Failure::from(Error::io(&self.path, e)))
    }
}

fn files_under(p: &Path) -> Vec<PathBuf> {
    if p.is_dir() {
        let mut v: Vec<PathBuf> = std::fs::read_dir(p)
            .map(|rd| rd.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.is_file()).collect())
            .unwrap_or_default();
        v.sort();
        v
    } else {
        vec![p.to_path_buf()]
    }
}

/// Config keys from `--config`; a run manifest contributes its `config.*` entries.
fn load_config(cli: &Cli) -> CmdResult<KeyValues> {
    let Some(path) = &cli.config else {
        return Ok(KeyValues::new());
    };
    require_exists(path, "config")?;
    let kv = KeyValues::read(path)?;
    if kv.raw("command").is_some() && kv.keys().any(|k| k.starts_with("config.")) {
        return Ok(kv.subset("config."));
    }
    Ok(kv)
}

/// Keys under `prefix` when the file has such a section, else the whole file.
fn section(kv: KeyValues, prefix: &str) -> KeyValues {
    if kv.keys().any(|k| k.starts_with(prefix)) {
        kv.subset(prefix)
    } else {
        kv
    }
}

fn read_frames(dir: &Path) -> CmdResult<Vec<Image>> {
    require_exists(dir, "directory")?;
    files_under(dir)
        .into_iter()
        .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("pgm" | "ppm" | "pnm")))
        .map(|p| Image::read_pnm(&p).map_err(Failure::from))
        .collect()
}

fn parse_sensor(s: &str) -> CmdResult<(u16, u16)> {
    let bad = || Failure::Validation(format!("sensor size must look like 346x260, got {s:?}"));
    let (w, h) = s.split_once('x').ok_or_else(bad)?;
    Ok((w.parse().map_err(|_| bad())?, h.parse().map_err(|_| bad())?))
}

fn cmd_simulate(cli: &Cli, argv: &[String], manifest: &Path, output: Option<&Path>) -> CmdResult {
    require_exists(manifest, "frame manifest")?;
    let config = load_config(cli)?;
    let sim = SimConfig::from_key_values(&section(config, "sim."))?;
    let mut run = RunManifest::begin(cli, argv, "simulate", &sim.to_key_values(), &[manifest])?;
    let frames = read_manifest(manifest)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cli.seed);
    let stream = simulate(&frames, &sim, &mut rng)?;
    let out = output.map_or_else(|| cli.out.join("events.evs"), Path::to_path_buf);
    write_stream(&stream, &out)?;
    log::info!("{} events from {} frames -> {}", stream.len(), frames.len(), out.display());
    run.output(&out)?;
    run.finish()
}

fn cmd_degrade(cli: &Cli, argv: &[String], hq_dir: &Path, size: usize) -> CmdResult {
    require_exists(hq_dir, "image directory")?;
    let ranges = RecipeRanges::from_key_values(&section(load_config(cli)?, "degrade."))?;
    let mut resolved = ranges.to_key_values();
    resolved.set("size", size);
    let mut run = RunManifest::begin(cli, argv, "degrade", &resolved, &[hq_dir])?;
    let report = build_surrogate_corpus(hq_dir, &ranges, cli.seed, &cli.out, size)?;
    log::info!(
        "{} pairs ({} unchanged), {} skipped",
        report.entries.len(),
        report.unchanged,
        report.skipped.len()
    );
    for e in &report.entries {
        run.output(&cli.out.join(&e.lq))?;
    }
    run.output(&report.manifest)?;
    run.finish()
}

fn cmd_train(cli: &Cli, argv: &[String], stage: u8) -> CmdResult {
    let mut kv = load_config(cli)?;
    kv.set("stage", stage);
    kv.set("seed", cli.seed);
    kv.set("out_dir", cli.out.display());
    if cli.deterministic {
        kv.set("deterministic", true);
    }
    let cfg = TrainingConfig::from_key_values(&kv)?;
    let mut inputs: Vec<&Path> = Vec::new();
    if let Some(c) = &cfg.corpus {
        require_exists(c, "corpus manifest")?;
        inputs.push(c);
    }
    for v in &cfg.videos {
        require_exists(v, "video manifest")?;
        inputs.push(v);
    }
    let mut run = RunManifest::begin(cli, argv, "train", &cfg.to_key_values(), &inputs)?;
    let outcome = run_stage(&cfg)?;
    println!(
        "stage {stage}: val latent {:.6} -> {:.6}, val mse {:.6} -> {:.6}",
        outcome.initial.latent, outcome.last.latent, outcome.initial.mse, outcome.last.mse
    );
    run.output(&outcome.checkpoint)?;
    run.output(&outcome.metrics)?;
    run.finish()
}

fn cmd_reconstruct(cli: &Cli, argv: &[String], args: &ReconstructArgs) -> CmdResult {
    require_exists(&args.events, "event file")?;
    require_exists(&args.checkpoint, "checkpoint")?;
    let sensor = args.sensor.as_deref().map(parse_sensor).transpose()?;
    let mut resolved = KeyValues::new();
    if let Some(w) = args.window.window_us {
        if w == 0 {
            return Err(Failure::Validation("--window-us must be positive".into()));
        }
        resolved.set("window_us", w);
    }
    if let Some(n) = args.window.frames {
        if n == 0 {
            return Err(Failure::Validation("--frames must be positive".into()));
        }
        resolved.set("frames", n);
    }
    let mut run = RunManifest::begin(cli, argv, "reconstruct", &resolved, &[&args.events, &args.checkpoint])?;
    let stream = read_stream(&args.events, sensor)?;
    let model = Model::load(&args.checkpoint)?;
    let frames = match (args.window.window_us, args.window.frames, stream.first_time(), stream.last_time()) {
        (_, _, None, _) | (_, _, _, None) => Vec::new(),
        (Some(dt), _, _, _) => model.reconstruct(&stream, dt)?,
        (None, Some(n), Some(first), Some(last)) => {
            let dt = (last - first + 1).div_ceil(n as u64).max(1);
            let windows: Vec<_> = stream
                .windows(first, dt, n)
                .into_iter()
                .enumerate()
                .map(|(i, w)| {
                    let t0 = first + i as u64 * dt;
                    (w, t0, t0 + dt)
                })
                .collect();
            model.reconstruct_windows(&windows)?
        }
        (None, None, _, _) => unreachable!("clap requires one window option"),
    };
    std::fs::create_dir_all(&cli.out).map_err(|e| Failure::from(Error::io(&cli.out, e)))?;
    for (i, f) in frames.iter().enumerate() {
        let p = cli.out.join(format!("frame_{i:05}.ppm"));
        f.write_pnm(&p)?;
        run.output(&p)?;
    }
    println!("{} frames written to {}", frames.len(), cli.out.display());
    run.finish()
}

fn cmd_evaluate(cli: &Cli, argv: &[String], pred: &Path, gt: &Path) -> CmdResult {
    require_exists(pred, "prediction directory")?;
    require_exists(gt, "reference directory")?;
    let mut run = RunManifest::begin(cli, argv, "evaluate", &KeyValues::new(), &[pred, gt])?;
    let p = read_frames(pred)?;
    let g = read_frames(gt)?;
    let report = evaluate_sequence(&p, &g)?;
    let csv = cli.out.join("metrics.csv");
    std::fs::write(&csv, report.to_csv()).map_err(|e| Failure::from(Error::io(&csv, e)))?;
    let summary = report.summary();
    let sp = cli.out.join("summary.txt");
    std::fs::write(&sp, &summary).map_err(|e| Failure::from(Error::io(&sp, e)))?;
    print!("{summary}");
    run.output(&csv)?;
    run.finish()
}

/// Recorded argv with `--out` replaced by the current one.
fn replay_argv(manifest: &Path, out: &Path) -> CmdResult<Vec<String>> {
    require_exists(manifest, "run manifest")?;
    let kv = KeyValues::read(manifest)?;
    let recorded = kv.subset("argv.");
    let mut argv: Vec<String> = recorded.keys().map(|k| recorded.raw(k).unwrap_or_default().to_string()).collect();
    if argv.is_empty() {
        return Err(Failure::Validation(format!("{} records no command line", manifest.display())));
    }
    let mut i = 1;
    while i < argv.len() {
        if argv[i] == "--out" {
            argv.drain(i..(i + 2).min(argv.len()));
        } else if argv[i].starts_with("--out=") {
            argv.remove(i);
        } else {
            i += 1;
        }
    }
    argv.push("--out".into());
    argv.push(out.display().to_string());
    Ok(argv)
}

fn run(cli: &Cli, argv: &[String]) -> CmdResult {
    match &cli.command {
        Command::Simulate { manifest, output } => cmd_simulate(cli, argv, manifest, output.as_deref()),
        Command::Degrade { hq_dir, size } => cmd_degrade(cli, argv, hq_dir, *size),
        Command::Train { stage } => cmd_train(cli, argv, *stage),
        Command::Reconstruct(args) => cmd_reconstruct(cli, argv, args),
        Command::Evaluate { pred, gt } => cmd_evaluate(cli, argv, pred, gt),
        Command::Replay { manifest } => {
            let argv = replay_argv(manifest, &cli.out)?;
            let inner = Cli::try_parse_from(&argv).map_err(|e| Failure::Validation(e.to_string()))?;
            if matches!(inner.command, Command::Replay { .. }) {
                return Err(Failure::Validation("cannot replay a replay".into()));
            }
            run(&inner, &argv)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let argv: Vec<String> = std::env::args().collect();
    let cli = Cli::parse_from(&argv);
    match run(&cli, &argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}
