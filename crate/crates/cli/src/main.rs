use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use clusterfusion::bench::{bench_association, random_association_problem};
use clusterfusion::kpconv::{load_checkpoint, KPNetworkConfig, NetworkVariant};
use clusterfusion::metrics::{evaluate, format_kv, format_report, EvalConfig};
use clusterfusion::pipeline::{run_frames, FeatureMode, PipelineConfig};
use clusterfusion::scene::{load_detections, load_scene, save_detections, save_scene, synth_scene, SynthConfig};

const THREADS_ENV: &str = "CLUSTERFUSION_THREADS";
const REPORT_HEADER: &str = r#"{"format":"clusterfusion.report","version":1}"#;

#[derive(Parser)]
#[command(name = "clusterfusion", version, about = "Radar-camera cluster fusion pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the detection pipeline over a scene file.
    Run {
        #[arg(long)]
        scenes: PathBuf,
        #[arg(long, default_value = "handcrafted")]
        features: FeatureMode,
        #[arg(long)]
        out: PathBuf,
        /// Network size for learned and hybrid features.
        #[arg(long, default_value = "large")]
        variant: NetworkVariant,
        /// Seed of the frozen network weights.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Load network weights instead of seeding them.
        #[arg(long, conflicts_with_all = ["variant", "seed"])]
        checkpoint: Option<PathBuf>,
        /// Write per-frame BEV points, clusters and box footprints as JSON lines.
        #[arg(long)]
        dump_bev: Option<PathBuf>,
    },
    /// Score detections against the ground truth stored in a scene file.
    Eval {
        #[arg(long)]
        dets: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Generate a synthetic scene file.
    Synth {
        /// JSON synthesis config; omitted fields take defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        frames: Option<usize>,
    },
    /// Time batched against naive association.
    Bench {
        #[arg(long, default_value_t = 1000)]
        points: usize,
        #[arg(long, default_value_t = 100)]
        dets: usize,
        #[arg(long, default_value_t = 50)]
        iters: usize,
        #[arg(long, default_value_t = 3)]
        warmup: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

type Failure = Box<dyn std::error::Error>;

fn with_path<E: std::fmt::Display>(path: &Path) -> impl FnOnce(E) -> Failure + '_ {
    move |e| format!("{}: {e}", path.display()).into()
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Run {
            scenes,
            features,
            out,
            variant,
            seed,
            checkpoint,
            dump_bev,
        } => {
            let frames = load_scene(&scenes).map_err(with_path(&scenes))?;
            let network = match checkpoint {
                Some(p) => load_checkpoint(&p).map_err(with_path(&p))?,
                None => KPNetworkConfig::new(variant, seed),
            };
            let cfg = PipelineConfig::new(features, network);
            let outputs = run_frames(&frames, &cfg)?;
            let dets: Vec<_> = outputs.iter().map(|o| o.detections.clone()).collect();
            save_detections(&out, &dets).map_err(with_path(&out))?;
            if let Some(path) = dump_bev {
                let mut w = BufWriter::new(File::create(&path).map_err(with_path(&path))?);
                for o in &outputs {
                    serde_json::to_writer(&mut w, &o.bev)?;
                    w.write_all(b"\n")?;
                }
                w.flush()?;
            }
            let n: usize = dets.iter().map(|d| d.detections.len()).sum();
            eprintln!("{} frames, {n} detections -> {}", dets.len(), out.display());
        }
        Command::Eval { dets, gt, report } => {
            let det_frames = load_detections(&dets).map_err(with_path(&dets))?;
            let scenes = load_scene(&gt).map_err(with_path(&gt))?;
            let gts: BTreeMap<_, _> = scenes
                .into_iter()
                .filter_map(|f| f.ground_truth.map(|g| (f.frame_id, g)))
                .collect();
            let detections: BTreeMap<_, _> = det_frames
                .into_iter()
                .map(|f| (f.frame_id, f.detections))
                .collect();
            let cfg = EvalConfig::default();
            let result = evaluate(&detections, &gts, &cfg)?;
            std::fs::write(&report, format!("{REPORT_HEADER}\n{}", format_kv(&result))).map_err(with_path(&report))?;
            print!("{}", format_report(&result, &cfg));
        }
        Command::Synth { config, out, seed, frames } => {
            let mut cfg: SynthConfig = match config {
                Some(p) => {
                    let text = std::fs::read_to_string(&p).map_err(with_path(&p))?;
                    serde_json::from_str(&text).map_err(with_path(&p))?
                }
                None => SynthConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(f) = frames {
                cfg.frames = f;
            }
            let scene = synth_scene(&cfg)?;
            save_scene(&out, &scene).map_err(with_path(&out))?;
        }
        Command::Bench {
            points,
            dets,
            iters,
            warmup,
            seed,
        } => {
            if points == 0 || dets == 0 || iters == 0 {
                return Err("--points, --dets and --iters must be positive".into());
            }
            let problem = random_association_problem(seed, points, dets);
            let report = bench_association(&problem, iters, warmup)?;
            println!("{report}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let threads = match v.parse::<usize>() {
            Ok(n) if n > 0 => n,
            _ => {
                eprintln!("error: {THREADS_ENV} must be a positive integer, got `{v}`");
                return ExitCode::from(2);
            }
        };
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
