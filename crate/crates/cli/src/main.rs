use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use flowlabel::pipeline::{read_labels, write_label_txt, write_labels};
use flowlabel::simeval::{
    closed_gap, evaluate, read_ground_truth, simulate, write_ground_truth, ScenarioSpec,
};
use flowlabel::tracker::track_states_jsonl;
use flowlabel::{label_sequence, load_sequence, write_sequence, PipelineConfig, SequenceSummary};

#[derive(Debug, Parser)]
#[command(name = "flowlabel", version, about = "Pseudo-labels from detections, scene flow and tracking")]
struct Cli {
    /// TOML configuration; missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Sequences processed concurrently (0 = one per core).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Random seed for simulation and ground fitting.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    output: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Label one or more sequences given their manifest files.
    Label {
        #[arg(required = true)]
        manifests: Vec<PathBuf>,
    },
    /// Write a synthetic sequence and its ground truth.
    Simulate {
        /// Scenario file (JSON or TOML); the built-in mixed-traffic scene if omitted.
        spec: Option<PathBuf>,
    },
    /// Score a label file against ground truth.
    Eval {
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        gt: PathBuf,
    },
    /// Percentage of the source-only to fully-supervised gap closed by adaptation.
    ClosedGap {
        #[arg(allow_negative_numbers = true)]
        adapted: f64,
        #[arg(allow_negative_numbers = true)]
        source_only: f64,
        #[arg(allow_negative_numbers = true)]
        fully_supervised: f64,
    },
}

#[derive(Debug)]
enum Failure {
    Input(anyhow::Error),
    Internal(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Input(_) => 1,
            Failure::Internal(_) => 2,
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Input(e)
    }
}

#[derive(Debug, Serialize)]
struct SequenceFailure {
    manifest: PathBuf,
    error: String,
}

#[derive(Debug, Serialize)]
struct LabelSummary {
    sequences: Vec<SequenceSummary>,
    failures: Vec<SequenceFailure>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (Failure::Input(e) | Failure::Internal(e)) = &f;
            eprintln!("error: {e:#}");
            ExitCode::from(f.code())
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path).map_err(|e| anyhow!(e))?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(jobs) = cli.jobs {
        cfg.jobs = jobs;
    }
    cfg.validate().map_err(|e| anyhow!("invalid configuration: {e}"))?;

    match cli.command {
        Command::Label { manifests } => cmd_label(&manifests, &cfg, &cli.output),
        Command::Simulate { spec } => cmd_simulate(spec.as_deref(), cfg.seed, &cli.output),
        Command::Eval { labels, gt } => cmd_eval(&labels, &gt, &cfg, &cli.output),
        Command::ClosedGap {
            adapted,
            source_only,
            fully_supervised,
        } => {
            let gap = closed_gap(adapted, source_only, fully_supervised).map_err(|e| anyhow!(e))?;
            println!("{gap:.1}");
            Ok(())
        }
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> anyhow::Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn create_dir(path: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))
}

fn cmd_label(manifests: &[PathBuf], cfg: &PipelineConfig, out: &Path) -> Result<(), Failure> {
    create_dir(out)?;
    write_file(&out.join("effective_config.toml"), cfg.to_toml_string())?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .context("starting worker pool")?;
    let results: Vec<Result<SequenceSummary, Failure>> =
        pool.install(|| manifests.par_iter().map(|m| label_one(m, cfg, out)).collect());

    let mut summary = LabelSummary {
        sequences: Vec::new(),
        failures: Vec::new(),
    };
    let mut seen = HashSet::new();
    let mut worst: Option<Failure> = None;
    for (manifest, result) in manifests.iter().zip(results) {
        let result = result.and_then(|s| {
            if seen.insert(s.sequence_id.clone()) {
                Ok(s)
            } else {
                Err(Failure::Input(anyhow!(
                    "sequence id {} appears more than once; its outputs were overwritten",
                    s.sequence_id
                )))
            }
        });
        match result {
            Ok(s) => summary.sequences.push(s),
            Err(f) => {
                let (Failure::Input(e) | Failure::Internal(e)) = &f;
                log::error!("{}: {e:#}", manifest.display());
                summary.failures.push(SequenceFailure {
                    manifest: manifest.clone(),
                    error: format!("{e:#}"),
                });
                if worst.as_ref().is_none_or(|w| f.code() > w.code()) {
                    worst = Some(f);
                }
            }
        }
    }
    let json = serde_json::to_string_pretty(&summary).context("serializing summary")?;
    write_file(&out.join("summary.json"), json + "\n")?;
    match worst {
        None => Ok(()),
        Some(f) if summary.failures.len() == 1 => Err(f),
        Some(f) => {
            let n = summary.failures.len();
            Err(match f {
                Failure::Input(e) => Failure::Input(e.context(format!("{n} sequences failed"))),
                Failure::Internal(e) => Failure::Internal(e.context(format!("{n} sequences failed"))),
            })
        }
    }
}

fn label_one(manifest: &Path, cfg: &PipelineConfig, out: &Path) -> Result<SequenceSummary, Failure> {
    let dataset = load_sequence(manifest)
        .with_context(|| format!("loading {}", manifest.display()))?;
    let run = label_sequence(&dataset, cfg).map_err(|e| {
        let input = e.is_input_error();
        let e = anyhow::Error::new(e).context(format!("labeling {}", dataset.sequence_id));
        if input {
            Failure::Input(e)
        } else {
            Failure::Internal(e)
        }
    })?;
    let seq = &dataset.sequence_id;
    write_labels(&out.join(format!("{seq}.labels.jsonl")), &run.labels).map_err(anyhow::Error::new)?;
    if cfg.export.per_frame_txt {
        let frames = dataset.frames.iter().map(|f| f.index);
        write_label_txt(&out.join(format!("{seq}_txt")), frames, &run.labels)
            .map_err(anyhow::Error::new)?;
    }
    if cfg.export.track_dump {
        write_file(&out.join(format!("{seq}.tracks.jsonl")), track_states_jsonl(&run.tracks))?;
    }
    log::info!(
        "{seq}: {} frames, {} tracks, {} kept, {} recovered, {} labels",
        run.summary.frames,
        run.summary.tracks,
        run.summary.refine.kept,
        run.summary.refine.recovered,
        run.summary.labels
    );
    Ok(run.summary)
}

fn cmd_simulate(spec_path: Option<&Path>, seed: u64, out: &Path) -> Result<(), Failure> {
    let spec = match spec_path {
        Some(p) => ScenarioSpec::from_path(p).map_err(anyhow::Error::new)?,
        None => ScenarioSpec::mixed_traffic(),
    };
    let sim = simulate(&spec, seed).map_err(anyhow::Error::new)?;
    create_dir(out)?;
    let manifest = write_sequence(&sim.dataset, out).map_err(anyhow::Error::new)?;
    write_ground_truth(&sim.ground_truth, &out.join("ground_truth.json")).map_err(anyhow::Error::new)?;
    let spec_json = serde_json::to_string_pretty(&spec).context("serializing scenario")?;
    write_file(&out.join("scenario.json"), spec_json + "\n")?;
    log::info!(
        "{}: {} frames, {} detections dropped, {} clutter; manifest at {}",
        spec.sequence_id,
        sim.dataset.frames.len(),
        sim.stats.dropped,
        sim.stats.clutter,
        manifest.display()
    );
    Ok(())
}

fn cmd_eval(labels_path: &Path, gt_path: &Path, cfg: &PipelineConfig, out: &Path) -> Result<(), Failure> {
    let gt = read_ground_truth(gt_path).map_err(anyhow::Error::new)?;
    let labels = read_labels(labels_path).map_err(anyhow::Error::new)?;
    if let Some(seq) = labels_path
        .file_name()
        .and_then(|n| n.to_str())
        .and_then(|n| n.strip_suffix(".labels.jsonl"))
    {
        if seq != gt.sequence_id {
            return Err(anyhow!(
                "{} holds labels for {seq} but the ground truth is for {}",
                labels_path.display(),
                gt.sequence_id
            )
            .into());
        }
    }
    if let Some(l) = labels.iter().find(|l| gt.frame(l.frame).is_none()) {
        return Err(anyhow!(
            "{}: label for frame {} which is not in the ground truth",
            labels_path.display(),
            l.frame
        )
        .into());
    }
    let report = evaluate(&labels, &gt, &cfg.eval);
    let table = report.to_table();
    create_dir(out)?;
    let json = serde_json::to_string_pretty(&report).context("serializing report")?;
    write_file(&out.join("report.json"), json + "\n")?;
    write_file(&out.join("report.txt"), &table)?;
    print!("{table}");
    Ok(())
}
