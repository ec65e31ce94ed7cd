//! Command-line front end: argument parsing, dispatch, run manifests.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use crate::checkpoint::Container;
use crate::config::{parse_pairs, parse_train_config, read_generator_config, read_train_config, render_train_config};
use crate::encoder::Pathway;
use crate::error::{Error, Result};
use crate::icm::{pair_icm, render_icm, score_against, self_reference_icm, CorrespondenceMap};
use crate::probe::{
    ablation_suite, linear_probe, pixel_mean_features, probe_features, LabelKind, ProbeConfig,
    Split,
};
use crate::synth_data::{generate_dataset, make_tempo_pair, sample_raw_clip, Dataset, GeneratorConfig, RAW_CLIP_FRAMES};
use crate::trainer::{export_container, load_slow_encoder, pretrain, resume, PretrainOptions, TrainState};

macro_rules! out {
    ($($t:tt)*) => {{
        let _ = write!(std::io::stdout(), $($t)*);
    }};
}

macro_rules! outln {
    ($($t:tt)*) => {{
        let _ = writeln!(std::io::stdout(), $($t)*);
    }};
}

pub const DEFAULT_MANIFEST: &str = "tempo-hcl-runs.jsonl";

#[derive(Parser, Debug)]
#[command(name = "tempo-hcl", version, about = "Visual-tempo hierarchical contrastive learning on synthetic video")]
pub struct Cli {
    /// Run seed; overrides the seed of any config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Request bit-reproducible execution (the default single-threaded path
    /// always is; the flag is recorded in the manifest).
    #[arg(long, global = true)]
    pub deterministic: bool,
    /// File that receives one JSON manifest line per run.
    #[arg(long, global = true, default_value = DEFAULT_MANIFEST)]
    pub manifest: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a labeled moving-shapes corpus.
    GenData {
        #[arg(long)]
        num: usize,
        #[arg(long)]
        out: PathBuf,
        /// Generator `key = value` file.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Contrastive pretraining of both encoders.
    Pretrain {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from a full checkpoint instead of starting fresh.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Stop after this many completed epochs.
        #[arg(long)]
        stop_after: Option<usize>,
    },
    /// Linear probe on a frozen slow encoder.
    Probe {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "speed")]
        label: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and probe an α × D grid.
    Ablate {
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Instance correspondence maps for one instance.
    Icm {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        pair_id: usize,
        #[arg(long)]
        out: PathBuf,
        /// Only emit the map referenced by this pathway.
        #[arg(long)]
        reference: Option<String>,
        #[arg(long)]
        no_normalize: bool,
    },
    /// Write the slow encoder of a checkpoint as a standalone artifact.
    Export {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::GenData { .. } => "gen-data",
            Command::Pretrain { .. } => "pretrain",
            Command::Probe { .. } => "probe",
            Command::Ablate { .. } => "ablate",
            Command::Icm { .. } => "icm",
            Command::Export { .. } => "export",
        }
    }
}

#[derive(Serialize)]
struct RunManifest {
    command: String,
    args: Vec<String>,
    config: Value,
    seed: Option<u64>,
    deterministic: bool,
    code_version: &'static str,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    started_unix: f64,
    wall_clock_seconds: f64,
    exit_status: i32,
    error_class: Option<&'static str>,
}

#[derive(Default)]
struct RunRecord {
    config: Value,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

/// Parse `args` (including the program name), run, and return the exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let args: Vec<String> = args.into_iter().map(Into::into).collect();
    let started = Instant::now();
    let started_unix = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0);
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            if !e.use_stderr() {
                return 0;
            }
            eprintln!("error class=usage message={:?}", e.kind().to_string());
            let manifest = RunManifest {
                command: args.get(1).cloned().unwrap_or_default(),
                args: args.iter().skip(1).cloned().collect(),
                config: Value::Null,
                seed: None,
                deterministic: args.iter().any(|a| a == "--deterministic"),
                code_version: env!("CARGO_PKG_VERSION"),
                inputs: Vec::new(),
                outputs: Vec::new(),
                started_unix,
                wall_clock_seconds: started.elapsed().as_secs_f64(),
                exit_status: 2,
                error_class: Some("usage"),
            };
            let path = args
                .iter()
                .position(|a| a == "--manifest")
                .and_then(|i| args.get(i + 1))
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from(DEFAULT_MANIFEST));
            let _ = append_manifest(&path, &manifest);
            return 2;
        }
    };
    let mut record = RunRecord::default();
    let outcome = dispatch(&cli, &mut record);
    let (status, class) = match &outcome {
        Ok(()) => (0, None),
        Err(e) => {
            eprintln!("error class={} message={:?}", e.class(), e.to_string());
            (if matches!(e, Error::Config(_)) { 2 } else { 1 }, Some(e.class()))
        }
    };
    let manifest = RunManifest {
        command: cli.command.name().to_string(),
        args: args.iter().skip(1).cloned().collect(),
        config: record.config,
        seed: cli.seed,
        deterministic: cli.deterministic,
        code_version: env!("CARGO_PKG_VERSION"),
        inputs: record.inputs,
        outputs: record.outputs,
        started_unix,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        exit_status: status,
        error_class: class,
    };
    if let Err(e) = append_manifest(&cli.manifest, &manifest) {
        eprintln!("error class={} message={:?}", e.class(), e.to_string());
        return 1;
    }
    status
}

fn append_manifest(path: &Path, manifest: &RunManifest) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let line = serde_json::to_string(manifest).expect("manifest serializes");
    writeln!(f, "{line}").map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("report serializes")
}

fn dispatch(cli: &Cli, rec: &mut RunRecord) -> Result<()> {
    match &cli.command {
        Command::GenData { num, out, config } => {
            let g = match config {
                Some(p) => {
                    rec.inputs.push(p.clone());
                    read_generator_config(p)?
                }
                None => GeneratorConfig::default(),
            };
            let seed = cli.seed.unwrap_or(0);
            rec.config = json!({"generator": g, "num": num, "seed": seed});
            let data = generate_dataset(*num, seed, &g)?;
            data.save(out)?;
            rec.outputs.push(out.clone());
            outln!("wrote {} instances to {}", num, out.display());
            Ok(())
        }
        Command::Pretrain {
            config,
            data,
            out,
            resume: resume_from,
            stop_after,
        } => {
            rec.inputs.push(data.clone());
            let opts = PretrainOptions {
                out_dir: Some(out.clone()),
                stop_after_epoch: *stop_after,
                echo: true,
            };
            rec.outputs.push(out.clone());
            let outcome = match resume_from {
                Some(ck) => {
                    rec.inputs.push(ck.clone());
                    let state = TrainState::<f32>::load(ck)?;
                    rec.config = serde_json::to_value(&state.config).expect("config serializes");
                    resume(state, &Dataset::load(data)?, &opts)?
                }
                None => {
                    let mut cfg = match config {
                        Some(p) => {
                            rec.inputs.push(p.clone());
                            read_train_config(p)?
                        }
                        None => parse_train_config("")?,
                    };
                    if let Some(s) = cli.seed {
                        cfg.seed = s;
                    }
                    rec.config = serde_json::to_value(&cfg).expect("config serializes");
                    let dataset = Dataset::load(data)?;
                    write_text(&out.join("config.txt"), &render_train_config(&cfg))?;
                    pretrain::<f32>(&dataset, &cfg, &opts)?
                }
            };
            outln!("finished at step {}", outcome.state.step);
            Ok(())
        }
        Command::Probe {
            checkpoint,
            data,
            label,
            out,
        } => {
            let label: LabelKind = label.parse()?;
            rec.inputs.extend([checkpoint.clone(), data.clone()]);
            let dataset = Dataset::load(data)?;
            let encoder = load_slow_encoder::<f32>(&Container::load(checkpoint)?)?;
            let cfg = ProbeConfig {
                seed: cli.seed.unwrap_or(0),
                tau: RAW_CLIP_FRAMES / encoder.config.frames,
                ..ProbeConfig::default()
            };
            rec.config = json!({"probe": cfg, "label": label});
            let split = Split::random(dataset.len(), cfg.test_fraction, cfg.seed)?;
            let report = linear_probe(&dataset, &split, &encoder, label, &cfg)?;
            let pixel = probe_features(&pixel_mean_features(&dataset, cfg.tau)?, &dataset, &split, label, &cfg)?;
            let mut text = report.to_string();
            text.push_str(&format!("pixel-mean       {:.4}\n", pixel.accuracy));
            out!("{text}");
            if let Some(dir) = out {
                write_text(&dir.join(format!("probe_{label}.txt")), &text)?;
                let summary = json!({"report": report, "pixel_mean_accuracy": pixel.accuracy});
                write_text(&dir.join(format!("probe_{label}.json")), &to_json(&summary))?;
                rec.outputs.push(dir.clone());
            }
            Ok(())
        }
        Command::Ablate { grid, data, out } => {
            rec.inputs.extend([grid.clone(), data.clone()]);
            let text = fs::read_to_string(grid).map_err(|e| Error::io(grid, e))?;
            let grid = parse_grid(&text)?;
            let mut base = grid.base;
            if let Some(s) = cli.seed {
                base.seed = s;
            }
            rec.config = json!({"base": base, "alphas": grid.alphas, "depths": grid.depths, "label": grid.label});
            let dataset = Dataset::load(data)?;
            let probe = ProbeConfig {
                seed: base.seed,
                tau: base.tau,
                ..ProbeConfig::default()
            };
            let split = Split::random(dataset.len(), probe.test_fraction, probe.seed)?;
            let table = ablation_suite(
                &base,
                &grid.alphas,
                &grid.depths,
                &dataset,
                &split,
                grid.label,
                &probe,
                |cfg| {
                    let dir = out.join(format!("alpha{}_depth{}", cfg.alpha, cfg.taps.len()));
                    let opts = PretrainOptions {
                        out_dir: Some(dir),
                        stop_after_epoch: None,
                        echo: false,
                    };
                    Ok(pretrain::<f32>(&dataset, cfg, &opts)?.state.slow)
                },
            );
            let tsv = table.to_tsv();
            out!("{tsv}");
            outln!("alpha_trend={} depth_trend={}", table.alpha_trend, table.depth_trend);
            write_text(&out.join("ablation.tsv"), &tsv)?;
            write_text(&out.join("ablation.json"), &to_json(&table))?;
            rec.outputs.push(out.clone());
            Ok(())
        }
        Command::Icm {
            checkpoint,
            data,
            pair_id,
            out,
            reference,
            no_normalize,
        } => {
            rec.inputs.extend([checkpoint.clone(), data.clone()]);
            rec.outputs.push(out.clone());
            rec.config = json!({"pair_id": pair_id, "reference": reference, "normalize": !no_normalize});
            let dataset = Dataset::load(data)?;
            let video = dataset
                .instances
                .get(*pair_id)
                .ok_or(Error::Lookup { index: *pair_id, len: dataset.len() })?;
            let container = Container::load(checkpoint)?;
            let raw = sample_raw_clip(video, 0)?;
            let maps: Vec<CorrespondenceMap> = match container.kind {
                crate::checkpoint::ContainerKind::Full => {
                    let state = TrainState::<f32>::from_container(&container)?;
                    let pair = make_tempo_pair(&raw, state.config.tau, state.config.alpha)?;
                    let tap = state.slow.config.final_tap();
                    let refs = match reference {
                        Some(r) => vec![r.parse::<Pathway>()?],
                        None => vec![Pathway::Fast, Pathway::Slow],
                    };
                    refs.into_iter()
                        .map(|r| pair_icm(&state.slow, &state.fast, &state.heads, &pair, tap, r, !no_normalize))
                        .collect::<Result<_>>()?
                }
                crate::checkpoint::ContainerKind::SlowEncoder => {
                    let slow = load_slow_encoder::<f32>(&container)?;
                    let tau = RAW_CLIP_FRAMES / slow.config.frames;
                    let pair = make_tempo_pair(&raw, tau, 1)?;
                    vec![self_reference_icm(&slow, &pair.slow, *pair_id, tau, !no_normalize)?]
                }
            };
            let mut sidecar = Vec::new();
            for map in &maps {
                let dir = out.join(format!("reference_{}", map.reference));
                let files = render_icm(map, &video.frames, 0, &dir)?;
                let score = score_against(map, video, 0)?;
                outln!(
                    "reference={} map_on={} frames={} localization_score={:.4}",
                    map.reference,
                    map.reference.other(),
                    files.len(),
                    score
                );
                sidecar.push(json!({
                    "reference": map.reference,
                    "tap": map.tap,
                    "shape": map.values.shape(),
                    "frame_indices": map.frame_indices,
                    "localization_score": score,
                    "values": map.values.data(),
                    "files": files,
                }));
            }
            write_text(
                &out.join("icm.json"),
                &to_json(&json!({"instance_id": pair_id, "normalize": !no_normalize, "maps": sidecar})),
            )?;
            Ok(())
        }
        Command::Export { checkpoint, out } => {
            rec.inputs.push(checkpoint.clone());
            rec.outputs.push(out.clone());
            let container = Container::load(checkpoint)?;
            let slow = load_slow_encoder::<f32>(&container)?;
            rec.config = serde_json::to_value(&slow.config).expect("config serializes");
            export_container(&slow).save(out)?;
            outln!("exported slow encoder to {}", out.display());
            Ok(())
        }
    }
}

/// Ablation grid file: `alphas`, `depths` and `label` keys plus any training
/// keys for the shared base config.
pub struct Grid {
    pub alphas: Vec<usize>,
    pub depths: Vec<usize>,
    pub label: LabelKind,
    pub base: crate::trainer::TrainConfig,
}

pub fn parse_grid(text: &str) -> Result<Grid> {
    let pairs = parse_pairs(text)?;
    let mut rest = String::new();
    let mut grid_keys: BTreeMap<&str, String> = BTreeMap::new();
    for (k, (_, v)) in &pairs {
        match k.as_str() {
            "alphas" | "depths" | "label" => {
                grid_keys.insert(k.as_str(), v.clone());
            }
            _ => rest.push_str(&format!("{k} = {v}\n")),
        }
    }
    let nums = |key: &str, default: &[usize]| -> Result<Vec<usize>> {
        match grid_keys.get(key) {
            None => Ok(default.to_vec()),
            Some(v) => v
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse()
                        .map_err(|e| Error::Config(format!("key `{key}`: cannot parse `{s}`: {e}")))
                })
                .collect(),
        }
    };
    Ok(Grid {
        alphas: nums("alphas", &[1, 2, 4])?,
        depths: nums("depths", &[1, 2, 3])?,
        label: grid_keys.get("label").map(|s| s.parse()).transpose()?.unwrap_or(LabelKind::Speed),
        base: parse_train_config(&rest)?,
    })
}
