use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use phyco::benchmark::load_manifest;
use phyco::diffusion::TrainConfig;
use phyco::flow_predictor::{build_flow_dataset, train_flow_predictor, FlowPredictor, FlowPredictorConfig};
use phyco::optflow::{estimate_flow, FlowEstimatorConfig};
use phyco::oracle::{build_corpus, load_corpus_manifest, CorpusConfig, CorpusEntry, Split};
use phyco::pipeline::{self, AnnotationConfig, EvalJob, SEED_ENV};
use phyco::scoring::ScoreVariant;
use phyco::video::{read_flow, read_sequence, write_flow, write_sequence, FrameSequence};
use phyco::video_predictor::{train_video_predictor, VideoExample, VideoPredictor, VideoPredictorConfig};

#[derive(Parser)]
#[command(name = "phyco", version, about = "Physical-coherence scoring for generated videos")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// Small models that train on a laptop CPU.
    Desk,
    /// Full-size geometry and widths.
    Full,
}

#[derive(Subcommand)]
enum Cmd {
    /// Render the synthetic physics corpus.
    Corpus {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        train: usize,
        #[arg(long, default_value_t = 50)]
        val: usize,
        #[arg(long, default_value_t = 50)]
        test: usize,
        #[arg(long, env = SEED_ENV, default_value_t = 0)]
        seed: u64,
    },
    /// Train the flow predictor on a corpus' training split.
    TrainFlow {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2000)]
        steps: usize,
        #[arg(long, value_enum, default_value_t = Preset::Desk)]
        preset: Preset,
        #[arg(long, env = SEED_ENV, default_value_t = 0)]
        seed: u64,
    },
    /// Train the video predictor on a corpus' training split, guided by estimated flow.
    TrainVideo {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2000)]
        steps: usize,
        #[arg(long, value_enum, default_value_t = Preset::Desk)]
        preset: Preset,
        #[arg(long, env = SEED_ENV, default_value_t = 0)]
        seed: u64,
    },
    /// Estimate optical flow for a clip.
    Flow {
        #[arg(long)]
        video: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample flow from a first frame and a prompt.
    PredictFlow {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Clip or image whose first frame conditions the prediction.
        #[arg(long)]
        frame: PathBuf,
        #[arg(long)]
        prompt: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, env = SEED_ENV, default_value_t = 0)]
        seed: u64,
    },
    /// Sample frames from a first frame, a prompt and a flow field.
    PredictVideo {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        frame: PathBuf,
        #[arg(long)]
        prompt: String,
        #[arg(long)]
        flow: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, env = SEED_ENV, default_value_t = 0)]
        seed: u64,
    },
    /// Score every model's clips on a benchmark manifest.
    Evaluate {
        #[arg(long)]
        manifest: PathBuf,
        /// `model_id=clip_dir`, repeatable.
        #[arg(long = "model", value_parser = parse_model, required = true)]
        models: Vec<(String, PathBuf)>,
        #[arg(long)]
        flow_checkpoint: PathBuf,
        #[arg(long)]
        video_checkpoint: PathBuf,
        #[arg(long, default_value = "literal")]
        variant: ScoreVariant,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, env = SEED_ENV, default_value_t = 0)]
        seed: u64,
    },
    /// Correlate scores with human rankings.
    Correlate {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        rankings: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve the annotation API.
    Serve {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long = "model", value_parser = parse_model, required = true)]
        models: Vec<(String, PathBuf)>,
        #[arg(long)]
        rankings: PathBuf,
        #[arg(long)]
        audit: Option<PathBuf>,
        #[arg(long = "static")]
        static_dir: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
    },
}

fn parse_model(s: &str) -> Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((id, dir)) if !id.is_empty() && !dir.is_empty() => Ok((id.to_string(), PathBuf::from(dir))),
        _ => Err(format!("expected MODEL_ID=DIR, got `{s}`")),
    }
}

fn model_map(models: Vec<(String, PathBuf)>) -> anyhow::Result<BTreeMap<String, PathBuf>> {
    let mut map = BTreeMap::new();
    for (id, dir) in models {
        if map.insert(id.clone(), dir).is_some() {
            bail!("model `{id}` given twice");
        }
    }
    Ok(map)
}

fn first_frame(path: &Path) -> anyhow::Result<FrameSequence> {
    let is_image = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png"));
    if is_image {
        let frame = phyco::video::read_png(path)?;
        return Ok(FrameSequence::from_frame(
            frame,
            phyco::video::DEFAULT_FPS,
            path.display().to_string(),
        )?);
    }
    Ok(read_sequence(path)?.single(0))
}

fn training_clips(corpus: &Path) -> anyhow::Result<Vec<(CorpusEntry, FrameSequence)>> {
    let entries = load_corpus_manifest(&corpus.join("manifest.jsonl"))
        .with_context(|| format!("reading corpus at {}", corpus.display()))?;
    let train: Vec<CorpusEntry> = entries.into_iter().filter(|e| e.split == Split::Train).collect();
    if train.is_empty() {
        bail!("corpus has no training clips");
    }
    Ok(train
        .into_par_iter()
        .map(|e| {
            let clip = read_sequence(&corpus.join(&e.clip))?;
            Ok((e, clip))
        })
        .collect::<phyco::Result<_>>()?)
}

fn report_losses(losses: &[f32]) {
    let k = (losses.len() / 10).max(1);
    let means: Vec<String> = losses
        .chunks(k)
        .map(|c| format!("{:.4}", c.iter().sum::<f32>() / c.len() as f32))
        .collect();
    log::info!("loss by decile: {}", means.join(" "));
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.cmd {
        Cmd::Corpus {
            out,
            train,
            val,
            test,
            seed,
        } => {
            let cfg = CorpusConfig {
                train,
                val,
                test,
                seed,
                ..CorpusConfig::default()
            };
            let entries = build_corpus(&cfg, &out)?;
            std::fs::write(
                out.join("test_prompts.jsonl"),
                pipeline::corpus_prompts(&entries, Split::Test).to_jsonl(),
            )?;
            println!("wrote {} clips to {}", entries.len(), out.display());
        }
        Cmd::TrainFlow {
            corpus,
            out,
            steps,
            preset,
            seed,
        } => {
            let cfg = match preset {
                Preset::Desk => FlowPredictorConfig::desk(),
                Preset::Full => FlowPredictorConfig::paper_scale(),
            };
            let clips: Vec<(FrameSequence, String)> = training_clips(&corpus)?
                .into_iter()
                .map(|(e, c)| (c, e.caption))
                .collect();
            let data = build_flow_dataset(&clips, &cfg)?;
            let train_cfg = TrainConfig {
                checkpoint: Some(out.clone()),
                ..TrainConfig::desk(steps, seed)
            };
            let (model, losses) = train_flow_predictor(&data, &cfg, &train_cfg)?;
            report_losses(&losses);
            model.save(&out, seed, steps as u64)?;
            println!("saved {}", out.display());
        }
        Cmd::TrainVideo {
            corpus,
            out,
            steps,
            preset,
            seed,
        } => {
            let cfg = match preset {
                Preset::Desk => VideoPredictorConfig::desk(),
                Preset::Full => VideoPredictorConfig::paper_scale(),
            };
            let examples: Vec<VideoExample> = training_clips(&corpus)?
                .into_par_iter()
                .map(|(e, clip)| {
                    let flow = estimate_flow(&clip, &cfg.estimator)?;
                    Ok(VideoExample {
                        clip,
                        prompt: e.caption,
                        flow,
                    })
                })
                .collect::<phyco::Result<_>>()?;
            let train_cfg = TrainConfig {
                checkpoint: Some(out.clone()),
                ..TrainConfig::desk(steps, seed)
            };
            let (model, losses) = train_video_predictor(&examples, &cfg, &train_cfg)?;
            report_losses(&losses);
            model.save(&out, seed, steps as u64)?;
            println!("saved {}", out.display());
        }
        Cmd::Flow { video, out } => {
            let clip = read_sequence(&video)?;
            let flow = estimate_flow(&clip, &FlowEstimatorConfig::default())?;
            write_flow(&flow, &out)?;
        }
        Cmd::PredictFlow {
            checkpoint,
            frame,
            prompt,
            out,
            seed,
        } => {
            let model = FlowPredictor::load(&checkpoint)?;
            let flow = model.predict(&first_frame(&frame)?, &prompt, seed)?;
            write_flow(&flow, &out)?;
        }
        Cmd::PredictVideo {
            checkpoint,
            frame,
            prompt,
            flow,
            out,
            seed,
        } => {
            let model = VideoPredictor::load(&checkpoint)?;
            let frames = model.predict(&first_frame(&frame)?, &prompt, &read_flow(&flow)?, seed)?;
            write_sequence(&frames, &out)?;
        }
        Cmd::Evaluate {
            manifest,
            models,
            flow_checkpoint,
            video_checkpoint,
            variant,
            out,
            seed,
        } => {
            let job = EvalJob {
                manifest,
                models: model_map(models)?,
                flow_checkpoint,
                video_checkpoint,
                seed,
                variant,
                out_dir: out.clone(),
            };
            let report = pipeline::evaluate(&job)?;
            println!(
                "scored {} clips ({} failed); results in {}",
                report.scored,
                report.failures.len(),
                out.display()
            );
        }
        Cmd::Correlate { scores, rankings, out } => {
            let r = pipeline::correlate_files(&scores, &rankings, &out)?;
            println!(
                "tau-b {:.4}  spearman {:.4}  skipped {}",
                r.mean_tau_b, r.mean_spearman, r.skipped
            );
        }
        Cmd::Serve {
            manifest,
            models,
            rankings,
            audit,
            static_dir,
            addr,
        } => {
            let audit_path = audit.unwrap_or_else(|| rankings.with_extension("audit.jsonl"));
            let cfg = AnnotationConfig {
                prompts: load_manifest(&manifest)?.prompts,
                models: model_map(models)?,
                rankings_path: rankings,
                audit_path,
                static_dir,
            };
            tokio::runtime::Runtime::new()?.block_on(pipeline::serve(cfg, addr))?;
        }
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
