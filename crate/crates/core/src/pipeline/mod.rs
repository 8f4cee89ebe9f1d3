//! End-to-end evaluation: reference flow, cascaded prediction, MSEs, scores
//! and score-induced rankings; plus the correlation step and the annotation service.

mod serve;

pub use serve::{router, serve, AnnotationConfig, AnnotationState, AnnotationTask, RankingSubmission};

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::benchmark::{load_manifest, BenchmarkManifest, ContentType, PromptRecord};
use crate::flow_predictor::{prepare_flow_target, FlowPredictor};
use crate::oracle::{CorpusEntry, Split};
use crate::scoring::{
    coherence_score, correlate, mse, read_rankings_jsonl, read_scores_csv, score_ranks, scores_by_prompt, write_report,
    write_scores_csv, CorrelationReport, ScoreRecord, ScoreVariant,
};
use crate::text::fnv1a64;
use crate::video::{read_sequence, resize_bilinear, sample_frames, FrameSequence};
use crate::video_predictor::VideoPredictor;
use crate::{Error, Result};

/// Environment variable that overrides a job's seed.
pub const SEED_ENV: &str = "PHYCO_SEED";

/// Where a model's clip for a prompt lives: `<dir>/<prompt_id>.pcvf` or a PNG directory `<dir>/<prompt_id>/`.
pub fn clip_path(dir: &Path, prompt_id: &str) -> PathBuf {
    let file = dir.join(format!("{prompt_id}.pcvf"));
    if file.exists() {
        file
    } else {
        dir.join(prompt_id)
    }
}

/// Sampler seed shared by every model of a prompt.
pub fn prompt_seed(seed: u64, prompt_id: &str) -> u64 {
    crate::oracle::splitmix64(seed ^ fnv1a64(prompt_id.as_bytes()))
}

/// Loaded predictors plus scoring options.
#[derive(Clone, Debug)]
pub struct Evaluator {
    pub flow: FlowPredictor,
    pub video: VideoPredictor,
    pub seed: u64,
    pub variant: ScoreVariant,
}

/// Intermediate results for one clip.
#[derive(Clone, Debug)]
pub struct ClipEvaluation {
    pub record: ScoreRecord,
    /// Set when the flow MSE was clamped in the score.
    pub clamped: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipFailure {
    pub prompt_id: String,
    pub model_id: String,
    pub error: String,
}

#[derive(Clone, Debug, Default)]
pub struct EvalOutcome {
    pub records: Vec<ScoreRecord>,
    pub failures: Vec<ClipFailure>,
    /// `(prompt, model)` pairs whose flow MSE was clamped.
    pub clamped: Vec<(String, String)>,
}

impl Evaluator {
    pub fn new(flow: FlowPredictor, video: VideoPredictor, seed: u64, variant: ScoreVariant) -> Result<Self> {
        let (f, v) = (&flow.cfg, &video.cfg);
        if f.n_frames != v.n_frames {
            return Err(Error::InvalidArgument(format!(
                "flow and video checkpoints disagree on clip length: {} vs {} frames",
                f.n_frames, v.n_frames
            )));
        }
        Ok(Self {
            flow,
            video,
            seed,
            variant,
        })
    }

    pub fn load(flow_ckpt: &Path, video_ckpt: &Path, seed: u64, variant: ScoreVariant) -> Result<Self> {
        Self::new(
            FlowPredictor::load(flow_ckpt)?,
            VideoPredictor::load(video_ckpt)?,
            seed,
            variant,
        )
    }

    /// Brings a clip to `n_frames` frames at `frame_hw`, the geometry one of the predictors expects.
    pub fn conform(&self, clip: &FrameSequence, frame_hw: (usize, usize)) -> Result<FrameSequence> {
        let n = self.flow.cfg.n_frames;
        let clip = if clip.n_frames() == n {
            clip.clone()
        } else {
            sample_frames(clip, n)?
        };
        let (h, w) = frame_hw;
        if (clip.height(), clip.width()) == (h, w) {
            Ok(clip)
        } else {
            resize_bilinear(&clip, h, w)
        }
    }

    /// Scores one candidate clip against the predictors' expectation for its first frame and prompt.
    pub fn score_clip(
        &self,
        prompt_id: &str,
        prompt: &str,
        model_id: &str,
        clip: &FrameSequence,
    ) -> Result<ClipEvaluation> {
        let flow_clip = self.conform(clip, self.flow.cfg.frame_hw)?;
        let video_clip = self.conform(clip, self.video.cfg.frame_hw)?;
        let reference = prepare_flow_target(&flow_clip, &self.flow.cfg)?;
        let seed = prompt_seed(self.seed, prompt_id);
        let predicted_flow = self.flow.predict(&flow_clip.single(0), prompt, seed)?;
        let predicted = self
            .video
            .predict(&video_clip.single(0), prompt, &predicted_flow, seed.wrapping_add(1))?;
        let mse_flow = mse(reference.data.view(), predicted_flow.data.view())?;
        let mse_video = mse(video_clip.data().view(), predicted.data().view())?;
        let (score, clamped) = coherence_score(mse_flow, mse_video, self.variant)?;
        if clamped {
            log::warn!("{prompt_id}/{model_id}: mse clamped to the score floor");
        }
        Ok(ClipEvaluation {
            record: ScoreRecord {
                prompt_id: prompt_id.into(),
                model_id: model_id.into(),
                mse_flow,
                mse_video,
                score,
            },
            clamped,
        })
    }

    /// Scores every (prompt, model) pair. Unreadable or failing clips are
    /// recorded and skipped; output order is prompt order, then model id.
    pub fn evaluate(&self, prompts: &[PromptRecord], models: &BTreeMap<String, PathBuf>) -> Result<EvalOutcome> {
        if models.is_empty() {
            return Err(Error::InvalidArgument("no models to evaluate".into()));
        }
        let pairs: Vec<(&PromptRecord, &String, &PathBuf)> = prompts
            .iter()
            .flat_map(|p| models.iter().map(move |(m, d)| (p, m, d)))
            .collect();
        let results: Vec<Result<ClipEvaluation>> = pairs
            .par_iter()
            .map(|(p, m, dir)| {
                let clip = read_sequence(&clip_path(dir, &p.id))?;
                self.score_clip(&p.id, &p.text, m, &clip)
            })
            .collect();
        let mut out = EvalOutcome::default();
        for ((p, m, _), r) in pairs.iter().zip(results) {
            match r {
                Ok(ev) => {
                    if ev.clamped {
                        out.clamped.push((p.id.clone(), (*m).clone()));
                    }
                    out.records.push(ev.record);
                }
                Err(e) => {
                    log::warn!("{}/{}: {e}", p.id, m);
                    out.failures.push(ClipFailure {
                        prompt_id: p.id.clone(),
                        model_id: (*m).clone(),
                        error: e.to_string(),
                    })
                }
            }
        }
        Ok(out)
    }
}

/// Order text induced by scores, best first: `"2 > 1 = 3 > 4"`.
pub fn order_from_scores(scores: &BTreeMap<String, f64>) -> String {
    let ids: Vec<&String> = scores.keys().collect();
    let ranks = score_ranks(&ids.iter().map(|m| scores[*m]).collect::<Vec<_>>());
    let mut idx: Vec<usize> = (0..ids.len()).collect();
    idx.sort_by(|a, b| ranks[*a].total_cmp(&ranks[*b]).then_with(|| ids[*a].cmp(ids[*b])));
    let mut text = String::new();
    for (k, i) in idx.iter().enumerate() {
        if k > 0 {
            text.push_str(if ranks[*i] == ranks[idx[k - 1]] { " = " } else { " > " });
        }
        text.push_str(ids[*i]);
    }
    text
}

/// Summary written next to the scores.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub seed: u64,
    pub variant: ScoreVariant,
    pub scored: usize,
    pub failures: Vec<ClipFailure>,
    pub clamped: Vec<(String, String)>,
    /// Score-induced order per prompt.
    pub rankings: BTreeMap<String, String>,
}

/// A full evaluation job as read from the command line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalJob {
    pub manifest: PathBuf,
    pub models: BTreeMap<String, PathBuf>,
    pub flow_checkpoint: PathBuf,
    pub video_checkpoint: PathBuf,
    pub seed: u64,
    pub variant: ScoreVariant,
    pub out_dir: PathBuf,
}

/// Runs a job and writes `scores.csv`, `auto_rankings.jsonl` and `report.json` to its output directory.
pub fn evaluate(job: &EvalJob) -> Result<EvalReport> {
    if job.models.is_empty() {
        return Err(Error::InvalidArgument("no models to evaluate".into()));
    }
    let manifest = load_manifest(&job.manifest)?;
    let ev = Evaluator::load(&job.flow_checkpoint, &job.video_checkpoint, job.seed, job.variant)?;
    let outcome = ev.evaluate(&manifest.prompts, &job.models)?;
    write_outputs(&outcome, job.seed, job.variant, &job.out_dir)
}

pub fn write_outputs(outcome: &EvalOutcome, seed: u64, variant: ScoreVariant, out_dir: &Path) -> Result<EvalReport> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write_scores_csv(&outcome.records, &out_dir.join("scores.csv"))?;
    let rankings: BTreeMap<String, String> = scores_by_prompt(&outcome.records)
        .iter()
        .map(|(p, s)| (p.clone(), order_from_scores(s)))
        .collect();
    let path = out_dir.join("auto_rankings.jsonl");
    let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    for (p, order) in &rankings {
        let line = serde_json::json!({ "prompt_id": p, "evaluator_id": "auto", "order": order });
        writeln!(f, "{line}").map_err(|e| Error::io(&path, e))?;
    }
    let report = EvalReport {
        seed,
        variant,
        scored: outcome.records.len(),
        failures: outcome.failures.clone(),
        clamped: outcome.clamped.clone(),
        rankings,
    };
    let path = out_dir.join("report.json");
    fs::write(&path, serde_json::to_string_pretty(&report)?).map_err(|e| Error::io(&path, e))?;
    Ok(report)
}

/// Reads a scores file and a rankings file, correlates them and writes the report.
pub fn correlate_files(scores: &Path, rankings: &Path, out: &Path) -> Result<CorrelationReport> {
    let report = correlate(&read_scores_csv(scores)?, &read_rankings_jsonl(rankings)?)?;
    write_report(&report, out)?;
    Ok(report)
}

/// Benchmark manifest whose prompts are the captions of corpus entries in `split`.
pub fn corpus_prompts(entries: &[CorpusEntry], split: Split) -> BenchmarkManifest {
    BenchmarkManifest {
        version: format!("corpus-{}", split.as_str()),
        prompts: entries
            .iter()
            .filter(|e| e.split == split)
            .map(|e| PromptRecord {
                id: e.id.clone(),
                category: e.scenario.category(),
                content_type: ContentType::SimulatedExperiment,
                text: e.caption.clone(),
            })
            .collect(),
    }
}
