//! Score two "models" on four prompts: one whose clips obey physics and one
//! whose objects teleport mid-clip. Then correlate the score-induced rankings.
//!
//! ```text
//! cargo run --release --example evaluate_models [-- flow.ckpt video.ckpt]
//! ```
//! Without checkpoints, small predictors are trained on the spot.

use std::collections::BTreeMap;
use std::path::PathBuf;

use phyco::benchmark::{save_manifest, BenchmarkManifest, ContentType, PromptRecord};
use phyco::diffusion::TrainConfig;
use phyco::flow_predictor::{build_flow_dataset, train_flow_predictor, FlowPredictorConfig};
use phyco::nn::DenoiserArch;
use phyco::optflow::estimate_flow;
use phyco::oracle::{inject_violation, render_scene, sample_scene, Scenario, ViolationKind, ViolationSpec};
use phyco::pipeline::{correlate_files, evaluate, EvalJob};
use phyco::scoring::{read_scores_csv, ScoreVariant};
use phyco::video::write_sequence;
use phyco::video_predictor::{train_video_predictor, VideoExample, VideoPredictorConfig};

fn main() -> phyco::Result<()> {
    let work = std::env::temp_dir().join("phyco_evaluate");
    let _ = std::fs::remove_dir_all(&work);
    let dir = |m: &str| work.join("clips").join(m);
    std::fs::create_dir_all(dir("coherent"))
        .and_then(|_| std::fs::create_dir_all(dir("teleport")))
        .map_err(|e| phyco::Error::Other(e.to_string()))?;

    let mut prompts = Vec::new();
    let mut training = Vec::new();
    for (i, s) in [
        Scenario::GravityDrop,
        Scenario::Bounce,
        Scenario::Projectile,
        Scenario::FrictionSlide,
    ]
    .into_iter()
    .enumerate()
    {
        let spec = sample_scene(s, 40 + i as u64, 16, 64, 64)?;
        let clip = render_scene(&spec)?;
        let jumped = inject_violation(
            &spec,
            &clip,
            &ViolationSpec {
                kind: ViolationKind::Teleport,
                seed: i as u64,
            },
        )?;
        let id = format!("p{i}");
        write_sequence(&clip.frames, &dir("coherent").join(format!("{id}.pcvf")))?;
        write_sequence(&jumped.frames, &dir("teleport").join(format!("{id}.pcvf")))?;
        prompts.push(PromptRecord {
            id,
            category: s.category(),
            content_type: ContentType::SimulatedExperiment,
            text: clip.caption.clone(),
        });
        training.push((clip.frames, clip.caption));
    }
    let manifest = work.join("prompts.jsonl");
    save_manifest(
        &BenchmarkManifest {
            version: "demo".into(),
            prompts,
        },
        &manifest,
    )?;

    let args: Vec<String> = std::env::args().skip(1).collect();
    let (flow_checkpoint, video_checkpoint) = if let [f, v] = &args[..] {
        (PathBuf::from(f), PathBuf::from(v))
    } else {
        let fcfg = FlowPredictorConfig::desk();
        let (flow, _) = train_flow_predictor(&build_flow_dataset(&training, &fcfg)?, &fcfg, &TrainConfig::desk(80, 0))?;
        let desk = VideoPredictorConfig::desk();
        let vcfg = VideoPredictorConfig {
            arch: DenoiserArch {
                base_width: 8,
                ..desk.arch.clone()
            },
            ..desk
        };
        let examples: Vec<VideoExample> = training
            .iter()
            .map(|(clip, prompt)| {
                Ok(VideoExample {
                    clip: clip.clone(),
                    prompt: prompt.clone(),
                    flow: estimate_flow(clip, &vcfg.estimator)?,
                })
            })
            .collect::<phyco::Result<_>>()?;
        let (video, _) = train_video_predictor(&examples, &vcfg, &TrainConfig::desk(20, 0))?;
        let (f, v) = (work.join("flow.ckpt"), work.join("video.ckpt"));
        flow.save(&f, 0, 80)?;
        video.save(&v, 0, 20)?;
        (f, v)
    };

    let job = EvalJob {
        manifest,
        models: BTreeMap::from([
            ("coherent".to_string(), dir("coherent")),
            ("teleport".to_string(), dir("teleport")),
        ]),
        flow_checkpoint,
        video_checkpoint,
        seed: 0,
        variant: ScoreVariant::Literal,
        out_dir: work.join("out"),
    };
    let report = evaluate(&job)?;
    println!(
        "{:<4} {:<9} {:>10} {:>10} {:>10}",
        "", "model", "mse_flow", "mse_video", "score"
    );
    for r in read_scores_csv(&work.join("out/scores.csv"))? {
        println!(
            "{:<4} {:<9} {:>10.5} {:>10.5} {:>10.2}",
            r.prompt_id, r.model_id, r.mse_flow, r.mse_video, r.score
        );
    }
    for (p, order) in &report.rankings {
        println!("{p}: {order}");
    }

    // score-induced rankings agree with the scores by construction
    let c = correlate_files(
        &work.join("out/scores.csv"),
        &work.join("out/auto_rankings.jsonl"),
        &work.join("out/correlation.json"),
    )?;
    println!(
        "self-correlation: tau-b {:.2}, spearman {:.2}",
        c.mean_tau_b, c.mean_spearman
    );
    Ok(())
}
