mod common;

use std::collections::BTreeMap;

use common::*;
use phyco::oracle::Scenario;
use phyco::pipeline::{correlate_files, evaluate, EvalJob, Evaluator};
use phyco::scoring::{read_rankings_jsonl, read_scores_csv, ScoreVariant};
use phyco::video::FrameSequence;
use phyco::Error;

const SCENES: [Scenario; 3] = [Scenario::GravityDrop, Scenario::Bounce, Scenario::Projectile];

struct Fixture {
    dir: tempfile::TempDir,
    job: EvalJob,
}

fn fixture(models: &[&str], same_clip: bool) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let mut clips: BTreeMap<String, BTreeMap<String, FrameSequence>> = BTreeMap::new();
    let mut prompts = Vec::new();
    for (i, s) in SCENES.into_iter().enumerate() {
        let (_, good, bad) = scene_pair(s, i as u64);
        let id = format!("p{i}");
        prompts.push(prompt(&id, s, &good.caption));
        for (k, m) in models.iter().enumerate() {
            let clip = if same_clip || k == 0 {
                good.frames.clone()
            } else {
                bad.frames.clone()
            };
            clips.entry(m.to_string()).or_default().insert(id.clone(), clip);
        }
    }
    let manifest = dir.path().join("prompts.jsonl");
    write_manifest(&manifest, prompts);
    let models = write_models(&dir.path().join("clips"), &clips);
    let (flow_checkpoint, video_checkpoint) = tiny_checkpoints(dir.path());
    let job = EvalJob {
        manifest,
        models,
        flow_checkpoint,
        video_checkpoint,
        seed: 3,
        variant: ScoreVariant::Literal,
        out_dir: dir.path().join("out"),
    };
    Fixture { dir, job }
}

#[test]
fn identical_clips_score_identically_and_tie() {
    let fx = fixture(&["a", "b", "c"], true);
    let report = evaluate(&fx.job).unwrap();
    assert_eq!(report.scored, 9);
    assert!(report.failures.is_empty());
    let records = read_scores_csv(&fx.job.out_dir.join("scores.csv")).unwrap();
    for p in ["p0", "p1", "p2"] {
        let s: Vec<f64> = records.iter().filter(|r| r.prompt_id == p).map(|r| r.score).collect();
        assert_eq!(s.len(), 3);
        assert!(s.iter().all(|v| *v == s[0]), "{p}: {s:?}");
        assert_eq!(report.rankings[p], "a = b = c");
    }
}

#[test]
fn evaluate_is_byte_reproducible() {
    let fx = fixture(&["good", "bad"], false);
    evaluate(&fx.job).unwrap();
    let first = std::fs::read(fx.job.out_dir.join("scores.csv")).unwrap();
    let again = EvalJob {
        out_dir: fx.dir.path().join("out2"),
        ..fx.job.clone()
    };
    evaluate(&again).unwrap();
    assert_eq!(first, std::fs::read(again.out_dir.join("scores.csv")).unwrap());
}

#[test]
fn seeds_change_scores() {
    let fx = fixture(&["good"], false);
    evaluate(&fx.job).unwrap();
    let other = EvalJob {
        seed: 4,
        out_dir: fx.dir.path().join("out2"),
        ..fx.job.clone()
    };
    evaluate(&other).unwrap();
    let a = read_scores_csv(&fx.job.out_dir.join("scores.csv")).unwrap();
    let b = read_scores_csv(&other.out_dir.join("scores.csv")).unwrap();
    assert!(a.iter().zip(&b).any(|(x, y)| x.mse_flow != y.mse_flow));
}

#[test]
fn empty_model_map_is_fatal() {
    let fx = fixture(&["a"], true);
    let job = EvalJob {
        models: BTreeMap::new(),
        ..fx.job
    };
    assert!(matches!(evaluate(&job), Err(Error::InvalidArgument(_))));
}

#[test]
fn unreadable_clip_is_recorded_and_skipped() {
    let fx = fixture(&["a", "b"], true);
    std::fs::remove_file(fx.job.models["b"].join("p1.pcvf")).unwrap();
    std::fs::write(fx.job.models["a"].join("p2.pcvf"), b"not a clip").unwrap();
    let report = evaluate(&fx.job).unwrap();
    assert_eq!(report.scored, 4);
    let failed: Vec<(&str, &str)> = report
        .failures
        .iter()
        .map(|f| (f.prompt_id.as_str(), f.model_id.as_str()))
        .collect();
    assert_eq!(failed, [("p1", "b"), ("p2", "a")]);
    let saved: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(fx.job.out_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(saved["failures"].as_array().unwrap().len(), 2);
}

#[test]
fn checkpoint_geometry_mismatch_is_fatal() {
    let dir = tempfile::tempdir().unwrap();
    let flow = phyco::flow_predictor::FlowPredictor::init(tiny_flow_cfg(), 0).unwrap();
    let video_cfg = phyco::video_predictor::VideoPredictorConfig {
        n_frames: 6,
        ..tiny_video_cfg()
    };
    let video = phyco::video_predictor::VideoPredictor::init(video_cfg, 0).unwrap();
    assert!(Evaluator::new(flow.clone(), video.clone(), 0, ScoreVariant::Literal).is_err());

    let fx = fixture(&["a"], true);
    video.save(&dir.path().join("v.ckpt"), 0, 0).unwrap();
    let job = EvalJob {
        video_checkpoint: dir.path().join("v.ckpt"),
        ..fx.job.clone()
    };
    assert!(evaluate(&job).is_err());
    // swapped checkpoints are caught by kind
    let job = EvalJob {
        flow_checkpoint: fx.job.video_checkpoint.clone(),
        ..fx.job
    };
    assert!(matches!(evaluate(&job), Err(Error::Format(_))));
}

#[test]
fn oversized_external_clips_are_conformed() {
    let fx = fixture(&["a"], true);
    let ev = Evaluator::load(
        &fx.job.flow_checkpoint,
        &fx.job.video_checkpoint,
        0,
        ScoreVariant::Literal,
    )
    .unwrap();
    let (_, good, _) = scene_pair(Scenario::Bounce, 9);
    let r = ev.score_clip("x", &good.caption, "m", &good.frames).unwrap();
    assert!(r.record.mse_flow.is_finite() && r.record.mse_video.is_finite());
    let c = ev.conform(&good.frames, ev.flow.cfg.frame_hw).unwrap();
    assert_eq!((c.n_frames(), c.height(), c.width()), (4, 32, 32));
}

#[test]
fn predictors_may_run_at_different_resolutions() {
    let flow = phyco::flow_predictor::FlowPredictor::init(tiny_flow_cfg(), 0).unwrap();
    let video_cfg = phyco::video_predictor::VideoPredictorConfig {
        frame_hw: (48, 48),
        ..tiny_video_cfg()
    };
    let video = phyco::video_predictor::VideoPredictor::init(video_cfg, 0).unwrap();
    let ev = Evaluator::new(flow, video, 0, ScoreVariant::Literal).unwrap();
    let (_, good, _) = scene_pair(Scenario::Bounce, 9);
    let r = ev.score_clip("x", &good.caption, "m", &good.frames).unwrap();
    assert!(r.record.mse_flow.is_finite() && r.record.mse_video.is_finite());
}

#[test]
fn auto_rankings_correlate_perfectly_with_their_scores() {
    let fx = fixture(&["a", "b", "c", "d"], false);
    evaluate(&fx.job).unwrap();
    let out = fx.job.out_dir.clone();
    // models b..d share a clip, so every prompt has a three-way tie and is skipped
    let r = correlate_files(
        &out.join("scores.csv"),
        &out.join("auto_rankings.jsonl"),
        &out.join("corr.json"),
    );
    assert!(matches!(r, Err(Error::UndefinedCorrelation(_))), "{r:?}");

    let mut records = read_scores_csv(&out.join("scores.csv")).unwrap();
    for (i, r) in records.iter_mut().enumerate() {
        r.score += i as f64 * 1e-3;
    }
    phyco::scoring::write_scores_csv(&records, &out.join("spread.csv")).unwrap();
    let rankings: Vec<String> = phyco::scoring::scores_by_prompt(&records)
        .iter()
        .map(|(p, s)| {
            serde_json::json!({"prompt_id": p, "evaluator_id": "h", "order": phyco::pipeline::order_from_scores(s)})
                .to_string()
        })
        .collect();
    std::fs::write(out.join("h.jsonl"), rankings.join("\n")).unwrap();
    let r = correlate_files(&out.join("spread.csv"), &out.join("h.jsonl"), &out.join("corr.json")).unwrap();
    assert_eq!((r.mean_tau_b, r.mean_spearman, r.skipped), (1.0, 1.0, 0));
    let saved: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("corr.json")).unwrap()).unwrap();
    assert_eq!(saved["mean_tau_b"], 1.0);
}

#[test]
fn correlate_lists_mismatched_prompt_ids() {
    let dir = tempfile::tempdir().unwrap();
    let scores = dir.path().join("s.csv");
    std::fs::write(
        &scores,
        "prompt_id,model_id,mse_flow,mse_video,score\np1,a,0.1,0.1,10.2\np1,b,0.2,0.1,5.2\n",
    )
    .unwrap();
    let rankings = dir.path().join("r.jsonl");
    std::fs::write(&rankings, r#"{"prompt_id":"p9","evaluator_id":"e","order":"a > b"}"#).unwrap();
    match correlate_files(&scores, &rankings, &dir.path().join("o.json")) {
        Err(Error::IdMismatch {
            missing_in_scores,
            missing_in_rankings,
        }) => {
            assert_eq!(missing_in_scores, ["p9"]);
            assert_eq!(missing_in_rankings, ["p1"]);
        }
        other => panic!("expected id mismatch, got {other:?}"),
    }
}

#[test]
fn one_three_way_tie_among_ten_prompts_is_skipped() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = String::from("prompt_id,model_id,mse_flow,mse_video,score\n");
    let mut jsonl = String::new();
    for p in 0..10 {
        for (m, s) in [("1", 4.0), ("2", 3.0), ("3", 2.0), ("4", 1.0)] {
            csv.push_str(&format!("q{p},{m},0.1,0.1,{}\n", s + p as f64));
        }
        let order = if p == 6 { "1 = 2 = 3 > 4" } else { "1 > 2 > 3 > 4" };
        jsonl.push_str(&format!(
            "{{\"prompt_id\":\"q{p}\",\"evaluator_id\":\"e\",\"order\":\"{order}\"}}\n"
        ));
    }
    std::fs::write(dir.path().join("s.csv"), csv).unwrap();
    std::fs::write(dir.path().join("r.jsonl"), jsonl).unwrap();
    let r = correlate_files(
        &dir.path().join("s.csv"),
        &dir.path().join("r.jsonl"),
        &dir.path().join("o.json"),
    )
    .unwrap();
    assert_eq!(r.skipped, 1);
    assert_eq!(r.mean_tau_b, 1.0);
    assert_eq!(read_rankings_jsonl(&dir.path().join("r.jsonl")).unwrap().len(), 10);
}
