use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{compatible_violations, inject_violation, render_scene, sample_scene, splitmix64};
use super::{RenderedClip, Scenario, SceneSpec, ViolationKind, ViolationSpec};
use crate::video::{write_flow, write_pcvf};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Coherent,
    Violated,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub seed: u64,
    pub n_frames: usize,
    pub height: usize,
    pub width: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            train: 200,
            val: 50,
            test: 50,
            seed: 0,
            n_frames: 16,
            height: 64,
            width: 64,
        }
    }
}

/// One manifest line. Paths are relative to the corpus directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub id: String,
    pub split: Split,
    pub scenario: Scenario,
    pub violation: ViolationKind,
    pub label: Label,
    pub caption: String,
    pub clip: String,
    pub flow: String,
    pub scene: SceneSpec,
    pub violation_spec: ViolationSpec,
}

/// Plans the corpus: scenarios cycle within each split; validation and test
/// items alternate coherent and violated, with violations cycling through the
/// kinds compatible with the scenario. Every item has its own scene seed.
pub fn corpus_entries(cfg: &CorpusConfig) -> Result<Vec<CorpusEntry>> {
    if cfg.train + cfg.val + cfg.test == 0 {
        return Err(Error::InvalidArgument("empty corpus".into()));
    }
    let plan: Vec<(Split, usize, u64)> = [
        (Split::Train, cfg.train),
        (Split::Val, cfg.val),
        (Split::Test, cfg.test),
    ]
    .into_iter()
    .flat_map(|(s, n)| (0..n).map(move |i| (s, i)))
    .enumerate()
    .map(|(g, (s, i))| {
        (
            s,
            i,
            splitmix64(cfg.seed.wrapping_mul(0x1_0000_0001).wrapping_add(g as u64)),
        )
    })
    .collect();
    plan.into_par_iter()
        .map(|(split, i, seed)| plan_entry(cfg, split, i, seed))
        .collect()
}

fn plan_entry(cfg: &CorpusConfig, split: Split, i: usize, seed: u64) -> Result<CorpusEntry> {
    let (violated, slot) = match split {
        Split::Train => (false, i),
        _ => (i % 2 == 1, i / 2),
    };
    let scenario = Scenario::ALL[slot % Scenario::ALL.len()];
    let id = format!("{}-{i:05}", split.as_str());
    let kinds = compatible_violations(scenario);
    let rotation = (slot / Scenario::ALL.len()) + (cfg.seed as usize % kinds.len());
    // retry with fresh seeds until the scene and its violation both fit in frame
    for attempt in 0..64u64 {
        let scene_seed = splitmix64(seed ^ attempt.wrapping_mul(0xa24b_aed4_963e_e407));
        let spec = sample_scene(scenario, scene_seed, cfg.n_frames, cfg.height, cfg.width)?;
        let vspec = if violated {
            ViolationSpec {
                kind: kinds[(rotation + attempt as usize) % kinds.len()],
                seed: splitmix64(scene_seed ^ 0x5eed),
            }
        } else {
            ViolationSpec::none()
        };
        let clip = render_scene(&spec)?;
        if inject_violation(&spec, &clip, &vspec).is_err() {
            continue;
        }
        return Ok(CorpusEntry {
            clip: format!("clips/{id}.pcvf"),
            flow: format!("flows/{id}.pcff"),
            id,
            split,
            scenario,
            violation: vspec.kind,
            label: if violated { Label::Violated } else { Label::Coherent },
            caption: clip.caption,
            scene: spec,
            violation_spec: vspec,
        });
    }
    Err(Error::Scene(format!(
        "could not place a {} clip for {id}",
        scenario.as_str()
    )))
}

/// Renders an entry, violation included.
pub fn render_entry(e: &CorpusEntry) -> Result<RenderedClip> {
    let clip = render_scene(&e.scene)?;
    inject_violation(&e.scene, &clip, &e.violation_spec)
}

/// Writes clips, analytic flows and `manifest.jsonl` under `out`.
pub fn build_corpus(cfg: &CorpusConfig, out: &Path) -> Result<Vec<CorpusEntry>> {
    let entries = corpus_entries(cfg)?;
    for d in ["clips", "flows"] {
        let p = out.join(d);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    entries.par_iter().try_for_each(|e| -> Result<()> {
        let c = render_entry(e)?;
        write_pcvf(c.frames.data(), &out.join(&e.clip))?;
        write_flow(&c.flow, &out.join(&e.flow))
    })?;
    let path = out.join("manifest.jsonl");
    let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    for e in &entries {
        writeln!(f, "{}", serde_json::to_string(e)?).map_err(|err| Error::io(&path, err))?;
    }
    Ok(entries)
}

pub fn load_corpus_manifest(path: &Path) -> Result<Vec<CorpusEntry>> {
    let src = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    src.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn small() -> CorpusConfig {
        CorpusConfig {
            train: 24,
            val: 12,
            test: 12,
            seed: 3,
            ..CorpusConfig::default()
        }
    }

    #[test]
    fn split_sizes_labels_and_disjoint_seeds() {
        let cfg = CorpusConfig {
            train: 200,
            val: 50,
            test: 50,
            ..small()
        };
        let e = corpus_entries(&cfg).unwrap();
        let count = |s| e.iter().filter(|x| x.split == s).count();
        assert_eq!(
            (count(Split::Train), count(Split::Val), count(Split::Test)),
            (200, 50, 50)
        );
        assert!(e
            .iter()
            .filter(|x| x.split == Split::Train)
            .all(|x| x.label == Label::Coherent));
        let test_violated = e
            .iter()
            .filter(|x| x.split == Split::Test && x.label == Label::Violated)
            .count();
        assert_eq!(test_violated, 25);
        let seeds: HashSet<u64> = e.iter().map(|x| x.scene.seed).collect();
        assert_eq!(seeds.len(), e.len());
        for s in Scenario::ALL {
            let n = e.iter().filter(|x| x.split == Split::Train && x.scenario == s).count();
            assert!((33..=34).contains(&n));
        }
    }

    #[test]
    fn same_seed_same_manifest() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ea = build_corpus(&small(), a.path()).unwrap();
        let eb = build_corpus(&small(), b.path()).unwrap();
        assert_eq!(ea, eb);
        let ma = fs::read(a.path().join("manifest.jsonl")).unwrap();
        assert_eq!(ma, fs::read(b.path().join("manifest.jsonl")).unwrap());
        assert_eq!(load_corpus_manifest(&a.path().join("manifest.jsonl")).unwrap(), ea);
        let clip = crate::video::read_pcvf(&a.path().join(&ea[30].clip)).unwrap();
        assert_eq!(&clip, render_entry(&ea[30]).unwrap().frames.data());
    }
}
