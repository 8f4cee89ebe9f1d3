//! Prompt taxonomy and the benchmark manifest (JSON Lines).
//!
//! Each line is one prompt object. An optional first line `{"version": "..."}`
//! names the manifest version.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Seed manifest with two example prompts per category.
pub const SEED_MANIFEST: &str = include_str!("../data/seed_prompts.jsonl");

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Gravity,
    Collision,
    Vibration,
    Friction,
    FluidDynamics,
    ProjectileMotion,
    Rotation,
}

impl Category {
    pub const ALL: [Category; 7] = [
        Category::Gravity,
        Category::Collision,
        Category::Vibration,
        Category::Friction,
        Category::FluidDynamics,
        Category::ProjectileMotion,
        Category::Rotation,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Gravity => "gravity",
            Category::Collision => "collision",
            Category::Vibration => "vibration",
            Category::Friction => "friction",
            Category::FluidDynamics => "fluid_dynamics",
            Category::ProjectileMotion => "projectile_motion",
            Category::Rotation => "rotation",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Category::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::UnknownCategory(s.to_string()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContentType {
    SimulatedExperiment,
    DailyLife,
    Sports,
}

impl ContentType {
    pub const ALL: [ContentType; 3] = [
        ContentType::SimulatedExperiment,
        ContentType::DailyLife,
        ContentType::Sports,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ContentType::SimulatedExperiment => "simulated_experiment",
            ContentType::DailyLife => "daily_life",
            ContentType::Sports => "sports",
        }
    }
}

impl FromStr for ContentType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ContentType::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::UnknownContentType(s.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub id: String,
    pub category: Category,
    pub content_type: ContentType,
    pub text: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BenchmarkManifest {
    pub version: String,
    pub prompts: Vec<PromptRecord>,
}

/// Raw line shape, so enum errors can be reported with their own error kinds.
#[derive(Deserialize)]
struct RawLine {
    id: Option<String>,
    category: Option<String>,
    content_type: Option<String>,
    text: Option<String>,
    version: Option<String>,
}

impl BenchmarkManifest {
    pub fn parse(src: &str) -> Result<Self> {
        let mut m = BenchmarkManifest::default();
        let mut seen = HashSet::new();
        let mut first = true;
        for (i, line) in src.lines().enumerate() {
            let line_no = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let raw: RawLine = serde_json::from_str(line).map_err(|e| Error::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
            let was_first = std::mem::replace(&mut first, false);
            if raw.id.is_none() {
                match raw.version {
                    Some(v) if was_first => {
                        m.version = v;
                        continue;
                    }
                    _ => {
                        return Err(Error::Parse {
                            line: line_no,
                            message: "record without `id`".into(),
                        })
                    }
                }
            }
            let missing = |field: &str| Error::Parse {
                line: line_no,
                message: format!("missing field `{field}`"),
            };
            let id = raw.id.expect("checked");
            let category: Category = raw.category.ok_or_else(|| missing("category"))?.parse()?;
            let content_type: ContentType = raw.content_type.ok_or_else(|| missing("content_type"))?.parse()?;
            let text = raw.text.ok_or_else(|| missing("text"))?;
            if id.trim().is_empty() || text.trim().is_empty() {
                return Err(Error::Parse {
                    line: line_no,
                    message: "empty id or text".into(),
                });
            }
            if !seen.insert(id.clone()) {
                return Err(Error::DuplicateId(id));
            }
            m.prompts.push(PromptRecord {
                id,
                category,
                content_type,
                text,
            });
        }
        Ok(m)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        if !self.version.is_empty() {
            out.push_str(&serde_json::json!({ "version": self.version }).to_string());
            out.push('\n');
        }
        for p in &self.prompts {
            out.push_str(&serde_json::to_string(p).expect("serializable"));
            out.push('\n');
        }
        out
    }

    pub fn seed() -> Self {
        Self::parse(SEED_MANIFEST).expect("bundled manifest is valid")
    }

    pub fn get(&self, id: &str) -> Option<&PromptRecord> {
        self.prompts.iter().find(|p| p.id == id)
    }

    /// True when every category has at least one prompt.
    pub fn covers_all_categories(&self) -> bool {
        category_histogram(self).values().all(|c| *c > 0)
    }
}

pub fn load_manifest(path: &Path) -> Result<BenchmarkManifest> {
    let src = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    BenchmarkManifest::parse(&src)
}

pub fn save_manifest(m: &BenchmarkManifest, path: &Path) -> Result<()> {
    std::fs::write(path, m.to_jsonl()).map_err(|e| Error::io(path, e))
}

/// Count per category; every category is present, possibly with zero.
pub fn category_histogram(m: &BenchmarkManifest) -> BTreeMap<Category, usize> {
    let mut h: BTreeMap<Category, usize> = Category::ALL.into_iter().map(|c| (c, 0)).collect();
    for p in &m.prompts {
        *h.entry(p.category).or_default() += 1;
    }
    h
}
