//! Coherence scores, human ranking parsing and tie-aware rank correlation.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use ndarray::{ArrayView, Dimension};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Lower clamp for the flow MSE in the score.
pub const MSE_EPS: f64 = 1e-8;

/// Mean squared difference over all elements.
pub fn mse<D: Dimension>(a: ArrayView<'_, f32, D>, b: ArrayView<'_, f32, D>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!("mse of {:?} and {:?}", a.shape(), b.shape())));
    }
    if a.is_empty() {
        return Err(Error::Shape("mse of empty arrays".into()));
    }
    let s: f64 = a.iter().zip(b.iter()).map(|(x, y)| f64::from(x - y).powi(2)).sum();
    Ok(s / a.len() as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreVariant {
    /// `1 / mse_flow + 2 * mse_video`.
    #[default]
    Literal,
    /// `1 / mse_flow + 1 / (2 * mse_video)`.
    InverseBoth,
}

impl std::str::FromStr for ScoreVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "literal" => Ok(Self::Literal),
            "inverse-both" => Ok(Self::InverseBoth),
            _ => Err(Error::InvalidArgument(format!("unknown score variant `{s}`"))),
        }
    }
}

/// Score and whether an MSE had to be clamped to [`MSE_EPS`].
pub fn coherence_score(mse_flow: f64, mse_video: f64, variant: ScoreVariant) -> Result<(f64, bool)> {
    if !(mse_flow >= 0.0 && mse_video >= 0.0) || !mse_flow.is_finite() || !mse_video.is_finite() {
        return Err(Error::Numeric(format!("invalid mse pair ({mse_flow}, {mse_video})")));
    }
    let mut clamped = mse_flow < MSE_EPS;
    let f = mse_flow.max(MSE_EPS);
    let score = match variant {
        ScoreVariant::Literal => 1.0 / f + 2.0 * mse_video,
        ScoreVariant::InverseBoth => {
            clamped |= mse_video < MSE_EPS;
            1.0 / f + 1.0 / (2.0 * mse_video.max(MSE_EPS))
        }
    };
    Ok((score, clamped))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub prompt_id: String,
    pub model_id: String,
    pub mse_flow: f64,
    pub mse_video: f64,
    pub score: f64,
}

/// A ranking as parsed from order text.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParsedRanking {
    /// Model id to averaged position (1 is best).
    pub ranks: BTreeMap<String, f64>,
    /// Set when a tie joins more than two models.
    pub skip: bool,
}

fn ranking_error(text: &str, reason: impl Into<String>) -> Error {
    Error::Ranking {
        text: text.to_string(),
        reason: reason.into(),
    }
}

/// Parses `"2 > 1 = 3 > 4"`: positions run left to right, tied groups share
/// the mean of the positions they span. Every id in `model_ids` must appear once.
pub fn parse_ranking(order: &str, model_ids: &[String]) -> Result<ParsedRanking> {
    let mut groups: Vec<Vec<&str>> = Vec::new();
    for part in order.split('>') {
        let group: Vec<&str> = part.split('=').map(str::trim).collect();
        if group.iter().any(|id| id.is_empty()) {
            return Err(ranking_error(order, "empty item around a separator"));
        }
        if let Some(bad) = group.iter().find(|id| id.contains(char::is_whitespace)) {
            return Err(ranking_error(order, format!("missing separator in `{bad}`")));
        }
        groups.push(group);
    }
    let known: BTreeSet<&str> = model_ids.iter().map(String::as_str).collect();
    let mut ranks = BTreeMap::new();
    let mut pos = 0usize;
    let mut skip = false;
    for g in &groups {
        let mean = pos as f64 + (g.len() as f64 + 1.0) / 2.0;
        pos += g.len();
        skip |= g.len() > 2;
        for id in g {
            if !known.contains(id) {
                return Err(ranking_error(order, format!("unknown model id `{id}`")));
            }
            if ranks.insert(id.to_string(), mean).is_some() {
                return Err(ranking_error(order, format!("model id `{id}` appears twice")));
            }
        }
    }
    let missing: Vec<&str> = known.iter().filter(|id| !ranks.contains_key(**id)).copied().collect();
    if !missing.is_empty() {
        return Err(ranking_error(order, format!("missing model ids {missing:?}")));
    }
    Ok(ParsedRanking { ranks, skip })
}

/// Tie-averaged ranks of `scores`, rank 1 for the highest.
pub fn score_ranks(scores: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let mean = (i + j) as f64 / 2.0 + 1.0;
        for k in &idx[i..=j] {
            ranks[*k] = mean;
        }
        i = j + 1;
    }
    ranks
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "rank vectors of length {} and {}",
            x.len(),
            y.len()
        )));
    }
    Ok(())
}

/// Kendall tau-b: `(C - D) / sqrt((n0 - n1)(n0 - n2))`.
pub fn kendall_tau_b(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    let n = x.len();
    let (mut c, mut d, mut tx, mut ty) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let a = (x[i] - x[j]).partial_cmp(&0.0).unwrap_or(std::cmp::Ordering::Equal);
            let b = (y[i] - y[j]).partial_cmp(&0.0).unwrap_or(std::cmp::Ordering::Equal);
            use std::cmp::Ordering::Equal;
            match (a, b) {
                (Equal, Equal) => {
                    tx += 1;
                    ty += 1;
                }
                (Equal, _) => tx += 1,
                (_, Equal) => ty += 1,
                _ if a == b => c += 1,
                _ => d += 1,
            }
        }
    }
    let n0 = (n * (n - 1) / 2) as i64;
    let denom = ((n0 - tx) as f64 * (n0 - ty) as f64).sqrt();
    if denom == 0.0 {
        return Err(Error::UndefinedCorrelation("a ranking is fully tied".into()));
    }
    Ok((c - d) as f64 / denom)
}

/// Pearson correlation of two (tie-averaged) rank vectors.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("a ranking has zero variance".into()));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// A stored human ranking.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankingRecord {
    pub prompt_id: String,
    pub evaluator_id: String,
    pub order: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub ranks: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptCorrelation {
    pub prompt_id: String,
    pub evaluator_id: String,
    pub tau_b: Option<f64>,
    pub spearman: Option<f64>,
    /// Why the sample was left out, if it was.
    pub skipped: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub mean_tau_b: f64,
    pub mean_spearman: f64,
    pub skipped: usize,
    pub per_prompt: Vec<PromptCorrelation>,
}

/// Per-sample correlation between each human ranking and the ranking induced by
/// the automatic scores of the same prompt, averaged over usable samples.
pub fn aggregate_correlation(
    rankings: &[RankingRecord],
    scores: &BTreeMap<String, BTreeMap<String, f64>>,
) -> Result<CorrelationReport> {
    let mut per_prompt = Vec::with_capacity(rankings.len());
    let (mut tau_sum, mut rho_sum, mut used) = (0.0, 0.0, 0usize);
    for r in rankings {
        let auto = scores.get(&r.prompt_id).ok_or_else(|| Error::IdMismatch {
            missing_in_scores: vec![r.prompt_id.clone()],
            missing_in_rankings: vec![],
        })?;
        let models: Vec<String> = auto.keys().cloned().collect();
        let parsed = parse_ranking(&r.order, &models)?;
        let mut row = PromptCorrelation {
            prompt_id: r.prompt_id.clone(),
            evaluator_id: r.evaluator_id.clone(),
            tau_b: None,
            spearman: None,
            skipped: None,
        };
        if parsed.skip {
            row.skipped = Some("more than two models tied".into());
            per_prompt.push(row);
            continue;
        }
        let human: Vec<f64> = models.iter().map(|m| parsed.ranks[m]).collect();
        let machine = score_ranks(&models.iter().map(|m| auto[m]).collect::<Vec<_>>());
        match (kendall_tau_b(&human, &machine), spearman(&human, &machine)) {
            (Ok(t), Ok(s)) => {
                tau_sum += t;
                rho_sum += s;
                used += 1;
                row.tau_b = Some(t);
                row.spearman = Some(s);
            }
            (Err(e), _) | (_, Err(e)) => row.skipped = Some(e.to_string()),
        }
        per_prompt.push(row);
    }
    if used == 0 {
        return Err(Error::UndefinedCorrelation("no usable ranking samples".into()));
    }
    Ok(CorrelationReport {
        mean_tau_b: tau_sum / used as f64,
        mean_spearman: rho_sum / used as f64,
        skipped: per_prompt.len() - used,
        per_prompt,
    })
}

/// Probability that a random positive outranks a random negative (ties count half).
pub fn roc_auc(positives: &[f64], negatives: &[f64]) -> Result<f64> {
    if positives.is_empty() || negatives.is_empty() {
        return Err(Error::InvalidArgument("AUC needs both classes".into()));
    }
    let mut wins = 0.0;
    for p in positives {
        for n in negatives {
            wins += match p.total_cmp(n) {
                std::cmp::Ordering::Greater => 1.0,
                std::cmp::Ordering::Equal => 0.5,
                std::cmp::Ordering::Less => 0.0,
            };
        }
    }
    Ok(wins / (positives.len() * negatives.len()) as f64)
}

pub fn write_scores_csv(records: &[ScoreRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(e.to_string()))?;
    for r in records {
        w.serialize(r).map_err(|e| Error::Format(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_scores_csv(path: &Path) -> Result<Vec<ScoreRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    r.deserialize()
        .enumerate()
        .map(|(i, rec)| {
            rec.map_err(|e| Error::Parse {
                line: i + 2,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Score table keyed by prompt, then model.
pub fn scores_by_prompt(records: &[ScoreRecord]) -> BTreeMap<String, BTreeMap<String, f64>> {
    let mut out: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    for r in records {
        out.entry(r.prompt_id.clone())
            .or_default()
            .insert(r.model_id.clone(), r.score);
    }
    out
}

/// Reads a rankings file; a later line for the same (prompt, evaluator) replaces earlier ones.
pub fn read_rankings_jsonl(path: &Path) -> Result<Vec<RankingRecord>> {
    let src = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut latest: BTreeMap<(String, String), RankingRecord> = BTreeMap::new();
    for (i, line) in src.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let r: RankingRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        latest.insert((r.prompt_id.clone(), r.evaluator_id.clone()), r);
    }
    Ok(latest.into_values().collect())
}

/// Joins scores and rankings, checking both sides cover the same prompts.
pub fn correlate(scores: &[ScoreRecord], rankings: &[RankingRecord]) -> Result<CorrelationReport> {
    let table = scores_by_prompt(scores);
    let ranked: BTreeSet<&String> = rankings.iter().map(|r| &r.prompt_id).collect();
    let scored: BTreeSet<&String> = table.keys().collect();
    if ranked != scored {
        return Err(Error::IdMismatch {
            missing_in_scores: ranked.difference(&scored).map(|s| s.to_string()).collect(),
            missing_in_rankings: scored.difference(&ranked).map(|s| s.to_string()).collect(),
        });
    }
    aggregate_correlation(rankings, &table)
}

pub fn write_report(report: &CorrelationReport, path: &Path) -> Result<()> {
    let s = serde_json::to_string_pretty(report)?;
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr1, Array2};
    use proptest::prelude::*;

    fn ids(n: usize) -> Vec<String> {
        (1..=n).map(|i| i.to_string()).collect()
    }

    /// Tau-b straight from the definition over all pairs.
    fn brute_tau_b(x: &[f64], y: &[f64]) -> Option<f64> {
        let n = x.len();
        let (mut c, mut d, mut n1, mut n2) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..n {
            for j in 0..n {
                if i >= j {
                    continue;
                }
                let s = (x[i] - x[j]).signum() * (y[i] - y[j]).signum();
                if x[i] == x[j] {
                    n1 += 1.0;
                }
                if y[i] == y[j] {
                    n2 += 1.0;
                }
                if x[i] != x[j] && y[i] != y[j] {
                    if s > 0.0 {
                        c += 1.0;
                    } else {
                        d += 1.0;
                    }
                }
            }
        }
        let n0 = (n * (n - 1)) as f64 / 2.0;
        let den = ((n0 - n1) * (n0 - n2)).sqrt();
        (den > 0.0).then(|| (c - d) / den)
    }

    /// Every tie-averaged ranking of `n` items: all weak orders, as rank vectors.
    fn weak_orders(n: usize) -> Vec<Vec<f64>> {
        // assign each item a level in 0..n, keep assignments whose levels are contiguous from 0
        let mut out = Vec::new();
        let total = n.pow(n as u32);
        for code in 0..total {
            let mut lv = vec![0; n];
            let mut c = code;
            for l in lv.iter_mut() {
                *l = c % n;
                c /= n;
            }
            let max = *lv.iter().max().unwrap();
            if (0..=max).all(|k| lv.contains(&k)) {
                let scores: Vec<f64> = lv.iter().map(|l| -(*l as f64)).collect();
                out.push(score_ranks(&scores));
            }
        }
        out
    }

    #[test]
    fn mse_examples() {
        let a = Array2::<f32>::zeros((3, 4));
        assert_eq!(mse(a.view(), a.view()).unwrap(), 0.0);
        assert_eq!(mse(a.view(), Array2::ones((3, 4)).view()).unwrap(), 1.0);
        assert_eq!(mse(arr1(&[0.0f32, 0.0]).view(), arr1(&[1.0, 3.0]).view()).unwrap(), 5.0);
        assert!(mse(a.view(), Array2::zeros((4, 3)).view()).is_err());
    }

    #[test]
    fn score_examples() {
        let s = |f, v| coherence_score(f, v, ScoreVariant::Literal).unwrap();
        assert!((s(0.5, 0.1).0 - 2.2).abs() < 1e-12);
        assert_eq!(s(1.0, 0.0), (1.0, false));
        assert_eq!(s(0.0, 0.0), (1e8, true));
        let (inv, _) = coherence_score(0.5, 0.25, ScoreVariant::InverseBoth).unwrap();
        assert!((inv - 4.0).abs() < 1e-12);
        assert!(coherence_score(-1.0, 0.0, ScoreVariant::Literal).is_err());
        assert_eq!(
            "inverse-both".parse::<ScoreVariant>().unwrap(),
            ScoreVariant::InverseBoth
        );
    }

    #[test]
    fn parse_examples() {
        let r = parse_ranking("2 > 1 = 3 > 4", &ids(4)).unwrap();
        let want: BTreeMap<String, f64> = [("2", 1.0), ("1", 2.5), ("3", 2.5), ("4", 4.0)]
            .iter()
            .map(|(k, v)| (k.to_string(), *v))
            .collect();
        assert_eq!(r.ranks, want);
        assert!(!r.skip);
        let s = parse_ranking("1>2>3>4", &ids(4)).unwrap();
        assert_eq!(s.ranks.values().copied().collect::<Vec<_>>(), vec![1.0, 2.0, 3.0, 4.0]);
        let t = parse_ranking("1 = 2 = 3 > 4", &ids(4)).unwrap();
        assert!(t.skip);
        assert_eq!(t.ranks["1"], 2.0);
        for bad in [
            "1 > 2 > 3 > 5",
            "1 > 1 > 3 > 4",
            "1 > 2 > 3",
            "1 >> 2 > 3 > 4",
            "1 2 > 3 > 4",
            "",
            "1 > 2 = > 3 4",
        ] {
            assert!(
                matches!(parse_ranking(bad, &ids(4)), Err(Error::Ranking { .. })),
                "{bad}"
            );
        }
    }

    #[test]
    fn correlation_examples() {
        let a = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(kendall_tau_b(&a, &a).unwrap(), 1.0);
        assert_eq!(kendall_tau_b(&a, &[4.0, 3.0, 2.0, 1.0]).unwrap(), -1.0);
        let x = [1.0, 2.5, 2.5, 4.0];
        assert!((kendall_tau_b(&x, &a).unwrap() - 5.0 / 30f64.sqrt()).abs() < 1e-12);
        assert!((spearman(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert!((spearman(&a, &[4.0, 3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
        assert!((spearman(&x, &a).unwrap() - 0.9487).abs() < 5e-5);
        let tied = [2.5; 4];
        assert!(matches!(kendall_tau_b(&tied, &a), Err(Error::UndefinedCorrelation(_))));
        assert!(matches!(spearman(&a, &tied), Err(Error::UndefinedCorrelation(_))));
    }

    #[test]
    fn tau_b_matches_pair_enumeration_exhaustively() {
        for n in 2..=6 {
            let all = weak_orders(n);
            // every pair for n <= 4; for 5 and 6 a fixed partner set keeps this under a second
            let partners: Vec<&Vec<f64>> = if n <= 4 {
                all.iter().collect()
            } else {
                all.iter().step_by(37).collect()
            };
            for x in &all {
                for y in &partners {
                    match (kendall_tau_b(x, y), brute_tau_b(x, y)) {
                        (Ok(a), Some(b)) => assert!((a - b).abs() < 1e-12, "{x:?} {y:?}"),
                        (Err(_), None) => {}
                        (a, b) => panic!("{x:?} {y:?}: {a:?} vs {b:?}"),
                    }
                }
            }
        }
        assert_eq!(weak_orders(4).len(), 75);
    }

    #[test]
    fn score_ranks_average_ties() {
        assert_eq!(score_ranks(&[0.3, 0.9, 0.3, 0.1]), vec![2.5, 1.0, 2.5, 4.0]);
        assert_eq!(score_ranks(&[1.0; 3]), vec![2.0; 3]);
    }

    fn record(p: &str, order: &str) -> RankingRecord {
        RankingRecord {
            prompt_id: p.into(),
            evaluator_id: "e".into(),
            order: order.into(),
            ranks: BTreeMap::new(),
        }
    }

    fn table(rows: &[(&str, [f64; 4])]) -> BTreeMap<String, BTreeMap<String, f64>> {
        rows.iter()
            .map(|(p, s)| (p.to_string(), ids(4).into_iter().zip(s.iter().copied()).collect()))
            .collect()
    }

    #[test]
    fn aggregate_examples() {
        let prompts: Vec<String> = (0..10).map(|i| format!("p{i}")).collect();
        let scores = table(
            &prompts
                .iter()
                .map(|p| (p.as_str(), [4.0, 3.0, 2.0, 1.0]))
                .collect::<Vec<_>>(),
        );
        let same: Vec<_> = prompts.iter().map(|p| record(p, "1 > 2 > 3 > 4")).collect();
        let r = aggregate_correlation(&same, &scores).unwrap();
        assert_eq!((r.mean_tau_b, r.mean_spearman, r.skipped), (1.0, 1.0, 0));
        let rev: Vec<_> = prompts.iter().map(|p| record(p, "4 > 3 > 2 > 1")).collect();
        let r = aggregate_correlation(&rev, &scores).unwrap();
        assert_eq!((r.mean_tau_b, r.mean_spearman, r.skipped), (-1.0, -1.0, 0));
        let mut one_tie = same.clone();
        one_tie[3].order = "1 = 2 = 3 > 4".into();
        let r = aggregate_correlation(&one_tie, &scores).unwrap();
        assert_eq!(r.skipped, 1);
        assert_eq!(r.per_prompt.iter().filter(|p| p.tau_b.is_some()).count(), 9);
        assert!(aggregate_correlation(&[record("p0", "1 = 2 = 3 = 4")], &scores).is_err());
    }

    #[test]
    fn correlate_reports_missing_ids() {
        let scores = vec![ScoreRecord {
            prompt_id: "a".into(),
            model_id: "1".into(),
            mse_flow: 1.0,
            mse_video: 0.0,
            score: 1.0,
        }];
        match correlate(&scores, &[record("b", "1")]) {
            Err(Error::IdMismatch {
                missing_in_scores,
                missing_in_rankings,
            }) => {
                assert_eq!(missing_in_scores, vec!["b"]);
                assert_eq!(missing_in_rankings, vec!["a"]);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn files_round_trip_and_last_write_wins() {
        let dir = tempfile::tempdir().unwrap();
        let recs = vec![ScoreRecord {
            prompt_id: "p,1".into(),
            model_id: "m".into(),
            mse_flow: 0.25,
            mse_video: 1e-3,
            score: 4.002,
        }];
        let p = dir.path().join("s.csv");
        write_scores_csv(&recs, &p).unwrap();
        assert_eq!(read_scores_csv(&p).unwrap(), recs);
        assert!(fs::read_to_string(&p)
            .unwrap()
            .starts_with("prompt_id,model_id,mse_flow,mse_video,score\n"));
        let rp = dir.path().join("r.jsonl");
        fs::write(&rp, "{\"prompt_id\":\"a\",\"evaluator_id\":\"e\",\"order\":\"1 > 2\"}\n\n{\"prompt_id\":\"a\",\"evaluator_id\":\"e\",\"order\":\"2 > 1\"}\n").unwrap();
        let r = read_rankings_jsonl(&rp).unwrap();
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].order, "2 > 1");
    }

    #[test]
    fn auc() {
        assert_eq!(roc_auc(&[3.0, 4.0], &[1.0, 2.0]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[1.0], &[1.0]).unwrap(), 0.5);
        assert_eq!(roc_auc(&[1.0, 3.0], &[2.0]).unwrap(), 0.5);
    }

    fn order_strategy() -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
        (2usize..=6).prop_flat_map(|k| {
            (
                Just((1..=k).collect::<Vec<_>>()).prop_shuffle(),
                prop::collection::vec(0usize..2, k - 1),
            )
        })
    }

    proptest! {
        #[test]
        fn parsed_ranks_sum_to_triangle((perm, seps) in order_strategy()) {
            let k = perm.len();
            let mut text = perm[0].to_string();
            for (i, s) in seps.iter().enumerate() {
                text.push_str(if *s == 0 { " > " } else { " = " });
                text.push_str(&perm[i + 1].to_string());
            }
            let r = parse_ranking(&text, &ids(k)).unwrap();
            let sum: f64 = r.ranks.values().sum();
            prop_assert!((sum - (k * (k + 1)) as f64 / 2.0).abs() < 1e-9);
        }

        #[test]
        fn rank_statistics_are_symmetric_and_monotone_invariant(
            x in prop::collection::vec(-5i32..5, 3..8),
            y_seed in prop::collection::vec(-5i32..5, 8),
            a in 0.1f64..3.0,
            b in -2.0f64..2.0,
        ) {
            let n = x.len();
            let xs: Vec<f64> = x.iter().map(|v| *v as f64).collect();
            let ys: Vec<f64> = y_seed[..n].iter().map(|v| *v as f64).collect();
            let rx = score_ranks(&xs);
            let ry = score_ranks(&ys);
            // a strictly increasing map of the scores leaves the induced ranks unchanged
            let mapped: Vec<f64> = xs.iter().map(|v| a * v.powi(3) + a * v + b).collect();
            prop_assert_eq!(score_ranks(&mapped), rx.clone());
            if let (Ok(t1), Ok(t2)) = (kendall_tau_b(&rx, &ry), kendall_tau_b(&ry, &rx)) {
                prop_assert!((t1 - t2).abs() < 1e-12);
                prop_assert!((-1.0..=1.0).contains(&t1));
            }
            if let (Ok(s1), Ok(s2)) = (spearman(&rx, &ry), spearman(&ry, &rx)) {
                prop_assert!((s1 - s2).abs() < 1e-12);
                prop_assert!(s1.abs() <= 1.0 + 1e-12);
            }
        }
    }
}
