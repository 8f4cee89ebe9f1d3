//! Turn per-model prediction errors into coherence scores and correlate the
//! induced order with human rankings.

use std::collections::BTreeMap;

use phyco::scoring::{
    aggregate_correlation, coherence_score, kendall_tau_b, parse_ranking, spearman, RankingRecord, ScoreVariant,
};

fn main() -> phyco::Result<()> {
    // the classic tied example
    let x = [1.0, 2.0, 2.0, 3.0];
    let y = [1.0, 3.0, 2.0, 4.0];
    println!("tau-b {:.4}  spearman {:.4}", kendall_tau_b(&x, &y)?, spearman(&x, &y)?);

    let models: Vec<String> = ["1", "2", "3", "4"].iter().map(|s| s.to_string()).collect();
    let parsed = parse_ranking("2 > 1 = 3 > 4", &models)?;
    println!("\"2 > 1 = 3 > 4\" -> {:?}", parsed.ranks);

    // (flow error, video error) per model for three prompts
    let errors = [
        ("p1", [(0.010, 0.02), (0.004, 0.01), (0.030, 0.05), (0.090, 0.04)]),
        ("p2", [(0.020, 0.03), (0.050, 0.02), (0.006, 0.01), (0.015, 0.02)]),
        ("p3", [(0.001, 0.01), (0.002, 0.01), (0.040, 0.06), (0.008, 0.03)]),
    ];
    let mut scores: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    for (p, per_model) in errors {
        for (m, (f, v)) in models.iter().zip(per_model) {
            let (s, _) = coherence_score(f, v, ScoreVariant::Literal)?;
            scores.entry(p.into()).or_default().insert(m.clone(), s);
        }
    }
    let rankings: Vec<RankingRecord> = [
        ("p1", "2 > 1 > 3 > 4"),
        ("p2", "3 > 4 > 1 > 2"),
        ("p3", "1 = 2 = 4 > 3"),
    ]
    .iter()
    .map(|(p, order)| RankingRecord {
        prompt_id: p.to_string(),
        evaluator_id: "alice".into(),
        order: order.to_string(),
        ranks: BTreeMap::new(),
    })
    .collect();
    let report = aggregate_correlation(&rankings, &scores)?;
    for r in &report.per_prompt {
        println!(
            "{}: tau-b {:?} spearman {:?} {}",
            r.prompt_id,
            r.tau_b,
            r.spearman,
            r.skipped.as_deref().unwrap_or("")
        );
    }
    println!(
        "mean tau-b {:.3}, mean spearman {:.3}, skipped {}",
        report.mean_tau_b, report.mean_spearman, report.skipped
    );
    Ok(())
}
