//! Render one clip per scenario, coherent and with each violation it supports,
//! and show how far the violated trajectory drifts from the coherent one.
//!
//! Pass a directory to also write a small corpus (clips, flows, manifest) there.

use phyco::oracle::{
    build_corpus, compatible_violations, inject_violation, render_scene, sample_scene, CorpusConfig, Scenario,
    ViolationSpec,
};
use phyco::scoring::mse;

fn main() -> phyco::Result<()> {
    for (i, scenario) in Scenario::ALL.into_iter().enumerate() {
        let spec = sample_scene(scenario, 7 + i as u64, 16, 64, 64)?;
        let clip = render_scene(&spec)?;
        println!("{:<15} \"{}\"", scenario.as_str(), clip.caption);
        for &kind in compatible_violations(scenario) {
            match inject_violation(&spec, &clip, &ViolationSpec { kind, seed: 3 }) {
                Ok(bad) => {
                    let d = mse(clip.flow.data.view(), bad.flow.data.view())?;
                    println!("    {:<20} truth-flow mse vs coherent {d:.3}", kind.as_str());
                }
                // the corpus builder resamples the scene in this case
                Err(e) => println!("    {:<20} {e}", kind.as_str()),
            }
        }
    }

    if let Some(dir) = std::env::args().nth(1) {
        let cfg = CorpusConfig {
            train: 12,
            val: 6,
            test: 6,
            ..CorpusConfig::default()
        };
        let entries = build_corpus(&cfg, std::path::Path::new(&dir))?;
        println!("\nwrote {} clips under {dir}", entries.len());
    }
    Ok(())
}
