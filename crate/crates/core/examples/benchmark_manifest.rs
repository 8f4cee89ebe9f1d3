//! Load the bundled prompt manifest, inspect it and write it back out.
//!
//! ```text
//! cargo run --example benchmark_manifest [-- out.jsonl]
//! ```

use phyco::benchmark::{category_histogram, load_manifest, save_manifest, BenchmarkManifest};

fn main() -> phyco::Result<()> {
    let manifest = BenchmarkManifest::seed();
    println!(
        "manifest version {} with {} prompts",
        manifest.version,
        manifest.prompts.len()
    );
    for (category, n) in category_histogram(&manifest) {
        println!("  {:<22} {n}", category.as_str());
    }
    assert!(manifest.covers_all_categories());

    let first = &manifest.prompts[0];
    println!(
        "\n{} [{} / {}]\n  {}",
        first.id,
        first.category.as_str(),
        first.content_type.as_str(),
        first.text
    );

    let out = std::env::args()
        .nth(1)
        .map(std::path::PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("phyco_manifest.jsonl"));
    save_manifest(&manifest, &out)?;
    assert_eq!(load_manifest(&out)?, manifest);
    println!("\nround-tripped through {}", out.display());
    Ok(())
}
