//! Render the PPMI co-occurrence matrix of a synthetic corpus as an SVG
//! heatmap: rows ordered by relation frequency, diagonal masked, two
//! strongest cells kept per row. Files land in the system temp directory.

use relcorr::heatmap::{self, HeatmapOptions};
use relcorr::relstats::{count_cooccurrence, ppmi, relation_frequency};
use relcorr::synth;

fn main() {
    let schema = synth::schema();
    let docs = synth::generate_corpus(60, 23);
    let counts = count_cooccurrence(&docs, schema.len()).expect("non-empty corpus");
    let correlation = ppmi(&counts);
    let freq = relation_frequency(&docs, schema.len());
    let names: Vec<String> = schema.ids().to_vec();

    let masked = heatmap::prepare(
        &correlation.values,
        &names,
        Some(&freq),
        &HeatmapOptions {
            top_n: Some(2),
            truncate: None,
        },
    )
    .expect("square matrix with matching names");

    let dir = std::env::temp_dir();
    let svg_path = dir.join("relcorr_ppmi.svg");
    let csv_path = dir.join("relcorr_ppmi.csv");
    std::fs::write(&svg_path, heatmap::to_svg(&masked)).expect("write SVG");
    std::fs::write(&csv_path, heatmap::to_csv(&masked).expect("render CSV")).expect("write CSV");

    println!("wrote {}", svg_path.display());
    println!("wrote {}", csv_path.display());
    println!("\nmasked matrix (empty = masked):");
    println!("{}", heatmap::to_csv(&masked).unwrap());
}
