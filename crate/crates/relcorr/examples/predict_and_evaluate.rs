//! Train on one split, predict on a held-out split, and print the full
//! metric report: micro F1, Ign F1, long-tail Macro@K and the multi-label
//! slices.

use relcorr::evaluator::{build_report, PredictionSet};
use relcorr::synth;
use relcorr::trainer::{train, EncoderSettings, TrainingConfig};

fn main() {
    let schema = synth::schema();
    let train_docs = synth::generate_corpus(50, 501);
    let dev_docs = synth::generate_corpus(10, 502);

    let config = TrainingConfig {
        batch_size: 10,
        epochs: 200,
        lr_encoder: 3e-4,
        lr_other: 1e-3,
        seed: 2,
        stop_at_train_f1: Some(0.98),
        encoder: EncoderSettings {
            d_h: 64,
            n_heads: 4,
            layers: 2,
            max_len: 64,
            ffn_width: 128,
            dropout: 0.0,
        },
        ..TrainingConfig::default()
    };
    let model = train(&train_docs, &dev_docs, &schema, &config).expect("training succeeds");
    println!(
        "trained {} epochs, best dev F1 {:.4} at threshold {:.2}",
        model.history.len(),
        model.best_dev_f1,
        model.threshold
    );

    let preds = model.predict(&dev_docs).expect("scoring succeeds");
    let gold = PredictionSet::from_gold(&dev_docs);
    let report = build_report(
        &preds,
        &gold,
        &dev_docs,
        Some(&train_docs),
        schema.len(),
        &[10, 100],
    );
    println!(
        "{}",
        serde_json::to_string_pretty(&report).expect("report serializes")
    );
}
