//! Count relation co-occurrence over a synthetic corpus and print the PPMI
//! matrix. The corpus plants fixed relation pairs, so the matrix should show
//! a strong off-diagonal stripe connecting each relation to its partner.

use relcorr::relstats::{count_cooccurrence, ppmi, relation_frequency};
use relcorr::synth;

fn main() {
    let schema = synth::schema();
    let docs = synth::generate_corpus(40, 7);
    println!("{} documents, {} relations", docs.len(), schema.len());

    let counts = count_cooccurrence(&docs, schema.len()).expect("non-empty corpus");
    let freq = relation_frequency(&docs, schema.len());
    println!("\ntriplets per relation:");
    for (i, f) in freq.iter().enumerate() {
        println!("  {:<12} {f}", schema.id(i));
    }

    let correlation = ppmi(&counts);
    println!("\nPPMI (rows and columns in schema order):");
    print!("{:>12}", "");
    for j in 0..schema.len() {
        print!("{:>8}", schema.id(j));
    }
    println!();
    for i in 0..schema.len() {
        print!("{:>12}", schema.id(i));
        for j in 0..schema.len() {
            print!("{:>8.3}", correlation.values[[i, j]]);
        }
        println!();
    }

    println!("\neach relation's strongest partner:");
    for i in 0..schema.len() {
        let best = (0..schema.len())
            .filter(|&j| j != i)
            .max_by(|&a, &b| correlation.values[[i, a]].total_cmp(&correlation.values[[i, b]]))
            .expect("at least two relations");
        println!(
            "  {} -> {} (ppmi {:.3}, planted partner {})",
            schema.id(i),
            schema.id(best),
            correlation.values[[i, best]],
            schema.id(synth::planted_partner(i)),
        );
    }
}
