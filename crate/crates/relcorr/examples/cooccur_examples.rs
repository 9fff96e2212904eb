//! Show how the two co-occurrence subtasks turn one document's annotation
//! into training examples. The coarse task asks "does relation r co-occur
//! with the document's other relations?"; the fine task asks the same of
//! labeled entity-pair slots against NA slots.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use relcorr::cooccur::{plan_crcp_examples, plan_frcp_examples};
use relcorr::corpus::enumerate_entity_pairs;
use relcorr::synth;

fn main() {
    let schema = synth::schema();
    let doc = &synth::generate_corpus(1, 77)[0];
    println!("document {} expresses:", doc.id);
    for f in &doc.facts {
        println!(
            "  entity {} -[{}]-> entity {} (evidence {:?})",
            f.head,
            schema.id(f.relation),
            f.tail,
            f.evidence
        );
    }

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let r_plus: Vec<usize> = doc.relation_set().into_iter().collect();
    let coarse = plan_crcp_examples(&r_plus, schema.len(), 2, &mut rng);
    println!("\ncoarse examples (targets are relation indices):");
    for plan in &coarse {
        println!(
            "  target {:<3} given {:?} -> {}",
            schema.id(plan.target),
            plan.condition.iter().map(|&r| schema.id(r)).collect::<Vec<_>>(),
            if plan.label { "co-occurs" } else { "does not" }
        );
    }

    let pairs = enumerate_entity_pairs(doc);
    let non_na: Vec<usize> = pairs
        .iter()
        .enumerate()
        .filter(|(_, p)| !p.labels.is_empty())
        .map(|(i, _)| i)
        .collect();
    let na: Vec<usize> = pairs
        .iter()
        .enumerate()
        .filter(|(_, p)| p.labels.is_empty())
        .map(|(i, _)| i)
        .collect();
    println!(
        "\n{} entity pairs: {} labeled, {} NA",
        pairs.len(),
        non_na.len(),
        na.len()
    );
    let fine = plan_frcp_examples(&non_na, &na, 2, &mut rng);
    println!("fine examples (targets are pair slots):");
    for plan in &fine {
        let p = &pairs[plan.target];
        println!(
            "  pair ({}, {}) given slots {:?} -> {}",
            p.head,
            p.tail,
            plan.condition,
            if plan.label { "expresses a relation" } else { "is NA" }
        );
    }
}
