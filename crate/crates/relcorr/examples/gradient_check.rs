//! Validate the backward pass of the pair classifier against central finite
//! differences. The checker re-runs the forward computation from scratch for
//! every perturbed parameter entry, so agreement here means the analytic
//! gradients are trustworthy.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use relcorr::autograd::ParamSet;
use relcorr::gradcheck::check_loss_gradients;
use relcorr::repmodel::bilinear_score;

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (pairs, d_h, n_rel, groups) = (4, 16, 5, 2);

    let mut params = ParamSet::new();
    let fill = |rows: usize, cols: usize, rng: &mut ChaCha8Rng| {
        Array2::from_shape_fn((rows, cols), |_| rng.random_range(-0.5..0.5))
    };
    params.insert("f_s", fill(pairs, d_h, &mut rng));
    params.insert("f_o", fill(pairs, d_h, &mut rng));
    let group_size = d_h / groups;
    params.insert(
        "clf.bilinear",
        fill(groups * group_size * group_size, n_rel, &mut rng),
    );
    params.insert("clf.bias", fill(1, n_rel, &mut rng));
    let labels = Array2::from_shape_fn((pairs, n_rel), |_| {
        if rng.random::<f64>() < 0.3 { 1.0 } else { 0.0 }
    });

    let report = check_loss_gradients(&params, 1e-5, |tape, bound| {
        let logits = bilinear_score(tape, bound.var("f_s"), bound.var("f_o"), bound, groups);
        tape.bce_with_logits_sum(logits, &labels)
    });

    println!(
        "checked {} parameter entries of the grouped bilinear scorer",
        report.entries
    );
    println!(
        "max relative error {:.3e} at {}",
        report.max_rel_error, report.worst
    );
    assert!(
        report.max_rel_error < 1e-4,
        "gradients disagree with finite differences"
    );
    println!("analytic gradients agree with finite differences");
}
