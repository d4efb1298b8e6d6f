use tenence::graph::SnapshotSequence;
use tenence::model::{ModelDims, ModelParameters};
use tenence::objectives::{LossOptions, LossWeights, NegativeConfig, PosWeight};
use tenence::rng::{stream, Stream};
use tenence::train::{gradient_check, LossSelector};

use rand::Rng;

const TOLERANCE: f64 = 1e-4;

fn sequence() -> SnapshotSequence {
    SnapshotSequence::from_edge_lists(
        6,
        vec![
            vec![(0, 1), (1, 2), (3, 4), (2, 5)],
            vec![(0, 1), (2, 3), (4, 5)],
            vec![(0, 2), (1, 3), (3, 4), (0, 5), (1, 5)],
        ],
    )
    .unwrap()
}

fn options() -> LossOptions {
    LossOptions {
        weights: LossWeights::new(1.3, 0.7).unwrap(),
        negatives: NegativeConfig {
            per_anchor: 4,
            exhaustive: false,
        },
        ..LossOptions::default()
    }
}

/// Glorot weights plus random biases, so no pre-activation sits exactly on
/// a ReLU kink.
fn random_params(dims: &ModelDims, seed: u64) -> ModelParameters {
    let mut rng = stream(seed, Stream::Init);
    let mut p = ModelParameters::init(dims, &mut rng);
    p.for_each_mut(|name, m| {
        if name.ends_with("bias") {
            m.mapv_inplace(|_| rng.random_range(-0.2..0.2));
        }
    });
    p
}

#[test]
fn every_loss_term_matches_finite_differences() {
    let seq = sequence();
    let params = random_params(&ModelDims::with_width(6, 5, 4), 0);
    for selector in LossSelector::ALL {
        let report = gradient_check(&params, &seq, selector, &options(), 0).unwrap();
        assert!(report.entries > 300);
        assert!(
            report.max_relative_error < TOLERANCE,
            "{selector:?}: {} at {:?}",
            report.max_relative_error,
            report.worst
        );
    }
}

#[test]
fn exhaustive_negatives_and_unit_weights() {
    let seq = sequence().prefix(2);
    let params = random_params(&ModelDims::with_width(6, 4, 3), 3);
    let opts = LossOptions {
        negatives: NegativeConfig {
            per_anchor: 1,
            exhaustive: true,
        },
        pos_weight: PosWeight::Unit,
        ..options()
    };
    for selector in [
        LossSelector::LocalNce,
        LossSelector::GlobalNce,
        LossSelector::Total,
    ] {
        let report = gradient_check(&params, &seq, selector, &opts, 1).unwrap();
        assert!(
            report.max_relative_error < TOLERANCE,
            "{selector:?}: {report:?}"
        );
    }
}

#[test]
fn zero_parameters_give_finite_gradients() {
    let seq = sequence();
    let params = ModelParameters::zeros(&ModelDims::with_width(6, 4, 3));
    for selector in LossSelector::ALL {
        let report = gradient_check(&params, &seq, selector, &options(), 0).unwrap();
        assert!(report.max_relative_error.is_finite());
        assert!(
            report.max_relative_error < TOLERANCE,
            "{selector:?}: {report:?}"
        );
    }
}

#[test]
fn larger_instances_are_rejected() {
    let big = SnapshotSequence::from_edge_lists(9, vec![vec![(0, 1)], vec![(1, 2)]]).unwrap();
    let params = ModelParameters::zeros(&ModelDims::with_width(9, 2, 2));
    assert!(gradient_check(&params, &big, LossSelector::Total, &options(), 0).is_err());
}
