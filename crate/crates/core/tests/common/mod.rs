#![allow(dead_code)]

use ddss::data::{BlockPartition, SparseDataset};
use ddss::model::{lambda_max, LossFamily, ModelSpec, Regularizer};
use ddss::synth::{gen_synthetic, SynthSpec};
use ddss::Problem;
use ddss::dist::{BlockDelta, Body};
use proptest::prelude::*;

/// Block sizes the random `DeltaPush` payloads are drawn against.
pub const SIZES: [usize; 5] = [1, 3, 2, 1, 4];

fn floats(max: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(any::<f64>(), 0..max)
}

/// Every message body, with arbitrary floats including NaN and infinities.
pub fn body_strategy() -> impl Strategy<Value = Body> {
    let delta = (0..SIZES.len() as u32).prop_flat_map(|b| {
        prop::collection::vec(any::<f64>(), SIZES[b as usize]).prop_map(move |values| BlockDelta { block: b, values })
    });
    prop_oneof![
        Just(Body::FlagTrue),
        Just(Body::FlagFalse),
        Just(Body::Shutdown),
        floats(40).prop_map(Body::Params),
        floats(40).prop_map(Body::ParamPush),
        (floats(20), any::<f64>(), floats(20)).prop_map(|(grad, loss_sum, derivs)| Body::PartialGrad { grad, loss_sum, derivs }),
        (prop::collection::vec(any::<u32>(), 0..10), floats(20))
            .prop_map(|(blocks, grad)| Body::FullGradAndActiveSet { blocks, grad }),
        prop::collection::vec(delta, 0..6).prop_map(Body::DeltaPush),
        (any::<u32>(), any::<u32>()).prop_map(|(worker_id, workers)| Body::Hello { worker_id, workers }),
    ]
}

/// Lasso on a generated instance with `lambda = ratio * lambda_max`.
pub fn lasso_instance(n: usize, p: usize, density: f64, ratio: f64, seed: u64) -> Problem {
    let s = gen_synthetic(&SynthSpec { n, p, density, k_true: 5.min(p), noise: 0.1, seed, unit_rows: true }).unwrap();
    lasso_on(s.data, ratio, 0.0)
}

pub fn lasso_on(data: SparseDataset, ratio: f64, ridge: f64) -> Problem {
    let part = BlockPartition::singletons(data.p());
    let lmax = lambda_max(LossFamily::Squared, Regularizer::L1, &part, &data);
    let spec = ModelSpec::lasso(data.p(), ratio * lmax).unwrap().with_ridge(ridge).unwrap();
    Problem::new(spec, data).unwrap()
}

/// The 200 x 50 unit-row instance used for convergence checks.
pub fn reference_instance(ridge: f64) -> Problem {
    let s = gen_synthetic(&SynthSpec { n: 200, p: 50, density: 1.0, k_true: 5, noise: 0.1, seed: 1, unit_rows: true })
        .unwrap();
    lasso_on(s.data, 0.1, ridge)
}
