use ddss::data::{BlockPartition, SparseDataset};
use ddss::model::{LossFamily, ModelSpec, Regularizer};
use ddss::screening::ActiveSet;
use ddss::solver::{vr_sparse_gradient, VrAnchor};
use ddss::Problem;
use proptest::prelude::*;

fn dense_grad(rows: &[Vec<f64>], y: &[f64], loss: LossFamily, x: &[f64]) -> Vec<f64> {
    let n = rows.len() as f64;
    let mut g = vec![0.0; x.len()];
    for (row, &yi) in rows.iter().zip(y) {
        let z: f64 = row.iter().zip(x).map(|(a, b)| a * b).sum();
        let u = match loss {
            LossFamily::Squared => z - yi,
            LossFamily::Logistic => -yi / (1.0 + (yi * z).exp()),
        };
        for (gj, a) in g.iter_mut().zip(row) {
            *gj += u * a / n;
        }
    }
    g
}

fn sparse_rows(n: usize, p: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(prop_oneof![2 => Just(0.0), 1 => -2.0f64..2.0], p), n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn estimator_is_unbiased_and_weights_average_to_one(
        rows in sparse_rows(10, 6),
        y in prop::collection::vec(-1.0f64..1.0, 10),
        x0 in prop::collection::vec(-1.0f64..1.0, 6),
        x_hat in prop::collection::vec(-1.0f64..1.0, 6),
        logistic in any::<bool>(),
        group in any::<bool>(),
    ) {
        let loss = if logistic { LossFamily::Logistic } else { LossFamily::Squared };
        let y: Vec<f64> = if logistic { y.iter().map(|v| if *v >= 0.0 { 1.0 } else { -1.0 }).collect() } else { y };
        let (part, reg) = if group {
            (BlockPartition::new(6, vec![vec![0, 3], vec![1, 2], vec![4], vec![5]]).unwrap(), Regularizer::GroupL2)
        } else {
            (BlockPartition::singletons(6), Regularizer::L1)
        };
        let data = SparseDataset::from_dense(&rows, y.clone()).unwrap();
        let problem = Problem::new(ModelSpec::new(loss, reg, 0.1, 0.0, part.clone()).unwrap(), data).unwrap();
        let full = ActiveSet::full(&part);
        let anchor = VrAnchor::new(&problem, &full, &full.compact(&x0).unwrap()).unwrap();
        let xc = full.compact(&x_hat).unwrap();
        let n = rows.len();

        let mut mean = vec![0.0; 6];
        for i in 0..n {
            let v = vr_sparse_gradient(&problem, &full, &anchor, i, &xc).unwrap();
            for (m, vi) in mean.iter_mut().zip(&v) {
                *m += vi / n as f64;
            }
        }
        let want = dense_grad(&rows, &y, loss, &x_hat);
        let touched: Vec<usize> = (0..part.len())
            .filter(|&b| rows.iter().any(|r| part.block(b).iter().any(|&j| r[j] != 0.0)))
            .collect();
        for &b in &touched {
            for &j in part.block(b) {
                let c = full.compact_index(j).unwrap();
                prop_assert!((mean[c] - want[j]).abs() <= 1e-12, "coord {}: {} vs {}", j, mean[c], want[j]);
            }
        }

        // (1/n) sum_i phi_i(x) with phi_i = sum_{G in Psi_i} d_G Omega_G equals Omega on touched blocks
        let sm = problem.support();
        let omega = |b: usize| {
            let v: Vec<f64> = part.block(b).iter().map(|&j| x_hat[j]).collect();
            match reg {
                Regularizer::L1 => v.iter().map(|a| a.abs()).sum::<f64>(),
                Regularizer::GroupL2 => v.iter().map(|a| a * a).sum::<f64>().sqrt(),
            }
        };
        let mut phi_mean = 0.0;
        for i in 0..n {
            for &b in sm.psi(i) {
                phi_mean += sm.weight(b).unwrap() * omega(b) / n as f64;
            }
        }
        let omega_touched: f64 = touched.iter().map(|&b| omega(b)).sum();
        prop_assert!((phi_mean - omega_touched).abs() <= 1e-12);

        for &b in &touched {
            let d = sm.weight(b).unwrap();
            let hits = (0..n).filter(|&i| sm.psi(i).contains(&b)).count();
            prop_assert!((d * hits as f64 / n as f64 - 1.0).abs() <= 1e-12);
        }
    }
}
