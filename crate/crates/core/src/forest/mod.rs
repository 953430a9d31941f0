//! Sample-weighted random forests over completed-data rows: weighted
//! bootstrap, weighted-Gini CART trees on categorical features, out-of-bag
//! permutation importance, importance-based variable selection, and the
//! imputation/selection cycle driver built on top of them.

mod cycle;
mod data;
mod importance;
mod model;
mod tree;

pub use cycle::{
    contingency_screen, final_sets, run_cycles, CycleConfig, CycleRecord, EquationFrequencies,
    EquationSelection, FinalRule, LambdaPolicy, ScreenEntry, SelectionMethod, SelectionReport,
};
pub use data::{FeatureColumn, FeatureKind, ForestData};
pub use importance::{
    select_variables, tree_mda_term, tree_oob_loss, variable_importance, SelectPolicy,
    VimpEntry, VimpTable,
};
pub use model::{grow_forest, oob_error, ForestModel, ForestParams};
pub use tree::{Node, Tree};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::normal_cdf;
    use crate::seed::{derive_rng, Tag};
    use rand::seq::SliceRandom;
    use rand::Rng;

    fn geno_col(name: &str, values: Vec<u8>) -> FeatureColumn {
        FeatureColumn {
            name: name.to_string(),
            kind: FeatureKind::Genotype,
            values,
        }
    }

    /// n rows, one signal genotype feature and `extra` independent noise
    /// genotype features; y = 1{signal >= 1} with `flip` label noise.
    fn signal_data(n: usize, extra: usize, flip: f64, seed: u64) -> ForestData {
        let mut rng = derive_rng(seed, &[Tag::Synthetic as u64]);
        let mut signal = Vec::with_capacity(n);
        let mut response = Vec::with_capacity(n);
        for _ in 0..n {
            let g = match rng.gen::<f64>() {
                u if u < 0.36 => 0u8,
                u if u < 0.84 => 1,
                _ => 2,
            };
            let mut y = (g >= 1) as u8;
            if rng.gen::<f64>() < flip {
                y ^= 1;
            }
            signal.push(g);
            response.push(y);
        }
        let mut features = vec![geno_col("signal", signal)];
        for e in 0..extra {
            let col = (0..n)
                .map(|_| match rng.gen::<f64>() {
                    u if u < 0.36 => 0u8,
                    u if u < 0.84 => 1,
                    _ => 2,
                })
                .collect();
            features.push(geno_col(&format!("noise_{e}"), col));
        }
        ForestData {
            features,
            response,
            n_classes: 2,
            weights: vec![1.0; n],
            response_name: "y".to_string(),
        }
    }

    #[test]
    fn pure_signal_oob_error_is_tiny() {
        let data = signal_data(200, 0, 0.0, 3);
        let params = ForestParams {
            ntr: 100,
            seed: 7,
            ..Default::default()
        };
        let model = grow_forest(&data, &params).unwrap();
        let err = oob_error(&model, &data);
        assert!(err < 0.02, "separable data should be learned, err = {err}");
    }

    #[test]
    fn permuted_labels_oob_error_matches_majority_rate() {
        // labels independent of features: the forest cannot beat always
        // guessing the majority class
        let n = 400;
        let mut rng = derive_rng(11, &[Tag::Synthetic as u64, 1]);
        let mut data = signal_data(n, 2, 0.0, 5);
        let mut ones = 0;
        for y in data.response.iter_mut() {
            *y = (rng.gen::<f64>() < 0.3) as u8;
            ones += *y as usize;
        }
        let majority_rate = (ones.min(n - ones)) as f64 / n as f64;
        let params = ForestParams {
            ntr: 150,
            seed: 13,
            ..Default::default()
        };
        let model = grow_forest(&data, &params).unwrap();
        let err = oob_error(&model, &data);
        assert!(
            (err - majority_rate).abs() <= 0.05,
            "err {err} vs majority rate {majority_rate}"
        );
    }

    /// Two-sided Wilcoxon rank-sum p-value by normal approximation with tie
    /// correction.
    fn rank_sum_p(a: &[f64], b: &[f64]) -> f64 {
        let n1 = a.len() as f64;
        let n2 = b.len() as f64;
        let mut all: Vec<(f64, usize)> = a
            .iter()
            .map(|&v| (v, 0))
            .chain(b.iter().map(|&v| (v, 1)))
            .collect();
        all.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());
        let n = all.len();
        let mut ranks = vec![0.0; n];
        let mut tie_term = 0.0;
        let mut i = 0;
        while i < n {
            let mut j = i;
            while j + 1 < n && all[j + 1].0 == all[i].0 {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for r in ranks.iter_mut().take(j + 1).skip(i) {
                *r = avg;
            }
            let t = (j - i + 1) as f64;
            tie_term += t * t * t - t;
            i = j + 1;
        }
        let w: f64 = ranks
            .iter()
            .zip(all.iter())
            .filter(|(_, (_, g))| *g == 0)
            .map(|(r, _)| r)
            .sum();
        let nn = n as f64;
        let mean = n1 * (nn + 1.0) / 2.0;
        let var = n1 * n2 / 12.0 * ((nn + 1.0) - tie_term / (nn * (nn - 1.0)));
        if var <= 0.0 {
            return 1.0; // everything tied
        }
        let z = (w - mean).abs() / var.sqrt();
        2.0 * (1.0 - normal_cdf(z))
    }

    #[test]
    fn duplicated_rows_match_doubled_weights() {
        // the weighted bootstrap must treat weight 2 like two unit copies
        let mut errs_dup = Vec::new();
        let mut errs_wt = Vec::new();
        for seed in 0..20u64 {
            let base = signal_data(60, 1, 0.25, 100 + seed);
            let dup = ForestData {
                features: base
                    .features
                    .iter()
                    .map(|c| FeatureColumn {
                        name: c.name.clone(),
                        kind: c.kind,
                        values: c.values.iter().chain(c.values.iter()).copied().collect(),
                    })
                    .collect(),
                response: base
                    .response
                    .iter()
                    .chain(base.response.iter())
                    .copied()
                    .collect(),
                n_classes: 2,
                weights: vec![1.0; 120],
                response_name: "y".to_string(),
            };
            let wtd = ForestData {
                weights: vec![2.0; 60],
                ..base
            };
            let params = ForestParams {
                ntr: 60,
                seed,
                ..Default::default()
            };
            errs_dup.push(oob_error(&grow_forest(&dup, &params).unwrap(), &dup));
            errs_wt.push(oob_error(&grow_forest(&wtd, &params).unwrap(), &wtd));
        }
        let p = rank_sum_p(&errs_dup, &errs_wt);
        assert!(p > 0.01, "distributions diverge: p = {p}");
    }

    #[test]
    fn handbuilt_tree_mda_matches_pencil_value() {
        // one split on a binary feature, value 0 -> leaf 0, value 1 -> leaf 1
        let tree = Tree {
            nodes: vec![
                Node::Split {
                    feature: 0,
                    left_mask: 0b001,
                    left: 1,
                    right: 2,
                },
                Node::Leaf { class: 0 },
                Node::Leaf { class: 1 },
            ],
        };
        let data = ForestData {
            features: vec![FeatureColumn {
                name: "f0".to_string(),
                kind: FeatureKind::Binary,
                values: vec![0, 0, 1, 1, 0, 1, 0, 1],
            }],
            response: vec![0, 0, 1, 1, 0, 1, 1, 0],
            n_classes: 2,
            weights: vec![1.0; 8],
            response_name: "y".to_string(),
        };
        let model = ForestModel {
            trees: vec![tree],
            oob: vec![vec![4, 5, 6, 7]],
            n_classes: 2,
            feature_names: vec!["f0".to_string()],
            mdg_raw: vec![0.0],
            params: ForestParams::default(),
        };
        // base: rows 4,5 correct; rows 6,7 wrong -> loss 2 of 4.
        assert_eq!(tree_oob_loss(&model, 0, &data), (2.0, 4.0));
        // permuted column [1,0,0,1]: every prediction flips to wrong -> loss 4.
        // term = (4 - 2) / 4 = 1/2.
        let term = tree_mda_term(&model, 0, &data, 0, &[1, 0, 0, 1]);
        assert_eq!(term, 0.5);
        // identity permutation -> exactly zero
        assert_eq!(tree_mda_term(&model, 0, &data, 0, &[0, 1, 0, 1]), 0.0);

        // weighted variant: weights 2,1,1,2 on the out-of-bag rows
        let mut wdata = data;
        wdata.weights = vec![1.0, 1.0, 1.0, 1.0, 2.0, 1.0, 1.0, 2.0];
        // base loss 1 + 2 = 3 of 6; permuted loss 2 + 1 + 1 + 2 = 6
        assert_eq!(tree_oob_loss(&model, 0, &wdata), (3.0, 6.0));
        let term = tree_mda_term(&model, 0, &wdata, 0, &[1, 0, 0, 1]);
        assert_eq!(term, 0.5);
    }

    #[test]
    fn importance_agrees_with_explicit_permutations() {
        let data = signal_data(80, 2, 0.2, 41);
        let params = ForestParams {
            ntr: 25,
            seed: 17,
            ..Default::default()
        };
        let model = grow_forest(&data, &params).unwrap();
        let table = variable_importance(&model, &data);
        for j in 0..data.features.len() {
            let mut sum = 0.0;
            let mut used = 0usize;
            for l in 0..model.trees.len() {
                if model.oob[l].is_empty() {
                    continue;
                }
                let mut permuted: Vec<u8> = model.oob[l]
                    .iter()
                    .map(|&r| data.features[j].values[r as usize])
                    .collect();
                let mut rng = derive_rng(
                    params.seed,
                    &[Tag::Permutation as u64, l as u64, j as u64],
                );
                permuted.shuffle(&mut rng);
                sum += tree_mda_term(&model, l, &data, j, &permuted);
                used += 1;
            }
            let expect = sum / used as f64;
            assert!(
                (table.entries[j].mda - expect).abs() < 1e-12,
                "feature {j}: {} vs {expect}",
                table.entries[j].mda
            );
        }
    }

    #[test]
    fn constant_feature_has_exactly_zero_mda() {
        let mut data = signal_data(120, 1, 0.1, 23);
        data.features.push(geno_col("constant", vec![1; 120]));
        let params = ForestParams {
            ntr: 60,
            seed: 29,
            ..Default::default()
        };
        let model = grow_forest(&data, &params).unwrap();
        let table = variable_importance(&model, &data);
        let c = table.entries.last().unwrap();
        assert_eq!(c.mda, 0.0, "permuting a constant column changes nothing");
        assert_eq!(c.mdg, 0.0, "a constant column admits no split");
    }

    #[test]
    fn noise_mda_centers_at_zero_and_signal_mda_is_positive() {
        let seeds = 30;
        let mut noise_vals = Vec::with_capacity(seeds);
        let mut signal_vals = Vec::with_capacity(seeds);
        for s in 0..seeds as u64 {
            let data = signal_data(150, 1, 0.25, 500 + s);
            let params = ForestParams {
                ntr: 120,
                seed: s,
                ..Default::default()
            };
            let model = grow_forest(&data, &params).unwrap();
            let table = variable_importance(&model, &data);
            signal_vals.push(table.entries[0].mda);
            noise_vals.push(table.entries[1].mda);
        }
        let stats = |v: &[f64]| {
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>()
                / (v.len() - 1) as f64;
            (mean, (var / v.len() as f64).sqrt())
        };
        let (noise_mean, noise_se) = stats(&noise_vals);
        assert!(
            noise_mean.abs() <= 2.0 * noise_se,
            "noise MDA off-center: mean {noise_mean}, se {noise_se}"
        );
        let (signal_mean, signal_se) = stats(&signal_vals);
        assert!(
            signal_mean > 2.0 * signal_se,
            "signal MDA should be positive: mean {signal_mean}, se {signal_se}"
        );
    }

    #[test]
    fn same_seed_reproduces_model_and_importance() {
        let data = signal_data(100, 2, 0.2, 77);
        let params = ForestParams {
            ntr: 40,
            seed: 5,
            ..Default::default()
        };
        let m1 = grow_forest(&data, &params).unwrap();
        let m2 = grow_forest(&data, &params).unwrap();
        assert_eq!(m1.trees, m2.trees);
        assert_eq!(m1.oob, m2.oob);
        let t1 = variable_importance(&m1, &data);
        let t2 = variable_importance(&m2, &data);
        for (a, b) in t1.entries.iter().zip(t2.entries.iter()) {
            assert_eq!(a.mda.to_bits(), b.mda.to_bits());
            assert_eq!(a.mdg.to_bits(), b.mdg.to_bits());
        }
    }

    #[test]
    fn constant_response_is_rejected() {
        let mut data = signal_data(50, 0, 0.0, 91);
        data.response = vec![1; 50];
        let err = grow_forest(&data, &ForestParams::default()).unwrap_err();
        assert!(err.to_string().contains("constant"), "{err}");
    }

    #[test]
    fn consistent_training_data_is_fit_perfectly() {
        // y is a deterministic function of one feature and every value cell
        // is heavily populated, so each tree reconstructs the rule exactly
        let data = signal_data(300, 0, 0.0, 55);
        let params = ForestParams {
            ntr: 20,
            mtry: Some(1),
            min_node: 1.0,
            seed: 3,
            ..Default::default()
        };
        let model = grow_forest(&data, &params).unwrap();
        for tree in &model.trees {
            for r in 0..data.n_rows() {
                let class = tree.predict(|f| data.features[f as usize].values[r]);
                assert_eq!(class, data.response[r]);
            }
        }
    }

    #[test]
    fn selection_policies_rank_and_tie_break() {
        let table = VimpTable {
            entries: vec![
                VimpEntry {
                    name: "a".into(),
                    mda: 0.05,
                    mdg: 1.0,
                },
                VimpEntry {
                    name: "b".into(),
                    mda: 0.20,
                    mdg: 0.5,
                },
                VimpEntry {
                    name: "c".into(),
                    mda: 0.05,
                    mdg: 2.0,
                },
                VimpEntry {
                    name: "d".into(),
                    mda: -0.01,
                    mdg: 3.0,
                },
                VimpEntry {
                    name: "e".into(),
                    mda: 0.0,
                    mdg: 0.1,
                },
            ],
        };
        // threshold 0 keeps strictly positive MDA only
        assert_eq!(
            select_variables(&table, SelectPolicy::Threshold(0.0)),
            vec![0, 1, 2]
        );
        // top-2: b first, then the 0.05 tie resolves to c by higher MDG
        assert_eq!(select_variables(&table, SelectPolicy::TopS(2)), vec![1, 2]);
        // an MDG tie would fall back to the lower index
        let mut tied = table.clone();
        tied.entries[2].mdg = 1.0;
        assert_eq!(select_variables(&tied, SelectPolicy::TopS(2)), vec![0, 1]);
        // top-everything returns all features
        assert_eq!(
            select_variables(&table, SelectPolicy::TopS(99)),
            vec![0, 1, 2, 3, 4]
        );
    }
}
