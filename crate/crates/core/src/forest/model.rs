//! Weighted-bootstrap forest growth and out-of-bag evaluation.

use super::data::ForestData;
use super::tree::{GrowSettings, Tree, TreeGrower};
use crate::error::Result;
use crate::seed::{derive_rng, Tag};
use rand::Rng;
use rayon::prelude::*;

#[derive(Clone, Copy, Debug)]
pub struct ForestParams {
    pub ntr: usize,
    /// Features sampled per split; None means floor(sqrt(feature count)).
    pub mtry: Option<usize>,
    /// Minimum total training weight of a leaf.
    pub min_node: f64,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            ntr: 500,
            mtry: None,
            min_node: 5.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ForestModel {
    pub trees: Vec<Tree>,
    /// Per tree: row ids never drawn by its bootstrap, ascending.
    pub oob: Vec<Vec<u32>>,
    pub n_classes: u8,
    pub feature_names: Vec<String>,
    /// Summed weighted impurity decrease per feature (divide by tree count
    /// for the mean decrease).
    pub mdg_raw: Vec<f64>,
    pub params: ForestParams,
}

impl ForestModel {
    pub fn mtry(&self, n_features: usize) -> usize {
        resolve_mtry(self.params.mtry, n_features)
    }
}

pub(crate) fn resolve_mtry(mtry: Option<usize>, n_features: usize) -> usize {
    mtry.unwrap_or_else(|| (n_features as f64).sqrt().floor() as usize)
        .clamp(1, n_features.max(1))
}

/// Grows ntr trees. Each bootstrap draws round(total weight) rows with
/// probability proportional to row weight, with replacement; a tree trains
/// on its drawn multiset (weight = multiplicity) and the undrawn rows form
/// its out-of-bag set.
pub fn grow_forest(data: &ForestData, params: &ForestParams) -> Result<ForestModel> {
    data.validate()?;
    let n = data.n_rows();
    let total_w: f64 = data.weights.iter().sum();
    let n_draws = (total_w.round() as usize).max(1);
    let mut cumsum = Vec::with_capacity(n);
    let mut acc = 0.0;
    for &w in &data.weights {
        acc += w;
        cumsum.push(acc);
    }
    let mtry = resolve_mtry(params.mtry, data.features.len());

    let grown: Vec<(Tree, Vec<u32>, Vec<f64>)> = (0..params.ntr)
        .into_par_iter()
        .map(|l| {
            let mut rng = derive_rng(params.seed, &[Tag::Tree as u64, l as u64]);
            let mut counts = vec![0u32; n];
            for _ in 0..n_draws {
                let u: f64 = rng.gen::<f64>() * acc;
                // first index with cumsum > u
                let row = cumsum.partition_point(|&c| c <= u).min(n - 1);
                counts[row] += 1;
            }
            let mut in_bag: Vec<u32> = Vec::new();
            let mut oob: Vec<u32> = Vec::new();
            let mut row_weight = vec![0.0f64; n];
            for (r, &c) in counts.iter().enumerate() {
                if c > 0 {
                    in_bag.push(r as u32);
                    row_weight[r] = c as f64;
                } else {
                    oob.push(r as u32);
                }
            }
            let grower = TreeGrower::new(
                &data.features,
                &data.response,
                &row_weight,
                GrowSettings {
                    mtry,
                    min_node: params.min_node,
                    n_classes: data.n_classes as usize,
                },
            );
            let (tree, mdg) = grower.grow(&mut in_bag, &mut rng);
            (tree, oob, mdg)
        })
        .collect();

    let mut trees = Vec::with_capacity(params.ntr);
    let mut oob = Vec::with_capacity(params.ntr);
    let mut mdg_raw = vec![0.0; data.features.len()];
    for (tree, o, mdg) in grown {
        trees.push(tree);
        oob.push(o);
        for (a, b) in mdg_raw.iter_mut().zip(mdg.iter()) {
            *a += b;
        }
    }
    Ok(ForestModel {
        trees,
        oob,
        n_classes: data.n_classes,
        feature_names: data.features.iter().map(|c| c.name.clone()).collect(),
        mdg_raw,
        params: *params,
    })
}

/// Ensemble out-of-bag error: every row is classified by majority vote of
/// the trees that left it out of bag, and the weighted misclassification
/// rate is taken over the rows with at least one such tree.
pub fn oob_error(model: &ForestModel, data: &ForestData) -> f64 {
    let n = data.n_rows();
    let mut votes = vec![[0u32; 3]; n];
    for (tree, oob) in model.trees.iter().zip(model.oob.iter()) {
        for &r in oob {
            let class =
                tree.predict(|f| data.features[f as usize].values[r as usize]);
            votes[r as usize][class as usize] += 1;
        }
    }
    let mut wrong = 0.0;
    let mut total = 0.0;
    for (r, v) in votes.iter().enumerate() {
        if v.iter().all(|&c| c == 0) {
            continue;
        }
        let mut best = 0usize;
        for k in 1..3 {
            if v[k] > v[best] {
                best = k;
            }
        }
        total += data.weights[r];
        if best as u8 != data.response[r] {
            wrong += data.weights[r];
        }
    }
    if total > 0.0 {
        wrong / total
    } else {
        0.0
    }
}
