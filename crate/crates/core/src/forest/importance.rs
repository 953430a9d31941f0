//! Out-of-bag permutation importance (MDA) and mean impurity decrease
//! (MDG). A genotype is one feature, so permuting its column permutes the
//! underlying dummy pair jointly and completed rows stay coherent.

use super::data::ForestData;
use super::model::ForestModel;
use crate::seed::{derive_rng, Tag};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VimpEntry {
    pub name: String,
    pub mda: f64,
    pub mdg: f64,
}

/// One entry per feature, source order.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VimpTable {
    pub entries: Vec<VimpEntry>,
}

/// Weighted out-of-bag loss of one tree: (misclassified weight, total
/// weight) over its out-of-bag rows.
pub fn tree_oob_loss(model: &ForestModel, tree_idx: usize, data: &ForestData) -> (f64, f64) {
    let tree = &model.trees[tree_idx];
    let mut loss = 0.0;
    let mut total = 0.0;
    for &r in &model.oob[tree_idx] {
        let class = tree.predict(|f| data.features[f as usize].values[r as usize]);
        total += data.weights[r as usize];
        if class != data.response[r as usize] {
            loss += data.weights[r as usize];
        }
    }
    (loss, total)
}

/// One tree's MDA contribution for one feature with an explicit permuted
/// out-of-bag column: `permuted[i]` replaces the feature value of row
/// `oob[tree_idx][i]`. Returns (permuted loss - original loss) / out-of-bag
/// weight, or 0 when the tree has no weighted out-of-bag rows.
pub fn tree_mda_term(
    model: &ForestModel,
    tree_idx: usize,
    data: &ForestData,
    feature: usize,
    permuted: &[u8],
) -> f64 {
    let oob = &model.oob[tree_idx];
    assert_eq!(permuted.len(), oob.len(), "permutation length");
    let tree = &model.trees[tree_idx];
    let (base_loss, total) = tree_oob_loss(model, tree_idx, data);
    if total <= 0.0 {
        return 0.0;
    }
    let mut perm_loss = 0.0;
    for (i, &r) in oob.iter().enumerate() {
        let class = tree.predict(|f| {
            if f as usize == feature {
                permuted[i]
            } else {
                data.features[f as usize].values[r as usize]
            }
        });
        if class != data.response[r as usize] {
            perm_loss += data.weights[r as usize];
        }
    }
    (perm_loss - base_loss) / total
}

/// MDA and MDG per feature. MDA permutes each feature's out-of-bag column
/// once per tree (seeded by tree and feature) and averages the per-tree
/// normalized loss differences over the trees with a weighted out-of-bag
/// set; MDG is the growth-time impurity decrease divided by the tree count.
pub fn variable_importance(model: &ForestModel, data: &ForestData) -> VimpTable {
    let n_feat = data.features.len();
    let per_tree: Vec<(Vec<f64>, bool)> = (0..model.trees.len())
        .into_par_iter()
        .map(|l| (tree_terms(model, l, data), !model.oob[l].is_empty()))
        .collect();
    let mut mda = vec![0.0; n_feat];
    let mut trees_with_oob = 0usize;
    for (terms, has_oob) in &per_tree {
        if !has_oob {
            continue;
        }
        trees_with_oob += 1;
        for (a, b) in mda.iter_mut().zip(terms.iter()) {
            *a += b;
        }
    }
    if trees_with_oob > 0 {
        for v in &mut mda {
            *v /= trees_with_oob as f64;
        }
    }
    let entries = (0..n_feat)
        .map(|j| VimpEntry {
            name: model.feature_names[j].clone(),
            mda: mda[j],
            mdg: model.mdg_raw[j] / model.trees.len().max(1) as f64,
        })
        .collect();
    VimpTable { entries }
}

/// Per-feature MDA terms of one tree. A permutation can only change the
/// prediction of a row whose original path tests the feature, so after one
/// base pass that records per-row path features, only the affected rows are
/// re-walked; features absent from every path keep an exact zero term.
fn tree_terms(model: &ForestModel, tree_idx: usize, data: &ForestData) -> Vec<f64> {
    let n_feat = data.features.len();
    let oob = &model.oob[tree_idx];
    let tree = &model.trees[tree_idx];
    let mut terms = vec![0.0; n_feat];
    if oob.is_empty() {
        return terms;
    }

    let mut total = 0.0;
    let mut base_wrong: Vec<bool> = Vec::with_capacity(oob.len());
    // rows (as positions in oob) whose path tests each feature
    let mut touched: Vec<Vec<u32>> = vec![Vec::new(); n_feat];
    let mut path: Vec<u32> = Vec::new();
    for (i, &r) in oob.iter().enumerate() {
        path.clear();
        let class = tree.predict_with_path(
            |f| data.features[f as usize].values[r as usize],
            |f| path.push(f),
        );
        path.sort_unstable();
        path.dedup();
        for &f in &path {
            touched[f as usize].push(i as u32);
        }
        total += data.weights[r as usize];
        base_wrong.push(class != data.response[r as usize]);
    }
    if total <= 0.0 {
        return terms;
    }

    for (j, rows) in touched.iter().enumerate() {
        if rows.is_empty() {
            continue; // permutation cannot reroute any path
        }
        let mut permuted: Vec<u8> = oob
            .iter()
            .map(|&r| data.features[j].values[r as usize])
            .collect();
        let mut rng = derive_rng(
            model.params.seed,
            &[Tag::Permutation as u64, tree_idx as u64, j as u64],
        );
        permuted.shuffle(&mut rng);
        let mut delta = 0.0;
        for &i in rows {
            let r = oob[i as usize];
            let class = tree.predict(|f| {
                if f as usize == j {
                    permuted[i as usize]
                } else {
                    data.features[f as usize].values[r as usize]
                }
            });
            let wrong = class != data.response[r as usize];
            if wrong != base_wrong[i as usize] {
                delta += if wrong {
                    data.weights[r as usize]
                } else {
                    -data.weights[r as usize]
                };
            }
        }
        terms[j] = delta / total;
    }
    terms
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SelectPolicy {
    /// The s highest-MDA features; boundary ties broken by higher MDG, then
    /// lower feature index.
    TopS(usize),
    /// Features with MDA strictly greater than the threshold.
    Threshold(f64),
}

/// Selected feature indices, ascending.
pub fn select_variables(table: &VimpTable, policy: SelectPolicy) -> Vec<usize> {
    match policy {
        SelectPolicy::Threshold(t) => table
            .entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.mda > t)
            .map(|(i, _)| i)
            .collect(),
        SelectPolicy::TopS(s) => {
            let mut order: Vec<usize> = (0..table.entries.len()).collect();
            order.sort_by(|&a, &b| {
                let ea = &table.entries[a];
                let eb = &table.entries[b];
                eb.mda
                    .partial_cmp(&ea.mda)
                    .unwrap()
                    .then(eb.mdg.partial_cmp(&ea.mdg).unwrap())
                    .then(a.cmp(&b))
            });
            let mut picked: Vec<usize> =
                order.into_iter().take(s.min(table.entries.len())).collect();
            picked.sort_unstable();
            picked
        }
    }
}
