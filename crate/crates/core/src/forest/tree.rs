//! CART classification trees over categorical features, grown by weighted
//! Gini impurity with per-node feature subsampling. A split sends every row
//! whose feature value has its bit set in `left_mask` to the left child.

use super::data::FeatureColumn;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Node {
    Split {
        feature: u32,
        left_mask: u8,
        left: u32,
        right: u32,
    },
    Leaf {
        class: u8,
    },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Tree {
    /// Arena; the root is node 0.
    pub nodes: Vec<Node>,
}

impl Tree {
    /// Class for one row, feature values supplied by the accessor.
    pub fn predict(&self, feature_value: impl Fn(u32) -> u8) -> u8 {
        let mut at = 0usize;
        loop {
            match &self.nodes[at] {
                Node::Leaf { class } => return *class,
                Node::Split {
                    feature,
                    left_mask,
                    left,
                    right,
                } => {
                    let v = feature_value(*feature);
                    at = if (left_mask >> v) & 1 == 1 {
                        *left as usize
                    } else {
                        *right as usize
                    };
                }
            }
        }
    }

    /// Like `predict`, reporting every feature tested along the path.
    pub fn predict_with_path(
        &self,
        feature_value: impl Fn(u32) -> u8,
        mut on_feature: impl FnMut(u32),
    ) -> u8 {
        let mut at = 0usize;
        loop {
            match &self.nodes[at] {
                Node::Leaf { class } => return *class,
                Node::Split {
                    feature,
                    left_mask,
                    left,
                    right,
                } => {
                    on_feature(*feature);
                    let v = feature_value(*feature);
                    at = if (left_mask >> v) & 1 == 1 {
                        *left as usize
                    } else {
                        *right as usize
                    };
                }
            }
        }
    }
}

pub(crate) struct GrowSettings {
    pub mtry: usize,
    /// Minimum total weight of a child node; lighter splits are rejected.
    pub min_node: f64,
    pub n_classes: usize,
}

/// Weighted Gini impurity in its absolute form W * (1 - sum (W_k/W)^2) =
/// W - sum W_k^2 / W, so parent-minus-children differences are the weighted
/// impurity decrease.
fn gini_abs(class_w: &[f64]) -> f64 {
    let total: f64 = class_w.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    total - class_w.iter().map(|w| w * w).sum::<f64>() / total
}

fn majority(class_w: &[f64]) -> u8 {
    let mut best = 0usize;
    for k in 1..class_w.len() {
        if class_w[k] > class_w[best] {
            best = k;
        }
    }
    best as u8
}

/// Candidate left-side masks by arity: all binary partitions of the value
/// set, each listed once by its singleton side.
const GENO_MASKS: [u8; 3] = [0b001, 0b010, 0b100];
const BIN_MASKS: [u8; 1] = [0b001];

pub(crate) struct TreeGrower<'a> {
    pub features: &'a [FeatureColumn],
    pub response: &'a [u8],
    /// Training weight per row id (bootstrap multiplicity).
    pub row_weight: &'a [f64],
    pub settings: GrowSettings,
    pub nodes: Vec<Node>,
    /// Weighted impurity decrease accumulated per feature.
    pub mdg: Vec<f64>,
    scratch_features: Vec<u32>,
}

impl<'a> TreeGrower<'a> {
    pub fn new(
        features: &'a [FeatureColumn],
        response: &'a [u8],
        row_weight: &'a [f64],
        settings: GrowSettings,
    ) -> Self {
        let f = features.len();
        TreeGrower {
            features,
            response,
            row_weight,
            settings,
            nodes: Vec::new(),
            mdg: vec![0.0; f],
            scratch_features: (0..f as u32).collect(),
        }
    }

    pub fn grow(mut self, rows: &mut [u32], rng: &mut ChaCha8Rng) -> (Tree, Vec<f64>) {
        self.grow_node(rows, rng);
        (Tree { nodes: self.nodes }, self.mdg)
    }

    fn class_weights(&self, rows: &[u32]) -> Vec<f64> {
        let mut w = vec![0.0; self.settings.n_classes];
        for &r in rows {
            w[self.response[r as usize] as usize] += self.row_weight[r as usize];
        }
        w
    }

    /// Grows the subtree over `rows`, returns its root index.
    fn grow_node(&mut self, rows: &mut [u32], rng: &mut ChaCha8Rng) -> u32 {
        let class_w = self.class_weights(rows);
        let node_w: f64 = class_w.iter().sum();
        let node_gini = gini_abs(&class_w);
        let splittable = node_w >= 2.0 * self.settings.min_node && node_gini > 0.0;

        let best = splittable.then(|| self.best_split(rows, rng)).flatten();
        match best {
            None => {
                self.nodes.push(Node::Leaf {
                    class: majority(&class_w),
                });
                (self.nodes.len() - 1) as u32
            }
            Some((decrease, feature, left_mask)) => {
                self.mdg[feature as usize] += decrease;
                let idx = self.nodes.len();
                // placeholder, patched after both subtrees exist
                self.nodes.push(Node::Leaf { class: 0 });
                let values = &self.features[feature as usize].values;
                let split_at = partition_stable(rows, |r| {
                    (left_mask >> values[r as usize]) & 1 == 1
                });
                let (left_rows, right_rows) = rows.split_at_mut(split_at);
                let left = self.grow_node(left_rows, rng);
                let right = self.grow_node(right_rows, rng);
                self.nodes[idx] = Node::Split {
                    feature,
                    left_mask,
                    left,
                    right,
                };
                idx as u32
            }
        }
    }

    /// Best (decrease, feature, mask) among a fresh mtry-subset of features,
    /// or None when no candidate passes the child-weight floor with a
    /// positive decrease. Sampled features are scanned in ascending order so
    /// equal scores resolve to the lowest feature, then the first mask.
    fn best_split(&mut self, rows: &[u32], rng: &mut ChaCha8Rng) -> Option<(f64, u32, u8)> {
        let f = self.features.len();
        let mtry = self.settings.mtry.min(f);
        // partial Fisher-Yates over the persistent id list
        for k in 0..mtry {
            let j = rng.gen_range(k..f);
            self.scratch_features.swap(k, j);
        }
        let mut sampled: Vec<u32> = self.scratch_features[..mtry].to_vec();
        sampled.sort_unstable();

        let class_w = self.class_weights(rows);
        let parent_gini = gini_abs(&class_w);
        let k_classes = self.settings.n_classes;

        let mut best: Option<(f64, u32, u8)> = None;
        let mut value_w = [[0.0f64; 3]; 3]; // value x class weights
        for &fid in &sampled {
            let col = &self.features[fid as usize];
            let arity = col.kind.arity() as usize;
            for vw in value_w.iter_mut() {
                vw.fill(0.0);
            }
            for &r in rows {
                value_w[col.values[r as usize] as usize]
                    [self.response[r as usize] as usize] += self.row_weight[r as usize];
            }
            let masks: &[u8] = match arity {
                3 => &GENO_MASKS,
                _ => &BIN_MASKS,
            };
            for &mask in masks {
                let mut left = [0.0f64; 3];
                let mut right = [0.0f64; 3];
                for v in 0..arity {
                    let side = if (mask >> v) & 1 == 1 {
                        &mut left
                    } else {
                        &mut right
                    };
                    for (k, s) in side.iter_mut().enumerate().take(k_classes) {
                        *s += value_w[v][k];
                    }
                }
                let wl: f64 = left[..k_classes].iter().sum();
                let wr: f64 = right[..k_classes].iter().sum();
                if wl < self.settings.min_node || wr < self.settings.min_node {
                    continue;
                }
                let decrease =
                    parent_gini - gini_abs(&left[..k_classes]) - gini_abs(&right[..k_classes]);
                if decrease > 1e-12 && best.map(|(d, _, _)| decrease > d).unwrap_or(true) {
                    best = Some((decrease, fid, mask));
                }
            }
        }
        best
    }
}

/// Stable in-place partition: rows satisfying the predicate move to the
/// front preserving relative order; returns the boundary.
fn partition_stable(rows: &mut [u32], pred: impl Fn(u32) -> bool) -> usize {
    let mut buf: Vec<u32> = Vec::with_capacity(rows.len());
    let mut at = 0;
    for i in 0..rows.len() {
        if pred(rows[i]) {
            rows[at] = rows[i];
            at += 1;
        } else {
            buf.push(rows[i]);
        }
    }
    rows[at..].copy_from_slice(&buf);
    at
}
