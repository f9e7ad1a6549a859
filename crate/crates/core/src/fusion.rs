//! Agglomerative clustering of time bins and fusion of each cluster into a
//! mobility pattern.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::ingest::MobilityMultiGraph;
use crate::mgd::DistanceMatrix;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Linkage {
    #[default]
    Average,
    Complete,
    Single,
}

/// How member graphs of a cluster are combined.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FuseOp {
    #[default]
    Mean,
    Sum,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    labels: Vec<usize>,
    n_clusters: usize,
}

impl ClusterAssignment {
    /// Checks that every id in `0..n_clusters` is used at least once.
    pub fn new(labels: Vec<usize>, n_clusters: usize) -> Result<Self> {
        let mut seen = vec![false; n_clusters];
        for &l in &labels {
            if l >= n_clusters {
                return Err(Error::validation(format!(
                    "cluster id {l} out of range for {n_clusters} clusters"
                )));
            }
            seen[l] = true;
        }
        if let Some(k) = seen.iter().position(|s| !s) {
            return Err(Error::validation(format!("cluster {k} has no members")));
        }
        Ok(Self { labels, n_clusters })
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn n_clusters(&self) -> usize {
        self.n_clusters
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn members(&self, cluster: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, l)| **l == cluster)
            .map(|(t, _)| t)
            .collect()
    }
}

/// Bottom-up clustering over a precomputed distance matrix, merging the
/// closest pair of clusters until `n` remain.
///
/// Clusters are identified by their smallest member. Among equally close
/// pairs the one with the smallest `(min id, max id)` wins. Output labels are
/// numbered in order of each cluster's smallest member, so bin 0 is always in
/// cluster 0.
pub fn agglomerative_cluster(
    d: &DistanceMatrix,
    n: usize,
    linkage: Linkage,
) -> Result<ClusterAssignment> {
    let t_count = d.len();
    if n < 1 || n > t_count {
        return Err(Error::validation(format!(
            "cannot form {n} clusters from {t_count} items"
        )));
    }

    let mut dist = d.values().clone();
    let mut size = vec![1usize; t_count];
    let mut active = vec![true; t_count];
    // parent[i] = the cluster id item i was merged into
    let mut parent: Vec<usize> = (0..t_count).collect();
    let mut remaining = t_count;

    while remaining > n {
        let mut best: Option<(usize, usize, f64)> = None;
        for i in 0..t_count {
            if !active[i] {
                continue;
            }
            for j in (i + 1)..t_count {
                if !active[j] {
                    continue;
                }
                let v = dist[[i, j]];
                if best.is_none_or(|(_, _, b)| v < b) {
                    best = Some((i, j, v));
                }
            }
        }
        let (keep, gone, _) = best.expect("at least two active clusters");

        // Lance-Williams update of distances to the merged cluster
        let (si, sj) = (size[keep] as f64, size[gone] as f64);
        for k in 0..t_count {
            if !active[k] || k == keep || k == gone {
                continue;
            }
            let (dik, djk) = (dist[[keep, k]], dist[[gone, k]]);
            let merged = match linkage {
                Linkage::Average => (si * dik + sj * djk) / (si + sj),
                Linkage::Complete => dik.max(djk),
                Linkage::Single => dik.min(djk),
            };
            dist[[keep, k]] = merged;
            dist[[k, keep]] = merged;
        }
        size[keep] += size[gone];
        active[gone] = false;
        parent[gone] = keep;
        remaining -= 1;
    }

    let root = |mut i: usize| {
        while parent[i] != i {
            i = parent[i];
        }
        i
    };
    let mut relabel = vec![usize::MAX; t_count];
    let mut next = 0;
    let labels = (0..t_count)
        .map(|t| {
            let r = root(t);
            if relabel[r] == usize::MAX {
                relabel[r] = next;
                next += 1;
            }
            relabel[r]
        })
        .collect();
    ClusterAssignment::new(labels, n)
}

/// Splits `t_count` consecutive bins into `n` contiguous, near-equal groups.
/// Stands in for distance-based clustering when the fusion stage is ablated.
pub fn contiguous_groups(t_count: usize, n: usize) -> Result<ClusterAssignment> {
    if n < 1 || n > t_count {
        return Err(Error::validation(format!(
            "cannot form {n} groups from {t_count} items"
        )));
    }
    ClusterAssignment::new((0..t_count).map(|t| t * n / t_count).collect(), n)
}

/// A fused adjacency matrix standing for a cluster of similar time bins.
#[derive(Clone, Debug, PartialEq)]
pub struct MobilityPattern {
    pub pattern_id: usize,
    pub weights: Array2<f64>,
    pub members: Vec<usize>,
}

impl MobilityPattern {
    pub fn new(pattern_id: usize, weights: Array2<f64>, members: Vec<usize>) -> Result<Self> {
        crate::ingest::check_weights(&weights)?;
        if members.is_empty() {
            return Err(Error::validation(format!("pattern {pattern_id} has no members")));
        }
        Ok(Self { pattern_id, weights, members })
    }

    pub fn n_regions(&self) -> usize {
        self.weights.nrows()
    }
}

/// One pattern per cluster, ordered by cluster id.
pub fn fuse_patterns(
    mg: &MobilityMultiGraph,
    asg: &ClusterAssignment,
    op: FuseOp,
) -> Result<Vec<MobilityPattern>> {
    if asg.len() != mg.len() {
        return Err(Error::shape(format!(
            "assignment covers {} bins, multigraph has {}",
            asg.len(),
            mg.len()
        )));
    }
    let n = mg.n_regions();
    (0..asg.n_clusters())
        .map(|k| {
            let members = asg.members(k);
            let mut weights = Array2::zeros((n, n));
            for &t in &members {
                weights += &mg.graphs()[t].weights;
            }
            if op == FuseOp::Mean {
                weights /= members.len() as f64;
            }
            MobilityPattern::new(k, weights, members)
        })
        .collect()
}
