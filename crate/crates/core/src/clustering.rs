//! Seeded k-means over question embeddings, plus per-cluster ordering by
//! distance to centroid.
//!
//! Initialization is seeded greedy farthest-point: the first center is drawn
//! from the seed, every later center is the point farthest from its nearest
//! chosen center (ties to the lowest index). Lloyd iterations then run until
//! the largest centroid shift drops below `tol` or `max_iters` is reached.
//! Empty clusters are repaired by moving in the point farthest from its own
//! centroid. All reductions accumulate in fixed index order, so the result
//! is a pure function of (vectors, k, seed).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

use crate::embedding::{euclidean_distance, EmbeddingVector};

pub const DEFAULT_MAX_ITERS: usize = 100;
pub const DEFAULT_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum ClusteringError {
    #[error("cannot cluster an empty input")]
    EmptyInput,
    #[error("k={k} exceeds the number of points ({n})")]
    TooManyClusters { k: usize, n: usize },
    #[error("k must be positive")]
    ZeroClusters,
    #[error("vectors have mixed dimensions: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("no vector supplied for assigned record {id:?}")]
    MissingVector { id: String },
    #[error("record {id:?} has a vector but no cluster assignment")]
    UnassignedRecord { id: String },
}

/// A fitted k-means model: centroids plus record-id assignments.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterModel {
    pub k: usize,
    pub centroids: Vec<EmbeddingVector>,
    pub assignments: BTreeMap<String, usize>,
    pub seed: u64,
}

/// A cluster's members in ascending order of distance to its centroid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderedCluster {
    pub cluster_index: usize,
    /// (record id, distance to centroid), non-decreasing by distance.
    pub members: Vec<(String, f64)>,
}

/// Run seeded k-means over labeled points.
pub fn kmeans(
    points: &[(String, EmbeddingVector)],
    k: usize,
    seed: u64,
    max_iters: usize,
    tol: f64,
) -> Result<ClusterModel, ClusteringError> {
    if points.is_empty() {
        return Err(ClusteringError::EmptyInput);
    }
    if k == 0 {
        return Err(ClusteringError::ZeroClusters);
    }
    if k > points.len() {
        return Err(ClusteringError::TooManyClusters {
            k,
            n: points.len(),
        });
    }
    let dim = points[0].1.dim();
    for (_, v) in points {
        if v.dim() != dim {
            return Err(ClusteringError::DimMismatch(dim, v.dim()));
        }
    }
    let vectors: Vec<&[f64]> = points.iter().map(|(_, v)| v.values()).collect();
    let (centroids, assignments) = lloyd(&vectors, k, seed, max_iters, tol);
    let centroids = centroids
        .into_iter()
        .map(|c| EmbeddingVector::new(c).expect("centroid of finite points is finite"))
        .collect();
    let assignments = points
        .iter()
        .zip(&assignments)
        .map(|((id, _), &c)| (id.clone(), c))
        .collect();
    Ok(ClusterModel {
        k,
        centroids,
        assignments,
        seed,
    })
}

/// k-means with restarts: runs once per seed and keeps the run with the
/// lowest within-cluster sum of squared distances.
pub fn kmeans_multi(
    points: &[(String, EmbeddingVector)],
    k: usize,
    seeds: &[u64],
    max_iters: usize,
    tol: f64,
) -> Result<ClusterModel, ClusteringError> {
    let mut best: Option<(f64, ClusterModel)> = None;
    for &seed in seeds {
        let model = kmeans(points, k, seed, max_iters, tol)?;
        let objective = model_objective(points, &model);
        match &best {
            Some((obj, _)) if *obj <= objective => {}
            _ => best = Some((objective, model)),
        }
    }
    best.map(|(_, m)| m).ok_or(ClusteringError::EmptyInput)
}

/// Within-cluster sum of squared distances of a fitted model.
pub fn model_objective(points: &[(String, EmbeddingVector)], model: &ClusterModel) -> f64 {
    let mut total = 0.0;
    for (id, v) in points {
        let c = model.assignments[id];
        let centroid = model.centroids[c].values();
        total += v
            .values()
            .iter()
            .zip(centroid)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>();
    }
    total
}

/// Order every cluster's members by ascending distance to the centroid,
/// breaking distance ties by record id.
pub fn order_clusters(
    model: &ClusterModel,
    vectors: &BTreeMap<String, EmbeddingVector>,
) -> Result<Vec<OrderedCluster>, ClusteringError> {
    for id in vectors.keys() {
        if !model.assignments.contains_key(id) {
            return Err(ClusteringError::UnassignedRecord { id: id.clone() });
        }
    }
    let mut clusters: Vec<OrderedCluster> = (0..model.k)
        .map(|cluster_index| OrderedCluster {
            cluster_index,
            members: Vec::new(),
        })
        .collect();
    for (id, &c) in &model.assignments {
        let v = vectors
            .get(id)
            .ok_or_else(|| ClusteringError::MissingVector { id: id.clone() })?;
        let d = euclidean_distance(v.values(), model.centroids[c].values());
        clusters[c].members.push((id.clone(), d));
    }
    for cluster in &mut clusters {
        cluster.members.sort_by(|(id_a, d_a), (id_b, d_b)| {
            d_a.partial_cmp(d_b)
                .expect("distances are finite")
                .then_with(|| id_a.cmp(id_b))
        });
    }
    Ok(clusters)
}

// ---------------------------------------------------------------------------
// Lloyd's algorithm on raw slices
// ---------------------------------------------------------------------------

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn lloyd(
    vectors: &[&[f64]],
    k: usize,
    seed: u64,
    max_iters: usize,
    tol: f64,
) -> (Vec<Vec<f64>>, Vec<usize>) {
    let n = vectors.len();
    let dim = vectors[0].len();
    let mut centroids = init_farthest_point(vectors, k, seed);
    let mut assignments = vec![0usize; n];

    for _ in 0..max_iters {
        // Assignment: nearest centroid, ties to the lower cluster index.
        for (i, v) in vectors.iter().enumerate() {
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for (c, centroid) in centroids.iter().enumerate() {
                let d = squared_distance(v, centroid);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            assignments[i] = best;
        }

        // Empty-cluster repair: move in the point farthest from its centroid.
        loop {
            let mut counts = vec![0usize; k];
            for &a in &assignments {
                counts[a] += 1;
            }
            let Some(empty) = counts.iter().position(|&c| c == 0) else {
                break;
            };
            let mut farthest = 0usize;
            let mut farthest_d = -1.0;
            for (i, v) in vectors.iter().enumerate() {
                // Only steal from clusters that keep at least one member.
                if counts[assignments[i]] <= 1 {
                    continue;
                }
                let d = squared_distance(v, &centroids[assignments[i]]);
                if d > farthest_d {
                    farthest_d = d;
                    farthest = i;
                }
            }
            assignments[farthest] = empty;
        }

        // Update: mean of members, accumulated in index order.
        let mut sums = vec![vec![0.0f64; dim]; k];
        let mut counts = vec![0usize; k];
        for (i, v) in vectors.iter().enumerate() {
            let c = assignments[i];
            counts[c] += 1;
            for (slot, x) in sums[c].iter_mut().zip(v.iter()) {
                *slot += x;
            }
        }
        let mut shift: f64 = 0.0;
        for c in 0..k {
            for slot in sums[c].iter_mut() {
                *slot /= counts[c] as f64;
            }
            shift = shift.max(euclidean_distance(&sums[c], &centroids[c]));
            centroids[c] = std::mem::take(&mut sums[c]);
        }
        if shift < tol {
            break;
        }
    }
    (centroids, assignments)
}

fn init_farthest_point(vectors: &[&[f64]], k: usize, seed: u64) -> Vec<Vec<f64>> {
    let n = vectors.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = vec![rng.gen_range(0..n)];
    while chosen.len() < k {
        let mut best_idx = None;
        let mut best_d = -1.0;
        for i in 0..n {
            if chosen.contains(&i) {
                continue;
            }
            let d = chosen
                .iter()
                .map(|&c| squared_distance(vectors[i], vectors[c]))
                .fold(f64::INFINITY, f64::min);
            if d > best_d {
                best_d = d;
                best_idx = Some(i);
            }
        }
        chosen.push(best_idx.expect("k <= n leaves an unchosen point"));
    }
    chosen.iter().map(|&i| vectors[i].to_vec()).collect()
}
