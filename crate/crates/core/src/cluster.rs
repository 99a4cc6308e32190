//! Trusted pseudo-label selection.
//!
//! Confident outer predictions are clustered in embedding space with k-means;
//! a sample is trusted when its predicted class agrees with the majority
//! prediction of its cluster.

use std::collections::BTreeMap;
use std::io::Write;

use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::Rng;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::argmax;
use crate::rng;
use crate::scalar::Scalar;

/// Outer-network predictions for the unlabeled pool.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabelTable<T> {
    /// Dataset index of each row.
    pub indices: Vec<usize>,
    /// Softmax output per row.
    pub soft: Matrix<T>,
    /// Penultimate activation per row.
    pub embeddings: Matrix<T>,
}

impl<T: Scalar> PseudoLabelTable<T> {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn predicted(&self, row: usize) -> usize {
        argmax(self.soft.row(row))
    }

    pub fn confidence(&self, row: usize) -> T {
        self.soft.row(row).iter().copied().fold(T::neg_infinity(), T::max)
    }
}

/// Rows whose maximum softmax value is at least `tau_select`.
pub fn confident_indices<T: Scalar>(table: &PseudoLabelTable<T>, tau_select: f64) -> Vec<usize> {
    let tau = T::of(tau_select);
    (0..table.len()).filter(|&r| table.confidence(r) >= tau).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult<T> {
    pub assignments: Vec<usize>,
    pub centroids: Matrix<T>,
    pub iterations: usize,
    /// Sum of squared distances after each assignment step.
    pub objective_history: Vec<T>,
}

fn sq_dist<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

fn nearest<T: Scalar>(x: &[T], centroids: &Matrix<T>) -> (usize, T) {
    let mut best = (0, T::infinity());
    for (c, centre) in centroids.row_iter().enumerate() {
        let d = sq_dist(x, centre);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus_init<T: Scalar, R: Rng + ?Sized>(data: &Matrix<T>, k: usize, rng: &mut R) -> Matrix<T> {
    let m = data.rows();
    let mut chosen = vec![rng.random_range(0..m)];
    let mut d2: Vec<f64> = data
        .row_iter()
        .map(|x| sq_dist(x, data.row(chosen[0])).as_f64())
        .collect();
    while chosen.len() < k {
        let next = match WeightedIndex::new(&d2) {
            Ok(dist) => dist.sample(rng),
            // every remaining point coincides with a chosen centre
            Err(_) => (0..m).find(|i| !chosen.contains(i)).expect("m >= k"),
        };
        chosen.push(next);
        for (i, x) in data.row_iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(x, data.row(next)).as_f64());
        }
    }
    data.select_rows(&chosen)
}

/// k-means with k-means++ seeding and Lloyd iterations until the assignment
/// stops changing or `max_iters` is reached. An empty cluster is re-seeded at
/// the point farthest from its current centroid.
pub fn kmeans<T: Scalar>(data: &Matrix<T>, k: usize, max_iters: usize, seed: u64) -> Result<KMeansResult<T>> {
    let m = data.rows();
    if k == 0 || m < k {
        return Err(Error::InsufficientData(format!(
            "k-means with k={k} needs at least k points, got {m}"
        )));
    }
    if max_iters == 0 {
        return Err(Error::config("k-means needs at least one iteration"));
    }
    let mut rng = rng::seeded(seed);
    let mut centroids = plus_plus_init(data, k, &mut rng);
    let dim = data.cols();
    let mut assignments = vec![usize::MAX; m];
    let mut history = Vec::new();
    let mut iterations = 0;

    for _ in 0..max_iters {
        iterations += 1;
        let mut changed = false;
        let mut objective = T::zero();
        let mut dists = vec![T::zero(); m];
        for (i, x) in data.row_iter().enumerate() {
            let (c, d) = nearest(x, &centroids);
            if assignments[i] != c {
                assignments[i] = c;
                changed = true;
            }
            dists[i] = d;
            objective += d;
        }
        history.push(objective);
        if !changed {
            break;
        }

        let mut sums = Matrix::<T>::zeros(k, dim);
        let mut counts = vec![0usize; k];
        for (i, x) in data.row_iter().enumerate() {
            counts[assignments[i]] += 1;
            for (s, &v) in sums.row_mut(assignments[i]).iter_mut().zip(x) {
                *s += v;
            }
        }
        for (c, &count) in counts.iter().enumerate() {
            if count == 0 {
                let far = (0..m)
                    .max_by(|&a, &b| dists[a].partial_cmp(&dists[b]).unwrap_or(std::cmp::Ordering::Equal))
                    .expect("m >= 1");
                centroids.row_mut(c).copy_from_slice(data.row(far));
                dists[far] = T::zero();
            } else {
                let n = T::of_usize(count);
                for (dst, &s) in centroids.row_mut(c).iter_mut().zip(sums.row(c)) {
                    *dst = s / n;
                }
            }
        }
    }

    Ok(KMeansResult {
        assignments,
        centroids,
        iterations,
        objective_history: history,
    })
}

/// Positions `i` whose `predicted[i]` equals the majority prediction of
/// cluster `assignments[i]`. Majority ties go to the smallest class.
pub fn consistency_filter(assignments: &[usize], predicted: &[usize]) -> Result<Vec<usize>> {
    if assignments.len() != predicted.len() {
        return Err(Error::shape(format!(
            "{} cluster assignments vs {} predictions",
            assignments.len(),
            predicted.len()
        )));
    }
    let mut votes: BTreeMap<usize, BTreeMap<usize, usize>> = BTreeMap::new();
    for (&c, &p) in assignments.iter().zip(predicted) {
        *votes.entry(c).or_default().entry(p).or_default() += 1;
    }
    let majority: BTreeMap<usize, usize> = votes
        .into_iter()
        .map(|(c, tally)| {
            // BTreeMap iterates classes ascending, so strict > keeps the smallest on ties
            let mut best = (usize::MAX, 0);
            for (class, n) in tally {
                if n > best.1 {
                    best = (class, n);
                }
            }
            (c, best.0)
        })
        .collect();
    Ok((0..assignments.len())
        .filter(|&i| majority[&assignments[i]] == predicted[i])
        .collect())
}

/// One trusted sample.
#[derive(Debug, Clone, PartialEq)]
pub struct TrustedEntry<T> {
    /// Outer softmax output, frozen at selection time.
    pub outer: Vec<T>,
    pub predicted: usize,
    pub confidence: T,
    /// Cluster id, or `None` when clustering was skipped.
    pub cluster: Option<usize>,
}

/// The trusted index set with its frozen outer labels, keyed by dataset index.
#[derive(Debug, Clone, PartialEq)]
pub struct TrustedSet<T> {
    pub members: BTreeMap<usize, TrustedEntry<T>>,
    /// Size of the confidence-filtered set the members were drawn from.
    pub confident_count: usize,
    /// False when too few confident samples were available to cluster.
    pub clustered: bool,
}

impl<T: Scalar> TrustedSet<T> {
    pub fn empty() -> Self {
        Self {
            members: BTreeMap::new(),
            confident_count: 0,
            clustered: false,
        }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, index: usize) -> bool {
        self.members.contains_key(&index)
    }

    pub fn get(&self, index: usize) -> Option<&TrustedEntry<T>> {
        self.members.get(&index)
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.members.keys().copied()
    }

    /// Writes `index,predicted_class,confidence,cluster` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "index,predicted_class,confidence,cluster")?;
        for (i, e) in &self.members {
            let cluster = e.cluster.map(|c| c.to_string()).unwrap_or_default();
            writeln!(out, "{i},{},{},{cluster}", e.predicted, e.confidence)?;
        }
        Ok(())
    }
}

fn l2_normalize_rows<T: Scalar>(m: &Matrix<T>) -> Matrix<T> {
    let mut out = m.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let norm = row.iter().map(|&v| v * v).sum::<T>().sqrt();
        if norm > T::zero() {
            row.iter_mut().for_each(|v| *v /= norm);
        }
    }
    out
}

/// Confidence filter, then k-means (k = class count) on L2-normalized
/// embeddings of the survivors, then the cluster/prediction consistency
/// filter. With fewer confident samples than classes the confident set is
/// returned unclustered.
pub fn build_trusted_set<T: Scalar>(
    table: &PseudoLabelTable<T>,
    tau_select: f64,
    num_classes: usize,
    max_iters: usize,
    seed: u64,
) -> Result<TrustedSet<T>> {
    let confident = confident_indices(table, tau_select);
    let entry = |row: usize, cluster: Option<usize>| TrustedEntry {
        outer: table.soft.row(row).to_vec(),
        predicted: table.predicted(row),
        confidence: table.confidence(row),
        cluster,
    };

    if confident.len() < num_classes.max(1) {
        if !confident.is_empty() {
            log::warn!(
                "only {} confident pseudo labels for {num_classes} classes; skipping clustering",
                confident.len()
            );
        }
        return Ok(TrustedSet {
            members: confident.iter().map(|&r| (table.indices[r], entry(r, None))).collect(),
            confident_count: confident.len(),
            clustered: false,
        });
    }

    let emb = l2_normalize_rows(&table.embeddings.select_rows(&confident));
    let km = kmeans(&emb, num_classes, max_iters, seed)?;
    let predicted: Vec<usize> = confident.iter().map(|&r| table.predicted(r)).collect();
    let kept = consistency_filter(&km.assignments, &predicted)?;
    Ok(TrustedSet {
        members: kept
            .into_iter()
            .map(|j| {
                let r = confident[j];
                (table.indices[r], entry(r, Some(km.assignments[j])))
            })
            .collect(),
        confident_count: confident.len(),
        clustered: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::StandardNormal;

    fn table(soft: &[[f64; 2]], emb: &[[f64; 2]]) -> PseudoLabelTable<f64> {
        PseudoLabelTable {
            indices: (100..100 + soft.len()).collect(),
            soft: Matrix::from_rows(soft).unwrap(),
            embeddings: Matrix::from_rows(emb).unwrap(),
        }
    }

    fn blobs(seed: u64) -> Matrix<f64> {
        let mut r = rng::seeded(seed);
        let mut rows = Vec::new();
        for centre in [0.0, 10.0] {
            for _ in 0..50 {
                let a: f64 = r.sample(StandardNormal);
                let b: f64 = r.sample(StandardNormal);
                rows.push([centre + 0.1 * a, centre + 0.1 * b]);
            }
        }
        Matrix::from_rows(&rows).unwrap()
    }

    #[test]
    fn confidence_threshold_is_inclusive() {
        let t = table(&[[0.81, 0.19], [0.80, 0.20], [0.79, 0.21]], &[[0.0, 0.0]; 3]);
        assert_eq!(confident_indices(&t, 0.80), vec![0, 1]);
        assert!(confident_indices(&t, 1.0).is_empty());
        assert_eq!(confident_indices(&t, 1e-9), vec![0, 1, 2]);
    }

    #[test]
    fn kmeans_separates_blobs() {
        let data = blobs(5);
        let km = kmeans(&data, 2, 50, 1).unwrap();
        let first = km.assignments[0];
        assert!(km.assignments[..50].iter().all(|&a| a == first));
        assert!(km.assignments[50..].iter().all(|&a| a != first));
    }

    #[test]
    fn kmeans_with_k_equal_m() {
        let data = Matrix::from_rows(&[[0.0, 1.0], [2.0, 3.0], [5.0, -1.0], [0.5, 0.5]]).unwrap();
        let km = kmeans(&data, 4, 10, 3).unwrap();
        let mut a = km.assignments.clone();
        a.sort();
        a.dedup();
        assert_eq!(a.len(), 4);
        assert_eq!(*km.objective_history.last().unwrap(), 0.0);
    }

    #[test]
    fn kmeans_is_deterministic_and_monotone() {
        let mut r = rng::seeded(42);
        let rows: Vec<[f64; 3]> = (0..200)
            .map(|_| [r.random::<f64>(), r.random::<f64>(), r.random::<f64>()])
            .collect();
        let data = Matrix::from_rows(&rows).unwrap();
        let a = kmeans(&data, 5, 100, 7).unwrap();
        let b = kmeans(&data, 5, 100, 7).unwrap();
        assert_eq!(a, b);
        for w in a.objective_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "{:?}", a.objective_history);
        }
    }

    #[test]
    fn kmeans_needs_enough_points() {
        let data = Matrix::<f64>::zeros(2, 3);
        assert!(matches!(kmeans(&data, 3, 10, 0), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn consistency_rule() {
        // clusters A=0, B=1
        let kept = consistency_filter(&[0, 0, 0, 1, 1], &[0, 0, 1, 1, 1]).unwrap();
        assert_eq!(kept, vec![0, 1, 3, 4]);
        assert_eq!(consistency_filter(&[0, 0, 0], &[2, 2, 2]).unwrap(), vec![0, 1, 2]);
        assert_eq!(consistency_filter(&[0, 1, 2], &[2, 0, 1]).unwrap(), vec![0, 1, 2]);
        // tie in cluster 0 between classes 1 and 3 resolves to 1
        assert_eq!(consistency_filter(&[0, 0], &[3, 1]).unwrap(), vec![1]);
        assert!(consistency_filter(&[0], &[0, 1]).is_err());
    }

    #[test]
    fn trusted_set_pipeline() {
        let empty = table(&[[0.6, 0.4], [0.5, 0.5]], &[[1.0, 0.0], [0.0, 1.0]]);
        let t = build_trusted_set(&empty, 0.8, 2, 10, 0).unwrap();
        assert!(t.is_empty());

        // two tight groups in embedding space; predictions align with groups,
        // except row 4 which is predicted class 1 but embedded with class 0
        let soft = [
            [0.9, 0.1],
            [0.95, 0.05],
            [0.85, 0.15],
            [0.1, 0.9],
            [0.12, 0.88],
            [0.2, 0.8],
            [0.05, 0.95],
        ];
        let emb = [
            [1.0, 0.0],
            [0.99, 0.05],
            [0.98, 0.02],
            [0.0, 1.0],
            [1.0, 0.01],
            [0.03, 0.97],
            [0.02, 1.0],
        ];
        let t = build_trusted_set(&table(&soft, &emb), 0.8, 2, 20, 0).unwrap();
        assert!(t.clustered);
        assert_eq!(t.confident_count, 7);
        assert_eq!(t.indices().collect::<Vec<_>>(), vec![100, 101, 102, 103, 105, 106]);
        assert_eq!(t.get(100).unwrap().outer, vec![0.9, 0.1]);

        let aligned = [[0.9, 0.1], [0.95, 0.05], [0.1, 0.9], [0.05, 0.95]];
        let emb = [[1.0, 0.0], [0.9, 0.1], [0.0, 1.0], [0.1, 0.9]];
        let t = build_trusted_set(&table(&aligned, &emb), 0.8, 2, 20, 0).unwrap();
        assert_eq!(t.len(), 4);
    }

    #[test]
    fn too_few_confident_samples_skip_clustering() {
        let t = table(&[[0.9, 0.1], [0.5, 0.5]], &[[1.0, 0.0], [0.0, 1.0]]);
        let set = build_trusted_set(&t, 0.8, 2, 10, 0).unwrap();
        assert!(!set.clustered);
        assert_eq!(set.indices().collect::<Vec<_>>(), vec![100]);
        let mut buf = Vec::new();
        set.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "index,predicted_class,confidence,cluster\n100,0,0.9,\n"
        );
    }
}
