//! Inverted-file approximate search: k-means coarse quantizer over the dense
//! rows, probing the closest lists at query time.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::dense::{dot, DenseIndex};
use super::{CandidateSet, RetrievalError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IvfConfig {
    /// Number of lists; `None` picks ⌈√n⌉.
    pub lists: Option<usize>,
    /// Lists scanned per query; `None` picks half of the lists.
    pub probes: Option<usize>,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for IvfConfig {
    fn default() -> Self {
        IvfConfig {
            lists: None,
            probes: None,
            iterations: 8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct IvfIndex {
    base: DenseIndex,
    centroids: Vec<Vec<f32>>,
    members: Vec<Vec<usize>>,
    probes: usize,
}

fn normalized(mut v: Vec<f64>) -> Vec<f32> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v.into_iter().map(|x| x as f32).collect()
}

fn nearest(centroids: &[Vec<f32>], row: &[f32]) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let s = dot(centroid, row);
        if s > best.1 {
            best = (c, s);
        }
    }
    best.0
}

impl IvfIndex {
    /// Spherical k-means with seeded initial centroids.
    pub fn build(base: DenseIndex, config: IvfConfig) -> Self {
        let n = base.len();
        let lists = config
            .lists
            .unwrap_or_else(|| (n as f64).sqrt().ceil() as usize)
            .clamp(1, n.max(1));
        let probes = config.probes.unwrap_or(lists.div_ceil(2)).clamp(1, lists);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut centroids: Vec<Vec<f32>> = if n == 0 {
            Vec::new()
        } else {
            let mut picks = sample(&mut rng, n, lists).into_vec();
            picks.sort_unstable();
            picks.into_iter().map(|i| base.row(i).to_vec()).collect()
        };
        let mut assign = vec![0usize; n];
        for _ in 0..config.iterations {
            for (i, a) in assign.iter_mut().enumerate() {
                *a = nearest(&centroids, base.row(i));
            }
            let mut sums = vec![vec![0.0f64; base.dimension()]; centroids.len()];
            let mut counts = vec![0usize; centroids.len()];
            for (i, &a) in assign.iter().enumerate() {
                counts[a] += 1;
                for (s, &x) in sums[a].iter_mut().zip(base.row(i)) {
                    *s += x as f64;
                }
            }
            for (c, sum) in sums.into_iter().enumerate() {
                if counts[c] > 0 {
                    centroids[c] = normalized(sum);
                }
            }
        }
        let mut members = vec![Vec::new(); centroids.len()];
        for i in 0..n {
            members[nearest(&centroids, base.row(i))].push(i);
        }
        IvfIndex {
            base,
            centroids,
            members,
            probes,
        }
    }

    pub fn base(&self) -> &DenseIndex {
        &self.base
    }

    pub fn lists(&self) -> usize {
        self.centroids.len()
    }

    pub fn probes(&self) -> usize {
        self.probes
    }

    pub fn search(
        &self,
        query_id: &str,
        query: &[f32],
        k: usize,
        exclude_id: Option<&str>,
    ) -> Result<CandidateSet, RetrievalError> {
        if query.len() != self.base.dimension() {
            return Err(RetrievalError::Dimension {
                expected: self.base.dimension(),
                got: query.len(),
            });
        }
        let mut order: Vec<(usize, f64)> = self
            .centroids
            .iter()
            .enumerate()
            .map(|(c, centroid)| (c, dot(centroid, query)))
            .collect();
        order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let excluded = exclude_id.and_then(|id| self.base.ordinal(id));
        let scored = order
            .iter()
            .take(self.probes)
            .flat_map(|&(c, _)| self.members[c].iter().copied())
            .filter(|&i| Some(i) != excluded)
            .map(|i| (i, dot(self.base.row(i), query)))
            .collect();
        Ok(self.base.to_candidates(query_id, k, scored))
    }

    pub fn search_product(&self, product_id: &str, k: usize) -> Result<CandidateSet, RetrievalError> {
        let q = self
            .base
            .vector_of(product_id)
            .ok_or_else(|| RetrievalError::NotFound(product_id.to_string()))?
            .to_vec();
        self.search(product_id, &q, k, Some(product_id))
    }
}
