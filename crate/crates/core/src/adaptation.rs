//! DBSCAN pseudo-labelling on a precomputed distance matrix.

use std::collections::VecDeque;

use rayon::prelude::*;
use serde::Serialize;

use crate::data::{ManifestEntry, Split};
use crate::error::{Error, Result};
use crate::retrieval::DistanceMatrix;

pub const NOISE: i64 = -1;
pub const DEFAULT_PERCENTILE: f64 = 0.16;
pub const DEFAULT_MIN_PTS: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterAssignment {
    pub labels: Vec<i64>,
    pub eps: f64,
    pub min_pts: usize,
}

impl ClusterAssignment {
    pub fn num_clusters(&self) -> usize {
        self.labels.iter().copied().max().map_or(0, |m| (m + 1).max(0) as usize)
    }

    pub fn num_noise(&self) -> usize {
        self.labels.iter().filter(|&&l| l == NOISE).count()
    }

    pub fn summary(&self) -> ClusterSummary {
        ClusterSummary {
            num_clusters: self.num_clusters(),
            num_noise: self.num_noise(),
            eps_used: self.eps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterSummary {
    pub num_clusters: usize,
    pub num_noise: usize,
    pub eps_used: f64,
}

/// Rejects non-square, asymmetric or negative matrices.
pub fn check_metric(d: &DistanceMatrix) -> Result<()> {
    if d.rows() != d.cols() {
        return Err(Error::DimMismatch(format!(
            "distance matrix is {}×{}, expected square",
            d.rows(),
            d.cols()
        )));
    }
    let n = d.rows();
    for i in 0..n {
        for j in 0..n {
            let v = d.get(i, j);
            if v < 0.0 {
                return Err(Error::NegativeDistance(i, j));
            }
            if j > i && v != d.get(j, i) {
                return Err(Error::Asymmetric(i, j));
            }
        }
    }
    Ok(())
}

/// `(D + Dᵀ) / 2` with a zero diagonal. Needed because the occlusion-aware
/// distance only looks at the query's visible parts.
pub fn symmetrize(d: &DistanceMatrix) -> Result<DistanceMatrix> {
    if d.rows() != d.cols() {
        return Err(Error::DimMismatch(format!(
            "distance matrix is {}×{}, expected square",
            d.rows(),
            d.cols()
        )));
    }
    let n = d.rows();
    let mut values = vec![0.0f32; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                values[i * n + j] = (d.get(i, j) + d.get(j, i)) * 0.5;
            }
        }
    }
    DistanceMatrix::new(n, n, values)
}

/// Percentile `p` (0–100, linear interpolation between order statistics) of
/// the strictly upper-triangular entries.
pub fn estimate_eps(d: &DistanceMatrix, p: f64) -> Result<f64> {
    check_metric(d)?;
    let n = d.rows();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "eps estimation needs at least 2 samples, got {n}"
        )));
    }
    if !(0.0..=100.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("percentile {p} outside [0, 100]")));
    }
    let mut upper: Vec<f64> = (0..n)
        .flat_map(|i| d.row(i)[i + 1..].iter().map(|&v| v as f64))
        .collect();
    upper.sort_by(f64::total_cmp);
    let pos = p / 100.0 * (upper.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(upper.len() - 1);
    let (a, b) = (upper[lo], upper[hi]);
    Ok((a + (pos - lo as f64) * (b - a)).clamp(a, b))
}

/// Neighbour lists (self included), ascending by index.
fn neighbours(d: &DistanceMatrix, eps: f64) -> Vec<Vec<usize>> {
    (0..d.rows())
        .into_par_iter()
        .map(|i| {
            d.row(i)
                .iter()
                .enumerate()
                .filter(|&(j, &v)| j == i || v as f64 <= eps)
                .map(|(j, _)| j)
                .collect()
        })
        .collect()
}

/// Density-based clustering. Clusters are numbered in the order their lowest
/// core point appears; a border point reachable from several clusters joins
/// the first one that reaches it.
pub fn dbscan(d: &DistanceMatrix, eps: f64, min_pts: usize) -> Result<ClusterAssignment> {
    check_metric(d)?;
    if !eps.is_finite() || eps <= 0.0 {
        return Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")));
    }
    if min_pts == 0 {
        return Err(Error::InvalidArgument("min_pts must be at least 1".into()));
    }
    let nbrs = neighbours(d, eps);
    let core: Vec<bool> = nbrs.iter().map(|n| n.len() >= min_pts).collect();
    let mut labels = vec![NOISE; d.rows()];
    let mut next = 0i64;
    let mut queue = VecDeque::new();
    for seed in 0..d.rows() {
        if !core[seed] || labels[seed] != NOISE {
            continue;
        }
        labels[seed] = next;
        queue.push_back(seed);
        while let Some(i) = queue.pop_front() {
            for &j in &nbrs[i] {
                if labels[j] == NOISE {
                    labels[j] = next;
                    if core[j] {
                        queue.push_back(j);
                    }
                }
            }
        }
        next += 1;
    }
    Ok(ClusterAssignment {
        labels,
        eps,
        min_pts,
    })
}

/// Relabels clustered samples as training identities and drops noise.
pub fn pseudo_label_manifest(
    entries: &[ManifestEntry],
    assignment: &ClusterAssignment,
) -> Result<Vec<ManifestEntry>> {
    if entries.len() != assignment.labels.len() {
        return Err(Error::LengthMismatch {
            expected: entries.len(),
            found: assignment.labels.len(),
        });
    }
    Ok(entries
        .iter()
        .zip(&assignment.labels)
        .filter(|&(_, &l)| l != NOISE)
        .map(|(e, &l)| ManifestEntry {
            person_id: l,
            split: Split::Train,
            ..e.clone()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn matrix(n: usize, f: impl Fn(usize, usize) -> f32) -> DistanceMatrix {
        let v = (0..n * n)
            .map(|k| if k / n == k % n { 0.0 } else { f(k / n, k % n) })
            .collect();
        DistanceMatrix::new(n, n, v).unwrap()
    }

    fn blobs() -> DistanceMatrix {
        matrix(10, |i, j| if i / 5 == j / 5 { 0.1 } else { 1.0 })
    }

    /// Core components via union-find; border points take the smallest
    /// component id among their core neighbours.
    pub(crate) fn reference(d: &DistanceMatrix, eps: f64, min_pts: usize) -> Vec<i64> {
        let n = d.rows();
        let near = |i: usize, j: usize| i == j || d.get(i, j) as f64 <= eps;
        let core: Vec<bool> = (0..n)
            .map(|i| (0..n).filter(|&j| near(i, j)).count() >= min_pts)
            .collect();
        let mut parent: Vec<usize> = (0..n).collect();
        fn root(p: &mut [usize], mut i: usize) -> usize {
            while p[i] != i {
                i = p[i];
            }
            i
        }
        for i in 0..n {
            for j in 0..n {
                if core[i] && core[j] && near(i, j) {
                    let (a, b) = (root(&mut parent, i), root(&mut parent, j));
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
        let mut ids = vec![NOISE; n];
        let mut next = 0;
        let mut comp = vec![NOISE; n];
        for i in 0..n {
            if core[i] {
                let r = root(&mut parent, i);
                if comp[r] == NOISE {
                    comp[r] = next;
                    next += 1;
                }
                ids[i] = comp[r];
            }
        }
        (0..n)
            .map(|i| {
                if core[i] {
                    ids[i]
                } else {
                    (0..n)
                        .filter(|&j| core[j] && near(i, j))
                        .map(|j| ids[j])
                        .min()
                        .unwrap_or(NOISE)
                }
            })
            .collect()
    }

    #[test]
    fn two_blobs() {
        let a = dbscan(&blobs(), 0.3, 3).unwrap();
        assert_eq!(a.labels, vec![0, 0, 0, 0, 0, 1, 1, 1, 1, 1]);
        assert_eq!((a.num_clusters(), a.num_noise()), (2, 0));
        assert_eq!(a.labels, reference(&blobs(), 0.3, 3));
    }

    #[test]
    fn degenerate_settings() {
        let d = matrix(6, |i, j| 0.5 + 0.01 * (i + j) as f32);
        let a = dbscan(&d, 0.1, 2).unwrap();
        assert_eq!(a.num_noise(), 6);
        assert_eq!(a.num_clusters(), 0);
        let a = dbscan(&d, 10.0, 1).unwrap();
        assert_eq!(a.labels, vec![0; 6]);
        let a = dbscan(&d, 1e-9, 1).unwrap();
        assert_eq!(a.labels, vec![0, 1, 2, 3, 4, 5]);
    }

    #[test]
    fn border_point_joins_first_cluster() {
        // two dense groups of four, index 4 is within eps of one core point in each
        let pos = [0.0f32, 0.03, 0.06, 0.1, 0.5, 0.9, 0.94, 0.97, 1.0];
        let d = matrix(9, |i, j| (pos[i] - pos[j]).abs());
        let a = dbscan(&d, 0.41, 4).unwrap();
        assert_eq!(a.labels, vec![0, 0, 0, 0, 0, 1, 1, 1, 1]);
        assert_eq!(a.labels, reference(&d, 0.41, 4));
        let a = dbscan(&d, 0.2, 4).unwrap();
        assert_eq!(a.labels[4], NOISE);
    }

    #[test]
    fn rejects_bad_input() {
        let d = DistanceMatrix::new(2, 2, vec![0.0, 0.1, 0.2, 0.0]).unwrap();
        assert!(matches!(dbscan(&d, 0.5, 1), Err(Error::Asymmetric(0, 1))));
        let d = DistanceMatrix::new(2, 2, vec![0.0, -0.1, -0.1, 0.0]).unwrap();
        assert!(matches!(dbscan(&d, 0.5, 1), Err(Error::NegativeDistance(0, 1))));
        assert!(dbscan(&blobs(), 0.0, 1).is_err());
        assert!(dbscan(&blobs(), 0.3, 0).is_err());
        let one = DistanceMatrix::new(1, 1, vec![0.0]).unwrap();
        assert!(estimate_eps(&one, 50.0).is_err());
    }

    #[test]
    fn eps_examples() {
        assert_eq!(estimate_eps(&matrix(5, |_, _| 0.7), 0.16).unwrap(), 0.7f32 as f64);
        let d = matrix(3, |i, j| match i + j {
            1 => 0.1,
            2 => 0.2,
            _ => 0.3,
        });
        assert_eq!(estimate_eps(&d, 50.0).unwrap(), 0.2f32 as f64);
    }

    #[test]
    fn symmetrize_averages() {
        let d = DistanceMatrix::new(2, 2, vec![0.1, 0.2, 0.4, 0.3]).unwrap();
        let s = symmetrize(&d).unwrap();
        assert_eq!(s.values(), &[0.0, 0.3, 0.3, 0.0]);
        check_metric(&s).unwrap();
    }

    fn entry(id: &str) -> ManifestEntry {
        ManifestEntry {
            image_id: id.into(),
            person_id: crate::data::UNLABELED,
            camera_id: 2,
            split: Split::Train,
            feature: Some(format!("{id}.etns")),
            keypoints: None,
            labelmap: None,
        }
    }

    #[test]
    fn pseudo_labels() {
        let entries: Vec<_> = ["a", "b", "c"].into_iter().map(entry).collect();
        let noise = ClusterAssignment {
            labels: vec![NOISE; 3],
            eps: 0.1,
            min_pts: 2,
        };
        assert!(pseudo_label_manifest(&entries, &noise).unwrap().is_empty());
        let own = ClusterAssignment {
            labels: vec![0, 1, 2],
            eps: 1e-9,
            min_pts: 1,
        };
        let out = pseudo_label_manifest(&entries, &own).unwrap();
        assert_eq!(out.iter().map(|e| e.person_id).collect::<Vec<_>>(), vec![0, 1, 2]);
        assert_eq!(out[1].image_id, "b");
        assert_eq!(out[1].camera_id, 2);
        let short = ClusterAssignment {
            labels: vec![0],
            eps: 0.1,
            min_pts: 1,
        };
        assert!(pseudo_label_manifest(&entries, &short).is_err());
    }

    pub(crate) fn arb_points() -> impl Strategy<Value = DistanceMatrix> {
        (2usize..=50).prop_flat_map(|n| {
            proptest::collection::vec((0f32..1.0, 0f32..1.0), n).prop_map(move |pts| {
                matrix(n, |i, j| {
                    let (a, b) = (pts[i], pts[j]);
                    // symmetric by construction: same operand order for (i, j) and (j, i)
                    let (a, b) = if i < j { (a, b) } else { (b, a) };
                    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
                })
            })
        })
    }

    fn partition(labels: &[i64]) -> Vec<Vec<usize>> {
        let mut groups: std::collections::BTreeMap<i64, Vec<usize>> = Default::default();
        for (i, &l) in labels.iter().enumerate() {
            if l != NOISE {
                groups.entry(l).or_default().push(i);
            }
        }
        let mut g: Vec<_> = groups.into_values().collect();
        g.sort();
        g
    }

    proptest! {
        #[test]
        fn matches_reference(d in arb_points(), eps in 0.02f64..0.4, min_pts in 1usize..6) {
            let a = dbscan(&d, eps, min_pts).unwrap();
            prop_assert_eq!(&a.labels, &reference(&d, eps, min_pts));
            let k = a.num_clusters() as i64;
            prop_assert!(a.labels.iter().all(|&l| l == NOISE || (0..k).contains(&l)));
        }

        #[test]
        fn permutation_keeps_partition(d in arb_points(), eps in 0.02f64..0.4, min_pts in 1usize..6, seed in any::<u64>()) {
            let n = d.rows();
            let a = dbscan(&d, eps, min_pts).unwrap();
            let near = |i: usize, j: usize| i == j || d.get(i, j) as f64 <= eps;
            let core: Vec<bool> = (0..n).map(|i| (0..n).filter(|&j| near(i, j)).count() >= min_pts).collect();
            // skip instances where a border point touches more than one cluster
            let ambiguous = (0..n).any(|i| {
                !core[i] && {
                    let mut ids: Vec<i64> = (0..n).filter(|&j| core[j] && near(i, j)).map(|j| a.labels[j]).collect();
                    ids.sort();
                    ids.dedup();
                    ids.len() > 1
                }
            });
            prop_assume!(!ambiguous);
            let mut perm: Vec<usize> = (0..n).collect();
            let mut s = seed;
            for i in (1..n).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                perm.swap(i, (s >> 33) as usize % (i + 1));
            }
            let pd = DistanceMatrix::new(n, n, (0..n * n).map(|k| d.get(perm[k / n], perm[k % n])).collect()).unwrap();
            let b = dbscan(&pd, eps, min_pts).unwrap();
            let mut back = vec![NOISE; n];
            for (k, &orig) in perm.iter().enumerate() {
                back[orig] = b.labels[k];
            }
            prop_assert_eq!(partition(&a.labels), partition(&back));
        }

        #[test]
        fn eps_monotone_and_matches_sort(d in arb_points(), p1 in 0f64..100.0, p2 in 0f64..100.0) {
            let (lo, hi) = if p1 <= p2 { (p1, p2) } else { (p2, p1) };
            prop_assert!(estimate_eps(&d, lo).unwrap() <= estimate_eps(&d, hi).unwrap());
            let n = d.rows();
            let mut v = vec![];
            for i in 0..n { for j in i + 1..n { v.push(d.get(i, j) as f64); } }
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            prop_assert_eq!(estimate_eps(&d, 0.0).unwrap(), v[0]);
            prop_assert_eq!(estimate_eps(&d, 100.0).unwrap(), v[v.len() - 1]);
        }
    }
}
