//! Bottom-up agglomerative clustering. The default criterion is Ward's
//! minimum variance over Euclidean distance, maintained on cluster
//! centroids; single/complete/average linkage run on a distance matrix
//! with Lance-Williams updates. Ties always merge the lexicographically
//! smallest cluster pair.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Linkage {
    Ward,
    Single,
    Complete,
    Average,
}

/// Ward clustering into `k` groups. Labels are canonical: the cluster
/// containing the lowest point index gets label 0, the next unseen cluster
/// label 1, and so on.
pub fn agglomerative_cluster(points: &[Tensor], k: usize) -> Result<Vec<usize>> {
    agglomerative_cluster_with(points, k, Linkage::Ward)
}

pub fn agglomerative_cluster_with(
    points: &[Tensor],
    k: usize,
    linkage: Linkage,
) -> Result<Vec<usize>> {
    let n = points.len();
    if n == 0 {
        return Err(Error::Config("no points to cluster".into()));
    }
    if k == 0 || k > n {
        return Err(Error::Config(format!("cluster count {k} outside 1..={n}")));
    }
    let dim = points[0].numel();
    if points.iter().any(|p| p.numel() != dim) {
        return Err(Error::Contract("points of unequal dimension".into()));
    }
    let membership = match linkage {
        Linkage::Ward => ward(points, k, dim),
        _ => lance_williams(points, k, linkage),
    };
    Ok(canonical_labels(&membership, n))
}

/// Ward via centroids: merge cost is `n_i n_j / (n_i + n_j) |c_i - c_j|^2`.
fn ward(points: &[Tensor], k: usize, dim: usize) -> Vec<Vec<usize>> {
    struct Cluster {
        centroid: Vec<f64>,
        size: f64,
        members: Vec<usize>,
    }
    let mut clusters: Vec<Option<Cluster>> = points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            Some(Cluster {
                centroid: p.data.clone(),
                size: 1.0,
                members: vec![i],
            })
        })
        .collect();
    let mut active = clusters.len();

    while active > k {
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..clusters.len() {
            let Some(ci) = &clusters[i] else { continue };
            for j in (i + 1)..clusters.len() {
                let Some(cj) = &clusters[j] else { continue };
                let d2: f64 = ci
                    .centroid
                    .iter()
                    .zip(&cj.centroid)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                let cost = ci.size * cj.size / (ci.size + cj.size) * d2;
                let better = match best {
                    None => true,
                    Some((c, _, _)) => cost < c,
                };
                if better {
                    best = Some((cost, i, j));
                }
            }
        }
        let (_, i, j) = best.expect("at least two active clusters");
        let cj = clusters[j].take().unwrap();
        let ci = clusters[i].as_mut().unwrap();
        let total = ci.size + cj.size;
        for t in 0..dim {
            ci.centroid[t] = (ci.centroid[t] * ci.size + cj.centroid[t] * cj.size) / total;
        }
        ci.size = total;
        ci.members.extend(cj.members);
        active -= 1;
    }
    clusters
        .into_iter()
        .flatten()
        .map(|c| c.members)
        .collect()
}

fn lance_williams(points: &[Tensor], k: usize, linkage: Linkage) -> Vec<Vec<usize>> {
    let n = points.len();
    let mut dist = vec![f64::INFINITY; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d: f64 = points[i]
                .data
                .iter()
                .zip(&points[j].data)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }
    }
    let mut alive: Vec<bool> = vec![true; n];
    let mut sizes: Vec<f64> = vec![1.0; n];
    let mut members: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    let mut active = n;

    while active > k {
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..n {
            if !alive[i] {
                continue;
            }
            for j in (i + 1)..n {
                if !alive[j] {
                    continue;
                }
                let d = dist[i * n + j];
                if best.map_or(true, |(bd, _, _)| d < bd) {
                    best = Some((d, i, j));
                }
            }
        }
        let (_, i, j) = best.expect("at least two active clusters");
        for t in 0..n {
            if !alive[t] || t == i || t == j {
                continue;
            }
            let dit = dist[i * n + t];
            let djt = dist[j * n + t];
            let merged = match linkage {
                Linkage::Single => dit.min(djt),
                Linkage::Complete => dit.max(djt),
                Linkage::Average => (sizes[i] * dit + sizes[j] * djt) / (sizes[i] + sizes[j]),
                Linkage::Ward => unreachable!("ward handled separately"),
            };
            dist[i * n + t] = merged;
            dist[t * n + i] = merged;
        }
        sizes[i] += sizes[j];
        let moved = std::mem::take(&mut members[j]);
        members[i].extend(moved);
        alive[j] = false;
        active -= 1;
    }
    members
        .into_iter()
        .zip(alive)
        .filter_map(|(m, a)| if a { Some(m) } else { None })
        .collect()
}

fn canonical_labels(membership: &[Vec<usize>], n: usize) -> Vec<usize> {
    let mut raw = vec![usize::MAX; n];
    for (c, cluster) in membership.iter().enumerate() {
        for &p in cluster {
            raw[p] = c;
        }
    }
    let mut rename = vec![usize::MAX; membership.len()];
    let mut next = 0;
    let mut out = vec![0usize; n];
    for (p, &c) in raw.iter().enumerate() {
        if rename[c] == usize::MAX {
            rename[c] = next;
            next += 1;
        }
        out[p] = rename[c];
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Rng;

    fn blob(center: &[f64], count: usize, spread: f64, rng: &mut Rng) -> Vec<Tensor> {
        (0..count)
            .map(|_| {
                Tensor::new(
                    vec![center.len()],
                    center.iter().map(|&c| c + spread * rng.normal()).collect(),
                )
                .unwrap()
            })
            .collect()
    }

    #[test]
    fn k_equals_n_gives_singletons() {
        let mut rng = Rng::new(1);
        let points = blob(&[0.0, 0.0], 5, 1.0, &mut rng);
        let labels = agglomerative_cluster(&points, 5).unwrap();
        assert_eq!(labels, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn separated_blobs_recovered() {
        // two Gaussian blobs separated by 10 sigma
        let mut rng = Rng::new(2);
        let mut points = blob(&[0.0, 0.0], 20, 1.0, &mut rng);
        points.extend(blob(&[100.0, 100.0], 20, 1.0, &mut rng));
        let labels = agglomerative_cluster(&points, 2).unwrap();
        assert!(labels[..20].iter().all(|&l| l == labels[0]));
        assert!(labels[20..].iter().all(|&l| l == labels[20]));
        assert_ne!(labels[0], labels[20]);
    }

    #[test]
    fn partition_is_permutation_invariant() {
        let mut rng = Rng::new(3);
        let mut points = blob(&[0.0, 0.0], 8, 1.0, &mut rng);
        points.extend(blob(&[6.0, -3.0], 7, 1.0, &mut rng));
        points.extend(blob(&[-5.0, 8.0], 6, 1.0, &mut rng));
        let base = agglomerative_cluster(&points, 3).unwrap();

        let mut perm: Vec<usize> = (0..points.len()).collect();
        rng.shuffle(&mut perm);
        let permuted_points: Vec<Tensor> = perm.iter().map(|&i| points[i].clone()).collect();
        let permuted = agglomerative_cluster(&permuted_points, 3).unwrap();

        // same partition up to label renaming
        for a in 0..points.len() {
            for b in 0..points.len() {
                let same_base = base[perm[a]] == base[perm[b]];
                let same_perm = permuted[a] == permuted[b];
                assert_eq!(same_base, same_perm);
            }
        }
    }

    #[test]
    fn rejects_bad_k() {
        let points = vec![Tensor::zeros(vec![2]); 3];
        assert!(agglomerative_cluster(&points, 0).is_err());
        assert!(agglomerative_cluster(&points, 4).is_err());
    }

    #[test]
    fn alternative_linkages_run() {
        let mut rng = Rng::new(4);
        let mut points = blob(&[0.0], 6, 0.5, &mut rng);
        points.extend(blob(&[50.0], 6, 0.5, &mut rng));
        for linkage in [Linkage::Single, Linkage::Complete, Linkage::Average] {
            let labels = agglomerative_cluster_with(&points, 2, linkage).unwrap();
            assert_ne!(labels[0], labels[6], "{linkage:?}");
        }
    }
}
