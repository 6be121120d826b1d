//! Agglomerative clustering of gene columns.
//!
//! Merges are found with the nearest-neighbor-chain algorithm, which is exact
//! for the reducible linkages offered here, then sorted by height. Node ids
//! follow the usual dendrogram convention: leaves are `0..n`, the cluster
//! created by merge `m` is `n + m`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Matrix;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Linkage {
    #[default]
    Ward,
    Single,
    Complete,
    Average,
}

impl std::str::FromStr for Linkage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ward" => Ok(Linkage::Ward),
            "single" => Ok(Linkage::Single),
            "complete" => Ok(Linkage::Complete),
            "average" => Ok(Linkage::Average),
            other => Err(Error::Input(format!("unknown linkage {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub height: f64,
    /// Number of leaves under the new node.
    pub size: usize,
}

/// Full dendrogram over `leaves` observations, merges in non-decreasing height order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dendrogram {
    pub leaves: usize,
    pub merges: Vec<Merge>,
}

impl Dendrogram {
    /// Cluster index of every leaf after stopping `k` clusters short of the root.
    /// Clusters are numbered by their smallest leaf.
    pub fn cut(&self, k: usize) -> Result<Vec<usize>> {
        let n = self.leaves;
        if k == 0 || k > n {
            return Err(Error::Input(format!("cannot cut {n} leaves into {k} clusters")));
        }
        let mut parent: Vec<usize> = (0..2 * n).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for (m, merge) in self.merges.iter().take(n - k).enumerate() {
            let a = find(&mut parent, merge.left);
            let b = find(&mut parent, merge.right);
            parent[a] = n + m;
            parent[b] = n + m;
        }
        let roots: Vec<usize> = (0..n).map(|i| find(&mut parent, i)).collect();
        let mut label_of_root = std::collections::HashMap::new();
        Ok(roots
            .iter()
            .map(|r| {
                let next = label_of_root.len();
                *label_of_root.entry(*r).or_insert(next)
            })
            .collect())
    }

    /// Newick rendering with branch lengths equal to height differences.
    pub fn to_newick(&self, names: &[String]) -> String {
        let n = self.leaves;
        if n == 1 {
            return format!("{};", escape(&names[0]));
        }
        let height = |id: usize| if id < n { 0.0 } else { self.merges[id - n].height };
        let mut stack = vec![(2 * n - 2, false)];
        let mut rendered: Vec<Option<String>> = vec![None; 2 * n - 1];
        while let Some((id, expanded)) = stack.pop() {
            if id < n {
                rendered[id] = Some(escape(&names[id]));
                continue;
            }
            let m = &self.merges[id - n];
            if !expanded {
                stack.push((id, true));
                stack.push((m.right, false));
                stack.push((m.left, false));
            } else {
                let l = rendered[m.left].take().unwrap();
                let r = rendered[m.right].take().unwrap();
                rendered[id] = Some(format!(
                    "({l}:{},{r}:{})",
                    m.height - height(m.left),
                    m.height - height(m.right)
                ));
            }
        }
        format!("{};", rendered[2 * n - 2].take().unwrap())
    }
}

fn escape(name: &str) -> String {
    if name.chars().any(|c| "(),:;' \t\n[]".contains(c)) {
        format!("'{}'", name.replace('\'', "''"))
    } else {
        name.to_string()
    }
}

/// Clusters the columns of `data` (each column one observation).
pub fn cluster_columns(data: &Matrix, linkage: Linkage) -> Result<Dendrogram> {
    let n = data.cols();
    if n < 2 {
        return Err(Error::Size(format!("need at least 2 columns to cluster, got {n}")));
    }
    // squared Euclidean distances between columns
    let cols: Vec<Vec<f64>> = (0..n).map(|c| (0..data.rows()).map(|r| data.get(r, c)).collect()).collect();
    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d2: f64 = cols[i].iter().zip(&cols[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            let d = if linkage == Linkage::Ward { d2 } else { d2.sqrt() };
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }
    }
    let merges = nn_chain(n, dist, linkage);
    Ok(Dendrogram { leaves: n, merges })
}

/// Nearest-neighbor chain. `dist` holds squared distances for Ward and plain
/// distances otherwise; slot `i` is reused for the cluster merged into it.
fn nn_chain(n: usize, mut dist: Vec<f64>, linkage: Linkage) -> Vec<Merge> {
    let mut size = vec![1usize; n];
    let mut active = vec![true; n];
    let mut raw: Vec<(usize, usize, f64)> = Vec::with_capacity(n - 1);
    let mut chain: Vec<usize> = Vec::with_capacity(n);

    for _ in 0..n - 1 {
        if chain.is_empty() {
            chain.push((0..n).find(|&i| active[i]).unwrap());
        }
        let (a, b, d_ab) = loop {
            let x = *chain.last().unwrap();
            let prev = if chain.len() >= 2 { Some(chain[chain.len() - 2]) } else { None };
            // prefer the previous chain element on ties so the chain terminates
            let (mut best, mut best_d) = match prev {
                Some(p) => (p, dist[x * n + p]),
                None => (usize::MAX, f64::INFINITY),
            };
            for y in 0..n {
                if y != x && active[y] && dist[x * n + y] < best_d {
                    best = y;
                    best_d = dist[x * n + y];
                }
            }
            if Some(best) == prev {
                chain.pop();
                chain.pop();
                break (x.min(best), x.max(best), best_d);
            }
            chain.push(best);
        };

        let (na, nb) = (size[a] as f64, size[b] as f64);
        for k in 0..n {
            if !active[k] || k == a || k == b {
                continue;
            }
            let (dak, dbk) = (dist[a * n + k], dist[b * n + k]);
            let nk = size[k] as f64;
            let updated = match linkage {
                Linkage::Ward => ((na + nk) * dak + (nb + nk) * dbk - nk * d_ab) / (na + nb + nk),
                Linkage::Single => dak.min(dbk),
                Linkage::Complete => dak.max(dbk),
                Linkage::Average => (na * dak + nb * dbk) / (na + nb),
            };
            dist[a * n + k] = updated;
            dist[k * n + a] = updated;
        }
        active[b] = false;
        size[a] += size[b];
        let height = if linkage == Linkage::Ward { d_ab.max(0.0).sqrt() } else { d_ab };
        raw.push((a, b, height));
    }

    // Relabel slot-based merges into dendrogram node ids in height order.
    let mut order: Vec<usize> = (0..raw.len()).collect();
    order.sort_by(|&x, &y| raw[x].2.total_cmp(&raw[y].2));
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    let mut node_of_root: Vec<usize> = (0..n).collect();
    let mut leaf_count = vec![1usize; n];
    let mut merges = Vec::with_capacity(raw.len());
    for (m, &idx) in order.iter().enumerate() {
        let (a, b, height) = raw[idx];
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        let (na, nb) = (node_of_root[ra], node_of_root[rb]);
        let merged = leaf_count[ra] + leaf_count[rb];
        parent[rb] = ra;
        node_of_root[ra] = n + m;
        leaf_count[ra] = merged;
        merges.push(Merge {
            left: na.min(nb),
            right: na.max(nb),
            height,
            size: merged,
        });
    }
    merges
}
