//! k-nearest-neighbour graphs and Leiden community detection.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::VecDeque;

use crate::error::{FcrError, Result};

/// Undirected weighted graph. Self-loops are carried in `strength` only.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    pub adj: Vec<Vec<(usize, f64)>>,
    pub strength: Vec<f64>,
}

impl Graph {
    pub fn n(&self) -> usize {
        self.adj.len()
    }

    pub fn total_strength(&self) -> f64 {
        self.strength.iter().sum()
    }

    /// Builds a graph from symmetric edge weights; duplicate edges are summed.
    pub fn from_edges(n: usize, edges: &[(usize, usize, f64)]) -> Self {
        let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        let mut strength = vec![0.0; n];
        for &(a, b, w) in edges {
            strength[a] += w;
            strength[b] += w;
            if a != b {
                adj[a].push((b, w));
                adj[b].push((a, w));
            }
        }
        for list in &mut adj {
            list.sort_by_key(|e| e.0);
            let mut merged: Vec<(usize, f64)> = Vec::with_capacity(list.len());
            for &(j, w) in list.iter() {
                match merged.last_mut() {
                    Some(last) if last.0 == j => last.1 += w,
                    _ => merged.push((j, w)),
                }
            }
            *list = merged;
        }
        Graph { adj, strength }
    }
}

/// Unweighted union kNN graph under Euclidean distance; ties broken by row index.
pub fn knn_graph(points: &Array2<f64>, k: usize) -> Result<Graph> {
    let n = points.nrows();
    if k == 0 || n < k + 1 {
        return Err(FcrError::Precondition(format!(
            "a {k}-nearest-neighbour graph needs at least {} rows, got {n}",
            k + 1
        )));
    }
    let mut edges = std::collections::BTreeSet::new();
    let mut dist: Vec<(f64, usize)> = Vec::with_capacity(n);
    for i in 0..n {
        dist.clear();
        let pi = points.row(i);
        for j in 0..n {
            if j != i {
                let d: f64 = pi
                    .iter()
                    .zip(points.row(j).iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                dist.push((d, j));
            }
        }
        dist.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(_, j) in &dist[..k] {
            edges.insert((i.min(j), i.max(j)));
        }
    }
    let edges: Vec<(usize, usize, f64)> = edges.into_iter().map(|(a, b)| (a, b, 1.0)).collect();
    Ok(Graph::from_edges(n, &edges))
}

struct Quality {
    gamma: f64,
    m2: f64,
}

impl Quality {
    fn gain(&self, w_to: f64, k_v: f64, k_comm: f64) -> f64 {
        w_to - self.gamma * k_v * k_comm / self.m2
    }
}

/// Queue-based local moving. Returns whether any node changed community.
fn move_nodes(g: &Graph, comm: &mut [usize], q: &Quality, rng: &mut ChaCha8Rng) -> bool {
    let n = g.n();
    let mut total = vec![0.0; n];
    let mut size = vec![0usize; n];
    for v in 0..n {
        total[comm[v]] += g.strength[v];
        size[comm[v]] += 1;
    }
    let mut free: Vec<usize> = (0..n).filter(|&c| size[c] == 0).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut queue: VecDeque<usize> = order.into_iter().collect();
    let mut queued = vec![true; n];
    let mut w_to = vec![0.0; n];
    let mut touched = Vec::new();
    let mut changed = false;
    while let Some(v) = queue.pop_front() {
        queued[v] = false;
        let cur = comm[v];
        for &(u, w) in &g.adj[v] {
            let c = comm[u];
            if w_to[c] == 0.0 {
                touched.push(c);
            }
            w_to[c] += w;
        }
        total[cur] -= g.strength[v];
        size[cur] -= 1;
        let kv = g.strength[v];
        let mut best = cur;
        let mut best_gain = q.gain(w_to[cur], kv, total[cur]);
        for &c in &touched {
            let gain = q.gain(w_to[c], kv, total[c]);
            if gain > best_gain + 1e-12 || (gain > best_gain - 1e-12 && c < best && best != cur) {
                best = c;
                best_gain = gain;
            }
        }
        if best_gain < -1e-12 && size[cur] > 0 {
            // An empty community beats every positive-cost move.
            best = free.pop().expect("an empty community exists while one is occupied by fewer");
        }
        if size[cur] == 0 && best != cur {
            free.push(cur);
        }
        total[best] += kv;
        size[best] += 1;
        if best != cur {
            comm[v] = best;
            changed = true;
            for &(u, _) in &g.adj[v] {
                if comm[u] != best && !queued[u] {
                    queued[u] = true;
                    queue.push_back(u);
                }
            }
        }
        for &c in &touched {
            w_to[c] = 0.0;
        }
        touched.clear();
    }
    changed
}

/// Greedy refinement: inside each community, singletons merge into
/// well-connected sub-communities of that community only.
fn refine(g: &Graph, comm: &[usize], q: &Quality, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = g.n();
    let mut refined: Vec<usize> = (0..n).collect();
    let mut r_total: Vec<f64> = g.strength.clone();
    let mut r_size = vec![1usize; n];
    let mut c_total = vec![0.0; n];
    for v in 0..n {
        c_total[comm[v]] += g.strength[v];
    }
    // Weight from each refined community to the rest of its parent community.
    let mut r_ext = vec![0.0; n];
    for v in 0..n {
        for &(u, w) in &g.adj[v] {
            if comm[u] == comm[v] {
                r_ext[v] += w;
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut w_to = vec![0.0; n];
    let mut touched = Vec::new();
    for v in order {
        if r_size[refined[v]] != 1 {
            continue;
        }
        let c = comm[v];
        let kv = g.strength[v];
        if r_ext[v] < q.gamma * kv * (c_total[c] - kv) / q.m2 {
            continue;
        }
        for &(u, w) in &g.adj[v] {
            if comm[u] == c && refined[u] != refined[v] {
                let r = refined[u];
                if w_to[r] == 0.0 {
                    touched.push(r);
                }
                w_to[r] += w;
            }
        }
        let mut best = None;
        let mut best_gain = 0.0;
        for &r in &touched {
            let well_connected = r_ext[r] >= q.gamma * r_total[r] * (c_total[c] - r_total[r]) / q.m2;
            if !well_connected {
                continue;
            }
            let gain = q.gain(w_to[r], kv, r_total[r]);
            if gain > best_gain + 1e-12 || (best.is_some() && (gain - best_gain).abs() <= 1e-12 && Some(r) < best) {
                best = Some(r);
                best_gain = gain;
            }
        }
        if let Some(r) = best {
            let old = refined[v];
            refined[v] = r;
            r_size[old] = 0;
            r_size[r] += 1;
            r_total[r] += kv;
            // External weight of the merged set: both sides' weights minus the edges now internal.
            r_ext[r] = r_ext[r] + r_ext[old] - 2.0 * w_to[r];
        }
        for &r in &touched {
            w_to[r] = 0.0;
        }
        touched.clear();
    }
    refined
}

fn relabel(labels: &[usize]) -> (Vec<usize>, usize) {
    let mut map = std::collections::HashMap::new();
    let out = labels
        .iter()
        .map(|l| {
            let next = map.len();
            *map.entry(*l).or_insert(next)
        })
        .collect();
    (out, map.len())
}

fn aggregate(g: &Graph, refined: &[usize], n_new: usize) -> Graph {
    let mut edges = Vec::new();
    let mut strength = vec![0.0; n_new];
    for v in 0..g.n() {
        strength[refined[v]] += g.strength[v];
        for &(u, w) in &g.adj[v] {
            if v < u && refined[u] != refined[v] {
                edges.push((refined[v], refined[u], w));
            }
        }
    }
    let mut agg = Graph::from_edges(n_new, &edges);
    agg.strength = strength;
    agg
}

/// Leiden community detection maximizing `Σ_c [e_c − γ·K_c²/(2m)]`.
/// Labels are numbered by first appearance.
pub fn leiden(g: &Graph, resolution: f64, seed: u64) -> Vec<usize> {
    let n = g.n();
    let m2 = g.total_strength();
    if n == 0 {
        return Vec::new();
    }
    if m2 <= 0.0 {
        return (0..n).collect();
    }
    let q = Quality {
        gamma: resolution,
        m2,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut graph = g.clone();
    let mut membership: Vec<usize> = (0..n).collect();
    let mut comm: Vec<usize> = (0..n).collect();
    loop {
        move_nodes(&graph, &mut comm, &q, &mut rng);
        let (packed, n_comm) = relabel(&comm);
        if n_comm == graph.n() {
            comm = packed;
            break;
        }
        let (mut refined, mut n_refined) = relabel(&refine(&graph, &packed, &q, &mut rng));
        if n_refined == graph.n() {
            // Refinement made no progress; aggregate by the partition itself.
            refined = packed.clone();
            n_refined = n_comm;
        }
        let mut next_comm = vec![0; n_refined];
        for v in 0..graph.n() {
            next_comm[refined[v]] = packed[v];
        }
        for m in membership.iter_mut() {
            *m = refined[*m];
        }
        graph = aggregate(&graph, &refined, n_refined);
        comm = next_comm;
    }
    let labels: Vec<usize> = membership.iter().map(|&m| comm[m]).collect();
    relabel(&labels).0
}

/// Modularity of a labeling at the given resolution, normalized by `2m`.
pub fn modularity(g: &Graph, labels: &[usize], resolution: f64) -> f64 {
    let m2 = g.total_strength();
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let mut internal = vec![0.0; k];
    let mut total = vec![0.0; k];
    for v in 0..g.n() {
        total[labels[v]] += g.strength[v];
        let self_loops = g.strength[v] - g.adj[v].iter().map(|e| e.1).sum::<f64>();
        internal[labels[v]] += self_loops;
        for &(u, w) in &g.adj[v] {
            if labels[u] == labels[v] {
                internal[labels[v]] += w;
            }
        }
    }
    (0..k)
        .map(|c| internal[c] / m2 - resolution * (total[c] / m2).powi(2))
        .sum()
}

/// kNN graph of the embeddings followed by Leiden.
pub fn cluster_labels(embeddings: &Array2<f64>, k_neighbors: usize, resolution: f64, seed: u64) -> Result<Vec<usize>> {
    if !(resolution.is_finite() && resolution > 0.0) {
        return Err(FcrError::Config(format!("resolution must be positive, got {resolution}")));
    }
    let g = knn_graph(embeddings, k_neighbors)?;
    Ok(leiden(&g, resolution, seed))
}
