//! Seeded synthetic graph generators: Erdős–Rényi for kernel and overhead
//! benchmarks, a two-block stochastic block model for training experiments.

use std::collections::HashSet;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::GraphError;
use crate::graph::{build_graph, BuildOptions, EdgeList, EdgeSchema, UnifiedGraph};
use crate::models::NodeDataset;
use crate::tensor::DenseTensor;

/// Samples distinct undirected pairs until the symmetrized graph has
/// `target_ecount` directed edge slots (target must be even; self-loops are
/// excluded).
pub fn erdos_renyi_edges(vcount: usize, target_ecount: usize, seed: u64) -> EdgeList {
    assert!(target_ecount % 2 == 0, "directed slot target must be even");
    let m = target_ecount / 2;
    let max_pairs = vcount * (vcount - 1) / 2;
    assert!(m <= max_pairs, "more edges requested than the graph can hold");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::with_capacity(m);
    let mut list = EdgeList::new(EdgeSchema::src_dst());
    while seen.len() < m {
        let a = rng.gen_range(0..vcount as u64);
        let b = rng.gen_range(0..vcount as u64);
        if a == b {
            continue;
        }
        let pair = (a.min(b), a.max(b));
        if seen.insert(pair) {
            list.push_edge(pair.0, pair.1);
        }
    }
    list.vcount_hint = vcount;
    list
}

pub fn erdos_renyi(
    vcount: usize,
    target_ecount: usize,
    seed: u64,
    need_edge_ids: bool,
) -> Result<UnifiedGraph, GraphError> {
    let list = erdos_renyi_edges(vcount, target_ecount, seed);
    build_graph(
        &list,
        vcount,
        BuildOptions { symmetrize: true, need_edge_ids, sort_neighbors: true },
    )
}

/// Banded graph: every vertex connects to `per_vertex` random neighbors
/// within `band` positions ahead (wrapping). Models the neighbor locality
/// of bandwidth-reduced real-world graphs (meshes, roads, RCM-reordered
/// matrices), where edge-ID indirections stay cache-resident.
pub fn banded(
    vcount: usize,
    per_vertex: usize,
    band: u64,
    seed: u64,
    need_edge_ids: bool,
) -> Result<UnifiedGraph, GraphError> {
    assert!(per_vertex as u64 <= band, "cannot pick more distinct offsets than the band holds");
    assert!((band as usize) < vcount, "band must be narrower than the vertex count");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut list = EdgeList::new(EdgeSchema::src_dst());
    let mut offsets: Vec<u64> = Vec::with_capacity(per_vertex);
    for i in 0..vcount as u64 {
        offsets.clear();
        while offsets.len() < per_vertex {
            let d = rng.gen_range(1..=band);
            if !offsets.contains(&d) {
                offsets.push(d);
                list.push_edge(i, (i + d) % vcount as u64);
            }
        }
    }
    list.vcount_hint = vcount;
    build_graph(
        &list,
        vcount,
        BuildOptions { symmetrize: true, need_edge_ids, sort_neighbors: true },
    )
}

/// Two-community stochastic block model over vertex blocks [0, n/2) and
/// [n/2, n); each within-block pair is an edge with probability `p_in`,
/// cross-block pairs with `p_out`.
pub fn sbm_edges(n: usize, p_in: f64, p_out: f64, seed: u64) -> EdgeList {
    let half = n / 2;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut list = EdgeList::new(EdgeSchema::src_dst());
    for i in 0..n as u64 {
        for j in (i + 1)..n as u64 {
            let same = ((i as usize) < half) == ((j as usize) < half);
            let p = if same { p_in } else { p_out };
            if rng.gen::<f64>() < p {
                list.push_edge(i, j);
            }
        }
    }
    list.vcount_hint = n;
    list
}

/// Bundled training dataset: SBM topology, features carrying a noisy
/// one-hot community signal, community labels, and a seeded 60/20/20 split.
pub fn sbm_dataset(
    n: usize,
    p_in: f64,
    p_out: f64,
    noise: f64,
    seed: u64,
    need_edge_ids: bool,
) -> Result<NodeDataset, GraphError> {
    let half = n / 2;
    let list = sbm_edges(n, p_in, p_out, seed);
    let graph = build_graph(
        &list,
        n,
        BuildOptions { symmetrize: true, need_edge_ids, sort_neighbors: true },
    )?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5bd1e995);
    let classes = 2;
    let feat = 4;
    let mut features = DenseTensor::zeros(&[n, feat]);
    let mut labels = Vec::with_capacity(n);
    for v in 0..n {
        let block = usize::from(v >= half);
        labels.push(block);
        for f in 0..feat {
            let signal = if f == block { 1.0 } else { 0.0 };
            let jitter: f64 = rng.gen::<f64>() * 2.0 - 1.0;
            features.set2(v, f, signal + noise * jitter);
        }
    }

    // Deterministic shuffled 60/20/20 split.
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    let mut train = vec![false; n];
    let mut val = vec![false; n];
    let mut test = vec![false; n];
    for (pos, &v) in order.iter().enumerate() {
        if pos < n * 6 / 10 {
            train[v] = true;
        } else if pos < n * 8 / 10 {
            val[v] = true;
        } else {
            test[v] = true;
        }
    }

    Ok(NodeDataset {
        graph: Arc::new(graph),
        features,
        labels,
        train_mask: train,
        val_mask: val,
        test_mask: test,
        num_classes: classes,
    })
}
