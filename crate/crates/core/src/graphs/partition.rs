//! Balanced greedy streaming partitioning and overlapping half-samples.

use super::{stratified_split, FederationDataset, GraphError, LocalGraph, SplitFractions, TaskKind};
use crate::rng::SeedStream;
use rand::seq::{index, SliceRandom};
use std::collections::VecDeque;

/// Number of half-size samples drawn from each base part.
pub const OVERLAP_SAMPLES: usize = 5;

/// Splits `global` into `m` disjoint, size-balanced clients.
///
/// Nodes are streamed in BFS order from a seeded root (further components
/// are entered from seeded restart nodes). Each node goes to the open part
/// holding most of its already-placed neighbors; the load penalty only
/// breaks ties, since part `i` is hard-capped at `⌊n/m⌋ + [i < n mod m]`
/// and part sizes therefore differ by at most one.
/// Edges between parts are dropped and counted. Client masks are fresh
/// stratified splits.
pub fn partition_nonoverlap(
    global: &LocalGraph,
    m: usize,
    seed: u64,
) -> Result<FederationDataset, GraphError> {
    let n = global.node_count();
    if m < 2 || m > n {
        return Err(GraphError::Infeasible(format!(
            "cannot split {n} nodes into {m} non-overlapping parts"
        )));
    }
    let root = SeedStream::new(seed);
    let parts = assign_parts(global, m, &root.named("stream"))?;
    if !is_disjoint_cover(&parts, n) {
        return Err(GraphError::Infeasible("parts do not form a disjoint cover".into()));
    }
    build_dataset(global, parts, &root.named("split"))
}

/// Overlapping clients: `⌊m/5⌋` balanced base parts, each sampled five
/// times at half its size without replacement.
pub fn partition_overlap(
    global: &LocalGraph,
    m: usize,
    seed: u64,
) -> Result<FederationDataset, GraphError> {
    let n = global.node_count();
    let base_count = m / OVERLAP_SAMPLES;
    if base_count == 0 {
        return Err(GraphError::Infeasible(format!(
            "overlapping partition needs at least {OVERLAP_SAMPLES} clients, got {m}"
        )));
    }
    if base_count > n {
        return Err(GraphError::Infeasible(format!(
            "cannot form {base_count} base parts from {n} nodes"
        )));
    }
    let root = SeedStream::new(seed);
    let bases = if base_count == 1 {
        vec![(0..n).collect::<Vec<_>>()]
    } else {
        assign_parts(global, base_count, &root.named("stream"))?
    };

    let sampler = root.named("sample");
    let mut clients = Vec::with_capacity(base_count * OVERLAP_SAMPLES);
    for (b, base) in bases.iter().enumerate() {
        let half = base.len() / 2;
        if half == 0 {
            return Err(GraphError::Infeasible(format!(
                "base part {b} has {} node(s); cannot take half",
                base.len()
            )));
        }
        for s in 0..OVERLAP_SAMPLES {
            let mut rng = sampler.child(b as u64).child(s as u64).rng();
            let mut nodes: Vec<usize> = index::sample(&mut rng, base.len(), half)
                .into_iter()
                .map(|i| base[i])
                .collect();
            nodes.sort_unstable();
            clients.push(nodes);
        }
    }
    build_dataset(global, clients, &root.named("split"))
}

/// Greedy streaming assignment; returns each part's sorted node list.
fn assign_parts(g: &LocalGraph, m: usize, stream: &SeedStream) -> Result<Vec<Vec<usize>>, GraphError> {
    let n = g.node_count();
    let adj = g.adjacency();
    let caps: Vec<usize> = (0..m).map(|i| n / m + usize::from(i < n % m)).collect();

    let mut restarts: Vec<usize> = (0..n).collect();
    restarts.shuffle(&mut stream.rng());

    let mut part = vec![usize::MAX; n];
    let mut load = vec![0usize; m];
    let mut queued = vec![false; n];
    let mut queue = VecDeque::new();
    let mut affinity = vec![0usize; m];

    for &start in &restarts {
        if queued[start] {
            continue;
        }
        queued[start] = true;
        queue.push_back(start);
        while let Some(v) = queue.pop_front() {
            affinity.iter_mut().for_each(|a| *a = 0);
            for &u in &adj[v] {
                if part[u] != usize::MAX {
                    affinity[part[u]] += 1;
                }
            }
            // Most neighbors first, then lightest load, then lowest index.
            let p = (0..m)
                .filter(|&p| load[p] < caps[p])
                .min_by_key(|&p| (std::cmp::Reverse(affinity[p]), load[p], p))
                .expect("total capacity equals node count");
            part[v] = p;
            load[p] += 1;
            for &u in &adj[v] {
                if !queued[u] {
                    queued[u] = true;
                    queue.push_back(u);
                }
            }
        }
    }

    let mut parts = vec![Vec::new(); m];
    for (v, &p) in part.iter().enumerate() {
        parts[p].push(v);
    }
    Ok(parts)
}

fn build_dataset(
    global: &LocalGraph,
    node_sets: Vec<Vec<usize>>,
    split_stream: &SeedStream,
) -> Result<FederationDataset, GraphError> {
    let n = global.node_count();
    // Which clients hold each node, to count edges covered by no client.
    let mut holders: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (c, nodes) in node_sets.iter().enumerate() {
        for &v in nodes {
            holders[v].push(c);
        }
    }
    let dropped = global
        .edges()
        .iter()
        .filter(|(u, v)| !holders[*u].iter().any(|c| holders[*v].contains(c)))
        .count();

    let mut clients = Vec::with_capacity(node_sets.len());
    for (c, nodes) in node_sets.iter().enumerate() {
        let sub = global.induced(nodes)?;
        let masks = stratified_split(
            sub.labels(),
            sub.num_classes(),
            SplitFractions::default(),
            &mut split_stream.child(c as u64).rng(),
        );
        clients.push(sub.with_masks(masks)?);
    }
    Ok(FederationDataset::new(clients, TaskKind::Multiclass)?.with_provenance(node_sets, dropped))
}

/// Checks that `node_maps` is a disjoint cover of `0..n`.
pub(crate) fn is_disjoint_cover(node_maps: &[Vec<usize>], n: usize) -> bool {
    let mut seen = vec![false; n];
    for v in node_maps.iter().flatten() {
        if *v >= n || seen[*v] {
            return false;
        }
        seen[*v] = true;
    }
    seen.into_iter().all(|s| s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphs::{synth_dataset, Masks, SynthSpec};
    use crate::numcore::DenseMatrix;

    fn two_cliques() -> LocalGraph {
        let mut edges = Vec::new();
        for base in [0, 50] {
            for u in 0..50 {
                for v in (u + 1)..50 {
                    edges.push((base + u, base + v));
                }
            }
        }
        LocalGraph::new(
            100,
            edges,
            DenseMatrix::zeros(100, 2),
            (0..100).map(|i| i % 2).collect(),
            2,
            Masks::default(),
        )
        .unwrap()
    }

    #[test]
    fn hundred_nodes_five_parts() {
        let g = synth_dataset(&SynthSpec::homophilic_default(100, 3, 4), 4).unwrap();
        let ds = partition_nonoverlap(&g, 5, 1).unwrap();
        assert_eq!(ds.client_count(), 5);
        assert!(is_disjoint_cover(ds.node_maps().unwrap(), 100));
        assert!(ds.clients().iter().all(|c| c.node_count() == 20));
        let kept: usize = ds.clients().iter().map(LocalGraph::edge_count).sum();
        assert_eq!(kept + ds.dropped_edges(), g.edge_count());
    }

    #[test]
    fn separable_cliques_have_zero_cut() {
        for seed in 0..10 {
            let ds = partition_nonoverlap(&two_cliques(), 2, seed).unwrap();
            assert_eq!(ds.dropped_edges(), 0);
            for nodes in ds.node_maps().unwrap() {
                assert_eq!(nodes.len(), 50);
                assert!(nodes.iter().all(|&v| v / 50 == nodes[0] / 50));
            }
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let g = synth_dataset(&SynthSpec::homophilic_default(60, 3, 4), 2).unwrap();
        assert_eq!(
            partition_nonoverlap(&g, 4, 7).unwrap(),
            partition_nonoverlap(&g, 4, 7).unwrap()
        );
    }

    #[test]
    fn infeasible_counts() {
        let g = synth_dataset(&SynthSpec::homophilic_default(10, 2, 2), 0).unwrap();
        assert!(matches!(partition_nonoverlap(&g, 11, 0), Err(GraphError::Infeasible(_))));
        assert!(matches!(partition_nonoverlap(&g, 1, 0), Err(GraphError::Infeasible(_))));
        assert!(matches!(partition_overlap(&g, 4, 0), Err(GraphError::Infeasible(_))));
    }

    #[test]
    fn overlap_sizes_and_containment() {
        let g = synth_dataset(&SynthSpec::homophilic_default(80, 4, 4), 5).unwrap();
        let ds = partition_overlap(&g, 10, 3).unwrap();
        assert_eq!(ds.client_count(), 10);
        let base = partition_nonoverlap(&g, 2, 3).unwrap();
        let maps = ds.node_maps().unwrap();
        for (c, nodes) in maps.iter().enumerate() {
            assert_eq!(nodes.len(), 20);
            let part = &base.node_maps().unwrap()[c / OVERLAP_SAMPLES];
            assert!(nodes.iter().all(|v| part.contains(v)));
        }
        // Two half-samples of a 40-node part overlap with near certainty.
        for seed in 0..20 {
            let ds = partition_overlap(&g, 10, seed).unwrap();
            let maps = ds.node_maps().unwrap();
            assert!(maps[0].iter().any(|v| maps[1].contains(v)));
        }
    }

    #[test]
    fn single_base_part_uses_whole_graph() {
        let g = synth_dataset(&SynthSpec::homophilic_default(41, 2, 2), 5).unwrap();
        let ds = partition_overlap(&g, 7, 0).unwrap();
        assert_eq!(ds.client_count(), 5);
        assert!(ds.clients().iter().all(|c| c.node_count() == 20));
    }
}
