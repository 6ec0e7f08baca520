//! Directed graph construction, file ingestion, splits and negative sampling.

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

pub type Edge = (u32, u32);

/// A simple directed graph: no self-loops, no duplicate edges.
#[derive(Debug, Clone)]
pub struct DirectedGraph {
    num_nodes: u32,
    edges: Vec<Edge>,
    edge_set: HashSet<Edge>,
    /// Node labels when loaded from a file, in first-appearance order.
    pub node_names: Option<Vec<String>>,
}

impl DirectedGraph {
    pub fn new(num_nodes: u32, edges: Vec<Edge>) -> Result<Self> {
        let mut edge_set = HashSet::with_capacity(edges.len());
        for &(u, v) in &edges {
            if u == v {
                return Err(Error::Graph(format!("self-loop at node {u}")));
            }
            if u >= num_nodes || v >= num_nodes {
                return Err(Error::Graph(format!("edge ({u}, {v}) out of range")));
            }
            if !edge_set.insert((u, v)) {
                return Err(Error::Graph(format!("duplicate edge ({u}, {v})")));
            }
        }
        Ok(DirectedGraph { num_nodes, edges, edge_set, node_names: None })
    }

    pub fn num_nodes(&self) -> u32 {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn has_edge(&self, u: u32, v: u32) -> bool {
        self.edge_set.contains(&(u, v))
    }

    /// All ordered non-edges (u, v), u != v. Quadratic; toy graphs only.
    pub fn non_edges(&self) -> Vec<Edge> {
        let mut out = Vec::new();
        for u in 0..self.num_nodes {
            for v in 0..self.num_nodes {
                if u != v && !self.has_edge(u, v) {
                    out.push((u, v));
                }
            }
        }
        out
    }

    /// True iff the graph has no directed cycle (Kahn's algorithm).
    pub fn is_dag(&self) -> bool {
        let n = self.num_nodes as usize;
        let mut indeg = vec![0usize; n];
        let mut adj = vec![Vec::new(); n];
        for &(u, v) in &self.edges {
            indeg[v as usize] += 1;
            adj[u as usize].push(v as usize);
        }
        let mut queue: Vec<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
        let mut seen = 0;
        while let Some(u) = queue.pop() {
            seen += 1;
            for &v in &adj[u] {
                indeg[v] -= 1;
                if indeg[v] == 0 {
                    queue.push(v);
                }
            }
        }
        seen == n
    }

    /// Write the edge-list format: one `source<TAB>target` line per edge.
    pub fn save_edge_list(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        for &(u, v) in &self.edges {
            match &self.node_names {
                Some(names) => writeln!(f, "{}\t{}", names[u as usize], names[v as usize])?,
                None => writeln!(f, "{u}\t{v}")?,
            }
        }
        Ok(())
    }
}

/// Train/validation/test split with fixed sampled negatives for evaluation.
#[derive(Debug, Clone)]
pub struct SplitDataset {
    pub train_pos: Vec<Edge>,
    pub valid_pos: Vec<Edge>,
    pub test_pos: Vec<Edge>,
    pub test_neg: Vec<Edge>,
    pub valid_neg: Vec<Edge>,
    pub split_seed: u64,
}

/// Parameters of the duplication-divergence growth model.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DupDivParams {
    pub n_initial: u32,
    pub n_final: u32,
    pub p_neighbor: f64,
    pub p_original: f64,
    pub seed: u64,
}

impl Default for DupDivParams {
    fn default() -> Self {
        DupDivParams { n_initial: 3, n_final: 100, p_neighbor: 0.7, p_original: 0.7, seed: 0 }
    }
}

impl DupDivParams {
    fn validate(&self) -> Result<()> {
        if self.n_initial < 2 || self.n_final < self.n_initial {
            return Err(Error::Graph(format!(
                "need 2 <= n_initial <= n_final, got {} and {}",
                self.n_initial, self.n_final
            )));
        }
        for p in [self.p_neighbor, self.p_original] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Graph(format!("probability {p} outside [0,1]")));
            }
        }
        Ok(())
    }
}

/// Seed topology for the duplication-divergence generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DupDivSeed {
    /// All ordered pairs of the initial nodes (cyclic).
    FullyConnected,
    /// Transitive tournament on the initial nodes (acyclic).
    Dag,
}

/// Grow a duplication-divergence graph.
///
/// Starting from the seed graph, each step duplicates a random existing
/// node: the duplicate inherits each in- and out-edge of the original
/// independently with probability `p_neighbor`, and gains a
/// duplicate -> original edge with probability `p_original`. A DAG seed
/// stays a DAG throughout (the new node is appended last).
pub fn generate_duplication_divergence_seeded(
    params: &DupDivParams,
    seed_kind: DupDivSeed,
) -> Result<DirectedGraph> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut edges: Vec<Edge> = Vec::new();
    for u in 0..params.n_initial {
        for v in 0..params.n_initial {
            if u == v {
                continue;
            }
            let keep = match seed_kind {
                DupDivSeed::FullyConnected => true,
                DupDivSeed::Dag => u < v,
            };
            if keep {
                edges.push((u, v));
            }
        }
    }
    let mut out_adj: Vec<Vec<u32>> = vec![Vec::new(); params.n_final as usize];
    let mut in_adj: Vec<Vec<u32>> = vec![Vec::new(); params.n_final as usize];
    for &(u, v) in &edges {
        out_adj[u as usize].push(v);
        in_adj[v as usize].push(u);
    }
    for new in params.n_initial..params.n_final {
        let original = rng.random_range(0..new);
        for i in 0..out_adj[original as usize].len() {
            let w = out_adj[original as usize][i];
            if rng.random_bool(params.p_neighbor) {
                edges.push((new, w));
                out_adj[new as usize].push(w);
                in_adj[w as usize].push(new);
            }
        }
        for i in 0..in_adj[original as usize].len() {
            let w = in_adj[original as usize][i];
            if rng.random_bool(params.p_neighbor) {
                edges.push((w, new));
                out_adj[w as usize].push(new);
                in_adj[new as usize].push(w);
            }
        }
        if rng.random_bool(params.p_original) {
            edges.push((new, original));
            out_adj[new as usize].push(original);
            in_adj[original as usize].push(new);
        }
    }
    DirectedGraph::new(params.n_final, edges)
}

/// Duplication-divergence growth from the fully-connected (cyclic) seed.
pub fn generate_duplication_divergence(params: &DupDivParams) -> Result<DirectedGraph> {
    generate_duplication_divergence_seeded(params, DupDivSeed::FullyConnected)
}

/// Chain 0 -> 1 -> .. -> n-1.
pub fn generate_chain(n: u32) -> Result<DirectedGraph> {
    if n < 2 {
        return Err(Error::Graph("chain needs n >= 2".into()));
    }
    DirectedGraph::new(n, (0..n - 1).map(|i| (i, i + 1)).collect())
}

/// Chain closed into a directed cycle.
pub fn generate_cycle(n: u32) -> Result<DirectedGraph> {
    if n < 2 {
        return Err(Error::Graph("cycle needs n >= 2".into()));
    }
    let mut edges: Vec<Edge> = (0..n - 1).map(|i| (i, i + 1)).collect();
    edges.push((n - 1, 0));
    DirectedGraph::new(n, edges)
}

/// Fully transitive DAG on n nodes: all i -> j for i < j.
pub fn generate_transitive_chain(n: u32) -> Result<DirectedGraph> {
    if n < 2 {
        return Err(Error::Graph("transitive chain needs n >= 2".into()));
    }
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            edges.push((i, j));
        }
    }
    DirectedGraph::new(n, edges)
}

/// Tri-partite graph: an unconnected focal pair (nodes 0, 1) sharing
/// `n_pred` common predecessors and `n_succ` common successors.
pub fn generate_common_neighbors(n_pred: u32, n_succ: u32) -> Result<DirectedGraph> {
    let n = 2 + n_pred + n_succ;
    let mut edges = Vec::new();
    for p in 0..n_pred {
        let node = 2 + p;
        edges.push((node, 0));
        edges.push((node, 1));
    }
    for s in 0..n_succ {
        let node = 2 + n_pred + s;
        edges.push((0, node));
        edges.push((1, node));
    }
    DirectedGraph::new(n, edges)
}

/// Result of parsing an edge-list file.
#[derive(Debug)]
pub struct LoadedGraph {
    pub graph: DirectedGraph,
    pub duplicate_count: usize,
}

/// Parse the edge-list format: UTF-8, one `source<TAB>target` per line,
/// `#`-prefixed comment lines ignored. Node ids are assigned in
/// first-appearance order; duplicate edges collapse with a count.
pub fn load_edge_list(path: &Path) -> Result<LoadedGraph> {
    let text = std::fs::read_to_string(path)?;
    let mut names: Vec<String> = Vec::new();
    let mut index: std::collections::HashMap<String, u32> = std::collections::HashMap::new();
    let mut edges: Vec<Edge> = Vec::new();
    let mut seen: HashSet<Edge> = HashSet::new();
    let mut duplicates = 0usize;
    let intern = |name: &str, names: &mut Vec<String>,
                      index: &mut std::collections::HashMap<String, u32>| {
        *index.entry(name.to_string()).or_insert_with(|| {
            names.push(name.to_string());
            names.len() as u32 - 1
        })
    };
    for (lineno, line) in text.lines().enumerate() {
        let line_num = lineno + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut parts = trimmed.split('\t');
        let (src, dst) = match (parts.next(), parts.next(), parts.next()) {
            (Some(a), Some(b), None) if !a.is_empty() && !b.is_empty() => (a, b),
            _ => {
                return Err(Error::Parse {
                    line: line_num,
                    msg: format!("expected `source<TAB>target`, got {trimmed:?}"),
                })
            }
        };
        if src == dst {
            return Err(Error::Parse { line: line_num, msg: format!("self-loop on {src:?}") });
        }
        let u = intern(src, &mut names, &mut index);
        let v = intern(dst, &mut names, &mut index);
        if seen.insert((u, v)) {
            edges.push((u, v));
        } else {
            duplicates += 1;
        }
    }
    if edges.is_empty() {
        return Err(Error::Parse { line: 0, msg: "no edges in file".into() });
    }
    let mut graph = DirectedGraph::new(names.len() as u32, edges)?;
    graph.node_names = Some(names);
    Ok(LoadedGraph { graph, duplicate_count: duplicates })
}

/// Uniform random partition of the edges into train/valid/test parts.
///
/// The test fraction is `1 - train_frac - valid_frac`. Deterministic given
/// the seed. No evaluation negatives are drawn here; see
/// [`with_negatives`].
pub fn split(
    graph: &DirectedGraph,
    train_frac: f64,
    valid_frac: f64,
    seed: u64,
) -> Result<SplitDataset> {
    if !(0.0..1.0).contains(&train_frac)
        || train_frac <= 0.0
        || !(0.0..1.0).contains(&valid_frac)
        || train_frac + valid_frac >= 1.0
    {
        return Err(Error::Graph(format!(
            "bad split fractions ({train_frac}, {valid_frac})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = graph.edges().to_vec();
    edges.shuffle(&mut rng);
    let n = edges.len();
    let n_train = (train_frac * n as f64).round() as usize;
    let n_valid = (valid_frac * n as f64).round() as usize;
    if n_train == 0 || n_train + n_valid >= n {
        return Err(Error::Graph(format!(
            "degenerate split sizes for {n} edges ({n_train} train, {n_valid} valid)"
        )));
    }
    let test_pos = edges.split_off(n_train + n_valid);
    let valid_pos = edges.split_off(n_train);
    Ok(SplitDataset {
        train_pos: edges,
        valid_pos,
        test_pos,
        test_neg: Vec::new(),
        valid_neg: Vec::new(),
        split_seed: seed,
    })
}

/// Draw `ratio` negatives per anchor edge by resampling the target node,
/// rejecting self-loops, graph edges, and duplicates within one anchor's
/// ratio group.
pub fn sample_negatives(
    graph: &DirectedGraph,
    anchor_edges: &[Edge],
    ratio: u32,
    seed: u64,
) -> Result<Vec<Edge>> {
    if ratio < 1 {
        return Err(Error::Sampling("ratio must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(anchor_edges.len() * ratio as usize);
    let mut taken: HashSet<Edge> = HashSet::new();
    for &(u, _) in anchor_edges {
        taken.clear();
        for _ in 0..ratio {
            let mut attempts = 0;
            loop {
                attempts += 1;
                if attempts > 1000 {
                    return Err(Error::Sampling(format!(
                        "no free target for node {u} after 1000 attempts (graph too dense)"
                    )));
                }
                let t = rng.random_range(0..graph.num_nodes());
                if t == u || graph.has_edge(u, t) || taken.contains(&(u, t)) {
                    continue;
                }
                taken.insert((u, t));
                out.push((u, t));
                break;
            }
        }
    }
    Ok(out)
}

/// Attach fixed evaluation negatives (and validation negatives when a
/// validation part exists) to a split.
pub fn with_negatives(
    graph: &DirectedGraph,
    mut dataset: SplitDataset,
    ratio: u32,
) -> Result<SplitDataset> {
    dataset.test_neg = sample_negatives(graph, &dataset.test_pos, ratio, dataset.split_seed ^ 0x7e57)?;
    if !dataset.valid_pos.is_empty() {
        dataset.valid_neg =
            sample_negatives(graph, &dataset.valid_pos, ratio, dataset.split_seed ^ 0x7a11)?;
    }
    Ok(dataset)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generators_shapes() {
        let c5 = generate_cycle(5).unwrap();
        assert_eq!(c5.num_edges(), 5);
        let mut indeg = [0; 5];
        let mut outdeg = [0; 5];
        for &(u, v) in c5.edges() {
            outdeg[u as usize] += 1;
            indeg[v as usize] += 1;
        }
        assert!(indeg.iter().all(|&d| d == 1) && outdeg.iter().all(|&d| d == 1));
        assert!(!c5.is_dag());

        let t10 = generate_transitive_chain(10).unwrap();
        assert_eq!(t10.num_edges(), 45);
        assert!(t10.is_dag());

        assert!(generate_chain(10).unwrap().is_dag());

        let tri = generate_common_neighbors(3, 3).unwrap();
        assert_eq!(tri.num_edges(), 12);
        assert!(!tri.has_edge(0, 1) && !tri.has_edge(1, 0));
    }

    #[test]
    fn dupdiv_full_inheritance() {
        // p1 = p2 = 1 from a 2-node bidirectional seed: the duplicate
        // inherits both of the original's edges plus the duplicate->original
        // edge; only original->duplicate is absent
        let params = DupDivParams {
            n_initial: 2,
            n_final: 3,
            p_neighbor: 1.0,
            p_original: 1.0,
            seed: 3,
        };
        let g = generate_duplication_divergence(&params).unwrap();
        assert_eq!(g.num_edges(), 5);
        let original = if g.has_edge(2, 0) && g.has_edge(0, 2) { 1 } else { 0 };
        assert!(g.has_edge(2, original));
        assert!(!g.has_edge(original, 2));
    }

    #[test]
    fn dupdiv_edge_count_envelope() {
        let mut total = 0usize;
        for seed in 0..50 {
            let g = generate_duplication_divergence(&DupDivParams { seed, ..Default::default() })
                .unwrap();
            assert_eq!(g.num_nodes(), 100);
            total += g.num_edges();
        }
        let mean = total as f64 / 50.0;
        assert!((700.0..=1400.0).contains(&mean), "mean edge count {mean}");
    }

    #[test]
    fn dupdiv_dag_seed_stays_dag() {
        for seed in 0..100 {
            let g = generate_duplication_divergence_seeded(
                &DupDivParams { seed, ..Default::default() },
                DupDivSeed::Dag,
            )
            .unwrap();
            assert!(g.is_dag(), "seed {seed} produced a cycle");
        }
    }

    #[test]
    fn dupdiv_deterministic() {
        let params = DupDivParams::default();
        let a = generate_duplication_divergence(&params).unwrap();
        let b = generate_duplication_divergence(&params).unwrap();
        assert_eq!(a.edges(), b.edges());
    }

    #[test]
    fn edge_list_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.tsv");
        std::fs::write(&path, "a\tb\nb\tc\n").unwrap();
        let loaded = load_edge_list(&path).unwrap();
        assert_eq!(loaded.graph.num_nodes(), 3);
        assert_eq!(loaded.graph.num_edges(), 2);
        assert_eq!(loaded.duplicate_count, 0);

        std::fs::write(&path, "# comment\na\tb\na\tb\n").unwrap();
        let loaded = load_edge_list(&path).unwrap();
        assert_eq!(loaded.graph.num_edges(), 1);
        assert_eq!(loaded.duplicate_count, 1);

        std::fs::write(&path, "a\ta\n").unwrap();
        match load_edge_list(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected self-loop error, got {other:?}"),
        }

        std::fs::write(&path, "").unwrap();
        assert!(load_edge_list(&path).is_err());

        // save and reload preserves structure
        let g = generate_cycle(5).unwrap();
        g.save_edge_list(&path).unwrap();
        let again = load_edge_list(&path).unwrap();
        assert_eq!(again.graph.num_edges(), 5);
    }

    #[test]
    fn split_sizes_and_determinism() {
        let g = generate_duplication_divergence(&DupDivParams {
            n_final: 200,
            ..Default::default()
        })
        .unwrap();
        let n = g.num_edges();
        let a = split(&g, 0.85, 0.0, 7).unwrap();
        assert_eq!(a.train_pos.len(), (0.85 * n as f64).round() as usize);
        assert!(a.valid_pos.is_empty());
        assert_eq!(a.train_pos.len() + a.test_pos.len(), n);
        let b = split(&g, 0.85, 0.0, 7).unwrap();
        assert_eq!(a.train_pos, b.train_pos);
        assert_eq!(a.test_pos, b.test_pos);
        // degenerate split
        let tiny = generate_cycle(10).unwrap();
        assert!(split(&tiny, 0.999, 0.0, 1).is_err());
    }

    #[test]
    fn negatives_never_leak() {
        let g = generate_duplication_divergence(&DupDivParams::default()).unwrap();
        let ds = split(&g, 0.85, 0.0, 11).unwrap();
        let n_test = ds.test_pos.len();
        let ds = with_negatives(&g, ds, 4).unwrap();
        assert_eq!(ds.test_neg.len(), 4 * n_test);
        for &(u, v) in &ds.test_neg {
            assert!(!g.has_edge(u, v));
            assert_ne!(u, v);
        }
        // deterministic
        let ds2 = with_negatives(&g, split(&g, 0.85, 0.0, 11).unwrap(), 4).unwrap();
        assert_eq!(ds.test_neg, ds2.test_neg);
    }

    #[test]
    fn negatives_complete_graph_errors() {
        let mut edges = Vec::new();
        for u in 0..4u32 {
            for v in 0..4u32 {
                if u != v {
                    edges.push((u, v));
                }
            }
        }
        let g = DirectedGraph::new(4, edges.clone()).unwrap();
        assert!(sample_negatives(&g, &edges[..1], 1, 0).is_err());
    }
}
