//! Applications as matrix-multiply kernels, fixed-cost non-MM kernels and a
//! kernel dependency graph.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One matrix-multiply kernel: `batch` independent `m x k x n` products,
/// repeated `count` times.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LayerShape {
    pub id: usize,
    pub m: u64,
    pub k: u64,
    pub n: u64,
    pub batch: u64,
    pub count: u64,
}

impl LayerShape {
    pub fn new(id: usize, m: u64, k: u64, n: u64) -> Self {
        LayerShape {
            id,
            m,
            k,
            n,
            batch: 1,
            count: 1,
        }
    }

    pub fn with_batch(mut self, batch: u64) -> Self {
        self.batch = batch;
        self
    }

    pub fn with_count(mut self, count: u64) -> Self {
        self.count = count;
        self
    }

    /// Floating-point operations: `2 * m * k * n * batch * count`.
    pub fn ops(&self) -> u128 {
        layer_ops(self)
    }

    /// `batch * count`: how many times the base MM runs back to back.
    pub fn repetitions(&self) -> u64 {
        self.batch * self.count
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("m", self.m),
            ("k", self.k),
            ("n", self.n),
            ("batch", self.batch),
            ("count", self.count),
        ] {
            if v < 1 {
                return Err(Error::invalid(
                    format!("layers[{}].{name}", self.id),
                    "must be at least 1",
                ));
            }
        }
        Ok(())
    }
}

/// Floating-point operations of a layer, in 128-bit arithmetic.
pub fn layer_ops(layer: &LayerShape) -> u128 {
    2 * u128::from(layer.m)
        * u128::from(layer.k)
        * u128::from(layer.n)
        * u128::from(layer.batch)
        * u128::from(layer.count)
}

/// Total operations over a list of layers.
pub fn total_ops(layers: &[LayerShape]) -> u128 {
    layers.iter().map(layer_ops).sum()
}

/// A non-MM kernel charged as a constant time per task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixedKernel {
    pub name: String,
    pub time_s: f64,
}

/// Edges `(pred, succ)`: `succ` may start only after `pred` has finished.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DependencyGraph {
    pub edges: BTreeSet<(usize, usize)>,
}

impl DependencyGraph {
    pub fn new(edges: impl IntoIterator<Item = (usize, usize)>) -> Self {
        DependencyGraph {
            edges: edges.into_iter().collect(),
        }
    }

    /// `0 -> 1 -> ... -> n-1`.
    pub fn chain(n: usize) -> Self {
        Self::new((1..n).map(|i| (i - 1, i)))
    }

    /// Predecessor lists indexed by kernel id.
    pub fn predecessors(&self, num_kernels: usize) -> Vec<Vec<usize>> {
        let mut preds = vec![Vec::new(); num_kernels];
        for &(p, s) in &self.edges {
            preds[s].push(p);
        }
        preds
    }

    /// Successor lists indexed by kernel id.
    pub fn successors(&self, num_kernels: usize) -> Vec<Vec<usize>> {
        let mut succs = vec![Vec::new(); num_kernels];
        for &(p, s) in &self.edges {
            succs[p].push(s);
        }
        succs
    }

    /// Kahn order, smallest ready id first. Assumes a validated graph.
    pub fn topological_order(&self, num_kernels: usize) -> Vec<usize> {
        let succs = self.successors(num_kernels);
        let mut indeg = vec![0usize; num_kernels];
        for &(_, s) in &self.edges {
            indeg[s] += 1;
        }
        let mut ready: BTreeSet<usize> = (0..num_kernels).filter(|&i| indeg[i] == 0).collect();
        let mut order = Vec::with_capacity(num_kernels);
        while let Some(v) = ready.pop_first() {
            order.push(v);
            for &s in &succs[v] {
                indeg[s] -= 1;
                if indeg[s] == 0 {
                    ready.insert(s);
                }
            }
        }
        order
    }
}

/// Checks that every edge names an existing kernel, that no kernel depends on
/// itself, and that the graph is acyclic. A cycle is reported as the list of
/// kernels along it, first node repeated at the end.
pub fn validate_graph(deps: &DependencyGraph, num_kernels: usize) -> Result<()> {
    for &(p, s) in &deps.edges {
        for id in [p, s] {
            if id >= num_kernels {
                return Err(Error::DanglingId {
                    id,
                    count: num_kernels,
                });
            }
        }
        if p == s {
            return Err(Error::SelfEdge(p));
        }
    }

    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        White,
        Grey,
        Black,
    }
    let succs = deps.successors(num_kernels);
    let mut mark = vec![Mark::White; num_kernels];
    let mut parent = vec![usize::MAX; num_kernels];
    for root in 0..num_kernels {
        if mark[root] != Mark::White {
            continue;
        }
        // Iterative DFS: (node, index of next successor to visit).
        let mut stack = vec![(root, 0usize)];
        mark[root] = Mark::Grey;
        while let Some(&mut (v, ref mut next)) = stack.last_mut() {
            if let Some(&w) = succs[v].get(*next) {
                *next += 1;
                match mark[w] {
                    Mark::White => {
                        mark[w] = Mark::Grey;
                        parent[w] = v;
                        stack.push((w, 0));
                    }
                    Mark::Grey => {
                        let mut cycle = vec![w];
                        let mut u = v;
                        while u != w {
                            cycle.push(u);
                            u = parent[u];
                        }
                        cycle[1..].reverse();
                        cycle.push(w);
                        return Err(Error::Cycle(cycle));
                    }
                    Mark::Black => {}
                }
            } else {
                mark[v] = Mark::Black;
                stack.pop();
            }
        }
    }
    Ok(())
}

/// An application: MM kernels (ids dense from 0), fixed-cost kernels run
/// sequentially around them, and the dependency graph over MM kernel ids.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub name: String,
    pub layers: Vec<LayerShape>,
    pub fixed_kernels: Vec<FixedKernel>,
    pub deps: DependencyGraph,
}

/// Kernels sharing one `(m, k, n, batch)` shape. The composer treats a group
/// as one indivisible unit of work.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShapeGroup {
    /// The shared shape with `count` summed over the member kernels and `id`
    /// set to the group index.
    pub shape: LayerShape,
    /// Member kernel ids, ascending.
    pub kernels: Vec<usize>,
}

impl ModelSpec {
    pub fn new(
        name: impl Into<String>,
        layers: Vec<LayerShape>,
        fixed_kernels: Vec<FixedKernel>,
        deps: DependencyGraph,
    ) -> Result<Self> {
        let model = ModelSpec {
            name: name.into(),
            layers,
            fixed_kernels,
            deps,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::invalid("layers", "model has no MM layers"));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.id != i {
                return Err(Error::invalid(
                    format!("layers[{i}].id"),
                    format!("ids must be dense from 0, found {}", layer.id),
                ));
            }
            layer.validate()?;
        }
        for fk in &self.fixed_kernels {
            if !(fk.time_s >= 0.0 && fk.time_s.is_finite()) {
                return Err(Error::invalid(
                    format!("fixed_kernels.{}", fk.name),
                    "time_s must be a non-negative number",
                ));
            }
        }
        validate_graph(&self.deps, self.layers.len())
    }

    pub fn num_kernels(&self) -> usize {
        self.layers.len()
    }

    /// MM operations of one inference.
    pub fn total_ops(&self) -> u128 {
        total_ops(&self.layers)
    }

    /// Sequential non-MM time per inference.
    pub fn fixed_time(&self) -> f64 {
        self.fixed_kernels.iter().map(|k| k.time_s).sum()
    }

    /// Groups kernels by shape, in order of first appearance.
    pub fn shapes(&self) -> Vec<ShapeGroup> {
        let mut groups: Vec<ShapeGroup> = Vec::new();
        for layer in &self.layers {
            let key = (layer.m, layer.k, layer.n, layer.batch);
            match groups
                .iter_mut()
                .find(|g| (g.shape.m, g.shape.k, g.shape.n, g.shape.batch) == key)
            {
                Some(g) => {
                    g.shape.count += layer.count;
                    g.kernels.push(layer.id);
                }
                None => {
                    let id = groups.len();
                    groups.push(ShapeGroup {
                        shape: LayerShape { id, ..*layer },
                        kernels: vec![layer.id],
                    });
                }
            }
        }
        groups
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        file.into_model()
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&ModelFile::from(self)).expect("model serializes")
    }
}

/// Reads and validates a model file.
pub fn load_model(path: impl AsRef<Path>) -> Result<ModelSpec> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ModelSpec::from_json_str(&text)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    name: String,
    layers: Vec<LayerEntry>,
    #[serde(default)]
    fixed_kernels: Vec<FixedKernel>,
    /// Absent means a chain in layer order.
    #[serde(default)]
    deps: Option<Vec<(usize, usize)>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerEntry {
    m: u64,
    k: u64,
    n: u64,
    #[serde(default = "one")]
    batch: u64,
    #[serde(default = "one")]
    count: u64,
}

fn one() -> u64 {
    1
}

impl ModelFile {
    fn into_model(self) -> Result<ModelSpec> {
        let layers: Vec<LayerShape> = self
            .layers
            .iter()
            .enumerate()
            .map(|(id, e)| LayerShape {
                id,
                m: e.m,
                k: e.k,
                n: e.n,
                batch: e.batch,
                count: e.count,
            })
            .collect();
        let deps = match self.deps {
            Some(edges) => DependencyGraph::new(edges),
            None => DependencyGraph::chain(layers.len()),
        };
        ModelSpec::new(self.name, layers, self.fixed_kernels, deps)
    }
}

impl From<&ModelSpec> for ModelFile {
    fn from(m: &ModelSpec) -> Self {
        ModelFile {
            name: m.name.clone(),
            layers: m
                .layers
                .iter()
                .map(|l| LayerEntry {
                    m: l.m,
                    k: l.k,
                    n: l.n,
                    batch: l.batch,
                    count: l.count,
                })
                .collect(),
            fixed_kernels: m.fixed_kernels.clone(),
            deps: Some(m.deps.edges.iter().copied().collect()),
        }
    }
}

fn fixed(name: &str, ms: f64) -> FixedKernel {
    FixedKernel {
        name: name.to_string(),
        time_s: ms * 1e-3,
    }
}

fn rows(rows: &[(u64, u64, u64, u64, u64)]) -> Vec<LayerShape> {
    rows.iter()
        .enumerate()
        .map(|(id, &(count, m, k, n, batch))| LayerShape {
            id,
            m,
            k,
            n,
            batch,
            count,
        })
        .collect()
}

/// The built-in applications: `bert`, `vit`, `ncf`, `mlp`.
///
/// BERT is expanded to its eight kernels so that the dependency graph can
/// name them; the other models keep one entry per distinct shape (with
/// `count`) and a chain dependency graph.
pub fn builtin_model(name: &str) -> Result<ModelSpec> {
    match name {
        "bert" => {
            let mut layers = Vec::new();
            for id in 0..4 {
                layers.push(LayerShape::new(id, 3072, 1024, 1024));
            }
            layers.push(LayerShape::new(4, 3072, 4096, 1024));
            layers.push(LayerShape::new(5, 3072, 1024, 4096));
            layers.push(LayerShape::new(6, 512, 64, 512).with_batch(96));
            layers.push(LayerShape::new(7, 512, 512, 64).with_batch(96));
            let deps = DependencyGraph::new([(0, 6), (1, 6), (6, 7), (2, 7), (7, 3), (3, 4), (4, 5)]);
            ModelSpec::new(
                "bert",
                layers,
                vec![fixed("layernorm", 4.5), fixed("softmax", 18.7), fixed("transpose", 5.2)],
                deps,
            )
        }
        "vit" => {
            // (3072, 3024, 1024) and (3072, 1024, 3048) are kept as published.
            let layers = rows(&[
                (1, 3072, 3024, 1024, 1),
                (1, 3072, 1024, 1024, 1),
                (1, 3072, 1024, 4096, 1),
                (1, 3072, 4096, 1024, 1),
                (1, 3072, 1024, 3048, 1),
                (2, 64, 64, 64, 768),
            ]);
            let n = layers.len();
            ModelSpec::new(
                "vit",
                layers,
                vec![fixed("layernorm", 4.5), fixed("softmax", 2.3), fixed("transpose", 5.2)],
                DependencyGraph::chain(n),
            )
        }
        "ncf" => {
            let layers = rows(&[
                (1, 3072, 4096, 2048, 1),
                (1, 3072, 2048, 1024, 1),
                (1, 3072, 1024, 512, 1),
                (1, 3072, 512, 256, 1),
                (1, 3072, 256, 128, 1),
                (1, 3072, 128, 64, 1),
                (1, 3072, 64, 32, 1),
                (1, 3072, 32, 16, 1),
                (1, 3072, 32, 1, 1),
            ]);
            let n = layers.len();
            ModelSpec::new("ncf", layers, Vec::new(), DependencyGraph::chain(n))
        }
        "mlp" => {
            let layers = rows(&[
                (1, 3072, 2048, 4096, 1),
                (2, 3072, 4096, 4096, 1),
                (1, 3072, 4096, 1024, 1),
            ]);
            let n = layers.len();
            ModelSpec::new("mlp", layers, Vec::new(), DependencyGraph::chain(n))
        }
        other => Err(Error::UnknownModel(other.to_string())),
    }
}

pub const BUILTIN_MODELS: [&str; 4] = ["bert", "vit", "ncf", "mlp"];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layer_ops_examples() {
        assert_eq!(LayerShape::new(0, 3072, 1024, 4096).ops(), 25_769_803_776);
        assert_eq!(
            LayerShape::new(0, 512, 64, 512).with_batch(96).ops(),
            3_221_225_472
        );
    }

    #[test]
    fn layer_ops_does_not_overflow() {
        let huge = LayerShape::new(0, u64::from(u32::MAX), u64::from(u32::MAX), 1 << 20)
            .with_batch(1 << 10);
        assert_eq!(
            huge.ops(),
            2 * u128::from(u32::MAX) * u128::from(u32::MAX) * (1 << 30)
        );
    }

    #[test]
    fn bert_shapes() {
        let bert = builtin_model("bert").unwrap();
        assert_eq!(bert.num_kernels(), 8);
        let groups = bert.shapes();
        let got: Vec<_> = groups
            .iter()
            .map(|g| (g.shape.count, g.shape.m, g.shape.k, g.shape.n, g.shape.batch))
            .collect();
        assert_eq!(
            got,
            vec![
                (4, 3072, 1024, 1024, 1),
                (1, 3072, 4096, 1024, 1),
                (1, 3072, 1024, 4096, 1),
                (1, 512, 64, 512, 96),
                (1, 512, 512, 64, 96),
            ]
        );
        assert_eq!(groups[0].kernels, vec![0, 1, 2, 3]);
        assert!((bert.fixed_time() - 28.4e-3).abs() < 1e-12);
    }

    #[test]
    fn ncf_shapes_halve_k() {
        let ncf = builtin_model("ncf").unwrap();
        assert_eq!(ncf.shapes().len(), 9);
        let ks: Vec<u64> = ncf.layers.iter().map(|l| l.k).collect();
        assert_eq!(ks, vec![4096, 2048, 1024, 512, 256, 128, 64, 32, 32]);
        assert!(ncf.layers.iter().all(|l| l.batch == 1));
        assert_eq!(ncf.layers.last().unwrap().n, 1);
    }

    #[test]
    fn unknown_model() {
        assert!(matches!(builtin_model("gpt"), Err(Error::UnknownModel(_))));
    }

    #[test]
    fn graph_validation() {
        let bert = builtin_model("bert").unwrap();
        validate_graph(&bert.deps, 8).unwrap();
        assert!(matches!(
            validate_graph(&DependencyGraph::new([(0, 0)]), 2),
            Err(Error::SelfEdge(0))
        ));
        match validate_graph(&DependencyGraph::new([(0, 1), (1, 0)]), 2) {
            Err(Error::Cycle(c)) => assert_eq!(c, vec![0, 1, 0]),
            other => panic!("expected cycle, got {other:?}"),
        }
        assert!(matches!(
            validate_graph(&DependencyGraph::new([(0, 5)]), 3),
            Err(Error::DanglingId { id: 5, count: 3 })
        ));
    }

    #[test]
    fn reported_cycle_follows_edges() {
        let g = DependencyGraph::new([(0, 1), (1, 2), (2, 3), (3, 1), (3, 4)]);
        match validate_graph(&g, 5) {
            Err(Error::Cycle(c)) => {
                assert_eq!(c.first(), c.last());
                for w in c.windows(2) {
                    assert!(g.edges.contains(&(w[0], w[1])), "{c:?}");
                }
            }
            other => panic!("expected cycle, got {other:?}"),
        }
    }

    #[test]
    fn builtins_round_trip_through_files() {
        for name in BUILTIN_MODELS {
            let m = builtin_model(name).unwrap();
            let back = ModelSpec::from_json_str(&m.to_json_string()).unwrap();
            assert_eq!(back, m, "{name}");
        }
    }

    #[test]
    fn model_file_defaults_to_chain() {
        let text = r#"{"name":"x","layers":[{"m":4,"k":4,"n":4},{"m":8,"k":8,"n":8,"batch":2}]}"#;
        let m = ModelSpec::from_json_str(text).unwrap();
        assert_eq!(m.deps, DependencyGraph::chain(2));
        assert_eq!(m.layers[1].batch, 2);
        assert_eq!(m.layers[1].count, 1);
    }

    #[test]
    fn model_file_rejects_bad_input() {
        let unknown = r#"{"name":"x","layers":[{"m":4,"k":4,"n":4,"q":1}]}"#;
        assert!(matches!(ModelSpec::from_json_str(unknown), Err(Error::Parse(_))));
        let zero = r#"{"name":"x","layers":[{"m":0,"k":4,"n":4}]}"#;
        assert!(matches!(ModelSpec::from_json_str(zero), Err(Error::Invalid { .. })));
        let cyc = r#"{"name":"x","layers":[{"m":1,"k":1,"n":1},{"m":1,"k":1,"n":1}],"deps":[[0,1],[1,0]]}"#;
        assert!(matches!(ModelSpec::from_json_str(cyc), Err(Error::Cycle(_))));
    }

    #[test]
    fn topological_order_respects_edges() {
        let bert = builtin_model("bert").unwrap();
        let order = bert.deps.topological_order(8);
        assert_eq!(order.len(), 8);
        let pos: Vec<usize> = (0..8).map(|k| order.iter().position(|&v| v == k).unwrap()).collect();
        for &(p, s) in &bert.deps.edges {
            assert!(pos[p] < pos[s]);
        }
    }
}
