//! Dataflow graph model.
//!
//! A [`DataflowGraph`] is a bipartite DAG: data streams on one side, compute
//! nodes on the other. Edges are implied by each node's `inputs` and `outputs`
//! lists, so stream-to-stream and node-to-node edges cannot be expressed.
//! A stream may be produced by several nodes (merge) and consumed by several
//! (fan-out). Identifiers of streams and compute nodes share no names.

use std::collections::{BTreeSet, HashMap, HashSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn is_valid_identifier(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_')
}

macro_rules! identifier {
    ($(#[$doc:meta])* $name:ident) => {
        $(#[$doc])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(try_from = "String", into = "String")]
        pub struct $name(String);

        impl $name {
            pub fn new(id: impl Into<String>) -> Result<Self> {
                let id = id.into();
                if is_valid_identifier(&id) {
                    Ok(Self(id))
                } else {
                    Err(Error::InvalidIdentifier(id))
                }
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl TryFrom<String> for $name {
            type Error = Error;
            fn try_from(s: String) -> Result<Self> {
                Self::new(s)
            }
        }

        impl From<$name> for String {
            fn from(id: $name) -> String {
                id.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl std::borrow::Borrow<str> for $name {
            fn borrow(&self) -> &str {
                &self.0
            }
        }
    };
}

identifier!(
    /// Identifier of a data stream (a random variable of the causal model).
    StreamId
);
identifier!(
    /// Identifier of a compute node (a causal conditional).
    NodeId
);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComputeNode {
    pub id: NodeId,
    pub inputs: Vec<StreamId>,
    pub outputs: Vec<StreamId>,
}

/// On-disk JSON document shape.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphDoc {
    streams: Vec<StreamId>,
    nodes: Vec<ComputeNode>,
    target: StreamId,
}

#[derive(Debug, Clone)]
pub struct DataflowGraph {
    streams: Vec<StreamId>,
    nodes: Vec<ComputeNode>,
    target: StreamId,
    index: HashMap<StreamId, usize>,
}

impl PartialEq for DataflowGraph {
    fn eq(&self, other: &Self) -> bool {
        self.streams == other.streams && self.nodes == other.nodes && self.target == other.target
    }
}

impl DataflowGraph {
    /// Build and validate a graph.
    pub fn new(streams: Vec<StreamId>, nodes: Vec<ComputeNode>, target: StreamId) -> Result<Self> {
        let graph = Self::from_parts_unchecked(streams, nodes, target);
        let violations = graph.validate();
        if violations.is_empty() {
            Ok(graph)
        } else {
            Err(Error::InvalidGraph(violations))
        }
    }

    /// Build a graph without checking its invariants. Call [`validate`](Self::validate)
    /// before using any traversal on the result.
    pub fn from_parts_unchecked(
        streams: Vec<StreamId>,
        nodes: Vec<ComputeNode>,
        target: StreamId,
    ) -> Self {
        let mut index = HashMap::with_capacity(streams.len());
        for (i, s) in streams.iter().enumerate() {
            index.entry(s.clone()).or_insert(i);
        }
        Self {
            streams,
            nodes,
            target,
            index,
        }
    }

    pub fn streams(&self) -> &[StreamId] {
        &self.streams
    }

    pub fn nodes(&self) -> &[ComputeNode] {
        &self.nodes
    }

    pub fn target(&self) -> &StreamId {
        &self.target
    }

    pub fn contains_stream(&self, s: &str) -> bool {
        self.index.contains_key(s)
    }

    /// Declaration index of a stream.
    pub fn stream_index(&self, s: &str) -> Result<usize> {
        self.index
            .get(s)
            .copied()
            .ok_or_else(|| Error::UnknownStream(s.to_string()))
    }

    pub fn stream(&self, s: &str) -> Result<&StreamId> {
        Ok(&self.streams[self.stream_index(s)?])
    }

    pub fn node(&self, id: &str) -> Option<&ComputeNode> {
        self.nodes.iter().find(|n| n.id.as_str() == id)
    }

    /// Compute nodes that write `s`, in declaration order.
    pub fn producers_of<'a>(&'a self, s: &'a str) -> impl Iterator<Item = &'a ComputeNode> + 'a {
        self.nodes
            .iter()
            .filter(move |n| n.outputs.iter().any(|o| o.as_str() == s))
    }

    /// Every violated graph invariant, one description per offending element.
    /// Empty iff the graph is valid.
    pub fn validate(&self) -> Vec<String> {
        let mut violations = Vec::new();

        let mut seen = HashSet::new();
        for s in &self.streams {
            if !seen.insert(s.as_str()) {
                violations.push(format!("stream {s} declared more than once"));
            }
        }
        let mut seen_nodes = HashSet::new();
        for node in &self.nodes {
            let id = &node.id;
            if !seen_nodes.insert(id.as_str()) {
                violations.push(format!("node {id} declared more than once"));
            }
            if self.index.contains_key(id.as_str()) {
                violations.push(format!("node {id} shares its identifier with a stream"));
            }
            if node.inputs.is_empty() {
                violations.push(format!("node {id} has no inputs"));
            }
            if node.outputs.is_empty() {
                violations.push(format!("node {id} has no outputs"));
            }
            for s in node.inputs.iter().chain(&node.outputs) {
                if !self.index.contains_key(s.as_str()) {
                    violations.push(format!("node {id} references unknown stream {s}"));
                }
            }
        }
        if !self.index.contains_key(self.target.as_str()) {
            violations.push(format!("target {} not a stream", self.target));
        }
        if let Err(Error::Cycle(members)) = self.kahn() {
            violations.push(format!("cycle through streams {}", members.join(", ")));
        }
        violations
    }

    /// Union of the input streams of every node producing `s`, in producer
    /// declaration order then input order, without duplicates. Empty iff `s`
    /// is a root (external input).
    pub fn parents_of(&self, s: &str) -> Result<Vec<StreamId>> {
        self.stream_index(s)?;
        let mut parents: Vec<StreamId> = Vec::new();
        for node in self.producers_of(s) {
            for input in &node.inputs {
                if !parents.contains(input) {
                    parents.push(input.clone());
                }
            }
        }
        Ok(parents)
    }

    pub fn is_root(&self, s: &str) -> Result<bool> {
        Ok(self.parents_of(s)?.is_empty())
    }

    /// Breadth-first backward closure of `y`, `y` first, each stream once.
    pub fn ancestors_of_target(&self, y: &str) -> Result<Vec<StreamId>> {
        let start = self.stream(y)?.clone();
        let mut order = vec![start.clone()];
        let mut seen: HashSet<StreamId> = HashSet::from([start.clone()]);
        let mut queue = VecDeque::from([start]);
        while let Some(s) = queue.pop_front() {
            for p in self.parents_of(s.as_str())? {
                if seen.insert(p.clone()) {
                    order.push(p.clone());
                    queue.push_back(p);
                }
            }
        }
        Ok(order)
    }

    /// Streams ordered so every stream follows all of its parents. Ready streams
    /// are released in lexicographic order.
    pub fn topological_order(&self) -> Result<Vec<StreamId>> {
        self.kahn()
    }

    fn kahn(&self) -> Result<Vec<StreamId>> {
        // Stream-level dependency graph: parent -> child for every node edge.
        let n = self.streams.len();
        let mut children: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
        let mut parents: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
        for node in &self.nodes {
            for i in node.inputs.iter().filter_map(|s| self.index.get(s.as_str())) {
                for o in node.outputs.iter().filter_map(|s| self.index.get(s.as_str())) {
                    children[*i].insert(*o);
                    parents[*o].insert(*i);
                }
            }
        }
        let mut indegree: Vec<usize> = parents.iter().map(BTreeSet::len).collect();
        let mut ready: BTreeSet<&StreamId> = (0..n)
            .filter(|&i| indegree[i] == 0)
            .map(|i| &self.streams[i])
            .collect();
        let mut order = Vec::with_capacity(n);
        while let Some(s) = ready.pop_first() {
            let i = self.index[s.as_str()];
            order.push(s.clone());
            for &c in &children[i] {
                indegree[c] -= 1;
                if indegree[c] == 0 {
                    ready.insert(&self.streams[c]);
                }
            }
        }
        if order.len() < n {
            let mut members: Vec<String> = (0..n)
                .filter(|&i| indegree[i] > 0)
                .map(|i| self.streams[i].to_string())
                .collect();
            members.sort();
            members.dedup();
            return Err(Error::Cycle(members));
        }
        Ok(order)
    }

    pub fn to_json(&self) -> String {
        let doc = GraphDoc {
            streams: self.streams.clone(),
            nodes: self.nodes.clone(),
            target: self.target.clone(),
        };
        serde_json::to_string_pretty(&doc).expect("graph serialisation is infallible")
    }

    /// The same graph with a different target stream.
    pub fn with_target(&self, target: &str) -> Result<Self> {
        let target = self.stream(target)?.clone();
        Ok(Self::from_parts_unchecked(self.streams.clone(), self.nodes.clone(), target))
    }
}

/// Parse and validate a JSON graph document.
pub fn parse_graph(text: &str) -> Result<DataflowGraph> {
    let doc: GraphDoc = serde_json::from_str(text).map_err(|e| match e.classify() {
        serde_json::error::Category::Syntax | serde_json::error::Category::Eof => Error::GraphSyntax {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        },
        _ => Error::GraphSchema(e.to_string()),
    })?;
    DataflowGraph::new(doc.streams, doc.nodes, doc.target)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sid(s: &str) -> StreamId {
        StreamId::new(s).unwrap()
    }

    fn node(id: &str, inputs: &[&str], outputs: &[&str]) -> ComputeNode {
        ComputeNode {
            id: NodeId::new(id).unwrap(),
            inputs: inputs.iter().map(|s| sid(s)).collect(),
            outputs: outputs.iter().map(|s| sid(s)).collect(),
        }
    }

    fn chain() -> DataflowGraph {
        DataflowGraph::new(
            vec![sid("a"), sid("b"), sid("c")],
            vec![node("f", &["a"], &["b"]), node("g", &["b"], &["c"])],
            sid("c"),
        )
        .unwrap()
    }

    #[test]
    fn minimal_document_parses() {
        let g = parse_graph(
            r#"{"streams":["a","b"],"nodes":[{"id":"f","inputs":["a"],"outputs":["b"]}],"target":"b"}"#,
        )
        .unwrap();
        assert_eq!(g.streams().len(), 2);
        assert_eq!(g.nodes().len(), 1);
    }

    #[test]
    fn two_cycle_is_rejected() {
        let err = parse_graph(
            r#"{"streams":["a","b"],"nodes":[
                {"id":"g","inputs":["b"],"outputs":["a"]},
                {"id":"f","inputs":["a"],"outputs":["b"]}],"target":"b"}"#,
        )
        .unwrap_err();
        match err {
            Error::InvalidGraph(v) => assert!(v.iter().any(|m| m.contains("cycle")), "{v:?}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn syntax_errors_report_position() {
        match parse_graph("{\"streams\": [\n  \"a\",, ]}").unwrap_err() {
            Error::GraphSyntax { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_keys_and_bad_identifiers_are_schema_errors() {
        let unknown = r#"{"streams":["a","b"],"nodes":[{"id":"f","inputs":["a"],"outputs":["b"]}],"target":"b","extra":1}"#;
        assert!(matches!(parse_graph(unknown), Err(Error::GraphSchema(_))));
        let bad_id = r#"{"streams":["a-b","b"],"nodes":[],"target":"b"}"#;
        assert!(matches!(parse_graph(bad_id), Err(Error::GraphSchema(_))));
    }

    #[test]
    fn validate_reports_named_violations() {
        assert!(chain().validate().is_empty());

        let g = DataflowGraph::from_parts_unchecked(
            vec![sid("a"), sid("b")],
            vec![node("f", &["a"], &[])],
            sid("b"),
        );
        assert_eq!(g.validate(), vec!["node f has no outputs".to_string()]);

        let g = DataflowGraph::from_parts_unchecked(
            vec![sid("a"), sid("b")],
            vec![node("f", &["a"], &["b"])],
            sid("z"),
        );
        assert_eq!(g.validate(), vec!["target z not a stream".to_string()]);

        let g = DataflowGraph::from_parts_unchecked(
            vec![sid("a"), sid("f")],
            vec![node("f", &["a"], &["f"])],
            sid("f"),
        );
        assert!(g.validate()[0].contains("shares its identifier"));
    }

    #[test]
    fn parents_and_ancestors_on_chain() {
        let g = chain();
        assert_eq!(g.parents_of("b").unwrap(), vec![sid("a")]);
        assert!(g.parents_of("a").unwrap().is_empty());
        assert_eq!(g.ancestors_of_target("b").unwrap(), vec![sid("b"), sid("a")]);
        assert_eq!(g.ancestors_of_target("a").unwrap(), vec![sid("a")]);
        assert!(matches!(g.parents_of("nope"), Err(Error::UnknownStream(_))));
    }

    #[test]
    fn merge_stream_parents_are_union_of_producers() {
        let g = DataflowGraph::new(
            vec![sid("a"), sid("b"), sid("c"), sid("m")],
            vec![node("f", &["b", "a"], &["m"]), node("g", &["c", "a"], &["m"])],
            sid("m"),
        )
        .unwrap();
        assert_eq!(g.parents_of("m").unwrap(), vec![sid("b"), sid("a"), sid("c")]);
    }

    #[test]
    fn topological_order_breaks_ties_lexicographically() {
        let g = DataflowGraph::new(
            vec![sid("d"), sid("c"), sid("b"), sid("a")],
            vec![node("f", &["a"], &["c", "b"]), node("g", &["b", "c"], &["d"])],
            sid("d"),
        )
        .unwrap();
        assert_eq!(
            g.topological_order().unwrap(),
            vec![sid("a"), sid("b"), sid("c"), sid("d")]
        );
        let g = DataflowGraph::new(
            vec![sid("a"), sid("b")],
            vec![node("f", &["a"], &["b"])],
            sid("b"),
        )
        .unwrap();
        assert_eq!(g.topological_order().unwrap(), vec![sid("a"), sid("b")]);
    }

    #[test]
    fn serialisation_round_trips() {
        let g = chain();
        assert_eq!(parse_graph(&g.to_json()).unwrap(), g);
    }
}
