use std::collections::{BTreeSet, HashSet};

use flowrca::{parse_graph, ComputeNode, DataflowGraph, NodeId, StreamId};
use proptest::prelude::*;

/// Random DAG: streams s0..s{n-1} in shuffled declaration order. Each non-root
/// stream is written by one or two nodes whose inputs are lower-numbered streams,
/// and some nodes write two outputs.
fn arb_graph() -> impl Strategy<Value = DataflowGraph> {
    (3usize..12, 1usize..3, any::<u64>()).prop_map(|(n, roots, salt)| {
        let mut state = salt | 1;
        let mut next = move |bound: usize| {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state % bound as u64) as usize
        };
        let name = |i: usize| StreamId::new(format!("s{i}")).unwrap();
        let mut nodes = Vec::new();
        let mut j = roots;
        while j < n {
            let producers = 1 + next(2);
            let two_outputs = j + 1 < n && next(3) == 0;
            for p in 0..producers {
                let k = 1 + next(j.min(3));
                let inputs: BTreeSet<usize> = (0..k).map(|_| next(j)).collect();
                let mut outputs = vec![name(j)];
                if two_outputs {
                    outputs.push(name(j + 1));
                }
                nodes.push(ComputeNode {
                    id: NodeId::new(format!("n{j}_{p}_op")).unwrap(),
                    inputs: inputs.into_iter().map(name).collect(),
                    outputs,
                });
            }
            j += if two_outputs { 2 } else { 1 };
        }
        let mut streams: Vec<StreamId> = (0..n).map(name).collect();
        for i in (1..n).rev() {
            streams.swap(i, next(i + 1));
        }
        let target = name(n - 1);
        DataflowGraph::new(streams, nodes, target).expect("generated graphs are acyclic")
    })
}

/// Reachability by iterating "add every parent" to a fixed point.
fn reachable(graph: &DataflowGraph, y: &str) -> HashSet<String> {
    let mut set: HashSet<String> = HashSet::from([y.to_string()]);
    loop {
        let mut grown = set.clone();
        for node in graph.nodes() {
            if node.outputs.iter().any(|o| set.contains(o.as_str())) {
                grown.extend(node.inputs.iter().map(|s| s.to_string()));
            }
        }
        if grown.len() == set.len() {
            return set;
        }
        set = grown;
    }
}

proptest! {
    #[test]
    fn topological_order_puts_parents_first(graph in arb_graph()) {
        let order = graph.topological_order().unwrap();
        prop_assert_eq!(order.len(), graph.streams().len());
        let position = |s: &StreamId| order.iter().position(|o| o == s).unwrap();
        for node in graph.nodes() {
            for i in &node.inputs {
                for o in &node.outputs {
                    prop_assert!(position(i) < position(o), "{} before {}", i, o);
                }
            }
        }
    }

    #[test]
    fn ancestors_match_reachability_fixed_point(graph in arb_graph()) {
        for s in graph.streams() {
            let ancestors = graph.ancestors_of_target(s.as_str()).unwrap();
            prop_assert_eq!(&ancestors[0], s);
            let unique: HashSet<String> = ancestors.iter().map(|a| a.to_string()).collect();
            prop_assert_eq!(unique.len(), ancestors.len());
            prop_assert_eq!(unique, reachable(&graph, s.as_str()));
        }
    }

    #[test]
    fn json_round_trip_preserves_graph(graph in arb_graph()) {
        let back = parse_graph(&graph.to_json()).unwrap();
        prop_assert_eq!(&back, &graph);
        prop_assert_eq!(back.topological_order().unwrap(), graph.topological_order().unwrap());
    }

    #[test]
    fn roots_are_exactly_unproduced_streams(graph in arb_graph()) {
        for s in graph.streams() {
            let produced = graph.producers_of(s.as_str()).next().is_some();
            prop_assert_eq!(graph.is_root(s.as_str()).unwrap(), !produced);
        }
    }
}

#[test]
fn reference_pipelines_are_valid_and_ordered() {
    for pipeline in flowrca::Pipeline::ALL {
        let spec = pipeline.spec();
        assert!(spec.graph.validate().is_empty(), "{pipeline}");
        let ancestors = spec.graph.ancestors_of_target(spec.target()).unwrap();
        assert_eq!(ancestors.len(), spec.graph.streams().len(), "{pipeline}: every stream feeds the target");
    }
}
