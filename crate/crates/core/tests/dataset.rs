use flowrca::dataset::load_window_jsonl;
use flowrca::{impute_absent, load_window, simulate, summary_stats, Error, ImputePolicy, Pipeline, WindowLabel};
use proptest::prelude::*;

fn graph() -> flowrca::DataflowGraph {
    Pipeline::Insurance.spec().graph
}

#[test]
fn simulated_csv_round_trips_exactly() {
    let ds = simulate(&Pipeline::Insurance.spec(), None, 300, 3).unwrap();
    assert!(ds.has_absent());
    let back = load_window(&ds.to_csv(), &graph(), WindowLabel::Old).unwrap();
    assert_eq!(back, ds);
}

#[test]
fn malformed_csv_is_rejected() {
    let g = graph();
    let cases = [
        ("unit_id,input\n", "zero rows"),
        ("id,input\n0,1\n", "unit_id"),
        ("unit_id,nope\n0,1\n", "not a stream"),
        ("unit_id,input,input\n0,1,2\n", "twice"),
        ("unit_id,input\n0,abc\n", "not a finite"),
        ("unit_id,input\n0,inf\n", "not a finite"),
        ("unit_id,input\n0,1,2\n", "ragged"),
    ];
    for (text, needle) in cases {
        match load_window(text, &g, WindowLabel::Old) {
            Err(Error::Dataset(msg)) => assert!(msg.contains(needle), "{text:?}: {msg}"),
            other => panic!("{text:?}: expected a dataset error, got {other:?}"),
        }
    }
}

#[test]
fn columns_follow_graph_order_whatever_the_header_order() {
    let ds = load_window("unit_id,output,input\na,2,1\nb,4,3\n", &graph(), WindowLabel::New).unwrap();
    let names: Vec<&str> = ds.columns().keys().map(|s| s.as_str()).collect();
    assert_eq!(names, ["input", "output"]);
    assert_eq!(ds.values("output").unwrap(), [2.0, 4.0]);
    assert_eq!(ds.window(), WindowLabel::New);
}

#[test]
fn jsonl_missing_keys_are_absent() {
    let text = "{\"unit_id\":\"u0\",\"input\":1.5,\"simple_claims\":1.5}\n{\"input\":20}\n";
    let ds = load_window_jsonl(text, &graph(), WindowLabel::Old).unwrap();
    assert_eq!(ds.unit_ids(), ["u0", "1"]);
    assert_eq!(ds.column("simple_claims").unwrap(), &vec![Some(1.5), None]);
}

#[test]
fn summary_counts_present_cells() {
    let ds = load_window("unit_id,input,simple_claims\na,1,\nb,3,5\n", &graph(), WindowLabel::Old).unwrap();
    let s = summary_stats(&ds);
    let input = &s["input"];
    assert_eq!((input.n, input.mean, input.variance), (2, Some(2.0), Some(2.0)));
    assert_eq!(s["simple_claims"].absent_fraction, 0.5);
}

proptest! {
    #[test]
    fn imputation_leaves_no_absent_cells(seed in 0u64..50, n in 5usize..80) {
        let ds = simulate(&Pipeline::Insurance.spec(), None, n, seed).unwrap();
        let zero = impute_absent(&ds, ImputePolicy::Zero).unwrap();
        prop_assert!(!zero.has_absent());
        prop_assert_eq!(zero.len(), ds.len());
        for (s, col) in ds.columns() {
            for (a, b) in col.iter().zip(zero.column(s.as_str()).unwrap()) {
                prop_assert_eq!(b.unwrap(), a.unwrap_or(0.0));
            }
        }
        // Every insurance claim skips one branch, so dropping units leaves nothing.
        prop_assert!(impute_absent(&ds, ImputePolicy::DropUnit).is_err());
    }
}
