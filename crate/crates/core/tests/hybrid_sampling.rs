use flowrca::mechanisms::sample_hybrid;
use flowrca::stats::{perm_test, TestStatistic};
use flowrca::{
    impute_absent, simulate, ConditionalModel, FaultSpec, ImputePolicy, MechanismSet, Pipeline, StreamId,
    WindowLabel, WindowedDataset,
};

fn fitted(ds: &WindowedDataset, pipeline: Pipeline) -> MechanismSet {
    let spec = pipeline.spec();
    let ds = impute_absent(ds, ImputePolicy::Zero).unwrap();
    let ancestors = spec.graph.ancestors_of_target(spec.target()).unwrap();
    MechanismSet::fit(&spec.graph, &ds, &ancestors, |_| ConditionalModel::Linear).unwrap()
}

fn windows(pipeline: Pipeline, fault: Option<FaultSpec>, seed: u64) -> (MechanismSet, MechanismSet) {
    let spec = pipeline.spec();
    let old = simulate(&spec, None, spec.default_units, seed).unwrap();
    let new = simulate(&spec, fault.as_ref(), spec.default_units, seed + 1000)
        .unwrap()
        .with_window(WindowLabel::New);
    (fitted(&old, pipeline), fitted(&new, pipeline))
}

fn ks_p(a: &[f64], b: &[f64]) -> f64 {
    perm_test(a, b, TestStatistic::Ks, 199, 17).unwrap().p_value
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    (m, x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0))
}

#[test]
fn sampling_is_a_pure_function_of_the_seed() {
    let spec = Pipeline::Insurance.spec();
    let (old, new) = windows(Pipeline::Insurance, Some(FaultSpec::logic_bug("classify_claim_complexity_op")), 1);
    let replaced = [StreamId::new("simple_claims").unwrap()];
    let a = sample_hybrid(&spec.graph, &old, &new, &replaced, 500, 9).unwrap();
    let b = sample_hybrid(&spec.graph, &old, &new, &replaced, 500, 9).unwrap();
    let c = sample_hybrid(&spec.graph, &old, &new, &replaced, 500, 10).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn empty_and_full_replacement_reproduce_the_fitted_models() {
    let spec = Pipeline::Insurance.spec();
    let (old, new) = windows(Pipeline::Insurance, Some(FaultSpec::logic_bug("classify_claim_complexity_op")), 2);
    let all = spec.graph.ancestors_of_target(spec.target()).unwrap();
    let n = 5000;

    let hybrid_none = sample_hybrid(&spec.graph, &old, &new, &[], n, 1).unwrap();
    let old_model = sample_hybrid(&spec.graph, &old, &old, &[], n, 2).unwrap();
    assert!(ks_p(&hybrid_none, &old_model) >= 0.01);

    let hybrid_all = sample_hybrid(&spec.graph, &old, &new, &all, n, 3).unwrap();
    let new_model = sample_hybrid(&spec.graph, &new, &new, &[], n, 4).unwrap();
    assert!(ks_p(&hybrid_all, &new_model) >= 0.01);

    // The two fitted models differ, so the test has power here.
    assert!(ks_p(&hybrid_none, &hybrid_all) < 0.01);
}

#[test]
fn replacing_only_the_shifted_input_tracks_the_new_target_mean() {
    let spec = Pipeline::Insurance.spec();
    let old_ds = simulate(&spec, None, 1000, 3).unwrap();
    let new_ds = simulate(&spec, Some(&FaultSpec::input_shift("input", 1.5)), 1000, 4).unwrap();
    let (old, new) = (fitted(&old_ds, Pipeline::Insurance), fitted(&new_ds, Pipeline::Insurance));
    let input = [StreamId::new("input").unwrap()];
    let hybrid = sample_hybrid(&spec.graph, &old, &new, &input, 10_000, 5).unwrap();
    let (mh, vh) = mean_var(&hybrid);
    let (mn, vn) = mean_var(&new_ds.values("output").unwrap());
    let se = (vh / hybrid.len() as f64 + vn / 1000.0).sqrt();
    assert!((mh - mn).abs() <= 2.0 * se, "hybrid mean {mh:.1}, new mean {mn:.1}, se {se:.1}");
}

#[test]
fn same_process_windows_give_indistinguishable_hybrids() {
    let spec = Pipeline::Insurance.spec();
    let (old, new) = windows(Pipeline::Insurance, None, 5);
    let ancestors = spec.graph.ancestors_of_target(spec.target()).unwrap();
    let n = 2000;
    let baseline = sample_hybrid(&spec.graph, &old, &new, &[], n, 100).unwrap();
    let mut subsets: Vec<Vec<StreamId>> = ancestors.iter().map(|s| vec![s.clone()]).collect();
    subsets.push(ancestors.clone());
    for (i, t) in subsets.iter().enumerate() {
        let hybrid = sample_hybrid(&spec.graph, &old, &new, t, n, 200 + i as u64).unwrap();
        let p = ks_p(&hybrid, &baseline);
        assert!(p >= 0.01, "{t:?}: p = {p}");
    }
}
