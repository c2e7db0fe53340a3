use super::*;
use crate::ground::{ground, load_data, RawSample};
use crate::lclang::parse;
use crate::softlogic::kink_distance;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const EMR: &str = include_str!("../../../../assets/emr.dk");
const PAIR: &str = include_str!("../../../../assets/emr_pair.json");

struct Fixture {
    graph: ConceptGraph,
    dng: DataNodeGraph,
    grounding: Grounding,
    labels: Vec<Option<bool>>,
}

fn fixture(rng: &mut ChaCha8Rng) -> Fixture {
    let d = parse(EMR).unwrap();
    let mut raw: RawSample = serde_json::from_str(PAIR).unwrap();
    for n in &mut raw.nodes {
        if n.concept == "phrase" {
            n.features = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        }
    }
    let dng = DataNodeGraph::from_raw(raw, &d.graph).unwrap();
    let grounding = ground(&d.graph, &d.constraints, &dng).unwrap();
    let labels = (0..grounding.index.len())
        .map(|i| if i % 5 == 4 { None } else { Some(rng.gen_bool(0.5)) })
        .collect();
    Fixture { graph: d.graph, dng, grounding, labels }
}

fn all_trainable(_: &str) -> bool {
    true
}

fn analytic(f: &Fixture, params: &ParameterStore, grad_scores: &[f64], probs: &[f64]) -> Vec<f64> {
    let g = backward(&f.dng, &f.grounding.index, probs, grad_scores, &all_trainable);
    let mut full: Gradients =
        params.concepts.iter().map(|(c, cp)| (c.clone(), ConceptParams { weights: vec![0.0; cp.weights.len()], bias: 0.0 })).collect();
    for (c, cp) in g {
        full.insert(c, cp);
    }
    flatten(&full)
}

fn numeric(params: &ParameterStore, loss: &dyn Fn(&ParameterStore) -> f64) -> Vec<f64> {
    let eps = 1e-5;
    let theta = params.theta();
    let mut p = params.clone();
    (0..theta.len())
        .map(|i| {
            let mut t = theta.clone();
            t[i] += eps;
            p.set_theta(&t);
            let hi = loss(&p);
            t[i] -= 2.0 * eps;
            p.set_theta(&t);
            let lo = loss(&p);
            (hi - lo) / (2.0 * eps)
        })
        .collect()
}

fn assert_close(a: &[f64], n: &[f64], what: &str) {
    assert_eq!(a.len(), n.len());
    for (i, (x, y)) in a.iter().zip(n).enumerate() {
        let rel = (x - y).abs() / x.abs().max(y.abs()).max(1e-6);
        assert!(rel < 1e-4, "{what}[{i}]: analytic {x} vs numeric {y}");
    }
}

fn random_params(f: &Fixture, rng: &mut ChaCha8Rng) -> ParameterStore {
    let dims = feature_dims(&f.graph, std::slice::from_ref(&f.dng));
    let mut p = ParameterStore::random(&dims, rng, 1.0);
    for cp in p.concepts.values_mut() {
        cp.bias = rng.gen_range(-1.0..1.0);
    }
    p
}

#[test]
fn zero_weights_give_half() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let f = fixture(&mut rng);
    let dims = feature_dims(&f.graph, std::slice::from_ref(&f.dng));
    assert_eq!(dims["people"], 3);
    assert_eq!(dims["work_for"], 6);
    let s = predict(&ParameterStore::zeros(&dims), &f.dng, &f.grounding.index).unwrap();
    // 2 phrases x 4 entity concepts + 2 pairs x 2 relations
    assert_eq!(s.len(), 12);
    assert!(s.as_slice().iter().all(|&p| p == 0.5));
}

#[test]
fn missing_features_are_a_dimension_error() {
    let d = parse(EMR).unwrap();
    let dng = load_data(PAIR, &d.graph).unwrap();
    let dims = feature_dims(&d.graph, std::slice::from_ref(&dng));
    let bare = load_data(r#"{"nodes":[{"id":"a","concept":"phrase"}]}"#, &d.graph).unwrap();
    let idx = DecisionIndex::new(&d.graph, &bare);
    let err = predict(&ParameterStore::zeros(&dims), &bare, &idx).unwrap_err();
    assert_eq!(err, TrainError::DimMismatch { node: "a".into(), concept: "entity".into(), expected: 2, found: 0 });
}

#[test]
fn composite_features_concatenate_members() {
    let d = parse(EMR).unwrap();
    let dng = load_data(PAIR, &d.graph).unwrap();
    assert_eq!(node_features(&dng, "p21").unwrap(), vec![0.0, 1.0, 1.0, 0.0]);
    assert_eq!(node_features(&dng, "s1").unwrap(), Vec::<f64>::new());
}

#[test]
fn nll_values() {
    let (l, _) = nll_loss(&[1.0, 0.0], &[Some(true), Some(false)]);
    assert!(l < 1e-6);
    let (l, g) = nll_loss(&[0.5], &[Some(true)]);
    assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
    assert_eq!(g, vec![-2.0]);
    let (l, g) = nll_loss(&[0.3], &[None]);
    assert_eq!((l, g), (0.0, vec![0.0]));
}

#[test]
fn iml_identities() {
    let scores = [0.2, 0.7, 0.9, 0.4];
    let labels = [Some(true), Some(false), Some(true), Some(false)];
    let fstar = [true, false, true, false];
    let (l, g) = iml_loss(&scores, &labels, &fstar, 1.0).unwrap();
    assert_eq!(l, 0.0);
    assert!(g.iter().all(|&x| x == 0.0));
    let (l, _) = iml_loss(&scores, &labels, &[false; 4], 1.0).unwrap();
    let positive_only = nll_loss(&scores, &[Some(true), None, Some(true), None]).0;
    assert_eq!(l, positive_only);
    let (l, g) = iml_loss(&scores, &labels, &[false, true, false, true], 0.0).unwrap();
    let (n, ng) = nll_loss(&scores, &labels);
    assert!((l - n).abs() <= 1e-12);
    assert_eq!(g, ng);
    assert!(matches!(iml_loss(&scores, &labels, &[true], 0.5), Err(TrainError::MissingAssignment { .. })));
}

#[test]
fn iml_is_nll_with_masked_terms_removed() {
    let scores = [0.2, 0.7, 0.9, 0.4];
    let labels = [Some(true), Some(true), Some(true), Some(false)];
    let fstar = [true, false, false, true];
    let (l, _) = iml_loss(&scores, &labels, &fstar, 1.0).unwrap();
    let masked: Vec<Option<bool>> =
        labels.iter().zip(&fstar).map(|(y, &f)| if *y == Some(true) && !f { Some(true) } else { None }).collect();
    assert_eq!(l, nll_loss(&scores, &masked).0);
}

#[test]
fn pd_identities() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let f = fixture(&mut rng);
    let params = random_params(&f, &mut rng);
    let s = predict(&params, &f.dng, &f.grounding.index).unwrap();
    let pd = pd_loss(s.as_slice(), &f.labels, &f.grounding, &params);
    let (n, ng) = nll_loss(s.as_slice(), &f.labels);
    assert!((pd.loss - n).abs() <= 1e-12);
    assert_eq!(pd.grad_scores, ng);
    assert_eq!(pd.grad_lambda.len(), 3);

    // a consistent boolean assignment has no penalty whatever the multipliers
    let mut with_m = params.clone();
    for id in ["lc0", "lc1", "lc2"] {
        with_m.multipliers.insert(id.into(), 3.0);
    }
    let idx = &f.grounding.index;
    let mut b = vec![0.0; idx.len()];
    for (n, c) in [("p12", "work_for"), ("ph1", "entity"), ("ph1", "people"), ("ph2", "entity"), ("ph2", "organization")] {
        b[idx.get(n, c).unwrap()] = 1.0;
    }
    let pd = pd_loss(&b, &f.labels, &f.grounding, &with_m);
    let (n, _) = nll_loss(&b, &f.labels);
    assert!(pd.grad_lambda.values().all(|&v| v == 0.0));
    assert_eq!(pd.loss, n);
}

#[test]
fn pd_step_rules() {
    let mut p = ParameterStore::zeros(&BTreeMap::from([("a".to_string(), 2)]));
    p.concepts.get_mut("a").unwrap().weights = vec![0.5, -0.5];
    p.multipliers.insert("lc0".into(), 0.2);
    let same = pd_step(&p, &Gradients::new(), &BTreeMap::from([("lc0".to_string(), 0.0)]), 0.1, 0.1);
    assert_eq!(same, p);
    let next = pd_step(&p, &Gradients::new(), &BTreeMap::from([("lc0".to_string(), -5.0)]), 0.1, 0.1);
    assert_eq!(next.multipliers["lc0"], 0.0);
    let g = Gradients::from([("a".to_string(), ConceptParams { weights: vec![1.0, 2.0], bias: -1.0 })]);
    let next = pd_step(&p, &g, &BTreeMap::new(), 0.5, 0.1);
    assert_eq!(next.concepts["a"], ConceptParams { weights: vec![0.0, -1.5], bias: 0.5 });
}

#[test]
fn multipliers_stay_nonnegative() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut p = ParameterStore::default();
    for _ in 0..1000 {
        let g = BTreeMap::from([(format!("lc{}", rng.gen_range(0..3)), rng.gen_range(-2.0..1.0))]);
        p = pd_step(&p, &Gradients::new(), &g, 0.1, rng.gen_range(0.0..1.0));
        assert!(p.multipliers.values().all(|&m| m >= 0.0));
    }
}

#[test]
fn gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut nll_pts, mut iml_pts, mut pd_pts) = (0, 0, 0);
    while nll_pts < 100 || pd_pts < 100 {
        let f = fixture(&mut rng);
        let mut params = random_params(&f, &mut rng);
        for id in ["lc0", "lc1", "lc2"] {
            params.multipliers.insert(id.into(), rng.gen_range(0.1..2.0));
        }
        let idx = &f.grounding.index;
        let probs = forward(&params, &f.dng, idx).unwrap();

        let (_, g) = nll_loss(&probs, &f.labels);
        let num = numeric(&params, &|p| nll_loss(&forward(p, &f.dng, idx).unwrap(), &f.labels).0);
        assert_close(&analytic(&f, &params, &g, &probs), &num, "nll");
        nll_pts += 1;

        let fstar: Vec<bool> = (0..idx.len()).map(|_| rng.gen_bool(0.5)).collect();
        let lambda = rng.gen_range(0.0..1.0);
        let (_, g) = iml_loss(&probs, &f.labels, &fstar, lambda).unwrap();
        let num = numeric(&params, &|p| iml_loss(&forward(p, &f.dng, idx).unwrap(), &f.labels, &fstar, lambda).unwrap().0);
        assert_close(&analytic(&f, &params, &g, &probs), &num, "iml");
        iml_pts += 1;

        let far = f.grounding.constraints.iter().all(|gc| kink_distance(&gc.expr, &probs) > 1e-3);
        if far {
            let pd = pd_loss(&probs, &f.labels, &f.grounding, &params);
            let num = numeric(&params, &|p| pd_loss(&forward(p, &f.dng, idx).unwrap(), &f.labels, &f.grounding, p).loss);
            assert_close(&analytic(&f, &params, &pd.grad_scores, &probs), &num, "pd");
            pd_pts += 1;
        }
    }
    assert!(iml_pts >= 100);
}

#[test]
fn prf1_formula() {
    let d = parse("concept t; concept a: t;").unwrap();
    let dng = load_data(
        r#"{"nodes":[{"id":"1","concept":"t"},{"id":"2","concept":"t"},{"id":"3","concept":"t"},{"id":"4","concept":"t"},{"id":"5","concept":"t"}]}"#,
        &d.graph,
    )
    .unwrap();
    let idx = DecisionIndex::new(&d.graph, &dng);
    let labels = [Some(true), Some(true), Some(true), Some(true), Some(false)];
    let m = prf1(&idx, &[true, true, false, false, true], &labels);
    assert_eq!(m.micro.counts, Counts { tp: 2, fp: 1, fn_: 2 });
    assert!((m.micro.precision - 2.0 / 3.0).abs() < 1e-15);
    assert_eq!(m.micro.recall, 0.5);
    assert!((m.micro.f1 - 4.0 / 7.0).abs() < 1e-15);
    let perfect = prf1(&idx, &[true, true, true, true, false], &labels);
    assert_eq!((perfect.micro.precision, perfect.micro.recall, perfect.micro.f1), (1.0, 1.0, 1.0));
    let none = prf1(&idx, &[false; 5], &labels);
    assert_eq!((none.micro.recall, none.micro.f1), (0.0, 0.0));
    let json = serde_json::to_string(&m.micro).unwrap();
    assert!(json.contains("\"fn\":2"), "{json}");
}

#[test]
fn confusion_sums_samples() {
    let d = parse("concept t; concept a: t; concept b: t;").unwrap();
    let dng = load_data(r#"{"nodes":[{"id":"1","concept":"t"},{"id":"2","concept":"t"}]}"#, &d.graph).unwrap();
    let idx = DecisionIndex::new(&d.graph, &dng);
    let labels = [Some(true), Some(false), Some(true), None];
    let mut total = Confusion::new();
    let mut a = Confusion::new();
    a.add(&idx, &[true, true, false, true], &labels, &|_| true);
    let mut b = Confusion::new();
    b.add(&idx, &[true, false, true, false], &labels, &|c| c == "a");
    total.merge(&a);
    total.merge(&b);
    assert_eq!(total.counts()["a"], Counts { tp: 3, fp: 0, fn_: 1 });
    assert_eq!(total.counts()["b"], Counts { tp: 0, fp: 1, fn_: 0 });
    assert_eq!(threshold(&[0.5, 0.5000001, 0.2]), vec![false, true, false]);
}

#[test]
fn params_json_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let f = fixture(&mut rng);
    let mut p = random_params(&f, &mut rng);
    p.multipliers.insert("lc0".into(), 0.25);
    let back = ParameterStore::from_json(&p.to_json()).unwrap();
    assert_eq!(back, p);
    assert_eq!(back.to_json(), p.to_json());
}
