//! Seeded generators for tests, examples and benchmarks.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde_json::Value;

use crate::ground::{Prop, RawNode, RawSample};
use crate::ilp::{log_odds, IlpModel, ModelBuilder};

/// Random formula over variables `0..num_vars` with at most `max_atoms` leaves.
pub fn random_prop<R: Rng + ?Sized>(rng: &mut R, num_vars: usize, max_atoms: usize) -> Prop {
    let budget = rng.gen_range(1..=max_atoms.max(1));
    prop_with(rng, num_vars, budget, 4)
}

fn prop_with<R: Rng + ?Sized>(rng: &mut R, num_vars: usize, budget: usize, depth: usize) -> Prop {
    let leaf = budget <= 1 || depth == 0 || rng.gen_bool(0.15);
    if leaf {
        return if rng.gen_bool(0.05) { Prop::Const(rng.gen()) } else { Prop::Var(rng.gen_range(0..num_vars)) };
    }
    if rng.gen_bool(0.15) {
        return Prop::Not(Box::new(prop_with(rng, num_vars, budget, depth - 1)));
    }
    let arity = rng.gen_range(2..=budget.min(3));
    // split the budget into `arity` positive parts
    let mut parts = vec![1; arity];
    for _ in 0..rng.gen_range(0..=budget - arity) {
        let i = rng.gen_range(0..arity);
        parts[i] += 1;
    }
    let mut kids: Vec<Prop> = parts.into_iter().map(|b| prop_with(rng, num_vars, b, depth - 1)).collect();
    match rng.gen_range(0..4) {
        0 => Prop::And(kids),
        1 => Prop::Or(kids),
        2 => {
            let b = kids.pop().expect("arity >= 2");
            let a = if kids.len() == 1 { kids.pop().expect("one left") } else { Prop::And(kids) };
            Prop::If(Box::new(a), Box::new(b))
        }
        _ => {
            let k = rng.gen_range(1..kids.len());
            Prop::AtMost(k, kids)
        }
    }
}

/// Random compiled model with at most `max_vars` variables, decision and auxiliary.
///
/// Scores sometimes repeat so that ties in the objective are common.
pub fn random_model<R: Rng + ?Sized>(rng: &mut R, max_vars: usize) -> IlpModel {
    let n = rng.gen_range(1..=8.min(max_vars.max(1)));
    let names = (0..n).map(|i| format!("x{i}")).collect();
    let objective = (0..n)
        .map(|_| {
            let p = if rng.gen_bool(0.2) { [0.5, 0.3, 0.7][rng.gen_range(0..3)] } else { rng.gen_range(0.02..0.98) };
            log_odds(p)
        })
        .collect();
    let mut b = ModelBuilder::new(names, objective);
    let target = rng.gen_range(n..=max_vars.max(n));
    let mut kept: Vec<Prop> = Vec::new();
    for c in 0..16 {
        if b.num_vars() >= target {
            break;
        }
        let p = random_prop(rng, n, 6);
        kept.push(p.clone());
        // mostly keep the constraint set satisfiable, occasionally not
        if !satisfiable(&kept, n) && !rng.gen_bool(0.05) {
            kept.pop();
            continue;
        }
        let mut trial = b.clone();
        trial.require(&format!("lc{c}"), &p);
        if trial.num_vars() <= max_vars {
            b = trial;
        } else {
            kept.pop();
        }
    }
    b.finish()
}

fn satisfiable(props: &[Prop], n: usize) -> bool {
    (0u32..1 << n).any(|mask| {
        let values: Vec<bool> = (0..n).map(|i| mask >> i & 1 == 1).collect();
        props.iter().all(|p| p.eval(&values))
    })
}

/// Schema of the synthetic entity-relation task.
pub const EMR_SYNTH_DK: &str = "\
# Synthetic entity-relation task: typed phrases and one relation.
concept sentence;
concept phrase;
concept pair;

concept people: phrase;
concept organization: phrase;
concept location: phrase;
concept work_for: pair;

sentence.contains(phrase)
pair.has_a(arg1=phrase, arg2=phrase)

ifL(work_for('x'), andL(people(path=('x', arg1)), organization(path=('x', arg2))))
disjoint(people, organization, location)
";

const EMR_TYPES: [&str; 3] = ["people", "organization", "location"];

/// Knobs of [`emr_dataset`].
#[derive(Debug, Clone, PartialEq)]
pub struct EmrConfig {
    pub samples: usize,
    /// Probability that a phrase's type label is redrawn at random.
    pub label_noise: f64,
    /// Standard deviation of the Gaussian feature noise.
    pub feature_noise: f64,
    /// Every `ambiguous_every`-th sample gets one people phrase carrying
    /// strong organization features as well. 0 disables.
    pub ambiguous_every: usize,
}

impl EmrConfig {
    pub fn train(samples: usize) -> Self {
        EmrConfig { samples, label_noise: 0.1, feature_noise: 0.3, ambiguous_every: 0 }
    }

    pub fn test(samples: usize) -> Self {
        EmrConfig { samples, label_noise: 0.0, feature_noise: 0.3, ambiguous_every: 2 }
    }
}

fn round4(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

fn labels(pairs: &[(&str, bool)]) -> BTreeMap<String, Value> {
    pairs.iter().map(|&(c, b)| (c.to_string(), Value::Bool(b))).collect()
}

fn node(id: String, concept: &str, features: Vec<f64>, labels: BTreeMap<String, Value>) -> RawNode {
    RawNode { id, concept: concept.into(), features, attrs: BTreeMap::new(), labels }
}

/// Sentences of 3 or 4 phrases with every ordered pair as a relation
/// candidate. Phrase features are a scaled one-hot centroid of the true
/// class (people, organization, location, none) plus noise; `work_for`
/// holds exactly for (people, organization) pairs, so gold labels always
/// satisfy the constraints.
pub fn emr_dataset<R: Rng + ?Sized>(rng: &mut R, cfg: &EmrConfig) -> Vec<RawSample> {
    let noise = Normal::new(0.0, cfg.feature_noise).expect("finite noise");
    let mut out = Vec::with_capacity(cfg.samples);
    for s in 0..cfg.samples {
        let n = rng.gen_range(3..=4);
        let ambiguous = cfg.ambiguous_every > 0 && s % cfg.ambiguous_every == 0;
        let mut sample = RawSample::default();
        sample.nodes.push(node(format!("s{s}"), "sentence", Vec::new(), BTreeMap::new()));
        let mut types = Vec::with_capacity(n);
        for i in 0..n {
            // class 3 is "no type"
            let mut class = [0, 0, 0, 1, 1, 1, 2, 2, 3][rng.gen_range(0..9)];
            let mut centroid = [0.0; 4];
            centroid[class] = 2.0;
            if ambiguous && i == 0 {
                // a people phrase that looks like an organization too
                class = 0;
                centroid = [4.0, 4.0, 0.0, 0.0];
            }
            let features = centroid.iter().map(|c| round4(c + noise.sample(rng))).collect();
            let label = if cfg.label_noise > 0.0 && rng.gen_bool(cfg.label_noise) { rng.gen_range(0..4) } else { class };
            types.push(label);
            let l: Vec<(&str, bool)> = EMR_TYPES.iter().enumerate().map(|(k, &c)| (c, k == label)).collect();
            let id = format!("s{s}_ph{i}");
            sample.contains.push((format!("s{s}"), id.clone()));
            sample.nodes.push(node(id, "phrase", features, labels(&l)));
        }
        for a in 0..n {
            for b in 0..n {
                if a == b {
                    continue;
                }
                let id = format!("s{s}_p{a}{b}");
                let holds = types[a] == 0 && types[b] == 1;
                sample.nodes.push(node(id.clone(), "pair", Vec::new(), labels(&[("work_for", holds)])));
                sample.has_a.push((id.clone(), "arg1".into(), format!("s{s}_ph{a}")));
                sample.has_a.push((id, "arg2".into(), format!("s{s}_ph{b}")));
            }
        }
        out.push(sample);
    }
    out
}

pub const FIRESTATION_DK: &str = "\
# Every city has a fire station or a neighbouring city that has one.
concept city;
concept neighbor;
concept firestationCity: city;

neighbor.has_a(arg1=city, arg2=city)

orL(firestationCity('x'), existsL(firestationCity(path=('x', neighbor.arg2))))
";

/// `n` cities on a ring, each linked to both neighbours in both directions.
pub fn city_ring(n: usize) -> RawSample {
    let mut s = RawSample::default();
    let city = |i: usize| format!("c{}", i % n + 1);
    for i in 0..n {
        s.nodes.push(node(city(i), "city", Vec::new(), BTreeMap::new()));
    }
    for i in 0..n {
        for j in [i + n - 1, i + 1] {
            let id = format!("n{}_{}", i + 1, j % n + 1);
            s.nodes.push(node(id.clone(), "neighbor", Vec::new(), BTreeMap::new()));
            s.has_a.push((id.clone(), "arg1".into(), city(i)));
            s.has_a.push((id, "arg2".into(), city(j)));
        }
    }
    s
}

pub const QA_DK: &str = "\
# Effect questions over a paragraph. A symmetric pair of questions asks
# about opposite perturbations, so their answers must be opposite too.
concept paragraph;
concept question;
concept symmetric;

concept is_more: question;
concept is_less: question;
concept no_effect: question;

paragraph.contains(question)
symmetric.has_a(arg1=question, arg2=question)

ifL(symmetric('s'), ifL(is_more(path=('s', arg1)), is_less(path=('s', arg2))))
ifL(symmetric('s'), ifL(is_less(path=('s', arg1)), is_more(path=('s', arg2))))
disjoint(is_more, is_less, no_effect)
";

/// One paragraph with two symmetric question pairs.
pub fn qa_paragraph() -> RawSample {
    let mut s = RawSample::default();
    s.nodes.push(node("para".into(), "paragraph", Vec::new(), BTreeMap::new()));
    for q in ["q1", "q2", "q3", "q4"] {
        s.nodes.push(node(q.into(), "question", Vec::new(), BTreeMap::new()));
        s.contains.push(("para".into(), q.into()));
    }
    for (id, a, b) in [("s12", "q1", "q2"), ("s34", "q3", "q4")] {
        s.nodes.push(node(id.into(), "symmetric", Vec::new(), BTreeMap::new()));
        s.has_a.push((id.into(), "arg1".into(), a.into()));
        s.has_a.push((id.into(), "arg2".into(), b.into()));
    }
    s
}

/// Scores for [`qa_paragraph`]: locally, both questions of the first pair
/// lean towards `is_more`, which the symmetry rule forbids.
pub fn qa_scores() -> BTreeMap<String, BTreeMap<String, f64>> {
    let rows = [
        ("q1", [0.8, 0.1, 0.2]),
        ("q2", [0.6, 0.45, 0.2]),
        ("q3", [0.2, 0.7, 0.3]),
        ("q4", [0.3, 0.2, 0.55]),
    ];
    rows.iter()
        .map(|(q, ps)| {
            let m = ["is_more", "is_less", "no_effect"].iter().zip(ps).map(|(c, &p)| (c.to_string(), p)).collect();
            (q.to_string(), m)
        })
        .collect()
}

/// Dataset JSON with one sample per line.
pub fn dataset_json(samples: &[RawSample]) -> String {
    let lines: Vec<String> = samples.iter().map(|s| serde_json::to_string(s).expect("sample serializes")).collect();
    format!("[\n{}\n]\n", lines.join(",\n"))
}

fn pretty<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializes") + "\n"
}

/// Every shipped asset that is produced by a generator, by file name.
pub fn generated_assets() -> Vec<(&'static str, String)> {
    use rand::SeedableRng;
    let emr = |seed: u64, cfg: EmrConfig| {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        dataset_json(&emr_dataset(&mut rng, &cfg))
    };
    let ring = city_ring(6);
    let ring_scores: BTreeMap<String, BTreeMap<String, f64>> =
        (1..=6).map(|i| (format!("c{i}"), BTreeMap::from([("firestationCity".to_string(), 0.3)]))).collect();
    vec![
        ("emr_synth.dk", EMR_SYNTH_DK.to_string()),
        ("emr_synth_train.json", emr(1, EmrConfig::train(200))),
        ("emr_synth_dev.json", emr(2, EmrConfig::train(50))),
        ("emr_synth_test.json", emr(3, EmrConfig::test(50))),
        ("firestation.dk", FIRESTATION_DK.to_string()),
        ("firestation_ring.json", pretty(&ring)),
        ("firestation_scores.json", pretty(&ring_scores)),
        ("qa.dk", QA_DK.to_string()),
        ("qa.json", pretty(&qa_paragraph())),
        ("qa_scores.json", pretty(&qa_scores())),
    ]
}
