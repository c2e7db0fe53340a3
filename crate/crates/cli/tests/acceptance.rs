//! Acceptance gate: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the report reads top to bottom;
//! the process fails if any criterion fails.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use dekl::ground::{ground, load_data, load_dataset, DataNodeGraph, GroundedConstraint, Grounding, Prop, ScoreVector};
use dekl::ilp::{brute_force, compile, solve, ModelBuilder, SolveError, SolverConfig};
use dekl::lclang::parse;
use dekl::program::{init_params, Program, ProgramSpec, Strategy};
use dekl::softlogic::{kink_distance, soft_eval};
use dekl::synth::{random_model, random_prop};
use dekl::train::{iml_loss, nll_loss, pd_loss, ParameterStore};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

fn assets() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../assets")
}

fn asset(name: &str) -> String {
    assets().join(name).to_str().unwrap().to_string()
}

fn dekl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dekl")).args(args).output().expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    assert!(out.status.success(), "exit {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6) < 1e-4
}

// 1
fn work_for_rule_fidelity() {
    let dir = tempfile::tempdir().unwrap();
    let lp = dir.path().join("a.lp");
    let out = dekl(&[
        "compile",
        "--dsl",
        &asset("work_for_rule.dk"),
        "--data",
        &asset("emr_one_pair.json"),
        "--uniform",
        "--emit-lp",
        lp.to_str().unwrap(),
    ]);
    let model = stdout_json(&out);
    let text = std::fs::read_to_string(&lp).unwrap();
    let golden = include_str!("golden/work_for_rule_uniform.lp");
    assert_eq!(text, golden);
    let rows: Vec<&str> = text
        .lines()
        .skip_while(|l| *l != "Subject To")
        .skip(1)
        .take_while(|l| *l != "Binary")
        .collect();
    assert_eq!(
        rows,
        [
            " c0: aux_lc0_0 - var_ph1_people <= 0",
            " c1: aux_lc0_0 - var_ph2_organization <= 0",
            " c2: var_ph1_people + var_ph2_organization - aux_lc0_0 <= 1",
            " c3: var_p12_work_for - aux_lc0_0 <= 0",
        ]
    );
    // log-odds of 0.5
    assert!(model["objective"].as_array().unwrap().iter().all(|c| c.as_f64() == Some(0.0)));
}

// 2
fn oracle_equivalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut feasible = 0;
    for case in 0..500 {
        let m = random_model(&mut rng, 24);
        assert!(m.num_vars() <= 24);
        match (solve(&m, &SolverConfig::default()), brute_force(&m)) {
            (Ok(a), Ok(b)) => {
                assert!((a.objective - b.objective).abs() <= 1e-9, "case {case}");
                assert_eq!(a.values, b.values, "case {case}");
                feasible += 1;
            }
            (Err(SolveError::Infeasible { .. }), Err(SolveError::Infeasible { .. })) => {}
            (a, b) => panic!("case {case}: {a:?} vs {b:?}"),
        }
    }
    assert!(feasible >= 400);
}

// 3
fn logical_fidelity() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..300 {
        let expr = random_prop(&mut rng, 6, 6);
        for mask in 0u32..64 {
            let atoms: Vec<bool> = (0..6).map(|i| mask >> i & 1 == 1).collect();
            let truth = expr.eval(&atoms);
            let mut b = ModelBuilder::new((0..6).map(|i| format!("a{i}")).collect(), vec![0.0; 6]);
            for (i, &x) in atoms.iter().enumerate() {
                b.require("fix", &if x { Prop::Var(i) } else { Prop::Not(Box::new(Prop::Var(i))) });
            }
            b.require("lc0", &expr);
            assert_eq!(solve(&b.finish(), &SolverConfig::default()).is_ok(), truth, "{expr} at {atoms:?}");
            let s: Vec<f64> = atoms.iter().map(|&x| if x { 1.0 } else { 0.0 }).collect();
            assert_eq!(soft_eval(&expr, &s), if truth { 1.0 } else { 0.0 }, "{expr}");
        }
    }
}

fn random_labels(rng: &mut ChaCha8Rng, n: usize) -> Vec<Option<bool>> {
    (0..n).map(|_| if rng.gen_bool(0.1) { None } else { Some(rng.gen()) }).collect()
}

/// Central differences of `f` at `s` against `g`, in every coordinate.
fn check_fd(f: &dyn Fn(&[f64]) -> f64, s: &[f64], g: &[f64]) {
    let eps = 1e-5;
    for i in 0..s.len() {
        let mut hi = s.to_vec();
        let mut lo = s.to_vec();
        hi[i] += eps;
        lo[i] -= eps;
        let fd = (f(&hi) - f(&lo)) / (2.0 * eps);
        assert!(close(fd, g[i]), "coordinate {i} at {s:?}: {fd} vs {}", g[i]);
    }
}

// 4
fn gradient_checks() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = 6;
    for _ in 0..100 {
        let s: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..0.95)).collect();
        let y = random_labels(&mut rng, n);
        let (_, g) = nll_loss(&s, &y);
        check_fd(&|x| nll_loss(x, &y).0, &s, &g);

        let fstar: Vec<bool> = (0..n).map(|_| rng.gen()).collect();
        let lambda = rng.gen_range(0.0..=1.0);
        let (_, g) = iml_loss(&s, &y, &fstar, lambda).unwrap();
        check_fd(&|x| iml_loss(x, &y, &fstar, lambda).unwrap().0, &s, &g);
    }
    let mut points = 0;
    while points < 100 {
        let constraints: Vec<GroundedConstraint> = (0..3)
            .map(|k| GroundedConstraint {
                constraint_id: format!("lc{k}"),
                binding: Vec::new(),
                expr: random_prop(&mut rng, n, 5),
            })
            .collect();
        let grounding = Grounding { index: Default::default(), constraints };
        let mut params = ParameterStore::default();
        for k in 0..3 {
            params.multipliers.insert(format!("lc{k}"), rng.gen_range(0.0..2.0));
        }
        let s: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..0.95)).collect();
        if grounding.constraints.iter().any(|c| kink_distance(&c.expr, &s) < 1e-3) {
            continue;
        }
        points += 1;
        let y = random_labels(&mut rng, n);
        let r = pd_loss(&s, &y, &grounding, &params);
        check_fd(&|x| pd_loss(x, &y, &grounding, &params).loss, &s, &r.grad_scores);
    }
}

// 5
fn loss_identities() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let d = parse(&std::fs::read_to_string(asset("emr_synth.dk")).unwrap()).unwrap();
    let samples = load_dataset(&std::fs::read_to_string(asset("emr_synth_train.json")).unwrap(), &d.graph).unwrap();
    for dng in samples.iter().take(50) {
        let g = ground(&d.graph, &d.constraints, dng).unwrap();
        let y = g.index.labels(dng);
        let s: Vec<f64> = (0..g.index.len()).map(|_| rng.gen_range(0.01..0.99)).collect();
        let nll = nll_loss(&s, &y);
        let zero = ParameterStore::default();
        let pd = pd_loss(&s, &y, &g, &zero);
        assert!((pd.loss - nll.0).abs() <= 1e-12);
        assert_eq!(pd.grad_scores, nll.1);
        let fstar: Vec<bool> = y.iter().map(|v| v.unwrap_or(false)).collect();
        assert_eq!(iml_loss(&s, &y, &fstar, 1.0).unwrap().0, 0.0);
        let blended = iml_loss(&s, &y, &fstar, 0.0).unwrap();
        assert!((blended.0 - nll.0).abs() <= 1e-12);
    }
}

// 6
fn fire_station() {
    let out = dekl(&[
        "infer",
        "--dsl",
        &asset("firestation.dk"),
        "--data",
        &asset("firestation_ring.json"),
        "--scores",
        &asset("firestation_scores.json"),
    ]);
    let v = stdout_json(&out);
    let station = |c: &str| v["assignment"][c]["firestationCity"].as_bool().unwrap();
    for i in 1..=6 {
        let (prev, next) = ((i + 4) % 6 + 1, i % 6 + 1);
        let c = format!("c{i}");
        assert!(station(&c) || station(&format!("c{prev}")) || station(&format!("c{next}")), "{c} uncovered");
    }
    assert!(v["violations"].as_array().unwrap().is_empty());

    let d = parse(&std::fs::read_to_string(asset("firestation.dk")).unwrap()).unwrap();
    let dng = load_data(&std::fs::read_to_string(asset("firestation_ring.json")).unwrap(), &d.graph).unwrap();
    let g = ground(&d.graph, &d.constraints, &dng).unwrap();
    let scores: BTreeMap<String, BTreeMap<String, f64>> =
        serde_json::from_str(&std::fs::read_to_string(asset("firestation_scores.json")).unwrap()).unwrap();
    let model = compile(&g, &ScoreVector::from_nested(&g.index, &scores).unwrap()).unwrap();
    let best = brute_force(&model).unwrap();
    assert!((best.objective - v["objective"].as_f64().unwrap()).abs() <= 1e-9);
    let got: Vec<bool> = g.index.vars().iter().map(|x| station(&x.node)).collect();
    assert_eq!(got, best.values[..model.num_decision]);
    // two stations cover a ring of six
    assert_eq!(got.iter().filter(|&&b| b).count(), 2);
}

fn write_config(dir: &Path, name: &str, extra: &[(&str, Value)]) -> PathBuf {
    let mut cfg = serde_json::json!({
        "dsl": asset("emr_synth.dk"),
        "train": asset("emr_synth_train.json"),
        "test": asset("emr_synth_test.json"),
        "params": "params.json",
        "metrics": "metrics.json",
        "lr": 0.05,
        "epochs": 20,
        "seed": 42,
    });
    for (k, v) in extra {
        cfg[*k] = v.clone();
    }
    let sub = dir.join(name);
    std::fs::create_dir_all(&sub).unwrap();
    let path = sub.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

// 7
fn synthetic_emr() {
    let dir = tempfile::tempdir().unwrap();
    let base = write_config(dir.path(), "baseline", &[("strategy", "baseline".into())]);
    let base = base.to_str().unwrap();
    stdout_json(&dekl(&["train", "--config", base]));
    let b = stdout_json(&dekl(&["eval", "--config", base]));
    let i = stdout_json(&dekl(&["eval", "--config", base, "--strategy", "ilp"]));
    let count = |r: &Value| r["total_violations"].as_u64().unwrap();
    let f1 = |r: &Value| r["metrics"]["micro"]["f1"].as_f64().unwrap();
    assert!(count(&b) >= 1, "baseline made no violations");
    assert_eq!(count(&i), 0);
    assert!(i["samples"].as_array().unwrap().iter().all(|s| s["violations"].as_array().unwrap().is_empty()));
    assert!(f1(&i) >= f1(&b) - 0.02, "ilp f1 {} vs baseline {}", f1(&i), f1(&b));

    let pd = write_config(dir.path(), "pd", &[("strategy", "pd".into()), ("lr_lambda", 0.5.into())]);
    let r = stdout_json(&dekl(&["train", "--config", pd.to_str().unwrap()]));
    let epochs = r["epochs"].as_array().unwrap();
    let first = epochs[0]["violation"].as_f64().unwrap();
    let last = epochs.last().unwrap()["violation"].as_f64().unwrap();
    assert!(last <= 0.5 * first, "violation {first} -> {last}");
    println!("      baseline f1 {:.3} with {} violations; ilp f1 {:.3}; pd violation {first:.3} -> {last:.4}", f1(&b), count(&b), f1(&i));
}

// 8
fn poi_scoping() {
    let d = parse(&std::fs::read_to_string(asset("emr_synth.dk")).unwrap()).unwrap();
    let train: Vec<DataNodeGraph> =
        load_dataset(&std::fs::read_to_string(asset("emr_synth_train.json")).unwrap(), &d.graph).unwrap();
    let program = |poi: &[&str]| {
        let mut s = ProgramSpec::new(Strategy::Baseline);
        s.poi = poi.iter().map(|p| p.to_string()).collect();
        s.lr = 0.05;
        s.epochs = 5;
        s.seed = 1;
        Program::new(d.clone(), s).unwrap()
    };
    let init = init_params(&d, &train, 8);
    let mut params = init.clone();
    program(&["phrase", "sentence"]).train(&mut params, &train, None).unwrap();
    assert_eq!(params.concepts["work_for"], init.concepts["work_for"]);
    assert_ne!(params.concepts["people"], init.concepts["people"]);

    let pretrained = params.clone();
    program(&["pair"]).train(&mut params, &train, None).unwrap();
    for (c, p) in &params.concepts {
        if c == "work_for" {
            assert_ne!(p, &pretrained.concepts[c]);
        } else {
            assert_eq!(p, &pretrained.concepts[c], "{c} moved");
        }
    }
    assert_eq!(params.multipliers, pretrained.multipliers);
}

// 9
fn reproducibility() {
    let dir = tempfile::tempdir().unwrap();
    let extra = [("strategy", Value::from("pd+ilp")), ("lr_lambda", 0.5.into()), ("dev", asset("emr_synth_dev.json").into())];
    let runs: Vec<(Vec<u8>, Vec<u8>, Vec<u8>)> = ["a", "b"]
        .iter()
        .map(|name| {
            let cfg = write_config(dir.path(), name, &extra);
            let out = dekl(&["train", "--config", cfg.to_str().unwrap(), "--jobs", "2"]);
            stdout_json(&out);
            let sub = cfg.parent().unwrap();
            (std::fs::read(sub.join("params.json")).unwrap(), std::fs::read(sub.join("metrics.json")).unwrap(), out.stdout)
        })
        .collect();
    assert!(runs[0] == runs[1], "outputs differ between identical runs");
}

fn main() {
    type Criterion = (&'static str, fn(), Option<Duration>);
    let criteria: [Criterion; 9] = [
        ("work_for rule fidelity", work_for_rule_fidelity, Some(Duration::from_secs(1))),
        ("oracle equivalence", oracle_equivalence, Some(Duration::from_secs(60))),
        ("logical fidelity", logical_fidelity, Some(Duration::from_secs(30))),
        ("gradient checks", gradient_checks, Some(Duration::from_secs(10))),
        ("loss identities", loss_identities, None),
        ("fire-station showcase", fire_station, Some(Duration::from_secs(1))),
        ("synthetic entity-relation", synthetic_emr, None),
        ("poi scoping", poi_scoping, None),
        ("reproducibility", reproducibility, None),
    ];
    let mut failed = 0;
    for (k, (name, f, limit)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f));
        let took = start.elapsed();
        let verdict = match (&result, limit) {
            (Err(_), _) => "FAIL",
            (Ok(()), Some(l)) if took > l => "FAIL",
            _ => "PASS",
        };
        let budget = limit.map(|l| format!(" / {}s", l.as_secs())).unwrap_or_default();
        println!("{verdict} {} {name} ({:.2}s{budget})", k + 1, took.as_secs_f64());
        if verdict == "FAIL" {
            failed += 1;
        }
    }
    println!("{} of 9 criteria passed", 9 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
