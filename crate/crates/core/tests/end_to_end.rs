//! Simulated runs checked against counts recomputed from the raw JSONL files.

use std::collections::BTreeMap;
use std::path::Path;

use serde_json::Value;

use skeval_core::prompt::{PromptForge, PromptVariant};
use skeval_core::provider::{ConfusionSpec, SubjectProfile};
use skeval_core::store::RunStore;
use skeval_core::taxonomy::InfeasibilityReason;
use skeval_core::workflow::{evaluate, simulate, SimulateOptions};

const TOLERANCE: f64 = 1e-12;

fn noisy_profile(name: &str, seed: u64) -> SubjectProfile {
    let mut p = SubjectProfile::uniform(name, seed, 0.3, 0.25);
    let spread: Vec<(InfeasibilityReason, f64)> =
        InfeasibilityReason::ALL.iter().map(|r| (*r, 1.0 / 11.0)).collect();
    p.confusion = std::array::from_fn(|i| {
        if i % 2 == 0 {
            ConfusionSpec::Weighted(spread.clone())
        } else {
            ConfusionSpec::OwnReason
        }
    });
    p
}

fn read_jsonl(path: &Path) -> Vec<Value> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn reason_type(slug: &str) -> String {
    InfeasibilityReason::ALL
        .iter()
        .find(|r| r.slug() == slug)
        .unwrap_or_else(|| panic!("unknown reason {slug}"))
        .self_knowledge_type()
        .slug()
        .to_string()
}

/// Oracle: per type, [ff, fr, rf, rr, rr_prime] and parse failures.
fn recount(run_dir: &Path) -> (BTreeMap<String, [u64; 5]>, BTreeMap<String, u64>) {
    let mut labels: BTreeMap<String, (String, Option<String>)> = BTreeMap::new();
    for t in read_jsonl(&run_dir.join("tasks.jsonl")) {
        if t["status"] != "valid" {
            continue;
        }
        let label = &t["label"];
        let entry = if let Some(ty) = label.get("feasible") {
            (ty.as_str().unwrap().to_string(), None)
        } else {
            let r = label["infeasible"].as_str().unwrap();
            (reason_type(r), Some(r.to_string()))
        };
        labels.insert(t["id"].as_str().unwrap().to_string(), entry);
    }
    let mut cells: BTreeMap<String, [u64; 5]> = BTreeMap::new();
    let mut failures: BTreeMap<String, u64> = BTreeMap::new();
    for o in read_jsonl(&run_dir.join("outcomes.jsonl")) {
        let (ty, generated) = &labels[o["task_id"].as_str().unwrap()];
        let v = &o["verdict"];
        let idx = match (v["kind"].as_str().unwrap(), generated) {
            ("parse_failure", _) => {
                *failures.entry(ty.clone()).or_default() += 1;
                continue;
            }
            ("answered", None) => 0,
            ("declared_infeasible", None) => 1,
            ("answered", Some(_)) => 2,
            ("declared_infeasible", Some(g)) if v["reason"] == g.as_str() => 3,
            ("declared_infeasible", Some(_)) => 4,
            (k, _) => panic!("unexpected verdict kind {k}"),
        };
        cells.entry(ty.clone()).or_default()[idx] += 1;
    }
    (cells, failures)
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

fn assert_close(actual: &Value, expected: Option<f64>, what: &str) {
    match expected {
        None => assert!(actual.is_null(), "{what}: expected undefined, got {actual}"),
        Some(e) => {
            let a = actual.as_f64().unwrap_or_else(|| panic!("{what}: got {actual}"));
            assert!((a - e).abs() <= TOLERANCE, "{what}: {a} vs {e}");
        }
    }
}

fn check_row(row: &Value, c: [u64; 5], what: &str) {
    let [ff, fr, rf, rr, rrp] = c;
    let cells = &row["cells"];
    assert_eq!(
        [&cells["ff"], &cells["fr"], &cells["rf"], &cells["rr"], &cells["rr_prime"]].map(|v| v.as_u64().unwrap()),
        c,
        "{what}"
    );
    let m = &row["metrics"];
    assert_close(&m["accuracy"], ratio(ff + rr, ff + fr + rf + rr + rrp), what);
    let f = ratio(rr, rf + rr + rrp);
    let i = ratio(rr, fr + rr + rrp);
    assert_close(&m["foresight"], f, what);
    assert_close(&m["insight"], i, what);
    let over = ratio(fr, ff + fr);
    let cons = ratio(rf, rf + rr + rrp);
    assert_close(&m["overconfidence"], over, what);
    assert_close(&m["conservatism"], cons, what);
    let cb = match (over, cons) {
        (Some(o), Some(c)) if o == 0.0 && c == 0.0 => Some(0.0),
        (Some(o), Some(c)) => Some((o - c) / o.max(c)),
        _ => None,
    };
    assert_close(&m["confidence_balance"], cb, what);
}

#[test]
fn report_matches_counts_recomputed_from_disk() {
    let dir = tempfile::tempdir().unwrap();
    let store = RunStore::new(dir.path());
    let forge = PromptForge::builtin();
    let profile = noisy_profile("noisy", 21);
    let mut run_ids = Vec::new();
    for (variant, run_id) in [(PromptVariant::Vanilla, "v"), (PromptVariant::ChallengeQap, "c")] {
        let opts = SimulateOptions {
            variant,
            seed: 5,
            ..SimulateOptions::new(run_id, 24, 100, 100)
        };
        simulate(&store, &forge, &profile, &opts).unwrap();
        run_ids.push(run_id.to_string());
    }
    let out = dir.path().join("report");
    evaluate(&store, &run_ids, &out).unwrap();
    let report: Value = serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let rows = report["models"][0]["metrics"]["rows"].as_array().unwrap();
    let find = |scope: &str, agg: &Value| {
        rows.iter()
            .find(|r| r["scope"] == scope && &r["aggregation"] == agg)
            .unwrap_or_else(|| panic!("no row {scope} {agg}"))
    };

    let mut pooled: BTreeMap<String, [u64; 5]> = BTreeMap::new();
    let mut saw = [false; 5];
    for (variant, run_id) in [("vanilla", "v"), ("challenge_qap", "c")] {
        let (cells, failures) = recount(&dir.path().join(run_id));
        let agg = serde_json::json!({"kind": "variant", "variant": variant});
        let mut overall = [0u64; 5];
        for (ty, c) in &cells {
            let row = find(ty, &agg);
            check_row(row, *c, &format!("{run_id}/{ty}"));
            assert_eq!(row["parse_failures"].as_u64().unwrap(), failures.get(ty).copied().unwrap_or(0));
            for k in 0..5 {
                overall[k] += c[k];
                pooled.entry(ty.clone()).or_default()[k] += c[k];
                saw[k] |= c[k] > 0;
            }
        }
        check_row(find("overall", &agg), overall, &format!("{run_id}/overall"));
    }
    assert_eq!(saw, [true; 5], "profile should populate every cell");
    let micro = serde_json::json!({"kind": "micro"});
    for (ty, c) in &pooled {
        check_row(find(ty, &micro), *c, &format!("micro/{ty}"));
    }
}

#[test]
fn identical_simulations_replay_byte_for_byte() {
    let profile = noisy_profile("replay", 9);
    let forge = PromptForge::builtin();
    let dirs: Vec<_> = (0..2).map(|_| tempfile::tempdir().unwrap()).collect();
    for d in &dirs {
        let store = RunStore::new(d.path());
        let opts = SimulateOptions { seed: 2, ..SimulateOptions::new("r", 6, 20, 20) };
        simulate(&store, &forge, &profile, &opts).unwrap();
        evaluate(&store, &["r".to_string()], &d.path().join("report")).unwrap();
    }
    for f in ["r/manifest.json", "r/tasks.jsonl", "r/outcomes.jsonl", "r/review.jsonl", "report/report.json", "report/report.md", "report/metrics.csv"] {
        let a = std::fs::read(dirs[0].path().join(f)).unwrap();
        let b = std::fs::read(dirs[1].path().join(f)).unwrap();
        assert!(a == b, "{f} differs between replays");
    }
}

#[test]
fn reloaded_runs_keep_every_recorded_line() {
    let dir = tempfile::tempdir().unwrap();
    let store = RunStore::new(dir.path());
    let opts = SimulateOptions::new("k", 5, 15, 15);
    let (gen, cls) = simulate(&store, &PromptForge::builtin(), &noisy_profile("k", 1), &opts).unwrap();
    let run = store.load_run("k").unwrap();
    assert!(run.manifest.sealed);
    assert_eq!(run.tasks.len(), gen.planned_feasible + gen.planned_infeasible);
    assert_eq!(run.outcomes.len(), cls.sampled);
    assert_eq!(run.manifest.sampled_task_ids.len(), cls.sampled);
    assert_eq!(run.manifest.profile.as_ref().unwrap().name, "k");
}
