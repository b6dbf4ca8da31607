use std::fs;
use std::path::PathBuf;

use conffuzz::configfmt::{parse_config, ParamPath};
use conffuzz::gnb_validator::{watch_paths, CRASH_UNKNOWN_BAND};
use conffuzz::grammar::{parse_grammar, tree_size, unparse, DerivationTree, Grammar};
use conffuzz::target::{Builtin, ExecOutcome, Feedback, OutcomeClass, Target, TargetError};
use conffuzz::triage::*;
use sha2::{Digest, Sha256};

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn gnb() -> Grammar {
    parse_grammar(&fs::read_to_string(root().join("grammars/gnb.json")).unwrap(), true).unwrap()
}

fn fixture(name: &str) -> String {
    fs::read_to_string(root().join("fixtures/table1").join(name)).unwrap()
}

/// Crashes with id 7 whenever the input contains an `x`.
struct ContainsX;

impl Target for ContainsX {
    fn execute(&self, input: &str) -> Result<(ExecOutcome, Feedback), TargetError> {
        let class = if input.contains('x') {
            OutcomeClass::Crash(7)
        } else {
            OutcomeClass::Ok
        };
        Ok((ExecOutcome::new(class, ""), Feedback::default()))
    }
}

#[test]
fn dedup_key_matches_independent_hash() {
    let fb: Feedback = ["chk:a:pass".to_string(), "chk:b:fail".to_string()].into_iter().collect();

    let mut branch_hash = Sha256::new();
    for b in ["chk:a:pass", "chk:b:fail"] {
        branch_hash.update(b.as_bytes());
        branch_hash.update([0u8]);
    }
    let digest = u64::from_be_bytes(branch_hash.finalize()[..8].try_into().unwrap());
    assert_eq!(fb.digest(), digest);

    let mut key_hash = Sha256::new();
    key_hash.update(b"crash");
    key_hash.update(101i32.to_be_bytes());
    key_hash.update(digest.to_be_bytes());
    let expected = hex8(&key_hash.finalize()[..8]);
    let key = dedup_key(&ExecOutcome::new(OutcomeClass::Crash(101), ""), &fb).unwrap();
    assert_eq!(key, expected);
}

fn hex8(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[test]
fn minimizing_case5_keeps_crash_104() {
    let g = gnb();
    let text = fixture("case5.conf");
    let tree = g.parse_text(&text).unwrap();
    let (outcome, feedback) = Builtin::GnbValidator.execute(&text).unwrap();
    assert_eq!(outcome.class, OutcomeClass::Crash(CRASH_UNKNOWN_BAND));
    let key = dedup_key(&outcome, &feedback).unwrap();

    let min = minimize(&tree, &g, &Builtin::GnbValidator, &key).unwrap();
    assert!(tree_size(&min) <= tree_size(&tree));
    let min_text = unparse(&min, &g).unwrap();
    let (min_outcome, min_feedback) = Builtin::GnbValidator.execute(&min_text).unwrap();
    assert_eq!(min_outcome.class, OutcomeClass::Crash(CRASH_UNKNOWN_BAND));
    assert_eq!(dedup_key(&min_outcome, &min_feedback).unwrap(), key);

    // A second pass finds nothing further to remove.
    assert_eq!(minimize(&min, &g, &Builtin::GnbValidator, &key).unwrap(), min);
}

#[test]
fn minimizer_shrinks_to_the_smallest_crashing_derivation() {
    let g = parse_grammar(r#"{"<START>": [["<A>"]], "<A>": [["x"], ["x", "<A>"], ["y", "<A>"]]}"#, true).unwrap();
    let mut tree = DerivationTree::leaf("<A>", 0);
    for rule in [2, 1, 2, 1] {
        tree = DerivationTree {
            token: "<A>".into(),
            rule_index: rule,
            children: vec![tree],
        };
    }
    let tree = DerivationTree {
        token: "<START>".into(),
        rule_index: 0,
        children: vec![tree],
    };
    assert_eq!(unparse(&tree, &g).unwrap(), "xyxyx");
    let key = dedup_key(&ContainsX.execute("x").unwrap().0, &Feedback::default()).unwrap();
    let min = minimize(&tree, &g, &ContainsX, &key).unwrap();
    assert_eq!(unparse(&min, &g).unwrap(), "x");
    assert_eq!(tree_size(&min), 2);
    assert_eq!(minimize(&min, &g, &ContainsX, &key).unwrap(), min);
}

#[test]
fn minimizer_rejects_non_crashing_input() {
    let g = gnb();
    let tree = g.parse_text(&fixture("initial.conf")).unwrap();
    assert!(matches!(
        minimize(&tree, &g, &Builtin::GnbValidator, "0000000000000000"),
        Err(TriageError::NonReproducible(_))
    ));
}

fn table1_reports() -> Vec<CrashReport> {
    let baseline = parse_config(&fixture("initial.conf")).unwrap();
    (1..=5)
        .map(|i| {
            report_from_input(&fixture(&format!("case{i}.conf")), &format!("Case{i}"), &baseline, &Builtin::GnbValidator)
                .unwrap()
        })
        .collect()
}

#[test]
fn table1_grid() {
    let baseline = parse_config(&fixture("initial.conf")).unwrap();
    let table = extract_param_table(&baseline, &table1_reports(), &watch_paths());
    let expected: [[&str; 8]; 6] = [
        ["1", "1", "12", "0", "641280", "78", "640008", "106"],
        ["0", "0", "9", "9", "433096", "78", "640008", "106"],
        ["0", "0", "3", "8", "641272", "78", "43000", "25"],
        ["0", "0", "9", "9", "642016", "41", "43000", "25"],
        ["0", "1", "6", "8", "623232", "78", "43000", "24"],
        ["1", "1", "12", "0", "641280", "257", "640008", "106"],
    ];
    assert_eq!(table.paths.len(), 8);
    assert_eq!(table.columns.len(), 6);
    let names: Vec<&str> = table.columns.iter().map(|c| c.name.as_str()).collect();
    assert_eq!(names, ["initial", "Case1", "Case2", "Case3", "Case4", "Case5"]);
    for (col, want) in table.columns.iter().zip(expected) {
        assert_eq!(col.values, want, "{}", col.name);
    }

    let text = render_report(&table, ReportFormat::Text);
    assert_eq!(text.lines().count(), 2 + 8);
    assert_eq!(text, render_report(&table, ReportFormat::Text));
    let header: Vec<&str> = text.lines().next().unwrap().split('|').map(str::trim).filter(|s| !s.is_empty()).collect();
    assert_eq!(header.len(), 7);

    let json: serde_json::Value = serde_json::from_str(&render_report(&table, ReportFormat::Json)).unwrap();
    assert_eq!(json["paths"].as_array().unwrap().len(), 8);
    assert_eq!(json["columns"][5]["name"], "Case5");
    assert_eq!(json["columns"][5]["values"][5], "257");
}

#[test]
fn table_edge_cases() {
    let baseline = parse_config(&fixture("initial.conf")).unwrap();
    let t = extract_param_table(&baseline, &[], &watch_paths());
    assert_eq!(t.columns.len(), 1);
    let unknown: Vec<ParamPath> = vec!["gNBs[0].nope".parse().unwrap()];
    let t = extract_param_table(&baseline, &table1_reports(), &unknown);
    assert!(t.columns.iter().all(|c| c.values == [MISSING_CELL]));
}

#[test]
fn report_param_diff_is_against_baseline() {
    let reports = table1_reports();
    let diff: Vec<String> = reports[4].param_diff.iter().map(|c| format!("{}:{}->{}", c.path, c.initial, c.crash)).collect();
    assert_eq!(diff, ["gNBs[0].servingCellConfigCommon[0].dl_frequencyBand:78->257"]);
    assert!(report_from_input(&fixture("initial.conf"), "x", &parse_config(&fixture("initial.conf")).unwrap(), &Builtin::GnbValidator).is_err());
}

#[test]
fn persistent_store_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let mut store = CrashStore::persistent(dir.path()).unwrap();
    let mut reports = table1_reports();
    for (i, r) in reports.iter_mut().enumerate() {
        r.first_seen_exec = 10 * i as u64;
    }
    for r in &reports {
        store.insert(r.clone()).unwrap();
    }
    // Case2 and Case4 both stop at the point-A check with the same trace,
    // so they share a key; Case1 and Case3 differ in coverage.
    assert_eq!(reports[1].dedup_key, reports[3].dedup_key);
    assert_ne!(reports[0].dedup_key, reports[2].dedup_key);
    assert_eq!(store.len(), 4);
    assert!(!store.insert(reports[0].clone()).unwrap());
    let loaded = CrashStore::load(dir.path()).unwrap();
    let expected: Vec<CrashReport> = [0, 1, 2, 4].iter().map(|&i| reports[i].clone()).collect();
    assert_eq!(loaded, expected);
}
