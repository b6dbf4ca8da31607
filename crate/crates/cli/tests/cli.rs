use std::fs;
use std::path::PathBuf;
use std::process::{Command, Output};

use conffuzz::configfmt::parse_config;

const BIN: &str = env!("CARGO_BIN_EXE_conffuzz");

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).current_dir(root()).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn summary_line(o: &Output) -> String {
    stderr(o).lines().find(|l| l.starts_with("branches: ")).unwrap().to_string()
}

#[test]
fn usage_errors_and_help() {
    assert_eq!(code(&run(&[])), 1);
    assert_eq!(code(&run(&["frobnicate"])), 1);
    assert_eq!(code(&run(&["validate"])), 1);
    assert_eq!(code(&run(&["--help"])), 0);
    assert_eq!(code(&run(&["--version"])), 0);
}

#[test]
fn grammar_check() {
    let o = run(&["grammar-check", "grammars/gnb.json", "--strict"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("start: <START>"));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("loop.json");
    fs::write(&bad, r#"{"<START>": [["<A>"]], "<A>": [["<A>"]]}"#).unwrap();
    let o = run(&["grammar-check", bad.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("no finite derivation"), "{}", stderr(&o));

    assert_eq!(code(&run(&["grammar-check", "/no/such/grammar.json"])), 1);
}

#[test]
fn gen_is_deterministic_and_parseable() {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        let o = run(&["gen", "--grammar", "grammars/gnb.json", "--seed", "9", "--count", "3", "--out", d.path().to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    for k in 0..3 {
        let name = format!("gen-{k}.conf");
        let a = fs::read_to_string(dirs[0].path().join(&name)).unwrap();
        assert_eq!(a, fs::read_to_string(dirs[1].path().join(&name)).unwrap());
        parse_config(&a).unwrap();
    }
    assert_eq!(fs::read_dir(dirs[0].path()).unwrap().count(), 3);
}

#[test]
fn validate_classes() {
    let o = run(&["validate", "fixtures/table1/initial.conf"]);
    assert_eq!((code(&o), stdout(&o).trim()), (0, "ok"));
    let o = run(&["validate", "fixtures/table1/case5.conf"]);
    assert_eq!((code(&o), stdout(&o).trim()), (3, "crash(104)"));

    let dir = tempfile::tempdir().unwrap();
    let garbage = dir.path().join("garbage.conf");
    fs::write(&garbage, "this is { not a config").unwrap();
    let o = run(&["validate", garbage.to_str().unwrap()]);
    assert_eq!((code(&o), stdout(&o).trim()), (2, "reject(2)"));

    assert_eq!(code(&run(&["validate", "/no/such/file.conf"])), 1);
    assert_eq!(code(&run(&["validate", "fixtures/table1/initial.conf", "--target", "no-placeholder"])), 1);
}

#[test]
fn standalone_validator_as_external_target() {
    let target = format!("{BIN} gnb-validator {{input}}");
    for (name, class) in [("initial", "ok"), ("case1", "crash(6)"), ("case5", "crash(6)")] {
        let path = format!("fixtures/table1/{name}.conf");
        let builtin = run(&["validate", &path]);
        let external = run(&["validate", &path, "--target", &target]);
        assert_eq!(stdout(&external).trim(), class, "{name}: {}", stderr(&external));
        // Same coverage whether run in-process or through the branch protocol.
        assert_eq!(summary_line(&builtin), summary_line(&external), "{name}");
    }
}

#[test]
fn fuzz_smoke_and_triage() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = run(&["fuzz", "--grammar", "grammars/gnb.json", "--seed", "1", "--max-execs", "1000", "--out", out]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let printed: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    let stored: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("stats.json")).unwrap()).unwrap();
    assert_eq!(printed, stored);
    assert_eq!(stored["execs"], 1000);

    let o = run(&["triage", "--dir", out, "--format", "json"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let table: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let columns = table["columns"].as_array().unwrap();
    assert_eq!(columns.len() as u64, 1 + stored["crashes_unique"].as_u64().unwrap());
    assert_eq!(columns[0]["name"], "initial");

    let o = run(&["fuzz", "--grammar", "/no/such.json", "--max-execs", "10"]);
    assert_eq!(code(&o), 1);
    let o = run(&["fuzz", "--grammar", "grammars/gnb.json", "--weights", "0,0,0,0", "--max-execs", "10"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn fuzz_through_the_external_validator() {
    let target = format!("{BIN} gnb-validator {{input}}");
    let o = run(&["fuzz", "--grammar", "grammars/gnb.json", "--target", &target, "--seed", "2", "--max-execs", "40", "--no-minimize"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let stats: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(stats["execs"], 40);
    assert_eq!(stats["timeouts"], 0);
    assert!(stats["corpus_size"].as_u64().unwrap() >= 1);
}

#[test]
fn minimize_preserves_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("min.conf");
    let o = run(&["minimize", "fixtures/table1/case5.conf", "--grammar", "grammars/gnb.json", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let key = stdout(&o).trim().to_string();
    assert_eq!(key.len(), 16);

    let again = dir.path().join("again.conf");
    let o = run(&["minimize", out.to_str().unwrap(), "--grammar", "grammars/gnb.json", "--out", again.to_str().unwrap()]);
    assert_eq!(stdout(&o).trim(), key);
    assert_eq!(fs::read(&out).unwrap(), fs::read(&again).unwrap());

    let o = run(&["minimize", "fixtures/table1/initial.conf", "--grammar", "grammars/gnb.json", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
}

#[test]
fn triage_inputs_are_labelled_by_file_stem() {
    let o = run(&["triage", "--input", "fixtures/table1/case2.conf", "fixtures/table1/case4.conf", "--watch", "gNBs[0].servingCellConfigCommon[0].dl_carrierBandwidth"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = stdout(&o);
    let header = text.lines().next().unwrap();
    assert!(header.contains("case2") && header.contains("case4"), "{header}");
    assert!(text.lines().last().unwrap().contains("25"));

    assert_eq!(code(&run(&["triage", "--input", "fixtures/table1/initial.conf"])), 1);
    assert_eq!(code(&run(&["triage", "--input", "fixtures/table1/case1.conf", "--format", "xml"])), 1);
}

#[test]
fn explain_command() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.txt");
    let args = |backend: &str| {
        vec![
            "explain".to_string(),
            "--input".into(),
            "fixtures/explain/pbch.log".into(),
            "--src".into(),
            "fixtures/explain/src".into(),
            "--backend".into(),
            backend.into(),
            "--out".into(),
            out.to_str().unwrap().into(),
        ]
    };
    let call = |backend: &str| {
        let a = args(backend);
        run(&a.iter().map(String::as_str).collect::<Vec<_>>())
    };

    let o = call("glossary:fixtures/explain/glossary.tsv");
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(fs::read(&out).unwrap(), fs::read(root().join("fixtures/explain/expected_report.txt")).unwrap());

    assert_eq!(code(&call("carrier-pigeon:x")), 1);

    // Unreachable HTTP backend: partial report plus internal-error exit.
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let o = call(&format!("http:http://127.0.0.1:{port}/"));
    assert_eq!(code(&o), 4);
    let partial = fs::read_to_string(&out).unwrap();
    assert!(partial.starts_with("[tests] 7\n"));
    assert!(partial.lines().last().unwrap().starts_with("[incomplete] "));
}
