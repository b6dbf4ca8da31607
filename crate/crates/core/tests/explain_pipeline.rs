use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::thread;

use conffuzz::explain::*;
use proptest::prelude::*;

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/explain")
}

/// Records every call and answers with a fixed string.
#[derive(Default)]
struct Recording {
    calls: Vec<(String, String)>,
    fail_on: Option<String>,
}

impl ExplanationBackend for Recording {
    fn explain(&mut self, var_name: &str, context: &str) -> Result<String, BackendError> {
        if self.fail_on.as_deref() == Some(var_name) {
            return Err(BackendError::Http("scripted failure".into()));
        }
        self.calls.push((var_name.to_string(), context.to_string()));
        Ok(format!("meaning of {var_name}"))
    }
}

#[test]
fn fixture_report_matches_expected_bytes() {
    let log = fs::read_to_string(fixtures().join("pbch.log")).unwrap();
    let mut glossary = GlossaryFile::load(&fixtures().join("glossary.tsv")).unwrap();
    let (report, infos) = auto_explain(&log, &fixtures().join("src"), &mut glossary).unwrap();
    assert_eq!(report, fs::read_to_string(fixtures().join("expected_report.txt")).unwrap());
    assert_eq!(infos.len(), 7);

    let tests = parse_test_log(&log).unwrap();
    assert_eq!(tests.len(), 7);
    assert!(tests.iter().all(|t| t.args.len() == 7));
    assert_eq!(extract_unique_params(&tests).len(), 7);

    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report.txt");
    let written = write_report(&infos, &tests, &out).unwrap();
    assert_eq!(written, report);
    assert_eq!(fs::read_to_string(out).unwrap(), report);
}

#[test]
fn source_lookup_on_fixture_tree() {
    let src = fixtures().join("src");
    assert_eq!(find_param_name("s", &src).unwrap().as_deref(), Some("snr0"));
    assert_eq!(find_param_name("c", &src).unwrap().as_deref(), Some("frame_parms->Nid_cell"));
    // The only `case 'o':` arm calls a function, and the Python file is skipped.
    assert_eq!(find_param_name("o", &src).unwrap(), None);
    assert_eq!(find_param_name("q", &src).unwrap(), None);

    let index = SourceIndex::build(&src).unwrap();
    let snippet = &index.lookup("s").unwrap().context;
    assert!(snippet.starts_with("case 's':") && snippet.len() <= CONTEXT_LIMIT);
}

fn write(dir: &Path, rel: &str, text: &str) {
    let path = dir.join(rel);
    fs::create_dir_all(path.parent().unwrap()).unwrap();
    fs::write(path, text).unwrap();
}

#[test]
fn lexicographically_first_file_wins() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "b/main.c", "switch (c) { case 's': from_b = 1; break; }");
    write(dir.path(), "a/main.cpp", "switch (c) { case 's': from_a = 1; break; }");
    write(dir.path(), "a/zz.txt", "case 't': from_txt = 1; break;");
    assert_eq!(find_param_name("s", dir.path()).unwrap().as_deref(), Some("from_a"));
    assert_eq!(find_param_name("t", dir.path()).unwrap(), None);
}

#[test]
fn fallthrough_arms_stop_at_the_next_case() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "sim.c", "switch (c) { case 'a': case 'b': shared = 1; break; }");
    assert_eq!(find_param_name("a", dir.path()).unwrap(), None);
    assert_eq!(find_param_name("b", dir.path()).unwrap().as_deref(), Some("shared"));
}

#[test]
fn empty_and_missing_roots() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(find_param_name("s", dir.path()).unwrap(), None);
    assert!(matches!(
        find_param_name("s", Path::new("/no/such/source/root")),
        Err(ExplainError::Io { .. })
    ));
}

#[test]
fn context_snippets_are_capped() {
    let dir = tempfile::tempdir().unwrap();
    let filler = "x0 = 0; ".repeat(200);
    write(dir.path(), "big.c", &format!("switch (c) {{ case 'z': target = 1; {filler} break; }}"));
    let index = SourceIndex::build(dir.path()).unwrap();
    let m = index.lookup("z").unwrap();
    assert_eq!(m.var_name, "target");
    assert_eq!(m.context.chars().count(), CONTEXT_LIMIT);
}

#[test]
fn backend_is_called_once_per_variable() {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "sim.c",
        "switch (c) { case 'a': shared = 1; break; case 'b': shared = 2; break; case 'c': other = 2; break; }",
    );
    let tests = parse_test_log("test: t :: -a 1 -b 2 -c 3 -d 4\ntest: u :: -a 5").unwrap();
    let params = extract_unique_params(&tests);
    let index = SourceIndex::build(dir.path()).unwrap();
    let mut backend = Recording::default();
    let infos = explain_params(&params, &mut backend, &index).unwrap();
    let called: Vec<&str> = backend.calls.iter().map(|(v, _)| v.as_str()).collect();
    assert_eq!(called, ["shared", "other"]);
    assert_eq!(infos[0].meaning, infos[1].meaning);
    assert_eq!(infos[3].var_name, None);
    assert_eq!(infos[3].meaning, NO_SOURCE_MATCH);
    assert_eq!(
        infos[0].to_string(),
        "- a (shared) -> meaning of shared ; range = {1, 5}"
    );
}

#[test]
fn backend_failure_keeps_partial_results() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "sim.c", "switch (c) { case 'a': first = 1; break; case 'b': second = 2; break; }");
    let log = "test: t :: -a 1 -b 2";
    let mut backend = Recording {
        fail_on: Some("second".into()),
        ..Default::default()
    };
    let (partial, err) = auto_explain(log, dir.path(), &mut backend).unwrap_err();
    match err {
        ExplainError::Backend { partial, .. } => assert_eq!(partial.len(), 1),
        other => panic!("{other:?}"),
    }
    let text = partial.unwrap();
    assert!(text.starts_with("[tests] 1\n- a (first) -> meaning of first ; range = {1}\n"));
    assert!(text.lines().last().unwrap().starts_with("[incomplete] "));
}

/// Serves `responses` to consecutive requests and hands back what it saw.
fn mock_server(responses: Vec<(u16, String)>) -> (String, thread::JoinHandle<Vec<(HashMap<String, String>, String)>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/explain", listener.local_addr().unwrap());
    let handle = thread::spawn(move || {
        let mut seen = Vec::new();
        for (status, body) in responses {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream);
            let mut headers = HashMap::new();
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            loop {
                line.clear();
                reader.read_line(&mut line).unwrap();
                let l = line.trim_end();
                if l.is_empty() {
                    break;
                }
                let (k, v) = l.split_once(':').unwrap();
                headers.insert(k.trim().to_ascii_lowercase(), v.trim().to_string());
            }
            let len: usize = headers.get("content-length").map_or(0, |v| v.parse().unwrap());
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            seen.push((headers, String::from_utf8(buf).unwrap()));
            let mut stream = reader.into_inner();
            write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
        }
        seen
    });
    (url, handle)
}

#[test]
fn http_backend_sends_prompt_and_token() {
    let (url, server) = mock_server(vec![(200, r#"{"text": "starting SNR\n in dB"}"#.into())]);
    let mut backend = HttpLlm::new(&url).with_token(Some("sekrit".into()));
    let meaning = backend.explain("snr0", "case 's': snr0 = atof(optarg);").unwrap();
    assert_eq!(meaning, "starting SNR in dB");

    let seen = server.join().unwrap();
    let (headers, body) = &seen[0];
    assert_eq!(headers["authorization"], "Bearer sekrit");
    let json: serde_json::Value = serde_json::from_str(body).unwrap();
    assert_eq!(
        json["prompt"],
        "Explain the variable snr0 in the context of 5G gNB software: case 's': snr0 = atof(optarg);"
    );
}

#[test]
fn http_failures_are_errors_not_text() {
    let (url, server) = mock_server(vec![(500, "{}".into()), (200, r#"{"unrelated": true}"#.into())]);
    let mut backend = HttpLlm::new(&url).with_token(None);
    assert!(matches!(backend.explain("x", ""), Err(BackendError::Http(_))));
    assert!(matches!(backend.explain("x", ""), Err(BackendError::Empty)));
    let seen = server.join().unwrap();
    assert!(!seen[0].0.contains_key("authorization"));

    // Nothing listens on a freshly released port.
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let mut backend = HttpLlm::new(&format!("http://127.0.0.1:{port}/"));
    assert!(matches!(backend.explain("x", ""), Err(BackendError::Http(_))));
}

#[test]
fn glossary_backend_is_pure() {
    let mut g = GlossaryFile::load(&fixtures().join("glossary.tsv")).unwrap();
    let a = g.explain("snr0", "ctx a").unwrap();
    let b = g.explain("snr0", "ctx b").unwrap();
    assert_eq!(a, "starting SNR in dB");
    assert_eq!(a, b);
}

fn flag() -> impl Strategy<Value = String> {
    "[a-zA-Z][a-z_]{0,3}"
}

fn value() -> impl Strategy<Value = String> {
    prop_oneof!["[0-9]{1,4}", "-[0-9]{1,3}", "[a-z]{1,5}"]
}

proptest! {
    #[test]
    fn order_is_preserved_end_to_end(
        tests in prop::collection::vec(prop::collection::vec((flag(), value()), 0..6), 0..6)
    ) {
        let log: String = tests
            .iter()
            .enumerate()
            .map(|(i, args)| {
                let args: Vec<String> = args.iter().map(|(f, v)| format!("-{f} {v}")).collect();
                format!("noise line {i}\nTest: t{i} :: {}\n", args.join(" "))
            })
            .collect();
        let parsed = parse_test_log(&log).unwrap();
        prop_assert_eq!(parsed.len(), tests.len());
        for (rec, args) in parsed.iter().zip(&tests) {
            prop_assert_eq!(&rec.args, args);
        }

        let params = extract_unique_params(&parsed);
        let mut first_seen: Vec<&str> = Vec::new();
        for (f, _) in tests.iter().flatten() {
            if !first_seen.contains(&f.as_str()) {
                first_seen.push(f);
            }
        }
        prop_assert_eq!(params.keys().map(String::as_str).collect::<Vec<_>>(), first_seen);
        for (f, range) in &params {
            let mut expected: Vec<&str> = Vec::new();
            for (g, v) in tests.iter().flatten() {
                if g == f && !expected.contains(&v.as_str()) {
                    expected.push(v);
                }
            }
            prop_assert_eq!(range.iter().map(String::as_str).collect::<Vec<_>>(), expected);
        }
    }
}
