//! Automatic parameter documentation for autotest logs.
//!
//! The pipeline reads test invocations from a log, collects every flag with
//! the values it was run with, recovers the variable each flag sets by
//! scanning the C sources' option `switch`, asks an [`ExplanationBackend`]
//! what that variable means, and writes one line per flag:
//!
//! ```text
//! [tests] 7
//! - s (snr0) -> starting SNR in dB ; range = {-11, -8, -5}
//! ```

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::Duration;

use indexmap::{IndexMap, IndexSet};
use thiserror::Error;
use walkdir::WalkDir;

pub const UNKNOWN_VAR: &str = "UNKNOWN";
pub const NO_SOURCE_MATCH: &str = "(no source match)";
pub const NO_GLOSSARY_ENTRY: &str = "(no glossary entry)";
pub const CONTEXT_LIMIT: usize = 500;
pub const SOURCE_EXTENSIONS: [&str; 4] = ["c", "h", "cc", "cpp"];
pub const TOKEN_ENV: &str = "CONFFUZZ_LLM_TOKEN";
pub const PROMPT_TEMPLATE: &str = "Explain the variable {name} in the context of 5G gNB software: {context}";
pub const HTTP_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Error)]
pub enum ExplainError {
    #[error("line {line}: malformed test line: {reason}")]
    MalformedTestLine { line: usize, reason: String },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("explanation backend failed after {} parameter(s): {source}", partial.len())]
    Backend {
        partial: Vec<ParamInfo>,
        #[source]
        source: BackendError,
    },
    #[error("bad backend spec {0:?}: expected glossary:<file> or http:<url>")]
    BadBackendSpec(String),
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("HTTP request failed: {0}")]
    Http(String),
    #[error("backend returned an empty explanation")]
    Empty,
}

/// One test invocation from the log.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TestCaseRecord {
    pub name: String,
    pub args: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamInfo {
    pub flag: String,
    pub var_name: Option<String>,
    pub range: IndexSet<String>,
    pub meaning: String,
}

impl ParamInfo {
    pub fn var_display(&self) -> &str {
        self.var_name.as_deref().unwrap_or(UNKNOWN_VAR)
    }
}

impl fmt::Display for ParamInfo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "- {} ({}) -> {} ; range = {{", self.flag, self.var_display(), self.meaning)?;
        for (i, v) in self.range.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            f.write_str(v)?;
        }
        f.write_str("}")
    }
}

fn is_flag_token(tok: &str) -> bool {
    let mut chars = tok.chars();
    chars.next() == Some('-')
        && matches!(chars.next(), Some(c) if !c.is_ascii_digit() && c != '.')
}

/// Test lines look like `test: <name> :: -flag value -flag value ...`.
pub fn parse_test_log(text: &str) -> Result<Vec<TestCaseRecord>, ExplainError> {
    let mut tests = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        let Some(prefix) = line.get(..5) else { continue };
        if !prefix.eq_ignore_ascii_case("test:") {
            continue;
        }
        let malformed = |reason: &str| ExplainError::MalformedTestLine {
            line: line_no,
            reason: reason.to_string(),
        };
        let rest = &line[5..];
        let (name, args) = split_separator(rest).ok_or_else(|| malformed("missing ' :: ' separator"))?;
        let name = name.trim();
        if name.is_empty() {
            return Err(malformed("empty test name"));
        }

        let tokens: Vec<&str> = args.split_whitespace().collect();
        let mut parsed = Vec::new();
        let mut i = 0;
        while i < tokens.len() {
            let tok = tokens[i];
            if !is_flag_token(tok) {
                return Err(malformed(&format!("expected a flag, found {tok:?}")));
            }
            let flag = tok.trim_start_matches('-');
            match tokens.get(i + 1) {
                Some(value) if !is_flag_token(value) => {
                    parsed.push((flag.to_string(), value.to_string()));
                    i += 2;
                }
                _ => {
                    parsed.push((flag.to_string(), "1".to_string()));
                    i += 1;
                }
            }
        }
        tests.push(TestCaseRecord {
            name: name.to_string(),
            args: parsed,
        });
    }
    Ok(tests)
}

/// Splits at the first `::` that has whitespace before it and whitespace
/// or end of line after it.
fn split_separator(s: &str) -> Option<(&str, &str)> {
    let mut from = 0;
    while let Some(at) = s[from..].find("::") {
        let at = from + at;
        let before_ok = s[..at].ends_with(char::is_whitespace);
        let after = &s[at + 2..];
        if before_ok && (after.is_empty() || after.starts_with(char::is_whitespace)) {
            return Some((&s[..at], after));
        }
        from = at + 2;
    }
    None
}

/// Deduplicates values, keeping first-seen order.
pub fn get_param_range<'a, I>(occurrences: I) -> IndexSet<String>
where
    I: IntoIterator<Item = &'a str>,
{
    occurrences.into_iter().map(str::to_string).collect()
}

/// Flag → value range across all tests, in first-appearance order.
pub fn extract_unique_params(tests: &[TestCaseRecord]) -> IndexMap<String, IndexSet<String>> {
    let mut occurrences: IndexMap<&str, Vec<&str>> = IndexMap::new();
    for test in tests {
        for (flag, value) in &test.args {
            occurrences.entry(flag.as_str()).or_default().push(value.as_str());
        }
    }
    occurrences
        .into_iter()
        .map(|(flag, values)| (flag.to_string(), get_param_range(values)))
        .collect()
}

/// A switch arm that assigns a variable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceMatch {
    pub var_name: String,
    pub context: String,
    pub file: PathBuf,
}

/// Every single-character option arm found under a source root. For each
/// flag only the first arm with an assignment is kept, scanning files in
/// lexicographic path order.
#[derive(Debug, Default)]
pub struct SourceIndex {
    arms: HashMap<char, SourceMatch>,
}

impl SourceIndex {
    pub fn build(root: &Path) -> Result<Self, ExplainError> {
        let io_err = |path: &Path, source: io::Error| ExplainError::Io {
            path: path.to_path_buf(),
            source,
        };
        fs::read_dir(root).map_err(|e| io_err(root, e))?;

        let mut files: Vec<PathBuf> = Vec::new();
        for entry in WalkDir::new(root) {
            let entry = entry.map_err(|e| {
                let path = e.path().unwrap_or(root).to_path_buf();
                io_err(&path, e.into())
            })?;
            let is_source = entry
                .path()
                .extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| SOURCE_EXTENSIONS.contains(&e));
            if entry.file_type().is_file() && is_source {
                files.push(entry.into_path());
            }
        }
        files.sort();

        let mut arms = HashMap::new();
        for file in files {
            let bytes = fs::read(&file).map_err(|e| io_err(&file, e))?;
            let text = String::from_utf8_lossy(&bytes);
            for (flag, var_name, context) in scan_switch_arms(&text) {
                arms.entry(flag).or_insert_with(|| SourceMatch {
                    var_name,
                    context,
                    file: file.clone(),
                });
            }
        }
        Ok(SourceIndex { arms })
    }

    pub fn lookup(&self, flag: &str) -> Option<&SourceMatch> {
        let mut chars = flag.chars();
        let c = chars.next()?;
        if chars.next().is_some() {
            return None;
        }
        self.arms.get(&c)
    }
}

/// The variable assigned for `flag` under `source_root`, if any.
pub fn find_param_name(flag: &str, source_root: &Path) -> Result<Option<String>, ExplainError> {
    Ok(SourceIndex::build(source_root)?
        .lookup(flag)
        .map(|m| m.var_name.clone()))
}

fn strip_comments(src: &str) -> String {
    let mut out = String::with_capacity(src.len());
    let mut chars = src.chars().peekable();
    while let Some(c) = chars.next() {
        match (c, chars.peek()) {
            ('/', Some('/')) => {
                for c in chars.by_ref() {
                    if c == '\n' {
                        out.push('\n');
                        break;
                    }
                }
            }
            ('/', Some('*')) => {
                chars.next();
                let mut prev = '\0';
                for c in chars.by_ref() {
                    if prev == '*' && c == '/' {
                        break;
                    }
                    if c == '\n' {
                        out.push('\n');
                    }
                    prev = c;
                }
                out.push(' ');
            }
            ('\'', _) | ('"', _) => {
                // Copy literals verbatim so comment markers inside them survive.
                out.push(c);
                let mut escaped = false;
                for d in chars.by_ref() {
                    out.push(d);
                    if escaped {
                        escaped = false;
                    } else if d == '\\' {
                        escaped = true;
                    } else if d == c || d == '\n' {
                        break;
                    }
                }
            }
            _ => out.push(c),
        }
    }
    out
}

fn find_case_arm(s: &str, from: usize) -> Option<(usize, usize, char)> {
    let mut at = from;
    while let Some(rel) = s[at..].find("case") {
        let start = at + rel;
        at = start + 4;
        let word_start = start == 0 || !is_ident_char(s[..start].chars().next_back()?);
        if !word_start {
            continue;
        }
        let rest = s[start + 4..].trim_start();
        let Some(lit) = rest.strip_prefix('\'') else { continue };
        let mut chars = lit.chars();
        let flag = match chars.next() {
            Some('\\') => match chars.next() {
                Some(c) => c,
                None => continue,
            },
            Some(c) => c,
            None => continue,
        };
        let after_char = chars.as_str();
        let Some(after_quote) = after_char.strip_prefix('\'') else { continue };
        let after_colon = after_quote.trim_start();
        let Some(body) = after_colon.strip_prefix(':') else { continue };
        let body_start = s.len() - body.len();
        return Some((start, body_start, flag));
    }
    None
}

fn is_ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_'
}

fn find_keyword(s: &str, word: &str) -> Option<usize> {
    let mut at = 0;
    while let Some(rel) = s[at..].find(word) {
        let pos = at + rel;
        let before = s[..pos].chars().next_back();
        let after = s[pos + word.len()..].chars().next();
        if !before.is_some_and(is_ident_char) && !after.is_some_and(is_ident_char) {
            return Some(pos);
        }
        at = pos + word.len();
    }
    None
}

/// `(flag, assigned variable, arm text)` for every `case 'x':` arm that
/// assigns something before its `break` or the next arm.
fn scan_switch_arms(src: &str) -> Vec<(char, String, String)> {
    let s = strip_comments(src);
    let mut out = Vec::new();
    let mut from = 0;
    while let Some((arm_start, body_start, flag)) = find_case_arm(&s, from) {
        from = body_start;
        let body = &s[body_start..];
        let next_case = find_case_arm(&s, body_start).map(|(a, _, _)| a - body_start);
        let next_default = find_keyword(body, "default").filter(|&p| body[p + 7..].trim_start().starts_with(':'));
        let brk = find_keyword(body, "break");
        let end = [next_case, next_default, brk]
            .into_iter()
            .flatten()
            .min()
            .unwrap_or(body.len());
        let arm_end = match brk {
            Some(b) if b == end => body[b..].find(';').map_or(end, |semi| b + semi + 1),
            _ => end,
        };
        if let Some(var) = first_assignment_target(&body[..end]) {
            let context = truncate_chars(s[arm_start..body_start + arm_end].trim(), CONTEXT_LIMIT);
            out.push((flag, var, context));
        }
    }
    out
}

fn truncate_chars(s: &str, limit: usize) -> String {
    s.chars().take(limit).collect()
}

fn is_lvalue(s: &str) -> bool {
    // identifier, optionally followed by `.member` / `->member` and one index
    let mut rest = s;
    let take_ident = |r: &str| -> Option<usize> {
        let mut chars = r.char_indices();
        match chars.next() {
            Some((_, c)) if c.is_ascii_alphabetic() || c == '_' => {}
            _ => return None,
        }
        Some(r.find(|c: char| !is_ident_char(c)).unwrap_or(r.len()))
    };
    let Some(n) = take_ident(rest) else { return false };
    rest = &rest[n..];
    loop {
        if let Some(r) = rest.strip_prefix('.').or_else(|| rest.strip_prefix("->")) {
            let Some(n) = take_ident(r) else { return false };
            rest = &r[n..];
        } else {
            break;
        }
    }
    if let Some(r) = rest.strip_prefix('[') {
        return r.ends_with(']') && !r[..r.len() - 1].contains(['[', ']']);
    }
    rest.is_empty()
}

fn first_assignment_target(body: &str) -> Option<String> {
    for stmt in body.split(';') {
        let stmt = stmt.trim_start_matches(|c: char| c.is_whitespace() || c == '{' || c == '}');
        let bytes = stmt.as_bytes();
        let mut eq = None;
        for (i, &b) in bytes.iter().enumerate() {
            if b != b'=' {
                continue;
            }
            let next = bytes.get(i + 1).copied();
            let prev = if i > 0 { Some(bytes[i - 1]) } else { None };
            if next == Some(b'=') || matches!(prev, Some(b'=' | b'!' | b'<' | b'>')) {
                break;
            }
            eq = Some(i);
            break;
        }
        let Some(i) = eq else { continue };
        let lhs = stmt[..i].trim_end_matches(['+', '-', '*', '/', '%', '&', '|', '^']);
        let compact: String = lhs.split_whitespace().collect::<Vec<_>>().join(" ");
        // `int x = ...` declares and assigns x
        let candidate = compact
            .replace(" ->", "->")
            .replace("-> ", "->")
            .replace(" .", ".")
            .replace(". ", ".");
        let last = candidate.rsplit(' ').next().unwrap_or("");
        let last = last.trim_start_matches('*');
        if is_lvalue(last) {
            return Some(last.to_string());
        }
    }
    None
}

/// Turns a variable name (plus its source context) into prose.
pub trait ExplanationBackend {
    fn explain(&mut self, var_name: &str, context: &str) -> Result<String, BackendError>;
}

/// Offline backend: a UTF-8 file of `name<TAB>meaning` lines.
#[derive(Debug, Clone, Default)]
pub struct GlossaryFile {
    entries: HashMap<String, String>,
}

impl GlossaryFile {
    pub fn parse(text: &str) -> Self {
        let entries = text
            .lines()
            .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
            .filter_map(|l| l.split_once('\t'))
            .map(|(k, v)| (k.trim().to_string(), v.trim_end_matches('\r').to_string()))
            .collect();
        GlossaryFile { entries }
    }

    pub fn load(path: &Path) -> Result<Self, ExplainError> {
        fs::read_to_string(path)
            .map(|t| Self::parse(&t))
            .map_err(|source| ExplainError::Io {
                path: path.to_path_buf(),
                source,
            })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl ExplanationBackend for GlossaryFile {
    fn explain(&mut self, var_name: &str, _context: &str) -> Result<String, BackendError> {
        Ok(self
            .entries
            .get(var_name)
            .cloned()
            .unwrap_or_else(|| NO_GLOSSARY_ENTRY.to_string()))
    }
}

/// Online backend: POSTs `{"prompt": ...}` to an LLM endpoint.
pub struct HttpLlm {
    endpoint: String,
    token: Option<String>,
    agent: ureq::Agent,
}

impl HttpLlm {
    pub fn new(endpoint: &str) -> Self {
        HttpLlm {
            endpoint: endpoint.to_string(),
            token: std::env::var(TOKEN_ENV).ok().filter(|t| !t.is_empty()),
            agent: ureq::AgentBuilder::new().timeout(HTTP_TIMEOUT).build(),
        }
    }

    pub fn with_token(mut self, token: Option<String>) -> Self {
        self.token = token;
        self
    }

    pub fn prompt(name: &str, context: &str) -> String {
        PROMPT_TEMPLATE
            .replace("{name}", name)
            .replace("{context}", context)
    }
}

fn extract_answer(body: &str) -> Option<String> {
    let Ok(json) = serde_json::from_str::<serde_json::Value>(body) else {
        let trimmed = body.trim();
        return (!trimmed.is_empty()).then(|| trimmed.to_string());
    };
    let candidates = [
        json.get("text"),
        json.get("response"),
        json.get("content"),
        json.get("output"),
        json.pointer("/choices/0/message/content"),
        json.pointer("/choices/0/text"),
        json.pointer("/candidates/0/content/parts/0/text"),
    ];
    let answer = candidates
        .into_iter()
        .flatten()
        .find_map(|v| v.as_str())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty());
    answer
}

impl ExplanationBackend for HttpLlm {
    fn explain(&mut self, var_name: &str, context: &str) -> Result<String, BackendError> {
        let body = serde_json::json!({ "prompt": Self::prompt(var_name, context) }).to_string();
        let mut req = self
            .agent
            .post(&self.endpoint)
            .set("Content-Type", "application/json");
        if let Some(token) = &self.token {
            req = req.set("Authorization", &format!("Bearer {token}"));
        }
        let resp = req
            .send_string(&body)
            .map_err(|e| BackendError::Http(e.to_string()))?;
        let text = resp
            .into_string()
            .map_err(|e| BackendError::Http(e.to_string()))?;
        // Single line so the report stays one line per parameter.
        extract_answer(&text)
            .map(|s| s.split_whitespace().collect::<Vec<_>>().join(" "))
            .ok_or(BackendError::Empty)
    }
}

/// `glossary:<file>` or `http:<url>` (an `https://` or `http://` URL may
/// follow the `http:` prefix).
pub fn backend_from_spec(spec: &str) -> Result<Box<dyn ExplanationBackend>, ExplainError> {
    if let Some(path) = spec.strip_prefix("glossary:") {
        return Ok(Box::new(GlossaryFile::load(Path::new(path))?));
    }
    if let Some(url) = spec.strip_prefix("http:") {
        let url = if url.starts_with("//") {
            format!("http:{url}")
        } else {
            url.to_string()
        };
        if url.starts_with("http://") || url.starts_with("https://") {
            return Ok(Box::new(HttpLlm::new(&url)));
        }
    }
    Err(ExplainError::BadBackendSpec(spec.to_string()))
}

/// Resolves and explains every flag in order. The backend is asked at
/// most once per distinct variable name; flags with no source match are
/// not sent to it at all.
pub fn explain_params(
    params: &IndexMap<String, IndexSet<String>>,
    backend: &mut dyn ExplanationBackend,
    index: &SourceIndex,
) -> Result<Vec<ParamInfo>, ExplainError> {
    let mut memo: HashMap<String, String> = HashMap::new();
    let mut infos = Vec::with_capacity(params.len());
    for (flag, range) in params {
        let found = index.lookup(flag);
        let meaning = match found {
            None => NO_SOURCE_MATCH.to_string(),
            Some(m) => match memo.get(&m.var_name) {
                Some(hit) => hit.clone(),
                None => match backend.explain(&m.var_name, &m.context) {
                    Ok(meaning) => {
                        memo.insert(m.var_name.clone(), meaning.clone());
                        meaning
                    }
                    Err(source) => {
                        return Err(ExplainError::Backend {
                            partial: infos,
                            source,
                        })
                    }
                },
            },
        };
        infos.push(ParamInfo {
            flag: flag.clone(),
            var_name: found.map(|m| m.var_name.clone()),
            range: range.clone(),
            meaning,
        });
    }
    Ok(infos)
}

/// Report text: a `[tests] <n>` header, one line per parameter, and an
/// `[incomplete] <reason>` trailer when the run was cut short.
pub fn render_report(infos: &[ParamInfo], test_count: usize, incomplete: Option<&str>) -> String {
    let mut out = format!("[tests] {test_count}\n");
    for info in infos {
        out.push_str(&info.to_string());
        out.push('\n');
    }
    if let Some(reason) = incomplete {
        out.push_str(&format!("[incomplete] {reason}\n"));
    }
    out
}

/// Renders the report and writes it to `out`.
pub fn write_report(infos: &[ParamInfo], tests: &[TestCaseRecord], out: &Path) -> Result<String, ExplainError> {
    let text = render_report(infos, tests.len(), None);
    fs::write(out, &text).map_err(|source| ExplainError::Io {
        path: out.to_path_buf(),
        source,
    })?;
    Ok(text)
}

/// Runs the whole pipeline over a log's text and returns the report. On a
/// backend failure the partial report (with its `[incomplete]` trailer) is
/// returned inside the error's `partial` field.
pub fn auto_explain(
    log_text: &str,
    source_root: &Path,
    backend: &mut dyn ExplanationBackend,
) -> Result<(String, Vec<ParamInfo>), (Option<String>, ExplainError)> {
    let tests = parse_test_log(log_text).map_err(|e| (None, e))?;
    let params = extract_unique_params(&tests);
    let index = SourceIndex::build(source_root).map_err(|e| (None, e))?;
    match explain_params(&params, backend, &index) {
        Ok(infos) => Ok((render_report(&infos, tests.len(), None), infos)),
        Err(ExplainError::Backend { partial, source }) => {
            let text = render_report(&partial, tests.len(), Some(&source.to_string()));
            Err((Some(text), ExplainError::Backend { partial, source }))
        }
        Err(e) => Err((None, e)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_test_lines() {
        let tests = parse_test_log("noise\ntest: nr_pbchsim.def :: -s 2 -S 5 -n 10\nmore noise").unwrap();
        assert_eq!(tests.len(), 1);
        assert_eq!(tests[0].name, "nr_pbchsim.def");
        assert_eq!(
            tests[0].args,
            vec![
                ("s".to_string(), "2".to_string()),
                ("S".to_string(), "5".to_string()),
                ("n".to_string(), "10".to_string())
            ]
        );
        assert!(parse_test_log("").unwrap().is_empty());
    }

    #[test]
    fn value_less_flags_and_negative_values() {
        let t = parse_test_log("TEST: broken :: -s").unwrap();
        assert_eq!(t[0].args, vec![("s".to_string(), "1".to_string())]);
        let t = parse_test_log("Test: x :: -a -b 3 -c -4 -d -.5 -a 7").unwrap();
        let args: Vec<(&str, &str)> = t[0].args.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
        assert_eq!(args, vec![("a", "1"), ("b", "3"), ("c", "-4"), ("d", "-.5"), ("a", "7")]);
        let t = parse_test_log("test: empty ::").unwrap();
        assert!(t[0].args.is_empty());
    }

    #[test]
    fn malformed_lines_report_line_number() {
        for bad in ["test: no separator here", "test:  :: -s 1", "test: x :: 5 -s 1", "test: x::-s 1"] {
            match parse_test_log(&format!("ok line\n{bad}")) {
                Err(ExplainError::MalformedTestLine { line: 2, .. }) => {}
                other => panic!("{bad:?}: {other:?}"),
            }
        }
        // "testing" is not the keyword
        assert!(parse_test_log("testing: x").unwrap().is_empty());
    }

    #[test]
    fn ranges_keep_first_seen_order() {
        assert_eq!(get_param_range(["2", "5", "2"]).into_iter().collect::<Vec<_>>(), ["2", "5"]);
        assert!(get_param_range([]).is_empty());
        assert_eq!(get_param_range(["1", "0", "1", "0"]).into_iter().collect::<Vec<_>>(), ["1", "0"]);
    }

    #[test]
    fn unique_params_union() {
        let tests = parse_test_log("test: a :: -s 2 -x 1\ntest: b :: -s 5 -y 0").unwrap();
        let params = extract_unique_params(&tests);
        assert_eq!(params.keys().collect::<Vec<_>>(), ["s", "x", "y"]);
        assert_eq!(params["s"].iter().collect::<Vec<_>>(), ["2", "5"]);
    }

    #[test]
    fn switch_arm_scanning() {
        let src = r#"
            switch (c) {
              case 's': snr0 = parse_arg(v); break;
              case 'o':
                set_cfo(atof(optarg));   /* no assignment */
                break;
              case 'p': if (x == 1) y = 2; break;
              case 'c':
                frame_parms -> Nid_cell = atoi(optarg);
                break;
              case 'q': { int depth = atoi(optarg); } break;
              case 'k': gains[2] += 3;
              case 'z':
              default: zz = 1;
            }
        "#;
        let arms = scan_switch_arms(src);
        let got: Vec<(char, &str)> = arms.iter().map(|(c, v, _)| (*c, v.as_str())).collect();
        assert_eq!(
            got,
            vec![('s', "snr0"), ('c', "frame_parms->Nid_cell"), ('q', "depth"), ('k', "gains[2]")]
        );
        assert!(arms[0].2.starts_with("case 's':") && arms[0].2.ends_with("break;"));
    }

    #[test]
    fn comments_are_ignored() {
        let src = "// case 'a': fake = 1; break;\n/* case 'b': also_fake = 2; */ case 'b': real = 2; break;";
        let arms = scan_switch_arms(src);
        assert_eq!(arms.len(), 1);
        assert_eq!(arms[0].1, "real");
    }

    #[test]
    fn glossary_lookup() {
        let mut g = GlossaryFile::parse("# comment\nsnr0\tstarting SNR in dB\r\n\nbad line\n");
        assert_eq!(g.len(), 1);
        assert_eq!(g.explain("snr0", "").unwrap(), "starting SNR in dB");
        assert_eq!(g.explain("nope", "").unwrap(), NO_GLOSSARY_ENTRY);
    }

    #[test]
    fn report_line_shape() {
        let info = ParamInfo {
            flag: "s".into(),
            var_name: Some("snr0".into()),
            range: get_param_range(["2", "5"]),
            meaning: "starting SNR in dB".into(),
        };
        assert_eq!(info.to_string(), "- s (snr0) -> starting SNR in dB ; range = {2, 5}");
        assert_eq!(render_report(&[], 0, None), "[tests] 0\n");
    }

    #[test]
    fn answer_extraction() {
        assert_eq!(extract_answer(r#"{"text": " hi "}"#).as_deref(), Some("hi"));
        assert_eq!(
            extract_answer(r#"{"choices": [{"message": {"content": "yo"}}]}"#).as_deref(),
            Some("yo")
        );
        assert_eq!(extract_answer("plain words\n").as_deref(), Some("plain words"));
        assert_eq!(extract_answer(r#"{"other": 1}"#), None);
        assert_eq!(extract_answer("  "), None);
    }

    #[test]
    fn backend_specs() {
        assert!(matches!(backend_from_spec("nope"), Err(ExplainError::BadBackendSpec(_))));
        assert!(matches!(backend_from_spec("http:ftp://x"), Err(ExplainError::BadBackendSpec(_))));
        assert!(backend_from_spec("http:http://127.0.0.1:9/x").is_ok());
        assert!(backend_from_spec("http://127.0.0.1:9/x").is_ok());
        assert!(matches!(
            backend_from_spec("glossary:/definitely/not/here.tsv"),
            Err(ExplainError::Io { .. })
        ));
    }
}
