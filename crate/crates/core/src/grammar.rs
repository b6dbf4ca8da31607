//! Context-free grammars over `<TOKEN>` names, loaded from JSON, and the
//! derivation trees that fuzz inputs are built from.
//!
//! A grammar file is a JSON object mapping token names to a list of rules,
//! each rule being a list of strings:
//!
//! ```text
//! {
//!   "<START>": [["do_CSIRS = ", "<BIT>", ";"]],
//!   "<BIT>":   [["0"], ["1"]]
//! }
//! ```
//!
//! A string that is exactly the name of a defined token is a reference to
//! that token; every other string is literal text.

use std::collections::HashMap;
use std::fmt;

use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_START: &str = "<START>";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GrammarError {
    #[error("malformed grammar JSON: {0}")]
    MalformedJson(String),
    #[error("bad token name {0:?}: expected <NAME> with NAME drawn from [A-Za-z0-9_-]")]
    BadTokenName(String),
    #[error("token {token} references undefined token {reference}")]
    UndefinedTokenRef { token: String, reference: String },
    #[error("token {0} has no finite derivation")]
    NoFiniteDerivation(String),
    #[error("start token {0} is missing or has no rules")]
    MissingStart(String),
    #[error("max depth {max_depth} is below the minimal derivation depth {required} of {token}")]
    DepthInfeasible {
        token: String,
        max_depth: usize,
        required: usize,
    },
    #[error("derivation tree does not match the grammar")]
    InvalidTree,
}

/// Returns true when `s` has the shape `<IDENT>` with IDENT over `[A-Za-z0-9_-]`.
pub fn is_token_name(s: &str) -> bool {
    let Some(inner) = s.strip_prefix('<').and_then(|r| r.strip_suffix('>')) else {
        return false;
    };
    !inner.is_empty()
        && inner
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || b == b'_' || b == b'-')
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum RuleItem {
    Literal(String),
    TokenRef(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Rule {
    pub items: Vec<RuleItem>,
}

impl Rule {
    pub fn token_refs(&self) -> impl Iterator<Item = &str> {
        self.items.iter().filter_map(|item| match item {
            RuleItem::TokenRef(t) => Some(t.as_str()),
            RuleItem::Literal(_) => None,
        })
    }

    pub fn ref_count(&self) -> usize {
        self.token_refs().count()
    }

    /// The integer value of a rule made of a single decimal-integer literal.
    pub fn as_integer(&self) -> Option<i64> {
        match self.items.as_slice() {
            [RuleItem::Literal(text)] => {
                let digits = text.strip_prefix('-').unwrap_or(text);
                if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
                    return None;
                }
                text.parse().ok()
            }
            _ => None,
        }
    }
}

/// Per-token precomputed data used for termination control and minimization.
#[derive(Debug, Clone, PartialEq, Eq)]
struct TokenInfo {
    min_depth: usize,
    min_size: usize,
    /// First rule achieving `min_size`.
    min_size_rule: usize,
    /// Minimal depth of a derivation that starts with each rule.
    rule_depths: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grammar {
    start: String,
    productions: IndexMap<String, Vec<Rule>>,
    info: HashMap<String, TokenInfo>,
}

impl Grammar {
    pub fn start(&self) -> &str {
        &self.start
    }

    pub fn productions(&self) -> &IndexMap<String, Vec<Rule>> {
        &self.productions
    }

    pub fn rules(&self, token: &str) -> Option<&[Rule]> {
        self.productions.get(token).map(Vec::as_slice)
    }

    pub fn token_count(&self) -> usize {
        self.productions.len()
    }

    pub fn rule_count(&self) -> usize {
        self.productions.values().map(Vec::len).sum()
    }

    /// Depth of the shallowest finite derivation of `token` (a leaf counts as 1).
    pub fn min_depth(&self, token: &str) -> Option<usize> {
        self.info.get(token).map(|i| i.min_depth)
    }

    /// Node count of the smallest finite derivation of `token`.
    pub fn min_size(&self, token: &str) -> Option<usize> {
        self.info.get(token).map(|i| i.min_size)
    }

    /// The smallest derivation of `token`, choosing the first size-minimal
    /// rule at every node.
    pub fn minimal_tree(&self, token: &str) -> Option<DerivationTree> {
        let info = self.info.get(token)?;
        let rule = &self.productions[token][info.min_size_rule];
        let children = rule
            .token_refs()
            .map(|child| self.minimal_tree(child))
            .collect::<Option<Vec<_>>>()?;
        Some(DerivationTree {
            token: token.to_string(),
            rule_index: info.min_size_rule,
            children,
        })
    }

    /// Grammar-guided parse of `text` into a derivation tree rooted at the
    /// start token. Best effort: left-recursive alternatives are not
    /// explored, and when several derivations exist the first found wins.
    pub fn parse_text(&self, text: &str) -> Option<DerivationTree> {
        let mut parser = TextParser {
            grammar: self,
            text,
            memo: HashMap::new(),
            active: Vec::new(),
        };
        parser
            .parse_token(&self.start, 0)
            .into_iter()
            .find(|(end, _)| *end == text.len())
            .map(|(_, tree)| tree)
    }
}

/// Parses a JSON grammar. In strict mode every `<...>`-shaped string must
/// name a defined token; otherwise such strings become literals.
pub fn parse_grammar(text: &str, strict: bool) -> Result<Grammar, GrammarError> {
    let raw: IndexMap<String, Vec<Vec<String>>> =
        serde_json::from_str(text).map_err(|e| GrammarError::MalformedJson(e.to_string()))?;

    if let Some(bad) = raw.keys().find(|k| !is_token_name(k)) {
        return Err(GrammarError::BadTokenName(bad.clone()));
    }

    let mut productions = IndexMap::with_capacity(raw.len());
    for (token, rules) in &raw {
        let mut converted = Vec::with_capacity(rules.len());
        for rule in rules {
            let mut items = Vec::with_capacity(rule.len());
            for s in rule {
                if raw.contains_key(s) {
                    items.push(RuleItem::TokenRef(s.clone()));
                } else if strict && is_token_name(s) {
                    return Err(GrammarError::UndefinedTokenRef {
                        token: token.clone(),
                        reference: s.clone(),
                    });
                } else {
                    items.push(RuleItem::Literal(s.clone()));
                }
            }
            converted.push(Rule { items });
        }
        productions.insert(token.clone(), converted);
    }

    let start = DEFAULT_START.to_string();
    if productions.get(&start).is_some_and(|r| r.is_empty()) {
        return Err(GrammarError::MissingStart(start));
    }
    let info = compute_token_info(&productions)?;
    match productions.get(&start) {
        Some(rules) if !rules.is_empty() => {}
        _ => return Err(GrammarError::MissingStart(start)),
    }
    Ok(Grammar {
        start,
        productions,
        info,
    })
}

fn compute_token_info(
    productions: &IndexMap<String, Vec<Rule>>,
) -> Result<HashMap<String, TokenInfo>, GrammarError> {
    const INF: usize = usize::MAX;
    let mut depth: HashMap<&str, usize> = productions.keys().map(|k| (k.as_str(), INF)).collect();
    let mut size: HashMap<&str, usize> = depth.clone();

    // Both tables converge in at most |tokens| rounds: every improvement is
    // witnessed by a derivation built from already-finite children.
    loop {
        let mut changed = false;
        for (token, rules) in productions {
            for rule in rules {
                let mut d = 1usize;
                let mut s = 1usize;
                for child in rule.token_refs() {
                    let (cd, cs) = (depth[child], size[child]);
                    d = if cd == INF { INF } else { d.max(cd + 1) };
                    s = if cs == INF { INF } else { s.saturating_add(cs) };
                }
                if d < depth[token.as_str()] {
                    depth.insert(token, d);
                    changed = true;
                }
                if s < size[token.as_str()] {
                    size.insert(token, s);
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }

    if let Some((token, _)) = productions.iter().find(|(t, _)| depth[t.as_str()] == INF) {
        return Err(GrammarError::NoFiniteDerivation(token.clone()));
    }

    let mut info = HashMap::with_capacity(productions.len());
    for (token, rules) in productions {
        let rule_depths: Vec<usize> = rules
            .iter()
            .map(|rule| {
                rule.token_refs()
                    .map(|c| depth[c].saturating_add(1))
                    .fold(1, usize::max)
            })
            .collect();
        let min_size_rule = rules
            .iter()
            .position(|rule| {
                let s = rule
                    .token_refs()
                    .fold(1usize, |acc, c| acc.saturating_add(size[c]));
                s == size[token.as_str()]
            })
            .expect("a size-minimal rule exists for every finite token");
        info.insert(
            token.clone(),
            TokenInfo {
                min_depth: depth[token.as_str()],
                min_size: size[token.as_str()],
                min_size_rule,
                rule_depths,
            },
        );
    }
    Ok(info)
}

/// A concrete derivation: the chosen rule for `token` and one child per
/// token reference in that rule, in order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DerivationTree {
    pub token: String,
    pub rule_index: usize,
    pub children: Vec<DerivationTree>,
}

impl DerivationTree {
    pub fn leaf(token: impl Into<String>, rule_index: usize) -> Self {
        DerivationTree {
            token: token.into(),
            rule_index,
            children: Vec::new(),
        }
    }

    /// Pre-order traversal paths (child index sequences from the root).
    pub fn node_paths(&self) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        let mut path = Vec::new();
        collect_paths(self, &mut path, &mut out);
        out
    }

    pub fn node(&self, path: &[usize]) -> Option<&DerivationTree> {
        path.iter().try_fold(self, |node, &i| node.children.get(i))
    }

    pub fn node_mut(&mut self, path: &[usize]) -> Option<&mut DerivationTree> {
        path.iter()
            .try_fold(self, |node, &i| node.children.get_mut(i))
    }

    /// Returns a copy of `self` with the subtree at `path` replaced.
    pub fn replaced(&self, path: &[usize], subtree: DerivationTree) -> DerivationTree {
        let mut out = self.clone();
        if let Some(slot) = out.node_mut(path) {
            *slot = subtree;
        }
        out
    }
}

fn collect_paths(node: &DerivationTree, path: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    out.push(path.clone());
    for (i, child) in node.children.iter().enumerate() {
        path.push(i);
        collect_paths(child, path, out);
        path.pop();
    }
}

impl fmt::Display for DerivationTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.token, self.rule_index)?;
        if !self.children.is_empty() {
            f.write_str("(")?;
            for (i, c) in self.children.iter().enumerate() {
                if i > 0 {
                    f.write_str(" ")?;
                }
                write!(f, "{c}")?;
            }
            f.write_str(")")?;
        }
        Ok(())
    }
}

pub fn generate_tree(g: &Grammar, seed: u64, max_depth: usize) -> Result<DerivationTree, GrammarError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    generate_from(g, g.start(), &mut rng, max_depth)
}

/// Generates a derivation of `token` whose depth does not exceed `budget`.
///
/// At each node only rules whose minimal derivation fits the remaining
/// budget are eligible, so once the budget reaches the token's minimal
/// depth only depth-minimal rules remain.
pub fn generate_from<R: Rng + ?Sized>(
    g: &Grammar,
    token: &str,
    rng: &mut R,
    budget: usize,
) -> Result<DerivationTree, GrammarError> {
    let info = g
        .info
        .get(token)
        .ok_or_else(|| GrammarError::NoFiniteDerivation(token.to_string()))?;
    if budget < info.min_depth {
        return Err(GrammarError::DepthInfeasible {
            token: token.to_string(),
            max_depth: budget,
            required: info.min_depth,
        });
    }
    Ok(generate_unchecked(g, token, rng, budget))
}

fn generate_unchecked<R: Rng + ?Sized>(
    g: &Grammar,
    token: &str,
    rng: &mut R,
    budget: usize,
) -> DerivationTree {
    let info = &g.info[token];
    let eligible: Vec<usize> = info
        .rule_depths
        .iter()
        .enumerate()
        .filter(|(_, &d)| d <= budget)
        .map(|(i, _)| i)
        .collect();
    let rule_index = eligible[rng.gen_range(0..eligible.len())];
    let rule = &g.productions[token][rule_index];
    let children = rule
        .token_refs()
        .map(|child| generate_unchecked(g, child, rng, budget - 1))
        .collect();
    DerivationTree {
        token: token.to_string(),
        rule_index,
        children,
    }
}

pub fn validate_tree(t: &DerivationTree, g: &Grammar) -> bool {
    let Some(rule) = g.rules(&t.token).and_then(|rules| rules.get(t.rule_index)) else {
        return false;
    };
    let refs: Vec<&str> = rule.token_refs().collect();
    refs.len() == t.children.len()
        && refs
            .iter()
            .zip(&t.children)
            .all(|(want, child)| child.token == *want && validate_tree(child, g))
}

pub fn unparse(t: &DerivationTree, g: &Grammar) -> Result<String, GrammarError> {
    let mut out = String::new();
    unparse_into(t, g, &mut out)?;
    Ok(out)
}

fn unparse_into(t: &DerivationTree, g: &Grammar, out: &mut String) -> Result<(), GrammarError> {
    let rule = g
        .rules(&t.token)
        .and_then(|rules| rules.get(t.rule_index))
        .ok_or(GrammarError::InvalidTree)?;
    let mut children = t.children.iter();
    for item in &rule.items {
        match item {
            RuleItem::Literal(text) => out.push_str(text),
            RuleItem::TokenRef(token) => {
                let child = children.next().ok_or(GrammarError::InvalidTree)?;
                if &child.token != token {
                    return Err(GrammarError::InvalidTree);
                }
                unparse_into(child, g, out)?;
            }
        }
    }
    if children.next().is_some() {
        return Err(GrammarError::InvalidTree);
    }
    Ok(())
}

pub fn tree_size(t: &DerivationTree) -> usize {
    1 + t.children.iter().map(tree_size).sum::<usize>()
}

struct TextParser<'a> {
    grammar: &'a Grammar,
    text: &'a str,
    memo: HashMap<(String, usize), Vec<(usize, DerivationTree)>>,
    active: Vec<(String, usize)>,
}

impl TextParser<'_> {
    /// All distinct end offsets reachable by deriving `token` at `pos`, each
    /// with the first derivation found.
    fn parse_token(&mut self, token: &str, pos: usize) -> Vec<(usize, DerivationTree)> {
        let key = (token.to_string(), pos);
        if let Some(hit) = self.memo.get(&key) {
            return hit.clone();
        }
        if self.active.contains(&key) {
            return Vec::new();
        }
        self.active.push(key.clone());

        let grammar = self.grammar;
        let mut results: Vec<(usize, DerivationTree)> = Vec::new();
        for (rule_index, rule) in grammar.productions[token].iter().enumerate() {
            let mut states: Vec<(usize, Vec<DerivationTree>)> = vec![(pos, Vec::new())];
            for item in &rule.items {
                let mut next: Vec<(usize, Vec<DerivationTree>)> = Vec::new();
                for (at, children) in states {
                    match item {
                        RuleItem::Literal(lit) => {
                            if self.text[at..].starts_with(lit.as_str())
                                && !next.iter().any(|(p, _)| *p == at + lit.len())
                            {
                                next.push((at + lit.len(), children));
                            }
                        }
                        RuleItem::TokenRef(child) => {
                            for (end, tree) in self.parse_token(child, at) {
                                if !next.iter().any(|(p, _)| *p == end) {
                                    let mut c = children.clone();
                                    c.push(tree);
                                    next.push((end, c));
                                }
                            }
                        }
                    }
                }
                states = next;
                if states.is_empty() {
                    break;
                }
            }
            for (end, children) in states {
                if !results.iter().any(|(p, _)| *p == end) {
                    results.push((
                        end,
                        DerivationTree {
                            token: token.to_string(),
                            rule_index,
                            children,
                        },
                    ));
                }
            }
        }

        self.active.pop();
        self.memo.insert(key, results.clone());
        results
    }
}
