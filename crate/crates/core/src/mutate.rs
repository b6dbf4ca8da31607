//! Structure-preserving mutations over derivation trees. Every operator
//! returns a tree that still validates against the grammar it was given.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grammar::{generate_from, DerivationTree, Grammar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MutationKind {
    Regenerate,
    RuleSwap,
    Splice,
    ScalarTweak,
}

impl MutationKind {
    pub const ALL: [MutationKind; 4] = [
        MutationKind::Regenerate,
        MutationKind::RuleSwap,
        MutationKind::Splice,
        MutationKind::ScalarTweak,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MutationKind::Regenerate => "regenerate",
            MutationKind::RuleSwap => "rule-swap",
            MutationKind::Splice => "splice",
            MutationKind::ScalarTweak => "scalar",
        }
    }
}

impl fmt::Display for MutationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum MutateError {
    #[error("all mutation weights are zero")]
    AllZeroWeights,
    #[error("mutation weight for {0} must be finite and nonnegative")]
    BadWeight(MutationKind),
    #[error("cannot parse mutation weights {0:?}: expected kind=weight[,kind=weight...]")]
    BadWeightSpec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MutationWeights {
    pub regenerate: f64,
    pub rule_swap: f64,
    pub splice: f64,
    pub scalar: f64,
}

impl Default for MutationWeights {
    fn default() -> Self {
        MutationWeights {
            regenerate: 4.0,
            rule_swap: 3.0,
            splice: 2.0,
            scalar: 1.0,
        }
    }
}

impl MutationWeights {
    pub fn only(kind: MutationKind) -> Self {
        let mut w = MutationWeights {
            regenerate: 0.0,
            rule_swap: 0.0,
            splice: 0.0,
            scalar: 0.0,
        };
        *w.weight_mut(kind) = 1.0;
        w
    }

    pub fn weight(&self, kind: MutationKind) -> f64 {
        match kind {
            MutationKind::Regenerate => self.regenerate,
            MutationKind::RuleSwap => self.rule_swap,
            MutationKind::Splice => self.splice,
            MutationKind::ScalarTweak => self.scalar,
        }
    }

    fn weight_mut(&mut self, kind: MutationKind) -> &mut f64 {
        match kind {
            MutationKind::Regenerate => &mut self.regenerate,
            MutationKind::RuleSwap => &mut self.rule_swap,
            MutationKind::Splice => &mut self.splice,
            MutationKind::ScalarTweak => &mut self.scalar,
        }
    }

    pub fn validate(&self) -> Result<(), MutateError> {
        for kind in MutationKind::ALL {
            let w = self.weight(kind);
            if !w.is_finite() || w < 0.0 {
                return Err(MutateError::BadWeight(kind));
            }
        }
        if MutationKind::ALL.iter().all(|&k| self.weight(k) == 0.0) {
            return Err(MutateError::AllZeroWeights);
        }
        Ok(())
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> MutationKind {
        let total: f64 = MutationKind::ALL.iter().map(|&k| self.weight(k)).sum();
        let mut x = rng.gen::<f64>() * total;
        let mut last = MutationKind::Regenerate;
        for kind in MutationKind::ALL {
            let w = self.weight(kind);
            if w == 0.0 {
                continue;
            }
            last = kind;
            if x < w {
                return kind;
            }
            x -= w;
        }
        last
    }
}

/// `regenerate=4,rule-swap=3,splice=2,scalar=1`; omitted kinds get weight 0.
impl FromStr for MutationWeights {
    type Err = MutateError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || MutateError::BadWeightSpec(s.to_string());
        let mut w = MutationWeights {
            regenerate: 0.0,
            rule_swap: 0.0,
            splice: 0.0,
            scalar: 0.0,
        };
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (name, value) = part.split_once('=').ok_or_else(bad)?;
            let kind = MutationKind::ALL
                .into_iter()
                .find(|k| k.name() == name.trim())
                .ok_or_else(bad)?;
            *w.weight_mut(kind) = value.trim().parse().map_err(|_| bad())?;
        }
        w.validate()?;
        Ok(w)
    }
}

/// Replaces one uniformly chosen node's subtree with a fresh derivation of
/// the same token.
pub fn mutate_regenerate(t: &DerivationTree, g: &Grammar, seed: u64, max_depth: usize) -> DerivationTree {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    regenerate_with(t, g, &mut rng, max_depth)
}

fn regenerate_with<R: Rng + ?Sized>(
    t: &DerivationTree,
    g: &Grammar,
    rng: &mut R,
    max_depth: usize,
) -> DerivationTree {
    let paths = t.node_paths();
    let path = &paths[rng.gen_range(0..paths.len())];
    let node = t.node(path).expect("path from node_paths");
    let min = g.min_depth(&node.token).unwrap_or(1);
    let budget = max_depth.saturating_sub(path.len()).max(min);
    match generate_from(g, &node.token, rng, budget) {
        Ok(fresh) => t.replaced(path, fresh),
        Err(_) => t.clone(),
    }
}

/// Switches one node (whose token has at least two rules) to a different
/// rule, filling the new rule's children with minimal derivations.
pub fn mutate_rule_swap(t: &DerivationTree, g: &Grammar, seed: u64) -> DerivationTree {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rule_swap_with(t, g, &mut rng)
}

fn rule_swap_with<R: Rng + ?Sized>(t: &DerivationTree, g: &Grammar, rng: &mut R) -> DerivationTree {
    let candidates: Vec<Vec<usize>> = t
        .node_paths()
        .into_iter()
        .filter(|p| {
            let node = t.node(p).expect("path from node_paths");
            g.rules(&node.token).is_some_and(|r| r.len() >= 2)
        })
        .collect();
    if candidates.is_empty() {
        return t.clone();
    }
    let path = &candidates[rng.gen_range(0..candidates.len())];
    let node = t.node(path).expect("path from node_paths");
    let rules = g.rules(&node.token).expect("candidate token exists");
    // Uniform over the other rules.
    let mut new_rule = rng.gen_range(0..rules.len() - 1);
    if new_rule >= node.rule_index {
        new_rule += 1;
    }
    match with_minimal_children(g, &node.token, new_rule) {
        Some(fresh) => t.replaced(path, fresh),
        None => t.clone(),
    }
}

fn with_minimal_children(g: &Grammar, token: &str, rule_index: usize) -> Option<DerivationTree> {
    let rule = g.rules(token)?.get(rule_index)?;
    let children = rule
        .token_refs()
        .map(|child| g.minimal_tree(child))
        .collect::<Option<Vec<_>>>()?;
    Some(DerivationTree {
        token: token.to_string(),
        rule_index,
        children,
    })
}

/// Replaces a random subtree of `t` with a subtree of `donor` rooted at the
/// same token. Returns `t` unchanged when the trees share no token.
pub fn mutate_splice(t: &DerivationTree, donor: &DerivationTree, _g: &Grammar, seed: u64) -> DerivationTree {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    splice_with(t, donor, &mut rng)
}

fn splice_with<R: Rng + ?Sized>(
    t: &DerivationTree,
    donor: &DerivationTree,
    rng: &mut R,
) -> DerivationTree {
    let donor_paths = donor.node_paths();
    let donor_nodes: Vec<&DerivationTree> = donor_paths
        .iter()
        .map(|p| donor.node(p).expect("path from node_paths"))
        .collect();
    let targets: Vec<Vec<usize>> = t
        .node_paths()
        .into_iter()
        .filter(|p| {
            let token = &t.node(p).expect("path from node_paths").token;
            donor_nodes.iter().any(|d| &d.token == token)
        })
        .collect();
    if targets.is_empty() {
        return t.clone();
    }
    let path = &targets[rng.gen_range(0..targets.len())];
    let token = &t.node(path).expect("path from node_paths").token;
    let matching: Vec<&&DerivationTree> = donor_nodes.iter().filter(|d| &d.token == token).collect();
    let chosen = matching[rng.gen_range(0..matching.len())];
    t.replaced(path, (*chosen).clone())
}

/// Moves one integer-valued choice to a numerically adjacent or extreme
/// alternative. Only tokens with at least two rules and at least one other
/// pure-integer literal rule are eligible.
pub fn mutate_scalar(t: &DerivationTree, g: &Grammar, seed: u64) -> DerivationTree {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    scalar_with(t, g, &mut rng)
}

fn scalar_with<R: Rng + ?Sized>(t: &DerivationTree, g: &Grammar, rng: &mut R) -> DerivationTree {
    let integer_rules = |token: &str| -> Vec<(usize, i64)> {
        g.rules(token)
            .map(|rules| {
                rules
                    .iter()
                    .enumerate()
                    .filter_map(|(i, r)| r.as_integer().map(|v| (i, v)))
                    .collect()
            })
            .unwrap_or_default()
    };
    let candidates: Vec<Vec<usize>> = t
        .node_paths()
        .into_iter()
        .filter(|p| {
            let node = t.node(p).expect("path from node_paths");
            g.rules(&node.token).is_some_and(|r| r.len() >= 2)
                && integer_rules(&node.token)
                    .iter()
                    .any(|&(i, _)| i != node.rule_index)
        })
        .collect();
    if candidates.is_empty() {
        return t.clone();
    }
    let path = &candidates[rng.gen_range(0..candidates.len())];
    let node = t.node(path).expect("path from node_paths");
    let alternatives: Vec<(usize, i64)> = integer_rules(&node.token)
        .into_iter()
        .filter(|&(i, _)| i != node.rule_index)
        .collect();
    let current = g.rules(&node.token).expect("candidate token")[node.rule_index].as_integer();

    let mut picks: Vec<usize> = Vec::new();
    let min_by = |f: &dyn Fn(i64) -> i128| alternatives.iter().min_by_key(|&&(_, v)| f(v)).map(|&(i, _)| i);
    if let Some(cur) = current {
        // increment: smallest value above the current one
        if let Some(i) = alternatives
            .iter()
            .filter(|&&(_, v)| v > cur)
            .min_by_key(|&&(_, v)| v)
            .map(|&(i, _)| i)
        {
            picks.push(i);
        }
        // decrement: largest value below
        if let Some(i) = alternatives
            .iter()
            .filter(|&&(_, v)| v < cur)
            .max_by_key(|&&(_, v)| v)
            .map(|&(i, _)| i)
        {
            picks.push(i);
        }
    }
    // zero: the alternative closest to 0
    picks.extend(min_by(&|v| (v as i128).abs()));
    // extremes
    picks.extend(min_by(&|v| v as i128));
    picks.extend(min_by(&|v| -(v as i128)));

    let rule_index = picks[rng.gen_range(0..picks.len())];
    t.replaced(path, DerivationTree::leaf(node.token.clone(), rule_index))
}

/// Samples a mutation kind proportionally to `weights` and applies it.
/// Splice draws from `donor`, or from `t` itself when no donor is given.
pub fn random_mutation(
    t: &DerivationTree,
    g: &Grammar,
    seed: u64,
    weights: &MutationWeights,
    donor: Option<&DerivationTree>,
    max_depth: usize,
) -> Result<(DerivationTree, MutationKind), MutateError> {
    weights.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kind = weights.sample(&mut rng);
    let out = match kind {
        MutationKind::Regenerate => regenerate_with(t, g, &mut rng, max_depth),
        MutationKind::RuleSwap => rule_swap_with(t, g, &mut rng),
        MutationKind::Splice => splice_with(t, donor.unwrap_or(t), &mut rng),
        MutationKind::ScalarTweak => scalar_with(t, g, &mut rng),
    };
    Ok((out, kind))
}
