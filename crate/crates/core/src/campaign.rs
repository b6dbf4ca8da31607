//! The coverage-guided fuzzing loop.
//!
//! A coordinator owns the corpus, the global branch set, and the crash
//! store. Workers own their RNG streams, mutate, and execute; their results
//! come back over a channel and are applied one at a time. With a single
//! worker every run of the same configuration is identical.

use std::collections::HashSet;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc;
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::configfmt::{parse_config, ConfigDocument, ConfigError};
use crate::grammar::{generate_tree, parse_grammar, unparse, DerivationTree, Grammar, GrammarError};
use crate::mutate::{random_mutation, MutateError, MutationWeights};
use crate::target::{make_target, unique_suffix, ExecOutcome, Feedback, OutcomeClass, Target, TargetError, TargetSpec};
use crate::triage::{dedup_key, minimize, param_changes, CrashReport, CrashStore, TriageError};

/// Canonical baseline config the crash diffs are computed against.
pub const DEFAULT_BASELINE: &str = include_str!("../../../fixtures/table1/initial.conf");
/// The gNB grammar shipped with the tool.
pub const GNB_GRAMMAR: &str = include_str!("../../../grammars/gnb.json");

pub const SEED_TREES: u64 = 10;
pub const DEFAULT_ENERGY: u64 = 64;
pub const DEFAULT_MAX_DEPTH: usize = 64;
const PROGRESS_INTERVAL: Duration = Duration::from_secs(2);

#[derive(Debug, Error)]
pub enum CampaignError {
    #[error("invalid campaign configuration: {0}")]
    Config(String),
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("grammar error: {0}")]
    Grammar(#[from] GrammarError),
    #[error("baseline config: {0}")]
    Baseline(#[from] ConfigError),
    #[error(transparent)]
    Target(#[from] TargetError),
    #[error(transparent)]
    Mutate(#[from] MutateError),
    #[error(transparent)]
    Triage(#[from] TriageError),
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("corpus is empty")]
    EmptyCorpus,
}

#[derive(Debug, Clone)]
pub struct CampaignConfig {
    pub grammar_path: PathBuf,
    pub strict_grammar: bool,
    pub target: TargetSpec,
    pub seed: u64,
    pub max_execs: u64,
    pub workers: usize,
    pub weights: MutationWeights,
    pub energy_per_entry: u64,
    pub max_depth: usize,
    /// Where corpus, crashes and stats.json are written; nothing is
    /// persisted when unset.
    pub out_dir: Option<PathBuf>,
    /// Baseline config for crash parameter diffs; the shipped initial
    /// fixture when unset.
    pub baseline: Option<PathBuf>,
    pub minimize_crashes: bool,
}

impl CampaignConfig {
    pub fn new(grammar_path: impl Into<PathBuf>, target: TargetSpec) -> Self {
        CampaignConfig {
            grammar_path: grammar_path.into(),
            strict_grammar: true,
            target,
            seed: 0,
            max_execs: 100_000,
            workers: 1,
            weights: MutationWeights::default(),
            energy_per_entry: DEFAULT_ENERGY,
            max_depth: DEFAULT_MAX_DEPTH,
            out_dir: None,
            baseline: None,
            minimize_crashes: true,
        }
    }

    pub fn validate(&self) -> Result<(), CampaignError> {
        if self.max_execs == 0 {
            return Err(CampaignError::Config("max_execs must be at least 1".into()));
        }
        if self.workers == 0 {
            return Err(CampaignError::Config("workers must be at least 1".into()));
        }
        if self.energy_per_entry == 0 {
            return Err(CampaignError::Config("energy_per_entry must be at least 1".into()));
        }
        self.weights.validate()?;
        self.target.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub id: u64,
    pub tree: DerivationTree,
    pub feedback_digest: u64,
    pub discovered_at: u64,
    pub energy: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CampaignStats {
    pub execs: u64,
    pub crashes_unique: u64,
    pub crashes_total: u64,
    pub timeouts: u64,
    pub corpus_size: u64,
    pub execs_per_sec: f64,
}

/// On-disk `stats.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsFile {
    pub execs: u64,
    pub crashes_total: u64,
    pub crashes_unique: u64,
    pub timeouts: u64,
    pub corpus_size: u64,
    pub execs_per_sec: f64,
    pub seed: u64,
    pub started_unix_ms: u64,
    pub finished_unix_ms: u64,
}

/// True iff `feedback` contains a branch not yet in `seen`.
pub fn should_keep(feedback: &Feedback, seen: &HashSet<String>) -> bool {
    feedback.branches().iter().any(|b| !seen.contains(b))
}

/// Round-robin power schedule: each entry gets `energy` consecutive picks,
/// plus one bonus round when its regular round produced new coverage.
#[derive(Debug, Clone)]
pub struct Scheduler {
    energy: u64,
    current: usize,
    remaining: u64,
    started: bool,
    in_bonus: bool,
    novelty: bool,
}

impl Scheduler {
    pub fn new(energy: u64) -> Self {
        Scheduler {
            energy: energy.max(1),
            current: 0,
            remaining: 0,
            started: false,
            in_bonus: false,
            novelty: false,
        }
    }

    /// Index of the next entry to fuzz.
    pub fn next(&mut self, corpus_len: usize) -> Result<usize, CampaignError> {
        if corpus_len == 0 {
            return Err(CampaignError::EmptyCorpus);
        }
        if !self.started {
            self.started = true;
            self.current = 0;
            self.remaining = self.energy;
        } else if self.remaining == 0 {
            if self.novelty && !self.in_bonus {
                self.in_bonus = true;
            } else {
                self.in_bonus = false;
                self.current = (self.current + 1) % corpus_len;
            }
            self.novelty = false;
            self.remaining = self.energy;
        }
        self.remaining -= 1;
        Ok(self.current)
    }

    /// Records that a child of `entry` produced new coverage.
    pub fn note_novelty(&mut self, entry: usize) {
        if self.started && entry == self.current {
            self.novelty = true;
        }
    }

    pub fn in_bonus_round(&self) -> bool {
        self.in_bonus
    }
}

/// Picks the next corpus entry under `scheduler`.
pub fn schedule_next<'a>(
    corpus: &'a [CorpusEntry],
    scheduler: &mut Scheduler,
) -> Result<&'a CorpusEntry, CampaignError> {
    let index = scheduler.next(corpus.len())?;
    Ok(&corpus[index])
}

struct Job {
    parent: usize,
    tree: DerivationTree,
    donor: DerivationTree,
}

struct JobResult {
    worker: usize,
    parent: Option<usize>,
    tree: DerivationTree,
    text: String,
    outcome: ExecOutcome,
    feedback: Feedback,
}

/// Observer hooks for a running campaign.
#[derive(Default)]
pub struct RunControl<'a> {
    /// Checked between executions; when set the campaign stops early and
    /// still writes its stats.
    pub stop: Option<Arc<AtomicBool>>,
    /// Called with the current stats at most every two seconds.
    pub progress: Option<&'a mut dyn FnMut(&CampaignStats)>,
}

pub struct Campaign {
    cfg: CampaignConfig,
    grammar: Grammar,
    baseline: ConfigDocument,
    baseline_text: String,
    corpus: Vec<CorpusEntry>,
    seen: HashSet<String>,
    crashes: CrashStore,
    scheduler: Scheduler,
    stats: CampaignStats,
    campaign_id: String,
    started: Instant,
    started_unix_ms: u64,
}

fn unix_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

fn read(path: &Path) -> Result<String, CampaignError> {
    fs::read_to_string(path).map_err(|source| CampaignError::Read {
        path: path.to_path_buf(),
        source,
    })
}

fn write(path: &Path, contents: &str) -> Result<(), CampaignError> {
    fs::write(path, contents).map_err(|source| CampaignError::Write {
        path: path.to_path_buf(),
        source,
    })
}

impl Campaign {
    pub fn new(cfg: CampaignConfig) -> Result<Self, CampaignError> {
        cfg.validate()?;
        let grammar = parse_grammar(&read(&cfg.grammar_path)?, cfg.strict_grammar)?;
        Self::with_grammar(cfg, grammar)
    }

    pub fn with_grammar(cfg: CampaignConfig, grammar: Grammar) -> Result<Self, CampaignError> {
        cfg.validate()?;
        // Fail early on an infeasible depth rather than at the first seed.
        generate_tree(&grammar, cfg.seed, cfg.max_depth)?;
        let baseline_text = match &cfg.baseline {
            Some(path) => read(path)?,
            None => DEFAULT_BASELINE.to_string(),
        };
        let baseline = parse_config(&baseline_text)?;
        let crashes = match &cfg.out_dir {
            Some(out) => {
                let corpus_dir = out.join("corpus");
                fs::create_dir_all(&corpus_dir).map_err(|source| CampaignError::Write {
                    path: corpus_dir,
                    source,
                })?;
                CrashStore::persistent(out.join("crashes"))?
            }
            None => CrashStore::in_memory(),
        };
        let campaign_id = format!("campaign-{}-{}-{:x}", cfg.seed, std::process::id(), unique_suffix());
        Ok(Campaign {
            scheduler: Scheduler::new(cfg.energy_per_entry),
            cfg,
            grammar,
            baseline,
            baseline_text,
            corpus: Vec::new(),
            seen: HashSet::new(),
            crashes,
            stats: CampaignStats::default(),
            campaign_id,
            started: Instant::now(),
            started_unix_ms: unix_ms(),
        })
    }

    pub fn grammar(&self) -> &Grammar {
        &self.grammar
    }

    pub fn corpus(&self) -> &[CorpusEntry] {
        &self.corpus
    }

    pub fn crashes(&self) -> &CrashStore {
        &self.crashes
    }

    pub fn stats(&self) -> CampaignStats {
        self.stats
    }

    pub fn seen_branches(&self) -> &HashSet<String> {
        &self.seen
    }

    pub fn run(&mut self) -> Result<CampaignStats, CampaignError> {
        self.run_with(RunControl::default())
    }

    pub fn run_with(&mut self, mut control: RunControl<'_>) -> Result<CampaignStats, CampaignError> {
        self.started = Instant::now();
        self.started_unix_ms = unix_ms();
        let target = make_target(&self.cfg.target, &self.campaign_id)?;
        let result = self.drive(target.as_ref(), &mut control);
        self.refresh_rate();
        // Stats are flushed even when the run ends early.
        let flushed = self.write_stats();
        result?;
        flushed?;
        Ok(self.stats)
    }

    fn drive(&mut self, target: &dyn Target, control: &mut RunControl<'_>) -> Result<(), CampaignError> {
        let stopped = |c: &RunControl<'_>| c.stop.as_ref().is_some_and(|s| s.load(Ordering::Relaxed));
        self.seed_corpus(target, control, &stopped)?;
        if self.stats.execs >= self.cfg.max_execs || stopped(control) {
            return Ok(());
        }
        if self.corpus.is_empty() {
            return Err(CampaignError::EmptyCorpus);
        }

        let workers = self.cfg.workers;
        let mut coordinator_rng = ChaCha8Rng::seed_from_u64(self.cfg.seed ^ 0x636f_6f72_6469_6e61);
        let grammar_owned = self.grammar.clone();
        let grammar = &grammar_owned;
        let weights = self.cfg.weights;
        let max_depth = self.cfg.max_depth;
        let base_seed = self.cfg.seed;

        thread::scope(|scope| -> Result<(), CampaignError> {
            let (result_tx, result_rx) = mpsc::channel::<Result<JobResult, CampaignError>>();
            let mut job_txs = Vec::with_capacity(workers);
            for worker in 0..workers {
                let (job_tx, job_rx) = mpsc::channel::<Job>();
                job_txs.push(job_tx);
                let result_tx = result_tx.clone();
                scope.spawn(move || {
                    let mut rng = ChaCha8Rng::seed_from_u64(base_seed.wrapping_add(worker as u64));
                    for job in job_rx {
                        let res = run_job(grammar, target, &weights, max_depth, &mut rng, job, worker);
                        if result_tx.send(res).is_err() {
                            break;
                        }
                    }
                });
            }
            drop(result_tx);

            let mut dispatched = self.stats.execs;
            let mut in_flight = 0usize;
            let mut last_progress = Instant::now();
            let mut failure = None;

            for tx in &job_txs {
                if dispatched >= self.cfg.max_execs {
                    break;
                }
                tx.send(self.next_job(&mut coordinator_rng)?).expect("worker alive");
                dispatched += 1;
                in_flight += 1;
            }

            while in_flight > 0 {
                let msg = result_rx.recv().expect("workers alive while jobs are in flight");
                in_flight -= 1;
                let res = match msg {
                    Ok(res) => res,
                    Err(e) => {
                        failure.get_or_insert(e);
                        continue;
                    }
                };
                let worker = res.worker;
                if let Err(e) = self.process(res, target) {
                    failure.get_or_insert(e);
                }
                if let Some(progress) = control.progress.as_mut() {
                    if last_progress.elapsed() >= PROGRESS_INTERVAL {
                        last_progress = Instant::now();
                        self.refresh_rate();
                        progress(&self.stats);
                    }
                }
                if failure.is_none() && dispatched < self.cfg.max_execs && !stopped(control) {
                    job_txs[worker]
                        .send(self.next_job(&mut coordinator_rng)?)
                        .expect("worker alive");
                    dispatched += 1;
                    in_flight += 1;
                }
            }
            drop(job_txs);
            failure.map_or(Ok(()), Err)
        })
    }

    fn seed_corpus(
        &mut self,
        target: &dyn Target,
        control: &mut RunControl<'_>,
        stopped: &dyn Fn(&RunControl<'_>) -> bool,
    ) -> Result<(), CampaignError> {
        let mut seeds = Vec::new();
        for i in 0..SEED_TREES {
            seeds.push(generate_tree(&self.grammar, self.cfg.seed.wrapping_add(i), self.cfg.max_depth)?);
        }
        if let Some(tree) = self.grammar.parse_text(&self.baseline_text) {
            seeds.push(tree);
        }
        let first = seeds.first().cloned();
        for tree in seeds {
            if self.stats.execs >= self.cfg.max_execs || stopped(control) {
                break;
            }
            let text = unparse(&tree, &self.grammar)?;
            let (outcome, feedback) = target.execute(&text)?;
            self.process(
                JobResult {
                    worker: 0,
                    parent: None,
                    tree,
                    text,
                    outcome,
                    feedback,
                },
                target,
            )?;
        }
        if self.corpus.is_empty() {
            // Every seed crashed or timed out; keep one so mutation can start.
            if let Some(tree) = first {
                let digest = target.execute(&unparse(&tree, &self.grammar)?)?.1.digest();
                self.add_entry(tree, digest)?;
            }
        }
        Ok(())
    }

    fn next_job(&mut self, rng: &mut ChaCha8Rng) -> Result<Job, CampaignError> {
        let parent = self.scheduler.next(self.corpus.len())?;
        let donor = rng.gen_range(0..self.corpus.len());
        Ok(Job {
            parent,
            tree: self.corpus[parent].tree.clone(),
            donor: self.corpus[donor].tree.clone(),
        })
    }

    fn process(&mut self, res: JobResult, target: &dyn Target) -> Result<(), CampaignError> {
        self.stats.execs += 1;
        match res.outcome.class {
            OutcomeClass::Crash(_) => {
                self.record_crash(&res.tree, &res.text, &res.outcome, &res.feedback, target)?;
            }
            OutcomeClass::Timeout => self.stats.timeouts += 1,
            OutcomeClass::Ok | OutcomeClass::Reject(_) => {
                if should_keep(&res.feedback, &self.seen) {
                    self.seen.extend(res.feedback.branches().iter().cloned());
                    self.add_entry(res.tree, res.feedback.digest())?;
                    if let Some(parent) = res.parent {
                        self.scheduler.note_novelty(parent);
                    }
                }
            }
        }
        Ok(())
    }

    /// The campaign's crash path: counts the crash and stores a report the
    /// first time its dedup key is seen.
    pub fn record_crash(
        &mut self,
        tree: &DerivationTree,
        text: &str,
        outcome: &ExecOutcome,
        feedback: &Feedback,
        target: &dyn Target,
    ) -> Result<bool, CampaignError> {
        let key = dedup_key(outcome, feedback)?;
        self.stats.crashes_total += 1;
        if self.crashes.contains(&key) {
            return Ok(false);
        }
        let minimized_text = if self.cfg.minimize_crashes {
            match minimize(tree, &self.grammar, target, &key) {
                Ok(min) => unparse(&min, &self.grammar)?,
                Err(TriageError::NonReproducible(_)) => text.to_string(),
                Err(e) => return Err(e.into()),
            }
        } else {
            text.to_string()
        };
        let report = CrashReport {
            dedup_key: key,
            outcome: outcome.clone(),
            input_text: text.to_string(),
            minimized_text,
            param_diff: param_changes(&self.baseline, text),
            first_seen_exec: self.stats.execs,
            source: None,
        };
        let inserted = self.crashes.insert(report)?;
        self.stats.crashes_unique = self.crashes.len() as u64;
        Ok(inserted)
    }

    fn add_entry(&mut self, tree: DerivationTree, digest: u64) -> Result<(), CampaignError> {
        let id = self.corpus.len() as u64;
        if let Some(out) = &self.cfg.out_dir {
            let text = unparse(&tree, &self.grammar)?;
            write(&out.join("corpus").join(format!("{id}.conf")), &text)?;
        }
        self.corpus.push(CorpusEntry {
            id,
            tree,
            feedback_digest: digest,
            discovered_at: self.stats.execs,
            energy: self.cfg.energy_per_entry,
        });
        self.stats.corpus_size = self.corpus.len() as u64;
        Ok(())
    }

    fn refresh_rate(&mut self) {
        let secs = self.started.elapsed().as_secs_f64();
        self.stats.execs_per_sec = if secs > 0.0 {
            (self.stats.execs as f64 / secs * 100.0).round() / 100.0
        } else {
            0.0
        };
    }

    pub fn stats_file(&self) -> StatsFile {
        StatsFile {
            execs: self.stats.execs,
            crashes_total: self.stats.crashes_total,
            crashes_unique: self.stats.crashes_unique,
            timeouts: self.stats.timeouts,
            corpus_size: self.stats.corpus_size,
            execs_per_sec: self.stats.execs_per_sec,
            seed: self.cfg.seed,
            started_unix_ms: self.started_unix_ms,
            finished_unix_ms: unix_ms(),
        }
    }

    fn write_stats(&self) -> Result<(), CampaignError> {
        let Some(out) = &self.cfg.out_dir else {
            return Ok(());
        };
        let json = serde_json::to_string_pretty(&self.stats_file()).expect("stats serialize") + "\n";
        write(&out.join("stats.json"), &json)
    }
}

fn run_job(
    grammar: &Grammar,
    target: &dyn Target,
    weights: &MutationWeights,
    max_depth: usize,
    rng: &mut ChaCha8Rng,
    job: Job,
    worker: usize,
) -> Result<JobResult, CampaignError> {
    let (tree, _kind) = random_mutation(&job.tree, grammar, rng.next_u64(), weights, Some(&job.donor), max_depth)?;
    let text = unparse(&tree, grammar)?;
    let (outcome, feedback) = target.execute(&text)?;
    Ok(JobResult {
        worker,
        parent: Some(job.parent),
        tree,
        text,
        outcome,
        feedback,
    })
}

/// Builds and runs a campaign, returning its final stats.
pub fn run_campaign(cfg: CampaignConfig) -> Result<CampaignStats, CampaignError> {
    Campaign::new(cfg)?.run()
}
