//! Controller loop: random search and regularized (aging) evolution.
//!
//! Proposals are generated in fixed-size batches from the controller state at
//! the start of the batch, evaluated in parallel, and appended to the history
//! in submission order. The history is therefore a function of the seed, the
//! controller and the reward alone, whatever the thread count.

use std::io::Write;
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::{
    assemble_candidate, sample_adjustment, sample_candidate, sample_pair, CandidateArchitecture, CandidateRecord,
    RewardFn, SearchSpaceConfig,
};
use crate::error::{Error, Result};

/// Reward recorded for candidates whose evaluation failed or was NaN.
pub const FAILED_REWARD: f64 = f64::MIN;

const MUTATION_ATTEMPTS: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct EvolutionConfig {
    pub population: usize,
    pub tournament: usize,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        Self {
            population: 64,
            tournament: 8,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ControllerKind {
    Random,
    Evolution(EvolutionConfig),
}

impl FromStr for ControllerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(ControllerKind::Random),
            "evolution" => Ok(ControllerKind::Evolution(EvolutionConfig::default())),
            other => Err(Error::SearchConfig(format!(
                "unknown controller `{other}` (expected random or evolution)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SearchOptions {
    pub budget: usize,
    pub seed: u64,
    /// Candidates proposed per round before any of them is evaluated.
    pub batch_size: usize,
}

impl SearchOptions {
    pub fn new(budget: usize, seed: u64) -> Self {
        Self {
            budget,
            seed,
            batch_size: 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HistoryEntry {
    pub index: usize,
    pub candidate: CandidateArchitecture,
    pub reward: f64,
    pub error: Option<String>,
}

#[derive(Serialize)]
struct HistoryLine<'a> {
    index: usize,
    reward: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<&'a str>,
    candidate: CandidateRecord,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchOutcome {
    pub history: Vec<HistoryEntry>,
    /// Index of the best entry; the earliest one on ties.
    pub best: usize,
}

impl SearchOutcome {
    pub fn best(&self) -> &HistoryEntry {
        &self.history[self.best]
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.history.iter().map(|h| h.reward).collect()
    }

    /// Running maximum of the rewards.
    pub fn best_so_far(&self) -> Vec<f64> {
        self.history
            .iter()
            .scan(f64::NEG_INFINITY, |best, h| {
                *best = best.max(h.reward);
                Some(*best)
            })
            .collect()
    }
}

/// Writes one JSON object per history entry.
pub fn write_history_jsonl(history: &[HistoryEntry], mut w: impl Write) -> Result<()> {
    for h in history {
        let line = HistoryLine {
            index: h.index,
            reward: h.reward,
            error: h.error.as_deref(),
            candidate: h.candidate.record(),
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n").map_err(|source| Error::Io {
            path: "<history>".into(),
            source,
        })?;
    }
    Ok(())
}

/// Index of the highest reward, earliest first on ties.
fn argmax(rewards: impl Iterator<Item = (usize, f64)>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, r) in rewards {
        if best.map_or(true, |(_, b)| r > b) {
            best = Some((i, r));
        }
    }
    best.map(|(i, _)| i)
}

#[derive(Clone, Copy)]
enum Component {
    Permutation,
    Connections,
    Adjustments,
}

/// Resamples one component of one block of `parent`.
fn mutate(cfg: &SearchSpaceConfig, parent: &CandidateArchitecture, rng: &mut impl Rng) -> Result<CandidateArchitecture> {
    let mut components = Vec::new();
    if cfg.search_permutation {
        components.push(Component::Permutation);
    }
    if cfg.search_connections {
        components.push(Component::Connections);
    }
    if cfg.enable_adjustments {
        components.push(Component::Adjustments);
    }
    if components.is_empty() {
        return Ok(parent.clone());
    }
    let n = parent.permutation.len();
    let k = parent.permutation.num_intermediates();
    for _ in 0..MUTATION_ATTEMPTS {
        let mut perm = parent.permutation.clone();
        let mut conns = parent.connections.clone();
        let mut adjs = parent.adjustments.clone();
        match *components.choose(rng).expect("non-empty") {
            Component::Permutation => {
                // Swap two blocks within the intermediate or the output group.
                let group = if k >= 2 && rng.gen_bool(k as f64 / n as f64) { 0..k } else { k..n };
                let picked = index::sample(rng, group.len(), 2);
                perm.levels.swap(group.start + picked.index(0), group.start + picked.index(1));
            }
            Component::Connections => {
                let j = rng.gen_range(0..n);
                conns[j] = sample_pair(cfg, j, rng);
            }
            Component::Adjustments => {
                let j = rng.gen_range(0..n);
                adjs[j] = sample_adjustment(cfg, perm.is_output(j), rng);
            }
        }
        match assemble_candidate(cfg, &perm, &conns, &adjs) {
            Err(Error::UnplaceableOrphan { .. }) => continue,
            other => return other,
        }
    }
    sample_candidate(cfg, rng)
}

fn propose(
    cfg: &SearchSpaceConfig,
    controller: ControllerKind,
    history: &[HistoryEntry],
    rng: &mut impl Rng,
) -> Result<CandidateArchitecture> {
    match controller {
        ControllerKind::Random => sample_candidate(cfg, rng),
        ControllerKind::Evolution(evo) => {
            if history.len() < evo.population {
                return sample_candidate(cfg, rng);
            }
            // Aging: the population is the most recent `population` entries.
            let population = &history[history.len() - evo.population..];
            let mut picked: Vec<usize> = index::sample(rng, population.len(), evo.tournament.min(population.len())).into_vec();
            picked.sort_unstable();
            let winner = argmax(picked.iter().map(|&i| (i, population[i].reward))).expect("tournament is non-empty");
            mutate(cfg, &population[winner].candidate, rng)
        }
    }
}

fn evaluate(reward: &dyn RewardFn, c: &CandidateArchitecture) -> (f64, Option<String>) {
    match reward.evaluate(c) {
        Ok(r) if r.is_nan() => (FAILED_REWARD, Some("reward is NaN".into())),
        Ok(r) => (r, None),
        Err(e) => (FAILED_REWARD, Some(e)),
    }
}

/// Runs `opts.budget` proposals and returns the full history and the best
/// entry. Reward failures are recorded with [`FAILED_REWARD`] and do not stop
/// the search.
pub fn run_search(
    cfg: &SearchSpaceConfig,
    controller: ControllerKind,
    reward: &dyn RewardFn,
    opts: SearchOptions,
) -> Result<SearchOutcome> {
    if opts.budget == 0 {
        return Err(Error::EmptySearch);
    }
    cfg.check()?;
    if let ControllerKind::Evolution(evo) = controller {
        if evo.population == 0 || evo.tournament == 0 {
            return Err(Error::SearchConfig("population and tournament sizes must be positive".into()));
        }
    }
    let batch = opts.batch_size.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut history: Vec<HistoryEntry> = Vec::with_capacity(opts.budget);
    while history.len() < opts.budget {
        let count = batch.min(opts.budget - history.len());
        let proposals = (0..count)
            .map(|_| propose(cfg, controller, &history, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let results: Vec<(f64, Option<String>)> = proposals.par_iter().map(|c| evaluate(reward, c)).collect();
        for (candidate, (reward, error)) in proposals.into_iter().zip(results) {
            if let Some(e) = &error {
                log::warn!("candidate {} failed: {e}", history.len());
            }
            history.push(HistoryEntry {
                index: history.len(),
                candidate,
                reward,
                error,
            });
        }
    }
    let best = argmax(history.iter().map(|h| (h.index, h.reward))).expect("budget >= 1");
    Ok(SearchOutcome { history, best })
}
