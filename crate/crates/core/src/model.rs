//! Concrete Markov automata.
//!
//! A Markov automaton mixes action-labelled probabilistic transitions with
//! exponentially delayed Markov transitions. Every state is either
//! probabilistic (at least one action transition, no rates), Markovian
//! (a nonempty rate distribution, no action transitions) or a deadlock.
//! The automaton is immutable once built.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::error::{Error, Result};
use crate::graph::tarjan_scc;

pub type StateId = usize;
pub type ActionId = usize;
pub type StateSet = BTreeSet<StateId>;

/// Absolute tolerance for probability sums on input.
pub const PROB_TOLERANCE: f64 = 1e-9;

/// Sparse probability distribution. Keys ascend, zero entries are absent.
#[derive(Clone, Debug, PartialEq)]
pub struct Distribution {
    entries: Vec<(usize, f64)>,
}

impl Distribution {
    /// Validates that every probability lies in (0, 1], keys are unique and
    /// the total is 1 within [`PROB_TOLERANCE`].
    pub fn new(entries: impl IntoIterator<Item = (usize, f64)>) -> Result<Self> {
        let mut entries: Vec<(usize, f64)> = entries.into_iter().collect();
        entries.sort_by_key(|&(k, _)| k);
        for w in entries.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::invalid(format!("duplicate support entry {}", w[0].0)));
            }
        }
        for &(k, p) in &entries {
            if !(p > 0.0 && p <= 1.0 + PROB_TOLERANCE) || !p.is_finite() {
                return Err(Error::invalid(format!("probability {p} for {k} outside (0,1]")));
            }
        }
        let total: f64 = entries.iter().map(|&(_, p)| p).sum();
        if (total - 1.0).abs() > PROB_TOLERANCE {
            return Err(Error::invalid(format!("distribution sums to {}", round9(total))));
        }
        Ok(Self { entries })
    }

    pub fn point(target: usize) -> Self {
        Self {
            entries: vec![(target, 1.0)],
        }
    }

    /// Builds from an accumulated map, dropping non-positive entries. The
    /// caller is responsible for the total.
    pub(crate) fn from_map(map: BTreeMap<usize, f64>) -> Self {
        Self {
            entries: map.into_iter().filter(|&(_, p)| p > 0.0).collect(),
        }
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.entries.iter().copied()
    }

    pub fn get(&self, key: usize) -> f64 {
        match self.entries.binary_search_by_key(&key, |&(k, _)| k) {
            Ok(i) => self.entries[i].1,
            Err(_) => 0.0,
        }
    }

    pub fn support(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries.iter().map(|&(k, _)| k)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.entries.iter().map(|&(_, p)| p).sum()
    }
}

/// Sparse rate function. Keys ascend, all stored rates strictly positive.
#[derive(Clone, Debug, PartialEq)]
pub struct RateDistribution {
    entries: Vec<(usize, f64)>,
}

impl RateDistribution {
    pub fn new(entries: impl IntoIterator<Item = (usize, f64)>) -> Result<Self> {
        let mut entries: Vec<(usize, f64)> = entries.into_iter().collect();
        entries.sort_by_key(|&(k, _)| k);
        for w in entries.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::invalid(format!("duplicate rate target {}", w[0].0)));
            }
        }
        for &(k, r) in &entries {
            if !(r > 0.0) || !r.is_finite() {
                return Err(Error::invalid(format!("rate {r} for {k} is not positive")));
            }
        }
        Ok(Self { entries })
    }

    pub(crate) fn from_map(map: BTreeMap<usize, f64>) -> Self {
        Self {
            entries: map.into_iter().filter(|&(_, r)| r > 0.0).collect(),
        }
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.entries.iter().copied()
    }

    pub fn get(&self, key: usize) -> f64 {
        match self.entries.binary_search_by_key(&key, |&(k, _)| k) {
            Ok(i) => self.entries[i].1,
            Err(_) => 0.0,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    /// Sum of all rates.
    pub fn exit_rate(&self) -> f64 {
        self.entries.iter().map(|&(_, r)| r).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StateClass {
    Probabilistic,
    Markovian,
    Deadlock,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbTransition {
    pub action: ActionId,
    pub distribution: Distribution,
}

#[derive(Clone, Debug)]
pub struct MarkovAutomaton {
    state_names: Vec<String>,
    initial: StateId,
    action_names: Vec<String>,
    transitions: Vec<Vec<ProbTransition>>,
    rates: Vec<Option<RateDistribution>>,
}

impl MarkovAutomaton {
    pub fn num_states(&self) -> usize {
        self.state_names.len()
    }

    pub fn initial(&self) -> StateId {
        self.initial
    }

    pub fn state_name(&self, s: StateId) -> &str {
        &self.state_names[s]
    }

    pub fn state_names(&self) -> &[String] {
        &self.state_names
    }

    pub fn state_id(&self, name: &str) -> Option<StateId> {
        self.state_names.iter().position(|n| n == name)
    }

    pub fn num_actions(&self) -> usize {
        self.action_names.len()
    }

    pub fn action_name(&self, a: ActionId) -> &str {
        &self.action_names[a]
    }

    pub fn action_names(&self) -> &[String] {
        &self.action_names
    }

    pub fn transitions(&self, s: StateId) -> &[ProbTransition] {
        &self.transitions[s]
    }

    pub fn rates(&self, s: StateId) -> Option<&RateDistribution> {
        self.rates[s].as_ref()
    }

    fn check_state(&self, s: StateId) -> Result<()> {
        if s < self.num_states() {
            Ok(())
        } else {
            Err(Error::invalid(format!("unknown state id {s}")))
        }
    }

    pub fn classify(&self, s: StateId) -> Result<StateClass> {
        self.check_state(s)?;
        Ok(self.class_of(s))
    }

    pub(crate) fn class_of(&self, s: StateId) -> StateClass {
        if !self.transitions[s].is_empty() {
            StateClass::Probabilistic
        } else if self.rates[s].is_some() {
            StateClass::Markovian
        } else {
            StateClass::Deadlock
        }
    }

    pub fn exit_rate(&self, s: StateId) -> Result<f64> {
        self.check_state(s)?;
        self.rates[s]
            .as_ref()
            .map(RateDistribution::exit_rate)
            .ok_or_else(|| Error::invalid(format!("state {} is not Markovian", self.state_names[s])))
    }

    /// Probability that the Markov transition from `s` to `target` fires
    /// within time `t`: `(1 - e^{-E(s) t}) R(s)(target) / E(s)`.
    pub fn jump_probability(&self, s: StateId, target: StateId, t: f64) -> Result<f64> {
        self.check_state(target)?;
        if !(t >= 0.0) {
            return Err(Error::invalid(format!("negative time {t}")));
        }
        let exit = self.exit_rate(s)?;
        let rate = self.rates[s].as_ref().map_or(0.0, |r| r.get(target));
        Ok(-(-exit * t).exp_m1() * rate / exit)
    }

    /// Maximal end components made only of probabilistic states. An empty
    /// result means the automaton is non-Zeno.
    pub fn detect_probabilistic_end_components(&self) -> Vec<Vec<StateId>> {
        let n = self.num_states();
        let mut alive: Vec<bool> = (0..n).map(|s| self.class_of(s) == StateClass::Probabilistic).collect();
        // Enabled transition indices per state, pruned as the decomposition proceeds.
        let mut enabled: Vec<Vec<usize>> = (0..n)
            .map(|s| if alive[s] { (0..self.transitions[s].len()).collect() } else { Vec::new() })
            .collect();

        loop {
            let adj: Vec<Vec<usize>> = (0..n)
                .map(|s| {
                    let mut succ: Vec<usize> = enabled[s]
                        .iter()
                        .flat_map(|&i| self.transitions[s][i].distribution.support())
                        .filter(|&t| alive[t])
                        .collect();
                    succ.sort_unstable();
                    succ.dedup();
                    succ
                })
                .collect();
            let mut comp_of = vec![usize::MAX; n];
            for (c, comp) in tarjan_scc(&adj).iter().enumerate() {
                for &s in comp {
                    comp_of[s] = c;
                }
            }
            let mut changed = false;
            for s in 0..n {
                if !alive[s] {
                    continue;
                }
                let before = enabled[s].len();
                let trans = &self.transitions[s];
                enabled[s].retain(|&i| {
                    trans[i]
                        .distribution
                        .support()
                        .all(|t| alive[t] && comp_of[t] == comp_of[s])
                });
                changed |= enabled[s].len() != before;
                if enabled[s].is_empty() {
                    alive[s] = false;
                    changed = true;
                }
            }
            if !changed {
                let mut groups: BTreeMap<usize, Vec<StateId>> = BTreeMap::new();
                for s in (0..n).filter(|&s| alive[s]) {
                    groups.entry(comp_of[s]).or_default().push(s);
                }
                let mut result: Vec<Vec<StateId>> = groups.into_values().collect();
                result.sort_by_key(|c| c[0]);
                return result;
            }
        }
    }

    /// Copy in which every goal keeps only a rate-1 self-loop.
    pub fn make_goals_absorbing(&self, goals: &StateSet) -> Result<Self> {
        let mut out = self.clone();
        for &g in goals {
            self.check_state(g)?;
            out.transitions[g].clear();
            out.rates[g] = Some(RateDistribution { entries: vec![(g, 1.0)] });
        }
        Ok(out)
    }
}

/// Incremental construction of a [`MarkovAutomaton`].
#[derive(Debug, Default)]
pub struct MarkovAutomatonBuilder {
    state_names: Vec<String>,
    state_index: HashMap<String, StateId>,
    action_names: Vec<String>,
    action_index: HashMap<String, ActionId>,
    transitions: Vec<Vec<ProbTransition>>,
    rates: Vec<Option<RateDistribution>>,
}

impl MarkovAutomatonBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_state(&mut self, name: &str) -> Result<StateId> {
        if self.state_index.contains_key(name) {
            return Err(Error::invalid(format!("state {name} declared twice")));
        }
        let id = self.state_names.len();
        self.state_names.push(name.to_string());
        self.state_index.insert(name.to_string(), id);
        self.transitions.push(Vec::new());
        self.rates.push(None);
        Ok(id)
    }

    pub fn state_id(&self, name: &str) -> Option<StateId> {
        self.state_index.get(name).copied()
    }

    pub fn num_states(&self) -> usize {
        self.state_names.len()
    }

    /// Interns an action name.
    pub fn action(&mut self, name: &str) -> ActionId {
        if let Some(&a) = self.action_index.get(name) {
            return a;
        }
        let id = self.action_names.len();
        self.action_names.push(name.to_string());
        self.action_index.insert(name.to_string(), id);
        id
    }

    pub fn add_transition(&mut self, s: StateId, action: ActionId, distribution: Distribution) -> Result<()> {
        self.check(s)?;
        if action >= self.action_names.len() {
            return Err(Error::invalid(format!("unknown action id {action}")));
        }
        if let Some(t) = distribution.support().find(|&t| t >= self.state_names.len()) {
            return Err(Error::invalid(format!("unknown successor id {t}")));
        }
        if self.rates[s].is_some() {
            return Err(Error::invalid(format!(
                "state {} has both probabilistic and Markov transitions",
                self.state_names[s]
            )));
        }
        let tr = ProbTransition { action, distribution };
        if self.transitions[s].contains(&tr) {
            return Err(Error::invalid(format!(
                "duplicate transition {} in state {}",
                self.action_names[action], self.state_names[s]
            )));
        }
        self.transitions[s].push(tr);
        Ok(())
    }

    pub fn set_rates(&mut self, s: StateId, rates: RateDistribution) -> Result<()> {
        self.check(s)?;
        if rates.is_empty() {
            return Err(Error::invalid("empty rate distribution"));
        }
        if let Some(t) = rates.iter().map(|(t, _)| t).find(|&t| t >= self.state_names.len()) {
            return Err(Error::invalid(format!("unknown successor id {t}")));
        }
        if !self.transitions[s].is_empty() {
            return Err(Error::invalid(format!(
                "state {} has both probabilistic and Markov transitions",
                self.state_names[s]
            )));
        }
        self.rates[s] = Some(rates);
        Ok(())
    }

    fn check(&self, s: StateId) -> Result<()> {
        if s < self.state_names.len() {
            Ok(())
        } else {
            Err(Error::invalid(format!("unknown state id {s}")))
        }
    }

    pub fn build(self, initial: StateId) -> Result<MarkovAutomaton> {
        self.check(initial)?;
        Ok(MarkovAutomaton {
            state_names: self.state_names,
            initial,
            action_names: self.action_names,
            transitions: self.transitions,
            rates: self.rates,
        })
    }
}

pub(crate) fn round9(x: f64) -> f64 {
    (x * 1e9).round() / 1e9
}
