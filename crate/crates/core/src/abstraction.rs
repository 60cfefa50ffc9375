//! Partition-based menu/game abstraction of a Markov automaton.
//!
//! Probabilistic blocks become player-1 states whose choices are the
//! enabled actions ("menu"); each (block, action) pair is a player-2 state
//! choosing among the distinct lifted distributions of the block members,
//! plus a transition to the bottom state `*` when some member lacks the
//! action. Markovian blocks become player-2 states choosing among the
//! distinct lifted rate distributions of their members.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{self, Write};

use crate::error::{Error, Result};
use crate::model::{ActionId, Distribution, MarkovAutomaton, RateDistribution, StateClass, StateId, StateSet};

pub type BlockId = usize;
pub type GameStateId = usize;

/// Disjoint, covering, class-homogeneous blocks of concrete states.
///
/// Blocks are kept in canonical order (each sorted, blocks ordered by their
/// smallest member) so equal partitions compare equal.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Partition {
    blocks: Vec<Vec<StateId>>,
    block_of: Vec<BlockId>,
    classes: Vec<StateClass>,
}

impl Partition {
    pub fn new(ma: &MarkovAutomaton, blocks: Vec<Vec<StateId>>) -> Result<Self> {
        let n = ma.num_states();
        let mut blocks: Vec<Vec<StateId>> = blocks
            .into_iter()
            .map(|mut b| {
                b.sort_unstable();
                b
            })
            .collect();
        if blocks.iter().any(Vec::is_empty) {
            return Err(Error::invalid("partition contains an empty block"));
        }
        blocks.sort_by_key(|b| b[0]);
        let mut block_of = vec![usize::MAX; n];
        let mut classes = Vec::with_capacity(blocks.len());
        for (i, block) in blocks.iter().enumerate() {
            let class = ma.class_of(block[0]);
            for w in block.windows(2) {
                if w[0] == w[1] {
                    return Err(Error::invalid(format!("state {} listed twice", w[0])));
                }
            }
            for &s in block {
                if s >= n {
                    return Err(Error::invalid(format!("unknown state id {s}")));
                }
                if block_of[s] != usize::MAX {
                    return Err(Error::invalid(format!("state {} in two blocks", ma.state_name(s))));
                }
                if ma.class_of(s) != class {
                    return Err(Error::invalid(format!(
                        "block {i} mixes {:?} and {:?} states",
                        class,
                        ma.class_of(s)
                    )));
                }
                block_of[s] = i;
            }
            classes.push(class);
        }
        if let Some(s) = block_of.iter().position(|&b| b == usize::MAX) {
            return Err(Error::invalid(format!("state {} not covered", ma.state_name(s))));
        }
        Ok(Self {
            blocks,
            block_of,
            classes,
        })
    }

    /// One block per state.
    pub fn singleton(ma: &MarkovAutomaton) -> Self {
        let n = ma.num_states();
        Self {
            blocks: (0..n).map(|s| vec![s]).collect(),
            block_of: (0..n).collect(),
            classes: (0..n).map(|s| ma.class_of(s)).collect(),
        }
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn num_states(&self) -> usize {
        self.block_of.len()
    }

    pub fn blocks(&self) -> &[Vec<StateId>] {
        &self.blocks
    }

    pub fn block(&self, b: BlockId) -> &[StateId] {
        &self.blocks[b]
    }

    pub fn class(&self, b: BlockId) -> StateClass {
        self.classes[b]
    }

    pub fn block_of(&self, s: StateId) -> Result<BlockId> {
        self.block_of
            .get(s)
            .copied()
            .ok_or_else(|| Error::invalid(format!("state {s} outside the partition")))
    }

    /// True when every block of `self` lies inside a block of `coarser`.
    pub fn refines(&self, coarser: &Partition) -> bool {
        self.num_states() == coarser.num_states()
            && self.blocks.iter().all(|b| {
                let target = coarser.block_of[b[0]];
                b.iter().all(|&s| coarser.block_of[s] == target)
            })
    }
}

/// Sums `mu` over blocks.
pub fn lift_distribution(mu: &Distribution, p: &Partition) -> Result<Distribution> {
    let mut acc: BTreeMap<BlockId, f64> = BTreeMap::new();
    for (s, prob) in mu.iter() {
        *acc.entry(p.block_of(s)?).or_insert(0.0) += prob;
    }
    Ok(Distribution::from_map(acc))
}

/// Sums rates over blocks.
pub fn lift_rate_distribution(rho: &RateDistribution, p: &Partition) -> Result<RateDistribution> {
    let mut acc: BTreeMap<BlockId, f64> = BTreeMap::new();
    for (s, rate) in rho.iter() {
        *acc.entry(p.block_of(s)?).or_insert(0.0) += rate;
    }
    Ok(RateDistribution::from_map(acc))
}

/// Actions with at least one transition from some state of `block`.
pub fn enabled_actions(ma: &MarkovAutomaton, block: &[StateId]) -> BTreeSet<ActionId> {
    block
        .iter()
        .flat_map(|&s| ma.transitions(s).iter().map(|t| t.action))
        .collect()
}

/// Coarsest homogeneous partition separating goals from non-goals: at most
/// six blocks (goal or not, times the three state classes).
pub fn initial_partition(ma: &MarkovAutomaton, goals: &StateSet) -> Result<Partition> {
    let mut cells: BTreeMap<(bool, StateClass), Vec<StateId>> = BTreeMap::new();
    if let Some(&g) = goals.iter().find(|&&g| g >= ma.num_states()) {
        return Err(Error::invalid(format!("goal id {g} outside the automaton")));
    }
    for s in 0..ma.num_states() {
        cells.entry((goals.contains(&s), ma.class_of(s))).or_default().push(s);
    }
    Partition::new(ma, cells.into_values().collect())
}

/// Label of a menu entry. When a state offers the same action with several
/// distributions, the k-th occurrence gets ordinal k.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ChoiceLabel {
    pub action: ActionId,
    pub ordinal: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub enum GameStateKind {
    /// Player-1 state of a probabilistic block.
    ProbBlock(BlockId),
    /// The sink `*` collecting actions disabled in some block member.
    Bottom,
    /// Player-2 state for an enabled action of a probabilistic block.
    Action { block: BlockId, label: ChoiceLabel },
    /// Player-2 state of a Markovian block.
    MarkovBlock(BlockId),
    /// Representative of block members sharing one lifted rate distribution.
    MarkovConcrete { block: BlockId, lifted: RateDistribution },
    /// Block of deadlock states, absorbing.
    DeadlockBlock(BlockId),
}

#[derive(Clone, Debug, PartialEq)]
pub struct GameState {
    pub kind: GameStateKind,
    pub goal: bool,
}

impl GameState {
    pub fn block(&self) -> Option<BlockId> {
        match self.kind {
            GameStateKind::ProbBlock(b)
            | GameStateKind::Action { block: b, .. }
            | GameStateKind::MarkovBlock(b)
            | GameStateKind::MarkovConcrete { block: b, .. }
            | GameStateKind::DeadlockBlock(b) => Some(b),
            GameStateKind::Bottom => None,
        }
    }

    pub fn is_player1(&self) -> bool {
        matches!(self.kind, GameStateKind::ProbBlock(_) | GameStateKind::Bottom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Rate {
    Finite(f64),
    Immediate,
}

impl fmt::Display for Rate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rate::Finite(r) => write!(f, "{r}"),
            Rate::Immediate => f.write_str("inf"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GameTransition {
    /// `None` stands for the internal action.
    pub action: Option<ActionId>,
    pub rate: Rate,
    /// Over game state ids.
    pub distribution: Distribution,
    /// Concrete states that induce this transition.
    pub origin: Vec<StateId>,
}

#[derive(Clone, Debug)]
pub struct AbstractGame {
    states: Vec<GameState>,
    transitions: Vec<Vec<GameTransition>>,
    initial: GameStateId,
    block_state: Vec<GameStateId>,
    bottom: Option<GameStateId>,
}

impl AbstractGame {
    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    pub fn state(&self, v: GameStateId) -> &GameState {
        &self.states[v]
    }

    pub fn states(&self) -> &[GameState] {
        &self.states
    }

    pub fn transitions(&self, v: GameStateId) -> &[GameTransition] {
        &self.transitions[v]
    }

    pub fn initial(&self) -> GameStateId {
        self.initial
    }

    /// Game state standing for block `b` as a successor of lifted distributions.
    pub fn block_state(&self, b: BlockId) -> GameStateId {
        self.block_state[b]
    }

    pub fn bottom(&self) -> Option<GameStateId> {
        self.bottom
    }

    pub fn goal_states(&self) -> impl Iterator<Item = GameStateId> + '_ {
        (0..self.states.len()).filter(|&v| self.states[v].goal)
    }

    /// States with positive probability under some outgoing transition of `v`.
    pub fn successors(&self, v: GameStateId) -> BTreeSet<GameStateId> {
        self.transitions[v]
            .iter()
            .flat_map(|t| t.distribution.support())
            .collect()
    }

    /// Whether some Markov transition is reachable from the initial state.
    pub fn reaches_timed_transition(&self) -> bool {
        let mut seen = vec![false; self.states.len()];
        let mut stack = vec![self.initial];
        seen[self.initial] = true;
        while let Some(v) = stack.pop() {
            for t in &self.transitions[v] {
                if matches!(t.rate, Rate::Finite(_)) {
                    return true;
                }
                for w in t.distribution.support() {
                    if !seen[w] {
                        seen[w] = true;
                        stack.push(w);
                    }
                }
            }
        }
        false
    }

    pub fn num_transitions(&self) -> usize {
        self.transitions.iter().map(Vec::len).sum()
    }

    /// Largest finite rate, if any Markov transition exists.
    pub fn max_finite_rate(&self) -> Option<f64> {
        self.transitions
            .iter()
            .flatten()
            .filter_map(|t| match t.rate {
                Rate::Finite(r) => Some(r),
                Rate::Immediate => None,
            })
            .reduce(f64::max)
    }

    /// Writes one `vertex` line per state and one `edge` line per
    /// transition, in id order.
    pub fn write_graph<W: Write>(&self, ma: &MarkovAutomaton, out: &mut W) -> io::Result<()> {
        for (v, st) in self.states.iter().enumerate() {
            let desc = match &st.kind {
                GameStateKind::ProbBlock(b) => format!("prob-block B{b}"),
                GameStateKind::Bottom => "bottom".to_string(),
                GameStateKind::Action { block, label } => {
                    format!("action B{block} {}", label_name(ma, *label))
                }
                GameStateKind::MarkovBlock(b) => format!("markov-block B{b}"),
                GameStateKind::MarkovConcrete { block, lifted } => {
                    let rates: Vec<String> = lifted.iter().map(|(b, r)| format!("B{b}:{r}")).collect();
                    format!("markov-concrete B{block} [{}]", rates.join(" "))
                }
                GameStateKind::DeadlockBlock(b) => format!("deadlock-block B{b}"),
            };
            let init = if v == self.initial { " initial" } else { "" };
            let goal = if st.goal { " goal" } else { "" };
            writeln!(out, "vertex {v} {desc}{init}{goal}")?;
        }
        for (v, trans) in self.transitions.iter().enumerate() {
            for (i, t) in trans.iter().enumerate() {
                let action = t.action.map_or("_", |a| ma.action_name(a));
                let dist: Vec<String> = t.distribution.iter().map(|(w, p)| format!("{w}:{p}")).collect();
                let origin: Vec<&str> = t.origin.iter().map(|&s| ma.state_name(s)).collect();
                writeln!(
                    out,
                    "edge {v} {i} {action} {} {} origin={}",
                    t.rate,
                    dist.join(" "),
                    origin.join(",")
                )?;
            }
        }
        Ok(())
    }
}

fn label_name(ma: &MarkovAutomaton, label: ChoiceLabel) -> String {
    if label.ordinal == 0 {
        ma.action_name(label.action).to_string()
    } else {
        format!("{}#{}", ma.action_name(label.action), label.ordinal)
    }
}

/// Menu labels of `s`'s transitions, in transition order.
pub(crate) fn choice_labels(ma: &MarkovAutomaton, s: StateId) -> Vec<ChoiceLabel> {
    let mut seen: BTreeMap<ActionId, usize> = BTreeMap::new();
    ma.transitions(s)
        .iter()
        .map(|t| {
            let k = seen.entry(t.action).or_insert(0);
            let label = ChoiceLabel {
                action: t.action,
                ordinal: *k,
            };
            *k += 1;
            label
        })
        .collect()
}

/// Exact-match key after rounding every value to 12 significant digits.
fn unification_key(entries: &[(usize, f64)]) -> Vec<(usize, String)> {
    entries.iter().map(|&(k, x)| (k, format!("{x:.11e}"))).collect()
}

/// Groups items by key, preserving first-appearance order of the groups.
struct Grouping<K, T> {
    index: BTreeMap<K, usize>,
    groups: Vec<(T, Vec<StateId>)>,
}

impl<K: Ord, T> Grouping<K, T> {
    fn new() -> Self {
        Self {
            index: BTreeMap::new(),
            groups: Vec::new(),
        }
    }

    fn add(&mut self, key: K, value: impl FnOnce() -> T, s: StateId) {
        match self.index.get(&key) {
            Some(&i) => {
                let members = &mut self.groups[i].1;
                if members.last() != Some(&s) {
                    members.push(s);
                }
            }
            None => {
                self.index.insert(key, self.groups.len());
                self.groups.push((value(), vec![s]));
            }
        }
    }
}

/// Builds the menu-based game abstraction of `ma` under `p`.
///
/// Game state ids `0..p.num_blocks()` are the block-level states in block
/// order; the bottom state (if needed) follows, then the per-block
/// player-2 states. Goal blocks are absorbing.
pub fn build_game(ma: &MarkovAutomaton, p: &Partition, goals: &StateSet) -> Result<AbstractGame> {
    if p.num_states() != ma.num_states() {
        return Err(Error::invalid("partition does not match the automaton"));
    }
    let nb = p.num_blocks();
    let mut goal_block = vec![false; nb];
    for (b, block) in p.blocks().iter().enumerate() {
        let inside = block.iter().filter(|s| goals.contains(s)).count();
        if inside != 0 && inside != block.len() {
            return Err(Error::invalid(format!("block {b} mixes goal and non-goal states")));
        }
        goal_block[b] = inside != 0;
        if p.class(b) != ma.class_of(block[0]) {
            return Err(Error::invalid("partition classes do not match the automaton"));
        }
    }

    let labels: Vec<Vec<ChoiceLabel>> = (0..ma.num_states()).map(|s| choice_labels(ma, s)).collect();

    let mut states: Vec<GameState> = (0..nb)
        .map(|b| GameState {
            kind: match p.class(b) {
                StateClass::Probabilistic => GameStateKind::ProbBlock(b),
                StateClass::Markovian => GameStateKind::MarkovBlock(b),
                StateClass::Deadlock => GameStateKind::DeadlockBlock(b),
            },
            goal: goal_block[b],
        })
        .collect();
    let mut transitions: Vec<Vec<GameTransition>> = vec![Vec::new(); nb];

    let needs_bottom = (0..nb).any(|b| {
        if goal_block[b] || p.class(b) != StateClass::Probabilistic {
            return false;
        }
        let all: BTreeSet<ChoiceLabel> = p.block(b).iter().flat_map(|&s| labels[s].iter().copied()).collect();
        p.block(b).iter().any(|&s| labels[s].len() != all.len())
    });
    let bottom = needs_bottom.then(|| {
        states.push(GameState {
            kind: GameStateKind::Bottom,
            goal: false,
        });
        transitions.push(Vec::new());
        states.len() - 1
    });

    for b in 0..nb {
        if goal_block[b] {
            continue;
        }
        let block = p.block(b);
        match p.class(b) {
            StateClass::Probabilistic => {
                // label -> (state, distribution) contributions, states ascending
                let mut menu: BTreeMap<ChoiceLabel, Vec<(StateId, &Distribution)>> = BTreeMap::new();
                for &s in block {
                    for (t, &label) in ma.transitions(s).iter().zip(&labels[s]) {
                        menu.entry(label).or_default().push((s, &t.distribution));
                    }
                }
                for (label, contributions) in menu {
                    let v2 = states.len();
                    states.push(GameState {
                        kind: GameStateKind::Action { block: b, label },
                        goal: false,
                    });
                    let enabled: Vec<StateId> = contributions.iter().map(|&(s, _)| s).collect();
                    transitions[b].push(GameTransition {
                        action: None,
                        rate: Rate::Immediate,
                        distribution: Distribution::point(v2),
                        origin: enabled.clone(),
                    });

                    let mut groups = Grouping::new();
                    for (s, mu) in contributions {
                        let lifted = lift_distribution(mu, p)?;
                        let key = unification_key(lifted.entries());
                        groups.add(key, || lifted, s);
                    }
                    let mut out: Vec<GameTransition> = groups
                        .groups
                        .into_iter()
                        .map(|(lifted, origin)| GameTransition {
                            action: Some(label.action),
                            rate: Rate::Immediate,
                            distribution: lifted,
                            origin,
                        })
                        .collect();
                    let disabled: Vec<StateId> = block.iter().copied().filter(|s| enabled.binary_search(s).is_err()).collect();
                    if !disabled.is_empty() {
                        let star = bottom.ok_or_else(|| Error::internal("bottom state missing"))?;
                        out.push(GameTransition {
                            action: None,
                            rate: Rate::Immediate,
                            distribution: Distribution::point(star),
                            origin: disabled,
                        });
                    }
                    transitions.push(out);
                }
            }
            StateClass::Markovian => {
                let mut groups = Grouping::new();
                for &s in block {
                    let rho = ma
                        .rates(s)
                        .ok_or_else(|| Error::internal("Markovian state without rates"))?;
                    let lifted = lift_rate_distribution(rho, p)?;
                    let key = unification_key(lifted.entries());
                    groups.add(key, || lifted, s);
                }
                for (lifted, origin) in groups.groups {
                    let child = states.len();
                    let exit = lifted.exit_rate();
                    let dist: BTreeMap<GameStateId, f64> = lifted.iter().map(|(c, r)| (c, r / exit)).collect();
                    transitions[b].push(GameTransition {
                        action: None,
                        rate: Rate::Immediate,
                        distribution: Distribution::point(child),
                        origin: origin.clone(),
                    });
                    states.push(GameState {
                        kind: GameStateKind::MarkovConcrete { block: b, lifted },
                        goal: false,
                    });
                    transitions.push(vec![GameTransition {
                        action: None,
                        rate: Rate::Finite(exit),
                        distribution: Distribution::from_map(dist),
                        origin,
                    }]);
                }
            }
            StateClass::Deadlock => {}
        }
    }

    let initial = p.block_of(ma.initial())?;
    Ok(AbstractGame {
        states,
        transitions,
        initial,
        block_state: (0..nb).collect(),
        bottom,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::MarkovAutomatonBuilder;

    fn builder(names: &[&str]) -> MarkovAutomatonBuilder {
        let mut b = MarkovAutomatonBuilder::new();
        for n in names {
            b.add_state(n).unwrap();
        }
        b
    }

    fn markov_chain(n: usize) -> MarkovAutomaton {
        let names: Vec<String> = (0..n).map(|i| format!("s{i}")).collect();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let mut b = builder(&refs);
        for s in 0..n {
            b.set_rates(s, RateDistribution::new([((s + 1) % n, 1.0)]).unwrap()).unwrap();
        }
        b.build(0).unwrap()
    }

    #[test]
    fn lifting_sums_over_blocks() {
        let ma = markov_chain(3);
        let p = Partition::new(&ma, vec![vec![0, 1], vec![2]]).unwrap();
        let mu = Distribution::new([(0, 0.2), (1, 0.3), (2, 0.5)]).unwrap();
        let lifted = lift_distribution(&mu, &p).unwrap();
        assert_eq!(lifted.entries(), &[(0, 0.5), (1, 0.5)]);

        let single = Partition::singleton(&ma);
        assert_eq!(lift_distribution(&mu, &single).unwrap(), mu);

        let point = Distribution::new([(0, 0.4), (1, 0.6)]).unwrap();
        let lifted = lift_distribution(&point, &p).unwrap();
        assert_eq!(lifted.len(), 1);
        assert!((lifted.get(0) - 1.0).abs() < 1e-15);

        let rho = RateDistribution::new([(0, 1.0), (1, 2.0), (2, 3.0)]).unwrap();
        let lr = lift_rate_distribution(&rho, &p).unwrap();
        assert_eq!(lr.entries(), &[(0, 3.0), (1, 3.0)]);
        assert_eq!(lr.exit_rate(), 6.0);
        assert_eq!(lift_rate_distribution(&rho, &single).unwrap(), rho);

        let outside = Distribution::point(7);
        assert!(lift_distribution(&outside, &p).is_err());
    }

    #[test]
    fn enabled_actions_union() {
        let mut b = builder(&["a", "b", "m"]);
        let alpha = b.action("alpha");
        let beta = b.action("beta");
        b.add_transition(0, alpha, Distribution::point(2)).unwrap();
        b.add_transition(0, beta, Distribution::point(2)).unwrap();
        b.add_transition(1, beta, Distribution::point(2)).unwrap();
        b.set_rates(2, RateDistribution::new([(0, 1.0)]).unwrap()).unwrap();
        let ma = b.build(0).unwrap();
        assert_eq!(enabled_actions(&ma, &[0]), [alpha, beta].into_iter().collect());
        assert_eq!(enabled_actions(&ma, &[2]), BTreeSet::new());
        let mut b2 = builder(&["x", "y"]);
        let a = b2.action("alpha");
        let c = b2.action("beta");
        b2.add_transition(0, a, Distribution::point(1)).unwrap();
        b2.add_transition(1, c, Distribution::point(0)).unwrap();
        let ma2 = b2.build(0).unwrap();
        assert_eq!(enabled_actions(&ma2, &[0, 1]), [a, c].into_iter().collect());
    }

    #[test]
    fn initial_partition_cells() {
        let ma = markov_chain(4);
        assert_eq!(initial_partition(&ma, &StateSet::new()).unwrap().num_blocks(), 1);

        let mut b = builder(&["m0", "m1", "p0", "p1"]);
        let a = b.action("a");
        b.set_rates(0, RateDistribution::new([(2, 1.0)]).unwrap()).unwrap();
        b.set_rates(1, RateDistribution::new([(3, 1.0)]).unwrap()).unwrap();
        b.add_transition(2, a, Distribution::point(0)).unwrap();
        b.add_transition(3, a, Distribution::point(1)).unwrap();
        let ma = b.build(0).unwrap();
        let goals: StateSet = [3].into_iter().collect();
        let p = initial_partition(&ma, &goals).unwrap();
        assert_eq!(p.num_blocks(), 3);

        let all: StateSet = (0..4).collect();
        let p = initial_partition(&ma, &all).unwrap();
        let game = build_game(&ma, &p, &all).unwrap();
        assert!(game.states().iter().all(|s| s.goal));
    }

    #[test]
    fn block_lookup() {
        let ma = markov_chain(3);
        let p = Partition::new(&ma, vec![vec![2], vec![0, 1]]).unwrap();
        // canonical order puts {0,1} first
        assert_eq!(p.block_of(0).unwrap(), 0);
        assert_eq!(p.block_of(1).unwrap(), 0);
        assert_eq!(p.block_of(2).unwrap(), 1);
        assert!(p.block_of(3).is_err());
    }

    #[test]
    fn partition_rejects_mixed_and_overlapping_blocks() {
        let mut b = builder(&["m", "p"]);
        let a = b.action("a");
        b.set_rates(0, RateDistribution::new([(1, 1.0)]).unwrap()).unwrap();
        b.add_transition(1, a, Distribution::point(0)).unwrap();
        let ma = b.build(0).unwrap();
        assert!(Partition::new(&ma, vec![vec![0, 1]]).is_err());
        assert!(Partition::new(&ma, vec![vec![0], vec![0, 1]]).is_err());
        assert!(Partition::new(&ma, vec![vec![0]]).is_err());
    }

    /// Block {a, e}: a enables alpha and beta, e only beta.
    #[test]
    fn disabled_action_gets_bottom_transition() {
        let mut b = builder(&["a", "e", "m1", "m2"]);
        let alpha = b.action("alpha");
        let beta = b.action("beta");
        b.add_transition(0, alpha, Distribution::point(2)).unwrap();
        b.add_transition(0, beta, Distribution::point(3)).unwrap();
        b.add_transition(1, beta, Distribution::point(3)).unwrap();
        b.set_rates(2, RateDistribution::new([(0, 1.0)]).unwrap()).unwrap();
        b.set_rates(3, RateDistribution::new([(1, 1.0)]).unwrap()).unwrap();
        let ma = b.build(0).unwrap();
        let p = Partition::new(&ma, vec![vec![0, 1], vec![2, 3]]).unwrap();
        let game = build_game(&ma, &p, &StateSet::new()).unwrap();
        let bottom = game.bottom().expect("bottom state");
        let action_state = |act| {
            (0..game.num_states())
                .find(|&v| matches!(game.state(v).kind, GameStateKind::Action { label, .. } if label.action == act))
                .unwrap()
        };
        let va = action_state(alpha);
        let vb = action_state(beta);
        let to_bottom = |v: usize| game.transitions(v).iter().any(|t| t.distribution.get(bottom) == 1.0);
        assert!(to_bottom(va));
        assert!(!to_bottom(vb));
        let star = game.transitions(va).iter().find(|t| t.action.is_none()).unwrap();
        assert_eq!(star.origin, vec![1]);
    }

    /// Two probabilistic states whose alpha-distributions coincide after lifting.
    #[test]
    fn identical_lifted_distributions_unify() {
        let mut b = builder(&["s2", "s4", "m0", "m1", "g"]);
        let alpha = b.action("alpha");
        b.add_transition(0, alpha, Distribution::new([(2, 0.5), (4, 0.5)]).unwrap()).unwrap();
        b.add_transition(1, alpha, Distribution::new([(3, 0.5), (4, 0.5)]).unwrap()).unwrap();
        b.set_rates(2, RateDistribution::new([(0, 1.0)]).unwrap()).unwrap();
        b.set_rates(3, RateDistribution::new([(1, 2.0)]).unwrap()).unwrap();
        b.set_rates(4, RateDistribution::new([(4, 1.0)]).unwrap()).unwrap();
        let ma = b.build(2).unwrap();
        let goals: StateSet = [4].into_iter().collect();
        let p = initial_partition(&ma, &goals).unwrap();
        let game = build_game(&ma, &p, &goals).unwrap();
        let v = (0..game.num_states())
            .find(|&v| matches!(game.state(v).kind, GameStateKind::Action { .. }))
            .unwrap();
        assert_eq!(game.transitions(v).len(), 1);
        assert_eq!(game.transitions(v)[0].origin, vec![0, 1]);
        // initial state is the Markovian block
        assert!(matches!(game.state(game.initial()).kind, GameStateKind::MarkovBlock(_)));
    }

    #[test]
    fn singleton_partition_has_single_choices() {
        let mut b = builder(&["p", "q", "m", "n"]);
        let a = b.action("a");
        let c = b.action("c");
        b.add_transition(0, a, Distribution::new([(2, 0.3), (3, 0.7)]).unwrap()).unwrap();
        b.add_transition(0, c, Distribution::point(1)).unwrap();
        b.add_transition(0, a, Distribution::point(3)).unwrap();
        b.add_transition(1, c, Distribution::point(2)).unwrap();
        b.set_rates(2, RateDistribution::new([(0, 1.0), (3, 2.0)]).unwrap()).unwrap();
        b.set_rates(3, RateDistribution::new([(3, 1.0)]).unwrap()).unwrap();
        let ma = b.build(0).unwrap();
        let p = Partition::singleton(&ma);
        let game = build_game(&ma, &p, &StateSet::new()).unwrap();
        assert!(game.bottom().is_none());
        for v in 0..game.num_states() {
            match game.state(v).kind {
                GameStateKind::Action { .. } | GameStateKind::MarkovBlock(_) | GameStateKind::MarkovConcrete { .. } => {
                    assert_eq!(game.transitions(v).len(), 1, "state {v}")
                }
                _ => {}
            }
        }
        // p offers a twice: two menu entries with ordinals 0 and 1
        assert_eq!(game.transitions(0).len(), 3);
    }

    #[test]
    fn markov_children_carry_exit_rates() {
        let mut b = builder(&["a", "e", "x", "g"]);
        b.set_rates(0, RateDistribution::new([(2, 1.0), (3, 2.0)]).unwrap()).unwrap();
        b.set_rates(1, RateDistribution::new([(3, 3.0)]).unwrap()).unwrap();
        b.set_rates(2, RateDistribution::new([(0, 1.0)]).unwrap()).unwrap();
        b.set_rates(3, RateDistribution::new([(3, 1.0)]).unwrap()).unwrap();
        let ma = b.build(0).unwrap();
        let goals: StateSet = [3].into_iter().collect();
        let p = initial_partition(&ma, &goals).unwrap();
        let game = build_game(&ma, &p, &goals).unwrap();
        let block = game.initial();
        // a, e and x lift to three different rate distributions
        assert_eq!(game.transitions(block).len(), 3);
        for t in game.transitions(block) {
            let child = t.distribution.support().next().unwrap();
            let markov = &game.transitions(child)[0];
            for &s in &markov.origin {
                match markov.rate {
                    Rate::Finite(r) => assert!((r - ma.exit_rate(s).unwrap()).abs() < 1e-12),
                    Rate::Immediate => panic!("Markov step must be timed"),
                }
            }
            assert!((markov.distribution.total() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn mixed_goal_block_is_rejected() {
        let ma = markov_chain(3);
        let p = Partition::new(&ma, vec![vec![0, 1, 2]]).unwrap();
        let goals: StateSet = [1].into_iter().collect();
        assert!(matches!(build_game(&ma, &p, &goals), Err(Error::InvalidArgument(_))));
    }
}
