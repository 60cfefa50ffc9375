//! Discretized analysis of the abstract game.
//!
//! The time bound is split into `n` steps of length `delta`, small enough
//! that with high probability at most one Markov transition fires per
//! step. Backward induction over the discretized game then yields lower
//! and upper bounds on time-bounded reachability together with
//! hop-counting positional schedulers for both players.

use crate::abstraction::{AbstractGame, GameStateId, GameStateKind, Rate};
use crate::error::{Error, Result};
use crate::graph::tarjan_scc;
use crate::model::Distribution;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Objective {
    Max,
    Min,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Bound {
    Lower,
    Upper,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiscretizationPlan {
    pub delta: f64,
    pub steps: usize,
    pub lambda_max: f64,
    pub error_bound: f64,
    pub accuracy: f64,
}

/// Probability that some step sees two or more Markov firings when
/// `[0, tb]` is cut into `n` equal steps at uniform rate `lambda_max`:
/// `1 - e^{-lambda tb} (1 + lambda tb/n)^n`.
pub fn discretization_error(lambda_max: f64, tb: f64, n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::invalid("number of steps must be positive"));
    }
    if !(lambda_max > 0.0) || !(tb > 0.0) {
        return Err(Error::invalid("rate and time bound must be positive"));
    }
    let delta = tb / n as f64;
    Ok(-(n as f64 * (lambda_max * delta).ln_1p() - lambda_max * tb).exp_m1())
}

/// Error as a function of a real-valued step size.
fn error_at(lambda: f64, tb: f64, delta: f64) -> f64 {
    -((tb / delta) * (lambda * delta).ln_1p() - lambda * tb).exp_m1()
}

fn error_slope(lambda: f64, tb: f64, delta: f64) -> f64 {
    let x = lambda * delta;
    let g = (tb / delta) * x.ln_1p();
    let dg = tb * (lambda / (delta * (1.0 + x)) - x.ln_1p() / (delta * delta));
    -(g - lambda * tb).exp() * dg
}

const NEWTON_STEPS: usize = 100;

/// Smallest step count whose discretization error stays within `eps_hat`.
///
/// Newton iteration on `ER(delta) - eps_hat`, started from the linear
/// approximation `delta = 2 eps_hat / (lambda^2 tb)`, locates the largest
/// admissible real step; it is rounded to `n = ceil(tb / delta)` and
/// adjusted so that the returned plan satisfies the bound.
pub fn find_step_size(lambda_max: f64, tb: f64, eps_hat: f64) -> Result<DiscretizationPlan> {
    if !(eps_hat > 0.0 && eps_hat < 1.0) {
        return Err(Error::invalid(format!("accuracy {eps_hat} outside (0,1)")));
    }
    if !(lambda_max > 0.0) || !(tb > 0.0) || !lambda_max.is_finite() || !tb.is_finite() {
        return Err(Error::invalid("rate and time bound must be positive"));
    }
    let plan = |steps: usize| -> Result<DiscretizationPlan> {
        Ok(DiscretizationPlan {
            delta: tb / steps as f64,
            steps,
            lambda_max,
            error_bound: discretization_error(lambda_max, tb, steps)?,
            accuracy: eps_hat,
        })
    };
    if error_at(lambda_max, tb, tb) <= eps_hat {
        return plan(1);
    }

    let root = newton_root(lambda_max, tb, eps_hat).or_else(|| bisection_root(lambda_max, tb, eps_hat));
    let root = root.ok_or_else(|| Error::internal("step size search did not converge"))?;

    let mut steps = ((tb / root).ceil() as usize).max(1);
    while steps > 1 && discretization_error(lambda_max, tb, steps - 1)? <= eps_hat {
        steps -= 1;
    }
    while discretization_error(lambda_max, tb, steps)? > eps_hat {
        steps += 1;
    }
    plan(steps)
}

fn newton_root(lambda: f64, tb: f64, eps: f64) -> Option<f64> {
    let mut delta = (2.0 * eps / (lambda * lambda * tb)).min(tb);
    for _ in 0..NEWTON_STEPS {
        let f = error_at(lambda, tb, delta) - eps;
        let slope = error_slope(lambda, tb, delta);
        if !(slope > 0.0) {
            return None;
        }
        let next = delta - f / slope;
        if !next.is_finite() || next <= 0.0 || next > tb {
            return None;
        }
        if (next - delta).abs() <= 1e-15 * delta.max(1e-300) || f.abs() < 1e-15 {
            return Some(next);
        }
        delta = next;
    }
    None
}

fn bisection_root(lambda: f64, tb: f64, eps: f64) -> Option<f64> {
    let (mut lo, mut hi) = (0.0f64, tb);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if error_at(lambda, tb, mid) <= eps {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (lo > 0.0).then_some(lo)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum NodeKind {
    Goal,
    /// Bottom state `*`.
    Bottom,
    /// Non-goal deadlock block.
    Sink,
    Player1,
    Player2,
    /// Concrete Markovian representative taking one discretized step.
    Timed,
}

/// Game with every Markov step replaced by its one-step discretized
/// distribution. Transition indices match those of the source game.
#[derive(Clone, Debug)]
pub struct DiscreteGame {
    delta: f64,
    initial: GameStateId,
    kinds: Vec<NodeKind>,
    choice_start: Vec<usize>,
    /// Per choice, its range in `targets`/`probs`.
    choice_range: Vec<(usize, usize)>,
    targets: Vec<GameStateId>,
    probs: Vec<f64>,
    timed: Vec<GameStateId>,
    /// Strongly connected components of the immediate sub-graph, sinks first.
    immediate_order: Vec<(Vec<GameStateId>, bool)>,
}

impl DiscreteGame {
    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn num_states(&self) -> usize {
        self.kinds.len()
    }

    pub fn initial(&self) -> GameStateId {
        self.initial
    }

    pub fn num_choices(&self, v: GameStateId) -> usize {
        self.choice_start[v + 1] - self.choice_start[v]
    }

    /// Successor targets and probabilities of choice `c` of `v`.
    pub fn choice(&self, v: GameStateId, c: usize) -> (&[GameStateId], &[f64]) {
        let (lo, hi) = self.choice_range[self.choice_start[v] + c];
        (&self.targets[lo..hi], &self.probs[lo..hi])
    }

    pub fn distribution(&self, v: GameStateId, c: usize) -> Distribution {
        let (t, p) = self.choice(v, c);
        Distribution::from_map(t.iter().copied().zip(p.iter().copied()).collect())
    }

    pub fn is_timed(&self, v: GameStateId) -> bool {
        self.kinds[v] == NodeKind::Timed
    }

    /// True for states whose choice is made by the abstraction player.
    pub fn is_player2(&self, v: GameStateId) -> bool {
        self.kinds[v] == NodeKind::Player2
    }

    pub fn is_player1(&self, v: GameStateId) -> bool {
        self.kinds[v] == NodeKind::Player1
    }

    /// Whether the immediate sub-graph contains a cycle.
    pub fn has_immediate_cycle(&self) -> bool {
        self.immediate_order.iter().any(|(_, cyclic)| *cyclic)
    }
}

/// Replaces each Markov transition (rate `E`, distribution `rho/E`) by
/// `(1 - e^{-E delta}) rho/E` plus mass `e^{-E delta}` back to the
/// predecessor Markovian block state. Immediate transitions are kept.
pub fn discretize_game(game: &AbstractGame, delta: f64) -> Result<DiscreteGame> {
    if !(delta > 0.0) {
        return Err(Error::invalid(format!("step size {delta} must be positive")));
    }
    let n = game.num_states();
    let mut predecessor = vec![usize::MAX; n];
    let mut pred_count = vec![0usize; n];
    for v in 0..n {
        if matches!(game.state(v).kind, GameStateKind::MarkovBlock(_)) {
            for t in game.transitions(v) {
                for w in t.distribution.support() {
                    predecessor[w] = v;
                    pred_count[w] += 1;
                }
            }
        }
    }

    let mut kinds = Vec::with_capacity(n);
    let mut choice_start = Vec::with_capacity(n + 1);
    let mut choice_range = Vec::new();
    let mut targets = Vec::new();
    let mut probs = Vec::new();
    let mut timed = Vec::new();

    for v in 0..n {
        let st = game.state(v);
        let kind = if st.goal {
            NodeKind::Goal
        } else {
            match st.kind {
                GameStateKind::Bottom => NodeKind::Bottom,
                GameStateKind::DeadlockBlock(_) => NodeKind::Sink,
                GameStateKind::ProbBlock(_) => NodeKind::Player1,
                GameStateKind::Action { .. } | GameStateKind::MarkovBlock(_) => NodeKind::Player2,
                GameStateKind::MarkovConcrete { .. } => NodeKind::Timed,
            }
        };
        kinds.push(kind);
        choice_start.push(choice_range.len());
        if matches!(kind, NodeKind::Goal | NodeKind::Bottom | NodeKind::Sink) {
            continue;
        }
        if game.transitions(v).is_empty() {
            return Err(Error::internal(format!("non-absorbing game state {v} without transitions")));
        }
        for t in game.transitions(v) {
            let lo = targets.len();
            match t.rate {
                Rate::Immediate => {
                    for (w, p) in t.distribution.iter() {
                        targets.push(w);
                        probs.push(p);
                    }
                }
                Rate::Finite(exit) => {
                    if pred_count[v] != 1 {
                        return Err(Error::internal(format!(
                            "Markov representative {v} has {} predecessors",
                            pred_count[v]
                        )));
                    }
                    let stay = (-exit * delta).exp();
                    let fire = -(-exit * delta).exp_m1();
                    let pred = predecessor[v];
                    let mut merged = false;
                    for (w, p) in t.distribution.iter() {
                        let mut mass = fire * p;
                        if w == pred {
                            mass += stay;
                            merged = true;
                        }
                        targets.push(w);
                        probs.push(mass);
                    }
                    if !merged {
                        targets.push(pred);
                        probs.push(stay);
                    }
                    timed.push(v);
                }
            }
            choice_range.push((lo, targets.len()));
        }
    }
    choice_start.push(choice_range.len());

    // immediate sub-graph: edges out of player states, timed states are leaves
    let adj: Vec<Vec<usize>> = (0..n)
        .map(|v| {
            if !matches!(kinds[v], NodeKind::Player1 | NodeKind::Player2) {
                return Vec::new();
            }
            let mut succ: Vec<usize> = (choice_start[v]..choice_start[v + 1])
                .flat_map(|c| {
                    let (lo, hi) = choice_range[c];
                    targets[lo..hi].iter().copied()
                })
                .filter(|&w| matches!(kinds[w], NodeKind::Player1 | NodeKind::Player2))
                .collect();
            succ.sort_unstable();
            succ.dedup();
            succ
        })
        .collect();
    let immediate_order = tarjan_scc(&adj)
        .into_iter()
        .filter(|comp| matches!(kinds[comp[0]], NodeKind::Player1 | NodeKind::Player2))
        .map(|comp| {
            let cyclic = comp.len() > 1 || adj[comp[0]].contains(&comp[0]);
            (comp, cyclic)
        })
        .collect();

    Ok(DiscreteGame {
        delta,
        initial: game.initial(),
        kinds,
        choice_start,
        choice_range,
        targets,
        probs,
        timed,
        immediate_order,
    })
}

pub const NO_CHOICE: u32 = u32::MAX;

/// Step-indexed choices of both players for one bound. Entry `(v, k)` is
/// the index of the transition chosen at `v` with `k` steps remaining.
#[derive(Clone, Debug)]
pub struct SchedulerPair {
    num_states: usize,
    choices: Vec<u32>,
}

impl SchedulerPair {
    pub fn choice(&self, v: GameStateId, k: usize) -> Option<usize> {
        match self.choices[k * self.num_states + v] {
            NO_CHOICE => None,
            c => Some(c as usize),
        }
    }

    /// Choice of player 1 (probabilistic block states).
    pub fn concrete(&self, dg: &DiscreteGame, v: GameStateId, k: usize) -> Option<usize> {
        if dg.is_player1(v) {
            self.choice(v, k)
        } else {
            None
        }
    }

    /// Choice of player 2 (action and Markovian block states).
    pub fn abstract_choice(&self, dg: &DiscreteGame, v: GameStateId, k: usize) -> Option<usize> {
        if dg.is_player2(v) {
            self.choice(v, k)
        } else {
            None
        }
    }

    pub fn steps(&self) -> usize {
        self.choices.len() / self.num_states.max(1) - 1
    }
}

/// Reachability values per game state and remaining step count.
#[derive(Clone, Debug)]
pub struct ValueTable {
    num_states: usize,
    steps: usize,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl ValueTable {
    pub fn new(num_states: usize, steps: usize, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let len = num_states * (steps + 1);
        if lower.len() != len || upper.len() != len {
            return Err(Error::invalid("value table dimensions do not match"));
        }
        Ok(Self {
            num_states,
            steps,
            lower,
            upper,
        })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn get(&self, bound: Bound, v: GameStateId, k: usize) -> f64 {
        let i = k * self.num_states + v;
        match bound {
            Bound::Lower => self.lower[i],
            Bound::Upper => self.upper[i],
        }
    }

    pub fn lower(&self, v: GameStateId, k: usize) -> f64 {
        self.get(Bound::Lower, v, k)
    }

    pub fn upper(&self, v: GameStateId, k: usize) -> f64 {
        self.get(Bound::Upper, v, k)
    }

    pub fn gap(&self, v: GameStateId, k: usize) -> f64 {
        self.upper(v, k) - self.lower(v, k)
    }

    /// Gaps at the full time bound, indexed by game state.
    pub fn final_gaps(&self) -> Vec<f64> {
        (0..self.num_states).map(|v| self.gap(v, self.steps)).collect()
    }
}

const INNER_TOLERANCE: f64 = 1e-15;
const INNER_SWEEPS: usize = 100_000;
const OPTIMAL_SLACK: f64 = 1e-12;

fn bottom_value(objective: Objective) -> f64 {
    // '*' is a losing sink for player 1
    match objective {
        Objective::Max => 0.0,
        Objective::Min => 1.0,
    }
}

/// Best choice of `v` against the values in `cur`; ties keep the lowest index.
fn best_choice(dg: &DiscreteGame, v: usize, cur: &[f64], maximize: bool) -> (f64, u32) {
    let mut best = if maximize { f64::NEG_INFINITY } else { f64::INFINITY };
    let mut arg = NO_CHOICE;
    for c in 0..dg.num_choices(v) {
        let (t, p) = dg.choice(v, c);
        let value: f64 = t.iter().zip(p).map(|(&w, &q)| q * cur[w]).sum();
        let better = if maximize { value > best } else { value < best };
        if better {
            best = value;
            arg = c as u32;
        }
    }
    (best, arg)
}

/// Computes one step slice in place. `prev` is `None` for step 0.
fn eval_step(
    dg: &DiscreteGame,
    prev: Option<&[f64]>,
    cur: &mut [f64],
    mut choices: Option<&mut [u32]>,
    objective: Objective,
    bound: Bound,
) {
    let bottom = bottom_value(objective);
    for (v, kind) in dg.kinds.iter().enumerate() {
        cur[v] = match kind {
            NodeKind::Goal => 1.0,
            NodeKind::Bottom => bottom,
            _ => 0.0,
        };
    }
    if let Some(prev) = prev {
        for &v in &dg.timed {
            let (t, p) = dg.choice(v, 0);
            cur[v] = t.iter().zip(p).map(|(&w, &q)| q * prev[w]).sum::<f64>().min(1.0);
        }
    }
    let maximize = |v: usize| match dg.kinds[v] {
        NodeKind::Player1 => objective == Objective::Max,
        _ => bound == Bound::Upper,
    };
    for (comp, cyclic) in &dg.immediate_order {
        if *cyclic {
            for _ in 0..INNER_SWEEPS {
                let mut change = 0.0f64;
                for &v in comp {
                    let (value, _) = best_choice(dg, v, cur, maximize(v));
                    let value = value.min(1.0);
                    change = change.max((value - cur[v]).abs());
                    cur[v] = value;
                }
                if change < INNER_TOLERANCE {
                    break;
                }
            }
        }
        if *cyclic {
            if let Some(ch) = choices.as_deref_mut() {
                for (v, c) in cyclic_choices(dg, comp, cur, &maximize) {
                    ch[v] = c;
                }
            }
            continue;
        }
        let v = comp[0];
        let (value, arg) = best_choice(dg, v, cur, maximize(v));
        cur[v] = value.min(1.0);
        if let Some(ch) = choices.as_deref_mut() {
            ch[v] = arg;
        }
    }
}

/// Choices inside an immediate cycle. A maximizer may not settle for an
/// optimal choice that keeps it in the cycle forever, so optimal choices
/// are picked backwards from the states already known to leave it.
fn cyclic_choices(dg: &DiscreteGame, comp: &[usize], cur: &[f64], maximize: &dyn Fn(usize) -> bool) -> Vec<(usize, u32)> {
    let values = |v: usize| -> Vec<f64> {
        (0..dg.num_choices(v))
            .map(|c| {
                let (t, p) = dg.choice(v, c);
                t.iter().zip(p).map(|(&w, &q)| q * cur[w]).sum()
            })
            .collect()
    };
    let mut chosen: Vec<u32> = Vec::with_capacity(comp.len());
    let mut candidates: Vec<Vec<u32>> = Vec::with_capacity(comp.len());
    let mut resolved: Vec<bool> = Vec::with_capacity(comp.len());
    for &v in comp {
        let (_, arg) = best_choice(dg, v, cur, maximize(v));
        chosen.push(arg);
        if maximize(v) {
            let vals = values(v);
            let best = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            candidates.push((0..vals.len() as u32).filter(|&c| vals[c as usize] >= best - OPTIMAL_SLACK).collect());
        } else {
            candidates.push(vec![arg]);
        }
        resolved.push(cur[v] == 0.0);
    }
    let inside = |w: usize| comp.binary_search(&w).ok();
    let mut changed = true;
    while changed {
        changed = false;
        for (i, &v) in comp.iter().enumerate() {
            if resolved[i] {
                continue;
            }
            let exit = candidates[i].iter().copied().find(|&c| {
                dg.choice(v, c as usize)
                    .0
                    .iter()
                    .any(|&w| inside(w).is_none_or(|j| resolved[j]))
            });
            if let Some(c) = exit {
                chosen[i] = c;
                resolved[i] = true;
                changed = true;
            }
        }
    }
    comp.iter().copied().zip(chosen).collect()
}

/// Backward induction for `steps` steps. Returns all `steps + 1` slices
/// (row `k` holds values with `k` steps remaining) and the chosen
/// transitions.
pub fn value_iteration(dg: &DiscreteGame, steps: usize, objective: Objective, bound: Bound) -> (Vec<f64>, SchedulerPair) {
    let n = dg.num_states();
    let mut values = vec![0.0; n * (steps + 1)];
    let mut choices = vec![NO_CHOICE; n * (steps + 1)];
    eval_step(dg, None, &mut values[..n], Some(&mut choices[..n]), objective, bound);
    for k in 1..=steps {
        let (done, rest) = values.split_at_mut(k * n);
        let prev = &done[(k - 1) * n..];
        eval_step(
            dg,
            Some(prev),
            &mut rest[..n],
            Some(&mut choices[k * n..(k + 1) * n]),
            objective,
            bound,
        );
    }
    (values, SchedulerPair { num_states: n, choices })
}

/// Two-slice variant of [`value_iteration`] keeping only the final values.
pub fn value_iteration_final(dg: &DiscreteGame, steps: usize, objective: Objective, bound: Bound) -> Vec<f64> {
    let n = dg.num_states();
    let mut prev = vec![0.0; n];
    let mut cur = vec![0.0; n];
    eval_step(dg, None, &mut cur, None, objective, bound);
    for _ in 1..=steps {
        std::mem::swap(&mut prev, &mut cur);
        eval_step(dg, Some(&prev), &mut cur, None, objective, bound);
    }
    cur
}

/// Everything one analysis pass produces.
#[derive(Clone, Debug)]
pub struct Solution {
    pub plan: DiscretizationPlan,
    pub discrete: DiscreteGame,
    pub values: ValueTable,
    pub lower: SchedulerPair,
    pub upper: SchedulerPair,
}

impl Solution {
    pub fn lower_at_initial(&self) -> f64 {
        self.values.lower(self.discrete.initial(), self.values.steps())
    }

    pub fn upper_at_initial(&self) -> f64 {
        self.values.upper(self.discrete.initial(), self.values.steps())
    }
}

/// Plan for `game`, or the degenerate one-step plan (`lambda_max = 0`,
/// no discretization error) when no Markov transition is reachable.
pub fn plan_for(game: &AbstractGame, tb: f64, eps_hat: f64) -> Result<DiscretizationPlan> {
    if !(tb > 0.0) {
        return Err(Error::invalid(format!("time bound {tb} must be positive")));
    }
    match game.max_finite_rate() {
        Some(lambda) if game.reaches_timed_transition() => find_step_size(lambda, tb, eps_hat),
        _ => Ok(DiscretizationPlan {
            delta: tb,
            steps: 1,
            lambda_max: 0.0,
            error_bound: 0.0,
            accuracy: eps_hat,
        }),
    }
}

/// Discretizes `game` for accuracy `eps_hat` and computes both bounds.
pub fn solve(game: &AbstractGame, tb: f64, eps_hat: f64, objective: Objective) -> Result<Solution> {
    let plan = plan_for(game, tb, eps_hat)?;
    let discrete = discretize_game(game, plan.delta)?;
    let (lower_values, lower) = value_iteration(&discrete, plan.steps, objective, Bound::Lower);
    let (mut upper_values, upper) = value_iteration(&discrete, plan.steps, objective, Bound::Upper);
    // summation order can leave the upper bound an ulp below the lower one
    for (u, &l) in upper_values.iter_mut().zip(&lower_values) {
        *u = u.max(l);
    }
    let values = ValueTable::new(discrete.num_states(), plan.steps, lower_values, upper_values)?;
    Ok(Solution {
        plan,
        discrete,
        values,
        lower,
        upper,
    })
}
