//! Scheduler-guided partition refinement.
//!
//! A player-2 state is divergent when the lower- and upper-bound
//! schedulers pick different transitions there while the value gap
//! exceeds the target precision. Its block is split three ways according
//! to a value-weighted L1 distance between lifted distributions.

use std::collections::BTreeMap;

use crate::abstraction::{AbstractGame, BlockId, GameStateId, GameStateKind, Partition};
use crate::analysis::{DiscreteGame, SchedulerPair, ValueTable};
use crate::error::{Error, Result};
use crate::model::{Distribution, MarkovAutomaton, StateId};

#[derive(Clone, Debug, PartialEq)]
pub struct DivergenceRecord {
    pub state: GameStateId,
    /// Largest remaining-step index with a qualifying disagreement.
    pub step: usize,
    pub lb_choice: usize,
    pub ub_choice: usize,
    pub gap: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub block: BlockId,
    pub parts: Vec<Vec<StateId>>,
    pub diameter: f64,
}

#[derive(Clone, Debug)]
pub struct RefinementReport {
    pub divergent: Vec<DivergenceRecord>,
    pub splits: Vec<Split>,
    pub new_partition: Partition,
    /// No divergent state was found, so nothing was split.
    pub stalled: bool,
}

/// Marks the `(state, step)` pairs visited from `(v0, n)` when both
/// players follow `sched`. Immediate moves keep the step, timed moves
/// consume one.
fn reachable(dg: &DiscreteGame, sched: &SchedulerPair, steps: usize) -> Vec<bool> {
    let n = dg.num_states();
    let mut seen = vec![false; n * (steps + 1)];
    let mut stack = vec![(dg.initial(), steps)];
    seen[steps * n + dg.initial()] = true;
    while let Some((v, k)) = stack.pop() {
        let (c, next) = if dg.is_timed(v) {
            if k == 0 {
                continue;
            }
            (0, k - 1)
        } else {
            match sched.choice(v, k) {
                Some(c) => (c, k),
                None => continue,
            }
        };
        for &w in dg.choice(v, c).0 {
            let i = next * n + w;
            if !seen[i] {
                seen[i] = true;
                stack.push((w, next));
            }
        }
    }
    seen
}

/// Player-2 states reachable under either composed scheduler where the
/// two schedulers disagree and the gap exceeds `eps`, in state order.
pub fn find_divergent_states(
    dg: &DiscreteGame,
    values: &ValueTable,
    lower: &SchedulerPair,
    upper: &SchedulerPair,
    eps: f64,
) -> Vec<DivergenceRecord> {
    let n = dg.num_states();
    let steps = values.steps();
    let seen_lb = reachable(dg, lower, steps);
    let seen_ub = reachable(dg, upper, steps);
    let mut out = Vec::new();
    for v in 0..n {
        if !dg.is_player2(v) || dg.num_choices(v) < 2 {
            continue;
        }
        for k in (0..=steps).rev() {
            let i = k * n + v;
            if !(seen_lb[i] || seen_ub[i]) {
                continue;
            }
            let (Some(a), Some(b)) = (lower.choice(v, k), upper.choice(v, k)) else {
                continue;
            };
            let gap = values.gap(v, k);
            if a != b && gap > eps {
                out.push(DivergenceRecord {
                    state: v,
                    step: k,
                    lb_choice: a,
                    ub_choice: b,
                    gap,
                });
                break;
            }
        }
    }
    out
}

/// `sum_v |mu(v) - nu(v)| * gaps[v]`.
pub fn pseudo_metric_with_gaps(mu: &Distribution, nu: &Distribution, gaps: &[f64]) -> f64 {
    let (a, b) = (mu.entries(), nu.entries());
    let (mut i, mut j) = (0, 0);
    let mut sum = 0.0;
    while i < a.len() || j < b.len() {
        let (v, diff) = match (a.get(i), b.get(j)) {
            (Some(&(x, p)), Some(&(y, q))) if x == y => {
                i += 1;
                j += 1;
                (x, p - q)
            }
            (Some(&(x, p)), Some(&(y, _))) if x < y => {
                i += 1;
                (x, p)
            }
            (Some(&(x, p)), None) => {
                i += 1;
                (x, p)
            }
            (_, Some(&(y, q))) => {
                j += 1;
                (y, q)
            }
            (None, None) => unreachable!(),
        };
        sum += diff.abs() * gaps.get(v).copied().unwrap_or(0.0);
    }
    sum
}

/// Distance of two distributions over game states, weighted by the value
/// gaps at the full time bound.
pub fn pseudo_metric(mu: &Distribution, nu: &Distribution, values: &ValueTable) -> f64 {
    pseudo_metric_with_gaps(mu, nu, &values.final_gaps())
}

/// Distribution compared when splitting on transition `c` of `v`. For a
/// Markovian block this is the discretized step of the selected child.
fn compared_distribution(game: &AbstractGame, dg: &DiscreteGame, v: GameStateId, c: usize) -> Distribution {
    match game.state(v).kind {
        GameStateKind::MarkovBlock(_) => {
            let child = game.transitions(v)[c].distribution.support().next().unwrap_or(v);
            dg.distribution(child, 0)
        }
        _ => game.transitions(v)[c].distribution.clone(),
    }
}

/// Splits the block behind `rec.state` into the states close to the
/// lower-bound choice, those close to the upper-bound choice, and the rest.
pub fn split_block(
    game: &AbstractGame,
    dg: &DiscreteGame,
    p: &Partition,
    rec: &DivergenceRecord,
    gaps: &[f64],
) -> Result<Split> {
    let st = game.state(rec.state);
    let block = match st.kind {
        GameStateKind::Action { block, .. } | GameStateKind::MarkovBlock(block) => block,
        _ => return Err(Error::internal(format!("game state {} cannot diverge", rec.state))),
    };
    let trans = game.transitions(rec.state);
    if trans.len() < 2 || rec.lb_choice == rec.ub_choice || rec.lb_choice >= trans.len() || rec.ub_choice >= trans.len() {
        return Err(Error::internal(format!("game state {} has no diverging choices", rec.state)));
    }
    let dists: Vec<Distribution> = (0..trans.len())
        .map(|c| compared_distribution(game, dg, rec.state, c))
        .collect();
    let (lb, ub) = (&dists[rec.lb_choice], &dists[rec.ub_choice]);
    let d = pseudo_metric_with_gaps(lb, ub, gaps);
    let half = d / 2.0;

    let mut parts: [Vec<StateId>; 3] = Default::default();
    for (c, t) in trans.iter().enumerate() {
        let group = if c == rec.lb_choice {
            0
        } else if c == rec.ub_choice {
            1
        } else {
            let dl = pseudo_metric_with_gaps(lb, &dists[c], gaps);
            let du = pseudo_metric_with_gaps(ub, &dists[c], gaps);
            if dl <= half && dl <= du {
                0
            } else if du <= half {
                1
            } else {
                2
            }
        };
        parts[group].extend_from_slice(&t.origin);
    }
    let mut parts: Vec<Vec<StateId>> = parts.into_iter().filter(|g| !g.is_empty()).collect();
    for g in &mut parts {
        g.sort_unstable();
    }
    let total: usize = parts.iter().map(Vec::len).sum();
    if total != p.block(block).len() {
        return Err(Error::internal(format!("origin groups do not cover block {block}")));
    }
    Ok(Split {
        block,
        parts,
        diameter: d,
    })
}

/// Splits every divergent block and intersects the results with the
/// partition refined so far, in state order.
#[allow(clippy::too_many_arguments)]
pub fn refine(
    ma: &MarkovAutomaton,
    game: &AbstractGame,
    dg: &DiscreteGame,
    p: &Partition,
    values: &ValueTable,
    lower: &SchedulerPair,
    upper: &SchedulerPair,
    eps: f64,
) -> Result<RefinementReport> {
    let divergent = find_divergent_states(dg, values, lower, upper, eps);
    if divergent.is_empty() {
        return Ok(RefinementReport {
            divergent,
            splits: Vec::new(),
            new_partition: p.clone(),
            stalled: true,
        });
    }
    let gaps = values.final_gaps();
    let mut label: Vec<usize> = (0..ma.num_states()).map(|s| p.block_of(s)).collect::<Result<_>>()?;
    let mut splits = Vec::with_capacity(divergent.len());
    for rec in &divergent {
        let split = split_block(game, dg, p, rec, &gaps)?;
        let mut part_of = BTreeMap::new();
        for (i, part) in split.parts.iter().enumerate() {
            for &s in part {
                part_of.insert(s, i);
            }
        }
        // relabel by (current label, part) pairs
        let mut fresh: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        for (s, l) in label.iter_mut().enumerate() {
            let key = (*l, part_of.get(&s).copied().unwrap_or(usize::MAX));
            let next = fresh.len();
            *l = *fresh.entry(key).or_insert(next);
        }
        splits.push(split);
    }
    let mut blocks: BTreeMap<usize, Vec<StateId>> = BTreeMap::new();
    for (s, &l) in label.iter().enumerate() {
        blocks.entry(l).or_default().push(s);
    }
    let new_partition = Partition::new(ma, blocks.into_values().collect())?;
    Ok(RefinementReport {
        divergent,
        splits,
        new_partition,
        stalled: false,
    })
}
