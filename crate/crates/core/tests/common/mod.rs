#![allow(dead_code)]

use markov_refine::model::{Distribution, MarkovAutomaton, MarkovAutomatonBuilder, RateDistribution, StateClass, StateSet};
use markov_refine::{Objective, Partition};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    rand::SeedableRng::seed_from_u64(seed)
}

fn random_weights(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..k).map(|_| rng.gen_range(0.05..1.0)).collect();
    let sum: f64 = w.iter().sum();
    w.iter().map(|x| x / sum).collect()
}

/// Random automaton with at most `max_states` states and three action
/// names; rates are drawn from [0.5, 5].
pub fn random_ma(rng: &mut ChaCha8Rng, max_states: usize) -> (MarkovAutomaton, StateSet) {
    let n = rng.gen_range(2..=max_states);
    let mut b = MarkovAutomatonBuilder::new();
    for i in 0..n {
        b.add_state(&format!("s{i}")).unwrap();
    }
    let actions: Vec<_> = ["a", "b", "c"].iter().map(|a| b.action(a)).collect();
    let states: Vec<usize> = (0..n).collect();
    for s in 0..n {
        let roll: f64 = rng.gen();
        if roll < 0.45 {
            let choices = rng.gen_range(1..=3);
            for _ in 0..choices {
                let k = rng.gen_range(1..=3.min(n));
                let targets: Vec<usize> = states.choose_multiple(rng, k).copied().collect();
                let w = random_weights(rng, k);
                let d = Distribution::new(targets.into_iter().zip(w)).unwrap();
                let a = *actions.choose(rng).unwrap();
                let _ = b.add_transition(s, a, d);
            }
        } else if roll < 0.92 {
            let k = rng.gen_range(1..=3.min(n));
            let targets: Vec<usize> = states.choose_multiple(rng, k).copied().collect();
            let rates = targets.into_iter().map(|t| (t, rng.gen_range(0.5..5.0)));
            b.set_rates(s, RateDistribution::new(rates).unwrap()).unwrap();
        }
    }
    let goals: StateSet = (1..n).filter(|_| rng.gen_bool(0.3)).collect();
    (b.build(0).unwrap(), goals)
}

/// Random goal-respecting, class-homogeneous coarsening.
pub fn random_partition(rng: &mut ChaCha8Rng, ma: &MarkovAutomaton, goals: &StateSet) -> Partition {
    let mut cells: std::collections::BTreeMap<(bool, StateClass), Vec<usize>> = Default::default();
    for s in 0..ma.num_states() {
        cells.entry((goals.contains(&s), ma.classify(s).unwrap())).or_default().push(s);
    }
    let mut blocks = Vec::new();
    for cell in cells.into_values() {
        let k = rng.gen_range(1..=cell.len());
        let mut parts = vec![Vec::new(); k];
        for (i, s) in cell.into_iter().enumerate() {
            let j = if i < k { i } else { rng.gen_range(0..k) };
            parts[j].push(s);
        }
        blocks.extend(parts);
    }
    Partition::new(ma, blocks).unwrap()
}

/// Solves `A x = b` by Gaussian elimination with partial pivoting.
fn gauss(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            if f != 0.0 {
                let (top, bottom) = a.split_at_mut(r);
                for (x, &y) in bottom[0][col..].iter_mut().zip(&top[col][col..]) {
                    *x -= f * y;
                }
                b[r] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

/// Value of every state in the immediate layer when probabilistic state
/// `s` follows transition `policy[s]`; non-probabilistic states keep `fixed`.
fn solve_policy(ma: &MarkovAutomaton, prob: &[usize], policy: &[usize], fixed: &[f64]) -> Vec<f64> {
    let n = ma.num_states();
    let mut idx = vec![usize::MAX; n];
    for (i, &s) in prob.iter().enumerate() {
        idx[s] = i;
    }
    // states that can leave the probabilistic layer under the policy
    let mut exits = vec![false; n];
    for s in 0..n {
        exits[s] = idx[s] == usize::MAX;
    }
    loop {
        let mut changed = false;
        for (i, &s) in prob.iter().enumerate() {
            if !exits[s] && ma.transitions(s)[policy[i]].distribution.support().any(|t| exits[t]) {
                exits[s] = true;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let m = prob.len();
    let mut a = vec![vec![0.0; m]; m];
    let mut b = vec![0.0; m];
    for (i, &s) in prob.iter().enumerate() {
        a[i][i] = 1.0;
        if !exits[s] {
            continue;
        }
        for (t, p) in ma.transitions(s)[policy[i]].distribution.iter() {
            if idx[t] == usize::MAX {
                b[i] += p * fixed[t];
            } else if exits[t] {
                a[i][idx[t]] -= p;
            }
        }
    }
    let x = gauss(a, b);
    let mut out = fixed.to_vec();
    for (i, &s) in prob.iter().enumerate() {
        out[s] = if exits[s] { x[i] } else { 0.0 };
    }
    out
}

/// Brute-force discretized values of `ma` (goals already absorbing):
/// `table[k][s]` for `k = 0..=steps`, enumerating every positional policy
/// of the probabilistic states at every step.
pub fn brute_force(ma: &MarkovAutomaton, goals: &StateSet, delta: f64, steps: usize, objective: Objective) -> Vec<Vec<f64>> {
    let n = ma.num_states();
    let prob: Vec<usize> = (0..n).filter(|&s| !goals.contains(&s) && !ma.transitions(s).is_empty()).collect();
    let mut table: Vec<Vec<f64>> = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let mut fixed = vec![0.0; n];
        for s in 0..n {
            if goals.contains(&s) {
                fixed[s] = 1.0;
            } else if let (Some(rates), true) = (ma.rates(s), k > 0) {
                let prev = &table[k - 1];
                let e = rates.exit_rate();
                let fire = 1.0 - (-e * delta).exp();
                fixed[s] = (-e * delta).exp() * prev[s] + rates.iter().map(|(t, r)| fire * r / e * prev[t]).sum::<f64>();
            }
        }
        let counts: Vec<usize> = prob.iter().map(|&s| ma.transitions(s).len()).collect();
        let mut policy = vec![0usize; prob.len()];
        let mut best: Option<Vec<f64>> = None;
        loop {
            let v = solve_policy(ma, &prob, &policy, &fixed);
            best = Some(match best {
                None => v,
                Some(b) => b
                    .iter()
                    .zip(&v)
                    .map(|(&x, &y)| match objective {
                        Objective::Max => x.max(y),
                        Objective::Min => x.min(y),
                    })
                    .collect(),
            });
            let mut i = 0;
            while i < policy.len() {
                policy[i] += 1;
                if policy[i] < counts[i] {
                    break;
                }
                policy[i] = 0;
                i += 1;
            }
            if i == policy.len() {
                break;
            }
        }
        table.push(best.unwrap());
    }
    table
}

pub fn two_state_ctmc() -> &'static str {
    "ma\ninitial: s0\ngoal: s1\nstate s0\n  rate -> s1 : 1\nstate s1\n"
}

pub fn erlang_two() -> &'static str {
    "ma\ninitial: s0\ngoal: g\nstate s0\n  rate -> s1 : 2\nstate s1\n  rate -> g : 2\nstate g\n"
}

/// A 2-state probabilistic cycle p1 <-> p2 whose only exit leads to a
/// Markovian state feeding the goal.
pub fn zeno_model() -> &'static str {
    "\
ma
initial: p1
goal: g
state p1
  action a
    -> p2 : 1
state p2
  action a
    -> p1 : 1
  action b
    -> m : 1
state m
  rate -> g : 2
state g
"
}

/// Six states; the initial abstraction lumps the fast and slow Markovian
/// states with a third one that loops back to the start.
pub fn six_state_model() -> &'static str {
    "\
ma
initial: s0
goal: g
state s0
  action a
    -> f : 1
  action b
    -> w : 1
state p1
  action a
    -> w : 1
state f
  rate -> g : 3
state w
  rate -> g : 1
state m
  rate -> s0 : 2
state g
"
}

/// Two queues of capacity `cap` served by one server that polls them
/// alternately. Arrivals at rate `arrive`, service at rate `serve`; after
/// each service the server decides (probabilistic state) to stay or switch.
pub fn polling_model(cap: usize, arrive1: f64, arrive2: f64, serve: f64) -> String {
    use std::fmt::Write;
    let name = |q1: usize, q2: usize, pos: usize| format!("m_{q1}_{q2}_{pos}");
    let decide = |q1: usize, q2: usize, pos: usize| format!("d_{q1}_{q2}_{pos}");
    let mut out = String::from("ma\n");
    writeln!(out, "initial: {}", name(0, 0, 0)).unwrap();
    out.push_str("goal:");
    for q2 in 0..=cap {
        for pos in 0..2 {
            write!(out, " {}", name(cap, q2, pos)).unwrap();
        }
    }
    out.push('\n');
    for q1 in 0..=cap {
        for q2 in 0..=cap {
            for pos in 0..2 {
                writeln!(out, "state {}", name(q1, q2, pos)).unwrap();
                if q1 < cap {
                    writeln!(out, "  rate -> {} : {arrive1}", name(q1 + 1, q2, pos)).unwrap();
                }
                if q2 < cap {
                    writeln!(out, "  rate -> {} : {arrive2}", name(q1, q2 + 1, pos)).unwrap();
                }
                let served = if pos == 0 { q1 } else { q2 };
                if served > 0 {
                    let (n1, n2) = if pos == 0 { (q1 - 1, q2) } else { (q1, q2 - 1) };
                    writeln!(out, "  rate -> {} : {serve}", decide(n1, n2, pos)).unwrap();
                } else {
                    writeln!(out, "  rate -> {} : {serve}", name(q1, q2, 1 - pos)).unwrap();
                }
                writeln!(out, "state {}", decide(q1, q2, pos)).unwrap();
                writeln!(out, "  action stay\n    -> {} : 1", name(q1, q2, pos)).unwrap();
                writeln!(out, "  action switch\n    -> {} : 1", name(q1, q2, 1 - pos)).unwrap();
            }
        }
    }
    out
}
