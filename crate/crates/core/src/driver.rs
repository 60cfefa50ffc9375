//! The abstraction-refinement loop and the concrete baseline.

use std::io::Write;
use std::time::Instant;

use crate::abstraction::{build_game, initial_partition, Partition};
use crate::analysis::{discretize_game, plan_for, solve, value_iteration_final, Bound, Objective};
use crate::error::{Error, Result};
use crate::io::{IterationRecord, ModelDocument, TraceWriter};
use crate::model::{MarkovAutomaton, StateId};
use crate::refinement::refine;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Abstraction,
    Concrete,
}

pub const DEFAULT_MAX_REFINEMENTS: usize = 200;

#[derive(Clone, Debug)]
pub struct CheckRequest {
    pub model: ModelDocument,
    pub time_bound: f64,
    pub epsilon: f64,
    pub objective: Objective,
    pub mode: Mode,
    /// Upper limit on loop passes.
    pub max_refinements: usize,
}

impl CheckRequest {
    pub fn new(model: ModelDocument, time_bound: f64, epsilon: f64) -> Self {
        Self {
            model,
            time_bound,
            epsilon,
            objective: Objective::Max,
            mode: Mode::Abstraction,
            max_refinements: DEFAULT_MAX_REFINEMENTS,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::invalid(format!("epsilon {} outside (0,1)", self.epsilon)));
        }
        if !(self.time_bound > 0.0) || !self.time_bound.is_finite() {
            return Err(Error::invalid(format!("time bound {} must be positive", self.time_bound)));
        }
        if self.max_refinements == 0 {
            return Err(Error::invalid("max refinements must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Converged,
    /// No divergent state left to split while the gap exceeds epsilon.
    Stalled,
    BudgetExhausted,
}

#[derive(Clone, Debug)]
pub struct CheckResult {
    pub lb: f64,
    pub ub: f64,
    pub eps_hat_final: f64,
    pub iterations: usize,
    pub refinements: usize,
    pub final_blocks: usize,
    pub game_states: usize,
    pub status: Status,
    pub records: Vec<IterationRecord>,
    /// Partitions used in each pass.
    pub partitions: Vec<Partition>,
    /// Probabilistic end components of the goal-absorbing automaton.
    pub zeno_components: Vec<Vec<StateId>>,
}

impl CheckResult {
    pub fn final_partition(&self) -> &Partition {
        self.partitions.last().expect("at least one pass")
    }

    pub fn met_bound(&self, epsilon: f64) -> bool {
        self.status == Status::Converged && self.ub - self.lb + self.eps_hat_final <= epsilon
    }
}

fn prepare(req: &CheckRequest) -> Result<MarkovAutomaton> {
    req.validate()?;
    req.model.automaton.make_goals_absorbing(&req.model.goals)
}

/// Runs the selected mode.
pub fn run(req: &CheckRequest, trace: Option<&mut TraceWriter<Box<dyn Write>>>) -> Result<CheckResult> {
    match req.mode {
        Mode::Abstraction => check_traced(req, trace),
        Mode::Concrete => {
            let res = check_concrete(req)?;
            if let Some(t) = trace {
                for r in &res.records {
                    t.write_row(r)?;
                }
            }
            Ok(res)
        }
    }
}

pub fn check(req: &CheckRequest) -> Result<CheckResult> {
    check_traced::<Vec<u8>>(req, None)
}

/// Abstraction-refinement loop; each pass is appended to `trace` as it
/// completes.
pub fn check_traced<W: Write>(req: &CheckRequest, mut trace: Option<&mut TraceWriter<W>>) -> Result<CheckResult> {
    let ma = prepare(req)?;
    let goals = &req.model.goals;
    let eps = req.epsilon;
    let zeno_components = ma.detect_probabilistic_end_components();

    let mut partition = initial_partition(&ma, goals)?;
    let mut eps_hat = 1.0f64.min(0.5);
    let mut stall_halved = false;
    let mut records = Vec::new();
    let mut partitions = Vec::new();
    let mut refinements = 0;
    let mut status = Status::BudgetExhausted;
    let mut last = (0.0, 0.0, 0, eps_hat);

    for iteration in 1..=req.max_refinements {
        let start = Instant::now();
        let game = build_game(&ma, &partition, goals)?;
        let sol = solve(&game, req.time_bound, eps_hat, req.objective)?;
        let valiter_ms = start.elapsed().as_secs_f64() * 1e3;
        let (lb, ub) = (sol.lower_at_initial(), sol.upper_at_initial());
        let gap = ub - lb;
        // without reachable Markov steps the discretized values are exact
        if sol.plan.lambda_max == 0.0 {
            eps_hat = 0.0;
        }
        let mut record = IterationRecord {
            iteration,
            blocks: partition.num_blocks(),
            game_states: game.num_states(),
            lb,
            ub,
            eps_hat,
            delta: sol.plan.delta,
            steps: sol.plan.steps,
            refine_ms: 0.0,
            valiter_ms,
        };
        last = (lb, ub, game.num_states(), eps_hat);
        partitions.push(partition.clone());

        let mut next = None;
        if gap + eps_hat <= eps {
            status = Status::Converged;
        } else if gap <= eps {
            eps_hat = (eps_hat / 2.0).max(eps_hat - eps);
        } else {
            let start = Instant::now();
            let report = refine(&ma, &game, &sol.discrete, &partition, &sol.values, &sol.lower, &sol.upper, eps)?;
            record.refine_ms = start.elapsed().as_secs_f64() * 1e3;
            if report.stalled {
                if stall_halved {
                    status = Status::Stalled;
                } else {
                    stall_halved = true;
                    eps_hat /= 2.0;
                }
            } else {
                refinements += 1;
                next = Some(report.new_partition);
            }
        }
        if let Some(t) = trace.as_deref_mut() {
            t.write_row(&record)?;
        }
        records.push(record);
        if status != Status::BudgetExhausted {
            break;
        }
        if let Some(p) = next {
            partition = p;
        }
    }

    let (lb, ub, game_states, eps_hat_final) = last;
    Ok(CheckResult {
        lb,
        ub,
        eps_hat_final,
        iterations: records.len(),
        refinements,
        final_blocks: partitions.last().map_or(0, Partition::num_blocks),
        game_states,
        status,
        records,
        partitions,
        zeno_components,
    })
}

/// Solves the concrete model once at accuracy epsilon. With one block per
/// state the two bounds coincide, so a single backward pass suffices.
pub fn check_concrete(req: &CheckRequest) -> Result<CheckResult> {
    let ma = prepare(req)?;
    let goals = &req.model.goals;
    let zeno_components = ma.detect_probabilistic_end_components();
    let partition = Partition::singleton(&ma);
    let start = Instant::now();
    let game = build_game(&ma, &partition, goals)?;
    let plan = plan_for(&game, req.time_bound, req.epsilon)?;
    let dg = discretize_game(&game, plan.delta)?;
    let values = value_iteration_final(&dg, plan.steps, req.objective, Bound::Lower);
    let value = values[dg.initial()];
    let record = IterationRecord {
        iteration: 1,
        blocks: partition.num_blocks(),
        game_states: game.num_states(),
        lb: value,
        ub: value,
        eps_hat: req.epsilon,
        delta: plan.delta,
        steps: plan.steps,
        refine_ms: 0.0,
        valiter_ms: start.elapsed().as_secs_f64() * 1e3,
    };
    Ok(CheckResult {
        lb: value,
        ub: value,
        eps_hat_final: req.epsilon,
        iterations: 1,
        refinements: 0,
        final_blocks: partition.num_blocks(),
        game_states: game.num_states(),
        status: Status::Converged,
        records: vec![record],
        partitions: vec![partition],
        zeno_components,
    })
}

/// Writes the game of the last pass of `result`.
pub fn dump_game<W: Write>(req: &CheckRequest, result: &CheckResult, out: &mut W) -> Result<()> {
    let ma = prepare(req)?;
    let game = build_game(&ma, result.final_partition(), &req.model.goals)?;
    game.write_graph(&ma, out)?;
    Ok(())
}
