use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use markov_refine::driver::{self, CheckRequest, Mode, DEFAULT_MAX_REFINEMENTS};
use markov_refine::io::{parse_model, TraceWriter};
use markov_refine::{Error, Objective};

#[derive(Parser)]
#[command(name = "markov-refine", version, about = "Time-bounded reachability bounds for Markov automata")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Bound the probability of reaching the goal states within the time bound.
    Check(CheckArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ObjectiveArg {
    Max,
    Min,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Abstraction,
    Concrete,
}

#[derive(clap::Args)]
struct CheckArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long = "time-bound")]
    time_bound: f64,
    #[arg(long)]
    epsilon: f64,
    #[arg(long, value_enum, default_value = "max")]
    objective: ObjectiveArg,
    #[arg(long, value_enum, default_value = "abstraction")]
    mode: ModeArg,
    #[arg(long = "max-refinements", default_value_t = DEFAULT_MAX_REFINEMENTS)]
    max_refinements: usize,
    /// CSV file receiving one row per loop pass.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Text dump of the final game.
    #[arg(long = "dump-game")]
    dump_game: Option<PathBuf>,
}

fn run_check(args: CheckArgs) -> Result<bool, Error> {
    let text = fs::read_to_string(&args.model)?;
    let model = parse_model(&text)?;
    let req = CheckRequest {
        model,
        time_bound: args.time_bound,
        epsilon: args.epsilon,
        objective: match args.objective {
            ObjectiveArg::Max => Objective::Max,
            ObjectiveArg::Min => Objective::Min,
        },
        mode: match args.mode {
            ModeArg::Abstraction => Mode::Abstraction,
            ModeArg::Concrete => Mode::Concrete,
        },
        max_refinements: args.max_refinements,
    };
    let mut trace = match &args.trace {
        Some(path) => {
            let sink: Box<dyn Write> = Box::new(BufWriter::new(File::create(path)?));
            Some(TraceWriter::new(sink)?)
        }
        None => None,
    };
    let result = driver::run(&req, trace.as_mut())?;
    if !result.zeno_components.is_empty() {
        let ma = &req.model.automaton;
        for comp in &result.zeno_components {
            let names: Vec<&str> = comp.iter().map(|&s| ma.state_name(s)).collect();
            eprintln!("warning: probabilistic end component (Zeno): {}", names.join(" "));
        }
    }
    if let Some(path) = &args.dump_game {
        let mut out = BufWriter::new(File::create(path)?);
        driver::dump_game(&req, &result, &mut out)?;
        out.flush()?;
    }
    println!(
        "lb={} ub={} eps_hat={} iterations={} blocks={} game_states={}",
        result.lb, result.ub, result.eps_hat_final, result.iterations, result.final_blocks, result.game_states
    );
    let met = result.met_bound(req.epsilon);
    if !met {
        eprintln!("bound not met: {:?}", result.status);
    }
    Ok(met)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match cli.command {
        Command::Check(args) => match run_check(args) {
            Ok(true) => ExitCode::SUCCESS,
            Ok(false) => ExitCode::from(2),
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(1)
            }
        },
    }
}
