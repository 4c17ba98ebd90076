use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mgrestore::bench::{self, Mode, Overrides, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "mgrestore", version, about = "Microgrid load restoration: MPC and constrained policy optimization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the receding-horizon controller and write its step log.
    RunMpc {
        #[command(flatten)]
        common: Common,
        /// Controller look-ahead in steps.
        #[arg(long)]
        mpc_lookahead: Option<usize>,
        /// Write every window LP in CPLEX LP format to this directory.
        #[arg(long, value_name = "DIR")]
        dump_lp: Option<PathBuf>,
    },
    /// Train a policy and write the reward curve and checkpoint.
    RunCpo {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        policy: PolicyArgs,
        #[arg(long)]
        episodes: Option<usize>,
        /// Trust-region radius.
        #[arg(long)]
        delta: Option<f64>,
        /// Noise samples per update.
        #[arg(long)]
        samples: Option<usize>,
        /// Continue from this checkpoint instead of a fresh policy.
        #[arg(long, value_name = "FILE")]
        resume: Option<PathBuf>,
        /// Also write a checkpoint every K episodes.
        #[arg(long, value_name = "K")]
        checkpoint_every: Option<usize>,
    },
    /// Run a trained policy without exploration and write its step log.
    EvalCpo {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        policy: PolicyArgs,
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
    },
    /// Run both and write the joined comparison and figure series.
    Compare {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        policy: PolicyArgs,
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        #[arg(long)]
        mpc_lookahead: Option<usize>,
    },
}

#[derive(Args, Debug)]
struct Common {
    /// Scenario file or name; names are also looked up in $MGRESTORE_SCENARIO_DIR.
    #[arg(long, default_value = "case12da")]
    scenario: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Random seed; defaults to the scenario's seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct PolicyArgs {
    /// Policy look-ahead in steps.
    #[arg(long)]
    cpo_lookahead: Option<usize>,
    /// Discount factor.
    #[arg(long)]
    gamma: Option<f64>,
}

fn config(cli: Cli) -> RunConfig {
    let base = |c: Common, mode| {
        let mut rc = RunConfig::new(c.scenario, mode, c.out);
        rc.seed = c.seed;
        rc
    };
    let policy = |o: &mut Overrides, p: PolicyArgs| {
        o.cpo_lookahead = p.cpo_lookahead;
        o.gamma = p.gamma;
    };
    match cli.command {
        Command::RunMpc { common, mpc_lookahead, dump_lp } => {
            let mut rc = base(common, Mode::Mpc);
            rc.overrides.mpc_lookahead = mpc_lookahead;
            rc.dump_lp = dump_lp;
            rc
        }
        Command::RunCpo { common, policy: p, episodes, delta, samples, resume, checkpoint_every } => {
            let mut rc = base(common, Mode::CpoTrain);
            policy(&mut rc.overrides, p);
            rc.overrides.episodes = episodes;
            rc.overrides.delta = delta;
            rc.overrides.n_samples = samples;
            rc.checkpoint = resume;
            rc.checkpoint_every = checkpoint_every;
            rc
        }
        Command::EvalCpo { common, policy: p, checkpoint } => {
            let mut rc = base(common, Mode::CpoEval);
            policy(&mut rc.overrides, p);
            rc.checkpoint = Some(checkpoint);
            rc
        }
        Command::Compare { common, policy: p, checkpoint, mpc_lookahead } => {
            let mut rc = base(common, Mode::Compare);
            policy(&mut rc.overrides, p);
            rc.overrides.mpc_lookahead = mpc_lookahead;
            rc.checkpoint = Some(checkpoint);
            rc
        }
    }
}

/// Parse `args` (program name first), run the command and return the exit code.
fn execute<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match bench::run(&config(cli)) {
        Ok(out) => {
            for f in &out.files {
                println!("wrote {}", f.display());
            }
            println!("{}", out.summary);
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code() as u8
        }
    }
}

fn main() -> ExitCode {
    ExitCode::from(execute(std::env::args_os()))
}
