use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use latent_mle::simulation::{
    basin_csv, experiment_em_failures, experiment_epsilon, experiment_mstar, experiment_table1, failures_csv,
    membership_volume, mstar_config, MstarData,
};
use latent_mle::strata::enumerate_strata;
use latent_mle::tensor::{find_supermodular_order, flattening_rank, RANK_REL_TOL, SUPERMODULAR_TOL};
use latent_mle::{global_mle, multi_start_em, CountTensor, EmConfig, EmData, Error, ProbTensor, Substream};

#[derive(Parser, Debug, Serialize)]
#[command(name = "latent-mle", version, about = "Exact and EM maximum likelihood for binary latent class models")]
struct Cli {
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true, env = "LATENT_MLE_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Serialize)]
enum Command {
    /// Global MLE of a 2x2x2 count table.
    Mle {
        #[arg(long)]
        counts: PathBuf,
        /// Include every stratum candidate in the output.
        #[arg(long)]
        ledger: bool,
        /// Exit with status 3 when the data have a zero two-way margin.
        #[arg(long)]
        strict: bool,
    },
    /// Multi-start EM for a latent class model of any shape.
    Em {
        #[arg(long)]
        counts: PathBuf,
        #[arg(long, default_value_t = 2)]
        rank: usize,
        #[arg(long, default_value_t = 10)]
        restarts: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = latent_mle::em::DEFAULT_TOL)]
        tol: f64,
        #[arg(long, default_value_t = 100_000)]
        max_iter: usize,
        /// Include the log-likelihood after every iteration.
        #[arg(long)]
        trace: bool,
    },
    /// Monte Carlo experiments.
    #[command(subcommand)]
    Simulate(Simulate),
    /// The stratum catalog.
    #[command(subcommand)]
    Strata(StrataCmd),
    /// Membership test for a binary tensor; entries are normalized first.
    Membership {
        #[arg(long)]
        tensor: PathBuf,
    },
}

#[derive(Subcommand, Debug, Serialize)]
enum StrataCmd {
    List,
}

#[derive(Args, Debug, Serialize)]
struct Common {
    #[arg(long, default_value_t = 10_000)]
    iters: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// CSV destination; metadata goes next to it with a .json extension.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug, Serialize)]
enum Simulate {
    /// Basins of uniform draws from the 7-simplex.
    Table1 {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1000)]
        n: u64,
    },
    /// Basins of data drawn from the symmetric epsilon distributions.
    Epsilon {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1000)]
        n: u64,
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.2,0.3,0.4,0.5")]
        eps: Vec<f64>,
    },
    /// Trials where multi-start EM misses the exact optimum.
    EmFailures {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1000)]
        n: u64,
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.2,0.3,0.4,0.5")]
        eps: Vec<f64>,
        #[arg(long, default_value_t = 10)]
        restarts: usize,
    },
    /// Zero patterns of three-class EM fits on 3x3x2 tables.
    Mstar {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 10)]
        restarts: usize,
        /// Fit multinomial samples of this size instead of the weights 1e6 * P.
        #[arg(long)]
        sampled_n: Option<u64>,
        #[arg(long, default_value_t = 1e-6)]
        zero_threshold: f64,
        #[arg(long, default_value_t = latent_mle::em::DEFAULT_TOL)]
        tol: f64,
        #[arg(long, default_value_t = 100_000)]
        max_iter: usize,
    },
    /// Share of uniform draws from the 7-simplex inside the model.
    Volume {
        #[command(flatten)]
        common: Common,
    },
}

enum Failure {
    Input(String),
    Strict(String),
    Internal(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Internal(_) => Failure::Internal(e.to_string()),
            other => Failure::Input(other.to_string()),
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn print_json<T: Serialize>(v: &T) {
    println!("{}", serde_json::to_string_pretty(v).expect("serializable"));
}

fn emit(csv: String, out: Option<&Path>, meta: Value) -> Result<(), Failure> {
    match out {
        None => print!("{csv}"),
        Some(path) => {
            let io = |e: std::io::Error| Failure::Input(format!("{}: {e}", path.display()));
            fs::write(path, csv).map_err(io)?;
            let meta_text = serde_json::to_string_pretty(&meta).expect("serializable");
            fs::write(path.with_extension("json"), meta_text + "\n").map_err(io)?;
        }
    }
    Ok(())
}

fn metadata(cli: &Cli, report: impl Serialize) -> Value {
    json!({
        "version": env!("CARGO_PKG_VERSION"),
        "threads": rayon::current_num_threads(),
        "config": &cli.command,
        "report": report,
    })
}

fn run(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Mle { counts, ledger, strict } => {
            let u: CountTensor = read_json(counts)?;
            let fit = global_mle(&u)?;
            let mut v = serde_json::to_value(&fit).expect("serializable");
            if !ledger {
                v.as_object_mut().expect("object").remove("candidates");
            }
            print_json(&v);
            if *strict && fit.degenerate_input {
                return Err(Failure::Strict("input has a zero two-way margin".into()));
            }
        }
        Command::Em {
            counts,
            rank,
            restarts,
            seed,
            tol,
            max_iter,
            trace,
        } => {
            let u: CountTensor = read_json(counts)?;
            let config = EmConfig {
                tol: *tol,
                max_iter: *max_iter,
                restarts: *restarts,
                record_trace: *trace,
                ..EmConfig::default()
            };
            if *rank == 0 {
                return Err(Failure::Input("rank must be positive".into()));
            }
            let fit = multi_start_em(&EmData::from_counts(&u), *rank, &config, Substream::new(*seed))?;
            print_json(&fit);
        }
        Command::Strata(StrataCmd::List) => print_json(&enumerate_strata()),
        Command::Membership { tensor } => {
            #[derive(serde::Deserialize)]
            struct Raw {
                dims: Vec<usize>,
                entries: Vec<f64>,
            }
            let raw: Raw = read_json(tensor)?;
            let p = ProbTensor::normalized(raw.dims, raw.entries)?;
            if !p.is_binary() {
                return Err(Failure::Input("membership needs every axis of size 2".into()));
            }
            let order = find_supermodular_order(&p, SUPERMODULAR_TOL);
            let rank = (p.ndim() > 3).then(|| flattening_rank(&p, RANK_REL_TOL));
            let member = order.is_some() && rank.is_none_or(|r| r <= 2);
            print_json(&json!({
                "member": member,
                "supermodular_order": order,
                "flattening_rank": rank,
                "degeneracy": p.degeneracy(),
            }));
        }
        Command::Simulate(sim) => match sim {
            Simulate::Table1 { common, n } => {
                let r = experiment_table1(common.iters, *n, common.seed)?;
                emit(basin_csv(std::slice::from_ref(&r)), common.out.as_deref(), metadata(cli, &r))?;
            }
            Simulate::Epsilon { common, n, eps } => {
                let r = experiment_epsilon(eps, *n, common.iters, common.seed)?;
                emit(basin_csv(&r), common.out.as_deref(), metadata(cli, &r))?;
            }
            Simulate::EmFailures { common, n, eps, restarts } => {
                let r = experiment_em_failures(eps, *n, common.iters, *restarts, common.seed)?;
                emit(failures_csv(&r), common.out.as_deref(), metadata(cli, &r))?;
            }
            Simulate::Mstar {
                common,
                restarts,
                sampled_n,
                zero_threshold,
                tol,
                max_iter,
            } => {
                let data = sampled_n.map_or(MstarData::default(), |n| MstarData::Sampled { n });
                let config = EmConfig {
                    zero_threshold: *zero_threshold,
                    tol: *tol,
                    max_iter: *max_iter,
                    ..mstar_config()
                };
                let r = experiment_mstar(common.iters, *restarts, common.seed, data, &config)?;
                emit(r.csv(), common.out.as_deref(), metadata(cli, &r))?;
            }
            Simulate::Volume { common } => {
                let r = membership_volume(common.iters, common.seed)?;
                emit(r.csv(), common.out.as_deref(), metadata(cli, &r))?;
            }
        },
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("latent-mle: cannot set up {t} threads: {e}");
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(msg)) => {
            eprintln!("latent-mle: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Strict(msg)) => {
            eprintln!("latent-mle: warning: {msg}");
            ExitCode::from(3)
        }
        Err(Failure::Internal(msg)) => {
            eprintln!("latent-mle: {msg}");
            ExitCode::FAILURE
        }
    }
}
