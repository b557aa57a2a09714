use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{ArgAction, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use bilo_core::dataset::{collect, sample_decision, CollectConfig, Dataset};
use bilo_core::embed::EncodingMode;
use bilo_core::harness::{self, EvalConfig, Method, SuiteReport};
use bilo_core::milp::{write_lp, SolveConfig};
use bilo_core::mlp::{train, SetNetwork, Target, TrainConfig};
use bilo_core::oracle;
use bilo_core::problems::generate_instance;
use bilo_core::surrogate::{self, ApproxKind, SlackMode, SurrogateConfig, ValueApproximator};
use bilo_core::{Instance, LeaderDecision, ProblemKind, SizeParams};

#[derive(Parser)]
#[command(name = "bilo", version, about = "Learned value-function surrogates for bilevel problems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate random instances into a directory.
    GenInstances {
        #[arg(long)]
        kind: ProblemKind,
        #[arg(long)]
        n: usize,
        /// KIP interdiction budget; drawn from the standard levels when absent.
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, default_value_t = 10)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample leader decisions on fresh instances and label them with the oracle.
    Collect {
        #[arg(long)]
        kind: ProblemKind,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        instances: usize,
        #[arg(long)]
        decisions: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, action = ArgAction::Set)]
        greedy_features: Option<bool>,
        #[arg(long, default_value_t = 0.1)]
        val_fraction: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a set network on a collected dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "lower")]
        target: Target,
        #[arg(long, default_value_t = 1000)]
        epochs: usize,
        #[arg(long, default_value_t = 200)]
        patience: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 32)]
        batch_size: usize,
        #[arg(long, default_value_t = 0.01)]
        lr: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build and solve a surrogate, then repair its leader decision.
    Solve {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value = "lower")]
        approx: ApproxKind,
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        #[arg(long, default_value = "slack")]
        slack: SlackMode,
        #[arg(long)]
        dampening: Option<f64>,
        #[arg(long, default_value = "auto")]
        encoding: Encoding,
        #[arg(long)]
        time_limit: Option<f64>,
        /// Also write the surrogate MILP in LP format.
        #[arg(long)]
        lp_out: Option<PathBuf>,
        /// Write zero timings so repeated runs are byte-identical.
        #[arg(long)]
        no_timings: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare methods on a directory of instances.
    Evaluate {
        #[arg(long)]
        instances: PathBuf,
        /// Comma-separated subset of NN_l, NN_u, GVFA, bruteforce.
        #[arg(long, value_delimiter = ',', default_value = "NN_l,GVFA,bruteforce")]
        methods: Vec<Method>,
        #[arg(long)]
        model_lower: Option<PathBuf>,
        #[arg(long)]
        model_upper: Option<PathBuf>,
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        #[arg(long, default_value = "slack")]
        slack: SlackMode,
        #[arg(long)]
        time_limit: Option<f64>,
        #[arg(long, default_value_t = 1u128 << 22)]
        cap: u128,
        #[arg(long)]
        no_timings: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check the slack-penalty guarantees; exits nonzero on any violation.
    Verify {
        #[arg(long)]
        suite: Suite,
        #[arg(long)]
        model: PathBuf,
        /// KIP instances to check; generated when absent.
        #[arg(long)]
        instances: Option<PathBuf>,
        #[arg(long, default_value_t = 50)]
        count: usize,
        #[arg(long, default_value_t = 10)]
        n: usize,
        #[arg(long, default_value_t = 3)]
        k: usize,
        #[arg(long, default_value_t = 2.0)]
        lambda: f64,
        /// Fixed (x, y) probes per instance for obs1.
        #[arg(long, default_value_t = 2)]
        probes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1u128 << 16)]
        cap: u128,
        #[arg(long)]
        out: PathBuf,
    },
    /// Follower optimum for a fixed leader decision.
    Oracle {
        #[arg(long)]
        instance: PathBuf,
        /// JSON array with the leader decision.
        #[arg(long)]
        x: PathBuf,
    },
    /// Exact bilevel optimum by enumerating leader decisions.
    Bruteforce {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long, default_value_t = 1u128 << 22)]
        cap: u128,
    },
}

#[derive(Clone, Copy, Debug, clap::ValueEnum)]
enum Suite {
    Thm1,
    Lemma1,
    Obs1,
}

#[derive(Clone, Copy, Debug, clap::ValueEnum)]
enum Encoding {
    BigM,
    Auto,
}

impl From<Encoding> for EncodingMode {
    fn from(e: Encoding) -> Self {
        match e {
            Encoding::BigM => EncodingMode::BigM,
            Encoding::Auto => EncodingMode::Auto,
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn size(kind: ProblemKind, n: usize, k: Option<usize>) -> SizeParams {
    match (kind, k) {
        (ProblemKind::Kip, Some(k)) => SizeParams::with_budget(n, k),
        _ => SizeParams::new(n),
    }
}

fn solve_config(time_limit: Option<f64>) -> SolveConfig {
    SolveConfig {
        time_limit_s: time_limit,
        ..SolveConfig::default()
    }
}

fn gen_instances(kind: ProblemKind, n: usize, k: Option<usize>, count: usize, seed: u64, out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    for i in 0..count {
        let inst_seed = seed.wrapping_add(i as u64);
        let inst = generate_instance(kind, size(kind, n, k), inst_seed)?;
        let name = format!("{}-{i:04}.json", harness::instance_group(&inst));
        inst.save(out.join(name))?;
    }
    println!("wrote {count} {kind} instances to {}", out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::GenInstances { kind, n, k, count, seed, out } => gen_instances(kind, n, k, count, seed, &out)?,
        Command::Collect {
            kind,
            n,
            k,
            instances,
            decisions,
            seed,
            greedy_features,
            val_fraction,
            out,
        } => {
            let mut cfg = CollectConfig::new(kind, size(kind, n, k), instances, decisions, seed);
            if let Some(g) = greedy_features {
                cfg.use_greedy_features = g;
            }
            cfg.val_fraction = val_fraction;
            let data = collect(&cfg)?;
            data.save(&out)?;
            println!("wrote {} samples to {}", data.samples.len(), out.display());
        }
        Command::Train {
            data,
            target,
            epochs,
            patience,
            seed,
            batch_size,
            lr,
            out,
        } => {
            let data = Dataset::load(&data)?;
            let cfg = TrainConfig {
                batch_size,
                learning_rate: lr,
                max_epochs: epochs,
                patience,
                seed,
                ..TrainConfig::default()
            };
            let (net, report) = train(&data, target, &cfg)?;
            net.save(&out)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Solve {
            instance,
            model,
            approx,
            lambda,
            slack,
            dampening,
            encoding,
            time_limit,
            lp_out,
            no_timings,
            out,
        } => {
            let inst = Instance::load(&instance)?;
            let net = model.map(SetNetwork::load).transpose()?;
            let cfg = SurrogateConfig {
                approx,
                lambda,
                slack,
                dampening,
                encoding: encoding.into(),
                solve: solve_config(time_limit),
            };
            let approximator = net.as_ref().map(|n| n as &dyn ValueApproximator);
            if let Some(lp) = lp_out {
                let built = surrogate::build(&inst, approximator, &cfg)?;
                fs::write(&lp, write_lp(&built.model)).with_context(|| format!("writing {}", lp.display()))?;
            }
            let mut outcome = surrogate::solve_end_to_end(&inst, approximator, &cfg)?;
            if no_timings {
                outcome.surrogate_time_s = 0.0;
                outcome.repair_time_s = 0.0;
                outcome.solution.wall_time_s = 0.0;
            }
            match out {
                Some(path) => write_json(&path, &outcome)?,
                None => println!("{}", serde_json::to_string_pretty(&outcome)?),
            }
        }
        Command::Evaluate {
            instances,
            methods,
            model_lower,
            model_upper,
            lambda,
            slack,
            time_limit,
            cap,
            no_timings,
            out,
        } => {
            let insts = harness::load_instances(&instances)?;
            if insts.is_empty() {
                bail!("no instances found in {}", instances.display());
            }
            let mut cfg = EvalConfig::new(methods);
            cfg.lower_net = model_lower.map(SetNetwork::load).transpose()?;
            cfg.upper_net = model_upper.map(SetNetwork::load).transpose()?;
            cfg.surrogate = SurrogateConfig {
                lambda,
                slack,
                solve: solve_config(time_limit),
                ..SurrogateConfig::default()
            };
            cfg.bruteforce_cap = cap;
            cfg.record_timings = !no_timings;
            let report = harness::evaluate(&insts, &cfg)?;
            harness::write_results(&out, &report.rows)?;
            print!("{}", harness::format_summary(&report.groups));
        }
        Command::Verify {
            suite,
            model,
            instances,
            count,
            n,
            k,
            lambda,
            probes,
            seed,
            cap,
            out,
        } => {
            let net = SetNetwork::load(&model)?;
            let insts: Vec<(String, Instance)> = match instances {
                Some(dir) => harness::load_instances(&dir)?,
                None => (0..count)
                    .map(|i| {
                        let inst = generate_instance(ProblemKind::Kip, SizeParams::with_budget(n, k), seed.wrapping_add(i as u64))?;
                        Ok((format!("{}-{i:04}", harness::instance_group(&inst)), inst))
                    })
                    .collect::<bilo_core::Result<_>>()?,
            };
            let solve = SolveConfig::default();
            let holds = match suite {
                Suite::Thm1 => {
                    let reports = insts
                        .iter()
                        .map(|(id, inst)| harness::verify_theorem1(id, inst.as_kip()?, &net, lambda, &solve, cap))
                        .collect::<bilo_core::Result<Vec<_>>>()?;
                    let rep = SuiteReport::new("thm1", reports, |r| r.holds);
                    write_json(&out, &rep)?;
                    println!("thm1: {} passed, {} failed", rep.passed, rep.failed);
                    rep.holds
                }
                Suite::Lemma1 => {
                    let reports = insts
                        .iter()
                        .map(|(id, inst)| harness::verify_lemma1(id, inst.as_kip()?, &net, lambda, &solve, cap))
                        .collect::<bilo_core::Result<Vec<_>>>()?;
                    let rep = SuiteReport::new("lemma1", reports, |r| r.holds);
                    write_json(&out, &rep)?;
                    println!("lemma1: {} passed, {} failed", rep.passed, rep.failed);
                    rep.holds
                }
                Suite::Obs1 => {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    let mut reports = Vec::new();
                    for (id, inst) in &insts {
                        let pairs = (0..probes)
                            .map(|_| {
                                let x = sample_decision(inst, &mut rng);
                                let y = harness::random_response(inst, &x, &mut rng)?;
                                Ok((x, y))
                            })
                            .collect::<bilo_core::Result<Vec<_>>>()?;
                        reports.push(harness::verify_observation1(id, inst, &net, lambda, &pairs, &solve)?);
                    }
                    let rep = SuiteReport::new("obs1", reports, |r| r.holds);
                    write_json(&out, &rep)?;
                    println!("obs1: {} passed, {} failed", rep.passed, rep.failed);
                    rep.holds
                }
            };
            if !holds {
                return Ok(ExitCode::from(2));
            }
        }
        Command::Oracle { instance, x } => {
            let inst = Instance::load(&instance)?;
            let text = fs::read_to_string(&x).with_context(|| format!("reading {}", x.display()))?;
            let x: LeaderDecision = serde_json::from_str(&text)?;
            let sol = oracle::solve_follower(&inst, &x)?;
            println!("{}", serde_json::to_string_pretty(&sol)?);
        }
        Command::Bruteforce { instance, cap } => {
            let inst = Instance::load(&instance)?;
            let sol = oracle::solve_bruteforce(&inst, cap)?;
            println!("{}", serde_json::to_string_pretty(&sol)?);
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
