//! Command-line front end.
//!
//! Exit codes: 0 success / final value, 1 diagnostics or a non-reducible
//! collection, 2 deadlock, 3 step limit, 4 monitor violation, 5 I/O or
//! input-format errors.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use mtlc::corpus;
use mtlc::dfcheck;
use mtlc::pretty::print_expr;
use mtlc::runtime::{run, MonitorConfig, Outcome, Policy, RunReport, SchedulerConfig};
use mtlc::typecheck::{check_program, CheckedProgram, Signature};

#[derive(Parser)]
#[command(
    name = "mtlc",
    about = "Session-typed multi-threaded lambda-calculus tools"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Type-check a program.
    Check {
        file: PathBuf,
        #[arg(long)]
        allow_create2: bool,
    },
    /// Type-check and evaluate a program under a seeded scheduler.
    Run {
        file: PathBuf,
        #[command(flatten)]
        opts: RunOpts,
    },
    /// Decide DF-reducibility of a collection of channel sets.
    DfCheck { file: PathBuf },
    /// Run a built-in demo with monitors enabled.
    Demo {
        #[command(subcommand)]
        which: Demo,
    },
}

#[derive(Args, Clone)]
struct RunOpts {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = PolicyArg::Random)]
    policy: PolicyArg,
    /// Maximum number of evaluation steps.
    #[arg(long, default_value_t = 1_000_000, value_parser = clap::value_parser!(u64).range(1..))]
    steps: u64,
    /// Print one line per evaluation step.
    #[arg(long)]
    trace: bool,
    /// Check DF-reducibility of the channel sets after every step.
    #[arg(long)]
    monitor_df: bool,
    /// Re-typecheck rewritten threads after every step.
    #[arg(long)]
    monitor_types: bool,
    /// Audit canonical forms and value purity on transfers.
    #[arg(long)]
    monitor_canon: bool,
    /// Enable all monitors.
    #[arg(long)]
    monitor_all: bool,
    /// Admit the unsafe two-channel creation primitive.
    #[arg(long)]
    allow_create2: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    Random,
    Rr,
    Adversarial,
}

impl From<PolicyArg> for Policy {
    fn from(p: PolicyArg) -> Policy {
        match p {
            PolicyArg::Random => Policy::Random,
            PolicyArg::Rr => Policy::RoundRobin,
            PolicyArg::Adversarial => Policy::Adversarial,
        }
    }
}

#[derive(Subcommand)]
enum Demo {
    /// Pull the first N primes out of the sieve and print them.
    Sieve {
        #[arg(default_value_t = 25)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Replay a random enqueue/dequeue script against the channel queue
    /// and compare with a reference FIFO.
    Queue {
        #[arg(long, default_value_t = 200)]
        ops: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    // die quietly when a pipe consumer stops reading trace output
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Check {
            file,
            allow_create2,
        } => cmd_check(&file, allow_create2),
        Command::Run { file, opts } => cmd_run(&file, &opts),
        Command::DfCheck { file } => cmd_df_check(&file),
        Command::Demo { which } => cmd_demo(which),
    };
    ExitCode::from(code)
}

fn read(path: &PathBuf) -> Result<String, u8> {
    std::fs::read_to_string(path).map_err(|e| {
        eprintln!("error: cannot read {}: {e}", path.display());
        5
    })
}

fn load(path: &PathBuf, allow_create2: bool) -> Result<CheckedProgram, u8> {
    let src = read(path)?;
    let name = path.display().to_string();
    let prog = mtlc::parser::parse(&src).map_err(|d| {
        eprintln!("{}", d.render(&name));
        1u8
    })?;
    check_program(&prog, allow_create2).map_err(|ds| {
        for d in ds {
            eprintln!("{}", d.render(&name));
        }
        1u8
    })
}

fn cmd_check(path: &PathBuf, allow_create2: bool) -> u8 {
    match load(path, allow_create2) {
        Ok(checked) => {
            println!("ok: main : {}", checked.main_type);
            0
        }
        Err(code) => code,
    }
}

fn cmd_run(path: &PathBuf, opts: &RunOpts) -> u8 {
    let checked = match load(path, opts.allow_create2) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let sig = Signature::new(&checked.env, opts.allow_create2);
    let cfg = SchedulerConfig {
        seed: opts.seed,
        step_limit: opts.steps,
        policy: opts.policy.into(),
        record_trace: opts.trace,
    };
    let mon = MonitorConfig {
        types: opts.monitor_types || opts.monitor_all,
        df: opts.monitor_df || opts.monitor_all,
        canonical: opts.monitor_canon || opts.monitor_all,
    };
    let rep = match run(&checked, &sig, &cfg, &mon) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return 5;
        }
    };
    print_report(&rep, opts.trace);
    rep.outcome.exit_code() as u8
}

fn print_report(rep: &RunReport, trace: bool) {
    if trace {
        for ev in &rep.trace {
            println!("{}", ev.render());
        }
    }
    match &rep.outcome {
        Outcome::FinalValue {
            value,
            blocked_threads,
            value_has_channels,
        } => {
            println!("outcome=final value={}", print_expr(value));
            if *blocked_threads > 0 {
                println!(
                    "note: main finished with a channel-carrying value while {blocked_threads} thread(s) remain blocked (has-channels={value_has_channels})"
                );
            }
        }
        Outcome::Deadlock(w) => {
            println!("outcome=deadlock");
            print!("{w}");
        }
        Outcome::StepLimit => println!("outcome=step-limit"),
        Outcome::MonitorViolation { step, detail } => {
            println!("outcome=monitor-violation step={step} detail={detail}")
        }
    }
}

fn cmd_df_check(path: &PathBuf) -> u8 {
    let text = match read(path) {
        Ok(t) => t,
        Err(code) => return code,
    };
    let coll = match dfcheck::parse_collection(&text) {
        Ok(c) => c,
        Err((line, msg)) => {
            eprintln!("error: {}:{line}: {msg}", path.display());
            return 5;
        }
    };
    if let Some(msg) = dfcheck::regularity_violation(&coll) {
        println!("non-reducible");
        println!("witness: {msg}");
        return 1;
    }
    match dfcheck::is_df_reducible(&coll) {
        Ok(v) if v.reducible => {
            println!("reducible");
            for (id, i, j) in &v.trace {
                println!("reduce via channel {id}: merge sets {i} and {j}");
            }
            0
        }
        Ok(v) => {
            println!("non-reducible");
            if let Some(w) = v.witness {
                println!("witness: {w}");
            }
            1
        }
        Err(e) => {
            eprintln!("error: {e}");
            5
        }
    }
}

fn cmd_demo(which: Demo) -> u8 {
    match which {
        Demo::Sieve { n, seed } => {
            let src = corpus::sieve_program(n);
            let prog = mtlc::parser::parse(&src).expect("generated program parses");
            let checked = check_program(&prog, false).expect("generated program typechecks");
            let sig = Signature::new(&checked.env, false);
            let cfg = SchedulerConfig {
                seed,
                ..Default::default()
            };
            let rep = match run(&checked, &sig, &cfg, &MonitorConfig::all()) {
                Ok(r) => r,
                Err(e) => {
                    eprintln!("error: {e}");
                    return 5;
                }
            };
            match &rep.outcome {
                Outcome::FinalValue { value, .. } => {
                    let primes = corpus::decode_int_list(value).expect("prime list");
                    let expect = corpus::first_primes(n);
                    println!(
                        "primes({n}) = {}",
                        primes
                            .iter()
                            .map(|p| p.to_string())
                            .collect::<Vec<_>>()
                            .join(" ")
                    );
                    if primes == expect {
                        println!("oracle: match ({} steps, monitors clean)", rep.steps);
                        0
                    } else {
                        println!("oracle: MISMATCH, expected {expect:?}");
                        1
                    }
                }
                other => {
                    print_report(&rep, false);
                    other.exit_code() as u8
                }
            }
        }
        Demo::Queue { ops, seed } => {
            let script = corpus::random_queue_script(ops, seed);
            let src = corpus::queue_program(&script);
            let prog = mtlc::parser::parse(&src).expect("generated program parses");
            let checked = check_program(&prog, false).expect("generated program typechecks");
            let sig = Signature::new(&checked.env, false);
            let cfg = SchedulerConfig {
                seed,
                ..Default::default()
            };
            let rep = match run(&checked, &sig, &cfg, &MonitorConfig::all()) {
                Ok(r) => r,
                Err(e) => {
                    eprintln!("error: {e}");
                    return 5;
                }
            };
            match &rep.outcome {
                Outcome::FinalValue { value, .. } => {
                    let got = corpus::decode_int_list(value).expect("dequeue results");
                    let expect = corpus::reference_fifo(&script);
                    println!("script: {ops} ops (seed {seed}), {} dequeues", expect.len());
                    if got == expect {
                        println!("oracle: match ({} steps, monitors clean)", rep.steps);
                        0
                    } else {
                        println!("oracle: MISMATCH\n got {got:?}\nwant {expect:?}");
                        1
                    }
                }
                other => {
                    print_report(&rep, false);
                    other.exit_code() as u8
                }
            }
        }
    }
}
