use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use cellalign_core::allocation;
use cellalign_core::evaluation::{self, DofBoundQuery, Scheme};
use cellalign_core::experiment::{self, ExperimentSpec};
use cellalign_core::feasibility::{self, BRUTEFORCE_LIMIT};
use cellalign_core::network;
use cellalign_core::transceiver::{self, IterationOptions};

#[derive(Parser)]
#[command(name = "cellalign", version, about = "Interference alignment for partially connected MIMO cellular networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Decide whether a freedoms/constraints instance is feasible.
    Feasibility {
        /// Instance file with `v_t`, `v_r`, `c` and optional `cell`.
        instance: PathBuf,
        /// Also run the exhaustive check (small instances only).
        #[arg(long)]
        bruteforce: bool,
    },
    /// Print the stream assignment and subspace dimensions for a scenario.
    Assign {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value_t = Method::Partial)]
        method: Method,
        /// Run seed; moves geometric drops.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Evaluate the per-MS stream bound of a symmetric network.
    DofBound {
        #[arg(long)]
        g: usize,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        j: usize,
        #[arg(long)]
        nt: usize,
        #[arg(long)]
        nr: usize,
        #[arg(long)]
        r1: usize,
        #[arg(long)]
        r2: usize,
        #[arg(long, default_value_t = 1)]
        d_f: usize,
        /// Also print the value found by enumerating the underlying program.
        #[arg(long)]
        enumerate: bool,
    },
    /// Run an SNR sweep and write the result table as CSV.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Output file; defaults to the config's `output`, else stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads (default: all cores). Results do not depend on it.
        #[arg(long)]
        workers: Option<usize>,
        /// Seeds as `a..b` or a comma list; overrides the config.
        #[arg(long)]
        seeds: Option<String>,
        /// SNR grid in dB as a comma list; overrides the config.
        #[arg(long)]
        snr: Option<String>,
    },
    /// Write the per-iteration leakage of one run as CSV.
    Trace {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = TraceScheme::Proposed)]
        scheme: TraceScheme,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        max_iters: Option<usize>,
    },
    /// Write one channel realization as CSV.
    ExportChannels {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    /// Joint stream and subspace design aware of null spaces.
    Partial,
    /// Greedy assignment that treats every link as connected.
    Full,
}

#[derive(Clone, Copy, ValueEnum)]
enum TraceScheme {
    Proposed,
    Bl1,
    Bl2,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn sink(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            fs::File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Feasibility { instance, bruteforce } => {
            let inst = feasibility::parse_instance(&read(&instance)?)
                .with_context(|| format!("parsing {}", instance.display()))?;
            let verdict = feasibility::feasible_tree(&inst)?.feasible;
            println!("{}", if verdict { "FEASIBLE" } else { "INFEASIBLE" });
            if bruteforce {
                if inst.len() > BRUTEFORCE_LIMIT {
                    bail!("exhaustive check is limited to {BRUTEFORCE_LIMIT} nodes");
                }
                match feasibility::find_violation(&inst)? {
                    None => println!("exhaustive: FEASIBLE"),
                    Some(v) => println!(
                        "exhaustive: INFEASIBLE tx={:?} rx={:?} constraints={} freedoms={}",
                        v.tx_nodes, v.rx_nodes, v.constraints, v.freedoms
                    ),
                }
            }
        }
        Command::Assign { config, method, seed } => {
            let src = read(&config)?;
            let (name, cfg) = experiment::parse_scenario(&src).with_context(|| format!("parsing {}", config.display()))?;
            let spec = ExperimentSpec::new(&name, cfg.clone(), vec![Scheme::Proposed], vec![0.0], vec![seed]);
            let conn = spec.connectivity(seed)?;
            let mut out = sink(None)?;
            writeln!(out, "scenario {name}")?;
            match method {
                Method::Partial => {
                    let res = allocation::assign_greedy_partial(&cfg, &conn)?;
                    writeln!(out, "total_streams {}", res.d.total())?;
                    writeln!(out, "iterations {}", res.iterations)?;
                    writeln!(out, "g,k,d,core_dim,free_dim,receive_dim")?;
                    for ms in conn.ms_ids() {
                        let p = res.plan.get(ms.g, ms.k);
                        writeln!(
                            out,
                            "{},{},{},{},{},{}",
                            ms.g,
                            ms.k,
                            res.d.get(ms.g, ms.k),
                            p.core.dim(),
                            p.free.dim(),
                            p.receive.dim()
                        )?;
                    }
                }
                Method::Full => {
                    let d = evaluation::bl1_assignment(&cfg, &conn)?;
                    writeln!(out, "total_streams {}", d.total())?;
                    writeln!(out, "g,k,d")?;
                    for ms in conn.ms_ids() {
                        writeln!(out, "{},{},{}", ms.g, ms.k, d.get(ms.g, ms.k))?;
                    }
                }
            }
            out.flush()?;
        }
        Command::DofBound { g, k, j, nt, nr, r1, r2, d_f, enumerate } => {
            let q = DofBoundQuery { g, k, j, nt, nr, r1, r2, d_f };
            println!("{}", evaluation::dof_bound(&q)?);
            if enumerate {
                println!("enumerated {}", evaluation::dof_bound_enumerated(&q)?);
            }
        }
        Command::Sweep { config, out, workers, seeds, snr } => {
            let src = read(&config)?;
            let mut spec = experiment::parse_experiment(&src).with_context(|| format!("parsing {}", config.display()))?;
            if let Some(s) = seeds {
                spec.seeds = parse_seeds(&s)?;
            }
            if let Some(s) = snr {
                spec.snr_grid_db = parse_list(&s)?;
            }
            spec.validate()?;
            let result = experiment::run_sweep(&spec, workers)?;
            let target = out.or_else(|| spec.output_path.as_ref().map(PathBuf::from));
            let mut w = sink(target.as_deref())?;
            experiment::write_csv(&result, &mut w)?;
            w.flush()?;
            for (scheme, failed) in &result.zf_failures {
                if *failed > 0 {
                    eprintln!("{}: zero-forcing rank-deficient on {failed} seed(s)", scheme.name());
                }
            }
        }
        Command::Trace { config, seed, scheme, out, max_iters } => {
            let src = read(&config)?;
            let (name, cfg) = experiment::parse_scenario(&src).with_context(|| format!("parsing {}", config.display()))?;
            let spec = ExperimentSpec::new(&name, cfg.clone(), vec![Scheme::Proposed], vec![0.0], vec![seed]);
            let conn = spec.connectivity(seed)?;
            let ch = network::sample_channels(&conn, seed);
            let mut opts = IterationOptions { seed, ..Default::default() };
            if let Some(m) = max_iters {
                opts.max_iters = m;
            }
            let report = match scheme {
                TraceScheme::Proposed => {
                    let stage = allocation::assign_greedy_partial(&cfg, &conn)?;
                    transceiver::suppress_inter_cell(&ch, &stage.plan, &stage.d, &opts)?.1
                }
                TraceScheme::Bl1 => {
                    let d = evaluation::bl1_assignment(&cfg, &conn)?;
                    let plan = allocation::full_structure_plan(&conn.fully_connected_view(), &d, seed);
                    transceiver::suppress_inter_cell(&ch, &plan, &d, &opts)?.1
                }
                TraceScheme::Bl2 => {
                    let d = evaluation::capped_request(&cfg, &conn);
                    transceiver::naive_iteration(&ch, &d, &opts).1
                }
            };
            let mut w = sink(out.as_deref())?;
            transceiver::write_trace(&report.trace, &mut w)?;
            w.flush()?;
        }
        Command::ExportChannels { config, seed, out } => {
            let src = read(&config)?;
            let (name, cfg) = experiment::parse_scenario(&src).with_context(|| format!("parsing {}", config.display()))?;
            let spec = ExperimentSpec::new(&name, cfg, vec![Scheme::Proposed], vec![0.0], vec![seed]);
            let ch = network::sample_channels(&spec.connectivity(seed)?, seed);
            let mut w = sink(out.as_deref())?;
            network::write_channels(&ch, &mut w)?;
            w.flush()?;
        }
    }
    Ok(())
}

fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a.trim().parse().context("seed range start")?;
        let b: u64 = b.trim().parse().context("seed range end")?;
        return Ok((a..b).collect());
    }
    s.split(',')
        .filter(|x| !x.trim().is_empty())
        .map(|x| x.trim().parse::<u64>().with_context(|| format!("bad seed `{x}`")))
        .collect()
}

fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .filter(|x| !x.trim().is_empty())
        .map(|x| x.trim().parse::<f64>().with_context(|| format!("bad SNR `{x}`")))
        .collect()
}
