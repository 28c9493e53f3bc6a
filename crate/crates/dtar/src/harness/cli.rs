//! Command-line entry point.
//!
//! Subcommands: `partition` (offline NSGA-II search), `train`, `eval`, and
//! `ablate` (train and compare the encoder/partition ablations). Exit codes:
//! 0 success, 1 usage, 2 configuration, 3 runtime failure.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use super::config::SimConfig;
use super::env::{day_average_traffic, ScenarioKind, World};
use super::eval::{evaluate, EvalAgent};
use super::metrics::write_results_csv;
use super::train::{load_agent, train};
use crate::agents::AgentKind;
use crate::constellation::build_walker;
use crate::error::{Error, Result};
use crate::partition::{run_nsga2, DomainPartition};
use crate::rng::derive_seed;

#[derive(Parser)]
#[command(
    name = "dtar",
    about = "Traffic-aware domain partitioning and load-balanced inter-domain routing lab",
    version
)]
struct Cli {
    /// Path to a TOML config; desk-scale defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed for every derived random stream.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Write per-episode evaluation traces (flows, paths, fault events).
    #[arg(long, global = true)]
    trace: bool,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the offline NSGA-II domain partitioning and export the result.
    Partition,
    /// Train one agent on the current partition.
    Train {
        /// dtar | dtar-mlp | dtar-randpart | qrlsn | cdpar
        #[arg(long)]
        agent: String,
        /// Override [train].total_timesteps.
        #[arg(long)]
        timesteps: Option<u64>,
        /// Partition JSON (defaults to <out>/partition.json).
        #[arg(long)]
        partition: Option<PathBuf>,
    },
    /// Evaluate agents over the three scenarios with paired seeds.
    Eval {
        /// Comma-separated agent list.
        #[arg(long, value_delimiter = ',', required = true)]
        agents: Vec<String>,
        /// Override [eval].episodes_per_scenario.
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        partition: Option<PathBuf>,
    },
    /// Train and evaluate dtar, dtar-mlp, and dtar-randpart.
    Ablate {
        #[arg(long)]
        timesteps: Option<u64>,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        partition: Option<PathBuf>,
    },
}

/// Parse argv and run; returns the process exit code.
pub fn cli_main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // clap prints helpful usage text; --help/--version are success.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e);
            match e {
                Error::InvalidConfig(_)
                | Error::Toml(_)
                | Error::MissingCheckpoint(_, _)
                | Error::BadCheckpoint(_)
                | Error::NotTrainable(_) => 2,
                _ => 3,
            }
        }
    }
}

fn load_config(path: &Option<PathBuf>) -> Result<SimConfig> {
    match path {
        Some(p) => SimConfig::load(p),
        None => {
            let cfg = SimConfig::desk();
            cfg.validate()?;
            Ok(cfg)
        }
    }
}

fn echo_config(cfg: &SimConfig, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("config.echo.toml"), cfg.echo_toml())?;
    Ok(())
}

fn partition_file(out: &Path, explicit: &Option<PathBuf>) -> PathBuf {
    explicit.clone().unwrap_or_else(|| out.join("partition.json"))
}

fn load_partition(path: &Path, expected_n: usize, expected_k: usize) -> Result<DomainPartition> {
    if !path.exists() {
        return Err(Error::InvalidConfig(format!(
            "partition file {} not found; run `dtar partition` first",
            path.display()
        )));
    }
    let value: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    let k = value["k"]
        .as_u64()
        .ok_or_else(|| Error::InvalidConfig("partition json lacks `k`".into()))? as usize;
    let labels: Vec<usize> = value["labels"]
        .as_array()
        .ok_or_else(|| Error::InvalidConfig("partition json lacks `labels`".into()))?
        .iter()
        .map(|v| v.as_u64().map(|x| x as usize))
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| Error::InvalidConfig("partition labels must be integers".into()))?;
    if labels.len() != expected_n || k != expected_k {
        return Err(Error::InvalidConfig(format!(
            "partition file is for N={} K={}, config expects N={} K={}",
            labels.len(),
            k,
            expected_n,
            expected_k
        )));
    }
    DomainPartition::from_labels(labels, k)
}

fn parse_agent(name: &str) -> Result<AgentKind> {
    name.parse()
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli.config)?;
    match cli.cmd {
        Cmd::Partition => cmd_partition(cfg, cli.seed, &cli.out),
        Cmd::Train {
            agent,
            timesteps,
            partition,
        } => {
            let mut cfg = cfg;
            if let Some(t) = timesteps {
                cfg.train.total_timesteps = t;
            }
            let agent = parse_agent(&agent)?;
            cmd_train(cfg, agent, cli.seed, &cli.out, &partition)
        }
        Cmd::Eval {
            agents,
            episodes,
            partition,
        } => {
            let mut cfg = cfg;
            if let Some(e) = episodes {
                cfg.eval.episodes_per_scenario = e;
            }
            let agents = agents
                .iter()
                .map(|a| parse_agent(a))
                .collect::<Result<Vec<_>>>()?;
            cmd_eval(cfg, &agents, cli.seed, &cli.out, &partition, cli.trace, "results")
        }
        Cmd::Ablate {
            timesteps,
            episodes,
            partition,
        } => {
            let mut cfg = cfg;
            if let Some(t) = timesteps {
                cfg.train.total_timesteps = t;
            }
            if let Some(e) = episodes {
                cfg.eval.episodes_per_scenario = e;
            }
            cmd_ablate(cfg, cli.seed, &cli.out, &partition, cli.trace)
        }
    }
}

fn cmd_partition(cfg: SimConfig, seed: u64, out: &Path) -> Result<()> {
    echo_config(&cfg, out)?;
    let g = build_walker(&cfg.constellation)?;
    let traffic = day_average_traffic(&cfg, &g, seed);
    let result = run_nsga2(
        &g,
        &traffic,
        cfg.partition.domains,
        &cfg.partition.nsga2,
        derive_seed(seed, 0x7061_7274),
    )?;

    let selected = &result.selected;
    let partition_json = serde_json::json!({
        "k": cfg.partition.domains,
        "labels": selected.partition.labels(),
        "idtr": selected.idtr,
        "sigma_l": selected.sigma_l,
    });
    std::fs::write(
        out.join("partition.json"),
        serde_json::to_string(&partition_json)?,
    )?;

    let mut pareto = String::from("idtr,sigma_l,labels\n");
    for ind in &result.pareto_front {
        let labels: Vec<String> = ind.partition.labels().iter().map(|l| l.to_string()).collect();
        pareto.push_str(&format!("{},{},{}\n", ind.idtr, ind.sigma_l, labels.join(" ")));
    }
    std::fs::write(out.join("pareto_front.csv"), pareto)?;

    let meta = serde_json::json!({
        "normalization": result.normalization,
        "generations": result.history.len().saturating_sub(1),
        "history": result.history,
    });
    std::fs::write(out.join("nsga_meta.json"), serde_json::to_string(&meta)?)?;

    let mut edge_list = Vec::new();
    g.write_edge_list(&mut edge_list)?;
    std::fs::write(out.join("sat_graph.txt"), edge_list)?;

    let dg = crate::domain::build_domain_graph(&selected.partition, &g)?;
    std::fs::write(
        out.join("domain_graph.json"),
        serde_json::to_string(&dg.to_json())?,
    )?;

    let mut csv = Vec::new();
    traffic.write_csv(&mut csv)?;
    std::fs::write(out.join("traffic_mean.csv"), csv)?;

    eprintln!(
        "partition: idtr {:.4}, sigma_l {:.4}, pareto front {}",
        selected.idtr,
        selected.sigma_l,
        result.pareto_front.len()
    );
    Ok(())
}

fn build_world(
    cfg: &SimConfig,
    agent: AgentKind,
    out: &Path,
    partition: &Option<PathBuf>,
) -> Result<World> {
    if agent.uses_uniform_partition() {
        World::with_uniform_partition(cfg.clone())
    } else {
        let path = partition_file(out, partition);
        let part = load_partition(&path, cfg.constellation.num_sats(), cfg.partition.domains)?;
        World::new(cfg.clone(), part)
    }
}

fn cmd_train(
    cfg: SimConfig,
    agent: AgentKind,
    seed: u64,
    out: &Path,
    partition: &Option<PathBuf>,
) -> Result<()> {
    if !agent.trainable() {
        return Err(Error::NotTrainable(agent.name().into()));
    }
    let world = build_world(&cfg, agent, out, partition)?;
    echo_config(&cfg, out)?;
    let output = train(&world, agent, seed, out)?;
    eprintln!(
        "train {}: {} decisions, checkpoint {}",
        agent,
        output.decisions,
        output.checkpoint.display()
    );
    Ok(())
}

fn write_traces(
    out: &Path,
    prefix: &str,
    report: &super::eval::EvalReport,
) -> Result<()> {
    for (agent, kind, outcomes) in &report.outcomes {
        let path = out.join(format!("{}_{}_{}.jsonl", prefix, agent.name(), kind.name()));
        let mut text = String::new();
        for (episode, o) in outcomes.iter().enumerate() {
            for entry in &o.flow_log {
                let line = serde_json::json!({
                    "episode": episode,
                    "kind": "flow",
                    "step": entry.step,
                    "src": entry.src,
                    "dst": entry.dst,
                    "path": entry.path,
                    "success": entry.success,
                });
                text.push_str(&serde_json::to_string(&line)?);
                text.push('\n');
            }
            for (step, event) in &o.fault_events {
                let (what, edge) = match event {
                    crate::faults::FaultEvent::Failed(e) => ("fail", *e),
                    crate::faults::FaultEvent::Recovered(e) => ("recover", *e),
                };
                let line = serde_json::json!({
                    "episode": episode,
                    "kind": "fault",
                    "step": step,
                    "event": what,
                    "edge": edge,
                });
                text.push_str(&serde_json::to_string(&line)?);
                text.push('\n');
            }
        }
        std::fs::write(path, text)?;
    }
    Ok(())
}

fn cmd_eval(
    cfg: SimConfig,
    agents: &[AgentKind],
    seed: u64,
    out: &Path,
    partition: &Option<PathBuf>,
    trace: bool,
    file_stem: &str,
) -> Result<()> {
    if agents.is_empty() {
        return Err(Error::InvalidConfig("no agents listed".into()));
    }
    let needs_main = agents.iter().any(|a| !a.uses_uniform_partition());
    let needs_uniform = agents.iter().any(|a| a.uses_uniform_partition());
    let main_world = if needs_main {
        Some(build_world(&cfg, AgentKind::Dtar, out, partition)?)
    } else {
        None
    };
    let uniform_world = if needs_uniform {
        Some(World::with_uniform_partition(cfg.clone())?)
    } else {
        None
    };
    echo_config(&cfg, out)?;

    let mut eval_agents = Vec::new();
    for &kind in agents {
        let world = if kind.uses_uniform_partition() {
            uniform_world.as_ref().unwrap()
        } else {
            main_world.as_ref().unwrap()
        };
        let loaded = load_agent(world, kind, out)?;
        eval_agents.push(EvalAgent {
            kind,
            world,
            loaded,
        });
    }

    let report = evaluate(&eval_agents, cfg.eval.episodes_per_scenario, seed, trace)?;
    let mut csv = Vec::new();
    write_results_csv(&mut csv, &report.records)?;
    std::fs::write(out.join(format!("{}.csv", file_stem)), csv)?;
    std::fs::write(
        out.join(format!("{}.json", file_stem)),
        serde_json::to_string(&report.records)?,
    )?;
    if trace {
        write_traces(out, "trace", &report)?;
    }
    for r in &report.records {
        eprintln!(
            "{:>14} {:>6}: sr {:.4} cv {:.4} delay {:.2} ms",
            r.agent, r.scenario, r.sr, r.cv_mean, r.delay_ms_mean
        );
    }
    Ok(())
}

fn cmd_ablate(
    cfg: SimConfig,
    seed: u64,
    out: &Path,
    partition: &Option<PathBuf>,
    trace: bool,
) -> Result<()> {
    let variants = [AgentKind::Dtar, AgentKind::DtarMlp, AgentKind::DtarRandpart];
    for agent in variants {
        cmd_train(cfg.clone(), agent, seed, out, partition)?;
    }
    cmd_eval(cfg, &variants, seed, out, partition, trace, "ablation_results")
}

/// Scenario names in emission order, re-exported for consumers of the CSV.
pub fn scenario_names() -> [&'static str; 3] {
    [
        ScenarioKind::Normal.name(),
        ScenarioKind::Surge.name(),
        ScenarioKind::Fault.name(),
    ]
}
