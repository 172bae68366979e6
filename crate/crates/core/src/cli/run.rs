//! Subcommand execution and artifact writing.
//!
//! Every subcommand writes `<command>.json`, `<command>.csv` and
//! `<command>.schema.json` into the output directory. Records carry the config
//! hash and seed and contain no timestamps, so identical configs give
//! byte-identical files. Failures write `<command>.error.json` instead.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use super::config::{flux_matrix, pair_measure, prob_vector, ExperimentConfig};
use crate::bridge::sample_dump_name;
use crate::chain::{invariant_measure, is_irreducible, stationarity_residual, transition_at, GeneratorMatrix};
use crate::conjugate::{EmpiricalLaw, LogMgf};
use crate::error::{Error, Result};
use crate::estimate::{
    contract_dvg_from_bfg, dvg_inf_over_ball, infconv_bfg_with, infconv_dvg_with, mc_decay_rate, sample_bridge_laws_cached, BridgeLaws,
    DecaySettings, DecayTarget,
};
use crate::extended::ExtReal;
use crate::ratefun::{bfg_rate, dvg_rate, pair_empirical_rate};
use crate::simulate::LawMode;

/// The six batch computations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    /// Invariant measure, `P(T0)` and irreducibility.
    ChainInfo,
    /// `I_DVG`, `I_BFG` and the pair-empirical rate at given points.
    Rates,
    /// Dump the bridge sample sets per endpoint pair.
    BridgeSample,
    /// Inf-convolution of the discrete-time rate (occupation or flux mode).
    Infconv,
    /// Contraction of `I_BFG` to `I_DVG` against the direct evaluation.
    Contract,
    /// Monte Carlo decay-rate fit against the inf-over-ball reference.
    McVerify,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::ChainInfo => "chain-info",
            Command::Rates => "rates",
            Command::BridgeSample => "bridge-sample",
            Command::Infconv => "infconv",
            Command::Contract => "contract",
            Command::McVerify => "mc-verify",
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub config: PathBuf,
    pub out: PathBuf,
    /// Worker threads; `None` uses all cores. Results do not depend on it.
    pub threads: Option<usize>,
    /// Sample-cache root; dumps live in a per-chain subdirectory.
    pub cache: Option<PathBuf>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Artifacts {
    pub json: PathBuf,
    pub csv: PathBuf,
    pub schema: PathBuf,
}

struct Table {
    columns: &'static [(&'static str, &'static str)],
    rows: Vec<Vec<String>>,
}

struct Output {
    result: Value,
    table: Table,
}

/// Runs `cmd`, writing an error record on failure. Returns the process exit code.
pub fn run_reporting(cmd: Command, opts: &RunOptions) -> i32 {
    match run(cmd, opts) {
        Ok(_) => 0,
        Err(e) => {
            let hash = ExperimentConfig::load(&opts.config).ok().map(|c| c.with_seed(opts.seed).hash());
            let record = json!({
                "command": cmd.name(),
                "config_hash": hash,
                "error": e.kind(),
                "message": e.to_string(),
            });
            let text = serde_json::to_string_pretty(&record).expect("error record serializes");
            eprintln!("{text}");
            if fs::create_dir_all(&opts.out).is_ok() {
                let _ = fs::write(opts.out.join(format!("{}.error.json", cmd.name())), text + "\n");
            }
            1
        }
    }
}

pub fn run(cmd: Command, opts: &RunOptions) -> Result<Artifacts> {
    let cfg = ExperimentConfig::load(&opts.config)?.with_seed(opts.seed);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let output = pool.install(|| execute(cmd, &cfg, opts))?;
    write_artifacts(cmd, &cfg, &opts.out, output)
}

fn execute(cmd: Command, cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Output> {
    let q = cfg.generator()?;
    match cmd {
        Command::ChainInfo => chain_info(cfg, &q),
        Command::Rates => rates(cfg, &q),
        Command::BridgeSample => bridge_sample(cfg, &q, opts),
        Command::Infconv => infconv(cfg, &q, opts),
        Command::Contract => contract(cfg, &q),
        Command::McVerify => mc_verify(cfg, &q),
    }
}

fn write_artifacts(cmd: Command, cfg: &ExperimentConfig, out: &Path, output: Output) -> Result<Artifacts> {
    fs::create_dir_all(out)?;
    let name = cmd.name();
    let record = json!({
        "command": name,
        "experiment": cfg.name,
        "config_hash": cfg.hash(),
        "seed": cfg.seed,
        "result": output.result,
    });
    let json_path = out.join(format!("{name}.json"));
    fs::write(&json_path, serde_json::to_string_pretty(&record).expect("record serializes") + "\n")?;

    let csv_path = out.join(format!("{name}.csv"));
    let mut w = csv::Writer::from_path(&csv_path).map_err(|e| Error::Io(e.to_string()))?;
    w.write_record(output.table.columns.iter().map(|c| c.0)).map_err(|e| Error::Io(e.to_string()))?;
    for row in &output.table.rows {
        w.write_record(row).map_err(|e| Error::Io(e.to_string()))?;
    }
    w.flush()?;

    let schema_path = out.join(format!("{name}.schema.json"));
    let schema = json!({
        "csv": format!("{name}.csv"),
        "config_hash": cfg.hash(),
        "columns": output.table.columns.iter().map(|(c, d)| json!({"name": c, "description": d})).collect::<Vec<_>>(),
    });
    fs::write(&schema_path, serde_json::to_string_pretty(&schema).expect("schema serializes") + "\n")?;
    Ok(Artifacts { json: json_path, csv: csv_path, schema: schema_path })
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("serializable")
}

fn chain_info(cfg: &ExperimentConfig, q: &GeneratorMatrix) -> Result<Output> {
    let irreducible = is_irreducible(q);
    let pi = if irreducible { Some(invariant_measure(q)?) } else { None };
    let p = transition_at(q, cfg.t0)?;
    let n = q.n_states();
    let rows = (0..n)
        .flat_map(|x| (0..n).map(move |y| (x, y)))
        .map(|(x, y)| vec![x.to_string(), y.to_string(), q.rate(x, y).to_string(), p.prob(x, y).to_string()])
        .collect();
    Ok(Output {
        result: json!({
            "n_states": n,
            "irreducible": irreducible,
            "all_rates_positive": q.all_rates_positive(),
            "invariant_measure": pi.as_ref().map(|p| p.as_slice().to_vec()),
            "stationarity_residual": pi.as_ref().map(|p| stationarity_residual(p, q)),
            "t0": cfg.t0,
            "transition_t0": p.to_rows(),
        }),
        table: Table {
            columns: &[
                ("from", "source state"),
                ("to", "target state"),
                ("rate", "generator entry Q[from][to]"),
                ("transition_prob", "P[from][to](T0)"),
            ],
            rows,
        },
    })
}

fn rates(cfg: &ExperimentConfig, q: &GeneratorMatrix) -> Result<Output> {
    let task = cfg.rates.as_ref().ok_or_else(|| Error::Config("config has no `rates` block".into()))?;
    let p = transition_at(q, cfg.t0)?;
    let mut rows = Vec::new();
    let mut points = Vec::new();
    for (i, pt) in task.points.iter().enumerate() {
        let rho = prob_vector(&pt.rho)?;
        let dvg = dvg_rate(&rho, q)?.value;
        rows.push(vec![i.to_string(), "dvg".into(), dvg.to_string()]);
        let bfg = pt.j.as_deref().map(flux_matrix).transpose()?.map(|j| bfg_rate(&rho, &j, q));
        if let Some(v) = bfg {
            rows.push(vec![i.to_string(), "bfg".into(), v.to_string()]);
        }
        let pair = pt.theta.as_deref().map(pair_measure).transpose()?.map(|t| pair_empirical_rate(&t, &p));
        if let Some(v) = pair {
            rows.push(vec![i.to_string(), "pair_empirical".into(), v.to_string()]);
        }
        points.push(json!({"point": i, "rho": pt.rho, "dvg": dvg, "bfg": bfg, "pair_empirical": pair}));
    }
    Ok(Output {
        result: json!({ "points": points }),
        table: Table {
            columns: &[
                ("point", "index into rates.points"),
                ("functional", "dvg | bfg | pair_empirical"),
                ("value", "rate value; `inf` when infeasible"),
            ],
            rows,
        },
    })
}

fn cache_dir(cfg: &ExperimentConfig, root: &Path) -> PathBuf {
    root.join(cfg.chain_hash())
}

fn load_laws(cfg: &ExperimentConfig, q: &GeneratorMatrix, dir: Option<&Path>) -> Result<BridgeLaws> {
    let (mode, t0, seed, n) = (cfg.mode, cfg.t0, cfg.seed, cfg.samples_per_pair);
    let file = |x: usize, y: usize| dir.map(|d| d.join(sample_dump_name(x, y, mode, t0, seed, n)));
    sample_bridge_laws_cached(
        q,
        t0,
        mode,
        n,
        seed,
        |x, y| match file(x, y) {
            Some(p) if p.exists() => EmpiricalLaw::read_binary(&p).map(Some),
            _ => Ok(None),
        },
        |x, y, law| match file(x, y) {
            Some(p) => {
                fs::create_dir_all(p.parent().expect("dump has a parent"))?;
                let tmp = p.with_extension("bin.part");
                law.write_binary(&tmp)?;
                fs::rename(&tmp, &p)?;
                Ok(())
            }
            None => Ok(()),
        },
    )
}

fn bridge_sample(cfg: &ExperimentConfig, q: &GeneratorMatrix, opts: &RunOptions) -> Result<Output> {
    let root = opts.cache.clone().unwrap_or_else(|| opts.out.join("samples"));
    let dir = cache_dir(cfg, &root);
    let laws = load_laws(cfg, q, Some(&dir))?;
    let mut rows = Vec::new();
    let mut pairs = Vec::new();
    for ((x, y), law) in &laws.laws {
        let mean = law.mean();
        for (c, m) in mean.iter().enumerate() {
            rows.push(vec![x.to_string(), y.to_string(), c.to_string(), m.to_string()]);
        }
        pairs.push(json!({
            "x": x,
            "y": y,
            "count": law.count(),
            "rank": law.rank(),
            "mean": mean,
            "file": sample_dump_name(*x, *y, cfg.mode, cfg.t0, cfg.seed, cfg.samples_per_pair),
        }));
    }
    Ok(Output {
        result: json!({ "mode": cfg.mode, "t0": cfg.t0, "cache_subdir": cfg.chain_hash(), "pairs": pairs }),
        table: Table {
            columns: &[
                ("x", "bridge start state"),
                ("y", "bridge end state"),
                ("component", "index into the observable (occupation, then row-major flux)"),
                ("mean", "sample mean of that component"),
            ],
            rows,
        },
    })
}

fn infconv(cfg: &ExperimentConfig, q: &GeneratorMatrix, opts: &RunOptions) -> Result<Output> {
    let task = cfg.infconv.as_ref().ok_or_else(|| Error::Config("config has no `infconv` block".into()))?;
    let dir = opts.cache.as_deref().map(|c| cache_dir(cfg, c));
    let laws = load_laws(cfg, q, dir.as_deref())?;
    let oracle = laws.oracle_with(cfg.solver.conjugate);
    let p = transition_at(q, cfg.t0)?;
    let rho = prob_vector(&task.rho)?;
    let (result, reference) = match cfg.mode {
        LawMode::Occupation => {
            let r = infconv_dvg_with(&rho, &oracle, &p, cfg.t0, &cfg.solver)?;
            (r, ExtReal::Finite(dvg_rate(&rho, q)?.value))
        }
        LawMode::Flux => {
            let j = flux_matrix(task.j.as_deref().ok_or_else(|| Error::Config("infconv.j is required in flux mode".into()))?)?;
            let r = infconv_bfg_with(&rho, &j, &oracle, &p, cfg.t0, &cfg.solver)?;
            (r, bfg_rate(&rho, &j, q))
        }
    };
    let n = q.n_states();
    let d = result.k.dim();
    let mut rows = Vec::new();
    for x in 0..n {
        for y in 0..n {
            for (c, kv) in result.k.get(x, y).iter().enumerate() {
                rows.push(vec![x.to_string(), y.to_string(), c.to_string(), result.theta.get(x, y).to_string(), kv.to_string()]);
            }
        }
    }
    let abs_error = match (result.value, reference) {
        (ExtReal::Finite(a), ExtReal::Finite(b)) => Some((a - b).abs()),
        _ => None,
    };
    Ok(Output {
        result: json!({
            "mode": cfg.mode,
            "t0": cfg.t0,
            "dim": d,
            "rho": task.rho,
            "j": task.j,
            "value": result.value,
            "reference": reference,
            "abs_error": abs_error,
            "solution": to_value(&result),
        }),
        table: Table {
            columns: &[
                ("x", "pair start state"),
                ("y", "pair end state"),
                ("component", "index into k^{xy}"),
                ("theta", "minimizing pair weight θ_xy"),
                ("k", "minimizing k^{xy} component"),
            ],
            rows,
        },
    })
}

fn contract(cfg: &ExperimentConfig, q: &GeneratorMatrix) -> Result<Output> {
    let task = cfg.contract.as_ref().ok_or_else(|| Error::Config("config has no `contract` block".into()))?;
    let mut rows = Vec::new();
    let mut points = Vec::new();
    for (i, r) in task.rho.iter().enumerate() {
        let rho = prob_vector(r)?;
        let c = contract_dvg_from_bfg(&rho, q)?;
        let direct = dvg_rate(&rho, q)?.value;
        let diff = (c.value - direct).abs();
        rows.push(vec![i.to_string(), c.value.to_string(), direct.to_string(), diff.to_string(), c.gap.to_string()]);
        points.push(json!({"point": i, "rho": r, "contraction": to_value(&c), "dvg": direct, "abs_diff": diff}));
    }
    Ok(Output {
        result: json!({ "points": points }),
        table: Table {
            columns: &[
                ("point", "index into contract.rho"),
                ("contraction", "inf over divergence-free j of I_BFG(ρ, j)"),
                ("dvg", "I_DVG(ρ) from the variational formula"),
                ("abs_diff", "|contraction − dvg|"),
                ("gap", "primal minus dual value of the contraction"),
            ],
            rows,
        },
    })
}

fn mc_verify(cfg: &ExperimentConfig, q: &GeneratorMatrix) -> Result<Output> {
    let task = cfg.mc_verify.as_ref().ok_or_else(|| Error::Config("config has no `mc_verify` block".into()))?;
    let rho = prob_vector(&task.rho)?;
    let settings = DecaySettings {
        t0: cfg.t0,
        epsilon: task.epsilon,
        n_grid: task.n_grid.clone(),
        paths_per_n: task.paths_per_n,
        seed: cfg.seed,
        min_hits: task.min_hits,
    };
    let fit = mc_decay_rate(q, &DecayTarget::Occupation(rho.clone()), &settings)?;
    let reference = dvg_inf_over_ball(q, &rho, task.epsilon, task.reference_resolution)? * cfg.t0;
    let pointwise = dvg_rate(&rho, q)?.value * cfg.t0;
    let rows = fit
        .points
        .iter()
        .map(|p| {
            vec![
                p.n.to_string(),
                p.hits.to_string(),
                p.paths.to_string(),
                p.scaled_neg_log_prob.map_or_else(String::new, |v| v.to_string()),
                p.usable.to_string(),
            ]
        })
        .collect();
    Ok(Output {
        result: json!({
            "ball": "l1",
            "epsilon": task.epsilon,
            "rho": task.rho,
            "reference_per_window": reference,
            "pointwise_rate_per_window": pointwise,
            "relative_error": (fit.slope - reference).abs() / reference,
            "fit": to_value(&fit),
        }),
        table: Table {
            columns: &[
                ("n", "number of windows; horizon n·T0"),
                ("hits", "paths whose occupation fell in the ℓ¹ ball"),
                ("paths", "paths simulated at this n"),
                ("scaled_neg_log_prob", "−(1/n) log(hits/paths); empty without hits"),
                ("usable", "hits ≥ min_hits, i.e. used in the slope fit"),
            ],
            rows,
        },
    })
}
