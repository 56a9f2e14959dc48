//! `netcalc`: worst-case FIFO delay and backlog bounds from the command line.

use std::fmt::Write as _;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use netcalc_core::analyzers::{reg_bound, sfa, tfa, tfa_pp};
use netcalc_core::cyclic::{build_combined_fixpoint_lp, lp_tfa_delay, plp_fixpoint_delay};
use netcalc_core::feedforward::{split, split_analyze, unfold_analyze};
use netcalc_core::lp::{Sense, SolverChoice};
use netcalc_core::network::format;
use netcalc_core::network::{
    gen_mesh, gen_ring, gen_source_sink, gen_two_hop, GenParams, Kind, Network,
};
use netcalc_core::plp::{
    build_plp, plp_backlog, plp_delay, PlpError, PlpObjective, PlpOptions,
};

#[derive(Parser)]
#[command(name = "netcalc", version, about = "Deterministic network-calculus delay bounds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one or more analysis methods on a network and print delay bounds.
    Analyze(AnalyzeArgs),
    /// Sweep a generator parameter and emit one CSV row per value.
    Sweep(SweepArgs),
    /// Build the LP for a network and write its text form.
    ExportLp(ExportArgs),
    /// Validate a network and report its classification.
    Check(NetArgs),
}

#[derive(Args)]
struct NetArgs {
    /// Network file (JSON, `"format": 1`).
    #[arg(long, conflicts_with = "gen")]
    net: Option<String>,
    /// Built-in topology generator.
    #[arg(long, value_enum)]
    gen: Option<Topology>,
    /// Server count for the generators (ignored by mesh).
    #[arg(long, default_value_t = 2)]
    n: u32,
    /// Network load U in (0, 1].
    #[arg(long, default_value_t = 0.5)]
    load: f64,
    /// Shaping factor eta >= 1.
    #[arg(long, default_value_t = 1.0)]
    eta: f64,
    /// Service rate R in bits/s.
    #[arg(long, default_value_t = 1e7)]
    rate: f64,
    /// Service latency T in seconds.
    #[arg(long, default_value_t = 1e-3)]
    latency: f64,
    /// Per-flow burst b in bits.
    #[arg(long, default_value_t = 1000.0)]
    burst: f64,
    /// Flow of interest (defaults to the file's `foi` field, or `foi`).
    #[arg(long)]
    foi: Option<String>,
}

#[derive(Args)]
struct MethodArgs {
    /// Analysis method, or `all` for every method fitting the topology.
    #[arg(long, default_value = "plp")]
    method: String,
    /// PLP cuts: `tfa,sfa`, `tfa`, `sfa`, or `none`.
    #[arg(long, default_value = "tfa,sfa")]
    cuts: String,
    /// Aggregate output-shaping constraints.
    #[arg(long, default_value = "on", value_parser = ["on", "off"])]
    shaping: String,
    /// Feed-forward mode for the `plp` method on non-tree networks.
    #[arg(long, value_enum, default_value_t = FfMode::Split)]
    ff_mode: FfMode,
    /// LP solver: `internal` or `cmd:TEMPLATE` ({file} is the LP path).
    /// Default comes from NETCALC_SOLVER when set.
    #[arg(long)]
    solver: Option<String>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Topology {
    TwoHop,
    SourceSink,
    Ring,
    Mesh,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FfMode {
    Unfold,
    Split,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    net: NetArgs,
    #[command(flatten)]
    method: MethodArgs,
    /// Also report the PLP backlog bound in bits (tree networks).
    #[arg(long)]
    backlog: bool,
    /// Emit a JSON report instead of plain text.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    net: NetArgs,
    #[command(flatten)]
    method: MethodArgs,
    /// Swept generator parameter.
    #[arg(long, value_parser = ["n", "load", "eta"])]
    param: String,
    /// Explicit list of values, comma-separated (overrides from/to/step).
    #[arg(long)]
    values: Option<String>,
    #[arg(long)]
    from: Option<f64>,
    #[arg(long)]
    to: Option<f64>,
    #[arg(long)]
    step: Option<f64>,
    /// Concurrent sweep points.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Output CSV path (stdout when absent).
    #[arg(long)]
    out: Option<String>,
}

#[derive(Args)]
struct ExportArgs {
    #[command(flatten)]
    net: NetArgs,
    #[command(flatten)]
    method: MethodArgs,
    /// LP objective for the tree PLP.
    #[arg(long, default_value = "delay", value_parser = ["delay", "backlog"])]
    objective: String,
    /// Output path (stdout when absent).
    #[arg(long)]
    out: Option<String>,
}

/// User-facing failure: exit 1 for validation problems, 2 for solver failures.
struct CliError {
    message: String,
    code: u8,
}

impl CliError {
    fn invalid(message: impl Into<String>) -> Self {
        CliError { message: message.into(), code: 1 }
    }

    fn solver(message: impl Into<String>) -> Self {
        CliError { message: message.into(), code: 2 }
    }
}

impl From<PlpError> for CliError {
    fn from(e: PlpError) -> Self {
        match e {
            PlpError::SolverFailed(_) | PlpError::Infeasible(_) => CliError::solver(e.to_string()),
            _ => CliError::invalid(e.to_string()),
        }
    }
}

impl From<netcalc_core::network::NetError> for CliError {
    fn from(e: netcalc_core::network::NetError) -> Self {
        CliError::invalid(e.to_string())
    }
}

fn load_network(args: &NetArgs) -> Result<(Network, String, Vec<String>), CliError> {
    let (net, warnings) = match (&args.net, args.gen) {
        (Some(path), None) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::invalid(format!("{path}: {e}")))?;
            format::parse(&text).map_err(|e| CliError::invalid(format!("{path}: {e}")))?
        }
        (None, Some(topo)) => {
            if !(args.load > 0.0 && args.load <= 1.0) {
                return Err(CliError::invalid("--load must be in (0, 1]"));
            }
            if args.eta < 1.0 {
                return Err(CliError::invalid("--eta must be >= 1"));
            }
            let p = GenParams {
                rate: args.rate,
                latency: args.latency,
                burst: args.burst,
                load: args.load,
                eta: args.eta,
            };
            let net = match topo {
                Topology::TwoHop => gen_two_hop(args.n, p),
                Topology::SourceSink => gen_source_sink(args.n, p),
                Topology::Ring => gen_ring(args.n, p),
                Topology::Mesh => gen_mesh(p),
            };
            (net, Vec::new())
        }
        _ => return Err(CliError::invalid("exactly one of --net or --gen is required")),
    };
    let foi = args
        .foi
        .clone()
        .or_else(|| net.foi().map(str::to_owned))
        .unwrap_or_else(|| "foi".to_string());
    if net.flow_index(&foi).is_none() {
        return Err(CliError::invalid(format!("unknown flow of interest `{foi}`")));
    }
    Ok((net, foi, warnings))
}

fn solver_choice(args: &MethodArgs) -> Result<SolverChoice, CliError> {
    let spec = match &args.solver {
        Some(s) => s.clone(),
        None => std::env::var("NETCALC_SOLVER").unwrap_or_else(|_| "internal".to_string()),
    };
    if spec == "internal" {
        Ok(SolverChoice::Internal)
    } else if let Some(template) = spec.strip_prefix("cmd:") {
        Ok(SolverChoice::External(template.to_string()))
    } else {
        Err(CliError::invalid(format!(
            "--solver must be `internal` or `cmd:TEMPLATE`, got `{spec}`"
        )))
    }
}

fn plp_options(args: &MethodArgs) -> Result<PlpOptions, CliError> {
    let (cut_tfa, cut_sfa) = match args.cuts.as_str() {
        "tfa,sfa" | "sfa,tfa" => (true, true),
        "tfa" => (true, false),
        "sfa" => (false, true),
        "none" => (false, false),
        other => {
            return Err(CliError::invalid(format!(
                "--cuts must be `tfa,sfa`, `tfa`, `sfa` or `none`, got `{other}`"
            )))
        }
    };
    Ok(PlpOptions {
        shaping: args.shaping == "on",
        cut_tfa,
        cut_sfa,
        solver: solver_choice(args)?,
    })
}

const TREE_METHODS: &[&str] = &["tfa", "tfa++", "sfa", "reg", "plp"];
const FF_METHODS: &[&str] = &["tfa", "tfa++", "sfa", "reg", "plp-unfold", "plp-split"];
const CYCLIC_METHODS: &[&str] = &["sfa", "lp-tfa", "plp-fixpoint"];

fn methods_for(kind: Kind, spec: &str) -> Result<Vec<String>, CliError> {
    let all: &[&str] = match kind {
        Kind::Tandem | Kind::Tree => TREE_METHODS,
        Kind::FeedForward => FF_METHODS,
        Kind::Cyclic => CYCLIC_METHODS,
    };
    if spec == "all" {
        return Ok(all.iter().map(|s| s.to_string()).collect());
    }
    Ok(spec.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect())
}

fn run_method(
    net: &Network,
    foi: &str,
    method: &str,
    opts: &PlpOptions,
    ff_mode: FfMode,
) -> Result<f64, CliError> {
    let kind = net.classify().kind;
    let is_tree = matches!(kind, Kind::Tandem | Kind::Tree);
    let cyclic_hint = |m: &str| {
        CliError::invalid(format!(
            "method `{m}` needs an acyclic network; use `sfa`, `lp-tfa` or `plp-fixpoint`"
        ))
    };
    match method {
        "tfa" => Ok(tfa(net, foi)?.delay),
        "tfa++" => Ok(tfa_pp(net, foi)?.delay),
        "sfa" => Ok(sfa(net, foi)?),
        "reg" => Ok(reg_bound(net, foi)?),
        "plp" => {
            if is_tree {
                Ok(plp_delay(net, foi, opts)?)
            } else if kind == Kind::FeedForward {
                match ff_mode {
                    FfMode::Unfold => Ok(unfold_analyze(net, foi, opts)?),
                    FfMode::Split => Ok(split_analyze(net, foi, opts)?),
                }
            } else {
                Err(cyclic_hint("plp"))
            }
        }
        "plp-unfold" => {
            if kind == Kind::Cyclic {
                Err(cyclic_hint("plp-unfold"))
            } else {
                Ok(unfold_analyze(net, foi, opts)?)
            }
        }
        "plp-split" => {
            if kind == Kind::Cyclic {
                Err(cyclic_hint("plp-split"))
            } else {
                Ok(split_analyze(net, foi, opts)?)
            }
        }
        "plp-fixpoint" => Ok(plp_fixpoint_delay(net, foi, opts)?),
        "lp-tfa" => Ok(lp_tfa_delay(net, foi, &opts.solver)?),
        other => Err(CliError::invalid(format!(
            "unknown method `{other}` (try tfa, tfa++, sfa, reg, plp, plp-unfold, plp-split, plp-fixpoint, lp-tfa or all)"
        ))),
    }
}

fn fmt_bound(v: f64) -> String {
    if v.is_infinite() {
        "inf".to_string()
    } else {
        format!("{v}")
    }
}

fn cmd_analyze(args: &AnalyzeArgs) -> Result<(), CliError> {
    let (net, foi, warnings) = load_network(&args.net)?;
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    let opts = plp_options(&args.method)?;
    let methods = methods_for(net.classify().kind, &args.method.method)?;
    if methods.is_empty() {
        return Err(CliError::invalid("no methods selected"));
    }
    let mut reports = Vec::new();
    for m in &methods {
        let start = Instant::now();
        let delay = run_method(&net, &foi, m, &opts, args.method.ff_mode)?;
        let wall_ms = start.elapsed().as_secs_f64() * 1e3;
        let backlog = if args.backlog && (m == "plp") {
            Some(plp_backlog(&net, &foi, &opts)?)
        } else {
            None
        };
        reports.push((m.clone(), delay, backlog, wall_ms));
    }
    if args.json {
        let items: Vec<serde_json::Value> = reports
            .iter()
            .map(|(m, d, b, ms)| {
                let mut o = serde_json::Map::new();
                o.insert("method".into(), m.as_str().into());
                o.insert(
                    "delay_s".into(),
                    if d.is_finite() { (*d).into() } else { "inf".into() },
                );
                if let Some(b) = b {
                    o.insert("backlog_bits".into(), (*b).into());
                }
                o.insert("wall_ms".into(), (*ms).into());
                serde_json::Value::Object(o)
            })
            .collect();
        println!("{}", serde_json::to_string_pretty(&items).unwrap());
    } else if reports.len() == 1 {
        let (_, d, b, _) = &reports[0];
        println!("{}", fmt_bound(*d));
        if let Some(b) = b {
            println!("backlog {}", fmt_bound(*b));
        }
    } else {
        for (m, d, b, _) in &reports {
            match b {
                Some(b) => println!("{m} {} backlog {}", fmt_bound(*d), fmt_bound(*b)),
                None => println!("{m} {}", fmt_bound(*d)),
            }
        }
    }
    Ok(())
}

fn sweep_points(args: &SweepArgs) -> Result<Vec<f64>, CliError> {
    if let Some(list) = &args.values {
        let mut out = Vec::new();
        for tok in list.split(',') {
            out.push(
                tok.trim()
                    .parse::<f64>()
                    .map_err(|_| CliError::invalid(format!("bad sweep value `{tok}`")))?,
            );
        }
        return Ok(out);
    }
    let (from, to) = match (args.from, args.to) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(CliError::invalid("sweep needs --values or --from/--to")),
    };
    let step = args.step.unwrap_or(1.0);
    if step <= 0.0 {
        return Err(CliError::invalid("--step must be > 0"));
    }
    let mut out = Vec::new();
    let count = ((to - from) / step + 1.5).floor() as usize;
    for k in 0..count {
        let v = from + step * k as f64;
        if v > to + 1e-9 {
            break;
        }
        out.push(v);
    }
    Ok(out)
}

fn cmd_sweep(args: &SweepArgs) -> Result<(), CliError> {
    if args.net.gen.is_none() {
        return Err(CliError::invalid("sweep requires --gen"));
    }
    let opts = plp_options(&args.method)?;
    let points = sweep_points(args)?;
    if points.is_empty() {
        return Err(CliError::invalid("empty sweep range"));
    }

    // Methods are fixed from the first point's topology so every row has the
    // same columns.
    let point_args = |v: f64| {
        let mut n = NetArgs {
            net: None,
            gen: args.net.gen,
            n: args.net.n,
            load: args.net.load,
            eta: args.net.eta,
            rate: args.net.rate,
            latency: args.net.latency,
            burst: args.net.burst,
            foi: args.net.foi.clone(),
        };
        match args.param.as_str() {
            "n" => n.n = v as u32,
            "load" => n.load = v,
            _ => n.eta = v,
        }
        n
    };
    let (first, _, _) = load_network(&point_args(points[0]))?;
    let methods = methods_for(first.classify().kind, &args.method.method)?;
    if methods.is_empty() {
        return Err(CliError::invalid("no methods selected"));
    }

    let jobs = args.jobs.max(1);
    let mut rows: Vec<Vec<String>> = vec![Vec::new(); points.len()];
    let mut failed = false;
    let run_point = |v: f64| -> Vec<String> {
        let mut cells = vec![format!("{v}")];
        match load_network(&point_args(v)) {
            Ok((net, foi, _)) => {
                for m in &methods {
                    match run_method(&net, &foi, m, &opts, args.method.ff_mode) {
                        Ok(d) => cells.push(fmt_bound(d)),
                        Err(_) => cells.push("error".to_string()),
                    }
                }
            }
            Err(_) => cells.extend(methods.iter().map(|_| "error".to_string())),
        }
        cells
    };
    if jobs == 1 {
        for (row, &v) in rows.iter_mut().zip(&points) {
            *row = run_point(v);
        }
    } else {
        std::thread::scope(|scope| {
            let mut handles = Vec::new();
            for chunk in points.chunks(points.len().div_ceil(jobs)) {
                handles.push(scope.spawn(|| chunk.iter().map(|&v| run_point(v)).collect::<Vec<_>>()));
            }
            let mut flat = Vec::new();
            for h in handles {
                flat.extend(h.join().expect("sweep worker panicked"));
            }
            rows = flat;
        });
    }

    let mut csv = String::new();
    writeln!(csv, "{},{}", args.param, methods.join(",")).unwrap();
    for row in &rows {
        if row[1..].iter().any(|c| c == "error") {
            failed = true;
        }
        writeln!(csv, "{}", row.join(",")).unwrap();
    }
    match &args.out {
        Some(path) => std::fs::write(path, &csv)
            .map_err(|e| CliError::invalid(format!("{path}: {e}")))?,
        None => print!("{csv}"),
    }
    if failed {
        return Err(CliError::solver("one or more sweep points failed (see `error` cells)"));
    }
    Ok(())
}

fn cmd_export_lp(args: &ExportArgs) -> Result<(), CliError> {
    let (net, foi, _) = load_network(&args.net)?;
    let opts = plp_options(&args.method)?;
    let text = if args.method.method == "plp-fixpoint" {
        let foi_idx = net.flow_index(&foi).unwrap();
        let root = net.unique_sink().unwrap_or_else(|| net.flows()[foi_idx].last());
        let sn = split(&net, root);
        let cuts = netcalc_core::plp::CutValues::default();
        let (mut lp, _) = build_combined_fixpoint_lp(&sn, &cuts, opts.shaping)?;
        let terms = lp.objective().0.to_vec();
        lp.set_objective(Sense::Max, terms);
        lp.export_lp_text()
    } else {
        let idx = net.flow_index(&foi).unwrap();
        let sub = net.predecessors_subnet(net.flows()[idx].last());
        let objective = if args.objective == "backlog" {
            PlpObjective::Backlog
        } else {
            PlpObjective::Delay
        };
        build_plp(&sub, &foi, objective, &opts)?.export_lp_text()
    };
    match &args.out {
        Some(path) => std::fs::write(path, &text)
            .map_err(|e| CliError::invalid(format!("{path}: {e}")))?,
        None => print!("{text}"),
    }
    Ok(())
}

fn cmd_check(args: &NetArgs) -> Result<(), CliError> {
    let (net, foi, warnings) = load_network(args)?;
    let c = net.classify();
    let kind = match c.kind {
        Kind::Tandem => "tandem",
        Kind::Tree => "tree",
        Kind::FeedForward => "feed-forward",
        Kind::Cyclic => "cyclic",
    };
    println!("kind: {kind}");
    println!("servers: {}", net.servers().len());
    println!("flows: {}", net.flows().len());
    println!("foi: {foi}");
    println!("locally stable: {}", c.locally_stable);
    let max_u = c.utilization.values().cloned().fold(0.0f64, f64::max);
    println!("max utilization: {max_u:.6}");
    if !c.tight_servers.is_empty() {
        println!("servers at utilization 1: {:?}", c.tight_servers);
    }
    for w in &warnings {
        println!("warning: {w}");
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Analyze(args) => cmd_analyze(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::ExportLp(args) => cmd_export_lp(args),
        Command::Check(args) => cmd_check(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
