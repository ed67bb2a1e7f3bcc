//! The `hycomp` command line.
//!
//! Exit codes: 0 success, 1 semantic failure, 2 parse or structural
//! failure, 3 runtime failure (non-finite values, stuck simulation).
//! `HYCOMP_TOL` overrides the default check tolerance.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path as FsPath, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::config::{self, Document, SimulationEntry};
use crate::corpus::Demo;
use crate::error::Error;
use crate::geometry::default_tol;
use crate::hyds::{check_hds_map, pushforward_execution, trace_json, validate_execution, write_csv};
use crate::hyph::{validate_map, validate_space, UnderlyingPoint};
use crate::network::{apply_interconnection, induced_system_map, validate_network, validate_network_map};
use crate::opensys::{
    crl_check, validate_interconnection, validate_submersion, validate_submersion_map, OpenSystem,
};
use crate::report::{Report, REPORT_SCHEMA};
use crate::simulate::{simulate, Integrator, JumpPolicy, SimConfig, Status};

pub const EXIT_OK: i32 = 0;
pub const EXIT_SEMANTIC: i32 = 1;
pub const EXIT_STRUCTURAL: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "hycomp", version, about = "Compositional hybrid dynamical systems")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TraceFormat {
    Csv,
    Json,
}

#[derive(Debug, clap::Args)]
pub struct CheckOpts {
    /// Sample points per mode.
    #[arg(long, default_value_t = 16)]
    pub samples: usize,
    /// Check tolerance (defaults to HYCOMP_TOL or 1e-9).
    #[arg(long)]
    pub tol: Option<f64>,
    /// Machine-readable report.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run every structural and sampled check on a config file.
    Validate {
        path: PathBuf,
        #[command(flatten)]
        opts: CheckOpts,
    },
    /// Simulate a system and write its trace.
    Simulate {
        path: PathBuf,
        /// System to simulate (optional when the file has one).
        #[arg(long)]
        system: Option<String>,
        /// Named simulation settings from the file.
        #[arg(long)]
        simulation: Option<String>,
        /// Initial state as MODE:c0,c1,...
        #[arg(long)]
        init: Option<String>,
        /// priority, first-enabled or seeded-random.
        #[arg(long)]
        policy: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        t_max: Option<f64>,
        #[arg(long)]
        step: Option<f64>,
        #[arg(long)]
        max_jumps: Option<usize>,
        /// rk4 or euler.
        #[arg(long)]
        integrator: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = TraceFormat::Csv)]
        format: TraceFormat,
    },
    /// Check a map of phase spaces, and of systems when both ends are given.
    CheckMap {
        path: PathBuf,
        #[arg(long)]
        map: String,
        #[arg(long, requires = "dst")]
        src: Option<String>,
        #[arg(long, requires = "src")]
        dst: Option<String>,
        /// Simulated executions pushed forward along the map.
        #[arg(long, default_value_t = 5)]
        executions: usize,
        #[command(flatten)]
        opts: CheckOpts,
    },
    /// Check a network; interconnect its node systems or check a network map.
    Network {
        path: PathBuf,
        /// A network, or a network map with --check-theorem.
        #[arg(long)]
        network: String,
        /// Interconnect the node systems and write sampled evaluations.
        #[arg(long)]
        apply: bool,
        /// Check that the network map relates the interconnected systems.
        #[arg(long)]
        check_theorem: bool,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        opts: CheckOpts,
    },
    /// Print a built-in example as a config file.
    Demo {
        /// One of thermostat, two-rooms, product-as-network, single-node-loop,
        /// three-node-network, three-node-map.
        name: Option<String>,
        #[arg(long)]
        list: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Parses `args` (including the program name) and runs the command.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_STRUCTURAL } else { EXIT_OK };
        }
    };
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::NonFinite(_) => EXIT_RUNTIME,
        _ => EXIT_STRUCTURAL,
    }
}

fn verdict(reports: &[Report]) -> i32 {
    if reports.iter().any(Report::is_structural_failure) {
        EXIT_STRUCTURAL
    } else if reports.iter().all(Report::passed) {
        EXIT_OK
    } else {
        EXIT_SEMANTIC
    }
}

fn emit(reports: &[Report], json: bool, extra: serde_json::Value) -> io::Result<()> {
    let mut out = io::stdout().lock();
    if json {
        let body = json!({
            "schema": REPORT_SCHEMA,
            "passed": reports.iter().all(Report::passed),
            "reports": reports,
            "extra": extra,
        });
        writeln!(out, "{}", serde_json::to_string_pretty(&body).expect("serializable report"))?;
    } else {
        for r in reports {
            write!(out, "{r}")?;
        }
    }
    Ok(())
}

fn io_err(e: io::Error) -> Error {
    Error::Config(format!("i/o: {e}"))
}

fn sink(out: &Option<PathBuf>) -> crate::Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

fn run(cmd: Command) -> crate::Result<i32> {
    match cmd {
        Command::Validate { path, opts } => cmd_validate(&path, &opts),
        Command::Simulate {
            path,
            system,
            simulation,
            init,
            policy,
            seed,
            t_max,
            step,
            max_jumps,
            integrator,
            out,
            format,
        } => {
            let doc = config::load_file(&path)?;
            let o = SimOverrides {
                system,
                simulation,
                init,
                policy,
                seed,
                t_max,
                step,
                max_jumps,
                integrator,
            };
            cmd_simulate(&doc, &o, &out, format)
        }
        Command::CheckMap {
            path,
            map,
            src,
            dst,
            executions,
            opts,
        } => cmd_check_map(&path, &map, src.as_deref().zip(dst.as_deref()), executions, &opts),
        Command::Network {
            path,
            network,
            apply,
            check_theorem,
            out,
            opts,
        } => cmd_network(&path, &network, apply, check_theorem, &out, &opts),
        Command::Demo { name, list, out } => {
            if list {
                for d in Demo::ALL {
                    println!("{}", d.name());
                }
                return Ok(EXIT_OK);
            }
            let name = name.ok_or_else(|| Error::Config("demo name missing (see --list)".into()))?;
            let text = config::to_toml(&Demo::from_name(&name)?.build()?)?;
            let mut w = sink(&out)?;
            w.write_all(text.as_bytes()).map_err(io_err)?;
            w.flush().map_err(io_err)?;
            Ok(EXIT_OK)
        }
    }
}

/// All structural and sampled checks over a resolved document.
pub fn validate_document(doc: &Document, nsamples: usize, tol: f64) -> Vec<Report> {
    let mut out = vec![];
    let mut push = |kind: &str, name: &str, r: Report| {
        let mut top = Report::new(format!("{kind} {name}"));
        let check = r.check.clone();
        top.absorb(&check, r);
        out.push(top);
    };
    for n in &doc.spaces {
        push("phase space", &n.name, validate_space(&n.value, nsamples, tol));
    }
    for n in &doc.maps {
        push("map", &n.name, validate_map(&n.value, nsamples, tol));
    }
    for n in &doc.systems {
        push("system", &n.name, crl_check(&OpenSystem::from_system(&n.value), nsamples, tol));
    }
    for n in &doc.submersions {
        push("submersion", &n.name, validate_submersion(&n.value, nsamples));
    }
    for n in &doc.submersion_maps {
        push("submersion map", &n.name, validate_submersion_map(&n.value, nsamples, tol));
    }
    for n in &doc.interconnections {
        push("interconnection", &n.name, validate_interconnection(&n.value, nsamples, tol));
    }
    for n in &doc.open_systems {
        push("open system", &n.name, crl_check(&n.value, nsamples, tol));
    }
    for n in &doc.networks {
        push("network", &n.name, validate_network(&n.value.network, nsamples, tol));
    }
    for n in &doc.network_maps {
        let e = &n.value;
        let r = match (doc.network(&e.src), doc.network(&e.dst)) {
            (Ok(s), Ok(d)) => validate_network_map(&e.map, &s.network, &d.network, nsamples, tol),
            _ => {
                let mut r = Report::new("network map");
                r.structural("unknown network");
                r
            }
        };
        push("network map", &n.name, r);
    }
    out
}

fn cmd_validate(path: &FsPath, opts: &CheckOpts) -> crate::Result<i32> {
    let doc = config::load_file(path)?;
    let reports = validate_document(&doc, opts.samples, opts.tol.unwrap_or_else(default_tol));
    emit(&reports, opts.json, json!(null)).map_err(io_err)?;
    Ok(verdict(&reports))
}

#[derive(Debug, Default, Clone)]
pub struct SimOverrides {
    pub system: Option<String>,
    pub simulation: Option<String>,
    pub init: Option<String>,
    pub policy: Option<String>,
    pub seed: Option<u64>,
    pub t_max: Option<f64>,
    pub step: Option<f64>,
    pub max_jumps: Option<usize>,
    pub integrator: Option<String>,
}

fn pick_settings(doc: &Document, o: &SimOverrides) -> crate::Result<(String, Option<SimulationEntry>)> {
    if let Some(s) = &o.simulation {
        let e = doc.simulation(s)?.clone();
        if o.system.as_ref().is_some_and(|sys| *sys != e.system) {
            return Err(Error::Config(format!("simulation `{s}` is for system `{}`", e.system)));
        }
        return Ok((e.system.clone(), Some(e)));
    }
    let system = match &o.system {
        Some(s) => s.clone(),
        None if doc.systems.len() == 1 => doc.systems[0].name.clone(),
        None => return Err(Error::Config("several systems in the file; pick one with --system".into())),
    };
    doc.system(&system)?;
    let base = doc.simulations.iter().find(|s| s.value.system == system).map(|s| s.value.clone());
    Ok((system, base))
}

fn cmd_simulate(doc: &Document, o: &SimOverrides, out: &Option<PathBuf>, format: TraceFormat) -> crate::Result<i32> {
    let (system, base) = pick_settings(doc, o)?;
    let h = doc.system(&system)?;
    let mut cfg = base.as_ref().map(|b| b.config.clone()).unwrap_or_default();
    if let Some(v) = o.t_max {
        cfg.t_max = v;
    }
    if let Some(v) = o.step {
        cfg.step = v;
    }
    if let Some(v) = o.max_jumps {
        cfg.max_jumps = v;
    }
    if let Some(i) = &o.integrator {
        cfg.integrator = i.parse::<Integrator>()?;
    }
    cfg.check()?;
    let init: UnderlyingPoint = match (&o.init, &base) {
        (Some(spec), _) => config::parse_init(h.space(), spec, 1e-9)?,
        (None, Some(b)) => b.init.clone(),
        (None, None) => return Err(Error::Config("no initial state; pass --init MODE:coords".into())),
    };
    let policy = match (&o.policy, &base) {
        (Some(p), _) => JumpPolicy::parse(p, o.seed.unwrap_or(0))?,
        (None, Some(b)) => match (b.policy, o.seed) {
            (JumpPolicy::SeededRandom(_), Some(s)) => JumpPolicy::SeededRandom(s),
            (p, _) => p,
        },
        (None, None) => JumpPolicy::Priority,
    };
    let sim = simulate(h, &init, policy, &cfg)?;
    let e = &sim.execution;
    let mut w = sink(out)?;
    match format {
        TraceFormat::Csv => write_csv(e, h.space(), &mut w)?,
        TraceFormat::Json => {
            let v = trace_json(e, h.space(), &sim.status.to_string());
            writeln!(w, "{}", serde_json::to_string_pretty(&v).expect("serializable trace")).map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)?;
    drop(w);
    let check = validate_execution(e, h, cfg.validation_tol());
    let (mode, x) = e.last_state().expect("at least one segment");
    let summary = format!(
        "system {system}: {} jumps, final state {}:{x:?} at t = {}, status {}, validation {}",
        e.jumps.len(),
        h.space().mode(mode).name,
        e.track.last().expect("nonempty track"),
        sim.status,
        if check.passed() { "PASS" } else { "FAIL" }
    );
    if out.is_some() {
        println!("{summary}");
    } else {
        eprintln!("{summary}");
    }
    Ok(match sim.status {
        Status::Stuck => EXIT_RUNTIME,
        _ if !check.passed() => EXIT_SEMANTIC,
        _ => EXIT_OK,
    })
}

fn cmd_check_map(
    path: &FsPath,
    name: &str,
    systems: Option<(&str, &str)>,
    executions: usize,
    opts: &CheckOpts,
) -> crate::Result<i32> {
    let doc = config::load_file(path)?;
    let tol = opts.tol.unwrap_or_else(default_tol);
    let f = doc.map(name)?;
    let mut reports = vec![validate_map(f, opts.samples, tol)];
    let mut extra = json!(null);
    if let Some((s, d)) = systems {
        let (src, dst) = (doc.system(s)?, doc.system(d)?);
        let hyp = check_hds_map(f, src, dst, opts.samples, tol);
        let hyp_ok = hyp.passed() && reports[0].passed();
        reports.push(hyp);
        if hyp_ok {
            let cfg = doc
                .simulations
                .iter()
                .find(|x| x.value.system == s)
                .map(|x| x.value.config.clone())
                .unwrap_or(SimConfig {
                    t_max: 3.0,
                    ..SimConfig::default()
                });
            let mut concl = Report::new("pushed-forward executions");
            let mut rng = ChaCha8Rng::seed_from_u64(0xe4ec);
            let modes = src.space().modes();
            for k in 0..executions {
                let m = k % modes.len();
                let x = modes[m].space.sample(1 + k / modes.len(), &mut rng).pop().expect("one sample");
                let init = UnderlyingPoint::new(src.space(), m, x, 0.0)?;
                let sim = simulate(src, &init, JumpPolicy::Priority, &cfg)?;
                if sim.status == Status::Stuck {
                    continue;
                }
                let pushed = pushforward_execution(f, &sim.execution)?;
                concl.absorb(
                    &format!("execution {k} from {}", modes[m].name),
                    validate_execution(&pushed, dst, 10.0 * cfg.validation_tol()),
                );
            }
            reports.push(concl);
        } else {
            extra = json!({"conclusion": "not attempted: hypotheses failed"});
            if !opts.json {
                println!("conclusion: not attempted (hypotheses failed)");
            }
        }
    }
    emit(&reports, opts.json, extra).map_err(io_err)?;
    Ok(verdict(&reports))
}

fn cmd_network(
    path: &FsPath,
    name: &str,
    apply: bool,
    check_theorem: bool,
    out: &Option<PathBuf>,
    opts: &CheckOpts,
) -> crate::Result<i32> {
    let doc = config::load_file(path)?;
    let tol = opts.tol.unwrap_or_else(default_tol);
    if check_theorem {
        let entry = match doc.network_map(name) {
            Ok(e) => e,
            Err(_) => {
                doc.network(name)?;
                let maps: Vec<_> = doc.network_maps.iter().filter(|m| m.value.src == name).collect();
                match maps.as_slice() {
                    [m] => &m.value,
                    [] => return Err(Error::Config(format!("no network map starts at network `{name}`"))),
                    _ => return Err(Error::Config(format!("several network maps start at `{name}`; name one"))),
                }
            }
        };
        let (src, dst) = (doc.network(&entry.src)?, doc.network(&entry.dst)?);
        let w = doc.node_systems(src)?;
        let u = doc.node_systems(dst)?;
        let ind = induced_system_map(&entry.map, &src.network, &dst.network, &w, &u, opts.samples, tol);
        let mut reports = vec![ind.hypotheses.clone()];
        match &ind.conclusion {
            Some(c) => reports.push(c.clone()),
            None => {
                if !opts.json {
                    println!("conclusion: not attempted (hypotheses failed)");
                }
            }
        }
        let extra = json!({
            "hypotheses": ind.hypotheses.passed(),
            "conclusion": ind.conclusion.as_ref().map(Report::passed),
        });
        emit(&reports, opts.json, extra).map_err(io_err)?;
        return Ok(if ind.conclusion.is_none() {
            verdict(&reports).max(EXIT_SEMANTIC)
        } else {
            verdict(&reports)
        });
    }
    let entry = doc.network(name)?;
    let mut reports = vec![validate_network(&entry.network, opts.samples, tol)];
    if apply {
        let w = doc.node_systems(entry)?;
        if w.is_empty() {
            return Err(Error::Config(format!("network `{name}` names no open systems for its nodes")));
        }
        let o = apply_interconnection(&entry.network, &w)?;
        let r = crl_check(&o, opts.samples, tol);
        reports.push(r);
        write_evaluations(&o, opts.samples, out)?;
    }
    if out.is_some() || !apply {
        emit(&reports, opts.json, json!(null)).map_err(io_err)?;
    }
    Ok(verdict(&reports))
}

/// CSV of `mode, q…, F(q)…` at sampled total-space points.
fn write_evaluations(o: &OpenSystem, nsamples: usize, out: &Option<PathBuf>) -> crate::Result<()> {
    let tot = o.carrier().tot();
    let mut rng = ChaCha8Rng::seed_from_u64(0xa991);
    let mut w = csv::Writer::from_writer(sink(out)?);
    let err = |e: csv::Error| Error::Config(format!("writing evaluations: {e}"));
    let qmax = tot.modes().iter().map(|m| m.space.dim()).max().unwrap_or(0);
    let fmax = (0..tot.modes().len()).map(|m| o.carrier().st_dim(m)).max().unwrap_or(0);
    let mut header = vec!["mode".to_string()];
    header.extend((0..qmax).map(|i| format!("q{i}")));
    header.extend((0..fmax).map(|i| format!("f{i}")));
    w.write_record(&header).map_err(err)?;
    for (m, mode) in tot.modes().iter().enumerate() {
        for q in mode.space.sample(nsamples, &mut rng) {
            let v = o.field(m).eval(&q);
            if v.iter().any(|c| !c.is_finite()) {
                return Err(Error::NonFinite(format!("field at `{}` is {v:?} at {q:?}", mode.name)));
            }
            let mut row = vec![mode.name.clone()];
            row.extend((0..qmax).map(|i| q.get(i).map(|c| format!("{c}")).unwrap_or_default()));
            row.extend((0..fmax).map(|i| v.get(i).map(|c| format!("{c}")).unwrap_or_default()));
            w.write_record(&row).map_err(err)?;
        }
    }
    w.flush().map_err(io_err)?;
    Ok(())
}
