use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use gicshield::acopf::{evaluate_placement, EvalOptions, EvaluationReport};
use gicshield::gic::{effective_gic_at, FloatingPolicy};
use gicshield::harness::{brute_force, placement_labels, run_benchmark, write_rows};
use gicshield::netmodel::DcNodeKind;
use gicshield::{
    bundled, derive_dc_network, load_network, materialize_xi, run_admm, run_sl, AcNetwork, BenchmarkOptions,
    GicError, GmdScenario, Placement, SolveStatus,
};
use serde::Serialize;

use crate::config::{Config, NlpOverrides};
use crate::{
    BenchmarkArgs, Cli, Command, EnumerateArgs, EvaluateArgs, GicArgs, ScenarioArgs, SolveAlgorithm, SolveArgs,
    SolverFailure,
};

/// Settings shared by every subcommand after merging config and flags.
struct Session {
    cfg: Config,
    nlp: NlpOverrides,
}

impl Session {
    fn network(&self, arg: &str) -> Result<AcNetwork> {
        let mut ac = if Path::new(arg).exists() {
            load_network(arg).with_context(|| format!("loading {arg}"))?
        } else if let Some(ac) = bundled::by_name(arg) {
            ac
        } else {
            return Err(GicError::Validation(format!("{arg} is neither a file nor a bundled network")).into());
        };
        self.nlp.apply_to_network(&mut ac);
        Ok(ac)
    }

    fn eval(&self, ac: &AcNetwork) -> EvalOptions {
        let mut e = EvalOptions::for_network(ac);
        if let Some(r) = self.cfg.eval.restarts {
            e.restarts = r;
        }
        if let Some(f) = self.cfg.eval.floating {
            e.floating = f;
        }
        e
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let cfg = Config::load(cli.config.as_deref())?;
    let mut nlp = cfg.nlp.clone();
    nlp.merge(&NlpOverrides { tol: cli.nlp_tol, max_outer: cli.nlp_max_iters, max_inner: None });
    let ctx = Session { cfg, nlp };
    match &cli.command {
        Command::Solve(a) => solve(&ctx, a),
        Command::Evaluate(a) => evaluate(&ctx, a),
        Command::Gic(a) => gic(&ctx, a),
        Command::Benchmark(a) => benchmark(&ctx, a),
        Command::Enumerate(a) => enumerate(&ctx, a),
    }
}

fn scenario(args: &ScenarioArgs) -> Result<GmdScenario> {
    match (&args.xi_file, args.efield) {
        (Some(path), _) => Ok(GmdScenario::from_xi_csv(path).with_context(|| format!("reading {}", path.display()))?),
        (None, Some(e)) => Ok(GmdScenario::field(e, args.direction)),
        (None, None) => Err(GicError::Validation("give --efield or --xi-file".into()).into()),
    }
}

/// Substation labels separated by commas or semicolons.
fn parse_placement(ac: &AcNetwork, text: &str) -> Result<Placement> {
    let labels = text
        .split([',', ';'])
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<i64>().map_err(|_| GicError::Validation(format!("bad substation label {s:?}"))))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Placement(ac.placement_from_labels(&labels)?))
}

fn stdout() -> BufWriter<io::StdoutLock<'static>> {
    BufWriter::new(io::stdout().lock())
}

fn write_json<T: Serialize>(value: &T) -> Result<()> {
    let mut out = stdout();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct SolveRecord {
    algorithm: &'static str,
    placement: String,
    objective: f64,
    gen_cost: f64,
    shed_penalty: f64,
    iterations: usize,
    converged: bool,
    status: String,
}

fn solve(ctx: &Session, a: &SolveArgs) -> Result<()> {
    let ac = ctx.network(&a.network.network)?;
    let dc = derive_dc_network(&ac)?;
    let sc = scenario(&a.scenario)?;
    let eval = ctx.eval(&ac);

    let (name, z, iterations, converged) = match a.algorithm {
        SolveAlgorithm::Admm => {
            let mut o = ctx.cfg.admm.clone();
            ctx.nlp.apply_to_admm(&mut o);
            o.rho0 = a.rho0.unwrap_or(o.rho0);
            o.nrb.beta = a.beta.unwrap_or(o.nrb.beta);
            o.nrb.tau = a.tau.unwrap_or(o.nrb.tau);
            o.nrb.enabled &= !a.no_nrb;
            o.epsilon = a.eps.unwrap_or(o.epsilon);
            o.max_iters = a.max_iters.unwrap_or(o.max_iters);
            o.validate()?;
            let out = run_admm(&ac, &dc, &sc, a.budget, &o)?;
            if let Some(path) = &a.trace {
                out.trace.write_csv(create(path)?)?;
            }
            let it = out.iterations();
            ("admm", out.placement, it, out.converged)
        }
        SolveAlgorithm::Sl => {
            let mut o = ctx.cfg.sl.clone();
            o.n_samples = a.samples.unwrap_or(o.n_samples);
            o.a = a.step_a.unwrap_or(o.a);
            o.seed = a.seed.unwrap_or(o.seed);
            o.epsilon = a.eps.unwrap_or(o.epsilon);
            o.max_iters = a.max_iters.unwrap_or(o.max_iters);
            o.eval = Some(eval);
            o.validate()?;
            let out = run_sl(&ac, &dc, &sc, a.budget, &o)?;
            if let Some(path) = &a.trace {
                out.trace.write_csv(create(path)?)?;
            }
            let it = out.iterations();
            ("sl", out.placement, it, true)
        }
    };

    let r = evaluate_placement(&ac, &dc, &sc, &z, a.budget, &eval)?;
    let ok = converged && r.solver_status == SolveStatus::OptimalTolerance;
    let rec = SolveRecord {
        algorithm: name,
        placement: placement_labels(&ac, &z),
        objective: r.objective,
        gen_cost: r.gen_cost,
        shed_penalty: r.shed_penalty,
        iterations,
        converged,
        status: if ok { "ok".into() } else { "not_converged".into() },
    };
    if a.json {
        write_json(&rec)?;
    } else {
        let mut w = csv::Writer::from_writer(stdout());
        w.serialize(&rec)?;
        w.flush()?;
    }
    if !converged {
        return Err(SolverFailure(format!("{name} stopped after {iterations} iterations without converging")).into());
    }
    if r.solver_status != SolveStatus::OptimalTolerance {
        return Err(SolverFailure(format!("re-evaluation ended with {}", r.solver_status)).into());
    }
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn join<T: std::fmt::Debug>(v: impl IntoIterator<Item = T>) -> String {
    v.into_iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(";")
}

/// CSV form of an evaluation report; vectors are joined with `;`.
#[derive(Debug, Serialize)]
struct ReportRow {
    placement: String,
    objective: f64,
    gen_cost: f64,
    shed_penalty: f64,
    max_balance_residual: f64,
    solver_status: &'static str,
    max_residual: f64,
    iterations: usize,
    i_eff: String,
    /// Branch labels of transformers above their effective-GIC limit.
    violations: String,
}

impl ReportRow {
    fn new(ac: &AcNetwork, r: &EvaluationReport) -> Self {
        Self {
            placement: placement_labels(ac, &r.placement),
            objective: r.objective,
            gen_cost: r.gen_cost,
            shed_penalty: r.shed_penalty,
            max_balance_residual: r.max_balance_residual,
            solver_status: r.solver_status.as_str(),
            max_residual: r.max_residual,
            iterations: r.iterations,
            i_eff: join(&r.i_eff),
            violations: join(r.violations.iter().map(|&(t, _, _)| ac.branches[ac.transformers[t]].label)),
        }
    }
}

fn evaluate(ctx: &Session, a: &EvaluateArgs) -> Result<()> {
    let ac = ctx.network(&a.network.network)?;
    let dc = derive_dc_network(&ac)?;
    let sc = scenario(&a.scenario)?;
    let z = parse_placement(&ac, &a.placement.placement)?;
    let r = evaluate_placement(&ac, &dc, &sc, &z, a.budget, &ctx.eval(&ac))?;
    if a.json {
        #[derive(Serialize)]
        struct Record<'a> {
            placement_labels: Vec<i64>,
            #[serde(flatten)]
            report: &'a EvaluationReport,
        }
        write_json(&Record { placement_labels: ac.placement_labels(&r.placement.0), report: &r })?;
    } else {
        let mut w = csv::Writer::from_writer(stdout());
        w.serialize(ReportRow::new(&ac, &r))?;
        w.flush()?;
    }
    if r.solver_status != SolveStatus::OptimalTolerance {
        return Err(SolverFailure(format!("AC-OPF ended with {}", r.solver_status)).into());
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct GicRow {
    kind: &'static str,
    label: i64,
    quantity: &'static str,
    value: f64,
}

fn gic(ctx: &Session, a: &GicArgs) -> Result<()> {
    let ac = ctx.network(&a.network.network)?;
    let dc = derive_dc_network(&ac)?;
    let xi = materialize_xi(&dc, &scenario(&a.scenario)?)?;
    let z = parse_placement(&ac, &a.placement.placement)?;
    let policy = if a.pin_reference { FloatingPolicy::PinReference } else { FloatingPolicy::Reject };
    let (sol, eff) = effective_gic_at(&ac, &dc, &xi, &z.as_f64(), policy)?;

    let mut w = csv::Writer::from_writer(stdout());
    for (m, node) in dc.nodes.iter().enumerate() {
        match node.kind {
            DcNodeKind::Bus(b) => {
                w.serialize(GicRow { kind: "bus", label: ac.buses[b].label, quantity: "vd", value: sol.vd[m] })?
            }
            DcNodeKind::Substation(s) => {
                let label = ac.substations[s].label;
                w.serialize(GicRow { kind: "substation", label, quantity: "vd", value: sol.vd[m] })?;
                w.serialize(GicRow { kind: "substation", label, quantity: "ground_current", value: sol.ground_current[m] })?;
            }
        }
    }
    for (k, e) in dc.edges.iter().enumerate() {
        w.serialize(GicRow { kind: "edge", label: e.label, quantity: "id_flow", value: sol.id_flow[k] })?;
    }
    for t in 0..ac.n_transformers() {
        let label = ac.branches[ac.transformers[t]].label;
        w.serialize(GicRow { kind: "transformer", label, quantity: "theta", value: eff.theta[t] })?;
        w.serialize(GicRow { kind: "transformer", label, quantity: "i_eff", value: eff.i_eff[t] })?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct TableRow {
    placement: String,
    bits: String,
    objective: f64,
    gen_cost: f64,
    shed_penalty: f64,
    solver_status: &'static str,
    best: bool,
}

fn enumerate(ctx: &Session, a: &EnumerateArgs) -> Result<()> {
    let ac = ctx.network(&a.network.network)?;
    let dc = derive_dc_network(&ac)?;
    let sc = scenario(&a.scenario)?;
    let bf = brute_force(&ac, &dc, &sc, a.budget, &ctx.eval(&ac), a.force)?;
    let rows: Vec<TableRow> = bf
        .table
        .iter()
        .map(|r| TableRow {
            placement: placement_labels(&ac, &r.placement),
            bits: r.placement.bitstring(),
            objective: r.objective,
            gen_cost: r.gen_cost,
            shed_penalty: r.shed_penalty,
            solver_status: r.solver_status.as_str(),
            best: r.placement == bf.best.placement,
        })
        .collect();
    if a.json {
        return write_json(&rows);
    }
    let mut w = csv::Writer::from_writer(stdout());
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn benchmark(ctx: &Session, a: &BenchmarkArgs) -> Result<()> {
    let section = ctx.cfg.benchmark.clone().unwrap_or_default();
    let names = if a.networks.is_empty() { section.networks.clone() } else { a.networks.clone() };
    if names.is_empty() {
        bail!(GicError::Validation("benchmark needs at least one --network".into()));
    }
    let networks = names
        .iter()
        .map(|n| {
            let ac = ctx.network(n)?;
            let name = if Path::new(n).exists() { ac.config.name.clone() } else { n.clone() };
            Ok((name, ac))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut admm = ctx.cfg.admm.clone();
    ctx.nlp.apply_to_admm(&mut admm);
    let mut sl = ctx.cfg.sl.clone();
    sl.seed = a.seed.unwrap_or(sl.seed);
    let opts = BenchmarkOptions {
        efields: a.efields.clone().unwrap_or(section.efields),
        direction: a.direction.unwrap_or(section.direction),
        budgets: a.budgets.clone().unwrap_or(section.budgets),
        algorithms: a.algorithms.clone().unwrap_or(section.algorithms),
        admm,
        sl,
        eval: None,
        jobs: a.jobs.unwrap_or(section.jobs),
        force: a.force || section.force,
        record_wall_time: section.record_wall_time && !a.no_timing,
    };
    if ctx.cfg.eval.restarts.is_some() || ctx.cfg.eval.floating.is_some() {
        eprintln!("warning: [eval] settings are not applied to benchmark cells");
    }
    let rows = run_benchmark(&networks, &opts)?;
    if a.json {
        let text = serde_json::to_string_pretty(&rows)?;
        match &a.output {
            Some(p) => writeln!(create(p)?, "{text}")?,
            None => writeln!(stdout(), "{text}")?,
        }
        return Ok(());
    }
    match &a.output {
        Some(p) => write_rows(&rows, create(p)?)?,
        None => write_rows(&rows, stdout())?,
    }
    Ok(())
}
