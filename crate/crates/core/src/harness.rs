//! Brute-force oracle and benchmark runner.
//!
//! Every benchmark cell runs one algorithm on one (instance, E, V) and then
//! re-evaluates the returned placement from scratch, so reported objectives
//! never come from an algorithm's internal bookkeeping.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::acopf::{evaluate_placement, EvalOptions, EvaluationReport, Evaluator};
use crate::admm::{run_admm, AdmmOptions};
use crate::error::{GicError, Result};
use crate::netmodel::{derive_dc_network, AcNetwork, DcNetwork, GmdScenario};
use crate::nlpsolve::SolveStatus;
use crate::placement::Placement;
use crate::slearn::{run_sl, SlOptions};

/// Largest enumeration run without `force`.
pub const BRUTE_FORCE_GUARD: u64 = 4096;

/// Number of placements with at most `budget` ones over `s` substations.
pub fn count_placements(s: usize, budget: usize) -> u64 {
    let mut total = 0u64;
    let mut c = 1u64;
    for k in 0..=budget.min(s) {
        if k > 0 {
            c = c * (s - k + 1) as u64 / k as u64;
        }
        total = total.saturating_add(c);
    }
    total
}

/// Budget-feasible placements in lexicographic order.
pub fn feasible_placements(s: usize, budget: usize) -> Vec<Placement> {
    let mut out = Vec::new();
    let mut z = vec![0u8; s];
    fn rec(i: usize, left: usize, z: &mut Vec<u8>, out: &mut Vec<Placement>) {
        if i == z.len() {
            out.push(Placement(z.clone()));
            return;
        }
        z[i] = 0;
        rec(i + 1, left, z, out);
        if left > 0 {
            z[i] = 1;
            rec(i + 1, left - 1, z, out);
            z[i] = 0;
        }
    }
    rec(0, budget, &mut z, &mut out);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BruteForce {
    pub best: EvaluationReport,
    /// One report per feasible placement, lexicographic order.
    pub table: Vec<EvaluationReport>,
}

/// Evaluates every feasible placement. The optimum is taken over converged
/// evaluations; ties go to the lexicographically smallest placement.
pub fn brute_force(
    ac: &AcNetwork,
    dc: &DcNetwork,
    scenario: &GmdScenario,
    budget: usize,
    eval: &EvalOptions,
    force: bool,
) -> Result<BruteForce> {
    let evaluator = Evaluator::new(ac, dc, scenario, budget, *eval)?;
    brute_force_with(&evaluator, force)
}

pub fn brute_force_with(evaluator: &Evaluator, force: bool) -> Result<BruteForce> {
    let s = evaluator.ac.n_substations();
    let needed = count_placements(s, evaluator.budget);
    if needed > BRUTE_FORCE_GUARD && !force {
        return Err(GicError::GuardExceeded { needed, limit: BRUTE_FORCE_GUARD });
    }
    let table = feasible_placements(s, evaluator.budget)
        .par_iter()
        .map(|z| evaluator.evaluate(z))
        .collect::<Result<Vec<_>>>()?;
    let mut best: Option<&EvaluationReport> = None;
    for r in table.iter().filter(|r| r.solver_status == SolveStatus::OptimalTolerance) {
        if best.is_none_or(|b| r.objective < b.objective) {
            best = Some(r);
        }
    }
    let best = best
        .cloned()
        .ok_or_else(|| GicError::Solver("no placement was evaluated to convergence".into()))?;
    Ok(BruteForce { best, table })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Admm,
    Sl,
    Enumerate,
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::Admm => "admm",
            Algorithm::Sl => "sl",
            Algorithm::Enumerate => "enumerate",
        })
    }
}

impl FromStr for Algorithm {
    type Err = GicError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "admm" => Ok(Algorithm::Admm),
            "sl" => Ok(Algorithm::Sl),
            "enumerate" | "brute" => Ok(Algorithm::Enumerate),
            other => Err(GicError::validation(format!("unknown algorithm '{other}' (admm, sl, enumerate)"))),
        }
    }
}

/// One CSV row. Column order is fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub instance: String,
    #[serde(rename = "E")]
    pub e: f64,
    pub direction: f64,
    #[serde(rename = "V")]
    pub v: usize,
    pub algorithm: Algorithm,
    pub objective: f64,
    pub gen_cost: f64,
    pub shed_penalty: f64,
    /// Substation labels separated by `;`.
    pub placement: String,
    /// Seconds spent in the algorithm (re-evaluation excluded).
    pub wall_time: f64,
    pub iterations: usize,
    /// `ok`, `not_converged`, or `error: ...`.
    pub status: String,
}

pub const BENCHMARK_COLUMNS: [&str; 12] = [
    "instance",
    "E",
    "direction",
    "V",
    "algorithm",
    "objective",
    "gen_cost",
    "shed_penalty",
    "placement",
    "wall_time",
    "iterations",
    "status",
];

pub fn write_rows<W: Write>(rows: &[BenchmarkRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    if rows.is_empty() {
        out.write_record(BENCHMARK_COLUMNS)?;
    }
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkOptions {
    pub efields: Vec<f64>,
    pub direction: f64,
    pub budgets: Vec<usize>,
    pub algorithms: Vec<Algorithm>,
    pub admm: AdmmOptions,
    pub sl: SlOptions,
    /// Evaluation settings; `None` takes them from each network's config block.
    pub eval: Option<EvalOptions>,
    /// Cells run concurrently; 0 means one per available core.
    pub jobs: usize,
    /// Allow enumeration beyond [`BRUTE_FORCE_GUARD`].
    pub force: bool,
    /// Write measured wall times; when false the column is 0 and the CSV is
    /// reproducible byte for byte.
    pub record_wall_time: bool,
}

impl Default for BenchmarkOptions {
    fn default() -> Self {
        Self {
            efields: vec![5.0, 10.0, 15.0, 20.0],
            direction: 45.0,
            budgets: vec![1, 2],
            algorithms: vec![Algorithm::Admm, Algorithm::Sl, Algorithm::Enumerate],
            admm: AdmmOptions::default(),
            sl: SlOptions::default(),
            eval: None,
            jobs: 1,
            force: false,
            record_wall_time: true,
        }
    }
}

/// Substation labels of the blocked substations, `;`-separated.
pub fn placement_labels(ac: &AcNetwork, z: &Placement) -> String {
    z.indices().iter().map(|&i| ac.substations[i].label.to_string()).collect::<Vec<_>>().join(";")
}

struct Cell<'a> {
    name: &'a str,
    ac: &'a AcNetwork,
    dc: &'a DcNetwork,
    e: f64,
    v: usize,
    algorithm: Algorithm,
}

/// Runs every (instance, E, V, algorithm) cell and returns rows in that
/// nesting order. Cell failures are reported in the row's status.
pub fn run_benchmark(networks: &[(String, AcNetwork)], opts: &BenchmarkOptions) -> Result<Vec<BenchmarkRow>> {
    opts.admm.validate()?;
    opts.sl.validate()?;
    let dcs = networks.iter().map(|(_, ac)| derive_dc_network(ac)).collect::<Result<Vec<_>>>()?;
    let mut cells = Vec::new();
    for ((name, ac), dc) in networks.iter().zip(&dcs) {
        for &e in &opts.efields {
            for &v in &opts.budgets {
                for &algorithm in &opts.algorithms {
                    cells.push(Cell { name, ac, dc, e, v, algorithm });
                }
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs)
        .build()
        .map_err(|e| GicError::validation(format!("thread pool: {e}")))?;
    Ok(pool.install(|| cells.par_iter().map(|c| run_cell(c, opts)).collect()))
}

fn run_cell(c: &Cell, opts: &BenchmarkOptions) -> BenchmarkRow {
    let scenario = GmdScenario::field(c.e, opts.direction);
    let eval = opts.eval.unwrap_or_else(|| EvalOptions::for_network(c.ac));
    let mut row = BenchmarkRow {
        instance: c.name.to_string(),
        e: c.e,
        direction: opts.direction,
        v: c.v,
        algorithm: c.algorithm,
        objective: f64::NAN,
        gen_cost: f64::NAN,
        shed_penalty: f64::NAN,
        placement: String::new(),
        wall_time: 0.0,
        iterations: 0,
        status: String::new(),
    };

    let start = Instant::now();
    let found: Result<(Placement, usize, bool)> = match c.algorithm {
        Algorithm::Admm => run_admm(c.ac, c.dc, &scenario, c.v, &opts.admm).map(|o| {
            let it = o.iterations();
            (o.placement, it, o.converged)
        }),
        Algorithm::Sl => {
            let mut sl = opts.sl.clone();
            sl.eval = Some(sl.eval.unwrap_or(eval));
            run_sl(c.ac, c.dc, &scenario, c.v, &sl).map(|o| {
                let it = o.iterations();
                (o.placement, it, true)
            })
        }
        Algorithm::Enumerate => {
            brute_force(c.ac, c.dc, &scenario, c.v, &eval, opts.force).map(|b| (b.best.placement, b.table.len(), true))
        }
    };
    if opts.record_wall_time {
        row.wall_time = start.elapsed().as_secs_f64();
    }

    let (z, iterations, converged) = match found {
        Ok(f) => f,
        Err(e) => {
            log::warn!("{} E={} V={} {}: {e}", c.name, c.e, c.v, c.algorithm);
            row.status = format!("error: {e}");
            return row;
        }
    };
    row.iterations = iterations;
    row.placement = placement_labels(c.ac, &z);
    match evaluate_placement(c.ac, c.dc, &scenario, &z, c.v, &eval) {
        Ok(r) => {
            row.objective = r.objective;
            row.gen_cost = r.gen_cost;
            row.shed_penalty = r.shed_penalty;
            row.status = if converged && r.solver_status == SolveStatus::OptimalTolerance {
                "ok".into()
            } else {
                "not_converged".into()
            };
        }
        Err(e) => row.status = format!("error: re-evaluation failed: {e}"),
    }
    row
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn placement_counts() {
        assert_eq!(count_placements(3, 0), 1);
        assert_eq!(count_placements(3, 3), 8);
        assert_eq!(count_placements(6, 2), 22);
        assert_eq!(count_placements(13, 13), 8192);
        assert_eq!(count_placements(4, 9), 16);
    }

    #[test]
    fn enumeration_matches_count_and_order() {
        for s in 0..7 {
            for v in 0..=s {
                let zs = feasible_placements(s, v);
                assert_eq!(zs.len() as u64, count_placements(s, v));
                assert!(zs.windows(2).all(|w| w[0] < w[1]));
                assert!(zs.iter().all(|z| z.count() <= v));
            }
        }
    }

    #[test]
    fn algorithm_names_round_trip() {
        for a in [Algorithm::Admm, Algorithm::Sl, Algorithm::Enumerate] {
            assert_eq!(a.to_string().parse::<Algorithm>().unwrap(), a);
        }
        assert!("scip".parse::<Algorithm>().is_err());
    }

    #[test]
    fn empty_csv_still_has_the_header() {
        let mut buf = Vec::new();
        write_rows(&[], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().trim(), BENCHMARK_COLUMNS.join(","));
    }
}
