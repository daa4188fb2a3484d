//! Parameter sweeps with continuation, branch tracing and result caching.
//!
//! Each direction walks the grid in order, warm-starting every point from
//! the branch it followed at the previous point. Both directions report all
//! branches they reach; the table shows the minimum-efficiency branch of the
//! union and flags points where the two directions followed different
//! branches.

mod cache;
mod config;
mod selfcheck;
mod table;

use serde::{Deserialize, Serialize};

pub use cache::{key_of, Cache, SOLVER_VERSION};
pub use config::{Axis, BaseSpec, ClassSpec, Directions, OracleSpec, Outputs, SweepConfig};
pub use selfcheck::{checks_to_csv, selfcheck, Check};
pub use table::{emit, fmt12, parse_csv, parse_json, render, round12, to_csv, to_json, Format, Row, COLUMNS};

use crate::error::{Error, Result};
use crate::oracle::{self, Dims, EmpiricalStats, OracleConfig, OracleInput};
use crate::par::Execution;
use crate::replica::{
    order_branches, same_state, solve_from, Branch, FixedPointState, ScatterGainLaw, SolverConfig,
    StartKind,
};

/// Relative distance below which two states are the same branch.
const BRANCH_TOL: f64 = 1e-7;

/// Branches found at one point by one direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointOutcome {
    /// Sorted by ascending `se_total`.
    pub branches: Vec<Branch>,
    /// Index of the branch continued from the previous point.
    pub followed: usize,
}

impl PointOutcome {
    pub fn followed_state(&self) -> &FixedPointState {
        &self.branches[self.followed].state
    }
}

/// Per-direction results at one grid point; `None` when the direction was
/// not run, `Err` with the solver message on failure.
#[derive(Debug, Clone, PartialEq)]
pub struct PointTrace {
    pub ascending: Option<std::result::Result<PointOutcome, String>>,
    pub descending: Option<std::result::Result<PointOutcome, String>>,
    /// Union of both directions' branches, sorted.
    pub branches: Vec<Branch>,
}

/// Replica values matching a finite-size run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReference {
    pub eps_awgn: f64,
    pub eps_user: f64,
    /// `se_total / beta`, bits per transmitted symbol.
    pub se_per_symbol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleRecord {
    pub grid_index: usize,
    pub axis_value: f64,
    pub first_seed: u64,
    pub dims: Dims,
    pub input: OracleInput,
    pub sigma2: f64,
    pub stats: Option<EmpiricalStats>,
    pub reference: Option<OracleReference>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRun {
    pub rows: Vec<Row>,
    pub points: Vec<PointTrace>,
    pub oracle: Vec<OracleRecord>,
    /// Grid points without a converged branch plus failed oracle runs.
    pub failures: usize,
}

/// Solves one point, consulting and filling the cache.
pub fn solve_point(
    spec: &BaseSpec,
    solver: &SolverConfig,
    warm: Option<&FixedPointState>,
    cache: Option<&Cache>,
) -> Result<PointOutcome> {
    let key = match cache {
        Some(_) => Some(key_of(&(SOLVER_VERSION, solver, spec, warm))?),
        None => None,
    };
    if let (Some(c), Some(k)) = (cache, &key) {
        if let Some(hit) = c.get::<PointOutcome>(k) {
            return Ok(hit);
        }
    }
    let params = spec.params()?;
    let branches = solve_from(&params, solver, warm)?;
    let followed = match warm {
        Some(_) => branches
            .iter()
            .position(|b| b.start == StartKind::Warm)
            .unwrap_or(0),
        None => 0,
    };
    let out = PointOutcome { branches, followed };
    if let (Some(c), Some(k)) = (cache, &key) {
        c.put(k, &out)?;
    }
    Ok(out)
}

type Trace = Vec<Option<std::result::Result<PointOutcome, String>>>;

fn continuation(cfg: &SweepConfig, order: &[usize], cache: Option<&Cache>) -> Trace {
    let mut out: Trace = vec![None; cfg.grid.len()];
    let mut warm: Option<FixedPointState> = None;
    for &i in order {
        let spec = cfg.base.at(cfg.axis, cfg.grid[i]);
        let res = solve_point(&spec, &cfg.solver, warm.as_ref(), cache);
        if let Ok(o) = &res {
            warm = Some(o.followed_state().clone());
        }
        out[i] = Some(res.map_err(|e| e.to_string()));
    }
    out
}

fn merge(parts: &[Option<&PointOutcome>]) -> Vec<Branch> {
    let mut all: Vec<Branch> = Vec::new();
    for b in parts.iter().flatten().flat_map(|o| &o.branches) {
        if !all.iter().any(|a| same_state(&a.state, &b.state, BRANCH_TOL)) {
            all.push(b.clone());
        }
    }
    order_branches(&mut all);
    all
}

fn nan_row(axis_value: f64, spec: &BaseSpec) -> Row {
    let c = &spec.classes[0];
    Row {
        axis_value,
        snr_db: spec.snr_db,
        beta: spec.beta,
        mu: c.mu,
        gamma: c.gamma,
        se_total: f64::NAN,
        se_mmse_detector: f64::NAN,
        se_gaussian_ref: f64::NAN,
        r: f64::NAN,
        xi2: f64::NAN,
        zeta2: f64::NAN,
        eps_awgn: f64::NAN,
        eps_user: f64::NAN,
        n_branches: 0,
        hysteresis: false,
        converged: false,
        iterations: 0,
    }
}

/// Table row for the selected (first) branch.
pub fn make_row(axis_value: f64, spec: &BaseSpec, branches: &[Branch], gaussian_ref: f64, hysteresis: bool) -> Row {
    let mut row = nan_row(axis_value, spec);
    row.se_gaussian_ref = gaussian_ref;
    row.hysteresis = hysteresis;
    if let Some(sel) = branches.first() {
        let c = &sel.state.classes[0];
        row.se_total = sel.report.se_total;
        row.se_mmse_detector = sel.report.se_mmse_detector;
        row.r = sel.state.r;
        row.xi2 = c.xi2;
        row.zeta2 = c.zeta2;
        row.eps_awgn = c.eps_awgn;
        row.eps_user = c.eps_user;
        row.n_branches = branches.len();
        row.converged = sel.report.converged;
        row.iterations = sel.report.iterations;
    }
    row
}

/// Finite-size run at `spec` with dimensions from `o`, and the replica
/// solution of the matching large system (`beta = K/L`, `mu = M/N`,
/// `gamma = M/S`, first class gains and power).
pub fn oracle_point(
    spec: &BaseSpec,
    o: &OracleSpec,
    solver: &SolverConfig,
    seed: u64,
    exec: Execution,
) -> Result<(EmpiricalStats, Option<OracleReference>)> {
    let class = &spec.classes[0];
    let d = o.dims;
    let config = OracleConfig {
        dims: d,
        gains: ScatterGainLaw::new(class.gains.clone())?,
        chip_law: o.chip_law,
        input: o.input,
        sigma2: spec.sigma2(),
        power: class.power,
        first_seed: seed,
        seeds: o.seeds,
        draws: o.draws,
    };
    let stats = oracle::run(&config, exec)?;

    let mut large = BaseSpec::single(
        d.k as f64 / d.l as f64,
        spec.snr_db,
        d.m as f64 / d.n as f64,
        d.m as f64 / d.s as f64,
        match o.input {
            OracleInput::Gaussian => "gaussian",
            OracleInput::Qpsk => "qpsk",
        },
    );
    large.classes[0].power = class.power;
    large.classes[0].gains = class.gains.clone();
    let reference = solve_point(&large, solver, None, None).ok().map(|p| {
        let sel = &p.branches[0];
        OracleReference {
            eps_awgn: sel.state.classes[0].eps_awgn,
            eps_user: sel.state.classes[0].eps_user,
            se_per_symbol: sel.report.se_total / large.beta,
        }
    });
    Ok((stats, reference))
}

/// Runs the sweep described by `cfg`. Per-point failures are recorded in
/// the table; only configuration and I/O problems are returned as errors.
pub fn run_sweep(cfg: &SweepConfig) -> Result<SweepRun> {
    cfg.validate()?;
    let cache = cfg.outputs.cache.as_deref().map(Cache::open).transpose()?;
    let cache = cache.as_ref();
    let exec = cfg.execution;

    let mut order: Vec<usize> = (0..cfg.grid.len()).collect();
    order.sort_by(|&a, &b| cfg.grid[a].total_cmp(&cfg.grid[b]));
    let reversed: Vec<usize> = order.iter().rev().copied().collect();
    let (up, down) = match cfg.directions {
        Directions::Ascending => (true, false),
        Directions::Descending => (false, true),
        Directions::Both => (true, true),
    };

    let oracle_points: Vec<usize> = match (&cfg.oracle, cfg.oracle_in_sweep) {
        (Some(o), true) => (0..cfg.grid.len()).step_by(o.every).collect(),
        _ => Vec::new(),
    };

    let ((asc, desc), (gauss, oracle_records)) = exec.join(
        || {
            exec.join(
                || up.then(|| continuation(cfg, &order, cache)),
                || down.then(|| continuation(cfg, &reversed, cache)),
            )
        },
        || {
            exec.join(
                || {
                    exec.map(cfg.grid.len(), |i| {
                        let spec = cfg.base.at(cfg.axis, cfg.grid[i]).gaussian();
                        solve_point(&spec, &cfg.solver, None, cache)
                            .map_or(f64::NAN, |p| p.branches[0].report.se_total)
                    })
                },
                || {
                    exec.map_slice(&oracle_points, |&i| {
                        let spec = cfg.base.at(cfg.axis, cfg.grid[i]);
                        let o = cfg.oracle.as_ref().expect("oracle points need a spec");
                        let mut rec = OracleRecord {
                            grid_index: i,
                            axis_value: cfg.grid[i],
                            first_seed: cfg.seed,
                            dims: o.dims,
                            input: o.input,
                            sigma2: spec.sigma2(),
                            stats: None,
                            reference: None,
                            error: None,
                        };
                        match oracle_point(&spec, o, &cfg.solver, cfg.seed, exec) {
                            Ok((s, r)) => {
                                rec.stats = Some(s);
                                rec.reference = r;
                            }
                            Err(e) => rec.error = Some(e.to_string()),
                        }
                        rec
                    })
                },
            )
        },
    );

    let take = |t: &Option<Trace>, i: usize| t.as_ref().and_then(|v| v[i].clone());
    let mut rows = Vec::with_capacity(cfg.grid.len());
    let mut points = Vec::with_capacity(cfg.grid.len());
    for (i, &value) in cfg.grid.iter().enumerate() {
        let a = take(&asc, i);
        let d = take(&desc, i);
        let ok_a = a.as_ref().and_then(|r| r.as_ref().ok());
        let ok_d = d.as_ref().and_then(|r| r.as_ref().ok());
        let branches = merge(&[ok_a, ok_d]);
        let hysteresis = match (ok_a, ok_d) {
            (Some(x), Some(y)) => !same_state(x.followed_state(), y.followed_state(), BRANCH_TOL),
            _ => false,
        };
        let spec = cfg.base.at(cfg.axis, value);
        rows.push(make_row(value, &spec, &branches, gauss[i], hysteresis));
        points.push(PointTrace {
            ascending: a,
            descending: d,
            branches,
        });
    }
    let failures = rows.iter().filter(|r| !r.converged).count()
        + oracle_records.iter().filter(|r| r.error.is_some()).count();
    Ok(SweepRun {
        rows,
        points,
        oracle: oracle_records,
        failures,
    })
}

/// All branches at the base point of `cfg`, one row each.
pub fn solve_rows(cfg: &SweepConfig) -> Result<Vec<Row>> {
    cfg.validate()?;
    let spec = &cfg.base;
    let axis_value = match cfg.axis {
        Axis::SnrDb => spec.snr_db,
        Axis::Beta => spec.beta,
        Axis::Mu => spec.classes[0].mu,
        Axis::Gamma => spec.classes[0].gamma,
    };
    let p = solve_point(spec, &cfg.solver, None, None)?;
    let gauss = solve_point(&spec.gaussian(), &cfg.solver, None, None)?.branches[0].report.se_total;
    Ok((0..p.branches.len())
        .map(|k| {
            let mut row = make_row(axis_value, spec, &p.branches[k..], gauss, false);
            row.n_branches = p.branches.len();
            row
        })
        .collect())
}

pub const ORACLE_COLUMNS: [&str; 20] = [
    "grid_index",
    "axis_value",
    "first_seed",
    "k",
    "l",
    "n",
    "m",
    "s",
    "input",
    "sigma2",
    "n_realizations",
    "mse",
    "mse_std_err",
    "receive_mse",
    "receive_mse_std_err",
    "mi_per_antenna",
    "mi_std_err",
    "ref_eps_awgn",
    "ref_eps_user",
    "ref_se_per_symbol",
];

/// Oracle records as CSV or JSON.
pub fn render_oracle(records: &[OracleRecord], format: Format) -> Result<String> {
    if format == Format::Json {
        let mut text = serde_json::to_string_pretty(records)?;
        text.push('\n');
        return Ok(text);
    }
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(ORACLE_COLUMNS).map_err(io)?;
    for r in records {
        let nan = f64::NAN;
        let s = r.stats.as_ref();
        let pick = |f: fn(&EmpiricalStats) -> f64| s.map_or(nan, f);
        let reference = r.reference.as_ref();
        let rf = |f: fn(&OracleReference) -> f64| reference.map_or(nan, f);
        let input = match r.input {
            OracleInput::Gaussian => "gaussian",
            OracleInput::Qpsk => "qpsk",
        };
        w.write_record([
            r.grid_index.to_string(),
            fmt12(r.axis_value),
            r.first_seed.to_string(),
            r.dims.k.to_string(),
            r.dims.l.to_string(),
            r.dims.n.to_string(),
            r.dims.m.to_string(),
            r.dims.s.to_string(),
            input.to_string(),
            fmt12(r.sigma2),
            s.map_or(0, |s| s.n_realizations).to_string(),
            fmt12(pick(|s| s.mse.mean)),
            fmt12(pick(|s| s.mse.std_err)),
            fmt12(pick(|s| s.receive_mse.mean)),
            fmt12(pick(|s| s.receive_mse.std_err)),
            fmt12(pick(|s| s.mi_per_antenna.mean)),
            fmt12(pick(|s| s.mi_per_antenna.std_err)),
            fmt12(rf(|r| r.eps_awgn)),
            fmt12(rf(|r| r.eps_user)),
            fmt12(rf(|r| r.se_per_symbol)),
        ])
        .map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    Ok(String::from_utf8(bytes).expect("csv output is ascii"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn qpsk_sweep(grid: Vec<f64>, directions: Directions) -> SweepConfig {
        let mut c = SweepConfig::new(BaseSpec::single(2.0, 0.0, 1.0, 1.0, "qpsk"), Axis::SnrDb, grid);
        c.directions = directions;
        c
    }

    #[test]
    fn empty_grid_gives_empty_table() {
        let run = run_sweep(&qpsk_sweep(vec![], Directions::Both)).unwrap();
        assert!(run.rows.is_empty());
        assert_eq!(run.failures, 0);
    }

    #[test]
    fn hysteresis_marks_direction_disagreement() {
        let grid: Vec<f64> = (0..=10).map(|i| 2.0 * i as f64).collect();
        let run = run_sweep(&qpsk_sweep(grid, Directions::Both)).unwrap();
        assert_eq!(run.failures, 0);
        let mut flagged = 0;
        for (row, p) in run.rows.iter().zip(&run.points) {
            let a = p.ascending.as_ref().unwrap().as_ref().unwrap();
            let d = p.descending.as_ref().unwrap().as_ref().unwrap();
            let differ = !same_state(a.followed_state(), d.followed_state(), BRANCH_TOL);
            assert_eq!(row.hysteresis, differ);
            let min = p.branches.iter().map(|b| b.report.se_total).fold(f64::INFINITY, f64::min);
            assert_eq!(row.se_total, min);
            if row.hysteresis {
                flagged += 1;
                assert!(row.n_branches >= 2);
            }
        }
        assert!(flagged > 0);
    }

    #[test]
    fn descending_grid_order_is_kept() {
        let run = run_sweep(&qpsk_sweep(vec![10.0, 5.0, 0.0], Directions::Ascending)).unwrap();
        let x: Vec<f64> = run.rows.iter().map(|r| r.axis_value).collect();
        assert_eq!(x, vec![10.0, 5.0, 0.0]);
        assert!(run.rows[0].se_total > run.rows[2].se_total);
    }

    #[test]
    fn warm_cache_reproduces_cold_run() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = qpsk_sweep(vec![4.0, 8.0, 12.0, 16.0], Directions::Both);
        cfg.outputs.cache = Some(dir.path().join("cache.jsonl"));
        let cold = run_sweep(&cfg).unwrap();
        let n = Cache::open(cfg.outputs.cache.as_ref().unwrap()).unwrap().len();
        assert!(n >= 8);
        let warm = run_sweep(&cfg).unwrap();
        assert_eq!(to_csv(&cold.rows).unwrap(), to_csv(&warm.rows).unwrap());
        assert_eq!(cold.rows, warm.rows);
        assert_eq!(Cache::open(cfg.outputs.cache.as_ref().unwrap()).unwrap().len(), n);
        let uncached = run_sweep(&qpsk_sweep(vec![4.0, 8.0, 12.0, 16.0], Directions::Both)).unwrap();
        assert_eq!(uncached.rows, cold.rows);
    }

    #[test]
    fn solve_rows_lists_every_branch() {
        let mut cfg = qpsk_sweep(vec![], Directions::Ascending);
        cfg.base.snr_db = 12.0;
        let rows = solve_rows(&cfg).unwrap();
        assert!(rows.len() >= 2);
        assert!(rows.windows(2).all(|w| w[0].se_total <= w[1].se_total));
        assert!(rows.iter().all(|r| r.n_branches == rows.len()));
    }

    #[test]
    fn oracle_records_in_sweep() {
        let mut cfg = qpsk_sweep(vec![0.0, 5.0, 10.0], Directions::Ascending);
        cfg.oracle = Some(OracleSpec {
            every: 2,
            dims: Dims { k: 2, l: 2, n: 1, m: 1, s: 1 },
            chip_law: Default::default(),
            input: OracleInput::Gaussian,
            seeds: 4,
            draws: 1,
        });
        cfg.oracle_in_sweep = true;
        let run = run_sweep(&cfg).unwrap();
        assert_eq!(run.oracle.len(), 2);
        assert_eq!(run.oracle[1].grid_index, 2);
        assert!(run.oracle.iter().all(|r| r.stats.is_some() && r.reference.is_some()));
        let csv = render_oracle(&run.oracle, Format::Csv).unwrap();
        assert_eq!(csv.lines().count(), 3);
        assert_eq!(csv.lines().next().unwrap(), ORACLE_COLUMNS.join(","));
    }
}
