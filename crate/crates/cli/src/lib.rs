//! File formats, commands and run reports behind the `purityforge` binary.
//!
//! Problem files are UTF-8 JSON. Complex numbers are `[re, im]` pairs and
//! matrices are row-major nested arrays. Command-line flags override values
//! from the file's `params` block, which override [`RunParams::default`].

use std::path::Path;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use purityforge::infoq::{OutcomeMaps, WMode};
use purityforge::povm::{self, Povm, PovmReport};
use purityforge::proto::{
    binning_experiment, budget_trials, chernoff_grid, median, sub_povm_probability, BinningReport, ChernoffPoint,
    Params, ProtocolFamily, Setting, Side, SubPovmReport, TrialRecord,
};
use purityforge::qmat::{CMatrix, CVector, DensityOperator, Operator, PureState, StateVector, C64};
use purityforge::region::{corners, rate_region, EntropicProfile, KappaTriple, RateRegion};
use purityforge::{Error as CoreError, Tolerances};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Sample counts of the `--chernoff` grid.
pub const CHERNOFF_SAMPLES: [usize; 5] = [4, 16, 64, 256, 1024];
pub const CHERNOFF_ETAS: [f64; 4] = [0.1, 0.25, 0.3, 0.4];

#[derive(Debug, Error)]
pub enum CliError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("invariant breach: {0}")]
    Invariant(String),
    #[error("resource cap exceeded: {0}")]
    Cap(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse(_) | CliError::Invalid(_) | CliError::Io(_) => 1,
            CliError::Invariant(_) => 2,
            CliError::Cap(_) => 3,
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::CapExceeded(m) => CliError::Cap(m),
            CoreError::Invariant(m) => CliError::Invariant(m),
            other => CliError::Invalid(other.to_string()),
        }
    }
}

impl From<purityforge::QmatError> for CliError {
    fn from(e: purityforge::QmatError) -> Self {
        CliError::from(CoreError::from(e))
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

type RawMatrix = Vec<Vec<[f64; 2]>>;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StateSpec {
    Pure(Vec<[f64; 2]>),
    Matrix(RawMatrix),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EffectSpec {
    pub label: String,
    pub matrix: RawMatrix,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MapsSpec {
    pub p: usize,
    pub f_s: Vec<usize>,
    pub f_t: Vec<usize>,
    #[serde(default = "default_w_mode")]
    pub w_mode: WMode,
}

fn default_w_mode() -> WMode {
    WMode::Sum
}

/// Simulation parameters; every field is optional in the file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunParams {
    pub n: usize,
    pub delta: f64,
    pub eta: f64,
    pub b: f64,
    pub rt1: f64,
    pub rt2: f64,
    pub r1: f64,
    pub r2: f64,
    pub seed: u64,
    pub trials: usize,
}

impl Default for RunParams {
    fn default() -> Self {
        Self { n: 2, delta: 0.5, eta: 0.5, b: 0.0, rt1: 1.0, rt2: 1.0, r1: 1.0, r2: 1.0, seed: 0, trials: 100 }
    }
}

impl RunParams {
    pub fn protocol(&self) -> Params {
        Params {
            n: self.n,
            delta: self.delta,
            eta: self.eta,
            b: self.b,
            rt1: self.rt1,
            rt2: self.rt2,
            r1: self.r1,
            r2: self.r2,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub dims: [usize; 3],
    pub state: StateSpec,
    pub povm_a: Vec<EffectSpec>,
    pub povm_b: Vec<EffectSpec>,
    /// Identity maps over the smaller prime covering both alphabets when absent.
    #[serde(default)]
    pub maps: Option<MapsSpec>,
    #[serde(default)]
    pub params: RunParams,
}

/// A parsed and validated problem.
#[derive(Debug, Clone)]
pub struct Problem {
    pub rho: DensityOperator,
    pub m_a: Povm,
    pub m_b: Povm,
    pub maps: OutcomeMaps,
    pub params: RunParams,
    pub file: ProblemFile,
}

/// Flag values that take precedence over the file.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub trials: Option<usize>,
    pub b: Option<f64>,
    pub w_mode: Option<WMode>,
}

fn complex_matrix(raw: &RawMatrix, side: usize, field: &str) -> Result<CMatrix> {
    if raw.len() != side {
        return Err(CliError::Parse(format!("{field}: {} rows, expected {side}", raw.len())));
    }
    for (i, row) in raw.iter().enumerate() {
        if row.len() != side {
            return Err(CliError::Parse(format!("{field}: row {i} has {} entries, expected {side}", row.len())));
        }
    }
    Ok(CMatrix::from_fn(side, side, |i, j| C64::new(raw[i][j][0], raw[i][j][1])))
}

fn parse_povm(effects: &[EffectSpec], d: usize, field: &str) -> Result<Povm> {
    if effects.is_empty() {
        return Err(CliError::Parse(format!("{field}: no effects")));
    }
    let mut out = Vec::with_capacity(effects.len());
    for (i, e) in effects.iter().enumerate() {
        let m = complex_matrix(&e.matrix, d, &format!("{field}[{i}].matrix"))?;
        out.push((e.label.clone(), Operator::new(m, vec![d])?));
    }
    Povm::new(out, false, &Tolerances::DEFAULT).map_err(|e| CliError::Invalid(format!("{field}: {e}")))
}

fn smallest_prime_at_least(k: usize) -> usize {
    (k.max(2)..).find(|&p| (2..p).take_while(|d| d * d <= p).all(|d| p % d != 0)).expect("primes are unbounded")
}

impl ProblemFile {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| CliError::Parse(format!("line {} column {}: {e}", e.line(), e.column())))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn resolve(self, ov: &Overrides) -> Result<Problem> {
        let [da, db, dc] = self.dims;
        if da == 0 || db == 0 || dc == 0 {
            return Err(CliError::Parse("dims: every factor needs dimension at least 1".into()));
        }
        let side = da * db * dc;
        let dims = vec![da, db, dc];
        let tol = Tolerances::DEFAULT;
        let rho = match &self.state {
            StateSpec::Pure(amps) => {
                if amps.len() != side {
                    return Err(CliError::Parse(format!("state.pure: {} amplitudes, expected {side}", amps.len())));
                }
                let v = CVector::from_iterator(side, amps.iter().map(|a| C64::new(a[0], a[1])));
                let psi = PureState::new(StateVector::new(v, dims)?, &tol)
                    .map_err(|e| CliError::Invalid(format!("state.pure: {e}")))?;
                DensityOperator::from_pure(&psi)
            }
            StateSpec::Matrix(raw) => {
                let m = complex_matrix(raw, side, "state.matrix")?;
                DensityOperator::new(Operator::new(m, dims)?, &tol)
                    .map_err(|e| CliError::Invalid(format!("state.matrix: {e}")))?
            }
        };
        let m_a = parse_povm(&self.povm_a, da, "povm_a")?;
        let m_b = parse_povm(&self.povm_b, db, "povm_b")?;
        let mut maps = match &self.maps {
            Some(s) => OutcomeMaps::new(s.p, s.f_s.clone(), s.f_t.clone(), s.w_mode)
                .map_err(|e| CliError::Invalid(format!("maps: {e}")))?,
            None => {
                let p = smallest_prime_at_least(m_a.len().max(m_b.len()));
                OutcomeMaps::new(p, (0..m_a.len()).collect(), (0..m_b.len()).collect(), WMode::Sum)?
            }
        };
        if let Some(w) = ov.w_mode {
            maps.w_mode = w;
        }
        maps.check_alphabets(m_a.len(), m_b.len()).map_err(|e| CliError::Invalid(format!("maps: {e}")))?;
        let mut params = self.params;
        if let Some(s) = ov.seed {
            params.seed = s;
        }
        if let Some(t) = ov.trials {
            params.trials = t;
        }
        if let Some(b) = ov.b {
            params.b = b;
        }
        if !(0.0..=1.0).contains(&params.b) {
            return Err(CliError::Invalid(format!("b = {} outside [0, 1]", params.b)));
        }
        Ok(Problem { rho, m_a, m_b, maps, params, file: self })
    }
}

pub fn load_problem(path: &Path, ov: &Overrides) -> Result<Problem> {
    ProblemFile::load(path)?.resolve(ov)
}

#[derive(Debug, Clone, Serialize)]
pub struct EntropyTable {
    pub w_mode: WMode,
    pub s_u: f64,
    pub s_v: f64,
    /// `S(U+V)` in sum mode, `S(U,V)` in pair mode.
    pub s_w: f64,
    pub s_uv: f64,
    pub i_uv: f64,
    pub i_u_rbc: f64,
    pub i_v_rac: f64,
    pub i_c_w: f64,
    pub kappas: KappaTriple,
}

impl EntropyTable {
    pub fn rows(&self) -> Vec<(String, f64)> {
        let w = match self.w_mode {
            WMode::Sum => "S(U+V)",
            WMode::Pair => "S(W)",
        };
        vec![
            ("S(U)".into(), self.s_u),
            ("S(V)".into(), self.s_v),
            (w.into(), self.s_w),
            ("S(U,V)".into(), self.s_uv),
            ("I(U;V)".into(), self.i_uv),
            ("I(U;RBC)".into(), self.i_u_rbc),
            ("I(V;RAC)".into(), self.i_v_rac),
            ("I(C;W)".into(), self.i_c_w),
            ("kappa_A".into(), self.kappas.kappa_a),
            ("kappa_B".into(), self.kappas.kappa_b),
            ("kappa_C".into(), self.kappas.kappa_c),
        ]
    }
}

pub fn profile(problem: &Problem) -> Result<EntropicProfile> {
    Ok(EntropicProfile::compute(&problem.rho, &problem.m_a, &problem.m_b, &problem.maps, problem.params.b)?)
}

pub fn cmd_entropies(problem: &Problem) -> Result<EntropyTable> {
    let p = profile(problem)?;
    Ok(EntropyTable {
        w_mode: p.w_mode,
        s_u: p.s_u,
        s_v: p.s_v,
        s_w: p.s_w,
        s_uv: p.s_uv,
        i_uv: p.i_uv,
        i_u_rbc: p.i_u_rbc,
        i_v_rac: p.i_v_rac,
        i_c_w: p.i_c_w,
        kappas: p.kappas,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct RegionTable {
    pub b: f64,
    pub w_mode: WMode,
    /// Lower bounds on `R1`, `R2`, `R1 + R2`.
    pub rhs: [f64; 3],
    pub purity_bound: f64,
    pub corners: Option<Vec<(f64, f64)>>,
}

impl RegionTable {
    pub fn rows(&self) -> Vec<(String, f64)> {
        let mut rows = vec![
            ("R1 >=".into(), self.rhs[0]),
            ("R2 >=".into(), self.rhs[1]),
            ("R1+R2 >=".into(), self.rhs[2]),
            ("purity bound".into(), self.purity_bound),
        ];
        for (i, (x, y)) in self.corners.iter().flatten().enumerate() {
            rows.push((format!("corner{i}.R1"), *x));
            rows.push((format!("corner{i}.R2"), *y));
        }
        rows
    }
}

/// Region at the problem's `b`; `constraints` replaces the three right-hand sides.
pub fn cmd_region(problem: &Problem, with_corners: bool, constraints: Option<[f64; 3]>) -> Result<RegionTable> {
    let p = profile(problem)?;
    let region = match constraints {
        Some([r1, r2, s]) => RateRegion::from_bounds(r1, r2, s, p),
        None => rate_region(&p)?,
    };
    Ok(RegionTable {
        b: p.b,
        w_mode: p.w_mode,
        rhs: region.rhs(),
        purity_bound: region.purity_bound,
        corners: with_corners.then(|| corners(&region)),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationTable {
    pub povm_a: PovmReport,
    pub povm_b: PovmReport,
    pub state_trace: f64,
    pub state_min_eigenvalue: f64,
    pub params_error: Option<String>,
    pub valid: bool,
}

pub fn cmd_validate(problem: &Problem) -> ValidationTable {
    let povm_a = povm::validate(&problem.m_a);
    let povm_b = povm::validate(&problem.m_b);
    let params_error = problem.params.protocol().validate().err().map(|e| e.to_string());
    let valid = povm_a.valid && povm_b.valid && params_error.is_none();
    ValidationTable {
        povm_a,
        povm_b,
        state_trace: problem.rho.op().trace().re,
        state_min_eigenvalue: problem.rho.op().min_eigenvalue(),
        params_error,
        valid,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SimMode {
    Budget,
    Subpovm,
    Binning,
    Chernoff,
}

#[derive(Debug, Clone, Serialize)]
pub struct BudgetSummary {
    pub median_total: f64,
    pub mean_step1: f64,
    pub mean_step2: f64,
    pub mean_step3: f64,
    pub mean_step4: f64,
    pub mean_step5: f64,
    pub mean_binning: f64,
    pub sub_povm_failures: usize,
    pub median_net_rate: f64,
    pub records: Vec<TrialRecord>,
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum SimResult {
    Budget(BudgetSummary),
    Subpovm(SubPovmReport),
    Binning(BinningReport),
    Chernoff { side_a: Vec<ChernoffPoint>, side_b: Vec<ChernoffPoint> },
}

impl SimResult {
    /// Summary rows for CSV output.
    pub fn rows(&self) -> Vec<(String, f64)> {
        match self {
            SimResult::Budget(s) => vec![
                ("median_total".into(), s.median_total),
                ("mean_step1".into(), s.mean_step1),
                ("mean_step2".into(), s.mean_step2),
                ("mean_step3".into(), s.mean_step3),
                ("mean_step4".into(), s.mean_step4),
                ("mean_step5".into(), s.mean_step5),
                ("mean_binning".into(), s.mean_binning),
                ("sub_povm_failures".into(), s.sub_povm_failures as f64),
                ("median_net_rate".into(), s.median_net_rate),
            ],
            SimResult::Subpovm(r) => {
                vec![("rate".into(), r.rate), ("wilson_low".into(), r.wilson.0), ("wilson_high".into(), r.wilson.1)]
            }
            SimResult::Binning(r) => vec![
                ("collision_rate".into(), r.collision_rate),
                ("stderr".into(), r.stderr),
                ("analytic_rhs".into(), r.analytic_rhs),
                ("slack".into(), r.slack),
            ],
            SimResult::Chernoff { side_a, side_b } => [("A", side_a), ("B", side_b)]
                .into_iter()
                .flat_map(|(s, pts)| {
                    pts.iter().flat_map(move |p| {
                        let key = format!("{s}.N{}.eta{}", p.samples, p.eta);
                        [(format!("{key}.empirical"), p.empirical), (format!("{key}.bound"), p.bound)]
                    })
                })
                .collect(),
        }
    }
}

pub fn setting(problem: &Problem) -> Result<Setting> {
    Ok(Setting::new(&problem.rho, &problem.m_a, &problem.m_b, problem.params.protocol())?)
}

pub fn cmd_simulate(problem: &Problem, mode: SimMode) -> Result<SimResult> {
    let s = setting(problem)?;
    let RunParams { seed, trials, .. } = problem.params;
    if trials == 0 {
        return Err(CliError::Invalid("trials must be at least 1".into()));
    }
    Ok(match mode {
        SimMode::Budget => {
            let records = budget_trials(&s, seed, trials)?;
            let mean = |f: &dyn Fn(&TrialRecord) -> f64| records.iter().map(f).sum::<f64>() / records.len() as f64;
            let totals: Vec<f64> = records.iter().map(|r| r.budget.total).collect();
            let nets: Vec<f64> = records.iter().map(|r| r.ledger.net_rate).collect();
            SimResult::Budget(BudgetSummary {
                median_total: median(&totals),
                mean_step1: mean(&|r| r.budget.step1),
                mean_step2: mean(&|r| r.budget.step2),
                mean_step3: mean(&|r| r.budget.step3),
                mean_step4: mean(&|r| r.budget.step4),
                mean_step5: mean(&|r| r.budget.step5),
                mean_binning: mean(&|r| r.budget.binning),
                sub_povm_failures: records.iter().filter(|r| !(r.sub_povm.0 && r.sub_povm.1)).count(),
                median_net_rate: median(&nets),
                records,
            })
        }
        SimMode::Subpovm => SimResult::Subpovm(sub_povm_probability(&s, seed, trials)?),
        SimMode::Binning => SimResult::Binning(binning_experiment(&s, seed, trials)?),
        SimMode::Chernoff => {
            let grid = |side| -> Result<Vec<ChernoffPoint>> {
                let fam = ProtocolFamily::new(&s, side)?;
                Ok(chernoff_grid(&fam, &CHERNOFF_SAMPLES, &CHERNOFF_ETAS, trials, seed)?)
            };
            SimResult::Chernoff { side_a: grid(Side::A)?, side_b: grid(Side::B)? }
        }
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct Timing {
    pub timestamp_unix: u64,
    pub wall_time_s: f64,
}

/// Everything a command produced. Only `timing` differs between identical runs.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport<T: Serialize> {
    pub command: String,
    pub version: &'static str,
    pub config: ResolvedConfig,
    pub result: T,
    pub timing: Timing,
}

#[derive(Debug, Clone, Serialize)]
pub struct ResolvedConfig {
    pub dims: [usize; 3],
    pub maps: OutcomeMaps,
    pub params: RunParams,
    pub povm_a_labels: Vec<String>,
    pub povm_b_labels: Vec<String>,
}

impl ResolvedConfig {
    pub fn of(problem: &Problem) -> Self {
        Self {
            dims: problem.file.dims,
            maps: problem.maps.clone(),
            params: problem.params,
            povm_a_labels: problem.m_a.labels().map(String::from).collect(),
            povm_b_labels: problem.m_b.labels().map(String::from).collect(),
        }
    }
}

/// Runs `f` and wraps its result with the config echo and timing.
pub fn run_report<T: Serialize>(
    command: &str,
    problem: &Problem,
    f: impl FnOnce() -> Result<T>,
) -> Result<RunReport<T>> {
    let start = Instant::now();
    let result = f()?;
    let timestamp_unix = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    Ok(RunReport {
        command: command.to_string(),
        version: VERSION,
        config: ResolvedConfig::of(problem),
        result,
        timing: Timing { timestamp_unix, wall_time_s: start.elapsed().as_secs_f64() },
    })
}

/// Twelve significant digits, locale independent.
pub fn format_sig12(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let exp = x.abs().log10().floor() as i32;
    if (-4..12).contains(&exp) {
        let decimals = (11 - exp).max(0) as usize;
        format!("{x:.decimals$}")
    } else {
        format!("{x:.11e}")
    }
}

pub fn csv_table(rows: &[(String, f64)]) -> String {
    let mut out = String::from("quantity,value\n");
    for (k, v) in rows {
        out.push_str(&format!("{k},{}\n", format_sig12(*v)));
    }
    out
}

pub fn text_table(rows: &[(String, f64)]) -> String {
    let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    rows.iter().map(|(k, v)| format!("{k:<width$}  {}\n", format_sig12(*v))).collect()
}

/// Rayon pool size from `PURITYFORGE_THREADS`, if set.
pub fn threads_from_env() -> Result<Option<usize>> {
    match std::env::var("PURITYFORGE_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .map(Some)
            .ok_or_else(|| CliError::Parse(format!("PURITYFORGE_THREADS = {v:?} is not a positive integer"))),
        Err(_) => Ok(None),
    }
}

/// Runs `f` on a dedicated pool with `threads` workers.
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Io(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}
