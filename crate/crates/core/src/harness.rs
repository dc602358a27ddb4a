//! Seeded sweeps over (δ, κ, variant, inner policy), their summaries and
//! manifests, and the oracle consistency audit.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cg::InnerPolicy;
use crate::config::{RunConfig, Variant};
use crate::error::{Error, Result};
use crate::outer::{self, RunOutput};
use crate::trace;
use crate::vecops::to_db;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    /// Template for every cell; `operator.m`, `operator.kappa`, `variant`,
    /// `inner` and the seeds are overwritten per cell and run.
    pub base: RunConfig,
    pub deltas: Vec<f64>,
    pub kappas: Vec<f64>,
    pub variants: Vec<Variant>,
    pub policies: Vec<InnerPolicy>,
    /// Signal sparsity per entry of `deltas`; empty keeps `base.signal.sparsity`.
    #[serde(default)]
    pub sparsity: Vec<f64>,
    /// Denoiser threshold multiplier per entry of `deltas`; empty keeps the base value.
    #[serde(default)]
    pub lambda_mult: Vec<f64>,
    pub seeds: Vec<u64>,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("sweep-out")
}

/// One grid point, before seeding.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSpec {
    pub id: String,
    pub delta: f64,
    pub kappa: f64,
    pub variant: Variant,
    pub policy: InnerPolicy,
    pub config: RunConfig,
}

pub fn policy_label(p: &InnerPolicy) -> String {
    match p {
        InnerPolicy::Fixed { iterations } => format!("fixed{iterations}"),
        InnerPolicy::Acg(c) => {
            let d = if c.delta_threshold.is_finite() { format!("{}", c.delta_threshold) } else { "inf".into() };
            format!("acg-c{}-d{}-i{}", c.c, d, c.i_max)
        }
    }
}

impl SweepSpec {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let spec: SweepSpec = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, empty) in [
            ("deltas", self.deltas.is_empty()),
            ("kappas", self.kappas.is_empty()),
            ("variants", self.variants.is_empty()),
            ("policies", self.policies.is_empty()),
            ("seeds", self.seeds.is_empty()),
        ] {
            if empty {
                return Err(Error::Config(format!("sweep {name} list is empty")));
            }
        }
        for (name, list) in [("sparsity", &self.sparsity), ("lambda_mult", &self.lambda_mult)] {
            if !list.is_empty() && list.len() != self.deltas.len() {
                return Err(Error::Config(format!("{name} must have one entry per delta")));
            }
        }
        for d in &self.deltas {
            if !(*d > 0.0 && *d <= 1.0) {
                return Err(Error::Config(format!("delta {d} must lie in (0, 1]")));
            }
        }
        self.base.validate()?;
        for cell in self.cells()? {
            cell.config.validate()?;
            cell.config.operator.build().map(|_| ())?;
        }
        Ok(())
    }

    /// Grid cells in `delta, kappa, variant, policy` order.
    pub fn cells(&self) -> Result<Vec<CellSpec>> {
        let n = self.base.operator.n;
        let mut out = Vec::new();
        for (di, &delta) in self.deltas.iter().enumerate() {
            let m = (delta * n as f64).round() as usize;
            if m == 0 {
                return Err(Error::Config(format!("delta {delta} gives no measurements at n={n}")));
            }
            for &kappa in &self.kappas {
                for &variant in &self.variants {
                    for policy in &self.policies {
                        let mut config = self.base.clone();
                        config.operator.m = m;
                        config.operator.kappa = kappa;
                        config.variant = variant;
                        config.inner = *policy;
                        if let Some(s) = self.sparsity.get(di) {
                            config.signal.sparsity = *s;
                        }
                        if let Some(l) = self.lambda_mult.get(di) {
                            config.denoiser.lambda_mult = *l;
                        }
                        let id = format!("d{delta}_k{kappa}_{variant}_{}", policy_label(policy));
                        out.push(CellSpec { id, delta, kappa, variant, policy: *policy, config });
                    }
                }
            }
        }
        Ok(out)
    }

    /// Hash of the grid definition; the output directory is left out.
    pub fn hash(&self) -> String {
        let mut spec = self.clone();
        spec.out_dir = PathBuf::new();
        let text = toml::to_string(&spec).unwrap_or_else(|_| format!("{spec:?}"));
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub config: RunConfig,
    pub output: RunOutput,
}

#[derive(Debug, Clone)]
pub struct CellOutcome {
    pub cell: CellSpec,
    pub runs: Vec<SeedRun>,
}

/// Runs one seeded configuration, turning setup failures into an error record.
pub fn run_seeded(template: &RunConfig, seed: u64) -> SeedRun {
    let config = template.with_seed(seed);
    let output = match config.instance() {
        Ok(inst) => outer::run(&config, &inst),
        Err(e) => RunOutput { records: Vec::new(), inner: Vec::new(), error: Some(e), estimate: Vec::new() },
    };
    SeedRun { seed, config, output }
}

/// Every cell and seed, in parallel. Each run is single-threaded.
pub fn execute(cells: &[CellSpec], seeds: &[u64]) -> Vec<CellOutcome> {
    let jobs: Vec<(usize, u64)> = (0..cells.len()).flat_map(|c| seeds.iter().map(move |s| (c, *s))).collect();
    let done: Vec<SeedRun> = jobs.par_iter().map(|&(c, s)| run_seeded(&cells[c].config, s)).collect();
    let mut it = done.into_iter();
    cells.iter().map(|cell| CellOutcome { cell: cell.clone(), runs: it.by_ref().take(seeds.len()).collect() }).collect()
}

/// Seed-aggregated row per (cell, t).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub cell: String,
    pub delta: f64,
    pub kappa: f64,
    pub variant: String,
    pub policy: String,
    pub t: usize,
    pub seeds: usize,
    pub nmse_mean: f64,
    /// `10 log10` of the seed-mean NMSE.
    pub nmse_db: f64,
    /// Standard deviation of the per-seed NMSE in dB.
    pub nmse_db_std: f64,
    pub inner_iters_mean: f64,
    pub elapsed_mean: f64,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn std_dev(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

pub fn summarize(outcomes: &[CellOutcome]) -> Vec<SummaryRow> {
    let mut rows = Vec::new();
    for o in outcomes {
        let t_len = o.runs.iter().map(|r| r.output.records.len()).max().unwrap_or(0);
        for t in 0..t_len {
            let recs: Vec<_> = o.runs.iter().filter_map(|r| r.output.records.get(t)).collect();
            let nmse: Vec<f64> = recs.iter().map(|r| r.nmse).collect();
            let db: Vec<f64> = recs.iter().map(|r| r.nmse_db).collect();
            let nmse_mean = mean(&nmse);
            rows.push(SummaryRow {
                cell: o.cell.id.clone(),
                delta: o.cell.delta,
                kappa: o.cell.kappa,
                variant: o.cell.variant.to_string(),
                policy: policy_label(&o.cell.policy),
                t,
                seeds: recs.len(),
                nmse_mean,
                nmse_db: to_db(nmse_mean),
                nmse_db_std: std_dev(&db),
                inner_iters_mean: mean(&recs.iter().map(|r| r.inner_iters as f64).collect::<Vec<_>>()),
                elapsed_mean: mean(&recs.iter().map(|r| r.elapsed).collect::<Vec<_>>()),
            });
        }
    }
    rows
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub seed: u64,
    pub config_hash: String,
    pub trace: String,
    pub inner: String,
    pub records: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellEntry {
    pub id: String,
    pub config_hash: String,
    pub runs: Vec<RunEntry>,
}

/// Index of a sweep's artifacts. `manifest_hash` covers every other field
/// and depends only on the sweep definition, never on timings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: String,
    pub spec_hash: String,
    pub summary: String,
    pub cells: Vec<CellEntry>,
    pub manifest_hash: String,
}

impl Manifest {
    fn seal(mut self) -> Self {
        self.manifest_hash.clear();
        let text = serde_json::to_string(&self).expect("manifest serializes");
        self.manifest_hash = hex::encode(Sha256::digest(text.as_bytes()));
        self
    }
}

/// Executes the sweep and writes per-run traces, `summary.csv` and
/// `manifest.json` under `spec.out_dir`.
pub fn run_sweep(spec: &SweepSpec) -> Result<Manifest> {
    spec.validate()?;
    let cells = spec.cells()?;
    let outcomes = execute(&cells, &spec.seeds);
    write_sweep(spec, &outcomes)
}

pub fn write_sweep(spec: &SweepSpec, outcomes: &[CellOutcome]) -> Result<Manifest> {
    let runs_dir = spec.out_dir.join("runs");
    fs::create_dir_all(&runs_dir)?;
    let mut cells = Vec::new();
    for o in outcomes {
        let mut runs = Vec::new();
        for r in &o.runs {
            let stem = format!("{}_s{}", o.cell.id, r.seed);
            let trace_rel = format!("runs/{stem}.csv");
            let inner_rel = format!("runs/{stem}.inner.csv");
            let err = r.output.error.as_ref().map(|e| e.to_string());
            trace::write_csv_file(&spec.out_dir.join(&trace_rel), &r.output.records, err.as_deref())?;
            trace::write_csv_file(&spec.out_dir.join(&inner_rel), &r.output.inner, None)?;
            runs.push(RunEntry {
                seed: r.seed,
                config_hash: r.config.hash(),
                trace: trace_rel,
                inner: inner_rel,
                records: r.output.records.len(),
                error: err,
            });
        }
        cells.push(CellEntry { id: o.cell.id.clone(), config_hash: o.cell.config.hash(), runs });
    }
    trace::write_csv_file(&spec.out_dir.join("summary.csv"), &summarize(outcomes), None)?;
    let manifest = Manifest {
        schema: "cgvamp-manifest v1".into(),
        spec_hash: spec.hash(),
        summary: "summary.csv".into(),
        cells,
        manifest_hash: String::new(),
    }
    .seal();
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Io(e.to_string()))?;
    fs::write(spec.out_dir.join("manifest.json"), json + "\n")?;
    Ok(manifest)
}

/// Result of one audit check: the worst observed value against its bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditCheck {
    pub name: String,
    pub worst: f64,
    pub threshold: f64,
    pub pass: bool,
}

impl AuditCheck {
    fn new(name: &str, worst: f64, threshold: f64) -> Self {
        AuditCheck { name: name.into(), worst, threshold, pass: worst <= threshold }
    }
}

/// Bounds and iteration windows for [`audit_runs`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuditLimits {
    pub gamma_rel: f64,
    pub psi_rel: f64,
    pub psi_abs: f64,
    pub v_ab_rel: f64,
    pub correlation: f64,
    pub kurtosis: f64,
    /// Outer iterations checked for the correction, `ψ̄`, correlation and kurtosis.
    pub t_short: usize,
    /// Outer iterations checked for the variance estimate.
    pub t_long: usize,
    /// Inner iterations checked for the correction and `ψ̄`.
    pub i_max: usize,
}

impl AuditLimits {
    /// Default bounds; the correlation bound is `max(0.05, 3/√N)`.
    pub fn for_dimension(n: usize) -> Self {
        AuditLimits {
            gamma_rel: 0.05,
            psi_rel: 0.05,
            psi_abs: 1e-4,
            v_ab_rel: 0.10,
            correlation: 0.05f64.max(3.0 / (n as f64).sqrt()),
            kurtosis: 0.3,
            t_short: 5,
            t_long: 10,
            i_max: 20,
        }
    }
}

fn fold_max(it: impl Iterator<Item = f64>) -> f64 {
    // NaN counts as a failure
    it.fold(0.0, |acc: f64, v| if v.is_nan() || acc.is_nan() { f64::NAN } else { acc.max(v) })
}

/// Worst-case estimator-versus-truth gaps over oracle-enabled runs.
pub fn audit_runs(runs: &[&RunOutput], limits: &AuditLimits) -> Vec<AuditCheck> {
    let inner = || {
        runs.iter()
            .flat_map(|r| r.inner.iter())
            .filter(move |row| row.t <= limits.t_short && row.i >= 1 && row.i <= limits.i_max)
    };
    let outer_short = || runs.iter().flat_map(|r| r.records.iter()).filter(move |r| r.t <= limits.t_short);
    let gamma = fold_max(inner().map(|row| match row.oracle_gamma {
        Some(g) => ((row.gamma_tilde - g) / g).abs(),
        None => f64::NAN,
    }));
    // ratio to the allowed band, so 1 is the bound
    let psi = fold_max(inner().map(|row| match row.oracle_psi {
        Some(p) => (p - row.psi_bar).abs() / (limits.psi_rel * row.psi_bar.abs() + limits.psi_abs),
        None => f64::NAN,
    }));
    let v_ab =
        fold_max(runs.iter().flat_map(|r| r.records.iter()).filter(|r| r.t <= limits.t_long).map(
            |r| match r.oracle_v_ab {
                Some(v) => ((r.v_ab_tilde - v) / v).abs(),
                None => f64::NAN,
            },
        ));
    let corr = fold_max(outer_short().map(|r| r.oracle_audit.map(f64::abs).unwrap_or(f64::NAN)));
    let kurt = fold_max(outer_short().map(|r| r.oracle_kurtosis.map(f64::abs).unwrap_or(f64::NAN)));
    vec![
        AuditCheck::new("gamma_rel_error", gamma, limits.gamma_rel),
        AuditCheck::new("psi_band_ratio", psi, 1.0),
        AuditCheck::new("v_ab_rel_error", v_ab, limits.v_ab_rel),
        AuditCheck::new("h_q_correlation", corr, limits.correlation),
        AuditCheck::new("h_excess_kurtosis", kurt, limits.kurtosis),
    ]
}

/// Runs `config` over `seeds` with the oracle columns enabled and audits the result.
pub fn audit(config: &RunConfig, seeds: &[u64]) -> Result<(Vec<AuditCheck>, Vec<SeedRun>)> {
    if seeds.is_empty() {
        return Err(Error::Config("audit seeds list is empty".into()));
    }
    let mut cfg = config.clone();
    cfg.oracle = true;
    cfg.validate()?;
    let runs: Vec<SeedRun> = seeds.par_iter().map(|s| run_seeded(&cfg, *s)).collect();
    if let Some(e) = runs.iter().find_map(|r| r.output.error.clone()) {
        return Err(e);
    }
    let outs: Vec<&RunOutput> = runs.iter().map(|r| &r.output).collect();
    Ok((audit_runs(&outs, &AuditLimits::for_dimension(cfg.operator.n)), runs))
}
