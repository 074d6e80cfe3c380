//! Seeded experiment sweeps over one generator parameter.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::em::initial_params;
use crate::engine::{solve, SolverConfig};
use crate::error::{Error, Result};
use crate::exact::{enumerate_mmse, DEFAULT_ENUM_CAP};
use crate::field::Scalar;
use crate::metrics::{k_largest_rows, mean_se, nser, threshold_support, tnmse, to_db, SupportRule};
use crate::model::{generate_instance, GenConfig, Instance};
use crate::sks::{sks_smooth, SksInput};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweptParameter {
    /// Measurements per active coefficient; varies `lambda` at fixed N, M.
    #[serde(rename = "M_over_K")]
    MOverK,
    #[serde(rename = "T")]
    T,
    #[serde(rename = "snr_db")]
    SnrDb,
    /// Undersampling ratio; varies M at fixed N, keeping M/K.
    #[serde(rename = "N_over_M")]
    NOverM,
    /// Problem size; keeps N/M and M/K.
    #[serde(rename = "N")]
    N,
    #[serde(rename = "beta")]
    Beta,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    AmpMmv,
    Sks,
    Enum,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::AmpMmv => "amp-mmv",
            Algorithm::Sks => "sks",
            Algorithm::Enum => "enum",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "", deny_unknown_fields)]
pub struct SweepSpec<T: Scalar> {
    pub swept_parameter: SweptParameter,
    pub grid: Vec<f64>,
    /// Base generator configuration; its seed is ignored in favour of `seed`.
    pub base: GenConfig<T>,
    pub trials: usize,
    pub algorithms: Vec<Algorithm>,
    #[serde(default)]
    pub support_rule: SupportRule,
    #[serde(default)]
    pub solver: SolverConfig,
    pub seed: u64,
    /// Write wall-clock solve times; off keeps outputs byte-reproducible.
    #[serde(default)]
    pub record_runtime: bool,
    #[serde(default = "default_enum_cap")]
    pub enum_cap: usize,
}

fn default_enum_cap() -> usize {
    DEFAULT_ENUM_CAP
}

impl<T: Scalar> SweepSpec<T> {
    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() {
            return Err(Error::Parameter("sweep grid is empty".into()));
        }
        if self.trials == 0 {
            return Err(Error::Parameter("sweep needs at least one trial".into()));
        }
        if self.algorithms.is_empty() {
            return Err(Error::Parameter("sweep needs at least one algorithm".into()));
        }
        self.solver.validate()?;
        for &v in &self.grid {
            self.config_at(v, 0)?.validate()?;
        }
        Ok(())
    }

    /// Generator configuration at grid value `v` with seed `seed`.
    pub fn config_at(&self, v: f64, seed: u64) -> Result<GenConfig<T>> {
        let mut c = self.base.clone();
        c.seed = seed;
        let base_k_per_m = self.base.params.mean_lambda() * self.base.n as f64 / self.base.m as f64;
        match self.swept_parameter {
            SweptParameter::MOverK => {
                if !(v > 0.0) {
                    return Err(Error::Parameter(format!("M/K = {v} must be positive")));
                }
                c.params.lambda = vec![c.m as f64 / (v * c.n as f64)];
            }
            SweptParameter::T => c.t = positive_count(v, "T")?,
            SweptParameter::SnrDb => c.snr_db = Some(v),
            SweptParameter::NOverM => {
                c.m = positive_count(c.n as f64 / v, "M")?;
                c.params.lambda = vec![base_k_per_m * c.m as f64 / c.n as f64];
            }
            SweptParameter::N => {
                c.n = positive_count(v, "N")?;
                c.m = positive_count(v * self.base.m as f64 / self.base.n as f64, "M")?;
            }
            SweptParameter::Beta => c.beta = v,
        }
        Ok(c)
    }
}

fn positive_count(v: f64, what: &str) -> Result<usize> {
    let r = v.round();
    if !(r >= 1.0) || !r.is_finite() {
        return Err(Error::Parameter(format!("{what} = {v} does not round to a positive size")));
    }
    Ok(r as usize)
}

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of trial `trial` at grid point `grid_index`.
pub fn trial_seed(seed: u64, grid_index: usize, trial: usize) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ grid_index as u64) ^ trial as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub grid_index: usize,
    pub grid_value: f64,
    pub algorithm: Algorithm,
    pub trial: usize,
    pub seed: u64,
    pub tnmse: f64,
    pub nser: f64,
    /// Not measured (NaN) unless runtimes are recorded.
    pub runtime_s: f64,
    pub error: Option<String>,
}

impl TrialRecord {
    pub fn tnmse_db(&self) -> f64 {
        to_db(self.tnmse)
    }

    pub fn failed(&self) -> bool {
        self.error.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub grid_value: f64,
    pub algorithm: Algorithm,
    pub trials: usize,
    pub failures: usize,
    /// More than 20% of the trials failed.
    pub flagged: bool,
    pub tnmse_mean: f64,
    pub tnmse_mean_db: f64,
    pub tnmse_db_mean: f64,
    pub tnmse_db_se: f64,
    pub nser_mean: f64,
    pub nser_se: f64,
    pub runtime_mean_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResults {
    pub records: Vec<TrialRecord>,
    pub aggregates: Vec<AggregateRow>,
}

impl SweepResults {
    pub fn aggregate(&self, grid_value: f64, algorithm: Algorithm) -> Option<&AggregateRow> {
        self.aggregates
            .iter()
            .find(|a| a.grid_value == grid_value && a.algorithm == algorithm)
    }
}

fn run_algorithm<T: Scalar>(
    spec: &SweepSpec<T>,
    inst: &Instance<T>,
    alg: Algorithm,
) -> Result<(f64, f64, f64)> {
    let k = inst.truth.k();
    let truth_idx = inst.truth.support_indices();
    if k == 0 {
        return Err(Error::UndefinedMetric("trial drew an empty support".into()));
    }
    let started = Instant::now();
    let (x_hat, support) = match alg {
        Algorithm::AmpMmv => {
            let params = if spec.solver.em_enabled {
                initial_params(&inst.problem, spec.solver.seed)
            } else {
                inst.params.clone()
            };
            let out = solve(&inst.problem, &params, &spec.solver)?;
            let elapsed = started.elapsed().as_secs_f64();
            let s = match spec.support_rule {
                SupportRule::KLargest => k_largest_rows(&out.posterior.x_mean, k)?,
                SupportRule::PosteriorThreshold => threshold_support(&out.posterior.s_post),
            };
            return finish(&inst.truth.signals, &out.posterior.x_mean, &truth_idx, &s, elapsed);
        }
        Algorithm::Sks => {
            let out = sks_smooth(&SksInput {
                problem: &inst.problem,
                support: &inst.truth.support,
                params: &inst.params,
            })?;
            (out.x_hat, truth_idx.clone())
        }
        Algorithm::Enum => {
            let out = enumerate_mmse(&inst.problem, &inst.params, spec.enum_cap)?;
            let s = match spec.support_rule {
                SupportRule::KLargest => k_largest_rows(&out.x_mmse, k)?,
                SupportRule::PosteriorThreshold => threshold_support(&out.support_post),
            };
            (out.x_mmse, s)
        }
    };
    let elapsed = started.elapsed().as_secs_f64();
    finish(&inst.truth.signals, &x_hat, &truth_idx, &support, elapsed)
}

fn finish<T: Scalar>(
    x: &nalgebra::DMatrix<T>,
    x_hat: &nalgebra::DMatrix<T>,
    truth: &[usize],
    est: &[usize],
    elapsed: f64,
) -> Result<(f64, f64, f64)> {
    Ok((tnmse(x, x_hat)?, nser(truth, est)?, elapsed))
}

pub fn run_sweep<T: Scalar>(spec: &SweepSpec<T>) -> Result<SweepResults> {
    spec.validate()?;
    let jobs: Vec<(usize, usize)> = (0..spec.grid.len())
        .flat_map(|g| (0..spec.trials).map(move |t| (g, t)))
        .collect();
    let per_job: Vec<Vec<TrialRecord>> = jobs
        .par_iter()
        .map(|&(g, trial)| {
            let v = spec.grid[g];
            let seed = trial_seed(spec.seed, g, trial);
            let inst = spec.config_at(v, seed).and_then(|c| generate_instance(&c));
            spec.algorithms
                .iter()
                .map(|&alg| {
                    let res = inst.as_ref().map_err(|e| e.to_string()).and_then(|inst| {
                        run_algorithm(spec, inst, alg).map_err(|e| e.to_string())
                    });
                    let (tn, ns, rt, error) = match res {
                        Ok((a, b, c)) => (a, b, c, None),
                        Err(e) => (f64::NAN, f64::NAN, f64::NAN, Some(e)),
                    };
                    TrialRecord {
                        grid_index: g,
                        grid_value: v,
                        algorithm: alg,
                        trial,
                        seed,
                        tnmse: tn,
                        nser: ns,
                        runtime_s: if spec.record_runtime { rt } else { f64::NAN },
                        error,
                    }
                })
                .collect()
        })
        .collect();
    let records: Vec<TrialRecord> = per_job.into_iter().flatten().collect();
    let aggregates = aggregate(spec, &records);
    Ok(SweepResults { records, aggregates })
}

fn aggregate<T: Scalar>(spec: &SweepSpec<T>, records: &[TrialRecord]) -> Vec<AggregateRow> {
    let mut rows = Vec::new();
    for (g, &v) in spec.grid.iter().enumerate() {
        for &alg in &spec.algorithms {
            let rs: Vec<&TrialRecord> = records
                .iter()
                .filter(|r| r.grid_index == g && r.algorithm == alg)
                .collect();
            let ok: Vec<&TrialRecord> = rs.iter().copied().filter(|r| !r.failed()).collect();
            let failures = rs.len() - ok.len();
            let tn: Vec<f64> = ok.iter().map(|r| r.tnmse).collect();
            let tn_db: Vec<f64> = ok.iter().map(|r| r.tnmse_db()).collect();
            let ns: Vec<f64> = ok.iter().map(|r| r.nser).collect();
            let rt: Vec<f64> = ok.iter().map(|r| r.runtime_s).collect();
            let (tnmse_mean, _) = mean_se(&tn);
            let (tnmse_db_mean, tnmse_db_se) = mean_se(&tn_db);
            let (nser_mean, nser_se) = mean_se(&ns);
            rows.push(AggregateRow {
                grid_value: v,
                algorithm: alg,
                trials: rs.len(),
                failures,
                flagged: failures as f64 > 0.2 * rs.len() as f64,
                tnmse_mean,
                tnmse_mean_db: to_db(tnmse_mean),
                tnmse_db_mean,
                tnmse_db_se,
                nser_mean,
                nser_se,
                runtime_mean_s: mean_se(&rt).0,
            });
        }
    }
    rows
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct SweepManifest<T: Scalar> {
    pub spec: SweepSpec<T>,
    pub field: crate::field::FieldKind,
    pub trials_csv: PathBuf,
    pub aggregate_csv: PathBuf,
    pub failures: Vec<TrialRecord>,
    pub flagged_points: Vec<AggregateRow>,
}

/// CSV of every trial: grid value, algorithm, trial, TNMSE (dB), NSER and
/// runtime.
pub fn write_trials_csv<W: std::io::Write>(w: W, records: &[TrialRecord]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["grid_value", "algorithm", "trial", "tnmse_db", "nser", "runtime_s"])?;
    for r in records {
        wr.write_record([
            r.grid_value.to_string(),
            r.algorithm.name().to_string(),
            r.trial.to_string(),
            r.tnmse_db().to_string(),
            r.nser.to_string(),
            r.runtime_s.to_string(),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

pub fn write_aggregate_csv<W: std::io::Write>(w: W, rows: &[AggregateRow]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record([
        "grid_value",
        "algorithm",
        "trials",
        "failures",
        "flagged",
        "tnmse_mean",
        "tnmse_mean_db",
        "tnmse_db_mean",
        "tnmse_db_se",
        "nser_mean",
        "nser_se",
        "runtime_mean_s",
    ])?;
    for r in rows {
        wr.write_record([
            r.grid_value.to_string(),
            r.algorithm.name().to_string(),
            r.trials.to_string(),
            r.failures.to_string(),
            r.flagged.to_string(),
            r.tnmse_mean.to_string(),
            r.tnmse_mean_db.to_string(),
            r.tnmse_db_mean.to_string(),
            r.tnmse_db_se.to_string(),
            r.nser_mean.to_string(),
            r.nser_se.to_string(),
            r.runtime_mean_s.to_string(),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

/// Writes `trials.csv`, `aggregate.csv` and `manifest.json` into `dir`.
pub fn write_sweep_outputs<T: Scalar>(
    dir: &Path,
    spec: &SweepSpec<T>,
    results: &SweepResults,
) -> Result<SweepManifest<T>> {
    std::fs::create_dir_all(dir)?;
    let trials_csv = dir.join("trials.csv");
    let aggregate_csv = dir.join("aggregate.csv");
    write_trials_csv(std::fs::File::create(&trials_csv)?, &results.records)?;
    write_aggregate_csv(std::fs::File::create(&aggregate_csv)?, &results.aggregates)?;
    let manifest = SweepManifest {
        spec: spec.clone(),
        field: T::KIND,
        trials_csv,
        aggregate_csv,
        failures: results.records.iter().filter(|r| r.failed()).cloned().collect(),
        flagged_points: results.aggregates.iter().filter(|a| a.flagged).cloned().collect(),
    };
    let f = std::fs::File::create(dir.join("manifest.json"))?;
    serde_json::to_writer_pretty(f, &manifest)?;
    Ok(manifest)
}
