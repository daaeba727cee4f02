//! The end-to-end protocol: strong split, EASE per γ, bound and ranking metrics on held-out users.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{holdout_mask, population_correlation_warn_above, strong_split, InteractionMatrix, DENSE_WARN_ITEMS};
use crate::ease::train_ease_from_gram;
use crate::error::{Error, Result};
use crate::lae_bound::{compute_bound, default_lambda_grid, BoundReport, BoundSettings, SampleMoments};
use crate::metrics::evaluate_ranking;

/// Where `Σ_hh` comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PopulationSource {
    Train,
    Whole,
    File,
}

impl std::str::FromStr for PopulationSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Self::Train),
            "whole" => Ok(Self::Whole),
            "file" => Ok(Self::File),
            other => {
                Err(Error::InvalidArgument(format!("population source must be train, whole or file, got {other:?}")))
            }
        }
    }
}

impl std::fmt::Display for PopulationSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Train => "train",
            Self::Whole => "whole",
            Self::File => "file",
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSettings {
    pub test_fraction: f64,
    pub p: f64,
    pub gammas: Vec<f64>,
    pub sigma: f64,
    pub delta: f64,
    pub lambdas: Vec<f64>,
    pub seed: u64,
    pub jitter: Option<f64>,
    pub ks: Vec<usize>,
    pub population_source: PopulationSource,
}

impl Default for ExperimentSettings {
    fn default() -> Self {
        Self {
            test_fraction: 0.3,
            p: 0.5,
            gammas: vec![50.0, 100.0, 200.0, 500.0, 1000.0, 2000.0, 5000.0],
            sigma: 0.001,
            delta: 0.01,
            lambdas: default_lambda_grid(),
            seed: 0,
            jitter: None,
            ks: vec![50, 100],
            population_source: PopulationSource::Whole,
        }
    }
}

impl ExperimentSettings {
    pub fn bound_settings(&self) -> BoundSettings {
        BoundSettings {
            sigma: self.sigma,
            delta: self.delta,
            grid: self.lambdas.clone(),
            zero_diag: true,
            jitter: self.jitter,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.gammas.is_empty() {
            return Err(Error::InvalidArgument("gamma list is empty".into()));
        }
        if self.ks.is_empty() || self.ks.contains(&0) {
            return Err(Error::InvalidArgument("metric cutoffs must be a nonempty list of positive integers".into()));
        }
        if !(self.p > 0.0 && self.p < 1.0) {
            return Err(Error::InvalidArgument(format!("p must lie in (0, 1), got {}", self.p)));
        }
        Ok(())
    }
}

/// Population correlation handed to [`run_experiment`].
#[derive(Debug, Clone)]
pub enum Population {
    Train,
    Whole,
    /// Precomputed `Σ_hh`, e.g. loaded from a matrix file.
    Given(DMatrix<f64>),
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentRow {
    pub gamma: f64,
    #[serde(rename = "LH")]
    pub lh: Option<f64>,
    #[serde(rename = "RH")]
    pub rh: Option<f64>,
    pub lambda: Option<f64>,
    pub emp_risk_exp: Option<f64>,
    pub kl: Option<f64>,
    pub log_mgf: Option<f64>,
    #[serde(rename = "ln_L_over_delta")]
    pub ln_l_over_delta: Option<f64>,
    pub recall: BTreeMap<usize, f64>,
    pub ndcg: BTreeMap<usize, f64>,
    pub bound: Option<BoundReport>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub settings: ExperimentSettings,
    pub n_items: usize,
    pub n_users: usize,
    pub train_users: usize,
    pub test_users: usize,
    pub users_evaluated: usize,
    pub rows: Vec<ExperimentRow>,
}

impl ExperimentReport {
    /// One row per γ: LH, RH, metrics, and the selected grid point's components.
    pub fn to_text(&self) -> String {
        let s = &self.settings;
        let mut out = String::new();
        let _ = writeln!(
            out,
            "# items={} users={} train={} test={} evaluated={} p={} sigma={} delta={} L={} population={} seed={}",
            self.n_items,
            self.n_users,
            self.train_users,
            self.test_users,
            self.users_evaluated,
            s.p,
            s.sigma,
            s.delta,
            s.lambdas.len(),
            s.population_source,
            s.seed
        );
        let mut header = format!("{:>8} {:>12} {:>12}", "gamma", "LH", "RH");
        for k in &s.ks {
            let _ = write!(header, " {:>10} {:>10}", format!("Recall@{k}"), format!("NDCG@{k}"));
        }
        let _ = write!(header, " {:>8} {:>12} {:>12} {:>14} {:>10}", "lambda", "emp", "kl", "log_mgf", "ln(L/d)");
        let _ = writeln!(out, "{header}");
        let opt = |v: Option<f64>, width: usize| v.map_or(format!("{:>width$}", "-"), |v| format!("{v:>width$.4}"));
        for r in &self.rows {
            let mut line = format!("{:>8} {} {}", r.gamma, opt(r.lh, 12), opt(r.rh, 12));
            for k in &s.ks {
                let _ = write!(line, " {} {}", opt(r.recall.get(k).copied(), 10), opt(r.ndcg.get(k).copied(), 10));
            }
            let _ = write!(
                line,
                " {} {} {} {} {}",
                opt(r.lambda, 8),
                opt(r.emp_risk_exp, 12),
                opt(r.kl, 12),
                opt(r.log_mgf, 14),
                opt(r.ln_l_over_delta, 10)
            );
            if let Some(e) = &r.error {
                let _ = write!(line, "  error: {e}");
            }
            let _ = writeln!(out, "{line}");
        }
        out
    }
}

/// Run every γ on one strong split; a γ whose bound fails is reported in its row, not as an error.
pub fn run_experiment(
    whole: &InteractionMatrix,
    settings: &ExperimentSettings,
    population: &Population,
) -> Result<ExperimentReport> {
    settings.validate()?;
    let (train, test) = strong_split(whole, settings.test_fraction, settings.seed)?;
    let sigma_hh = match population {
        Population::Train => population_correlation_warn_above(&train, DENSE_WARN_ITEMS)?,
        Population::Whole => population_correlation_warn_above(whole, DENSE_WARN_ITEMS)?,
        Population::Given(m) => {
            if m.shape() != (whole.n_items(), whole.n_items()) {
                return Err(Error::Dimension(format!(
                    "population matrix is {:?}, dataset has {} items",
                    m.shape(),
                    whole.n_items()
                )));
            }
            m.clone()
        }
    };
    let split = holdout_mask(&test, settings.p, settings.seed.wrapping_add(1))?;
    let sample = SampleMoments::from_holdout(&split)?;
    let bound_settings = settings.bound_settings();
    let gram = train.gram();

    let rows = settings
        .gammas
        .par_iter()
        .map(|&gamma| -> Result<(ExperimentRow, usize)> {
            let model = train_ease_from_gram(&gram, gamma)?;
            let ranking = evaluate_ranking(&model.weights, &split.input, &split.target, &settings.ks)?;
            let mut row = ExperimentRow {
                gamma,
                lh: None,
                rh: None,
                lambda: None,
                emp_risk_exp: None,
                kl: None,
                log_mgf: None,
                ln_l_over_delta: None,
                recall: ranking.recall_at_k,
                ndcg: ranking.ndcg_at_k,
                bound: None,
                error: None,
            };
            match compute_bound(&sigma_hh, settings.p, &sample, &model.weights, &bound_settings) {
                Ok(report) => {
                    let best = report.best();
                    row.lh = Some(best.lh);
                    row.rh = best.rh;
                    row.lambda = Some(best.lambda);
                    row.emp_risk_exp = Some(best.emp_risk_exp);
                    row.kl = Some(best.kl);
                    row.log_mgf = best.log_mgf;
                    row.ln_l_over_delta = Some(best.ln_l_over_delta);
                    row.bound = Some(report);
                }
                Err(e) if e.is_numerical() => row.error = Some(e.to_string()),
                Err(e) => return Err(e),
            }
            Ok((row, ranking.users_evaluated))
        })
        .collect::<Result<Vec<_>>>()?;

    let users_evaluated = rows.first().map_or(0, |r| r.1);
    let population_source = match population {
        Population::Train => PopulationSource::Train,
        Population::Whole => PopulationSource::Whole,
        Population::Given(_) => PopulationSource::File,
    };
    Ok(ExperimentReport {
        settings: ExperimentSettings { population_source, ..settings.clone() },
        n_items: whole.n_items(),
        n_users: whole.n_users(),
        train_users: train.n_users(),
        test_users: test.n_users(),
        users_evaluated,
        rows: rows.into_iter().map(|r| r.0).collect(),
    })
}
