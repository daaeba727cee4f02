use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use lae_pacbayes::data::{
    holdout_mask, id_map_paths, load_interactions, population_correlation, sample_regression, strong_split,
    synthetic_latent_clusters, write_id_map, GaussianDataModel, InteractionMatrix, LoadOptions,
};
use lae_pacbayes::ease;
use lae_pacbayes::experiment::{run_experiment, Population, PopulationSource};
use lae_pacbayes::io::{read_matrix, write_matrix, MatrixFormat};
use lae_pacbayes::lae_bound::{
    compute_bound, default_lambda_grid, expected_emp_risk, kl_divergence, optimal_posterior, BoundSettings,
    GaussianPrior, SampleMoments,
};
use lae_pacbayes::metrics::evaluate_ranking;
use lae_pacbayes::mlr_bound::{alquier_rhs, expected_true_risk_gaussian, PsiEvaluator};
use lae_pacbayes::oracle::sample_prior;
use lae_pacbayes::verify::run_suite;

use crate::config::{delimiter_byte, DatasetFormat, ExperimentConfig};
use crate::{
    BoundArgs, CliError, IngestArgs, MetricsArgs, MlrDemoArgs, RunArgs, SplitArgs, SynthArgs, TrainEaseArgs,
    VerifyArgs, WORKERS_ENV,
};

/// Size the global rayon pool: flag, then config, then environment.
pub fn init_workers(flag: Option<usize>, config: Option<usize>) -> Result<(), CliError> {
    let from_env = match std::env::var(WORKERS_ENV) {
        Ok(v) => Some(
            v.trim()
                .parse::<usize>()
                .map_err(|_| CliError::User(format!("{WORKERS_ENV} must be a positive integer, got {v:?}")))?,
        ),
        Err(_) => None,
    };
    let Some(n) = flag.or(config).or(from_env) else { return Ok(()) };
    if n == 0 {
        return Err(CliError::User("worker count must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::User(format!("cannot configure {n} workers: {e}")))
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::User(format!("cannot create {}: {e}", dir.display())))
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| CliError::User(format!("cannot write {}: {e}", path.display())))
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report types serialize");
    s.push('\n');
    s
}

fn load_dataset(path: &Path, format: DatasetFormat, options: &LoadOptions) -> Result<InteractionMatrix, CliError> {
    Ok(match format {
        DatasetFormat::Coo => InteractionMatrix::read_coo(path)?,
        DatasetFormat::Csv => load_interactions(path, options)?.matrix,
    })
}

pub fn ingest(a: &IngestArgs) -> Result<(), CliError> {
    let options = LoadOptions {
        delimiter: delimiter_byte(a.delimiter)?,
        skip_header: a.skip_header,
        min_user_interactions: a.min_user_interactions,
        min_item_interactions: a.min_item_interactions,
    };
    let loaded = load_interactions(&a.input, &options)?;
    loaded.matrix.write_coo(&a.output)?;
    let (users, items) = id_map_paths(&a.output);
    write_id_map(&users, &loaded.user_ids)?;
    write_id_map(&items, &loaded.item_ids)?;
    println!(
        "{} records -> {} items x {} users, {} interactions; wrote {}",
        loaded.raw_records,
        loaded.matrix.n_items(),
        loaded.matrix.n_users(),
        loaded.matrix.nnz(),
        a.output.display()
    );
    Ok(())
}

pub fn split(a: &SplitArgs) -> Result<(), CliError> {
    let h = InteractionMatrix::read_coo(&a.input)?;
    let (train, test) = strong_split(&h, a.test_fraction, a.seed)?;
    ensure_dir(&a.output_dir)?;
    train.write_coo(&a.output_dir.join("train.coo"))?;
    test.write_coo(&a.output_dir.join("test.coo"))?;
    println!("train {} users, test {} users -> {}", train.n_users(), test.n_users(), a.output_dir.display());
    Ok(())
}

pub fn train_ease(a: &TrainEaseArgs) -> Result<(), CliError> {
    let h = InteractionMatrix::read_coo(&a.input)?;
    let model = ease::train_ease(&h, a.gamma)?;
    write_matrix(&a.output, &model.weights, MatrixFormat::from_path(&a.output))?;
    println!("EASE gamma={} on {} items -> {}", a.gamma, h.n_items(), a.output.display());
    Ok(())
}

fn load_model(path: &Path, n_items: usize) -> Result<DMatrix<f64>, CliError> {
    let w = read_matrix(path)?;
    if w.shape() != (n_items, n_items) {
        return Err(CliError::User(format!(
            "model {} is {}x{}, test data has {n_items} items",
            path.display(),
            w.nrows(),
            w.ncols()
        )));
    }
    Ok(w)
}

pub fn bound(a: &BoundArgs) -> Result<(), CliError> {
    let test = InteractionMatrix::read_coo(&a.test)?;
    let w = load_model(&a.model, test.n_items())?;
    let sigma_hh = match (&a.population_matrix, &a.population_interactions) {
        (Some(path), _) => read_matrix(path)?,
        (None, Some(path)) => population_correlation(&InteractionMatrix::read_coo(path)?)?,
        (None, None) => {
            return Err(CliError::User(
                "give the population as --population-matrix or --population-interactions".into(),
            ))
        }
    };
    if sigma_hh.shape() != (test.n_items(), test.n_items()) {
        return Err(CliError::User(format!(
            "population is {}x{}, test data has {} items",
            sigma_hh.nrows(),
            sigma_hh.ncols(),
            test.n_items()
        )));
    }
    let sample = SampleMoments::from_holdout(&holdout_mask(&test, a.p, a.seed)?)?;
    let settings = BoundSettings {
        sigma: a.sigma,
        delta: a.delta,
        grid: a.lambdas.clone().unwrap_or_else(default_lambda_grid),
        zero_diag: !a.full_diagonal,
        jitter: a.jitter,
    };
    let report = compute_bound(&sigma_hh, a.p, &sample, &w, &settings)?;
    let text = report.to_text();
    print!("{text}");
    if let Some(dir) = &a.output_dir {
        ensure_dir(dir)?;
        write_file(&dir.join("bound.txt"), &text)?;
        write_file(&dir.join("bound.json"), &to_json(&report))?;
    }
    Ok(())
}

pub fn metrics(a: &MetricsArgs) -> Result<(), CliError> {
    let test = InteractionMatrix::read_coo(&a.test)?;
    let w = load_model(&a.model, test.n_items())?;
    let split = holdout_mask(&test, a.p, a.seed)?;
    let result = evaluate_ranking(&w, &split.input, &split.target, &a.ks)?;
    println!("users evaluated: {}", result.users_evaluated);
    for k in &a.ks {
        println!("Recall@{k} {:.4}  NDCG@{k} {:.4}", result.recall_at_k[k], result.ndcg_at_k[k]);
    }
    if let Some(dir) = &a.output_dir {
        ensure_dir(dir)?;
        write_file(&dir.join("metrics.json"), &to_json(&result))?;
    }
    Ok(())
}

/// Config file, then flags on top.
fn resolve_config(a: &RunArgs) -> Result<ExperimentConfig, CliError> {
    let mut c = match &a.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    macro_rules! apply {
        ($($field:ident),*) => {$(
            if let Some(v) = &a.$field {
                c.$field = v.clone().into();
            }
        )*};
    }
    apply!(dataset, format, output_dir, test_fraction, p, gammas, sigma, delta, lambdas, seed, ks, population_file);
    if let Some(j) = a.jitter {
        c.jitter = Some(j);
    }
    if let Some(s) = a.population {
        c.population_source = s;
    }
    Ok(c)
}

#[derive(Serialize)]
struct RunReport<'a> {
    config: &'a ExperimentConfig,
    result: &'a lae_pacbayes::experiment::ExperimentReport,
}

pub fn run(a: &RunArgs, workers: Option<usize>) -> Result<(), CliError> {
    let config = resolve_config(a)?;
    init_workers(workers, config.workers)?;
    let dataset = config
        .dataset
        .as_ref()
        .ok_or_else(|| CliError::User("no dataset: set `dataset` in the config or pass --dataset".into()))?;
    let format = config.dataset_format().expect("dataset is set");
    let whole = load_dataset(dataset, format, &config.load_options()?)?;
    let population = match config.population_source {
        PopulationSource::Train => Population::Train,
        PopulationSource::Whole => Population::Whole,
        PopulationSource::File => {
            let path = config.population_file.as_ref().ok_or_else(|| {
                CliError::User("population_source = \"file\" needs population_file (or --population-file)".into())
            })?;
            Population::Given(read_matrix(path)?)
        }
    };
    let report = run_experiment(&whole, &config.settings(), &population)?;
    let text = report.to_text();
    print!("{text}");
    let out = config.output_dir();
    ensure_dir(&out)?;
    write_file(&out.join("report.txt"), &text)?;
    write_file(&out.join("report.json"), &to_json(&RunReport { config: &config, result: &report }))?;
    let failed: Vec<String> =
        report.rows.iter().filter_map(|r| r.error.as_ref().map(|e| format!("gamma {}: {e}", r.gamma))).collect();
    if failed.len() == report.rows.len() {
        return Err(CliError::Failed(format!("no gamma produced a bound; {}", failed.join("; "))));
    }
    for f in &failed {
        log::warn!("{f}");
    }
    Ok(())
}

pub fn verify(a: &VerifyArgs) -> Result<(), CliError> {
    let results = run_suite(a.level);
    for r in &results {
        println!("{r}");
    }
    let failed = results.iter().filter(|r| !r.pass).count();
    println!("verify: {} passed, {failed} failed", results.len() - failed);
    if let Some(path) = &a.json {
        write_file(path, &to_json(&results))?;
    }
    if failed > 0 {
        return Err(CliError::Failed(format!("{failed} check(s) failed")));
    }
    Ok(())
}

fn gauss(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

pub fn mlr_demo(a: &MlrDemoArgs) -> Result<(), CliError> {
    if a.inputs == 0 || a.outputs == 0 || a.m == 0 || a.prior_samples == 0 {
        return Err(CliError::User("inputs, outputs, m and prior-samples must be positive".into()));
    }
    let (n, p) = (a.inputs, a.outputs);
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let root = gauss(n, n, &mut rng);
    let model = GaussianDataModel::new(
        DVector::from_fn(n, |_, _| 0.5 * rng.sample::<f64, _>(StandardNormal)),
        &root * root.transpose() / n as f64 + DMatrix::identity(n, n) * 0.2,
        gauss(p, n, &mut rng),
        DMatrix::identity(p, p) * 0.25,
    )?;
    let prior = GaussianPrior::new(DMatrix::zeros(p, n), a.sigma, false)?;
    let psi = PsiEvaluator::new(&model, &sample_prior(&prior, a.prior_samples, a.seed.wrapping_add(1)))?;
    let (x, y) = sample_regression(&model, a.m, a.seed.wrapping_add(2))?;
    let sample = SampleMoments::from_dense(&x, &y)?;
    let grid: Vec<f64> = (0..).map(|k| 2f64.powi(k)).take_while(|&l| l <= a.m as f64).collect();
    // union bound over the grid
    let delta_each = a.delta / grid.len() as f64;

    let mut out = String::new();
    let _ = writeln!(
        out,
        "# inputs={n} outputs={p} m={} sigma={} delta={} prior_samples={} seed={}",
        a.m, a.sigma, a.delta, a.prior_samples, a.seed
    );
    let _ = writeln!(
        out,
        "{:>8} {:>12} {:>12} {:>12} {:>12} {:>12} {:>12} {:>12}",
        "lambda", "true_exp", "emp_exp", "kl", "psi", "psi_upper", "psi_mean", "RH"
    );
    for &lambda in &grid {
        let post = optimal_posterior(&sample, &prior, lambda)?;
        let emp = expected_emp_risk(&post, &sample)?;
        let kl = kl_divergence(&post, &prior)?;
        let exact = psi.exact(lambda, a.m)?;
        let rh = alquier_rhs(emp, kl, delta_each, exact, lambda)?;
        let _ = writeln!(
            out,
            "{lambda:>8} {:>12.4} {emp:>12.4} {kl:>12.4} {exact:>12.4e} {:>12.4e} {:>12.4e} {rh:>12.4}",
            expected_true_risk_gaussian(&model, &post)?,
            psi.upper(lambda, a.m)?,
            psi.upper_with_mean(lambda, a.m)?,
        );
    }
    print!("{out}");
    Ok(())
}

pub fn synth(a: &SynthArgs) -> Result<(), CliError> {
    let h = synthetic_latent_clusters(a.items, a.users, a.clusters, a.seed)?;
    h.write_coo(&a.output)?;
    println!("{} items x {} users, {} interactions -> {}", h.n_items(), h.n_users(), h.nnz(), a.output.display());
    Ok(())
}
