use std::collections::hash_map::Entry;
use std::collections::HashMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{relative_improvement, zero_one_error};
use crate::coeffs::{gamma_weights_auto, GammaWeights};
use crate::data::{Dataset, Split};
use crate::error::{invalid, Error, Result};
use crate::objectives::PerSampleObjective;
use crate::optimizers::{adaptive_q_update, schedule_lr, OptimizerKind, OptimizerState, QRule};
use crate::ordered_loss::{average_empirical_loss, ordered_empirical_loss, LossProfile};
use crate::selection::{epoch_batches, seeded_rng, stream};

use super::config::RunConfig;

/// Metrics at the end of one epoch; epoch 0 is the untrained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub epoch: usize,
    pub step: u64,
    pub q: usize,
    pub lr: f64,
    pub train_avg_loss: f64,
    pub train_ordered_loss: f64,
    /// Fraction in `[0, 1]`.
    pub train_acc: f64,
    /// Absent when the data set has no test part.
    pub test_error_pct: Option<f64>,
    pub epoch_seconds: f64,
}

/// Everything one seed produced.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub records: Vec<RunRecord>,
    pub final_theta: Vec<f64>,
    /// Set when training stopped early, e.g. on divergence.
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub config_id: String,
    /// Final test error of each seed that finished.
    pub test_errors: Vec<f64>,
    pub mean_test_err: Option<f64>,
    /// Sample standard deviation (`n − 1` denominator).
    pub std_test_err: Option<f64>,
    pub failed_seeds: Vec<u64>,
    /// Against the paired baseline, when there is one.
    pub rel_improvement_pct: Option<f64>,
}

impl Summary {
    pub fn from_errors(config_id: &str, test_errors: Vec<f64>, failed_seeds: Vec<u64>) -> Self {
        let (mean, std) = mean_std(&test_errors);
        Summary {
            config_id: config_id.to_string(),
            test_errors,
            mean_test_err: mean,
            std_test_err: std,
            failed_seeds,
            rel_improvement_pct: None,
        }
    }
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.len() > 1).then(|| (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
    (Some(mean), std)
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub config: RunConfig,
    pub runs: Vec<SeedRun>,
    pub summary: Summary,
}

impl ExperimentResult {
    pub fn records(&self) -> impl Iterator<Item = &RunRecord> {
        self.runs.iter().flat_map(|r| r.records.iter())
    }
}

/// Train and test parts of a loaded data set. Without split tags every
/// example is training data.
pub fn train_test(ds: &Dataset) -> (Dataset, Option<Dataset>) {
    match ds.split_tags() {
        Some(_) => (ds.part(Split::Train), Some(ds.part(Split::Test))),
        None => (ds.clone(), None),
    }
}

struct Evaluator<'a> {
    obj: &'a PerSampleObjective,
    train: &'a Dataset,
    test: Option<&'a Dataset>,
    s: usize,
    gammas: HashMap<usize, GammaWeights>,
}

impl Evaluator<'_> {
    fn gamma(&mut self, q: usize) -> Result<&GammaWeights> {
        let (n, s) = (self.train.len(), self.s);
        Ok(match self.gammas.entry(q) {
            Entry::Occupied(e) => e.into_mut(),
            Entry::Vacant(e) => e.insert(gamma_weights_auto(n, s, q)?),
        })
    }

    fn train_acc(&self, theta: &[f64]) -> f64 {
        let right = (0..self.train.len())
            .filter(|&i| self.obj.predict(theta, self.train.x(i)) == self.train.y(i))
            .count();
        right as f64 / self.train.len() as f64
    }

    fn record(&mut self, seed: u64, epoch: usize, state: &OptimizerState, seconds: f64) -> Result<RunRecord> {
        let profile = LossProfile::evaluate(self.obj, &state.theta, self.train)?;
        let train_avg_loss = average_empirical_loss(&profile);
        let train_ordered_loss = ordered_empirical_loss(&profile, self.gamma(state.q_current)?)?;
        let test_error_pct = self
            .test
            .filter(|t| !t.is_empty())
            .map(|t| zero_one_error(self.obj, &state.theta, t))
            .transpose()?;
        Ok(RunRecord {
            seed,
            epoch,
            step: state.steps,
            q: state.q_current,
            lr: state.lr_current,
            train_avg_loss,
            train_ordered_loss,
            train_acc: self.train_acc(&state.theta),
            test_error_pct,
            epoch_seconds: seconds,
        })
    }
}

/// Trains one seed on prepared data.
pub fn run_seed(cfg: &RunConfig, train: &Dataset, test: Option<&Dataset>, seed: u64) -> Result<SeedRun> {
    cfg.validate()?;
    let obj = cfg.objective(train.dim(), train.num_classes())?;
    let n = train.len();
    let s = cfg.opt.batch_size;
    if s > n {
        return Err(invalid(format!("batch size {s} exceeds {n} training examples")));
    }
    let schedule = cfg.opt.effective_schedule();
    let theta = obj.init_params(&mut seeded_rng(seed, stream::INIT));
    let mut batch_rng = seeded_rng(seed, stream::BATCHES);
    let mut state = OptimizerState::new(theta, cfg.opt.initial_q(), schedule_lr(&schedule, 1, 0));
    let mut eval = Evaluator {
        obj: &obj,
        train,
        test,
        s,
        gammas: HashMap::new(),
    };

    let mut records = vec![eval.record(seed, 0, &state, 0.0)?];
    let mut failure = None;
    'epochs: for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        for batch in epoch_batches(&mut batch_rng, n, s, cfg.opt.batching)? {
            state.lr_current = schedule_lr(&schedule, epoch, state.steps);
            match cfg.opt.step(&mut state, &obj, train, &batch) {
                Ok(()) => {}
                Err(e @ Error::Diverged { .. }) => {
                    failure = Some(e.to_string());
                    break 'epochs;
                }
                Err(e) => return Err(e),
            }
        }
        if state.theta.iter().any(|v| !v.is_finite()) {
            failure = Some(format!("parameters became non-finite in epoch {epoch}"));
            break;
        }
        let seconds = start.elapsed().as_secs_f64();
        let adaptive = cfg.opt.kind.is_ordered() && cfg.opt.q == QRule::Adaptive;
        if epoch % cfg.eval_every == 0 || epoch == cfg.epochs {
            records.push(eval.record(seed, epoch, &state, seconds)?);
        }
        if adaptive {
            state.q_current = adaptive_q_update(eval.train_acc(&state.theta), s);
        }
    }
    Ok(SeedRun {
        seed,
        records,
        final_theta: state.theta,
        failure,
    })
}

/// Runs every seed of `cfg` on already loaded data. Seeds run in parallel;
/// results come back in seed-list order.
pub fn run_experiment_on(cfg: &RunConfig, ds: &Dataset) -> Result<ExperimentResult> {
    cfg.validate()?;
    let (train, test) = train_test(ds);
    let runs = cfg
        .seeds
        .par_iter()
        .map(|&seed| run_seed(cfg, &train, test.as_ref(), seed))
        .collect::<Result<Vec<_>>>()?;
    let mut errors = Vec::new();
    let mut failed = Vec::new();
    for run in &runs {
        match (&run.failure, run.records.last().and_then(|r| r.test_error_pct)) {
            (None, Some(e)) => errors.push(e),
            (None, None) => {}
            (Some(_), _) => failed.push(run.seed),
        }
    }
    let summary = Summary::from_errors(&cfg.config_id, errors, failed);
    Ok(ExperimentResult {
        config: cfg.clone(),
        runs,
        summary,
    })
}

/// Loads the configured data and runs every seed.
pub fn run_experiment(cfg: &RunConfig) -> Result<ExperimentResult> {
    let ds = cfg.dataset.load(&cfg.base_dir)?;
    run_experiment_on(cfg, &ds)
}

/// Same config with the non-ordered counterpart of its optimizer.
pub fn baseline_config(cfg: &RunConfig) -> RunConfig {
    let mut base = cfg.clone();
    base.opt.kind = cfg.opt.kind.baseline();
    base.config_id = format!("{}-{}", cfg.config_id, kind_name(base.opt.kind));
    base
}

pub fn kind_name(kind: OptimizerKind) -> &'static str {
    match kind {
        OptimizerKind::Osgd => "osgd",
        OptimizerKind::Sgd => "sgd",
        OptimizerKind::Oadam => "oadam",
        OptimizerKind::Adam => "adam",
    }
}

/// Runs `cfg` and its baseline on the same data and seeds; the ordered
/// summary carries the relative improvement.
pub fn run_with_baseline(cfg: &RunConfig) -> Result<(ExperimentResult, ExperimentResult)> {
    let ds = cfg.dataset.load(&cfg.base_dir)?;
    let mut ordered = run_experiment_on(cfg, &ds)?;
    let baseline = run_experiment_on(&baseline_config(cfg), &ds)?;
    if let (Some(b), Some(o)) = (baseline.summary.mean_test_err, ordered.summary.mean_test_err) {
        ordered.summary.rel_improvement_pct = relative_improvement(b, o);
    }
    Ok((ordered, baseline))
}

/// One run per fixed `q`, sharing data and seeds.
pub fn sweep_q(cfg: &RunConfig, q_values: &[usize]) -> Result<Vec<ExperimentResult>> {
    if q_values.is_empty() {
        return Err(invalid("sweep needs at least one q value"));
    }
    let s = cfg.opt.batch_size;
    if let Some(&bad) = q_values.iter().find(|&&q| q == 0 || q > s) {
        return Err(invalid(format!("q={bad} outside 1..={s}")));
    }
    let ds = cfg.dataset.load(&cfg.base_dir)?;
    q_values
        .iter()
        .map(|&q| {
            let mut c = cfg.clone();
            c.opt.kind = if cfg.opt.kind.is_adam() {
                OptimizerKind::Oadam
            } else {
                OptimizerKind::Osgd
            };
            c.opt.q = QRule::Fixed(q);
            c.config_id = format!("{}-q{q}", cfg.config_id);
            run_experiment_on(&c, &ds)
        })
        .collect()
}

/// Accuracy over the examples whose component id is in `ids`.
pub fn component_accuracy(obj: &PerSampleObjective, theta: &[f64], ds: &Dataset, ids: &[usize]) -> Result<f64> {
    let comps = ds
        .components()
        .ok_or_else(|| Error::Data("data set carries no component ids".into()))?;
    let members: Vec<usize> = (0..ds.len()).filter(|&i| ids.contains(&comps[i])).collect();
    if members.is_empty() {
        return Err(Error::Data(format!("no examples in components {ids:?}")));
    }
    let right = members.iter().filter(|&&i| obj.predict(theta, ds.x(i)) == ds.y(i)).count();
    Ok(right as f64 / members.len() as f64)
}
