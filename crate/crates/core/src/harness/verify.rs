//! Self-check suite behind `osgd verify`.

use num_bigint::BigUint;
use num_rational::BigRational;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::coeffs::{beta_cdf, gamma_asymptotic, gamma_weights, gamma_weights_auto, GammaWeights};
use crate::data::{gen_clusters_2d, ClustersSpec, Dataset};
use crate::error::{Error, Result};
use crate::objectives::{Activation, Example, LossKind, ModelSpec, PerSampleObjective};
use crate::optimizers::{
    adam_step, minibatch_sgd_step, ordered_adam_step, osgd_step, AdamConfig, OptimizerState,
};
use crate::ordered_loss::{batch_count, expected_step_bruteforce, lq_subgradient, selection_counts, LossProfile};
use crate::selection::{epoch_batches, q_argmax, seeded_rng, stream, BatchIndices, Batching, Rng};

pub const REPORT_SCHEMA: &str = "osgd-verify/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub schema: String,
    pub passed: bool,
    pub checks: Vec<CheckResult>,
}

impl VerificationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: VerificationReport = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if r.schema != REPORT_SCHEMA {
            return Err(Error::Config(format!("unknown report schema {:?}", r.schema)));
        }
        Ok(r)
    }

    pub fn failing(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct VerifyOptions {
    pub seed: u64,
    /// Mutation hook: perturb the first weight of every γ vector before the
    /// checks see it.
    pub corrupt_gamma: bool,
}

type Check = fn(&VerifyOptions) -> Result<String>;

/// Runs every check and collects the outcomes; a check that errors counts as
/// failed.
pub fn run_verification_suite(opts: &VerifyOptions) -> VerificationReport {
    let checks: [(&str, Check); 8] = [
        ("gamma-sum", check_gamma_sum),
        ("gamma-shape", check_gamma_shape),
        ("gamma-enumeration", check_gamma_enumeration),
        ("unbiasedness", check_unbiasedness),
        ("gradient-fd", check_gradients),
        ("beta-cdf", check_beta_cdf),
        ("q-equals-s", check_q_equals_s),
        ("tie-break", check_tie_break),
    ];
    let checks: Vec<CheckResult> = checks
        .iter()
        .map(|(name, f)| {
            let (passed, detail) = match f(opts) {
                Ok(d) => (true, d),
                Err(e) => (false, e.to_string()),
            };
            CheckResult {
                name: name.to_string(),
                passed,
                detail,
            }
        })
        .collect();
    VerificationReport {
        schema: REPORT_SCHEMA.into(),
        passed: checks.iter().all(|c| c.passed),
        checks,
    }
}

fn fail(msg: String) -> Error {
    Error::InvalidArgument(msg)
}

fn weights(n: usize, s: usize, q: usize, opts: &VerifyOptions) -> Result<GammaWeights> {
    let g = gamma_weights(n, s, q)?;
    Ok(if opts.corrupt_gamma {
        g.with_corrupted_approx(|v| v[0] += 0.5)
    } else {
        g
    })
}

fn grid(max_n: usize) -> impl Iterator<Item = (usize, usize, usize)> {
    (1..=max_n).flat_map(|n| (1..=n).flat_map(move |s| (1..=s).map(move |q| (n, s, q))))
}

fn check_gamma_sum(opts: &VerifyOptions) -> Result<String> {
    let mut count = 0;
    for (n, s, q) in grid(30) {
        let g = weights(n, s, q, opts)?;
        let sum: f64 = g.approx().iter().sum();
        if (sum - q as f64).abs() > 1e-9 * q as f64 {
            return Err(fail(format!("sum of weights {sum} != q at (n,s,q)=({n},{s},{q})")));
        }
        if let Some(exact) = g.exact_rationals() {
            let total = exact.iter().fold(BigRational::from_integer(0.into()), |a, b| a + b);
            if total != BigRational::from_integer(q.into()) {
                return Err(fail(format!("exact weights sum to {total} at ({n},{s},{q})")));
            }
        }
        count += 1;
    }
    Ok(format!("{count} (n,s,q) triples with n <= 30"))
}

fn check_gamma_shape(opts: &VerifyOptions) -> Result<String> {
    let mut count = 0;
    for (n, s, q) in grid(30) {
        let g = weights(n, s, q, opts)?;
        let v = g.approx();
        let cap = s as f64 / n as f64;
        if v.windows(2).any(|w| w[1] > w[0]) {
            return Err(fail(format!("weights increase at ({n},{s},{q})")));
        }
        if v.iter().any(|&x| x > cap * (1.0 + 1e-12)) {
            return Err(fail(format!("weight above s/n at ({n},{s},{q})")));
        }
        if v[n - s + q..].iter().any(|&x| x != 0.0) {
            return Err(fail(format!("nonzero weight past n-s+q at ({n},{s},{q})")));
        }
        count += 1;
    }
    Ok(format!("{count} triples: nonincreasing, <= s/n, zero tail"))
}

fn check_gamma_enumeration(opts: &VerifyOptions) -> Result<String> {
    let mut count = 0;
    for (n, s, q) in grid(7) {
        let values: Vec<f64> = (0..n).map(|i| (n - i) as f64).collect();
        let counts = selection_counts(&values, s, q)?;
        let total = BigUint::from(batch_count(n, s));
        let g = weights(n, s, q, opts)?;
        for (j, &c) in counts.iter().enumerate() {
            let expect = c as f64 / batch_count(n, s) as f64;
            let approx = g.approx()[j];
            if (approx - expect).abs() > 1e-12 {
                return Err(fail(format!("rank {} at ({n},{s},{q}): enumerated {expect}, weight {approx}", j + 1)));
            }
            if let Some(exact_g) = g.exact() {
                let freq = BigRational::new(BigUint::from(c).into(), total.clone().into());
                let exact = exact_g.rational(j + 1);
                if freq != exact {
                    return Err(fail(format!("rank {} at ({n},{s},{q}): enumerated {freq}, exact weight {exact}", j + 1)));
                }
            }
        }
        count += 1;
    }
    Ok(format!("{count} triples with n <= 7 match subset enumeration"))
}

fn random_logistic_instance(rng: &mut Rng, n: usize) -> Result<(PerSampleObjective, Dataset, Vec<f64>)> {
    let obj = PerSampleObjective::new(ModelSpec::Linear { bias: true }, LossKind::BinaryCrossEntropy, 0.01, 3, 1)?;
    loop {
        let features: Vec<f64> = (0..3 * n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let data = Dataset::new(features, 3, labels, 2, "random logistic")?;
        let theta: Vec<f64> = (0..obj.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        if LossProfile::evaluate(&obj, &theta, &data)?.has_distinct_losses() {
            return Ok((obj, data, theta));
        }
    }
}

fn max_step_deviation(rng: &mut Rng, g: &GammaWeights, trials: usize) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let (obj, data, theta) = random_logistic_instance(rng, g.n())?;
        let brute = expected_step_bruteforce(&obj, &theta, &data, g.s(), g.q())?;
        let analytic = lq_subgradient(&obj, &theta, &data, g)?;
        let diff = brute.iter().zip(&analytic).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        worst = worst.max(diff);
    }
    Ok(worst)
}

/// Max componentwise `|E step − ∂L_q|` over `trials` random logistic
/// instances with distinct losses. Enumeration is capped at `C(n, s)`
/// batches of 10^5.
pub fn unbiasedness_deviation(n: usize, s: usize, q: usize, trials: usize, seed: u64) -> Result<f64> {
    let g = gamma_weights_auto(n, s, q)?;
    max_step_deviation(&mut seeded_rng(seed, stream::VERIFY), &g, trials)
}

fn check_unbiasedness(opts: &VerifyOptions) -> Result<String> {
    let mut rng = seeded_rng(opts.seed, stream::VERIFY);
    let g = weights(8, 4, 2, opts)?;
    let worst = max_step_deviation(&mut rng, &g, 5)?;
    if worst > 1e-10 {
        return Err(fail(format!("expected step differs from subgradient by {worst:e}")));
    }
    Ok(format!("5 instances (n,s,q)=(8,4,2), max deviation {worst:e}"))
}

/// Relative error `‖g_fd − g‖ / max(‖g_fd‖, ‖g‖)` of the analytic gradient
/// against central differences with step `1e-6·(1 + |θ_i|)`.
pub fn fd_relative_error(obj: &PerSampleObjective, theta: &[f64], ex: &Example) -> Result<f64> {
    let g = obj.per_sample_grad(theta, ex)?;
    let mut probe = theta.to_vec();
    let mut diff2 = 0.0;
    let mut fd2 = 0.0;
    let mut g2 = 0.0;
    for i in 0..theta.len() {
        let h = 1e-6 * (1.0 + theta[i].abs());
        probe[i] = theta[i] + h;
        let up = obj.per_sample_loss(&probe, ex)?;
        probe[i] = theta[i] - h;
        let down = obj.per_sample_loss(&probe, ex)?;
        probe[i] = theta[i];
        let fd = (up - down) / (2.0 * h);
        diff2 += (fd - g[i]).powi(2);
        fd2 += fd * fd;
        g2 += g[i] * g[i];
    }
    let scale = fd2.sqrt().max(g2.sqrt());
    Ok(if scale == 0.0 { 0.0 } else { diff2.sqrt() / scale })
}

/// Every model/loss pairing exercised by the gradient checks, with the
/// output width each loss needs.
pub fn gradient_check_objectives(d_in: usize, classes: usize) -> Result<Vec<PerSampleObjective>> {
    let models = [
        ModelSpec::Linear { bias: true },
        ModelSpec::Linear { bias: false },
        ModelSpec::Mlp {
            hidden: vec![5],
            activation: Activation::Relu,
        },
        ModelSpec::Mlp {
            hidden: vec![4, 3],
            activation: Activation::Tanh,
        },
        ModelSpec::Mlp {
            hidden: vec![4],
            activation: Activation::Sigmoid,
        },
    ];
    let losses = [
        LossKind::CrossEntropy,
        LossKind::MulticlassHinge,
        LossKind::BinaryCrossEntropy,
        LossKind::Squared,
    ];
    let mut out = Vec::new();
    for m in &models {
        for &l in &losses {
            let d_out = if l == LossKind::BinaryCrossEntropy { 1 } else { classes };
            out.push(PerSampleObjective::new(m.clone(), l, 0.0, d_in, d_out)?);
        }
    }
    Ok(out)
}

/// A random point and example at least `min_margin` away from any kink.
pub fn random_smooth_point(
    obj: &PerSampleObjective,
    rng: &mut Rng,
    min_margin: f64,
) -> Result<(Vec<f64>, Vec<f64>, usize)> {
    let classes = if obj.loss_kind() == LossKind::BinaryCrossEntropy { 2 } else { obj.d_out() };
    loop {
        let theta: Vec<f64> = (0..obj.dim()).map(|_| rng.random_range(-1.5..1.5)).collect();
        let x: Vec<f64> = (0..obj.d_in()).map(|_| rng.random_range(-2.0..2.0)).collect();
        let y = rng.random_range(0..classes);
        if obj.kink_margin(&theta, &Example::new(&x, y))? > min_margin {
            return Ok((theta, x, y));
        }
    }
}

fn check_gradients(opts: &VerifyOptions) -> Result<String> {
    let mut rng = seeded_rng(opts.seed, stream::VERIFY);
    let objs = gradient_check_objectives(3, 3)?;
    let mut worst: f64 = 0.0;
    for obj in &objs {
        for _ in 0..5 {
            let (theta, x, y) = random_smooth_point(obj, &mut rng, 1e-3)?;
            let err = fd_relative_error(obj, &theta, &Example::new(&x, y))?;
            if err > 1e-5 {
                return Err(fail(format!("{:?}/{:?}: relative error {err:e}", obj.model(), obj.loss_kind())));
            }
            worst = worst.max(err);
        }
    }
    Ok(format!("{} model/loss pairs x 5 points, worst relative error {worst:e}", objs.len()))
}

fn check_beta_cdf(_: &VerifyOptions) -> Result<String> {
    let mut worst: f64 = 0.0;
    for (s, q) in [(10, 3), (100, 30), (100, 60)] {
        for k in 1..100 {
            let z = k as f64 / 100.0;
            let lhs = 1.0 - gamma_asymptotic(z, s, q)? / s as f64;
            let rhs = beta_cdf(z, q as f64, (s - q) as f64)?;
            worst = worst.max((lhs - rhs).abs());
        }
    }
    if worst > 1e-9 {
        return Err(fail(format!("limit curve and Beta CDF differ by {worst:e}")));
    }
    Ok(format!("3 (s,q) pairs on a 99-point grid, max deviation {worst:e}"))
}

fn check_q_equals_s(opts: &VerifyOptions) -> Result<String> {
    let data = gen_clusters_2d(opts.seed, &ClustersSpec::default())?;
    let obj = PerSampleObjective::new(ModelSpec::Linear { bias: true }, LossKind::CrossEntropy, 1e-4, 2, 2)?;
    let s = 16;
    let theta = obj.init_params(&mut seeded_rng(opts.seed, stream::INIT));
    let cfg = AdamConfig::default();
    let mut states = [
        OptimizerState::new(theta.clone(), s, 0.01),
        OptimizerState::new(theta.clone(), s, 0.01),
        OptimizerState::new(theta.clone(), s, 0.001),
        OptimizerState::new(theta, s, 0.001),
    ];
    let mut rng = seeded_rng(opts.seed, stream::BATCHES);
    for _ in 0..3 {
        for batch in epoch_batches(&mut rng, data.len(), s, Batching::Shuffle)? {
            let q = batch.len();
            let [a, b, c, d] = &mut states;
            osgd_step(a, &obj, &data, &batch, q, 0.9)?;
            minibatch_sgd_step(b, &obj, &data, &batch, 0.9)?;
            ordered_adam_step(c, &obj, &data, &batch, q, &cfg)?;
            adam_step(d, &obj, &data, &batch, &cfg)?;
            if a.theta != b.theta || c.theta != d.theta {
                return Err(fail(format!("trajectories split at step {}", a.steps)));
            }
        }
    }
    Ok(format!("{} steps bit-identical for SGD and Adam", states[0].steps))
}

fn check_tie_break(opts: &VerifyOptions) -> Result<String> {
    let mut rng = seeded_rng(opts.seed, stream::VERIFY);
    let cases = 1000;
    for case in 0..cases {
        let (values, batch, q) = planted_tie_case(&mut rng)?;
        let got = q_argmax(&values, &batch, q)?;
        let expect = reference_q_argmax(&values, &batch, q);
        if got != expect {
            return Err(fail(format!("case {case}: got {got:?}, expected {expect:?}")));
        }
    }
    Ok(format!("{cases} randomized cases with planted ties"))
}

/// Values drawn from a handful of levels so that ties are common.
pub fn planted_tie_case(rng: &mut Rng) -> Result<(Vec<f64>, BatchIndices, usize)> {
    let n = rng.random_range(2..40);
    let levels = rng.random_range(1..5);
    let values: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64 * 0.5).collect();
    let s = rng.random_range(1..=n);
    let members = rand::seq::index::sample(rng, n, s).into_vec();
    let q = rng.random_range(1..=s);
    Ok((values, BatchIndices::new(members, n)?, q))
}

/// Stable descending sort of the batch by value; ascending index breaks ties.
pub fn reference_q_argmax(values: &[f64], batch: &BatchIndices, q: usize) -> Vec<usize> {
    let mut members = batch.as_slice().to_vec();
    members.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).expect("finite").then(a.cmp(&b)));
    let mut top = members[..q].to_vec();
    top.sort_unstable();
    top
}
