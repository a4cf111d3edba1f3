//! RMSE and NLL over prediction horizons, cross-learner variance and latency.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::bvn_nll;
use crate::data::{Point, TrajectorySample, MANEUVER_COUNT};
use crate::ensemble::{combine, ensemble_predict, EnsembleError, EnsembleLearner, EnsemblePrediction};
use crate::model::{BaseLearner, BaseLearnerPrediction, GaussianStep, ModelError, Variant};

/// Floor on mixture weights before taking logs.
pub const WEIGHT_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("length mismatch: {0}")]
    Composition(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

type Result<T> = std::result::Result<T, EvalError>;

/// Either kind of prediction, for metric code that treats both alike.
#[derive(Clone, Copy, Debug)]
pub enum AnyPrediction<'a> {
    Base(&'a BaseLearnerPrediction),
    Ensemble(&'a EnsemblePrediction),
}

impl<'a> AnyPrediction<'a> {
    /// `(weight, sequence)` per mixture component. Ensembles weight maneuvers by vote share.
    pub fn mixture(&self) -> Vec<(f64, &'a [GaussianStep])> {
        match *self {
            AnyPrediction::Base(p) => match p.variant {
                Variant::WithManeuvers => p
                    .maneuver_probs
                    .p
                    .iter()
                    .zip(&p.gaussians)
                    .map(|(&w, s)| (w, s.as_slice()))
                    .collect(),
                Variant::WithoutManeuvers => vec![(1.0, p.gaussians[0].as_slice())],
            },
            AnyPrediction::Ensemble(e) => match e.variant {
                Variant::WithManeuvers => e
                    .vote_shares
                    .iter()
                    .zip(&e.avg_gaussians)
                    .map(|(&w, s)| (w, s.as_slice()))
                    .collect(),
                Variant::WithoutManeuvers => vec![(1.0, e.avg_gaussians[0].as_slice())],
            },
        }
    }

    /// Sequence under the most probable (or voted) maneuver.
    pub fn selected(&self) -> &'a [GaussianStep] {
        match *self {
            AnyPrediction::Base(p) => p.sequence(p.maneuver_probs.argmax()),
            AnyPrediction::Ensemble(e) => match e.voted_maneuver {
                Some(m) => e.sequence(m),
                None => &e.avg_gaussians[0],
            },
        }
    }
}

/// Predicted mean positions under the selected maneuver.
pub fn select_trajectory(pred: AnyPrediction<'_>) -> Vec<Point> {
    pred.selected().iter().map(|s| Point::new(s.m_x, s.m_y)).collect()
}

/// Root-mean-square Euclidean error at 1-based future `step`.
pub fn rmse(preds: &[Vec<Point>], truths: &[Vec<Point>], step: usize) -> Result<f64> {
    if preds.len() != truths.len() || preds.is_empty() {
        return Err(EvalError::Composition(format!(
            "{} predictions, {} truths",
            preds.len(),
            truths.len()
        )));
    }
    let mut sum = 0.0;
    for (p, t) in preds.iter().zip(truths) {
        sum += sq_error(p, t, step)?;
    }
    Ok((sum / preds.len() as f64).sqrt())
}

fn sq_error(p: &[Point], t: &[Point], step: usize) -> Result<f64> {
    if step == 0 || step > p.len() || step > t.len() {
        return Err(EvalError::Composition(format!(
            "step {step} beyond {} / {} points",
            p.len(),
            t.len()
        )));
    }
    let (a, b) = (p[step - 1], t[step - 1]);
    Ok((a.x - b.x).powi(2) + (a.y - b.y).powi(2))
}

/// Mixture density of `truth` at 1-based `step`, as `−log Σ wᵢ N(truth; Gᵢ)`.
pub fn mixture_nll(pred: AnyPrediction<'_>, truth: Point, step: usize) -> Result<f64> {
    let comps = pred.mixture();
    let mut logs = Vec::with_capacity(MANEUVER_COUNT);
    for (w, seq) in comps {
        let g = seq
            .get(step.wrapping_sub(1))
            .ok_or_else(|| EvalError::Composition(format!("step {step} beyond {} steps", seq.len())))?;
        logs.push(w.max(WEIGHT_FLOOR).ln() - bvn_nll(g.m_x, g.m_y, g.s_x, g.s_y, g.r, truth.x, truth.y));
    }
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(-(max + logs.iter().map(|l| (l - max).exp()).sum::<f64>().ln()))
}

/// Mean mixture NLL at `step` over aligned predictions and truths.
pub fn nll(preds: &[AnyPrediction<'_>], truths: &[Vec<Point>], step: usize) -> Result<f64> {
    if preds.len() != truths.len() || preds.is_empty() {
        return Err(EvalError::Composition(format!(
            "{} predictions, {} truths",
            preds.len(),
            truths.len()
        )));
    }
    let mut sum = 0.0;
    for (p, t) in preds.iter().zip(truths) {
        let truth = *t
            .get(step.wrapping_sub(1))
            .ok_or_else(|| EvalError::Composition(format!("step {step} beyond {} truth points", t.len())))?;
        sum += mixture_nll(*p, truth, step)?;
    }
    Ok(sum / preds.len() as f64)
}

/// Evaluation steps at whole seconds: `steps_per_second, 2·steps_per_second, …` up to `t_f`.
pub fn horizon_steps(t_f: usize, steps_per_second: usize) -> Vec<usize> {
    let sps = steps_per_second.max(1);
    (1..).map(|k| k * sps).take_while(|&s| s <= t_f).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HorizonMetrics {
    pub horizon_s: Vec<f64>,
    pub steps: Vec<usize>,
    /// Meters.
    pub rmse: Vec<f64>,
    /// Nats.
    pub nll: Vec<f64>,
    pub k: usize,
}

/// Running sums for one learner.
#[derive(Clone, Debug)]
struct Accum {
    sq: Vec<f64>,
    nll: Vec<f64>,
    k: usize,
}

impl Accum {
    fn new(h: usize) -> Self {
        Accum {
            sq: vec![0.0; h],
            nll: vec![0.0; h],
            k: 0,
        }
    }

    fn add(&mut self, pred: AnyPrediction<'_>, truth: &[Point], steps: &[usize]) -> Result<()> {
        let traj = select_trajectory(pred);
        for (i, &s) in steps.iter().enumerate() {
            self.sq[i] += sq_error(&traj, truth, s)?;
            self.nll[i] += mixture_nll(pred, truth[s - 1], s)?;
        }
        self.k += 1;
        Ok(())
    }

    fn merge(&mut self, o: &Accum) {
        self.sq.iter_mut().zip(&o.sq).for_each(|(a, b)| *a += b);
        self.nll.iter_mut().zip(&o.nll).for_each(|(a, b)| *a += b);
        self.k += o.k;
    }

    fn finish(&self, steps: &[usize], period_s: f64) -> HorizonMetrics {
        let k = self.k.max(1) as f64;
        HorizonMetrics {
            horizon_s: steps.iter().map(|&s| round6(s as f64 * period_s)).collect(),
            steps: steps.to_vec(),
            rmse: self.sq.iter().map(|v| (v / k).sqrt()).collect(),
            nll: self.nll.iter().map(|v| v / k).collect(),
            k: self.k,
        }
    }
}

fn round6(v: f64) -> f64 {
    (v * 1e6).round() / 1e6
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearnerMetrics {
    /// Base learner index, or ensemble size.
    pub index: usize,
    pub metrics: HorizonMetrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FleetMetrics {
    pub base: Vec<LearnerMetrics>,
    pub ensemble: Vec<LearnerMetrics>,
}

#[derive(Clone, Debug)]
pub struct EvalOptions {
    pub period_s: f64,
    pub steps_per_second: usize,
    pub tie_seed: u64,
    pub chunk_size: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            period_s: 0.2,
            steps_per_second: 5,
            tie_seed: 0,
            chunk_size: 64,
        }
    }
}

/// Metrics of every base learner and every prefix ensemble `1..=N` on `samples`.
/// Chunks of samples are processed in parallel and reduced in order.
pub fn evaluate_fleet(fleet: &[BaseLearner], samples: &[TrajectorySample], opts: &EvalOptions) -> Result<FleetMetrics> {
    let first = fleet
        .first()
        .ok_or_else(|| EvalError::Precondition("empty fleet".into()))?;
    if samples.is_empty() {
        return Err(EvalError::Precondition("no test samples".into()));
    }
    if let Some(l) = fleet
        .iter()
        .find(|l| l.variant != first.variant || l.config.t_f != first.config.t_f)
    {
        return Err(EvalError::Precondition(format!(
            "learner {} differs in variant or horizon",
            l.index
        )));
    }
    let ensembles = crate::ensemble::build_ensembles(fleet, opts.tie_seed)?;
    let steps = horizon_steps(first.config.t_f, opts.steps_per_second);
    if steps.is_empty() {
        return Err(EvalError::Precondition(format!(
            "t_f = {} shorter than one second",
            first.config.t_f
        )));
    }
    let n = fleet.len();
    let partials: Vec<Result<Vec<Accum>>> = samples
        .par_chunks(opts.chunk_size.max(1))
        .map(|chunk| {
            let refs: Vec<&TrajectorySample> = chunk.iter().collect();
            let preds = fleet
                .iter()
                .map(|l| {
                    l.forward_batch(&refs)
                        .map_err(|source| EnsembleError::Member { index: l.index, source })
                })
                .collect::<std::result::Result<Vec<_>, _>>()?;
            let mut acc = vec![Accum::new(steps.len()); 2 * n];
            for (si, s) in chunk.iter().enumerate() {
                for (li, p) in preds.iter().enumerate() {
                    acc[li].add(AnyPrediction::Base(&p[si]), &s.future_truth, &steps)?;
                }
                let members: Vec<&BaseLearnerPrediction> = preds.iter().map(|p| &p[si]).collect();
                for e in &ensembles {
                    let ep = combine(&members[..e.n], &mut e.tie_rng(s.sample_id))?;
                    acc[n + e.n - 1].add(AnyPrediction::Ensemble(&ep), &s.future_truth, &steps)?;
                }
            }
            Ok(acc)
        })
        .collect();
    let mut total = vec![Accum::new(steps.len()); 2 * n];
    for part in partials {
        for (t, p) in total.iter_mut().zip(&part?) {
            t.merge(p);
        }
    }
    let lm = |i: usize, a: &Accum| LearnerMetrics {
        index: i,
        metrics: a.finish(&steps, opts.period_s),
    };
    Ok(FleetMetrics {
        base: fleet.iter().zip(&total[..n]).map(|(l, a)| lm(l.index, a)).collect(),
        ensemble: ensembles.iter().zip(&total[n..]).map(|(e, a)| lm(e.n, a)).collect(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupVariance {
    pub rmse: Vec<f64>,
    pub nll: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FleetStats {
    pub horizon_s: Vec<f64>,
    pub base: GroupVariance,
    pub ensemble: GroupVariance,
    /// `1 − var_ensemble / var_base` per horizon (`None` when the base variance is 0).
    pub rmse_reduction: Vec<Option<f64>>,
    pub nll_reduction: Vec<Option<f64>>,
}

/// Population variance of `values`.
pub fn population_variance(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
}

fn group_variance(group: &[LearnerMetrics], h: usize) -> GroupVariance {
    let col = |f: &dyn Fn(&HorizonMetrics) -> &Vec<f64>| -> Vec<f64> {
        (0..h)
            .map(|i| population_variance(&group.iter().map(|m| f(&m.metrics)[i]).collect::<Vec<_>>()))
            .collect()
    };
    GroupVariance {
        rmse: col(&|m| &m.rmse),
        nll: col(&|m| &m.nll),
    }
}

/// Cross-learner variances of RMSE and NLL for both groups, per horizon.
pub fn fleet_variance(metrics: &FleetMetrics) -> Result<FleetStats> {
    if metrics.base.len() < 2 || metrics.ensemble.len() < 2 {
        return Err(EvalError::Precondition(format!(
            "variance needs at least 2 learners per group, got {} base and {} ensemble",
            metrics.base.len(),
            metrics.ensemble.len()
        )));
    }
    let h = metrics.base[0].metrics.steps.len();
    let all = metrics.base.iter().chain(&metrics.ensemble);
    if all.clone().any(|m| m.metrics.steps.len() != h) {
        return Err(EvalError::Composition(
            "learners evaluated on different horizons".into(),
        ));
    }
    let base = group_variance(&metrics.base, h);
    let ensemble = group_variance(&metrics.ensemble, h);
    let reduction = |b: &[f64], e: &[f64]| -> Vec<Option<f64>> {
        b.iter().zip(e).map(|(b, e)| (*b > 0.0).then(|| 1.0 - e / b)).collect()
    };
    Ok(FleetStats {
        horizon_s: metrics.base[0].metrics.horizon_s.clone(),
        rmse_reduction: reduction(&base.rmse, &ensemble.rmse),
        nll_reduction: reduction(&base.nll, &ensemble.nll),
        base,
        ensemble,
    })
}

/// Mean of a group's metrics per horizon.
pub fn group_mean(group: &[LearnerMetrics]) -> Option<HorizonMetrics> {
    let first = &group.first()?.metrics;
    let k = group.len() as f64;
    let mean = |f: &dyn Fn(&HorizonMetrics) -> &Vec<f64>| -> Vec<f64> {
        (0..first.steps.len())
            .map(|i| group.iter().map(|m| f(&m.metrics)[i]).sum::<f64>() / k)
            .collect()
    };
    Some(HorizonMetrics {
        horizon_s: first.horizon_s.clone(),
        steps: first.steps.clone(),
        rmse: mean(&|m| &m.rmse),
        nll: mean(&|m| &m.nll),
        k: first.k,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    /// Average over the ensemble learners.
    pub ensemble_mean: HorizonMetrics,
    pub base_mean: HorizonMetrics,
    pub variance: Option<FleetStats>,
}

pub fn summarize(metrics: &FleetMetrics) -> Result<MetricsSummary> {
    let none = || EvalError::Precondition("empty metrics".into());
    Ok(MetricsSummary {
        ensemble_mean: group_mean(&metrics.ensemble).ok_or_else(none)?,
        base_mean: group_mean(&metrics.base).ok_or_else(none)?,
        variance: fleet_variance(metrics).ok(),
    })
}

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    let io = |source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io)?;
    }
    std::fs::File::create(path)
        .map(std::io::BufWriter::new)
        .map_err(|source| EvalError::Io {
            path: path.to_path_buf(),
            source,
        })
}

fn rows(metrics: &FleetMetrics) -> impl Iterator<Item = (&'static str, &LearnerMetrics)> {
    metrics
        .base
        .iter()
        .map(|m| ("base", m))
        .chain(metrics.ensemble.iter().map(|m| ("ensemble", m)))
}

/// One row per learner × horizon: `group,learner,horizon_s,step,rmse,nll,k`.
pub fn write_metrics_csv(path: &Path, metrics: &FleetMetrics) -> Result<()> {
    let io = |source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut w = create(path)?;
    writeln!(w, "group,learner,horizon_s,step,rmse,nll,k").map_err(io)?;
    for (group, m) in rows(metrics) {
        let h = &m.metrics;
        for i in 0..h.steps.len() {
            writeln!(
                w,
                "{group},{},{},{},{},{},{}",
                m.index, h.horizon_s[i], h.steps[i], h.rmse[i], h.nll[i], h.k
            )
            .map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

/// Long format for plotting: `group,learner,horizon_s,metric,value`.
pub fn write_long_csv(path: &Path, metrics: &FleetMetrics) -> Result<()> {
    let io = |source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut w = create(path)?;
    writeln!(w, "group,learner,horizon_s,metric,value").map_err(io)?;
    for (group, m) in rows(metrics) {
        let h = &m.metrics;
        for i in 0..h.steps.len() {
            writeln!(w, "{group},{},{},rmse,{}", m.index, h.horizon_s[i], h.rmse[i]).map_err(io)?;
            writeln!(w, "{group},{},{},nll,{}", m.index, h.horizon_s[i], h.nll[i]).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyRow {
    /// Ensemble size; `0` marks the bare base learner.
    pub n: usize,
    pub mean_s: f64,
    pub std_s: f64,
    pub calls: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub base: LatencyRow,
    pub ensembles: Vec<LatencyRow>,
    /// Least squares of mean latency against ensemble size.
    pub fit: Option<LinearFit>,
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> Option<LinearFit> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let r2 = if syy == 0.0 { 1.0 } else { 1.0 - ss_res / syy };
    Some(LinearFit { slope, intercept, r2 })
}

fn time_calls(
    samples: &[TrajectorySample],
    repetitions: usize,
    mut f: impl FnMut(&TrajectorySample) -> Result<()>,
) -> Result<LatencyRow> {
    // Warmup pass, excluded from the timings.
    for s in samples {
        f(s)?;
    }
    let mut times = Vec::with_capacity(samples.len() * repetitions);
    for _ in 0..repetitions {
        for s in samples {
            let start = Instant::now();
            f(s)?;
            times.push(start.elapsed().as_secs_f64());
        }
    }
    let mean = times.iter().sum::<f64>() / times.len() as f64;
    Ok(LatencyRow {
        n: 0,
        mean_s: mean,
        std_s: population_variance(&times).sqrt(),
        calls: times.len(),
    })
}

/// Per-sample prediction latency of learner 1 and of ensembles of each size in
/// `sizes`, on a single worker thread.
pub fn bench_latency(
    fleet: &[BaseLearner],
    samples: &[TrajectorySample],
    sizes: &[usize],
    repetitions: usize,
    tie_seed: u64,
) -> Result<LatencyReport> {
    if fleet.is_empty() || samples.is_empty() || repetitions == 0 {
        return Err(EvalError::Precondition(
            "need at least one model, sample and repetition".into(),
        ));
    }
    if let Some(&n) = sizes.iter().find(|&&n| n == 0 || n > fleet.len()) {
        return Err(EvalError::Precondition(format!(
            "ensemble size {n} outside 1..={}",
            fleet.len()
        )));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| EvalError::Precondition(e.to_string()))?;
    pool.install(|| {
        let base = time_calls(samples, repetitions, |s| {
            fleet[0].forward(s)?;
            Ok(())
        })?;
        let mut ensembles = Vec::with_capacity(sizes.len());
        for &n in sizes {
            let e = EnsembleLearner { n, tie_seed };
            let mut row = time_calls(samples, repetitions, |s| {
                ensemble_predict(fleet, &e, s)?;
                Ok(())
            })?;
            row.n = n;
            ensembles.push(row);
        }
        let x: Vec<f64> = ensembles.iter().map(|r| r.n as f64).collect();
        let y: Vec<f64> = ensembles.iter().map(|r| r.mean_s).collect();
        Ok(LatencyReport {
            base,
            fit: linear_fit(&x, &y),
            ensembles,
        })
    })
}
