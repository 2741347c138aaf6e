//! Desk-scale experiment scans over the averaging hyperparameters:
//! K (how many checkpoints), softmax temperature, step sizes for the
//! gradient extension and the dev-data weight update, and a barycentric
//! grid over three checkpoints.
//!
//! Output rows are plain records convertible to CSV or JSON. Ordering
//! is fixed and every evaluation is pure, so sweep output is
//! byte-identical across runs and thread counts.

use rayon::prelude::*;
use serde_json::{json, Map, Value};

use crate::averaging::{
    gradient_step_average, ppl_softmax_weights, uniform_weights, weighted_average, GradStepConfig,
    TemperatureConfig, WeightVector,
};
use crate::error::{Error, Result};
use crate::objective::DevObjective;
use crate::selection::{select, SelectionStrategy};
use crate::store::{Checkpoint, CheckpointMeta};
use crate::weight_optimizer::{dev_loss_of_weights, grad_wrt_logits, softmax, LogitVector};

/// A swept hyperparameter value. Integers (K, lattice coordinates)
/// print as integers; everything else prints with 17 significant
/// digits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ParamValue {
    Int(u64),
    Float(f64),
}

impl std::fmt::Display for ParamValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ParamValue::Int(v) => write!(f, "{v}"),
            ParamValue::Float(v) => write!(f, "{v:.16e}"),
        }
    }
}

/// One row of a sweep: the swept parameter values, the measured dev
/// loss/perplexity, and optionally the weight vector that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRecord {
    pub params: Vec<(String, ParamValue)>,
    pub dev_loss: f64,
    pub dev_ppl: f64,
    pub weights: Option<Vec<f64>>,
}

impl SweepRecord {
    /// Builds a record from a measured loss; perplexity is exp(loss),
    /// keeping the two consistent by construction.
    pub fn from_loss(
        params: Vec<(String, ParamValue)>,
        dev_loss: f64,
        weights: Option<Vec<f64>>,
    ) -> Self {
        Self {
            params,
            dev_loss,
            dev_ppl: dev_loss.exp(),
            weights,
        }
    }

    fn param(&self, name: &str) -> Option<ParamValue> {
        self.params.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }
}

/// Resolution of the barycentric lattice: spacing 1/R per axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimplexGridSpec {
    pub resolution: usize,
}

impl Default for SimplexGridSpec {
    fn default() -> Self {
        Self { resolution: 20 }
    }
}

impl SimplexGridSpec {
    pub fn new(resolution: usize) -> Result<Self> {
        if resolution == 0 {
            return Err(Error::InvalidConfig("resolution must be >= 1".into()));
        }
        Ok(Self { resolution })
    }

    /// Number of lattice points: (R+1)(R+2)/2.
    pub fn num_points(&self) -> usize {
        (self.resolution + 1) * (self.resolution + 2) / 2
    }
}

/// Default temperature grid, covering both softmax asymptotes.
pub fn default_tau_grid() -> Vec<f64> {
    vec![0.0, 0.1, 1.0, 10.0, 100.0, 1e3, 1e6]
}

/// Default step-size grid: 8 points log-spaced over [1e-4, 1e2].
pub fn default_eta_grid() -> Vec<f64> {
    (0..8)
        .map(|i| 10f64.powf(-4.0 + i as f64 * 6.0 / 7.0))
        .collect()
}

fn metas_of(series: &[Checkpoint]) -> Vec<CheckpointMeta> {
    series.iter().map(|c| c.meta().clone()).collect()
}

fn pick(series: &[Checkpoint], indices: &[usize]) -> Vec<Checkpoint> {
    indices.iter().map(|&i| series[i].clone()).collect()
}

fn validate_grid(name: &str, grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidConfig(format!("empty {name} grid")));
    }
    if let Some(v) = grid.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(Error::InvalidConfig(format!(
            "{name} grid values must be finite and >= 0, got {v}"
        )));
    }
    Ok(())
}

/// Evaluates an f32 averaged checkpoint under the objective.
fn eval_average(avg: &Checkpoint, objective: &(impl DevObjective + ?Sized)) -> Result<f64> {
    objective.loss(&avg.params().cast::<f64>())
}

/// For K = 1..min(k_max, len): select with the given strategy, take the
/// uniform average, measure. One record per K with column "k".
pub fn k_sweep(
    series: &[Checkpoint],
    strategy: SelectionStrategy,
    k_max: usize,
    objective: &(impl DevObjective + ?Sized),
) -> Result<Vec<SweepRecord>> {
    if series.is_empty() {
        return Err(Error::EmptySeries);
    }
    if k_max == 0 {
        return Err(Error::InvalidConfig("k_max must be >= 1".into()));
    }
    let metas = metas_of(series);
    let mut records = Vec::new();
    for k in 1..=k_max.min(series.len()) {
        let sel = select(&metas, strategy.with_k(k))?;
        let chosen = pick(series, sel.indices());
        let avg = weighted_average(&chosen, &uniform_weights(chosen.len())?)?;
        let loss = eval_average(&avg, objective)?;
        records.push(SweepRecord::from_loss(
            vec![("k".into(), ParamValue::Int(k as u64))],
            loss,
            None,
        ));
    }
    Ok(records)
}

/// For each temperature: perplexity-softmax weights over the selected
/// checkpoints, weighted average, measure. Records carry the weight
/// snapshot, aligned with the selection order.
pub fn temp_sweep(
    series: &[Checkpoint],
    strategy: SelectionStrategy,
    taus: &[f64],
    objective: &(impl DevObjective + ?Sized),
) -> Result<Vec<SweepRecord>> {
    validate_grid("tau", taus)?;
    let metas = metas_of(series);
    let sel = select(&metas, strategy)?;
    let chosen = pick(series, sel.indices());
    let ppls: Vec<f64> = sel
        .indices()
        .iter()
        .map(|&i| metas[i].dev_ppl.expect("select checked dev_ppl presence"))
        .collect();

    let mut records = Vec::with_capacity(taus.len());
    for &tau in taus {
        let w = ppl_softmax_weights(&ppls, TemperatureConfig::new(tau)?)?;
        let avg = weighted_average(&chosen, &w)?;
        let loss = eval_average(&avg, objective)?;
        records.push(SweepRecord::from_loss(
            vec![("tau".into(), ParamValue::Float(tau))],
            loss,
            Some(w.as_slice().to_vec()),
        ));
    }
    Ok(records)
}

/// For each step size: gradient-step average with fixed
/// perplexity-softmax weights at the given temperature, measure.
pub fn eta_sweep_grad(
    series: &[Checkpoint],
    strategy: SelectionStrategy,
    tau: TemperatureConfig,
    etas: &[f64],
    objective: &(impl DevObjective + ?Sized),
) -> Result<Vec<SweepRecord>> {
    validate_grid("eta", etas)?;
    let metas = metas_of(series);
    let sel = select(&metas, strategy)?;
    let chosen = pick(series, sel.indices());
    let ppls: Vec<f64> = sel
        .indices()
        .iter()
        .map(|&i| metas[i].dev_ppl.expect("select checked dev_ppl presence"))
        .collect();
    let w = ppl_softmax_weights(&ppls, tau)?;

    let mut records = Vec::with_capacity(etas.len());
    for &eta in etas {
        let avg = gradient_step_average(&chosen, &w, GradStepConfig::new(eta)?)?;
        let loss = eval_average(&avg, objective)?;
        records.push(SweepRecord::from_loss(
            vec![("eta".into(), ParamValue::Float(eta))],
            loss,
            None,
        ));
    }
    Ok(records)
}

/// For each step size: one-step logit update from zero, measure the
/// resulting interpolation. The base logit gradient is evaluated once
/// and scaled per step size, which is exactly the one-step formula.
pub fn eta_sweep_optimize(
    ckpts: &[Checkpoint],
    etas: &[f64],
    objective: &(impl DevObjective + ?Sized),
) -> Result<Vec<SweepRecord>> {
    validate_grid("eta", etas)?;
    if ckpts.len() < 2 {
        return Err(Error::TooFewCheckpoints(ckpts.len()));
    }
    let base_grad = grad_wrt_logits(ckpts, &LogitVector::zeros(ckpts.len()), objective)?;

    let mut records = Vec::with_capacity(etas.len());
    for &eta in etas {
        let logits = LogitVector::new(base_grad.iter().map(|g| -eta * g).collect())?;
        let w = softmax(&logits);
        let (loss, _) = dev_loss_of_weights(ckpts, &w, objective)?;
        records.push(SweepRecord::from_loss(
            vec![("eta".into(), ParamValue::Float(eta))],
            loss,
            Some(w.as_slice().to_vec()),
        ));
    }
    Ok(records)
}

/// Evaluates all barycentric weights (a/R, b/R, c/R) with a+b+c = R
/// over three checkpoints, in lexicographic (a, b) order. Grid points
/// are independent and evaluated in parallel; output order is fixed.
pub fn simplex_grid(
    c1: &Checkpoint,
    c2: &Checkpoint,
    c3: &Checkpoint,
    grid: SimplexGridSpec,
    objective: &(impl DevObjective + ?Sized),
) -> Result<Vec<SweepRecord>> {
    SimplexGridSpec::new(grid.resolution)?;
    let ckpts = vec![c1.clone(), c2.clone(), c3.clone()];
    let r = grid.resolution;

    let mut points = Vec::with_capacity(grid.num_points());
    for a in 0..=r {
        for b in 0..=(r - a) {
            points.push((a, b, r - a - b));
        }
    }

    points
        .par_iter()
        .map(|&(a, b, c)| {
            let w = WeightVector::new(vec![
                a as f64 / r as f64,
                b as f64 / r as f64,
                c as f64 / r as f64,
            ])?;
            let (loss, _) = dev_loss_of_weights(&ckpts, &w, objective)?;
            Ok(SweepRecord::from_loss(
                vec![
                    ("a".into(), ParamValue::Int(a as u64)),
                    ("b".into(), ParamValue::Int(b as u64)),
                    ("c".into(), ParamValue::Int(c as u64)),
                ],
                loss,
                Some(w.as_slice().to_vec()),
            ))
        })
        .collect()
}

/// Loss spread over a simplex sweep, split into the full grid and its
/// interior (all lattice coordinates >= 1). The interior spread is the
/// flatness diagnostic; it is reported, never asserted.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct FlatnessReport {
    pub min_loss: f64,
    pub max_loss: f64,
    pub total_spread: f64,
    pub interior_min_loss: Option<f64>,
    pub interior_max_loss: Option<f64>,
    pub interior_spread: Option<f64>,
}

/// Computes the flatness diagnostic from simplex records.
pub fn simplex_flatness(records: &[SweepRecord]) -> Result<FlatnessReport> {
    if records.is_empty() {
        return Err(Error::InvalidConfig("no simplex records".into()));
    }
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    let mut imin = f64::INFINITY;
    let mut imax = f64::NEG_INFINITY;
    let mut has_interior = false;
    for rec in records {
        let coords: Vec<u64> = ["a", "b", "c"]
            .iter()
            .map(|n| match rec.param(n) {
                Some(ParamValue::Int(v)) => Ok(v),
                _ => Err(Error::InvalidConfig(format!(
                    "record is missing integer lattice coordinate \"{n}\""
                ))),
            })
            .collect::<Result<_>>()?;
        min = min.min(rec.dev_loss);
        max = max.max(rec.dev_loss);
        if coords.iter().all(|&v| v >= 1) {
            has_interior = true;
            imin = imin.min(rec.dev_loss);
            imax = imax.max(rec.dev_loss);
        }
    }
    Ok(FlatnessReport {
        min_loss: min,
        max_loss: max,
        total_spread: max - min,
        interior_min_loss: has_interior.then_some(imin),
        interior_max_loss: has_interior.then_some(imax),
        interior_spread: has_interior.then_some(imax - imin),
    })
}

/// Renders records as CSV: swept parameter columns, dev_loss, dev_ppl,
/// then w_0..w_{K-1} when weights were recorded. Floats carry 17
/// significant digits; the header row is always present.
pub fn records_to_csv(records: &[SweepRecord]) -> Result<String> {
    let first = records
        .first()
        .ok_or_else(|| Error::InvalidConfig("no records to render".into()))?;
    let param_names: Vec<&str> = first.params.iter().map(|(n, _)| n.as_str()).collect();
    let weight_arity = first.weights.as_ref().map(Vec::len);

    let mut out = String::new();
    for name in &param_names {
        out.push_str(name);
        out.push(',');
    }
    out.push_str("dev_loss,dev_ppl");
    if let Some(k) = weight_arity {
        for i in 0..k {
            out.push_str(&format!(",w_{i}"));
        }
    }
    out.push('\n');

    for rec in records {
        let names: Vec<&str> = rec.params.iter().map(|(n, _)| n.as_str()).collect();
        if names != param_names || rec.weights.as_ref().map(Vec::len) != weight_arity {
            return Err(Error::InvalidConfig(
                "records disagree on columns; cannot render one CSV".into(),
            ));
        }
        for (_, v) in &rec.params {
            out.push_str(&format!("{v},"));
        }
        out.push_str(&format!("{:.16e},{:.16e}", rec.dev_loss, rec.dev_ppl));
        if let Some(ws) = &rec.weights {
            for w in ws {
                out.push_str(&format!(",{w:.16e}"));
            }
        }
        out.push('\n');
    }
    Ok(out)
}

/// Renders records as a JSON array; weights are omitted when absent.
pub fn records_to_json(records: &[SweepRecord]) -> Result<String> {
    let rows: Vec<Value> = records
        .iter()
        .map(|rec| {
            let mut obj = Map::new();
            for (name, v) in &rec.params {
                let v = match v {
                    ParamValue::Int(i) => json!(i),
                    ParamValue::Float(f) => json!(f),
                };
                obj.insert(name.clone(), v);
            }
            obj.insert("dev_loss".into(), json!(rec.dev_loss));
            obj.insert("dev_ppl".into(), json!(rec.dev_ppl));
            if let Some(ws) = &rec.weights {
                obj.insert("weights".into(), json!(ws));
            }
            Value::Object(obj)
        })
        .collect();
    serde_json::to_string_pretty(&rows)
        .map(|mut s| {
            s.push('\n');
            s
        })
        .map_err(|e| Error::InvalidConfig(e.to_string()))
}
