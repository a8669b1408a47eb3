//! Job kinds, their parameter schemas, admission checks and execution.

use arch_core::pipeline::{evaluate, Models, PipelineError, Shape, MAX_LEVEL};
use arch_core::prior::{Half, SamplingParams};
use arch_core::upsampler::DetailOptions;
use arch_core::voxcore::VoxelGrid;
use base64::Engine as _;
use serde::{Deserialize, Serialize};

use crate::store::{Lineage, Store, StoreError};

/// Upper bound on shapes one job may produce.
pub const MAX_OUTPUTS: usize = 256;

fn default_one() -> usize {
    1
}
fn default_k() -> usize {
    10
}
fn default_temperature() -> f32 {
    1.0
}
fn default_n() -> usize {
    5
}
fn default_swaps() -> usize {
    128
}
fn default_ddim() -> usize {
    100
}
fn default_batch() -> usize {
    32
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateParams {
    #[serde(default = "default_one")]
    pub count: usize,
    /// Defaults to the prior's configured top-k.
    #[serde(default)]
    pub top_k: Option<usize>,
    #[serde(default = "default_temperature")]
    pub temperature: f32,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompleteParams {
    pub model_id: String,
    /// Half of the grid to keep; the rest is resampled.
    #[serde(default)]
    pub half: Option<Half>,
    /// Kept region, either one flag per latent cell or one per voxel (raster order).
    #[serde(default)]
    pub known_mask: Option<Vec<bool>>,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub top_k: Option<usize>,
    #[serde(default = "default_temperature")]
    pub temperature: f32,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanCompleteParams {
    /// Base64 of an `R × R` top view, row-major with x fastest: either one
    /// byte per cell (nonzero is filled) or bits packed LSB first.
    pub plan: String,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub top_k: Option<usize>,
    #[serde(default = "default_temperature")]
    pub temperature: f32,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterpolateParams {
    pub a_id: String,
    pub b_id: String,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VaryParams {
    pub model_id: String,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_swaps")]
    pub n_swaps: usize,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetailiseParams {
    pub model_id: String,
    pub target_level: usize,
    #[serde(default = "default_ddim")]
    pub ddim_steps: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsParams {
    pub generated_ids: Vec<String>,
    pub reference_ids: Vec<String>,
    /// Partial input the generated shapes complete; adds UHD and TMD.
    #[serde(default)]
    pub partial_id: Option<String>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum JobSpec {
    Generate(GenerateParams),
    Complete(CompleteParams),
    PlanComplete(PlanCompleteParams),
    Interpolate(InterpolateParams),
    Vary(VaryParams),
    Detailise(DetailiseParams),
    Metrics(MetricsParams),
}

/// Why a job was refused at submission.
#[derive(Debug, thiserror::Error, PartialEq)]
pub enum Rejection {
    #[error("unknown model {0}")]
    UnknownModel(String),
    #[error("{0}")]
    MissingCheckpoint(String),
    #[error("{0}")]
    Invalid(String),
}

impl From<PipelineError> for Rejection {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::MissingCheckpoint(what) => Rejection::MissingCheckpoint(format!("no {what} checkpoint loaded")),
            other => Rejection::Invalid(other.to_string()),
        }
    }
}

fn invalid(msg: impl Into<String>) -> Rejection {
    Rejection::Invalid(msg.into())
}

fn count_in(what: &str, n: usize, max: usize) -> Result<(), Rejection> {
    if n == 0 || n > max {
        return Err(invalid(format!("{what} = {n} outside 1..={max}")));
    }
    Ok(())
}

fn sampling(models: &Models, top_k: Option<usize>, temperature: f32, seed: u64) -> Result<SamplingParams, Rejection> {
    let gpt = models.prior()?;
    let k = gpt.config.codebook_size;
    let top_k = top_k.unwrap_or(gpt.config.top_k);
    if top_k == 0 || top_k > k {
        return Err(invalid(format!("top_k = {top_k} outside 1..={k}")));
    }
    if !(temperature.is_finite() && temperature > 0.0) {
        return Err(invalid(format!("temperature = {temperature} must be positive")));
    }
    Ok(SamplingParams { top_k, temperature, seed })
}

/// Decode a plan bitmap for an `r × r` grid.
pub fn decode_plan(b64: &str, r: usize) -> Result<Vec<bool>, Rejection> {
    let bytes = base64::engine::general_purpose::STANDARD.decode(b64.trim()).map_err(|e| invalid(format!("plan is not base64: {e}")))?;
    let n = r * r;
    if bytes.len() == n {
        Ok(bytes.iter().map(|&b| b != 0).collect())
    } else if bytes.len() == n.div_ceil(8) {
        Ok((0..n).map(|i| bytes[i / 8] >> (i % 8) & 1 == 1).collect())
    } else {
        Err(invalid(format!("plan has {} bytes; a {r}x{r} plan needs {n} (one per cell) or {} (packed)", bytes.len(), n.div_ceil(8))))
    }
}

pub fn encode_plan(plan: &[bool]) -> String {
    let bytes: Vec<u8> = plan.iter().map(|&b| b as u8).collect();
    base64::engine::general_purpose::STANDARD.encode(bytes)
}

fn known(store: &Store, id: &str) -> Result<crate::store::ModelEntry, Rejection> {
    store.model(id).ok_or_else(|| Rejection::UnknownModel(id.to_string()))
}

/// Grids that can take part in token operations: stored tokens, or the
/// tokenizer's own resolution.
fn tokenizable(models: &Models, e: &crate::store::ModelEntry) -> Result<(), Rejection> {
    let r = models.resolution().ok_or_else(|| Rejection::MissingCheckpoint("no vqgan checkpoint loaded".into()))?;
    if e.tokens.is_none() && e.resolution != r {
        return Err(invalid(format!("model {} is {}^3 without tokens; token operations need {r}^3 grids", e.id, e.resolution)));
    }
    Ok(())
}

/// Admission checks: ids resolve (404), checkpoints exist (409), parameters are valid (422).
pub fn admit(spec: &JobSpec, store: &Store, models: &Models) -> Result<(), Rejection> {
    match spec {
        JobSpec::Generate(p) => {
            models.vqgan()?;
            count_in("count", p.count, MAX_OUTPUTS)?;
            sampling(models, p.top_k, p.temperature, p.seed)?;
        }
        JobSpec::Complete(p) => {
            let e = known(store, &p.model_id)?;
            models.vqgan()?;
            sampling(models, p.top_k, p.temperature, p.seed)?;
            count_in("k", p.k, MAX_OUTPUTS)?;
            let r = models.resolution().unwrap_or(0);
            if e.resolution != r {
                return Err(invalid(format!("completion needs a {r}^3 grid, model is {}^3", e.resolution)));
            }
            completion_mask(models, p)?;
        }
        JobSpec::PlanComplete(p) => {
            let r = models.vqgan()?.config.resolution;
            sampling(models, p.top_k, p.temperature, p.seed)?;
            count_in("k", p.k, MAX_OUTPUTS)?;
            decode_plan(&p.plan, r)?;
        }
        JobSpec::Interpolate(p) => {
            let (a, b) = (known(store, &p.a_id)?, known(store, &p.b_id)?);
            tokenizable(models, &a)?;
            tokenizable(models, &b)?;
        }
        JobSpec::Vary(p) => {
            let e = known(store, &p.model_id)?;
            tokenizable(models, &e)?;
            count_in("n", p.n, MAX_OUTPUTS)?;
        }
        JobSpec::Detailise(p) => {
            let e = known(store, &p.model_id)?;
            if !(1..=MAX_LEVEL).contains(&p.target_level) {
                return Err(invalid(format!("target_level = {} outside 1..={MAX_LEVEL}", p.target_level)));
            }
            if models.available_levels() < p.target_level {
                return Err(Rejection::MissingCheckpoint(format!("no upsampler level {} checkpoint loaded", models.available_levels() + 1)));
            }
            count_in("ddim_steps", p.ddim_steps, models.diffusion_steps().unwrap_or(0))?;
            count_in("batch_size", p.batch_size, 4096)?;
            let patch = arch_core::upsampler::LevelConfig::new(1).map_err(PipelineError::from)?.coarse;
            if e.resolution < patch {
                return Err(invalid(format!("grid {}^3 is smaller than the {patch}^3 patch", e.resolution)));
            }
        }
        JobSpec::Metrics(p) => {
            if p.generated_ids.is_empty() || p.reference_ids.is_empty() {
                return Err(invalid("generated_ids and reference_ids must be non-empty"));
            }
            if p.generated_ids.len() + p.reference_ids.len() < 2 {
                return Err(invalid("metrics need at least two shapes"));
            }
            for id in p.generated_ids.iter().chain(&p.reference_ids).chain(&p.partial_id) {
                known(store, id)?;
            }
        }
    }
    Ok(())
}

fn completion_mask(models: &Models, p: &CompleteParams) -> Result<Vec<bool>, Rejection> {
    let c = &models.vqgan()?.config;
    match (&p.half, &p.known_mask) {
        (Some(h), None) => Ok(models.half_mask(*h)?),
        (None, Some(m)) if m.len() == c.latent.pow(3) => Ok(m.clone()),
        (None, Some(m)) => Ok(models.voxel_mask(m)?),
        _ => Err(invalid("give exactly one of `half` and `known_mask`")),
    }
}

/// Output of a finished job.
pub struct Outcome {
    pub result_ids: Vec<String>,
    pub result: Option<serde_json::Value>,
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("{0}")]
    Rejected(#[from] Rejection),
}

fn shape_of(store: &Store, id: &str) -> Result<Shape, RunError> {
    let entry = store.model(id).ok_or_else(|| StoreError::Unknown(id.to_string()))?;
    Ok(Shape { grid: store.grid(id)?, tokens: entry.tokens })
}

fn put_all(store: &Store, shapes: Vec<Shape>, parents: &[String], op: &str, job: &str) -> Result<Vec<String>, RunError> {
    shapes
        .into_iter()
        .map(|s| {
            let lineage = Lineage { parents: parents.to_vec(), operation: op.into(), job_id: Some(job.into()) };
            Ok(store.put_grid(&s.grid, s.tokens, Some(lineage))?.id)
        })
        .collect()
}

/// Execute one admitted job. `progress` takes a fraction in [0, 1].
pub fn run(job_id: &str, spec: &JobSpec, store: &Store, models: &Models, progress: &mut dyn FnMut(f64)) -> Result<Outcome, RunError> {
    admit(spec, store, models)?;
    let ids = |v: Vec<String>| Outcome { result_ids: v, result: None };
    match spec {
        JobSpec::Generate(p) => {
            let params = sampling(models, p.top_k, p.temperature, p.seed)?;
            let shapes = models.generate(p.count, &params, progress)?;
            Ok(ids(put_all(store, shapes, &[], "generate", job_id)?))
        }
        JobSpec::Complete(p) => {
            let params = sampling(models, p.top_k, p.temperature, p.seed)?;
            let mask = completion_mask(models, p)?;
            let grid = store.grid(&p.model_id)?;
            let shapes = models.complete(&grid, &mask, p.k, &params, progress)?;
            Ok(ids(put_all(store, shapes, std::slice::from_ref(&p.model_id), "complete", job_id)?))
        }
        JobSpec::PlanComplete(p) => {
            let params = sampling(models, p.top_k, p.temperature, p.seed)?;
            let plan = decode_plan(&p.plan, models.vqgan()?.config.resolution)?;
            let (partial, shapes) = models.plan_complete(&plan, p.k, &params, progress)?;
            let lineage = Lineage { parents: vec![], operation: "plan".into(), job_id: Some(job_id.into()) };
            let partial_id = store.put_grid(&partial, None, Some(lineage))?.id;
            let result_ids = put_all(store, shapes, std::slice::from_ref(&partial_id), "plan_complete", job_id)?;
            Ok(Outcome { result_ids, result: Some(serde_json::json!({ "partial_id": partial_id })) })
        }
        JobSpec::Interpolate(p) => {
            let (a, b) = (shape_of(store, &p.a_id)?, shape_of(store, &p.b_id)?);
            let child = models.interpolate(&a, &b, p.seed)?;
            Ok(ids(put_all(store, vec![child], &[p.a_id.clone(), p.b_id.clone()], "interpolate", job_id)?))
        }
        JobSpec::Vary(p) => {
            let s = shape_of(store, &p.model_id)?;
            let mut out = Vec::with_capacity(p.n);
            for i in 0..p.n {
                out.extend(models.vary(&s, 1, p.n_swaps, p.seed.wrapping_add(i as u64))?);
                progress((i + 1) as f64 / p.n as f64);
            }
            Ok(ids(put_all(store, out, std::slice::from_ref(&p.model_id), "vary", job_id)?))
        }
        JobSpec::Detailise(p) => {
            let grid = store.grid(&p.model_id)?;
            let opts = DetailOptions { batch_size: p.batch_size, seed: p.seed, ddim_steps: p.ddim_steps, soft_chain: false };
            let fine = models.detailise(&grid, p.target_level, &opts, &mut |pr| progress(pr.done as f64 / pr.total.max(1) as f64))?;
            let shape = Shape { grid: fine, tokens: None };
            Ok(ids(put_all(store, vec![shape], std::slice::from_ref(&p.model_id), "detailise", job_id)?))
        }
        JobSpec::Metrics(p) => {
            let load = |ids: &[String]| ids.iter().map(|id| store.grid(id)).collect::<Result<Vec<VoxelGrid>, _>>();
            let generated = load(&p.generated_ids)?;
            let reference = load(&p.reference_ids)?;
            let partial = p.partial_id.as_deref().map(|id| store.grid(id)).transpose()?;
            let report = evaluate(&generated, &reference, partial.as_ref(), p.seed)?;
            Ok(Outcome { result_ids: vec![], result: Some(serde_json::to_value(report).expect("report serializes")) })
        }
    }
}
