//! Losses, the learning-rate schedule and the three-stage curriculum.
//!
//! Stage `teacher` trains the motion branch alone on (flow, gt); stage
//! `student` trains the appearance branch alone on (frame, gt); stage `joint`
//! trains the full dual-branch model with deep supervision on both maps.
//! Each stage builds the single-branch variant of the model, so parameters
//! outside the stage are untouched bitwise.

pub mod checkpoint;

use indexmap::IndexMap;
use ndarray::{Array2, ArrayD};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{AblationSpec, Mode, ModelConfig};
use crate::data::VideoSample;
use crate::error::{GtError, Result};
use crate::model::{ForwardVars, GtNet};
use crate::nn::{Adam, Graph, ParamStore, Var};

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Teacher,
    Student,
    Joint,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Stage::Teacher => write!(f, "teacher"),
            Stage::Student => write!(f, "student"),
            Stage::Joint => write!(f, "joint"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub stage: Stage,
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub decay_factor: f64,
    /// Epochs per decay step.
    pub decay_period: usize,
    /// Weight of the teacher-map loss in the joint stage.
    pub lambda_teacher: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            stage: Stage::Joint,
            epochs: 4,
            batch_size: 4,
            base_lr: 1e-4,
            decay_factor: 0.1,
            decay_period: 25,
            lambda_teacher: 1.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_lr <= 0.0 {
            return Err(GtError::Config("base_lr must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.decay_factor) || self.decay_factor == 0.0 {
            return Err(GtError::Config("decay_factor must lie in (0,1)".into()));
        }
        if self.decay_period == 0 || self.epochs == 0 || self.batch_size == 0 {
            return Err(GtError::Config("epochs, batch_size and decay_period must be positive".into()));
        }
        if self.lambda_teacher < 0.0 {
            return Err(GtError::Config("lambda_teacher must be non-negative".into()));
        }
        Ok(())
    }

    /// `lr = base_lr * decay_factor^floor(epoch / decay_period)`.
    pub fn lr_schedule(&self, epoch: usize) -> f64 {
        self.base_lr * self.decay_factor.powi((epoch / self.decay_period) as i32)
    }
}

/// Binary mask as a (1,S,S) float target.
fn gt_target(gt: &Array2<bool>) -> ArrayD<f64> {
    let (h, w) = gt.dim();
    let mut t = ndarray::Array3::<f64>::zeros((1, h, w));
    for ((y, x), &v) in gt.indexed_iter() {
        if v {
            t[(0, y, x)] = 1.0;
        }
    }
    t.into_dyn()
}

/// Stage loss in stable logit form: mean-pixel BCE on the supervised map(s);
/// the joint stage adds `lambda * BCE(Z^M)` to `BCE(Z^A)`.
pub fn stage_loss(
    g: &mut Graph,
    vars: &ForwardVars,
    gt: &Array2<bool>,
    stage: Stage,
    lambda_teacher: f64,
) -> Result<Var> {
    let target = gt_target(gt);
    let need = |v: Option<Var>, what: &str| {
        v.ok_or_else(|| GtError::Config(format!("stage {stage} supervises {what}, but the forward pass did not produce it")))
    };
    match stage {
        Stage::Teacher => {
            let z_m = need(vars.z_m, "the motion mask")?;
            Ok(g.bce_with_logits_mean(z_m, target))
        }
        Stage::Student => {
            let z_a = need(vars.z_a, "the appearance map")?;
            Ok(g.bce_with_logits_mean(z_a, target))
        }
        Stage::Joint => {
            let z_a = need(vars.z_a, "the appearance map")?;
            let z_m = need(vars.z_m, "the motion mask")?;
            let la = g.bce_with_logits_mean(z_a, target.clone());
            let lm = g.bce_with_logits_mean(z_m, target);
            let lm_weighted = g.scale(lm, lambda_teacher);
            Ok(g.add(la, lm_weighted))
        }
    }
}

/// The model variant a stage actually trains.
pub fn stage_ablation(base: &AblationSpec, stage: Stage) -> AblationSpec {
    match stage {
        Stage::Teacher => AblationSpec { mode: Mode::M, dual_branch: false, ..*base },
        Stage::Student => AblationSpec { mode: Mode::A, dual_branch: false, ..*base },
        Stage::Joint => *base,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TraceRow {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct StageRun {
    pub trace: Vec<TraceRow>,
}

impl StageRun {
    pub fn first_loss(&self) -> f64 {
        self.trace.first().map(|r| r.loss).unwrap_or(f64::NAN)
    }

    pub fn last_loss(&self) -> f64 {
        self.trace.last().map(|r| r.loss).unwrap_or(f64::NAN)
    }

    pub fn write_csv(&self, mut w: impl std::io::Write) -> Result<()> {
        let mut csv = csv::Writer::from_writer(&mut w);
        csv.write_record(["step", "epoch", "lr", "loss"])?;
        for row in &self.trace {
            csv.write_record([
                row.step.to_string(),
                row.epoch.to_string(),
                format!("{:e}", row.lr),
                format!("{:.17e}", row.loss),
            ])?;
        }
        csv.flush()?;
        Ok(())
    }
}

/// Train one stage in place. `store` must hold the stage model's parameters
/// (a superset is fine). `max_steps` caps the number of optimizer steps.
pub fn train_stage(
    model_config: &ModelConfig,
    store: &mut ParamStore,
    dataset: &[VideoSample],
    cfg: &TrainConfig,
    max_steps: Option<usize>,
) -> Result<StageRun> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(GtError::Config(format!(
            "stage {} received an empty dataset",
            cfg.stage
        )));
    }
    let mut stage_config = model_config.clone();
    stage_config.ablation = stage_ablation(&model_config.ablation, cfg.stage);
    let net = GtNet::new(stage_config)?;
    for def in net.param_defs() {
        if !store.contains(&format!("{}.w", def.name)) {
            return Err(GtError::Config(format!(
                "parameter store is missing '{}' required by stage {}",
                def.name, cfg.stage
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Adam::new();
    let mut trace = Vec::new();
    let mut step = 0usize;
    let mut indices: Vec<usize> = (0..dataset.len()).collect();

    'outer: for epoch in 0..cfg.epochs {
        let lr = cfg.lr_schedule(epoch);
        indices.shuffle(&mut rng);
        for batch in indices.chunks(cfg.batch_size) {
            let mut grads: IndexMap<String, ArrayD<f64>> = IndexMap::new();
            let mut batch_loss = 0.0;
            for &i in batch {
                let sample = &dataset[i];
                let mut g = Graph::new();
                let frame = matches!(cfg.stage, Stage::Student | Stage::Joint)
                    .then_some(&sample.frame);
                let flow = matches!(cfg.stage, Stage::Teacher | Stage::Joint)
                    .then_some(&sample.flow);
                let vars = net.forward(&mut g, store, frame, flow, None)?;
                let loss = stage_loss(&mut g, &vars, &sample.gt, cfg.stage, cfg.lambda_teacher)?;
                let loss_value = g.scalar_value(loss);
                if !loss_value.is_finite() {
                    return Err(GtError::TrainingDiverged {
                        step,
                        reason: format!("loss became {loss_value}"),
                    });
                }
                batch_loss += loss_value;
                let sample_grads = g.backward(loss);
                for (name, grad) in g.param_grads(&sample_grads) {
                    match grads.entry(name) {
                        indexmap::map::Entry::Occupied(mut e) => *e.get_mut() += &grad,
                        indexmap::map::Entry::Vacant(e) => {
                            e.insert(grad);
                        }
                    }
                }
            }
            let scale = 1.0 / batch.len() as f64;
            for grad in grads.values_mut() {
                grad.mapv_inplace(|v| v * scale);
            }
            batch_loss *= scale;
            opt.step(store, &grads, lr);
            trace.push(TraceRow { step, epoch, lr, loss: batch_loss });
            step += 1;
            if let Some(cap) = max_steps {
                if step >= cap {
                    break 'outer;
                }
            }
        }
    }
    Ok(StageRun { trace })
}
