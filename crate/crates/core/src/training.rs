//! Loss assembly, the two-stage schedule and the training loop.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::evaluation::scenario_metrics;
use crate::geometry::Vec2;
use crate::intention::{label_intentions, Anchor, IntentionDistribution, JointPrediction, Lateral, Longitudinal};
use crate::interaction::SceneInputs;
use crate::model::{anchors, Model, ModelConfig, OutputGrads};
use crate::nn::{
    cross_entropy, cross_entropy_grad, seeded_rng, smooth_l1, smooth_l1_grad, Adam, AdamConfig, Module, Tensor,
};
use crate::risk::{mode_risk_with_grad, RiskConfig};
use crate::scene::Scenario;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub stage1_epochs: usize,
    /// Weight of the intention loss; the risk term gets `1 - tau`.
    pub tau: f64,
    /// Weight of the mode-classification term `-ln p_k*`.
    pub mode_weight: f64,
    pub lr_schedule: LrSchedule,
    pub seed: u64,
}

/// Learning rate per epoch, starting from `TrainConfig::lr`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    /// Half-cosine from `lr` at epoch 1 towards zero after the last epoch.
    Cosine,
}

impl LrSchedule {
    pub fn rate(self, base: f64, epoch: usize, epochs: usize) -> f64 {
        match self {
            LrSchedule::Constant => base,
            LrSchedule::Cosine => {
                let frac = (epoch - 1) as f64 / epochs.max(1) as f64;
                0.5 * base * (1.0 + (std::f64::consts::PI * frac).cos())
            }
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            lr: 2e-4,
            weight_decay: 3e-4,
            epochs: 20,
            stage1_epochs: 5,
            tau: 0.5,
            mode_weight: 1.0,
            lr_schedule: LrSchedule::Cosine,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |path: &str, message: &str| {
            Err(Error::Validation { path: format!("train.{path}"), message: message.into() })
        };
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return bad("tau", "must lie strictly between 0 and 1");
        }
        if self.stage1_epochs > self.epochs {
            return bad("stage1_epochs", "must not exceed epochs");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr", "must be positive");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay", "must be non-negative");
        }
        if !(self.mode_weight >= 0.0 && self.mode_weight.is_finite()) {
            return bad("mode_weight", "must be non-negative");
        }
        Ok(())
    }
}

/// Mean over agents of the lateral plus longitudinal cross-entropy.
pub fn intention_loss(pred: &[IntentionDistribution], labels: &[(Lateral, Longitudinal)]) -> Result<f64> {
    if pred.len() != labels.len() || pred.is_empty() {
        return Err(dim_err("intention_loss", labels.len(), pred.len()));
    }
    let mut total = 0.0;
    for (d, (la, lo)) in pred.iter().zip(labels) {
        total += cross_entropy(&d.lateral, la.index())? + cross_entropy(&d.longitudinal, lo.index())?;
    }
    Ok(total / pred.len() as f64)
}

/// `min_k Σ_i smooth_l1(ŷ_i^(k), y_i)` together with the minimising mode
/// (lowest index on ties).
pub fn prediction_loss(jp: &JointPrediction, truth: &[Vec<Vec2>]) -> Result<(f64, usize)> {
    if truth.len() != jp.num_agents() {
        return Err(dim_err("prediction_loss agents", jp.num_agents(), truth.len()));
    }
    if let Some(y) = truth.iter().find(|y| y.len() != jp.horizon()) {
        return Err(dim_err("prediction_loss horizon", jp.horizon(), y.len()));
    }
    let mut best = (f64::INFINITY, 0);
    for k in 0..jp.num_modes() {
        let mut l = 0.0;
        for (i, y) in truth.iter().enumerate() {
            let o = jp.offset(k, i, 0);
            l += smooth_l1(&jp.trajectories.data()[o..o + 2 * jp.horizon()], &flatten(y))?;
        }
        if l < best.0 {
            best = (l, k);
        }
    }
    Ok(best)
}

/// Stage 1 (`epoch <= stage1_epochs`): `L_pre + τ·L_man`; afterwards the
/// risk term `(1 - τ)·L_risk` is added.
pub fn total_loss(l_pre: f64, l_man: f64, l_risk: f64, epoch: usize, cfg: &TrainConfig) -> f64 {
    let base = l_pre + cfg.tau * l_man;
    if in_stage_two(epoch, cfg) {
        base + (1.0 - cfg.tau) * l_risk
    } else {
        base
    }
}

fn in_stage_two(epoch: usize, cfg: &TrainConfig) -> bool {
    epoch > cfg.stage1_epochs
}

fn flatten(points: &[Vec2]) -> Vec<f64> {
    points.iter().flat_map(|p| [p.x, p.y]).collect()
}

/// Weights of the per-mode risk costs in `L_risk`: uniform over the modes
/// other than the best-fitting `kstar`, which is left to the regression
/// loss; a single mode carries the whole weight.
pub fn risk_weights(modes: usize, kstar: usize) -> Vec<f64> {
    if modes == 1 {
        return vec![1.0];
    }
    (0..modes).map(|k| if k == kstar { 0.0 } else { 1.0 / (modes - 1) as f64 }).collect()
}

/// Contiguous 70/15/15 split of `n` items, in order: (train, validation, test).
pub fn split_indices(n: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>, std::ops::Range<usize>) {
    let train = (n * 70).div_ceil(100);
    let val = ((n * 85).div_ceil(100)).max(train);
    (0..train, train..val, val..n)
}

/// Scenario with everything the loop needs precomputed.
struct Prepared<'a> {
    scn: &'a Scenario,
    inputs: SceneInputs,
    anchors: Vec<Anchor>,
    truth: Vec<Vec2>,
    labels: Vec<(Lateral, Longitudinal)>,
}

fn prepare<'a>(scn: &'a Scenario, model: &ModelConfig) -> Result<Prepared<'a>> {
    let truth = scn.future_truth()?;
    if let Some(y) = truth.iter().find(|y| y.len() < model.horizon) {
        return Err(dim_err("training future length", model.horizon, y.len()));
    }
    let labels = scn
        .agents
        .iter()
        .map(|a| {
            label_intentions(&a.future.as_ref().expect("checked by future_truth")[..model.horizon], &model.intention)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Prepared {
        scn,
        inputs: SceneInputs::new(scn, &model.interaction),
        anchors: anchors(scn),
        truth: truth.iter().flat_map(|y| y[..model.horizon].iter().copied()).collect(),
        labels,
    })
}

/// Loss components of one scenario.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct Losses {
    pre: f64,
    man: f64,
    risk: f64,
    mode: f64,
}

impl Losses {
    fn add(&mut self, o: &Losses) {
        self.pre += o.pre;
        self.man += o.man;
        self.risk += o.risk;
        self.mode += o.mode;
    }

    fn scale(&mut self, s: f64) {
        self.pre *= s;
        self.man *= s;
        self.risk *= s;
        self.mode *= s;
    }
}

/// Forward pass, losses and gradient accumulation scaled by `scale`.
fn accumulate(
    model: &mut Model,
    p: &Prepared,
    cfg: &TrainConfig,
    risk: &RiskConfig,
    stage_two: bool,
    scale: f64,
) -> Result<Losses> {
    let (out, cache) = model.forward_inputs(&p.inputs, &p.anchors)?;
    let jp = &out.prediction;
    let (n, t) = (jp.num_agents(), jp.horizon());
    let truth: Vec<Vec<Vec2>> = p.truth.chunks(t).map(<[Vec2]>::to_vec).collect();
    let (l_pre, kstar) = prediction_loss(jp, &truth)?;
    let l_man = intention_loss(&out.intentions, &p.labels)?;
    let l_mode = cross_entropy(&jp.mode_probs, kstar)?;

    let mut dtraj = Tensor::zeros(&[jp.num_modes(), n, t, 2]);
    for (i, y) in truth.iter().enumerate() {
        let o = jp.offset(kstar, i, 0);
        let g = smooth_l1_grad(&jp.trajectories.data()[o..o + 2 * t], &flatten(y));
        for (d, g) in dtraj.data_mut()[o..o + 2 * t].iter_mut().zip(g) {
            *d = scale * g;
        }
    }
    let mut dprobs = vec![0.0; jp.num_modes()];
    dprobs[kstar] = scale * cfg.mode_weight * cross_entropy_grad(&jp.mode_probs, kstar)[kstar];
    let man_scale = scale * cfg.tau / n as f64;
    let mut dlat = Tensor::zeros(&[n, 3]);
    let mut dlon = Tensor::zeros(&[n, 3]);
    for (i, (d, (la, lo))) in out.intentions.iter().zip(&p.labels).enumerate() {
        for (c, g) in cross_entropy_grad(&d.lateral, la.index()).into_iter().enumerate() {
            dlat.row_mut(i)[c] = man_scale * g;
        }
        for (c, g) in cross_entropy_grad(&d.longitudinal, lo.index()).into_iter().enumerate() {
            dlon.row_mut(i)[c] = man_scale * g;
        }
    }
    model.backward(
        &cache,
        &OutputGrads {
            trajectories: Some(dtraj),
            mode_probs: Some(dprobs),
            lateral: Some(dlat),
            longitudinal: Some(dlon),
        },
    );

    let mut l_risk = 0.0;
    let mut drisk = Tensor::zeros(&[jp.num_modes(), n, t, 2]);
    for (k, w) in risk_weights(jp.num_modes(), kstar).into_iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let (report, grad) = mode_risk_with_grad(p.scn, jp, k, risk)?;
        l_risk += w * report.l_risk;
        if stage_two {
            let c = scale * (1.0 - cfg.tau) * w;
            for (i, row) in grad.iter().enumerate() {
                for (s, g) in row.iter().enumerate() {
                    let o = jp.offset(k, i, s);
                    drisk.data_mut()[o] = c * g.x;
                    drisk.data_mut()[o + 1] = c * g.y;
                }
            }
        }
    }
    if stage_two {
        model.backward_decoder(&cache, &drisk);
    }
    Ok(Losses { pre: l_pre, man: l_man, risk: l_risk, mode: l_mode })
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    #[serde(rename = "L_pre")]
    pub l_pre: f64,
    #[serde(rename = "L_man")]
    pub l_man: f64,
    #[serde(rename = "L_risk")]
    pub l_risk: f64,
    #[serde(rename = "L")]
    pub l: f64,
    #[serde(rename = "val_ADE")]
    pub val_ade: Option<f64>,
    #[serde(rename = "val_FDE")]
    pub val_fde: Option<f64>,
    #[serde(rename = "L_mode")]
    pub l_mode: f64,
}

pub const TRAIN_LOG_HEADER: [&str; 8] = ["epoch", "L_pre", "L_man", "L_risk", "L", "val_ADE", "val_FDE", "L_mode"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// Mode-selected ADE/FDE over all agents and the full horizon.
    pub val_ade: Option<f64>,
    pub val_fde: Option<f64>,
}

/// Mean mode-selected ADE and FDE over all agents and the full horizon.
pub fn validation_metrics(model: &Model, data: &[Scenario]) -> Result<Option<(f64, f64)>> {
    if data.is_empty() {
        return Ok(None);
    }
    let mut sums = (0.0, 0.0);
    for scn in data {
        let jp = model.predict(scn)?.prediction;
        let m = scenario_metrics(scn, &jp, jp.horizon())?;
        sums.0 += m.all_ade;
        sums.1 += m.all_fde;
    }
    let n = data.len() as f64;
    Ok(Some((sums.0 / n, sums.1 / n)))
}

/// Where a run writes its log and per-epoch checkpoints.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainOutput {
    pub dir: PathBuf,
}

impl TrainOutput {
    pub fn log_path(&self) -> PathBuf {
        self.dir.join("train_log.csv")
    }

    pub fn checkpoint_path(&self, epoch: usize) -> PathBuf {
        self.dir.join(format!("epoch_{epoch:04}.ckpt.json"))
    }

    pub fn final_checkpoint_path(&self) -> PathBuf {
        self.dir.join("model.ckpt.json")
    }
}

/// Trains a fresh model on `dataset`, holding out the contiguous
/// validation slice of a 70/15/15 split.
pub fn train(dataset: &[Scenario], model: ModelConfig, cfg: &TrainConfig) -> Result<(Model, TrainReport)> {
    let (tr, va, _) = split_indices(dataset.len());
    train_split(&dataset[tr], &dataset[va], model, cfg, &RiskConfig::default(), None)
}

/// Full training loop with explicit splits. Deterministic given `cfg.seed`.
pub fn train_split(
    train_set: &[Scenario],
    val_set: &[Scenario],
    model_cfg: ModelConfig,
    cfg: &TrainConfig,
    risk: &RiskConfig,
    output: Option<&TrainOutput>,
) -> Result<(Model, TrainReport)> {
    cfg.validate()?;
    risk.validate()?;
    if train_set.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    let mut model = Model::new(model_cfg, cfg.seed)?;
    let prepared = train_set.iter().map(|s| prepare(s, &model_cfg)).collect::<Result<Vec<_>>>()?;
    let mut adam = Adam::new(AdamConfig { lr: cfg.lr, weight_decay: cfg.weight_decay, ..AdamConfig::default() });
    let mut rng = seeded_rng(cfg.seed ^ 0x7261_696e);
    let mut log = match output {
        Some(o) => {
            fs::create_dir_all(&o.dir)?;
            let mut w = csv::Writer::from_path(o.log_path())?;
            w.write_record(TRAIN_LOG_HEADER)?;
            w.flush()?;
            Some(w)
        }
        None => None,
    };
    let mut order: Vec<usize> = (0..prepared.len()).collect();
    let mut records = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        adam.config.lr = cfg.lr_schedule.rate(cfg.lr, epoch, cfg.epochs);
        let stage_two = in_stage_two(epoch, cfg);
        let mut sum = Losses::default();
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let scale = 1.0 / batch.len() as f64;
            let mut batch_losses = Losses::default();
            for &idx in batch {
                let l = accumulate(&mut model, &prepared[idx], cfg, risk, stage_two, scale).map_err(|e| match e {
                    Error::NonFinite(_) => Error::Divergence { epoch, batch: b, loss: f64::NAN },
                    e => e,
                })?;
                batch_losses.add(&l);
            }
            sum.add(&batch_losses);
            batch_losses.scale(scale);
            let loss = total_loss(batch_losses.pre, batch_losses.man, batch_losses.risk, epoch, cfg)
                + cfg.mode_weight * batch_losses.mode;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, batch: b, loss });
            }
            adam.step_module(&mut model);
            model.zero_grad();
        }
        sum.scale(1.0 / prepared.len() as f64);
        let val = validation_metrics(&model, val_set).map_err(|e| match e {
            Error::NonFinite(_) => {
                Error::Divergence { epoch, batch: order.len().div_ceil(cfg.batch_size), loss: f64::NAN }
            }
            e => e,
        })?;
        let rec = EpochRecord {
            epoch,
            l_pre: sum.pre,
            l_man: sum.man,
            l_risk: sum.risk,
            l: total_loss(sum.pre, sum.man, sum.risk, epoch, cfg),
            val_ade: val.map(|v| v.0),
            val_fde: val.map(|v| v.1),
            l_mode: sum.mode,
        };
        if let (Some(w), Some(o)) = (log.as_mut(), output) {
            let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
            w.write_record([
                rec.epoch.to_string(),
                rec.l_pre.to_string(),
                rec.l_man.to_string(),
                rec.l_risk.to_string(),
                rec.l.to_string(),
                opt(rec.val_ade),
                opt(rec.val_fde),
                rec.l_mode.to_string(),
            ])?;
            w.flush()?;
            model.save(&o.checkpoint_path(epoch), checkpoint_extra(cfg, epoch))?;
        }
        records.push(rec);
    }
    if let Some(o) = output {
        model.save(&o.final_checkpoint_path(), checkpoint_extra(cfg, cfg.epochs))?;
        let mut f = fs::File::create(o.dir.join("train_report.json"))?;
        let report = report_from(&records);
        f.write_all(serde_json::to_string_pretty(&report)?.as_bytes())?;
    }
    Ok((model, report_from(&records)))
}

fn report_from(records: &[EpochRecord]) -> TrainReport {
    let last = records.last();
    TrainReport {
        epochs: records.to_vec(),
        val_ade: last.and_then(|r| r.val_ade),
        val_fde: last.and_then(|r| r.val_fde),
    }
}

fn checkpoint_extra(cfg: &TrainConfig, epoch: usize) -> serde_json::Value {
    serde_json::json!({ "train": cfg, "epoch": epoch })
}

/// Reads a training log written by [`train_split`].
pub fn read_log(path: &Path) -> Result<Vec<EpochRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}
