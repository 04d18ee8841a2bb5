//! Mini-batch training and evaluation.
//!
//! Supports log loss (binary labels) and squared error (ratings), SGD or
//! Adam with sparse moment updates, and is deterministic given the seed:
//! fixed initialization, fixed shuffle order, fixed reduction order. The
//! DPLR gradient goes through the fast pairwise form, with the derived
//! diagonal's dependence on `(U, e)` chained in.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Sample;
use crate::decompose::{prune, PruneBudget};
use crate::error::{Error, Result};
use crate::model::{gather_field_vectors, InteractionSpec, ModelParams, VariantKind};
use crate::schema::FieldSchema;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    LogLoss,
    Mse,
}

impl LossKind {
    pub fn name(&self) -> &'static str {
        match self {
            LossKind::LogLoss => "logloss",
            LossKind::Mse => "mse",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> AdamConfig {
        AdamConfig { beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    Adam(AdamConfig),
    Sgd,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub weight_decay: f64,
}

impl TrainConfig {
    pub fn new(loss: LossKind, learning_rate: f64, epochs: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            loss,
            learning_rate,
            epochs,
            batch_size: 256,
            optimizer: OptimizerKind::Adam(AdamConfig::default()),
            seed,
            weight_decay: 0.0,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 {
            return Err(Error::Data("learning rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Data("batch size must be at least 1".into()));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Data("weight decay must be non-negative".into()));
        }
        Ok(())
    }
}

/// Gradients for one batch, sparse over the features the batch touched.
/// Interaction gradients are dense over the (small) interaction parameters.
#[derive(Debug, Clone)]
pub struct SparseGrad {
    pub b0: f64,
    /// (global feature id, gradient), sorted by id.
    pub b: Vec<(u32, f64)>,
    /// (global feature id, k gradients), sorted by id.
    pub w: Vec<(u32, Vec<f64>)>,
    pub interaction: InterGrad,
}

#[derive(Debug, Clone)]
pub enum InterGrad {
    None,
    /// Upper-triangle order, aligned with `DenseSym::upper`.
    Dense(Vec<f64>),
    /// Aligned with `PrunedSparse::entries`.
    Pruned(Vec<f64>),
    Dplr { u: Vec<f64>, e: Vec<f64> },
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable `-(y ln p + (1-y) ln(1-p))` with `p = sigmoid(s)`.
fn logloss_from_score(score: f64, label: f64) -> f64 {
    score.max(0.0) - score * label + (-score.abs()).exp().ln_1p()
}

/// Mean loss over the batch and its gradient with respect to every
/// parameter the batch touches.
pub fn loss_and_grad(
    batch: &[Sample],
    params: &ModelParams,
    loss: LossKind,
) -> Result<(f64, SparseGrad)> {
    if batch.is_empty() {
        return Err(Error::Data("cannot compute a gradient over an empty batch".into()));
    }
    let k = params.k;
    let m = params.num_fields();
    let scale = 1.0 / batch.len() as f64;

    let mut total_loss = 0.0f64;
    let mut g_b0 = 0.0f64;
    let mut g_b: HashMap<u32, f64> = HashMap::new();
    let mut g_w: HashMap<u32, Vec<f64>> = HashMap::new();
    let mut g_inter = match &params.interaction {
        InteractionSpec::FmImplicit => InterGrad::None,
        InteractionSpec::DenseSym(d) => InterGrad::Dense(vec![0.0; d.upper().len()]),
        InteractionSpec::PrunedSparse(p) => InterGrad::Pruned(vec![0.0; p.keep_count()]),
        InteractionSpec::Dplr(d) => {
            InterGrad::Dplr { u: vec![0.0; d.rank() * m], e: vec![0.0; d.rank()] }
        }
    };

    // Reused per-sample buffer for d(pairwise)/d(v).
    let mut dv = vec![0.0f64; m * k];

    for (idx, sample) in batch.iter().enumerate() {
        let v = gather_field_vectors(sample, params)?;

        // forward pieces, keeping P for the DPLR backward pass
        let mut linear = params.b0 as f64;
        for e in &sample.entries {
            let gid = params.global_id(e.field as usize, e.id)?;
            linear += e.weight * params.b[gid] as f64;
        }
        let mut p_rows: Vec<f64> = Vec::new();
        let pairwise = match &params.interaction {
            InteractionSpec::FmImplicit => crate::model::pairwise_fm_fast(&v),
            InteractionSpec::DenseSym(d) => crate::model::pairwise_dense(&v, d)?,
            InteractionSpec::PrunedSparse(p) => crate::model::pairwise_pruned(&v, p)?,
            InteractionSpec::Dplr(d) => {
                let rank = d.rank();
                p_rows = vec![0.0f64; rank * k];
                for r in 0..rank {
                    for i in 0..m {
                        let uri = d.u_at(r, i) as f64;
                        for (p, &x) in p_rows[r * k..(r + 1) * k].iter_mut().zip(v.row(i)) {
                            *p += uri * x;
                        }
                    }
                }
                let mut diag = 0.0f64;
                for i in 0..m {
                    diag += d.d()[i] * v.sq_norm(i);
                }
                let mut low = 0.0f64;
                for r in 0..rank {
                    let nsq: f64 = p_rows[r * k..(r + 1) * k].iter().map(|x| x * x).sum();
                    low += d.e()[r] as f64 * nsq;
                }
                0.5 * (diag + low)
            }
        };
        let score = linear + pairwise;

        let (sample_loss, dscore) = match loss {
            LossKind::LogLoss => {
                let y = sample.label;
                if y != 0.0 && y != 1.0 {
                    return Err(Error::Data(format!(
                        "sample {idx}: log loss needs 0/1 labels, got {y}"
                    )));
                }
                (logloss_from_score(score, y), sigmoid(score) - y)
            }
            LossKind::Mse => {
                let err = score - sample.label;
                (err * err, 2.0 * err)
            }
        };
        if !sample_loss.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite loss at sample {idx} (score {score})"
            )));
        }
        total_loss += sample_loss;
        let g = dscore * scale;

        // linear part
        g_b0 += g;
        for e in &sample.entries {
            let gid = params.global_id(e.field as usize, e.id)? as u32;
            *g_b.entry(gid).or_insert(0.0) += g * e.weight;
        }

        // d(pairwise)/d(v_i): the 1/2 on the full double sum cancels through
        // symmetry, leaving sum_j R_ij v_j.
        dv.iter_mut().for_each(|x| *x = 0.0);
        match &params.interaction {
            InteractionSpec::FmImplicit => {
                let mut sum = vec![0.0f64; k];
                for i in 0..m {
                    for (s, &x) in sum.iter_mut().zip(v.row(i)) {
                        *s += x;
                    }
                }
                for i in 0..m {
                    for c in 0..k {
                        dv[i * k + c] = sum[c] - v.row(i)[c];
                    }
                }
            }
            InteractionSpec::DenseSym(d) => {
                for i in 0..m {
                    for j in 0..m {
                        let rij = d.get(i, j) as f64;
                        if rij == 0.0 {
                            continue;
                        }
                        for c in 0..k {
                            dv[i * k + c] += rij * v.row(j)[c];
                        }
                    }
                }
                let InterGrad::Dense(tri) = &mut g_inter else { unreachable!() };
                let mut slot = 0;
                for i in 0..m {
                    for j in (i + 1)..m {
                        let dot: f64 = v.row(i).iter().zip(v.row(j)).map(|(a, b)| a * b).sum();
                        tri[slot] += g * dot;
                        slot += 1;
                    }
                }
            }
            InteractionSpec::PrunedSparse(p) => {
                let InterGrad::Pruned(vals) = &mut g_inter else { unreachable!() };
                for (slot, &(i, j, r)) in p.entries().iter().enumerate() {
                    let (i, j, r) = (i as usize, j as usize, r as f64);
                    let dot: f64 = v.row(i).iter().zip(v.row(j)).map(|(a, b)| a * b).sum();
                    vals[slot] += g * dot;
                    for c in 0..k {
                        dv[i * k + c] += r * v.row(j)[c];
                        dv[j * k + c] += r * v.row(i)[c];
                    }
                }
            }
            InteractionSpec::Dplr(d) => {
                let rank = d.rank();
                let InterGrad::Dplr { u: gu, e: ge } = &mut g_inter else { unreachable!() };
                for i in 0..m {
                    let di = d.d()[i];
                    for c in 0..k {
                        let mut acc = di * v.row(i)[c];
                        for r in 0..rank {
                            acc += d.e()[r] as f64 * d.u_at(r, i) as f64 * p_rows[r * k + c];
                        }
                        dv[i * k + c] = acc;
                    }
                }
                for r in 0..rank {
                    let er = d.e()[r] as f64;
                    let p_row = &p_rows[r * k..(r + 1) * k];
                    let mut u_sq_v = 0.0f64;
                    for i in 0..m {
                        let uri = d.u_at(r, i) as f64;
                        let pv: f64 = p_row.iter().zip(v.row(i)).map(|(a, b)| a * b).sum();
                        // through P and through the derived diagonal
                        gu[r * m + i] += g * er * (pv - uri * v.sq_norm(i));
                        u_sq_v += uri * uri * v.sq_norm(i);
                    }
                    let p_norm_sq: f64 = p_row.iter().map(|x| x * x).sum();
                    ge[r] += g * 0.5 * (p_norm_sq - u_sq_v);
                }
            }
        }

        // chain into the embedding rows
        for e in &sample.entries {
            let gid = params.global_id(e.field as usize, e.id)? as u32;
            let row = g_w.entry(gid).or_insert_with(|| vec![0.0; k]);
            let src = &dv[e.field as usize * k..(e.field as usize + 1) * k];
            for (o, &x) in row.iter_mut().zip(src) {
                *o += g * e.weight * x;
            }
        }
    }

    let mut b: Vec<(u32, f64)> = g_b.into_iter().collect();
    b.sort_unstable_by_key(|&(id, _)| id);
    let mut w: Vec<(u32, Vec<f64>)> = g_w.into_iter().collect();
    w.sort_unstable_by_key(|&(id, _)| id);
    Ok((total_loss * scale, SparseGrad { b0: g_b0, b, w, interaction: g_inter }))
}

/// Per-coordinate optimizer state over the flat parameter space.
struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    weight_decay: f64,
    m1: Vec<f64>,
    m2: Vec<f64>,
    t: u64,
}

impl Optimizer {
    fn new(config: &TrainConfig, param_count: usize) -> Optimizer {
        let needs_state = matches!(config.optimizer, OptimizerKind::Adam(_));
        let len = if needs_state { param_count } else { 0 };
        Optimizer {
            kind: config.optimizer,
            lr: config.learning_rate,
            weight_decay: config.weight_decay,
            m1: vec![0.0; len],
            m2: vec![0.0; len],
            t: 0,
        }
    }

    /// New value for one parameter. Adam moments are updated lazily, only
    /// for coordinates that appear in a batch, with bias correction by the
    /// global step count; weight decay is decoupled from the moments.
    #[inline]
    fn step(&mut self, flat: usize, grad: f64, current: f32) -> f32 {
        let p = current as f64;
        let new = match self.kind {
            OptimizerKind::Sgd => p - self.lr * (grad + self.weight_decay * p),
            OptimizerKind::Adam(cfg) => {
                let m = cfg.beta1 * self.m1[flat] + (1.0 - cfg.beta1) * grad;
                let v = cfg.beta2 * self.m2[flat] + (1.0 - cfg.beta2) * grad * grad;
                self.m1[flat] = m;
                self.m2[flat] = v;
                let m_hat = m / (1.0 - cfg.beta1.powi(self.t as i32));
                let v_hat = v / (1.0 - cfg.beta2.powi(self.t as i32));
                p - self.lr * (m_hat / (v_hat.sqrt() + cfg.epsilon) + self.weight_decay * p)
            }
        };
        new as f32
    }

    fn apply(&mut self, params: &mut ModelParams, grads: &SparseGrad) {
        self.t += 1;
        let n = params.n();
        let k = params.k;
        params.b0 = self.step(0, grads.b0, params.b0);
        for &(id, g) in &grads.b {
            params.b[id as usize] = self.step(1 + id as usize, g, params.b[id as usize]);
        }
        for (id, row) in &grads.w {
            let base = 1 + n + *id as usize * k;
            for (c, &g) in row.iter().enumerate() {
                let slot = *id as usize * k + c;
                params.w[slot] = self.step(base + c, g, params.w[slot]);
            }
        }
        let inter_base = 1 + n + n * k;
        match (&mut params.interaction, &grads.interaction) {
            (InteractionSpec::FmImplicit, InterGrad::None) => {}
            (InteractionSpec::DenseSym(d), InterGrad::Dense(g)) => {
                for (j, &gj) in g.iter().enumerate() {
                    d.upper_mut()[j] = self.step(inter_base + j, gj, d.upper()[j]);
                }
            }
            (InteractionSpec::PrunedSparse(p), InterGrad::Pruned(g)) => {
                for (slot, (gj, v)) in g.iter().zip(p.values_mut()).enumerate() {
                    *v = self.step(inter_base + slot, *gj, *v);
                }
            }
            (InteractionSpec::Dplr(d), InterGrad::Dplr { u: gu, e: ge }) => {
                let un = gu.len();
                let mut new_u = Vec::with_capacity(un);
                let mut new_e = Vec::with_capacity(ge.len());
                for (j, &gj) in gu.iter().enumerate() {
                    new_u.push(self.step(inter_base + j, gj, d.u()[j]));
                }
                for (j, &gj) in ge.iter().enumerate() {
                    new_e.push(self.step(inter_base + un + j, gj, d.e()[j]));
                }
                d.update(|u, e| {
                    u.copy_from_slice(&new_u);
                    e.copy_from_slice(&new_e);
                });
            }
            _ => unreachable!("gradient layout matches the interaction variant"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    /// Validation log loss or MSE; NaN when no validation set was given.
    pub val_metric: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub epochs: Vec<EpochLog>,
}

fn check_finite(params: &ModelParams) -> Result<()> {
    let base = 1 + params.n() * (1 + params.k);
    let finite = params.b0.is_finite()
        && params.b.iter().all(|x| x.is_finite())
        && params.w.iter().all(|x| x.is_finite())
        && (0..params.interaction.extra_param_count())
            .all(|j| params.get_flat(base + j).is_finite());
    if finite {
        Ok(())
    } else {
        Err(Error::Numeric("training diverged: parameters are no longer finite".into()))
    }
}

/// Train `init` over `epochs` passes. Deterministic given `config.seed`;
/// `on_epoch` sees one log entry per epoch as it completes.
pub fn train(
    train_set: &[Sample],
    val_set: &[Sample],
    init: ModelParams,
    config: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    if config.loss == LossKind::LogLoss {
        for (i, s) in train_set.iter().chain(val_set).enumerate() {
            if s.label != 0.0 && s.label != 1.0 {
                return Err(Error::Data(format!(
                    "sample {i}: log loss needs 0/1 labels, got {}",
                    s.label
                )));
            }
        }
    }

    let mut params = init;
    let mut optimizer = Optimizer::new(config, params.param_count());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut logs = Vec::with_capacity(config.epochs);
    let mut batch: Vec<Sample> = Vec::with_capacity(config.batch_size);

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0f64;
        let mut seen = 0usize;
        for chunk in order.chunks(config.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| train_set[i].clone()));
            let (loss, grads) = loss_and_grad(&batch, &params, config.loss)?;
            optimizer.apply(&mut params, &grads);
            loss_sum += loss * batch.len() as f64;
            seen += batch.len();
        }
        check_finite(&params)?;
        let train_loss = loss_sum / seen as f64;
        let val_metric = if val_set.is_empty() {
            f64::NAN
        } else {
            let report = evaluate(val_set, &params, config.loss)?;
            match config.loss {
                LossKind::LogLoss => report.logloss.unwrap_or(f64::NAN),
                LossKind::Mse => report.mse.unwrap_or(f64::NAN),
            }
        };
        let log = EpochLog { epoch, train_loss, val_metric };
        on_epoch(&log);
        logs.push(log);
    }
    Ok(TrainOutcome { params, epochs: logs })
}

/// The pruned-model workflow: train a dense FwFM, keep the largest-magnitude
/// interactions, then fine-tune the surviving parameters for one epoch (the
/// fine-tune shuffle stream is offset so it does not replay epoch one).
pub fn train_pruned(
    train_set: &[Sample],
    val_set: &[Sample],
    schema: FieldSchema,
    k: usize,
    budget: &PruneBudget,
    config: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    let init = ModelParams::init(schema, k, VariantKind::Fwfm, config.seed)?;
    let dense_out = train(train_set, val_set, init, config, on_epoch)?;
    let mut logs = dense_out.epochs;
    let dense = dense_out.params;
    let InteractionSpec::DenseSym(r) = &dense.interaction else { unreachable!() };
    let pruned = prune(r, budget)?;
    let pruned_params = ModelParams::new(
        dense.schema.clone(),
        dense.k,
        dense.b0,
        dense.b.clone(),
        dense.w.clone(),
        InteractionSpec::PrunedSparse(pruned),
    )?;
    let mut fine_config = config.clone();
    fine_config.epochs = 1;
    fine_config.seed = config.seed.wrapping_add(0x9e3779b9);
    let fine = train(train_set, val_set, pruned_params, &fine_config, on_epoch)?;
    let offset = logs.len();
    logs.extend(fine.epochs.iter().map(|l| EpochLog { epoch: offset + l.epoch, ..*l }));
    Ok(TrainOutcome { params: fine.params, epochs: logs })
}

/// Evaluation metrics over a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub samples: usize,
    pub logloss: Option<f64>,
    /// None when only one class is present (AUC is undefined).
    pub auc: Option<f64>,
    pub mse: Option<f64>,
}

pub fn evaluate(samples: &[Sample], params: &ModelParams, loss: LossKind) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::Data("cannot evaluate an empty dataset".into()));
    }
    let mut scores = Vec::with_capacity(samples.len());
    for s in samples {
        scores.push(crate::model::forward(s, params)?);
    }
    match loss {
        LossKind::LogLoss => {
            let mut ll = 0.0f64;
            for (s, sample) in scores.iter().zip(samples) {
                if sample.label != 0.0 && sample.label != 1.0 {
                    return Err(Error::Data(format!(
                        "log loss needs 0/1 labels, got {}",
                        sample.label
                    )));
                }
                ll += logloss_from_score(*s, sample.label);
            }
            let labels: Vec<bool> = samples.iter().map(|s| s.label == 1.0).collect();
            Ok(EvalReport {
                samples: samples.len(),
                logloss: Some(ll / samples.len() as f64),
                auc: auc(&scores, &labels),
                mse: None,
            })
        }
        LossKind::Mse => {
            let mse = scores
                .iter()
                .zip(samples)
                .map(|(s, sample)| (s - sample.label).powi(2))
                .sum::<f64>()
                / samples.len() as f64;
            Ok(EvalReport { samples: samples.len(), logloss: None, auc: None, mse: Some(mse) })
        }
    }
}

/// Area under the ROC curve via the rank statistic, with average ranks on
/// ties. Returns None when one of the classes is absent.
pub fn auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len());
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("scores are finite"));
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        // ranks are 1-based; ties share the average rank of their block
        let avg_rank = (i + 1 + j + 1) as f64 / 2.0;
        for &s in &idx[i..=j] {
            if labels[s] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos as f64 * n_neg as f64))
}
