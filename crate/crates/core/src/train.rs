//! BPR triple sampling, Adam, and the epoch loop.

use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::eval::{self, MetricSummary, MetricsReport, Scenario};
use crate::matching::{AttentionScope, ScopeKind};
use crate::model::{
    self, BatchPlan, ForwardOptions, ModelContext, ModelParams, Objective, Representations,
};
use crate::motif::Channel;
use crate::rng::{stream, Stream};
use crate::ssl::{DirectContrast, LossReport, SslConfig};
use crate::tape::Tape;

/// Negative draws per triple before the triple is skipped.
pub const MAX_NEGATIVE_TRIES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// A BPR training triple `(user, positive item, negative item)`.
pub type Triple = (usize, usize, usize);

/// Model variants obtained by switching components off.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablation {
    pub no_social: bool,
    pub no_joint: bool,
    pub no_purchase: bool,
    /// Drops matching representations (and with them the `l_1` contrast).
    pub no_matching: bool,
    /// Keeps matching representations but drops the `l_1` contrast.
    pub no_matching_ssl: bool,
    /// Contrasts common representations directly; implies `no_matching`.
    pub direct_contrast: DirectContrast,
}

impl Ablation {
    pub const NAMES: [&'static str; 5] = [
        "no_social",
        "no_joint",
        "no_purchase",
        "no_matching",
        "no_matching_ssl",
    ];

    /// Switches on the flag called `name`.
    pub fn set(&mut self, name: &str) -> Result<()> {
        match name {
            "no_social" => self.no_social = true,
            "no_joint" => self.no_joint = true,
            "no_purchase" => self.no_purchase = true,
            "no_matching" => self.no_matching = true,
            "no_matching_ssl" => self.no_matching_ssl = true,
            other => {
                return Err(Error::Config(format!(
                    "unknown ablation {other:?}; expected one of {}",
                    Self::NAMES.join(", ")
                )))
            }
        }
        Ok(())
    }

    pub fn channels(&self) -> Vec<Channel> {
        Channel::ALL
            .into_iter()
            .filter(|c| match c {
                Channel::Social => !self.no_social,
                Channel::Joint => !self.no_joint,
                Channel::Purchase => !self.no_purchase,
            })
            .collect()
    }

    pub fn uses_matching(&self) -> bool {
        !self.no_matching && self.direct_contrast == DirectContrast::Off
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub dim: usize,
    pub depth: usize,
    pub learning_rate: f64,
    pub adam: AdamConfig,
    pub seed: u64,
    pub ablation: Ablation,
    /// Attention scope while training.
    pub attention_scope: ScopeKind,
    /// Candidates per row for the top-k scope, and for evaluation on graphs
    /// above 5,000 users.
    pub topk_k: usize,
    pub eval_k: usize,
    /// Evaluate on the test split after every epoch (needed for best-epoch
    /// selection).
    pub eval_every_epoch: bool,
    /// Omit wall-clock timings from logs so reruns are byte-identical.
    pub deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 2000,
            dim: 50,
            depth: 2,
            learning_rate: 0.01,
            adam: AdamConfig::default(),
            seed: 0,
            ablation: Ablation::default(),
            attention_scope: ScopeKind::Batch,
            topk_k: 64,
            eval_k: 10,
            eval_every_epoch: true,
            deterministic: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.epochs == 0 {
            return fail("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1");
        }
        if self.dim == 0 {
            return fail("dim must be at least 1");
        }
        if self.depth == 0 {
            return fail("depth must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail("learning_rate must be positive");
        }
        if self.topk_k == 0 || self.eval_k == 0 {
            return fail("topk_k and eval_k must be positive");
        }
        if self.ablation.channels().is_empty() {
            return fail("every channel is ablated");
        }
        Ok(())
    }

    pub fn objective(&self, ssl: &SslConfig) -> Objective {
        Objective {
            ssl: ssl.clone(),
            matching_ssl: !self.ablation.no_matching_ssl,
            direct: self.ablation.direct_contrast,
        }
    }

    /// Forward options for evaluation and export.
    pub fn eval_options(&self, n_users: usize) -> ForwardOptions {
        ForwardOptions {
            matching: self.ablation.uses_matching(),
            scope: model::evaluation_scope(n_users, self.topk_k),
        }
    }

    fn train_scope(&self, batch_users: &[usize]) -> AttentionScope {
        match self.attention_scope {
            ScopeKind::Full => AttentionScope::Full,
            ScopeKind::Batch => model::batch_scope(batch_users),
            ScopeKind::Topk => AttentionScope::TopK(self.topk_k),
        }
    }
}

/// Uniform item that `u` has not interacted with, by rejection sampling.
fn sample_negative<R: Rng>(dataset: &Dataset, u: usize, rng: &mut R) -> Option<usize> {
    (0..MAX_NEGATIVE_TRIES)
        .map(|_| rng.gen_range(0..dataset.n_items))
        .find(|&j| dataset.train.get(u, j) == 0.0)
}

/// `batch_size` triples with `(u, i)` drawn uniformly from the training
/// pairs. Returns the triples and the number of draws skipped because no
/// negative was found.
pub fn sample_bpr_triples<R: Rng>(
    dataset: &Dataset,
    batch_size: usize,
    rng: &mut R,
) -> Result<(Vec<Triple>, usize)> {
    if dataset.train_pairs.is_empty() {
        return Err(Error::EmptyDataset("no training pairs".into()));
    }
    let mut triples = Vec::with_capacity(batch_size);
    let mut skipped = 0;
    for _ in 0..batch_size {
        let (u, i) = dataset.train_pairs[rng.gen_range(0..dataset.train_pairs.len())];
        match sample_negative(dataset, u, rng) {
            Some(j) => triples.push((u, i, j)),
            None => skipped += 1,
        }
    }
    Ok((triples, skipped))
}

/// One shuffled pass over the training pairs, chunked into batches.
pub fn epoch_batches<R: Rng>(
    dataset: &Dataset,
    batch_size: usize,
    rng: &mut R,
) -> Result<(Vec<Vec<Triple>>, usize)> {
    if dataset.train_pairs.is_empty() {
        return Err(Error::EmptyDataset("no training pairs".into()));
    }
    let mut order = dataset.train_pairs.clone();
    order.shuffle(rng);
    let mut skipped = 0;
    let mut batches = Vec::new();
    for chunk in order.chunks(batch_size) {
        let mut batch = Vec::with_capacity(chunk.len());
        for &(u, i) in chunk {
            match sample_negative(dataset, u, rng) {
                Some(j) => batch.push((u, i, j)),
                None => skipped += 1,
            }
        }
        if !batch.is_empty() {
            batches.push(batch);
        }
    }
    Ok((batches, skipped))
}

/// One bias-corrected Adam update of every tensor.
pub fn adam_step(params: &mut ModelParams, grads: &[Array2<f64>], lr: f64, adam: &AdamConfig) {
    params.step += 1;
    let t = params.step as i32;
    let c1 = 1.0 - adam.beta1.powi(t);
    let c2 = 1.0 - adam.beta2.powi(t);
    for (((p, m), v), g) in params
        .tensors
        .iter_mut()
        .zip(params.adam_m.iter_mut())
        .zip(params.adam_v.iter_mut())
        .zip(grads)
    {
        ndarray::Zip::from(p)
            .and(m)
            .and(v)
            .and(g)
            .for_each(|p, m, v, &g| {
                *m = adam.beta1 * *m + (1.0 - adam.beta1) * g;
                *v = adam.beta2 * *v + (1.0 - adam.beta2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + adam.eps);
            });
    }
}

/// Loss and gradients of one batch.
pub struct BatchResult {
    pub loss: LossReport,
    pub grads: Vec<Array2<f64>>,
    pub attm_evals: usize,
    pub sparse_products: usize,
}

pub fn batch_gradients(
    params: &ModelParams,
    ctx: &ModelContext,
    plan: &BatchPlan,
    opts: &ForwardOptions,
    objective: &Objective,
) -> Result<BatchResult> {
    let mut tape = Tape::new();
    let fv = model::forward(&mut tape, params, ctx, opts)?;
    let lv = model::build_losses(&mut tape, &fv, plan, objective)?;
    let grads = tape.param_grads(lv.total, params.tensors.len());
    Ok(BatchResult {
        loss: lv.report(&tape),
        grads,
        attm_evals: fv.attm_evals,
        sparse_products: tape.stats().sparse_products,
    })
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub l_r: f64,
    pub l_s11: f64,
    pub l_s12: f64,
    pub l_1: f64,
    pub l_2: f64,
    #[serde(rename = "L")]
    pub total: f64,
    pub metrics: Option<MetricSummary>,
    pub batches: usize,
    pub skipped_triples: usize,
    pub attm_evals: usize,
    pub sparse_products: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seconds: Option<f64>,
}

fn mean_losses(reports: &[LossReport]) -> LossReport {
    let n = reports.len() as f64;
    let mut out = LossReport::default();
    for r in reports {
        out.l_r += r.l_r / n;
        out.l_s11 += r.l_s11 / n;
        out.l_s12 += r.l_s12 / n;
        out.l_1 += r.l_1 / n;
        out.l_2 += r.l_2 / n;
        out.total += r.total / n;
        for (k, v) in &r.infonce_pairs {
            *out.infonce_pairs.entry(k.clone()).or_default() += v / n;
        }
        for (k, v) in &r.hmim_matching {
            *out.hmim_matching.entry(*k).or_default() += v / n;
        }
        for (k, v) in &r.hmim_common {
            *out.hmim_common.entry(*k).or_default() += v / n;
        }
    }
    out
}

/// Result of [`train`]: the best snapshot and the per-epoch history.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    /// 1-based epoch of the snapshot.
    pub best_epoch: usize,
    pub epochs: Vec<EpochLog>,
    pub losses: Vec<LossReport>,
    pub metrics: Vec<Option<MetricsReport>>,
    pub context: ModelContext,
    pub config: TrainConfig,
}

impl TrainOutcome {
    pub fn represent(&self) -> Result<Representations> {
        model::represent(
            &self.params,
            &self.context,
            &self.config.eval_options(self.context.n_users),
        )
    }

    pub fn evaluate(
        &self,
        dataset: &Dataset,
        scenario: Scenario,
        k: usize,
    ) -> Result<MetricsReport> {
        let r = self.represent()?;
        eval::evaluate_representations(&r.user, &r.items, dataset, scenario, k)
    }
}

/// Trains on `dataset.train_pairs`.
pub fn train(dataset: &Dataset, cfg: &TrainConfig, ssl: &SslConfig) -> Result<TrainOutcome> {
    train_with_log(dataset, cfg, ssl, |_| Ok(()))
}

/// [`train`] calling `log` after every epoch.
pub fn train_with_log(
    dataset: &Dataset,
    cfg: &TrainConfig,
    ssl: &SslConfig,
    mut log: impl FnMut(&EpochLog) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    ssl.validate()?;
    let channels = cfg.ablation.channels();
    let ctx = ModelContext::from_dataset(dataset, &channels, cfg.depth)?;
    let mut params = ModelParams::init(
        dataset.n_users,
        cfg.dim,
        &mut stream(cfg.seed, Stream::Init),
    );
    let mut sampling = stream(cfg.seed, Stream::Sampling);
    let mut shuffling = stream(cfg.seed, Stream::Shuffling);
    let objective = cfg.objective(ssl);
    let has_test = !dataset.test_pairs.is_empty();

    let mut best: Option<(f64, usize, ModelParams)> = None;
    let mut epochs = Vec::new();
    let mut losses = Vec::new();
    let mut metrics = Vec::new();
    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        let (batches, skipped) = epoch_batches(dataset, cfg.batch_size, &mut sampling)?;
        let mut reports = Vec::with_capacity(batches.len());
        let (mut attm, mut products) = (0, 0);
        for triples in batches {
            let plan = BatchPlan::new(&ctx, triples, cfg.dim, ssl, &mut shuffling);
            let opts = ForwardOptions {
                matching: cfg.ablation.uses_matching(),
                scope: cfg.train_scope(&plan.users),
            };
            let res = batch_gradients(&params, &ctx, &plan, &opts, &objective)?;
            adam_step(&mut params, &res.grads, cfg.learning_rate, &cfg.adam);
            params.check_finite()?;
            attm += res.attm_evals;
            products += res.sparse_products;
            reports.push(res.loss);
        }
        let loss = mean_losses(&reports);
        let report = if has_test && (cfg.eval_every_epoch || epoch == cfg.epochs) {
            let r = model::represent(&params, &ctx, &cfg.eval_options(ctx.n_users))?;
            Some(eval::evaluate_representations(
                &r.user,
                &r.items,
                dataset,
                Scenario::General,
                cfg.eval_k,
            )?)
        } else {
            None
        };
        let score = report.as_ref().map_or(f64::NEG_INFINITY, |r| r.recall_at_k);
        if best.as_ref().is_none_or(|b| score > b.0 || !has_test) {
            best = Some((score, epoch, params.clone()));
        }
        let entry = EpochLog {
            epoch,
            l_r: loss.l_r,
            l_s11: loss.l_s11,
            l_s12: loss.l_s12,
            l_1: loss.l_1,
            l_2: loss.l_2,
            total: loss.total,
            metrics: report.as_ref().map(MetricSummary::from),
            batches: reports.len(),
            skipped_triples: skipped,
            attm_evals: attm,
            sparse_products: products,
            seconds: (!cfg.deterministic).then(|| start.elapsed().as_secs_f64()),
        };
        log(&entry)?;
        epochs.push(entry);
        losses.push(loss);
        metrics.push(report);
    }
    let (_, best_epoch, params) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        params,
        best_epoch,
        epochs,
        losses,
        metrics,
        context: ctx,
        config: cfg.clone(),
    })
}
