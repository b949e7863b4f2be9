//! Model parameters and the differentiable forward pass.
//!
//! The forward pass runs on a [`Tape`]: channel encoding, cross-channel
//! matching, the two fusion levels and item aggregation. [`build_losses`]
//! then adds the ranking and self-supervised terms for one mini-batch.

use std::collections::BTreeMap;
use std::sync::Arc;

use ndarray::Array2;
use rand::Rng;

use crate::data::Dataset;
use crate::encoder::{self, ChannelGraph};
use crate::error::{Error, Result};
use crate::matching::{self, AttentionScope};
use crate::motif::{Channel, MotifSet};
use crate::sparse::SparseMatrix;
use crate::ssl::{self, DirectContrast, LossReport, Reduction, ShuffleMap, SslConfig};
use crate::tape::{Tape, Var};

/// Number of trainable tensors.
pub const N_TENSORS: usize = 20;
const PAIRS_START: usize = 1;
const GCN2_START: usize = 13;
const WITHIN_W: usize = 16;
const WITHIN_A: usize = 17;
const ACROSS_W: usize = 18;
const ACROSS_A: usize = 19;

/// Ordered channel pairs `(i, l)`, `i ≠ l`, in tensor order.
pub fn ordered_pairs() -> Vec<(Channel, Channel)> {
    let mut out = Vec::new();
    for &i in &Channel::ALL {
        for &l in &Channel::ALL {
            if i != l {
                out.push((i, l));
            }
        }
    }
    out
}

/// Tensor indices `(views, gcn1)` of an ordered pair.
pub fn pair_tensors(i: Channel, l: Channel) -> (usize, usize) {
    let k = ordered_pairs()
        .iter()
        .position(|&p| p == (i, l))
        .expect("pair of distinct channels");
    (PAIRS_START + 2 * k, PAIRS_START + 2 * k + 1)
}

pub fn gcn2_tensor(c: Channel) -> usize {
    GCN2_START + c.index()
}

/// Human-readable tensor names, used in checkpoints and diagnostics.
pub fn tensor_names() -> Vec<String> {
    let mut names = vec!["user_embeddings".to_string()];
    for (i, l) in ordered_pairs() {
        names.push(format!("views_{}{}", i.short_name(), l.short_name()));
        names.push(format!("gcn1_{}{}", i.short_name(), l.short_name()));
    }
    for c in Channel::ALL {
        names.push(format!("gcn2_{}", c.short_name()));
    }
    names.extend(["within_w", "within_a", "across_w", "across_a"].map(String::from));
    names
}

/// Trainable tensors plus Adam state.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub tensors: Vec<Array2<f64>>,
    pub adam_m: Vec<Array2<f64>>,
    pub adam_v: Vec<Array2<f64>>,
    pub step: u64,
}

impl ModelParams {
    /// Scaled-uniform initialisation of every tensor.
    pub fn init<R: Rng>(n_users: usize, dim: usize, rng: &mut R) -> Self {
        let mut tensors = vec![encoder::glorot_uniform(n_users, dim, rng)];
        for _ in ordered_pairs() {
            tensors.push(encoder::glorot_uniform(dim, dim, rng));
            tensors.push(encoder::glorot_uniform(dim, dim, rng));
        }
        for _ in Channel::ALL {
            tensors.push(encoder::glorot_uniform(dim, dim, rng));
        }
        for _ in 0..2 {
            tensors.push(encoder::glorot_uniform(dim, dim, rng));
            tensors.push(encoder::glorot_uniform(dim, 1, rng));
        }
        Self::from_tensors(tensors)
    }

    /// Wraps existing tensors with fresh optimiser state.
    pub fn from_tensors(tensors: Vec<Array2<f64>>) -> Self {
        let zeros: Vec<Array2<f64>> = tensors.iter().map(|t| Array2::zeros(t.dim())).collect();
        ModelParams {
            adam_m: zeros.clone(),
            adam_v: zeros,
            tensors,
            step: 0,
        }
    }

    pub fn n_users(&self) -> usize {
        self.tensors[0].nrows()
    }

    pub fn dim(&self) -> usize {
        self.tensors[0].ncols()
    }

    pub fn user_embeddings(&self) -> &Array2<f64> {
        &self.tensors[0]
    }

    /// Errors with the name of the first tensor holding NaN or ±∞.
    pub fn check_finite(&self) -> Result<()> {
        for (t, name) in self.tensors.iter().zip(tensor_names()) {
            if !t.iter().all(|x| x.is_finite()) {
                return Err(Error::NonFinite(format!("parameter tensor {name}")));
            }
        }
        Ok(())
    }
}

/// Fixed graph operators for one dataset split.
#[derive(Debug, Clone)]
pub struct ModelContext {
    pub graphs: Vec<ChannelGraph>,
    /// `D_i⁻¹ Rᵀ` over training interactions.
    pub item_agg: Arc<SparseMatrix>,
    pub depth: usize,
    pub n_users: usize,
    pub n_items: usize,
}

impl ModelContext {
    pub fn new(
        motifs: &MotifSet,
        train: &SparseMatrix,
        channels: &[Channel],
        depth: usize,
    ) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::Config("every channel is ablated".into()));
        }
        if depth == 0 {
            return Err(Error::Config("encoder depth must be at least 1".into()));
        }
        Ok(ModelContext {
            graphs: encoder::channel_graphs(motifs, channels)?,
            item_agg: Arc::new(encoder::item_aggregation(train)?),
            depth,
            n_users: train.n_rows(),
            n_items: train.n_cols(),
        })
    }

    /// Extracts motifs from the dataset's training interactions.
    pub fn from_dataset(dataset: &Dataset, channels: &[Channel], depth: usize) -> Result<Self> {
        let motifs = crate::motif::extract_motifs(&dataset.social, &dataset.train)?;
        Self::new(&motifs, &dataset.train, channels, depth)
    }

    pub fn channels(&self) -> Vec<Channel> {
        self.graphs.iter().map(|g| g.channel).collect()
    }
}

/// Forward-pass switches.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOptions {
    pub matching: bool,
    pub scope: AttentionScope,
}

/// Tape handles of every representation produced by [`forward`].
#[derive(Debug, Clone)]
pub struct ForwardVars {
    pub params: Vec<Var>,
    pub common: BTreeMap<Channel, Var>,
    pub matching: BTreeMap<Channel, Var>,
    pub channel: BTreeMap<Channel, Var>,
    /// `n × 2` within-channel coefficients (matching, common).
    pub within_alpha: BTreeMap<Channel, Var>,
    /// `n × C` cross-channel coefficients in active-channel order.
    pub across_alpha: Var,
    pub user: Var,
    pub items: Var,
    pub attm_evals: usize,
}

fn check_rep(tape: &Tape, v: Var, name: &str) -> Result<()> {
    if tape.value(v).iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(name.to_string()))
    }
}

/// Softmax attention over `inputs` (each `n × d`); returns the fused matrix
/// and the `n × k` coefficients.
fn attention_fuse(tape: &mut Tape, inputs: &[Var], w: Var, a: Var) -> (Var, Var) {
    let scores: Vec<Var> = inputs
        .iter()
        .map(|&h| {
            let hw = tape.matmul(h, w);
            tape.matmul(hw, a)
        })
        .collect();
    let s = tape.concat_cols(&scores);
    let alpha = tape.softmax_rows(s);
    let parts: Vec<Var> = inputs
        .iter()
        .enumerate()
        .map(|(k, &h)| {
            let col = tape.column(alpha, k);
            tape.row_scale(h, col)
        })
        .collect();
    (tape.add_all(&parts), alpha)
}

/// Records the full forward pass.
pub fn forward(
    tape: &mut Tape,
    params: &ModelParams,
    ctx: &ModelContext,
    opts: &ForwardOptions,
) -> Result<ForwardVars> {
    if params.n_users() != ctx.n_users {
        return Err(Error::Shape(format!(
            "model has {} users, graph has {}",
            params.n_users(),
            ctx.n_users
        )));
    }
    let pv: Vec<Var> = params
        .tensors
        .iter()
        .enumerate()
        .map(|(i, t)| tape.param(i, t.clone()))
        .collect();
    let p0 = pv[0];

    let mut common = BTreeMap::new();
    for g in &ctx.graphs {
        let mut layer = p0;
        let mut sum = p0;
        for _ in 0..ctx.depth {
            layer = tape.spmm(&g.propagation, layer);
            sum = tape.add(sum, layer);
        }
        let h = tape.scale(sum, 1.0 / (ctx.depth as f64 + 1.0));
        check_rep(tape, h, &format!("common representation {}", g.channel))?;
        common.insert(g.channel, h);
    }

    let mut matching = BTreeMap::new();
    let mut attm_evals = 0;
    if opts.matching && ctx.graphs.len() >= 2 {
        let ego_h: BTreeMap<Channel, Var> = ctx
            .graphs
            .iter()
            .map(|g| (g.channel, tape.spmm(&g.ego, common[&g.channel])))
            .collect();
        for gi in &ctx.graphs {
            let mut terms = Vec::new();
            for gl in ctx.graphs.iter().filter(|g| g.channel != gi.channel) {
                let (views, gcn1) = pair_tensors(gi.channel, gl.channel);
                let g1 = tape.matmul(ego_h[&gi.channel], pv[gcn1]);
                let g2 = tape.matmul(ego_h[&gl.channel], pv[gcn1]);
                let cands =
                    matching::resolve_candidates(tape.value(g1), tape.value(g2), &opts.scope);
                let trans = tape.cross_attention(g1, g2, Arc::new(cands));
                let m = tape.multi_view_cosine(g1, trans, pv[views]);
                let agg = tape.spmm(&gi.ego, m);
                terms.push(tape.matmul(agg, pv[gcn2_tensor(gi.channel)]));
                attm_evals += 1;
            }
            let hm = tape.add_all(&terms);
            check_rep(tape, hm, &format!("matching representation {}", gi.channel))?;
            matching.insert(gi.channel, hm);
        }
    }

    let mut channel = BTreeMap::new();
    let mut within_alpha = BTreeMap::new();
    for g in &ctx.graphs {
        let c = g.channel;
        let h = match matching.get(&c) {
            Some(&hm) => {
                let (h, alpha) =
                    attention_fuse(tape, &[hm, common[&c]], pv[WITHIN_W], pv[WITHIN_A]);
                within_alpha.insert(c, alpha);
                h
            }
            None => common[&c],
        };
        channel.insert(c, h);
    }
    let inputs: Vec<Var> = ctx.graphs.iter().map(|g| channel[&g.channel]).collect();
    let (user, across_alpha) = attention_fuse(tape, &inputs, pv[ACROSS_W], pv[ACROSS_A]);
    check_rep(tape, user, "fused user representation")?;
    let items = tape.spmm(&ctx.item_agg, user);

    Ok(ForwardVars {
        params: pv,
        common,
        matching,
        channel,
        within_alpha,
        across_alpha,
        user,
        items,
        attm_evals,
    })
}

/// Which auxiliary terms enter the objective.
#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    pub ssl: SslConfig,
    /// Contrast on matching representations (the `l_1` term).
    pub matching_ssl: bool,
    /// Contrast applied directly to common representations instead.
    pub direct: DirectContrast,
}

/// Everything random about one mini-batch, drawn up front so the loss is a
/// deterministic function of the parameters.
#[derive(Debug, Clone)]
pub struct BatchPlan {
    pub triples: Vec<(usize, usize, usize)>,
    /// Sorted distinct users of the batch.
    pub users: Arc<Vec<usize>>,
    /// Batch-local ego weights per channel.
    pub ego: BTreeMap<Channel, Arc<SparseMatrix>>,
    /// `(node, ego)` shuffles per channel for matching and common HMIM.
    pub matching_shuffles: BTreeMap<Channel, (Arc<ShuffleMap>, Arc<ShuffleMap>)>,
    pub common_shuffles: BTreeMap<Channel, (Arc<ShuffleMap>, Arc<ShuffleMap>)>,
    /// Row derangements for triplet negatives, one per contrasted pair.
    pub triplet_perms: Vec<Arc<ShuffleMap>>,
}

impl BatchPlan {
    pub fn new<R: Rng>(
        ctx: &ModelContext,
        triples: Vec<(usize, usize, usize)>,
        dim: usize,
        cfg: &SslConfig,
        rng: &mut R,
    ) -> Self {
        let mut users: Vec<usize> = triples.iter().map(|t| t.0).collect();
        users.sort_unstable();
        users.dedup();
        let b = users.len();
        let ego = ctx
            .graphs
            .iter()
            .map(|g| (g.channel, Arc::new(g.ego.submatrix(&users, &users))))
            .collect();
        let draw = |rng: &mut R| -> BTreeMap<Channel, (Arc<ShuffleMap>, Arc<ShuffleMap>)> {
            ctx.graphs
                .iter()
                .map(|g| {
                    let s = ssl::HmimShuffles::sample(b, dim, cfg.shuffle_mode, rng);
                    (g.channel, (Arc::new(s.node), Arc::new(s.ego)))
                })
                .collect()
        };
        let matching_shuffles = draw(rng);
        let common_shuffles = draw(rng);
        let triplet_perms = ssl::contrast_pairs(&ctx.channels())
            .iter()
            .map(|_| {
                Arc::new(ShuffleMap::from_row_permutation(
                    &ssl::random_derangement(b, rng),
                    dim,
                ))
            })
            .collect();
        BatchPlan {
            triples,
            users: Arc::new(users),
            ego,
            matching_shuffles,
            common_shuffles,
            triplet_perms,
        }
    }
}

/// Tape handles of the loss terms.
#[derive(Debug, Clone)]
pub struct LossVars {
    pub l_r: Var,
    pub l_s11: Option<Var>,
    pub l_s12: Option<Var>,
    pub l_1: Option<Var>,
    pub l_2: Var,
    pub total: Var,
    pub infonce_pairs: Vec<(String, Var)>,
    pub hmim_matching: BTreeMap<Channel, Var>,
    pub hmim_common: BTreeMap<Channel, Var>,
}

impl LossVars {
    pub fn report(&self, tape: &Tape) -> LossReport {
        let val = |v: Option<Var>| v.map_or(0.0, |v| tape.scalar(v));
        LossReport {
            l_r: tape.scalar(self.l_r),
            l_s11: val(self.l_s11),
            l_s12: val(self.l_s12),
            l_1: val(self.l_1),
            l_2: tape.scalar(self.l_2),
            total: tape.scalar(self.total),
            infonce_pairs: self
                .infonce_pairs
                .iter()
                .map(|(k, v)| (k.clone(), tape.scalar(*v)))
                .collect(),
            hmim_matching: self
                .hmim_matching
                .iter()
                .map(|(c, v)| (*c, tape.scalar(*v)))
                .collect(),
            hmim_common: self
                .hmim_common
                .iter()
                .map(|(c, v)| (*c, tape.scalar(*v)))
                .collect(),
        }
    }
}

fn reduce(tape: &mut Tape, sum: Var, b: usize, reduction: Reduction) -> Var {
    match reduction {
        Reduction::Mean => tape.scale(sum, 1.0 / b as f64),
        Reduction::Sum => sum,
    }
}

/// Hierarchical MI of batch rows `h` (`b × d`) under batch-local ego weights.
pub fn hmim_on_tape(
    tape: &mut Tape,
    h: Var,
    ego: &Arc<SparseMatrix>,
    shuffles: &(Arc<ShuffleMap>, Arc<ShuffleMap>),
    reduction: Reduction,
) -> Var {
    let b = tape.value(h).nrows();
    let z = tape.spmm(ego, h);
    let h_neg = tape.shuffle(&shuffles.0, h);
    let z_neg = tape.shuffle(&shuffles.1, z);
    let graph = tape.mean_rows(h);
    let graph_t = tape.transpose(graph);
    let pos = tape.row_dot(h, z);
    let neg = tape.row_dot(h_neg, z);
    let local = tape.sub(pos, neg);
    let gpos = tape.matmul(z, graph_t);
    let gneg = tape.matmul(z_neg, graph_t);
    let global = tape.sub(gpos, gneg);
    let ll = tape.log_sigmoid(local);
    let lg = tape.log_sigmoid(global);
    let sl = tape.sum_all(ll);
    let sg = tape.sum_all(lg);
    let s = tape.add(sl, sg);
    let neg_total = tape.scale(s, -1.0);
    reduce(tape, neg_total, b, reduction)
}

fn cross_contrast_on_tape(
    tape: &mut Tape,
    reps: &BTreeMap<Channel, Var>,
    tau: f64,
) -> (Option<Var>, Vec<(String, Var)>) {
    let channels: Vec<Channel> = reps.keys().copied().collect();
    let parts: Vec<(String, Var)> = ssl::contrast_pairs(&channels)
        .into_iter()
        .map(|(a, b)| (ssl::pair_label(a, b), tape.infonce(reps[&a], reps[&b], tau)))
        .collect();
    if parts.is_empty() {
        return (None, parts);
    }
    let vars: Vec<Var> = parts.iter().map(|p| p.1).collect();
    (Some(tape.add_all(&vars)), parts)
}

fn triplet_on_tape(
    tape: &mut Tape,
    reps: &BTreeMap<Channel, Var>,
    perms: &[Arc<ShuffleMap>],
    margin: f64,
) -> Option<Var> {
    let channels: Vec<Channel> = reps.keys().copied().collect();
    let terms: Vec<Var> = ssl::contrast_pairs(&channels)
        .into_iter()
        .zip(perms)
        .map(|((x, y), perm)| {
            let (a, b) = (reps[&x], reps[&y]);
            let n = tape.value(a).nrows();
            let neg = tape.shuffle(perm, b);
            let dp = tape.sub(a, b);
            let dn = tape.sub(a, neg);
            let pos = tape.row_norm(dp);
            let negd = tape.row_norm(dn);
            let diff = tape.sub(pos, negd);
            let m = tape.constant(Array2::from_elem((n, 1), margin));
            let shifted = tape.add(diff, m);
            let hinge = tape.relu(shifted);
            let s = tape.sum_all(hinge);
            tape.scale(s, 1.0 / n as f64)
        })
        .collect();
    (!terms.is_empty()).then(|| tape.add_all(&terms))
}

/// Adds `L = l_r + β₁ l_1 + β₂ l_2` for one batch.
pub fn build_losses(
    tape: &mut Tape,
    fv: &ForwardVars,
    plan: &BatchPlan,
    objective: &Objective,
) -> Result<LossVars> {
    let cfg = &objective.ssl;
    let b = plan.triples.len();
    if b == 0 {
        return Err(Error::EmptyDataset("batch has no training triples".into()));
    }
    let u_idx = Arc::new(plan.triples.iter().map(|t| t.0).collect::<Vec<_>>());
    let i_idx = Arc::new(plan.triples.iter().map(|t| t.1).collect::<Vec<_>>());
    let j_idx = Arc::new(plan.triples.iter().map(|t| t.2).collect::<Vec<_>>());
    let hu = tape.gather_rows(&u_idx, fv.user);
    let qi = tape.gather_rows(&i_idx, fv.items);
    let qj = tape.gather_rows(&j_idx, fv.items);
    let pos = tape.row_dot(hu, qi);
    let neg = tape.row_dot(hu, qj);
    let diff = tape.sub(pos, neg);
    let ls = tape.log_sigmoid(diff);
    let rank = tape.sum_all(ls);
    let base_u = tape.gather_rows(&u_idx, fv.params[0]);
    let r1 = tape.sum_squares(base_u);
    let r2 = tape.sum_squares(qi);
    let r3 = tape.sum_squares(qj);
    let reg = tape.add_all(&[r1, r2, r3]);
    let reg = tape.scale(reg, cfg.lambda_reg);
    let ranked = tape.scale(rank, -1.0);
    let l_r_sum = tape.add(ranked, reg);
    let l_r = tape.scale(l_r_sum, 1.0 / b as f64);

    let batch_rows = |tape: &mut Tape, reps: &BTreeMap<Channel, Var>| -> BTreeMap<Channel, Var> {
        reps.iter()
            .map(|(&c, &v)| (c, tape.gather_rows(&plan.users, v)))
            .collect()
    };

    let mut l_s11 = None;
    let mut l_s12 = None;
    let mut l_1 = None;
    let mut infonce_pairs = Vec::new();
    let mut hmim_matching = BTreeMap::new();
    if objective.direct != DirectContrast::Off {
        let common_b = batch_rows(tape, &fv.common);
        l_1 = match objective.direct {
            DirectContrast::Infonce => {
                let (s, parts) = cross_contrast_on_tape(tape, &common_b, cfg.tau);
                infonce_pairs = parts;
                s
            }
            DirectContrast::Triplet => {
                triplet_on_tape(tape, &common_b, &plan.triplet_perms, cfg.margin)
            }
            DirectContrast::Off => None,
        };
    } else if objective.matching_ssl && !fv.matching.is_empty() {
        let matching_b = batch_rows(tape, &fv.matching);
        let (s11, parts) = cross_contrast_on_tape(tape, &matching_b, cfg.tau);
        infonce_pairs = parts;
        for (&c, &h) in &matching_b {
            let v = hmim_on_tape(
                tape,
                h,
                &plan.ego[&c],
                &plan.matching_shuffles[&c],
                cfg.reduction,
            );
            hmim_matching.insert(c, v);
        }
        let vars: Vec<Var> = hmim_matching.values().copied().collect();
        let s12 = tape.add_all(&vars);
        l_1 = Some(match s11 {
            Some(s11) => tape.add(s11, s12),
            None => s12,
        });
        l_s11 = s11;
        l_s12 = Some(s12);
    }

    let common_b = batch_rows(tape, &fv.common);
    let mut hmim_common = BTreeMap::new();
    for (&c, &h) in &common_b {
        let v = hmim_on_tape(
            tape,
            h,
            &plan.ego[&c],
            &plan.common_shuffles[&c],
            cfg.reduction,
        );
        hmim_common.insert(c, v);
    }
    let vars: Vec<Var> = hmim_common.values().copied().collect();
    let l_2 = tape.add_all(&vars);

    let mut total = l_r;
    if let Some(l1) = l_1 {
        let w = tape.scale(l1, cfg.beta1);
        total = tape.add(total, w);
    }
    let w2 = tape.scale(l_2, cfg.beta2);
    total = tape.add(total, w2);
    if !tape.scalar(total).is_finite() {
        return Err(Error::NonFinite("joint loss".into()));
    }
    Ok(LossVars {
        l_r,
        l_s11,
        l_s12,
        l_1,
        l_2,
        total,
        infonce_pairs,
        hmim_matching,
        hmim_common,
    })
}

/// Plain (untaped) outputs of a forward pass, for evaluation and export.
#[derive(Debug, Clone)]
pub struct Representations {
    pub user: Array2<f64>,
    pub items: Array2<f64>,
    pub common: BTreeMap<Channel, Array2<f64>>,
    pub matching: BTreeMap<Channel, Array2<f64>>,
    /// `n × 3` cross-channel coefficients in social/joint/purchase order;
    /// removed channels carry zero.
    pub channel_alpha: Array2<f64>,
    pub attm_evals: usize,
    pub sparse_products: usize,
}

pub fn represent(
    params: &ModelParams,
    ctx: &ModelContext,
    opts: &ForwardOptions,
) -> Result<Representations> {
    let mut tape = Tape::new();
    let fv = forward(&mut tape, params, ctx, opts)?;
    let alpha = tape.value(fv.across_alpha);
    let mut channel_alpha = Array2::zeros((ctx.n_users, 3));
    for (k, c) in ctx.channels().iter().enumerate() {
        channel_alpha.column_mut(c.index()).assign(&alpha.column(k));
    }
    let collect = |m: &BTreeMap<Channel, Var>| {
        m.iter()
            .map(|(&c, &v)| (c, tape.value(v).clone()))
            .collect()
    };
    Ok(Representations {
        user: tape.value(fv.user).clone(),
        items: tape.value(fv.items).clone(),
        common: collect(&fv.common),
        matching: collect(&fv.matching),
        channel_alpha,
        attm_evals: fv.attm_evals,
        sparse_products: tape.stats().sparse_products,
    })
}

/// Candidate scope used outside training: every node on small graphs, the
/// `k` most similar otherwise.
pub fn evaluation_scope(n_users: usize, topk: usize) -> AttentionScope {
    if n_users <= 5000 {
        AttentionScope::Full
    } else {
        AttentionScope::TopK(topk)
    }
}

/// Shared candidates of a batch-restricted scope.
pub fn batch_scope(users: &[usize]) -> AttentionScope {
    AttentionScope::Subset(users.to_vec())
}
