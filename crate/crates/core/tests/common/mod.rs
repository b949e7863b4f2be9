//! Fixtures shared by the integration tests.
#![allow(dead_code)]

use motifrec::data::{dataset_from_pairs, Dataset};
use motifrec::matching::{self, AttentionScope};
use motifrec::model::{self, BatchPlan, ForwardOptions, ModelContext, ModelParams, Objective};
use motifrec::motif::Channel;
use motifrec::rng::{stream, Stream};
use motifrec::ssl::{DirectContrast, SslConfig};
use motifrec::tape::Tape;
use ndarray::Array2;
use rand::Rng;

/// Random user/item/social instance in which every user owns an item and
/// misses another.
pub fn random_dataset(
    n_users: usize,
    n_items: usize,
    p_item: f64,
    p_edge: f64,
    seed: u64,
) -> Dataset {
    let mut rng = stream(seed, Stream::Synthetic);
    let mut pairs = Vec::new();
    for u in 0..n_users {
        let owned: Vec<usize> = (0..n_items).filter(|_| rng.gen_bool(p_item)).collect();
        let owned = if owned.is_empty() || owned.len() == n_items {
            vec![rng.gen_range(0..n_items)]
        } else {
            owned
        };
        pairs.extend(owned.into_iter().map(|i| (u, i)));
    }
    let mut edges = Vec::new();
    for a in 0..n_users {
        for b in 0..n_users {
            if a != b && rng.gen_bool(p_edge) {
                edges.push((a, b));
            }
        }
    }
    dataset_from_pairs(n_users, n_items, &pairs, &edges).unwrap()
}

/// Which loss a gradient check differentiates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossTerm {
    Ranking,
    CrossContrast,
    MatchingMi,
    CommonMi,
    Total,
}

pub const LOSS_TERMS: [LossTerm; 5] = [
    LossTerm::Ranking,
    LossTerm::CrossContrast,
    LossTerm::MatchingMi,
    LossTerm::CommonMi,
    LossTerm::Total,
];

/// A fixed small problem: parameters, graph operators and one batch with
/// every random choice pinned.
pub struct GradInstance {
    pub params: ModelParams,
    pub ctx: ModelContext,
    pub plan: BatchPlan,
    pub opts: ForwardOptions,
    pub objective: Objective,
}

impl GradInstance {
    pub fn new(seed: u64, n_users: usize, n_items: usize, dim: usize, depth: usize) -> Self {
        let ds = random_dataset(n_users, n_items, 0.35, 0.3, seed);
        let ctx = ModelContext::from_dataset(&ds, &Channel::ALL, depth).unwrap();
        let params = ModelParams::init(n_users, dim, &mut stream(seed, Stream::Init));
        let mut rng = stream(seed, Stream::Sampling);
        let owned = ds.user_train_items();
        let triples: Vec<(usize, usize, usize)> = (0..n_users)
            .map(|u| {
                let i = owned[u][rng.gen_range(0..owned[u].len())];
                let j = loop {
                    let j = rng.gen_range(0..n_items);
                    if !owned[u].contains(&j) {
                        break j;
                    }
                };
                (u, i, j)
            })
            .collect();
        let ssl = SslConfig::default();
        let plan = BatchPlan::new(
            &ctx,
            triples,
            dim,
            &ssl,
            &mut stream(seed, Stream::Shuffling),
        );
        GradInstance {
            params,
            ctx,
            plan,
            opts: ForwardOptions {
                matching: true,
                scope: AttentionScope::Full,
            },
            objective: Objective {
                ssl,
                matching_ssl: true,
                direct: DirectContrast::Off,
            },
        }
    }

    /// Smallest `|cos|` between ego-aggregated rows of any matched channel
    /// pair. The attention weights clamp cosines at zero, so a finite
    /// difference stencil is only valid when this margin exceeds the step.
    pub fn clamp_margin(&self) -> f64 {
        let reps = model::represent(&self.params, &self.ctx, &self.opts).unwrap();
        let mut margin = f64::INFINITY;
        for gi in &self.ctx.graphs {
            for gl in self.ctx.graphs.iter().filter(|g| g.channel != gi.channel) {
                let (_, gcn1) = model::pair_tensors(gi.channel, gl.channel);
                let w = &self.params.tensors[gcn1];
                let g1 =
                    matching::ego_aggregate(&gi.normalized, &reps.common[&gi.channel], w).unwrap();
                let g2 =
                    matching::ego_aggregate(&gl.normalized, &reps.common[&gl.channel], w).unwrap();
                for a in g1.rows() {
                    for b in g2.rows() {
                        margin = margin.min(matching::cosine(a, b).abs());
                    }
                }
            }
        }
        margin
    }

    /// Values of every loss term at `params`.
    pub fn losses(&self, params: &ModelParams) -> [f64; 5] {
        let mut tape = Tape::new();
        let fv = model::forward(&mut tape, params, &self.ctx, &self.opts).unwrap();
        let lv = model::build_losses(&mut tape, &fv, &self.plan, &self.objective).unwrap();
        [
            tape.scalar(lv.l_r),
            tape.scalar(lv.l_s11.unwrap()),
            tape.scalar(lv.l_s12.unwrap()),
            tape.scalar(lv.l_2),
            tape.scalar(lv.total),
        ]
    }

    /// Analytic gradients of every loss term.
    pub fn analytic(&self) -> Vec<Vec<Array2<f64>>> {
        let mut tape = Tape::new();
        let fv = model::forward(&mut tape, &self.params, &self.ctx, &self.opts).unwrap();
        let lv = model::build_losses(&mut tape, &fv, &self.plan, &self.objective).unwrap();
        let n = self.params.tensors.len();
        [
            lv.l_r,
            lv.l_s11.unwrap(),
            lv.l_s12.unwrap(),
            lv.l_2,
            lv.total,
        ]
        .iter()
        .map(|&v| tape.param_grads(v, n))
        .collect()
    }

    /// Central differences of every loss term, step `h`.
    pub fn numeric(&self, h: f64) -> Vec<Vec<Array2<f64>>> {
        let mut out: Vec<Vec<Array2<f64>>> = (0..5)
            .map(|_| {
                self.params
                    .tensors
                    .iter()
                    .map(|t| Array2::zeros(t.dim()))
                    .collect()
            })
            .collect();
        let mut p = self.params.clone();
        for t in 0..p.tensors.len() {
            for idx in 0..p.tensors[t].len() {
                let orig = p.tensors[t].as_slice().unwrap()[idx];
                p.tensors[t].as_slice_mut().unwrap()[idx] = orig + h;
                let plus = self.losses(&p);
                p.tensors[t].as_slice_mut().unwrap()[idx] = orig - h;
                let minus = self.losses(&p);
                p.tensors[t].as_slice_mut().unwrap()[idx] = orig;
                for (k, grads) in out.iter_mut().enumerate() {
                    grads[t].as_slice_mut().unwrap()[idx] = (plus[k] - minus[k]) / (2.0 * h);
                }
            }
        }
        out
    }
}

/// Smallest ratio of a tensor's largest analytic gradient to the magnitude
/// of its loss, over every loss term and every tensor with a nonzero
/// gradient. Central differences carry round-off of a few ulps of the loss
/// divided by the step, so tensors far below the loss scale cannot be
/// resolved to a small relative error.
pub fn gradient_ratio(inst: &GradInstance) -> f64 {
    let losses = inst.losses(&inst.params);
    let mut ratio = f64::INFINITY;
    for (grads, loss) in inst.analytic().iter().zip(losses) {
        for g in grads {
            let scale = g.iter().map(|x| x.abs()).fold(0.0, f64::max);
            if scale > 0.0 {
                ratio = ratio.min(scale / loss.abs().max(f64::MIN_POSITIVE));
            }
        }
    }
    ratio
}

/// Why an instance was passed over.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Skip {
    /// Some attention cosine lies within the margin of the zero clamp.
    NearClamp(u64),
    /// Some gradient lies below the finite-difference resolution.
    Unresolvable(u64),
}

/// The first `count` instances, in seed order, whose clamp margin is at
/// least `min_margin` and whose gradient ratio is at least `min_ratio`;
/// also returns the seeds that were passed over.
pub fn smooth_instances(
    count: usize,
    min_margin: f64,
    min_ratio: f64,
) -> (Vec<(u64, GradInstance)>, Vec<Skip>) {
    let mut kept = Vec::new();
    let mut skipped = Vec::new();
    let mut seed = 0;
    while kept.len() < count {
        let inst = GradInstance::new(seed, 12, 8, 6, 2);
        if inst.clamp_margin() < min_margin {
            skipped.push(Skip::NearClamp(seed));
        } else if gradient_ratio(&inst) < min_ratio {
            skipped.push(Skip::Unresolvable(seed));
        } else {
            kept.push((seed, inst));
        }
        seed += 1;
    }
    (kept, skipped)
}

/// Relative error of one tensor: largest absolute difference over the
/// largest gradient magnitude of the pair. Zero when both vanish.
pub fn tensor_relative_error(a: &Array2<f64>, f: &Array2<f64>) -> f64 {
    let diff = a
        .iter()
        .zip(f.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    let scale = a
        .iter()
        .chain(f.iter())
        .map(|x| x.abs())
        .fold(0.0, f64::max);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}
