//! The per-episode training objective `L_proto + λ2·L_std` and its gradient
//! with respect to the embedder parameters.
//!
//! Support and query rows are embedded in train mode. Prototypes are the
//! per-slot means of the support embeddings, so gradients reach the embedder
//! through both sides of every distance. The `n_times` extra query passes
//! that feed the std penalty reuse the same prototypes.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::proto::{class_means, pairwise_distances, proto_loss, softmax_neg, std_penalty, Distance};
use super::EpisodeBatch;
use crate::error::{Error, Result};
use crate::numerics::{MlpNet, Mode, Tape, Tensor2};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveSpec {
    pub lambda2: f64,
    pub n_times: usize,
    pub distance: Distance,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossComponents {
    /// Generator objective summed over both directions; zero while the GAN is frozen.
    pub cma: f64,
    pub proto: f64,
    pub std_penalty: f64,
    pub total: f64,
}

impl LossComponents {
    pub fn new(cma: f64, proto: f64, std_penalty: f64, lambda2: f64) -> Self {
        Self {
            cma,
            proto,
            std_penalty,
            total: cma + proto + lambda2 * std_penalty,
        }
    }
}

/// Dropout masks drawn during one objective evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeMasks {
    pub support: Vec<Option<Tensor2>>,
    pub query: Vec<Option<Tensor2>>,
    pub passes: Vec<Vec<Option<Tensor2>>>,
}

struct Pass {
    tape: Tape,
    emb: Tensor2,
    dist: Tensor2,
    probs: Tensor2,
}

/// Everything the backward pass needs, plus the loss values.
pub struct EpisodeForward {
    components: LossComponents,
    spec: ObjectiveSpec,
    support: Pass,
    query: Pass,
    prototypes: Tensor2,
    passes: Vec<Pass>,
}

impl EpisodeForward {
    /// `cma` is always zero here; the caller adds the GAN term.
    pub fn components(&self) -> LossComponents {
        self.components
    }

    /// Train-mode query probabilities behind `L_proto`.
    pub fn probs(&self) -> &Tensor2 {
        &self.query.probs
    }

    pub fn masks(&self) -> EpisodeMasks {
        EpisodeMasks {
            support: self.support.tape.masks().to_vec(),
            query: self.query.tape.masks().to_vec(),
            passes: self.passes.iter().map(|p| p.tape.masks().to_vec()).collect(),
        }
    }

    /// Correctly classified queries under train-mode probabilities.
    pub fn correct(&self, slots: &[usize]) -> usize {
        super::proto::argmax_rows(&self.query.probs)
            .iter()
            .zip(slots)
            .filter(|(a, b)| a == b)
            .count()
    }
}

enum Masks<'a, R: ?Sized> {
    Sample(&'a mut R),
    Replay(&'a EpisodeMasks),
}

impl<R: Rng + ?Sized> Masks<'_, R> {
    fn forward(&mut self, net: &MlpNet, x: &Tensor2, which: Which) -> Result<(Tensor2, Tape)> {
        match self {
            Masks::Sample(rng) => net.forward(x, Mode::Train, &mut **rng),
            Masks::Replay(m) => {
                let masks = match which {
                    Which::Support => &m.support,
                    Which::Query => &m.query,
                    Which::Pass(t) => m
                        .passes
                        .get(t)
                        .ok_or_else(|| Error::State(format!("no recorded masks for pass {t}")))?,
                };
                net.forward_with_masks(x, masks)
            }
        }
    }
}

#[derive(Clone, Copy)]
enum Which {
    Support,
    Query,
    Pass(usize),
}

/// Evaluates the objective, drawing dropout masks from `rng`.
pub fn episode_objective<R: Rng + ?Sized>(
    net: &MlpNet,
    batch: &EpisodeBatch,
    spec: &ObjectiveSpec,
    rng: &mut R,
) -> Result<EpisodeForward> {
    run(net, batch, spec, Masks::Sample(rng))
}

/// Evaluates the objective with the masks of an earlier evaluation.
pub fn episode_objective_replay(
    net: &MlpNet,
    batch: &EpisodeBatch,
    spec: &ObjectiveSpec,
    masks: &EpisodeMasks,
) -> Result<EpisodeForward> {
    run::<rand_chacha::ChaCha8Rng>(net, batch, spec, Masks::Replay(masks))
}

fn run<R: Rng + ?Sized>(
    net: &MlpNet,
    batch: &EpisodeBatch,
    spec: &ObjectiveSpec,
    mut masks: Masks<'_, R>,
) -> Result<EpisodeForward> {
    let std_active = spec.lambda2 != 0.0;
    if std_active && spec.n_times < 2 {
        return Err(Error::config(
            "fsl.n_times",
            format!("must be ≥ 2 when lambda2 ≠ 0, got {}", spec.n_times),
        ));
    }
    let (s_emb, s_tape) = masks.forward(net, batch.support(), Which::Support)?;
    let prototypes = class_means(&s_emb, batch.support_slots(), batch.way())?;
    let (q_emb, q_tape) = masks.forward(net, batch.query(), Which::Query)?;
    let q_dist = pairwise_distances(&q_emb, &prototypes, spec.distance)?;
    let q_probs = softmax_neg(&q_dist);
    let proto = proto_loss(&q_probs, batch.query_slots())?;

    let mut passes = Vec::new();
    if std_active {
        for t in 0..spec.n_times {
            let (emb, tape) = masks.forward(net, batch.query(), Which::Pass(t))?;
            let dist = pairwise_distances(&emb, &prototypes, spec.distance)?;
            let probs = softmax_neg(&dist);
            passes.push(Pass { tape, emb, dist, probs });
        }
    }
    let probs: Vec<Tensor2> = passes.iter().map(|p| p.probs.clone()).collect();
    let std = std_penalty(&probs)?;
    Ok(EpisodeForward {
        components: LossComponents::new(0.0, proto, std, spec.lambda2),
        spec: *spec,
        support: Pass {
            tape: s_tape,
            dist: Tensor2::zeros(0, 0),
            probs: Tensor2::zeros(0, 0),
            emb: s_emb,
        },
        query: Pass {
            tape: q_tape,
            emb: q_emb,
            dist: q_dist,
            probs: q_probs,
        },
        prototypes,
        passes,
    })
}

/// Accumulates `∂(L_proto + λ2·L_std)/∂θ` into the embedder's gradients.
pub fn episode_backward(net: &mut MlpNet, fwd: &EpisodeForward, batch: &EpisodeBatch) -> Result<()> {
    let spec = fwd.spec;
    let (nq, way) = fwd.query.probs.shape();
    let mut g_protos = Tensor2::zeros(way, fwd.prototypes.cols());

    // L_proto: ∂/∂logit = (p − onehot)/n, logit = −d
    let mut g_dist = fwd.query.probs.clone();
    for (i, &s) in batch.query_slots().iter().enumerate() {
        g_dist.row_mut(i)[s] -= 1.0;
    }
    g_dist.scale(-1.0 / nq.max(1) as f64);
    let g_q = distance_backward(&fwd.query, &fwd.prototypes, &g_dist, spec.distance, &mut g_protos);
    net.backward(&fwd.query.tape, &g_q)?;

    if !fwd.passes.is_empty() {
        let t = fwd.passes.len();
        let mut mu = Tensor2::zeros(nq, way);
        for p in &fwd.passes {
            mu.add_assign(&p.probs)?;
        }
        mu.scale(1.0 / t as f64);
        let mut sigma = Tensor2::zeros(nq, way);
        let mut buf = vec![0.0; t];
        for i in 0..nq {
            for k in 0..way {
                for (b, p) in buf.iter_mut().zip(&fwd.passes) {
                    *b = p.probs.get(i, k);
                }
                sigma.set(i, k, super::proto::population_std(&buf));
            }
        }
        for p in &fwd.passes {
            // ∂σ_ik/∂p_tik = (p_tik − μ_ik)/(T σ_ik); the mean over classes adds 1/K
            let mut g_p = Tensor2::zeros(nq, way);
            for i in 0..nq {
                for k in 0..way {
                    let s = sigma.get(i, k);
                    if s > 0.0 {
                        let g = spec.lambda2 * (p.probs.get(i, k) - mu.get(i, k)) / (t as f64 * s * way as f64);
                        g_p.set(i, k, g);
                    }
                }
            }
            let g_dist = softmax_neg_backward(&p.probs, &g_p);
            let g_q = distance_backward(p, &fwd.prototypes, &g_dist, spec.distance, &mut g_protos);
            net.backward(&p.tape, &g_q)?;
        }
    }

    // prototypes are slot means of the support embeddings
    let slots = batch.support_slots();
    let mut counts = vec![0usize; way];
    for &s in slots {
        counts[s] += 1;
    }
    let mut g_s = Tensor2::zeros(fwd.support.emb.rows(), fwd.support.emb.cols());
    for (r, &s) in slots.iter().enumerate() {
        let c = counts[s] as f64;
        for (g, v) in g_s.row_mut(r).iter_mut().zip(g_protos.row(s)) {
            *g = v / c;
        }
    }
    net.backward(&fwd.support.tape, &g_s)?;
    Ok(())
}

/// `∂L/∂(−d)` from `∂L/∂p` through `p = softmax(−d)`, returned as `∂L/∂d`.
fn softmax_neg_backward(p: &Tensor2, g_p: &Tensor2) -> Tensor2 {
    let mut g_d = Tensor2::zeros(p.rows(), p.cols());
    for i in 0..p.rows() {
        let dot: f64 = p.row(i).iter().zip(g_p.row(i)).map(|(a, b)| a * b).sum();
        for ((o, &pk), &gk) in g_d.row_mut(i).iter_mut().zip(p.row(i)).zip(g_p.row(i)) {
            *o = -pk * (gk - dot);
        }
    }
    g_d
}

/// Returns `∂L/∂q` and accumulates `∂L/∂c` from `∂L/∂d`.
fn distance_backward(
    pass: &Pass,
    prototypes: &Tensor2,
    g_dist: &Tensor2,
    metric: Distance,
    g_protos: &mut Tensor2,
) -> Tensor2 {
    let q = &pass.emb;
    let mut g_q = Tensor2::zeros(q.rows(), q.cols());
    for i in 0..q.rows() {
        for k in 0..prototypes.rows() {
            let coef = match metric {
                Distance::SquaredEuclidean => 2.0 * g_dist.get(i, k),
                Distance::Euclidean => {
                    let d = pass.dist.get(i, k);
                    if d > 0.0 {
                        g_dist.get(i, k) / d
                    } else {
                        0.0
                    }
                }
            };
            if coef == 0.0 {
                continue;
            }
            let c = prototypes.row(k);
            let gq = g_q.row_mut(i);
            for e in 0..c.len() {
                gq[e] += coef * (q.get(i, e) - c[e]);
            }
            let gc = g_protos.row_mut(k);
            for e in 0..c.len() {
                gc[e] -= coef * (q.get(i, e) - c[e]);
            }
        }
    }
    g_q
}
