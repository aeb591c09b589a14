//! Prototypical few-shot classification over fused audio-visual features.
//!
//! An [`Embedder`] maps `[audio ; visual]` rows to an embedding space.
//! Each episode's support rows are averaged per class into prototypes and
//! queries are scored by a softmax over negative squared distances. Training
//! adds `λ2` times a Monte-Carlo dropout penalty on how much those
//! probabilities move between stochastic passes.

mod objective;
mod proto;
mod train;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use objective::{
    episode_backward, episode_objective, episode_objective_replay, EpisodeForward, EpisodeMasks, LossComponents,
    ObjectiveSpec,
};
pub use proto::{
    argmax_rows, class_means, pairwise_distances, population_std, proto_loss, proto_probs, proto_probs_with,
    softmax_neg, std_penalty, Distance,
};
pub use train::{
    load_embedder, meta_train, meta_train_on, save_embedder, EmbedderManifest, EpochRecord, TrainHistory,
    EMBEDDER_MANIFEST,
};

use crate::data::{Dataset, Episode};
use crate::error::{Error, Result};
use crate::halluc::{CmmGan, Direction, Hallucinator};
use crate::numerics::{Activation, MlpNet, Mode, Tensor2};
use crate::rng;

/// Row-wise concatenation, audio columns first.
pub fn fuse(audio: &Tensor2, visual: &Tensor2) -> Result<Tensor2> {
    if audio.rows() != visual.rows() {
        return Err(Error::dims("fuse", audio.shape(), visual.shape()));
    }
    Tensor2::concat_rows(audio, visual)
}

/// Which features an embedder sees for a set of samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureView {
    /// `[A ; V]`
    FusedReal,
    /// `[A ; G1(A)]`
    AudioPlusHalVisual,
    /// `[G2(V) ; V]`
    VisualPlusHalAudio,
    /// `[A ; 0]`
    AudioOnly,
    /// `[0 ; V]`
    VisualOnly,
    /// `V` alone.
    Visual,
    /// `G1(A)` alone.
    HalVisual,
}

impl FeatureView {
    pub fn input_dim(self, audio_dim: usize, visual_dim: usize) -> usize {
        match self {
            FeatureView::Visual | FeatureView::HalVisual => visual_dim,
            _ => audio_dim + visual_dim,
        }
    }

    pub fn needs_hallucinator(self) -> bool {
        matches!(
            self,
            FeatureView::AudioPlusHalVisual | FeatureView::VisualPlusHalAudio | FeatureView::HalVisual
        )
    }

    pub fn is_fused(self) -> bool {
        !matches!(self, FeatureView::Visual | FeatureView::HalVisual)
    }

    pub fn features(self, dataset: &Dataset, indices: &[usize], hal: Option<&dyn Hallucinator>) -> Result<Tensor2> {
        let need = || {
            hal.ok_or_else(|| Error::config("gan", format!("feature view {self:?} needs a trained generator")))
        };
        let n = indices.len();
        match self {
            FeatureView::FusedReal => fuse(&dataset.audio_rows(indices), &dataset.visual_rows(indices)),
            FeatureView::AudioPlusHalVisual => fuse(
                &dataset.audio_rows(indices),
                &need()?.hallucinate_samples(dataset, indices, Direction::AudioToVisual)?,
            ),
            FeatureView::VisualPlusHalAudio => fuse(
                &need()?.hallucinate_samples(dataset, indices, Direction::VisualToAudio)?,
                &dataset.visual_rows(indices),
            ),
            FeatureView::AudioOnly => fuse(&dataset.audio_rows(indices), &Tensor2::zeros(n, dataset.visual_dim())),
            FeatureView::VisualOnly => fuse(&Tensor2::zeros(n, dataset.audio_dim()), &dataset.visual_rows(indices)),
            FeatureView::Visual => Ok(dataset.visual_rows(indices)),
            FeatureView::HalVisual => need()?.hallucinate_samples(dataset, indices, Direction::AudioToVisual),
        }
    }
}

/// Support and query inputs of one episode, with episode-local class slots.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeBatch {
    support: Tensor2,
    support_slots: Vec<usize>,
    query: Tensor2,
    query_slots: Vec<usize>,
    way: usize,
}

impl EpisodeBatch {
    pub fn new(
        support: Tensor2,
        support_slots: Vec<usize>,
        query: Tensor2,
        query_slots: Vec<usize>,
        way: usize,
    ) -> Result<Self> {
        if support.rows() != support_slots.len() {
            return Err(Error::dims("episode support", support.shape(), (support_slots.len(), support.cols())));
        }
        if query.rows() != query_slots.len() {
            return Err(Error::dims("episode query", query.shape(), (query_slots.len(), query.cols())));
        }
        if support.cols() != query.cols() {
            return Err(Error::dims("episode width", support.shape(), query.shape()));
        }
        if let Some(&s) = support_slots.iter().chain(&query_slots).find(|&&s| s >= way) {
            return Err(Error::Episode(format!("slot {s} outside 0..{way}")));
        }
        Ok(Self {
            support,
            support_slots,
            query,
            query_slots,
            way,
        })
    }

    /// Builds the inputs of `episode` under `view`.
    pub fn from_episode(
        dataset: &Dataset,
        episode: &Episode,
        view: FeatureView,
        hal: Option<&dyn Hallucinator>,
    ) -> Result<Self> {
        Self::new(
            view.features(dataset, &episode.support_indices(), hal)?,
            episode.support_slots(),
            view.features(dataset, &episode.query_indices(), hal)?,
            episode.query_slots(),
            episode.way,
        )
    }

    /// Appends `[A ; G1(A)]` and `[G2(V) ; V]` rows for every support sample.
    pub fn augment_support(&mut self, dataset: &Dataset, episode: &Episode, hal: &dyn Hallucinator) -> Result<()> {
        let idx = episode.support_indices();
        let slots = episode.support_slots();
        for view in [FeatureView::AudioPlusHalVisual, FeatureView::VisualPlusHalAudio] {
            let rows = view.features(dataset, &idx, Some(hal))?;
            self.support = Tensor2::vstack(&self.support, &rows)?;
            self.support_slots.extend_from_slice(&slots);
        }
        Ok(())
    }

    pub fn support(&self) -> &Tensor2 {
        &self.support
    }

    pub fn support_slots(&self) -> &[usize] {
        &self.support_slots
    }

    pub fn query(&self) -> &Tensor2 {
        &self.query
    }

    pub fn query_slots(&self) -> &[usize] {
        &self.query_slots
    }

    pub fn way(&self) -> usize {
        self.way
    }
}

/// `input → hidden… → embed_dim`, relu hidden layers with dropout after
/// each, linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedder {
    net: MlpNet,
}

impl Embedder {
    pub fn new<R: Rng + ?Sized>(
        input_dim: usize,
        hidden: &[usize],
        embed_dim: usize,
        dropout_rate: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut sizes = vec![input_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(embed_dim);
        Ok(Self {
            net: MlpNet::new(&sizes, Activation::Relu, Activation::Identity, dropout_rate, rng)?,
        })
    }

    pub fn from_net(net: MlpNet) -> Self {
        Self { net }
    }

    pub fn net(&self) -> &MlpNet {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut MlpNet {
        &mut self.net
    }

    pub fn into_net(self) -> MlpNet {
        self.net
    }

    pub fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn embed_dim(&self) -> usize {
        self.net.output_dim()
    }

    pub fn dropout_rate(&self) -> f64 {
        self.net.dropout_rate()
    }

    /// Eval-mode embeddings.
    pub fn embed(&self, x: &Tensor2) -> Result<Tensor2> {
        self.net.predict(x)
    }
}

/// One prototype per episode slot.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeSet {
    prototypes: Tensor2,
}

impl PrototypeSet {
    pub fn new(prototypes: Tensor2) -> Self {
        Self { prototypes }
    }

    /// `way × embed_dim`; row `k` is slot `k`.
    pub fn matrix(&self) -> &Tensor2 {
        &self.prototypes
    }

    pub fn way(&self) -> usize {
        self.prototypes.rows()
    }
}

/// Slot means of the eval-mode support embeddings.
pub fn compute_prototypes(embedder: &Embedder, batch: &EpisodeBatch) -> Result<PrototypeSet> {
    let emb = embedder.embed(batch.support())?;
    Ok(PrototypeSet::new(class_means(&emb, batch.support_slots(), batch.way())?))
}

/// `L_std` of `queries` against fixed prototypes over `n_times` train-mode passes.
pub fn uncertainty_loss<R: Rng + ?Sized>(
    embedder: &Embedder,
    prototypes: &PrototypeSet,
    queries: &Tensor2,
    n_times: usize,
    rng: &mut R,
) -> Result<f64> {
    if n_times < 2 {
        return Err(Error::config("fsl.n_times", format!("must be ≥ 2, got {n_times}")));
    }
    let passes = (0..n_times)
        .map(|_| {
            let (emb, _) = embedder.net().forward(queries, Mode::Train, rng)?;
            proto_probs(prototypes.matrix(), &emb)
        })
        .collect::<Result<Vec<_>>>()?;
    std_penalty(&passes)
}

/// Source pairs for the GAN term of the joint objective.
pub struct CmaInput<'a> {
    pub gan: &'a CmmGan,
    pub audio: &'a Tensor2,
    pub visual: &'a Tensor2,
}

/// `L_CMA + L_proto + λ2·L_std` on one episode. `L_CMA` is the generator
/// objective summed over both directions when `cma` is given and joint
/// refinement is on; otherwise it is zero.
pub fn total_loss<R: Rng + ?Sized>(
    embedder: &Embedder,
    batch: &EpisodeBatch,
    cma: Option<CmaInput<'_>>,
    cfg: &FslTrainConfig,
    rng: &mut R,
) -> Result<LossComponents> {
    let c = episode_objective(embedder.net(), batch, &cfg.objective(), rng)?.components();
    let l_cma = match cma {
        Some(input) if cfg.joint_gan => {
            let g1 = input.gan.generator_loss(Direction::AudioToVisual, input.audio, input.visual, rng)?;
            let g2 = input.gan.generator_loss(Direction::VisualToAudio, input.visual, input.audio, rng)?;
            g1.total + g2.total
        }
        _ => 0.0,
    };
    Ok(LossComponents::new(l_cma, c.proto, c.std_penalty, cfg.lambda2))
}

/// Labels and mean probabilities for `queries`. With `n_times ≥ 2` and a
/// non-zero dropout rate the softmax is averaged over stochastic passes;
/// otherwise one eval-mode pass is used.
pub fn predict<R: Rng + ?Sized>(
    embedder: &Embedder,
    prototypes: &PrototypeSet,
    queries: &Tensor2,
    n_times: usize,
    rng: &mut R,
) -> Result<(Vec<usize>, Tensor2)> {
    let probs = if n_times >= 2 && embedder.dropout_rate() > 0.0 {
        let mut acc = Tensor2::zeros(queries.rows(), prototypes.way());
        for _ in 0..n_times {
            let (emb, _) = embedder.net().forward(queries, Mode::Train, rng)?;
            acc.add_assign(&proto_probs(prototypes.matrix(), &emb)?)?;
        }
        acc.scale(1.0 / n_times as f64);
        acc
    } else {
        proto_probs(prototypes.matrix(), &embedder.embed(queries)?)?
    };
    Ok((argmax_rows(&probs), probs))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FslTrainConfig {
    pub way: usize,
    pub shot: usize,
    pub query_per_class: usize,
    pub lr: f64,
    pub epochs: usize,
    pub episodes_per_epoch: usize,
    pub lambda2: f64,
    pub n_times: usize,
    pub dropout_rate: f64,
    pub hidden: Vec<usize>,
    pub embed_dim: usize,
    pub distance: Distance,
    /// Also update the GAN on each episode's support pairs.
    pub joint_gan: bool,
    pub joint_gan_lr: f64,
    /// Add hallucinated fused rows to every support set.
    pub augment_support: bool,
    pub seed: u64,
}

impl Default for FslTrainConfig {
    fn default() -> Self {
        Self {
            way: 5,
            shot: 1,
            query_per_class: 5,
            lr: 1e-3,
            epochs: 60,
            episodes_per_epoch: 100,
            lambda2: 10.0,
            n_times: 10,
            dropout_rate: 0.2,
            hidden: vec![1024],
            embed_dim: 512,
            distance: Distance::SquaredEuclidean,
            joint_gan: false,
            joint_gan_lr: 1e-4,
            augment_support: false,
            seed: 0,
        }
    }
}

impl FslTrainConfig {
    /// Range checks; errors name the field under `fsl.`.
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("way", self.way),
            ("shot", self.shot),
            ("query_per_class", self.query_per_class),
            ("embed_dim", self.embed_dim),
        ] {
            if v == 0 {
                return Err(Error::config(format!("fsl.{name}"), "must be positive"));
            }
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::config("fsl.lr", format!("must be positive, got {}", self.lr)));
        }
        if !(self.joint_gan_lr.is_finite() && self.joint_gan_lr > 0.0) {
            return Err(Error::config("fsl.joint_gan_lr", format!("must be positive, got {}", self.joint_gan_lr)));
        }
        if !(self.lambda2.is_finite() && self.lambda2 >= 0.0) {
            return Err(Error::config("fsl.lambda2", format!("must be non-negative, got {}", self.lambda2)));
        }
        if self.lambda2 > 0.0 && self.n_times < 2 {
            return Err(Error::config("fsl.n_times", format!("must be ≥ 2 when lambda2 > 0, got {}", self.n_times)));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::config("fsl.dropout_rate", format!("must be in [0, 1), got {}", self.dropout_rate)));
        }
        if let Some(i) = self.hidden.iter().position(|&w| w == 0) {
            return Err(Error::config(format!("fsl.hidden[{i}]"), "width must be positive"));
        }
        Ok(())
    }

    pub fn objective(&self) -> ObjectiveSpec {
        ObjectiveSpec {
            lambda2: self.lambda2,
            n_times: self.n_times,
            distance: self.distance,
        }
    }

    /// Fresh embedder with this config's architecture, seeded from `seed`.
    pub fn build_embedder(&self, input_dim: usize) -> Result<Embedder> {
        self.validate()?;
        Embedder::new(
            input_dim,
            &self.hidden,
            self.embed_dim,
            self.dropout_rate,
            &mut rng::stream(self.seed, "embedder-init"),
        )
    }
}
