use std::path::Path;

use serde::{Deserialize, Serialize};

use super::objective::{episode_backward, episode_objective};
use super::{Embedder, EpisodeBatch, FeatureView, FslTrainConfig};
use crate::data::{check_feasible, sample_episode, Dataset, SplitSpec};
use crate::error::{Error, Result};
use crate::halluc::{sample_noise, CmmGan, Direction, Hallucinator};
use crate::numerics::{load_checkpoint, save_checkpoint, AdamConfig, AdamState, MlpNet};
use crate::rng;

/// One row of the training history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss_total: f64,
    pub loss_proto: f64,
    pub loss_std: f64,
    pub train_acc: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.epochs {
            w.serialize(r)?;
        }
        if self.epochs.is_empty() {
            w.write_record(["epoch", "loss_total", "loss_proto", "loss_std", "train_acc"])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(input: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(input);
        let epochs = rd.deserialize().collect::<std::result::Result<Vec<EpochRecord>, _>>()?;
        Ok(Self { epochs })
    }
}

/// Episodic training on the base classes with real fused pairs.
pub fn meta_train(
    embedder: &mut Embedder,
    dataset: &Dataset,
    split: &SplitSpec,
    cfg: &FslTrainConfig,
    gan: Option<&mut CmmGan>,
) -> Result<TrainHistory> {
    meta_train_on(embedder, dataset, &split.base_classes, FeatureView::FusedReal, cfg, gan)
}

struct JointGan {
    opt_g1: AdamState,
    opt_g2: AdamState,
    opt_d1: AdamState,
    opt_d2: AdamState,
}

/// Episodic training on `classes`, feeding the embedder `view` features.
///
/// Every episode draws its classes, samples and dropout masks from its own
/// stream keyed by the global episode index. The GAN, when given, supplies
/// hallucinated features; it is only updated if `cfg.joint_gan` is set.
pub fn meta_train_on(
    embedder: &mut Embedder,
    dataset: &Dataset,
    classes: &[usize],
    view: FeatureView,
    cfg: &FslTrainConfig,
    mut gan: Option<&mut CmmGan>,
) -> Result<TrainHistory> {
    cfg.validate()?;
    check_feasible(dataset, classes, cfg.way, cfg.shot, cfg.query_per_class)
        .map_err(|e| Error::config("fsl", e.to_string()))?;
    let want = view.input_dim(dataset.audio_dim(), dataset.visual_dim());
    if embedder.input_dim() != want {
        return Err(Error::dims("meta_train", (1, want), (1, embedder.input_dim())));
    }
    if gan.is_none() && (view.needs_hallucinator() || cfg.augment_support || cfg.joint_gan) {
        return Err(Error::config("gan", "a trained generator is required by this training setup"));
    }
    if cfg.augment_support && !view.is_fused() {
        return Err(Error::config("fsl.augment_support", "only applies to fused feature views"));
    }

    let spec = cfg.objective();
    let mut opt = AdamState::new(AdamConfig::with_lr(cfg.lr), embedder.net());
    let mut joint = match (&gan, cfg.joint_gan) {
        (Some(g), true) => {
            let a = AdamConfig::with_lr(cfg.joint_gan_lr);
            Some(JointGan {
                opt_g1: AdamState::new(a, &g.g1),
                opt_g2: AdamState::new(a, &g.g2),
                opt_d1: AdamState::new(a, &g.d1),
                opt_d2: AdamState::new(a, &g.d2),
            })
        }
        _ => None,
    };

    let mut history = TrainHistory::default();
    for epoch in 0..cfg.epochs {
        let (mut total, mut proto, mut std, mut correct, mut queries) = (0.0, 0.0, 0.0, 0usize, 0usize);
        for step in 0..cfg.episodes_per_epoch {
            let global = (epoch * cfg.episodes_per_epoch + step) as u64;
            let mut r = rng::indexed(cfg.seed, "meta-train", global);
            let episode = sample_episode(dataset, classes, cfg.way, cfg.shot, cfg.query_per_class, &mut r)?;
            let hal: Option<&dyn Hallucinator> = gan.as_deref().map(|g| g as &dyn Hallucinator);
            let mut batch = EpisodeBatch::from_episode(dataset, &episode, view, hal)?;
            if cfg.augment_support {
                batch.augment_support(dataset, &episode, hal.expect("checked above"))?;
            }

            let fwd = episode_objective(embedder.net(), &batch, &spec, &mut r)?;
            let mut c = fwd.components();
            embedder.net_mut().zero_grads();
            episode_backward(embedder.net_mut(), &fwd, &batch)?;
            opt.apply(embedder.net_mut());

            if let (Some(j), Some(g)) = (joint.as_mut(), gan.as_deref_mut()) {
                let idx = episode.support_indices();
                c.cma = joint_gan_step(g, j, &dataset.audio_rows(&idx), &dataset.visual_rows(&idx), &mut r)
                    .map_err(|e| match e {
                        Error::Numerical { what, .. } => Error::Numerical {
                            phase: "meta-training",
                            what,
                            epoch,
                            step,
                        },
                        other => other,
                    })?;
                c.total += c.cma;
            }
            if !c.total.is_finite() {
                return Err(Error::Numerical {
                    phase: "meta-training",
                    what: "total loss".into(),
                    epoch,
                    step,
                });
            }
            total += c.total;
            proto += c.proto;
            std += c.std_penalty;
            correct += fwd.correct(batch.query_slots());
            queries += batch.query_slots().len();
        }
        let k = cfg.episodes_per_epoch.max(1) as f64;
        history.epochs.push(EpochRecord {
            epoch,
            loss_total: total / k,
            loss_proto: proto / k,
            loss_std: std / k,
            train_acc: if queries == 0 { 0.0 } else { correct as f64 / queries as f64 },
        });
    }
    Ok(history)
}

/// One discriminator and one generator step per direction on support pairs;
/// returns the summed generator objective.
fn joint_gan_step(
    gan: &mut CmmGan,
    j: &mut JointGan,
    audio: &crate::numerics::Tensor2,
    visual: &crate::numerics::Tensor2,
    r: &mut rng::RngStream,
) -> Result<f64> {
    let noise_dim = gan.noise_dim();
    let mut sum = 0.0;
    for dir in Direction::BOTH {
        let (src, tgt) = match dir {
            Direction::AudioToVisual => (audio, visual),
            Direction::VisualToAudio => (visual, audio),
        };
        let (opt_g, opt_d) = match dir {
            Direction::AudioToVisual => (&mut j.opt_g1, &mut j.opt_d1),
            Direction::VisualToAudio => (&mut j.opt_g2, &mut j.opt_d2),
        };
        let mut b = gan.branch_mut(dir);
        b.d.zero_grads();
        let ld = b.discriminator_grads(tgt, src, &sample_noise(src.rows(), noise_dim, r))?;
        opt_d.apply(b.d);
        b.g.zero_grads();
        let lg = b.generator_grads(src, tgt, &sample_noise(src.rows(), noise_dim, r))?;
        opt_g.apply(b.g);
        if !(ld.is_finite() && lg.total.is_finite()) {
            return Err(Error::Numerical {
                phase: "meta-training",
                what: format!("joint {} GAN loss", dir.tag()),
                epoch: 0,
                step: 0,
            });
        }
        sum += lg.total;
    }
    Ok(sum)
}

/// Contents of `embedder.json` next to `embedder.hvnc`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedderManifest {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub embed_dim: usize,
    pub dropout_rate: f64,
    pub n_times: usize,
    pub lambda2: f64,
    pub seed: u64,
    pub view: FeatureView,
}

pub const EMBEDDER_MANIFEST: &str = "embedder.json";
const EMBEDDER_FILE: &str = "embedder.hvnc";

pub fn save_embedder(
    embedder: &Embedder,
    dir: impl AsRef<Path>,
    cfg: &FslTrainConfig,
    view: FeatureView,
) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    save_checkpoint(embedder.net(), dir.join(EMBEDDER_FILE))?;
    let layers = embedder.net().layers();
    let manifest = EmbedderManifest {
        input_dim: embedder.input_dim(),
        hidden: layers[..layers.len() - 1].iter().map(|l| l.out_dim()).collect(),
        embed_dim: embedder.embed_dim(),
        dropout_rate: embedder.dropout_rate(),
        n_times: cfg.n_times,
        lambda2: cfg.lambda2,
        seed: cfg.seed,
        view,
    };
    std::fs::write(dir.join(EMBEDDER_MANIFEST), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(())
}

pub fn load_embedder(dir: impl AsRef<Path>) -> Result<(Embedder, EmbedderManifest)> {
    let dir = dir.as_ref();
    let m: EmbedderManifest = serde_json::from_slice(&std::fs::read(dir.join(EMBEDDER_MANIFEST))?)?;
    let net: MlpNet = load_checkpoint(dir.join(EMBEDDER_FILE), m.dropout_rate)?;
    if net.input_dim() != m.input_dim || net.output_dim() != m.embed_dim {
        return Err(Error::State(format!(
            "embedder checkpoint maps {} → {}, manifest says {} → {}",
            net.input_dim(),
            net.output_dim(),
            m.input_dim,
            m.embed_dim
        )));
    }
    Ok((Embedder::from_net(net), m))
}
