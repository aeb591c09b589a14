//! Cross-modal feature hallucination.
//!
//! [`CmmGan`] holds two conditional generators, `g1` (audio → visual) and
//! `g2` (visual → audio), each with a discriminator that scores a candidate
//! target feature concatenated with the source feature it was generated from.
//! [`pretrain`] fits both directions on base-class pairs with an adversarial
//! term plus `λ1` times a reconstruction term.

mod gan;
mod loss;

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use gan::{sample_noise, CmmGan, Direction, GanOptions, GeneratorLoss, HallucinationMode};
pub use loss::{discriminator_bce, generator_adversarial, reconstruction, ReconstructionNorm, PROB_CLAMP};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::numerics::{load_checkpoint, save_checkpoint, AdamConfig, AdamState, Tensor2};
use crate::rng::{self, RngStream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GanTrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub epochs: usize,
    pub noise_dim: usize,
    pub lambda1: f64,
    pub generator_hidden: Vec<usize>,
    pub discriminator_hidden: Vec<usize>,
    pub options: GanOptions,
    pub seed: u64,
}

impl Default for GanTrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            lr: 1e-4,
            epochs: 40,
            noise_dim: 64,
            lambda1: 1.0,
            generator_hidden: vec![512, 512],
            discriminator_hidden: vec![512],
            options: GanOptions::default(),
            seed: 0,
        }
    }
}

impl GanTrainConfig {
    /// Range checks; errors name the field under `gan.`.
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::config("gan.batch_size", format!("must be ≥ 2, got {}", self.batch_size)));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::config("gan.lr", format!("must be positive, got {}", self.lr)));
        }
        if !(self.lambda1.is_finite() && self.lambda1 >= 0.0) {
            return Err(Error::config("gan.lambda1", format!("must be non-negative, got {}", self.lambda1)));
        }
        if let Some(i) = self.generator_hidden.iter().position(|&w| w == 0) {
            return Err(Error::config(format!("gan.generator_hidden[{i}]"), "width must be positive"));
        }
        if let Some(i) = self.discriminator_hidden.iter().position(|&w| w == 0) {
            return Err(Error::config(format!("gan.discriminator_hidden[{i}]"), "width must be positive"));
        }
        Ok(())
    }

    /// Fresh GAN with this config's architecture, seeded from `seed`.
    pub fn build(&self, audio_dim: usize, visual_dim: usize) -> Result<CmmGan> {
        self.validate()?;
        CmmGan::new(
            audio_dim,
            visual_dim,
            self.noise_dim,
            &self.generator_hidden,
            &self.discriminator_hidden,
            self.lambda1,
            self.options,
            &mut rng::stream(self.seed, "gan-init"),
        )
    }
}

/// Per-epoch mean losses.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GanCurves {
    pub d1: Vec<f64>,
    pub g1_adv: Vec<f64>,
    pub g1_rec: Vec<f64>,
    pub d2: Vec<f64>,
    pub g2_adv: Vec<f64>,
    pub g2_rec: Vec<f64>,
}

const CURVE_COLUMNS: [&str; 7] = ["epoch", "d1", "g1_adv", "g1_rec", "d2", "g2_adv", "g2_rec"];

impl GanCurves {
    pub fn epochs(&self) -> usize {
        self.d1.len()
    }

    fn columns(&self) -> [&Vec<f64>; 6] {
        [&self.d1, &self.g1_adv, &self.g1_rec, &self.d2, &self.g2_adv, &self.g2_rec]
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CURVE_COLUMNS)?;
        for e in 0..self.epochs() {
            let mut row = vec![e.to_string()];
            row.extend(self.columns().iter().map(|c| c[e].to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(input: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(input);
        if rd.headers()?.iter().ne(CURVE_COLUMNS) {
            return Err(Error::format(0, format!("loss curve header must be {}", CURVE_COLUMNS.join(","))));
        }
        let mut c = GanCurves::default();
        for rec in rd.records() {
            let rec = rec?;
            let off = rec.position().map_or(0, |p| p.byte());
            let v = rec
                .iter()
                .skip(1)
                .map(|f| f.parse::<f64>().map_err(|e| Error::format(off, format!("bad number {f:?}: {e}"))))
                .collect::<Result<Vec<f64>>>()?;
            if v.len() != 6 {
                return Err(Error::format(off, "loss curve row needs 7 fields"));
            }
            for (col, x) in [&mut c.d1, &mut c.g1_adv, &mut c.g1_rec, &mut c.d2, &mut c.g2_adv, &mut c.g2_rec]
                .into_iter()
                .zip(v)
            {
                col.push(x);
            }
        }
        Ok(c)
    }
}

#[derive(Default)]
struct DirectionCurve {
    d: Vec<f64>,
    adv: Vec<f64>,
    rec: Vec<f64>,
}

/// Trains both directions on pairs from `base_classes`: per minibatch one
/// discriminator step then one generator step, each with Adam.
///
/// The two directions share no parameters and run on separate threads with
/// independent random streams, so the result does not depend on scheduling.
pub fn pretrain(
    gan: &mut CmmGan,
    dataset: &Dataset,
    base_classes: &[usize],
    cfg: &GanTrainConfig,
) -> Result<GanCurves> {
    cfg.validate()?;
    if dataset.audio_dim() != gan.audio_dim() || dataset.visual_dim() != gan.visual_dim() {
        return Err(Error::dims(
            "pretrain",
            (gan.audio_dim(), gan.visual_dim()),
            (dataset.audio_dim(), dataset.visual_dim()),
        ));
    }
    let pool = dataset.indices_in(base_classes);
    if pool.len() < 2 {
        return Err(Error::config(
            "split.base_classes",
            format!("GAN pretraining needs at least 2 base samples, found {}", pool.len()),
        ));
    }
    if cfg.epochs == 0 {
        return Ok(GanCurves::default());
    }
    let audio = dataset.audio_rows(&pool);
    let visual = dataset.visual_rows(&pool);
    let (b1, b2) = gan.branches_mut();
    let (r1, r2) = std::thread::scope(|s| {
        let h1 = s.spawn(|| train_direction(b1, &audio, &visual, cfg, Direction::AudioToVisual));
        let h2 = s.spawn(|| train_direction(b2, &visual, &audio, cfg, Direction::VisualToAudio));
        (h1.join().expect("g1 thread"), h2.join().expect("g2 thread"))
    });
    let (c1, c2) = (r1?, r2?);
    Ok(GanCurves {
        d1: c1.d,
        g1_adv: c1.adv,
        g1_rec: c1.rec,
        d2: c2.d,
        g2_adv: c2.adv,
        g2_rec: c2.rec,
    })
}

fn train_direction(
    mut b: gan::BranchMut<'_>,
    source: &Tensor2,
    target: &Tensor2,
    cfg: &GanTrainConfig,
    dir: Direction,
) -> Result<DirectionCurve> {
    let adam = AdamConfig::with_lr(cfg.lr);
    let mut opt_g = AdamState::new(adam, b.g);
    let mut opt_d = AdamState::new(adam, b.d);
    let mut rng: RngStream = rng::stream(cfg.seed, &format!("gan-train-{}", dir.tag()));
    let (phase_d, phase_g) = match dir {
        Direction::AudioToVisual => ("d1", "g1"),
        Direction::VisualToAudio => ("d2", "g2"),
    };
    let n = source.rows();
    let mut order: Vec<usize> = (0..n).collect();
    let mut curve = DirectionCurve::default();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut sd, mut sa, mut sr, mut batches) = (0.0, 0.0, 0.0, 0usize);
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            if chunk.len() < 2 && batches > 0 {
                continue;
            }
            let cond = source.select_rows(chunk);
            let real = target.select_rows(chunk);

            b.d.zero_grads();
            let z = sample_noise(chunk.len(), b.noise_dim, &mut rng);
            let ld = b.discriminator_grads(&real, &cond, &z)?;
            if !ld.is_finite() {
                return Err(numerical(phase_d, epoch, step));
            }
            opt_d.apply(b.d);

            b.g.zero_grads();
            let z = sample_noise(chunk.len(), b.noise_dim, &mut rng);
            let lg = b.generator_grads(&cond, &real, &z)?;
            if !lg.total.is_finite() {
                return Err(numerical(phase_g, epoch, step));
            }
            opt_g.apply(b.g);

            sd += ld;
            sa += lg.adv;
            sr += lg.rec;
            batches += 1;
        }
        let k = batches as f64;
        curve.d.push(sd / k);
        curve.adv.push(sa / k);
        curve.rec.push(sr / k);
    }
    Ok(curve)
}

fn numerical(net: &str, epoch: usize, step: usize) -> Error {
    Error::Numerical {
        phase: "gan pretraining",
        what: format!("{net} loss"),
        epoch,
        step,
    }
}

/// Contents of `gan.json` next to the four checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GanManifest {
    pub noise_dim: usize,
    pub audio_dim: usize,
    pub visual_dim: usize,
    pub lambda1: f64,
    pub seed: u64,
    pub epochs: usize,
    pub options: GanOptions,
}

pub const GAN_MANIFEST: &str = "gan.json";
const GAN_FILES: [&str; 4] = ["g1.hvnc", "g2.hvnc", "d1.hvnc", "d2.hvnc"];

/// Writes `g1.hvnc`, `g2.hvnc`, `d1.hvnc`, `d2.hvnc` and `gan.json` into `dir`.
pub fn save_gan(gan: &CmmGan, dir: impl AsRef<Path>, cfg: &GanTrainConfig) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    for (net, name) in [&gan.g1, &gan.g2, &gan.d1, &gan.d2].into_iter().zip(GAN_FILES) {
        save_checkpoint(net, dir.join(name))?;
    }
    let manifest = GanManifest {
        noise_dim: gan.noise_dim(),
        audio_dim: gan.audio_dim(),
        visual_dim: gan.visual_dim(),
        lambda1: gan.lambda1(),
        seed: cfg.seed,
        epochs: cfg.epochs,
        options: gan.options(),
    };
    std::fs::write(dir.join(GAN_MANIFEST), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(())
}

pub fn load_gan(dir: impl AsRef<Path>) -> Result<(CmmGan, GanManifest)> {
    let dir = dir.as_ref();
    let m: GanManifest = serde_json::from_slice(&std::fs::read(dir.join(GAN_MANIFEST))?)?;
    let [g1, g2, d1, d2] = GAN_FILES.map(|f| load_checkpoint(dir.join(f), 0.0));
    let gan = CmmGan::from_parts(g1?, g2?, d1?, d2?, m.audio_dim, m.visual_dim, m.noise_dim, m.lambda1, m.options)?;
    Ok((gan, m))
}

/// Anything that can fill in a missing modality for dataset samples.
pub trait Hallucinator: Sync {
    /// Target-modality rows for `indices`, generated from their source modality.
    fn hallucinate_samples(&self, dataset: &Dataset, indices: &[usize], dir: Direction) -> Result<Tensor2>;
}

impl<H: Hallucinator + ?Sized> Hallucinator for &H {
    fn hallucinate_samples(&self, dataset: &Dataset, indices: &[usize], dir: Direction) -> Result<Tensor2> {
        (**self).hallucinate_samples(dataset, indices, dir)
    }
}

/// Mean-mode (`z = 0`) generation.
impl Hallucinator for CmmGan {
    fn hallucinate_samples(&self, dataset: &Dataset, indices: &[usize], dir: Direction) -> Result<Tensor2> {
        let source = match dir {
            Direction::AudioToVisual => dataset.audio_rows(indices),
            Direction::VisualToAudio => dataset.visual_rows(indices),
        };
        let mut unused = rng::stream(0, "mean-mode");
        self.hallucinate(dir, &source, &mut unused, HallucinationMode::Mean)
    }
}

/// Averages `draws` stochastic generations per sample. The noise for a sample
/// comes from a stream keyed by `seed`, the direction and the sample index,
/// so results do not depend on how samples are batched.
#[derive(Debug, Clone, Copy)]
pub struct StochasticHallucinator<'a> {
    pub gan: &'a CmmGan,
    pub draws: usize,
    pub seed: u64,
}

impl Hallucinator for StochasticHallucinator<'_> {
    fn hallucinate_samples(&self, dataset: &Dataset, indices: &[usize], dir: Direction) -> Result<Tensor2> {
        if self.draws == 0 {
            return Err(Error::config("hallucination_draws", "must be positive"));
        }
        let source = match dir {
            Direction::AudioToVisual => dataset.audio_rows(indices),
            Direction::VisualToAudio => dataset.visual_rows(indices),
        };
        let k = self.gan.noise_dim();
        let mut streams: Vec<RngStream> = indices
            .iter()
            .map(|&i| rng::indexed(self.seed, dir.tag(), i as u64))
            .collect();
        let mut sum = Tensor2::zeros(indices.len(), self.gan.target_dim(dir));
        for _ in 0..self.draws {
            let mut z = Tensor2::zeros(indices.len(), k);
            for (r, s) in streams.iter_mut().enumerate() {
                z.row_mut(r).copy_from_slice(sample_noise(1, k, s).row(0));
            }
            sum.add_assign(&self.gan.generate(dir, &source, &z)?)?;
        }
        sum.scale(1.0 / self.draws as f64);
        Ok(sum)
    }
}

/// Returns the true target features; a perfect generator.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleHallucinator;

impl Hallucinator for OracleHallucinator {
    fn hallucinate_samples(&self, dataset: &Dataset, indices: &[usize], dir: Direction) -> Result<Tensor2> {
        Ok(match dir {
            Direction::AudioToVisual => dataset.visual_rows(indices),
            Direction::VisualToAudio => dataset.audio_rows(indices),
        })
    }
}
