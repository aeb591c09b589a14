use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::loss::{discriminator_bce, generator_adversarial, reconstruction, ReconstructionNorm};
use crate::error::{Error, Result};
use crate::numerics::{Activation, MlpNet, Tape, Tensor2};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// `G1`: hallucinates visual features from audio.
    AudioToVisual,
    /// `G2`: hallucinates audio features from visual.
    VisualToAudio,
}

impl Direction {
    pub const BOTH: [Direction; 2] = [Direction::AudioToVisual, Direction::VisualToAudio];

    pub fn tag(self) -> &'static str {
        match self {
            Direction::AudioToVisual => "audio_to_visual",
            Direction::VisualToAudio => "visual_to_audio",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HallucinationMode {
    /// Fresh `z ~ N(0, I)` per row.
    Stochastic,
    /// `z = 0`: deterministic.
    Mean,
}

/// Objective variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GanOptions {
    /// Discriminator sees `candidate ⊕ source`; otherwise the candidate only.
    pub conditional_discriminator: bool,
    /// Generator minimises `log(1 − D(fake))` instead of `−log D(fake)`.
    pub saturating_generator: bool,
    pub reconstruction: ReconstructionNorm,
}

impl Default for GanOptions {
    fn default() -> Self {
        Self {
            conditional_discriminator: true,
            saturating_generator: false,
            reconstruction: ReconstructionNorm::SquaredL2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorLoss {
    pub adv: f64,
    pub rec: f64,
    pub total: f64,
}

/// Cross-modal generators `g1` (audio → visual), `g2` (visual → audio) and
/// their discriminators `d1`, `d2`.
#[derive(Debug, Clone, PartialEq)]
pub struct CmmGan {
    pub g1: MlpNet,
    pub g2: MlpNet,
    pub d1: MlpNet,
    pub d2: MlpNet,
    noise_dim: usize,
    lambda1: f64,
    audio_dim: usize,
    visual_dim: usize,
    options: GanOptions,
}

/// Borrowed view of one direction: its generator, discriminator and widths.
pub(crate) struct Branch<'a> {
    pub g: &'a MlpNet,
    pub d: &'a MlpNet,
    pub source_dim: usize,
    pub target_dim: usize,
    pub lambda1: f64,
    pub options: GanOptions,
}

pub(crate) struct BranchMut<'a> {
    pub g: &'a mut MlpNet,
    pub d: &'a mut MlpNet,
    pub source_dim: usize,
    pub target_dim: usize,
    pub noise_dim: usize,
    pub lambda1: f64,
    pub options: GanOptions,
}

impl CmmGan {
    /// Assembles a GAN from existing nets, checking every width.
    pub fn from_parts(
        g1: MlpNet,
        g2: MlpNet,
        d1: MlpNet,
        d2: MlpNet,
        audio_dim: usize,
        visual_dim: usize,
        noise_dim: usize,
        lambda1: f64,
        options: GanOptions,
    ) -> Result<Self> {
        let disc_in = |target: usize, source: usize| {
            if options.conditional_discriminator {
                target + source
            } else {
                target
            }
        };
        let checks = [
            ("g1", &g1, audio_dim + noise_dim, visual_dim),
            ("g2", &g2, visual_dim + noise_dim, audio_dim),
            ("d1", &d1, disc_in(visual_dim, audio_dim), 1),
            ("d2", &d2, disc_in(audio_dim, visual_dim), 1),
        ];
        for (name, net, i, o) in checks {
            if net.input_dim() != i || net.output_dim() != o {
                return Err(Error::State(format!(
                    "{name} maps {} → {}, expected {i} → {o}",
                    net.input_dim(),
                    net.output_dim()
                )));
            }
        }
        if !(lambda1.is_finite() && lambda1 >= 0.0) {
            return Err(Error::config("lambda1", format!("must be non-negative, got {lambda1}")));
        }
        Ok(Self {
            g1,
            g2,
            d1,
            d2,
            noise_dim,
            lambda1,
            audio_dim,
            visual_dim,
            options,
        })
    }

    /// Randomly initialised GAN: generators `source ⊕ z → hidden… → target`
    /// (relu hidden, linear output), discriminators `candidate ⊕ source →
    /// hidden… → 1` (relu hidden, sigmoid output).
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        audio_dim: usize,
        visual_dim: usize,
        noise_dim: usize,
        generator_hidden: &[usize],
        discriminator_hidden: &[usize],
        lambda1: f64,
        options: GanOptions,
        rng: &mut R,
    ) -> Result<Self> {
        let widths = |first: usize, hidden: &[usize], last: usize| {
            let mut v = vec![first];
            v.extend_from_slice(hidden);
            v.push(last);
            v
        };
        let disc_in = |target: usize, source: usize| {
            if options.conditional_discriminator {
                target + source
            } else {
                target
            }
        };
        let g1 = MlpNet::new(
            &widths(audio_dim + noise_dim, generator_hidden, visual_dim),
            Activation::Relu,
            Activation::Identity,
            0.0,
            rng,
        )?;
        let g2 = MlpNet::new(
            &widths(visual_dim + noise_dim, generator_hidden, audio_dim),
            Activation::Relu,
            Activation::Identity,
            0.0,
            rng,
        )?;
        let d1 = MlpNet::new(
            &widths(disc_in(visual_dim, audio_dim), discriminator_hidden, 1),
            Activation::Relu,
            Activation::Sigmoid,
            0.0,
            rng,
        )?;
        let d2 = MlpNet::new(
            &widths(disc_in(audio_dim, visual_dim), discriminator_hidden, 1),
            Activation::Relu,
            Activation::Sigmoid,
            0.0,
            rng,
        )?;
        Self::from_parts(g1, g2, d1, d2, audio_dim, visual_dim, noise_dim, lambda1, options)
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    pub fn lambda1(&self) -> f64 {
        self.lambda1
    }

    pub fn audio_dim(&self) -> usize {
        self.audio_dim
    }

    pub fn visual_dim(&self) -> usize {
        self.visual_dim
    }

    pub fn options(&self) -> GanOptions {
        self.options
    }

    pub fn source_dim(&self, dir: Direction) -> usize {
        match dir {
            Direction::AudioToVisual => self.audio_dim,
            Direction::VisualToAudio => self.visual_dim,
        }
    }

    pub fn target_dim(&self, dir: Direction) -> usize {
        match dir {
            Direction::AudioToVisual => self.visual_dim,
            Direction::VisualToAudio => self.audio_dim,
        }
    }

    pub fn generator(&self, dir: Direction) -> &MlpNet {
        match dir {
            Direction::AudioToVisual => &self.g1,
            Direction::VisualToAudio => &self.g2,
        }
    }

    pub fn discriminator(&self, dir: Direction) -> &MlpNet {
        match dir {
            Direction::AudioToVisual => &self.d1,
            Direction::VisualToAudio => &self.d2,
        }
    }

    /// Sets the last generator layer to zero, so both generators output zeros.
    pub fn zero_generator_outputs(&mut self) {
        for g in [&mut self.g1, &mut self.g2] {
            let last = g.layers_mut().last_mut().expect("non-empty");
            last.weight.fill(0.0);
            last.bias.fill(0.0);
        }
    }

    pub(crate) fn branch(&self, dir: Direction) -> Branch<'_> {
        Branch {
            g: self.generator(dir),
            d: self.discriminator(dir),
            source_dim: self.source_dim(dir),
            target_dim: self.target_dim(dir),
            lambda1: self.lambda1,
            options: self.options,
        }
    }

    /// Both directions, mutably and disjointly.
    pub(crate) fn branches_mut(&mut self) -> (BranchMut<'_>, BranchMut<'_>) {
        let common = (self.noise_dim, self.lambda1, self.options);
        (
            BranchMut {
                g: &mut self.g1,
                d: &mut self.d1,
                source_dim: self.audio_dim,
                target_dim: self.visual_dim,
                noise_dim: common.0,
                lambda1: common.1,
                options: common.2,
            },
            BranchMut {
                g: &mut self.g2,
                d: &mut self.d2,
                source_dim: self.visual_dim,
                target_dim: self.audio_dim,
                noise_dim: common.0,
                lambda1: common.1,
                options: common.2,
            },
        )
    }

    pub(crate) fn branch_mut(&mut self, dir: Direction) -> BranchMut<'_> {
        let (a, b) = self.branches_mut();
        match dir {
            Direction::AudioToVisual => a,
            Direction::VisualToAudio => b,
        }
    }

    /// Generates target-modality rows from `source` rows.
    pub fn hallucinate<R: Rng + ?Sized>(
        &self,
        dir: Direction,
        source: &Tensor2,
        rng: &mut R,
        mode: HallucinationMode,
    ) -> Result<Tensor2> {
        let b = self.branch(dir);
        b.check_source(source)?;
        let z = match mode {
            HallucinationMode::Stochastic => sample_noise(source.rows(), self.noise_dim, rng),
            HallucinationMode::Mean => Tensor2::zeros(source.rows(), self.noise_dim),
        };
        Ok(b.g.forward_eval(&Tensor2::concat_rows(source, &z)?)?.0)
    }

    /// Generator output for explicit noise rows `z`.
    pub fn generate(&self, dir: Direction, source: &Tensor2, z: &Tensor2) -> Result<Tensor2> {
        let b = self.branch(dir);
        b.check_source(source)?;
        if z.shape() != (source.rows(), self.noise_dim) {
            return Err(Error::dims("generator noise", (source.rows(), self.noise_dim), z.shape()));
        }
        Ok(b.g.forward_eval(&Tensor2::concat_rows(source, z)?)?.0)
    }

    /// Discriminator BCE on one batch, with a stochastic fake drawn from `rng`.
    pub fn discriminator_loss<R: Rng + ?Sized>(
        &self,
        dir: Direction,
        real_target: &Tensor2,
        cond_source: &Tensor2,
        rng: &mut R,
    ) -> Result<f64> {
        let z = sample_noise(cond_source.rows(), self.noise_dim, rng);
        self.branch(dir).discriminator_value(real_target, cond_source, &z)
    }

    /// Generator objective on one batch: adversarial, reconstruction and
    /// `adv + λ1·rec`.
    pub fn generator_loss<R: Rng + ?Sized>(
        &self,
        dir: Direction,
        cond_source: &Tensor2,
        real_target: &Tensor2,
        rng: &mut R,
    ) -> Result<GeneratorLoss> {
        let z = sample_noise(cond_source.rows(), self.noise_dim, rng);
        self.branch(dir).generator_value(cond_source, real_target, &z)
    }

    /// [`discriminator_loss`](Self::discriminator_loss) with fixed noise `z`.
    pub fn discriminator_value(
        &self,
        dir: Direction,
        real_target: &Tensor2,
        cond_source: &Tensor2,
        z: &Tensor2,
    ) -> Result<f64> {
        self.branch(dir).discriminator_value(real_target, cond_source, z)
    }

    /// [`generator_loss`](Self::generator_loss) with fixed noise `z`.
    pub fn generator_value(
        &self,
        dir: Direction,
        cond_source: &Tensor2,
        real_target: &Tensor2,
        z: &Tensor2,
    ) -> Result<GeneratorLoss> {
        self.branch(dir).generator_value(cond_source, real_target, z)
    }

    /// Accumulates discriminator parameter gradients for one batch with
    /// fixed noise; returns the loss.
    pub fn discriminator_grads(
        &mut self,
        dir: Direction,
        real_target: &Tensor2,
        cond_source: &Tensor2,
        z: &Tensor2,
    ) -> Result<f64> {
        self.branch_mut(dir).discriminator_grads(real_target, cond_source, z)
    }

    /// Accumulates generator parameter gradients of `adv + λ1·rec` for one
    /// batch with fixed noise. Discriminator gradients are left alone.
    pub fn generator_grads(
        &mut self,
        dir: Direction,
        cond_source: &Tensor2,
        real_target: &Tensor2,
        z: &Tensor2,
    ) -> Result<GeneratorLoss> {
        self.branch_mut(dir).generator_grads(cond_source, real_target, z)
    }
}

/// `rows × dim` standard normal draws.
pub fn sample_noise<R: Rng + ?Sized>(rows: usize, dim: usize, rng: &mut R) -> Tensor2 {
    let data = (0..rows * dim)
        .map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
        .collect();
    Tensor2::from_vec(rows, dim, data).expect("noise shape")
}

fn disc_input(options: &GanOptions, candidate: &Tensor2, cond: &Tensor2) -> Result<Tensor2> {
    if options.conditional_discriminator {
        Tensor2::concat_rows(candidate, cond)
    } else {
        Ok(candidate.clone())
    }
}

fn check_pair(source_dim: usize, target_dim: usize, source: &Tensor2, target: &Tensor2) -> Result<()> {
    if source.cols() != source_dim {
        return Err(Error::dims("gan source", (source.rows(), source_dim), source.shape()));
    }
    if target.cols() != target_dim || target.rows() != source.rows() {
        return Err(Error::dims(
            "gan target",
            (source.rows(), target_dim),
            target.shape(),
        ));
    }
    Ok(())
}

impl Branch<'_> {
    fn check_source(&self, source: &Tensor2) -> Result<()> {
        if source.cols() != self.source_dim {
            return Err(Error::dims(
                "hallucinate",
                (source.rows(), self.source_dim),
                source.shape(),
            ));
        }
        Ok(())
    }

    pub fn discriminator_value(&self, real: &Tensor2, cond: &Tensor2, z: &Tensor2) -> Result<f64> {
        check_pair(self.source_dim, self.target_dim, cond, real)?;
        let fake = self.g.predict(&Tensor2::concat_rows(cond, z)?)?;
        let d_real = self.d.predict(&disc_input(&self.options, real, cond)?)?;
        let d_fake = self.d.predict(&disc_input(&self.options, &fake, cond)?)?;
        Ok(discriminator_bce(&d_real, &d_fake).0)
    }

    pub fn generator_value(&self, cond: &Tensor2, real: &Tensor2, z: &Tensor2) -> Result<GeneratorLoss> {
        check_pair(self.source_dim, self.target_dim, cond, real)?;
        let fake = self.g.predict(&Tensor2::concat_rows(cond, z)?)?;
        let d_fake = self.d.predict(&disc_input(&self.options, &fake, cond)?)?;
        let (adv, _) = generator_adversarial(&d_fake, self.options.saturating_generator);
        let (rec, _) = reconstruction(&fake, real, self.options.reconstruction);
        Ok(GeneratorLoss {
            adv,
            rec,
            total: adv + self.lambda1 * rec,
        })
    }
}

impl BranchMut<'_> {
    /// Accumulates discriminator gradients for one batch; the generator is
    /// only evaluated, never differentiated.
    pub fn discriminator_grads(&mut self, real: &Tensor2, cond: &Tensor2, z: &Tensor2) -> Result<f64> {
        check_pair(self.source_dim, self.target_dim, cond, real)?;
        let fake = self.g.predict(&Tensor2::concat_rows(cond, z)?)?;
        let (d_real, tape_real) = self.d.forward_eval(&disc_input(&self.options, real, cond)?)?;
        let (d_fake, tape_fake) = self.d.forward_eval(&disc_input(&self.options, &fake, cond)?)?;
        let (loss, g_real, g_fake) = discriminator_bce(&d_real, &d_fake);
        self.d.backward(&tape_real, &g_real)?;
        self.d.backward(&tape_fake, &g_fake)?;
        Ok(loss)
    }

    /// Accumulates generator gradients for one batch. The discriminator is
    /// differentiated with respect to its input only; its parameter
    /// gradients are untouched.
    pub fn generator_grads(&mut self, cond: &Tensor2, real: &Tensor2, z: &Tensor2) -> Result<GeneratorLoss> {
        check_pair(self.source_dim, self.target_dim, cond, real)?;
        let (fake, tape_g): (Tensor2, Tape) = self.g.forward_eval(&Tensor2::concat_rows(cond, z)?)?;
        let (d_fake, tape_d) = self.d.forward_eval(&disc_input(&self.options, &fake, cond)?)?;
        let (adv, g_dout) = generator_adversarial(&d_fake, self.options.saturating_generator);
        let (rec, g_rec) = reconstruction(&fake, real, self.options.reconstruction);
        let g_din = self.d.backward_input(&tape_d, &g_dout)?;
        let (mut g_fake, _) = g_din.split_cols(self.target_dim)?;
        g_fake.axpy(self.lambda1, &g_rec)?;
        self.g.backward(&tape_g, &g_fake)?;
        Ok(GeneratorLoss {
            adv,
            rec,
            total: adv + self.lambda1 * rec,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::{check_params, DEFAULT_STEP};
    use crate::numerics::Layer;
    use crate::rng;

    fn tiny(options: GanOptions, seed: u64) -> CmmGan {
        let mut r = rng::stream(seed, "tiny-gan");
        CmmGan::new(3, 2, 2, &[4], &[5], 1.0, options, &mut r).unwrap()
    }

    fn batch(rows: usize, cols: usize, seed: u64) -> Tensor2 {
        sample_noise(rows, cols, &mut rng::stream(seed, "batch"))
    }

    #[test]
    fn hallucinate_shapes_and_mean_mode() {
        let mut r = rng::stream(0, "g");
        let gan = CmmGan::new(1024, 1024, 64, &[32], &[16], 1.0, GanOptions::default(), &mut r).unwrap();
        let audio = batch(7, 1024, 1);
        let v = gan
            .hallucinate(Direction::AudioToVisual, &audio, &mut r, HallucinationMode::Stochastic)
            .unwrap();
        assert_eq!(v.shape(), (7, 1024));
        let a = gan.hallucinate(Direction::AudioToVisual, &audio, &mut r, HallucinationMode::Mean).unwrap();
        let b = gan
            .hallucinate(Direction::AudioToVisual, &audio, &mut rng::stream(5, "x"), HallucinationMode::Mean)
            .unwrap();
        assert_eq!(a, b);
        assert!(matches!(
            gan.hallucinate(Direction::VisualToAudio, &batch(2, 10, 0), &mut r, HallucinationMode::Mean),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn zeroed_last_layer_hallucinates_zeros() {
        let mut gan = tiny(GanOptions::default(), 1);
        gan.zero_generator_outputs();
        let out = gan
            .hallucinate(Direction::AudioToVisual, &batch(4, 3, 2), &mut rng::stream(0, "z"), HallucinationMode::Stochastic)
            .unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    fn constant_half_discriminator(input: usize) -> MlpNet {
        MlpNet::from_layers(
            vec![Layer::new(Tensor2::zeros(input, 1), Tensor2::zeros(1, 1), Activation::Sigmoid).unwrap()],
            0.0,
        )
        .unwrap()
    }

    #[test]
    fn discriminator_at_half_gives_two_ln_two() {
        let mut gan = tiny(GanOptions::default(), 2);
        gan.d1 = constant_half_discriminator(5);
        let l = gan
            .discriminator_loss(Direction::AudioToVisual, &batch(4, 2, 1), &batch(4, 3, 2), &mut rng::stream(0, "d"))
            .unwrap();
        assert!((l - 2.0 * std::f64::consts::LN_2).abs() < 1e-14);
    }

    #[test]
    fn perfect_generator_at_half_gives_ln_two() {
        // g1 = identity on a 2-d source with zero noise weights
        let mut w = Tensor2::zeros(4, 2);
        w.set(0, 0, 1.0);
        w.set(1, 1, 1.0);
        let g1 = MlpNet::from_layers(vec![Layer::new(w, Tensor2::zeros(1, 2), Activation::Identity).unwrap()], 0.0).unwrap();
        let base = {
            let mut r = rng::stream(3, "gan");
            CmmGan::new(2, 2, 2, &[3], &[3], 1.0, GanOptions::default(), &mut r).unwrap()
        };
        let gan = CmmGan::from_parts(
            g1,
            base.g2.clone(),
            constant_half_discriminator(4),
            base.d2.clone(),
            2,
            2,
            2,
            1.0,
            GanOptions::default(),
        )
        .unwrap();
        let x = batch(5, 2, 9);
        let l = gan.generator_loss(Direction::AudioToVisual, &x, &x, &mut rng::stream(1, "z")).unwrap();
        assert_eq!(l.rec, 0.0);
        assert!((l.adv - std::f64::consts::LN_2).abs() < 1e-14);
        assert!((l.total - std::f64::consts::LN_2).abs() < 1e-14);
    }

    #[test]
    fn generator_step_leaves_discriminator_grads_alone_and_vice_versa() {
        let mut gan = tiny(GanOptions::default(), 4);
        let (cond, real, z) = (batch(4, 3, 1), batch(4, 2, 2), batch(4, 2, 3));
        let mut b = gan.branch_mut(Direction::AudioToVisual);
        b.generator_grads(&cond, &real, &z).unwrap();
        assert!(b.d.grads().iter().all(|g| g.weight.data().iter().all(|&v| v == 0.0)));
        assert!(b.g.grads().iter().any(|g| g.weight.data().iter().any(|&v| v != 0.0)));
        b.g.zero_grads();
        b.discriminator_grads(&real, &cond, &z).unwrap();
        assert!(b.g.grads().iter().all(|g| g.weight.data().iter().all(|&v| v == 0.0)));
        assert!(b.d.grads().iter().any(|g| g.weight.data().iter().any(|&v| v != 0.0)));
    }

    #[test]
    fn adversarial_and_reconstruction_grads_match_finite_differences() {
        for (i, options) in [
            GanOptions::default(),
            GanOptions {
                saturating_generator: true,
                ..GanOptions::default()
            },
            GanOptions {
                conditional_discriminator: false,
                ..GanOptions::default()
            },
        ]
        .into_iter()
        .enumerate()
        {
            let mut gan = tiny(options, 10 + i as u64);
            let (cond, real, z) = (batch(4, 3, 11), batch(4, 2, 12), batch(4, 2, 13));
            for dir in [Direction::AudioToVisual] {
                // generator
                let mut b = gan.branch_mut(dir);
                b.g.zero_grads();
                b.generator_grads(&cond, &real, &z).unwrap();
                let analytic = b.g.grads().to_vec();
                let d = b.d.clone();
                let (sd, td, l1) = (b.source_dim, b.target_dim, b.lambda1);
                let rep = check_params(b.g, &analytic, DEFAULT_STEP, usize::MAX, |g| {
                    Branch { g, d: &d, source_dim: sd, target_dim: td, lambda1: l1, options }
                        .generator_value(&cond, &real, &z)
                        .unwrap()
                        .total
                });
                assert!(rep.max_rel_error < 1e-4, "generator {options:?}: {rep:?}");

                // discriminator
                let mut b = gan.branch_mut(dir);
                b.d.zero_grads();
                b.discriminator_grads(&real, &cond, &z).unwrap();
                let analytic = b.d.grads().to_vec();
                let g = b.g.clone();
                let rep = check_params(b.d, &analytic, DEFAULT_STEP, usize::MAX, |d| {
                    Branch { g: &g, d, source_dim: sd, target_dim: td, lambda1: l1, options }
                        .discriminator_value(&real, &cond, &z)
                        .unwrap()
                });
                assert!(rep.max_rel_error < 1e-4, "discriminator {options:?}: {rep:?}");
            }
        }
    }

    #[test]
    fn l1_reconstruction_grads_match_finite_differences() {
        let options = GanOptions {
            reconstruction: ReconstructionNorm::L1,
            ..GanOptions::default()
        };
        let mut gan = tiny(options, 20);
        let (cond, real, z) = (batch(3, 2, 21), batch(3, 3, 22), batch(3, 2, 23));
        let mut b = gan.branch_mut(Direction::VisualToAudio);
        b.generator_grads(&cond, &real, &z).unwrap();
        let analytic = b.g.grads().to_vec();
        let d = b.d.clone();
        let (sd, td, l1) = (b.source_dim, b.target_dim, b.lambda1);
        let rep = check_params(b.g, &analytic, DEFAULT_STEP, usize::MAX, |g| {
            Branch { g, d: &d, source_dim: sd, target_dim: td, lambda1: l1, options }
                .generator_value(&cond, &real, &z)
                .unwrap()
                .total
        });
        assert!(rep.max_rel_error < 1e-4, "{rep:?}");
    }
}
