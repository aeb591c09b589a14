//! Paired audio-visual feature datasets, class splits and episode sampling.

mod episode;
mod io;
mod split;
mod synth;

pub use episode::{sample_episode, Episode};
pub(crate) use episode::check_feasible;
pub use io::{
    decode_features, encode_features, load_features, read_features_csv, save_features,
    write_features_csv, FEATURE_MAGIC, FEATURE_VERSION,
};
pub use split::{split_classes, SplitSpec};
pub use synth::{generate_synthetic, SynthSpec};

use crate::error::{Error, Result};
use crate::numerics::Tensor2;

/// One labelled example: an audio and a visual feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSample {
    pub audio: Vec<f64>,
    pub visual: Vec<f64>,
    pub label: usize,
}

/// Immutable collection of [`PairedSample`]s with dense labels `0..class_count`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    audio_dim: usize,
    visual_dim: usize,
    class_names: Vec<String>,
    samples: Vec<PairedSample>,
    by_class: Vec<Vec<usize>>,
}

impl Dataset {
    pub fn new(
        audio_dim: usize,
        visual_dim: usize,
        class_names: Vec<String>,
        samples: Vec<PairedSample>,
    ) -> Result<Self> {
        let mut by_class = vec![Vec::new(); class_names.len()];
        for (i, s) in samples.iter().enumerate() {
            if s.audio.len() != audio_dim {
                return Err(Error::dims("sample audio", (1, audio_dim), (1, s.audio.len())));
            }
            if s.visual.len() != visual_dim {
                return Err(Error::dims("sample visual", (1, visual_dim), (1, s.visual.len())));
            }
            let slot = by_class.get_mut(s.label).ok_or_else(|| {
                Error::config(
                    format!("samples[{i}].label"),
                    format!("label {} outside 0..{}", s.label, class_names.len()),
                )
            })?;
            slot.push(i);
        }
        Ok(Self {
            audio_dim,
            visual_dim,
            class_names,
            samples,
            by_class,
        })
    }

    pub fn audio_dim(&self) -> usize {
        self.audio_dim
    }

    pub fn visual_dim(&self) -> usize {
        self.visual_dim
    }

    pub fn class_count(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn samples(&self) -> &[PairedSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Indices of the samples labelled `class`.
    pub fn indices_of(&self, class: usize) -> &[usize] {
        &self.by_class[class]
    }

    /// Indices of every sample whose label is in `classes`, in dataset order.
    pub fn indices_in(&self, classes: &[usize]) -> Vec<usize> {
        let mut idx: Vec<usize> = classes
            .iter()
            .flat_map(|&c| self.by_class.get(c).into_iter().flatten().copied())
            .collect();
        idx.sort_unstable();
        idx
    }

    pub fn audio_rows(&self, idx: &[usize]) -> Tensor2 {
        let mut t = Tensor2::zeros(idx.len(), self.audio_dim);
        for (r, &i) in idx.iter().enumerate() {
            t.row_mut(r).copy_from_slice(&self.samples[i].audio);
        }
        t
    }

    pub fn visual_rows(&self, idx: &[usize]) -> Tensor2 {
        let mut t = Tensor2::zeros(idx.len(), self.visual_dim);
        for (r, &i) in idx.iter().enumerate() {
            t.row_mut(r).copy_from_slice(&self.samples[i].visual);
        }
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_inconsistent_samples() {
        let ok = PairedSample {
            audio: vec![0.0; 2],
            visual: vec![0.0; 3],
            label: 0,
        };
        let bad_dim = PairedSample {
            audio: vec![0.0; 3],
            ..ok.clone()
        };
        let bad_label = PairedSample { label: 5, ..ok.clone() };
        let names = vec!["a".to_string(), "b".to_string()];
        assert!(Dataset::new(2, 3, names.clone(), vec![ok.clone()]).is_ok());
        assert!(Dataset::new(2, 3, names.clone(), vec![ok.clone(), bad_dim]).is_err());
        assert!(Dataset::new(2, 3, names, vec![ok, bad_label]).is_err());
    }
}
