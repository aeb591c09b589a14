//! Shared-latent synthetic benchmark.
//!
//! Each class `k` has a centroid `μ_k` in a low-dimensional latent space.
//! A sample draws three within-class deviations `ε_s, ε_a, ε_v` and forms
//!
//! ```text
//! latent_a = μ_k + ρ·ε_s + √(1−ρ²)·ε_a
//! latent_v = μ_k + ρ·ε_s + √(1−ρ²)·ε_v
//! audio    = latent_a · P_A + noise
//! visual   = latent_v · P_V + noise
//! ```
//!
//! with fixed random projections `P_A`, `P_V`. At `ρ = 1` both modalities are
//! linear images of one latent; at `ρ = 0` they only share the class centroid.
//!
//! `feature_offset` adds a constant to every coordinate of both modalities,
//! so that an all-zero block lies away from the data, as it does for
//! non-negative encoder outputs.

use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Dataset, PairedSample};
use crate::error::{Error, Result};
use crate::rng::{self, RngStream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub class_count: usize,
    pub latent_dim: usize,
    pub samples_per_class: usize,
    /// `ρ` in `[0, 1]`.
    pub cross_modal_coupling: f64,
    pub noise_sigma: f64,
    pub seed: u64,
    pub audio_dim: usize,
    pub visual_dim: usize,
    /// Standard deviation of class centroids in latent space.
    pub centroid_scale: f64,
    /// Standard deviation of each within-class latent deviation.
    pub within_class_sigma: f64,
    pub feature_offset: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            class_count: 13,
            latent_dim: 16,
            samples_per_class: 100,
            cross_modal_coupling: 0.9,
            noise_sigma: 0.1,
            seed: 0,
            audio_dim: 1024,
            visual_dim: 1024,
            centroid_scale: 1.0,
            within_class_sigma: 1.0,
            feature_offset: 0.0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |f: &str, m: String| Err(Error::config(f, m));
        if self.class_count < 2 {
            return bad("class_count", format!("need at least 2, got {}", self.class_count));
        }
        if self.samples_per_class < 2 {
            return bad(
                "samples_per_class",
                format!("need at least 2, got {}", self.samples_per_class),
            );
        }
        for (f, v) in [
            ("latent_dim", self.latent_dim),
            ("audio_dim", self.audio_dim),
            ("visual_dim", self.visual_dim),
        ] {
            if v == 0 {
                return bad(f, "must be positive".into());
            }
        }
        if !(0.0..=1.0).contains(&self.cross_modal_coupling) {
            return bad(
                "cross_modal_coupling",
                format!("must be in [0, 1], got {}", self.cross_modal_coupling),
            );
        }
        for (f, v) in [
            ("noise_sigma", self.noise_sigma),
            ("centroid_scale", self.centroid_scale),
            ("within_class_sigma", self.within_class_sigma),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(f, format!("must be finite and non-negative, got {v}"));
            }
        }
        if !self.feature_offset.is_finite() {
            return bad("feature_offset", format!("must be finite, got {}", self.feature_offset));
        }
        Ok(())
    }
}

/// Generates the benchmark described in the module docs. Pure function of `spec`.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<Dataset> {
    spec.validate()?;
    let l = spec.latent_dim;
    let mut proj_rng = rng::stream(spec.seed, "synth/projections");
    let proj_scale = 1.0 / (l as f64).sqrt();
    let p_audio = gaussian(&mut proj_rng, l * spec.audio_dim, proj_scale);
    let p_visual = gaussian(&mut proj_rng, l * spec.visual_dim, proj_scale);

    let mut centroid_rng = rng::stream(spec.seed, "synth/centroids");
    let centroids: Vec<Vec<f64>> = (0..spec.class_count)
        .map(|_| gaussian(&mut centroid_rng, l, spec.centroid_scale))
        .collect();

    let rho = spec.cross_modal_coupling;
    let private = (1.0 - rho * rho).max(0.0).sqrt();
    let mut sample_rng = rng::stream(spec.seed, "synth/samples");
    let mut samples = Vec::with_capacity(spec.class_count * spec.samples_per_class);
    let mut lat_a = vec![0.0; l];
    let mut lat_v = vec![0.0; l];
    for (label, mu) in centroids.iter().enumerate() {
        for _ in 0..spec.samples_per_class {
            let shared = gaussian(&mut sample_rng, l, spec.within_class_sigma);
            let own_a = gaussian(&mut sample_rng, l, spec.within_class_sigma);
            let own_v = gaussian(&mut sample_rng, l, spec.within_class_sigma);
            for j in 0..l {
                lat_a[j] = mu[j] + rho * shared[j] + private * own_a[j];
                lat_v[j] = mu[j] + rho * shared[j] + private * own_v[j];
            }
            let mut audio = project(&lat_a, &p_audio, spec.audio_dim, spec.noise_sigma, &mut sample_rng);
            let mut visual = project(&lat_v, &p_visual, spec.visual_dim, spec.noise_sigma, &mut sample_rng);
            if spec.feature_offset != 0.0 {
                audio.iter_mut().chain(visual.iter_mut()).for_each(|x| *x += spec.feature_offset);
            }
            samples.push(PairedSample {
                audio,
                visual,
                label,
            });
        }
    }
    let width = (spec.class_count - 1).to_string().len();
    let names = (0..spec.class_count)
        .map(|k| format!("class_{k:0width$}"))
        .collect();
    Dataset::new(spec.audio_dim, spec.visual_dim, names, samples)
}

fn gaussian(rng: &mut RngStream, n: usize, sigma: f64) -> Vec<f64> {
    (0..n)
        .map(|_| sigma * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
        .collect()
}

/// `latent · P + N(0, σ²)`, `P` row-major `latent × out`.
fn project(latent: &[f64], p: &[f64], out: usize, sigma: f64, rng: &mut RngStream) -> Vec<f64> {
    let mut y = vec![0.0; out];
    for (j, &z) in latent.iter().enumerate() {
        let row = &p[j * out..(j + 1) * out];
        for (yi, pi) in y.iter_mut().zip(row) {
            *yi += z * pi;
        }
    }
    if sigma > 0.0 {
        let noise = Normal::new(0.0, sigma).expect("validated sigma");
        for yi in &mut y {
            *yi += noise.sample(rng);
        }
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(rho: f64, noise: f64, n: usize) -> SynthSpec {
        SynthSpec {
            class_count: 2,
            latent_dim: 4,
            samples_per_class: n,
            cross_modal_coupling: rho,
            noise_sigma: noise,
            seed: 3,
            audio_dim: 4,
            visual_dim: 5,
            ..SynthSpec::default()
        }
    }

    /// Solves `A x = b` for symmetric positive definite `A` by Gaussian elimination.
    fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
        let n = a.len();
        for i in 0..n {
            let piv = (i..n).max_by(|&x, &y| a[x][i].abs().total_cmp(&a[y][i].abs())).unwrap();
            a.swap(i, piv);
            b.swap(i, piv);
            for r in i + 1..n {
                let f = a[r][i] / a[i][i];
                for c in i..n {
                    a[r][c] -= f * a[i][c];
                }
                for c in 0..b[r].len() {
                    b[r][c] -= f * b[i][c];
                }
            }
        }
        for i in (0..n).rev() {
            for c in 0..b[i].len() {
                let mut s = b[i][c];
                for k in i + 1..n {
                    s -= a[i][k] * b[k][c];
                }
                b[i][c] = s / a[i][i];
            }
        }
        b
    }

    /// In-sample R² of ridge regression (with intercept) predicting visual from audio.
    fn ridge_r2(ds: &Dataset, lambda: f64) -> f64 {
        let xs: Vec<Vec<f64>> = ds
            .samples()
            .iter()
            .map(|s| s.audio.iter().copied().chain([1.0]).collect())
            .collect();
        let ys: Vec<&Vec<f64>> = ds.samples().iter().map(|s| &s.visual).collect();
        let p = xs[0].len();
        let q = ys[0].len();
        let mut xtx = vec![vec![0.0; p]; p];
        let mut xty = vec![vec![0.0; q]; p];
        for (x, y) in xs.iter().zip(&ys) {
            for i in 0..p {
                for j in 0..p {
                    xtx[i][j] += x[i] * x[j];
                }
                for j in 0..q {
                    xty[i][j] += x[i] * y[j];
                }
            }
        }
        for (i, row) in xtx.iter_mut().enumerate().take(p - 1) {
            row[i] += lambda;
        }
        let beta = solve(xtx, xty);
        let n = ys.len() as f64;
        let (mut ss_res, mut ss_tot) = (0.0, 0.0);
        for j in 0..q {
            let mean = ys.iter().map(|y| y[j]).sum::<f64>() / n;
            for (x, y) in xs.iter().zip(&ys) {
                let pred: f64 = (0..p).map(|i| x[i] * beta[i][j]).sum();
                ss_res += (y[j] - pred).powi(2);
                ss_tot += (y[j] - mean).powi(2);
            }
        }
        1.0 - ss_res / ss_tot
    }

    #[test]
    fn full_coupling_without_noise_is_exactly_linear() {
        let ds = generate_synthetic(&small(1.0, 0.0, 50)).unwrap();
        // square P_A, so visual = audio · P_A⁻¹ P_V exactly
        let r2 = ridge_r2(&ds, 0.0);
        assert!(1.0 - r2 < 1e-12, "1 - R² = {}", 1.0 - r2);
    }

    #[test]
    fn same_seed_same_dataset() {
        let s = small(0.5, 0.1, 10);
        assert_eq!(generate_synthetic(&s).unwrap(), generate_synthetic(&s).unwrap());
        let other = SynthSpec { seed: 4, ..s.clone() };
        assert_ne!(generate_synthetic(&s).unwrap(), generate_synthetic(&other).unwrap());
    }

    #[test]
    fn zero_coupling_decorrelates_within_class() {
        let spec = SynthSpec {
            class_count: 2,
            samples_per_class: 600,
            ..small(0.0, 0.1, 600)
        };
        let ds = generate_synthetic(&spec).unwrap();
        let idx = ds.indices_of(0);
        let n = idx.len() as f64;
        let col = |f: &dyn Fn(&PairedSample) -> f64| -> Vec<f64> {
            idx.iter().map(|&i| f(&ds.samples()[i])).collect()
        };
        let pearson = |a: &[f64], b: &[f64]| {
            let ma = a.iter().sum::<f64>() / n;
            let mb = b.iter().sum::<f64>() / n;
            let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
            let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
            let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
            cov / (va * vb).sqrt()
        };
        let mut total = 0.0;
        let mut count = 0.0;
        for i in 0..ds.audio_dim() {
            let a = col(&|s| s.audio[i]);
            for j in 0..ds.visual_dim() {
                let v = col(&|s| s.visual[j]);
                total += pearson(&a, &v).abs();
                count += 1.0;
            }
        }
        assert!(total / count < 0.1, "mean |r| = {}", total / count);
    }

    #[test]
    fn coupling_increases_predictability() {
        let r2: Vec<f64> = [0.0, 0.5, 1.0]
            .iter()
            .map(|&rho| {
                let spec = SynthSpec {
                    class_count: 5,
                    samples_per_class: 200,
                    audio_dim: 8,
                    visual_dim: 8,
                    ..small(rho, 0.1, 200)
                };
                ridge_r2(&generate_synthetic(&spec).unwrap(), 1e-3)
            })
            .collect();
        assert!(r2[0] < r2[1] && r2[1] < r2[2], "{r2:?}");
    }

    #[test]
    fn offset_shifts_every_coordinate_and_nothing_else() {
        let base = small(0.7, 0.1, 5);
        let a = generate_synthetic(&base).unwrap();
        let b = generate_synthetic(&SynthSpec { feature_offset: 2.5, ..base }).unwrap();
        for (x, y) in a.samples().iter().zip(b.samples()) {
            assert_eq!(x.label, y.label);
            for (p, q) in x.audio.iter().chain(&x.visual).zip(y.audio.iter().chain(&y.visual)) {
                assert!((q - p - 2.5).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn invalid_specs_name_the_field() {
        let err = generate_synthetic(&SynthSpec {
            class_count: 1,
            ..SynthSpec::default()
        })
        .unwrap_err();
        assert!(err.to_string().contains("class_count"));
        let err = generate_synthetic(&SynthSpec {
            cross_modal_coupling: 1.5,
            ..SynthSpec::default()
        })
        .unwrap_err();
        assert!(err.to_string().contains("cross_modal_coupling"));
    }
}
