use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};

/// A K-way m-shot task. Support and query entries are
/// `(sample index, episode-local class slot)`, grouped by slot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Episode {
    pub way: usize,
    pub shot: usize,
    pub query_per_class: usize,
    /// `classes[slot]` is the dataset class behind that slot.
    pub classes: Vec<usize>,
    pub support: Vec<(usize, usize)>,
    pub query: Vec<(usize, usize)>,
}

impl Episode {
    pub fn support_indices(&self) -> Vec<usize> {
        self.support.iter().map(|&(i, _)| i).collect()
    }

    pub fn query_indices(&self) -> Vec<usize> {
        self.query.iter().map(|&(i, _)| i).collect()
    }

    pub fn support_slots(&self) -> Vec<usize> {
        self.support.iter().map(|&(_, s)| s).collect()
    }

    pub fn query_slots(&self) -> Vec<usize> {
        self.query.iter().map(|&(_, s)| s).collect()
    }
}

/// Checks that every class in `classes` can serve a `way`-way task with
/// `shot + query_per_class` samples per class.
pub(crate) fn check_feasible(
    dataset: &Dataset,
    classes: &[usize],
    way: usize,
    shot: usize,
    query_per_class: usize,
) -> Result<()> {
    if way == 0 || shot == 0 || query_per_class == 0 {
        return Err(Error::Sampling(format!(
            "way, shot and query_per_class must be positive (got {way}, {shot}, {query_per_class})"
        )));
    }
    if classes.len() < way {
        return Err(Error::Sampling(format!(
            "{way}-way episode needs {way} classes, only {} available",
            classes.len()
        )));
    }
    let need = shot + query_per_class;
    for &c in classes {
        if c >= dataset.class_count() {
            return Err(Error::Sampling(format!("class {c} not in dataset")));
        }
        let have = dataset.indices_of(c).len();
        if have < need {
            return Err(Error::Sampling(format!(
                "class {c} ({}) has {have} samples, episode needs {need}",
                dataset.class_names()[c]
            )));
        }
    }
    Ok(())
}

/// Samples an episode: `way` distinct classes uniformly from `classes`,
/// then `shot + query_per_class` distinct samples per class.
pub fn sample_episode<R: Rng + ?Sized>(
    dataset: &Dataset,
    classes: &[usize],
    way: usize,
    shot: usize,
    query_per_class: usize,
    rng: &mut R,
) -> Result<Episode> {
    check_feasible(dataset, classes, way, shot, query_per_class)?;
    let chosen: Vec<usize> = index::sample(rng, classes.len(), way)
        .into_iter()
        .map(|i| classes[i])
        .collect();
    let mut support = Vec::with_capacity(way * shot);
    let mut query = Vec::with_capacity(way * query_per_class);
    for (slot, &c) in chosen.iter().enumerate() {
        let pool = dataset.indices_of(c);
        let picks = index::sample(rng, pool.len(), shot + query_per_class);
        for (n, p) in picks.into_iter().enumerate() {
            if n < shot {
                support.push((pool[p], slot));
            } else {
                query.push((pool[p], slot));
            }
        }
    }
    Ok(Episode {
        way,
        shot,
        query_per_class,
        classes: chosen,
        support,
        query,
    })
}

#[cfg(test)]
mod tests {
    use std::collections::HashSet;

    use proptest::prelude::*;

    use super::*;
    use crate::data::PairedSample;
    use crate::rng;

    fn ds(per_class: &[usize]) -> Dataset {
        let mut samples = Vec::new();
        for (label, &n) in per_class.iter().enumerate() {
            for _ in 0..n {
                samples.push(PairedSample {
                    audio: vec![samples.len() as f64],
                    visual: vec![0.0],
                    label,
                });
            }
        }
        let names = (0..per_class.len()).map(|c| format!("c{c}")).collect();
        Dataset::new(1, 1, names, samples).unwrap()
    }

    fn check_invariants(d: &Dataset, e: &Episode) {
        let classes: HashSet<_> = e.classes.iter().collect();
        assert_eq!(classes.len(), e.way);
        for slot in 0..e.way {
            assert_eq!(e.support.iter().filter(|s| s.1 == slot).count(), e.shot);
            assert_eq!(e.query.iter().filter(|q| q.1 == slot).count(), e.query_per_class);
        }
        for &(i, slot) in e.support.iter().chain(&e.query) {
            assert_eq!(d.samples()[i].label, e.classes[slot]);
        }
        let s: HashSet<_> = e.support_indices().into_iter().collect();
        let q: HashSet<_> = e.query_indices().into_iter().collect();
        assert_eq!(s.len(), e.support.len());
        assert_eq!(q.len(), e.query.len());
        assert!(s.is_disjoint(&q));
    }

    #[test]
    fn five_way_one_shot_sizes() {
        let d = ds(&[10; 8]);
        let classes: Vec<usize> = (0..8).collect();
        let e = sample_episode(&d, &classes, 5, 1, 5, &mut rng::stream(0, "ep")).unwrap();
        assert_eq!((e.support.len(), e.query.len()), (5, 25));
        check_invariants(&d, &e);
    }

    #[test]
    fn exact_fit_class_is_exhausted_disjointly() {
        let d = ds(&[4, 4]);
        let e = sample_episode(&d, &[0, 1], 2, 1, 3, &mut rng::stream(1, "ep")).unwrap();
        let all: HashSet<_> = e.support_indices().into_iter().chain(e.query_indices()).collect();
        assert_eq!(all.len(), 8);
        check_invariants(&d, &e);
    }

    #[test]
    fn deficient_class_is_named() {
        let d = ds(&[6, 6, 2]);
        let err = sample_episode(&d, &[0, 1, 2], 2, 1, 2, &mut rng::stream(2, "ep")).unwrap_err();
        assert!(err.to_string().contains("class 2"), "{err}");
        let err = sample_episode(&d, &[0, 1], 3, 1, 1, &mut rng::stream(2, "ep")).unwrap_err();
        assert!(matches!(err, Error::Sampling(_)));
    }

    #[test]
    fn class_frequencies_are_uniform() {
        let d = ds(&[8; 10]);
        let classes: Vec<usize> = (0..10).collect();
        let mut hits = [0usize; 10];
        let n = 10_000;
        for i in 0..n {
            let e = sample_episode(&d, &classes, 5, 1, 1, &mut rng::indexed(3, "freq", i)).unwrap();
            for &c in &e.classes {
                hits[c] += 1;
            }
        }
        for h in hits {
            let f = h as f64 / n as f64;
            assert!((f - 0.5).abs() <= 0.03, "frequency {f}");
        }
    }

    #[test]
    fn disjointness_over_many_calls() {
        let d = ds(&[7, 9, 12, 8, 8]);
        let classes: Vec<usize> = (0..5).collect();
        let mut r = rng::stream(4, "fuzz");
        for i in 0..100_000u64 {
            let way = 1 + (i % 5) as usize;
            let shot = 1 + (i % 3) as usize;
            let query = 1 + (i % 4) as usize;
            let e = sample_episode(&d, &classes, way, shot, query, &mut r).unwrap();
            let s: HashSet<_> = e.support_indices().into_iter().collect();
            assert!(e.query_indices().iter().all(|q| !s.contains(q)));
        }
    }

    proptest! {
        #[test]
        fn sampling_is_pure_and_valid(seed in any::<u64>(), way in 1usize..6, shot in 1usize..4, query in 1usize..4) {
            let d = ds(&[8, 9, 10, 11, 12, 13]);
            let classes: Vec<usize> = (0..6).collect();
            let a = sample_episode(&d, &classes, way, shot, query, &mut rng::stream(seed, "p")).unwrap();
            let b = sample_episode(&d, &classes, way, shot, query, &mut rng::stream(seed, "p")).unwrap();
            prop_assert_eq!(&a, &b);
            check_invariants(&d, &a);
        }
    }
}
