use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::rng;

/// Disjoint base (training) and novel (test) class sets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub base_classes: Vec<usize>,
    pub novel_classes: Vec<usize>,
}

impl SplitSpec {
    /// Checks disjointness and coverage of `0..class_count`.
    pub fn validate(&self, class_count: usize) -> Result<()> {
        let mut seen = vec![false; class_count];
        for &c in self.base_classes.iter().chain(&self.novel_classes) {
            match seen.get_mut(c) {
                None => {
                    return Err(Error::config(
                        "split",
                        format!("class {c} outside 0..{class_count}"),
                    ))
                }
                Some(true) => {
                    return Err(Error::config("split", format!("class {c} listed twice")))
                }
                Some(s) => *s = true,
            }
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::config("split", format!("class {missing} unassigned")));
        }
        Ok(())
    }
}

/// Randomly assigns `novel_count` classes to the novel set, the rest to base.
pub fn split_classes(dataset: &Dataset, novel_count: usize, seed: u64) -> Result<SplitSpec> {
    let n = dataset.class_count();
    if novel_count == 0 || novel_count >= n {
        return Err(Error::config(
            "split.novel_count",
            format!("must be in 1..{n}, got {novel_count}"),
        ));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, "split"));
    let mut novel = order[..novel_count].to_vec();
    let mut base = order[novel_count..].to_vec();
    novel.sort_unstable();
    base.sort_unstable();
    Ok(SplitSpec {
        base_classes: base,
        novel_classes: novel,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::PairedSample;

    fn ds(classes: usize) -> Dataset {
        let samples = (0..classes)
            .map(|label| PairedSample {
                audio: vec![0.0],
                visual: vec![0.0],
                label,
            })
            .collect();
        let names = (0..classes).map(|c| c.to_string()).collect();
        Dataset::new(1, 1, names, samples).unwrap()
    }

    #[test]
    fn advance_and_audioset_sized_splits() {
        let s = split_classes(&ds(13), 5, 1).unwrap();
        assert_eq!((s.base_classes.len(), s.novel_classes.len()), (8, 5));
        s.validate(13).unwrap();
        let s = split_classes(&ds(33), 10, 1).unwrap();
        assert_eq!(s.base_classes.len(), 23);
        s.validate(33).unwrap();
    }

    #[test]
    fn empty_base_or_novel_is_rejected() {
        assert!(matches!(split_classes(&ds(5), 5, 0), Err(Error::Config { .. })));
        assert!(matches!(split_classes(&ds(5), 0, 0), Err(Error::Config { .. })));
    }

    #[test]
    fn deterministic_in_seed() {
        let d = ds(20);
        assert_eq!(split_classes(&d, 6, 9).unwrap(), split_classes(&d, 6, 9).unwrap());
        assert_ne!(split_classes(&d, 6, 9).unwrap(), split_classes(&d, 6, 10).unwrap());
    }
}
