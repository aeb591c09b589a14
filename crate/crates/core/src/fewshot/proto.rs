//! Prototype arithmetic on embeddings: class means, distances, the softmax
//! over negative distances, and the two scalar losses built on it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distance {
    #[default]
    SquaredEuclidean,
    Euclidean,
}

/// `n × K` matrix of distances from each query row to each prototype row.
pub fn pairwise_distances(queries: &Tensor2, prototypes: &Tensor2, metric: Distance) -> Result<Tensor2> {
    if queries.cols() != prototypes.cols() {
        return Err(Error::dims("distance", queries.shape(), prototypes.shape()));
    }
    let mut out = Tensor2::zeros(queries.rows(), prototypes.rows());
    for i in 0..queries.rows() {
        let q = queries.row(i);
        for k in 0..prototypes.rows() {
            let sq: f64 = q.iter().zip(prototypes.row(k)).map(|(a, b)| (a - b) * (a - b)).sum();
            out.set(
                i,
                k,
                match metric {
                    Distance::SquaredEuclidean => sq,
                    Distance::Euclidean => sq.sqrt(),
                },
            );
        }
    }
    Ok(out)
}

/// Row-wise `softmax(−d)`, computed as `exp(min d − d) / Σ`.
pub fn softmax_neg(dist: &Tensor2) -> Tensor2 {
    let mut p = Tensor2::zeros(dist.rows(), dist.cols());
    for i in 0..dist.rows() {
        let row = dist.row(i);
        let lo = row.iter().copied().fold(f64::INFINITY, f64::min);
        let out = p.row_mut(i);
        let mut z = 0.0;
        for (o, &d) in out.iter_mut().zip(row) {
            *o = (lo - d).exp();
            z += *o;
        }
        out.iter_mut().for_each(|o| *o /= z);
    }
    p
}

/// Class probabilities of each query under squared-Euclidean distance.
pub fn proto_probs(prototypes: &Tensor2, query_embeddings: &Tensor2) -> Result<Tensor2> {
    proto_probs_with(prototypes, query_embeddings, Distance::SquaredEuclidean)
}

pub fn proto_probs_with(prototypes: &Tensor2, query_embeddings: &Tensor2, metric: Distance) -> Result<Tensor2> {
    Ok(softmax_neg(&pairwise_distances(query_embeddings, prototypes, metric)?))
}

/// Mean over queries of `−ln p(true slot)`.
pub fn proto_loss(probs: &Tensor2, slots: &[usize]) -> Result<f64> {
    if slots.len() != probs.rows() {
        return Err(Error::dims("proto_loss", probs.shape(), (slots.len(), 1)));
    }
    if let Some(&s) = slots.iter().find(|&&s| s >= probs.cols()) {
        return Err(Error::Episode(format!("slot {s} outside 0..{}", probs.cols())));
    }
    let n = slots.len().max(1) as f64;
    Ok(slots
        .iter()
        .enumerate()
        .map(|(i, &s)| -probs.get(i, s).max(f64::MIN_POSITIVE).ln())
        .sum::<f64>()
        / n)
}

/// Per-slot mean of `embeddings` rows.
pub fn class_means(embeddings: &Tensor2, slots: &[usize], way: usize) -> Result<Tensor2> {
    if slots.len() != embeddings.rows() {
        return Err(Error::dims("class_means", embeddings.shape(), (slots.len(), 1)));
    }
    let mut sums = Tensor2::zeros(way, embeddings.cols());
    let mut counts = vec![0usize; way];
    for (r, &s) in slots.iter().enumerate() {
        if s >= way {
            return Err(Error::Episode(format!("slot {s} outside 0..{way}")));
        }
        counts[s] += 1;
        for (acc, v) in sums.row_mut(s).iter_mut().zip(embeddings.row(r)) {
            *acc += v;
        }
    }
    if let Some(empty) = counts.iter().position(|&c| c == 0) {
        return Err(Error::Episode(format!("slot {empty} has no support rows")));
    }
    for (s, &c) in counts.iter().enumerate() {
        sums.row_mut(s).iter_mut().for_each(|v| *v /= c as f64);
    }
    Ok(sums)
}

/// Population standard deviation; exactly zero when every value is equal.
pub fn population_std(values: &[f64]) -> f64 {
    if values.windows(2).all(|w| w[0] == w[1]) {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}

/// Spread of class probabilities across stochastic passes: per query, the
/// mean over classes of the population std over passes; summed over queries.
pub fn std_penalty(passes: &[Tensor2]) -> Result<f64> {
    let Some(first) = passes.first() else {
        return Ok(0.0);
    };
    if let Some(p) = passes.iter().find(|p| p.shape() != first.shape()) {
        return Err(Error::dims("std_penalty", first.shape(), p.shape()));
    }
    let (n, k) = first.shape();
    let mut buf = vec![0.0; passes.len()];
    let mut total = 0.0;
    for i in 0..n {
        let mut per_query = 0.0;
        for c in 0..k {
            for (b, p) in buf.iter_mut().zip(passes) {
                *b = p.get(i, c);
            }
            per_query += population_std(&buf);
        }
        total += per_query / k as f64;
    }
    Ok(total)
}

/// Row-wise argmax; ties go to the lowest column.
pub fn argmax_rows(probs: &Tensor2) -> Vec<usize> {
    (0..probs.rows())
        .map(|i| {
            let row = probs.row(i);
            let mut best = 0;
            for (k, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(rows: usize, cols: usize, v: &[f64]) -> Tensor2 {
        Tensor2::from_vec(rows, cols, v.to_vec()).unwrap()
    }

    #[test]
    fn single_class_has_probability_one() {
        let p = proto_probs(&t(1, 2, &[3.0, -1.0]), &t(2, 2, &[0.0, 0.0, 5.0, 5.0])).unwrap();
        assert_eq!(p.data(), &[1.0, 1.0]);
        assert_eq!(proto_loss(&p, &[0, 0]).unwrap(), 0.0);
    }

    #[test]
    fn equidistant_query_splits_evenly() {
        let p = proto_probs(&t(2, 1, &[-1.0, 1.0]), &t(1, 1, &[0.0])).unwrap();
        assert_eq!(p.data(), &[0.5, 0.5]);
        let l = proto_loss(&p, &[1]).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn hand_softmax_in_one_dimension() {
        let p = proto_probs(&t(2, 1, &[0.0, 1.0]), &t(1, 1, &[0.0])).unwrap();
        let z = 1.0 + (-1.0f64).exp();
        assert!((p.get(0, 0) - 1.0 / z).abs() < 1e-15);
        assert!((p.get(0, 1) - (-1.0f64).exp() / z).abs() < 1e-15);
        assert!((p.get(0, 0) - 0.7311).abs() < 1e-4);
        assert!((p.get(0, 1) - 0.2689).abs() < 1e-4);
    }

    #[test]
    fn confident_correct_predictions_have_near_zero_loss() {
        let p = proto_probs(&t(2, 1, &[0.0, 100.0]), &t(2, 1, &[0.0, 100.0])).unwrap();
        assert!(proto_loss(&p, &[0, 1]).unwrap() < 1e-12);
    }

    #[test]
    fn mean_of_two_points() {
        let m = class_means(&t(2, 2, &[0.0, 0.0, 2.0, 2.0]), &[0, 0], 1).unwrap();
        assert_eq!(m.data(), &[1.0, 1.0]);
        assert!(matches!(class_means(&t(1, 2, &[0.0, 0.0]), &[0], 2), Err(Error::Episode(_))));
    }

    #[test]
    fn two_pass_std_closed_form() {
        let a = t(1, 1, &[0.4]);
        let b = t(1, 1, &[0.6]);
        assert!((std_penalty(&[a.clone(), b]).unwrap() - 0.1).abs() < 1e-15);
        assert_eq!(std_penalty(&[a.clone(), a.clone(), a]).unwrap(), 0.0);
    }

    #[test]
    fn ties_go_to_lowest_slot() {
        assert_eq!(argmax_rows(&t(2, 3, &[0.5, 0.5, 0.0, 0.2, 0.4, 0.4])), vec![0, 1]);
    }

    proptest! {
        #[test]
        fn rows_sum_to_one_and_shift_invariance(
            d in proptest::collection::vec(0.0f64..50.0, 12),
            shift in -20.0f64..20.0,
        ) {
            let dist = t(3, 4, &d);
            let p = softmax_neg(&dist);
            for i in 0..3 {
                prop_assert!((p.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
            let q = softmax_neg(&dist.map(|v| v + shift));
            for (a, b) in p.data().iter().zip(q.data()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn argmax_survives_global_scaling(
            emb in proptest::collection::vec(-3.0f64..3.0, 8),
            protos in proptest::collection::vec(-3.0f64..3.0, 6),
            c in 0.1f64..10.0,
        ) {
            let q = t(4, 2, &emb);
            let c0 = t(3, 2, &protos);
            let d = pairwise_distances(&q, &c0, Distance::SquaredEuclidean).unwrap();
            let p = proto_probs(&c0, &q).unwrap();
            let ps = proto_probs(&c0.map(|v| v * c), &q.map(|v| v * c)).unwrap();
            // only compare rows whose nearest prototype is unique
            for i in 0..4 {
                let row = d.row(i);
                let lo = row.iter().copied().fold(f64::INFINITY, f64::min);
                if row.iter().filter(|&&v| (v - lo).abs() < 1e-9).count() == 1 {
                    prop_assert_eq!(argmax_rows(&p)[i], argmax_rows(&ps)[i]);
                }
            }
        }

        #[test]
        fn std_penalty_is_non_negative(v in proptest::collection::vec(0.0f64..1.0, 18)) {
            let passes: Vec<Tensor2> = v.chunks(6).map(|c| t(2, 3, c)).collect();
            let penalty = std_penalty(&passes).unwrap();
            prop_assert!(penalty >= 0.0);
            let agree = passes.iter().all(|p| p == &passes[0]);
            prop_assert_eq!(penalty == 0.0, agree);
            let same = vec![passes[0].clone(); 3];
            prop_assert_eq!(std_penalty(&same).unwrap(), 0.0);
        }
    }
}
