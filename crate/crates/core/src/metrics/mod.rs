//! Top-k accuracy, mean average precision and report assembly.

mod report;

use crate::error::{Error, Result};

pub use report::{
    assemble_report, parse_curves_csv, render_svg, write_curves_csv, CurvePoint, MetricRow, MetricsReport,
    MetricsSnapshot, ModelKind,
};

/// Accuracy, top-5 accuracy and mAP of one model on one split.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MetricValues {
    pub acc1: f64,
    pub acc5: f64,
    pub map: f64,
    pub count: usize,
}

/// Whether `label` is among the `k` best classes of `row`. A class ranks
/// above another when its score is larger, or equal with a lower index.
fn in_top_k(row: &[f64], label: usize, k: usize) -> bool {
    let s = row[label];
    let ahead = row
        .iter()
        .enumerate()
        .filter(|&(c, &v)| v > s || (v == s && c < label))
        .count();
    ahead < k
}

fn check_labels<R: AsRef<[f64]>>(rows: &[R], labels: &[usize]) -> Result<usize> {
    if rows.is_empty() {
        return Err(Error::UndefinedMetric("no samples".into()));
    }
    if rows.len() != labels.len() {
        return Err(Error::Shape {
            op: "metric labels",
            left: (rows.len(), 0),
            right: (labels.len(), 0),
        });
    }
    let classes = rows[0].as_ref().len();
    for (r, &y) in rows.iter().zip(labels) {
        if r.as_ref().len() != classes {
            return Err(Error::Shape {
                op: "metric rows",
                left: (1, r.as_ref().len()),
                right: (1, classes),
            });
        }
        if y >= classes {
            return Err(Error::Label { label: y, classes });
        }
    }
    Ok(classes)
}

pub fn topk_accuracy<R: AsRef<[f64]>>(rows: &[R], labels: &[usize], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    check_labels(rows, labels)?;
    let hits = rows.iter().zip(labels).filter(|(r, &y)| in_top_k(r.as_ref(), y, k)).count();
    Ok(hits as f64 / rows.len() as f64)
}

/// Non-interpolated AP per class (precision averaged over the ranks of the
/// positives), averaged over classes that have at least one positive.
pub fn mean_average_precision<R: AsRef<[f64]>>(scores: &[R], labels: &[usize]) -> Result<f64> {
    let classes = check_labels(scores, labels)?;
    let mut total = 0.0;
    let mut used = 0;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    for c in 0..classes {
        let positives = labels.iter().filter(|&&y| y == c).count();
        if positives == 0 {
            continue;
        }
        order.sort_by(|&a, &b| {
            scores[b].as_ref()[c]
                .total_cmp(&scores[a].as_ref()[c])
                .then(a.cmp(&b))
        });
        let mut hits = 0;
        let mut sum = 0.0;
        for (rank, &i) in order.iter().enumerate() {
            if labels[i] == c {
                hits += 1;
                sum += hits as f64 / (rank + 1) as f64;
            }
        }
        total += sum / positives as f64;
        used += 1;
    }
    if used == 0 {
        return Err(Error::UndefinedMetric("no class has positives".into()));
    }
    Ok(total / used as f64)
}

/// All three metrics for one set of score rows.
pub fn evaluate<R: AsRef<[f64]>>(rows: &[R], labels: &[usize]) -> Result<MetricValues> {
    Ok(MetricValues {
        acc1: topk_accuracy(rows, labels, 1)?,
        acc5: topk_accuracy(rows, labels, 5)?,
        map: mean_average_precision(rows, labels)?,
        count: rows.len(),
    })
}

#[cfg(test)]
pub(crate) mod oracle {
    /// Quadratic-time AP: precision at each positive counted by comparing it
    /// against every other sample directly.
    pub fn map_bruteforce(scores: &[Vec<f64>], labels: &[usize]) -> f64 {
        let classes = scores[0].len();
        let n = scores.len();
        let mut total = 0.0;
        let mut used = 0;
        for c in 0..classes {
            let pos: Vec<usize> = (0..n).filter(|&i| labels[i] == c).collect();
            if pos.is_empty() {
                continue;
            }
            let before = |a: usize, b: usize| scores[a][c] > scores[b][c] || (scores[a][c] == scores[b][c] && a < b);
            let mut terms: Vec<(usize, usize)> = pos
                .iter()
                .map(|&p| {
                    let rank = 1 + (0..n).filter(|&j| j != p && before(j, p)).count();
                    let hits = 1 + pos.iter().filter(|&&q| q != p && before(q, p)).count();
                    (rank, hits)
                })
                .collect();
            // Summed best rank first so the floating-point result is
            // comparable bit for bit.
            terms.sort();
            let ap: f64 = terms.iter().map(|&(rank, hits)| hits as f64 / rank as f64).sum();
            total += ap / pos.len() as f64;
            used += 1;
        }
        total / used as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn topk_examples() {
        let rows = vec![vec![3.0, 1.0, 2.0], vec![0.0, 5.0, 1.0]];
        assert_eq!(topk_accuracy(&rows, &[2, 0], 2).unwrap(), 0.5);
        assert_eq!(topk_accuracy(&rows, &[2, 0], 3).unwrap(), 1.0);
        assert_eq!(topk_accuracy(&rows, &[2, 0], 7).unwrap(), 1.0);
        assert_eq!(topk_accuracy(&[[0.1, 0.9]], &[1], 1).unwrap(), 1.0);
        // A tie goes to the lower index.
        assert_eq!(topk_accuracy(&[[1.0, 1.0]], &[1], 1).unwrap(), 0.0);
        assert_eq!(topk_accuracy(&[[1.0, 1.0]], &[0], 1).unwrap(), 1.0);
        let empty: Vec<Vec<f64>> = vec![];
        assert!(matches!(topk_accuracy(&empty, &[], 1), Err(Error::UndefinedMetric(_))));
        assert!(topk_accuracy(&rows, &[3, 0], 1).is_err());
    }

    #[test]
    fn map_examples() {
        // Scores for one class, ranked pos, neg, pos; the other class fills
        // out the label space.
        let scores = vec![vec![0.9, 0.0], vec![0.8, 1.0], vec![0.7, 0.0]];
        let ap0 = (1.0 + 2.0 / 3.0) / 2.0;
        assert_abs_diff_eq!(ap0, 0.833333, epsilon = 1e-6);
        let m = mean_average_precision(&scores, &[0, 1, 0]).unwrap();
        assert_abs_diff_eq!(m, (ap0 + 1.0) / 2.0, epsilon = 1e-15);

        let perfect = vec![vec![2.0, 0.0], vec![1.0, 0.5], vec![0.0, 3.0]];
        assert_eq!(mean_average_precision(&perfect, &[0, 0, 1]).unwrap(), 1.0);
    }

    #[test]
    fn map_matches_oracle_on_random_problems() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let scores: Vec<Vec<f64>> =
                (0..20).map(|_| (0..3).map(|_| (rng.random_range(0..8) as f64) / 4.0).collect()).collect();
            let labels: Vec<usize> = (0..20).map(|_| rng.random_range(0..3)).collect();
            assert_eq!(
                mean_average_precision(&scores, &labels).unwrap(),
                oracle::map_bruteforce(&scores, &labels)
            );
        }
    }

    proptest! {
        #[test]
        fn metric_invariances(
            rows in prop::collection::vec(prop::collection::vec(-4.0f64..4.0, 4), 1..30),
            seed in 0usize..1000,
            shift in -10.0f64..10.0,
            scale in 0.1f64..5.0,
        ) {
            let labels: Vec<usize> = (0..rows.len()).map(|i| (i * 7 + seed) % 4).collect();
            let shifted: Vec<Vec<f64>> = rows.iter().enumerate()
                .map(|(i, r)| r.iter().map(|v| v + shift * i as f64).collect()).collect();
            for k in 1..=4 {
                prop_assert_eq!(topk_accuracy(&rows, &labels, k).unwrap(), topk_accuracy(&shifted, &labels, k).unwrap());
            }
            let a1 = topk_accuracy(&rows, &labels, 1).unwrap();
            let a5 = topk_accuracy(&rows, &labels, 5).unwrap();
            prop_assert!(a1 <= a5);
            let monotone: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|v| (scale * v).exp() + 1.0).collect()).collect();
            prop_assert_eq!(mean_average_precision(&rows, &labels).unwrap(), mean_average_precision(&monotone, &labels).unwrap());
        }
    }
}
