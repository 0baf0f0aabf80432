use crate::error::{Error, Result};
use crate::math::{lbfgs, log_softmax, LbfgsSettings, Linear, Tensor2};
use crate::metrics::{evaluate, topk_accuracy, MetricValues};
use crate::store::{EmbeddingStore, SampleRecord, Split};

#[derive(Clone, Debug, PartialEq)]
pub struct FitReport {
    pub iterations: usize,
    pub grad_norm: f64,
    pub converged: bool,
}

/// Multinomial logistic regression by full-batch L-BFGS on the mean
/// cross-entropy, starting from zero weights.
pub fn fit_linear(
    name: &str,
    x: &Tensor2,
    labels: &[usize],
    classes: usize,
    settings: &LbfgsSettings,
) -> Result<(Linear, FitReport)> {
    let (n, d) = x.shape();
    if n == 0 {
        return Err(Error::Config(format!("`{name}`: no training samples")));
    }
    if labels.len() != n {
        return Err(Error::Shape {
            op: "fit labels",
            left: (n, d),
            right: (labels.len(), 1),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
        return Err(Error::Label { label: bad, classes });
    }
    let nw = d * classes;
    let objective = |theta: &[f64], grad: &mut [f64]| -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let (w, b) = theta.split_at(nw);
        let mut loss = 0.0;
        let mut z = vec![0.0; classes];
        for (r, &y) in labels.iter().enumerate() {
            let row = x.row(r);
            z.copy_from_slice(b);
            for (k, &xk) in row.iter().enumerate() {
                if xk != 0.0 {
                    for (zc, wc) in z.iter_mut().zip(&w[k * classes..(k + 1) * classes]) {
                        *zc += xk * wc;
                    }
                }
            }
            let ls = log_softmax(&z, 1.0);
            loss -= ls[y];
            let (gw, gb) = grad.split_at_mut(nw);
            for c in 0..classes {
                let delta = ls[c].exp() - if c == y { 1.0 } else { 0.0 };
                gb[c] += delta;
                for (k, &xk) in row.iter().enumerate() {
                    gw[k * classes + c] += xk * delta;
                }
            }
        }
        let inv = 1.0 / n as f64;
        grad.iter_mut().for_each(|g| *g *= inv);
        loss * inv
    };
    let out = lbfgs(objective, vec![0.0; nw + classes], settings);
    let (w, b) = out.x.split_at(nw);
    let head = Linear::from_values(
        name,
        Tensor2::from_vec(d, classes, w.to_vec())?,
        Tensor2::from_vec(1, classes, b.to_vec())?,
    )?;
    Ok((
        head,
        FitReport {
            iterations: out.iterations,
            grad_norm: out.grad_norm,
            converged: out.converged,
        },
    ))
}

/// Which features a reference classifier reads.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum OracleInput {
    OwnSegment,
    Concatenation,
    /// The listed segments, concatenated in order.
    Segments(Vec<usize>),
}

fn design(store: &EmbeddingStore, records: &[SampleRecord], segments: &[usize]) -> Result<Tensor2> {
    let width: usize = segments.iter().map(|&s| store.segment_dims()[s]).sum();
    let mut data = Vec::with_capacity(records.len() * width);
    for r in records {
        for &s in segments {
            data.extend(store.segment_view(r, s)?.iter().map(|&v| v as f64));
        }
    }
    Tensor2::from_vec(records.len(), width, data)
}

fn labels_of(records: &[SampleRecord]) -> Vec<usize> {
    records.iter().map(|r| r.label.expect("labeled split")).collect()
}

/// Frozen per-dataset linear heads over each dataset's own segment.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpertOracle {
    pub heads: Vec<Linear>,
    pub fits: Vec<FitReport>,
}

/// Trains one expert per dataset on its labeled train split.
pub fn pretrain_experts(store: &EmbeddingStore, settings: &LbfgsSettings) -> Result<ExpertOracle> {
    let mut heads = Vec::new();
    let mut fits = Vec::new();
    for (i, spec) in store.experts().iter().enumerate() {
        let train = store.records(i, Split::Train);
        let x = design(store, train, &[i])?;
        let (head, fit) = fit_linear(&format!("expert{i}"), &x, &labels_of(train), spec.num_classes, settings)?;
        heads.push(head);
        fits.push(fit);
    }
    Ok(ExpertOracle { heads, fits })
}

impl ExpertOracle {
    /// Messages for experts that stopped before reaching the tolerance.
    pub fn warnings(&self) -> Vec<String> {
        self.fits
            .iter()
            .enumerate()
            .filter(|(_, f)| !f.converged)
            .map(|(i, f)| {
                format!(
                    "expert {i} did not converge after {} iterations (gradient norm {:.3e})",
                    f.iterations, f.grad_norm
                )
            })
            .collect()
    }

    /// Logits of expert `i` for every record.
    pub fn logits(&self, store: &EmbeddingStore, i: usize, records: &[SampleRecord]) -> Result<Tensor2> {
        self.heads[i].forward(&design(store, records, &[i])?)
    }

    pub fn evaluate(&self, store: &EmbeddingStore, i: usize, split: Split) -> Result<MetricValues> {
        let records = store.records(i, split);
        let z = self.logits(store, i, records)?;
        let rows: Vec<&[f64]> = (0..z.rows()).map(|r| z.row(r)).collect();
        evaluate(&rows, &labels_of(records))
    }
}

/// Test acc@1 of a reference linear classifier on `dataset`, trained on its
/// train split with the given input.
pub fn oracle_best_linear(
    store: &EmbeddingStore,
    dataset: usize,
    input: &OracleInput,
    settings: &LbfgsSettings,
) -> Result<f64> {
    if dataset >= store.num_experts() {
        return Err(Error::Config(format!("dataset {dataset} out of range")));
    }
    let segments: Vec<usize> = match input {
        OracleInput::OwnSegment => vec![dataset],
        OracleInput::Concatenation => (0..store.num_experts()).collect(),
        OracleInput::Segments(s) => s.clone(),
    };
    let train = store.records(dataset, Split::Train);
    let test = store.records(dataset, Split::Test);
    let classes = store.experts()[dataset].num_classes;
    let (head, _) = fit_linear("oracle", &design(store, train, &segments)?, &labels_of(train), classes, settings)?;
    let z = head.forward(&design(store, test, &segments)?)?;
    let rows: Vec<&[f64]> = (0..z.rows()).map(|r| z.row(r)).collect();
    topk_accuracy(&rows, &labels_of(test), 1)
}
