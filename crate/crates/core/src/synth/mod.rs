//! Synthetic multi-dataset embedding worlds and the linear experts trained
//! on them.
//!
//! Every sample has a shared latent vector plus one private latent vector per
//! dataset. Class prototypes of dataset `h` put a `cross_signal_strength`
//! fraction of their (expected) squared norm into the shared part and the
//! rest into `h`'s private part. Segment `i` of every sample, whatever its
//! home, is a fixed random affine map of (shared, private_i) plus isotropic
//! noise. A foreign private part is centred on a prototype of a random class
//! of that foreign dataset, so every segment stays on its expert's data
//! manifold while seeing the home class only through the shared part.

mod oracle;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{SeedStreams, Stream};
use crate::store::{DatasetSpec, EmbeddingStore, SampleRecord, Split};

pub use oracle::{
    fit_linear, oracle_best_linear, pretrain_experts, ExpertOracle, FitReport, OracleInput,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldDataset {
    pub name: String,
    pub num_classes: usize,
    pub segment_dim: usize,
    pub train: usize,
    #[serde(default)]
    pub val: usize,
    pub test: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldSpec {
    pub datasets: Vec<WorldDataset>,
    /// Unlabeled samples drawn like `pool_home`'s labeled ones.
    pub unlabeled_pool: usize,
    pub pool_home: usize,
    pub shared_latent_dim: usize,
    pub private_latent_dim: usize,
    pub cross_signal_strength: f64,
    /// Standard deviation of class prototype coordinates.
    pub class_separation: f64,
    /// Within-class spread of the latent vectors.
    pub jitter: f64,
    /// Standard deviation of the isotropic noise added to every segment.
    pub noise_scale: f64,
    /// Probability that a training label is replaced by a uniformly drawn
    /// class. Validation and test labels are always clean.
    pub label_noise: f64,
    pub seed: u64,
}

impl Default for WorldSpec {
    fn default() -> Self {
        let ds = |name: &str, num_classes, segment_dim, train| WorldDataset {
            name: name.into(),
            num_classes,
            segment_dim,
            train,
            val: 100,
            test: 200,
        };
        Self {
            datasets: vec![ds("alpha", 5, 24, 400), ds("beta", 4, 24, 300), ds("gamma", 6, 16, 500)],
            unlabeled_pool: 1000,
            pool_home: 2,
            shared_latent_dim: 8,
            private_latent_dim: 8,
            cross_signal_strength: 0.7,
            class_separation: 1.2,
            jitter: 0.5,
            noise_scale: 1.0,
            label_noise: 0.3,
            seed: 0,
        }
    }
}

impl WorldSpec {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("world spec serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.datasets.is_empty() {
            return bad("world needs at least one dataset".into());
        }
        for d in &self.datasets {
            if d.num_classes < 2 || d.segment_dim == 0 {
                return bad(format!("dataset `{}` needs ≥ 2 classes and a non-empty segment", d.name));
            }
        }
        if !(0.0..=1.0).contains(&self.cross_signal_strength) {
            return bad(format!("cross_signal_strength {} not in [0, 1]", self.cross_signal_strength));
        }
        for (name, v) in [
            ("class_separation", self.class_separation),
            ("jitter", self.jitter),
            ("noise_scale", self.noise_scale),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return bad(format!("{name} must be finite and ≥ 0, got {v}"));
            }
        }
        if !(0.0..1.0).contains(&self.label_noise) {
            return bad(format!("label_noise {} not in [0, 1)", self.label_noise));
        }
        if self.unlabeled_pool > 0 && self.pool_home >= self.datasets.len() {
            return bad(format!("pool_home {} out of range", self.pool_home));
        }
        if self.shared_latent_dim + self.private_latent_dim == 0 {
            return bad("latent space is empty".into());
        }
        Ok(())
    }
}

fn normals<R: Rng>(rng: &mut R, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Draws a labeled (plus optional unlabeled) multi-dataset store.
pub fn generate_world(spec: &WorldSpec) -> Result<EmbeddingStore> {
    spec.validate()?;
    let streams = SeedStreams::new(spec.seed);
    let mut rng = streams.rng(Stream::World, 0);
    let (l, p) = (spec.shared_latent_dim, spec.private_latent_dim);
    let s = spec.cross_signal_strength;
    let n = spec.datasets.len();

    // Prototypes per dataset: (shared, private) per class.
    let protos: Vec<Vec<(Vec<f64>, Vec<f64>)>> = spec
        .datasets
        .iter()
        .map(|d| {
            (0..d.num_classes)
                .map(|_| {
                    let shared = normals(&mut rng, l, spec.class_separation * s.sqrt());
                    let private = normals(&mut rng, p, spec.class_separation * (1.0 - s).sqrt());
                    (shared, private)
                })
                .collect()
        })
        .collect();
    // Segment maps: d_i × (l + p) matrices and offsets.
    let maps: Vec<(Vec<f64>, Vec<f64>)> = spec
        .datasets
        .iter()
        .map(|d| {
            let a = normals(&mut rng, d.segment_dim * (l + p), 1.0 / ((l + p) as f64).sqrt());
            let b = normals(&mut rng, d.segment_dim, 0.5);
            (a, b)
        })
        .collect();

    let manifest = spec
        .datasets
        .iter()
        .enumerate()
        .map(|(id, d)| DatasetSpec {
            id,
            name: d.name.clone(),
            num_classes: d.num_classes,
            feature_dim: d.segment_dim,
            train_size: d.train,
        })
        .collect();
    let mut store = EmbeddingStore::new(manifest)?;
    let total: usize = spec.datasets.iter().map(|d| d.segment_dim).sum();

    let draw = |rng: &mut rand_chacha::ChaCha8Rng, home: usize, class: usize| -> Vec<f32> {
        let (shared_proto, private_proto) = &protos[home][class];
        let mut shared = normals(rng, l, spec.jitter);
        for (z, m) in shared.iter_mut().zip(shared_proto) {
            *z += m;
        }
        let mut features = Vec::with_capacity(total);
        for (i, d) in spec.datasets.iter().enumerate() {
            let mut latent = shared.clone();
            let mut private = normals(rng, p, spec.jitter);
            let proto = if i == home {
                private_proto
            } else {
                &protos[i][rng.random_range(0..d.num_classes)].1
            };
            for (z, m) in private.iter_mut().zip(proto) {
                *z += m;
            }
            latent.extend(private);
            let (a, b) = &maps[i];
            let noise = normals(rng, d.segment_dim, spec.noise_scale);
            for r in 0..d.segment_dim {
                let row = &a[r * (l + p)..(r + 1) * (l + p)];
                let v: f64 = row.iter().zip(&latent).map(|(x, y)| x * y).sum::<f64>() + b[r] + noise[r];
                features.push(v as f32);
            }
        }
        features
    };

    let mut rng = streams.rng(Stream::World, 1);
    for (home, d) in spec.datasets.iter().enumerate() {
        for (split, count) in [(Split::Train, d.train), (Split::Val, d.val), (Split::Test, d.test)] {
            for idx in 0..count {
                let class = idx % d.num_classes;
                let features = draw(&mut rng, home, class);
                let label = if split == Split::Train && spec.label_noise > 0.0 && rng.random_bool(spec.label_noise) {
                    rng.random_range(0..d.num_classes)
                } else {
                    class
                };
                store.push(SampleRecord {
                    sample_id: format!("{}-{split}-{idx}", d.name),
                    features,
                    expert_logits: None,
                    label: Some(label),
                    home,
                    split,
                })?;
            }
        }
    }
    for idx in 0..spec.unlabeled_pool {
        let home = spec.pool_home;
        let class = rng.random_range(0..spec.datasets[home].num_classes);
        let features = draw(&mut rng, home, class);
        store.push(SampleRecord {
            sample_id: format!("pool-{idx}"),
            features,
            expert_logits: None,
            label: None,
            home,
            split: Split::Unlabeled,
        })?;
    }
    debug_assert!(n == store.num_experts());
    Ok(store)
}
