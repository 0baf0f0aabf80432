//! Students, teacher ensembles and their shared adjustment modules.
//!
//! Expert `i` owns one [`AdjustmentModule`] over its feature segment. The
//! adjusted segment feeds the student head of dataset `i` and, depending on
//! the [`EnsembleInput`] mode, the input of every teacher.

mod adjust;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{DropoutMask, Linear, ParamTensor, Parameters, Tensor2};
use crate::rng::{SeedStreams, Stream};
use crate::store::SampleRecord;

pub use adjust::{AdjustCache, AdjustmentModule};

/// What the teacher ensembles read.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleInput {
    /// Concatenated student logits.
    Predictions,
    /// Raw concatenated segments; teachers never see student updates.
    BaseFeatures,
    /// Concatenated adjusted segments.
    AdjustedFeatures,
    /// Adjusted segments followed by student logits.
    AdjustedPlusPredictions,
}

impl EnsembleInput {
    pub const ALL: [EnsembleInput; 4] = [
        EnsembleInput::Predictions,
        EnsembleInput::BaseFeatures,
        EnsembleInput::AdjustedFeatures,
        EnsembleInput::AdjustedPlusPredictions,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EnsembleInput::Predictions => "predictions",
            EnsembleInput::BaseFeatures => "base_features",
            EnsembleInput::AdjustedFeatures => "adjusted_features",
            EnsembleInput::AdjustedPlusPredictions => "adjusted_plus_predictions",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            EnsembleInput::Predictions => "Predictions",
            EnsembleInput::BaseFeatures => "Base Features",
            EnsembleInput::AdjustedFeatures => "Adjusted Features",
            EnsembleInput::AdjustedPlusPredictions => "Adjusted Features + Predictions",
        }
    }

    pub fn input_width(self, segment_dims: &[usize], num_classes: &[usize]) -> usize {
        let d: usize = segment_dims.iter().sum();
        let c: usize = num_classes.iter().sum();
        match self {
            EnsembleInput::Predictions => c,
            EnsembleInput::BaseFeatures | EnsembleInput::AdjustedFeatures => d,
            EnsembleInput::AdjustedPlusPredictions => d + c,
        }
    }
}

impl fmt::Display for EnsembleInput {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EnsembleInput {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| {
            let names: Vec<_> = Self::ALL.iter().map(|m| m.name()).collect();
            Error::Config(format!("unknown ensemble input `{s}`; valid: {}", names.join(", ")))
        })
    }
}

/// `max(0, 1 − k·C/d)`: the rate at which `d·(1 − p) = k·C` neurons stay
/// active in expectation.
pub fn teacher_dropout_rate(num_classes: usize, d: usize, k: f64) -> f64 {
    (1.0 - k * num_classes as f64 / d as f64).max(0.0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct StudentModel {
    pub dataset_id: usize,
    pub adjustment: AdjustmentModule,
    pub head: Linear,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TeacherEnsemble {
    pub dataset_id: usize,
    pub dropout_rate: f64,
    pub meta: Linear,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InitPolicy {
    /// Hidden width of every adjustment module.
    pub adjust_hidden: usize,
    /// When positive, caps the hidden width at this fraction of the segment
    /// width (rounded, at least 1).
    pub adjust_hidden_cap: f64,
    pub adjust_dropout: f64,
    /// Dropout scale for teacher inputs.
    pub k: f64,
    pub input_mode: EnsembleInput,
    /// Copy supplied expert heads into the students.
    pub warm_start: bool,
}

impl Default for InitPolicy {
    fn default() -> Self {
        Self {
            adjust_hidden: 256,
            adjust_hidden_cap: 0.0,
            adjust_dropout: 0.75,
            k: 10.0,
            input_mode: EnsembleInput::AdjustedFeatures,
            warm_start: true,
        }
    }
}

impl InitPolicy {
    pub fn hidden_width(&self, segment_dim: usize) -> usize {
        if self.adjust_hidden_cap > 0.0 {
            let cap = ((self.adjust_hidden_cap * segment_dim as f64).round() as usize).max(1);
            self.adjust_hidden.min(cap).max(1)
        } else {
            self.adjust_hidden.max(1)
        }
    }
}

/// Dropout masks for one batch, in the order they are drawn: one per
/// adjustment module, then one per teacher.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchMasks {
    pub adjust: Vec<DropoutMask>,
    pub teacher: Vec<DropoutMask>,
}

/// Activations of one batched forward pass.
#[derive(Clone, Debug)]
pub struct Forward {
    pub base: Vec<Tensor2>,
    pub adjusted: Vec<Tensor2>,
    pub student_logits: Vec<Tensor2>,
    pub teacher_logits: Vec<Tensor2>,
    adjust_cache: Vec<AdjustCache>,
    teacher_in: Vec<Tensor2>,
    teacher_masks: Vec<Option<Tensor2>>,
}

/// All students and teachers of one run.
#[derive(Clone, Debug, PartialEq)]
pub struct JediModel {
    pub students: Vec<StudentModel>,
    pub teachers: Vec<TeacherEnsemble>,
    input_mode: EnsembleInput,
    segment_dims: Vec<usize>,
    num_classes: Vec<usize>,
    offsets: Vec<usize>,
}

/// Builds students and teachers for the given experts.
///
/// Adjustment up-projections start at zero. Down-projections, heads and
/// meta-classifiers are drawn uniformly in `±1/√fan_in`, each from its own
/// init stream, unless `pretrained_heads` seeds the student heads.
pub fn init_models(
    segment_dims: &[usize],
    num_classes: &[usize],
    seed: u64,
    policy: &InitPolicy,
    pretrained_heads: Option<&[Linear]>,
) -> Result<JediModel> {
    let n = segment_dims.len();
    if num_classes.len() != n || n == 0 {
        return Err(Error::Config(format!(
            "{} segment widths but {} class counts",
            n,
            num_classes.len()
        )));
    }
    if !(0.0..1.0).contains(&policy.adjust_dropout) {
        return Err(Error::Config(format!("adjust_dropout {} not in [0, 1)", policy.adjust_dropout)));
    }
    if !(policy.k > 0.0) {
        return Err(Error::Config(format!("k must be positive, got {}", policy.k)));
    }
    let streams = SeedStreams::new(seed);
    let width = policy.input_mode.input_width(segment_dims, num_classes);

    let mut students = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = streams.rng(Stream::Init, i as u64);
        let name = format!("student{i}");
        let adjustment = AdjustmentModule::new(
            &format!("{name}.adjust"),
            segment_dims[i],
            policy.hidden_width(segment_dims[i]),
            policy.adjust_dropout,
            &mut rng,
        );
        let head = match pretrained_heads.filter(|_| policy.warm_start) {
            Some(heads) => {
                let h = heads.get(i).ok_or_else(|| Error::Config(format!("no pretrained head for expert {i}")))?;
                if (h.inputs(), h.outputs()) != (segment_dims[i], num_classes[i]) {
                    return Err(Error::Shape {
                        op: "pretrained head",
                        left: (h.inputs(), h.outputs()),
                        right: (segment_dims[i], num_classes[i]),
                    });
                }
                Linear::from_values(&format!("{name}.head"), h.weight.value.clone(), h.bias.value.clone())?
            }
            None => Linear::fan_in_uniform(&format!("{name}.head"), segment_dims[i], num_classes[i], &mut rng),
        };
        students.push(StudentModel {
            dataset_id: i,
            adjustment,
            head,
        });
    }

    let teachers = (0..n)
        .map(|j| {
            let mut rng = streams.rng(Stream::Init, (n + j) as u64);
            TeacherEnsemble {
                dataset_id: j,
                dropout_rate: teacher_dropout_rate(num_classes[j], width, policy.k),
                meta: Linear::fan_in_uniform(&format!("teacher{j}.meta"), width, num_classes[j], &mut rng),
            }
        })
        .collect();

    let mut offsets = vec![0];
    for d in segment_dims {
        offsets.push(offsets.last().unwrap() + d);
    }
    Ok(JediModel {
        students,
        teachers,
        input_mode: policy.input_mode,
        segment_dims: segment_dims.to_vec(),
        num_classes: num_classes.to_vec(),
        offsets,
    })
}

impl JediModel {
    pub fn num_experts(&self) -> usize {
        self.students.len()
    }

    pub fn input_mode(&self) -> EnsembleInput {
        self.input_mode
    }

    pub fn segment_dims(&self) -> &[usize] {
        &self.segment_dims
    }

    pub fn num_classes(&self) -> &[usize] {
        &self.num_classes
    }

    pub fn teacher_input_width(&self) -> usize {
        self.input_mode.input_width(&self.segment_dims, &self.num_classes)
    }

    /// Splits concatenated features into `1 × d_i` segments, widened to f64.
    pub fn segments_of(&self, features: &[f32]) -> Result<Vec<Tensor2>> {
        self.batch_segments(&[features])
    }

    /// Gathers per-expert segment matrices (`B × d_i`) for a batch.
    pub fn batch_segments(&self, rows: &[&[f32]]) -> Result<Vec<Tensor2>> {
        let d = *self.offsets.last().unwrap();
        if let Some(bad) = rows.iter().find(|r| r.len() != d) {
            return Err(Error::Shape {
                op: "segments",
                left: (1, bad.len()),
                right: (1, d),
            });
        }
        Ok((0..self.num_experts())
            .map(|i| {
                let (lo, hi) = (self.offsets[i], self.offsets[i + 1]);
                let mut data = Vec::with_capacity(rows.len() * (hi - lo));
                for r in rows {
                    data.extend(r[lo..hi].iter().map(|&x| x as f64));
                }
                Tensor2::from_vec(rows.len(), hi - lo, data).unwrap()
            })
            .collect())
    }

    pub fn sample_masks<R: Rng + ?Sized>(&self, rows: usize, rng: &mut R) -> BatchMasks {
        let adjust = self
            .students
            .iter()
            .map(|s| DropoutMask::sample(rows, s.adjustment.width(), s.adjustment.keep_probability, rng))
            .collect();
        let width = self.teacher_input_width();
        let teacher = self
            .teachers
            .iter()
            .map(|t| DropoutMask::sample(rows, width, 1.0 - t.dropout_rate, rng))
            .collect();
        BatchMasks { adjust, teacher }
    }

    /// Runs every adjustment, student and teacher on a batch. Without masks
    /// the pass is in evaluation mode.
    pub fn forward(&self, base: Vec<Tensor2>, masks: Option<&BatchMasks>) -> Result<Forward> {
        let n = self.num_experts();
        if base.len() != n {
            return Err(Error::Shape {
                op: "forward segments",
                left: (base.len(), 0),
                right: (n, 0),
            });
        }
        let mut adjusted = Vec::with_capacity(n);
        let mut adjust_cache = Vec::with_capacity(n);
        let mut student_logits = Vec::with_capacity(n);
        for (i, s) in self.students.iter().enumerate() {
            let (a, cache) = s.adjustment.forward(&base[i], masks.map(|m| &m.adjust[i]))?;
            student_logits.push(s.head.forward(&a)?);
            adjusted.push(a);
            adjust_cache.push(cache);
        }

        let input = {
            let mut parts: Vec<&Tensor2> = Vec::new();
            match self.input_mode {
                EnsembleInput::Predictions => parts.extend(&student_logits),
                EnsembleInput::BaseFeatures => parts.extend(&base),
                EnsembleInput::AdjustedFeatures => parts.extend(&adjusted),
                EnsembleInput::AdjustedPlusPredictions => {
                    parts.extend(&adjusted);
                    parts.extend(&student_logits);
                }
            }
            Tensor2::hcat(&parts)?
        };

        let mut teacher_in = Vec::with_capacity(n);
        let mut teacher_masks = Vec::with_capacity(n);
        let mut teacher_logits = Vec::with_capacity(n);
        for (j, t) in self.teachers.iter().enumerate() {
            if t.meta.inputs() != input.cols() {
                return Err(Error::Shape {
                    op: "teacher input",
                    left: input.shape(),
                    right: t.meta.weight.value.shape(),
                });
            }
            let mask = masks.map(|m| m.teacher[j].mask.clone());
            let x = match &mask {
                Some(m) => input.hadamard(m)?,
                None => input.clone(),
            };
            teacher_logits.push(t.meta.forward(&x)?);
            teacher_in.push(x);
            teacher_masks.push(mask);
        }

        Ok(Forward {
            base,
            adjusted,
            student_logits,
            teacher_logits,
            adjust_cache,
            teacher_in,
            teacher_masks,
        })
    }

    /// Back-propagates logit gradients (entries may be `None` when a model
    /// received no loss) and accumulates into every parameter on the path.
    pub fn backward(
        &mut self,
        fwd: &Forward,
        grad_students: &[Option<Tensor2>],
        grad_teachers: &[Option<Tensor2>],
    ) -> Result<()> {
        let n = self.num_experts();
        let mut g_student: Vec<Option<Tensor2>> = grad_students.to_vec();
        let mut g_adjusted: Vec<Option<Tensor2>> = vec![None; n];

        fn add_into(slot: &mut Option<Tensor2>, g: Tensor2) -> Result<()> {
            match slot {
                Some(acc) => acc.add_assign(&g),
                None => {
                    *slot = Some(g);
                    Ok(())
                }
            }
        }

        for (j, teacher) in self.teachers.iter_mut().enumerate() {
            let Some(g) = &grad_teachers[j] else { continue };
            let mut g_in = teacher.meta.backward(&fwd.teacher_in[j], g)?;
            if let Some(mask) = &fwd.teacher_masks[j] {
                g_in = g_in.hadamard(mask)?;
            }
            let mut col = 0;
            let (take_adjusted, take_logits) = match self.input_mode {
                EnsembleInput::Predictions => (false, true),
                EnsembleInput::BaseFeatures => (false, false),
                EnsembleInput::AdjustedFeatures => (true, false),
                EnsembleInput::AdjustedPlusPredictions => (true, true),
            };
            if take_adjusted || self.input_mode == EnsembleInput::BaseFeatures {
                for (i, &d) in self.segment_dims.iter().enumerate() {
                    if take_adjusted {
                        add_into(&mut g_adjusted[i], g_in.col_slice(col, col + d))?;
                    }
                    col += d;
                }
            }
            if take_logits {
                for (i, &c) in self.num_classes.iter().enumerate() {
                    add_into(&mut g_student[i], g_in.col_slice(col, col + c))?;
                    col += c;
                }
            }
        }

        for (i, student) in self.students.iter_mut().enumerate() {
            if let Some(g) = &g_student[i] {
                let g_a = student.head.backward(&fwd.adjusted[i], g)?;
                add_into(&mut g_adjusted[i], g_a)?;
            }
        }
        for (i, student) in self.students.iter_mut().enumerate() {
            if let Some(g) = &g_adjusted[i] {
                student.adjustment.backward(&fwd.adjust_cache[i], g)?;
            }
        }
        Ok(())
    }

    fn single<R: Rng + ?Sized>(&self, record: &SampleRecord, train_rng: Option<&mut R>) -> Result<Forward> {
        let segments = self.segments_of(&record.features)?;
        let masks = train_rng.map(|rng| self.sample_masks(1, rng));
        self.forward(segments, masks.as_ref())
    }

    /// Logits of student `i` for one record.
    pub fn student_forward<R: Rng + ?Sized>(
        &self,
        record: &SampleRecord,
        i: usize,
        train_rng: Option<&mut R>,
    ) -> Result<Vec<f64>> {
        self.check_index(i)?;
        Ok(self.single(record, train_rng)?.student_logits[i].as_slice().to_vec())
    }

    /// Logits of teacher `j` for one record.
    pub fn teacher_forward<R: Rng + ?Sized>(
        &self,
        record: &SampleRecord,
        j: usize,
        train_rng: Option<&mut R>,
    ) -> Result<Vec<f64>> {
        self.check_index(j)?;
        Ok(self.single(record, train_rng)?.teacher_logits[j].as_slice().to_vec())
    }

    /// The assembled (pre-dropout) teacher input for one record.
    pub fn teacher_input(&self, record: &SampleRecord) -> Result<Vec<f64>> {
        let fwd = self.single::<rand_chacha::ChaCha8Rng>(record, None)?;
        Ok(fwd.teacher_in[0].as_slice().to_vec())
    }

    fn check_index(&self, i: usize) -> Result<()> {
        if i >= self.num_experts() {
            return Err(Error::Config(format!("model index {i} out of range ({} experts)", self.num_experts())));
        }
        Ok(())
    }
}

impl Parameters for JediModel {
    fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        let mut out: Vec<&mut ParamTensor> = Vec::new();
        for s in &mut self.students {
            out.extend(s.adjustment.params_mut());
            out.extend(s.head.params_mut());
        }
        for t in &mut self.teachers {
            out.extend(t.meta.params_mut());
        }
        out
    }
}

#[cfg(test)]
mod tests;
