use super::*;
use crate::math::finite_diff_check;
use approx::assert_abs_diff_eq;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small(mode: EnsembleInput) -> JediModel {
    let policy = InitPolicy {
        adjust_hidden: 3,
        adjust_hidden_cap: 0.0,
        input_mode: mode,
        ..InitPolicy::default()
    };
    let mut m = init_models(&[4, 3], &[3, 2], 7, &policy, None).unwrap();
    // Move away from the zero up-projection so every path carries gradient.
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for s in &mut m.students {
        for v in s.adjustment.up.weight.value.as_mut_slice() {
            *v = rng.random_range(-0.5..0.5);
        }
    }
    m
}

fn batch(rows: usize, seed: u64) -> Vec<Tensor2> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    [4, 3]
        .iter()
        .map(|&d| {
            let data = (0..rows * d).map(|_| rng.random_range(-1.0..1.0)).collect();
            Tensor2::from_vec(rows, d, data).unwrap()
        })
        .collect()
}

#[test]
fn dropout_rate_fixtures() {
    for (c, want) in [(200, 0.720982), (51, 0.928851), (400, 0.441964), (101, 0.859096)] {
        let p = teacher_dropout_rate(c, 7168, 10.0);
        assert_abs_diff_eq!(p, want, epsilon = 1e-6);
        assert_abs_diff_eq!(7168.0 * (1.0 - p), 10.0 * c as f64, epsilon = 1e-9);
    }
    assert_eq!(teacher_dropout_rate(10, 50, 10.0), 0.0);
}

#[test]
fn predictions_width_sums_class_counts() {
    let dims = [2048, 2048, 1024, 2048];
    let classes = [200, 51, 400, 101];
    assert_eq!(EnsembleInput::Predictions.input_width(&dims, &classes), 752);
    assert_eq!(EnsembleInput::AdjustedFeatures.input_width(&dims, &classes), 7168);
    assert_eq!(EnsembleInput::AdjustedPlusPredictions.input_width(&dims, &classes), 7920);
}

#[test]
fn mode_names_round_trip() {
    for m in EnsembleInput::ALL {
        assert_eq!(m.name().parse::<EnsembleInput>().unwrap(), m);
    }
    assert!("bogus".parse::<EnsembleInput>().unwrap_err().to_string().contains("adjusted_features"));
}

#[test]
fn init_is_deterministic_and_adjustments_start_as_identity() {
    let p = InitPolicy {
        adjust_hidden_cap: 0.25,
        ..InitPolicy::default()
    };
    assert_eq!(InitPolicy::default().hidden_width(8), 256);
    let a = init_models(&[8, 4], &[3, 2], 5, &p, None).unwrap();
    let b = init_models(&[8, 4], &[3, 2], 5, &p, None).unwrap();
    let c = init_models(&[8, 4], &[3, 2], 6, &p, None).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert_eq!(a.students[0].adjustment.hidden(), 2);
    let base = vec![Tensor2::filled(5, 8, 0.3), Tensor2::filled(5, 4, -0.7)];
    let fwd = a.forward(base, None).unwrap();
    for (base, adj) in fwd.base.iter().zip(&fwd.adjusted) {
        assert_eq!(base, adj);
    }
}

#[test]
fn warm_start_copies_heads_only_when_enabled() {
    let heads = vec![Linear::zeros("h0", 4, 3), Linear::zeros("h1", 3, 2)];
    let on = init_models(&[4, 3], &[3, 2], 1, &InitPolicy::default(), Some(&heads)).unwrap();
    assert!(on.students[1].head.weight.value.as_slice().iter().all(|&v| v == 0.0));
    assert_eq!(on.students[1].head.weight.name, "student1.head.weight");
    let off_policy = InitPolicy {
        warm_start: false,
        ..InitPolicy::default()
    };
    let off = init_models(&[4, 3], &[3, 2], 1, &off_policy, Some(&heads)).unwrap();
    assert!(off.students[1].head.weight.value.as_slice().iter().any(|&v| v != 0.0));
    // Adjustments and teachers do not depend on the head source.
    assert_eq!(on.students[0].adjustment, off.students[0].adjustment);
    assert_eq!(on.teachers, off.teachers);
}

#[test]
fn bad_shapes_are_rejected() {
    let m = small(EnsembleInput::AdjustedFeatures);
    assert!(m.forward(batch(2, 1).into_iter().take(1).collect(), None).is_err());
    assert!(m.segments_of(&[0.0; 6]).is_err());
    assert!(init_models(&[4], &[3, 2], 0, &InitPolicy::default(), None).is_err());
}

#[test]
fn teacher_input_layout_follows_mode() {
    let rec = SampleRecord {
        sample_id: "x".into(),
        features: vec![0.5; 7],
        expert_logits: None,
        label: None,
        home: 0,
        split: crate::store::Split::Test,
    };
    for mode in EnsembleInput::ALL {
        let m = small(mode);
        let x = m.teacher_input(&rec).unwrap();
        assert_eq!(x.len(), m.teacher_input_width());
        if mode == EnsembleInput::BaseFeatures {
            assert!(x.iter().all(|&v| v == 0.5));
        }
        if mode == EnsembleInput::Predictions {
            let s0 = m.student_forward::<ChaCha8Rng>(&rec, 0, None).unwrap();
            assert_eq!(&x[..3], &s0[..]);
        }
    }
}

#[test]
fn batched_gradients_match_finite_differences() {
    for mode in EnsembleInput::ALL {
        let mut model = small(mode);
        let base = batch(3, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let masks = model.sample_masks(3, &mut rng);
        // Loss: Σ c·z + ½ Σ z² over every student and teacher logit.
        let loss = |m: &mut JediModel| {
            let fwd = m.forward(base.clone(), Some(&masks)).unwrap();
            let mut total = 0.0;
            let mut grads = |zs: &[Tensor2]| -> Vec<Option<Tensor2>> {
                zs.iter()
                    .enumerate()
                    .map(|(k, z)| {
                        let mut g = z.clone();
                        for (idx, v) in g.as_mut_slice().iter_mut().enumerate() {
                            let c = 0.1 * (idx as f64 + 1.0) * if k == 0 { 1.0 } else { -1.0 };
                            total += c * *v + 0.5 * *v * *v;
                            *v += c;
                        }
                        Some(g)
                    })
                    .collect()
            };
            let gs = grads(&fwd.student_logits);
            let gt = grads(&fwd.teacher_logits);
            m.backward(&fwd, &gs, &gt).unwrap();
            total
        };
        let err = finite_diff_check(&mut model, loss, 1e-6, 12);
        assert!(err < 1e-5, "{mode}: relative error {err}");
    }
}

#[test]
fn base_features_mode_keeps_teacher_gradient_out_of_adjustments() {
    let mut m = small(EnsembleInput::BaseFeatures);
    let fwd = m.forward(batch(2, 3), None).unwrap();
    let gt: Vec<_> = fwd.teacher_logits.iter().map(|z| Some(Tensor2::filled(z.rows(), z.cols(), 1.0))).collect();
    m.backward(&fwd, &[None, None], &gt).unwrap();
    for s in &m.students {
        assert!(s.adjustment.up.weight.grad.as_slice().iter().all(|&g| g == 0.0));
        assert!(!s.head.weight.touched);
    }
    assert!(m.teachers[0].meta.weight.touched);
}

#[test]
fn parameter_order_is_stable() {
    let mut m = small(EnsembleInput::AdjustedFeatures);
    let names: Vec<_> = m.params_mut().iter().map(|p| p.name.clone()).collect();
    assert_eq!(names[0], "student0.adjust.down.weight");
    assert_eq!(names.last().unwrap(), "teacher1.meta.bias");
    assert_eq!(names.len(), 2 * 6 + 2 * 2);
}
