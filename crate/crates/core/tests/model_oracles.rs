//! Black-box checks of the model family against independent recomputation
//! and hand values.

use idol_core::model::{
    confidence, predict, sharpen, sharpen_labels, Activation, ClassifierParams, ClassifierSpec,
    DiscriminatorSpec, Prediction,
};
use idol_core::numerics::DenseMatrix;
use ndarray::{Array1, Array2};
use proptest::prelude::*;

#[test]
fn zero_parameters_predict_uniformly() {
    let spec = ClassifierSpec::new(4, vec![6], 3, Activation::Relu).unwrap();
    let params = spec.zeros().unwrap();
    let x = DenseMatrix::from_vec(2, 4, vec![1.0, -2.0, 0.5, 3.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
    let pred = predict(&params, &x).unwrap();
    for i in 0..2 {
        for j in 0..3 {
            assert!((pred.probs().get(i, j) - 1.0 / 3.0).abs() < 1e-15);
        }
    }
}

#[test]
fn logistic_regression_logits_follow_the_feature() {
    // Weights (0, 1): class-1 logit equals the input feature, class-0 logit
    // is 0, so prediction order tracks feature order.
    let spec = ClassifierSpec::new(1, vec![], 2, Activation::Relu).unwrap();
    let mut params = spec.zeros().unwrap();
    {
        let raw = params.params().values().to_vec();
        assert_eq!(raw.len(), 4);
        let with_w = vec![0.0, 1.0, 0.0, 0.0];
        params = load_from_raw(&spec, with_w);
    }
    let x = DenseMatrix::from_vec(4, 1, vec![-2.0, -0.5, 0.5, 2.0]).unwrap();
    let pred = predict(&params, &x).unwrap();
    let class1: Vec<f64> = (0..4).map(|i| pred.logits().get(i, 1)).collect();
    assert!(class1.windows(2).all(|w| w[0] < w[1]));
    assert_eq!(sharpen_labels(&pred), vec![0, 0, 1, 1]);
}

/// Rebuilds classifier params from a raw flat vector by round-tripping the
/// serialized form, staying entirely on the public API.
fn load_from_raw(spec: &ClassifierSpec, raw: Vec<f64>) -> ClassifierParams {
    let zero = spec.zeros().unwrap();
    let mut buf = Vec::new();
    zero.write(&mut buf).unwrap();
    let payload_len = raw.len() * 8;
    let header_len = buf.len() - payload_len;
    let mut patched = buf[..header_len].to_vec();
    for v in &raw {
        patched.extend_from_slice(&v.to_le_bytes());
    }
    ClassifierParams::read(&mut patched.as_slice()).unwrap()
}

fn independent_forward(
    params: &ClassifierParams,
    x: &DenseMatrix,
    activation: Activation,
) -> Array2<f64> {
    // Reimplementation on ndarray, sharing nothing with the crate's own
    // forward pass beyond the serialized parameter layout.
    let values = params.params();
    let seg = |name: &str| values.segment_span(name).unwrap();
    let dims: Vec<usize> = {
        let mut d = vec![params.spec().input_dim];
        d.extend(&params.spec().hidden_dims);
        d.push(params.spec().num_classes);
        d
    };
    let mut a = Array2::from_shape_vec(
        (x.rows(), x.cols()),
        x.data().to_vec(),
    )
    .unwrap();
    for l in 0..dims.len() - 1 {
        let (ws, wl) = seg(&format!("w{l}"));
        let (bs, bl) = seg(&format!("b{l}"));
        let w = Array2::from_shape_vec(
            (dims[l], dims[l + 1]),
            values.values()[ws..ws + wl].to_vec(),
        )
        .unwrap();
        let b = Array1::from_vec(values.values()[bs..bs + bl].to_vec());
        let mut z = a.dot(&w) + &b;
        if l + 1 < dims.len() - 1 {
            z = match activation {
                Activation::Relu => z.mapv(|v| if v > 0.0 { v } else { 0.0 }),
                Activation::Tanh => z.mapv(f64::tanh),
            };
        }
        a = z;
    }
    a
}

#[test]
fn seed_zero_forward_matches_independent_reimplementation() {
    for activation in [Activation::Relu, Activation::Tanh] {
        let spec = ClassifierSpec::new(3, vec![4], 2, activation).unwrap();
        let params = spec.init(0).unwrap();
        let x = DenseMatrix::from_vec(
            2,
            3,
            vec![0.3, -1.2, 0.7, 1.5, 0.0, -0.4],
        )
        .unwrap();
        let ours = predict(&params, &x).unwrap();
        let theirs = independent_forward(&params, &x, activation);
        for i in 0..2 {
            for j in 0..2 {
                assert!(
                    (ours.logits().get(i, j) - theirs[[i, j]]).abs() < 1e-12,
                    "logit ({i},{j}) diverges"
                );
            }
            // Softmax recomputed independently too.
            let row: Vec<f64> = (0..2).map(|j| theirs[[i, j]]).collect();
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|z| (z - m).exp()).collect();
            let sum: f64 = exps.iter().sum();
            for j in 0..2 {
                assert!((ours.probs().get(i, j) - exps[j] / sum).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn sharpen_hand_examples_and_tie_break() {
    let pred = Prediction::from_logits(
        DenseMatrix::from_vec(2, 3, vec![0.2, 0.5, 0.3, 0.5, 0.5, 0.1]).unwrap(),
    );
    assert_eq!(sharpen_labels(&pred), vec![1, 0]);
    let onehot = sharpen(&pred);
    assert_eq!(onehot.row(0), &[0.0, 1.0, 0.0]);
    assert_eq!(onehot.row(1), &[1.0, 0.0, 0.0]);
    // Idempotence: sharpening a one-hot row read back as logits is stable.
    let again = sharpen(&Prediction::from_logits(onehot.clone()));
    assert_eq!(again, onehot);
}

#[test]
fn confidence_hand_examples() {
    let pred = Prediction::from_logits(DenseMatrix::from_vec(2, 2, vec![0.0, 0.0, 10.0, -10.0]).unwrap());
    let c = confidence(&pred);
    assert!((c[0] - 0.5).abs() < 1e-15);
    assert!((c[1] - 1.0).abs() < 1e-8);
    let uniform = Prediction::from_logits(DenseMatrix::zeros(1, 10));
    assert!((confidence(&uniform)[0] - 0.1).abs() < 1e-15);
}

#[test]
fn save_load_roundtrip_preserves_bits_and_checks_kind() {
    let dir = tempfile::tempdir().unwrap();
    let spec = ClassifierSpec::new(5, vec![7, 3], 4, Activation::Tanh).unwrap();
    let params = spec.init(42).unwrap();
    let path = dir.path().join("clf.params");
    params.save(&path).unwrap();
    let loaded = ClassifierParams::load(&path).unwrap();
    assert_eq!(loaded.spec(), params.spec());
    assert_eq!(loaded.params().values(), params.params().values());

    let dspec = DiscriminatorSpec::new(5, vec![7], Activation::Relu).unwrap();
    let dparams = dspec.init(43).unwrap();
    let dpath = dir.path().join("disc.params");
    dparams.save(&dpath).unwrap();
    let dloaded = idol_core::model::DiscriminatorParams::load(&dpath).unwrap();
    assert_eq!(dloaded.params().values(), dparams.params().values());

    // A discriminator file is not a classifier.
    let err = ClassifierParams::load(&dpath).unwrap_err();
    assert!(err.to_string().contains("classifier"), "{err}");
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one_and_confidence_is_bounded(
        rows in 1usize..6,
        cols in 2usize..8,
        seed in 0u64..1000,
    ) {
        let mut state = seed.wrapping_mul(0x9E3779B97F4A7C15).wrapping_add(1);
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64 * 40.0 - 20.0
        };
        let data: Vec<f64> = (0..rows * cols).map(|_| next()).collect();
        let pred = Prediction::from_logits(DenseMatrix::from_vec(rows, cols, data).unwrap());
        for i in 0..rows {
            let sum: f64 = pred.probs().row(i).iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-9);
        }
        for c in confidence(&pred) {
            prop_assert!(c >= 1.0 / cols as f64 - 1e-12 && c <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn sharpen_is_invariant_under_strictly_increasing_transforms(
        cols in 2usize..6,
        seed in 0u64..1000,
        scale in 0.05f64..8.0,
        shift in -5.0f64..5.0,
    ) {
        let mut state = seed.wrapping_mul(0x2545F4914F6CDD1D).wrapping_add(99);
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64 * 6.0 - 3.0
        };
        let row: Vec<f64> = (0..cols).map(|_| next()).collect();
        let base = Prediction::from_logits(DenseMatrix::from_vec(1, cols, row.clone()).unwrap());
        let affine: Vec<f64> = row.iter().map(|z| scale * z + shift).collect();
        let cubed: Vec<f64> = row.iter().map(|z| z.powi(3)).collect();
        let a = Prediction::from_logits(DenseMatrix::from_vec(1, cols, affine).unwrap());
        let c = Prediction::from_logits(DenseMatrix::from_vec(1, cols, cubed).unwrap());
        prop_assert_eq!(sharpen_labels(&base), sharpen_labels(&a));
        prop_assert_eq!(sharpen_labels(&base), sharpen_labels(&c));
    }
}
