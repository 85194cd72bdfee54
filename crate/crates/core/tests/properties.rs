use candle_core::{DType, Device, Tensor};
use ndarray::{Array2, Array3};
use proptest::prelude::*;

use stylemotion::data::{add_template_frames, MotionSequence, Sample, TemplateMesh, Waveform};
use stylemotion::decoder::Saln;
use stylemotion::encoders::{EncoderConfig, StyleEncoder};
use stylemotion::inference::interpolate;
use stylemotion::losses::{info_nce, style_cycle_loss, total_value, LossTerms, LossWeights};
use stylemotion::metrics::{dtw, lve};
use stylemotion::nn::ops::instance_norm;
use stylemotion::nn::ParamStore;

fn tensor(v: &[f64], shape: &[usize]) -> Tensor {
    Tensor::from_vec(v.to_vec(), shape, &Device::Cpu).unwrap()
}

fn values(t: &Tensor) -> Vec<f64> {
    t.to_dtype(DType::F64).unwrap().flatten_all().unwrap().to_vec1().unwrap()
}

fn scalar(t: &Tensor) -> f64 {
    t.to_dtype(DType::F64).unwrap().to_scalar().unwrap()
}

fn vec_of(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0f64..2.0, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn instance_norm_ignores_positive_scale(v in vec_of(2 * 6 * 3), alpha in 0.1f64..10.0) {
        let x = tensor(&v, &[2, 6, 3]);
        // Channels with almost no spread are dominated by eps; skip them.
        let spread = (0..2 * 3).all(|k| {
            let (b, c) = (k / 3, k % 3);
            let col: Vec<f64> = (0..6).map(|t| v[b * 18 + t * 3 + c]).collect();
            let m = col.iter().sum::<f64>() / 6.0;
            col.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 6.0 > 1e-3
        });
        prop_assume!(spread);
        let a = values(&instance_norm(&x, 1e-8).unwrap());
        let b = values(&instance_norm(&(x * alpha).unwrap(), 1e-8).unwrap());
        for (p, q) in a.iter().zip(&b) {
            prop_assert!((p - q).abs() <= 1e-4);
        }
    }

    #[test]
    fn style_cycle_ignores_positive_scale(s in vec_of(2 * 5), c in vec_of(2 * 5), alpha in 0.1f64..10.0, beta in 0.1f64..10.0) {
        let norms_ok = (0..2).all(|b| {
            let n = |v: &[f64]| v[b * 5..b * 5 + 5].iter().map(|x| x * x).sum::<f64>();
            n(&s) > 1e-3 && n(&c) > 1e-3
        });
        prop_assume!(norms_ok);
        let (st, ct) = (tensor(&s, &[2, 5]), tensor(&c, &[2, 5]));
        let base = scalar(&style_cycle_loss(&st, &ct).unwrap());
        let scaled = scalar(&style_cycle_loss(&(st * alpha).unwrap(), &(ct * beta).unwrap()).unwrap());
        prop_assert!((base - scaled).abs() < 1e-12);
        prop_assert!((0.0..=2.0 + 1e-12).contains(&base));
    }

    #[test]
    fn info_nce_is_nonnegative_and_batch_permutation_invariant(
        x in vec_of(3 * 4 * 5),
        y in vec_of(3 * 4 * 5),
        mix in 0.0f64..1.0,
        rot in 1usize..3,
    ) {
        let tau = tensor(&[0.1], &[]);
        let (xt, yt) = (tensor(&x, &[3, 4, 5]), tensor(&y, &[3, 4, 5]));
        let loss = scalar(&info_nce(&xt, &yt, &tau, mix).unwrap());
        prop_assert!(loss >= 0.0);
        // Reorder sequences in the batch, keeping every (x_b, y_b) pairing.
        let perm: Vec<u32> = (0..3).map(|b| ((b + rot) % 3) as u32).collect();
        let idx = Tensor::new(perm.as_slice(), &Device::Cpu).unwrap();
        let permuted = scalar(&info_nce(&xt.index_select(&idx, 0).unwrap(), &yt.index_select(&idx, 0).unwrap(), &tau, mix).unwrap());
        prop_assert!((loss - permuted).abs() < 1e-12);
    }

    #[test]
    fn total_is_linear_in_every_term(a in vec_of(6), b in vec_of(6), k in -3.0f64..3.0, w in prop::collection::vec(0.0f64..2.0, 6)) {
        let terms = |v: &[f64]| LossTerms { r: v[0], s: v[1], c: v[2], con: v[3], cycle_s: v[4], cycle_c: v[5] };
        let weights = LossWeights { r: w[0], s: w[1], c: w[2], con: w[3], cycle_s: w[4], cycle_c: w[5], ..LossWeights::DESK };
        let combo: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + k * y).collect();
        let lhs = total_value(&terms(&combo), &weights).unwrap();
        let rhs = total_value(&terms(&a), &weights).unwrap() + k * total_value(&terms(&b), &weights).unwrap();
        prop_assert!((lhs - rhs).abs() < 1e-9);
    }

    #[test]
    fn interpolation_is_affine_in_omega(a in prop::collection::vec(-5.0f32..5.0, 8), b in prop::collection::vec(-5.0f32..5.0, 8), omega in -0.5f64..1.5) {
        let out = interpolate(&a, &b, omega).unwrap();
        for i in 0..8 {
            let exact = omega * a[i] as f64 + (1.0 - omega) * b[i] as f64;
            prop_assert_eq!(out[i], exact as f32);
        }
        prop_assert_eq!(interpolate(&a, &b, 1.0).unwrap(), a.clone());
        prop_assert_eq!(interpolate(&a, &b, 0.0).unwrap(), b.clone());
    }

    #[test]
    fn saln_with_unit_gain_standardizes_rows(v in vec_of(2 * 3 * 8), s in vec_of(2 * 4)) {
        let mut p = ParamStore::new(0, DType::F64);
        let saln = Saln::new(&mut p, "n", 4, 8, 0.0, 1e-5).unwrap();
        let h = tensor(&v, &[2, 3, 8]);
        let y = values(&saln.forward(&h, &tensor(&s, &[2, 4])).unwrap());
        for (row, chunk) in y.chunks(8).enumerate() {
            let raw = &v[row * 8..row * 8 + 8];
            let m = raw.iter().sum::<f64>() / 8.0;
            let var_in = raw.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 8.0;
            prop_assume!(var_in > 1e-2);
            let mean = chunk.iter().sum::<f64>() / 8.0;
            let var = chunk.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 8.0;
            prop_assert!(mean.abs() <= 1e-6);
            prop_assert!((var - 1.0).abs() <= 1e-4 + 1e-5 / var_in);
        }
    }

    #[test]
    fn add_template_is_linear(t in prop::collection::vec(-1.0f32..1.0, 4 * 3), m1 in prop::collection::vec(-1.0f32..1.0, 2 * 4 * 3), m2 in prop::collection::vec(-1.0f32..1.0, 2 * 4 * 3)) {
        let tpl = Array2::from_shape_vec((4, 3), t).unwrap();
        let a = Array3::from_shape_vec((2, 4, 3), m1).unwrap();
        let b = Array3::from_shape_vec((2, 4, 3), m2).unwrap();
        let lhs = add_template_frames(&tpl, &(&a + &b)).unwrap();
        let rhs = add_template_frames(&tpl, &a).unwrap() + &b;
        for (x, y) in lhs.iter().zip(rhs.iter()) {
            prop_assert!((x - y).abs() <= 1e-5);
        }
    }

    #[test]
    fn windows_compose(start in 0usize..20, len in 25usize..40) {
        prop_assume!(start + len <= 60);
        let frames = Array3::from_shape_fn((60, 2, 3), |(t, v, k)| (t * 6 + v * 3 + k) as f32);
        let motion = MotionSequence::new(frames, 25.0).unwrap();
        let wave = Waveform { samples: (0..60 * 64).map(|i| (i as f32 * 0.01).sin()).collect(), sample_rate: 1600 };
        let sample = Sample::new(0, motion, wave, None).unwrap();
        let (a, b) = (start as f64 / 25.0, len as f64 / 25.0);
        let w = sample.window(a, b).unwrap();
        prop_assert_eq!(w.motion.len(), len);
        prop_assert_eq!(w.waveform.samples.len(), len * 64);
        let again = w.window(0.0, b).unwrap();
        prop_assert_eq!(&again.motion, &w.motion);
        prop_assert_eq!(&again.waveform, &w.waveform);
    }

    #[test]
    fn lve_bounds_mean_lip_error(p in prop::collection::vec(-3.0f32..3.0, 3 * 5 * 3), g in prop::collection::vec(-3.0f32..3.0, 3 * 5 * 3)) {
        let pred = Array3::from_shape_vec((3, 5, 3), p).unwrap();
        let gt = Array3::from_shape_vec((3, 5, 3), g).unwrap();
        let lips = [1usize, 3, 4];
        let per_frame_mean: f64 = (0..3)
            .map(|t| {
                lips.iter()
                    .map(|&v| (0..3).map(|k| ((pred[[t, v, k]] - gt[[t, v, k]]) as f64).powi(2)).sum::<f64>().sqrt())
                    .sum::<f64>()
                    / lips.len() as f64
            })
            .sum::<f64>()
            / 3.0;
        let l = lve(pred.view(), gt.view(), &lips).unwrap();
        prop_assert!(l >= per_frame_mean - 1e-9);
        prop_assert_eq!(lve(gt.view(), gt.view(), &lips).unwrap(), 0.0);
    }

    #[test]
    fn dtw_is_symmetric_and_zero_on_self(a in prop::collection::vec(-2.0f64..2.0, 2..12), b in prop::collection::vec(-2.0f64..2.0, 2..12)) {
        let x = Array2::from_shape_vec((a.len(), 1), a).unwrap();
        let y = Array2::from_shape_vec((b.len(), 1), b).unwrap();
        prop_assert!((dtw(x.view(), y.view()).unwrap() - dtw(y.view(), x.view()).unwrap()).abs() < 1e-12);
        prop_assert_eq!(dtw(x.view(), x.view()).unwrap(), 0.0);
    }
}

#[test]
fn style_code_width_does_not_depend_on_length() {
    let cfg = EncoderConfig {
        style_dim: 8,
        content_dim: 8,
        audio_dim: 8,
        model_dim: 16,
        heads: 2,
        layers: 1,
        tcn_channels: 8,
        frontend_channels: 8,
        ..EncoderConfig::default()
    };
    let mut p = ParamStore::new(1, DType::F32);
    let enc = StyleEncoder::new(&mut p, "style", &cfg, 12).unwrap();
    for t in [16, 25, 60] {
        let x = Tensor::zeros((2, t, 12), DType::F32, &Device::Cpu).unwrap();
        assert_eq!(enc.forward(&x).unwrap().dims(), &[2, 8]);
    }
}

#[test]
fn template_lip_mask_is_sorted() {
    let t = TemplateMesh::new(Array2::zeros((5, 3)), vec![4, 1, 1]).unwrap();
    assert_eq!(t.lip_mask, vec![1, 4]);
}
