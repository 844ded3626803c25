use proptest::prelude::*;

use invoamc_core::nn::{
    involution_aggregate, softmax_xent, BatchNorm, Involution, Layer, Mode, Param, Window,
};
use invoamc_core::signal::{awgn, awgn_noise, modulate, Shaping};
use invoamc_core::train::{argmax, pr_cc, report_from_predictions, sgd_step};
use invoamc_core::{ModulationFormat, Rng, SignalFrame, Tensor};

fn format_strategy() -> impl Strategy<Value = ModulationFormat> {
    prop::sample::select(ModulationFormat::ALL.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pr_cc_is_mean_recall_for_balanced_classes(k in 2usize..8, per_class in 1u64..40, seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let m: Vec<Vec<u64>> = (0..k)
            .map(|_| {
                let mut row = vec![0u64; k];
                for _ in 0..per_class {
                    row[rng.below(k)] += 1;
                }
                row
            })
            .collect();
        let mean_recall = (0..k).map(|c| m[c][c] as f64 / per_class as f64).sum::<f64>() / k as f64;
        prop_assert!((pr_cc(&m) - mean_recall).abs() < 1e-12);
    }

    #[test]
    fn argmax_ignores_a_common_shift(row in prop::collection::vec(-100i32..100, 1..12), shift in -1000i32..1000) {
        let a: Vec<f64> = row.iter().map(|&v| v as f64).collect();
        let b: Vec<f64> = a.iter().map(|v| v + shift as f64).collect();
        prop_assert_eq!(argmax(&a), argmax(&b));
    }

    #[test]
    fn softmax_rows_are_distributions(b in 1usize..8, k in 2usize..10, scale in 0.1f64..500.0, seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let logits: Tensor<f64> = rng.normal(&[b, k], 0.0, scale).unwrap();
        let labels: Vec<usize> = (0..b).map(|_| rng.below(k)).collect();
        let out = softmax_xent(&logits, &labels).unwrap();
        prop_assert!(out.loss.is_finite() && out.loss >= 0.0);
        for row in out.probs.data().chunks(k) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn delta_kernel_reproduces_input(
        b in 1usize..3, cpg in 1usize..4, groups in prop::sample::select(vec![1usize, 2, 4]),
        k in prop::sample::select(vec![1usize, 3, 5, 7]), w in 1usize..17, seed in any::<u64>(),
    ) {
        let mut rng = Rng::new(seed);
        let c = cpg * groups;
        let x: Tensor<f64> = rng.normal(&[b, c, 1, w], 0.0, 1.0).unwrap();
        let field = Tensor::from_fn(&[b, groups, k, 1, w], |i| if (i / w) % k == k / 2 { 1.0 } else { 0.0 }).unwrap();
        let y = involution_aggregate(&x, &field, &Window::same((1, k), (1, 1))).unwrap();
        prop_assert_eq!(y.data(), x.data());
    }

    #[test]
    fn channels_in_a_group_share_the_kernel(cpg in 1usize..4, groups in prop::sample::select(vec![1usize, 2, 4]), w in 2usize..12, seed in any::<u64>()) {
        // scaling one channel scales only that channel's output
        let mut rng = Rng::new(seed);
        let c = cpg * groups;
        let x: Tensor<f64> = rng.normal(&[1, c, 1, w], 0.0, 1.0).unwrap();
        let field: Tensor<f64> = rng.normal(&[1, groups, 3, 1, w], 0.0, 1.0).unwrap();
        let win = Window::same((1, 3), (1, 1));
        let y = involution_aggregate(&x, &field, &win).unwrap();
        let target = rng.below(c);
        let x2 = Tensor::from_fn(x.dims(), |i| if i / w == target { 2.0 * x.data()[i] } else { x.data()[i] }).unwrap();
        let y2 = involution_aggregate(&x2, &field, &win).unwrap();
        for i in 0..c * w {
            let want = if i / w == target { 2.0 * y.data()[i] } else { y.data()[i] };
            prop_assert!((y2.data()[i] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn involution_output_shape(b in 1usize..3, groups in prop::sample::select(vec![1usize, 2, 4]), w in 1usize..20, seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let c = 4 * groups;
        let mut inv = Involution::<f64>::new(c, (1, 7), groups, 4, (1, 1), &mut rng).unwrap();
        let x: Tensor<f64> = rng.normal(&[b, c, 1, w], 0.0, 1.0).unwrap();
        let (y, _) = inv.forward(&x, Mode::Eval).unwrap();
        prop_assert_eq!(y.dims(), x.dims());
    }

    #[test]
    fn batchnorm_training_output_is_standardized(b in 1usize..4, c in 1usize..5, w in 4usize..32, mean in -5.0f64..5.0, seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let mut bn = BatchNorm::<f64>::new(c).unwrap();
        let x: Tensor<f64> = rng.normal(&[b, c, 1, w], mean, 2.0).unwrap();
        let (y, _) = bn.forward(&x, Mode::Train).unwrap();
        for ch in 0..c {
            let vals: Vec<f64> = (0..b).flat_map(|bi| y.data()[(bi * c + ch) * w..][..w].to_vec()).collect();
            let n = vals.len() as f64;
            let m = vals.iter().sum::<f64>() / n;
            prop_assert!(m.abs() < 1e-10);
            let v = vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
            prop_assert!(v <= 1.0 + 1e-12 && v > 0.98);
        }
    }

    #[test]
    fn sgd_without_gradient_or_decay_only_decays_velocity(p0 in -10.0f64..10.0, v0 in -1.0f64..1.0, m in 0.0f64..0.99) {
        let mut p = Param::new(Tensor::from_vec(&[1], vec![p0]).unwrap(), true);
        let mut v = Tensor::from_vec(&[1], vec![v0]).unwrap();
        sgd_step(&mut p, &mut v, 0.1, m, 0.0).unwrap();
        prop_assert_eq!(v.data()[0], m * v0);
        prop_assert_eq!(p.value.data()[0], p0 - 0.1 * (m * v0));
    }

    #[test]
    fn awgn_adds_exactly_its_noise(fmt in format_strategy(), snr in -20.0f64..30.0, seed in any::<u64>()) {
        let shaping = Shaping { n: 128, sps: 4, rolloff: 0.35, span: 4, random_phase: true };
        let mut rng = Rng::new(seed);
        let s = modulate(fmt, 40, &mut rng, &shaping).unwrap();
        let x = awgn(&s, snr, &mut rng.clone()).unwrap();
        let w = awgn_noise(&s, snr, &mut rng).unwrap();
        for ((xv, sv), wv) in x.iter().zip(&s).zip(&w) {
            prop_assert_eq!(*xv, sv + wv);
        }
    }

    #[test]
    fn report_accuracy_is_trace_over_total(n in 1usize..200, k in 2usize..7, seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let snrs = [-10.0, 0.0, 10.0];
        let frames: Vec<SignalFrame> = (0..n)
            .map(|_| SignalFrame { iq: Tensor::zeros(&[2, 4]).unwrap(), label: rng.below(k), snr_db: snrs[rng.below(3)] })
            .collect();
        let preds: Vec<usize> = (0..n).map(|_| rng.below(k)).collect();
        let names: Vec<String> = (0..k).map(|c| format!("c{c}")).collect();
        let r = report_from_predictions(&frames, &preds, &names).unwrap();
        prop_assert!(r.per_snr_accuracy.windows(2).all(|p| p[0].snr_db < p[1].snr_db));
        for (a, m) in r.per_snr_accuracy.iter().zip(&r.per_snr_confusion) {
            let total: u64 = m.iter().flatten().sum();
            let trace: u64 = (0..k).map(|i| m[i][i]).sum();
            prop_assert!((0.0..=1.0).contains(&a.accuracy));
            prop_assert_eq!(a.accuracy, trace as f64 / total as f64);
        }
        let pooled: u64 = r.confusion.iter().flatten().sum();
        prop_assert_eq!(pooled, n as u64);
    }
}
