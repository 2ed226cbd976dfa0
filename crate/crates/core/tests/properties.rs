use dyadcast::data::{normalize_dataset, synth_dyads, StatsWindow};
use dyadcast::eval::{baseline_constant, score_forecasts};
use dyadcast::kernel::{clip_global_norm, Graph, Tensor};
use dyadcast::model::{ModelConfig, ModelParams};
use dyadcast::train::{read_checkpoint, write_checkpoint, Checkpoint, Optimizers, TrainConfig, TrainHistory};
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-10.0f64..10.0, rows * cols).prop_map(move |d| Tensor::matrix(rows, cols, d).unwrap())
}

fn matmul_pair() -> impl Strategy<Value = (Tensor, Tensor)> {
    (1usize..7, 1usize..7, 1usize..7).prop_flat_map(|(m, k, n)| (matrix(m, k), matrix(k, n)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn matmul_matches_naive_product((a, b) in matmul_pair()) {
        let c = a.matmul(&b).unwrap();
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let want: f64 = (0..a.cols()).map(|k| a.get(i, k) * b.get(k, j)).sum();
                prop_assert!((c.get(i, j) - want).abs() <= 1e-12 * (1.0 + want.abs()));
            }
        }
    }

    #[test]
    fn product_gradients_are_the_other_factor((a, b) in (1usize..5, 1usize..5).prop_flat_map(|(r, c)| (matrix(r, c), matrix(r, c)))) {
        let mut g = Graph::new();
        let (va, vb) = (g.param(a.clone()), g.param(b.clone()));
        let p = g.mul(va, vb).unwrap();
        let s = g.sum(p);
        let mut grads = g.backward(s).unwrap();
        prop_assert_eq!(grads.take(va), b);
        prop_assert_eq!(grads.take(vb), a);
    }

    #[test]
    fn clipping_bounds_norm_and_keeps_direction(
        data in prop::collection::vec(-100.0f64..100.0, 1..40),
        max_norm in 0.1f64..50.0,
    ) {
        let original = Tensor::vector(data).unwrap();
        let mut grads = vec![original.clone()];
        let before = clip_global_norm(&mut grads, max_norm);
        let after = grads[0].squared_norm().sqrt();
        prop_assert!(before <= max_norm || after <= max_norm * (1.0 + 1e-12));
        let k = if before > max_norm { max_norm / before } else { 1.0 };
        for (x, y) in original.data().iter().zip(grads[0].data()) {
            prop_assert!((x * k - y).abs() <= 1e-12 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn scores_are_zero_only_for_exact_forecasts(seed in 0u64..1000, shift in 1e-3f64..1.0) {
        let data = normalize_dataset(&synth_dyads(seed, 2, 0.8), StatsWindow::Observed).unwrap();
        let exact: Vec<_> = data.iter().map(|s| s.target.future().to_vec()).collect();
        let zero = score_forecasts(&data, &exact).unwrap();
        prop_assert_eq!([zero.mean.face, zero.mean.body, zero.mean.hands], [0.0; 3]);

        let moved: Vec<_> = exact
            .iter()
            .map(|fs| fs.iter().map(|f| {
                let mut f = *f;
                f.points_mut().iter_mut().for_each(|p| p[0] += shift);
                f
            }).collect::<Vec<_>>())
            .collect();
        let off = score_forecasts(&data, &moved).unwrap();
        prop_assert!(off.mean.face > 0.0 && off.mean.body > 0.0 && off.mean.hands > 0.0);

        let baseline: Vec<_> = data.iter().map(|s| baseline_constant(s.target.observed())).collect();
        let base = score_forecasts(&data, &baseline).unwrap();
        prop_assert!(base.curve.body.iter().all(|v| v.is_finite() && *v >= 0.0));
    }

    #[test]
    fn checkpoints_round_trip_bit_exactly(seed in any::<u64>(), hidden in 1usize..6, context in 1usize..5) {
        let model = ModelConfig { observed_len: 4, horizon: 2, ..ModelConfig::uniform(hidden, context) };
        let config = TrainConfig { model, seed, ..TrainConfig::default() };
        let params = ModelParams::init(model, seed);
        let ckpt = Checkpoint {
            optimizers: Optimizers::new(&params),
            config,
            params,
            history: TrainHistory::default(),
        };
        let bytes = write_checkpoint(&ckpt);
        prop_assert_eq!(read_checkpoint(&bytes).unwrap(), ckpt);
    }
}
