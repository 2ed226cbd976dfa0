//! Partner encoder, segment generators and discriminator, plus the
//! adversarial training losses.

pub mod loss;
pub mod network;
mod params;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{DataError, LandmarkFrame, FRAME_DIM};
use crate::kernel::gradcheck::{check_gradients, GradCheck};
use crate::kernel::{Graph, KernelError, Tensor, Var};

pub use loss::{
    discriminator_loss, discriminator_objective, generator_loss, generator_objective, LossWeights, PROB_CLAMP,
};
pub use network::{BatchInputs, SegmentOutputs};
pub use params::{
    DiscriminatorParams, EncoderParams, GeneratorParams, ModelConfig, ModelParams, SegmentGeneratorParams,
};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("invalid model input: {0}")]
    Input(String),
    #[error("contract violation: {0}")]
    Contract(String),
}

pub fn bind_generator(g: &mut Graph, p: &GeneratorParams, trainable: bool) -> GeneratorParams<Var> {
    p.map(&mut |t| if trainable { g.param(t.clone()) } else { g.constant(t.clone()) })
}

pub fn bind_discriminator(g: &mut Graph, p: &DiscriminatorParams, trainable: bool) -> DiscriminatorParams<Var> {
    p.map(&mut |t| if trainable { g.param(t.clone()) } else { g.constant(t.clone()) })
}

/// Rebuilds bound parameters from vars listed in visiting order.
fn rebind<P>(vars: &[Var], map: impl FnOnce(&mut dyn FnMut() -> Var) -> P) -> P {
    let mut i = 0;
    map(&mut || {
        i += 1;
        vars[i - 1]
    })
}

/// Context vector (length C) for an observed partner window.
pub fn encode_partner(partner_obs: &[LandmarkFrame], p: &EncoderParams) -> Result<Tensor, ModelError> {
    if partner_obs.is_empty() {
        return Err(ModelError::Input("empty partner window".into()));
    }
    let mut g = Graph::new();
    let enc = p.map(&mut |t| g.constant(t.clone()));
    let x = g.constant(network::stack_time_major(&[partner_obs], 0..FRAME_DIM)?);
    let c = network::encode_partner_graph(&mut g, &enc, x, partner_obs.len())?;
    let len = g.value(c).len();
    Ok(g.value(c).clone().reshape(vec![len])?)
}

/// Forecast for one segment. `observed` is `steps × d_seg`, `context` has
/// length C; returns `horizon × d_seg`.
pub fn generate_segment(
    observed: &Tensor,
    context: &Tensor,
    p: &SegmentGeneratorParams,
    horizon: usize,
) -> Result<Tensor, ModelError> {
    let (steps, d) = observed.dims2();
    if d != p.segment.dim() {
        return Err(ModelError::Input(format!(
            "{} generator expects {} columns, got {d}",
            p.segment.name(),
            p.segment.dim()
        )));
    }
    let mut g = Graph::new();
    let gen = p.map(&mut |t| g.constant(t.clone()));
    let obs = g.constant(observed.clone());
    let ctx = g.constant(context.clone().reshape(vec![1, context.len()])?);
    let out = network::generate_segment_graph(&mut g, &gen, obs, ctx, steps, horizon)?;
    let rows = g.concat_rows(&out)?;
    Ok(g.value(rows).clone())
}

/// Forecasts the target's next `config.horizon` frames for each
/// `(target observed, partner observed)` pair. Inputs must be normalized.
pub fn forecast_batch(
    pairs: &[(&[LandmarkFrame], &[LandmarkFrame])],
    params: &ModelParams,
) -> Result<Vec<Vec<LandmarkFrame>>, ModelError> {
    let cfg = &params.config;
    for (t, p) in pairs {
        if t.len() != cfg.observed_len || p.len() != cfg.observed_len {
            return Err(ModelError::Input(format!(
                "expected {} observed frames, got target {} / partner {}",
                cfg.observed_len,
                t.len(),
                p.len()
            )));
        }
    }
    let targets: Vec<&[LandmarkFrame]> = pairs.iter().map(|p| p.0).collect();
    let partners: Vec<&[LandmarkFrame]> = pairs.iter().map(|p| p.1).collect();
    let inputs = BatchInputs::new(&targets, &partners)?;
    let mut g = Graph::new();
    let gen = bind_generator(&mut g, &params.generator, false);
    let out = network::forecast_graph(&mut g, &gen, &inputs, cfg.horizon)?;
    let merged = network::merge_steps(&mut g, &out)?;
    Ok(frames_from_stack(g.value(merged), pairs.len()))
}

pub fn forecast(
    target_obs: &[LandmarkFrame],
    partner_obs: &[LandmarkFrame],
    params: &ModelParams,
) -> Result<Vec<LandmarkFrame>, ModelError> {
    Ok(forecast_batch(&[(target_obs, partner_obs)], params)?.remove(0))
}

/// Splits a time-major `steps·batch × 156` stack back into per-sample frames.
pub fn frames_from_stack(stack: &Tensor, batch: usize) -> Vec<Vec<LandmarkFrame>> {
    let steps = stack.rows() / batch;
    (0..batch)
        .map(|b| {
            (0..steps)
                .map(|t| LandmarkFrame::from_flat(stack.row(t * batch + b)).unwrap_or_default())
                .collect()
        })
        .collect()
}

/// Probability that `motion` is a real future window.
pub fn discriminate(motion: &[LandmarkFrame], p: &DiscriminatorParams) -> Result<f64, ModelError> {
    if motion.is_empty() {
        return Err(ModelError::Input("empty motion".into()));
    }
    let mut g = Graph::new();
    let d = bind_discriminator(&mut g, p, false);
    let x = g.constant(network::stack_time_major(&[motion], 0..FRAME_DIM)?);
    let prob = network::discriminate_graph(&mut g, &d, x, motion.len())?;
    Ok(g.value(prob).data()[0])
}

/// Small configuration used by the model-level gradient checks.
pub fn toy_config() -> ModelConfig {
    ModelConfig {
        observed_len: 3,
        horizon: 2,
        encoder_hidden: 4,
        generator_hidden: 4,
        discriminator_hidden: 4,
        context_dim: 3,
    }
}

fn random_frames(rng: &mut ChaCha8Rng, n: usize) -> Vec<LandmarkFrame> {
    (0..n)
        .map(|_| {
            let t = Tensor::uniform(&[FRAME_DIM], 1.0, rng);
            LandmarkFrame::from_flat(t.data()).unwrap_or_default()
        })
        .collect()
}

/// Finite-difference checks of the full generator and discriminator losses
/// on a two-sample batch of the toy configuration.
pub fn model_gradient_suite(seed: u64) -> Result<Vec<GradCheck>, ModelError> {
    let cfg = toy_config();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ModelParams::init(cfg, seed);
    // non-zero biases so that every parameter has a generic gradient
    for (_, t) in params.generator.named_mut().into_iter().chain(params.discriminator.named_mut()) {
        let noise = Tensor::uniform(t.shape(), 0.1, &mut rng);
        for (v, n) in t.data_mut().iter_mut().zip(noise.data()) {
            *v += n;
        }
    }
    let total = cfg.observed_len + cfg.horizon;
    let targets: Vec<Vec<LandmarkFrame>> = (0..2).map(|_| random_frames(&mut rng, total)).collect();
    let partners: Vec<Vec<LandmarkFrame>> = (0..2).map(|_| random_frames(&mut rng, total)).collect();
    let n = cfg.observed_len;
    let t_obs: Vec<&[LandmarkFrame]> = targets.iter().map(|s| &s[..n]).collect();
    let p_obs: Vec<&[LandmarkFrame]> = partners.iter().map(|s| &s[..n]).collect();
    let t_fut: Vec<&[LandmarkFrame]> = targets.iter().map(|s| &s[n..]).collect();
    let inputs = BatchInputs::new(&t_obs, &p_obs)?;
    let truth_segments = crate::data::Segment::ALL
        .map(|s| network::stack_time_major(&t_fut, s.columns()))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    let real = network::stack_time_major(&t_fut, 0..FRAME_DIM)?;
    let weights = LossWeights {
        alpha1: 10.0,
        alpha2: 7.0,
        alpha3: 3.0,
        beta: 1.0,
    };

    let to_kernel = |e: ModelError| match e {
        ModelError::Kernel(k) => k,
        other => KernelError::InvalidArgument(other.to_string()),
    };

    let gen_tensors: Vec<Tensor> = params.generator.named().into_iter().map(|(_, t)| t.clone()).collect();
    let gen_template = &params.generator;
    let disc_frozen = &params.discriminator;
    let horizon = cfg.horizon;
    let build_g = |g: &mut Graph, vars: &[Var]| -> Result<Var, KernelError> {
        let gen = rebind(vars, |next| gen_template.map(&mut |_| next()));
        (|| {
            let out = network::forecast_graph(g, &gen, &inputs, horizon)?;
            let merged = network::merge_steps(g, &out)?;
            let d = bind_discriminator(g, disc_frozen, false);
            let d_fake = network::discriminate_graph(g, &d, merged, horizon)?;
            let truth = [
                g.constant(truth_segments[0].clone()),
                g.constant(truth_segments[1].clone()),
                g.constant(truth_segments[2].clone()),
            ];
            let l = generator_loss(g, &out, &truth, Some(d_fake), &weights, true, false)?;
            Ok(l.total)
        })()
        .map_err(to_kernel)
    };
    let mut out = vec![check_gradients("generator loss", &gen_tensors, build_g, None, &mut rng)?];

    let fake = {
        let mut g = Graph::new();
        let gen = bind_generator(&mut g, &params.generator, false);
        let o = network::forecast_graph(&mut g, &gen, &inputs, horizon)?;
        let m = network::merge_steps(&mut g, &o)?;
        g.value(m).clone()
    };
    let disc_tensors: Vec<Tensor> = params.discriminator.named().into_iter().map(|(_, t)| t.clone()).collect();
    let build_d = |g: &mut Graph, vars: &[Var]| -> Result<Var, KernelError> {
        let d = rebind(vars, |next| disc_frozen.map(&mut |_| next()));
        (|| {
            let r = g.constant(real.clone());
            let f = g.constant(fake.clone());
            let d_real = network::discriminate_graph(g, &d, r, horizon)?;
            let d_fake = network::discriminate_graph(g, &d, f, horizon)?;
            discriminator_loss(g, d_real, d_fake)
        })()
        .map_err(to_kernel)
    };
    out.push(check_gradients("discriminator loss", &disc_tensors, build_d, None, &mut rng)?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Segment;

    fn random_seq(seed: u64, n: usize) -> Vec<LandmarkFrame> {
        random_frames(&mut ChaCha8Rng::seed_from_u64(seed), n)
    }

    fn small() -> ModelConfig {
        ModelConfig {
            observed_len: 6,
            horizon: 4,
            ..ModelConfig::uniform(5, 4)
        }
    }

    #[test]
    fn zero_encoder_outputs_dense_bias() {
        let mut p = ModelParams::init(ModelConfig::uniform(4, 8), 0).generator.encoder;
        for t in [&mut p.lstm.w_ih, &mut p.lstm.w_hh, &mut p.lstm.bias] {
            t.data_mut().fill(0.0);
        }
        p.dense.weight.data_mut().fill(0.0);
        let zeros = vec![LandmarkFrame::default(); 4];
        let c = encode_partner(&zeros, &p).unwrap();
        assert_eq!(c, Tensor::zeros(&[8]));
        p.dense.bias.data_mut().copy_from_slice(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
        assert_eq!(encode_partner(&zeros, &p).unwrap().data(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
    }

    #[test]
    fn context_length_follows_config() {
        for c in [8, 64] {
            let p = ModelParams::init(ModelConfig::uniform(4, c), 1);
            assert_eq!(encode_partner(&random_seq(2, 5), &p.generator.encoder).unwrap().len(), c);
        }
    }

    #[test]
    fn encoder_is_order_sensitive() {
        let p = ModelParams::init(ModelConfig::uniform(6, 5), 3);
        let frames = random_seq(4, 4);
        let mut swapped = frames.clone();
        swapped.swap(0, 3);
        let a = encode_partner(&frames, &p.generator.encoder).unwrap();
        let b = encode_partner(&swapped, &p.generator.encoder).unwrap();
        assert_ne!(a, b);
        assert_eq!(a, encode_partner(&frames, &p.generator.encoder).unwrap());
    }

    #[test]
    fn zero_output_layer_is_constant_pose() {
        let mut p = ModelParams::init(small(), 5);
        p.zero_output_layers();
        for seg in Segment::ALL {
            let obs = Tensor::uniform(&[6, seg.dim()], 1.0, &mut ChaCha8Rng::seed_from_u64(6));
            let c = Tensor::uniform(&[4], 1.0, &mut ChaCha8Rng::seed_from_u64(7));
            let out = generate_segment(&obs, &c, p.generator.segment(seg), 4).unwrap();
            assert_eq!(out.shape(), &[4, seg.dim()]);
            for t in 0..4 {
                assert_eq!(out.row(t), obs.row(5));
            }
        }
    }

    #[test]
    fn generator_output_shapes() {
        let p = ModelParams::init(ModelConfig::uniform(4, 3), 8);
        let c = Tensor::zeros(&[3]);
        for (seg, d) in [(Segment::Face, 56), (Segment::Body, 20), (Segment::Hands, 80)] {
            let obs = Tensor::zeros(&[100, d]);
            let out = generate_segment(&obs, &c, p.generator.segment(seg), 50).unwrap();
            assert_eq!(out.shape(), &[50, d]);
        }
        let wrong = Tensor::zeros(&[10, 21]);
        assert!(generate_segment(&wrong, &c, &p.generator.body, 5).is_err());
    }

    #[test]
    fn last_observed_frame_drives_first_prediction() {
        let p = ModelParams::init(small(), 9);
        let seg = &p.generator.body;
        let mut obs = Tensor::uniform(&[6, 20], 1.0, &mut ChaCha8Rng::seed_from_u64(1));
        let c = Tensor::uniform(&[4], 1.0, &mut ChaCha8Rng::seed_from_u64(2));
        let base = generate_segment(&obs, &c, seg, 4).unwrap();
        obs.data_mut()[5 * 20 + 3] += 0.1;
        let moved = generate_segment(&obs, &c, seg, 4).unwrap();
        for t in 0..4 {
            assert_ne!(base.row(t), moved.row(t), "step {t}");
        }
    }

    #[test]
    fn rollout_is_causal() {
        // a longer rollout never changes earlier predictions
        let p = ModelParams::init(small(), 10);
        let obs = Tensor::uniform(&[6, 56], 1.0, &mut ChaCha8Rng::seed_from_u64(3));
        let c = Tensor::uniform(&[4], 1.0, &mut ChaCha8Rng::seed_from_u64(4));
        let long = generate_segment(&obs, &c, &p.generator.face, 7).unwrap();
        for h in 1..7 {
            let short = generate_segment(&obs, &c, &p.generator.face, h).unwrap();
            assert_eq!(short.data(), &long.data()[..h * 56]);
        }
    }

    #[test]
    fn forecast_shape_and_segment_consistency() {
        let cfg = ModelConfig::uniform(4, 3);
        let p = ModelParams::init(cfg, 11);
        let target = random_seq(12, 100);
        let partner = random_seq(13, 100);
        let pred = forecast(&target, &partner, &p).unwrap();
        assert_eq!(pred.len(), 50);
        assert_eq!(pred[0].points().len(), 78);

        let c = encode_partner(&partner, &p.generator.encoder).unwrap();
        for seg in Segment::ALL {
            let obs: Vec<Vec<f64>> = target.iter().map(|f| f.segment_flat(seg).collect()).collect();
            let obs = Tensor::from_rows(&obs).unwrap();
            let direct = generate_segment(&obs, &c, p.generator.segment(seg), 50).unwrap();
            for (t, f) in pred.iter().enumerate() {
                let split = f.split_segments();
                let got: Vec<f64> = split.segment(seg).iter().flatten().copied().collect();
                assert_eq!(got.as_slice(), direct.row(t));
            }
        }
    }

    #[test]
    fn zero_weight_forecast_repeats_last_frame() {
        let mut p = ModelParams::init(ModelConfig::uniform(4, 3), 14);
        p.zero_output_layers();
        let target = random_seq(15, 100);
        let pred = forecast(&target, &random_seq(16, 100), &p).unwrap();
        assert!(pred.iter().all(|f| *f == target[99]));
    }

    #[test]
    fn forecast_rejects_wrong_window() {
        let p = ModelParams::init(ModelConfig::uniform(4, 3), 0);
        assert!(matches!(
            forecast(&random_seq(1, 99), &random_seq(2, 99), &p),
            Err(ModelError::Input(_))
        ));
    }

    #[test]
    fn discriminator_range_and_determinism() {
        let mut p = ModelParams::init(ModelConfig::uniform(4, 3), 17).discriminator;
        let motion = random_seq(18, 50);
        let a = discriminate(&motion, &p).unwrap();
        assert!(a > 0.0 && a < 1.0);
        assert_eq!(a, discriminate(&motion, &p).unwrap());
        for (_, t) in p.named_mut() {
            t.data_mut().fill(0.0);
        }
        assert_eq!(discriminate(&motion, &p).unwrap(), 0.5);
    }

    #[test]
    fn full_losses_match_finite_differences() {
        for check in model_gradient_suite(7).unwrap() {
            assert!(check.max_rel_error < 1e-4, "{}: {:e}", check.name, check.max_rel_error);
        }
    }
}
