use serde::{Deserialize, Serialize};

use crate::kernel::{Graph, Tensor, Var};

use super::network::SegmentOutputs;
use super::ModelError;

/// Discriminator outputs are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]`
/// inside every log.
pub const PROB_CLAMP: f64 = 1e-7;

/// Weights of the three reconstruction terms and the adversarial term.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
    pub beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha1: 10.0,
            alpha2: 10.0,
            alpha3: 10.0,
            beta: 1.0,
        }
    }
}

impl LossWeights {
    pub fn alphas(&self) -> [f64; 3] {
        [self.alpha1, self.alpha2, self.alpha3]
    }
}

fn check_probabilities(values: &[f64]) -> Result<(), ModelError> {
    match values.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        Some(p) => Err(ModelError::Contract(format!("discriminator output {p} is not a probability"))),
        None => Ok(()),
    }
}

fn clamp_p(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n.max(1) as f64
}

/// Generator objective from precomputed per-segment MSEs:
/// `Σ αᵢ·MSEᵢ + β·mean(log(1 − D(fake)))`, the last term only when
/// `adversarial` is set.
pub fn generator_objective(
    mse: [f64; 3],
    d_fake: &[f64],
    w: &LossWeights,
    adversarial: bool,
) -> Result<f64, ModelError> {
    let recon: f64 = w.alphas().iter().zip(mse).map(|(a, m)| a * m).sum();
    if !adversarial {
        return Ok(recon);
    }
    check_probabilities(d_fake)?;
    Ok(recon + w.beta * mean(d_fake.iter().map(|&p| (1.0 - clamp_p(p)).ln())))
}

/// `-mean(log D(real)) - mean(log(1 - D(fake)))`.
pub fn discriminator_objective(d_real: &[f64], d_fake: &[f64]) -> Result<f64, ModelError> {
    check_probabilities(d_real)?;
    check_probabilities(d_fake)?;
    Ok(-mean(d_real.iter().map(|&p| clamp_p(p).ln())) - mean(d_fake.iter().map(|&p| (1.0 - clamp_p(p)).ln())))
}

/// Mean squared error over batch, frames and coordinates.
pub fn segment_mse(g: &mut Graph, pred: &[Var], truth: Var) -> Result<Var, ModelError> {
    let stacked = g.concat_rows(pred)?;
    let diff = g.sub(stacked, truth)?;
    let sq = g.square(diff);
    Ok(g.mean(sq))
}

/// `mean(log(1 - clamp(d)))`, or `-mean(log(clamp(d)))` for the
/// non-saturating variant.
pub fn adversarial_term(g: &mut Graph, d_fake: Var, non_saturating: bool) -> Result<Var, ModelError> {
    check_probabilities(g.value(d_fake).data())?;
    let d = g.clamp(d_fake, PROB_CLAMP, 1.0 - PROB_CLAMP);
    if non_saturating {
        let l = g.log(d)?;
        let m = g.mean(l);
        Ok(g.scale(m, -1.0))
    } else {
        let om = g.one_minus(d);
        let l = g.log(om)?;
        Ok(g.mean(l))
    }
}

/// Terms of the generator loss as graph nodes.
#[derive(Clone, Copy, Debug)]
pub struct GeneratorLoss {
    pub total: Var,
    pub mse: [Var; 3],
    /// `β·adversarial_term`, present only when the adversarial term is on.
    pub adversarial: Option<Var>,
}

/// Generator loss on the graph. `truth` holds each segment's future,
/// stacked time-major like the predictions.
pub fn generator_loss(
    g: &mut Graph,
    pred: &SegmentOutputs,
    truth: &[Var; 3],
    d_fake: Option<Var>,
    w: &LossWeights,
    adversarial_enabled: bool,
    non_saturating: bool,
) -> Result<GeneratorLoss, ModelError> {
    let mse = [
        segment_mse(g, &pred[0], truth[0])?,
        segment_mse(g, &pred[1], truth[1])?,
        segment_mse(g, &pred[2], truth[2])?,
    ];
    let terms: Vec<Var> = mse.iter().zip(w.alphas()).map(|(m, a)| g.scale(*m, a)).collect();
    let mut total = g.add(terms[0], terms[1])?;
    total = g.add(total, terms[2])?;
    let mut adversarial = None;
    if adversarial_enabled {
        let d = d_fake.ok_or_else(|| ModelError::Contract("adversarial term needs discriminator outputs".into()))?;
        let adv = adversarial_term(g, d, non_saturating)?;
        let adv = g.scale(adv, w.beta);
        total = g.add(total, adv)?;
        adversarial = Some(adv);
    }
    Ok(GeneratorLoss {
        total,
        mse,
        adversarial,
    })
}

/// Discriminator loss on the graph.
pub fn discriminator_loss(g: &mut Graph, d_real: Var, d_fake: Var) -> Result<Var, ModelError> {
    check_probabilities(g.value(d_real).data())?;
    check_probabilities(g.value(d_fake).data())?;
    let r = g.clamp(d_real, PROB_CLAMP, 1.0 - PROB_CLAMP);
    let lr = g.log(r)?;
    let real = g.mean(lr);
    let fake = adversarial_term(g, d_fake, false)?;
    let s = g.add(real, fake)?;
    Ok(g.scale(s, -1.0))
}

/// Constant column of probabilities, for feeding plain values to the graph
/// losses.
pub fn probabilities(g: &mut Graph, p: &[f64]) -> Result<Var, ModelError> {
    let t = Tensor::matrix(p.len(), 1, p.to_vec())?;
    Ok(g.constant(t))
}

#[cfg(test)]
mod tests {
    use super::*;

    const LN2: f64 = std::f64::consts::LN_2;

    #[test]
    fn discriminator_loss_at_half() {
        let v = discriminator_objective(&[0.5, 0.5], &[0.5]).unwrap();
        assert!((v - 2.0 * LN2).abs() < 1e-15);
        assert!((v - 1.386_294).abs() < 1e-6);
    }

    #[test]
    fn discriminator_loss_limits() {
        let e = PROB_CLAMP;
        let perfect = discriminator_objective(&[1.0 - e], &[e]).unwrap();
        assert!((perfect - 2.0 * e).abs() < 1e-12, "{perfect}");
        let fooled = discriminator_objective(&[e], &[1.0 - e]).unwrap();
        assert!((fooled + 2.0 * e.ln()).abs() < 1e-6, "{fooled}");
        // outputs beyond the clamp saturate at the same values
        assert_eq!(discriminator_objective(&[1.0], &[0.0]).unwrap(), perfect);
    }

    #[test]
    fn generator_objective_values() {
        let w = LossWeights::default();
        assert_eq!(generator_objective([0.0; 3], &[], &w, false).unwrap(), 0.0);
        let v = generator_objective([0.01; 3], &[0.5], &w, true).unwrap();
        assert!((v - (0.3 - LN2)).abs() < 1e-15);
        assert!((v + 0.393_147).abs() < 1e-6);
        let capped = generator_objective([0.0; 3], &[1.0], &w, true).unwrap();
        assert!((capped - PROB_CLAMP.ln()).abs() < 1e-8, "{capped}");
    }

    #[test]
    fn nan_probability_is_contract_error() {
        let w = LossWeights::default();
        assert!(matches!(
            generator_objective([0.0; 3], &[f64::NAN], &w, true),
            Err(ModelError::Contract(_))
        ));
        assert!(discriminator_objective(&[1.5], &[0.5]).is_err());
        // disabled adversarial term ignores the probabilities entirely
        assert!(generator_objective([0.0; 3], &[f64::NAN], &w, false).is_ok());
    }

    #[test]
    fn graph_losses_agree_with_plain_objectives() {
        let mut g = Graph::new();
        let real = probabilities(&mut g, &[0.9, 0.3, 0.6]).unwrap();
        let fake = probabilities(&mut g, &[0.2, 0.7, 1.0]).unwrap();
        let ld = discriminator_loss(&mut g, real, fake).unwrap();
        let expect = discriminator_objective(&[0.9, 0.3, 0.6], &[0.2, 0.7, 1.0]).unwrap();
        assert!((g.value(ld).data()[0] - expect).abs() < 1e-14);

        // predictions offset by 0.1 everywhere give MSE 0.01 per segment
        let mut pred: SegmentOutputs = Default::default();
        let mut truth = Vec::new();
        for (s, d) in [56, 20, 80].into_iter().enumerate() {
            let t = Tensor::zeros(&[4, d]);
            truth.push(g.constant(t));
            pred[s] = vec![
                g.constant(Tensor::full(&[2, d], 0.1)),
                g.constant(Tensor::full(&[2, d], -0.1)),
            ];
        }
        let half = probabilities(&mut g, &[0.5, 0.5]).unwrap();
        let w = LossWeights::default();
        let lg = generator_loss(&mut g, &pred, &[truth[0], truth[1], truth[2]], Some(half), &w, true, false).unwrap();
        assert!((g.value(lg.total).data()[0] + 0.393_147).abs() < 1e-6);
        for m in lg.mse {
            assert!((g.value(m).data()[0] - 0.01).abs() < 1e-15);
        }
    }
}
