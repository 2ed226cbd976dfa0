//! The networks expressed on a [`Graph`], batched over samples.
//!
//! Sequences enter as time-major stacks: row `t·batch + b` holds frame `t`
//! of sample `b`, flattened to `x0, y0, x1, y1, …`.

use std::ops::Range;

use crate::data::{LandmarkFrame, Segment};
use crate::kernel::{dense, lstm_cell, lstm_scan, Graph, Tensor, Var};

use super::{DiscriminatorParams, EncoderParams, GeneratorParams, ModelError, SegmentGeneratorParams};

/// Per-step generator outputs, indexed by [`Segment::index`]; each step is
/// `batch × segment.dim()`.
pub type SegmentOutputs = [Vec<Var>; 3];

/// Stacks frames time-major, keeping flattened columns `cols`.
pub fn stack_time_major(seqs: &[&[LandmarkFrame]], cols: Range<usize>) -> Result<Tensor, ModelError> {
    let steps = seqs.first().map_or(0, |s| s.len());
    if seqs.iter().any(|s| s.len() != steps) {
        return Err(ModelError::Input("sequences in a batch differ in length".into()));
    }
    let width = cols.len();
    let mut data = Vec::with_capacity(steps * seqs.len() * width);
    let mut flat = Vec::with_capacity(2 * crate::data::N_LANDMARKS);
    for t in 0..steps {
        for s in seqs {
            flat.clear();
            flat.extend(s[t].flat());
            data.extend_from_slice(&flat[cols.clone()]);
        }
    }
    Ok(Tensor::from_parts(vec![steps * seqs.len(), width], data))
}

/// Network inputs for one batch.
#[derive(Clone, Debug)]
pub struct BatchInputs {
    pub batch: usize,
    pub observed_len: usize,
    /// Target observed window per segment.
    pub target: [Tensor; 3],
    /// Partner observed window, all landmarks.
    pub partner: Tensor,
}

impl BatchInputs {
    pub fn new(targets: &[&[LandmarkFrame]], partners: &[&[LandmarkFrame]]) -> Result<Self, ModelError> {
        if targets.is_empty() || targets.len() != partners.len() {
            return Err(ModelError::Input(format!(
                "{} target and {} partner sequences",
                targets.len(),
                partners.len()
            )));
        }
        let observed_len = targets[0].len();
        if observed_len == 0 || partners[0].len() != observed_len {
            return Err(ModelError::Input(format!(
                "observed windows of {} target and {} partner frames",
                observed_len,
                partners[0].len()
            )));
        }
        let target = [
            stack_time_major(targets, Segment::Face.columns())?,
            stack_time_major(targets, Segment::Body.columns())?,
            stack_time_major(targets, Segment::Hands.columns())?,
        ];
        let partner = stack_time_major(partners, 0..crate::data::FRAME_DIM)?;
        Ok(Self {
            batch: targets.len(),
            observed_len,
            target,
            partner,
        })
    }
}

/// Partner encoder; returns the `batch × C` context.
pub fn encode_partner_graph(
    g: &mut Graph,
    p: &EncoderParams<Var>,
    partner: Var,
    steps: usize,
) -> Result<Var, ModelError> {
    let run = lstm_scan(g, partner, steps, None, &p.lstm)?;
    Ok(dense(g, run.h, &p.dense)?)
}

/// Encodes the observed segment window, then rolls the residual decoder
/// forward `horizon` steps on its own outputs.
pub fn generate_segment_graph(
    g: &mut Graph,
    p: &SegmentGeneratorParams<Var>,
    observed: Var,
    context: Var,
    steps: usize,
    horizon: usize,
) -> Result<Vec<Var>, ModelError> {
    let rows = g.value(observed).rows();
    if steps == 0 || !rows.is_multiple_of(steps) {
        return Err(ModelError::Input(format!("{rows} rows do not split into {steps} steps")));
    }
    let batch = rows / steps;
    let enc = lstm_scan(g, observed, steps, None, &p.encoder)?;
    let (mut h, mut c) = (enc.h, enc.c);
    let mut prev = g.slice_rows(observed, (steps - 1) * batch, steps * batch)?;
    let mut out = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let x = g.concat_cols(&[prev, context])?;
        (h, c) = lstm_cell(g, x, h, c, &p.decoder)?;
        let delta = dense(g, h, &p.output)?;
        prev = g.add(prev, delta)?;
        out.push(prev);
    }
    Ok(out)
}

/// Context from the partner, then one generator per segment.
pub fn forecast_graph(
    g: &mut Graph,
    p: &GeneratorParams<Var>,
    inputs: &BatchInputs,
    horizon: usize,
) -> Result<SegmentOutputs, ModelError> {
    let partner = g.constant(inputs.partner.clone());
    let context = encode_partner_graph(g, &p.encoder, partner, inputs.observed_len)?;
    let mut run = |seg: Segment| -> Result<Vec<Var>, ModelError> {
        let obs = g.constant(inputs.target[seg.index()].clone());
        generate_segment_graph(g, p.segment(seg), obs, context, inputs.observed_len, horizon)
    };
    Ok([run(Segment::Face)?, run(Segment::Body)?, run(Segment::Hands)?])
}

/// Reassembles full frames from segment outputs, time-major.
pub fn merge_steps(g: &mut Graph, out: &SegmentOutputs) -> Result<Var, ModelError> {
    let steps = out[0]
        .iter()
        .zip(&out[1])
        .zip(&out[2])
        .map(|((f, b), h)| g.concat_cols(&[*f, *b, *h]))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(g.concat_rows(&steps)?)
}

/// Probability that each motion in the batch is real; `batch × 1`.
pub fn discriminate_graph(
    g: &mut Graph,
    p: &DiscriminatorParams<Var>,
    motion: Var,
    horizon: usize,
) -> Result<Var, ModelError> {
    let run = lstm_scan(g, motion, horizon, None, &p.lstm)?;
    let logit = dense(g, run.h, &p.dense)?;
    Ok(g.sigmoid(logit))
}
