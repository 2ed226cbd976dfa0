//! Synthetic dyadic motion.
//!
//! Each person is a template pose whose landmark coordinates oscillate as
//! independent sums of sinusoids. The target additionally follows the
//! partner: every target landmark is shifted by `coupling` times the
//! partner's body-centroid displacement from `delay` frames earlier, so part
//! of the target's future is predictable from the partner's observed past.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{
    pad_sequence, DyadSample, LandmarkFrame, PersonRecord, Segment, Session, BODY, FACE, FPS, LEFT_HAND,
    N_LANDMARKS, RIGHT_HAND, SEQ_LEN,
};

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    /// Weight of the partner-following term, in `[0, 1]`.
    pub coupling: f64,
    /// Standard deviation of the Gaussian jitter added to the target.
    pub jitter: f64,
    /// Frames between a partner movement and the target's echo of it.
    pub delay: usize,
    /// Sinusoids per coordinate.
    pub components: usize,
    /// Frequency range in Hz.
    pub freq_hz: (f64, f64),
    /// Amplitude ranges per segment, face/body/hands.
    pub amplitude: [(f64, f64); 3],
    pub frames: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            coupling: 0.5,
            jitter: 0.005,
            delay: 10,
            components: 2,
            freq_hz: (0.2, 2.0),
            amplitude: [(0.004, 0.012), (0.01, 0.03), (0.01, 0.04)],
            frames: SEQ_LEN,
        }
    }
}

impl SynthConfig {
    pub fn with_coupling(coupling: f64) -> Self {
        Self {
            coupling,
            ..Self::default()
        }
    }
}

/// One generated interaction, plus the target's motion before coupling and
/// jitter were applied.
#[derive(Clone, Debug)]
pub struct SyntheticDyad {
    pub target: Vec<LandmarkFrame>,
    pub partner: Vec<LandmarkFrame>,
    pub target_base: Vec<LandmarkFrame>,
}

#[derive(Clone, Copy)]
struct Wave {
    amp: f64,
    freq: f64,
    phase: f64,
}

/// Rest pose in normalized image units, roughly a seated upper body facing
/// the camera.
fn template<R: Rng + ?Sized>(rng: &mut R) -> [[f64; 2]; N_LANDMARKS] {
    let mut pts = [[0.0; 2]; N_LANDMARKS];
    let (ox, oy) = (rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05));
    let scale = rng.random_range(0.9..1.1);

    let head = [0.5, 0.25];
    for (k, j) in FACE.enumerate() {
        pts[j] = if k < 20 {
            let a = TAU * k as f64 / 20.0;
            [head[0] + 0.06 * a.cos(), head[1] + 0.08 * a.sin()]
        } else {
            // eyes, nose and mouth inside the contour
            let inner = [
                [-0.025, -0.02],
                [-0.015, -0.02],
                [0.015, -0.02],
                [0.025, -0.02],
                [0.0, 0.0],
                [0.0, 0.015],
                [-0.02, 0.04],
                [0.02, 0.04],
            ];
            [head[0] + inner[k - 20][0], head[1] + inner[k - 20][1]]
        };
    }
    let body = [
        [0.5, 0.36],
        [0.38, 0.4],
        [0.62, 0.4],
        [0.33, 0.53],
        [0.67, 0.53],
        [0.36, 0.66],
        [0.64, 0.66],
        [0.43, 0.72],
        [0.57, 0.72],
        [0.5, 0.55],
    ];
    for (k, j) in BODY.enumerate() {
        pts[j] = body[k];
    }
    for (hand, wrist, dir) in [(LEFT_HAND, [0.36, 0.68], -1.0), (RIGHT_HAND, [0.64, 0.68], 1.0)] {
        for (k, j) in hand.enumerate() {
            // wrist plus four joints on each of five fingers fanning downward
            let finger = k / 4;
            let joint = (k % 4 + 1) as f64;
            let a = 1.2 + dir * (0.25 * finger as f64 - 0.5);
            pts[j] = [wrist[0] + dir * 0.008 * joint * a.cos(), wrist[1] + 0.01 * joint * a.sin()];
        }
    }
    for p in pts.iter_mut() {
        *p = [0.5 + (p[0] - 0.5) * scale + ox, 0.5 + (p[1] - 0.5) * scale + oy];
    }
    pts
}

fn segment_of(j: usize) -> Segment {
    if FACE.contains(&j) {
        Segment::Face
    } else if BODY.contains(&j) {
        Segment::Body
    } else {
        Segment::Hands
    }
}

/// Template plus per-landmark sinusoids, sampled at `FPS`.
fn oscillating_person<R: Rng + ?Sized>(cfg: &SynthConfig, rng: &mut R) -> Vec<LandmarkFrame> {
    let rest = template(rng);
    let waves: Vec<[Vec<Wave>; 2]> = (0..N_LANDMARKS)
        .map(|j| {
            let (lo, hi) = cfg.amplitude[segment_of(j).index()];
            std::array::from_fn(|_| {
                (0..cfg.components)
                    .map(|_| Wave {
                        amp: rng.random_range(lo..=hi),
                        freq: rng.random_range(cfg.freq_hz.0..=cfg.freq_hz.1),
                        phase: rng.random_range(0.0..TAU),
                    })
                    .collect()
            })
        })
        .collect();
    (0..cfg.frames)
        .map(|t| {
            let time = t as f64 / f64::from(FPS);
            let mut f = LandmarkFrame::default();
            for (j, p) in f.points_mut().iter_mut().enumerate() {
                for axis in 0..2 {
                    p[axis] = rest[j][axis]
                        + waves[j][axis]
                            .iter()
                            .map(|w| w.amp * (TAU * w.freq * time + w.phase).sin())
                            .sum::<f64>();
                }
            }
            f
        })
        .collect()
}

pub fn body_centroid(f: &LandmarkFrame) -> [f64; 2] {
    let n = BODY.len() as f64;
    let s = f.points()[BODY].iter().fold([0.0, 0.0], |a, p| [a[0] + p[0], a[1] + p[1]]);
    [s[0] / n, s[1] / n]
}

/// Generates the `index`-th dyad of the stream identified by `seed`. The
/// result does not depend on how many dyads are drawn in total.
pub fn generate_dyad(seed: u64, index: u64, cfg: &SynthConfig) -> SyntheticDyad {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let partner = oscillating_person(cfg, &mut rng);
    let target_base = oscillating_person(cfg, &mut rng);
    let noise = Normal::new(0.0, cfg.jitter.max(0.0)).expect("finite jitter");

    let origin = body_centroid(&partner[0]);
    let displacement = |t: usize| {
        let c = body_centroid(&partner[t]);
        [c[0] - origin[0], c[1] - origin[1]]
    };
    let target = target_base
        .iter()
        .enumerate()
        .map(|(t, base)| {
            let shift = match t.checked_sub(cfg.delay) {
                Some(src) => displacement(src),
                None => [0.0, 0.0],
            };
            let mut f = *base;
            for p in f.points_mut() {
                for axis in 0..2 {
                    let jitter = if cfg.jitter > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                    p[axis] += cfg.coupling * shift[axis] + jitter;
                }
            }
            f
        })
        .collect();
    SyntheticDyad {
        target,
        partner,
        target_base,
    }
}

/// `n` raw dyad samples with the default generator settings.
pub fn synth_dyads(seed: u64, n: usize, coupling: f64) -> Vec<DyadSample> {
    let cfg = SynthConfig::with_coupling(coupling);
    (0..n as u64)
        .map(|i| {
            let d = generate_dyad(seed, i, &cfg);
            DyadSample::new(
                pad_sequence(d.target).expect("generator emits full sequences"),
                pad_sequence(d.partner).expect("generator emits full sequences"),
            )
            .expect("generator emits full sequences")
        })
        .collect()
}

/// `n` synthetic sessions; person 0 is the coupled target, person 1 the partner.
pub fn synth_sessions(seed: u64, n: usize, coupling: f64) -> Vec<Session> {
    let cfg = SynthConfig::with_coupling(coupling);
    (0..n as u64)
        .map(|i| {
            let d = generate_dyad(seed, i, &cfg);
            Session {
                session_id: format!("synthetic-{seed}-{i}"),
                fps: FPS,
                persons: vec![
                    PersonRecord::from_frames("target", &d.target, false),
                    PersonRecord::from_frames("partner", &d.partner, false),
                ],
            }
        })
        .collect()
}
