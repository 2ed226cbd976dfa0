//! Landmark data model: frames, fixed-length sequences, dyad samples,
//! padding and per-axis normalization.

mod session;
mod synth;

use std::ops::Range;
use std::path::PathBuf;

pub use session::{
    load_sessions, parse_sessions, read_sessions, session_to_samples, write_sessions,
    write_sessions_to, PersonRecord, Session,
};
pub use synth::{body_centroid, generate_dyad, synth_dyads, synth_sessions, SynthConfig, SyntheticDyad};

pub const N_LANDMARKS: usize = 78;
/// Flattened `(x, y)` width of one frame.
pub const FRAME_DIM: usize = 2 * N_LANDMARKS;
pub const SEQ_LEN: usize = 150;
pub const OBSERVED_LEN: usize = 100;
pub const FUTURE_LEN: usize = SEQ_LEN - OBSERVED_LEN;
pub const FPS: u32 = 25;
/// Guard added to σ in the normalization denominator.
pub const NORM_EPS: f64 = 1e-8;

pub const FACE: Range<usize> = 0..28;
pub const BODY: Range<usize> = 28..38;
pub const LEFT_HAND: Range<usize> = 38..58;
pub const RIGHT_HAND: Range<usize> = 58..78;
pub const HANDS: Range<usize> = 38..78;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("record {record}: field `{field}`: {message}")]
    Parse {
        record: usize,
        field: String,
        message: String,
    },
    #[error("record {record}: expected {expected} landmarks, found {found}")]
    LandmarkCount {
        record: usize,
        expected: usize,
        found: usize,
    },
    #[error("record {record}: person {person} landmark {landmark} is missing in every frame")]
    MissingLandmark {
        record: usize,
        person: usize,
        landmark: usize,
    },
    #[error("sequence length {len} outside [1, {max}]")]
    Length { len: usize, max: usize },
    #[error("{0}")]
    Contract(String),
}

/// Body part groups, each forecast by its own generator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Segment {
    Face,
    Body,
    Hands,
}

impl Segment {
    pub const ALL: [Segment; 3] = [Segment::Face, Segment::Body, Segment::Hands];

    pub fn landmarks(self) -> Range<usize> {
        match self {
            Segment::Face => FACE,
            Segment::Body => BODY,
            Segment::Hands => HANDS,
        }
    }

    pub fn n_landmarks(self) -> usize {
        self.landmarks().len()
    }

    /// Flattened width, two coordinates per landmark.
    pub fn dim(self) -> usize {
        2 * self.n_landmarks()
    }

    /// Column range inside a flattened frame.
    pub fn columns(self) -> Range<usize> {
        let r = self.landmarks();
        2 * r.start..2 * r.end
    }

    pub fn name(self) -> &'static str {
        match self {
            Segment::Face => "face",
            Segment::Body => "body",
            Segment::Hands => "hands",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// One time step: 78 `(x, y)` points ordered face, body, left hand, right hand.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LandmarkFrame {
    points: [[f64; 2]; N_LANDMARKS],
}

impl Default for LandmarkFrame {
    fn default() -> Self {
        Self {
            points: [[0.0; 2]; N_LANDMARKS],
        }
    }
}

impl LandmarkFrame {
    pub fn new(points: [[f64; 2]; N_LANDMARKS]) -> Result<Self, DataError> {
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(DataError::Contract("landmark coordinate is not finite".into()));
        }
        Ok(Self { points })
    }

    pub fn from_points(points: &[[f64; 2]]) -> Result<Self, DataError> {
        let arr: [[f64; 2]; N_LANDMARKS] = points.try_into().map_err(|_| DataError::LandmarkCount {
            record: 0,
            expected: N_LANDMARKS,
            found: points.len(),
        })?;
        Self::new(arr)
    }

    /// Inverse of [`LandmarkFrame::flat`]; `values` is `x0, y0, x1, y1, …`.
    pub fn from_flat(values: &[f64]) -> Result<Self, DataError> {
        if values.len() != FRAME_DIM {
            return Err(DataError::LandmarkCount {
                record: 0,
                expected: N_LANDMARKS,
                found: values.len() / 2,
            });
        }
        let mut points = [[0.0; 2]; N_LANDMARKS];
        for (p, xy) in points.iter_mut().zip(values.chunks_exact(2)) {
            *p = [xy[0], xy[1]];
        }
        Self::new(points)
    }

    pub fn points(&self) -> &[[f64; 2]; N_LANDMARKS] {
        &self.points
    }

    pub fn points_mut(&mut self) -> &mut [[f64; 2]; N_LANDMARKS] {
        &mut self.points
    }

    pub fn flat(&self) -> impl Iterator<Item = f64> + '_ {
        self.points.iter().flat_map(|p| p.iter().copied())
    }

    /// Flattened coordinates of one segment.
    pub fn segment_flat(&self, seg: Segment) -> impl Iterator<Item = f64> + '_ {
        self.points[seg.landmarks()].iter().flat_map(|p| p.iter().copied())
    }

    pub fn split_segments(&self) -> SegmentedFrame {
        let mut s = SegmentedFrame {
            face: [[0.0; 2]; 28],
            body: [[0.0; 2]; 10],
            hands: [[0.0; 2]; 40],
        };
        s.face.copy_from_slice(&self.points[FACE]);
        s.body.copy_from_slice(&self.points[BODY]);
        s.hands.copy_from_slice(&self.points[HANDS]);
        s
    }

    fn map(&self, f: impl Fn(usize, f64) -> f64) -> Self {
        let mut out = *self;
        for p in out.points.iter_mut() {
            for (axis, v) in p.iter_mut().enumerate() {
                *v = f(axis, *v);
            }
        }
        out
    }
}

/// A frame split into its three segments; hands hold left then right.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SegmentedFrame {
    pub face: [[f64; 2]; 28],
    pub body: [[f64; 2]; 10],
    pub hands: [[f64; 2]; 40],
}

impl SegmentedFrame {
    pub fn merge(&self) -> LandmarkFrame {
        let mut points = [[0.0; 2]; N_LANDMARKS];
        points[FACE].copy_from_slice(&self.face);
        points[BODY].copy_from_slice(&self.body);
        points[HANDS].copy_from_slice(&self.hands);
        LandmarkFrame { points }
    }

    pub fn segment(&self, seg: Segment) -> &[[f64; 2]] {
        match seg {
            Segment::Face => &self.face,
            Segment::Body => &self.body,
            Segment::Hands => &self.hands,
        }
    }
}

/// Per-axis normalization statistics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormStats {
    pub mu: [f64; 2],
    pub sigma: [f64; 2],
}

impl NormStats {
    /// Population mean and standard deviation per axis over every landmark
    /// of every frame given.
    pub fn from_frames(frames: &[LandmarkFrame]) -> Result<Self, DataError> {
        if frames.is_empty() {
            return Err(DataError::Contract("statistics over zero frames".into()));
        }
        let n = (frames.len() * N_LANDMARKS) as f64;
        let mut mu = [0.0; 2];
        for f in frames {
            for p in &f.points {
                mu[0] += p[0];
                mu[1] += p[1];
            }
        }
        mu = [mu[0] / n, mu[1] / n];
        let mut var = [0.0; 2];
        for f in frames {
            for p in &f.points {
                var[0] += (p[0] - mu[0]).powi(2);
                var[1] += (p[1] - mu[1]).powi(2);
            }
        }
        Ok(Self {
            mu,
            sigma: [(var[0] / n).sqrt(), (var[1] / n).sqrt()],
        })
    }

    pub fn normalize_frame(&self, f: &LandmarkFrame) -> LandmarkFrame {
        f.map(|a, v| (v - self.mu[a]) / (self.sigma[a] + NORM_EPS))
    }

    pub fn denormalize_frame(&self, f: &LandmarkFrame) -> LandmarkFrame {
        f.map(|a, v| v * (self.sigma[a] + NORM_EPS) + self.mu[a])
    }
}

/// Which frames normalization statistics are computed over.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StatsWindow {
    /// All valid frames; used for training data.
    Full,
    /// Valid frames inside the observed window only; used at forecast time.
    Observed,
}

/// Fixed-length per-person sequence with a validity mask and, once
/// normalized, the statistics needed to undo it.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionSequence {
    frames: Vec<LandmarkFrame>,
    valid_count: usize,
    stats: Option<NormStats>,
}

/// Pads `frames` to [`SEQ_LEN`] by repeating the last frame.
pub fn pad_sequence(frames: Vec<LandmarkFrame>) -> Result<MotionSequence, DataError> {
    pad_to(frames, SEQ_LEN)
}

/// Pads `frames` to `len` by repeating the last frame.
pub fn pad_to(mut frames: Vec<LandmarkFrame>, len: usize) -> Result<MotionSequence, DataError> {
    let n = frames.len();
    if n == 0 || n > len {
        return Err(DataError::Length { len: n, max: len });
    }
    let last = frames[n - 1];
    frames.resize(len, last);
    Ok(MotionSequence {
        frames,
        valid_count: n,
        stats: None,
    })
}

impl MotionSequence {
    pub fn frames(&self) -> &[LandmarkFrame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn valid_count(&self) -> usize {
        self.valid_count
    }

    pub fn stats(&self) -> Option<NormStats> {
        self.stats
    }

    pub fn is_normalized(&self) -> bool {
        self.stats.is_some()
    }

    /// Statistics over the first `limit` valid frames.
    pub fn stats_over(&self, limit: usize) -> Result<NormStats, DataError> {
        NormStats::from_frames(&self.frames[..self.valid_count.min(limit)])
    }

    /// Normalizes with statistics over all valid frames.
    pub fn normalize(&self) -> Result<MotionSequence, DataError> {
        self.normalize_window(StatsWindow::Full)
    }

    pub fn normalize_window(&self, window: StatsWindow) -> Result<MotionSequence, DataError> {
        let limit = match window {
            StatsWindow::Full => self.frames.len(),
            StatsWindow::Observed => OBSERVED_LEN,
        };
        let stats = self.stats_over(limit)?;
        self.normalize_with(stats)
    }

    pub fn normalize_with(&self, stats: NormStats) -> Result<MotionSequence, DataError> {
        if self.is_normalized() {
            return Err(DataError::Contract("sequence is already normalized".into()));
        }
        Ok(MotionSequence {
            frames: self.frames.iter().map(|f| stats.normalize_frame(f)).collect(),
            valid_count: self.valid_count,
            stats: Some(stats),
        })
    }

    pub fn denormalize(&self) -> Result<MotionSequence, DataError> {
        let stats = self
            .stats
            .ok_or_else(|| DataError::Contract("sequence has no normalization statistics".into()))?;
        Ok(MotionSequence {
            frames: self.frames.iter().map(|f| stats.denormalize_frame(f)).collect(),
            valid_count: self.valid_count,
            stats: None,
        })
    }

    pub fn observed(&self) -> &[LandmarkFrame] {
        &self.frames[..OBSERVED_LEN.min(self.frames.len())]
    }

    pub fn future(&self) -> &[LandmarkFrame] {
        &self.frames[OBSERVED_LEN.min(self.frames.len())..]
    }
}

/// Target and partner sequences of one interaction, split at
/// [`OBSERVED_LEN`] into observed and future windows.
#[derive(Clone, Debug, PartialEq)]
pub struct DyadSample {
    pub target: MotionSequence,
    pub partner: MotionSequence,
}

impl DyadSample {
    pub fn new(target: MotionSequence, partner: MotionSequence) -> Result<Self, DataError> {
        for s in [&target, &partner] {
            if s.len() != SEQ_LEN {
                return Err(DataError::Length {
                    len: s.len(),
                    max: SEQ_LEN,
                });
            }
        }
        Ok(Self { target, partner })
    }

    /// Both sequences normalized with their own statistics.
    pub fn normalized(&self, window: StatsWindow) -> Result<DyadSample, DataError> {
        Ok(DyadSample {
            target: self.target.normalize_window(window)?,
            partner: self.partner.normalize_window(window)?,
        })
    }

    pub fn is_normalized(&self) -> bool {
        self.target.is_normalized() && self.partner.is_normalized()
    }
}

/// Normalizes every sample.
pub fn normalize_dataset(samples: &[DyadSample], window: StatsWindow) -> Result<Vec<DyadSample>, DataError> {
    samples.iter().map(|s| s.normalized(window)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn indexed_frame() -> LandmarkFrame {
        let mut pts = [[0.0; 2]; N_LANDMARKS];
        for (i, p) in pts.iter_mut().enumerate() {
            *p = [i as f64, i as f64];
        }
        LandmarkFrame::new(pts).unwrap()
    }

    fn frame_strategy() -> impl Strategy<Value = LandmarkFrame> {
        prop::collection::vec(-5.0f64..5.0, FRAME_DIM).prop_map(|v| LandmarkFrame::from_flat(&v).unwrap())
    }

    #[test]
    fn split_uses_layout_ranges() {
        let s = indexed_frame().split_segments();
        assert_eq!(s.face.len(), 28);
        assert_eq!(s.body.len(), 10);
        assert_eq!(s.hands.len(), 40);
        assert_eq!((s.face[0][0], s.face[27][0]), (0.0, 27.0));
        assert_eq!((s.body[0][0], s.body[9][0]), (28.0, 37.0));
        assert_eq!((s.hands[0][0], s.hands[39][0]), (38.0, 77.0));
    }

    #[test]
    fn split_zero_frame() {
        let s = LandmarkFrame::default().split_segments();
        for seg in Segment::ALL {
            assert!(s.segment(seg).iter().flatten().all(|&v| v == 0.0));
        }
        assert_eq!(
            Segment::ALL.map(|s| s.n_landmarks()),
            [28, 10, 40]
        );
    }

    #[test]
    fn segment_columns_tile_the_frame() {
        assert_eq!(Segment::Face.columns(), 0..56);
        assert_eq!(Segment::Body.columns(), 56..76);
        assert_eq!(Segment::Hands.columns(), 76..156);
    }

    #[test]
    fn from_points_rejects_77() {
        let pts = vec![[0.0; 2]; 77];
        assert!(matches!(
            LandmarkFrame::from_points(&pts),
            Err(DataError::LandmarkCount { found: 77, .. })
        ));
    }

    fn seq_with_x(xs: &[f64]) -> MotionSequence {
        let frames = xs
            .iter()
            .map(|&x| {
                let mut f = LandmarkFrame::default();
                for p in f.points_mut() {
                    *p = [x, 0.0];
                }
                f
            })
            .collect();
        pad_to(frames, xs.len()).unwrap()
    }

    #[test]
    fn normalize_three_values() {
        let n = seq_with_x(&[1.0, 2.0, 3.0]).normalize().unwrap();
        let st = n.stats().unwrap();
        assert!((st.mu[0] - 2.0).abs() < 1e-15);
        assert!((st.sigma[0] - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
        let got: Vec<f64> = n.frames().iter().map(|f| f.points()[5][0]).collect();
        // (v - 2) / (sqrt(2/3) + 1e-8)
        let expect = [-1.224_744_856_4, 0.0, 1.224_744_856_4];
        for (g, e) in got.iter().zip(expect) {
            assert!((g - e).abs() < 1e-9, "{g} vs {e}");
        }
    }

    #[test]
    fn constant_sequence_normalizes_to_zero() {
        let n = seq_with_x(&[4.0, 4.0, 4.0, 4.0]).normalize().unwrap();
        assert_eq!(n.stats().unwrap().sigma, [0.0, 0.0]);
        assert!(n.frames().iter().flat_map(|f| f.flat().collect::<Vec<_>>()).all(|v| v == 0.0));
    }

    #[test]
    fn standardized_input_is_nearly_unchanged() {
        let s = seq_with_x(&[-1.0, 1.0]);
        // x: mean 0, std 1; y: constant 0
        let n = s.normalize().unwrap();
        for (a, b) in s.frames().iter().zip(n.frames()) {
            for (x, y) in a.flat().zip(b.flat()) {
                assert!((x - y).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn denormalize_affine_values() {
        let s = pad_to(vec![LandmarkFrame::default(); 3], 3).unwrap();
        let stats = NormStats {
            mu: [2.0, 3.0],
            sigma: [1.0, 1.0],
        };
        let mut n = s.clone();
        n.stats = Some(stats);
        let d = n.denormalize().unwrap();
        assert!(d.frames().iter().all(|f| f.points().iter().all(|p| *p == [2.0, 3.0])));

        let mut id = s.clone();
        id.frames[0].points_mut()[0] = [5.0, -1.0];
        id.stats = Some(NormStats {
            mu: [0.0, 0.0],
            sigma: [1.0, 1.0],
        });
        let d = id.denormalize().unwrap();
        assert_eq!(d.frames()[0].points()[0], [5.0 * (1.0 + 1e-8), -(1.0 + 1e-8)]);
    }

    #[test]
    fn normalize_twice_or_denormalize_raw_is_contract_error() {
        let s = seq_with_x(&[1.0, 2.0]);
        assert!(matches!(s.denormalize(), Err(DataError::Contract(_))));
        let n = s.normalize().unwrap();
        assert!(matches!(n.normalize(), Err(DataError::Contract(_))));
    }

    #[test]
    fn padding_rules() {
        let mk = |n: usize| (0..n).map(|i| {
            let mut f = LandmarkFrame::default();
            f.points_mut()[0] = [i as f64, 0.0];
            f
        }).collect::<Vec<_>>();

        let full = pad_sequence(mk(150)).unwrap();
        assert_eq!((full.len(), full.valid_count()), (150, 150));
        assert_eq!(full.frames(), mk(150).as_slice());

        let p = pad_sequence(mk(120)).unwrap();
        assert_eq!(p.valid_count(), 120);
        assert!(p.frames()[120..].iter().all(|f| *f == p.frames()[119]));

        let one = pad_sequence(mk(1)).unwrap();
        assert!(one.frames().iter().all(|f| *f == one.frames()[0]));
        assert_eq!(one.len(), 150);

        assert!(matches!(pad_sequence(vec![]), Err(DataError::Length { .. })));
        assert!(matches!(pad_sequence(mk(151)), Err(DataError::Length { .. })));
    }

    #[test]
    fn statistics_ignore_padding() {
        let mut frames = vec![LandmarkFrame::default(); 2];
        frames[1].points_mut().iter_mut().for_each(|p| *p = [2.0, 2.0]);
        let s = pad_sequence(frames).unwrap();
        // valid frames only: mean 1, std 1
        let st = s.normalize().unwrap().stats().unwrap();
        assert_eq!(st.mu, [1.0, 1.0]);
        assert_eq!(st.sigma, [1.0, 1.0]);
    }

    proptest! {
        #[test]
        fn split_merge_round_trip(f in frame_strategy()) {
            prop_assert_eq!(f.split_segments().merge(), f);
        }

        #[test]
        fn normalize_round_trip_and_moments(
            frames in prop::collection::vec(frame_strategy(), 1..12),
            pad in 0usize..5,
        ) {
            let n = frames.len();
            let seq = pad_to(frames, n + pad).unwrap();
            let norm = seq.normalize().unwrap();
            let back = norm.denormalize().unwrap();
            for (a, b) in seq.frames().iter().zip(back.frames()) {
                for (x, y) in a.flat().zip(b.flat()) {
                    prop_assert!((x - y).abs() <= 1e-9);
                }
            }
            let valid = &norm.frames()[..n];
            let st = NormStats::from_frames(valid).unwrap();
            for axis in 0..2 {
                prop_assert!(st.mu[axis].abs() < 1e-9);
                prop_assert!((st.sigma[axis] - 1.0).abs() < 1e-6);
            }
        }

        #[test]
        fn padding_preserves_valid_prefix(frames in prop::collection::vec(frame_strategy(), 1..20)) {
            let p = pad_to(frames.clone(), 20).unwrap();
            prop_assert_eq!(&p.frames()[..frames.len()], frames.as_slice());
            prop_assert_eq!(p.valid_count(), frames.len());
        }
    }
}
