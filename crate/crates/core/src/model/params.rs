use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Segment, FRAME_DIM, FUTURE_LEN, OBSERVED_LEN};
use crate::kernel::{DenseParams, LstmCellParams, Tensor};

/// Network sizes and window lengths.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub observed_len: usize,
    pub horizon: usize,
    pub encoder_hidden: usize,
    pub generator_hidden: usize,
    pub discriminator_hidden: usize,
    pub context_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            observed_len: OBSERVED_LEN,
            horizon: FUTURE_LEN,
            encoder_hidden: 128,
            generator_hidden: 128,
            discriminator_hidden: 128,
            context_dim: 64,
        }
    }
}

impl ModelConfig {
    /// Every hidden layer `hidden` wide, context `context_dim` wide.
    pub fn uniform(hidden: usize, context_dim: usize) -> Self {
        Self {
            encoder_hidden: hidden,
            generator_hidden: hidden,
            discriminator_hidden: hidden,
            context_dim,
            ..Self::default()
        }
    }
}

/// Partner encoder: LSTM over flattened frames, then a dense layer to the
/// context vector.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams<T = Tensor> {
    pub lstm: LstmCellParams<T>,
    pub dense: DenseParams<T>,
}

/// Sequence-to-sequence generator for one segment. The decoder consumes
/// `[previous frame ‖ context]` and its output layer predicts a per-frame
/// displacement.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentGeneratorParams<T = Tensor> {
    pub segment: Segment,
    pub encoder: LstmCellParams<T>,
    pub decoder: LstmCellParams<T>,
    pub output: DenseParams<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscriminatorParams<T = Tensor> {
    pub lstm: LstmCellParams<T>,
    pub dense: DenseParams<T>,
}

/// Everything trained by the generator loss.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorParams<T = Tensor> {
    pub encoder: EncoderParams<T>,
    pub face: SegmentGeneratorParams<T>,
    pub body: SegmentGeneratorParams<T>,
    pub hands: SegmentGeneratorParams<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T = Tensor> {
    pub config: ModelConfig,
    pub generator: GeneratorParams<T>,
    pub discriminator: DiscriminatorParams<T>,
}

type Named<'a, T> = Vec<(String, &'a T)>;
type NamedMut<'a, T> = Vec<(String, &'a mut T)>;

impl<T> EncoderParams<T> {
    fn named<'a>(&'a self, out: &mut Named<'a, T>) {
        self.lstm.named("encoder.lstm", out);
        self.dense.named("encoder.dense", out);
    }

    fn named_mut<'a>(&'a mut self, out: &mut NamedMut<'a, T>) {
        self.lstm.named_mut("encoder.lstm", out);
        self.dense.named_mut("encoder.dense", out);
    }

    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> EncoderParams<U> {
        EncoderParams {
            lstm: self.lstm.map(f),
            dense: self.dense.map(f),
        }
    }
}

impl<T> SegmentGeneratorParams<T> {
    fn prefix(&self) -> String {
        format!("gen.{}", self.segment.name())
    }

    fn named<'a>(&'a self, out: &mut Named<'a, T>) {
        let p = self.prefix();
        self.encoder.named(&format!("{p}.encoder.lstm"), out);
        self.decoder.named(&format!("{p}.decoder.lstm"), out);
        self.output.named(&format!("{p}.decoder.dense"), out);
    }

    fn named_mut<'a>(&'a mut self, out: &mut NamedMut<'a, T>) {
        let p = self.prefix();
        self.encoder.named_mut(&format!("{p}.encoder.lstm"), out);
        self.decoder.named_mut(&format!("{p}.decoder.lstm"), out);
        self.output.named_mut(&format!("{p}.decoder.dense"), out);
    }

    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> SegmentGeneratorParams<U> {
        SegmentGeneratorParams {
            segment: self.segment,
            encoder: self.encoder.map(f),
            decoder: self.decoder.map(f),
            output: self.output.map(f),
        }
    }
}

impl<T> GeneratorParams<T> {
    pub fn segment(&self, seg: Segment) -> &SegmentGeneratorParams<T> {
        match seg {
            Segment::Face => &self.face,
            Segment::Body => &self.body,
            Segment::Hands => &self.hands,
        }
    }

    pub fn segment_mut(&mut self, seg: Segment) -> &mut SegmentGeneratorParams<T> {
        match seg {
            Segment::Face => &mut self.face,
            Segment::Body => &mut self.body,
            Segment::Hands => &mut self.hands,
        }
    }

    /// Parameters in their fixed visiting order with stable names.
    pub fn named(&self) -> Named<'_, T> {
        let mut out = Vec::new();
        self.encoder.named(&mut out);
        self.face.named(&mut out);
        self.body.named(&mut out);
        self.hands.named(&mut out);
        out
    }

    pub fn named_mut(&mut self) -> NamedMut<'_, T> {
        let mut out = Vec::new();
        self.encoder.named_mut(&mut out);
        self.face.named_mut(&mut out);
        self.body.named_mut(&mut out);
        self.hands.named_mut(&mut out);
        out
    }

    /// Visits in the same order as [`GeneratorParams::named`].
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> GeneratorParams<U> {
        GeneratorParams {
            encoder: self.encoder.map(f),
            face: self.face.map(f),
            body: self.body.map(f),
            hands: self.hands.map(f),
        }
    }
}

impl<T> DiscriminatorParams<T> {
    pub fn named(&self) -> Named<'_, T> {
        let mut out = Vec::new();
        self.lstm.named("disc.lstm", &mut out);
        self.dense.named("disc.dense", &mut out);
        out
    }

    pub fn named_mut(&mut self) -> NamedMut<'_, T> {
        let mut out = Vec::new();
        self.lstm.named_mut("disc.lstm", &mut out);
        self.dense.named_mut("disc.dense", &mut out);
        out
    }

    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> DiscriminatorParams<U> {
        DiscriminatorParams {
            lstm: self.lstm.map(f),
            dense: self.dense.map(f),
        }
    }
}

impl<T> ModelParams<T> {
    /// Generator group followed by the discriminator.
    pub fn named(&self) -> Named<'_, T> {
        let mut out = self.generator.named();
        out.extend(self.discriminator.named());
        out
    }
}

impl ModelParams {
    /// Seeded initialization: weights uniform in `±1/√fan_in`, forget-gate
    /// biases 1, other biases 0.
    pub fn init(config: ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = config.context_dim;
        let encoder = EncoderParams {
            lstm: LstmCellParams::init(FRAME_DIM, config.encoder_hidden, &mut rng),
            dense: DenseParams::init(config.encoder_hidden, c, &mut rng),
        };
        let mut seg = |segment: Segment| {
            let d = segment.dim();
            let h = config.generator_hidden;
            SegmentGeneratorParams {
                segment,
                encoder: LstmCellParams::init(d, h, &mut rng),
                decoder: LstmCellParams::init(d + c, h, &mut rng),
                output: DenseParams::init(h, d, &mut rng),
            }
        };
        let generator = GeneratorParams {
            encoder,
            face: seg(Segment::Face),
            body: seg(Segment::Body),
            hands: seg(Segment::Hands),
        };
        let discriminator = DiscriminatorParams {
            lstm: LstmCellParams::init(FRAME_DIM, config.discriminator_hidden, &mut rng),
            dense: DenseParams::init(config.discriminator_hidden, 1, &mut rng),
        };
        Self {
            config,
            generator,
            discriminator,
        }
    }

    /// Zeroes every generator output layer, making each decoder a pure
    /// constant-pose continuation.
    pub fn zero_output_layers(&mut self) {
        for seg in Segment::ALL {
            let out = &mut self.generator.segment_mut(seg).output;
            out.weight.data_mut().fill(0.0);
            out.bias.data_mut().fill(0.0);
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }
}
