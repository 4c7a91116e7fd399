use rand::Rng;

use crate::diff::{Tape, TensorId};
use crate::nn::{ParamStore, Staged, UNet};

/// Encoder-decoder that turns a reference image into a visibility mask.
/// The deepest feature map doubles as the source of the image-level
/// appearance embedding.
#[derive(Clone, Debug)]
pub struct ParsingNet {
    pub unet: UNet,
}

pub struct ParsingOutput {
    /// (1, H, W) in (0, 1); higher means static.
    pub mask: TensorId,
    /// (bottleneck_ch, H/2^depth, W/2^depth)
    pub bottleneck: TensorId,
}

impl ParsingNet {
    pub fn new(prefix: &str, base: usize, depth: usize) -> Self {
        ParsingNet { unet: UNet::new(prefix, 3, base, depth, 1) }
    }

    pub fn bottleneck_ch(&self) -> usize {
        self.unet.bottleneck_ch()
    }

    pub fn register(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        self.unet.register(store, rng);
    }

    /// `image` is a (3, H, W) tensor already on the tape.
    pub fn forward(&self, tape: &mut Tape, staged: &Staged, image: TensorId) -> ParsingOutput {
        let out = self.unet.forward(tape, staged, image);
        let mask = tape.sigmoid(out.head);
        ParsingOutput { mask, bottleneck: out.bottleneck }
    }
}

/// A detached mask snapshot, e.g. for back-projection or debug dumps.
#[derive(Clone, Debug)]
pub struct VisibilityMask {
    pub values: Vec<f64>,
    pub width: usize,
    pub height: usize,
}

impl VisibilityMask {
    pub fn from_tape(tape: &Tape, mask: TensorId) -> Self {
        let s = tape.shape(mask);
        assert_eq!(s.len(), 3);
        assert_eq!(s[0], 1, "mask must be single-channel");
        VisibilityMask { values: tape.value(mask).to_vec(), width: s[2], height: s[1] }
    }

    /// 8-bit grayscale rendition, round half up.
    pub fn to_gray8(&self) -> Vec<u8> {
        self.values
            .iter()
            .map(|&v| ((v.clamp(0.0, 1.0) * 255.0) + 0.5).floor() as u8)
            .collect()
    }
}
