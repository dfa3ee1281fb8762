//! Portable derivation of sub-stream seeds from one master seed, so that
//! layer initialization and per-epoch shuffling are reproducible across
//! platforms and independent of each other.

/// One round of the splitmix64 mixer.
pub fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for an independent sub-stream of `master`.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    splitmix64(master ^ splitmix64(stream))
}

const LAYER_STREAM_BASE: u64 = 0x4C41_0000_0000_0000;
const EPOCH_STREAM_BASE: u64 = 0x4550_0000_0000_0000;

/// Seed used to initialize the weights of layer `layer`.
pub fn layer_seed(master: u64, layer: usize) -> u64 {
    derive_seed(master, LAYER_STREAM_BASE + layer as u64)
}

/// Seed used to shuffle the training set for epoch `epoch`.
pub fn epoch_seed(master: u64, epoch: u64) -> u64 {
    derive_seed(master, EPOCH_STREAM_BASE + epoch)
}
