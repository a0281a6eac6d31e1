//! Counter-based random streams keyed by replicate index.
//!
//! Every replicate owns generators derived only from `(master_seed, purpose,
//! replicate_index)`, so results never depend on which worker ran the
//! replicate or in which order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a stream is used for. Distinct purposes never share key material.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamPurpose {
    /// Gaussian noise driving the fBm sampler.
    Noise,
    /// Uniforms consumed by the bridge-corrected CUSUM monitor.
    Bridge,
}

impl StreamPurpose {
    fn tag(self) -> u64 {
        match self {
            StreamPurpose::Noise => 0x6e6f_6973_6500_0001,
            StreamPurpose::Bridge => 0x6272_6964_6765_0002,
        }
    }
}

/// A reproducible ChaCha8 stream for one replicate and purpose.
#[derive(Debug, Clone)]
pub struct RngStream {
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(master_seed: u64, replicate_index: u64, purpose: StreamPurpose) -> Self {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&master_seed.to_le_bytes());
        key[8..16].copy_from_slice(&purpose.tag().to_le_bytes());
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(replicate_index);
        Self { rng }
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn into_rng(self) -> ChaCha8Rng {
        self.rng
    }
}
