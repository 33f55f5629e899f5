//! FNV-1a style digests (one round per 64-bit word) used to fingerprint parameters and batches.

pub(crate) struct Fnv(u64);

impl Fnv {
    pub fn new() -> Self {
        Fnv(0xcbf2_9ce4_8422_2325)
    }

    pub fn write_u64(&mut self, v: u64) {
        self.0 ^= v;
        self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        self.0 ^= self.0 >> 29;
    }

    pub fn write_f64s(&mut self, vs: &[f64]) {
        for v in vs {
            self.write_u64(v.to_bits());
        }
    }

    pub fn finish(&self) -> u64 {
        self.0
    }
}
