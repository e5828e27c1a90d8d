//! Feature hashing. Raw categorical strings map to ids with 64-bit FNV-1a over
//! their UTF-8 bytes, reduced modulo the field vocabulary. The function has no
//! seed and no platform dependence, so ids are stable across runs and machines.

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

pub fn hash_feature(raw: &str, vocab_size: usize) -> u32 {
    (fnv1a64(raw.as_bytes()) % vocab_size as u64) as u32
}
