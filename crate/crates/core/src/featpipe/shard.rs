const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

/// Extraction shard of a speaker. `num_shards` of zero is treated as one.
pub fn shard_by_speaker(speaker_id: &str, num_shards: usize) -> usize {
    (fnv1a64(speaker_id.as_bytes()) % num_shards.max(1) as u64) as usize
}
