pub(crate) use crate::oracle::rel_frobenius;

pub(crate) fn seeded_vec(seed: u64, len: usize) -> Vec<f32> {
    crate::weights::seeded_uniform(seed, len, 1.0)
}
