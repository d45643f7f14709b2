//! Common-codebook encoding and slot-wise transmission.
//!
//! A B-bit message is split into S segments of J bits; each segment selects
//! one column of a shared N x 2^J codebook built from randomly chosen rows
//! of a 2^J-point DFT matrix. Segment bits map to the codeword index as the
//! radix-ten value of the segment (MSB first) plus one.

use crate::array::{standard_complex_gaussian, SpatialChannel};
use crate::error::{Error, Result};
use crate::C64;
use nalgebra::DMatrix;
use rand::Rng;
use std::collections::BTreeSet;
use std::f64::consts::PI;

/// Shared codebook: N rows of the 2^J DFT, columns of norm sqrt(N).
#[derive(Debug, Clone)]
pub struct Codebook {
    pub matrix: DMatrix<C64>,
    pub n_block: usize,
    pub j_bits: usize,
    /// DFT row indices the codebook was drawn from (kept for reproducibility).
    pub rows: Vec<usize>,
}

impl Codebook {
    /// Draws N distinct rows (without replacement) of the 2^J x 2^J DFT.
    pub fn partial_dft<R: Rng>(n_block: usize, j_bits: usize, rng: &mut R) -> Result<Self> {
        let size = 1usize << j_bits;
        if n_block == 0 || n_block > size {
            return Err(Error::Domain(format!(
                "block length {n_block} must lie in 1..=2^{j_bits}"
            )));
        }
        let rows: Vec<usize> = rand::seq::index::sample(rng, size, n_block).into_vec();
        let matrix = DMatrix::from_fn(n_block, size, |i, j| {
            let phase = -2.0 * PI * (rows[i] as f64) * (j as f64) / size as f64;
            C64::from_polar(1.0, phase)
        });
        Ok(Self { matrix, n_block, j_bits, rows })
    }

    pub fn n_codewords(&self) -> usize {
        1 << self.j_bits
    }
}

/// Messages of all active users with their per-slot codeword indices.
#[derive(Debug, Clone, PartialEq)]
pub struct MessageSet {
    /// K_a x B payload bits (0/1).
    pub bits: Vec<Vec<u8>>,
    /// K_a x S codeword indices, each in 1..=2^J.
    pub segments: Vec<Vec<usize>>,
}

/// Radix-ten value of a bit slice, MSB first.
fn dec(bits: &[u8]) -> usize {
    bits.iter().fold(0usize, |acc, &b| (acc << 1) | b as usize)
}

/// Splits each B-bit message into S segments of J bits and maps segment s
/// to codeword index dec(bits) + 1. Collisions between users are permitted.
pub fn split_and_encode(bits: &[Vec<u8>], s_slots: usize, j_bits: usize) -> Result<MessageSet> {
    let b_len = s_slots * j_bits;
    let mut segments = Vec::with_capacity(bits.len());
    for (k, row) in bits.iter().enumerate() {
        if row.len() != b_len {
            return Err(Error::DimensionMismatch(format!(
                "user {k}: message length {} != S*J = {b_len}",
                row.len()
            )));
        }
        if row.iter().any(|&b| b > 1) {
            return Err(Error::Domain(format!("user {k}: message is not binary")));
        }
        let segs = (0..s_slots)
            .map(|s| dec(&row[s * j_bits..(s + 1) * j_bits]) + 1)
            .collect();
        segments.push(segs);
    }
    Ok(MessageSet { bits: bits.to_vec(), segments })
}

/// Inverse of the segment mapping: J bits with dec(bits) + 1 = index.
pub fn demap(index: usize, j_bits: usize) -> Result<Vec<u8>> {
    let size = 1usize << j_bits;
    if index == 0 || index > size {
        return Err(Error::Domain(format!("index {index} out of 1..=2^{j_bits}")));
    }
    let v = index - 1;
    Ok((0..j_bits).rev().map(|b| ((v >> b) & 1) as u8).collect())
}

/// One received slot with the ground truth needed for scoring.
#[derive(Debug, Clone)]
pub struct SlotObservation {
    /// Received N x M signal, Y = A Xi H + W.
    pub y: DMatrix<C64>,
    /// Noiseless component A Xi H (ground truth, y minus the stored noise).
    pub signal: DMatrix<C64>,
    /// Codeword index chosen by each user in this slot (1-based).
    pub user_indices: Vec<usize>,
    /// Set of active codeword indices.
    pub true_active: BTreeSet<usize>,
    /// Per-complex-entry noise variance sigma^2 (0 when noiseless).
    pub noise_var: f64,
}

/// Synthesizes the slot-s observation. The noise is calibrated so that the
/// realized ratio ||A Xi H||_F^2 / E||W||_F^2 equals the linear SNR;
/// `snr_db = None` disables noise entirely.
pub fn transmit_slot<R: Rng>(
    cb: &Codebook,
    msgs: &MessageSet,
    slot: usize,
    channels: &[SpatialChannel],
    snr_db: Option<f64>,
    rng: &mut R,
) -> Result<SlotObservation> {
    if msgs.segments.len() != channels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} messages vs {} channels",
            msgs.segments.len(),
            channels.len()
        )));
    }
    let k_a = channels.len();
    if k_a == 0 {
        return Err(Error::Domain("no active users".into()));
    }
    let m = channels[0].len();
    if msgs.segments.iter().any(|s| slot >= s.len()) {
        return Err(Error::Domain(format!("slot {slot} out of range")));
    }

    let mut a_sel = DMatrix::zeros(cb.n_block, k_a);
    let mut h_mat = DMatrix::zeros(k_a, m);
    let mut user_indices = Vec::with_capacity(k_a);
    let mut true_active = BTreeSet::new();
    for (k, ch) in channels.iter().enumerate() {
        let idx = msgs.segments[k][slot];
        user_indices.push(idx);
        true_active.insert(idx);
        a_sel.set_column(k, &cb.matrix.column(idx - 1));
        h_mat.set_row(k, &ch.transpose());
    }
    let signal = a_sel * h_mat;

    let (y, noise_var) = match snr_db {
        None => (signal.clone(), 0.0),
        Some(db) => {
            let snr_lin = 10f64.powf(db / 10.0);
            let sig_pow = signal.norm_squared();
            let sigma2 = sig_pow / (snr_lin * (cb.n_block * m) as f64);
            let sigma = sigma2.sqrt();
            let mut y = signal.clone();
            for v in y.iter_mut() {
                *v += standard_complex_gaussian(rng) * sigma;
            }
            (y, sigma2)
        }
    };

    Ok(SlotObservation { y, signal, user_indices, true_active, noise_var })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array::{synth_channel, ArrayConfig, FieldRegion, PathSet};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn all_zero_message_maps_to_index_one() {
        let bits = vec![vec![0u8; 12]];
        let ms = split_and_encode(&bits, 3, 4).unwrap();
        assert_eq!(ms.segments[0], vec![1, 1, 1]);
    }

    #[test]
    fn msb_first_convention() {
        // J = 2, bits [1,0]: dec = 2, index 3.
        let ms = split_and_encode(&[vec![1, 0]], 1, 2).unwrap();
        assert_eq!(ms.segments[0][0], 3);
    }

    #[test]
    fn identical_messages_collide() {
        let row = vec![1u8, 0, 1, 1, 0, 0];
        let ms = split_and_encode(&[row.clone(), row], 2, 3).unwrap();
        assert_eq!(ms.segments[0], ms.segments[1]);
    }

    #[test]
    fn demap_edges_and_round_trip() {
        assert_eq!(demap(1, 3).unwrap(), vec![0, 0, 0]);
        assert_eq!(demap(8, 3).unwrap(), vec![1, 1, 1]);
        assert!(demap(0, 3).is_err());
        assert!(demap(9, 3).is_err());
        for j in 1..=12usize {
            for idx in 1..=(1usize << j) {
                let bits = demap(idx, j).unwrap();
                assert_eq!(dec(&bits) + 1, idx);
            }
        }
    }

    #[test]
    fn codebook_column_norms_match() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cb = Codebook::partial_dft(20, 8, &mut rng).unwrap();
        let want = (20f64).sqrt();
        for c in 0..cb.n_codewords() {
            assert!((cb.matrix.column(c).norm() - want).abs() < 1e-10);
        }
        let distinct: BTreeSet<_> = cb.rows.iter().collect();
        assert_eq!(distinct.len(), 20);
    }

    fn little_setup(seed: u64) -> (Codebook, MessageSet, Vec<SpatialChannel>, ChaCha8Rng) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cb = Codebook::partial_dft(16, 6, &mut rng).unwrap();
        let cfg = ArrayConfig::new(8, 0.1).unwrap();
        let k_a = 3;
        let bits: Vec<Vec<u8>> = (0..k_a)
            .map(|_| (0..12).map(|_| rng.gen_range(0..2u8)).collect())
            .collect();
        let msgs = split_and_encode(&bits, 2, 6).unwrap();
        let chans: Vec<SpatialChannel> = (0..k_a)
            .map(|_| {
                let ps = PathSet::random(2, (10.0, 20.0), &mut rng);
                synth_channel(&cfg, &ps, FieldRegion::Near).unwrap()
            })
            .collect();
        (cb, msgs, chans, rng)
    }

    #[test]
    fn noiseless_slot_is_exact() {
        let (cb, msgs, chans, mut rng) = little_setup(7);
        let obs = transmit_slot(&cb, &msgs, 0, &chans, None, &mut rng).unwrap();
        assert_eq!(obs.noise_var, 0.0);
        assert!((&obs.y - &obs.signal).norm() == 0.0);
        assert_eq!(obs.user_indices.len(), 3);
    }

    #[test]
    fn single_user_slot_has_rank_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cb = Codebook::partial_dft(8, 5, &mut rng).unwrap();
        let msgs = split_and_encode(&[vec![1, 0, 1, 0, 1]], 1, 5).unwrap();
        let cfg = ArrayConfig::new(6, 0.1).unwrap();
        let ch = synth_channel(&cfg, &PathSet::random(1, (10.0, 20.0), &mut rng), FieldRegion::Near)
            .unwrap();
        let obs = transmit_slot(&cb, &msgs, 0, &[ch], None, &mut rng).unwrap();
        let svd = obs.y.svd(false, false);
        assert!(svd.singular_values[0] > 1e-6);
        for i in 1..svd.singular_values.len() {
            assert!(svd.singular_values[i] < 1e-10);
        }
    }

    #[test]
    fn realized_snr_close_to_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cb = Codebook::partial_dft(100, 10, &mut rng).unwrap();
        let cfg = ArrayConfig::new(128, 0.1).unwrap();
        let k_a = 10;
        let bits: Vec<Vec<u8>> = (0..k_a)
            .map(|_| (0..20).map(|_| rng.gen_range(0..2u8)).collect())
            .collect();
        let msgs = split_and_encode(&bits, 2, 10).unwrap();
        let chans: Vec<SpatialChannel> = (0..k_a)
            .map(|_| {
                synth_channel(&cfg, &PathSet::random(2, (30.0, 100.0), &mut rng), FieldRegion::Near)
                    .unwrap()
            })
            .collect();
        let obs = transmit_slot(&cb, &msgs, 0, &chans, Some(10.0), &mut rng).unwrap();
        let w = &obs.y - &obs.signal;
        let realized_db = 10.0 * (obs.signal.norm_squared() / w.norm_squared()).log10();
        assert!((realized_db - 10.0).abs() < 0.5, "realized {realized_db} dB");
    }

    #[test]
    fn transmit_is_deterministic_per_seed() {
        let (cb, msgs, chans, _) = little_setup(21);
        let mut r1 = ChaCha8Rng::seed_from_u64(123);
        let mut r2 = ChaCha8Rng::seed_from_u64(123);
        let o1 = transmit_slot(&cb, &msgs, 1, &chans, Some(5.0), &mut r1).unwrap();
        let o2 = transmit_slot(&cb, &msgs, 1, &chans, Some(5.0), &mut r2).unwrap();
        assert_eq!(o1.y, o2.y);
    }

    proptest! {
        #[test]
        fn encode_demap_identity(j in 1usize..10, seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = 3usize;
            let bits: Vec<u8> = (0..s * j).map(|_| rng.gen_range(0..2u8)).collect();
            let ms = split_and_encode(&[bits.clone()], s, j).unwrap();
            let mut rebuilt = Vec::new();
            for &idx in &ms.segments[0] {
                rebuilt.extend(demap(idx, j).unwrap());
            }
            prop_assert_eq!(rebuilt, bits);
        }
    }
}
