//! Message stitching by constrained channel clustering.
//!
//! Slot-wise recovered channels are grouped into K_a clusters, one channel
//! per slot per cluster, by solving a minimum-cost bipartite assignment
//! between channels and cluster medoids (Hungarian algorithm). A slot that
//! detected fewer channels than clusters is repaired by duplicating the
//! channels farthest from every medoid — the superposed channel of a
//! codeword collision serves two clusters at once. Medoids are always actual
//! member channels, never averages.

use crate::codec::demap;
use crate::error::{Error, Result};
use crate::C64;
use nalgebra::{DMatrix, DVector};
use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeSet, HashSet};
use std::hash::{Hash, Hasher};

/// Recovered channels of one slot with their decoded codeword indices.
#[derive(Debug, Clone)]
pub struct SlotChannels {
    pub slot: usize,
    pub channels: Vec<DVector<C64>>,
    pub codeword_indices: Vec<usize>,
}

impl SlotChannels {
    pub fn new(slot: usize, channels: Vec<DVector<C64>>, codeword_indices: Vec<usize>) -> Result<Self> {
        if channels.len() != codeword_indices.len() {
            return Err(Error::DimensionMismatch(format!(
                "slot {slot}: {} channels vs {} indices",
                channels.len(),
                codeword_indices.len()
            )));
        }
        Ok(Self { slot, channels, codeword_indices })
    }

    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }
}

/// Minimum-cost perfect assignment of a square cost matrix by shortest
/// augmenting paths. Returns `assign` with `assign[row] = column`; ties
/// resolve toward the lowest column index. Negative entries are shifted up
/// before solving (the argmin is invariant to a constant shift).
pub fn hungarian(cost: &DMatrix<f64>) -> Result<Vec<usize>> {
    let n = cost.nrows();
    if n != cost.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "cost matrix is {}x{}, must be square",
            cost.nrows(),
            cost.ncols()
        )));
    }
    if cost.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("cost matrix has non-finite entries".into()));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let shift = cost.iter().fold(0.0f64, |acc, &v| acc.min(v)).min(0.0);
    let at = |i: usize, j: usize| cost[(i, j)] - shift;

    // Potentials-based shortest augmenting path; indices are 1-based with a
    // virtual column 0 holding the row currently being inserted.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut col_row = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        col_row[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = col_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if !used[j] {
                    let cur = at(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[col_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if col_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            col_row[j0] = col_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0usize; n];
    for j in 1..=n {
        assign[col_row[j] - 1] = j - 1;
    }
    Ok(assign)
}

/// One clustered channel instance.
#[derive(Debug, Clone)]
pub struct Member {
    pub slot: usize,
    /// Original position of the channel within its slot (duplicates share it).
    pub order: usize,
    pub codeword: usize,
    pub channel: DVector<C64>,
}

/// Mutable clustering state across slot sweeps.
#[derive(Debug, Clone)]
pub struct ClusterState {
    pub k_hat: usize,
    pub medoids: Vec<DVector<C64>>,
    /// members[k][s]: channel instance currently held by cluster k for slot s.
    pub members: Vec<Vec<Option<Member>>>,
    /// Channels dropped by the overflow rule (K_s > K_hat), per slot.
    pub dropped: usize,
}

impl ClusterState {
    pub fn init(k_hat: usize, s_slots: usize, medoids: Vec<DVector<C64>>) -> Self {
        Self {
            k_hat,
            medoids,
            members: vec![vec![None; s_slots]; k_hat],
            dropped: 0,
        }
    }
}

/// Options for [`cluster_decode`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterOptions {
    /// Repair undersized slots by duplicating the channels farthest from all
    /// medoids (codeword-collision resolution). When false, undersized slots
    /// leave the unmatched clusters without a segment.
    pub handle_collisions: bool,
    /// Cap on full sweeps over the slots.
    pub max_sweeps: usize,
}

impl Default for ClusterOptions {
    fn default() -> Self {
        Self { handle_collisions: true, max_sweeps: 20 }
    }
}

/// The member of a nonempty cluster minimizing the summed Euclidean distance
/// to all other members; ties break toward the earliest (slot, order).
pub fn update_medoid(members: &[&Member]) -> DVector<C64> {
    assert!(!members.is_empty(), "medoid of an empty cluster");
    let mut best = 0usize;
    let mut best_sum = f64::INFINITY;
    for (i, cand) in members.iter().enumerate() {
        let sum: f64 = members
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, other)| (&cand.channel - &other.channel).norm())
            .sum();
        if sum < best_sum {
            best_sum = sum;
            best = i;
        }
    }
    members[best].channel.clone()
}

fn refresh_medoid(state: &mut ClusterState, k: usize) {
    let members: Vec<&Member> = state.members[k].iter().flatten().collect();
    if !members.is_empty() {
        state.medoids[k] = update_medoid(&members);
    }
}

/// Assigns one slot's channels to the clusters: balanced Hungarian matching
/// when K_s = K_hat, duplication repair (or dummy padding when collision
/// handling is off) when K_s < K_hat, and largest-min-distance dropping when
/// K_s > K_hat. Medoids are refreshed after the slot.
pub fn assign_slot(
    state: &mut ClusterState,
    slot_data: &SlotChannels,
    opts: &ClusterOptions,
) -> Result<()> {
    let k_hat = state.k_hat;
    let s = slot_data.slot;
    if k_hat == 0 {
        return Ok(());
    }

    // Working list of channel instances (indices into the slot data plus
    // duplicates), at most k_hat entries after repair.
    let mut instances: Vec<usize> = (0..slot_data.len()).collect();

    let min_dist = |ch: &DVector<C64>, medoids: &[DVector<C64>]| -> f64 {
        medoids
            .iter()
            .map(|m| (ch - m).norm())
            .fold(f64::INFINITY, f64::min)
    };

    if slot_data.len() > k_hat {
        // Overflow: drop the channels farthest from every medoid.
        let mut scored: Vec<(f64, usize)> = instances
            .iter()
            .map(|&i| (min_dist(&slot_data.channels[i], &state.medoids), i))
            .collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let excess = slot_data.len() - k_hat;
        let dropped: BTreeSet<usize> = scored.iter().take(excess).map(|&(_, i)| i).collect();
        state.dropped += excess;
        instances.retain(|i| !dropped.contains(i));
    }

    let mut padded_dummies = 0usize;
    if instances.len() < k_hat {
        let deficit = k_hat - instances.len();
        if opts.handle_collisions && !instances.is_empty() {
            // Duplicate the channels with the largest minimum distance to all
            // medoids: a collision superposition stays far from every center.
            let mut scored: Vec<(f64, usize)> = instances
                .iter()
                .map(|&i| (min_dist(&slot_data.channels[i], &state.medoids), i))
                .collect();
            scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            for dup in 0..deficit {
                instances.push(scored[dup % scored.len()].1);
            }
        } else {
            padded_dummies = deficit;
        }
    }

    // After repair the instance list plus dummy rows is exactly k_hat long.
    debug_assert_eq!(instances.len() + padded_dummies, k_hat);
    let mut cost = DMatrix::zeros(k_hat, k_hat);
    let mut max_real: f64 = 0.0;
    for (row, &i) in instances.iter().enumerate() {
        for k in 0..k_hat {
            let c = (&slot_data.channels[i] - &state.medoids[k]).norm();
            cost[(row, k)] = c;
            max_real = max_real.max(c);
        }
    }
    // Dummy rows carry a uniform cost above any real one; the cluster a
    // dummy lands on simply has no channel for this slot.
    let dummy_cost = 10.0 * (1.0 + max_real);
    for row in instances.len()..k_hat {
        for k in 0..k_hat {
            cost[(row, k)] = dummy_cost;
        }
    }
    let assign = hungarian(&cost)?;

    for (row, &col) in assign.iter().enumerate() {
        if row < instances.len() {
            let i = instances[row];
            state.members[col][s] = Some(Member {
                slot: s,
                order: i,
                codeword: slot_data.codeword_indices[i],
                channel: slot_data.channels[i].clone(),
            });
        } else {
            state.members[col][s] = None;
        }
    }
    for k in 0..k_hat {
        refresh_medoid(state, k);
    }
    Ok(())
}

fn assignment_hash(state: &ClusterState) -> u64 {
    let mut h = DefaultHasher::new();
    for cluster in &state.members {
        for m in cluster {
            match m {
                Some(mm) => (mm.slot, mm.order, mm.codeword).hash(&mut h),
                None => usize::MAX.hash(&mut h),
            }
        }
        0xfeedu16.hash(&mut h);
    }
    h.finish()
}

/// Result of the clustering decode.
#[derive(Debug, Clone)]
pub struct ClusterOutcome {
    /// Decoded messages (deduplicated bit strings of length S * J).
    pub messages: BTreeSet<Vec<u8>>,
    /// Per-cluster codeword index sequences; `None` marks a missing slot.
    pub index_sequences: Vec<Vec<Option<usize>>>,
    pub sweeps: usize,
    /// Channels discarded by the overflow rule.
    pub dropped_channels: usize,
    /// Clusters that missed at least one slot and produced no message.
    pub incomplete_clusters: usize,
}

/// Runs the modified K-medoids decode over all slots: K_hat is the largest
/// slot cardinality, the channels of that slot initialize the medoids, and
/// slot sweeps repeat until the memberships stabilize, oscillate, or hit the
/// sweep cap. Each complete cluster emits its codeword indices in slot order,
/// demapped to J-bit segments and concatenated.
pub fn cluster_decode(
    slots: &[SlotChannels],
    j_bits: usize,
    opts: &ClusterOptions,
) -> Result<ClusterOutcome> {
    if slots.len() < 2 {
        return Err(Error::Domain("need at least two slots to stitch".into()));
    }
    let k_hat = slots.iter().map(|s| s.len()).max().unwrap_or(0);
    if k_hat == 0 {
        return Ok(ClusterOutcome {
            messages: BTreeSet::new(),
            index_sequences: Vec::new(),
            sweeps: 0,
            dropped_channels: 0,
            incomplete_clusters: 0,
        });
    }
    let seed_slot = slots
        .iter()
        .enumerate()
        .find(|(_, s)| s.len() == k_hat)
        .map(|(i, _)| i)
        .unwrap();
    let medoids: Vec<DVector<C64>> = slots[seed_slot].channels.clone();
    let mut state = ClusterState::init(k_hat, slots.len(), medoids);

    let mut seen = HashSet::new();
    let mut sweeps = 0usize;
    let mut prev_hash = 0u64;
    while sweeps < opts.max_sweeps {
        sweeps += 1;
        for slot_data in slots {
            assign_slot(&mut state, slot_data, opts)?;
        }
        let h = assignment_hash(&state);
        if sweeps > 1 && h == prev_hash {
            break;
        }
        if !seen.insert(h) {
            break; // oscillation: the state revisited an earlier assignment
        }
        prev_hash = h;
    }

    let mut messages = BTreeSet::new();
    let mut index_sequences = Vec::with_capacity(k_hat);
    let mut incomplete = 0usize;
    for cluster in &state.members {
        let seq: Vec<Option<usize>> = cluster.iter().map(|m| m.as_ref().map(|mm| mm.codeword)).collect();
        if seq.iter().all(Option::is_some) {
            let mut bits = Vec::with_capacity(slots.len() * j_bits);
            for idx in seq.iter().flatten() {
                bits.extend(demap(*idx, j_bits)?);
            }
            messages.insert(bits);
        } else {
            incomplete += 1;
        }
        index_sequences.push(seq);
    }
    Ok(ClusterOutcome {
        messages,
        index_sequences,
        sweeps,
        dropped_channels: state.dropped,
        incomplete_clusters: incomplete,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array::standard_complex_gaussian;
    use rand::{seq::SliceRandom, Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_force_min(cost: &DMatrix<f64>) -> f64 {
        fn rec(cost: &DMatrix<f64>, row: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
            if row == cost.nrows() {
                *best = best.min(acc);
                return;
            }
            for j in 0..cost.ncols() {
                if !used[j] {
                    used[j] = true;
                    rec(cost, row + 1, used, acc + cost[(row, j)], best);
                    used[j] = false;
                }
            }
        }
        let mut best = f64::INFINITY;
        rec(cost, 0, &mut vec![false; cost.ncols()], 0.0, &mut best);
        best
    }

    fn assignment_cost(cost: &DMatrix<f64>, assign: &[usize]) -> f64 {
        assign.iter().enumerate().map(|(i, &j)| cost[(i, j)]).sum()
    }

    #[test]
    fn hungarian_small_cases() {
        let c = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let a = hungarian(&c).unwrap();
        assert_eq!(a, vec![0, 1]);
        assert_eq!(assignment_cost(&c, &a), 2.0);

        let flat = DMatrix::from_element(4, 4, 3.5);
        let a = hungarian(&flat).unwrap();
        assert_eq!(assignment_cost(&flat, &a), 14.0);
        assert_eq!(hungarian(&flat).unwrap(), a);

        assert!(hungarian(&DMatrix::from_element(2, 3, 1.0)).is_err());
    }

    #[test]
    fn hungarian_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for n in [3usize, 5, 7] {
            for _ in 0..60 {
                let c = DMatrix::from_fn(n, n, |_, _| rng.gen_range(0.0..10.0));
                let a = hungarian(&c).unwrap();
                let got = assignment_cost(&c, &a);
                let want = brute_force_min(&c);
                assert!((got - want).abs() < 1e-9, "n={n}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn hungarian_handles_negatives_by_shift() {
        let c = DMatrix::from_row_slice(2, 2, &[-3.0, 1.0, 0.0, -2.0]);
        let a = hungarian(&c).unwrap();
        assert_eq!(assignment_cost(&c, &a), -5.0);
    }

    fn rand_channel(rng: &mut ChaCha8Rng, m: usize) -> DVector<C64> {
        DVector::from_fn(m, |_, _| standard_complex_gaussian(rng) * 3.0)
    }

    #[test]
    fn medoid_update_trivial_and_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mk = |slot, order, ch: DVector<C64>| Member { slot, order, codeword: 1, channel: ch };
        let v = rand_channel(&mut rng, 6);
        let w = rand_channel(&mut rng, 6);
        let single = [mk(0, 0, v.clone())];
        let refs: Vec<&Member> = single.iter().collect();
        assert_eq!(update_medoid(&refs), v);

        let majority = [mk(0, 0, v.clone()), mk(1, 0, v.clone()), mk(2, 0, w.clone())];
        let refs: Vec<&Member> = majority.iter().collect();
        assert_eq!(update_medoid(&refs), v);

        // exhaustive distance-sum oracle on random members
        let members: Vec<Member> = (0..5).map(|s| mk(s, 0, rand_channel(&mut rng, 6))).collect();
        let refs: Vec<&Member> = members.iter().collect();
        let got = update_medoid(&refs);
        let mut best = (f64::INFINITY, 0usize);
        for (i, mi) in members.iter().enumerate() {
            let s: f64 = members
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, mj)| (&mi.channel - &mj.channel).norm())
                .sum();
            if s < best.0 {
                best = (s, i);
            }
        }
        assert_eq!(got, members[best.1].channel);
    }

    #[test]
    fn medoid_is_an_actual_member() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let members: Vec<Member> = (0..7)
            .map(|s| Member { slot: s, order: 0, codeword: 2, channel: rand_channel(&mut rng, 8) })
            .collect();
        let refs: Vec<&Member> = members.iter().collect();
        let med = update_medoid(&refs);
        assert!(members.iter().any(|m| m.channel == med));
    }

    #[test]
    fn medoid_resists_planted_outlier() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let base = rand_channel(&mut rng, 8);
            let mut members: Vec<Member> = (0..5)
                .map(|s| {
                    let mut ch = base.clone();
                    for v in ch.iter_mut() {
                        *v += standard_complex_gaussian(&mut rng) * 0.05;
                    }
                    Member { slot: s, order: 0, codeword: 1, channel: ch }
                })
                .collect();
            let outlier_slot = rng.gen_range(0..5);
            let outlier = &members[outlier_slot].channel * C64::new(10.0, 0.0);
            members[outlier_slot].channel = outlier.clone();
            let refs: Vec<&Member> = members.iter().collect();
            assert_ne!(update_medoid(&refs), outlier);
        }
    }

    #[test]
    fn balanced_assignment_identity_when_channels_equal_medoids() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let chans: Vec<DVector<C64>> = (0..3).map(|_| rand_channel(&mut rng, 6)).collect();
        let mut state = ClusterState::init(3, 2, chans.clone());
        let slot = SlotChannels::new(0, chans.clone(), vec![4, 9, 2]).unwrap();
        assign_slot(&mut state, &slot, &ClusterOptions::default()).unwrap();
        for k in 0..3 {
            let m = state.members[k][0].as_ref().unwrap();
            assert_eq!(m.channel, chans[k]);
        }
    }

    #[test]
    fn collision_duplicate_fills_both_orphan_clusters() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let ha = rand_channel(&mut rng, 8);
        let hb = rand_channel(&mut rng, 8);
        let hc = &rand_channel(&mut rng, 8) * C64::new(4.0, 0.0);
        let mut state = ClusterState::init(3, 1, vec![ha.clone(), hb.clone(), hc.clone()]);
        let collided = &ha + &hb;
        let slot = SlotChannels::new(0, vec![collided.clone(), hc.clone()], vec![7, 11]).unwrap();
        assign_slot(&mut state, &slot, &ClusterOptions::default()).unwrap();
        let got: Vec<usize> = (0..3)
            .map(|k| state.members[k][0].as_ref().unwrap().codeword)
            .collect();
        assert_eq!(got, vec![7, 7, 11]);
    }

    #[test]
    fn overflow_drops_farthest_channels() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let m1 = rand_channel(&mut rng, 6);
        let m2 = rand_channel(&mut rng, 6);
        let far = &rand_channel(&mut rng, 6) * C64::new(20.0, 0.0);
        let mut state = ClusterState::init(2, 1, vec![m1.clone(), m2.clone()]);
        let slot = SlotChannels::new(0, vec![m1.clone(), far, m2.clone()], vec![1, 2, 3]).unwrap();
        assign_slot(&mut state, &slot, &ClusterOptions::default()).unwrap();
        assert_eq!(state.dropped, 1);
        let kept: BTreeSet<usize> = (0..2)
            .map(|k| state.members[k][0].as_ref().unwrap().codeword)
            .collect();
        assert_eq!(kept, BTreeSet::from([1, 3]));
    }

    fn noiseless_frame(
        rng: &mut ChaCha8Rng,
        k_a: usize,
        s_slots: usize,
        j_bits: usize,
        perturb: f64,
    ) -> (Vec<SlotChannels>, BTreeSet<Vec<u8>>) {
        let m = 8;
        let chans: Vec<DVector<C64>> = (0..k_a).map(|_| rand_channel(rng, m)).collect();
        let bits: Vec<Vec<u8>> = (0..k_a)
            .map(|_| (0..s_slots * j_bits).map(|_| rng.gen_range(0..2u8)).collect())
            .collect();
        let msgs = crate::codec::split_and_encode(&bits, s_slots, j_bits).unwrap();
        let mut slots = Vec::new();
        for s in 0..s_slots {
            let mut order: Vec<usize> = (0..k_a).collect();
            order.shuffle(rng);
            let mut cs = Vec::new();
            let mut idxs = Vec::new();
            for &k in &order {
                let mut ch = chans[k].clone();
                if perturb > 0.0 {
                    for v in ch.iter_mut() {
                        *v += standard_complex_gaussian(rng) * perturb;
                    }
                }
                cs.push(ch);
                idxs.push(msgs.segments[k][s]);
            }
            slots.push(SlotChannels::new(s, cs, idxs).unwrap());
        }
        (slots, bits.into_iter().collect())
    }

    #[test]
    fn noiseless_distinct_users_decode_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (slots, truth) = noiseless_frame(&mut rng, 6, 3, 5, 0.0);
        let out = cluster_decode(&slots, 5, &ClusterOptions::default()).unwrap();
        assert_eq!(out.messages, truth);
        assert_eq!(out.incomplete_clusters, 0);
    }

    #[test]
    fn perturbed_channels_still_stitch() {
        for seed in 0..100u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let (slots, truth) = noiseless_frame(&mut rng, 10, 4, 6, 1e-3);
            let out = cluster_decode(&slots, 6, &ClusterOptions::default()).unwrap();
            assert_eq!(out.messages, truth, "seed {seed}");
        }
    }

    #[test]
    fn sweeps_terminate_within_cap() {
        for seed in 0..30u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(2000 + seed);
            let (slots, _) = noiseless_frame(&mut rng, 8, 4, 5, 0.3);
            let out = cluster_decode(&slots, 5, &ClusterOptions::default()).unwrap();
            assert!(out.sweeps <= ClusterOptions::default().max_sweeps);
        }
    }

    #[test]
    fn permutation_invariance_of_decoded_set() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let (slots, _) = noiseless_frame(&mut rng, 7, 3, 5, 1e-4);
        let base = cluster_decode(&slots, 5, &ClusterOptions::default()).unwrap();
        let mut shuffled = slots.clone();
        for s in shuffled.iter_mut() {
            let mut order: Vec<usize> = (0..s.len()).collect();
            order.shuffle(&mut rng);
            s.channels = order.iter().map(|&i| s.channels[i].clone()).collect();
            s.codeword_indices = order.iter().map(|&i| s.codeword_indices[i]).collect();
        }
        let out = cluster_decode(&shuffled, 5, &ClusterOptions::default()).unwrap();
        assert_eq!(out.messages, base.messages);
    }

    #[test]
    fn collision_handling_recovers_shared_codeword() {
        // Two users pick the same codeword in slot 1; the recovered channel
        // there is their superposition and must serve both clusters.
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let m = 8;
        let k_a = 4;
        let s_slots = 3;
        let j = 5;
        let chans: Vec<DVector<C64>> = (0..k_a).map(|_| rand_channel(&mut rng, m)).collect();
        let mut segments: Vec<Vec<usize>> = (0..k_a)
            .map(|_| (0..s_slots).map(|_| rng.gen_range(1..=(1 << j))).collect())
            .collect();
        segments[0][1] = 17;
        segments[1][1] = 17;
        segments[2][1] = 3;
        segments[3][1] = 29;
        let mut slots = Vec::new();
        for s in 0..s_slots {
            let mut cs: Vec<DVector<C64>> = Vec::new();
            let mut idx = Vec::new();
            let mut seen: std::collections::BTreeMap<usize, DVector<C64>> = Default::default();
            for k in 0..k_a {
                seen.entry(segments[k][s])
                    .and_modify(|c| *c += &chans[k])
                    .or_insert_with(|| chans[k].clone());
            }
            for (i, c) in seen {
                idx.push(i);
                cs.push(c);
            }
            slots.push(SlotChannels::new(s, cs, idx).unwrap());
        }
        let truth: BTreeSet<Vec<u8>> = (0..k_a)
            .map(|k| {
                let mut bits = Vec::new();
                for s in 0..s_slots {
                    bits.extend(demap(segments[k][s], j).unwrap());
                }
                bits
            })
            .collect();
        let on = cluster_decode(&slots, j, &ClusterOptions::default()).unwrap();
        assert_eq!(on.messages, truth);
        let off = cluster_decode(
            &slots,
            j,
            &ClusterOptions { handle_collisions: false, max_sweeps: 20 },
        )
        .unwrap();
        assert!(off.messages.len() < truth.len());
        assert!(off.incomplete_clusters > 0);
    }

    #[test]
    fn degenerate_inputs() {
        let empty = vec![
            SlotChannels::new(0, vec![], vec![]).unwrap(),
            SlotChannels::new(1, vec![], vec![]).unwrap(),
        ];
        let out = cluster_decode(&empty, 4, &ClusterOptions::default()).unwrap();
        assert!(out.messages.is_empty());
        assert!(cluster_decode(&empty[..1], 4, &ClusterOptions::default()).is_err());
    }
}
