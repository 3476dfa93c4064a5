//! Semantic caches shared (approximately) by transmitter and receiver.
//!
//! Each of the `n_slots` latent slots owns a FIFO ring of at most `capacity`
//! vectors. Position `j` within a slot is logical: 0 is the oldest surviving
//! entry. The transmitter replaces slot `i` by an index `j*` when its best
//! cosine match reaches the slot threshold; misses are transmitted and
//! appended to the slot on both ends. The transmitter stores clean vectors
//! and the receiver stores what it received, so the two caches drift apart
//! under channel noise while their occupancy stays in lockstep.

use std::collections::VecDeque;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::format::{self, Dtype};
use crate::latent::SemanticLatent;

/// Per-slot similarity threshold `γ_i`. `Never` disables caching for the slot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Threshold {
    At(f64),
    Never(NeverTag),
}

/// Serialized as the string `"never"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NeverTag {
    Never,
}

impl Threshold {
    pub const NEVER: Threshold = Threshold::Never(NeverTag::Never);

    pub fn admits(&self, similarity: f64) -> bool {
        match *self {
            Threshold::At(gamma) => similarity >= gamma,
            Threshold::Never(_) => false,
        }
    }

    pub fn is_valid(&self) -> bool {
        match *self {
            Threshold::At(g) => (-1.0..=1.0).contains(&g),
            Threshold::Never(_) => true,
        }
    }
}

impl fmt::Display for Threshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Threshold::At(g) => write!(f, "{g}"),
            Threshold::Never(_) => f.write_str("never"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdProfile {
    gamma: Vec<Threshold>,
}

impl ThresholdProfile {
    pub fn new(gamma: Vec<Threshold>) -> Self {
        Self { gamma }
    }

    pub fn uniform(n_slots: usize, gamma: f64) -> Self {
        Self::new(vec![Threshold::At(gamma); n_slots])
    }

    pub fn never(n_slots: usize) -> Self {
        Self::new(vec![Threshold::NEVER; n_slots])
    }

    /// 0.95 on slots 6..=13, 0.8 elsewhere (the face-latent layout).
    pub fn face_default(n_slots: usize) -> Self {
        Self::new(
            (0..n_slots)
                .map(|i| Threshold::At(if (6..=13).contains(&i) { 0.95 } else { 0.8 }))
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.gamma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gamma.is_empty()
    }

    pub fn get(&self, slot: usize) -> Threshold {
        self.gamma[slot]
    }

    pub fn as_slice(&self) -> &[Threshold] {
        &self.gamma
    }
}

/// Cosine similarity clamped to `[-1, 1]`; 0 when either vector has zero norm.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::LengthMismatch {
            left: u.len(),
            right: v.len(),
        });
    }
    let (mut dot, mut nu, mut nv) = (0.0, 0.0, 0.0);
    for (a, b) in u.iter().zip(v) {
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return Ok(0.0);
    }
    Ok((dot / (nu.sqrt() * nv.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Match {
    pub index: usize,
    pub similarity: f64,
}

/// Per-slot FIFO memory of semantic vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct CacheMemory {
    capacity: usize,
    slot_len: usize,
    slots: Vec<VecDeque<Vec<f64>>>,
    inserted: Vec<u64>,
}

impl CacheMemory {
    pub fn new(n_slots: usize, slot_len: usize, capacity: usize) -> Self {
        Self {
            capacity,
            slot_len,
            slots: vec![VecDeque::with_capacity(capacity); n_slots],
            inserted: vec![0; n_slots],
        }
    }

    pub fn n_slots(&self) -> usize {
        self.slots.len()
    }

    pub fn slot_len(&self) -> usize {
        self.slot_len
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn occupancy(&self, slot: usize) -> usize {
        self.slots[slot].len()
    }

    pub fn total_occupancy(&self) -> usize {
        self.slots.iter().map(VecDeque::len).sum()
    }

    /// Total insertions ever made into `slot`, including evicted ones.
    pub fn insertions(&self, slot: usize) -> u64 {
        self.inserted[slot]
    }

    pub fn entry(&self, slot: usize, index: usize) -> Option<&[f64]> {
        self.slots.get(slot)?.get(index).map(Vec::as_slice)
    }

    /// Entries of `slot`, oldest first.
    pub fn entries(&self, slot: usize) -> impl Iterator<Item = &[f64]> {
        self.slots[slot].iter().map(Vec::as_slice)
    }

    /// Appends to `slot`, evicting and returning the oldest entry when full.
    pub fn insert(&mut self, slot: usize, v: Vec<f64>) -> Result<Option<Vec<f64>>> {
        if v.len() != self.slot_len {
            return Err(Error::LengthMismatch {
                left: self.slot_len,
                right: v.len(),
            });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite { context: "cache entry" });
        }
        if self.capacity == 0 {
            return Ok(Some(v));
        }
        let ring = &mut self.slots[slot];
        let evicted = if ring.len() == self.capacity {
            ring.pop_front()
        } else {
            None
        };
        ring.push_back(v);
        self.inserted[slot] += 1;
        Ok(evicted)
    }

    /// Best cosine match in `slot`; ties go to the oldest entry.
    pub fn lookup(&self, slot: usize, query: &[f64]) -> Result<Option<Match>> {
        let mut best: Option<Match> = None;
        for (index, entry) in self.slots[slot].iter().enumerate() {
            let similarity = cosine(query, entry)?;
            if best.is_none_or(|b| similarity > b.similarity) {
                best = Some(Match { index, similarity });
            }
        }
        Ok(best)
    }
}

/// A slot replaced by a cache index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CacheHit {
    pub slot: usize,
    pub index: usize,
    pub similarity: f64,
}

/// Split of a latent into transmitted vectors and cache references.
#[derive(Debug, Clone, PartialEq)]
pub struct TransmissionPlan {
    /// Missed slots, ascending, with their vectors.
    pub kept: Vec<(usize, Vec<f64>)>,
    /// Hit slots, ascending.
    pub hits: Vec<CacheHit>,
}

impl TransmissionPlan {
    /// Number of transmitted semantic vectors.
    pub fn n_s(&self) -> usize {
        self.kept.len()
    }

    /// Kept vectors concatenated in slot order.
    pub fn payload(&self) -> Vec<f64> {
        self.kept.iter().flat_map(|(_, v)| v.iter().copied()).collect()
    }

    pub fn index_refs(&self) -> Vec<IndexRef> {
        self.hits
            .iter()
            .map(|h| IndexRef {
                slot: h.slot,
                index: h.index,
            })
            .collect()
    }
}

fn check_shape(z: &SemanticLatent, cache: &CacheMemory) -> Result<()> {
    if z.n_slots() != cache.n_slots() || z.slot_len() != cache.slot_len() {
        return Err(Error::shape(
            "latent vs cache",
            format!("{}x{}", cache.n_slots(), cache.slot_len()),
            format!("{}x{}", z.n_slots(), z.slot_len()),
        ));
    }
    Ok(())
}

pub fn plan_transmission(
    z: &SemanticLatent,
    cache: &CacheMemory,
    thresholds: &ThresholdProfile,
) -> Result<TransmissionPlan> {
    check_shape(z, cache)?;
    if thresholds.len() != z.n_slots() {
        return Err(Error::shape("threshold profile", z.n_slots(), thresholds.len()));
    }
    let mut plan = TransmissionPlan {
        kept: Vec::new(),
        hits: Vec::new(),
    };
    for (slot, row) in z.rows().enumerate() {
        let threshold = thresholds.get(slot);
        let hit = match threshold {
            Threshold::Never(_) => None,
            Threshold::At(_) => cache
                .lookup(slot, row)?
                .filter(|m| threshold.admits(m.similarity)),
        };
        match hit {
            Some(m) => plan.hits.push(CacheHit {
                slot,
                index: m.index,
                similarity: m.similarity,
            }),
            None => plan.kept.push((slot, row.to_vec())),
        }
    }
    Ok(plan)
}

/// Transmitter-side update: append every missed vector; hits change nothing.
pub fn tx_update(cache: &mut CacheMemory, plan: &TransmissionPlan) -> Result<()> {
    for (slot, v) in &plan.kept {
        cache.insert(*slot, v.clone())?;
    }
    Ok(())
}

/// Reference carried on the index side channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexRef {
    pub slot: usize,
    pub index: usize,
}

/// Index side-channel frame: the references plus an integrity tag, so a
/// corrupted frame is detected instead of silently selecting a wrong entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexFrame {
    pub refs: Vec<IndexRef>,
    pub tag: [u8; 4],
}

impl IndexFrame {
    pub fn seal(refs: Vec<IndexRef>) -> Self {
        let tag = Self::compute_tag(&refs);
        Self { refs, tag }
    }

    fn compute_tag(refs: &[IndexRef]) -> [u8; 4] {
        let mut h = Sha256::new();
        for r in refs {
            h.update((r.slot as u64).to_le_bytes());
            h.update((r.index as u64).to_le_bytes());
        }
        let digest = h.finalize();
        [digest[0], digest[1], digest[2], digest[3]]
    }

    pub fn open(&self) -> Result<&[IndexRef]> {
        if Self::compute_tag(&self.refs) != self.tag {
            return Err(Error::ProtocolDesync("index frame failed integrity check".into()));
        }
        Ok(&self.refs)
    }
}

/// Receiver-side inverse caching.
///
/// Missed slots take the received vectors in ascending slot order; hit slots
/// copy the referenced cache entry. Afterwards the received vectors are
/// appended to `cache`. On error the cache is left untouched.
pub fn rx_reconstruct(received: &[Vec<f64>], hits: &[IndexRef], cache: &mut CacheMemory) -> Result<SemanticLatent> {
    let n_slots = cache.n_slots();
    let mut rows: Vec<Option<Vec<f64>>> = vec![None; n_slots];
    for hit in hits {
        if hit.slot >= n_slots {
            return Err(Error::ProtocolDesync(format!("hit names slot {} of {n_slots}", hit.slot)));
        }
        if rows[hit.slot].is_some() {
            return Err(Error::ProtocolDesync(format!("slot {} referenced twice", hit.slot)));
        }
        let entry = cache.entry(hit.slot, hit.index).ok_or_else(|| {
            Error::ProtocolDesync(format!(
                "slot {} index {} dangling (occupancy {})",
                hit.slot,
                hit.index,
                cache.occupancy(hit.slot)
            ))
        })?;
        rows[hit.slot] = Some(entry.to_vec());
    }
    let missing: Vec<usize> = (0..n_slots).filter(|&i| rows[i].is_none()).collect();
    if missing.len() != received.len() {
        return Err(Error::ProtocolDesync(format!(
            "{} vectors received for {} missed slots",
            received.len(),
            missing.len()
        )));
    }
    for (slot, v) in missing.iter().zip(received) {
        if v.len() != cache.slot_len() {
            return Err(Error::LengthMismatch {
                left: cache.slot_len(),
                right: v.len(),
            });
        }
        rows[*slot] = Some(v.clone());
    }
    let rows: Vec<Vec<f64>> = rows.into_iter().map(Option::unwrap).collect();
    let latent = SemanticLatent::from_rows(&rows)?;
    for (slot, v) in missing.iter().zip(received) {
        cache.insert(*slot, v.clone())?;
    }
    Ok(latent)
}

pub const CACHE_FORMAT: &str = "semlink-cache";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CacheManifest {
    format: String,
    version: u32,
    n_slots: usize,
    slot_len: usize,
    capacity: usize,
    /// Entries per slot; the binary stores slots in order, oldest entry first.
    occupancy: Vec<usize>,
    insertions: Vec<u64>,
    dtype: Dtype,
    values: usize,
    binary: String,
    checksum: String,
}

impl CacheMemory {
    /// Dumps the cache (`f64le`, so a reload is bit-identical).
    pub fn save(&self, manifest_path: &Path) -> Result<()> {
        let values: Vec<f64> = self
            .slots
            .iter()
            .flat_map(|s| s.iter().flat_map(|v| v.iter().copied()))
            .collect();
        let bytes = format::encode(&values, Dtype::F64Le);
        let binary = format::companion_path(manifest_path);
        let manifest = CacheManifest {
            format: CACHE_FORMAT.into(),
            version: 1,
            n_slots: self.n_slots(),
            slot_len: self.slot_len,
            capacity: self.capacity,
            occupancy: self.slots.iter().map(VecDeque::len).collect(),
            insertions: self.inserted.clone(),
            dtype: Dtype::F64Le,
            values: values.len(),
            binary: format::file_name(&binary),
            checksum: format::checksum(&bytes),
        };
        format::write_bytes(&binary, &bytes)?;
        format::write_manifest(manifest_path, &manifest)
    }

    pub fn load(manifest_path: &Path) -> Result<Self> {
        let m: CacheManifest = format::read_manifest(manifest_path)?;
        if m.format != CACHE_FORMAT {
            return Err(Error::format("format", format!("expected {CACHE_FORMAT}, got {}", m.format)));
        }
        if m.occupancy.len() != m.n_slots {
            return Err(Error::format("occupancy", "one entry per slot required"));
        }
        if m.insertions.len() != m.n_slots {
            return Err(Error::format("insertions", "one entry per slot required"));
        }
        if m.occupancy.iter().any(|&o| o > m.capacity) {
            return Err(Error::format("occupancy", "exceeds capacity"));
        }
        let expected: usize = m.occupancy.iter().sum::<usize>() * m.slot_len;
        if expected != m.values {
            return Err(Error::format("values", format!("occupancy implies {expected}, manifest says {}", m.values)));
        }
        let binary = format::resolve_binary(manifest_path, &m.binary);
        let values = format::read_values(&binary, m.dtype, m.values, &m.checksum)?;
        let mut cache = CacheMemory::new(m.n_slots, m.slot_len, m.capacity);
        let mut chunks = values.chunks_exact(m.slot_len.max(1));
        for (slot, &occ) in m.occupancy.iter().enumerate() {
            for _ in 0..occ {
                cache.slots[slot].push_back(chunks.next().unwrap().to_vec());
            }
        }
        cache.inserted = m.insertions;
        Ok(cache)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn cosine_examples() {
        assert_abs_diff_eq!(cosine(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 1.0, epsilon = 1e-15);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_abs_diff_eq!(cosine(&[1.0, 2.0], &[2.0, 4.0]).unwrap(), 1.0, epsilon = 1e-15);
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 0.0);
        assert!(cosine(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn lookup_examples() {
        let mut cache = CacheMemory::new(1, 2, 4);
        assert_eq!(cache.lookup(0, &[1.0, 0.0]).unwrap(), None);
        cache.insert(0, vec![1.0, 0.0]).unwrap();
        cache.insert(0, vec![0.0, 1.0]).unwrap();
        let m = cache.lookup(0, &[0.9, 0.1]).unwrap().unwrap();
        assert_eq!(m.index, 0);
        assert_abs_diff_eq!(m.similarity, 0.9 / 0.82f64.sqrt(), epsilon = 1e-12);

        let mut dup = CacheMemory::new(1, 2, 4);
        dup.insert(0, vec![0.5, 0.5]).unwrap();
        dup.insert(0, vec![0.5, 0.5]).unwrap();
        assert_eq!(dup.lookup(0, &[0.5, 0.5]).unwrap().unwrap().index, 0);
    }

    #[test]
    fn fifo_eviction() {
        let mut cache = CacheMemory::new(1, 1, 2);
        assert_eq!(cache.insert(0, vec![1.0]).unwrap(), None);
        assert_eq!(cache.occupancy(0), 1);
        cache.insert(0, vec![2.0]).unwrap();
        assert_eq!(cache.insert(0, vec![3.0]).unwrap(), Some(vec![1.0]));
        let left: Vec<&[f64]> = cache.entries(0).collect();
        assert_eq!(left, vec![&[2.0][..], &[3.0][..]]);
        assert_eq!(cache.insertions(0), 3);
    }

    #[test]
    fn plan_on_empty_and_disabled_caches() {
        let z = SemanticLatent::new(3, 2, vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0]).unwrap();
        let cache = CacheMemory::new(3, 2, 4);
        let plan = plan_transmission(&z, &cache, &ThresholdProfile::uniform(3, 0.5)).unwrap();
        assert_eq!(plan.n_s(), 3);

        let mut full = CacheMemory::new(3, 2, 4);
        for (i, row) in z.rows().enumerate() {
            full.insert(i, row.to_vec()).unwrap();
        }
        let never = plan_transmission(&z, &full, &ThresholdProfile::never(3)).unwrap();
        assert_eq!(never.n_s(), 3);
        let all = plan_transmission(&z, &full, &ThresholdProfile::uniform(3, 0.95)).unwrap();
        assert_eq!(all.n_s(), 0);
        assert_eq!(all.hits.len(), 3);

        let before = full.clone();
        tx_update(&mut full, &all).unwrap();
        assert_eq!(full, before);
    }

    #[test]
    fn reconstruct_and_desync() {
        let mut rx = CacheMemory::new(2, 2, 4);
        let out = rx_reconstruct(&[vec![1.0, 2.0], vec![3.0, 4.0]], &[], &mut rx).unwrap();
        assert_eq!(out.as_slice(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(rx.occupancy(0), 1);

        let hits = [IndexRef { slot: 0, index: 0 }];
        let out = rx_reconstruct(&[vec![5.0, 6.0]], &hits, &mut rx).unwrap();
        assert_eq!(out.as_slice(), &[1.0, 2.0, 5.0, 6.0]);
        assert_eq!(rx.occupancy(0), 1);
        assert_eq!(rx.occupancy(1), 2);

        let before = rx.clone();
        let dangling = [IndexRef { slot: 0, index: 3 }];
        assert!(matches!(
            rx_reconstruct(&[vec![0.0, 0.0]], &dangling, &mut rx),
            Err(Error::ProtocolDesync(_))
        ));
        let mut empty = CacheMemory::new(2, 2, 4);
        assert!(matches!(
            rx_reconstruct(&[vec![0.0, 0.0]], &[IndexRef { slot: 1, index: 0 }], &mut empty),
            Err(Error::ProtocolDesync(_))
        ));
        assert_eq!(rx, before);
    }

    #[test]
    fn frame_detects_tampering() {
        let mut frame = IndexFrame::seal(vec![IndexRef { slot: 1, index: 2 }]);
        assert!(frame.open().is_ok());
        frame.refs[0].index = 1;
        assert!(matches!(frame.open(), Err(Error::ProtocolDesync(_))));
    }

    #[test]
    fn threshold_serde() {
        let t: Vec<Threshold> = serde_json::from_str(r#"[0.9, "never"]"#).unwrap();
        assert_eq!(t, vec![Threshold::At(0.9), Threshold::NEVER]);
        assert_eq!(serde_json::to_string(&t).unwrap(), r#"[0.9,"never"]"#);
        let p = ThresholdProfile::face_default(28);
        assert_eq!(p.get(5), Threshold::At(0.8));
        assert_eq!(p.get(6), Threshold::At(0.95));
        assert_eq!(p.get(13), Threshold::At(0.95));
        assert_eq!(p.get(14), Threshold::At(0.8));
    }

    #[test]
    fn cache_dump_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let mut cache = CacheMemory::new(3, 2, 2);
        for k in 0..5 {
            cache.insert(k % 3, vec![k as f64 / 3.0, -(k as f64).sqrt()]).unwrap();
        }
        let path = dir.path().join("tx.toml");
        cache.save(&path).unwrap();
        assert_eq!(CacheMemory::load(&path).unwrap(), cache);
    }
}
