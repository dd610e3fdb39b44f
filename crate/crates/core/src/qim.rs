//! QIM steganography over codeword streams: synthetic codebooks, CNV-style
//! two-way partitions, a correlated cover generator, and bit embedding /
//! extraction.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::codeword::{CodewordClip, CodewordFrame, DEFAULT_FRAME_MS};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum QimError {
    #[error("codebook size {0} must be even and at least 2")]
    BadSize(usize),
    #[error("codebook dimension must be at least 1")]
    BadDimension,
    #[error("codebook vectors {0} and {1} coincide")]
    DuplicateVector(usize, usize),
    #[error("nearest-neighbour graph is not 2-colourable at codeword {0}")]
    Uncolourable(usize),
    #[error("embedding rate {0} outside [0, 1]")]
    RateOutOfRange(f64),
    #[error("{needed} message bits needed, {available} supplied")]
    BitsExhausted { needed: usize, available: usize },
    #[error("codebook sizes {found:?} do not match clip sizes {expected:?}")]
    SizeMismatch { expected: [u16; 3], found: [u16; 3] },
    #[error("mask covers {mask} frames, clip has {frames}")]
    MaskMismatch { mask: usize, frames: usize },
    #[error("invalid cover model: {0}")]
    BadModel(String),
}

/// Points in R^d, one per codeword index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    pub slot: usize,
    dim: usize,
    vectors: Vec<Vec<f64>>,
}

impl Codebook {
    /// Builds a codebook from explicit vectors (all of equal dimension).
    pub fn from_vectors(slot: usize, vectors: Vec<Vec<f64>>) -> Result<Self, QimError> {
        let n = vectors.len();
        if n < 2 || n % 2 != 0 {
            return Err(QimError::BadSize(n));
        }
        let dim = vectors[0].len();
        if dim == 0 || vectors.iter().any(|v| v.len() != dim) {
            return Err(QimError::BadDimension);
        }
        for i in 0..n {
            for j in i + 1..n {
                if vectors[i] == vectors[j] {
                    return Err(QimError::DuplicateVector(i, j));
                }
            }
        }
        Ok(Self { slot, dim, vectors })
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        &self.vectors[i]
    }

    pub fn distance(&self, a: usize, b: usize) -> f64 {
        self.vectors[a]
            .iter()
            .zip(&self.vectors[b])
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    }

    /// Nearest other codeword; ties go to the lower index.
    pub fn nearest_neighbor(&self, i: usize) -> usize {
        let mut best = usize::MAX;
        let mut best_d = f64::INFINITY;
        for j in 0..self.len() {
            if j == i {
                continue;
            }
            let d = self.distance(i, j);
            if d < best_d {
                best_d = d;
                best = j;
            }
        }
        best
    }

    /// True when all pairwise distances differ.
    pub fn distances_distinct(&self) -> bool {
        let mut d = Vec::with_capacity(self.len() * (self.len() - 1) / 2);
        for i in 0..self.len() {
            for j in i + 1..self.len() {
                d.push(self.distance(i, j));
            }
        }
        d.sort_by(f64::total_cmp);
        d.windows(2).all(|w| w[0] != w[1])
    }
}

/// Uniform random codebook in the unit cube, re-drawn until every pairwise
/// distance is distinct.
pub fn gen_codebook(size: usize, dim: usize, seed: u64) -> Result<Codebook, QimError> {
    if size < 2 || size % 2 != 0 {
        return Err(QimError::BadSize(size));
    }
    if dim == 0 {
        return Err(QimError::BadDimension);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let vectors: Vec<Vec<f64>> = (0..size)
            .map(|_| (0..dim).map(|_| rng.gen::<f64>()).collect())
            .collect();
        if let Ok(cb) = Codebook::from_vectors(0, vectors) {
            if cb.distances_distinct() {
                return Ok(cb);
            }
        }
    }
}

/// Two-way codebook split in which every codeword's nearest neighbour sits
/// in the other half.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CnvPartition {
    pub codebook: Codebook,
    labels: Vec<bool>,
    /// `nearest[2 * i + b]`: closest codeword to `i` carrying label `b`.
    nearest: Vec<u16>,
}

impl CnvPartition {
    pub fn label(&self, index: usize) -> bool {
        self.labels[index]
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Closest codeword to `index` whose label is `bit` (itself if it
    /// already carries that label).
    pub fn nearest_with_label(&self, index: usize, bit: bool) -> usize {
        self.nearest[2 * index + bit as usize] as usize
    }

    /// Sub-codebook members carrying `bit`.
    pub fn class(&self, bit: bool) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labels[i] == bit).collect()
    }
}

/// BFS 2-colouring of the nearest-neighbour graph.
///
/// Every codeword points at its nearest neighbour. With ties broken by
/// index, the only cycles of that functional graph are mutual pairs, so
/// each undirected component is a tree plus one doubled edge and is always
/// bipartite. A colouring conflict therefore indicates a bug and is
/// reported rather than patched.
pub fn cnv_partition(codebook: &Codebook) -> Result<CnvPartition, QimError> {
    let n = codebook.len();
    if n < 2 || n % 2 != 0 {
        return Err(QimError::BadSize(n));
    }
    let nn: Vec<usize> = (0..n).map(|i| codebook.nearest_neighbor(i)).collect();
    let mut adj = vec![Vec::new(); n];
    for (i, &j) in nn.iter().enumerate() {
        adj[i].push(j);
        adj[j].push(i);
    }
    let mut colour: Vec<Option<bool>> = vec![None; n];
    let mut queue = VecDeque::new();
    for root in 0..n {
        if colour[root].is_some() {
            continue;
        }
        colour[root] = Some(false);
        queue.push_back(root);
        while let Some(u) = queue.pop_front() {
            let cu = colour[u].expect("queued nodes are coloured");
            for &v in &adj[u] {
                match colour[v] {
                    None => {
                        colour[v] = Some(!cu);
                        queue.push_back(v);
                    }
                    Some(cv) if cv == cu => return Err(QimError::Uncolourable(v)),
                    Some(_) => {}
                }
            }
        }
    }
    let labels: Vec<bool> = colour.into_iter().map(|c| c.unwrap()).collect();
    if (0..n).any(|i| labels[i] == labels[nn[i]]) {
        return Err(QimError::Uncolourable(0));
    }
    Ok(with_labels(codebook.clone(), labels))
}

/// A partition from explicit labels. The CNV property is not enforced.
pub fn with_labels(codebook: Codebook, labels: Vec<bool>) -> CnvPartition {
    let n = codebook.len();
    let mut nearest = vec![0u16; 2 * n];
    for i in 0..n {
        for bit in [false, true] {
            let mut best = i;
            let mut best_d = f64::INFINITY;
            for j in 0..n {
                if labels[j] != bit {
                    continue;
                }
                let d = codebook.distance(i, j);
                if d < best_d {
                    best_d = d;
                    best = j;
                }
            }
            nearest[2 * i + bit as usize] = best as u16;
        }
    }
    CnvPartition {
        codebook,
        labels,
        nearest,
    }
}

/// Codebooks and partitions for the three quantizer slots.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QimKey {
    pub partitions: [CnvPartition; 3],
}

impl QimKey {
    pub fn generate(sizes: [u16; 3], dim: usize, seed: u64) -> Result<Self, QimError> {
        let mut parts = Vec::with_capacity(3);
        for (slot, &size) in sizes.iter().enumerate() {
            let mut cb = gen_codebook(size as usize, dim, seed.wrapping_add(slot as u64 * 0x9E37))?;
            cb.slot = slot;
            parts.push(cnv_partition(&cb)?);
        }
        Ok(Self {
            partitions: parts.try_into().expect("three slots"),
        })
    }

    pub fn sizes(&self) -> [u16; 3] {
        [0, 1, 2].map(|j| self.partitions[j].len() as u16)
    }
}

/// Result of embedding: the stego clip plus what was hidden where.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbedRecord {
    pub stego: CodewordClip,
    pub mask: Vec<bool>,
    pub bits: Vec<bool>,
}

/// Per-frame embedding selection: frame `i` carries bits with probability
/// `rate`, drawn from `seed`.
pub fn select_frames(n_frames: usize, rate: f64, seed: u64) -> Result<Vec<bool>, QimError> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(QimError::RateOutOfRange(rate));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n_frames).map(|_| rng.gen::<f64>() < rate).collect())
}

/// Hides 3 bits in each selected frame by re-quantizing every slot into the
/// sub-codebook named by its bit.
pub fn qim_embed(
    clip: &CodewordClip,
    bits: &[bool],
    embedding_rate: f64,
    key: &QimKey,
    seed: u64,
) -> Result<EmbedRecord, QimError> {
    if key.sizes() != clip.codebook_sizes {
        return Err(QimError::SizeMismatch {
            expected: clip.codebook_sizes,
            found: key.sizes(),
        });
    }
    let mask = select_frames(clip.len(), embedding_rate, seed)?;
    qim_embed_masked(clip, bits, &mask, key)
}

/// Embedding with an explicit frame mask.
pub fn qim_embed_masked(
    clip: &CodewordClip,
    bits: &[bool],
    mask: &[bool],
    key: &QimKey,
) -> Result<EmbedRecord, QimError> {
    if mask.len() != clip.len() {
        return Err(QimError::MaskMismatch {
            mask: mask.len(),
            frames: clip.len(),
        });
    }
    let needed = 3 * mask.iter().filter(|&&m| m).count();
    if bits.len() < needed {
        return Err(QimError::BitsExhausted {
            needed,
            available: bits.len(),
        });
    }
    let mut stego = clip.clone();
    let mut next = bits.iter();
    for (frame, _) in stego.frames.iter_mut().zip(mask).filter(|(_, &m)| m) {
        for (j, part) in key.partitions.iter().enumerate() {
            let bit = *next.next().expect("bit count checked");
            frame.0[j] = part.nearest_with_label(frame.0[j] as usize, bit) as u16;
        }
    }
    Ok(EmbedRecord {
        stego,
        mask: mask.to_vec(),
        bits: bits[..needed].to_vec(),
    })
}

/// Reads back the partition labels of every masked frame, slot by slot.
pub fn qim_extract(clip: &CodewordClip, mask: &[bool], key: &QimKey) -> Result<Vec<bool>, QimError> {
    if mask.len() != clip.len() {
        return Err(QimError::MaskMismatch {
            mask: mask.len(),
            frames: clip.len(),
        });
    }
    Ok(clip
        .frames
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .flat_map(|(f, _)| (0..3).map(move |j| key.partitions[j].label(f.0[j] as usize)))
        .collect())
}

pub fn extract_record(record: &EmbedRecord, key: &QimKey) -> Result<Vec<bool>, QimError> {
    qim_extract(&record.stego, &record.mask, key)
}

/// Uniform random message bits.
pub fn random_bits(n: usize, seed: u64) -> Vec<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen()).collect()
}

/// Mean Euclidean displacement, in codebook space, between cover and stego
/// codewords (averaged over all frames and slots).
pub fn mean_displacement(cover: &CodewordClip, stego: &CodewordClip, key: &QimKey) -> f64 {
    let mut total = 0.0;
    for (a, b) in cover.frames.iter().zip(&stego.frames) {
        for j in 0..3 {
            total += key.partitions[j]
                .codebook
                .distance(a.0[j] as usize, b.0[j] as usize);
        }
    }
    total / (3 * cover.len().max(1)) as f64
}

/// Row-stochastic `k × k` transition matrix stored with cumulative rows
/// for sampling.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionTable {
    k: usize,
    probs: Vec<f64>,
    cumulative: Vec<f64>,
}

impl TransitionTable {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self, QimError> {
        let k = rows.len();
        if k == 0 {
            return Err(QimError::BadModel("empty table".into()));
        }
        let mut probs = Vec::with_capacity(k * k);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != k {
                return Err(QimError::BadModel(format!("row {i} has {} entries, want {k}", r.len())));
            }
            if r.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
                return Err(QimError::BadModel(format!("row {i} has a negative entry")));
            }
            let s: f64 = r.iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(QimError::BadModel(format!("row {i} sums to {s}")));
            }
            probs.extend_from_slice(r);
        }
        let mut cumulative = probs.clone();
        for row in cumulative.chunks_exact_mut(k) {
            let mut acc = 0.0;
            for p in row.iter_mut() {
                acc += *p;
                *p = acc;
            }
        }
        Ok(Self {
            k,
            probs,
            cumulative,
        })
    }

    pub fn identity(k: usize) -> Self {
        Self::from_rows(
            (0..k)
                .map(|i| (0..k).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
                .collect(),
        )
        .expect("identity is stochastic")
    }

    /// Rows drawn from a symmetric Dirichlet(α).
    pub fn dirichlet<R: Rng + ?Sized>(k: usize, alpha: f64, rng: &mut R) -> Result<Self, QimError> {
        let rows = (0..k)
            .map(|_| sample_dirichlet(k, alpha, rng))
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_rows(rows)
    }

    pub fn states(&self) -> usize {
        self.k
    }

    pub fn prob(&self, from: usize, to: usize) -> f64 {
        self.probs[from * self.k + to]
    }

    pub fn row(&self, from: usize) -> &[f64] {
        &self.probs[from * self.k..(from + 1) * self.k]
    }

    pub fn sample<R: Rng + ?Sized>(&self, from: usize, rng: &mut R) -> usize {
        let row = &self.cumulative[from * self.k..(from + 1) * self.k];
        let u = rng.gen::<f64>() * row[self.k - 1];
        row.partition_point(|&c| c <= u).min(self.k - 1)
    }
}

/// Symmetric Dirichlet sample computed in log space, so tiny concentrations
/// do not underflow every component to zero.
fn sample_dirichlet<R: Rng + ?Sized>(k: usize, alpha: f64, rng: &mut R) -> Result<Vec<f64>, QimError> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(QimError::BadModel(format!("alpha {alpha} must be positive")));
    }
    // Gamma(α) = Gamma(α + 1) · U^(1/α)
    let g = Gamma::new(alpha + 1.0, 1.0).map_err(|e| QimError::BadModel(e.to_string()))?;
    let logs: Vec<f64> = (0..k)
        .map(|_| {
            let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            g.sample(rng).ln() + u.ln() / alpha
        })
        .collect();
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let s: f64 = w.iter().sum();
    let mut row: Vec<f64> = w.iter().map(|x| x / s).collect();
    // Absorb rounding so the row sums to 1 within 1e-12.
    let drift = 1.0 - row.iter().sum::<f64>();
    let top = row
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap();
    row[top] += drift;
    Ok(row)
}

pub const BUCKETS: usize = 4;

/// Quartile bucket of a codeword index.
pub fn bucket(index: usize, size: usize) -> usize {
    (index * BUCKETS / size).min(BUCKETS - 1)
}

/// Markov generator for correlated cover streams.
///
/// Slot 1 follows its own first-order chain. Slot 2's transition row is
/// chosen by the quartile bucket of the current slot-1 codeword, and slot 3's
/// by the bucket of the current slot-2 codeword, which couples the slots
/// within a frame while each slot stays correlated across frames.
#[derive(Clone, Debug, PartialEq)]
pub struct CoverModel {
    pub sizes: [u16; 3],
    pub alpha: f64,
    pub seed: u64,
    pub slot1: TransitionTable,
    pub slot2: Vec<TransitionTable>,
    pub slot3: Vec<TransitionTable>,
}

impl CoverModel {
    pub fn dirichlet(sizes: [u16; 3], alpha: f64, seed: u64) -> Result<Self, QimError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = sizes.map(|s| s as usize);
        if k.contains(&0) {
            return Err(QimError::BadModel("zero codebook size".into()));
        }
        let slot1 = TransitionTable::dirichlet(k[0], alpha, &mut rng)?;
        let slot2 = (0..BUCKETS)
            .map(|_| TransitionTable::dirichlet(k[1], alpha, &mut rng))
            .collect::<Result<_, _>>()?;
        let slot3 = (0..BUCKETS)
            .map(|_| TransitionTable::dirichlet(k[2], alpha, &mut rng))
            .collect::<Result<_, _>>()?;
        Ok(Self {
            sizes,
            alpha,
            seed,
            slot1,
            slot2,
            slot3,
        })
    }

    pub fn from_tables(
        slot1: TransitionTable,
        slot2: Vec<TransitionTable>,
        slot3: Vec<TransitionTable>,
    ) -> Result<Self, QimError> {
        if slot2.len() != BUCKETS || slot3.len() != BUCKETS {
            return Err(QimError::BadModel(format!("need {BUCKETS} conditional tables per slot")));
        }
        let k2 = slot2[0].states();
        let k3 = slot3[0].states();
        if slot2.iter().any(|t| t.states() != k2) || slot3.iter().any(|t| t.states() != k3) {
            return Err(QimError::BadModel("conditional tables differ in size".into()));
        }
        let sizes = [slot1.states(), k2, k3];
        if sizes.iter().any(|&s| s > u16::MAX as usize) {
            return Err(QimError::BadModel("codebook too large".into()));
        }
        Ok(Self {
            sizes: sizes.map(|s| s as u16),
            alpha: 0.0,
            seed: 0,
            slot1,
            slot2,
            slot3,
        })
    }

    /// Absorbing model: every codeword maps to itself.
    pub fn identity(sizes: [u16; 3]) -> Self {
        let t = |k: u16| TransitionTable::identity(k as usize);
        Self::from_tables(
            t(sizes[0]),
            (0..BUCKETS).map(|_| t(sizes[1])).collect(),
            (0..BUCKETS).map(|_| t(sizes[2])).collect(),
        )
        .expect("identity tables are valid")
    }

    fn step<R: Rng + ?Sized>(&self, prev: CodewordFrame, rng: &mut R) -> CodewordFrame {
        let k = self.sizes.map(|s| s as usize);
        let a1 = self.slot1.sample(prev.0[0] as usize, rng);
        let a2 = self.slot2[bucket(a1, k[0])].sample(prev.0[1] as usize, rng);
        let a3 = self.slot3[bucket(a2, k[1])].sample(prev.0[2] as usize, rng);
        CodewordFrame([a1 as u16, a2 as u16, a3 as u16])
    }
}

/// Cover stream of `n_frames` starting from a uniformly drawn frame.
pub fn gen_cover(model: &CoverModel, n_frames: usize, seed: u64) -> CodewordClip {
    gen_cover_from(model, n_frames, seed, None)
}

/// Cover stream whose first frame is `initial` when given.
pub fn gen_cover_from(
    model: &CoverModel,
    n_frames: usize,
    seed: u64,
    initial: Option<CodewordFrame>,
) -> CodewordClip {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut frames = Vec::with_capacity(n_frames);
    if n_frames > 0 {
        let mut cur = initial.unwrap_or_else(|| {
            CodewordFrame(model.sizes.map(|s| rng.gen_range(0..s)))
        });
        frames.push(cur);
        for _ in 1..n_frames {
            cur = model.step(cur, &mut rng);
            frames.push(cur);
        }
    }
    CodewordClip {
        frames,
        codebook_sizes: model.sizes,
        frame_duration_ms: DEFAULT_FRAME_MS,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(points: &[f64]) -> Codebook {
        Codebook::from_vectors(0, points.iter().map(|&p| vec![p]).collect()).unwrap()
    }

    #[test]
    fn codebook_determinism_and_size_checks() {
        assert_eq!(gen_codebook(4, 1, 7).unwrap(), gen_codebook(4, 1, 7).unwrap());
        assert_ne!(gen_codebook(4, 1, 7).unwrap(), gen_codebook(4, 1, 8).unwrap());
        assert_eq!(gen_codebook(3, 3, 1), Err(QimError::BadSize(3)));
        assert_eq!(gen_codebook(0, 3, 1), Err(QimError::BadSize(0)));
        assert_eq!(gen_codebook(4, 0, 1), Err(QimError::BadDimension));
        assert!(matches!(
            Codebook::from_vectors(0, vec![vec![1.0], vec![1.0]]),
            Err(QimError::DuplicateVector(0, 1))
        ));
    }

    #[test]
    fn two_point_partition() {
        let p = cnv_partition(&line(&[0.0, 1.0])).unwrap();
        assert_ne!(p.label(0), p.label(1));
    }

    #[test]
    fn four_point_partition() {
        let p = cnv_partition(&line(&[0.0, 1.0, 10.0, 11.0])).unwrap();
        assert_ne!(p.label(0), p.label(1));
        assert_ne!(p.label(2), p.label(3));
    }

    #[test]
    fn nearest_in_class_on_a_line() {
        let key = with_labels(line(&[0.0, 1.0, 10.0, 11.0]), vec![false, true, false, true]);
        assert_eq!(key.nearest_with_label(0, true), 1);
        assert_eq!(key.nearest_with_label(0, false), 0);
        assert_eq!(key.nearest_with_label(2, true), 3);
        assert_eq!(key.nearest_with_label(1, false), 0);
    }

    #[test]
    fn zero_rate_is_identity() {
        let key = QimKey::generate([8, 4, 4], 3, 1).unwrap();
        let model = CoverModel::dirichlet([8, 4, 4], 0.5, 2).unwrap();
        let cover = gen_cover(&model, 50, 3);
        let rec = qim_embed(&cover, &[], 0.0, &key, 4).unwrap();
        assert_eq!(rec.stego, cover);
        assert!(rec.mask.iter().all(|m| !m));
        assert!(rec.bits.is_empty());
        assert!(extract_record(&rec, &key).unwrap().is_empty());
    }

    #[test]
    fn single_frame_readout() {
        let key = QimKey::generate([8, 4, 4], 2, 5).unwrap();
        let cover = CodewordClip::new(vec![CodewordFrame::new(3, 1, 2)], [8, 4, 4]).unwrap();
        let bits = [true, false, true];
        let rec = qim_embed(&cover, &bits, 1.0, &key, 0).unwrap();
        assert_eq!(extract_record(&rec, &key).unwrap(), bits);
    }

    #[test]
    fn embed_errors() {
        let key = QimKey::generate([8, 4, 4], 2, 5).unwrap();
        let cover = CodewordClip::new(vec![CodewordFrame::new(0, 0, 0); 4], [8, 4, 4]).unwrap();
        assert_eq!(
            qim_embed(&cover, &[true; 11], 1.0, &key, 0),
            Err(QimError::BitsExhausted {
                needed: 12,
                available: 11
            })
        );
        assert_eq!(
            qim_embed(&cover, &[true; 12], 1.5, &key, 0),
            Err(QimError::RateOutOfRange(1.5))
        );
        let other = CodewordClip::new(vec![CodewordFrame::new(0, 0, 0)], [16, 4, 4]).unwrap();
        assert!(matches!(
            qim_embed(&other, &[true; 3], 1.0, &key, 0),
            Err(QimError::SizeMismatch { .. })
        ));
    }

    #[test]
    fn identity_model_absorbs() {
        let model = CoverModel::identity([8, 4, 4]);
        let f = CodewordFrame::new(5, 2, 3);
        let c = gen_cover_from(&model, 40, 11, Some(f));
        assert!(c.frames.iter().all(|&x| x == f));
    }

    #[test]
    fn dirichlet_rows_are_stochastic() {
        let model = CoverModel::dirichlet([128, 32, 32], 0.05, 3).unwrap();
        for t in std::iter::once(&model.slot1).chain(&model.slot2).chain(&model.slot3) {
            for i in 0..t.states() {
                let s: f64 = t.row(i).iter().sum();
                assert!((s - 1.0).abs() < 1e-9);
                assert!(t.row(i).iter().all(|&p| p >= 0.0));
            }
        }
        assert_eq!(gen_cover(&model, 100, 1), gen_cover(&model, 100, 1));
    }

    #[test]
    fn table_validation() {
        assert!(TransitionTable::from_rows(vec![vec![0.5, 0.6], vec![1.0, 0.0]]).is_err());
        assert!(TransitionTable::from_rows(vec![vec![1.5, -0.5], vec![1.0, 0.0]]).is_err());
        assert!(TransitionTable::from_rows(vec![vec![1.0]]).is_ok());
    }

    #[test]
    fn buckets() {
        assert_eq!(bucket(0, 128), 0);
        assert_eq!(bucket(31, 128), 0);
        assert_eq!(bucket(32, 128), 1);
        assert_eq!(bucket(127, 128), 3);
        assert_eq!(bucket(1, 2), 2);
    }
}
