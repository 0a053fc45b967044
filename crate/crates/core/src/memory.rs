//! Bounded replay stores.
//!
//! [`CompletionBuffer`] keeps a uniform random subset of the stream by
//! reservoir sampling. [`SeparationBuffer`] keeps gradient-diverse samples:
//! each newcomer is scored by its maximum gradient cosine against a few
//! stored items, and once the buffer is full only low-similarity newcomers
//! (score below 1) may evict a stored item.
//!
//! Both buffers are generic over the stored item so they can be exercised
//! without a model; training stores [`MemoryTriplet`]s.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{GroundTruth, Sample, Scene};
use crate::error::{Error, Result};
use crate::predictor::GradVector;

/// Score assigned to the very first sample a separation buffer observes.
pub const INITIAL_SCORE: f64 = 0.1;

/// A replayable sample with the logits the model produced when it was
/// observed. Carries no task label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemoryTriplet {
    pub scene: Scene,
    pub truth: GroundTruth,
    pub init_logits: Vec<f64>,
}

impl MemoryTriplet {
    pub fn new(scene: Scene, truth: GroundTruth, init_logits: Vec<f64>) -> Self {
        MemoryTriplet {
            scene,
            truth,
            init_logits,
        }
    }

    pub fn from_sample(sample: &Sample, init_logits: Vec<f64>) -> Self {
        MemoryTriplet::new(sample.scene.clone(), sample.truth, init_logits)
    }
}

/// Outcome of offering an item to a buffer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Admission {
    Appended(usize),
    Replaced(usize),
    Discarded,
}

impl Admission {
    pub fn slot(&self) -> Option<usize> {
        match *self {
            Admission::Appended(i) | Admission::Replaced(i) => Some(i),
            Admission::Discarded => None,
        }
    }
}

/// Uniform draws with replacement; an empty slice yields an empty batch.
pub fn draw_minibatch<'a, T, R: Rng + ?Sized>(items: &'a [T], n: usize, rng: &mut R) -> Vec<&'a T> {
    if items.is_empty() {
        return Vec::new();
    }
    (0..n).map(|_| &items[rng.random_range(0..items.len())]).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompletionBuffer<T = MemoryTriplet> {
    capacity: usize,
    items: Vec<T>,
    stream_count: u64,
}

impl<T> CompletionBuffer<T> {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("buffer capacity must be positive".into()));
        }
        Ok(CompletionBuffer {
            capacity,
            items: Vec::with_capacity(capacity.min(4096)),
            stream_count: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn items(&self) -> &[T] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn stream_count(&self) -> u64 {
        self.stream_count
    }

    /// Reservoir update: the `j`-th observed item is kept with probability
    /// `capacity / j`, overwriting a uniformly chosen slot.
    pub fn observe<R: Rng + ?Sized>(&mut self, item: T, rng: &mut R) -> Admission {
        self.stream_count += 1;
        let j = self.stream_count;
        if self.items.len() < self.capacity {
            self.items.push(item);
            return Admission::Appended(self.items.len() - 1);
        }
        let r = rng.random_range(1..=j);
        if r <= self.capacity as u64 {
            let slot = (r - 1) as usize;
            self.items[slot] = item;
            Admission::Replaced(slot)
        } else {
            Admission::Discarded
        }
    }

    pub fn draw<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<&T> {
        draw_minibatch(&self.items, n, rng)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredItem<T> {
    pub item: T,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeparationBuffer<T = MemoryTriplet> {
    capacity: usize,
    b_compare: usize,
    items: Vec<ScoredItem<T>>,
    stream_count: u64,
}

impl<T> SeparationBuffer<T> {
    pub fn new(capacity: usize, b_compare: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("buffer capacity must be positive".into()));
        }
        if b_compare == 0 {
            return Err(Error::Config("comparison count B must be at least 1".into()));
        }
        Ok(SeparationBuffer {
            capacity,
            b_compare,
            items: Vec::with_capacity(capacity.min(4096)),
            stream_count: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn b_compare(&self) -> usize {
        self.b_compare
    }

    pub fn entries(&self) -> &[ScoredItem<T>] {
        &self.items
    }

    pub fn items(&self) -> impl ExactSizeIterator<Item = &T> + '_ {
        self.items.iter().map(|s| &s.item)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.items.len() >= self.capacity
    }

    pub fn stream_count(&self) -> u64 {
        self.stream_count
    }

    /// Similarity score `max_b cos(g, g_b) + 1` over `min(B, len)` stored
    /// items drawn uniformly with replacement. `grad_of` receives the slot
    /// index and the stored item. Zero-norm pairs count as cosine 0.
    pub fn score<R, F, E>(&self, grad: &GradVector, rng: &mut R, mut grad_of: F) -> std::result::Result<f64, E>
    where
        R: Rng + ?Sized,
        F: FnMut(usize, &T) -> std::result::Result<GradVector, E>,
        E: From<Error>,
    {
        if self.items.is_empty() {
            return Err(Error::InvalidInput("scoring against an empty separation buffer".into()).into());
        }
        let draws = self.b_compare.min(self.items.len());
        let mut picked: Vec<usize> = (0..draws)
            .map(|_| rng.random_range(0..self.items.len()))
            .collect();
        // repeated draws cannot change the maximum
        picked.sort_unstable();
        picked.dedup();
        let mut best = f64::NEG_INFINITY;
        for i in picked {
            let g_b = grad_of(i, &self.items[i].item)?;
            best = best.max(grad.cosine(&g_b));
        }
        Ok((best + 1.0).clamp(0.0, 2.0))
    }

    /// Stores `item` with score `q_new` if there is room. Once full, a
    /// newcomer with `q_new < 1` picks a candidate slot with probability
    /// proportional to its score and replaces it with probability
    /// `q_i / (q_i + q_new)`; every other newcomer is discarded.
    pub fn observe<R: Rng + ?Sized>(&mut self, item: T, q_new: f64, rng: &mut R) -> Admission {
        self.stream_count += 1;
        if self.items.len() < self.capacity {
            self.items.push(ScoredItem { item, score: q_new });
            return Admission::Appended(self.items.len() - 1);
        }
        if !(q_new < 1.0) {
            return Admission::Discarded;
        }
        let i = self.pick_candidate(rng);
        let q_i = self.items[i].score;
        let r: f64 = rng.random();
        if r < q_i / (q_i + q_new) {
            self.items[i] = ScoredItem { item, score: q_new };
            Admission::Replaced(i)
        } else {
            Admission::Discarded
        }
    }

    fn pick_candidate<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let total: f64 = self.items.iter().map(|s| s.score).sum();
        if !(total > 0.0) {
            return rng.random_range(0..self.items.len());
        }
        let mut u = rng.random::<f64>() * total;
        for (i, s) in self.items.iter().enumerate() {
            if u < s.score {
                return i;
            }
            u -= s.score;
        }
        // rounding left u just past the end; take the last positive score
        self.items
            .iter()
            .rposition(|s| s.score > 0.0)
            .unwrap_or(self.items.len() - 1)
    }

    /// Scores the newcomer (the very first stream item gets
    /// [`INITIAL_SCORE`]) and offers it. Returns the score used.
    pub fn offer<R, F, E>(&mut self, item: T, grad: &GradVector, rng: &mut R, grad_of: F) -> std::result::Result<(f64, Admission), E>
    where
        R: Rng + ?Sized,
        F: FnMut(usize, &T) -> std::result::Result<GradVector, E>,
        E: From<Error>,
    {
        let q = if self.stream_count == 0 || self.items.is_empty() {
            INITIAL_SCORE
        } else {
            self.score(grad, rng, grad_of)?
        };
        let adm = self.observe(item, q, rng);
        Ok((q, adm))
    }

    pub fn draw<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<&T> {
        if self.items.is_empty() {
            return Vec::new();
        }
        (0..n)
            .map(|_| &self.items[rng.random_range(0..self.items.len())].item)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn g(v: &[f64]) -> GradVector {
        GradVector { values: v.to_vec() }
    }

    fn full_buffer(scores: &[f64]) -> SeparationBuffer<usize> {
        let mut b = SeparationBuffer::new(scores.len(), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for (i, &q) in scores.iter().enumerate() {
            b.observe(i, q, &mut rng);
        }
        b
    }

    #[test]
    fn completion_fill_phase_keeps_order() {
        let mut b = CompletionBuffer::new(3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for i in 0..3 {
            assert_eq!(b.observe(i, &mut rng), Admission::Appended(i));
        }
        assert_eq!(b.items(), &[0, 1, 2]);
        assert_eq!(b.stream_count(), 3);
    }

    #[test]
    fn completion_size_bound() {
        let mut b = CompletionBuffer::new(5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for i in 0..1000 {
            b.observe(i, &mut rng);
            assert_eq!(b.len(), (i + 1).min(5));
        }
        assert!(CompletionBuffer::<u8>::new(0).is_err());
    }

    #[test]
    fn two_slot_reservoir_keeps_third_item_two_thirds_of_the_time() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let runs = 100_000;
        let mut kept = 0;
        for _ in 0..runs {
            let mut b = CompletionBuffer::new(2).unwrap();
            for i in 0..3 {
                b.observe(i, &mut rng);
            }
            kept += b.items().contains(&2) as usize;
        }
        let freq = kept as f64 / runs as f64;
        assert!((freq - 2.0 / 3.0).abs() < 0.01, "{freq}");
    }

    #[test]
    fn identical_gradient_scores_two() {
        let mut b = SeparationBuffer::new(4, 10).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        b.observe(g(&[1.0, 2.0]), 0.1, &mut rng);
        let q: f64 = b
            .score(&g(&[1.0, 2.0]), &mut rng, |_, x| Ok::<_, Error>(x.clone()))
            .unwrap();
        assert!((q - 2.0).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_gradients_score_one() {
        let mut b = SeparationBuffer::new(4, 10).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        b.observe(g(&[0.0, 1.0, 0.0]), 0.1, &mut rng);
        b.observe(g(&[0.0, 0.0, 3.0]), 0.1, &mut rng);
        let q: f64 = b
            .score(&g(&[2.0, 0.0, 0.0]), &mut rng, |_, x| Ok::<_, Error>(x.clone()))
            .unwrap();
        assert_eq!(q, 1.0);
    }

    #[test]
    fn opposite_gradient_scores_zero() {
        let mut b = SeparationBuffer::new(4, 10).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        b.observe(g(&[-1.0, 0.5]), 0.1, &mut rng);
        let q: f64 = b
            .score(&g(&[2.0, -1.0]), &mut rng, |_, x| Ok::<_, Error>(x.clone()))
            .unwrap();
        assert!(q.abs() < 1e-12);
    }

    #[test]
    fn zero_norm_gradient_is_neutral() {
        let mut b = SeparationBuffer::new(4, 10).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        b.observe(g(&[1.0, 0.0]), 0.1, &mut rng);
        let q: f64 = b
            .score(&g(&[0.0, 0.0]), &mut rng, |_, x| Ok::<_, Error>(x.clone()))
            .unwrap();
        assert_eq!(q, 1.0);
    }

    #[test]
    fn scoring_empty_buffer_errors() {
        let b = SeparationBuffer::<GradVector>::new(4, 10).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let r: Result<f64> = b.score(&g(&[1.0]), &mut rng, |_, x| Ok(x.clone()));
        assert!(r.is_err());
    }

    #[test]
    fn first_offer_uses_initial_score() {
        let mut b = SeparationBuffer::new(2, 10).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (q, adm) = b
            .offer(g(&[1.0]), &g(&[1.0]), &mut rng, |_, x: &GradVector| Ok::<_, Error>(x.clone()))
            .unwrap();
        assert_eq!(q, INITIAL_SCORE);
        assert_eq!(adm, Admission::Appended(0));
    }

    #[test]
    fn full_buffer_ignores_similar_newcomers() {
        let mut b = full_buffer(&[0.3, 1.2, 0.7]);
        let before = b.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..100 {
            assert_eq!(b.observe(99, 1.5, &mut rng), Admission::Discarded);
            assert_eq!(b.observe(99, 1.0, &mut rng), Admission::Discarded);
        }
        assert_eq!(b.entries(), before.entries());
    }

    #[test]
    fn maximally_diverse_newcomer_always_replaces() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let mut b = full_buffer(&[2.0, 2.0, 2.0]);
            assert!(matches!(b.observe(99, 0.0, &mut rng), Admission::Replaced(_)));
        }
    }

    #[test]
    fn zero_score_slots_are_never_candidates() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let b = full_buffer(&[0.0, 1.0, 0.0]);
        for _ in 0..1000 {
            assert_eq!(b.pick_candidate(&mut rng), 1);
        }
    }

    #[test]
    fn draw_minibatch_edges() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let empty: [u8; 0] = [];
        assert!(draw_minibatch(&empty, 8, &mut rng).is_empty());
        let one = [7u8];
        assert_eq!(draw_minibatch(&one, 8, &mut rng), vec![&7u8; 8]);
    }

    #[test]
    fn draw_minibatch_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let items: Vec<usize> = (0..10).collect();
        let mut counts = [0usize; 10];
        for x in draw_minibatch(&items, 100_000, &mut rng) {
            counts[*x] += 1;
        }
        for c in counts {
            assert!((c as f64 / 100_000.0 - 0.1).abs() < 0.005);
        }
    }
}
