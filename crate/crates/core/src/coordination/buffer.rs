use std::collections::VecDeque;

use rand::Rng;

use crate::agent::Transition;

/// One experience waiting for (or past) its reward amendment.
#[derive(Debug, Clone, PartialEq)]
pub struct RawEntry {
    pub t: u64,
    pub episode: u32,
    /// `transition.reward` always holds the raw reward `r`.
    pub transition: Transition,
    pub stored_reward: f64,
    pub amended: bool,
}

/// Staging ring for unamended experiences, indexed by a contiguous step counter.
#[derive(Debug, Clone)]
pub struct RawBuffer {
    entries: VecDeque<RawEntry>,
    capacity: usize,
    next_t: u64,
    watermark: Option<u64>,
}

impl RawBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "raw buffer capacity must be positive");
        RawBuffer {
            entries: VecDeque::with_capacity(capacity),
            capacity,
            next_t: 0,
            watermark: None,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Appends with the next step index, evicting the oldest entry when full.
    pub fn record(&mut self, transition: Transition, episode: u32) -> u64 {
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        let t = self.next_t;
        self.next_t += 1;
        self.entries.push_back(RawEntry {
            t,
            episode,
            stored_reward: transition.reward,
            transition,
            amended: false,
        });
        t
    }

    pub fn latest(&self) -> Option<u64> {
        self.entries.back().map(|e| e.t)
    }

    /// Highest step already passed by amendment.
    pub fn watermark(&self) -> Option<u64> {
        self.watermark
    }

    pub(crate) fn set_watermark(&mut self, t: u64) {
        self.watermark = Some(t);
    }

    pub fn get(&self, t: u64) -> Option<&RawEntry> {
        let first = self.entries.front()?.t;
        let k = usize::try_from(t.checked_sub(first)?).ok()?;
        self.entries.get(k)
    }

    pub(crate) fn get_mut(&mut self, t: u64) -> Option<&mut RawEntry> {
        let first = self.entries.front()?.t;
        let k = usize::try_from(t.checked_sub(first)?).ok()?;
        self.entries.get_mut(k)
    }

    pub fn iter(&self) -> impl Iterator<Item = &RawEntry> {
        self.entries.iter()
    }

    /// Steps after the watermark, oldest first.
    pub fn pending(&self) -> impl Iterator<Item = &RawEntry> {
        let wm = self.watermark;
        self.entries.iter().filter(move |e| wm.is_none_or(|w| e.t > w))
    }
}

/// FIFO training buffer of amended experiences.
#[derive(Debug, Clone)]
pub struct AmendedBuffer {
    entries: VecDeque<Transition>,
    capacity: usize,
}

impl AmendedBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "amended buffer capacity must be positive");
        AmendedBuffer {
            entries: VecDeque::with_capacity(capacity),
            capacity,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(t);
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.entries.iter()
    }

    /// Uniform sample without replacement of `min(batch, len)` entries.
    pub fn sample(&self, batch: usize, rng: &mut impl Rng) -> Vec<&Transition> {
        let k = batch.min(self.entries.len());
        rand::seq::index::sample(rng, self.entries.len(), k)
            .into_iter()
            .map(|i| &self.entries[i])
            .collect()
    }
}
