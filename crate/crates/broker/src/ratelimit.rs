//! Sliding-window request log per key.

use std::collections::{HashMap, VecDeque};
use std::hash::Hash;

pub const WINDOW: i64 = 60;

#[derive(Debug)]
pub struct SlidingWindow<K> {
    log: HashMap<K, VecDeque<i64>>,
}

impl<K: Eq + Hash + Clone> Default for SlidingWindow<K> {
    fn default() -> Self {
        SlidingWindow {
            log: HashMap::new(),
        }
    }
}

impl<K: Eq + Hash + Clone> SlidingWindow<K> {
    /// Admit one request at `now` if fewer than `limit` were admitted in
    /// `(now - 60, now]`. On refusal returns the seconds until a slot frees.
    pub fn admit(&mut self, key: &K, limit: u32, now: i64) -> Result<(), u64> {
        let q = self.log.entry(key.clone()).or_default();
        while q.front().is_some_and(|&t| t <= now - WINDOW) {
            q.pop_front();
        }
        if q.len() < limit as usize {
            q.push_back(now);
            return Ok(());
        }
        let oldest = *q.front().expect("limit > 0");
        Err((oldest + WINDOW - now).max(1) as u64)
    }

    pub fn reset_where(&mut self, mut pred: impl FnMut(&K) -> bool) {
        self.log.retain(|k, _| !pred(k));
    }
}
