use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub passage_id: String,
    pub score: f64,
}

/// Ordered retrieval result for one query, best first.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    pub hits: Vec<Hit>,
}

/// Descending score, ties broken by ascending passage id.
pub fn hit_order(a: &Hit, b: &Hit) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.passage_id.cmp(&b.passage_id))
}

impl Ranking {
    /// Sorts arbitrary hits into ranking order and keeps the first `k`.
    pub fn from_unsorted(mut hits: Vec<Hit>, k: usize) -> Self {
        if hits.len() > k && k > 0 {
            hits.select_nth_unstable_by(k - 1, hit_order);
            hits.truncate(k);
        }
        hits.sort_by(hit_order);
        hits.truncate(k);
        Ranking { hits }
    }

    pub fn len(&self) -> usize {
        self.hits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hits.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.hits.iter().map(|h| h.passage_id.as_str())
    }

    /// 1-based rank of a passage, if present.
    pub fn rank_of(&self, passage_id: &str) -> Option<usize> {
        self.hits.iter().position(|h| h.passage_id == passage_id).map(|i| i + 1)
    }
}
