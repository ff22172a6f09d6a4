//! Exact brute-force nearest-neighbor index over labeled embeddings.
//!
//! The index is immutable after [`FlatIndex::build`]; updates mean rebuild.
//! That matches the batch evaluation workload and lets any number of threads
//! search concurrently without locking. Top-k selection runs a bounded
//! worst-at-root heap over a single pass, O(n log k) per query, and batch
//! search walks the entry rows in cache-sized chunks so a whole query batch
//! reads the vector data once instead of once per query.
//!
//! Ties on squared distance resolve by ascending `item_id`, always; results
//! are therefore a pure function of the entry set and query, independent of
//! insertion order and scan order.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::squared_l2_raw;
use crate::vector::Embedding;

/// Which rendition of an image an embedding was computed from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Original,
    Fawkes,
    Lowkey,
    Other,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Original => "original",
            Variant::Fawkes => "fawkes",
            Variant::Lowkey => "lowkey",
            Variant::Other => "other",
        }
    }

    pub fn parse(s: &str) -> Option<Variant> {
        match s {
            "original" => Some(Variant::Original),
            "fawkes" => Some(Variant::Fawkes),
            "lowkey" => Some(Variant::Lowkey),
            "other" => Some(Variant::Other),
            _ => None,
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One labeled vector to be placed in an index.
#[derive(Clone, Debug)]
pub struct IndexEntry {
    pub item_id: String,
    pub identity_id: Option<String>,
    pub variant: Variant,
    pub vector: Embedding,
}

/// One ranked retrieval result. Within a result list, hits are sorted by
/// (squared_distance ascending, item_id ascending) and ranks run 0..len−1.
#[derive(Clone, Debug, PartialEq)]
pub struct SearchHit {
    pub item_id: String,
    pub rank: usize,
    pub squared_distance: f64,
}

#[derive(Clone, Debug)]
struct ItemMeta {
    item_id: String,
    identity_id: Option<String>,
    variant: Variant,
}

/// Exact L2 index: contiguous row-major vector storage plus per-entry labels.
pub struct FlatIndex {
    dim: usize,
    data: Vec<f32>,
    items: Vec<ItemMeta>,
    /// Lexicographic rank of items[i].item_id; lets the hot loop break
    /// distance ties without comparing strings.
    id_rank: Vec<u32>,
    by_id: HashMap<String, usize>,
}

impl std::fmt::Debug for FlatIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FlatIndex")
            .field("dim", &self.dim)
            .field("len", &self.items.len())
            .finish()
    }
}

/// Entries per block in batch scans. 256 rows of dim 512 is 512 KiB of f32,
/// small enough to stay cache-resident while a query batch sweeps it.
const SCAN_CHUNK: usize = 256;

impl FlatIndex {
    /// Builds an index over the given entries. All entries must share one
    /// dimension and item_ids must be unique. Empty input yields a valid
    /// empty index.
    pub fn build(entries: Vec<IndexEntry>) -> Result<FlatIndex> {
        let dim = entries.first().map(|e| e.vector.dim()).unwrap_or(0);
        let mut data = Vec::with_capacity(entries.len() * dim);
        let mut items = Vec::with_capacity(entries.len());
        let mut by_id = HashMap::with_capacity(entries.len());
        for entry in entries {
            if entry.vector.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: entry.vector.dim(),
                });
            }
            if by_id.insert(entry.item_id.clone(), items.len()).is_some() {
                return Err(Error::InvalidArgument(format!(
                    "duplicate item_id {:?} in index input",
                    entry.item_id
                )));
            }
            data.extend_from_slice(entry.vector.values());
            items.push(ItemMeta {
                item_id: entry.item_id,
                identity_id: entry.identity_id,
                variant: entry.variant,
            });
        }

        let mut order: Vec<u32> = (0..items.len() as u32).collect();
        order.sort_unstable_by(|&a, &b| items[a as usize].item_id.cmp(&items[b as usize].item_id));
        let mut id_rank = vec![0u32; items.len()];
        for (rank, idx) in order.into_iter().enumerate() {
            id_rank[idx as usize] = rank as u32;
        }

        Ok(FlatIndex {
            dim,
            data,
            items,
            id_rank,
            by_id,
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Index dimensionality; 0 for an empty index.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn contains(&self, item_id: &str) -> bool {
        self.by_id.contains_key(item_id)
    }

    /// Item ids in insertion order.
    pub fn item_ids(&self) -> impl Iterator<Item = &str> {
        self.items.iter().map(|m| m.item_id.as_str())
    }

    pub fn identity_of(&self, item_id: &str) -> Option<&str> {
        let idx = *self.by_id.get(item_id)?;
        self.items[idx].identity_id.as_deref()
    }

    pub fn variant_of(&self, item_id: &str) -> Option<Variant> {
        let idx = *self.by_id.get(item_id)?;
        Some(self.items[idx].variant)
    }

    /// Raw stored vector for an item.
    pub fn vector(&self, item_id: &str) -> Option<&[f32]> {
        let idx = *self.by_id.get(item_id)?;
        Some(self.row(idx))
    }

    /// Squared distance between two stored items, same kernel as search.
    pub fn squared_distance_between(&self, a: &str, b: &str) -> Result<f64> {
        let ia = *self
            .by_id
            .get(a)
            .ok_or_else(|| Error::NotFound(format!("item {a:?} not in index")))?;
        let ib = *self
            .by_id
            .get(b)
            .ok_or_else(|| Error::NotFound(format!("item {b:?} not in index")))?;
        Ok(squared_l2_raw(self.row(ia), self.row(ib)))
    }

    #[inline]
    fn row(&self, idx: usize) -> &[f32] {
        &self.data[idx * self.dim..(idx + 1) * self.dim]
    }

    fn check_query(&self, query: &Embedding, k: usize) -> Result<()> {
        if k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        if !self.is_empty() && query.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: query.dim(),
            });
        }
        Ok(())
    }

    /// The `min(k, n)` entries nearest to `query`, sorted by
    /// (squared_distance ascending, item_id ascending).
    pub fn search(&self, query: &Embedding, k: usize) -> Result<Vec<SearchHit>> {
        self.check_query(query, k)?;
        let mut heap = BoundedHeap::new(k);
        self.scan_range(query.values(), 0, self.len(), None, &mut heap);
        Ok(self.heap_to_hits(heap))
    }

    /// As [`FlatIndex::search`], but any entry whose item_id equals
    /// `exclude_id` is omitted before ranking. An absent `exclude_id` is not
    /// an error; the result then equals plain search.
    pub fn search_excluding(
        &self,
        query: &Embedding,
        k: usize,
        exclude_id: &str,
    ) -> Result<Vec<SearchHit>> {
        self.check_query(query, k)?;
        let exclude = self.by_id.get(exclude_id).copied();
        let mut heap = BoundedHeap::new(k);
        self.scan_range(query.values(), 0, self.len(), exclude, &mut heap);
        Ok(self.heap_to_hits(heap))
    }

    /// Searches a batch of queries in one pass over the entry rows, chunked
    /// so the vector data is read once per batch rather than once per query.
    /// Results are identical to calling [`FlatIndex::search`] per query.
    pub fn search_batch(&self, queries: &[Embedding], k: usize) -> Result<Vec<Vec<SearchHit>>> {
        for q in queries {
            self.check_query(q, k)?;
        }
        Ok(self.batch_scan(queries, k))
    }

    /// As [`FlatIndex::search_batch`] with queries split across `threads`
    /// workers. Per-query results are computed independently, so the output
    /// is bitwise identical to the sequential batch.
    pub fn search_batch_parallel(
        &self,
        queries: &[Embedding],
        k: usize,
        threads: usize,
    ) -> Result<Vec<Vec<SearchHit>>> {
        if threads == 0 {
            return Err(Error::InvalidArgument("threads must be at least 1".into()));
        }
        for q in queries {
            self.check_query(q, k)?;
        }
        if threads == 1 || queries.len() <= 1 {
            return Ok(self.batch_scan(queries, k));
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
        let span = queries.len().div_ceil(threads);
        let mut results: Vec<Vec<Vec<SearchHit>>> = pool.install(|| {
            use rayon::prelude::*;
            queries
                .par_chunks(span)
                .map(|chunk| self.batch_scan(chunk, k))
                .collect()
        });
        let mut out = Vec::with_capacity(queries.len());
        for part in results.iter_mut() {
            out.append(part);
        }
        Ok(out)
    }

    fn batch_scan(&self, queries: &[Embedding], k: usize) -> Vec<Vec<SearchHit>> {
        let mut heaps: Vec<BoundedHeap> = queries.iter().map(|_| BoundedHeap::new(k)).collect();
        let n = self.len();
        let mut start = 0;
        while start < n {
            let end = (start + SCAN_CHUNK).min(n);
            for (q, heap) in queries.iter().zip(heaps.iter_mut()) {
                self.scan_range(q.values(), start, end, None, heap);
            }
            start = end;
        }
        heaps.into_iter().map(|h| self.heap_to_hits(h)).collect()
    }

    #[inline]
    fn scan_range(
        &self,
        query: &[f32],
        start: usize,
        end: usize,
        exclude: Option<usize>,
        heap: &mut BoundedHeap,
    ) {
        for idx in start..end {
            if Some(idx) == exclude {
                continue;
            }
            let d = squared_l2_raw(query, self.row(idx));
            heap.offer(d, self.id_rank[idx], idx as u32);
        }
    }

    fn heap_to_hits(&self, heap: BoundedHeap) -> Vec<SearchHit> {
        let mut keys = heap.into_vec();
        keys.sort_unstable_by(|a, b| a.dist.total_cmp(&b.dist).then(a.id_rank.cmp(&b.id_rank)));
        keys.into_iter()
            .enumerate()
            .map(|(rank, key)| SearchHit {
                item_id: self.items[key.idx as usize].item_id.clone(),
                rank,
                squared_distance: key.dist,
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug)]
struct HeapKey {
    dist: f64,
    id_rank: u32,
    idx: u32,
}

/// Bounded selection heap: keeps the k smallest (dist, id_rank) keys seen,
/// with the current worst at the root. Distances are finite by construction
/// (embeddings admit no NaN or infinities), so total_cmp is a total order
/// consistent with `<` here.
struct BoundedHeap {
    cap: usize,
    // Binary max-heap over (dist, id_rank), worst key at slot 0.
    slots: Vec<HeapKey>,
}

impl BoundedHeap {
    fn new(cap: usize) -> Self {
        BoundedHeap {
            cap,
            slots: Vec::with_capacity(cap.min(4096)),
        }
    }

    #[inline]
    fn worse(a: &HeapKey, b: &HeapKey) -> bool {
        match a.dist.total_cmp(&b.dist) {
            std::cmp::Ordering::Greater => true,
            std::cmp::Ordering::Less => false,
            std::cmp::Ordering::Equal => a.id_rank > b.id_rank,
        }
    }

    #[inline]
    fn offer(&mut self, dist: f64, id_rank: u32, idx: u32) {
        let key = HeapKey { dist, id_rank, idx };
        if self.slots.len() < self.cap {
            self.slots.push(key);
            self.sift_up(self.slots.len() - 1);
        } else if Self::worse(&self.slots[0], &key) {
            self.slots[0] = key;
            self.sift_down(0);
        }
    }

    fn sift_up(&mut self, mut i: usize) {
        while i > 0 {
            let parent = (i - 1) / 2;
            if Self::worse(&self.slots[i], &self.slots[parent]) {
                self.slots.swap(i, parent);
                i = parent;
            } else {
                break;
            }
        }
    }

    fn sift_down(&mut self, mut i: usize) {
        let n = self.slots.len();
        loop {
            let (l, r) = (2 * i + 1, 2 * i + 2);
            let mut worst = i;
            if l < n && Self::worse(&self.slots[l], &self.slots[worst]) {
                worst = l;
            }
            if r < n && Self::worse(&self.slots[r], &self.slots[worst]) {
                worst = r;
            }
            if worst == i {
                break;
            }
            self.slots.swap(i, worst);
            i = worst;
        }
    }

    fn into_vec(self) -> Vec<HeapKey> {
        self.slots
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn entry(id: &str, values: &[f32]) -> IndexEntry {
        IndexEntry {
            item_id: id.to_string(),
            identity_id: None,
            variant: Variant::Original,
            vector: Embedding::new(values.to_vec()).unwrap(),
        }
    }

    fn emb(values: &[f32]) -> Embedding {
        Embedding::new(values.to_vec()).unwrap()
    }

    #[test]
    fn build_empty_is_valid() {
        let idx = FlatIndex::build(vec![]).unwrap();
        assert_eq!(idx.len(), 0);
        assert!(idx.search(&emb(&[1.0]), 3).unwrap().is_empty());
    }

    #[test]
    fn build_counts_entries() {
        let idx = FlatIndex::build(vec![
            entry("a", &[0.0; 4]),
            entry("b", &[1.0; 4]),
            entry("c", &[2.0; 4]),
        ])
        .unwrap();
        assert_eq!(idx.len(), 3);
        assert_eq!(idx.dim(), 4);
    }

    #[test]
    fn build_rejects_dim_mismatch() {
        let err = FlatIndex::build(vec![
            entry("a", &[0.0; 4]),
            entry("b", &[1.0; 4]),
            entry("c", &[2.0; 5]),
        ])
        .unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { expected: 4, actual: 5 }));
    }

    #[test]
    fn build_rejects_duplicate_ids() {
        let err =
            FlatIndex::build(vec![entry("a", &[0.0; 2]), entry("a", &[1.0; 2])]).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
    }

    #[test]
    fn search_basic() {
        let idx = FlatIndex::build(vec![
            entry("a", &[0.0, 0.0]),
            entry("b", &[3.0, 4.0]),
            entry("c", &[1.0, 0.0]),
        ])
        .unwrap();
        let hits = idx.search(&emb(&[0.0, 0.0]), 2).unwrap();
        assert_eq!(hits.len(), 2);
        assert_eq!(hits[0].item_id, "a");
        assert_eq!(hits[0].squared_distance, 0.0);
        assert_eq!(hits[0].rank, 0);
        assert_eq!(hits[1].item_id, "c");
        assert_eq!(hits[1].squared_distance, 1.0);
        assert_eq!(hits[1].rank, 1);
    }

    #[test]
    fn search_k_exceeding_n_returns_all() {
        let idx = FlatIndex::build(vec![
            entry("a", &[0.0, 0.0]),
            entry("b", &[3.0, 4.0]),
            entry("c", &[1.0, 0.0]),
        ])
        .unwrap();
        let hits = idx.search(&emb(&[0.0, 0.0]), 5).unwrap();
        assert_eq!(hits.len(), 3);
        assert_eq!(
            hits.iter().map(|h| h.item_id.as_str()).collect::<Vec<_>>(),
            vec!["a", "c", "b"]
        );
    }

    #[test]
    fn search_rejects_zero_k_and_dim_mismatch() {
        let idx = FlatIndex::build(vec![entry("a", &[0.0, 0.0])]).unwrap();
        assert!(matches!(
            idx.search(&emb(&[0.0, 0.0]), 0),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            idx.search(&emb(&[0.0, 0.0, 0.0]), 1),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn search_excluding_drops_only_that_id() {
        let idx =
            FlatIndex::build(vec![entry("a", &[0.0, 0.0]), entry("b", &[1.0, 0.0])]).unwrap();
        let hits = idx.search_excluding(&emb(&[0.0, 0.0]), 1, "a").unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].item_id, "b");
        assert_eq!(hits[0].squared_distance, 1.0);
    }

    #[test]
    fn search_excluding_absent_id_equals_search() {
        let idx =
            FlatIndex::build(vec![entry("a", &[0.0, 0.0]), entry("b", &[1.0, 0.0])]).unwrap();
        let plain = idx.search(&emb(&[0.5, 0.0]), 2).unwrap();
        let excl = idx.search_excluding(&emb(&[0.5, 0.0]), 2, "zzz").unwrap();
        assert_eq!(plain, excl);
    }

    #[test]
    fn search_excluding_keeps_bitwise_duplicate() {
        // Two bitwise-identical vectors; excluding one must surface the other
        // at rank 0 with distance 0.
        let idx = FlatIndex::build(vec![
            entry("a", &[0.25, -1.5]),
            entry("b", &[9.0, 9.0]),
            entry("c", &[0.25, -1.5]),
        ])
        .unwrap();
        let hits = idx.search_excluding(&emb(&[0.25, -1.5]), 2, "a").unwrap();
        assert_eq!(hits[0].item_id, "c");
        assert_eq!(hits[0].squared_distance, 0.0);
        assert_eq!(hits[0].rank, 0);
    }

    #[test]
    fn ties_resolve_by_ascending_item_id() {
        let idx = FlatIndex::build(vec![
            entry("z", &[1.0, 0.0]),
            entry("m", &[-1.0, 0.0]),
            entry("b", &[0.0, 1.0]),
        ])
        .unwrap();
        let hits = idx.search(&emb(&[0.0, 0.0]), 3).unwrap();
        assert_eq!(
            hits.iter().map(|h| h.item_id.as_str()).collect::<Vec<_>>(),
            vec!["b", "m", "z"]
        );
    }

    /// Naive oracle: all pairwise distances via an independent ascending-order
    /// summation, full sort, truncate.
    fn oracle_search(entries: &[(String, Vec<f32>)], query: &[f32], k: usize) -> Vec<(String, f64)> {
        let mut all: Vec<(String, f64)> = entries
            .iter()
            .map(|(id, v)| {
                let mut acc = 0.0f64;
                for i in 0..v.len() {
                    let d = query[i] as f64 - v[i] as f64;
                    acc += d * d;
                }
                (id.clone(), acc)
            })
            .collect();
        all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        all.truncate(k);
        all
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn matches_naive_oracle(
            n in 1usize..120,
            dim in 1usize..24,
            k in 1usize..12,
            seed in any::<u64>(),
        ) {
            let mut s = seed | 1;
            let mut next = move || {
                s ^= s << 13;
                s ^= s >> 7;
                s ^= s << 17;
                ((s >> 11) as f64 / (1u64 << 53) as f64 * 10.0 - 5.0) as f32
            };
            let raw: Vec<(String, Vec<f32>)> = (0..n)
                .map(|i| (format!("e{i:05}"), (0..dim).map(|_| next()).collect()))
                .collect();
            let query: Vec<f32> = (0..dim).map(|_| next()).collect();

            let idx = FlatIndex::build(
                raw.iter()
                    .map(|(id, v)| entry(id, v))
                    .collect(),
            ).unwrap();
            let hits = idx.search(&emb(&query), k).unwrap();
            let expect = oracle_search(&raw, &query, k);

            prop_assert_eq!(hits.len(), expect.len());
            for (h, (id, d)) in hits.iter().zip(&expect) {
                prop_assert_eq!(&h.item_id, id);
                let tol = 1e-12 * d.max(1e-9);
                prop_assert!((h.squared_distance - d).abs() <= tol);
            }
            // distances non-decreasing with rank
            for w in hits.windows(2) {
                prop_assert!(w[0].squared_distance <= w[1].squared_distance);
            }
        }

        #[test]
        fn insertion_order_is_irrelevant(seed in any::<u64>(), rot in 0usize..7) {
            let mut s = seed | 1;
            let mut next = move || {
                s ^= s << 13;
                s ^= s >> 7;
                s ^= s << 17;
                ((s >> 11) as f64 / (1u64 << 53) as f64) as f32
            };
            let raw: Vec<(String, Vec<f32>)> = (0..30)
                .map(|i| (format!("e{i:02}"), (0..6).map(|_| next()).collect()))
                .collect();
            let query: Vec<f32> = (0..6).map(|_| next()).collect();

            let build = |items: &[(String, Vec<f32>)]| {
                FlatIndex::build(items.iter().map(|(id, v)| entry(id, v)).collect()).unwrap()
            };
            let a = build(&raw).search(&emb(&query), 5).unwrap();
            let mut rotated = raw.clone();
            rotated.rotate_left(rot % raw.len());
            let b = build(&rotated).search(&emb(&query), 5).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn irrelevant_insertion_keeps_topk(seed in any::<u64>()) {
            let mut s = seed | 1;
            let mut next = move || {
                s ^= s << 13;
                s ^= s >> 7;
                s ^= s << 17;
                ((s >> 11) as f64 / (1u64 << 53) as f64) as f32
            };
            let raw: Vec<(String, Vec<f32>)> = (0..20)
                .map(|i| (format!("e{i:02}"), (0..4).map(|_| next()).collect()))
                .collect();
            let query: Vec<f32> = (0..4).map(|_| next()).collect();
            let idx = FlatIndex::build(raw.iter().map(|(id, v)| entry(id, v)).collect()).unwrap();
            let hits = idx.search(&emb(&query), 5).unwrap();
            let kth = hits.last().unwrap().squared_distance;

            // add one entry strictly farther than the current k-th hit
            let far: Vec<f32> = query.iter().map(|x| x + (kth.sqrt() as f32) + 10.0).collect();
            let mut extended = raw.clone();
            extended.push(("zzz_far".to_string(), far));
            let idx2 =
                FlatIndex::build(extended.iter().map(|(id, v)| entry(id, v)).collect()).unwrap();
            let hits2 = idx2.search(&emb(&query), 5).unwrap();
            prop_assert_eq!(hits, hits2);
        }

        #[test]
        fn batch_matches_sequential(seed in any::<u64>(), nq in 1usize..12) {
            let mut s = seed | 1;
            let mut next = move || {
                s ^= s << 13;
                s ^= s >> 7;
                s ^= s << 17;
                ((s >> 11) as f64 / (1u64 << 53) as f64) as f32
            };
            let entries: Vec<IndexEntry> = (0..300)
                .map(|i| entry(&format!("e{i:03}"), &(0..8).map(|_| next()).collect::<Vec<_>>()))
                .collect();
            let queries: Vec<Embedding> = (0..nq)
                .map(|_| emb(&(0..8).map(|_| next()).collect::<Vec<_>>()))
                .collect();
            let idx = FlatIndex::build(entries).unwrap();
            let batch = idx.search_batch(&queries, 6).unwrap();
            let parallel = idx.search_batch_parallel(&queries, 6, 3).unwrap();
            for (i, q) in queries.iter().enumerate() {
                let single = idx.search(q, 6).unwrap();
                prop_assert_eq!(&batch[i], &single);
                prop_assert_eq!(&parallel[i], &single);
                // bitwise distance agreement
                for (a, b) in batch[i].iter().zip(&parallel[i]) {
                    prop_assert_eq!(a.squared_distance.to_bits(), b.squared_distance.to_bits());
                }
            }
        }
    }
}
