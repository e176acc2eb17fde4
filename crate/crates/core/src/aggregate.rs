//! Trip and customer embeddings by mean pooling of product embeddings.

use std::collections::BTreeMap;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Trip};
use crate::efemb::EmbeddingPair;
use crate::linalg::axpy;
use crate::seed;
use crate::store::EmbeddingTable;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolKind {
    Trip,
    Customer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PooledEmbedding {
    /// Trip id or customer id.
    pub owner_id: u64,
    pub kind: PoolKind,
    pub vector: Vec<f64>,
    /// Product rows averaged into `vector`.
    pub n_items: usize,
    /// Items skipped because they have no embedding.
    pub n_oov: usize,
}

/// Mean of `rho` over a multiset of products. Returns `(mean, used, skipped)`.
fn pool_products<'a>(
    products: impl IntoIterator<Item = &'a u64>,
    pair: &EmbeddingPair,
) -> (Vec<f64>, usize, usize) {
    let mut acc = vec![0.0; pair.dim()];
    let (mut used, mut skipped) = (0usize, 0usize);
    for &p in products {
        match pair.rho_of(p) {
            Some(r) => {
                axpy(1.0, r, &mut acc);
                used += 1;
            }
            None => skipped += 1,
        }
    }
    if used > 0 {
        let inv = 1.0 / used as f64;
        acc.iter_mut().for_each(|x| *x *= inv);
    }
    (acc, used, skipped)
}

pub fn trip_embedding(trip: &Trip, pair: &EmbeddingPair) -> Result<PooledEmbedding> {
    let (vector, n_items, n_oov) = pool_products(&trip.items, pair);
    if n_items == 0 {
        return Err(Error::Empty(format!(
            "trip {} has no items with an embedding",
            trip.trip_id
        )));
    }
    if n_oov > 0 {
        log::warn!("trip {}: skipped {n_oov} items without embedding", trip.trip_id);
    }
    Ok(PooledEmbedding {
        owner_id: trip.trip_id,
        kind: PoolKind::Trip,
        vector,
        n_items,
        n_oov,
    })
}

/// Mean over the multiset of products across all of a customer's trips; a
/// product bought in three trips counts three times.
pub fn customer_embedding(customer_id: u64, trips: &[&Trip], pair: &EmbeddingPair) -> Result<PooledEmbedding> {
    let (vector, n_items, n_oov) = pool_products(trips.iter().flat_map(|t| t.items.iter()), pair);
    if n_items == 0 {
        return Err(Error::Empty(format!(
            "customer {customer_id} has no purchased items with an embedding"
        )));
    }
    Ok(PooledEmbedding {
        owner_id: customer_id,
        kind: PoolKind::Customer,
        vector,
        n_items,
        n_oov,
    })
}

/// Uniform subsample without replacement.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Sample {
    pub size: usize,
    pub seed: u64,
}

/// Pools every retained trip (or customer) of `corpus`, then optionally
/// subsamples. Owners whose items all lack embeddings are skipped with a warning.
pub fn pool_all(
    corpus: &Corpus,
    pair: &EmbeddingPair,
    kind: PoolKind,
    sample: Option<Sample>,
) -> Result<Vec<PooledEmbedding>> {
    let (filtered, _) = corpus.filtered(corpus.min_basket)?;
    let mut pooled = Vec::new();
    let mut skipped = 0usize;
    match kind {
        PoolKind::Trip => {
            for t in &filtered.trips {
                match trip_embedding(t, pair) {
                    Ok(p) => pooled.push(p),
                    Err(_) => skipped += 1,
                }
            }
        }
        PoolKind::Customer => {
            for (cid, trips) in filtered.trips_by_customer() {
                match customer_embedding(cid, &trips, pair) {
                    Ok(p) => pooled.push(p),
                    Err(_) => skipped += 1,
                }
            }
        }
    }
    if skipped > 0 {
        log::warn!("skipped {skipped} {kind:?} owners with no embedded items");
    }
    Ok(match sample {
        None => pooled,
        Some(s) if s.size >= pooled.len() => {
            log::info!(
                "sample size {} is not below population {}; keeping all",
                s.size,
                pooled.len()
            );
            pooled
        }
        Some(s) => {
            let mut rng = seed::rng(s.seed);
            let mut keep = index::sample(&mut rng, pooled.len(), s.size).into_vec();
            keep.sort_unstable();
            let mut slots: Vec<Option<PooledEmbedding>> = pooled.into_iter().map(Some).collect();
            keep.into_iter().map(|i| slots[i].take().expect("unique index")).collect()
        }
    })
}

pub fn to_table(pooled: &[PooledEmbedding]) -> Result<EmbeddingTable> {
    EmbeddingTable::from_rows(pooled.iter().map(|p| (p.owner_id, p.vector.clone())))
}

/// Item sets behind each pooled owner: a trip's items, or the union of a
/// customer's trips. Used to decide true/fake neighbour pairs.
pub fn owner_item_sets(corpus: &Corpus, kind: PoolKind) -> BTreeMap<u64, Vec<u64>> {
    match kind {
        PoolKind::Trip => corpus
            .trips
            .iter()
            .map(|t| (t.trip_id, t.items.clone()))
            .collect(),
        PoolKind::Customer => corpus
            .trips_by_customer()
            .into_iter()
            .map(|(cid, trips)| {
                let mut items: Vec<u64> = trips.iter().flat_map(|t| t.items.iter().copied()).collect();
                items.sort_unstable();
                items.dedup();
                (cid, items)
            })
            .collect(),
    }
}

/// Purchased products behind each owner as a multiset (repeats kept), for profiling.
pub fn owner_purchases(corpus: &Corpus, kind: PoolKind) -> BTreeMap<u64, Vec<u64>> {
    match kind {
        PoolKind::Trip => owner_item_sets(corpus, kind),
        PoolKind::Customer => corpus
            .trips_by_customer()
            .into_iter()
            .map(|(cid, trips)| (cid, trips.iter().flat_map(|t| t.items.iter().copied()).collect()))
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;

    fn pair(rows: &[(u64, [f64; 2])]) -> EmbeddingPair {
        let ids = rows.iter().map(|r| r.0).collect();
        let flat: Vec<f64> = rows.iter().flat_map(|r| r.1).collect();
        EmbeddingPair::new(
            ids,
            Matrix::from_vec(rows.len(), 2, flat),
            Matrix::zeros(rows.len(), 2),
        )
        .unwrap()
    }

    #[test]
    fn singleton_trip_is_its_row() {
        let p = pair(&[(1, [2.0, 4.0])]);
        let e = trip_embedding(&Trip::new(9, 0, [1]), &p).unwrap();
        assert_eq!(e.vector, vec![2.0, 4.0]);
        assert_eq!(e.n_items, 1);
    }

    #[test]
    fn two_item_trip_mean() {
        let p = pair(&[(1, [1.0, 0.0]), (2, [0.0, 1.0])]);
        let e = trip_embedding(&Trip::new(9, 0, [1, 2]), &p).unwrap();
        assert_eq!(e.vector, vec![0.5, 0.5]);
    }

    #[test]
    fn oov_items_are_skipped() {
        let p = pair(&[(1, [1.0, 0.0])]);
        let e = trip_embedding(&Trip::new(9, 0, [1, 77]), &p).unwrap();
        assert_eq!((e.n_items, e.n_oov), (1, 1));
        assert!(trip_embedding(&Trip::new(10, 0, [77]), &p).is_err());
    }

    #[test]
    fn customer_multiset_semantics() {
        let p = pair(&[(1, [3.0, 0.0]), (2, [0.0, 3.0])]);
        let t1 = Trip::new(1, 5, [1]);
        let t2 = Trip::new(2, 5, [1, 2]);
        let e = customer_embedding(5, &[&t1, &t2], &p).unwrap();
        assert_eq!(e.vector, vec![2.0, 1.0]);
        assert_eq!(e.n_items, 3);
        let single = customer_embedding(5, &[&t2], &p).unwrap();
        assert_eq!(single.vector, trip_embedding(&t2, &p).unwrap().vector);
    }
}
