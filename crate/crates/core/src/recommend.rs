//! Similar-item, co-occurrence and analogy recommendations.
//!
//! * similar: nearest products by `rho`/`rho` cosine similarity; these are
//!   substitutes.
//! * cooccur: products `y` with the largest `rho_x . alpha_y`; these are bought
//!   together. Candidates come from the `alpha` forest and are re-scored
//!   exactly. Unrelated pairs tend to get negative scores, so the raw inner
//!   product is the default rather than a cosine.
//! * analogy: nearest products to `rho_b - rho_a + rho_c`.

use std::fmt::Write as _;

use serde::Serialize;

use crate::ann::{AnnForest, QueryParams};
use crate::corpus::Catalog;
use crate::linalg::dot;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RecKind {
    Similar,
    Cooccur,
    Analogy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CooccurMetric {
    #[default]
    Dot,
    Cosine,
}

impl std::str::FromStr for CooccurMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dot" => Ok(CooccurMetric::Dot),
            "cosine" => Ok(CooccurMetric::Cosine),
            _ => Err(Error::config("cooccur_metric", format!("expected dot or cosine, got {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecItem {
    pub id: u64,
    pub name: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Recommendation {
    pub query: String,
    pub kind: RecKind,
    pub results: Vec<RecItem>,
}

impl Recommendation {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data serializes")
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:?} for {}", self.kind, self.query);
        let _ = writeln!(s, "{:>4}  {:>10}  {:>10}  name", "rank", "id", "score");
        for (i, r) in self.results.iter().enumerate() {
            let _ = writeln!(s, "{:>4}  {:>10}  {:>10.6}  {}", i + 1, r.id, r.score, r.name);
        }
        s
    }
}

/// How a product is referred to on the command line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProductRef {
    Id(u64),
    Name(String),
}

impl std::fmt::Display for ProductRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ProductRef::Id(id) => write!(f, "{id}"),
            ProductRef::Name(n) => write!(f, "{n:?}"),
        }
    }
}

const N_SUGGESTIONS: usize = 5;

pub struct Recommender<'a> {
    catalog: &'a Catalog,
    rho: &'a AnnForest,
    alpha: Option<&'a AnnForest>,
    pub cooccur_metric: CooccurMetric,
    /// Candidates fetched from the alpha forest before exact re-scoring.
    pub cooccur_pool: usize,
    pub search_k: Option<usize>,
}

impl<'a> Recommender<'a> {
    pub fn new(catalog: &'a Catalog, rho: &'a AnnForest, alpha: Option<&'a AnnForest>) -> Self {
        Recommender {
            catalog,
            rho,
            alpha,
            cooccur_metric: CooccurMetric::Dot,
            cooccur_pool: 100,
            search_k: None,
        }
    }

    fn name(&self, id: u64) -> String {
        self.catalog
            .get(&id)
            .map(|p| p.name.clone())
            .unwrap_or_default()
    }

    fn label(&self, id: u64) -> String {
        match self.catalog.get(&id) {
            Some(p) => format!("{id} ({})", p.name),
            None => id.to_string(),
        }
    }

    /// Maps a reference to an indexed product id.
    pub fn resolve(&self, r: &ProductRef) -> Result<u64> {
        match r {
            ProductRef::Id(id) if self.rho.vector(*id).is_some() => Ok(*id),
            ProductRef::Id(id) => {
                let mut near: Vec<u64> = self.rho.ids().to_vec();
                near.sort_by_key(|&k| (k.abs_diff(*id), k));
                Err(Error::UnknownId {
                    id: id.to_string(),
                    suggestions: near.into_iter().take(N_SUGGESTIONS).map(|k| self.label(k)).collect(),
                })
            }
            ProductRef::Name(name) => {
                let needle = name.to_lowercase();
                let indexed = |id: &u64| self.rho.vector(*id).is_some();
                if let Some(p) = self
                    .catalog
                    .values()
                    .find(|p| p.name.to_lowercase() == needle && indexed(&p.product_id))
                {
                    return Ok(p.product_id);
                }
                let suggestions = self
                    .catalog
                    .values()
                    .filter(|p| p.name.to_lowercase().contains(&needle) && indexed(&p.product_id))
                    .take(N_SUGGESTIONS)
                    .map(|p| self.label(p.product_id))
                    .collect();
                Err(Error::UnknownId {
                    id: format!("{name:?}"),
                    suggestions,
                })
            }
        }
    }

    fn rho_of(&self, r: &ProductRef) -> Result<(u64, Vec<f64>)> {
        let id = self.resolve(r)?;
        Ok((id, self.rho.vector(id).expect("resolved ids are indexed")))
    }

    /// Nearest products to `q` in `rho` space, skipping `exclude`.
    fn nearest(&self, q: &[f64], k: usize, exclude: &[u64]) -> Result<Vec<RecItem>> {
        let params = QueryParams {
            k: k + exclude.len(),
            search_k: self.search_k,
        };
        Ok(self
            .rho
            .query(q, params)?
            .into_iter()
            .filter(|n| !exclude.contains(&n.id))
            .take(k)
            .map(|n| RecItem {
                id: n.id,
                name: self.name(n.id),
                score: (1.0 - n.distance).clamp(-1.0, 1.0),
            })
            .collect())
    }

    pub fn similar(&self, product: &ProductRef, k: usize) -> Result<Recommendation> {
        let (id, v) = self.rho_of(product)?;
        Ok(Recommendation {
            query: self.label(id),
            kind: RecKind::Similar,
            results: self.nearest(&v, k, &[id])?,
        })
    }

    pub fn cooccur(&self, product: &ProductRef, k: usize) -> Result<Recommendation> {
        let alpha = self
            .alpha
            .ok_or_else(|| Error::InvalidArgument("co-occurrence needs the alpha index".into()))?;
        let (id, rho_x) = self.rho_of(product)?;
        let pool = self.cooccur_pool.max(k + 1);
        let candidates: Vec<u64> = if pool >= alpha.len() {
            alpha.ids().to_vec()
        } else {
            alpha
                .query(&rho_x, QueryParams {
                    k: pool,
                    search_k: self.search_k,
                })?
                .into_iter()
                .map(|n| n.id)
                .collect()
        };
        let mut scored: Vec<RecItem> = candidates
            .into_iter()
            .filter(|&y| y != id)
            .map(|y| {
                let a = alpha.vector(y).expect("candidate from the alpha index");
                let score = match self.cooccur_metric {
                    CooccurMetric::Dot => dot(&rho_x, &a),
                    CooccurMetric::Cosine => crate::linalg::cosine_similarity(&rho_x, &a),
                };
                RecItem {
                    id: y,
                    name: self.name(y),
                    score,
                }
            })
            .collect();
        scored.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.id.cmp(&b.id)));
        scored.truncate(k);
        Ok(Recommendation {
            query: self.label(id),
            kind: RecKind::Cooccur,
            results: scored,
        })
    }

    /// Products closest to `rho_b - rho_a + rho_c` ("a is to b as c is to ?").
    pub fn analogy(&self, a: &ProductRef, b: &ProductRef, c: &ProductRef, k: usize) -> Result<Recommendation> {
        let (ia, va) = self.rho_of(a)?;
        let (ib, vb) = self.rho_of(b)?;
        let (ic, vc) = self.rho_of(c)?;
        let q: Vec<f64> = (0..va.len()).map(|d| vb[d] - va[d] + vc[d]).collect();
        if q.iter().all(|&x| x == 0.0) {
            return Err(Error::InvalidArgument("analogy query vector is zero".into()));
        }
        let mut exclude = vec![ia, ib, ic];
        exclude.dedup();
        Ok(Recommendation {
            query: format!("{} - {} + {}", self.label(ib), self.label(ia), self.label(ic)),
            kind: RecKind::Analogy,
            results: self.nearest(&q, k, &exclude)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ann::BuildParams;
    use crate::corpus::Product;
    use crate::store::EmbeddingTable;

    fn catalog(n: u64) -> Catalog {
        (0..n)
            .map(|i| {
                (
                    i,
                    Product {
                        product_id: i,
                        name: format!("item{i}"),
                        department: "D".into(),
                    },
                )
            })
            .collect()
    }

    fn forest(rows: Vec<(u64, Vec<f64>)>) -> AnnForest {
        AnnForest::build(&EmbeddingTable::from_rows(rows).unwrap(), BuildParams::default()).unwrap()
    }

    #[test]
    fn duplicate_vector_ranks_first() {
        let cat = catalog(4);
        let rho = forest(vec![
            (0, vec![1.0, 0.2, 0.0]),
            (1, vec![0.0, 1.0, 0.0]),
            (2, vec![1.0, 0.2, 0.0]),
            (3, vec![0.0, 0.0, 1.0]),
        ]);
        let r = Recommender::new(&cat, &rho, None);
        let rec = r.similar(&ProductRef::Id(0), 2).unwrap();
        assert_eq!(rec.results[0].id, 2);
        assert!((rec.results[0].score - 1.0).abs() < 1e-6);
        assert!(rec.results.iter().all(|x| x.id != 0));
    }

    #[test]
    fn cooccur_raw_inner_product() {
        let cat = catalog(3);
        let rho = forest(vec![(0, vec![1.0, 1.0]), (1, vec![0.5, 0.1]), (2, vec![0.1, 0.5])]);
        let alpha = forest(vec![(0, vec![0.0, 0.0]), (1, vec![2.0, 0.0]), (2, vec![-1.0, 0.0])]);
        let r = Recommender::new(&cat, &rho, Some(&alpha));
        let rec = r.cooccur(&ProductRef::Id(0), 2).unwrap();
        assert_eq!(rec.results[0].id, 1);
        assert_eq!(rec.results[0].score, 2.0);
        assert_eq!(rec.results[1].score, -1.0);
    }

    #[test]
    fn orthogonal_context_scores_zero() {
        let cat = catalog(3);
        let rho = forest(vec![(0, vec![1.0, 0.0]), (1, vec![1.0, 1.0]), (2, vec![1.0, 2.0])]);
        let alpha = forest(vec![(0, vec![0.0, 1.0]), (1, vec![0.0, 3.0]), (2, vec![0.0, -2.0])]);
        let r = Recommender::new(&cat, &rho, Some(&alpha));
        let rec = r.cooccur(&ProductRef::Id(0), 5).unwrap();
        assert_eq!(rec.results.len(), 2);
        assert!(rec.results.iter().all(|x| x.score == 0.0));
    }

    #[test]
    fn analogy_with_equal_endpoints() {
        let cat = catalog(5);
        let rows = vec![
            (0, vec![1.0, 0.0, 0.0]),
            (1, vec![0.0, 1.0, 0.0]),
            (2, vec![0.1, 1.0, 0.0]),
            (3, vec![0.0, 0.0, 1.0]),
            (4, vec![0.0, 0.9, 0.3]),
        ];
        let rho = forest(rows);
        let r = Recommender::new(&cat, &rho, None);
        // a == c: query is rho_b
        let an = r
            .analogy(&ProductRef::Id(0), &ProductRef::Id(1), &ProductRef::Id(0), 2)
            .unwrap();
        let sim = r.similar(&ProductRef::Id(1), 3).unwrap();
        let expected: Vec<u64> = sim.results.iter().map(|x| x.id).filter(|&i| i != 0).take(2).collect();
        assert_eq!(an.results.iter().map(|x| x.id).collect::<Vec<_>>(), expected);
        // a == b: query is rho_c
        let an = r
            .analogy(&ProductRef::Id(3), &ProductRef::Id(3), &ProductRef::Id(1), 1)
            .unwrap();
        assert_eq!(an.results[0].id, 2);
    }

    #[test]
    fn zero_analogy_vector_errors() {
        let cat = catalog(3);
        let rho = forest(vec![(0, vec![1.0, 0.0]), (1, vec![0.0, 0.0]), (2, vec![0.0, 1.0])]);
        let r = Recommender::new(&cat, &rho, None);
        // rho_1 - rho_0 + rho_0 is the zero row of item 1
        assert!(matches!(
            r.analogy(&ProductRef::Id(0), &ProductRef::Id(1), &ProductRef::Id(0), 1),
            Err(Error::InvalidArgument(_))
        ));
        assert!(r
            .analogy(&ProductRef::Id(1), &ProductRef::Id(0), &ProductRef::Id(0), 1)
            .is_ok());
    }

    #[test]
    fn unknown_ids_suggest_neighbours() {
        let cat = catalog(3);
        let rho = forest(vec![(0, vec![1.0, 0.0]), (1, vec![0.0, 1.0]), (2, vec![1.0, 1.0])]);
        let r = Recommender::new(&cat, &rho, None);
        match r.similar(&ProductRef::Id(99), 1).unwrap_err() {
            Error::UnknownId { suggestions, .. } => assert_eq!(suggestions[0], "2 (item2)"),
            e => panic!("{e}"),
        }
        match r.similar(&ProductRef::Name("item".into()), 1).unwrap_err() {
            Error::UnknownId { suggestions, .. } => assert_eq!(suggestions.len(), 3),
            e => panic!("{e}"),
        }
        assert_eq!(r.resolve(&ProductRef::Name("ITEM1".into())).unwrap(), 1);
    }

    #[test]
    fn json_shape() {
        let rec = Recommendation {
            query: "7 (Coke)".into(),
            kind: RecKind::Similar,
            results: vec![RecItem {
                id: 8,
                name: "Sprite".into(),
                score: 0.9,
            }],
        };
        let v: serde_json::Value = serde_json::from_str(&rec.to_json()).unwrap();
        assert_eq!(v["kind"], "similar");
        assert_eq!(v["results"][0]["name"], "Sprite");
    }
}
