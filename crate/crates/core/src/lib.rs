//! Exponential-family (Bernoulli) embeddings of retail shopping baskets.
//!
//! The crate trains a product embedding `rho` and a context vector `alpha` per
//! product from transaction baskets, then builds on them:
//!
//! * [`recommend`]: similar items (`rho`/`rho` cosine), co-occurring items
//!   (`rho`/`alpha` inner product) and analogy queries, served from an
//!   approximate nearest neighbour forest ([`ann`]).
//! * [`aggregate`]: trip and customer embeddings by mean pooling.
//! * [`cluster`]: k-means over pooled embeddings, true/fake neighbour pair
//!   scoring and department profiles.
//! * [`tsne`]: exact t-SNE for 2-D plots.
//! * [`textembed`]: name embeddings and combined (concatenated) embeddings.
//!
//! Data ingestion and the synthetic corpus generator live in [`corpus`]; the
//! on-disk embedding format is in [`store`].

pub mod aggregate;
pub mod ann;
pub mod cluster;
pub mod corpus;
pub mod efemb;
mod error;
pub mod linalg;
pub mod recommend;
pub mod seed;
pub mod store;
pub mod textembed;
pub mod tsne;

pub use error::{Error, Result};
