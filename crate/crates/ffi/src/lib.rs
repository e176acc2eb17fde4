//! C interface to basketvec.
//!
//! Objects are opaque handles created by `*_load`/`*_build`/`*_open` and
//! released with the matching `*_free`. Every fallible call returns a
//! [`BvStatus`]; on failure `bv_last_error_message` describes the error for
//! the calling thread. Output arrays are caller-allocated.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use basketvec::ann::{AnnForest, BuildParams, QueryParams};
use basketvec::cluster;
use basketvec::corpus::{self, Catalog};
use basketvec::recommend::{ProductRef, Recommendation, Recommender};
use basketvec::store::EmbeddingTable;
use basketvec::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BvStatus {
    Ok = 0,
    NullPointer = 1,
    Io = 2,
    Format = 3,
    InvalidArgument = 4,
    UnknownId = 5,
    DimensionMismatch = 6,
    Empty = 7,
    Panic = 8,
}

pub struct BvEmbeddings {
    table: EmbeddingTable,
}

pub struct BvIndex {
    forest: AnnForest,
}

pub struct BvRecommender {
    catalog: Catalog,
    rho: AnnForest,
    alpha: Option<AnnForest>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(BvStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io { .. } => BvStatus::Io,
            Error::Parse { .. } | Error::Format { .. } => BvStatus::Format,
            Error::UnknownId { .. } | Error::UnknownItem { .. } => BvStatus::UnknownId,
            Error::DimensionMismatch { .. } => BvStatus::DimensionMismatch,
            Error::Empty(_) => BvStatus::Empty,
            _ => BvStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(BvStatus::NullPointer, format!("{what} is null"))
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> BvStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => BvStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            BvStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(BvStatus::InvalidArgument, format!("{what} is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn handle<'a, T>(h: *const T, what: &str) -> Result<&'a T, Failure> {
    h.as_ref().ok_or_else(|| null(what))
}

unsafe fn out_slice<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn store<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output handle pointer"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn bv_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread, or NULL. Valid until the
/// next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn bv_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bv_embeddings_load(path: *const c_char, out: *mut *mut BvEmbeddings) -> BvStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        store(out, BvEmbeddings {
            table: EmbeddingTable::load(&path)?,
        })
    })
}

/// # Safety
/// `h` must be NULL or a handle from `bv_embeddings_load` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bv_embeddings_free(h: *mut BvEmbeddings) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Number of rows, or 0 for NULL.
///
/// # Safety
/// `h` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn bv_embeddings_len(h: *const BvEmbeddings) -> usize {
    h.as_ref().map_or(0, |e| e.table.len())
}

/// Vector dimension, or 0 for NULL.
///
/// # Safety
/// `h` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn bv_embeddings_dim(h: *const BvEmbeddings) -> usize {
    h.as_ref().map_or(0, |e| e.table.dim())
}

/// Copies the row ids (file order) into `out_ids`, which holds `capacity` entries.
///
/// # Safety
/// `out_ids` must point to `capacity` writable `uint64_t`.
#[no_mangle]
pub unsafe extern "C" fn bv_embeddings_ids(h: *const BvEmbeddings, out_ids: *mut u64, capacity: usize) -> BvStatus {
    guard(|| {
        let e = handle(h, "embeddings")?;
        if capacity < e.table.len() {
            return Err(Failure(
                BvStatus::InvalidArgument,
                format!("capacity {capacity} is below {} ids", e.table.len()),
            ));
        }
        out_slice(out_ids, capacity, "out_ids")?[..e.table.len()].copy_from_slice(e.table.ids());
        Ok(())
    })
}

/// Copies the vector of `id` into `out`, which must hold exactly `dim` values.
///
/// # Safety
/// `out` must point to `dim` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn bv_embeddings_get(h: *const BvEmbeddings, id: u64, out: *mut f64, dim: usize) -> BvStatus {
    guard(|| {
        let e = handle(h, "embeddings")?;
        if dim != e.table.dim() {
            return Err(Error::DimensionMismatch {
                expected: e.table.dim(),
                got: dim,
            }
            .into());
        }
        let row = e.table.get(id).ok_or(Error::UnknownId {
            id: id.to_string(),
            suggestions: Vec::new(),
        })?;
        out_slice(out, dim, "out")?.copy_from_slice(row);
        Ok(())
    })
}

/// Builds a random-projection forest over all rows of `emb`.
///
/// # Safety
/// `emb` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bv_index_build(
    emb: *const BvEmbeddings,
    n_trees: usize,
    leaf_size: usize,
    seed: u64,
    out: *mut *mut BvIndex,
) -> BvStatus {
    guard(|| {
        let e = handle(emb, "embeddings")?;
        let forest = AnnForest::build(
            &e.table,
            BuildParams {
                n_trees,
                leaf_size,
                seed,
            },
        )?;
        store(out, BvIndex { forest })
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bv_index_load(path: *const c_char, out: *mut *mut BvIndex) -> BvStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        store(out, BvIndex {
            forest: AnnForest::load(&path)?,
        })
    })
}

/// # Safety
/// `h` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn bv_index_save(h: *const BvIndex, path: *const c_char) -> BvStatus {
    guard(|| {
        let idx = handle(h, "index")?;
        idx.forest.save(&path_arg(path, "path")?)?;
        Ok(())
    })
}

/// # Safety
/// `h` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bv_index_free(h: *mut BvIndex) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// # Safety
/// `h` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn bv_index_len(h: *const BvIndex) -> usize {
    h.as_ref().map_or(0, |i| i.forest.len())
}

/// # Safety
/// `h` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn bv_index_dim(h: *const BvIndex) -> usize {
    h.as_ref().map_or(0, |i| i.forest.dim())
}

/// Approximate `k` nearest neighbours of `query` by cosine distance.
/// `search_k` is the node budget, 0 for the default. Up to `k` results are
/// written; `out_count` receives how many.
///
/// # Safety
/// `query` must hold `dim` doubles; `out_ids` and `out_distances` `k` entries each.
#[no_mangle]
pub unsafe extern "C" fn bv_index_query(
    h: *const BvIndex,
    query: *const f64,
    dim: usize,
    k: usize,
    search_k: usize,
    out_ids: *mut u64,
    out_distances: *mut f64,
    out_count: *mut usize,
) -> BvStatus {
    guard(|| {
        let idx = handle(h, "index")?;
        if query.is_null() {
            return Err(null("query"));
        }
        if out_count.is_null() {
            return Err(null("out_count"));
        }
        let q = std::slice::from_raw_parts(query, dim);
        let params = QueryParams {
            k,
            search_k: (search_k > 0).then_some(search_k),
        };
        let hits = idx.forest.query(q, params)?;
        let ids = out_slice(out_ids, k, "out_ids")?;
        let dists = out_slice(out_distances, k, "out_distances")?;
        for (i, n) in hits.iter().enumerate() {
            ids[i] = n.id;
            dists[i] = n.distance;
        }
        *out_count = hits.len();
        Ok(())
    })
}

/// Opens a recommender over a catalog CSV and indexes of rho and (optionally,
/// may be NULL) alpha vectors.
///
/// # Safety
/// Paths must be NUL-terminated strings (`alpha_index_path` may be NULL).
#[no_mangle]
pub unsafe extern "C" fn bv_recommender_open(
    catalog_path: *const c_char,
    rho_index_path: *const c_char,
    alpha_index_path: *const c_char,
    out: *mut *mut BvRecommender,
) -> BvStatus {
    guard(|| {
        let catalog = corpus::load_catalog(&path_arg(catalog_path, "catalog_path")?)?;
        let rho = AnnForest::load(&path_arg(rho_index_path, "rho_index_path")?)?;
        let alpha = if alpha_index_path.is_null() {
            None
        } else {
            Some(AnnForest::load(&path_arg(alpha_index_path, "alpha_index_path")?)?)
        };
        store(out, BvRecommender { catalog, rho, alpha })
    })
}

/// # Safety
/// `h` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bv_recommender_free(h: *mut BvRecommender) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

unsafe fn write_results(
    rec: Recommendation,
    k: usize,
    out_ids: *mut u64,
    out_scores: *mut f64,
    out_count: *mut usize,
) -> Result<(), Failure> {
    if out_count.is_null() {
        return Err(null("out_count"));
    }
    let ids = out_slice(out_ids, k, "out_ids")?;
    let scores = out_slice(out_scores, k, "out_scores")?;
    for (i, r) in rec.results.iter().take(k).enumerate() {
        ids[i] = r.id;
        scores[i] = r.score;
    }
    *out_count = rec.results.len().min(k);
    Ok(())
}

/// Products most similar to `product_id` (rho cosine similarity, descending).
///
/// # Safety
/// `out_ids` and `out_scores` must hold `k` entries each.
#[no_mangle]
pub unsafe extern "C" fn bv_recommender_similar(
    h: *const BvRecommender,
    product_id: u64,
    k: usize,
    out_ids: *mut u64,
    out_scores: *mut f64,
    out_count: *mut usize,
) -> BvStatus {
    guard(|| {
        let r = handle(h, "recommender")?;
        let rec = Recommender::new(&r.catalog, &r.rho, r.alpha.as_ref()).similar(&ProductRef::Id(product_id), k)?;
        write_results(rec, k, out_ids, out_scores, out_count)
    })
}

/// Products most often bought with `product_id` (rho . alpha, descending).
/// Needs the alpha index.
///
/// # Safety
/// `out_ids` and `out_scores` must hold `k` entries each.
#[no_mangle]
pub unsafe extern "C" fn bv_recommender_cooccur(
    h: *const BvRecommender,
    product_id: u64,
    k: usize,
    out_ids: *mut u64,
    out_scores: *mut f64,
    out_count: *mut usize,
) -> BvStatus {
    guard(|| {
        let r = handle(h, "recommender")?;
        let rec = Recommender::new(&r.catalog, &r.rho, r.alpha.as_ref()).cooccur(&ProductRef::Id(product_id), k)?;
        write_results(rec, k, out_ids, out_scores, out_count)
    })
}

/// `true_pairs / (true_pairs + fake_pairs)`; `BV_STATUS_EMPTY` when both are 0.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bv_cluster_score(true_pairs: u64, fake_pairs: u64, out: *mut f64) -> BvStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let s = cluster::cluster_score(true_pairs, fake_pairs)
            .ok_or_else(|| Failure(BvStatus::Empty, "no pairs to score".into()))?;
        *out = s;
        Ok(())
    })
}
