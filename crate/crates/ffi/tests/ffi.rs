use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use basketvec::corpus::{write_catalog, Catalog, Product};
use basketvec::store::EmbeddingTable;
use basketvec_ffi::*;

fn cpath(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let p = bv_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

/// Three tight groups of four products on orthogonal axes.
fn fixture(dir: &Path) -> (PathBuf, PathBuf) {
    let rows = (0..12u64).map(|i| {
        let mut v = vec![0.05 * (i % 4) as f64; 3];
        v[(i / 4) as usize] = 1.0;
        (i, v)
    });
    let emb = dir.join("rho.bin");
    EmbeddingTable::from_rows(rows).unwrap().save(&emb).unwrap();
    let catalog: Catalog = (0..12u64)
        .map(|i| {
            (
                i,
                Product {
                    product_id: i,
                    name: format!("p{i}"),
                    department: format!("D{}", i / 4),
                },
            )
        })
        .collect();
    let cat = dir.join("catalog.csv");
    write_catalog(&cat, &catalog).unwrap();
    (emb, cat)
}

#[test]
fn version_is_crate_version() {
    let v = unsafe { CStr::from_ptr(bv_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn embeddings_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (emb, _) = fixture(dir.path());
    let mut h = ptr::null_mut();
    unsafe {
        assert_eq!(bv_embeddings_load(cpath(&emb).as_ptr(), &mut h), BvStatus::Ok);
        assert_eq!(bv_embeddings_len(h), 12);
        assert_eq!(bv_embeddings_dim(h), 3);
        let mut ids = [0u64; 12];
        assert_eq!(bv_embeddings_ids(h, ids.as_mut_ptr(), ids.len()), BvStatus::Ok);
        assert_eq!(ids.to_vec(), (0..12).collect::<Vec<u64>>());
        let mut v = [0.0; 3];
        assert_eq!(bv_embeddings_get(h, 5, v.as_mut_ptr(), 3), BvStatus::Ok);
        assert!((v[1] - 1.0).abs() < 1e-7 && (v[0] - 0.05).abs() < 1e-7);
        assert_eq!(bv_embeddings_get(h, 99, v.as_mut_ptr(), 3), BvStatus::UnknownId);
        assert!(last_error().contains("99"));
        assert_eq!(bv_embeddings_get(h, 5, v.as_mut_ptr(), 2), BvStatus::DimensionMismatch);
        assert_eq!(bv_embeddings_ids(h, ids.as_mut_ptr(), 3), BvStatus::InvalidArgument);
        bv_embeddings_free(h);
    }
}

#[test]
fn null_and_missing_inputs() {
    unsafe {
        let mut h = ptr::null_mut();
        assert_eq!(bv_embeddings_load(ptr::null(), &mut h), BvStatus::NullPointer);
        let missing = CString::new("/nonexistent/rho.bin").unwrap();
        assert_eq!(bv_embeddings_load(missing.as_ptr(), &mut h), BvStatus::Io);
        assert!(h.is_null());
        assert_eq!(bv_embeddings_len(ptr::null()), 0);
        bv_embeddings_free(ptr::null_mut());
        bv_index_free(ptr::null_mut());
        bv_recommender_free(ptr::null_mut());
    }
    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("junk.bin");
    std::fs::write(&junk, b"not an embedding file").unwrap();
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { bv_embeddings_load(cpath(&junk).as_ptr(), &mut h) }, BvStatus::Format);
}

#[test]
fn index_build_query_save_load() {
    let dir = tempfile::tempdir().unwrap();
    let (emb, _) = fixture(dir.path());
    unsafe {
        let mut e = ptr::null_mut();
        assert_eq!(bv_embeddings_load(cpath(&emb).as_ptr(), &mut e), BvStatus::Ok);
        let mut idx = ptr::null_mut();
        assert_eq!(bv_index_build(e, 5, 2, 3, &mut idx), BvStatus::Ok);
        assert_eq!((bv_index_len(idx), bv_index_dim(idx)), (12, 3));

        let q = [0.0, 0.0, 1.0];
        let (mut ids, mut dist, mut n) = ([0u64; 4], [0.0; 4], 0usize);
        let st = bv_index_query(idx, q.as_ptr(), 3, 4, 0, ids.as_mut_ptr(), dist.as_mut_ptr(), &mut n);
        assert_eq!(st, BvStatus::Ok);
        assert_eq!(n, 4);
        let mut got = ids.to_vec();
        got.sort();
        assert_eq!(got, vec![8, 9, 10, 11]);
        assert!(dist.windows(2).all(|w| w[0] <= w[1]));

        let saved = dir.path().join("rho.ann");
        assert_eq!(bv_index_save(idx, cpath(&saved).as_ptr()), BvStatus::Ok);
        let mut again = ptr::null_mut();
        assert_eq!(bv_index_load(cpath(&saved).as_ptr(), &mut again), BvStatus::Ok);
        let (mut ids2, mut dist2, mut n2) = ([0u64; 4], [0.0; 4], 0usize);
        bv_index_query(again, q.as_ptr(), 3, 4, 0, ids2.as_mut_ptr(), dist2.as_mut_ptr(), &mut n2);
        assert_eq!((ids, n), (ids2, n2));

        assert_eq!(bv_index_build(e, 0, 2, 3, &mut again), BvStatus::InvalidArgument);
        bv_index_free(idx);
        bv_index_free(again);
        bv_embeddings_free(e);
    }
}

#[test]
fn recommender_similar_and_cooccur() {
    let dir = tempfile::tempdir().unwrap();
    let (emb, cat) = fixture(dir.path());
    unsafe {
        let mut e = ptr::null_mut();
        bv_embeddings_load(cpath(&emb).as_ptr(), &mut e);
        let mut idx = ptr::null_mut();
        bv_index_build(e, 5, 4, 1, &mut idx);
        let ann = dir.path().join("rho.ann");
        bv_index_save(idx, cpath(&ann).as_ptr());

        let mut r = ptr::null_mut();
        assert_eq!(
            bv_recommender_open(cpath(&cat).as_ptr(), cpath(&ann).as_ptr(), ptr::null(), &mut r),
            BvStatus::Ok
        );
        let (mut ids, mut scores, mut n) = ([0u64; 3], [0.0; 3], 0usize);
        assert_eq!(
            bv_recommender_similar(r, 4, 3, ids.as_mut_ptr(), scores.as_mut_ptr(), &mut n),
            BvStatus::Ok
        );
        assert_eq!(n, 3);
        let mut got = ids.to_vec();
        got.sort();
        assert_eq!(got, vec![5, 6, 7]);
        assert!(scores.windows(2).all(|w| w[0] >= w[1]));
        assert_eq!(
            bv_recommender_cooccur(r, 4, 3, ids.as_mut_ptr(), scores.as_mut_ptr(), &mut n),
            BvStatus::InvalidArgument
        );
        bv_recommender_free(r);

        assert_eq!(
            bv_recommender_open(cpath(&cat).as_ptr(), cpath(&ann).as_ptr(), cpath(&ann).as_ptr(), &mut r),
            BvStatus::Ok
        );
        assert_eq!(
            bv_recommender_cooccur(r, 4, 3, ids.as_mut_ptr(), scores.as_mut_ptr(), &mut n),
            BvStatus::Ok
        );
        assert_eq!(n, 3);
        assert_eq!(
            bv_recommender_similar(r, 404, 3, ids.as_mut_ptr(), scores.as_mut_ptr(), &mut n),
            BvStatus::UnknownId
        );
        bv_recommender_free(r);
        bv_index_free(idx);
        bv_embeddings_free(e);
    }
}

#[test]
fn cluster_score_values() {
    let mut s = 0.0;
    unsafe {
        assert_eq!(bv_cluster_score(95144, 210946, &mut s), BvStatus::Ok);
        assert!((s - 0.310836682022).abs() < 1e-12);
        assert_eq!(bv_cluster_score(0, 0, &mut s), BvStatus::Empty);
        assert_eq!(bv_cluster_score(1, 1, ptr::null_mut()), BvStatus::NullPointer);
    }
}

fn static_lib() -> Option<PathBuf> {
    // tests/ffi-<hash> lives in target/<profile>/deps
    let exe = std::env::current_exe().ok()?;
    let profile_dir = exe.parent()?.parent()?;
    let lib = profile_dir.join("libbasketvec_ffi.a");
    lib.exists().then_some(lib)
}

#[test]
fn header_compiles_and_links_from_c() {
    let header_dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let header = std::fs::read_to_string(header_dir.join("basketvec.h")).unwrap();
    for f in ["bv_embeddings_load", "bv_index_query", "bv_recommender_similar", "bv_cluster_score"] {
        assert!(header.contains(f), "header lacks {f}");
    }
    let Some(lib) = static_lib() else {
        eprintln!("static library not found next to the test binary; skipping C link check");
        return;
    };
    if Command::new("cc").arg("--version").output().is_err() {
        eprintln!("no C compiler; skipping C link check");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(
        &src,
        r#"#include <stdio.h>
#include <string.h>
#include "basketvec.h"
int main(void) {
    double s = 0.0;
    if (bv_cluster_score(31328, 5752, &s) != BV_STATUS_OK) return 1;
    if (s < 0.844875943904 || s > 0.844875943906) return 2;
    BvEmbeddings *e = NULL;
    if (bv_embeddings_load("/nonexistent.bin", &e) != BV_STATUS_IO) return 3;
    if (bv_last_error_message() == NULL) return 4;
    printf("%s\n", bv_version());
    return 0;
}
"#,
    )
    .unwrap();
    let bin = dir.path().join("main");
    let out = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(&header_dir)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .output()
        .unwrap();
    assert!(out.status.success(), "cc failed: {}", String::from_utf8_lossy(&out.stderr));
    let run = Command::new(&bin).output().unwrap();
    assert!(run.status.success(), "C program exited with {:?}", run.status.code());
    assert_eq!(String::from_utf8_lossy(&run.stdout).trim(), env!("CARGO_PKG_VERSION"));
}
