mod common;

use basketvec::corpus::{Catalog, Product};
use basketvec::efemb::{EmbeddingPair, TrainConfig};
use basketvec::linalg::Matrix;
use basketvec::store::EmbeddingTable;
use basketvec::textembed::{
    combine, combine_all, load_meta, save_meta, sentence_table, tokenize, train_name_embeddings, SentenceEncoder,
    TokenVocab,
};
use common::*;
use rand::seq::IndexedRandom;
use rand::Rng;

const POOL_A: [&str; 8] = ["milk", "cream", "yogurt", "cheese", "butter", "kefir", "whey", "curd"];
const POOL_B: [&str; 8] = ["bolt", "screw", "nail", "washer", "hinge", "bracket", "rivet", "anchor"];

/// Product names drawn from one of two disjoint token pools.
fn two_pool_catalog(n: u64, seed: u64) -> Catalog {
    let mut r = rng(seed);
    (0..n)
        .map(|i| {
            let pool: &[&str] = if i % 2 == 0 { &POOL_A } else { &POOL_B };
            let len = r.random_range(3..=5);
            let words: Vec<&str> = pool.choose_multiple(&mut r, len).copied().collect();
            (
                i,
                Product {
                    product_id: i,
                    name: words.join(" "),
                    department: if i % 2 == 0 { "DAIRY".into() } else { "HARDWARE".into() },
                },
            )
        })
        .collect()
}

fn config() -> TrainConfig {
    TrainConfig {
        dim: 8,
        epochs: 30,
        n_negative: 3,
        min_count: 2,
        seed: 4,
        ..TrainConfig::default()
    }
}

#[test]
fn disjoint_pools_separate() {
    let catalog = two_pool_catalog(400, 61);
    let (tokens, report) = train_name_embeddings(&catalog, &config()).unwrap();
    assert_eq!(tokens.vocab.len(), 16);
    assert_eq!(report.epochs.len(), 30);
    let v = |w: &str| tokens.pair.rho_of(tokens.vocab.id(w).unwrap()).unwrap().to_vec();
    let (mut intra, mut inter, mut ni, mut nx) = (0.0, 0.0, 0, 0);
    for a in POOL_A.iter().chain(&POOL_B) {
        for b in POOL_A.iter().chain(&POOL_B) {
            if a < b {
                let same = POOL_A.contains(a) == POOL_A.contains(b);
                let c = cosine(&v(a), &v(b));
                if same {
                    intra += c;
                    ni += 1;
                } else {
                    inter += c;
                    nx += 1;
                }
            }
        }
    }
    let (intra, inter) = (intra / ni as f64, inter / nx as f64);
    assert!(intra > inter + 0.2, "intra {intra:.3} inter {inter:.3}");
}

#[test]
fn training_is_deterministic() {
    let catalog = two_pool_catalog(100, 62);
    let (a, _) = train_name_embeddings(&catalog, &config()).unwrap();
    let (b, _) = train_name_embeddings(&catalog, &config()).unwrap();
    assert_eq!(a.pair, b.pair);
    assert_eq!(a.vocab, b.vocab);
}

#[test]
fn sentence_vectors_are_token_means() {
    let catalog = two_pool_catalog(100, 63);
    let (tokens, _) = train_name_embeddings(&catalog, &config()).unwrap();
    let mut enc = SentenceEncoder::new(&tokens);
    let got = enc.encode("Milk, CREAM & milk");
    let m = tokens.pair.rho_of(tokens.vocab.id("milk").unwrap()).unwrap();
    let c = tokens.pair.rho_of(tokens.vocab.id("cream").unwrap()).unwrap();
    for d in 0..enc.dim() {
        assert!((got[d] - 0.5 * (m[d] + c[d])).abs() < 1e-12);
    }
    assert!(enc.encode("zzz qqq").iter().all(|&x| x == 0.0));
    assert_eq!(enc.oov_names(), 1);

    let (table, oov) = sentence_table(&catalog, &tokens).unwrap();
    assert_eq!(table.len(), catalog.len());
    assert_eq!(oov, 0);
}

#[test]
fn tokenizer_and_vocab_file() {
    assert_eq!(tokenize("Whole-Milk 2%, 1L"), vec!["whole", "milk", "2", "1l"]);
    let vocab = TokenVocab::build(&two_pool_catalog(50, 64), 1);
    assert!(vocab.tokens().windows(2).all(|w| w[0] < w[1]));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("tokens.txt");
    vocab.save(&path).unwrap();
    assert_eq!(TokenVocab::load(&path).unwrap(), vocab);
    std::fs::write(&path, "b\na\n").unwrap();
    assert!(TokenVocab::load(&path).is_err());
}

#[test]
fn too_few_tokens_is_an_error() {
    let catalog: Catalog = [(
        1,
        Product {
            product_id: 1,
            name: "solo".into(),
            department: "X".into(),
        },
    )]
    .into_iter()
    .collect();
    assert!(train_name_embeddings(&catalog, &config()).is_err());
}

#[test]
fn normalized_combined_cosine_is_mean_of_block_cosines() {
    let mut r = rng(65);
    let (n, dp, ds) = (30usize, 6usize, 4usize);
    let mut m = |d: usize| -> Vec<f64> { (0..n * d).map(|_| r.random_range(-1.0..1.0)).collect() };
    let pair = EmbeddingPair::new((0..n as u64).collect(), Matrix::from_vec(n, dp, m(dp)), Matrix::zeros(n, dp)).unwrap();
    let sentences = EmbeddingTable::new((0..n as u64).collect(), Matrix::from_vec(n, ds, m(ds))).unwrap();
    let (table, meta) = combine_all(&pair, &sentences, true).unwrap();
    assert_eq!((meta.product_dim, meta.sentence_dim, meta.normalized), (dp, ds, true));
    for a in 0..n as u64 {
        for b in (a + 1)..n as u64 {
            let whole = cosine(table.get(a).unwrap(), table.get(b).unwrap());
            let p = cosine(pair.rho_of(a).unwrap(), pair.rho_of(b).unwrap());
            let s = cosine(sentences.get(a).unwrap(), sentences.get(b).unwrap());
            assert!((whole - 0.5 * (p + s)).abs() < 1e-12);
        }
    }
    let one = combine(3, &pair, sentences.get(3).unwrap(), false).unwrap();
    assert_eq!(one.product_block(), pair.rho_of(3).unwrap());
    assert_eq!(one.sentence_block(), sentences.get(3).unwrap());
    assert!(combine(999, &pair, sentences.get(3).unwrap(), false).is_err());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.json");
    save_meta(&path, &meta).unwrap();
    assert_eq!(load_meta(&path).unwrap(), meta);
}
