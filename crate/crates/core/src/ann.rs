//! Random-projection forest for approximate cosine nearest neighbours.
//!
//! Each tree recursively splits its items by a hyperplane halfway between two
//! randomly sampled (unit-normalised) items until a node holds at most
//! `leaf_size` items. A query walks all trees at once through a shared
//! priority queue keyed by the smallest margin seen on the way down, stops
//! after `search_k` node expansions, and re-scores the union of the leaves it
//! reached with exact cosine distance.
//!
//! Index file layout (little-endian):
//!
//! ```text
//! "ANNF1\0"  V:u32  D:u32  n_trees:u32  leaf_size:u32  seed:u64
//! V x { id:u64  D x f32 }
//! n_trees x { root:u32  n_nodes:u32  nodes }
//! node = 0u8 len:u32 len x item:u32              (leaf)
//!      | 1u8 D x normal:f32 offset:f32 left:u32 right:u32   (split)
//!      | 2u8 left:u32 right:u32                  (balanced fallback)
//! ```

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;

use crate::linalg::{cosine_distance, dot, norm};
use crate::seed;
use crate::store::EmbeddingTable;
use crate::{Error, Result};

pub const ANNF_MAGIC: &[u8; 6] = b"ANNF1\0";
const SPLIT_ATTEMPTS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BuildParams {
    pub n_trees: usize,
    pub leaf_size: usize,
    pub seed: u64,
}

impl Default for BuildParams {
    fn default() -> Self {
        BuildParams {
            n_trees: 20,
            leaf_size: 16,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QueryParams {
    pub k: usize,
    /// Node expansion budget; `None` means `n_trees * k * 10`.
    pub search_k: Option<usize>,
}

impl QueryParams {
    pub fn new(k: usize) -> Self {
        QueryParams { k, search_k: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Leaf(Vec<u32>),
    Split {
        normal: Vec<f32>,
        offset: f32,
        left: u32,
        right: u32,
    },
    Balanced {
        left: u32,
        right: u32,
    },
}

#[derive(Debug, Clone, PartialEq)]
struct Tree {
    root: u32,
    nodes: Vec<Node>,
}

/// Immutable ANN index over id-keyed vectors, cosine metric.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnForest {
    dim: usize,
    ids: Vec<u64>,
    index: HashMap<u64, usize>,
    vectors: Vec<f32>,
    trees: Vec<Tree>,
    leaf_size: usize,
    seed: u64,
}

/// A neighbour and its cosine distance to the query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub id: u64,
    pub distance: f64,
}

fn by_distance_then_id(a: &Neighbor, b: &Neighbor) -> Ordering {
    a.distance
        .total_cmp(&b.distance)
        .then(a.id.cmp(&b.id))
}

fn check_query(q: &[f64], dim: usize, k: usize) -> Result<()> {
    if q.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: q.len(),
        });
    }
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if norm(q) == 0.0 || !q.iter().all(|x| x.is_finite()) {
        return Err(Error::InvalidArgument("query vector must be finite and nonzero".into()));
    }
    Ok(())
}

/// Exact top-`k` by cosine distance over a table; ties broken by ascending id.
pub fn exact_query(items: &EmbeddingTable, q: &[f64], k: usize) -> Result<Vec<Neighbor>> {
    check_query(q, items.dim(), k)?;
    let mut all: Vec<Neighbor> = items
        .iter()
        .map(|(id, v)| Neighbor {
            id,
            distance: cosine_distance(q, v),
        })
        .collect();
    all.sort_by(by_distance_then_id);
    all.truncate(k);
    Ok(all)
}

struct Builder<'a> {
    unit: &'a [f64],
    dim: usize,
    leaf_size: usize,
    nodes: Vec<Node>,
}

impl Builder<'_> {
    fn unit(&self, i: u32) -> &[f64] {
        let i = i as usize;
        &self.unit[i * self.dim..(i + 1) * self.dim]
    }

    fn try_split(&self, items: &[u32], rng: &mut seed::Rng) -> Option<(Vec<f32>, f32, Vec<u32>, Vec<u32>)> {
        for _ in 0..SPLIT_ATTEMPTS {
            let a = rng.random_range(0..items.len());
            let mut b = rng.random_range(0..items.len() - 1);
            if b >= a {
                b += 1;
            }
            let (p, q) = (self.unit(items[a]), self.unit(items[b]));
            let mut normal: Vec<f64> = p.iter().zip(q).map(|(x, y)| x - y).collect();
            let n = norm(&normal);
            if n < 1e-12 {
                continue;
            }
            normal.iter_mut().for_each(|x| *x /= n);
            let mid: Vec<f64> = p.iter().zip(q).map(|(x, y)| 0.5 * (x + y)).collect();
            let normal32: Vec<f32> = normal.iter().map(|&x| x as f32).collect();
            let offset32 = dot(&normal, &mid) as f32;
            let (mut left, mut right) = (Vec::new(), Vec::new());
            for &i in items {
                if margin(&normal32, offset32, self.unit(i)) > 0.0 {
                    right.push(i);
                } else {
                    left.push(i);
                }
            }
            if !left.is_empty() && !right.is_empty() {
                return Some((normal32, offset32, left, right));
            }
        }
        None
    }

    fn build(&mut self, mut items: Vec<u32>, rng: &mut seed::Rng) -> u32 {
        let at = self.nodes.len() as u32;
        if items.len() <= self.leaf_size {
            self.nodes.push(Node::Leaf(items));
            return at;
        }
        self.nodes.push(Node::Leaf(Vec::new()));
        let node = match self.try_split(&items, rng) {
            Some((normal, offset, l, r)) => {
                let left = self.build(l, rng);
                let right = self.build(r, rng);
                Node::Split {
                    normal,
                    offset,
                    left,
                    right,
                }
            }
            None => {
                items.shuffle(rng);
                let r = items.split_off(items.len() / 2);
                let left = self.build(items, rng);
                let right = self.build(r, rng);
                Node::Balanced { left, right }
            }
        };
        self.nodes[at as usize] = node;
        at
    }
}

fn index_of(ids: &[u64]) -> HashMap<u64, usize> {
    ids.iter().enumerate().map(|(i, &id)| (id, i)).collect()
}

#[inline]
fn margin(normal: &[f32], offset: f32, x: &[f64]) -> f64 {
    normal.iter().zip(x).map(|(&n, &v)| n as f64 * v).sum::<f64>() - offset as f64
}

#[derive(Debug, PartialEq)]
struct Pending {
    priority: f64,
    tree: u32,
    node: u32,
}

impl Eq for Pending {}

impl Ord for Pending {
    fn cmp(&self, other: &Self) -> Ordering {
        self.priority
            .total_cmp(&other.priority)
            .then_with(|| other.tree.cmp(&self.tree))
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl AnnForest {
    pub fn build(items: &EmbeddingTable, params: BuildParams) -> Result<Self> {
        if params.n_trees == 0 {
            return Err(Error::config("n_trees", "forest needs at least one tree"));
        }
        if params.leaf_size == 0 {
            return Err(Error::config("leaf_size", "must be positive"));
        }
        if items.is_empty() {
            return Err(Error::Empty("cannot index an empty table".into()));
        }
        let dim = items.dim();
        let vectors: Vec<f32> = items.matrix().as_slice().iter().map(|&x| x as f32).collect();
        let mut unit: Vec<f64> = vectors.iter().map(|&x| x as f64).collect();
        for row in unit.chunks_exact_mut(dim.max(1)) {
            crate::linalg::normalize(row);
        }
        let n = items.len() as u32;
        let trees: Vec<Tree> = (0..params.n_trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = seed::rng(seed::stream_seed(params.seed, t as u64));
                let mut b = Builder {
                    unit: &unit,
                    dim,
                    leaf_size: params.leaf_size,
                    nodes: Vec::new(),
                };
                let root = b.build((0..n).collect(), &mut rng);
                Tree {
                    root,
                    nodes: b.nodes,
                }
            })
            .collect();
        let ids = items.ids().to_vec();
        Ok(AnnForest {
            dim,
            index: index_of(&ids),
            ids,
            vectors,
            trees,
            leaf_size: params.leaf_size,
            seed: params.seed,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn leaf_size(&self) -> usize {
        self.leaf_size
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    /// Stored vector of `id` (as indexed, i.e. rounded to `f32`).
    pub fn vector(&self, id: u64) -> Option<Vec<f64>> {
        let i = *self.index.get(&id)?;
        Some(self.row(i).iter().map(|&x| x as f64).collect())
    }

    fn row(&self, i: usize) -> &[f32] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    /// Indexed vectors as a table.
    pub fn table(&self) -> EmbeddingTable {
        EmbeddingTable::from_rows(
            (0..self.len()).map(|i| (self.ids[i], self.row(i).iter().map(|&x| x as f64).collect())),
        )
        .expect("ids unique by construction")
    }

    fn distance_to(&self, q: &[f64], i: usize) -> f64 {
        let v: Vec<f64> = self.row(i).iter().map(|&x| x as f64).collect();
        cosine_distance(q, &v)
    }

    /// Approximate top-`k` neighbours, ascending distance, ties by id.
    pub fn query(&self, q: &[f64], params: QueryParams) -> Result<Vec<Neighbor>> {
        check_query(q, self.dim, params.k)?;
        let search_k = params
            .search_k
            .unwrap_or(self.trees.len() * params.k * 10);
        if search_k < params.k {
            return Err(Error::InvalidArgument("search_k must be at least k".into()));
        }
        if params.k >= self.len() {
            return self.exact_query(q, params.k);
        }
        let mut qu = q.to_vec();
        crate::linalg::normalize(&mut qu);

        let mut heap = BinaryHeap::new();
        for (t, tree) in self.trees.iter().enumerate() {
            heap.push(Pending {
                priority: f64::INFINITY,
                tree: t as u32,
                node: tree.root,
            });
        }
        let mut candidates: Vec<u32> = Vec::new();
        let mut expanded = 0usize;
        while expanded < search_k {
            let Some(top) = heap.pop() else { break };
            expanded += 1;
            let tree = &self.trees[top.tree as usize];
            match &tree.nodes[top.node as usize] {
                Node::Leaf(items) => candidates.extend_from_slice(items),
                Node::Split {
                    normal,
                    offset,
                    left,
                    right,
                } => {
                    let m = margin(normal, *offset, &qu);
                    heap.push(Pending {
                        priority: top.priority.min(m),
                        tree: top.tree,
                        node: *right,
                    });
                    heap.push(Pending {
                        priority: top.priority.min(-m),
                        tree: top.tree,
                        node: *left,
                    });
                }
                Node::Balanced { left, right } => {
                    for &child in [left, right] {
                        heap.push(Pending {
                            priority: top.priority,
                            tree: top.tree,
                            node: child,
                        });
                    }
                }
            }
        }
        candidates.sort_unstable();
        candidates.dedup();
        let mut out: Vec<Neighbor> = candidates
            .into_iter()
            .map(|i| Neighbor {
                id: self.ids[i as usize],
                distance: self.distance_to(q, i as usize),
            })
            .collect();
        out.sort_by(by_distance_then_id);
        out.truncate(params.k);
        Ok(out)
    }

    /// Full scan over the indexed vectors.
    pub fn exact_query(&self, q: &[f64], k: usize) -> Result<Vec<Neighbor>> {
        check_query(q, self.dim, k)?;
        let mut all: Vec<Neighbor> = (0..self.len())
            .map(|i| Neighbor {
                id: self.ids[i],
                distance: self.distance_to(q, i),
            })
            .collect();
        all.sort_by(by_distance_then_id);
        all.truncate(k);
        Ok(all)
    }

    /// Ids in each leaf of tree `t`.
    pub fn leaves(&self, t: usize) -> Vec<Vec<u64>> {
        self.trees[t]
            .nodes
            .iter()
            .filter_map(|n| match n {
                Node::Leaf(items) => Some(items.iter().map(|&i| self.ids[i as usize]).collect()),
                _ => None,
            })
            .collect()
    }

    /// All split-plane normals of the forest.
    pub fn split_normals(&self) -> impl Iterator<Item = &[f32]> {
        self.trees.iter().flat_map(|t| {
            t.nodes.iter().filter_map(|n| match n {
                Node::Split { normal, .. } => Some(normal.as_slice()),
                _ => None,
            })
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(&mut BufWriter::new(file))
            .map_err(|e| Error::io(path, e))
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        let u32le = |x: usize| (x as u32).to_le_bytes();
        w.write_all(ANNF_MAGIC)?;
        w.write_all(&u32le(self.len()))?;
        w.write_all(&u32le(self.dim))?;
        w.write_all(&u32le(self.trees.len()))?;
        w.write_all(&u32le(self.leaf_size))?;
        w.write_all(&self.seed.to_le_bytes())?;
        for i in 0..self.len() {
            w.write_all(&self.ids[i].to_le_bytes())?;
            for x in self.row(i) {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        for tree in &self.trees {
            w.write_all(&tree.root.to_le_bytes())?;
            w.write_all(&u32le(tree.nodes.len()))?;
            for node in &tree.nodes {
                match node {
                    Node::Leaf(items) => {
                        w.write_all(&[0])?;
                        w.write_all(&u32le(items.len()))?;
                        for i in items {
                            w.write_all(&i.to_le_bytes())?;
                        }
                    }
                    Node::Split {
                        normal,
                        offset,
                        left,
                        right,
                    } => {
                        w.write_all(&[1])?;
                        for x in normal {
                            w.write_all(&x.to_le_bytes())?;
                        }
                        w.write_all(&offset.to_le_bytes())?;
                        w.write_all(&left.to_le_bytes())?;
                        w.write_all(&right.to_le_bytes())?;
                    }
                    Node::Balanced { left, right } => {
                        w.write_all(&[2])?;
                        w.write_all(&left.to_le_bytes())?;
                        w.write_all(&right.to_le_bytes())?;
                    }
                }
            }
        }
        w.flush()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(&mut BufReader::new(file), path)
    }

    pub fn read_from(r: &mut impl Read, origin: &Path) -> Result<Self> {
        let bad = |m: String| Error::Format {
            path: origin.to_path_buf(),
            message: m,
        };
        let mut rd = Reader { r, origin };
        let mut magic = [0u8; 6];
        rd.exact(&mut magic)?;
        if &magic != ANNF_MAGIC {
            return Err(bad("missing ANNF1 magic".into()));
        }
        let n = rd.u32()? as usize;
        let dim = rd.u32()? as usize;
        let n_trees = rd.u32()? as usize;
        let leaf_size = rd.u32()? as usize;
        let seed = rd.u64()?;
        let mut ids: Vec<u64> = Vec::with_capacity(n);
        let mut vectors = Vec::with_capacity(n * dim);
        for _ in 0..n {
            ids.push(rd.u64()?);
            for _ in 0..dim {
                vectors.push(rd.f32()?);
            }
        }
        let mut trees = Vec::with_capacity(n_trees);
        for _ in 0..n_trees {
            let root = rd.u32()?;
            let n_nodes = rd.u32()? as usize;
            let mut nodes = Vec::with_capacity(n_nodes);
            for _ in 0..n_nodes {
                let mut tag = [0u8; 1];
                rd.exact(&mut tag)?;
                let node = match tag[0] {
                    0 => {
                        let len = rd.u32()? as usize;
                        let mut items = Vec::with_capacity(len);
                        for _ in 0..len {
                            let i = rd.u32()?;
                            if i as usize >= n {
                                return Err(bad(format!("leaf item {i} out of range")));
                            }
                            items.push(i);
                        }
                        Node::Leaf(items)
                    }
                    1 => {
                        let mut normal = Vec::with_capacity(dim);
                        for _ in 0..dim {
                            normal.push(rd.f32()?);
                        }
                        Node::Split {
                            normal,
                            offset: rd.f32()?,
                            left: rd.u32()?,
                            right: rd.u32()?,
                        }
                    }
                    2 => Node::Balanced {
                        left: rd.u32()?,
                        right: rd.u32()?,
                    },
                    t => return Err(bad(format!("unknown node tag {t}"))),
                };
                nodes.push(node);
            }
            let in_range = |c: u32| (c as usize) < n_nodes;
            let links_ok = (root as usize) < n_nodes
                && nodes.iter().all(|nd| match nd {
                    Node::Leaf(_) => true,
                    Node::Split { left, right, .. } | Node::Balanced { left, right } => {
                        in_range(*left) && in_range(*right)
                    }
                });
            if !links_ok {
                return Err(bad("node link out of range".into()));
            }
            trees.push(Tree { root, nodes });
        }
        Ok(AnnForest {
            dim,
            index: index_of(&ids),
            ids,
            vectors,
            trees,
            leaf_size,
            seed,
        })
    }
}

struct Reader<'a, R> {
    r: &'a mut R,
    origin: &'a Path,
}

impl<R: Read> Reader<'_, R> {
    fn exact(&mut self, buf: &mut [u8]) -> Result<()> {
        self.r.read_exact(buf).map_err(|e| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                Error::Format {
                    path: self.origin.to_path_buf(),
                    message: "truncated index".into(),
                }
            } else {
                Error::io(self.origin, e)
            }
        })
    }

    fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.exact(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    fn u64(&mut self) -> Result<u64> {
        let mut b = [0u8; 8];
        self.exact(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }

    fn f32(&mut self) -> Result<f32> {
        let mut b = [0u8; 4];
        self.exact(&mut b)?;
        Ok(f32::from_le_bytes(b))
    }
}

/// Mean fraction of exact top-`k` ids recovered by the forest.
pub fn recall_at_k(forest: &AnnForest, queries: &[Vec<f64>], k: usize, search_k: Option<usize>) -> Result<f64> {
    let mut total = 0.0;
    for q in queries {
        let exact = forest.exact_query(q, k)?;
        let approx = forest.query(q, QueryParams { k, search_k })?;
        let hits = approx
            .iter()
            .filter(|a| exact.iter().any(|e| e.id == a.id))
            .count();
        total += hits as f64 / exact.len() as f64;
    }
    Ok(total / queries.len() as f64)
}
