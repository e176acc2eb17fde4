//! Transaction data: product catalog, trips, filtering and a synthetic
//! generator with planted co-purchase structure.
//!
//! File formats:
//!
//! * `catalog.csv`: header `product_id,name,department`, one product per row.
//! * `trips.csv`: header `trip_id,customer_id,items`, items `;`-separated.
//! * `ground_truth.csv`: header `product_id,category` (synthetic data only).

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use rand::Rng as _;
use serde::Serialize;

use crate::seed;
use crate::{Error, Result};

pub const UNKNOWN_DEPARTMENT: &str = "UNKNOWN";
pub const DEFAULT_MIN_BASKET: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Product {
    pub product_id: u64,
    pub name: String,
    pub department: String,
}

/// One transaction. `items` is sorted and free of duplicates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trip {
    pub trip_id: u64,
    pub customer_id: u64,
    pub items: Vec<u64>,
}

impl Trip {
    /// Builds a trip, collapsing repeated items into a set.
    pub fn new(trip_id: u64, customer_id: u64, items: impl IntoIterator<Item = u64>) -> Self {
        let mut items: Vec<u64> = items.into_iter().collect();
        items.sort_unstable();
        items.dedup();
        Trip {
            trip_id,
            customer_id,
            items,
        }
    }
}

pub type Catalog = BTreeMap<u64, Product>;

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub catalog: Catalog,
    pub trips: Vec<Trip>,
    pub min_basket: usize,
}

/// Trips kept and dropped by the basket-size filter.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct LoadStats {
    pub kept: usize,
    pub dropped: usize,
}

impl Corpus {
    /// Product ids that appear in at least one retained trip.
    pub fn vocabulary(&self) -> BTreeSet<u64> {
        self.trips.iter().flat_map(|t| t.items.iter().copied()).collect()
    }

    pub fn department_of(&self, product_id: u64) -> &str {
        self.catalog
            .get(&product_id)
            .map(|p| p.department.as_str())
            .unwrap_or(UNKNOWN_DEPARTMENT)
    }

    /// Trips grouped by customer, customers in ascending id order.
    pub fn trips_by_customer(&self) -> BTreeMap<u64, Vec<&Trip>> {
        let mut out: BTreeMap<u64, Vec<&Trip>> = BTreeMap::new();
        for t in &self.trips {
            out.entry(t.customer_id).or_default().push(t);
        }
        out
    }

    /// Re-applies the basket filter with a (possibly larger) threshold.
    pub fn filtered(&self, min_basket: usize) -> Result<(Corpus, LoadStats)> {
        check_min_basket(min_basket)?;
        let mut stats = LoadStats::default();
        let trips = self
            .trips
            .iter()
            .filter(|t| {
                let keep = t.items.len() >= min_basket;
                if keep {
                    stats.kept += 1;
                } else {
                    stats.dropped += 1;
                }
                keep
            })
            .cloned()
            .collect();
        Ok((
            Corpus {
                catalog: self.catalog.clone(),
                trips,
                min_basket,
            },
            stats,
        ))
    }
}

fn check_min_basket(min_basket: usize) -> Result<()> {
    if min_basket < 2 {
        return Err(Error::config(
            "min_basket",
            format!("must be at least 2 so every item has a context, got {min_basket}"),
        ));
    }
    Ok(())
}

fn read_to_string(path: &Path) -> Result<String> {
    let mut s = String::new();
    File::open(path)
        .and_then(|mut f| f.read_to_string(&mut s))
        .map_err(|e| Error::io(path, e))?;
    Ok(s)
}

fn parse_err(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn csv_line(rec: &csv::StringRecord) -> u64 {
    rec.position().map(|p| p.line()).unwrap_or(0)
}

pub fn load_catalog(path: &Path) -> Result<Catalog> {
    parse_catalog(&read_to_string(path)?, path)
}

/// Parses catalog CSV text. `origin` is only used in error messages.
pub fn parse_catalog(text: &str, origin: &Path) -> Result<Catalog> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut records = rdr.records();
    match records.next() {
        None => return Err(parse_err(origin, 1, "missing header row")),
        Some(Err(e)) => return Err(parse_err(origin, 1, e.to_string())),
        Some(Ok(h)) => {
            let fields: Vec<&str> = h.iter().map(str::trim).collect();
            if fields != ["product_id", "name", "department"] {
                return Err(parse_err(
                    origin,
                    1,
                    "expected header `product_id,name,department`",
                ));
            }
        }
    }
    let mut catalog = Catalog::new();
    for rec in records {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            parse_err(origin, line, e.to_string())
        })?;
        let line = csv_line(&rec);
        if rec.len() != 3 {
            return Err(parse_err(
                origin,
                line,
                format!("expected 3 columns, found {}", rec.len()),
            ));
        }
        let product_id: u64 = rec[0]
            .trim()
            .parse()
            .map_err(|_| parse_err(origin, line, format!("bad product_id {:?}", &rec[0])))?;
        let name = rec[1].trim();
        if name.is_empty() {
            return Err(parse_err(origin, line, "empty product name"));
        }
        let department = match rec[2].trim() {
            "" => UNKNOWN_DEPARTMENT,
            d => d,
        };
        let product = Product {
            product_id,
            name: name.to_string(),
            department: department.to_string(),
        };
        if catalog.insert(product_id, product).is_some() {
            return Err(Error::DuplicateProduct(product_id));
        }
    }
    Ok(catalog)
}

pub fn load_trips(path: &Path, catalog: &Catalog, min_basket: usize) -> Result<(Corpus, LoadStats)> {
    parse_trips(&read_to_string(path)?, path, catalog, min_basket)
}

/// Parses trip CSV text. The `trip_id,customer_id,items` header is optional.
pub fn parse_trips(
    text: &str,
    origin: &Path,
    catalog: &Catalog,
    min_basket: usize,
) -> Result<(Corpus, LoadStats)> {
    check_min_basket(min_basket)?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut stats = LoadStats::default();
    let mut trips = Vec::new();
    let mut seen = HashSet::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            parse_err(origin, line, e.to_string())
        })?;
        let line = csv_line(&rec);
        if i == 0 && rec.get(0).map(str::trim) == Some("trip_id") {
            continue;
        }
        if rec.len() != 3 {
            return Err(parse_err(
                origin,
                line,
                format!("expected 3 columns, found {}", rec.len()),
            ));
        }
        let trip_id: u64 = rec[0]
            .trim()
            .parse()
            .map_err(|_| parse_err(origin, line, format!("bad trip_id {:?}", &rec[0])))?;
        let customer_id: u64 = rec[1]
            .trim()
            .parse()
            .map_err(|_| parse_err(origin, line, format!("bad customer_id {:?}", &rec[1])))?;
        let mut items = Vec::new();
        for tok in rec[2].split(';').map(str::trim).filter(|s| !s.is_empty()) {
            let id: u64 = tok
                .parse()
                .map_err(|_| parse_err(origin, line, format!("bad item id {tok:?}")))?;
            if !catalog.contains_key(&id) {
                return Err(Error::UnknownItem {
                    trip_id,
                    product_id: id,
                });
            }
            items.push(id);
        }
        if !seen.insert(trip_id) {
            return Err(Error::DuplicateTrip(trip_id));
        }
        let trip = Trip::new(trip_id, customer_id, items);
        if trip.items.len() >= min_basket {
            stats.kept += 1;
            trips.push(trip);
        } else {
            stats.dropped += 1;
        }
    }
    Ok((
        Corpus {
            catalog: catalog.clone(),
            trips,
            min_basket,
        },
        stats,
    ))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

pub fn write_catalog(path: &Path, catalog: &Catalog) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let io = |e: csv::Error| Error::io(path, e.into());
    w.write_record(["product_id", "name", "department"]).map_err(io)?;
    for p in catalog.values() {
        w.write_record([p.product_id.to_string().as_str(), &p.name, &p.department])
            .map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_trips(path: &Path, trips: &[Trip]) -> Result<()> {
    let mut w = create(path)?;
    let mut body = || -> std::io::Result<()> {
        writeln!(w, "trip_id,customer_id,items")?;
        for t in trips {
            write!(w, "{},{},", t.trip_id, t.customer_id)?;
            for (i, item) in t.items.iter().enumerate() {
                if i > 0 {
                    w.write_all(b";")?;
                }
                write!(w, "{item}")?;
            }
            w.write_all(b"\n")?;
        }
        w.flush()
    };
    body().map_err(|e| Error::io(path, e))
}

/// Optional two-factor layout of the synthetic categories.
///
/// Categories form a `groups x kinds` grid (category `g * kinds + k`). A
/// structured draw for a trip at `(g, k)` picks, with equal odds, a uniform
/// category from row `g` or from column `k`. Product embeddings then become
/// roughly additive in the two factors, which is what analogy queries need.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridSpec {
    pub groups: usize,
    pub kinds: usize,
}

/// Parameters of the synthetic transaction generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub n_categories: usize,
    pub products_per_category: usize,
    pub n_trips: usize,
    pub basket_size_min: usize,
    pub basket_size_max: usize,
    /// Probability an item comes from the trip's home category; otherwise it
    /// is uniform over all products.
    pub in_category_prob: f64,
    pub n_customers: usize,
    /// Probability a trip uses its customer's home category.
    pub customer_affinity: f64,
    pub min_basket: usize,
    pub grid: Option<GridSpec>,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_categories: 10,
            products_per_category: 50,
            n_trips: 50_000,
            basket_size_min: 5,
            basket_size_max: 12,
            in_category_prob: 0.9,
            n_customers: 1000,
            customer_affinity: 0.8,
            min_basket: DEFAULT_MIN_BASKET,
            grid: None,
            seed: 1,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_categories", self.n_categories),
            ("products_per_category", self.products_per_category),
            ("n_trips", self.n_trips),
            ("n_customers", self.n_customers),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(Error::config(field, "must be positive"));
            }
        }
        if !(self.in_category_prob > 0.0 && self.in_category_prob <= 1.0) {
            return Err(Error::config(
                "in_category_prob",
                format!("must be in (0, 1], got {}", self.in_category_prob),
            ));
        }
        if !(0.0..=1.0).contains(&self.customer_affinity) {
            return Err(Error::config(
                "customer_affinity",
                format!("must be in [0, 1], got {}", self.customer_affinity),
            ));
        }
        check_min_basket(self.min_basket)?;
        if self.basket_size_min < self.min_basket {
            return Err(Error::config(
                "basket_size_min",
                format!(
                    "must be at least min_basket ({}), got {}",
                    self.min_basket, self.basket_size_min
                ),
            ));
        }
        if self.basket_size_max < self.basket_size_min {
            return Err(Error::config(
                "basket_size_max",
                "must not be smaller than basket_size_min",
            ));
        }
        if self.basket_size_max > self.n_categories * self.products_per_category {
            return Err(Error::config(
                "basket_size_max",
                "exceeds the total number of products",
            ));
        }
        if let Some(g) = self.grid {
            if g.groups == 0 || g.kinds == 0 || g.groups * g.kinds != self.n_categories {
                return Err(Error::config(
                    "grid",
                    format!(
                        "groups x kinds must equal n_categories ({})",
                        self.n_categories
                    ),
                ));
            }
        }
        Ok(())
    }

    pub fn n_products(&self) -> usize {
        self.n_categories * self.products_per_category
    }

    pub fn category_of(&self, product_id: u64) -> usize {
        product_id as usize / self.products_per_category
    }
}

/// Generated corpus plus the planted ground truth.
#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub corpus: Corpus,
    /// product_id -> planted category.
    pub categories: BTreeMap<u64, usize>,
    /// customer_id -> home category.
    pub customer_home: BTreeMap<u64, usize>,
    /// Home category of each trip, parallel to `corpus.trips`.
    pub trip_home: Vec<usize>,
}

pub fn synthetic_name(category: usize, index: usize) -> String {
    format!("cat{category}_prod{index}")
}

pub fn synthetic_department(category: usize) -> String {
    format!("DEPT_{category}")
}

/// Generates a corpus from `spec`. Product ids are `category * products_per_category + index`.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let mut rng = seed::rng(spec.seed);
    let ppc = spec.products_per_category;
    let n_products = spec.n_products();

    let mut catalog = Catalog::new();
    let mut categories = BTreeMap::new();
    for c in 0..spec.n_categories {
        for i in 0..ppc {
            let id = (c * ppc + i) as u64;
            catalog.insert(
                id,
                Product {
                    product_id: id,
                    name: synthetic_name(c, i),
                    department: synthetic_department(c),
                },
            );
            categories.insert(id, c);
        }
    }

    let customer_home: BTreeMap<u64, usize> = (0..spec.n_customers as u64)
        .map(|c| (c, rng.random_range(0..spec.n_categories)))
        .collect();

    let mut trips = Vec::with_capacity(spec.n_trips);
    let mut trip_home = Vec::with_capacity(spec.n_trips);
    let mut taken = vec![false; n_products];
    let mut items: Vec<u64> = Vec::with_capacity(spec.basket_size_max);
    for trip_id in 0..spec.n_trips as u64 {
        let customer = rng.random_range(0..spec.n_customers as u64);
        let home = if rng.random_bool(spec.customer_affinity) {
            customer_home[&customer]
        } else {
            rng.random_range(0..spec.n_categories)
        };
        let size = rng.random_range(spec.basket_size_min..=spec.basket_size_max);
        items.clear();
        while items.len() < size {
            let structured = rng.random_bool(spec.in_category_prob);
            let cat = if structured {
                Some(match spec.grid {
                    None => home,
                    Some(g) => {
                        let (hg, hk) = (home / g.kinds, home % g.kinds);
                        if rng.random_bool(0.5) {
                            hg * g.kinds + rng.random_range(0..g.kinds)
                        } else {
                            rng.random_range(0..g.groups) * g.kinds + hk
                        }
                    }
                })
            } else {
                None
            };
            let pid = match cat {
                Some(c) if (c * ppc..(c + 1) * ppc).any(|p| !taken[p]) => loop {
                    let p = c * ppc + rng.random_range(0..ppc);
                    if !taken[p] {
                        break p;
                    }
                },
                _ => loop {
                    let p = rng.random_range(0..n_products);
                    if !taken[p] {
                        break p;
                    }
                },
            };
            taken[pid] = true;
            items.push(pid as u64);
        }
        for &p in &items {
            taken[p as usize] = false;
        }
        trips.push(Trip::new(trip_id, customer, items.iter().copied()));
        trip_home.push(home);
    }

    Ok(SyntheticCorpus {
        corpus: Corpus {
            catalog,
            trips,
            min_basket: spec.min_basket,
        },
        categories,
        customer_home,
        trip_home,
    })
}

impl SyntheticCorpus {
    /// Writes `catalog.csv`, `trips.csv`, `ground_truth.csv` (product
    /// categories) and `customer_home.csv` into `dir`.
    pub fn write_to_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_catalog(&dir.join("catalog.csv"), &self.corpus.catalog)?;
        write_trips(&dir.join("trips.csv"), &self.corpus.trips)?;
        write_id_map(&dir.join("ground_truth.csv"), "product_id,category", &self.categories)?;
        write_id_map(&dir.join("customer_home.csv"), "customer_id,home_category", &self.customer_home)
    }
}

fn write_id_map(path: &Path, header: &str, map: &BTreeMap<u64, usize>) -> Result<()> {
    let mut w = create(path)?;
    let mut body = || -> std::io::Result<()> {
        writeln!(w, "{header}")?;
        for (id, c) in map {
            writeln!(w, "{id},{c}")?;
        }
        w.flush()
    };
    body().map_err(|e| Error::io(path, e))
}

/// Reads a two-column `id,value` CSV with a header row (e.g. `ground_truth.csv`).
pub fn load_id_labels(path: &Path) -> Result<BTreeMap<u64, String>> {
    let text = read_to_string(path)?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let mut out = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| parse_err(path, 0, e.to_string()))?;
        let line = csv_line(&rec);
        if rec.len() < 2 {
            return Err(parse_err(path, line, "expected `id,label`"));
        }
        let id: u64 = rec[0]
            .trim()
            .parse()
            .map_err(|_| parse_err(path, line, format!("bad id {:?}", &rec[0])))?;
        out.insert(id, rec[1].trim().to_string());
    }
    Ok(out)
}
