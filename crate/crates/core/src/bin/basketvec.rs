use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::parser::ValueSource;
use clap::{ArgAction, ArgMatches, Args, CommandFactory, Parser, Subcommand, ValueEnum};
use rand::seq::index;

use basketvec::aggregate::{self, PoolKind, Sample};
use basketvec::ann::{AnnForest, BuildParams};
use basketvec::cluster::{self, AnalysisParams, KMeansParams};
use basketvec::corpus::{self, Corpus, GridSpec, SynthSpec};
use basketvec::efemb::{self, EmbeddingPair, Pooling, TrainConfig};
use basketvec::recommend::{CooccurMetric, ProductRef, Recommender};
use basketvec::store::EmbeddingTable;
use basketvec::textembed;
use basketvec::tsne::{self, TsneConfig};
use basketvec::{seed, Error, Result};

#[derive(Parser, Debug)]
#[command(name = "basketvec", version, about = "Shopping-basket embeddings, recommendations and segment profiling")]
struct Cli {
    /// Global seed. Every stage derives its own seed from this and the stage name.
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,

    /// Worker threads. 1 gives fully reproducible output; more threads make
    /// training lock-free and run-to-run nondeterministic.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    /// TOML settings: global keys at top level, per-command `[train]`-style
    /// tables. Flags given on the command line win.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Log more (-v info, -vv debug). RUST_LOG overrides.
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic catalog and trip log with planted categories.
    Synth(SynthArgs),
    /// Train product embeddings (rho.bin, alpha.bin, report.json).
    Train(TrainArgs),
    /// Mean-pool product embeddings into one vector per trip.
    PoolTrips(PoolArgs),
    /// Mean-pool product embeddings over each customer's purchases.
    PoolCustomers(PoolArgs),
    /// Train token embeddings on product names and write per-product sentence vectors.
    TextEmbed(TextEmbedArgs),
    /// Concatenate product and sentence embeddings.
    Combine(CombineArgs),
    /// Build a nearest-neighbour index over an embedding file.
    Index(IndexArgs),
    /// Similar, co-purchased or analogy recommendations for a product.
    Recommend(RecommendArgs),
    /// K-means segments of pooled embeddings with pair scores and department profiles.
    Cluster(ClusterArgs),
    /// Project embeddings to 2-D and write `id,x,y,label` CSV.
    Tsne(TsneArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Directory for catalog.csv, trips.csv, ground_truth.csv, customer_home.csv.
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = SynthSpec::default().n_categories)]
    n_categories: usize,
    #[arg(long, default_value_t = SynthSpec::default().products_per_category)]
    products_per_category: usize,
    #[arg(long, default_value_t = SynthSpec::default().n_trips)]
    n_trips: usize,
    #[arg(long, default_value_t = SynthSpec::default().basket_size_min)]
    basket_size_min: usize,
    #[arg(long, default_value_t = SynthSpec::default().basket_size_max)]
    basket_size_max: usize,
    /// Probability each item comes from the trip's home category.
    #[arg(long, default_value_t = SynthSpec::default().in_category_prob)]
    in_category_prob: f64,
    #[arg(long, default_value_t = SynthSpec::default().n_customers)]
    n_customers: usize,
    /// Probability a trip's home category is its customer's home category.
    #[arg(long, default_value_t = SynthSpec::default().customer_affinity)]
    customer_affinity: f64,
    #[arg(long, default_value_t = SynthSpec::default().min_basket)]
    min_basket: usize,
    /// Lay categories out as a groups x kinds grid (needs --grid-kinds).
    #[arg(long, requires = "grid_kinds")]
    grid_groups: Option<usize>,
    #[arg(long, requires = "grid_groups")]
    grid_kinds: Option<usize>,
}

#[derive(Args, Debug)]
struct CorpusArgs {
    /// Catalog CSV: product_id,name,department.
    #[arg(long)]
    catalog: PathBuf,
    /// Trip CSV: trip_id,customer_id,items with items separated by `;`.
    #[arg(long)]
    trips: PathBuf,
    /// Trips with fewer distinct items are dropped.
    #[arg(long, default_value_t = corpus::DEFAULT_MIN_BASKET)]
    min_basket: usize,
}

#[derive(Args, Debug)]
struct TrainOpts {
    #[arg(long, default_value_t = TrainConfig::default().dim)]
    dim: usize,
    #[arg(long, default_value_t = TrainConfig::default().epochs)]
    epochs: usize,
    /// Negative samples per positive item.
    #[arg(long, default_value_t = TrainConfig::default().n_negative)]
    n_negative: usize,
    /// Adagrad base step size.
    #[arg(long, default_value_t = TrainConfig::default().learning_rate)]
    learning_rate: f64,
    /// L2 penalty on rho rows.
    #[arg(long, default_value_t = TrainConfig::default().l2_lambda)]
    l2_lambda: f64,
    /// Half-width of uniform initialisation [default: 0.1/sqrt(dim)].
    #[arg(long)]
    init_scale: Option<f64>,
    /// Context pooling: mean or sum.
    #[arg(long, default_value = "mean")]
    pooling: Pooling,
    /// Items seen fewer times are dropped from the vocabulary.
    #[arg(long, default_value_t = TrainConfig::default().min_count)]
    min_count: usize,
}

impl TrainOpts {
    fn config(&self, seed: u64, threads: usize) -> TrainConfig {
        TrainConfig {
            dim: self.dim,
            epochs: self.epochs,
            n_negative: self.n_negative,
            learning_rate: self.learning_rate,
            l2_lambda: self.l2_lambda,
            init_scale: self.init_scale,
            seed,
            pooling: self.pooling,
            min_count: self.min_count,
            threads,
        }
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[command(flatten)]
    opts: TrainOpts,
    #[arg(long)]
    out_dir: PathBuf,
    /// Also write rho.tsv and alpha.tsv.
    #[arg(long)]
    tsv: bool,
}

#[derive(Args, Debug)]
struct PoolArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Product embeddings (rho.bin).
    #[arg(long)]
    rho: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Keep a uniform random subsample of this many vectors.
    #[arg(long)]
    sample: Option<usize>,
    /// Also write the vectors as TSV next to --out.
    #[arg(long)]
    tsv: bool,
}

#[derive(Args, Debug)]
struct TextEmbedArgs {
    #[arg(long)]
    catalog: PathBuf,
    #[command(flatten)]
    opts: TrainOpts,
    /// Directory for tokens.txt, token_rho.bin, token_alpha.bin, sentences.bin, text_report.json.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
struct CombineArgs {
    #[arg(long)]
    rho: PathBuf,
    /// Sentence vectors from text-embed.
    #[arg(long)]
    sentences: PathBuf,
    /// Scale each block to unit length before concatenating.
    #[arg(long)]
    normalize: bool,
    /// Output embedding file; block sizes go to the same path with a .json extension.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct IndexArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = BuildParams::default().n_trees)]
    n_trees: usize,
    #[arg(long, default_value_t = BuildParams::default().leaf_size)]
    leaf_size: usize,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Kind {
    Similar,
    Cooccur,
    Analogy,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Json,
    Table,
}

#[derive(Args, Debug)]
struct RecommendArgs {
    #[arg(long)]
    catalog: PathBuf,
    /// Index built over rho.bin.
    #[arg(long)]
    index: PathBuf,
    /// Index built over alpha.bin; required for --kind cooccur.
    #[arg(long)]
    alpha_index: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "similar")]
    kind: Kind,
    #[arg(long, default_value_t = 10)]
    k: usize,
    /// Query product id.
    #[arg(long, conflicts_with = "name")]
    id: Option<u64>,
    /// Query product name (case-insensitive).
    #[arg(long)]
    name: Option<String>,
    /// Analogy terms: results are near rho_b - rho_a + rho_c. Ids or names.
    #[arg(long)]
    a: Option<String>,
    #[arg(long)]
    b: Option<String>,
    #[arg(long)]
    c: Option<String>,
    /// Co-occurrence score: dot or cosine.
    #[arg(long, default_value = "dot")]
    cooccur_metric: CooccurMetric,
    /// Candidates pulled from the alpha index before exact scoring.
    #[arg(long, default_value_t = 100)]
    cooccur_pool: usize,
    /// Node budget per query [default: n_trees * k * 10].
    #[arg(long)]
    search_k: Option<usize>,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
    /// Write here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Owner {
    Trip,
    Customer,
}

impl From<Owner> for PoolKind {
    fn from(o: Owner) -> Self {
        match o {
            Owner::Trip => PoolKind::Trip,
            Owner::Customer => PoolKind::Customer,
        }
    }
}

#[derive(Args, Debug)]
struct ClusterArgs {
    /// Pooled trip or customer embeddings.
    #[arg(long, required_unless_present = "projection")]
    input: Option<PathBuf>,
    /// Cluster the 2-D coordinates of a tsne CSV instead of --input.
    #[arg(long)]
    projection: Option<PathBuf>,
    /// What the pooled vectors are.
    #[arg(long, value_enum, default_value = "trip")]
    kind: Owner,
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Prebuilt index over the clustered points; built on the fly when absent.
    #[arg(long)]
    index: Option<PathBuf>,
    #[arg(long, default_value_t = BuildParams::default().n_trees)]
    n_trees: usize,
    #[arg(long, default_value_t = KMeansParams::default().k)]
    k: usize,
    #[arg(long, default_value_t = KMeansParams::default().max_iter)]
    max_iter: usize,
    /// Independent k-means++ restarts; the best objective is kept.
    #[arg(long, default_value_t = KMeansParams::default().n_init)]
    n_init: usize,
    /// Nearest in-cluster neighbours examined per point for pair scores.
    #[arg(long, default_value_t = AnalysisParams::default().neighbors_per_point)]
    neighbors: usize,
    /// Departments listed per cluster.
    #[arg(long, default_value_t = AnalysisParams::default().top_n)]
    top_n: usize,
    /// Cluster report CSV.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    json: Option<PathBuf>,
    /// Per-point `id,cluster` CSV.
    #[arg(long)]
    assignments: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TsneArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// `id,label` CSV with a header (ground_truth.csv works).
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long, default_value_t = TsneConfig::default().perplexity)]
    perplexity: f64,
    #[arg(long, default_value_t = TsneConfig::default().n_iter)]
    n_iter: usize,
    #[arg(long, default_value_t = TsneConfig::default().learning_rate)]
    learning_rate: f64,
    /// Project a uniform random subsample of this many points.
    #[arg(long)]
    sample: Option<usize>,
    /// KL checkpoints as JSON.
    #[arg(long)]
    trace: Option<PathBuf>,
}

enum ParseFailure {
    Clap(clap::Error),
    Config(String),
}

/// Turns one settings-file entry into flags, unless the flag was given on
/// the command line.
fn push_setting(
    cmd: &clap::Command,
    matches: &ArgMatches,
    key: &str,
    value: &toml::Value,
    out: &mut Vec<OsString>,
) -> std::result::Result<(), String> {
    let id = key.replace('-', "_");
    let arg = cmd
        .get_arguments()
        .find(|a| a.get_id().as_str() == id && a.get_long().is_some() && id != "config")
        .ok_or_else(|| format!("unknown setting `{key}` for `{}`", cmd.get_name()))?;
    if matches.value_source(&id) == Some(ValueSource::CommandLine) {
        return Ok(());
    }
    let flag = format!("--{}", arg.get_long().expect("checked above"));
    match arg.get_action() {
        ArgAction::SetTrue => match value.as_bool() {
            Some(true) => out.push(flag.into()),
            Some(false) => {}
            None => return Err(format!("`{key}` expects true or false")),
        },
        ArgAction::Count => {
            let n = value
                .as_integer()
                .filter(|n| *n >= 0)
                .ok_or_else(|| format!("`{key}` expects a non-negative integer"))?;
            out.extend((0..n).map(|_| OsString::from(&flag)));
        }
        _ => {
            let text = match value {
                toml::Value::String(s) => s.clone(),
                toml::Value::Integer(i) => i.to_string(),
                toml::Value::Float(f) => f.to_string(),
                toml::Value::Boolean(b) => b.to_string(),
                _ => return Err(format!("`{key}` must be a string, number or boolean")),
            };
            out.push(flag.into());
            out.push(text.into());
        }
    }
    Ok(())
}

fn apply_config(argv: &[OsString], matches: &ArgMatches, path: &Path) -> std::result::Result<Vec<OsString>, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    let table: toml::Table = text
        .parse()
        .map_err(|e| format!("{}: {e}", path.display()))?;
    let cmd = Cli::command();
    let (sub_name, sub_matches) = matches.subcommand().expect("subcommand is required");
    let sub_cmd = cmd.find_subcommand(sub_name).expect("parsed subcommand exists");
    let mut extra = Vec::new();
    for (key, value) in &table {
        match value {
            toml::Value::Table(section) => {
                if key == sub_name {
                    for (k, v) in section {
                        push_setting(sub_cmd, sub_matches, k, v, &mut extra)?;
                    }
                } else if cmd.find_subcommand(key).is_none() {
                    return Err(format!("unknown section [{key}]"));
                }
            }
            v => push_setting(&cmd, matches, key, v, &mut extra)?,
        }
    }
    Ok(argv.iter().cloned().chain(extra).collect())
}

fn parse_cli() -> std::result::Result<Cli, ParseFailure> {
    let argv: Vec<OsString> = std::env::args_os().collect();
    let matches = Cli::command()
        .try_get_matches_from(&argv)
        .map_err(ParseFailure::Clap)?;
    let Some(path) = matches.get_one::<PathBuf>("config") else {
        return Cli::try_parse_from(&argv).map_err(ParseFailure::Clap);
    };
    let merged = apply_config(&argv, &matches, path).map_err(ParseFailure::Config)?;
    Cli::try_parse_from(merged).map_err(ParseFailure::Clap)
}

fn describe(e: &Error) -> String {
    match e {
        Error::InvalidConfig { field, message } => {
            format!("invalid value for --{}: {message}", field.replace('_', "-"))
        }
        other => other.to_string(),
    }
}

fn main() -> ExitCode {
    let cli = match parse_cli() {
        Ok(c) => c,
        Err(ParseFailure::Clap(e)) => e.exit(),
        Err(ParseFailure::Config(msg)) => {
            eprintln!("error: config: {msg}");
            return ExitCode::from(2);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(if e.is_usage() { 2 } else { 1 })
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if cli.threads == 0 {
        return Err(Error::InvalidConfig {
            field: "threads",
            message: "must be at least 1".into(),
        });
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build_global()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let stage = |name: &str| seed::stage_seed(cli.seed, name);
    match &cli.command {
        Command::Synth(a) => synth(a, stage("synth")),
        Command::Train(a) => train(a, stage("train"), cli.threads),
        Command::PoolTrips(a) => pool(a, PoolKind::Trip, stage("pool")),
        Command::PoolCustomers(a) => pool(a, PoolKind::Customer, stage("pool")),
        Command::TextEmbed(a) => text_embed(a, stage("text-embed"), cli.threads),
        Command::Combine(a) => combine(a),
        Command::Index(a) => build_index(a, stage("index")),
        Command::Recommend(a) => recommend(a),
        Command::Cluster(a) => run_cluster(a, stage("cluster")),
        Command::Tsne(a) => run_tsne(a, stage("tsne")),
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn load_corpus(a: &CorpusArgs) -> Result<Corpus> {
    let catalog = corpus::load_catalog(&a.catalog)?;
    let (corpus, stats) = corpus::load_trips(&a.trips, &catalog, a.min_basket)?;
    log::info!(
        "{}: kept {} trips, dropped {} below {} items",
        a.trips.display(),
        stats.kept,
        stats.dropped,
        a.min_basket
    );
    Ok(corpus)
}

fn synth(a: &SynthArgs, seed: u64) -> Result<()> {
    let spec = SynthSpec {
        n_categories: a.n_categories,
        products_per_category: a.products_per_category,
        n_trips: a.n_trips,
        basket_size_min: a.basket_size_min,
        basket_size_max: a.basket_size_max,
        in_category_prob: a.in_category_prob,
        n_customers: a.n_customers,
        customer_affinity: a.customer_affinity,
        min_basket: a.min_basket,
        grid: a.grid_groups.zip(a.grid_kinds).map(|(groups, kinds)| GridSpec { groups, kinds }),
        seed,
    };
    let synthetic = corpus::generate_synthetic(&spec)?;
    synthetic.write_to_dir(&a.out_dir)?;
    log::info!(
        "wrote {} products and {} trips to {}",
        synthetic.corpus.catalog.len(),
        synthetic.corpus.trips.len(),
        a.out_dir.display()
    );
    Ok(())
}

fn train(a: &TrainArgs, seed: u64, threads: usize) -> Result<()> {
    let config = a.opts.config(seed, threads);
    config.validate()?;
    let corpus = load_corpus(&a.corpus)?;
    let (pair, report) = efemb::train(&corpus, &config)?;
    ensure_dir(&a.out_dir)?;
    pair.save(&a.out_dir.join("rho.bin"), &a.out_dir.join("alpha.bin"))?;
    if a.tsv {
        pair.rho_table().save_tsv(&a.out_dir.join("rho.tsv"))?;
        pair.alpha_table().save_tsv(&a.out_dir.join("alpha.tsv"))?;
    }
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    write_file(&a.out_dir.join("report.json"), text + "\n")?;
    log::info!(
        "trained {} products, D={}, {} epochs in {:.1}s",
        report.vocab_size,
        report.dim,
        report.epochs.len(),
        report.wall_time_secs
    );
    Ok(())
}

fn pool(a: &PoolArgs, kind: PoolKind, seed: u64) -> Result<()> {
    let corpus = load_corpus(&a.corpus)?;
    let rho = EmbeddingTable::load(&a.rho)?;
    // Pooling reads rho only; the alpha slot is never consulted.
    let pair = EmbeddingPair::from_tables(&rho, &rho)?;
    let sample = a.sample.map(|size| Sample { size, seed });
    let pooled = aggregate::pool_all(&corpus, &pair, kind, sample)?;
    if pooled.is_empty() {
        return Err(Error::Empty("nothing to pool".into()));
    }
    let table = aggregate::to_table(&pooled)?;
    table.save(&a.out)?;
    if a.tsv {
        table.save_tsv(&a.out.with_extension("tsv"))?;
    }
    log::info!("wrote {} pooled vectors to {}", pooled.len(), a.out.display());
    Ok(())
}

fn text_embed(a: &TextEmbedArgs, seed: u64, threads: usize) -> Result<()> {
    let config = a.opts.config(seed, threads);
    config.validate()?;
    let catalog = corpus::load_catalog(&a.catalog)?;
    let (tokens, report) = textembed::train_name_embeddings(&catalog, &config)?;
    let (sentences, oov) = textembed::sentence_table(&catalog, &tokens)?;
    ensure_dir(&a.out_dir)?;
    tokens.vocab.save(&a.out_dir.join("tokens.txt"))?;
    tokens
        .pair
        .save(&a.out_dir.join("token_rho.bin"), &a.out_dir.join("token_alpha.bin"))?;
    sentences.save(&a.out_dir.join("sentences.bin"))?;
    let mut value = serde_json::to_value(&report).expect("report serializes");
    value["oov_names"] = oov.into();
    let text = serde_json::to_string_pretty(&value).expect("report serializes");
    write_file(&a.out_dir.join("text_report.json"), text + "\n")
}

fn combine(a: &CombineArgs) -> Result<()> {
    let rho = EmbeddingTable::load(&a.rho)?;
    let pair = EmbeddingPair::from_tables(&rho, &rho)?;
    let sentences = EmbeddingTable::load(&a.sentences)?;
    let (table, meta) = textembed::combine_all(&pair, &sentences, a.normalize)?;
    table.save(&a.out)?;
    textembed::save_meta(&a.out.with_extension("json"), &meta)
}

fn build_index(a: &IndexArgs, seed: u64) -> Result<()> {
    let table = EmbeddingTable::load(&a.input)?;
    let forest = AnnForest::build(
        &table,
        BuildParams {
            n_trees: a.n_trees,
            leaf_size: a.leaf_size,
            seed,
        },
    )?;
    forest.save(&a.out)
}

fn product_ref(flag: &'static str, value: Option<&String>) -> Result<ProductRef> {
    let v = value.ok_or_else(|| Error::InvalidArgument(format!("--kind analogy needs --{flag}")))?;
    Ok(match v.trim().parse::<u64>() {
        Ok(id) => ProductRef::Id(id),
        Err(_) => ProductRef::Name(v.clone()),
    })
}

fn recommend(a: &RecommendArgs) -> Result<()> {
    if a.k == 0 {
        return Err(Error::InvalidConfig {
            field: "k",
            message: "must be at least 1".into(),
        });
    }
    let catalog = corpus::load_catalog(&a.catalog)?;
    let rho = AnnForest::load(&a.index)?;
    let alpha = a.alpha_index.as_deref().map(AnnForest::load).transpose()?;
    let mut rec = Recommender::new(&catalog, &rho, alpha.as_ref());
    rec.cooccur_metric = a.cooccur_metric;
    rec.cooccur_pool = a.cooccur_pool;
    rec.search_k = a.search_k;
    let query = || match (a.id, &a.name) {
        (Some(id), _) => Ok(ProductRef::Id(id)),
        (None, Some(n)) => Ok(ProductRef::Name(n.clone())),
        (None, None) => Err(Error::InvalidArgument("give --id or --name".into())),
    };
    let result = match a.kind {
        Kind::Similar => rec.similar(&query()?, a.k)?,
        Kind::Cooccur => {
            if alpha.is_none() {
                return Err(Error::InvalidArgument("--kind cooccur needs --alpha-index".into()));
            }
            rec.cooccur(&query()?, a.k)?
        }
        Kind::Analogy => rec.analogy(
            &product_ref("a", a.a.as_ref())?,
            &product_ref("b", a.b.as_ref())?,
            &product_ref("c", a.c.as_ref())?,
            a.k,
        )?,
    };
    let text = match a.format {
        Format::Json => result.to_json() + "\n",
        Format::Table => result.to_table(),
    };
    match &a.out {
        Some(p) => write_file(p, text),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())
                .and_then(|_| out.flush())
                .map_err(|e| Error::Io {
                    path: "<stdout>".into(),
                    source: e,
                })
        }
    }
}

fn run_cluster(a: &ClusterArgs, seed: u64) -> Result<()> {
    if a.k == 0 {
        return Err(Error::InvalidConfig {
            field: "k",
            message: "must be at least 1".into(),
        });
    }
    let points = match (&a.projection, &a.input) {
        (Some(p), _) => {
            let text = fs::read_to_string(p).map_err(|e| Error::Io {
                path: p.clone(),
                source: e,
            })?;
            EmbeddingTable::from_rows(
                tsne::parse_plot_data(&text)?
                    .into_iter()
                    .map(|r| (r.id, vec![r.x, r.y])),
            )?
        }
        (None, Some(p)) => EmbeddingTable::load(p)?,
        (None, None) => return Err(Error::InvalidArgument("give --input or --projection".into())),
    };
    let corpus = load_corpus(&a.corpus)?;
    let forest = match &a.index {
        Some(p) => {
            let f = AnnForest::load(p)?;
            if f.len() != points.len() || f.dim() != points.dim() {
                return Err(Error::InvalidArgument(format!(
                    "--index holds {} points of dim {}, clustered points are {} of dim {}",
                    f.len(),
                    f.dim(),
                    points.len(),
                    points.dim()
                )));
            }
            f
        }
        None => AnnForest::build(
            &points,
            BuildParams {
                n_trees: a.n_trees,
                seed: seed::stream_seed(seed, 1),
                ..Default::default()
            },
        )?,
    };
    let result = cluster::kmeans(
        points.matrix(),
        KMeansParams {
            k: a.k,
            max_iter: a.max_iter,
            n_init: a.n_init,
            seed,
        },
    )?;
    let kind = PoolKind::from(a.kind);
    let reports = cluster::analyze(
        &points,
        &result,
        &forest,
        &aggregate::owner_item_sets(&corpus, kind),
        &aggregate::owner_purchases(&corpus, kind),
        &corpus.catalog,
        AnalysisParams {
            neighbors_per_point: a.neighbors,
            top_n: a.top_n,
        },
    )?;
    cluster::write_reports(&reports, a.top_n, &a.out, a.json.as_deref())?;
    if let Some(p) = &a.assignments {
        let mut text = String::from("id,cluster\n");
        for (id, c) in points.ids().iter().zip(&result.assignment) {
            text.push_str(&format!("{id},{}\n", c + 1));
        }
        write_file(p, text)?;
    }
    log::info!(
        "k-means: {} iterations, objective {:.6}",
        result.n_iterations,
        result.objective()
    );
    Ok(())
}

fn run_tsne(a: &TsneArgs, seed: u64) -> Result<()> {
    let mut table = EmbeddingTable::load(&a.input)?;
    if let Some(size) = a.sample.filter(|&s| s < table.len()) {
        let mut rng = seed::rng(seed::stream_seed(seed, 1));
        let mut keep = index::sample(&mut rng, table.len(), size).into_vec();
        keep.sort_unstable();
        table = EmbeddingTable::from_rows(
            keep.into_iter()
                .map(|r| (table.ids()[r], table.row(r).to_vec())),
        )?;
    }
    let labels = a.labels.as_deref().map(corpus::load_id_labels).transpose()?;
    let projection = tsne::tsne(
        &table,
        &TsneConfig {
            perplexity: a.perplexity,
            n_iter: a.n_iter,
            learning_rate: a.learning_rate,
            seed,
        },
    )?;
    write_file(&a.out, tsne::export_plot_data(&projection, labels.as_ref()))?;
    if let Some(p) = &a.trace {
        let text = serde_json::to_string_pretty(&projection.kl_trace).expect("trace serializes");
        write_file(p, text + "\n")?;
    }
    Ok(())
}
