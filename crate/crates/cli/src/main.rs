//! `binaryne`: walks, training, encoding, search and evaluation from the
//! command line. Data goes to stdout or files; logs go to stderr.

mod config;

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use binaryne::codes::{binarize, CodeMatrix};
use binaryne::eval::{format_table, run_benchmark, EvalConfig};
use binaryne::model::{BetaCurve, Trainer};
use binaryne::search::{batch_top_k, write_tsv, DenseMatrix};
use binaryne::{AttributeMatrix, Delimiter, Graph, LabelMap, ModelParams, NodeId, PairCounts, TrainConfig, Vocab, WalkConfig};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use config::{ConfigFile, Resolver};

#[derive(Parser)]
#[command(name = "binaryne", version, about = "Binary node embeddings and Hamming similarity search")]
struct Cli {
    /// Flat `key = value` file; keys are long flag names. Flags win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    /// Only warnings and errors.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run random walks and write windowed pair counts.
    Walks(WalksArgs),
    /// Train a model; writes PREFIX.bnep, PREFIX.bnec and PREFIX.vocab.
    Train(TrainArgs),
    /// Binarize a checkpoint into a code file.
    Encode(EncodeArgs),
    /// Top-K Hamming search for query nodes; TSV on stdout.
    Search(SearchArgs),
    /// Precision@K and MAP@K of codes against class labels.
    Eval(EvalArgs),
}

#[derive(Args)]
struct InputArgs {
    /// Edge list: two node ids per line.
    #[arg(long)]
    edges: Option<PathBuf>,
    /// Field separator: `whitespace`, `tab`, `comma` or a single character.
    #[arg(long)]
    delimiter: Option<Sep>,
}

#[derive(Args)]
struct WalkArgs {
    /// Nodes per walk [default: 100].
    #[arg(long)]
    walk_length: Option<usize>,
    /// Walks started at each node [default: 40].
    #[arg(long)]
    walks_per_node: Option<usize>,
    /// Context window radius [default: 10].
    #[arg(long)]
    window: Option<usize>,
}

#[derive(Args)]
struct WalksArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    walk: WalkArgs,
    /// Pair-count output (`center context count`, dense indices).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the walks, one per line, as node ids.
    #[arg(long)]
    dump_walks: Option<PathBuf>,
    /// Random seed [default: 1].
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads [default: 1].
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    walk: WalkArgs,
    /// Node attributes: `node attr_index weight` per line.
    #[arg(long)]
    attrs: Option<PathBuf>,
    /// Train on structure alone; no attribute file needed.
    #[arg(long)]
    structure_only: bool,
    /// Drop attribute lines naming nodes absent from the edge list.
    #[arg(long)]
    skip_unknown: bool,
    /// Reuse pair counts from `walks` instead of walking again.
    #[arg(long)]
    pairs: Option<PathBuf>,
    /// Output prefix.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Code length in bits [default: 128].
    #[arg(long)]
    dim: Option<usize>,
    /// SGD iterations [default: 100000000].
    #[arg(long)]
    iters: Option<u64>,
    /// Negative samples per step [default: 5].
    #[arg(long)]
    negatives: Option<usize>,
    /// Initial learning rate [default: 0.025].
    #[arg(long)]
    eta_start: Option<f64>,
    /// Final learning rate [default: 0.0000025].
    #[arg(long)]
    eta_end: Option<f64>,
    /// Initial tanh sharpness [default: 0.01].
    #[arg(long)]
    beta_start: Option<f64>,
    /// Final tanh sharpness [default: 1].
    #[arg(long)]
    beta_end: Option<f64>,
    /// β ramp shape: `linear` or `geometric` [default: linear].
    #[arg(long)]
    beta_curve: Option<BetaCurve>,
    /// Probability of a structure step [default: 0.5].
    #[arg(long)]
    switch_prob: Option<f64>,
    /// Exponent on negative-sampling frequencies [default: 0.75].
    #[arg(long)]
    noise_power: Option<f64>,
    /// Clamp gradient entries to this magnitude [default: off].
    #[arg(long)]
    grad_clip: Option<f64>,
    /// Progress interval in iterations; 0 disables.
    #[arg(long)]
    log_every: Option<u64>,
    /// Random seed [default: 1].
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; more than 1 trains asynchronously and is not
    /// reproducible [default: 1].
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct EncodeArgs {
    /// Model checkpoint written by `train`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Output code file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SearchArgs {
    /// Code file.
    #[arg(long)]
    codes: Option<PathBuf>,
    /// Node id sidecar; defaults to the code file with a `.vocab` extension.
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Query node id (repeatable).
    #[arg(long = "query")]
    query: Vec<String>,
    /// File of query node ids, one per line.
    #[arg(long)]
    queries: Option<PathBuf>,
    /// Results per query [default: 10].
    #[arg(short, long)]
    k: Option<usize>,
    /// Keep the query node in its own result list.
    #[arg(long)]
    include_self: bool,
    /// Append per-query elapsed microseconds.
    #[arg(long)]
    timing: bool,
    /// Write results here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads [default: 1].
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    /// Code file.
    #[arg(long)]
    codes: Option<PathBuf>,
    /// Node id sidecar; defaults to the code file with a `.vocab` extension.
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Class labels: `node class` per line.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Field separator for the label file.
    #[arg(long)]
    delimiter: Option<Sep>,
    /// Comma-separated cutoffs [default: 100,200,500].
    #[arg(short, long)]
    k: Option<KList>,
    /// Count the query node as a candidate and as relevant.
    #[arg(long)]
    include_query: bool,
    /// Also score raw attributes binarized as presence bits.
    #[arg(long)]
    features: Option<PathBuf>,
    /// Drop feature lines naming nodes absent from the code vocabulary.
    #[arg(long)]
    skip_unknown: bool,
    /// Also score the real-valued input weights of this checkpoint by
    /// Euclidean distance.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Row label for the code file.
    #[arg(long)]
    method: Option<String>,
    /// Tab-separated output instead of the aligned table.
    #[arg(long)]
    tsv: bool,
    /// Worker threads [default: 1].
    #[arg(long)]
    threads: Option<usize>,
}

/// Field separator as given on the command line.
#[derive(Clone, Copy, Debug)]
struct Sep(Delimiter);

impl FromStr for Sep {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let d = match s {
            "whitespace" | "ws" => Delimiter::Whitespace,
            "tab" | "\\t" => Delimiter::Char('\t'),
            "comma" => Delimiter::Char(','),
            _ => {
                let mut chars = s.chars();
                match (chars.next(), chars.next()) {
                    (Some(c), None) => Delimiter::Char(c),
                    _ => return Err(format!("expected whitespace, tab, comma or one character, got `{s}`")),
                }
            }
        };
        Ok(Sep(d))
    }
}

impl fmt::Display for Sep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            Delimiter::Whitespace => f.write_str("whitespace"),
            Delimiter::Char('\t') => f.write_str("tab"),
            Delimiter::Char(c) => write!(f, "{c}"),
        }
    }
}

#[derive(Clone, Debug)]
struct KList(Vec<usize>);

impl FromStr for KList {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let ks = s
            .split(',')
            .map(|k| k.trim().parse::<usize>().map_err(|e| format!("bad cutoff `{k}`: {e}")))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        if ks.is_empty() || ks.contains(&0) {
            return Err("cutoffs must be positive".into());
        }
        Ok(KList(ks))
    }
}

impl fmt::Display for KList {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(usize::to_string).collect();
        f.write_str(&parts.join(","))
    }
}

/// Deletes registered files unless the run completes.
struct Outputs(Vec<PathBuf>);

impl Outputs {
    fn add(&mut self, path: PathBuf) -> PathBuf {
        self.0.push(path.clone());
        path
    }

    fn commit(mut self) {
        self.0.clear();
    }
}

impl Drop for Outputs {
    fn drop(&mut self) {
        for p in &self.0 {
            if p.exists() {
                warn!("removing partial output {}", p.display());
                let _ = std::fs::remove_file(p);
            }
        }
    }
}

fn main() {
    let cli = Cli::parse();
    let level = match (cli.quiet, cli.verbose) {
        (true, _) => "warn",
        (false, 0) => "info",
        (false, 1) => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp_millis()
        .init();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    let config = match &cli.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let mut r = Resolver::new(&config);
    match cli.command {
        Command::Walks(a) => cmd_walks(a, &mut r),
        Command::Train(a) => cmd_train(a, &mut r),
        Command::Encode(a) => cmd_encode(a, &mut r),
        Command::Search(a) => cmd_search(a, &mut r),
        Command::Eval(a) => cmd_eval(a, &mut r),
    }
}

fn set_threads(threads: usize) -> Result<()> {
    if threads == 0 {
        bail!("threads must be at least 1");
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .context("configuring thread pool")
}

fn resolve_walks(walk: WalkArgs, seed: Option<u64>, r: &mut Resolver) -> Result<WalkConfig> {
    let d = WalkConfig::default();
    Ok(WalkConfig {
        walk_length: r.value("walk-length", walk.walk_length, d.walk_length)?,
        walks_per_node: r.value("walks-per-node", walk.walks_per_node, d.walks_per_node)?,
        window: r.value("window", walk.window, d.window)?,
        seed: r.value("seed", seed, d.seed)?,
    })
}

fn load_graph(path: &Path, delimiter: Delimiter) -> Result<Graph> {
    let t = Instant::now();
    let g = Graph::load_edge_list(path, delimiter)?;
    info!(
        "graph {}: {} nodes, {} edges ({:.1?})",
        path.display(),
        g.node_count(),
        g.edge_count(),
        t.elapsed()
    );
    Ok(g)
}

fn collect_pairs(graph: &Graph, cfg: &WalkConfig) -> Result<PairCounts> {
    let t = Instant::now();
    info!("{} walks", graph.node_count() * cfg.walks_per_node);
    let pairs = PairCounts::collect(graph, cfg)?;
    info!("{} distinct pairs, {} in total ({:.1?})", pairs.len(), pairs.total(), t.elapsed());
    if pairs.is_empty() {
        warn!("no context pairs: walks are too short or the graph has no edges");
    }
    Ok(pairs)
}

fn cmd_walks(a: WalksArgs, r: &mut Resolver) -> Result<()> {
    let edges = r.required_path("edges", a.input.edges)?;
    let out = r.required_path("out", a.out)?;
    let dump = r.path("dump-walks", a.dump_walks)?;
    let sep = r.value("delimiter", a.input.delimiter, Sep(Delimiter::Whitespace))?;
    let threads = r.value("threads", a.threads, 1)?;
    let cfg = resolve_walks(a.walk, a.seed, r)?;
    info!("config: {}", r.summary());
    set_threads(threads)?;

    let graph = load_graph(&edges, sep.0)?;
    let mut outputs = Outputs(Vec::new());
    let pairs = match dump {
        Some(path) => {
            let walks = binaryne::generate_walks(&graph, &cfg)?;
            info!("{} walks", walks.len());
            walks.write(graph.vocab(), outputs.add(path))?;
            let pairs = PairCounts::from_walks(&walks, cfg.window);
            info!("{} distinct pairs, {} in total", pairs.len(), pairs.total());
            if pairs.is_empty() {
                warn!("no context pairs: walks are too short or the graph has no edges");
            }
            pairs
        }
        None => collect_pairs(&graph, &cfg)?,
    };
    pairs.save(outputs.add(out.clone()))?;
    info!("wrote {}", out.display());
    outputs.commit();
    Ok(())
}

fn with_ext(prefix: &Path, ext: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

fn cmd_train(a: TrainArgs, r: &mut Resolver) -> Result<()> {
    let edges = r.required_path("edges", a.input.edges)?;
    let out = r.required_path("out", a.out)?;
    let structure_only = r.switch("structure-only", a.structure_only)?;
    let attrs_path = r.path("attrs", a.attrs)?;
    let skip_unknown = r.switch("skip-unknown", a.skip_unknown)?;
    let pairs_path = r.path("pairs", a.pairs)?;
    let sep = r.value("delimiter", a.input.delimiter, Sep(Delimiter::Whitespace))?;
    let walk_cfg = resolve_walks(a.walk, a.seed, r)?;
    let d = TrainConfig::default();
    let cfg = TrainConfig {
        dim: r.value("dim", a.dim, d.dim)?,
        max_iters: r.value("iters", a.iters, d.max_iters)?,
        negatives: r.value("negatives", a.negatives, d.negatives)?,
        eta_start: r.value("eta-start", a.eta_start, d.eta_start)?,
        eta_end: r.value("eta-end", a.eta_end, d.eta_end)?,
        beta_start: r.value("beta-start", a.beta_start, d.beta_start)?,
        beta_end: r.value("beta-end", a.beta_end, d.beta_end)?,
        beta_curve: r.value("beta-curve", a.beta_curve, d.beta_curve)?,
        switch_prob: r.value("switch-prob", a.switch_prob, d.switch_prob)?,
        noise_power: r.value("noise-power", a.noise_power, d.noise_power)?,
        grad_clip: r.optional("grad-clip", a.grad_clip)?,
        seed: walk_cfg.seed,
        threads: r.value("threads", a.threads, 1)?,
    };
    let log_every = r.value("log-every", a.log_every, (cfg.max_iters / 20).max(1))?;
    info!("config: {}", r.summary());
    if attrs_path.is_none() && !structure_only {
        bail!("no attribute file: pass --attrs, or --structure-only to train on edges alone");
    }
    cfg.validate()?;
    set_threads(cfg.threads)?;

    let graph = load_graph(&edges, sep.0)?;
    let attrs = match (&attrs_path, structure_only) {
        (Some(p), false) => {
            let x = AttributeMatrix::load(p, &graph, sep.0, skip_unknown)?;
            info!("attributes {}: {} columns, {} non-zeros", p.display(), x.attr_count(), x.nnz());
            x
        }
        _ => AttributeMatrix::empty(graph.node_count()),
    };
    let pairs = match pairs_path {
        Some(p) => {
            let pairs = PairCounts::load(&p)?;
            if let Some(bad) = pairs.pairs().iter().find(|c| c.center.max(c.context) as usize >= graph.node_count()) {
                bail!(
                    "{}: pair ({}, {}) refers to a node index beyond the {} nodes of {}",
                    p.display(),
                    bad.center,
                    bad.context,
                    graph.node_count(),
                    edges.display()
                );
            }
            info!("{} distinct pairs, {} in total, from {}", pairs.len(), pairs.total(), p.display());
            pairs
        }
        None => collect_pairs(&graph, &walk_cfg)?,
    };

    let trainer = Trainer::new(&graph, &pairs, &attrs, &cfg)?;
    let t = Instant::now();
    let trained = trainer.run_with_progress(log_every, |p| {
        let fmt = |l: Option<f64>| l.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
        info!(
            "iter {} eta {:.3e} beta {:.4} structure_loss {} attribute_loss {}",
            p.iter,
            p.eta,
            p.beta,
            fmt(p.structure_loss),
            fmt(p.attribute_loss)
        );
    })?;
    info!(
        "trained {} iterations in {:.1?}: {} structure steps, {} attribute steps",
        cfg.max_iters,
        t.elapsed(),
        trained.stats.structure_steps,
        trained.stats.attribute_steps
    );

    let mut outputs = Outputs(Vec::new());
    trained.params.save(outputs.add(with_ext(&out, "bnep")))?;
    binarize(&trained.params).save(outputs.add(with_ext(&out, "bnec")))?;
    graph.vocab().save(outputs.add(with_ext(&out, "vocab")))?;
    info!("wrote {0}.bnep {0}.bnec {0}.vocab", out.display());
    outputs.commit();
    Ok(())
}

fn cmd_encode(a: EncodeArgs, r: &mut Resolver) -> Result<()> {
    let checkpoint = r.required_path("checkpoint", a.checkpoint)?;
    let out = r.required_path("out", a.out)?;
    info!("config: {}", r.summary());
    let params = ModelParams::load(&checkpoint)?;
    let codes = binarize(&params);
    let mut outputs = Outputs(Vec::new());
    codes.save(outputs.add(out.clone()))?;
    info!("{} codes of {} bits written to {}", codes.node_count(), codes.dim(), out.display());
    outputs.commit();
    Ok(())
}

fn vocab_for(codes: &Path, vocab: Option<PathBuf>) -> PathBuf {
    vocab.unwrap_or_else(|| codes.with_extension("vocab"))
}

fn load_codes(codes_path: &Path, vocab_path: &Path) -> Result<(CodeMatrix, Vocab)> {
    let codes = CodeMatrix::load(codes_path)?;
    let vocab = Vocab::load(vocab_path)?;
    if vocab.len() != codes.node_count() {
        bail!(
            "{} has {} ids but {} holds {} codes",
            vocab_path.display(),
            vocab.len(),
            codes_path.display(),
            codes.node_count()
        );
    }
    Ok((codes, vocab))
}

fn cmd_search(a: SearchArgs, r: &mut Resolver) -> Result<()> {
    let codes_path = r.required_path("codes", a.codes)?;
    let vocab_path = r.path("vocab", a.vocab)?;
    let queries_path = r.path("queries", a.queries)?;
    let k = r.value("k", a.k, 10)?;
    let include_self = r.switch("include-self", a.include_self)?;
    let timing = r.switch("timing", a.timing)?;
    let out = r.path("out", a.out)?;
    let threads = r.value("threads", a.threads, 1)?;
    info!("config: {}", r.summary());
    set_threads(threads)?;

    let (codes, vocab) = load_codes(&codes_path, &vocab_for(&codes_path, vocab_path))?;
    let mut ids = a.query;
    if let Some(p) = &queries_path {
        let f = File::open(p).with_context(|| format!("opening {}", p.display()))?;
        for line in BufReader::new(f).lines() {
            let line = line.with_context(|| format!("reading {}", p.display()))?;
            let id = line.trim();
            if !id.is_empty() && !id.starts_with('#') {
                ids.push(id.to_owned());
            }
        }
    }
    if ids.is_empty() {
        bail!("no queries: pass --query ID or --queries FILE");
    }
    let queries = ids
        .iter()
        .map(|id| vocab.get(id).with_context(|| format!("unknown query node `{id}`")))
        .collect::<Result<Vec<NodeId>>>()?;

    let t = Instant::now();
    let results = batch_top_k(&codes, &queries, k, !include_self)?;
    info!("{} queries in {:.1?}", queries.len(), t.elapsed());
    match out {
        Some(p) => {
            let mut outputs = Outputs(Vec::new());
            let f = File::create(outputs.add(p.clone())).with_context(|| format!("creating {}", p.display()))?;
            let mut w = BufWriter::new(f);
            write_tsv(&mut w, &vocab, &queries, &results, timing)?;
            w.flush()?;
            outputs.commit();
        }
        None => {
            let mut w = BufWriter::new(std::io::stdout().lock());
            write_tsv(&mut w, &vocab, &queries, &results, timing)?;
            w.flush()?;
        }
    }
    Ok(())
}

fn cmd_eval(a: EvalArgs, r: &mut Resolver) -> Result<()> {
    let codes_path = r.required_path("codes", a.codes)?;
    let vocab_path = r.path("vocab", a.vocab)?;
    let labels_path = r.path("labels", a.labels)?;
    let sep = r.value("delimiter", a.delimiter, Sep(Delimiter::Whitespace))?;
    let ks = r.value("k", a.k, KList(EvalConfig::default().ks))?;
    let include_query = r.switch("include-query", a.include_query)?;
    let features = r.path("features", a.features)?;
    let skip_unknown = r.switch("skip-unknown", a.skip_unknown)?;
    let checkpoint = r.path("checkpoint", a.checkpoint)?;
    let method = r.value("method", a.method, "BinaryNE".to_string())?;
    let tsv = r.switch("tsv", a.tsv)?;
    let threads = r.value("threads", a.threads, 1)?;
    info!("config: {}", r.summary());
    let Some(labels_path) = labels_path else {
        bail!("no labels: pass --labels FILE");
    };
    set_threads(threads)?;

    let (codes, vocab) = load_codes(&codes_path, &vocab_for(&codes_path, vocab_path))?;
    // Label and attribute files are keyed by node id; a graph without edges
    // carries the vocabulary.
    let nodes = Graph::from_edges(vocab, []);
    let labels = LabelMap::load(&labels_path, &nodes, sep.0)?;
    info!(
        "{} labeled nodes in {} classes",
        labels.labeled_count(),
        labels.class_count()
    );
    let cfg = EvalConfig {
        ks: ks.0,
        exclude_query: !include_query,
    };

    let mut reports = vec![run_benchmark(&method, &codes, &labels, &cfg)?];
    if let Some(p) = checkpoint {
        let params = ModelParams::load(&p)?;
        if params.node_count() != codes.node_count() {
            bail!("{} covers {} nodes, codes cover {}", p.display(), params.node_count(), codes.node_count());
        }
        let dense = DenseMatrix::new(
            params.node_count(),
            params.dim(),
            params.w_in().iter().map(|&w| w as f64).collect(),
        )?;
        reports.push(run_benchmark("Real-valued", &dense, &labels, &cfg)?);
    }
    if let Some(p) = features {
        let x = AttributeMatrix::load(&p, &nodes, sep.0, skip_unknown)?;
        reports.push(run_benchmark("Feature", &CodeMatrix::from_attributes(&x), &labels, &cfg)?);
    }
    for rep in &reports {
        if rep.zero_relevant_queries > 0 {
            warn!(
                "{}: {} queries have no other node in their class and score 0",
                rep.method, rep.zero_relevant_queries
            );
        }
    }

    let mut stdout = std::io::stdout().lock();
    if tsv {
        writeln!(stdout, "{}", reports[0].tsv_header())?;
        for rep in &reports {
            writeln!(stdout, "{}", rep.tsv_row())?;
        }
    } else {
        write!(stdout, "{}", format_table(&reports))?;
    }
    Ok(())
}
