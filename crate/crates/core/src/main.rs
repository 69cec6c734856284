use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use predmodel::benchgen::{
    gen_classification, gen_clustering, gen_hierarchy, gen_timeseries, load_references, SyntheticWorld,
    TimeseriesMode,
};
use predmodel::config::{parse_seeds, BackendKind, RunConfig};
use predmodel::corpus::{load_corpus, load_embeddings, Corpus, CorpusKind, EmbeddingMatrix};
use predmodel::evaluation::{
    aggregate, evaluate, paired_ttest_one_sided, shuffle_band, smoothed_frequency, AggregateReport, EvalReport,
    LlmJudge, MockJudge, SurfaceJudge,
};
use predmodel::gateway::Gateway;
use predmodel::grounding::{DenotationCache, Grounder, LlmBackend, OracleBackend};
use predmodel::learner::{fit, taxonomize, Ablation, Backends, FitResult, TaxonomyConfig};
use predmodel::proposer::{oracle_vocabulary, CandidateBackend, LlmProposer, OracleProposer};

#[derive(Parser)]
#[command(name = "predmodel", version, about = "Fit statistical models whose parameters are natural-language predicates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic benchmark
    GenBench(GenBenchArgs),
    /// Fit predicates to a corpus, once per seed
    Fit(FitArgs),
    /// Score fitted predicates against references
    Eval(EvalArgs),
    /// Recursively cluster a corpus into a tree
    Taxonomize(TaxonomizeArgs),
    /// Emit smoothed frequency curves with shuffle bands
    ReportTs(ReportTsArgs),
    /// One-sided paired t-test between two aggregate eval reports
    Ttest(TtestArgs),
}

#[derive(Args)]
struct GenBenchArgs {
    /// clustering, timeseries, classification or hierarchy
    #[arg(long)]
    kind: String,
    #[arg(long, default_value = "all")]
    mode: String,
    /// Active tags per group for time series (all of them when omitted)
    #[arg(long)]
    per_group: Option<usize>,
    /// Attribute group that defines the clusters
    #[arg(long, default_value = "topic")]
    group: String,
    #[arg(long = "K", default_value_t = 4)]
    k: usize,
    #[arg(long, default_value_t = 512)]
    n: usize,
    #[arg(long = "T", default_value_t = 256)]
    t: usize,
    #[arg(long, default_value_t = 20)]
    classes: usize,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "bench")]
    out: PathBuf,
}

/// Flags shared by commands that fit; each overrides the config file.
#[derive(Args, Clone)]
struct FitFlags {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long = "K")]
    k: Option<usize>,
    #[arg(long = "S")]
    s: Option<usize>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    ablation: Option<String>,
    #[arg(long)]
    backend: Option<String>,
    #[arg(long)]
    steering: Option<String>,
    /// `0..4`, `3` or `1,5,7`
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    vocabulary: Option<PathBuf>,
    #[arg(long)]
    cache: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    flags: FitFlags,
}

#[derive(Args)]
struct EvalArgs {
    /// Run directory holding fit_seed*.json
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    references: Option<PathBuf>,
    /// mock or llm
    #[arg(long, default_value = "mock")]
    judge: String,
    /// Output directory; defaults to the run directory
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TaxonomizeArgs {
    #[command(flatten)]
    flags: FitFlags,
    #[arg(long, default_value_t = 2)]
    depth: usize,
    #[arg(long, default_value_t = 50)]
    min_cluster: usize,
    #[arg(long, default_value_t = 2)]
    child_k: usize,
}

#[derive(Args)]
struct ReportTsArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    runs: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TtestArgs {
    /// Aggregate eval.json expected to score higher
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenBench(a) => gen_bench(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Taxonomize(a) => cmd_taxonomize(a),
        Command::ReportTs(a) => cmd_report_ts(a),
        Command::Ttest(a) => cmd_ttest(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn gen_bench(a: GenBenchArgs) -> Result<()> {
    let world = SyntheticWorld::news();
    let inst = match a.kind.as_str() {
        "clustering" => gen_clustering(&world, &a.group, a.k, a.n, a.noise, a.seed)?,
        "timeseries" => {
            let mode: TimeseriesMode = a.mode.parse()?;
            gen_timeseries(&world, a.t, mode, a.per_group, a.noise, a.seed)?
        }
        "classification" => gen_classification(&world, a.classes, a.n, a.noise, a.seed)?,
        "hierarchy" => gen_hierarchy(a.n, a.noise, a.seed)?,
        other => bail!("unknown benchmark kind {other:?}; expected clustering, timeseries, classification or hierarchy"),
    };
    inst.write(&a.out)?;
    println!("wrote {} samples to {}", inst.corpus.len(), a.out.display());
    Ok(())
}

/// Merges the config file with flag overrides.
fn resolve(flags: &FitFlags) -> Result<RunConfig> {
    let mut c = match &flags.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(m) = &flags.model {
        c.model = Some(m.parse()?);
    }
    if let Some(k) = flags.k {
        c.fit.k = k;
    }
    if let Some(s) = flags.s {
        c.fit.s = s;
    }
    if let Some(t) = flags.tau {
        c.fit.model.tau = t;
    }
    if let Some(l) = flags.lambda {
        c.fit.model.lambda = l;
    }
    if let Some(a) = &flags.ablation {
        c.fit.ablation = a.parse()?;
    }
    if let Some(b) = &flags.backend {
        c.backend = b.parse()?;
    }
    if let Some(s) = &flags.steering {
        c.fit.proposer.steering = Some(s.clone());
    }
    if let Some(s) = &flags.seeds {
        c.seeds = parse_seeds(s)?;
    }
    let p = &mut c.paths;
    for (slot, flag) in [
        (&mut p.corpus, &flags.corpus),
        (&mut p.embeddings, &flags.embeddings),
        (&mut p.vocabulary, &flags.vocabulary),
        (&mut p.cache, &flags.cache),
        (&mut p.out, &flags.out),
    ] {
        if flag.is_some() {
            slot.clone_from(flag);
        }
    }
    if c.seeds.is_empty() {
        bail!("no seeds requested");
    }
    Ok(c)
}

fn sibling(corpus: &Path, name: &str) -> PathBuf {
    corpus.parent().unwrap_or(Path::new(".")).join(name)
}

struct Inputs {
    corpus: Corpus,
    embeddings: EmbeddingMatrix,
}

fn load_inputs(c: &RunConfig) -> Result<Inputs> {
    let corpus_path = c.paths.corpus.clone().ok_or_else(|| anyhow!("--corpus is required"))?;
    let kind = c.model.unwrap_or(CorpusKind::Clustering);
    let corpus = load_corpus(&corpus_path, kind)?;
    let emb_path = c
        .paths
        .embeddings
        .clone()
        .unwrap_or_else(|| sibling(&corpus_path, "embeddings.jsonl"));
    let embeddings = load_embeddings(&emb_path, &corpus)?;
    Ok(Inputs { corpus, embeddings })
}

fn backends(c: &RunConfig, corpus: &Corpus) -> Result<Backends> {
    let cache = match &c.paths.cache {
        Some(p) => Some(Arc::new(DenotationCache::open(p)?)),
        None => None,
    };
    match c.backend {
        BackendKind::Oracle => {
            let vocab_path = match &c.paths.vocabulary {
                Some(p) => p.clone(),
                None => sibling(
                    c.paths.corpus.as_deref().ok_or_else(|| anyhow!("--corpus is required"))?,
                    "vocabulary.jsonl",
                ),
            };
            let base = load_references(&vocab_path).with_context(|| "the oracle backend needs --vocabulary")?;
            let vocab = oracle_vocabulary(&base, corpus)?;
            Ok(Backends {
                grounder: Grounder::new(Arc::new(OracleBackend), cache),
                proposer: Arc::new(OracleProposer::new(vocab)?),
            })
        }
        BackendKind::Llm => {
            let gateway = Arc::new(Gateway::from_config(c.llm.clone())?);
            let proposer: Arc<dyn CandidateBackend> = Arc::new(LlmProposer::new(gateway.clone(), &c.fit.proposer));
            Ok(Backends {
                grounder: Grounder::new(Arc::new(LlmBackend::new(gateway)), cache),
                proposer,
            })
        }
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn out_dir(c: &RunConfig, default: &str) -> Result<PathBuf> {
    let out = c.paths.out.clone().unwrap_or_else(|| PathBuf::from(default));
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    Ok(out)
}

fn cmd_fit(a: FitArgs) -> Result<()> {
    let c = resolve(&a.flags)?;
    let inputs = load_inputs(&c)?;
    let b = backends(&c, &inputs.corpus)?;
    let out = out_dir(&c, "run")?;
    write(&out.join("config.toml"), &c.to_toml()?)?;
    let mut failed = Vec::new();
    for &seed in &c.seeds {
        let mut cfg = c.fit.clone();
        cfg.seed = seed;
        match fit(&inputs.corpus, &inputs.embeddings, &cfg, &b) {
            Ok(r) => {
                write(&out.join(format!("fit_seed{seed}.json")), &r.to_json()?)?;
                write(&out.join(format!("fitness_seed{seed}.csv")), &r.trace_csv())?;
                println!("seed {seed}: fitness {:.6}", r.fitness());
            }
            Err(e) => {
                eprintln!("seed {seed} failed: {e}");
                failed.push(seed);
            }
        }
    }
    if let Some(cache) = b.grounder.cache() {
        cache.flush()?;
    }
    if !failed.is_empty() {
        bail!("{} of {} seeds failed: {failed:?}", failed.len(), c.seeds.len());
    }
    Ok(())
}

/// `fit_seed{s}.json` files in a run directory, by seed.
fn load_fits(run: &Path) -> Result<Vec<(u64, FitResult)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(run).with_context(|| format!("reading {}", run.display()))? {
        let path = entry?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        if let Some(seed) = name.strip_prefix("fit_seed").and_then(|s| s.strip_suffix(".json")) {
            let seed: u64 = seed.parse().with_context(|| format!("bad file name {name}"))?;
            let text = fs::read_to_string(&path)?;
            out.push((seed, serde_json::from_str(&text).with_context(|| format!("parsing {name}"))?));
        }
    }
    if out.is_empty() {
        bail!("no fit_seed*.json in {}", run.display());
    }
    out.sort_by_key(|(s, _)| *s);
    Ok(out)
}

fn run_config(run: &Path) -> Result<RunConfig> {
    Ok(RunConfig::load(&run.join("config.toml"))?)
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let c = run_config(&a.run)?;
    let inputs = load_inputs(&c)?;
    let corpus_path = c.paths.corpus.clone().expect("checked by load_inputs");
    let refs_path = a
        .references
        .clone()
        .or_else(|| c.paths.references.clone())
        .unwrap_or_else(|| sibling(&corpus_path, "references.jsonl"));
    let references = load_references(&refs_path)?;
    let judge: Box<dyn SurfaceJudge> = match a.judge.as_str() {
        "mock" => Box::new(MockJudge),
        "llm" => Box::new(LlmJudge::new(Arc::new(Gateway::from_config(c.llm.clone())?))),
        other => bail!("unknown judge {other:?}; expected mock or llm"),
    };
    let grounder = backends(&c, &inputs.corpus).map(|b| b.grounder).unwrap_or_else(|_| Grounder::oracle());
    let out = a.out.clone().unwrap_or_else(|| a.run.clone());
    fs::create_dir_all(&out)?;
    let mut reports = Vec::new();
    for (seed, r) in load_fits(&a.run)? {
        let report = evaluate(&r.predicates, &references, &inputs.corpus, &grounder, judge.as_ref(), Some(seed))?;
        write(&out.join(format!("eval_seed{seed}.json")), &serde_json::to_string_pretty(&report)?)?;
        reports.push(report);
    }
    let agg = aggregate(&reports)?;
    write(&out.join("eval.json"), &serde_json::to_string_pretty(&agg)?)?;
    write(&out.join("eval.csv"), &eval_csv(&reports, &agg))?;
    println!("mean F1 {:.4}  mean surface {:.4}  over {} seeds", agg.mean_f1, agg.mean_surface, reports.len());
    Ok(())
}

fn eval_csv(reports: &[EvalReport], agg: &AggregateReport) -> String {
    let mut s = String::from("seed,mean_f1,mean_surface\n");
    for r in reports {
        let seed = r.seed.map(|v| v.to_string()).unwrap_or_default();
        s.push_str(&format!("{seed},{},{}\n", r.mean_f1, r.mean_surface));
    }
    s.push_str(&format!("mean,{},{}\n", agg.mean_f1, agg.mean_surface));
    s
}

fn cmd_taxonomize(a: TaxonomizeArgs) -> Result<()> {
    let mut c = resolve(&a.flags)?;
    c.model = Some(CorpusKind::Clustering);
    let inputs = load_inputs(&c)?;
    let b = backends(&c, &inputs.corpus)?;
    let out = out_dir(&c, "taxonomy")?;
    write(&out.join("config.toml"), &c.to_toml()?)?;
    let tax = TaxonomyConfig {
        min_cluster: a.min_cluster,
        depth: a.depth,
        child_k: a.child_k,
    };
    let mut cfg = c.fit.clone();
    cfg.seed = c.seeds[0];
    let tree = taxonomize(&inputs.corpus, &inputs.embeddings, &cfg, &tax, &b)?;
    write(&out.join("taxonomy.json"), &serde_json::to_string_pretty(&tree)?)?;
    write(&out.join("taxonomy.md"), &tree.to_markdown())?;
    print!("{}", tree.to_markdown());
    Ok(())
}

fn cmd_report_ts(a: ReportTsArgs) -> Result<()> {
    let c = run_config(&a.run)?;
    if c.model != Some(CorpusKind::Timeseries) {
        bail!("report-ts needs a time-series run");
    }
    let inputs = load_inputs(&c)?;
    let fits = load_fits(&a.run)?;
    let (_, r) = fits
        .iter()
        .find(|(s, _)| *s == a.seed)
        .ok_or_else(|| anyhow!("no fit for seed {} in {}", a.seed, a.run.display()))?;
    if r.provenance.config.ablation == Ablation::Shuffled {
        log::warn!("curves follow the original time order, not the shuffled one used for fitting");
    }
    let grounder = backends(&c, &inputs.corpus).map(|b| b.grounder).unwrap_or_else(|_| Grounder::oracle());
    let order = inputs.corpus.time_order().ok_or_else(|| anyhow!("corpus has no time index"))?;
    let ordered: Vec<_> = order.iter().map(|&i| &inputs.corpus.samples()[i]).collect();
    let mut s = String::from("predicate,k,t,f,low,high\n");
    for (k, p) in r.predicates.iter().enumerate() {
        let values = grounder.denote_samples(p, ordered.iter().copied())?;
        let curve = smoothed_frequency(&values);
        let (low, high) = shuffle_band(&values, a.runs, a.seed);
        let text = p.text.replace('"', "\"\"");
        for t in 0..values.len() {
            s.push_str(&format!("\"{text}\",{k},{},{},{},{}\n", t + 1, curve[t], low[t], high[t]));
        }
    }
    let out = a.out.unwrap_or_else(|| a.run.join(format!("curves_seed{}.csv", a.seed)));
    write(&out, &s)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn cmd_ttest(a: TtestArgs) -> Result<()> {
    let load = |p: &Path| -> Result<AggregateReport> {
        let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        Ok(serde_json::from_str(&text)?)
    };
    let (x, y) = (load(&a.a)?, load(&a.b)?);
    let fa: Vec<f64> = x.per_seed.iter().map(|s| s.mean_f1).collect();
    let fb: Vec<f64> = y.per_seed.iter().map(|s| s.mean_f1).collect();
    let t = paired_ttest_one_sided(&fa, &fb)?;
    println!("{}", serde_json::to_string(&t)?);
    Ok(())
}
