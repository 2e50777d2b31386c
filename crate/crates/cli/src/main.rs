use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufReader};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use diagnose_re::attack::{
    adversarial_set, attack_dataset, emit_adversarial_train, AttackConfig, AttackMethod, FlipUnit,
};
use diagnose_re::bias::{
    frequency_mask_train, masked_entity_set, oe_debiased_set, only_entity_set, selection_bias_set,
    selective_entity_mask, BiasConfig, EntityMaskMode,
};
use diagnose_re::corpus::{
    load_dataset, mark_instance, write_dataset, write_json, write_jsonl, Dataset, DatasetFormat, TOOL_NAME,
    TOOL_VERSION,
};
use diagnose_re::counterfactual::{cda_augment, contrast_from, CdaConfig};
use diagnose_re::lexicon::{token_stats, Lexicon};
use diagnose_re::oracle::wire::{serve_lines, serve_tcp, WireClient};
use diagnose_re::oracle::{conformance, train_reference, OracleHandle, ReferenceModel, TrainConfig, Transport};
use diagnose_re::perturb::{augment, build_robust_set, PerturbConfig, PerturbMode};
use diagnose_re::report::{emit_tables, evaluate, EvalOptions, EvalReport, Layout};
use diagnose_re::synth::{generate, SynthConfig};

/// Robustness and bias diagnostics for relation-extraction classifiers.
#[derive(Parser)]
#[command(name = "diagnose-re", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args, Serialize)]
struct Common {
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long, global = true)]
    #[serde(skip)]
    workers: Option<usize>,
    /// Lexical resource directory; the bundled resources are used when absent.
    #[arg(long, global = true, env = "DIAGNOSE_RE_RESOURCES")]
    resources: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    #[serde(skip)]
    out: Option<PathBuf>,
    /// Exit with status 1 when the share of failed instances exceeds this.
    #[arg(long, global = true, default_value_t = 0.05)]
    max_failure_rate: f64,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write the bundled planted-cue corpus (train and test splits).
    Synth(SynthArgs),
    /// Train the bag-of-embeddings reference model.
    TrainReference(TrainArgs),
    /// Build entity/context robust sets and augmented training data.
    Perturb(PerturbArgs),
    /// Run PWWS or HotFlip and emit adversarial sets.
    Attack(AttackArgs),
    /// Counterfactual masking: augmented training set and contrast set.
    Cda(CdaArgs),
    /// Selection- and semantic-bias sets and de-biased training data.
    Bias(BiasArgs),
    /// Score an oracle on a dataset.
    Eval(EvalArgs),
    /// Assemble evaluation reports into tables.
    Report(ReportArgs),
    /// Serve an oracle over the wire protocol.
    Serve(ServeArgs),
    /// Run the protocol conformance checks against an oracle.
    CheckOracle(CheckArgs),
}

#[derive(Args, Serialize)]
struct SynthArgs {
    #[arg(long, default_value_t = SynthConfig::default().train_per_label)]
    train_per_label: usize,
    #[arg(long, default_value_t = SynthConfig::default().test_per_label)]
    test_per_label: usize,
    #[arg(long, value_enum, default_value_t = Format::Jsonl)]
    format: Format,
}

#[derive(Args, Serialize, Clone)]
struct TrainOpts {
    #[arg(long, default_value_t = TrainConfig::default().dim)]
    dim: usize,
    #[arg(long, default_value_t = TrainConfig::default().epochs)]
    epochs: usize,
    #[arg(long, default_value_t = TrainConfig::default().learning_rate)]
    lr: f64,
    #[arg(long, default_value_t = TrainConfig::default().batch_size)]
    batch_size: usize,
    #[arg(long, default_value_t = TrainConfig::default().weight_decay)]
    weight_decay: f64,
}

impl TrainOpts {
    fn config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            dim: self.dim,
            epochs: self.epochs,
            learning_rate: self.lr,
            batch_size: self.batch_size,
            weight_decay: self.weight_decay,
            seed,
        }
    }
}

#[derive(Args, Serialize)]
struct TrainArgs {
    /// Training set.
    #[arg(long = "in", alias = "train")]
    input: PathBuf,
    #[command(flatten)]
    train: TrainOpts,
}

#[derive(Args, Serialize)]
struct PerturbArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, value_enum)]
    mode: ModeArg,
    /// Share of eligible context positions perturbed.
    #[arg(long, default_value_t = PerturbConfig::default().rate)]
    rate: f64,
    #[arg(long, default_value_t = PerturbConfig::default().audit_size)]
    audit_size: usize,
    /// Also write the input followed by its perturbed copies.
    #[arg(long)]
    augment_train: bool,
    /// Optional oracle offering fill-mask candidates.
    #[arg(long)]
    oracle: Option<String>,
}

#[derive(Args, Serialize)]
struct AttackArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    oracle: String,
    #[arg(long, value_enum)]
    method: MethodArg,
    #[arg(long, default_value_t = AttackConfig::default().epsilon)]
    epsilon: f64,
    #[arg(long, default_value_t = AttackConfig::default().beam_width)]
    beam: usize,
    #[arg(long, default_value_t = AttackConfig::default().max_flips)]
    max_flips: usize,
    #[arg(long, default_value_t = AttackConfig::default().candidate_pool)]
    candidate_pool: usize,
    /// PWWS substitution budget; unlimited by default.
    #[arg(long)]
    max_replacements: Option<usize>,
    #[arg(long, value_enum, default_value_t = UnitArg::Word)]
    unit: UnitArg,
    /// Allow edits inside entity mentions.
    #[arg(long)]
    attack_entities: bool,
    /// Also write the input followed by every successful adversarial example.
    #[arg(long)]
    emit_train: bool,
}

#[derive(Args, Serialize)]
struct CdaArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    oracle: String,
    #[arg(long, default_value_t = 1)]
    k: usize,
    #[arg(long, default_value_t = CdaConfig::default().steps)]
    steps: usize,
    /// NA label used when the dataset has none.
    #[arg(long, default_value = "NA")]
    na_label: String,
    /// Allow stopwords to be masked.
    #[arg(long)]
    keep_stopwords_eligible: bool,
    /// Train a reference model on the augmented set.
    #[arg(long)]
    retrain: bool,
    #[command(flatten)]
    train: TrainOpts,
}

#[derive(Args, Serialize)]
struct BiasArgs {
    #[arg(long, value_enum)]
    kind: KindArg,
    /// Evaluation set the bias views are built from.
    #[arg(long = "in")]
    input: Option<PathBuf>,
    /// Training set providing token statistics and the de-biasing target.
    #[arg(long)]
    train: Option<PathBuf>,
    /// Masked-entity view of the input.
    #[arg(long)]
    me: bool,
    /// Only-entity view of the input.
    #[arg(long)]
    oe: bool,
    /// Mask K percent of the training mentions.
    #[arg(long, value_name = "K")]
    mask_pct: Option<f64>,
    /// Frequency-driven masking of the training set.
    #[arg(long)]
    mask_freq: bool,
    #[arg(long, default_value_t = BiasConfig::default().freq_quantile)]
    freq_quantile: f64,
    #[arg(long, default_value_t = BiasConfig::default().mask_prob)]
    mask_prob: f64,
    #[arg(long, default_value_t = BiasConfig::default().pair_freq_quantile)]
    pair_quantile: f64,
    /// Oracle for the only-entity error set.
    #[arg(long)]
    oracle: Option<String>,
}

#[derive(Args, Serialize)]
struct EvalArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    oracle: String,
    /// Headline metric includes the NA label.
    #[arg(long)]
    include_na: bool,
    /// Report name, `model/column`.
    #[arg(long)]
    name: Option<String>,
    #[arg(long, default_value_t = EvalOptions::default().batch_size)]
    batch_size: usize,
}

#[derive(Args, Serialize)]
struct ReportArgs {
    #[arg(long, value_enum)]
    layout: LayoutArg,
    /// Evaluation report files written by `eval`.
    #[arg(required = true)]
    reports: Vec<PathBuf>,
}

#[derive(Args, Serialize)]
struct ServeArgs {
    #[arg(long)]
    oracle: String,
    /// Address to listen on.
    #[arg(long, conflicts_with = "stdio", required_unless_present = "stdio")]
    listen: Option<String>,
    /// Speak the protocol on standard input and output.
    #[arg(long)]
    stdio: bool,
}

#[derive(Args, Serialize)]
struct CheckArgs {
    #[arg(long)]
    oracle: String,
    /// Dataset supplying sample inputs.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value_t = 16)]
    samples: usize,
}

#[derive(ValueEnum, Clone, Copy, Serialize)]
#[serde(rename_all = "lowercase")]
enum Format {
    Jsonl,
    Json,
}

#[derive(ValueEnum, Clone, Copy, Serialize)]
#[serde(rename_all = "lowercase")]
enum ModeArg {
    Entity,
    Context,
    All,
}

#[derive(ValueEnum, Clone, Copy, Serialize)]
#[serde(rename_all = "lowercase")]
enum MethodArg {
    Pwws,
    Hotflip,
}

#[derive(ValueEnum, Clone, Copy, Serialize)]
#[serde(rename_all = "lowercase")]
enum UnitArg {
    Word,
    Char,
}

#[derive(ValueEnum, Clone, Copy, Serialize)]
#[serde(rename_all = "lowercase")]
enum KindArg {
    Selection,
    Semantic,
}

#[derive(ValueEnum, Clone, Copy, Serialize)]
#[serde(rename_all = "lowercase")]
enum LayoutArg {
    Randomization,
    Adversarial,
    Counterfactual,
    Selection,
    Semantic,
}

#[derive(Serialize)]
struct Input {
    path: String,
    count: usize,
    digest: String,
}

#[derive(Serialize)]
struct Failures {
    count: usize,
    total: usize,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    subcommand: &'static str,
    seed: u64,
    common: &'a Common,
    config: Value,
    inputs: Vec<Input>,
    outputs: Vec<String>,
    failures: Failures,
    summary: Value,
}

/// Collects what a run read and wrote for its manifest.
struct Run {
    out: PathBuf,
    inputs: Vec<Input>,
    outputs: Vec<String>,
    failures: Failures,
    summary: Value,
}

impl Run {
    fn new(out: Option<&Path>) -> Result<Self> {
        let out = out.ok_or_else(|| anyhow!("--out is required"))?.to_path_buf();
        fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
        Ok(Run { out, inputs: Vec::new(), outputs: Vec::new(), failures: Failures { count: 0, total: 0 }, summary: json!({}) })
    }

    fn load(&mut self, path: &Path) -> Result<(Dataset, DatasetFormat)> {
        let format = DatasetFormat::from_path(path)
            .ok_or_else(|| anyhow!("cannot tell the format of {} (expected .jsonl or .json)", path.display()))?;
        let ds = load_dataset(path, format).with_context(|| format!("loading {}", path.display()))?;
        self.inputs.push(Input { path: path.display().to_string(), count: ds.len(), digest: ds.digest() });
        Ok((ds, format))
    }

    fn dataset(&mut self, stem: &str, ds: &Dataset, format: DatasetFormat) -> Result<()> {
        let name = format!("{stem}.{}", extension(format));
        write_dataset(ds, &self.out.join(&name), format)?;
        self.outputs.push(name);
        Ok(())
    }

    fn json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<()> {
        write_json(&self.out.join(name), value)?;
        self.outputs.push(name.to_string());
        Ok(())
    }

    fn jsonl<T: Serialize>(&mut self, name: &str, items: &[T]) -> Result<()> {
        write_jsonl(&self.out.join(name), items)?;
        self.outputs.push(name.to_string());
        Ok(())
    }

    fn finish(self, subcommand: &'static str, common: &Common, config: Value) -> Result<Status> {
        let status = if self.failures.total > 0
            && self.failures.count as f64 / self.failures.total as f64 > common.max_failure_rate
        {
            Status::TooManyFailures
        } else {
            Status::Ok
        };
        let manifest = Manifest {
            tool: TOOL_NAME,
            version: TOOL_VERSION,
            subcommand,
            seed: common.seed,
            common,
            config,
            inputs: self.inputs,
            outputs: self.outputs,
            failures: self.failures,
            summary: self.summary,
        };
        write_json(&self.out.join("manifest.json"), &manifest)?;
        Ok(status)
    }
}

enum Status {
    Ok,
    TooManyFailures,
}

fn extension(format: DatasetFormat) -> &'static str {
    match format {
        DatasetFormat::OpenNreJsonl => "jsonl",
        DatasetFormat::TacredJson => "json",
    }
}

fn lexicon(common: &Common) -> Result<Lexicon> {
    match &common.resources {
        Some(dir) => Lexicon::load(dir).with_context(|| format!("loading resources from {}", dir.display())),
        None => Ok(Lexicon::bundled()),
    }
}

fn pool_size(common: &Common) -> usize {
    common.workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Parses `reference:<model>`, `wire:<address>` or `exec:<command>`.
fn open_transport(spec: &str, pool: usize) -> Result<Arc<dyn Transport>> {
    let (kind, rest) = spec.split_once(':').ok_or_else(|| anyhow!("oracle spec `{spec}` lacks a `kind:` prefix"))?;
    Ok(match kind {
        "reference" => {
            let model = ReferenceModel::load(Path::new(rest)).with_context(|| format!("loading model {rest}"))?;
            Arc::new(model)
        }
        "wire" => Arc::new(WireClient::connect_tcp(rest, pool, Some(Duration::from_secs(120)))?),
        "exec" => Arc::new(WireClient::spawn(rest, pool)?),
        other => bail!("unknown oracle kind `{other}` (expected reference, wire or exec)"),
    })
}

fn open_oracle(spec: &str, common: &Common) -> Result<OracleHandle> {
    Ok(OracleHandle::from_arc(open_transport(spec, pool_size(common))?))
}

fn config_of<T: Serialize>(args: &T) -> Value {
    serde_json::to_value(args).unwrap_or(Value::Null)
}

fn run(cli: Cli) -> Result<Status> {
    let common = &cli.common;
    if let Some(n) = common.workers {
        if n == 0 {
            bail!("--workers must be positive");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring worker pool")?;
    }
    let out = common.out.as_deref();
    match &cli.command {
        Cmd::Synth(a) => {
            let mut run = Run::new(out)?;
            let lex = lexicon(common)?;
            let config = SynthConfig {
                seed: common.seed,
                train_per_label: a.train_per_label,
                test_per_label: a.test_per_label,
                ..SynthConfig::default()
            };
            let corpus = generate(&lex, &config)?;
            let format = match a.format {
                Format::Jsonl => DatasetFormat::OpenNreJsonl,
                Format::Json => DatasetFormat::TacredJson,
            };
            run.dataset("train", &corpus.train, format)?;
            run.dataset("test", &corpus.test, format)?;
            run.summary = json!({"train": corpus.train.len(), "test": corpus.test.len()});
            run.finish("synth", common, json!({"args": config_of(a), "synth": config}))
        }
        Cmd::TrainReference(a) => {
            let mut run = Run::new(out)?;
            let (train, _) = run.load(&a.input)?;
            let config = a.train.config(common.seed);
            let model = train_reference(&train, &config)?;
            let name = "model.json";
            model.save(&run.out.join(name))?;
            run.outputs.push(name.into());
            let report = evaluate(&OracleHandle::new(model), &train, &EvalOptions::default())?;
            run.summary = json!({"train_accuracy": report.correct as f64 / report.count.max(1) as f64});
            run.finish("train-reference", common, json!({"args": config_of(a), "train": config}))
        }
        Cmd::Perturb(a) => {
            let mut run = Run::new(out)?;
            let (ds, format) = run.load(&a.input)?;
            let lex = lexicon(common)?;
            let oracle = a.oracle.as_deref().map(|s| open_oracle(s, common)).transpose()?;
            let mode = match a.mode {
                ModeArg::Entity => PerturbMode::Entity,
                ModeArg::Context => PerturbMode::Context,
                ModeArg::All => PerturbMode::All,
            };
            let config = PerturbConfig { rate: a.rate, seed: common.seed, audit_size: a.audit_size };
            let set = build_robust_set(&ds, mode, &lex, oracle.as_ref(), &config)?;
            run.dataset("robust", &set.robust, format)?;
            run.jsonl("audit.jsonl", &set.audit)?;
            run.json("skips.json", &set.report)?;
            if a.augment_train {
                run.dataset("augmented_train", &augment(&ds, &set.perturbed, mode), format)?;
            }
            let attempted = set.report.entity.attempted;
            run.failures = Failures { count: set.report.failures(), total: attempted };
            run.summary = json!({
                "robust": set.robust.len(),
                "entity": set.report.entity,
                "context": set.report.context,
            });
            run.finish("perturb", common, config_of(a))
        }
        Cmd::Attack(a) => {
            let mut run = Run::new(out)?;
            let (ds, format) = run.load(&a.input)?;
            let lex = lexicon(common)?;
            let oracle = open_oracle(&a.oracle, common)?;
            let config = AttackConfig {
                epsilon: a.epsilon,
                max_replacements: a.max_replacements,
                beam_width: a.beam,
                max_flips: a.max_flips,
                candidate_pool: a.candidate_pool,
                protect_entities: !a.attack_entities,
                ..AttackConfig::default()
            };
            let method = match a.method {
                MethodArg::Pwws => AttackMethod::Pwws,
                MethodArg::Hotflip => AttackMethod::Hotflip,
            };
            let unit = match a.unit {
                UnitArg::Word => FlipUnit::Word,
                UnitArg::Char => FlipUnit::Char,
            };
            let attack = attack_dataset(&oracle, &ds, method, &lex, unit, &config)?;
            run.dataset("adversarial", &adversarial_set(&ds, &attack, method, &a.oracle), format)?;
            run.jsonl("results.jsonl", &attack.results)?;
            run.json("summary.json", &attack.summary)?;
            if a.emit_train {
                run.dataset("adversarial_train", &emit_adversarial_train(&ds, &attack, method, &a.oracle), format)?;
            }
            run.summary = serde_json::to_value(&attack.summary)?;
            run.finish("attack", common, json!({"args": config_of(a), "attack": config}))
        }
        Cmd::Cda(a) => {
            let mut run = Run::new(out)?;
            let (ds, format) = run.load(&a.input)?;
            let lex = lexicon(common)?;
            let oracle = open_oracle(&a.oracle, common)?;
            let config =
                CdaConfig { k: a.k, steps: a.steps, na_label: a.na_label.clone(), exclude_stopwords: !a.keep_stopwords_eligible };
            let (augmented, output) = cda_augment(&ds, &oracle, &lex.stopwords, &config)?;
            let contrast = contrast_from(&ds, &output, &config);
            run.dataset("augmented", &augmented, format)?;
            run.dataset("contrast", &contrast, format)?;
            run.jsonl("masks.jsonl", &output.records)?;
            run.json("failures.json", &output.failures)?;
            if a.retrain {
                let model = train_reference(&augmented, &a.train.config(common.seed))?;
                model.save(&run.out.join("model.json"))?;
                run.outputs.push("model.json".into());
            }
            run.failures = Failures { count: output.failures.len(), total: ds.len() };
            run.summary = json!({
                "augmented": augmented.len(),
                "contrast": contrast.len(),
                "na_label": output.na_label,
                "na_added": output.na_added,
            });
            run.finish("cda", common, json!({"args": config_of(a), "cda": config}))
        }
        Cmd::Bias(a) => bias(a, common),
        Cmd::Eval(a) => {
            let mut run = Run::new(out)?;
            let (ds, _) = run.load(&a.input)?;
            let oracle = open_oracle(&a.oracle, common)?;
            let name = a.name.clone().unwrap_or_else(|| {
                a.input.file_stem().map_or_else(|| "dataset".into(), |s| s.to_string_lossy().into_owned())
            });
            let report = evaluate(&oracle, &ds, &EvalOptions { batch_size: a.batch_size, name })?.timeless();
            let headline = if a.include_na { &report.micro_f1_with_na } else { &report.micro_f1 };
            println!("{}: micro-F1 {:.4} ({} of {} correct)", report.dataset, headline.f1, report.correct, report.count);
            run.summary = json!({"f1": headline.f1, "include_na": a.include_na, "count": report.count, "correct": report.correct});
            run.json("report.json", &report)?;
            run.finish("eval", common, config_of(a))
        }
        Cmd::Report(a) => {
            let mut run = Run::new(out)?;
            let mut reports: BTreeMap<String, EvalReport> = BTreeMap::new();
            for path in &a.reports {
                let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                let report: EvalReport =
                    serde_json::from_str(&text).with_context(|| format!("parsing report {}", path.display()))?;
                if reports.insert(report.dataset.clone(), report).is_some() {
                    bail!("two reports are named `{}`", path.display());
                }
            }
            let layout = match a.layout {
                LayoutArg::Randomization => Layout::Randomization,
                LayoutArg::Adversarial => Layout::Adversarial,
                LayoutArg::Counterfactual => Layout::Counterfactual,
                LayoutArg::Selection => Layout::Selection,
                LayoutArg::Semantic => Layout::Semantic,
            };
            let files = emit_tables(&reports, layout, &run.out)?;
            print!("{}", fs::read_to_string(&files.text)?);
            run.outputs.extend(["report.txt", "report.csv", "report.json", "plot.csv"].map(String::from));
            run.finish("report", common, config_of(a))
        }
        Cmd::Serve(a) => {
            let transport = open_transport(&a.oracle, pool_size(common))?;
            if a.stdio {
                serve_lines(transport.as_ref(), BufReader::new(io::stdin()), io::stdout())?;
            } else {
                let addr = a.listen.as_deref().expect("clap enforces --listen or --stdio");
                let listener = TcpListener::bind(addr).with_context(|| format!("binding {addr}"))?;
                eprintln!("listening on {}", listener.local_addr()?);
                serve_tcp(transport, listener)?;
            }
            Ok(Status::Ok)
        }
        Cmd::CheckOracle(a) => {
            let mut run = Run::new(out)?;
            let (ds, _) = run.load(&a.input)?;
            let oracle = open_oracle(&a.oracle, common)?;
            let samples: Vec<Vec<String>> = ds.instances.iter().take(a.samples).map(|i| mark_instance(i).tokens).collect();
            let report = conformance::run(&oracle, &samples)?;
            for c in &report.checks {
                println!("{} {}: {}", if c.passed { "pass" } else { "FAIL" }, c.name, c.detail);
            }
            run.failures = Failures { count: report.failures().len(), total: report.checks.len() };
            run.json("conformance.json", &report)?;
            let config = config_of(a);
            let status = run.finish("check-oracle", common, config)?;
            Ok(if report.passed() { status } else { Status::TooManyFailures })
        }
    }
}

fn bias(a: &BiasArgs, common: &Common) -> Result<Status> {
    let mut run = Run::new(common.out.as_deref())?;
    let lex = lexicon(common)?;
    let config = BiasConfig {
        freq_quantile: a.freq_quantile,
        mask_prob: a.mask_prob,
        mask_pct: a.mask_pct.unwrap_or(BiasConfig::default().mask_pct),
        pair_freq_quantile: a.pair_quantile,
        seed: common.seed,
    };
    config.validate()?;
    let test = a.input.as_deref().map(|p| run.load(p)).transpose()?;
    let train = a.train.as_deref().map(|p| run.load(p)).transpose()?;
    let stats = train.as_ref().map(|(t, _)| token_stats(t, &lex.stopwords));
    let need_train = || anyhow!("this bias output needs --train");
    let need_test = || anyhow!("this bias output needs --in");
    let mut summary = serde_json::Map::new();
    match a.kind {
        KindArg::Selection => {
            if a.me || a.oe || a.mask_pct.is_some() {
                bail!("--me, --oe and --mask-pct belong to --kind semantic");
            }
            let stats = stats.as_ref().ok_or_else(need_train)?;
            if let Some((test, format)) = &test {
                let (set, audit) = selection_bias_set(test, stats, &lex, &config)?;
                run.dataset("selection", &set, *format)?;
                run.json("selection_audit.json", &audit)?;
                summary.insert("threshold".into(), json!(audit.threshold));
                summary.insert("replacements".into(), json!(audit.replacements.len()));
            }
            if a.mask_freq {
                let (train, format) = train.as_ref().ok_or_else(need_train)?;
                let (masked, counts) = frequency_mask_train(train, stats, &lex, &config)?;
                run.dataset("debiased_train", &masked, *format)?;
                summary.insert("mask_counts".into(), serde_json::to_value(counts)?);
            }
        }
        KindArg::Semantic => {
            if a.mask_pct.is_some() && a.mask_freq {
                bail!("--mask-pct and --mask-freq are exclusive");
            }
            if a.me {
                let (test, format) = test.as_ref().ok_or_else(need_test)?;
                run.dataset("me", &masked_entity_set(test), *format)?;
            }
            if a.oe {
                let (test, format) = test.as_ref().ok_or_else(need_test)?;
                let oe = only_entity_set(test);
                run.dataset("oe", &oe, *format)?;
                if let Some(spec) = &a.oracle {
                    let oracle = open_oracle(spec, common)?;
                    let errors = oe_debiased_set(test, &oracle)?;
                    let report = evaluate(&oracle, &oe, &EvalOptions { name: "oe".into(), ..EvalOptions::default() })?.timeless();
                    summary.insert("oe_errors".into(), json!(errors.len()));
                    summary.insert("oe_incorrect".into(), json!(report.count - report.correct));
                    run.dataset("oe_debiased", &errors, *format)?;
                    run.json("oe_report.json", &report)?;
                }
            }
            let mode = match (a.mask_pct, a.mask_freq) {
                (Some(k), _) => Some(EntityMaskMode::Percent(k)),
                (None, true) => Some(EntityMaskMode::Frequency(a.pair_quantile)),
                (None, false) => None,
            };
            if let Some(mode) = mode {
                let (train, format) = train.as_ref().ok_or_else(need_train)?;
                let stats = stats.as_ref().ok_or_else(need_train)?;
                let (masked, counts) = selective_entity_mask(train, mode, stats, common.seed)?;
                run.dataset("masked_train", &masked, *format)?;
                summary.insert("mask_counts".into(), serde_json::to_value(counts)?);
            }
        }
    }
    if run.outputs.is_empty() {
        bail!("nothing to do: pick --in and/or one of --me, --oe, --mask-pct, --mask-freq");
    }
    run.summary = Value::Object(summary);
    run.finish("bias", common, json!({"args": config_of(a), "bias": config}))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(io::stderr)
        .init();
    match run(cli) {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::TooManyFailures) => {
            eprintln!("error: per-instance failures exceed the threshold; see manifest.json");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
