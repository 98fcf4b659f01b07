use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use selfneg_core::evaluation::{run_coref_suite, run_gh22_replication, run_scnt, EvaluationReport, Gh22Options};
use selfneg_core::lexicon::{
    build_verb_candidates, filter_monotokenized, load_names, load_professions, Gender, NameEntry,
    Profession, VerbLexicon, WordList,
};
use selfneg_core::model::protocol::handle_request;
use selfneg_core::model::{
    BackendDescriptor, Client, FnBackend, MaskedLm, MatchPolicy, MockBackend, MockKind, PredictionCache, RetryPolicy,
    DEFAULT_BATCH_SIZE, DEFAULT_WORKERS,
};
use selfneg_core::patterns::{
    render_scnt, write_examples_jsonl, CorefKind, CorefMode, ScntPattern, TargetFamily, Triplet,
};
use selfneg_core::reporting::{
    diff_runs, emit_coref_table, emit_table, file_sha256, RunManifest, TableFormat, TableShape,
};
use selfneg_core::selection::{select_triplets, SelectionConfig, SelectionSet, DEFAULT_MAX_VERBS_PER_PAIR};

#[derive(Parser)]
#[command(name = "selfneg", version, about = "Minimal-pair negation probing for masked language models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the single-token verb lexicon for a backend's tokenizer.
    Lexicon(LexiconArgs),
    /// Select triplets whose CpTp rendering repeats the verb.
    Select(SelectArgs),
    /// Evaluate a backend and write report, tables and manifest.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Lay out saved reports as a table.
    Table(TableArgs),
    /// Compare two reports pattern by pattern.
    Diff(DiffArgs),
    /// Write rendered examples as JSON lines.
    Render(RenderArgs),
    /// Serve a mock backend over the wire protocol.
    ServeMock(ServeArgs),
}

#[derive(Args, Clone)]
struct BackendArgs {
    /// Backend id: mock:perfect, mock:blind, or a checkpoint name served at --endpoint.
    #[arg(long, default_value = "mock:perfect")]
    backend: String,
    /// Inference server: http(s)://... or stdio:<command>.
    #[arg(long, env = "SELFNEG_ENDPOINT")]
    endpoint: Option<String>,
    /// Append-only prediction cache file.
    #[arg(long)]
    cache: Option<PathBuf>,
    /// Maximum number of requests in flight.
    #[arg(long, default_value_t = DEFAULT_WORKERS)]
    workers: usize,
    /// Texts per backend request.
    #[arg(long, default_value_t = DEFAULT_BATCH_SIZE)]
    batch_size: usize,
    /// Compare predictions with the ACT token ignoring case.
    #[arg(long)]
    case_insensitive: bool,
}

impl BackendArgs {
    fn client(&self) -> Result<Client> {
        let descriptor = BackendDescriptor::parse(&self.backend, self.endpoint.as_deref())?;
        let backend = descriptor.connect(RetryPolicy::default())?;
        let policy = if self.case_insensitive {
            MatchPolicy::CaseInsensitive
        } else {
            MatchPolicy::CaseSensitive
        };
        let mut client = Client::new(backend)
            .with_workers(self.workers)
            .with_batch_size(self.batch_size)
            .with_match_policy(policy);
        if let Some(path) = &self.cache {
            let cache = PredictionCache::open(path)
                .with_context(|| format!("opening cache {}", path.display()))?;
            client = client.with_cache(Arc::new(cache));
        }
        Ok(client)
    }
}

#[derive(Args, Clone)]
struct LexiconFiles {
    /// Tab-separated `Name<TAB>feminine|masculine` lines.
    #[arg(long)]
    names: PathBuf,
    /// One profession per line, optionally `<TAB>a|an`.
    #[arg(long)]
    professions: PathBuf,
    /// Keep only the first N names of each gender.
    #[arg(long)]
    names_limit: Option<usize>,
    /// Keep only the first N professions.
    #[arg(long)]
    profs_limit: Option<usize>,
}

struct Lexicons {
    names: Vec<NameEntry>,
    professions: Vec<Profession>,
    hashes: BTreeMap<String, String>,
}

impl LexiconFiles {
    fn load(&self) -> Result<Lexicons> {
        let mut names = load_names(&self.names)?;
        if let Some(limit) = self.names_limit {
            let mut kept = BTreeMap::<Gender, usize>::new();
            names.retain(|n| {
                let c = kept.entry(n.gender).or_default();
                *c += 1;
                *c <= limit
            });
        }
        let mut professions = load_professions(&self.professions)?;
        if let Some(limit) = self.profs_limit {
            professions.truncate(limit);
        }
        let mut hashes = BTreeMap::new();
        hashes.insert("names".into(), file_sha256(&self.names)?);
        hashes.insert("professions".into(), file_sha256(&self.professions)?);
        Ok(Lexicons {
            names,
            professions,
            hashes,
        })
    }
}

#[derive(Args, Clone)]
struct SelectionFlags {
    /// Verb lexicon written by `selfneg lexicon`.
    #[arg(long)]
    verbs: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_MAX_VERBS_PER_PAIR)]
    max_verbs_per_pair: usize,
    /// pronoun, repeat, same-gender or other-gender.
    #[arg(long, default_value = "pronoun")]
    coref: CorefKind,
    /// happy or really_likes.
    #[arg(long, default_value = "happy")]
    target_family: TargetFamily,
}

impl SelectionFlags {
    fn config(&self) -> SelectionConfig {
        SelectionConfig {
            max_verbs_per_pair: self.max_verbs_per_pair,
            seed: self.seed,
            coref: self.coref,
            target_family: self.target_family,
            ..SelectionConfig::default()
        }
    }
}

#[derive(Args)]
struct LexiconArgs {
    #[command(flatten)]
    backend: BackendArgs,
    /// Intransitive-verb word list.
    #[arg(long)]
    intransitive: PathBuf,
    /// Second verb list to cross-reference.
    #[arg(long)]
    verbnet: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SelectArgs {
    #[command(flatten)]
    backend: BackendArgs,
    #[command(flatten)]
    lexicons: LexiconFiles,
    #[command(flatten)]
    selection: SelectionFlags,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum EvalCommand {
    /// All five patterns on one selection.
    Scnt(EvalScntArgs),
    /// Re-select and evaluate under each coreference control mode.
    Coref(EvalCorefArgs),
    /// The eight-pattern replication grid.
    Gh22(EvalGh22Args),
}

#[derive(Args)]
struct EvalScntArgs {
    #[command(flatten)]
    backend: BackendArgs,
    /// Evaluate a saved selection instead of selecting from lexicons.
    #[arg(long, conflicts_with_all = ["names", "professions", "verbs"])]
    selection: Option<PathBuf>,
    #[arg(long)]
    names: Option<PathBuf>,
    #[arg(long)]
    professions: Option<PathBuf>,
    #[arg(long)]
    verbs: Option<PathBuf>,
    #[arg(long)]
    names_limit: Option<usize>,
    #[arg(long)]
    profs_limit: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_MAX_VERBS_PER_PAIR)]
    max_verbs_per_pair: usize,
    #[arg(long, default_value = "pronoun")]
    coref: CorefKind,
    #[arg(long, default_value = "happy")]
    target_family: TargetFamily,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct EvalCorefArgs {
    #[command(flatten)]
    backend: BackendArgs,
    #[command(flatten)]
    lexicons: LexiconFiles,
    #[command(flatten)]
    selection: SelectionFlags,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct EvalGh22Args {
    #[command(flatten)]
    backend: BackendArgs,
    #[command(flatten)]
    lexicons: LexiconFiles,
    /// Also evaluate the variants with discourse connectives.
    #[arg(long)]
    connectives: bool,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct TableArgs {
    /// One report, or several coreference-mode reports for table7.
    #[arg(long = "report", required = true)]
    reports: Vec<PathBuf>,
    /// table2, table5 or table7.
    #[arg(long, default_value = "table5")]
    shape: TableShape,
    /// markdown or csv.
    #[arg(long, default_value = "markdown")]
    format: TableFormat,
}

#[derive(Args)]
struct DiffArgs {
    a: PathBuf,
    b: PathBuf,
    /// Print the diff as JSON.
    #[arg(long)]
    json: bool,
    /// Exit with status 2 when a rate changed under the same setup.
    #[arg(long)]
    strict: bool,
}

#[derive(Args)]
struct RenderArgs {
    /// Render every triplet of this selection.
    #[arg(long)]
    selection: Option<PathBuf>,
    #[arg(long, default_value = "CpTp")]
    pattern: ScntPattern,
    #[arg(long, required_unless_present = "selection")]
    name: Option<String>,
    #[arg(long, default_value = "feminine")]
    gender: Gender,
    #[arg(long, required_unless_present = "selection")]
    profession: Option<String>,
    #[arg(long, required_unless_present = "selection")]
    verb: Option<String>,
    #[arg(long, default_value = "happy")]
    target_family: TargetFamily,
    /// Output file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "perfect")]
    kind: MockKind,
    /// Listen for HTTP on this address instead of speaking over stdio.
    #[arg(long)]
    http: Option<String>,
    /// Answer as this backend id instead of the mock's own.
    #[arg(long)]
    backend_id: Option<String>,
}

/// Collects written files and records them in the manifest.
struct Outputs {
    dir: PathBuf,
    written: Vec<String>,
}

impl Outputs {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Outputs {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, content: &str) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, content).with_context(|| format!("writing {}", path.display()))?;
        self.written.push(name.to_string());
        Ok(())
    }

    fn selection(&mut self, name: &str, sel: &SelectionSet) -> Result<()> {
        self.write(name, &sel.to_jsonl())
    }

    fn report(&mut self, stem: &str, report: &EvaluationReport) -> Result<()> {
        self.write(&format!("{stem}.json"), &report.to_json())?;
        self.write(&format!("{stem}.csv"), &report.to_csv())
    }

    fn table(&mut self, stem: &str, render: impl Fn(TableFormat) -> selfneg_core::Result<String>) -> Result<String> {
        let md = render(TableFormat::Markdown)?;
        self.write(&format!("{stem}.md"), &md)?;
        self.write(&format!("{stem}.csv"), &render(TableFormat::Csv)?)?;
        Ok(md)
    }

    fn finish(mut self, mut manifest: RunManifest, client: &Client) -> Result<()> {
        self.written.push("manifest.json".into());
        manifest.finish(client.cache_stats(), self.written.clone());
        manifest.save(self.dir.join("manifest.json"))?;
        Ok(())
    }
}

fn print_stats(sel: &SelectionSet) {
    let s = &sel.stats;
    println!("available verbs     {}", s.available_verbs);
    println!("available pairs     {}", s.available_pairs);
    println!("tested triplets     {}", s.tested_triplets);
    println!("repeating triplets  {}", s.repeating_triplets);
    println!("ratio               {:.1}", s.ratio);
    println!("selected triplets   {}", s.selected_triplets);
}

fn cmd_lexicon(args: LexiconArgs) -> Result<()> {
    let client = args.backend.client()?;
    let candidates = build_verb_candidates(&WordList::load(&args.intransitive)?, &WordList::load(&args.verbnet)?)?;
    let lexicon = filter_monotokenized(&candidates, &client)?;
    lexicon.save(&args.out)?;
    println!("{} candidates, {} verbs", candidates.verbs.len(), lexicon.len());
    Ok(())
}

fn cmd_select(args: SelectArgs) -> Result<()> {
    let client = args.backend.client()?;
    let lex = args.lexicons.load()?;
    let verbs = VerbLexicon::load(&args.selection.verbs)?;
    let sel = select_triplets(&client, &lex.names, &lex.professions, &verbs, &args.selection.config())?;
    sel.save(&args.out)?;
    print_stats(&sel);
    Ok(())
}

fn manifest_for(
    command: &str,
    client: &Client,
    hashes: BTreeMap<String, String>,
    seed: u64,
    config: serde_json::Value,
) -> RunManifest {
    RunManifest::new(command, client.backend_id(), hashes, seed, config)
}

fn cmd_eval_scnt(args: EvalScntArgs) -> Result<()> {
    let client = args.backend.client()?;
    let mut out = Outputs::new(&args.out)?;
    let mut hashes = BTreeMap::new();
    let selection = match &args.selection {
        Some(path) => {
            hashes.insert("selection".into(), file_sha256(path)?);
            SelectionSet::load(path)?
        }
        None => {
            let (Some(names), Some(professions), Some(verbs)) = (&args.names, &args.professions, &args.verbs) else {
                bail!("either --selection or all of --names, --professions and --verbs are required");
            };
            let files = LexiconFiles {
                names: names.clone(),
                professions: professions.clone(),
                names_limit: args.names_limit,
                profs_limit: args.profs_limit,
            };
            let lex = files.load()?;
            hashes = lex.hashes;
            hashes.insert("verbs".into(), file_sha256(verbs)?);
            let config = SelectionConfig {
                max_verbs_per_pair: args.max_verbs_per_pair,
                seed: args.seed,
                coref: args.coref,
                target_family: args.target_family,
                ..SelectionConfig::default()
            };
            let sel = select_triplets(&client, &lex.names, &lex.professions, &VerbLexicon::load(verbs)?, &config)?;
            out.selection("selection.jsonl", &sel)?;
            sel
        }
    };
    let config = serde_json::to_value(&selection.config)?;
    let manifest = manifest_for("eval scnt", &client, hashes, selection.config.seed, config);
    let mut report = run_scnt(&client, &selection)?;
    report.run_id = Some(manifest.run_id.clone());
    out.report("report", &report)?;
    let md = out.table("table5", |f| emit_table(&report, TableShape::Table5, f))?;
    out.finish(manifest, &client)?;
    print!("{md}");
    Ok(())
}

fn cmd_eval_coref(args: EvalCorefArgs) -> Result<()> {
    let client = args.backend.client()?;
    let lex = args.lexicons.load()?;
    let verbs = VerbLexicon::load(&args.selection.verbs)?;
    let mut hashes = lex.hashes.clone();
    hashes.insert("verbs".into(), file_sha256(&args.selection.verbs)?);
    let config = args.selection.config();
    let manifest = manifest_for(
        "eval coref",
        &client,
        hashes,
        config.seed,
        serde_json::to_value(&config)?,
    );
    let mut out = Outputs::new(&args.out)?;
    let runs = run_coref_suite(&client, &lex.names, &lex.professions, &verbs, &config)?;
    let mut reports = Vec::new();
    for run in runs {
        let mode = run.selection.config.coref;
        let mut report = run.report;
        report.run_id = Some(manifest.run_id.clone());
        out.selection(&format!("selection-{mode}.jsonl"), &run.selection)?;
        out.report(&format!("report-{mode}"), &report)?;
        reports.push(report);
    }
    let md = out.table("table7", |f| emit_coref_table(&reports, f))?;
    out.finish(manifest, &client)?;
    print!("{md}");
    Ok(())
}

fn cmd_eval_gh22(args: EvalGh22Args) -> Result<()> {
    let client = args.backend.client()?;
    let lex = args.lexicons.load()?;
    let manifest = manifest_for(
        "eval gh22",
        &client,
        lex.hashes.clone(),
        0,
        serde_json::json!({ "connectives": args.connectives }),
    );
    let mut out = Outputs::new(&args.out)?;
    let mut report = run_gh22_replication(
        &client,
        &lex.names,
        &lex.professions,
        Gh22Options {
            connectives: args.connectives,
        },
    )?;
    report.run_id = Some(manifest.run_id.clone());
    out.report("report", &report)?;
    let md = out.table("table2", |f| emit_table(&report, TableShape::Table2, f))?;
    out.finish(manifest, &client)?;
    print!("{md}");
    Ok(())
}

fn cmd_table(args: TableArgs) -> Result<()> {
    let reports = args
        .reports
        .iter()
        .map(EvaluationReport::load)
        .collect::<selfneg_core::Result<Vec<_>>>()?;
    let text = match (args.shape, reports.as_slice()) {
        (TableShape::Table7, _) => emit_coref_table(&reports, args.format)?,
        (shape, [one]) => emit_table(one, shape, args.format)?,
        _ => bail!("only table7 combines several reports"),
    };
    print!("{text}");
    Ok(())
}

fn cmd_diff(args: DiffArgs) -> Result<()> {
    let diff = diff_runs(&EvaluationReport::load(&args.a)?, &EvaluationReport::load(&args.b)?)?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&diff)?);
    } else {
        print!("{}", diff.to_markdown());
    }
    if args.strict && diff.flagged().next().is_some() {
        std::process::exit(2);
    }
    Ok(())
}

fn cmd_render(args: RenderArgs) -> Result<()> {
    let examples = match &args.selection {
        Some(path) => {
            let sel = SelectionSet::load(path)?;
            sel.triplets
                .iter()
                .map(|t| render_scnt(&t.triplet, args.pattern, &t.coref, sel.config.target_family))
                .collect::<selfneg_core::Result<Vec<_>>>()?
        }
        None => {
            let name = NameEntry::new(args.name.clone().unwrap_or_default(), args.gender)?;
            let profession = Profession::new(args.profession.clone().unwrap_or_default(), None)?;
            let triplet = Triplet::new(name, profession, args.verb.clone().unwrap_or_default());
            vec![render_scnt(&triplet, args.pattern, &CorefMode::PRONOUN, args.target_family)?]
        }
    };
    match &args.out {
        Some(path) => {
            let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
            let mut w = io::BufWriter::new(file);
            write_examples_jsonl(&mut w, &examples)?;
            w.flush()?;
        }
        None => write_examples_jsonl(io::stdout().lock(), &examples)?,
    }
    Ok(())
}

fn cmd_serve_mock(args: ServeArgs) -> Result<()> {
    let mock = MockBackend::new(args.kind);
    let backend: Box<dyn MaskedLm> = match &args.backend_id {
        Some(id) => Box::new(FnBackend::new(id.clone(), move |t| mock.top1(t))),
        None => Box::new(mock),
    };
    let backend = backend.as_ref();
    match args.http {
        None => {
            let stdout = io::stdout();
            for line in io::stdin().lock().lines() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let (_, body) = handle_request(backend, &line);
                let mut out = stdout.lock();
                writeln!(out, "{body}")?;
                out.flush()?;
            }
        }
        Some(addr) => {
            let server = tiny_http::Server::http(&addr).map_err(|e| anyhow::anyhow!("binding {addr}: {e}"))?;
            eprintln!("serving {} on http://{}", backend.backend_id(), server.server_addr());
            let json = tiny_http::Header::from_bytes("Content-Type", "application/json").expect("static header");
            for mut request in server.incoming_requests() {
                let mut body = String::new();
                let (status, reply) = match request.as_reader().read_to_string(&mut body) {
                    Ok(_) => handle_request(backend, &body),
                    Err(e) => (400, serde_json::json!({ "error": e.to_string() }).to_string()),
                };
                let response = tiny_http::Response::from_string(reply)
                    .with_status_code(status)
                    .with_header(json.clone());
                if let Err(e) = request.respond(response) {
                    log::warn!("failed to respond: {e}");
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Lexicon(a) => cmd_lexicon(a),
        Command::Select(a) => cmd_select(a),
        Command::Eval(EvalCommand::Scnt(a)) => cmd_eval_scnt(a),
        Command::Eval(EvalCommand::Coref(a)) => cmd_eval_coref(a),
        Command::Eval(EvalCommand::Gh22(a)) => cmd_eval_gh22(a),
        Command::Table(a) => cmd_table(a),
        Command::Diff(a) => cmd_diff(a),
        Command::Render(a) => cmd_render(a),
        Command::ServeMock(a) => cmd_serve_mock(a),
    }
}
