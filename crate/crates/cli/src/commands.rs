use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use abx_core::embed::{self, EmbedError, EmbeddingStore, RemoteClient, HASH_MODEL_ID};
use abx_core::eval::{self, CvOptions, CvReport, Learner, MetricSet, ReportConfig};
use abx_core::gbt::GbtConfig;
use abx_core::ingest::{
    self, build_dataset, cohort_summary, linked_note_ids, BuildOptions, IngestError, NoteIndex,
    SpecimenCategories,
};
use abx_core::mlp::MlpConfig;
use abx_core::report;
use abx_core::synth::{synth_generate, SynthConfig};
use abx_core::{BinaryLabel, ClinicalNote, SusceptibilityRecord};
use log::{info, warn};

use crate::args::{
    CheckServiceArgs, EmbedArgs, EmbedMode, EvaluateArgs, IngestArgs, InputArgs, ModelChoice, PositiveClass, ReportArgs,
    StoreFormat, StubServerArgs, SynthArgs,
};

/// Failures of a well-formed command. All of them exit with status 2.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Ingest { path: PathBuf, source: IngestError },
    #[error("{path}: {source}")]
    Store { path: PathBuf, source: EmbedError },
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Dataset(#[from] IngestError),
    #[error("{0}")]
    Synth(#[from] abx_core::synth::SynthError),
    #[error("cross-validation of {model} on {antibiotic} failed: {source}")]
    Eval { model: String, antibiotic: String, source: eval::EvalError },
    #[error("{path}: invalid report: {source}")]
    Report { path: PathBuf, source: serde_json::Error },
    #[error("{0}")]
    Invalid(String),
}

type Result<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(io_err(path))
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    fs::write(path, contents).map_err(io_err(path))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(io_err(path))
}

fn report_row_errors(path: &Path, errors: &[ingest::RowError], skipped: usize) {
    for e in errors.iter().take(10) {
        warn!("{}:{}: {}", path.display(), e.line, e.message);
    }
    if errors.len() > 10 {
        warn!("{}: {} more row errors", path.display(), errors.len() - 10);
    }
    if !errors.is_empty() || skipped > 0 {
        warn!("{}: {} rows with errors, {} rows skipped", path.display(), errors.len(), skipped);
    }
}

struct Inputs {
    records: Vec<SusceptibilityRecord>,
    notes: Vec<ClinicalNote>,
}

fn read_inputs(input: &InputArgs) -> Result<Inputs> {
    let micro_path = input.micro_path();
    let micro = ingest::parse_microbiology(open(&micro_path)?)
        .map_err(|source| CliError::Ingest { path: micro_path.clone(), source })?;
    report_row_errors(&micro_path, &micro.row_errors, micro.skipped);

    let notes_path = input.notes_path();
    let notes = ingest::parse_notes(open(&notes_path)?)
        .map_err(|source| CliError::Ingest { path: notes_path.clone(), source })?;
    report_row_errors(&notes_path, &notes.row_errors, notes.skipped);

    info!("{} susceptibility records, {} notes", micro.items.len(), notes.items.len());
    Ok(Inputs { records: micro.items, notes: notes.items })
}

fn load_categories(path: &Option<PathBuf>) -> Result<SpecimenCategories> {
    match path {
        None => Ok(SpecimenCategories::default()),
        Some(p) => SpecimenCategories::from_csv(open(p)?)
            .map_err(|source| CliError::Ingest { path: p.clone(), source }),
    }
}

fn antibiotic_list(requested: &[String]) -> Result<Vec<String>> {
    let names: Vec<String> = if requested.is_empty() {
        ingest::DEFAULT_ANTIBIOTICS.iter().map(|s| s.to_string()).collect()
    } else {
        requested.iter().map(|s| ingest::canonical_antibiotic(s)).collect()
    };
    let mut seen = BTreeSet::new();
    let names: Vec<String> = names.into_iter().filter(|n| !n.is_empty() && seen.insert(n.clone())).collect();
    if names.is_empty() {
        return Err(CliError::Invalid("antibiotic list is empty".into()));
    }
    Ok(names)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    write_file(path, s.as_bytes())
}

pub fn synth(args: &SynthArgs) -> Result<()> {
    let config = SynthConfig {
        n_cultures: args.n,
        dim: args.dim,
        n_antibiotics: args.n_antibiotics,
        class_sep: args.class_sep,
        label_balance: args.label_balance,
        seed: args.seed,
        hash_seed: args.hash_seed,
    };
    let out = synth_generate(&config)?;
    create_dir(&args.out_dir)?;
    write_file(&args.out_dir.join("microbiology.csv"), out.microbiology_csv.as_bytes())?;
    write_file(&args.out_dir.join("notes.csv"), out.notes_csv.as_bytes())?;
    let store_path = args.out_dir.join("embeddings.abxe");
    save_store_file(&out.store, &store_path, StoreFormat::Bin)?;
    info!(
        "wrote {} cultures, {} embeddings, antibiotics {}",
        args.n,
        out.store.len(),
        out.antibiotics.join(", ")
    );
    Ok(())
}

pub fn ingest(args: &IngestArgs) -> Result<()> {
    let inputs = read_inputs(&args.input)?;
    let categories = load_categories(&args.categories)?;
    let summary = cohort_summary(&inputs.records, &inputs.notes, &categories);
    let out_dir = args.out_dir.clone().unwrap_or_else(|| args.input.data_dir.clone());
    create_dir(&out_dir)?;
    write_json(&out_dir.join("cohort_summary.json"), &summary)?;
    info!(
        "{} of {} cultures included, {} subjects",
        summary.cultures_included, summary.cultures_total, summary.subjects
    );
    Ok(())
}

fn save_store_file(store: &EmbeddingStore, path: &Path, format: StoreFormat) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    let written = match format {
        StoreFormat::Bin => embed::save_store(store, &mut out),
        StoreFormat::Csv => embed::save_store_csv(store, &mut out),
    };
    written.map_err(|source| CliError::Store { path: path.to_path_buf(), source })?;
    out.flush().map_err(io_err(path))
}

fn load_store_file(path: &Path) -> Result<EmbeddingStore> {
    if !path.exists() {
        return Err(CliError::Invalid(format!("embedding store not found: {}", path.display())));
    }
    let input = open(path)?;
    let loaded = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        embed::load_store_csv(input, "unknown")
    } else {
        embed::load_store(input)
    };
    loaded.map_err(|source| CliError::Store { path: path.to_path_buf(), source })
}

fn resolve_endpoint(flag: &Option<String>) -> Result<String> {
    flag.clone()
        .or_else(|| std::env::var(embed::ENDPOINT_ENV).ok())
        .filter(|s| !s.trim().is_empty())
        .ok_or_else(|| {
            CliError::Invalid(format!("no endpoint: pass --endpoint or set {}", embed::ENDPOINT_ENV))
        })
}

struct EmbedPlan<'a> {
    mode: EmbedMode,
    endpoint: &'a Option<String>,
    timeout: f64,
    dim: usize,
    hash_seed: u64,
}

/// Embeds exactly the notes in `wanted`, in note-id order.
fn embed_notes(notes: &[ClinicalNote], wanted: &BTreeSet<u64>, plan: &EmbedPlan) -> Result<EmbeddingStore> {
    let selected: Vec<&ClinicalNote> = {
        let by_id: BTreeMap<u64, &ClinicalNote> = notes.iter().map(|n| (n.note_id, n)).collect();
        wanted.iter().filter_map(|id| by_id.get(id).copied()).collect()
    };
    match plan.mode {
        EmbedMode::Hash => {
            let mut store = EmbeddingStore::new(plan.dim, HASH_MODEL_ID)?;
            for note in selected {
                store.insert(note.note_id, embed::hash_embed(&note.text, plan.dim, plan.hash_seed))?;
            }
            Ok(store)
        }
        EmbedMode::Remote => {
            let endpoint = resolve_endpoint(plan.endpoint)?;
            if !(plan.timeout.is_finite() && plan.timeout > 0.0) {
                return Err(CliError::Invalid("--timeout must be positive".into()));
            }
            let texts: Vec<String> = selected.iter().map(|n| n.text.clone()).collect();
            let client = RemoteClient::new(endpoint, Duration::from_secs_f64(plan.timeout));
            let fetched = client.fetch(&texts)?;
            if fetched.truncated > 0 {
                warn!("{} notes were truncated by the embedding service", fetched.truncated);
            }
            let dim = if fetched.vectors.is_empty() { plan.dim } else { fetched.dim };
            let mut store = EmbeddingStore::new(dim, fetched.model_id)?;
            for (note, vector) in selected.iter().zip(fetched.vectors) {
                store.insert(note.note_id, vector)?;
            }
            Ok(store)
        }
        EmbedMode::Store => unreachable!("store mode reads an existing store"),
    }
}

pub fn embed(args: &EmbedArgs) -> Result<()> {
    if args.mode == EmbedMode::Store {
        return Err(CliError::Invalid("embed needs --mode hash or --mode remote".into()));
    }
    let inputs = read_inputs(&args.input)?;
    let antibiotics = antibiotic_list(&args.antibiotics)?;
    let index = NoteIndex::new(&inputs.notes);
    let wanted = linked_note_ids(&antibiotics, &inputs.records, &index, args.max_notes);
    let plan = EmbedPlan {
        mode: args.mode,
        endpoint: &args.endpoint,
        timeout: args.timeout,
        dim: args.dim,
        hash_seed: args.hash_seed,
    };
    let store = embed_notes(&inputs.notes, &wanted, &plan)?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    save_store_file(&store, &args.out, args.format)?;
    info!("embedded {} notes (model {}, dim {})", store.len(), store.model_id(), store.dim());
    Ok(())
}

fn learners(choice: ModelChoice) -> Vec<Learner> {
    let gbt = Learner::Gbt(GbtConfig::default());
    let mlp = Learner::Mlp(MlpConfig::default());
    match choice {
        ModelChoice::Gbt => vec![gbt],
        ModelChoice::Mlp => vec![mlp],
        ModelChoice::Both => vec![gbt, mlp],
    }
}

fn write_figures(report: &CvReport, out_dir: &Path) -> Result<()> {
    write_file(&out_dir.join("figure.csv"), report::figure_csv(report).as_bytes())?;
    write_file(&out_dir.join("figure.svg"), report::figure_svg(report).as_bytes())
}

pub fn evaluate(args: &EvaluateArgs) -> Result<()> {
    if args.k < 2 {
        return Err(CliError::Invalid("--k must be at least 2".into()));
    }
    if !(0.0..=1.0).contains(&args.threshold) {
        return Err(CliError::Invalid("--threshold must be in [0, 1]".into()));
    }
    let antibiotics = antibiotic_list(&args.antibiotics)?;
    let store_path = args.input.store_path(&args.store);
    let inputs = read_inputs(&args.input)?;
    let categories = load_categories(&args.categories)?;
    let index = NoteIndex::new(&inputs.notes);

    let store = match args.embed_mode {
        EmbedMode::Store => load_store_file(&store_path)?,
        mode => {
            let wanted = linked_note_ids(&antibiotics, &inputs.records, &index, args.max_notes);
            let plan = EmbedPlan {
                mode,
                endpoint: &args.endpoint,
                timeout: args.timeout,
                dim: args.dim,
                hash_seed: args.hash_seed,
            };
            embed_notes(&inputs.notes, &wanted, &plan)?
        }
    };

    let positive_class = match args.positive_class {
        PositiveClass::Resistant => BinaryLabel::Resistant,
        PositiveClass::Sensitive => BinaryLabel::Sensitive,
    };
    let options = CvOptions {
        k: args.k,
        seed: args.seed,
        threshold: args.threshold,
        positive_class,
        group_by_subject: args.group_by_subject,
    };
    let build = BuildOptions { max_notes: args.max_notes, ..BuildOptions::default() };
    let learners = learners(args.model);

    let mut results: BTreeMap<(String, String), Vec<MetricSet>> = BTreeMap::new();
    for antibiotic in &antibiotics {
        let (dataset, stats) = match build_dataset(antibiotic, &inputs.records, &index, &store, build) {
            Ok(built) => built,
            Err(IngestError::InsufficientClassSupport { antibiotic, sensitive: 0, resistant: 0 }) => {
                warn!("skipping {antibiotic}: no included cultures were tested against it");
                continue;
            }
            Err(IngestError::InsufficientClassSupport { antibiotic, sensitive, resistant }) => {
                warn!("skipping {antibiotic}: {sensitive} sensitive, {resistant} resistant (need 2 of each)");
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        info!(
            "{antibiotic}: {} tested, {} no growth, {} without notes, {} included",
            stats.tested, stats.excluded_no_growth, stats.excluded_no_notes, stats.included
        );
        let dataset = if args.permute_labels { dataset.with_permuted_labels(args.seed) } else { dataset };
        for learner in &learners {
            match eval::cross_validate(&dataset, learner, &options) {
                Ok(folds) => {
                    results.insert((learner.name().to_string(), dataset.antibiotic_name().to_string()), folds);
                }
                Err(e @ (eval::EvalError::KExceedsRows { .. }
                | eval::EvalError::KExceedsGroups { .. }
                | eval::EvalError::ClassTooSmall { .. })) => {
                    warn!("skipping {} for {antibiotic}: {e}", learner.name());
                }
                Err(source) => {
                    return Err(CliError::Eval {
                        model: learner.name().to_string(),
                        antibiotic: antibiotic.clone(),
                        source,
                    })
                }
            }
        }
    }
    if results.is_empty() {
        return Err(CliError::Invalid("no antibiotic had enough data to cross-validate".into()));
    }

    let config = ReportConfig {
        k: args.k,
        seed: args.seed,
        threshold: args.threshold,
        positive_class: match args.positive_class {
            PositiveClass::Resistant => "resistant".into(),
            PositiveClass::Sensitive => "sensitive".into(),
        },
        group_by_subject: args.group_by_subject,
        permute_labels: args.permute_labels,
        embedding_model_id: store.model_id().to_string(),
        dim: store.dim(),
    };
    let report = eval::aggregate(&results, config);
    let out_dir = args.out_dir.clone().unwrap_or_else(|| args.input.data_dir.clone());
    create_dir(&out_dir)?;
    write_file(&out_dir.join("report.json"), report::report_json(&report).as_bytes())?;
    write_figures(&report, &out_dir)?;
    write_json(&out_dir.join("cohort_summary.json"), &cohort_summary(&inputs.records, &inputs.notes, &categories))?;
    for model in &report.models {
        info!(
            "{}: mean AUC {:.3} (SD {:.3}), mean F1 {:.3} (SD {:.3})",
            model.name, model.auc_macro_mean, model.auc_macro_sd, model.f1_macro_mean, model.f1_macro_sd
        );
    }
    Ok(())
}

pub fn report(args: &ReportArgs) -> Result<()> {
    let text = fs::read_to_string(&args.report).map_err(io_err(&args.report))?;
    let report: CvReport = serde_json::from_str(&text)
        .map_err(|source| CliError::Report { path: args.report.clone(), source })?;
    if report.models.iter().all(|m| m.antibiotics.is_empty()) {
        return Err(CliError::Invalid(format!("{}: report has no results", args.report.display())));
    }
    let out_dir = args.out_dir.clone().unwrap_or_else(|| {
        args.report.parent().map(Path::to_path_buf).unwrap_or_default()
    });
    let out_dir = if out_dir.as_os_str().is_empty() { PathBuf::from(".") } else { out_dir };
    create_dir(&out_dir)?;
    write_figures(&report, &out_dir)
}

pub fn stub_server(args: &StubServerArgs) -> Result<()> {
    let config = embed::stub::StubConfig { dim: args.dim, seed: args.seed, ..Default::default() };
    let addr = format!("{}:{}", args.host, args.port);
    let server = embed::stub::StubServer::start(&addr, config).map_err(|source| CliError::Io {
        path: PathBuf::from(&addr),
        source,
    })?;
    eprintln!("serving the embedding contract on {}", server.url());
    server.join();
    Ok(())
}

pub fn check_service(args: &CheckServiceArgs) -> Result<()> {
    let endpoint = resolve_endpoint(&args.endpoint)?;
    let checks = embed::contract::check_service(&endpoint, Duration::from_secs_f64(args.timeout));
    for c in &checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    if failed > 0 {
        return Err(CliError::Invalid(format!("{failed} of {} contract checks failed", checks.len())));
    }
    Ok(())
}
