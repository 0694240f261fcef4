use std::path::{Path, PathBuf};

use serde::Serialize;

use captain_core::conditioning::CosineScorer;
use captain_core::formats::{
    decode_index, decode_phash_corpus, encode_index, encode_phash_corpus, parse_trace_csv, read_bytes, read_text,
    trace_to_csv, write_atomic, write_latent,
};
use captain_core::inject::{
    initial_latent, preliminary_pass, seeded_noise, run_captain, run_vanilla, InjectionConfig, Providers, StepRecord,
};
use captain_core::metrics::{ablation_sweep, align_analog, sscd_analog, AblationGrid, AblationRow, Scenario, SweepOptions};
use captain_core::reference::fetch::{fetch_candidates, Source, DEFAULT_MIN_YEAR};
use captain_core::reference::query::{extract_query_words, DEFAULT_QUERY_K};
use captain_core::reference::{
    composite_select, phash64, Embedder, Embedding, GrayImage, PixelStatsEmbedder, VectorIndex, DEFAULT_LAMBDAS,
};
use captain_core::window::{alignment_trace, find_window, InjectionWindow};

use crate::config::{Mode, Overrides, RunConfig, Scene};
use crate::failure::{CliResult, Failure};

fn ensure_dir(dir: &Path) -> CliResult {
    std::fs::create_dir_all(dir).map_err(|e| Failure::usage(format!("cannot create {}: {e}", dir.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    Ok(write_atomic(path, text.as_bytes())?)
}

fn providers(scene: &Scene) -> Providers<'_> {
    Providers {
        be: &scene.be,
        concept: scene.concept.as_ref(),
        scorer: &CosineScorer,
    }
}

#[derive(Serialize)]
struct RunReport<'a> {
    mode: Mode,
    shape: [usize; 3],
    sscd_analog: f64,
    align_analog: f64,
    window_used: Option<InjectionWindow>,
    window_defaulted: bool,
    fallback_used: bool,
    injected_steps: usize,
    mask_area_mean: f64,
    fallback_rate: f64,
    config: &'a InjectionConfig,
    trajectory: Vec<StepRecord>,
}

pub fn run(over: &Overrides, out: &Path) -> CliResult {
    let (cfg, _) = RunConfig::load(over)?;
    let scene = Scene::load(&cfg)?;
    ensure_dir(out)?;
    let (c, h, w) = scene.mem_target.shape();
    let report = match cfg.inputs.mode {
        Mode::Vanilla => {
            let x = run_vanilla(&scene.denoiser, (c, h, w), &cfg.injection)?;
            write_latent(&out.join("final_latent.caplat"), &x)?;
            RunReport {
                mode: Mode::Vanilla,
                shape: [c, h, w],
                sscd_analog: sscd_analog(&x, &scene.mem_target)?,
                align_analog: align_analog(&x, &scene.conditioning)?,
                window_used: None,
                window_defaulted: false,
                fallback_used: false,
                injected_steps: 0,
                mask_area_mean: 0.0,
                fallback_rate: 0.0,
                config: &cfg.injection,
                trajectory: Vec::new(),
            }
        }
        Mode::Captain => {
            let r = run_captain(&scene.denoiser, &scene.reference, &scene.conditioning, providers(&scene), &cfg.injection)?;
            write_latent(&out.join("final_latent.caplat"), &r.final_latent)?;
            RunReport {
                mode: Mode::Captain,
                shape: [c, h, w],
                sscd_analog: sscd_analog(&r.final_latent, &scene.mem_target)?,
                align_analog: align_analog(&r.final_latent, &scene.conditioning)?,
                window_used: Some(r.window_used),
                window_defaulted: r.window_defaulted,
                fallback_used: r.fallback_used,
                injected_steps: r.injected_steps(),
                mask_area_mean: r.mean_mask_area(),
                fallback_rate: r.fallback_rate(),
                config: &cfg.injection,
                trajectory: r.trajectory,
            }
        }
    };
    write_json(&out.join("result.json"), &report)?;
    println!(
        "sscd_analog {:.6}  align_analog {:.6}  injected steps {}",
        report.sscd_analog, report.align_analog, report.injected_steps
    );
    Ok(())
}

#[derive(Debug, Clone, Default, clap::Args)]
pub struct GridArgs {
    /// Comma-separated δ values
    #[arg(long, value_delimiter = ',')]
    pub deltas: Option<Vec<f64>>,
    /// Comma-separated τ values
    #[arg(long, value_delimiter = ',')]
    pub taus: Option<Vec<f64>>,
    /// Comma-separated rows: init, injection, full
    #[arg(long, value_delimiter = ',')]
    pub rows: Option<Vec<String>>,
    /// Comma-separated seeds
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Seeds 0..N when no explicit list is given
    #[arg(long)]
    pub num_seeds: Option<u64>,
}

fn parse_row(name: &str) -> CliResult<AblationRow> {
    match name.trim() {
        "init" => Ok(AblationRow::INIT_ONLY),
        "injection" => Ok(AblationRow::INJECTION_ONLY),
        "full" => Ok(AblationRow::FULL),
        other => Err(Failure::usage(format!("unknown ablation row {other:?}"))),
    }
}

/// An explicitly empty list (`--deltas ""`) parses to nothing and is rejected.
fn nonempty<T>(name: &str, v: Vec<T>) -> CliResult<Vec<T>> {
    if v.is_empty() {
        return Err(Failure::usage(format!("ablation grid axis {name} is empty")));
    }
    Ok(v)
}

fn build_grid(cfg: &RunConfig, args: &GridArgs) -> CliResult<(AblationGrid, Vec<u64>)> {
    let mut grid = cfg.inputs.grid.clone().unwrap_or_else(AblationGrid::delta_table);
    if let Some(d) = &args.deltas {
        grid.deltas = d.clone();
    }
    if let Some(t) = &args.taus {
        grid.taus = t.clone();
    }
    if let Some(r) = &args.rows {
        grid.rows = r.iter().filter(|s| !s.trim().is_empty()).map(|s| parse_row(s)).collect::<CliResult<_>>()?;
    }
    let seeds = match (&args.seeds, args.num_seeds, &cfg.inputs.seeds) {
        (Some(s), _, _) => s.clone(),
        (None, Some(n), _) => (0..n).collect(),
        (None, None, Some(s)) => s.clone(),
        (None, None, None) => vec![cfg.injection.seed],
    };
    Ok((
        AblationGrid {
            deltas: nonempty("deltas", grid.deltas)?,
            taus: nonempty("taus", grid.taus)?,
            rows: nonempty("rows", grid.rows)?,
        },
        nonempty("seeds", seeds)?,
    ))
}

pub fn ablate(over: &Overrides, out: &Path, workers: usize, grid_args: &GridArgs) -> CliResult {
    let (cfg, _) = RunConfig::load(over)?;
    let (grid, seeds) = build_grid(&cfg, grid_args)?;
    for (i, d) in grid.deltas.iter().enumerate() {
        InjectionConfig { delta: *d, ..cfg.injection.clone() }
            .validate()
            .map_err(|e| Failure::usage(format!("deltas[{i}]: {e}")))?;
    }
    for (i, t) in grid.taus.iter().enumerate() {
        InjectionConfig { tau: *t, ..cfg.injection.clone() }
            .validate()
            .map_err(|e| Failure::usage(format!("taus[{i}]: {e}")))?;
    }
    let scene = Scene::load(&cfg)?;
    ensure_dir(out)?;
    let scenario = Scenario {
        denoiser: &scene.denoiser,
        reference: &scene.reference,
        mem_target: &scene.mem_target,
        conditioning: &scene.conditioning,
        providers: providers(&scene),
    };
    let options = SweepOptions {
        workers,
        checkpoint_dir: Some(out.join("checkpoints")),
    };
    let table = ablation_sweep(&cfg.injection, &grid, &seeds, &scenario, &options)?;
    if table.resumed > 0 {
        log::info!("resumed {} of {} cells from checkpoints", table.resumed, table.cells.len());
    }
    write_atomic(&out.join("ablation.csv"), table.to_csv()?.as_bytes())?;

    #[derive(Serialize)]
    struct Summary<'a> {
        grid: &'a AblationGrid,
        seeds: &'a [u64],
        cells: usize,
        failed: usize,
        summary: Vec<captain_core::metrics::CellSummary>,
    }
    write_json(
        &out.join("summary.json"),
        &Summary {
            grid: &grid,
            seeds: &seeds,
            cells: table.cells.len(),
            failed: table.failed(),
            summary: table.summary(),
        },
    )?;
    println!("{} cells, {} failed, {} resumed", table.cells.len(), table.failed(), table.resumed);
    if table.failed() == table.cells.len() {
        return Err(Failure::runtime("every sweep cell failed"));
    }
    Ok(())
}

#[derive(Debug, Clone, clap::Args)]
pub struct SelectArgs {
    /// Query word; otherwise drawn from the attention manifest
    #[arg(long)]
    pub query: Option<String>,
    /// Prompt attention manifest JSON
    #[arg(long)]
    pub attention: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_QUERY_K)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Local directory of candidate images (repeatable)
    #[arg(long = "source-dir")]
    pub source_dirs: Vec<PathBuf>,
    /// Also query Pexels/Unsplash with keys from the environment
    #[arg(long)]
    pub web: bool,
    /// CAPIDX1 index of training embeddings
    #[arg(long)]
    pub index: PathBuf,
    /// CAPPH1 corpus of training hashes
    #[arg(long)]
    pub corpus: PathBuf,
    /// Text whose embedding is the alignment target; defaults to the query
    #[arg(long)]
    pub prompt: Option<String>,
    /// Image whose embedding is the alignment target
    #[arg(long)]
    pub target_image: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_LAMBDAS.to_vec())]
    pub lambdas: Vec<f64>,
    #[arg(long, default_value_t = DEFAULT_MIN_YEAR)]
    pub min_year: i32,
    #[arg(long, default_value_t = 20)]
    pub limit: usize,
    /// Directory for selection.json
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct ScoreRow {
    id: String,
    source: String,
    upload_year: Option<i32>,
    phash: String,
    h1: f64,
    h2: f64,
    h3: f64,
    total: f64,
}

pub fn select_ref(args: &SelectArgs) -> CliResult {
    let lambdas: [f64; 3] = args
        .lambdas
        .clone()
        .try_into()
        .map_err(|_| Failure::usage("--lambdas needs exactly three values"))?;
    let index = decode_index(&read_bytes(&args.index)?)?;
    let corpus = decode_phash_corpus(&read_bytes(&args.corpus)?)?;
    let embedder = PixelStatsEmbedder;

    let (query, ranked) = match (&args.query, &args.attention) {
        (Some(q), _) => (q.clone(), Vec::new()),
        (None, Some(path)) => {
            let (stack, words) = captain_core::formats::load_attention(path)?;
            let q = extract_query_words(&stack, &words, args.k, args.seed)?;
            (q.chosen, q.ranked)
        }
        (None, None) => return Err(Failure::usage("give --query or --attention")),
    };
    let mut sources: Vec<Source> = args.source_dirs.iter().cloned().map(Source::LocalDir).collect();
    if args.web {
        sources.extend(Source::from_env());
    }
    if sources.is_empty() {
        return Err(Failure::usage("no candidate sources: give --source-dir or --web with API keys set"));
    }
    let candidates = fetch_candidates(&query, &sources, args.min_year, args.limit, &embedder)?;
    let g = match &args.target_image {
        Some(p) => embedder.embed_image(&GrayImage::open(p)?)?,
        None => embedder.embed_text(args.prompt.as_deref().unwrap_or(&query))?,
    };
    if g.dim() != index.dim() {
        return Err(Failure::usage(format!(
            "index dim {} does not match embedder dim {}",
            index.dim(),
            g.dim()
        )));
    }
    let sel = composite_select(&candidates, &g, &index, &corpus, lambdas)?;

    let rows: Vec<ScoreRow> = candidates
        .iter()
        .zip(&sel.scores)
        .map(|(c, s)| ScoreRow {
            id: c.id.clone(),
            source: c.source.clone(),
            upload_year: c.upload_year,
            phash: format!("{:016x}", c.phash),
            h1: s.h1,
            h2: s.h2,
            h3: s.h3,
            total: s.total,
        })
        .collect();
    println!("query: {query}");
    println!("{:<32} {:>9} {:>9} {:>9} {:>9}", "candidate", "h1", "h2", "h3", "total");
    for r in &rows {
        println!("{:<32} {:>9.4} {:>9.4} {:>9.4} {:>9.4}", r.id, r.h1, r.h2, r.h3, r.total);
    }
    let winner = &rows[sel.winner];
    println!(
        "selected: {} (h1 {:.4}, h2 {:.4}, h3 {:.4})",
        winner.id, winner.h1, winner.h2, winner.h3
    );
    if let Some(out) = &args.out {
        ensure_dir(out)?;
        #[derive(Serialize)]
        struct Selection<'a> {
            query: &'a str,
            ranked_words: &'a [(String, f64)],
            lambdas: [f64; 3],
            winner: &'a str,
            scores: &'a [ScoreRow],
        }
        write_json(
            &out.join("selection.json"),
            &Selection {
                query: &query,
                ranked_words: &ranked,
                lambdas,
                winner: &winner.id,
                scores: &rows,
            },
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, clap::Subcommand)]
pub enum IndexAction {
    /// Embed images, JSON vector lists, or existing indexes into one index file
    Build {
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Nearest row and novelty (h2) of a query
    Query {
        #[arg(long)]
        index: PathBuf,
        /// JSON array of numbers
        #[arg(long)]
        vector: Option<PathBuf>,
        #[arg(long)]
        image: Option<PathBuf>,
    },
}

fn is_image(p: &Path) -> bool {
    p.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
}

fn read_vectors(path: &Path) -> CliResult<Vec<Vec<f64>>> {
    let value: serde_json::Value = serde_json::from_str(&read_text(path)?)?;
    let rows = match value {
        serde_json::Value::Array(a) if a.first().is_some_and(|v| v.is_array()) => serde_json::from_value(serde_json::Value::Array(a))?,
        other => vec![serde_json::from_value(other)?],
    };
    Ok(rows)
}

fn collect_embeddings(path: &Path, embedder: &PixelStatsEmbedder, out: &mut Vec<Embedding>) -> CliResult {
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = std::fs::read_dir(path)
            .map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| is_image(p))
            .collect();
        entries.sort();
        for p in entries {
            out.push(embedder.embed_image(&GrayImage::open(&p)?)?);
        }
        return Ok(());
    }
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") => {
            for v in read_vectors(path)? {
                out.push(Embedding::normalize(v)?);
            }
        }
        _ if is_image(path) => out.push(embedder.embed_image(&GrayImage::open(path)?)?),
        _ => {
            let idx = decode_index(&read_bytes(path)?)?;
            for i in 0..idx.len() {
                out.push(idx.embedding(i)?);
            }
        }
    }
    Ok(())
}

pub fn index(action: &IndexAction) -> CliResult {
    let embedder = PixelStatsEmbedder;
    match action {
        IndexAction::Build { inputs, out } => {
            if inputs.is_empty() {
                return Err(Failure::usage("index build needs at least one input"));
            }
            // whole existing indexes are copied row for row to keep their bits
            let mut rows: Vec<f32> = Vec::new();
            let mut dim = None;
            for p in inputs {
                let before = rows.len();
                let is_index = p.is_file() && !is_image(p) && p.extension().and_then(|e| e.to_str()) != Some("json");
                if is_index {
                    let idx = decode_index(&read_bytes(p)?)?;
                    if dim.is_some_and(|d| d != idx.dim()) {
                        return Err(Failure::usage(format!("{} has dim {}", p.display(), idx.dim())));
                    }
                    dim = Some(idx.dim());
                    rows.extend_from_slice(idx.rows());
                } else {
                    let mut embs = Vec::new();
                    collect_embeddings(p, &embedder, &mut embs)?;
                    for e in embs {
                        if dim.is_some_and(|d| d != e.dim()) {
                            return Err(Failure::usage(format!("{} has dim {}", p.display(), e.dim())));
                        }
                        dim = Some(e.dim());
                        rows.extend(e.values().iter().map(|&v| v as f32));
                    }
                }
                log::info!("{}: {} values", p.display(), rows.len() - before);
            }
            let dim = dim.ok_or_else(|| Failure::usage("inputs contained no vectors"))?;
            let idx = VectorIndex::from_rows(dim, rows)?;
            write_atomic(out, &encode_index(&idx))?;
            println!("wrote {} rows of dim {} to {}", idx.len(), idx.dim(), out.display());
            Ok(())
        }
        IndexAction::Query { index, vector, image } => {
            let idx = decode_index(&read_bytes(index)?)?;
            let f = match (vector, image) {
                (Some(v), None) => {
                    let mut rows = read_vectors(v)?;
                    if rows.len() != 1 {
                        return Err(Failure::usage("query vector file must hold one vector"));
                    }
                    Embedding::normalize(rows.remove(0))?
                }
                (None, Some(p)) => embedder.embed_image(&GrayImage::open(p)?)?,
                _ => return Err(Failure::usage("give exactly one of --vector or --image")),
            };
            let (row, cos) = idx.nearest(&f)?;
            println!("nearest {row} cosine {cos:.9} h2 {:.9}", 1.0 - cos);
            Ok(())
        }
    }
}

pub fn phash(paths: &[PathBuf], corpus_out: Option<&Path>) -> CliResult {
    if paths.is_empty() {
        return Err(Failure::usage("phash needs at least one path"));
    }
    let mut hashes = Vec::new();
    for p in paths {
        let bytes = read_bytes(p)?;
        if bytes.starts_with(b"CAPPH1") {
            for h in decode_phash_corpus(&bytes)? {
                println!("{h:016x}  {}", p.display());
                hashes.push(h);
            }
            continue;
        }
        let h = phash64(&GrayImage::decode(&bytes)?);
        println!("{h:016x}  {}", p.display());
        hashes.push(h);
    }
    if let Some(out) = corpus_out {
        write_atomic(out, &encode_phash_corpus(&hashes))?;
    }
    Ok(())
}

pub fn trace(over: &Overrides, input: Option<&Path>, out: Option<&Path>) -> CliResult {
    let trace = match input {
        Some(p) => parse_trace_csv(&read_text(p)?)?,
        None => {
            let (cfg, _) = RunConfig::load(over)?;
            let scene = Scene::load(&cfg)?;
            let (c, h, w) = scene.mem_target.shape();
            let (eps, _) = seeded_noise(cfg.injection.seed, (c, h, w));
            let x_init = initial_latent(&eps, &scene.reference, &cfg.injection)?;
            let run = preliminary_pass(&scene.denoiser, &x_init, &cfg.injection)?;
            alignment_trace(&run, &CosineScorer, &scene.conditioning)?
        }
    };
    let est = find_window(&trace)?;
    let csv = trace_to_csv(&trace)?;
    match out {
        Some(dir) => {
            ensure_dir(dir)?;
            write_atomic(&dir.join("trace.csv"), csv.as_bytes())?;
            write_json(&dir.join("window.json"), &est)?;
        }
        None => print!("{csv}"),
    }
    eprintln!(
        "window [{}, {}]{}",
        est.window.t_low,
        est.window.t_high,
        if est.defaulted { " (default)" } else { "" }
    );
    Ok(())
}
