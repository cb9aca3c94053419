use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use patr_core::dataio::{
    load_checkpoint, load_features, load_labels, load_pairs, load_stopwords, load_word_vectors, read_text,
    save_checkpoint, write_atomic, write_features, FeatureStore, PairSource,
};
use patr_core::evalret::{evaluate, retrieve_topk, Direction, EvalReport, RetrievalIndex};
use patr_core::mining::FilterMode;
use patr_core::trainer::{mine_epoch, PreparedDataset, TrainConfig, Trainer};
use patr_core::{Error, Result};

/// Text-to-image embedding training and retrieval.
#[derive(Parser)]
#[command(name = "patr", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a text encoder into a fixed image feature space.
    Train(TrainArgs),
    /// Evaluate retrieval (R@K, mAP@R) on a pair set.
    Eval(EvalArgs),
    /// Rank images for one text query.
    Retrieve(RetrieveArgs),
    /// Embed texts into a feature file.
    Encode(EncodeArgs),
    /// Dump mined negatives for one shuffled epoch.
    Mine(MineArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// `key = value` training configuration.
    #[arg(long)]
    config: PathBuf,
    /// Caption pairs, `<image_id>\t<text>` per line.
    #[arg(long)]
    captions: PathBuf,
    /// Click pairs; enables multi-task training.
    #[arg(long)]
    clicks: Option<PathBuf>,
    #[arg(long)]
    features: PathBuf,
    /// Word vectors, `<count> <dim>` header then `<word> <f1> ...`.
    #[arg(long)]
    wordvecs: PathBuf,
    /// One stop word per line (default: built-in English list).
    #[arg(long)]
    stopwords: Option<PathBuf>,
    /// Checkpoint path, rewritten after every epoch.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    pairs: PathBuf,
    #[arg(long)]
    features: PathBuf,
    /// `<image_id>\t<label>` per line; enables mAP.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long, value_parser = parse_direction)]
    direction: Direction,
    /// Comma-separated K values.
    #[arg(long, value_delimiter = ',', required = true)]
    k: Vec<usize>,
    #[arg(long, default_value_t = 50)]
    map_r: usize,
    /// Also write the report as TSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RetrieveArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    query: String,
    #[arg(long)]
    top: usize,
}

#[derive(Args)]
struct EncodeArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// One text per line, or `<id>\t<text>`; plain lines get their line
    /// number as id.
    #[arg(long)]
    texts: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MineArgs {
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    pairs: PathBuf,
    #[arg(long)]
    batch_size: usize,
    #[arg(long)]
    n: usize,
    #[arg(long, value_parser = parse_mode)]
    mode: FilterMode,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

fn parse_direction(s: &str) -> std::result::Result<Direction, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_mode(s: &str) -> std::result::Result<FilterMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn train(a: TrainArgs) -> Result<()> {
    let mut cfg = TrainConfig::load(&a.config)?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    let store = load_features(&a.features)?;
    let table = load_word_vectors(&a.wordvecs)?;
    let stop = load_stopwords(a.stopwords.as_deref())?;
    let captions = load_pairs(&a.captions, PairSource::Caption)?;
    let clicks = a
        .clicks
        .as_ref()
        .map(|p| load_pairs(p, PairSource::Click))
        .transpose()?;

    let mut trainer = Trainer::new(cfg, table, &store)?;
    let cap = trainer.prepare(&captions, &store, &stop)?;
    let click = clicks.map(|c| trainer.prepare(&c, &store, &stop)).transpose()?;
    log::info!(
        "training on {} caption pairs{}, {} images",
        cap.len(),
        click
            .as_ref()
            .map(|c| format!(" and {} click pairs", c.len()))
            .unwrap_or_default(),
        store.len()
    );
    if trainer.config().epochs == 0 {
        save_checkpoint(&trainer.checkpoint(), &a.out)?;
    }
    println!("epoch\tloss\tlr");
    trainer.run(&cap, click.as_ref(), &store, |s, t| {
        println!("{}\t{:.6}\t{}", s.epoch, s.mean_loss, s.learning_rate);
        save_checkpoint(&t.checkpoint(), &a.out)
    })
}

fn dataset_name(path: &Path) -> String {
    path.file_stem()
        .map_or_else(|| "pairs".to_string(), |s| s.to_string_lossy().into_owned())
}

fn eval(a: EvalArgs) -> Result<()> {
    let ckpt = load_checkpoint(&a.ckpt)?;
    let store = load_features(&a.features)?;
    let pairs = load_pairs(&a.pairs, PairSource::Caption)?;
    let labels = a.labels.as_ref().map(load_labels).transpose()?;
    let ev = evaluate(
        &ckpt.encoder,
        &dataset_name(&a.pairs),
        &pairs,
        &store,
        labels.as_ref(),
        a.direction,
        &a.k,
        a.map_r,
    )?;
    let report = EvalReport { rows: vec![ev.row] };
    print!("{}", report.to_table());
    if let Some(out) = &a.out {
        write_atomic(out, report.to_tsv().as_bytes())?;
    }
    Ok(())
}

fn retrieve(a: RetrieveArgs) -> Result<()> {
    let ckpt = load_checkpoint(&a.ckpt)?;
    let store = load_features(&a.features)?;
    let query = ckpt.encoder.embed(&a.query)?;
    let index = RetrievalIndex::from_store(&store);
    let top = retrieve_topk(&query, &index, a.top)?;
    if top.truncated {
        log::warn!("--top {} exceeds the {} stored images", a.top, index.len());
    }
    for (row, d) in &top.hits {
        println!("{}\t{d}", index.ids()[*row]);
    }
    Ok(())
}

fn encode(a: EncodeArgs) -> Result<()> {
    let ckpt = load_checkpoint(&a.ckpt)?;
    let text = read_text(&a.texts)?;
    let mut ids = Vec::new();
    let mut texts = Vec::new();
    for (n, raw) in text.split('\n').enumerate() {
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.trim().is_empty() {
            continue;
        }
        let (id, t) = match line.split_once('\t') {
            Some((id, t)) => (id.to_string(), t),
            None => ((n + 1).to_string(), line),
        };
        ids.push(id);
        texts.push(t);
    }
    if texts.is_empty() {
        return Err(Error::Data(format!("{}: no texts to encode", a.texts.display())));
    }
    let emb = ckpt.encoder.embed_batch(&texts)?;
    let records = ids.into_iter().enumerate().map(|(i, id)| (id, emb.row(i).to_vec()));
    let store = FeatureStore::from_records(ckpt.encoder.config.output_dim, records)
        .map_err(|e| Error::Data(format!("{}: {e}", a.texts.display())))?;
    write_features(&store, &a.out)
}

fn mine(a: MineArgs) -> Result<()> {
    let store = load_features(&a.features)?;
    let pairs = load_pairs(&a.pairs, PairSource::Caption)?;
    let stop = load_stopwords(None)?;
    let ds = PreparedDataset::new(&pairs, &store, &stop, usize::MAX)?;
    println!("positive\tnegative\tsq_dist\tfilter");
    for (batch, mined) in mine_epoch(&ds, &store, a.batch_size, a.n, a.mode, a.seed)? {
        print!("{}", mined.to_tsv(&batch));
    }
    Ok(())
}

fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var("PATR_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("PATR_THREADS must be a non-negative integer, got {v:?}")))?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("cannot size thread pool: {e}")))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = configure_threads().and_then(|()| match cli.command {
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Retrieve(a) => retrieve(a),
        Command::Encode(a) => encode(a),
        Command::Mine(a) => mine(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
