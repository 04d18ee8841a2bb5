//! Command-line surface: ingest raw datasets, train the four model
//! variants, evaluate, prune, fit a post-hoc decomposition, benchmark the
//! scoring engines, and inspect model files.
//!
//! Exit codes: 0 success, 2 usage error, 3 data/format error, 4 numeric
//! failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use lrfwfm::data::{self, RawDataset};
use lrfwfm::decompose::{self, PruneBudget};
use lrfwfm::error::Error;
use lrfwfm::model::{InteractionSpec, ModelParams, VariantKind};
use lrfwfm::schema::FieldSchema;
use lrfwfm::serialize;
use lrfwfm::train::{self, EvalReport, LossKind, TrainConfig};
use lrfwfm::{bench, Result};

#[derive(Parser)]
#[command(name = "lrfwfm", version, about = "Field-weighted factorization machines with a diagonal plus low-rank interaction matrix")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a raw public dataset into the canonical TSV + schema pair.
    Ingest(IngestArgs),
    /// Train a model: split, build vocabulary, fit, write the model file.
    Train(TrainArgs),
    /// Evaluate a model file on a dataset.
    Eval(EvalArgs),
    /// Keep the largest-magnitude interaction entries of a dense model.
    Prune(PruneArgs),
    /// Fit a diagonal plus low-rank approximation to a trained dense model.
    Decompose(DecomposeArgs),
    /// Synthetic scoring latency and operation-count benchmark.
    Bench(BenchArgs),
    /// Print a human-readable summary of a model file.
    Inspect(InspectArgs),
}

#[derive(Args)]
struct IngestArgs {
    /// Directory with the MovieLens 1M files (ratings.dat, users.dat, movies.dat).
    #[arg(long)]
    movielens: PathBuf,
    /// Canonical TSV output path.
    #[arg(long)]
    out_data: PathBuf,
    /// Schema declaration output path.
    #[arg(long)]
    out_schema: PathBuf,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum VariantArg {
    Fm,
    Fwfm,
    Pruned,
    Dplr,
}

impl VariantArg {
    fn name(self) -> &'static str {
        match self {
            VariantArg::Fm => "fm",
            VariantArg::Fwfm => "fwfm",
            VariantArg::Pruned => "pruned",
            VariantArg::Dplr => "dplr",
        }
    }
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum LossArg {
    Logloss,
    Mse,
}

impl From<LossArg> for LossKind {
    fn from(value: LossArg) -> LossKind {
        match value {
            LossArg::Logloss => LossKind::LogLoss,
            LossArg::Mse => LossKind::Mse,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Canonical dataset (label first, fields in schema order).
    #[arg(long)]
    data: PathBuf,
    /// Schema declaration file.
    #[arg(long)]
    schema: PathBuf,
    /// Where to write the trained model (a .vocab sidecar is written next to it).
    #[arg(long)]
    model_out: PathBuf,
    #[arg(long, value_enum)]
    variant: VariantArg,
    /// DPLR rank, or the rank-equivalent budget for the pruned variant.
    #[arg(long, default_value_t = 2)]
    rank: usize,
    /// Embedding dimension k.
    #[arg(long, default_value_t = 8)]
    dim: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 256)]
    batch: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "logloss")]
    loss: LossArg,
    #[arg(long, default_value_t = 0.0)]
    weight_decay: f64,
    /// Features seen fewer times than this in the training split go to the rare bucket.
    #[arg(long, default_value_t = 10)]
    min_count: u32,
    /// Dataset cell delimiter.
    #[arg(long, default_value = "\t")]
    delimiter: char,
    /// Optional prefix: write <prefix>.{train,val,test}.tsv with the raw split rows.
    #[arg(long)]
    dump_splits: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long, value_enum)]
    loss: LossArg,
    /// Vocabulary sidecar; defaults to <model>.vocab.
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long, default_value = "\t")]
    delimiter: char,
}

#[derive(Args)]
struct PruneArgs {
    /// A dense (fwfm) model file.
    #[arg(long)]
    model: PathBuf,
    /// Keep exactly this many interaction entries.
    #[arg(long, conflicts_with = "rank_equivalent")]
    keep: Option<usize>,
    /// Keep rank*(m+1) entries, the parameter budget of a DPLR model of this rank.
    #[arg(long)]
    rank_equivalent: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DecomposeArgs {
    /// A dense (fwfm) model file.
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 5)]
    rank: usize,
    #[arg(long, default_value_t = 200)]
    iters: usize,
    #[arg(long, default_value_t = 1e-12)]
    tol: f64,
    /// Where to write the DPLR model.
    #[arg(long)]
    out: PathBuf,
    /// Error spectrum report for the DPLR approximation.
    #[arg(long)]
    spectrum_out: PathBuf,
    /// Also prune to rank*(m+1) entries and write that error spectrum here.
    #[arg(long)]
    pruned_spectrum_out: Option<PathBuf>,
    /// Dataset used to build the field vectors of the spectrum report
    /// (first row); without it, unit field vectors are used.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Vocabulary sidecar; defaults to <model>.vocab when --data is given.
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long, default_value = "\t")]
    delimiter: char,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value_t = 40)]
    fields: usize,
    #[arg(long, value_delimiter = ',', default_values_t = vec![10usize, 15, 20, 25, 30])]
    context_counts: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = vec![1usize, 2, 3])]
    ranks: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = vec![10usize, 50, 100, 500, 1000])]
    auction_sizes: Vec<usize>,
    #[arg(long, default_value_t = 50)]
    reps: usize,
    #[arg(long, default_value_t = 10)]
    auctions_per_measurement: usize,
    #[arg(long, default_value_t = 8)]
    dim: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Records CSV output path.
    #[arg(long)]
    out: PathBuf,
    /// Summary CSV path; defaults to <out>.summary.csv.
    #[arg(long)]
    summary_out: Option<PathBuf>,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long)]
    model: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Ingest(args) => cmd_ingest(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Prune(args) => cmd_prune(args),
        Command::Decompose(args) => cmd_decompose(args),
        Command::Bench(args) => cmd_bench(args),
        Command::Inspect(args) => cmd_inspect(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            if err.is_data_error() {
                ExitCode::from(3)
            } else {
                ExitCode::from(4)
            }
        }
    }
}

fn cmd_ingest(args: IngestArgs) -> Result<()> {
    println!(
        "config: ingest movielens={} out_data={} out_schema={}",
        args.movielens.display(),
        args.out_data.display(),
        args.out_schema.display()
    );
    let (schema, lines) = data::ingest_movielens_1m(&args.movielens)?;
    std::fs::write(&args.out_data, lines.join("\n") + "\n")?;
    std::fs::write(&args.out_schema, schema.declaration_text())?;
    println!(
        "ingested {} rows, {} fields ({} context)",
        lines.len(),
        schema.num_fields(),
        schema.num_context()
    );
    Ok(())
}

fn vocab_path(model: &Path, explicit: &Option<PathBuf>) -> PathBuf {
    explicit.clone().unwrap_or_else(|| {
        let mut os = model.as_os_str().to_owned();
        os.push(".vocab");
        PathBuf::from(os)
    })
}

fn print_report(report: &EvalReport, loss: LossKind) -> Result<()> {
    match loss {
        LossKind::LogLoss => {
            println!("logloss: {:.4}", report.logloss.expect("classification report"));
            match report.auc {
                Some(auc) => println!("auc: {auc:.4}"),
                None => {
                    return Err(Error::Data(
                        "AUC is undefined: the evaluation set contains a single class".into(),
                    ))
                }
            }
        }
        LossKind::Mse => println!("mse: {:.4}", report.mse.expect("regression report")),
    }
    println!("samples: {}", report.samples);
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    println!(
        "config: train data={} schema={} model_out={} variant={} rank={} dim={} lr={} epochs={} \
         batch={} seed={} loss={} weight_decay={} min_count={} delimiter={:?}",
        args.data.display(),
        args.schema.display(),
        args.model_out.display(),
        args.variant.name(),
        args.rank,
        args.dim,
        args.lr,
        args.epochs,
        args.batch,
        args.seed,
        LossKind::from(args.loss).name(),
        args.weight_decay,
        args.min_count,
        args.delimiter,
    );
    let declared = FieldSchema::load_declaration(&args.schema)?;
    let dataset = RawDataset::load(&args.data, args.delimiter)?;
    let split = data::split(dataset.len(), args.seed)?;
    println!(
        "split: {} train / {} validation / {} test",
        split.train.len(),
        split.validation.len(),
        split.test.len()
    );
    if let Some(prefix) = &args.dump_splits {
        for (name, rows) in
            [("train", &split.train), ("val", &split.validation), ("test", &split.test)]
        {
            let mut path = prefix.as_os_str().to_owned();
            path.push(format!(".{name}.tsv"));
            let text: String =
                rows.iter().map(|&r| dataset.lines[r].as_str()).collect::<Vec<_>>().join("\n");
            std::fs::write(PathBuf::from(path), text + "\n")?;
        }
    }

    let schema = data::build_vocab(&dataset, &split.train, &declared, args.min_count)?;
    let train_set = data::encode_rows(&dataset, &split.train, &schema)?;
    let val_set = data::encode_rows(&dataset, &split.validation, &schema)?;
    let test_set = data::encode_rows(&dataset, &split.test, &schema)?;

    let loss = LossKind::from(args.loss);
    let mut config = TrainConfig::new(loss, args.lr, args.epochs, args.seed);
    config.batch_size = args.batch;
    config.weight_decay = args.weight_decay;

    println!("epoch\ttrain_loss\tval_{}", loss.name());
    let mut on_epoch = |log: &train::EpochLog| {
        println!("{}\t{:.4}\t{:.4}", log.epoch, log.train_loss, log.val_metric);
    };

    let outcome = match args.variant {
        VariantArg::Pruned => train::train_pruned(
            &train_set,
            &val_set,
            schema.clone(),
            args.dim,
            &PruneBudget::RankEquivalent(args.rank),
            &config,
            &mut on_epoch,
        )?,
        variant => {
            let kind = match variant {
                VariantArg::Fm => VariantKind::Fm,
                VariantArg::Fwfm => VariantKind::Fwfm,
                VariantArg::Dplr => VariantKind::Dplr { rank: args.rank },
                VariantArg::Pruned => unreachable!(),
            };
            let init = ModelParams::init(schema.clone(), args.dim, kind, args.seed)?;
            train::train(&train_set, &val_set, init, &config, &mut on_epoch)?
        }
    };

    serialize::save_model(&outcome.params, &args.model_out)?;
    schema.save_vocab(&vocab_path(&args.model_out, &None))?;
    println!("model written to {}", args.model_out.display());

    if !val_set.is_empty() {
        println!("final validation metrics:");
        print_report(&train::evaluate(&val_set, &outcome.params, loss)?, loss)?;
    }
    if !test_set.is_empty() {
        println!("test metrics:");
        print_report(&train::evaluate(&test_set, &outcome.params, loss)?, loss)?;
    }
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let vocab = vocab_path(&args.model, &args.vocab);
    println!(
        "config: eval data={} model={} loss={} vocab={} delimiter={:?}",
        args.data.display(),
        args.model.display(),
        LossKind::from(args.loss).name(),
        vocab.display(),
        args.delimiter,
    );
    let params = serialize::load_model(&args.model)?;
    let schema = FieldSchema::load_vocab(&vocab)?;
    let params = serialize::attach_vocab(params, schema)?;
    let dataset = RawDataset::load(&args.data, args.delimiter)?;
    let rows: Vec<usize> = (0..dataset.len()).collect();
    let samples = data::encode_rows(&dataset, &rows, &params.schema)?;
    let loss = LossKind::from(args.loss);
    let report = train::evaluate(&samples, &params, loss)?;
    print_report(&report, loss)
}

fn copy_vocab_sidecar(from: &Path, to: &Path) -> Result<()> {
    let src = vocab_path(from, &None);
    if src.exists() {
        std::fs::copy(&src, vocab_path(to, &None))?;
    }
    Ok(())
}

fn cmd_prune(args: PruneArgs) -> Result<()> {
    let budget = match (args.keep, args.rank_equivalent) {
        (Some(q), None) => PruneBudget::KeepCount(q),
        (None, Some(r)) => PruneBudget::RankEquivalent(r),
        _ => {
            return Err(Error::Data("pass exactly one of --keep or --rank-equivalent".into()))
        }
    };
    println!(
        "config: prune model={} budget={:?} out={}",
        args.model.display(),
        budget,
        args.out.display()
    );
    let params = serialize::load_model(&args.model)?;
    let InteractionSpec::DenseSym(dense) = &params.interaction else {
        return Err(Error::Data("pruning needs a dense fwfm model as input".into()));
    };
    let m = params.num_fields();
    let pruned = decompose::prune(dense, &budget)?;
    let keep = pruned.keep_count();
    let out_params = ModelParams::new(
        params.schema.clone(),
        params.k,
        params.b0,
        params.b.clone(),
        params.w.clone(),
        InteractionSpec::PrunedSparse(pruned),
    )?;
    serialize::save_model(&out_params, &args.out)?;
    copy_vocab_sidecar(&args.model, &args.out)?;
    println!("kept {keep} of {} entries", lrfwfm::model::num_pairs(m));
    println!("sparsity: {:.1}%", decompose::sparsity_percent(keep, m));
    println!("model written to {}", args.out.display());
    Ok(())
}

fn cmd_decompose(args: DecomposeArgs) -> Result<()> {
    println!(
        "config: decompose model={} rank={} iters={} tol={:e} out={} spectrum_out={}",
        args.model.display(),
        args.rank,
        args.iters,
        args.tol,
        args.out.display(),
        args.spectrum_out.display(),
    );
    let params = serialize::load_model(&args.model)?;
    let InteractionSpec::DenseSym(dense) = &params.interaction else {
        return Err(Error::Data("decomposition needs a dense fwfm model as input".into()));
    };
    let m = params.num_fields();

    let fit = decompose::posthoc_dplr(dense, args.rank, args.iters, args.tol)?;
    println!("iterations: {}", fit.objective_history.len());
    println!("frobenius error: {:.4e}", fit.frobenius_error);
    let dplr = fit.to_model_form(m)?;
    let model_err = decompose::model_form_error(dense, &InteractionSpec::Dplr(dplr.clone()))?;
    println!("model-form (f32) error: {model_err:.4e}");

    let out_params = ModelParams::new(
        params.schema.clone(),
        params.k,
        params.b0,
        params.b.clone(),
        params.w.clone(),
        InteractionSpec::Dplr(dplr.clone()),
    )?;
    serialize::save_model(&out_params, &args.out)?;
    copy_vocab_sidecar(&args.model, &args.out)?;
    println!("model written to {}", args.out.display());

    // field vectors for the spectrum report: first data row when given,
    // unit vectors otherwise
    let v = match &args.data {
        Some(data_path) => {
            let schema = FieldSchema::load_vocab(&vocab_path(&args.model, &args.vocab))?;
            let full = serialize::attach_vocab(serialize::load_model(&args.model)?, schema)?;
            let dataset = RawDataset::load(data_path, args.delimiter)?;
            let sample = data::encode_row(&dataset, 0, &full.schema)?;
            lrfwfm::model::gather_field_vectors(&sample, &full)?
        }
        None => {
            let mut rows = vec![0.0f64; m * m];
            for i in 0..m {
                rows[i * m + i] = 1.0;
            }
            lrfwfm::model::FieldVectors::from_rows(m, m, rows)
        }
    };

    let report = decompose::error_spectrum(dense, &InteractionSpec::Dplr(dplr), &v)?;
    std::fs::write(&args.spectrum_out, decompose::spectrum_report_text(&report))?;
    println!(
        "dplr spectrum: bound {:.4e}, exact trace {:.4e} -> {}",
        report.bound,
        report.exact_trace,
        args.spectrum_out.display()
    );

    if let Some(pruned_out) = &args.pruned_spectrum_out {
        let budget = PruneBudget::RankEquivalent(args.rank);
        let keep = budget.keep_count(m).min(lrfwfm::model::num_pairs(m));
        let pruned = decompose::prune(dense, &PruneBudget::KeepCount(keep))?;
        let report =
            decompose::error_spectrum(dense, &InteractionSpec::PrunedSparse(pruned), &v)?;
        std::fs::write(pruned_out, decompose::spectrum_report_text(&report))?;
        println!(
            "pruned (keep {keep}) spectrum: bound {:.4e}, exact trace {:.4e} -> {}",
            report.bound,
            report.exact_trace,
            pruned_out.display()
        );
    }
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> Result<()> {
    let grid = bench::BenchGrid {
        m: args.fields,
        context_counts: args.context_counts.clone(),
        ranks: args.ranks.clone(),
        auction_sizes: args.auction_sizes.clone(),
        repetitions: args.reps,
        auctions_per_measurement: args.auctions_per_measurement,
        k: args.dim,
        seed: args.seed,
    };
    let summary_out = args.summary_out.clone().unwrap_or_else(|| {
        let mut os = args.out.as_os_str().to_owned();
        os.push(".summary.csv");
        PathBuf::from(os)
    });
    println!(
        "config: bench fields={} context_counts={:?} ranks={:?} auction_sizes={:?} reps={} \
         auctions_per_measurement={} dim={} seed={} out={} summary_out={}",
        grid.m,
        grid.context_counts,
        grid.ranks,
        grid.auction_sizes,
        grid.repetitions,
        grid.auctions_per_measurement,
        grid.k,
        grid.seed,
        args.out.display(),
        summary_out.display(),
    );
    let records = bench::run_grid(&grid)?;
    std::fs::write(&args.out, bench::records_csv(&records))?;
    let summary = bench::summarize(&records)?;
    std::fs::write(&summary_out, bench::summary_csv(&summary))?;
    println!("{} records -> {}", records.len(), args.out.display());
    println!("{} summary rows -> {}", summary.len(), summary_out.display());
    let low_res = summary.iter().filter(|r| r.low_resolution).count();
    if low_res > 0 {
        println!(
            "warning: {low_res} configurations measured under 1us; treat their wall times as noise"
        );
    }
    Ok(())
}

fn cmd_inspect(args: InspectArgs) -> Result<()> {
    println!("config: inspect model={}", args.model.display());
    let params = serialize::load_model(&args.model)?;
    let n = params.n();
    let k = params.k;
    let base = 1 + n + n * k;
    println!("kind: {}", params.interaction.kind_name());
    println!("fields (m): {}", params.num_fields());
    println!("context fields (m_c): {}", params.num_context());
    println!("embedding dim (k): {k}");
    println!("features (n): {n}");
    match &params.interaction {
        InteractionSpec::FmImplicit => {}
        InteractionSpec::DenseSym(_) => {
            println!("interaction entries: {}", lrfwfm::model::num_pairs(params.num_fields()));
        }
        InteractionSpec::PrunedSparse(p) => {
            println!("retained entries (q): {}", p.keep_count());
            println!(
                "sparsity: {:.1}%",
                decompose::sparsity_percent(p.keep_count(), params.num_fields())
            );
        }
        InteractionSpec::Dplr(d) => {
            println!("rank: {}", d.rank());
            let d_norm: f64 = d.d().iter().map(|x| x * x).sum::<f64>().sqrt();
            println!("derived diagonal norm: {d_norm:.4}");
        }
    }
    println!(
        "parameters: {} base (1 + n + n*k) + {} interaction = {}",
        base,
        params.interaction.extra_param_count(),
        params.param_count()
    );
    Ok(())
}
