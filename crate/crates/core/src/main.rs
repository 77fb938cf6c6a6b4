use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use imprintlab::dataset::EmbeddingSet;
use imprintlab::diagnostics::{distribution_mismatch, histogram, moments, pca};
use imprintlab::error::{Error, Result};
use imprintlab::eval::{accuracy_vs_shots, evaluate, run_episodes, EpisodeHead, EpisodeSpec};
use imprintlab::formats::{self, load_embeddings, load_head, sniff, write_atomic, Container};
use imprintlab::head::ClassifierHead;
use imprintlab::imprint::{
    add_class_done_with, aggregate_shots, build_reference_profile, ImprintMethod, Imprinter, ReferenceProfile,
};
use imprintlab::report;
use imprintlab::synth::{generate_with_novel, interference_sweep, SynthKind, SynthPreset};

/// Add classes to a frozen classifier head by weight imprinting, and measure the result.
#[derive(Parser)]
#[command(name = "imprintlab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the reference profile of an original head.
    Profile {
        #[arg(long)]
        head: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Append imprinted classes to a head.
    Imprint(ImprintArgs),
    /// Score a head on labeled queries, with accuracy and interference.
    Eval {
        #[arg(long)]
        head: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        /// Head class indices that were added, e.g. `100,101` or `100..108`.
        #[arg(long, default_value = "")]
        new_classes: String,
        #[arg(long)]
        report: PathBuf,
    },
    /// Run seeded N-way K-shot episodes over a pool.
    Episode {
        #[command(flatten)]
        episodes: EpisodeArgs,
        #[arg(long, default_value_t = 1)]
        shots: usize,
        #[arg(long)]
        report: PathBuf,
        /// Also write one CSV line per episode.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Accuracy as a function of shot count, same episodes seed for each.
    Shots {
        #[command(flatten)]
        episodes: EpisodeArgs,
        #[arg(long, default_value = "1,2,5,10")]
        shot_list: String,
        #[arg(long)]
        table: PathBuf,
    },
    /// Project head rows onto their principal axes.
    Pca {
        #[arg(long)]
        head: PathBuf,
        #[arg(long, default_value_t = 2)]
        components: usize,
        /// Fit on the first N rows only (e.g. the original classes); all rows are projected.
        #[arg(long)]
        fit_first: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        /// Also write axes and variances as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Histogram of all weights of a head or all values of an embedding set.
    Hist {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 50)]
        bins: usize,
        #[arg(long)]
        out: PathBuf,
        /// Also write the moments as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Compare the value distribution of embeddings against head weights.
    Mismatch {
        #[arg(long)]
        head: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Generate a synthetic head with train, test, and held-out novel data.
    Synth {
        #[command(flatten)]
        preset: PresetArgs,
        #[arg(long, default_value_t = 20)]
        classes: usize,
        #[arg(long, default_value_t = 256)]
        dim: usize,
        #[arg(long, default_value_t = 40)]
        per_class: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 8)]
        novel_classes: usize,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Interference of both methods over many synthetic seeds.
    Interfere {
        #[command(flatten)]
        preset: PresetArgs,
        #[arg(long, default_value_t = 8)]
        new_classes: usize,
        #[arg(long, default_value_t = 10)]
        shots: usize,
        #[arg(long, default_value_t = 20)]
        seeds: usize,
        #[arg(long, default_value_t = 100)]
        classes: usize,
        #[arg(long, default_value_t = 256)]
        dim: usize,
        #[arg(long, default_value_t = 20)]
        per_class: usize,
        /// First seed; run i uses seed + i.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        report: PathBuf,
    },
}

#[derive(Args)]
struct ImprintArgs {
    #[arg(long)]
    head: PathBuf,
    #[arg(long)]
    support: PathBuf,
    #[arg(long)]
    method: ImprintMethod,
    /// Support class to add; repeatable. Classes are appended in the order given.
    #[arg(long = "class-name", required_unless_present = "all_classes")]
    class_names: Vec<String>,
    /// Add every support class, in support-file order.
    #[arg(long, conflicts_with = "class_names")]
    all_classes: bool,
    /// Use the first K samples of each class in file order; default all.
    #[arg(long)]
    shots: Option<usize>,
    /// Quantile imprinting against a saved profile instead of the head's own.
    #[arg(long)]
    profile: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EpisodeArgs {
    #[arg(long)]
    pool: PathBuf,
    /// Append the episode classes to this head instead of building one from scratch.
    #[arg(long, conflicts_with = "reference_head")]
    base_head: Option<PathBuf>,
    /// Head supplying the reference profile for quantile imprinting from scratch.
    #[arg(long)]
    reference_head: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    ways: usize,
    #[arg(long, default_value_t = 15)]
    queries: usize,
    #[arg(long, default_value_t = 100)]
    episodes: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value = "done")]
    method: ImprintMethod,
}

#[derive(Args)]
struct PresetArgs {
    #[arg(long)]
    preset: SynthKind,
    /// Per-dimension noise around each class prototype; preset default if unset.
    #[arg(long)]
    spread: Option<f64>,
}

impl PresetArgs {
    fn build(&self, classes: usize, dim: usize, per_class: usize, seed: u64) -> SynthPreset {
        let p = SynthPreset::new(self.preset, classes, dim, per_class, seed);
        match self.spread {
            Some(s) => p.with_spread(s),
            None => p,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(msg) = configure_threads() {
        eprintln!("imprintlab: {msg}");
        return ExitCode::from(2);
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("imprintlab: error: {e}");
            ExitCode::from(1)
        }
    }
}

fn configure_threads() -> std::result::Result<(), String> {
    let Ok(raw) = std::env::var("IMPRINTLAB_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("IMPRINTLAB_THREADS must be a positive integer, got {raw:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Profile { head, out } => {
            let profile = build_reference_profile(&load_head(&head)?)?;
            write_atomic(&out, &report::to_json("profile", &profile)?)
        }
        Command::Imprint(args) => imprint(args),
        Command::Eval {
            head,
            queries,
            new_classes,
            report,
        } => {
            let head = load_head(&head)?;
            let queries = load_embeddings(&queries)?;
            let new = parse_index_list(&new_classes)?;
            let r = evaluate(&head, &queries, &new)?;
            write_atomic(&report, &report::eval_json(&r)?)
        }
        Command::Episode {
            episodes,
            shots,
            report,
            csv,
        } => {
            let ctx = EpisodeContext::load(&episodes)?;
            let spec = episodes.spec(shots);
            let summary = run_episodes(&ctx.pool, ctx.setup(), &spec)?;
            write_atomic(&report, &report::episodes_json(&summary)?)?;
            if let Some(csv) = csv {
                write_atomic(&csv, &report::episodes_csv(&summary)?)?;
            }
            Ok(())
        }
        Command::Shots {
            episodes,
            shot_list,
            table,
        } => {
            let shots = parse_index_list(&shot_list)?;
            if shots.is_empty() {
                return Err(Error::InvalidArgument("empty shot list".into()));
            }
            let ctx = EpisodeContext::load(&episodes)?;
            let rows = accuracy_vs_shots(&ctx.pool, ctx.setup(), &episodes.spec(shots[0]), &shots)?;
            write_atomic(&table, &report::shots_csv(&rows)?)
        }
        Command::Pca {
            head,
            components,
            fit_first,
            out,
            report,
        } => {
            let head = load_head(&head)?;
            let (n, m) = (head.num_classes(), head.dim());
            let fit_rows = fit_first.unwrap_or(n);
            if fit_rows == 0 || fit_rows > n {
                return Err(Error::InvalidArgument(format!(
                    "--fit-first must be between 1 and {n}, got {fit_rows}"
                )));
            }
            let fitted = pca(&head.weights()[..fit_rows * m], m, components)?;
            let projections = head.rows().map(|r| fitted.project(r)).collect::<Result<Vec<_>>>()?;
            write_atomic(&out, &report::projections_csv(head.class_names(), &projections)?)?;
            if let Some(path) = report {
                write_atomic(&path, &report::pca_json(&fitted, &head.class_names()[..fit_rows])?)?;
            }
            Ok(())
        }
        Command::Hist {
            input,
            bins,
            out,
            report,
        } => {
            let values = load_values(&input)?;
            write_atomic(&out, &report::histogram_csv(&histogram(&values, bins)?)?)?;
            if let Some(path) = report {
                write_atomic(&path, &report::to_json("moments", &moments(&values)?)?)?;
            }
            Ok(())
        }
        Command::Mismatch {
            head,
            embeddings,
            report,
        } => {
            let head = load_head(&head)?;
            let emb = load_embeddings(&embeddings)?;
            let r = distribution_mismatch(emb.values(), head.weights())?;
            write_atomic(&report, &report::to_json("mismatch", &r)?)
        }
        Command::Synth {
            preset,
            classes,
            dim,
            per_class,
            seed,
            novel_classes,
            out_dir,
        } => synth(&preset.build(classes, dim, per_class, seed), novel_classes, &out_dir),
        Command::Interfere {
            preset,
            new_classes,
            shots,
            seeds,
            classes,
            dim,
            per_class,
            seed,
            report,
        } => {
            if seeds == 0 {
                return Err(Error::InvalidArgument("--seeds must be at least 1".into()));
            }
            let p = preset.build(classes, dim, per_class, seed);
            let summary = interference_sweep(&p, new_classes, shots, seeds)?;
            write_atomic(&report, &report::to_json("interference", &summary)?)
        }
    }
}

impl EpisodeArgs {
    fn spec(&self, shots: usize) -> EpisodeSpec {
        EpisodeSpec {
            ways: self.ways,
            shots,
            queries_per_class: self.queries,
            episodes: self.episodes,
            seed: self.seed,
            method: self.method,
        }
    }
}

struct EpisodeContext {
    pool: EmbeddingSet,
    base: Option<ClassifierHead>,
    reference: Option<ClassifierHead>,
}

impl EpisodeContext {
    fn load(args: &EpisodeArgs) -> Result<Self> {
        Ok(Self {
            pool: load_embeddings(&args.pool)?,
            base: args.base_head.as_deref().map(load_head).transpose()?,
            reference: args.reference_head.as_deref().map(load_head).transpose()?,
        })
    }

    fn setup(&self) -> EpisodeHead<'_> {
        match &self.base {
            Some(h) => EpisodeHead::Extend(h),
            None => EpisodeHead::Scratch {
                reference: self.reference.as_ref(),
            },
        }
    }
}

fn imprint(args: ImprintArgs) -> Result<()> {
    let base = load_head(&args.head)?;
    let support = load_embeddings(&args.support)?;
    let names: Vec<String> = if args.all_classes {
        support.class_names().to_vec()
    } else {
        args.class_names.clone()
    };
    let profile = match &args.profile {
        Some(path) => {
            if args.method != ImprintMethod::Done {
                return Err(Error::InvalidArgument("--profile applies to --method done only".into()));
            }
            Some(load_profile(path)?)
        }
        None => None,
    };
    let (imprinter, mut head) = Imprinter::prepare(args.method, &base)?;
    for name in &names {
        let class = support
            .class_index(name)
            .ok_or_else(|| Error::UnmappableLabel(name.clone()))?;
        let mut rows = support.indices_of(class);
        if let Some(k) = args.shots {
            if k == 0 {
                return Err(Error::InvalidArgument("--shots must be at least 1".into()));
            }
            if rows.len() < k {
                return Err(Error::InsufficientSamples {
                    class: name.clone(),
                    available: rows.len(),
                    needed: k,
                });
            }
            rows.truncate(k);
        }
        let shots: Vec<&[f64]> = rows.iter().map(|&i| support.row(i)).collect();
        head = match &profile {
            Some(p) => add_class_done_with(&head, p, &aggregate_shots(&shots, ImprintMethod::Done)?, name)?,
            None => imprinter.add(&head, &shots, name)?,
        };
    }
    write_atomic(&args.out, &formats::write_head(&head))
}

fn load_profile(path: &Path) -> Result<ReferenceProfile> {
    load_profile_inner(path).map_err(|e| e.at(path))
}

fn load_profile_inner(path: &Path) -> Result<ReferenceProfile> {
    let value: serde_json::Value = serde_json::from_slice(&fs::read(path)?)?;
    if value.get("schema").and_then(|v| v.as_u64()) != Some(u64::from(report::SCHEMA_VERSION))
        || value.get("kind").and_then(|v| v.as_str()) != Some("profile")
    {
        return Err(Error::InvalidArgument("not a schema-1 profile report".into()));
    }
    serde_json::from_value::<ReferenceProfile>(value)?.validated()
}

fn load_values(path: &Path) -> Result<Vec<f64>> {
    let is_csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    if is_csv {
        return Ok(load_embeddings(path)?.values().to_vec());
    }
    let bytes = fs::read(path).map_err(|e| Error::from(e).at(path))?;
    match sniff(&bytes) {
        Some(Container::Head) => Ok(formats::read_head(&bytes)
            .map_err(|e| Error::from(e).at(path))?
            .weights()
            .to_vec()),
        Some(Container::Embeddings) => Ok(formats::read_embeddings(&bytes)
            .map_err(|e| Error::from(e).at(path))?
            .values()
            .to_vec()),
        None => Err(Error::InvalidArgument(format!(
            "{} is neither an embedding set nor a head",
            path.display()
        ))),
    }
}

/// Parses `1,2,5` and `a..b` (half-open) items into one list, in order.
fn parse_index_list(text: &str) -> Result<Vec<usize>> {
    let bad = |item: &str| Error::InvalidArgument(format!("bad index list item {item:?}"));
    let mut out = Vec::new();
    for item in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        match item.split_once("..") {
            Some((a, b)) => {
                let a: usize = a.trim().parse().map_err(|_| bad(item))?;
                let b: usize = b.trim().parse().map_err(|_| bad(item))?;
                out.extend(a..b);
            }
            None => out.push(item.parse().map_err(|_| bad(item))?),
        }
    }
    Ok(out)
}

#[derive(Serialize)]
struct SynthManifest<'a> {
    preset: &'a SynthPreset,
    novel_classes: usize,
    files: Vec<&'a str>,
}

fn synth(preset: &SynthPreset, novel_classes: usize, out_dir: &Path) -> Result<()> {
    let data = generate_with_novel(preset, novel_classes)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::from(e).at(out_dir))?;
    let mut files = vec![("head.hed", formats::write_head(&data.head))];
    files.push(("train.emb", formats::write_embeddings(&data.train)));
    files.push(("test.emb", formats::write_embeddings(&data.test)));
    let eval_queries = match (&data.novel_train, &data.novel_test) {
        (Some(support), Some(query)) => {
            files.push(("novel_support.emb", formats::write_embeddings(support)));
            files.push(("novel_query.emb", formats::write_embeddings(query)));
            data.test.concat(query)?
        }
        _ => data.test.clone(),
    };
    files.push(("eval_queries.emb", formats::write_embeddings(&eval_queries)));
    for (name, bytes) in &files {
        write_atomic(&out_dir.join(name), bytes)?;
    }
    let manifest = SynthManifest {
        preset,
        novel_classes,
        files: files.iter().map(|(n, _)| *n).collect(),
    };
    write_atomic(&out_dir.join("manifest.json"), &report::to_json("synth", &manifest)?)
}
