//! `equity`: fairness-audit harness CLI.

use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use equityguard::audit::{run_audit, RunConfig};
use equityguard::config::ConfigMap;
use equityguard::corpus;
use equityguard::error::Error;
use equityguard::gateway::mock::BiasProfile;
use equityguard::lexicon::Lexicon;
use equityguard::metrics::Task;
use equityguard::perturb::{self, TripletMode};
use equityguard::report::{self, Format};
use equityguard::trainer::{
    self, gradcheck,
    loss::{QaExample, TripletText},
    model::EmbeddingModel,
    TaskExample, TrainConfig,
};

#[derive(Parser)]
#[command(name = "equity")]
#[command(about = "Fairness audits and mitigation training for clinical trial matching and medical QA")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Key-value text config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Task override: qa | ctm.
    #[arg(long)]
    task: Option<String>,
    /// Backend override: mock | trained | <http backend name>.
    #[arg(long)]
    backend: Option<String>,
    /// Category override: `all` or comma-separated keys.
    #[arg(long)]
    categories: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory override.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Report formats: comma-separated subset of csv,json,svg.
    #[arg(long)]
    formats: Option<String>,
}

impl CommonArgs {
    fn config_map(&self) -> Result<ConfigMap, Error> {
        let mut map = match &self.config {
            Some(path) => ConfigMap::from_file(path)?,
            None => ConfigMap::default(),
        };
        if let Some(task) = &self.task {
            map.set("task", task.clone());
        }
        if let Some(backend) = &self.backend {
            map.set("backend", backend.clone());
        }
        if let Some(categories) = &self.categories {
            map.set("categories", categories.clone());
        }
        if let Some(seed) = self.seed {
            map.set("seed", seed.to_string());
        }
        if let Some(out) = &self.out {
            map.set("out", out.display().to_string());
        }
        if let Some(formats) = &self.formats {
            map.set("formats", formats.clone());
        }
        Ok(map)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Load, validate, and summarize datasets (composition + histogram).
    Ingest(CommonArgs),
    /// Generate counterfactual variants and contrastive triplets.
    Perturb(CommonArgs),
    /// Run the full fairness audit pipeline.
    Audit(CommonArgs),
    /// Train the embedding model with the combined objective.
    Train(CommonArgs),
    /// Verify analytic gradients against central finite differences.
    Gradcheck(CommonArgs),
    /// Re-emit reports from a persisted audit run.
    Report {
        #[command(flatten)]
        common: CommonArgs,
        /// Persisted run directory.
        #[arg(long)]
        run: PathBuf,
    },
    /// Compare two persisted audit runs.
    Compare {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        before: PathBuf,
        #[arg(long)]
        after: PathBuf,
    },
}

fn load_lexicon(map: &ConfigMap) -> Result<Lexicon, Error> {
    match map.get_path("lexicon_path") {
        Some(path) => Lexicon::from_path(&path),
        None => Lexicon::default_lexicon(),
    }
}

fn cmd_ingest(args: &CommonArgs) -> Result<(), Error> {
    let map = args.config_map()?;
    let lexicon = load_lexicon(&map)?;
    let out_dir = map.get_path("out").unwrap_or_else(|| PathBuf::from("runs"));
    std::fs::create_dir_all(&out_dir)?;
    let mut reports = Vec::new();

    if let Some(path) = map.get_path("qa_path") {
        let format = corpus::QaFormat::parse(map.get("qa_format").unwrap_or("medqa-jsonl"))
            .ok_or_else(|| Error::Validation("unknown qa_format".into()))?;
        let items = corpus::load_qa(&path, format)?;
        let (kept, removed) = corpus::filter_demographic_essential(items.clone(), &lexicon);
        println!(
            "qa: {} items ({} kept, {} demographic-essential removed)",
            items.len(),
            kept.len(),
            removed.len()
        );
        reports.push(corpus::corpus_stats("qa", &items, &lexicon));
    }
    if let Some(path) = map.get_path("topics_path") {
        let topics = corpus::load_topics(&path)?;
        println!("topics: {}", topics.len());
        reports.push(corpus::composition_stats(
            "topics",
            topics.iter().map(|t| t.text.as_str()),
            &lexicon,
        ));
    }
    if let Some(path) = map.get_path("trials_path") {
        let trials = corpus::load_trials(&path)?;
        println!("trials: {}", trials.len());
        reports.push(corpus::composition_stats(
            "trials",
            trials.iter().map(|t| t.summary.as_str()),
            &lexicon,
        ));
    }
    if let Some(path) = map.get_path("qrels_path") {
        let qrels = corpus::load_qrels(&path)?;
        println!("qrels: {} judgments", qrels.grades.len());
    }
    if reports.is_empty() {
        return Err(Error::Validation(
            "ingest needs at least one of qa_path/topics_path/trials_path".into(),
        ));
    }
    let path = out_dir.join("composition.json");
    std::fs::write(&path, serde_json::to_string_pretty(&reports)?)?;
    for report in &reports {
        println!("\ndataset `{}` ({} texts):", report.dataset, report.total);
        for axis in &report.axes {
            let named: Vec<String> = axis
                .rows
                .iter()
                .filter(|r| r.count > 0)
                .map(|r| format!("{} {} ({:.1}%)", r.label, r.count, r.percent))
                .collect();
            println!("  {:?}: {}", axis.axis, named.join(", "));
        }
    }
    println!("\ncomposition report written to {}", path.display());
    Ok(())
}

fn cmd_perturb(args: &CommonArgs) -> Result<(), Error> {
    let map = args.config_map()?;
    let lexicon = load_lexicon(&map)?;
    let seed = map.get_u64("seed", 42)?;
    let categories: Vec<_> = map
        .get_categories("categories")?
        .into_iter()
        .filter(|c| *c != equityguard::Category::Base)
        .collect();
    let exhaustive = map.get_bool("exhaustive_triplets", false)?;
    let mode = if exhaustive {
        TripletMode::Exhaustive
    } else {
        TripletMode::Seeded
    };
    let out_dir = map.get_path("out").unwrap_or_else(|| PathBuf::from("runs"));
    std::fs::create_dir_all(&out_dir)?;

    let texts: Vec<(String, String)> = match map.require("task")? {
        "qa" => {
            let path = map.require_existing_path("qa_path")?;
            let format = corpus::QaFormat::parse(map.get("qa_format").unwrap_or("medqa-jsonl"))
                .ok_or_else(|| Error::Validation("unknown qa_format".into()))?;
            corpus::load_qa(&path, format)?
                .into_iter()
                .map(|i| (i.id, i.question))
                .collect()
        }
        "ctm" => {
            let path = map.require_existing_path("topics_path")?;
            corpus::load_topics(&path)?
                .into_iter()
                .map(|t| (t.id, t.text))
                .collect()
        }
        other => return Err(Error::Validation(format!("unknown task `{other}`"))),
    };

    let mut variants_out = String::new();
    let mut triplets_out = String::new();
    let mut n_variants = 0usize;
    let mut n_triplets = 0usize;
    for (id, text) in &texts {
        let generated = perturb::generate_variants(id, text, &categories, &lexicon, seed, None)?;
        for variant in std::iter::once(&generated.base).chain(generated.variants.iter()) {
            variants_out.push_str(&serde_json::to_string(variant)?);
            variants_out.push('\n');
            n_variants += 1;
        }
        for skip in &generated.skips {
            log::info!("skip: {} {}", skip.base_id, skip.category);
        }
        for triplet in
            perturb::build_triplets(&generated.base, &generated.variants, &lexicon, seed, mode)?
        {
            triplets_out.push_str(&serde_json::to_string(&triplet)?);
            triplets_out.push('\n');
            n_triplets += 1;
        }
    }
    std::fs::write(out_dir.join("variants.jsonl"), variants_out)?;
    std::fs::write(out_dir.join("triplets.jsonl"), triplets_out)?;
    println!(
        "wrote {n_variants} variants and {n_triplets} triplets to {}",
        out_dir.display()
    );
    Ok(())
}

fn cmd_audit(args: &CommonArgs) -> Result<(), Error> {
    let map = args.config_map()?;
    let formats = Format::parse_list(map.get("formats").unwrap_or("csv,json,svg"))?;
    let config = RunConfig::from_map(map)?;
    let run = run_audit(&config)?;
    let dir = config.run_dir();
    report::save_run(&run, &dir)?;
    report::emit_report(&run, &formats, &dir)?;
    println!("run {} written to {}", &run.config_hash[..12], dir.display());
    println!(
        "cells: {}/{} completed{}",
        run.completed_cells,
        run.total_cells,
        if run.partial { " (PARTIAL)" } else { "" }
    );
    if let Some(dp) = run.fairness.dp_gap {
        println!("dp_gap {dp:.4} (score {:.4})", 1.0 - dp);
    }
    if let Some(eo) = run.fairness.eo_gap {
        println!("eo_gap {eo:.4} (score {:.4})", 1.0 - eo);
    }
    for reason in &run.fairness.undefined {
        println!("undefined: {reason}");
    }
    if let Some(cost) = &run.cost {
        println!("{cost}");
    }
    if run.partial {
        return Err(Error::PartialRun {
            completed: run.completed_cells,
            total: run.total_cells,
        });
    }
    Ok(())
}

fn load_triplets(path: &PathBuf) -> Result<Vec<TripletText>, Error> {
    let text = std::fs::read_to_string(path)?;
    let mut triplets = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        // Accept both full Triplet records (with provenance) and bare texts.
        if let Ok(t) = serde_json::from_str::<perturb::Triplet>(line) {
            triplets.push(TripletText {
                anchor: t.anchor.text,
                positive: t.positive.text,
                negative: t.negative.text,
            });
        } else {
            triplets.push(serde_json::from_str::<TripletText>(line)?);
        }
    }
    Ok(triplets)
}

fn train_config_from_map(map: &ConfigMap) -> Result<TrainConfig, Error> {
    let defaults = TrainConfig::default();
    let config = TrainConfig {
        lambda: map.get_f64("lambda", defaults.lambda)?,
        margin: map.get_f64("margin", defaults.margin)?,
        learning_rate: map.get_f64("learning_rate", defaults.learning_rate)?,
        lr_multiplier: map.get_f64("lr_multiplier", defaults.lr_multiplier)?,
        beta1: map.get_f64("beta1", defaults.beta1)?,
        beta2: map.get_f64("beta2", defaults.beta2)?,
        epsilon: map.get_f64("epsilon", defaults.epsilon)?,
        epochs: map.get_usize("epochs", defaults.epochs)?,
        batch_size: map.get_usize("batch_size", defaults.batch_size)?,
        seed: map.get_u64("seed", defaults.seed)?,
        tau: map.get_f64("tau", defaults.tau)?,
        reduction: match map.get("reduction").unwrap_or("sum") {
            "sum" => trainer::Reduction::Sum,
            "mean" => trainer::Reduction::Mean,
            other => {
                return Err(Error::Validation(format!(
                    "reduction must be sum|mean, got `{other}`"
                )))
            }
        },
        schedule: match map.get("schedule").unwrap_or("joint") {
            "joint" => trainer::BatchSchedule::Joint,
            "alternating" => trainer::BatchSchedule::Alternating,
            other => {
                return Err(Error::Validation(format!(
                    "schedule must be joint|alternating, got `{other}`"
                )))
            }
        },
        vocab_dim: map.get_usize("vocab_dim", defaults.vocab_dim)?,
        embed_dim: map.get_usize("embed_dim", defaults.embed_dim)?,
    };
    config.validate()?;
    Ok(config)
}

fn cmd_train(args: &CommonArgs) -> Result<(), Error> {
    let map = args.config_map()?;
    let config = train_config_from_map(&map)?;
    let out_dir = map.get_path("out").unwrap_or_else(|| PathBuf::from("runs"));
    std::fs::create_dir_all(&out_dir)?;

    let triplets = load_triplets(&map.require_existing_path("triplets_path")?)?;
    let qa_path = map.require_existing_path("qa_path")?;
    let format = corpus::QaFormat::parse(map.get("qa_format").unwrap_or("medqa-jsonl"))
        .ok_or_else(|| Error::Validation("unknown qa_format".into()))?;
    let items = corpus::load_qa(&qa_path, format)?;
    let task_examples: Vec<TaskExample> = items
        .iter()
        .map(|item| {
            let gold_index = item
                .options
                .keys()
                .position(|l| *l == item.gold)
                .expect("validated gold");
            TaskExample::Qa(QaExample {
                question: item.question.clone(),
                options: item.options.values().cloned().collect(),
                gold_index,
            })
        })
        .collect();

    let mut model = match map.get_path("checkpoint") {
        Some(path) if path.exists() => EmbeddingModel::load(&path)?,
        _ => EmbeddingModel::new(config.vocab_dim, config.embed_dim, config.seed),
    };
    let report = trainer::train(&mut model, &task_examples, &triplets, &config)?;
    let checkpoint = out_dir.join("model.json");
    model.save(&checkpoint)?;
    std::fs::write(
        out_dir.join("trajectory.csv"),
        trainer::trajectory_csv(&report.trajectory),
    )?;
    std::fs::write(
        out_dir.join("train_meta.json"),
        serde_json::to_string_pretty(&serde_json::json!({
            "config": config,
            "effective_lr": report.effective_lr,
            "published_lr": report.published_lr,
            "lr_multiplier": report.lr_multiplier,
            "steps": report.steps,
        }))?,
    )?;
    let last = report.trajectory.last().expect("at least one epoch");
    println!(
        "trained {} steps; final epoch losses: task {:.4}, contrastive {:.4}, combined {:.4}",
        report.steps, last.task, last.contrastive, last.combined
    );
    println!("checkpoint: {}", checkpoint.display());
    Ok(())
}

fn cmd_gradcheck(args: &CommonArgs) -> Result<(), Error> {
    let map = args.config_map()?;
    let config = train_config_from_map(&map)?;
    let samples = map.get_usize("gradcheck_samples", 128)?;
    let epsilon = map.get_f64("gradcheck_epsilon", gradcheck::DEFAULT_EPSILON)?;
    let mut model = EmbeddingModel::new(config.vocab_dim.min(512), config.embed_dim.min(16), config.seed);

    let triplet = TripletText {
        anchor: "a patient with progressive dyspnea on exertion".into(),
        positive: "a homeless patient with progressive dyspnea on exertion".into(),
        negative: "a homeless unemployed patient with progressive dyspnea on exertion".into(),
    };
    let qa = QaExample {
        question: "sudden chest pain radiating to the back".into(),
        options: vec![
            "ct angiography".into(),
            "troponin series".into(),
            "chest radiograph".into(),
            "d-dimer".into(),
        ],
        gold_index: 0,
    };
    let lambda = config.lambda;
    let margin = config.margin;
    let tau = config.tau;
    let loss_fn = move |m: &EmbeddingModel,
                        mut grads: Option<&mut equityguard::trainer::model::Gradients>|
          -> Result<f64, Error> {
        let task = trainer::loss::qa_task_loss(m, &qa, tau, grads.as_deref_mut())?;
        let mut contrastive_grads = equityguard::trainer::model::Gradients::zeros(m);
        let sink = if grads.is_some() && lambda > 0.0 {
            Some(&mut contrastive_grads)
        } else {
            None
        };
        let (contrastive, _, _) = trainer::loss::triplet_loss(m, &triplet, margin, sink)?;
        if let Some(grads) = grads {
            if lambda > 0.0 {
                grads.add_scaled(&contrastive_grads, lambda);
            }
        }
        trainer::loss::combined_loss(task, contrastive, lambda)
    };

    let report = gradcheck::grad_check(&mut model, loss_fn, epsilon, samples, config.seed)?;
    for block in &report.blocks {
        println!(
            "block {}: {} coords checked, max relative error {:.3e}",
            block.block, block.checked, block.max_relative_error
        );
    }
    println!(
        "gradcheck {} (epsilon {:.1e}, threshold {:.1e})",
        if report.passed() { "PASS" } else { "FAIL" },
        report.epsilon,
        gradcheck::MAX_RELATIVE_ERROR
    );
    if !report.passed() {
        return Err(Error::GradCheck("max relative error above threshold".into()));
    }
    Ok(())
}

fn cmd_report(common: &CommonArgs, run_dir: &PathBuf) -> Result<(), Error> {
    let map = common.config_map()?;
    let formats = Format::parse_list(map.get("formats").unwrap_or("csv,json,svg"))?;
    let run = report::load_run(run_dir)?;
    let written = report::emit_report(&run, &formats, run_dir)?;
    for path in written {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_compare(before: &PathBuf, after: &PathBuf) -> Result<(), Error> {
    let before_run = report::load_run(before)?;
    let after_run = report::load_run(after)?;
    let comparison = report::compare_runs(&before_run, &after_run)?;
    print!("{}", report::compare_text(&comparison));
    let path = after.join("comparison.json");
    std::fs::write(&path, serde_json::to_string_pretty(&comparison)?)?;
    println!("comparison written to {}", path.display());
    Ok(())
}

fn run() -> Result<(), Error> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Ingest(args) => cmd_ingest(args),
        Command::Perturb(args) => cmd_perturb(args),
        Command::Audit(args) => cmd_audit(args),
        Command::Train(args) => cmd_train(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
        Command::Report { common, run } => cmd_report(common, run),
        Command::Compare { before, after, .. } => cmd_compare(before, after),
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Err(err) = run() {
        eprintln!("error: {err}");
        std::process::exit(err.exit_code());
    }
}

// Silence an unused-import lint when no subcommand touches BiasProfile/Task
// directly; both are part of the config surface exercised in tests.
#[allow(unused)]
fn _type_surface(_: Option<(BiasProfile, Task, BTreeMap<String, String>)>) {}
