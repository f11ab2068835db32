//! Command-line front end: generate, train, eval, infer and oracle.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{generate, generate_example, read_examples, write_examples, GenConfig};
use crate::decode::{infer, DecodeConfig};
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::model::gradcheck::{check_example, randomize};
use crate::model::{predict_all, train, Checkpoint, EncoderConfig, ModelParams, TrainConfig, Variant};
use crate::pgm::{
    conditional_answer, conditional_edge, conditional_node, exact_conditional, pairs, pseudolikelihood_log,
    Assignment, LogPotentials, Variable,
};
use crate::theory::{parse_query, parse_statement, Statement, StatementKind, Theory};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "probr", version, about = "Joint answer and proof prediction over rule bases")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset as JSON lines.
    Generate(GenerateArgs),
    /// Train a model and write a checkpoint plus a per-epoch log.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Answer one query against a theory file.
    Infer(InferArgs),
    /// Check the model's conditionals and gradients against brute force.
    Oracle(OracleArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub depth: usize,
    #[arg(long)]
    pub num: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub dev: Option<PathBuf>,
    /// Checkpoint to write; the epoch log goes to `<model>.log`.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 8)]
    pub batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 1.0)]
    pub clip: f64,
    #[arg(long, default_value = "base")]
    pub variant: Variant,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    /// Also print the per-depth table.
    #[arg(long)]
    pub per_depth: bool,
    /// Write the metrics report here as well as to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    /// One statement per line, optionally prefixed with `ID:`.
    pub theory: PathBuf,
    pub query: String,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[arg(long, default_value_t = 3)]
    pub m: usize,
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

/// Parses `argv` (including the program name) and runs the command,
/// returning the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let mut stdout = std::io::stdout().lock();
    match execute(cli.command, &mut stdout) {
        Ok(()) => EXIT_OK,
        Err(Error::Config(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}

pub fn execute(command: Command, out: &mut dyn Write) -> Result<()> {
    match command {
        Command::Generate(a) => cmd_generate(a, out),
        Command::Train(a) => cmd_train(a, out),
        Command::Eval(a) => cmd_eval(a, out),
        Command::Infer(a) => cmd_infer(a, out),
        Command::Oracle(a) => cmd_oracle(a, out),
    }
}

fn decode_config(threshold: f64) -> Result<DecodeConfig> {
    let cfg = DecodeConfig {
        node_threshold: threshold,
        ..DecodeConfig::default()
    };
    cfg.validate().map_err(|_| Error::Config(format!("--threshold must lie in (0, 1), got {threshold}")))?;
    Ok(cfg)
}

fn cmd_generate(a: GenerateArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = GenConfig {
        num_examples: a.num,
        max_depth: a.depth,
        seed: a.seed,
        ..GenConfig::default()
    };
    let examples = generate(&cfg)?;
    write_examples(&a.out, &examples)?;
    writeln!(out, "wrote {} examples to {}", examples.len(), a.out.display())?;
    Ok(())
}

pub fn log_path(model: &Path) -> PathBuf {
    let mut s = model.as_os_str().to_owned();
    s.push(".log");
    PathBuf::from(s)
}

fn cmd_train(a: TrainArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch,
        learning_rate: a.lr,
        grad_clip: a.clip,
        variant: a.variant,
        seed: a.seed,
        ..TrainConfig::default()
    };
    cfg.validate()?;
    let train_set = read_examples(&a.train)?;
    let dev_set = match &a.dev {
        Some(p) => read_examples(p)?,
        None => Vec::new(),
    };
    let encoder = EncoderConfig {
        seed: a.seed,
        ..EncoderConfig::default()
    };
    info!("training on {} examples, {} dev", train_set.len(), dev_set.len());
    let result = train(&train_set, &dev_set, &cfg, encoder)?;
    Checkpoint::new(&result.params, Some(cfg), Some(&result.optimizer)).save(&a.model)?;
    let log = log_path(&a.model);
    let mut w = BufWriter::new(File::create(&log)?);
    for entry in &result.log {
        serde_json::to_writer(&mut w, entry)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    writeln!(
        out,
        "wrote {} (best epoch {}) and {}",
        a.model.display(),
        result.best_epoch,
        log.display()
    )?;
    Ok(())
}

fn load_params(path: &Path) -> Result<ModelParams> {
    Checkpoint::load(path)?.params()
}

fn cmd_eval(a: EvalArgs, out: &mut dyn Write) -> Result<()> {
    let decode = decode_config(a.threshold)?;
    let params = load_params(&a.model)?;
    let gold = read_examples(&a.test)?;
    let preds = predict_all(&params, &gold, &decode)?;
    let metrics = evaluate(&preds, &gold)?;
    let report = serde_json::to_string(&metrics)?;
    writeln!(out, "{report}")?;
    if a.per_depth {
        write!(out, "{}", metrics.table())?;
    }
    if let Some(path) = a.out {
        std::fs::write(path, format!("{report}\n"))?;
    }
    Ok(())
}

/// Reads a theory file: one statement per line, `#` comments and blank
/// lines ignored. Lines without an `ID:` prefix get `F<k>`/`R<k>` ids.
pub fn read_theory(text: &str) -> Result<Theory> {
    let mut statements: Vec<Statement> = Vec::new();
    let (mut facts, mut rules) = (0, 0);
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (id, body) = match line.split_once(':') {
            Some((id, body)) => (Some(id.trim().to_string()), body.trim()),
            None => (None, line),
        };
        let mut s = parse_statement(body, id.as_deref().unwrap_or("_"))?;
        if id.is_none() {
            s.id = match s.kind() {
                StatementKind::Fact => {
                    facts += 1;
                    format!("F{facts}")
                }
                StatementKind::Rule => {
                    rules += 1;
                    format!("R{rules}")
                }
            };
        }
        statements.push(s);
    }
    Theory::new(statements)
}

fn cmd_infer(a: InferArgs, out: &mut dyn Write) -> Result<()> {
    let decode = decode_config(a.threshold)?;
    let params = load_params(&a.model)?;
    let theory = read_theory(&std::fs::read_to_string(&a.theory)?)?;
    let query = parse_query(&a.query)?;
    let p = infer(&params, &theory, &query, &decode)?;
    writeln!(out, "answer: {}", p.answer)?;
    let nodes: Vec<&str> = p.proof.nodes.iter().map(String::as_str).collect();
    writeln!(out, "nodes: {}", nodes.join(" "))?;
    for (i, j) in &p.proof.edges {
        writeln!(out, "edge: {i} -> {j}")?;
    }
    Ok(())
}

/// Largest deviations found by the oracle command.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct OracleReport {
    pub max_conditional_error: f64,
    pub max_pseudolikelihood_error: f64,
    pub max_gradient_error: f64,
    pub gradients_checked: usize,
}

pub const CONDITIONAL_TOL: f64 = 1e-9;
pub const PSEUDOLIKELIHOOD_TOL: f64 = 1e-8;
pub const GRADIENT_TOL: f64 = 1e-4;

pub fn run_oracle(m: usize, trials: usize, seed: u64) -> Result<OracleReport> {
    if m == 0 {
        return Err(Error::Config("--m must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = OracleReport::default();
    for _ in 0..trials {
        let lp = LogPotentials::random(m, 2.0, &mut rng);
        let y = Assignment::random(m, &mut rng);
        let mut exact_pl = 0.0;
        let mut worst = 0.0f64;
        let mut compare = |fast: [f64; 2], var: Variable, y: &Assignment| -> Result<()> {
            let slow = exact_conditional(&lp, y, var)?;
            worst = worst.max((fast[0] - slow[0]).abs()).max((fast[1] - slow[1]).abs());
            exact_pl += slow[usize::from(y.get(var))].ln();
            Ok(())
        };
        compare(conditional_answer(&lp, &y.v, &y.e)?, Variable::Answer, &y)?;
        for i in 0..m {
            compare(conditional_node(&lp, &y, i)?, Variable::Node(i), &y)?;
        }
        for (i, j) in pairs(m) {
            compare(conditional_edge(&lp, &y, i, j)?, Variable::Edge(i, j), &y)?;
        }
        report.max_conditional_error = report.max_conditional_error.max(worst);
        let pl = pseudolikelihood_log(&lp, &y)?;
        report.max_pseudolikelihood_error = report.max_pseudolikelihood_error.max((pl - exact_pl).abs());
    }

    // Gradients on small generated examples with every parameter randomized.
    let encoder = EncoderConfig {
        hash_dim: 64,
        embed_dim: 6,
        hidden_dim: 6,
        seed,
    };
    let gen = GenConfig {
        num_examples: 1,
        max_depth: 1,
        num_entities: 1,
        num_attributes: 4,
        facts_range: (1, 2),
        rules_range: (1, 1),
        ..GenConfig::default()
    };
    for (k, variant) in Variant::ALL.into_iter().enumerate() {
        let ex = generate_example(&gen, &format!("oracle-{k}"), k % 2 == 0, &mut rng)?;
        let mut params = ModelParams::init(encoder)?;
        randomize(&mut params, 0.5, &mut rng);
        let check = check_example(&params, &ex, variant, 50, 1e-4, &mut rng)?;
        report.max_gradient_error = report.max_gradient_error.max(check.max_rel_error);
        report.gradients_checked += check.checked;
    }
    Ok(report)
}

fn cmd_oracle(a: OracleArgs, out: &mut dyn Write) -> Result<()> {
    let r = run_oracle(a.m, a.trials, a.seed)?;
    writeln!(out, "max conditional error: {:.3e}", r.max_conditional_error)?;
    writeln!(out, "max pseudolikelihood error: {:.3e}", r.max_pseudolikelihood_error)?;
    writeln!(
        out,
        "max gradient relative error: {:.3e} over {} parameters",
        r.max_gradient_error, r.gradients_checked
    )?;
    if r.max_conditional_error > CONDITIONAL_TOL
        || r.max_pseudolikelihood_error > PSEUDOLIKELIHOOD_TOL
        || r.max_gradient_error > GRADIENT_TOL
    {
        return Err(Error::OracleFailed("tolerances exceeded".into()));
    }
    Ok(())
}
