//! keysim command-line interface.
//!
//! Exit codes: 0 success, 1 usage error, 2 input or analysis error.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};

use keysim::bench::{analyze, parse_pairs, run_bench, BundleCache};
use keysim::compare::{match_graphs, CompareParams, Verdict};
use keysim::ingest::{parse_bundle, validate_cfg};
use keysim::lift::lift_function;
use keysim::report::{to_json_string, GraphDoc, ReportDoc, SideDoc, ValuesDoc};
use keysim::symexec::run::DEFAULT_STEP_BUDGET;
use keysim::symexec::{execute, ExecConfig, DEFAULT_SEED};
use keysim::Width;

#[derive(Parser)]
#[command(
    name = "keysim",
    about = "Cross-architecture binary function similarity via symbolic key-instruction graphs",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Copy)]
struct ExecOpts {
    /// Number of randomized symbolic runs per function.
    #[arg(long, default_value_t = 8)]
    runs: u32,
    /// RNG seed; the fixed default keeps runs reproducible.
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Per-run micro-op budget.
    #[arg(long, default_value_t = DEFAULT_STEP_BUDGET)]
    step_budget: u64,
}

impl ExecOpts {
    fn config(&self) -> anyhow::Result<ExecConfig> {
        if self.runs == 0 {
            return Err(anyhow!("--runs must be at least 1"));
        }
        Ok(ExecConfig {
            runs: self.runs,
            seed: self.seed,
            step_budget: self.step_budget,
        })
    }
}

#[derive(Args, Clone, Copy)]
struct CompareOpts {
    /// Context boundary k: neighborhood hop radius.
    #[arg(long, default_value_t = 1)]
    boundary: u32,
    /// Node similarity threshold θ.
    #[arg(long, default_value_t = 0.8)]
    node_threshold: f64,
    /// Aggregate threshold τ for the similar verdict.
    #[arg(long, default_value_t = 0.5)]
    pair_threshold: f64,
    /// Context weight w in the combined score.
    #[arg(long, default_value_t = 0.5)]
    context_weight: f64,
}

impl CompareOpts {
    fn params(&self) -> anyhow::Result<CompareParams> {
        let params = CompareParams {
            node_threshold: self.node_threshold,
            context_boundary: self.boundary,
            pair_threshold: self.pair_threshold,
            context_weight: self.context_weight,
        };
        params.validate().map_err(|e| anyhow!(e))?;
        Ok(params)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Lift a function and print its micro-ops and diagnostics.
    Lift {
        bundle: PathBuf,
        #[arg(long)]
        func: String,
    },
    /// Symbolically execute a function and dump its value sets.
    Exec {
        bundle: PathBuf,
        #[arg(long)]
        func: String,
        #[command(flatten)]
        exec: ExecOpts,
        /// Output path; stdout when omitted.
        #[arg(long)]
        dump: Option<PathBuf>,
    },
    /// Build and dump the key IR graph of a function.
    Keyir {
        bundle: PathBuf,
        #[arg(long)]
        func: String,
        #[command(flatten)]
        exec: ExecOpts,
        #[arg(long)]
        dump: Option<PathBuf>,
    },
    /// Simplify an expression given in canonical text.
    Simplify {
        expr: String,
        /// Width for leaves the text leaves implicit.
        #[arg(long, default_value_t = 64)]
        width: u32,
    },
    /// Compare two functions: `keysim compare a.bundle:f b.bundle:g`.
    Compare {
        /// Left side as <bundle>:<function>.
        left: String,
        /// Right side as <bundle>:<function>.
        right: String,
        #[command(flatten)]
        exec: ExecOpts,
        #[command(flatten)]
        compare: CompareOpts,
        /// Report path; stdout when omitted.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Classify labelled pairs and report accuracy.
    Bench {
        pairs: PathBuf,
        #[command(flatten)]
        exec: ExecOpts,
        #[command(flatten)]
        compare: CompareOpts,
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

enum RunError {
    Usage(anyhow::Error),
    Input(anyhow::Error),
}

fn usage(e: impl Into<anyhow::Error>) -> RunError {
    RunError::Usage(e.into())
}

fn input(e: impl Into<anyhow::Error>) -> RunError {
    RunError::Input(e.into())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help/version render on stdout with success; real usage errors exit 1
            if e.use_stderr() {
                let _ = write!(std::io::stderr(), "{e}");
                return ExitCode::from(1);
            }
            let _ = write!(std::io::stdout(), "{e}");
            return ExitCode::SUCCESS;
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(RunError::Usage(e)) => {
            eprintln!("usage error: {e}");
            ExitCode::from(1)
        }
        Err(RunError::Input(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<(), RunError> {
    match cli.command {
        Command::Lift { bundle, func } => cmd_lift(&bundle, &func),
        Command::Exec {
            bundle,
            func,
            exec,
            dump,
        } => cmd_exec(&bundle, &func, &exec, dump.as_deref()),
        Command::Keyir {
            bundle,
            func,
            exec,
            dump,
        } => cmd_keyir(&bundle, &func, &exec, dump.as_deref()),
        Command::Simplify { expr, width } => cmd_simplify(&expr, width),
        Command::Compare {
            left,
            right,
            exec,
            compare,
            report,
        } => cmd_compare(&left, &right, &exec, &compare, report.as_deref()),
        Command::Bench {
            pairs,
            exec,
            compare,
            report,
        } => cmd_bench(&pairs, &exec, &compare, report.as_deref()),
    }
}

fn read_bundle(path: &Path) -> Result<keysim::Program, RunError> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(input)?;
    parse_bundle(&text)
        .with_context(|| format!("parsing {}", path.display()))
        .map_err(input)
}

fn load_function<'p>(
    program: &'p keysim::Program,
    path: &Path,
    func: &str,
) -> Result<&'p keysim::ingest::Function, RunError> {
    program
        .function(func)
        .ok_or_else(|| input(anyhow!("{}: no function named `{func}`", path.display())))
}

fn check_valid(f: &keysim::ingest::Function) -> Result<(), RunError> {
    let diags = validate_cfg(f);
    for d in &diags {
        eprintln!("{d}");
    }
    if diags.iter().any(|d| d.is_error()) {
        return Err(input(anyhow!(
            "function `{}` has invalid control flow",
            f.name
        )));
    }
    Ok(())
}

fn emit(path: Option<&Path>, content: &str) -> Result<(), RunError> {
    match path {
        Some(p) => std::fs::write(p, content)
            .with_context(|| format!("writing {}", p.display()))
            .map_err(input),
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

fn cmd_lift(bundle: &Path, func: &str) -> Result<(), RunError> {
    let program = read_bundle(bundle)?;
    let f = load_function(&program, bundle, func)?;
    check_valid(f)?;
    let (lifted, diags) = lift_function(f);
    for block in &f.blocks {
        println!("block {} @{:#x}", block.id, block.address);
        for instr in &block.instructions {
            let rendered: Vec<String> = lifted
                .micro_at(instr.address)
                .iter()
                .map(|op| format!("{op:?}"))
                .collect();
            println!(
                "  {:#x} {} -> {}",
                instr.address,
                instr.mnemonic,
                rendered.join("; ")
            );
        }
    }
    for d in &diags {
        eprintln!("{d}");
    }
    Ok(())
}

fn cmd_exec(
    bundle: &Path,
    func: &str,
    exec: &ExecOpts,
    dump: Option<&Path>,
) -> Result<(), RunError> {
    let config = exec.config().map_err(usage)?;
    let program = read_bundle(bundle)?;
    let f = load_function(&program, bundle, func)?;
    check_valid(f)?;
    let (lifted, mut diags) = lift_function(f);
    let result = execute(&lifted, &config);
    diags.extend(result.diagnostics);
    let doc = ValuesDoc::new(
        &program.source_name,
        func,
        config.runs,
        config.seed,
        &result.value_sets,
        &diags,
    );
    emit(dump, &to_json_string(&doc))
}

fn cmd_keyir(
    bundle: &Path,
    func: &str,
    exec: &ExecOpts,
    dump: Option<&Path>,
) -> Result<(), RunError> {
    let config = exec.config().map_err(usage)?;
    let mut cache = BundleCache::new();
    let (graph, diags) = analyze(&mut cache, bundle, func, &config).map_err(input)?;
    let doc = GraphDoc::new(&bundle.display().to_string(), &graph, &diags);
    emit(dump, &to_json_string(&doc))
}

fn cmd_simplify(expr: &str, width: u32) -> Result<(), RunError> {
    let width = Width::from_bits(width)
        .ok_or_else(|| usage(anyhow!("--width must be 8, 16, 32, or 64")))?;
    let parsed = keysim::parse_expr(expr, width).map_err(input)?;
    println!("{}", keysim::canonical_text(&keysim::simplify(&parsed)));
    Ok(())
}

fn split_spec(spec: &str) -> Result<(PathBuf, String), RunError> {
    match spec.rsplit_once(':') {
        Some((path, func)) if !path.is_empty() && !func.is_empty() => {
            Ok((PathBuf::from(path), func.to_string()))
        }
        _ => Err(usage(anyhow!("expected <bundle>:<function>, got `{spec}`"))),
    }
}

fn cmd_compare(
    left: &str,
    right: &str,
    exec: &ExecOpts,
    compare: &CompareOpts,
    report_path: Option<&Path>,
) -> Result<(), RunError> {
    let config = exec.config().map_err(usage)?;
    let params = compare.params().map_err(usage)?;
    let (left_path, left_func) = split_spec(left)?;
    let (right_path, right_func) = split_spec(right)?;
    let mut cache = BundleCache::new();
    let (ga, mut diags) = analyze(&mut cache, &left_path, &left_func, &config).map_err(input)?;
    let (gb, right_diags) =
        analyze(&mut cache, &right_path, &right_func, &config).map_err(input)?;
    diags.extend(right_diags);
    let report = match_graphs(&ga, &gb, &params);
    let doc = ReportDoc::new(
        SideDoc {
            bundle: left_path.display().to_string(),
            function: left_func,
            nodes: ga.nodes.len(),
        },
        SideDoc {
            bundle: right_path.display().to_string(),
            function: right_func,
            nodes: gb.nodes.len(),
        },
        &report,
        config.runs,
        config.seed,
        &diags,
    );
    emit(report_path, &to_json_string(&doc))
}

fn cmd_bench(
    pairs_path: &Path,
    exec: &ExecOpts,
    compare: &CompareOpts,
    report_path: Option<&Path>,
) -> Result<(), RunError> {
    let config = exec.config().map_err(usage)?;
    let params = compare.params().map_err(usage)?;
    let text = std::fs::read_to_string(pairs_path)
        .with_context(|| format!("reading {}", pairs_path.display()))
        .map_err(input)?;
    let base = pairs_path.parent().unwrap_or(Path::new("."));
    let pairs = parse_pairs(&text, base).map_err(input)?;
    if pairs.is_empty() {
        return Err(input(anyhow!("{}: no pairs", pairs_path.display())));
    }
    let outcome = run_bench(&pairs, &params, &config).map_err(input)?;
    // one summary line per pair on stderr; the artifact stays pure
    for (pair, report) in &outcome.rows {
        let predicted = report.verdict == Verdict::Similar;
        eprintln!(
            "{} {}:{} vs {}:{} aggregate={:.3} label={}",
            if predicted == pair.label {
                "ok  "
            } else {
                "MISS"
            },
            pair.left_bundle.display(),
            pair.left_function,
            pair.right_bundle.display(),
            pair.right_function,
            report.aggregate,
            pair.label as u8,
        );
    }
    eprintln!(
        "accuracy {:.3} over {} pairs",
        outcome.accuracy,
        outcome.rows.len()
    );
    let doc = outcome.to_doc(&params, &config);
    emit(report_path, &to_json_string(&doc))
}
