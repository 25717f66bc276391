use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};
use hida::ablate::{self, Grid, Variant};
use hida::emit::{emit, parse_harness_output, Plain, Vitis};
use hida::estimator::CostModel;
use hida::exec::Exec;
use hida::frontend::{parse, SourceUnit};
use hida::functional::{patterns_by_name, FusionConfig, Profitability};
use hida::interp::{self, Data};
use hida::ir::{dump, load, verify, Program};
use hida::pipeline::{compile_program, run_stage, Options, PipelineError, Stage};
use hida::structural::BalanceMode;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "hida", version, about = "Hierarchical dataflow compiler for HLS")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Optimize a kernel and emit HLS C++ plus a QoR report.
    Compile(CompileArgs),
    /// Check a kernel or IR file for structural validity.
    Verify { input: PathBuf },
    /// Run a kernel or IR file on seeded (or given) inputs.
    Interp(InterpArgs),
    /// Sweep parallel factor, tile size and heuristics; write CSV.
    Ablate(AblateArgs),
    /// Print the IR after one stage.
    Dump(DumpArgs),
}

#[derive(Args, Clone)]
struct PipelineArgs {
    /// Upper bound on any node's parallel factor.
    #[arg(long, default_value_t = 32)]
    max_parallel_factor: u64,
    /// Tile loops longer than this (unroll factors must divide the tile).
    #[arg(long)]
    tile_size: Option<u32>,
    /// Give every node the maximum parallel factor.
    #[arg(long)]
    no_ia: bool,
    /// Ignore connections between nodes when choosing unroll factors.
    #[arg(long)]
    no_ca: bool,
    /// Path balancing: onchip, softfifo or off.
    #[arg(long, default_value = "onchip")]
    balance: BalanceMode,
    /// Comma-separated fusion patterns (elementwise, producer-consumer, none).
    #[arg(long, default_value = "elementwise")]
    fusion_patterns: String,
    /// Also fuse the least critical adjacent tasks while that stays under
    /// the most intense task.
    #[arg(long)]
    fusion_balance: bool,
    /// TOML file overriding estimator constants.
    #[arg(long)]
    cost_model: Option<PathBuf>,
    /// Let the search unroll reduction loops.
    #[arg(long)]
    unroll_reductions: bool,
}

impl PipelineArgs {
    fn options(&self) -> Result<Options> {
        let patterns = patterns_by_name(&self.fusion_patterns).map_err(|e| anyhow!(e))?;
        let cost = match &self.cost_model {
            Some(path) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                CostModel::from_toml(&text).map_err(|e| anyhow!("{}: {e}", path.display()))?
            }
            None => CostModel::default(),
        };
        Ok(Options {
            max_parallel_factor: self.max_parallel_factor,
            tile_size: self.tile_size,
            intensity_aware: !self.no_ia,
            connection_aware: !self.no_ca,
            unroll_reductions: self.unroll_reductions,
            balance: self.balance,
            external_memory: None,
            fusion: FusionConfig {
                patterns,
                profitability: if self.fusion_balance {
                    Profitability::CriticalBound
                } else {
                    Profitability::Never
                },
            },
            cost,
            exec: Exec::Parallel,
        })
    }
}

#[derive(Args)]
struct CompileArgs {
    input: PathBuf,
    #[command(flatten)]
    pipeline: PipelineArgs,
    /// Write IR after these stages (comma-separated, or `all`).
    #[arg(long, value_delimiter = ',')]
    dump_after: Vec<String>,
    /// Emit pragma-free portable C++.
    #[arg(long)]
    plain: bool,
    /// Output directory.
    #[arg(short, long, default_value = ".")]
    output: PathBuf,
    /// Compare interpreter outputs before and after optimization on one
    /// input drawn from `--seed`.
    #[arg(long)]
    self_check: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct InterpArgs {
    input: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Input file with one `NAME v0 v1 ...` line per interface array.
    #[arg(long)]
    inputs: Option<PathBuf>,
    /// Report reads of never-written elements.
    #[arg(long)]
    strict: bool,
}

#[derive(Args)]
struct AblateArgs {
    input: PathBuf,
    #[command(flatten)]
    pipeline: PipelineArgs,
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,16,32,64")]
    factors: Vec<u64>,
    /// Tile sizes; `none` leaves loops untiled.
    #[arg(long, value_delimiter = ',', default_value = "none")]
    tiles: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "ia+ca,ia,ca,naive")]
    variants: Vec<Variant>,
    /// CSV destination; stdout when absent.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct DumpArgs {
    input: PathBuf,
    #[command(flatten)]
    pipeline: PipelineArgs,
    #[arg(long, default_value = "parse")]
    stage: Stage,
}

/// Error that maps to exit status 1: the input or the pipeline is at fault.
#[derive(Debug)]
struct Diagnostics(String);

impl std::fmt::Display for Diagnostics {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Diagnostics {}

fn diag(msg: impl Into<String>) -> anyhow::Error {
    Diagnostics(msg.into()).into()
}

/// Reads a kernel (`.hk`) or textual IR (anything else).
fn read_program(path: &Path) -> Result<Program> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let shown = path.display().to_string();
    if path.extension().is_some_and(|e| e == "hk") {
        parse(&SourceUnit::new(text, shown.clone())).map_err(|e| diag(format!("{shown}:{e}")))
    } else {
        load(&text).map_err(|e| diag(format!("{shown}:{e}")))
    }
}

fn pipeline_error(e: PipelineError) -> anyhow::Error {
    diag(e.to_string())
}

fn dump_stages(list: &[String]) -> Result<Vec<Stage>> {
    let mut out = Vec::new();
    for s in list {
        if s == "all" {
            return Ok(Stage::ALL.to_vec());
        }
        out.push(s.parse::<Stage>().map_err(|e| anyhow!(e))?);
    }
    Ok(out)
}

fn compile(args: CompileArgs) -> Result<()> {
    let opts = args.pipeline.options()?;
    let dumps = dump_stages(&args.dump_after)?;
    let parsed = read_program(&args.input)?;
    let compiled = compile_program(&parsed, &opts, !dumps.is_empty()).map_err(pipeline_error)?;
    for w in &compiled.warnings {
        log::warn!("{w}");
    }
    std::fs::create_dir_all(&args.output).with_context(|| format!("creating {}", args.output.display()))?;
    for (k, (stage, program)) in compiled.snapshots.iter().enumerate() {
        if dumps.contains(stage) {
            let path = args.output.join(format!("{}.{k}-{stage}.hir", compiled.program.name));
            std::fs::write(&path, dump(program)).with_context(|| format!("writing {}", path.display()))?;
        }
    }
    let emitted = if args.plain {
        emit(&compiled.program, &Plain)
    } else {
        emit(&compiled.program, &Vitis)
    }
    .map_err(|e| diag(format!("emit: {e}")))?;
    for (name, text) in emitted.files() {
        let path = args.output.join(name);
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    }
    let report = compiled.report();
    let path = args.output.join(format!("{}.report.toml", compiled.program.name));
    std::fs::write(&path, &report).with_context(|| format!("writing {}", path.display()))?;
    print!("{report}");

    if args.self_check {
        let inputs = interp::random_inputs(&parsed, args.seed);
        let before = interp::run(&parsed, &inputs).map_err(|e| diag(format!("interp (input): {e}")))?;
        let after = interp::run(&compiled.program, &inputs).map_err(|e| diag(format!("interp (optimized): {e}")))?;
        interp::compare(&before, &after, 4).map_err(|e| diag(format!("self-check: {e}")))?;
        println!("\nself_check = \"ok\"");
    }
    Ok(())
}

fn verify_cmd(input: &Path) -> Result<()> {
    let p = read_program(input)?;
    match verify(&p) {
        Ok(()) => {
            println!("{}: ok", input.display());
            Ok(())
        }
        Err(ds) => {
            let lines: Vec<String> = ds.iter().map(|d| format!("{}: {d}", input.display())).collect();
            Err(diag(lines.join("\n")))
        }
    }
}

fn interp_cmd(args: InterpArgs) -> Result<()> {
    let p = read_program(&args.input)?;
    verify(&p).map_err(|ds| diag(ds.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("\n")))?;
    let inputs = match &args.inputs {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            parse_harness_output(&p, &text).map_err(diag)?
        }
        None => interp::random_inputs(&p, args.seed),
    };
    let out = interp::run_with(
        &p,
        &inputs,
        interp::Options {
            strict: args.strict,
            frames: 1,
        },
    )
    .map_err(|e| diag(e.to_string()))?;
    for (name, data) in &out {
        let vals = match data {
            Data::F32(v) => v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>(),
            Data::I32(v) => v.iter().map(|x| x.to_string()).collect(),
        };
        println!("{name} {}", vals.join(" "));
    }
    Ok(())
}

fn ablate_cmd(args: AblateArgs) -> Result<()> {
    let opts = args.pipeline.options()?;
    let tiles = args
        .tiles
        .iter()
        .map(|t| match t.as_str() {
            "none" => Ok(None),
            n => n.parse::<u32>().map(Some).map_err(|_| anyhow!("bad tile size `{n}`")),
        })
        .collect::<Result<Vec<_>>>()?;
    let grid = Grid {
        factors: args.factors.clone(),
        tiles,
        variants: args.variants.clone(),
    };
    let p = read_program(&args.input)?;
    let rows = ablate::sweep(&p, &opts, &grid, Exec::Parallel).map_err(pipeline_error)?;
    let csv = ablate::to_csv(&rows);
    match &args.output {
        Some(path) => std::fs::write(path, csv).with_context(|| format!("writing {}", path.display()))?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn dump_cmd(args: DumpArgs) -> Result<()> {
    let opts = args.pipeline.options()?;
    let mut p = read_program(&args.input)?;
    verify(&p).map_err(|ds| diag(ds.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("\n")))?;
    for stage in Stage::ALL.iter().take_while(|s| **s <= args.stage) {
        p = run_stage(*stage, &p, &opts).map_err(pipeline_error)?.program;
    }
    print!("{}", dump(&p));
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match cli.cmd {
        Cmd::Compile(a) => compile(a),
        Cmd::Verify { input } => verify_cmd(&input),
        Cmd::Interp(a) => interp_cmd(a),
        Cmd::Ablate(a) => ablate_cmd(a),
        Cmd::Dump(a) => dump_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if e.downcast_ref::<Diagnostics>().is_some() {
                eprintln!("error: {e}");
                ExitCode::from(1)
            } else {
                // Bad flag values, unreadable files and the like.
                eprintln!("error: {e:#}");
                ExitCode::from(2)
            }
        }
    }
}
