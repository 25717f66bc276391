//! The fixed pass order, with verification after every stage.

use crate::estimator::{estimate_schedule, CostModel, QoR};
use crate::exec::Exec;
use crate::frontend::{parse, SourceUnit};
use crate::functional::{construct_dataflow, fuse_tasks, FusionConfig};
use crate::ir::{verify, Diagnostic, Program};
use crate::lowering::lower_to_structural;
use crate::parallelize::{self, apply_tiling, partition_arrays, ParallelPlan};
use crate::structural::{balance_paths, eliminate_multi_producers, BalanceMode};
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Parse,
    Construct,
    Fuse,
    Lower,
    Eliminate,
    Balance,
    Tile,
    Parallelize,
    Partition,
}

impl Stage {
    pub const ALL: [Stage; 9] = [
        Stage::Parse,
        Stage::Construct,
        Stage::Fuse,
        Stage::Lower,
        Stage::Eliminate,
        Stage::Balance,
        Stage::Tile,
        Stage::Parallelize,
        Stage::Partition,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Parse => "parse",
            Stage::Construct => "construct",
            Stage::Fuse => "fuse",
            Stage::Lower => "lower",
            Stage::Eliminate => "eliminate",
            Stage::Balance => "balance",
            Stage::Tile => "tile",
            Stage::Parallelize => "parallelize",
            Stage::Partition => "partition",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL.into_iter().find(|st| st.name() == s).ok_or_else(|| {
            let names: Vec<&str> = Stage::ALL.iter().map(|s| s.name()).collect();
            format!("unknown stage `{s}` (expected one of: {}, all)", names.join(", "))
        })
    }
}

#[derive(Debug, Clone)]
pub struct Options {
    pub max_parallel_factor: u64,
    pub tile_size: Option<u32>,
    pub intensity_aware: bool,
    pub connection_aware: bool,
    pub unroll_reductions: bool,
    pub balance: BalanceMode,
    /// Whether soft FIFOs may go off-chip; `None` decides from the program.
    pub external_memory: Option<bool>,
    pub fusion: FusionConfig,
    pub cost: CostModel,
    pub exec: Exec,
}

impl Default for Options {
    fn default() -> Self {
        Options {
            max_parallel_factor: 32,
            tile_size: None,
            intensity_aware: true,
            connection_aware: true,
            unroll_reductions: false,
            balance: BalanceMode::OnChip,
            external_memory: None,
            fusion: FusionConfig::default(),
            cost: CostModel::default(),
            exec: Exec::default(),
        }
    }
}

impl Options {
    pub fn parallel_options(&self) -> parallelize::Options {
        parallelize::Options {
            max_factor: self.max_parallel_factor,
            intensity_aware: self.intensity_aware,
            connection_aware: self.connection_aware,
            unroll_reductions: self.unroll_reductions,
            cost: self.cost.clone(),
            exec: self.exec,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PipelineError {
    Parse(String),
    /// A pass refused its input.
    Stage {
        stage: Stage,
        message: String,
    },
    /// A pass produced invalid IR.
    Verify {
        stage: Stage,
        diagnostics: Vec<Diagnostic>,
    },
    Estimate(String),
}

impl fmt::Display for PipelineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PipelineError::Parse(m) => write!(f, "parse: {m}"),
            PipelineError::Stage { stage, message } => write!(f, "{stage}: {message}"),
            PipelineError::Verify { stage, diagnostics } => {
                write!(f, "{stage}: verification failed")?;
                for d in diagnostics {
                    write!(f, "\n  {d}")?;
                }
                Ok(())
            }
            PipelineError::Estimate(m) => write!(f, "estimate: {m}"),
        }
    }
}

impl std::error::Error for PipelineError {}

/// Result of one stage: the new program plus anything worth telling the user.
pub struct StageOutput {
    pub program: Program,
    pub plan: Option<ParallelPlan>,
    pub warnings: Vec<String>,
}

/// Runs a single post-parse stage.
pub fn run_stage(stage: Stage, program: &Program, opts: &Options) -> Result<StageOutput, PipelineError> {
    let err = |message: String| PipelineError::Stage { stage, message };
    let plain = |program| StageOutput {
        program,
        plan: None,
        warnings: Vec::new(),
    };
    let out = match stage {
        Stage::Parse => plain(program.clone()),
        Stage::Construct => plain(construct_dataflow(program)),
        Stage::Fuse => plain(fuse_tasks(program, &opts.fusion)),
        Stage::Lower => plain(lower_to_structural(program).map_err(|e| err(e.to_string()))?),
        Stage::Eliminate => plain(eliminate_multi_producers(program)),
        Stage::Balance => {
            plain(balance_paths(program, opts.balance, opts.external_memory).map_err(|e| err(e.to_string()))?)
        }
        Stage::Tile => plain(match opts.tile_size {
            Some(t) => apply_tiling(program, t),
            None => program.clone(),
        }),
        Stage::Parallelize => {
            let (p, plan) =
                parallelize::parallelize(program, &opts.parallel_options()).map_err(|e| err(e.to_string()))?;
            StageOutput {
                program: p,
                warnings: plan.diagnostics.clone(),
                plan: Some(plan),
            }
        }
        Stage::Partition => {
            let (p, warnings) = partition_arrays(program);
            StageOutput {
                program: p,
                plan: None,
                warnings,
            }
        }
    };
    verify(&out.program).map_err(|diagnostics| PipelineError::Verify { stage, diagnostics })?;
    Ok(out)
}

pub struct Compiled {
    pub program: Program,
    pub plan: ParallelPlan,
    pub qor: QoR,
    /// Program after each stage, in order, starting with the parsed input.
    pub snapshots: Vec<(Stage, Program)>,
    pub warnings: Vec<String>,
}

impl Compiled {
    /// QoR report followed by the parallelization plan.
    pub fn report(&self) -> String {
        let mut s = format!("kernel = \"{}\"\n", self.program.name);
        s.push_str(&self.qor.to_report());
        s.push_str("\n[plan]\n");
        for order in &self.plan.order {
            let quoted: Vec<String> = order.iter().map(|n| format!("\"{n}\"")).collect();
            s.push_str(&format!("order = [{}]\n", quoted.join(", ")));
        }
        for (id, u) in &self.plan.unroll {
            let f = self.plan.parallel_factor[id];
            let v: Vec<String> = u.iter().map(u32::to_string).collect();
            s.push_str(&format!(
                "{id} = {{ parallel_factor = {f}, unroll = [{}] }}\n",
                v.join(", ")
            ));
        }
        s.push_str("\n[partition]\n");
        for a in self
            .program
            .arrays
            .iter()
            .filter(|a| a.partition.iter().any(|d| d.factor > 1))
        {
            let v: Vec<String> = a.partition.iter().map(|d| d.factor.to_string()).collect();
            s.push_str(&format!(
                "{} = {{ factors = [{}], banks = {} }}\n",
                a.name,
                v.join(", "),
                a.banks()
            ));
        }
        s
    }
}

/// Runs every stage after parsing, then estimates.
pub fn compile_program(parsed: &Program, opts: &Options, keep_snapshots: bool) -> Result<Compiled, PipelineError> {
    verify(parsed).map_err(|diagnostics| PipelineError::Verify {
        stage: Stage::Parse,
        diagnostics,
    })?;
    let mut snapshots = Vec::new();
    if keep_snapshots {
        snapshots.push((Stage::Parse, parsed.clone()));
    }
    let mut program = parsed.clone();
    let mut plan = ParallelPlan::default();
    let mut warnings = Vec::new();
    for stage in &Stage::ALL[1..] {
        let out = run_stage(*stage, &program, opts)?;
        program = out.program;
        if let Some(p) = out.plan {
            plan = p;
        }
        warnings.extend(out.warnings.into_iter().map(|w| format!("{stage}: {w}")));
        if keep_snapshots {
            snapshots.push((*stage, program.clone()));
        }
    }
    let qor = estimate_schedule(&program, &opts.cost).map_err(|e| PipelineError::Estimate(e.to_string()))?;
    Ok(Compiled {
        program,
        plan,
        qor,
        snapshots,
        warnings,
    })
}

pub fn compile(src: &SourceUnit, opts: &Options, keep_snapshots: bool) -> Result<Compiled, PipelineError> {
    let parsed = parse(src).map_err(|e| PipelineError::Parse(format!("{}:{e}", src.path)))?;
    compile_program(&parsed, opts, keep_snapshots)
}
