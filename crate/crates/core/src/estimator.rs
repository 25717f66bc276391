//! Analytic quality-of-results model.
//!
//! Deliberately coarse: every innermost band is pipelined at II = 1, so a
//! band costs `ceil(prod(trip) / prod(unroll))` cycles; an imperfect nest
//! multiplies its outer band by the cost of its body. Resources scale with
//! the unroll product around each statement.

use crate::ir::*;
use serde::Deserialize;
use std::collections::BTreeSet;
use std::fmt;

/// Model constants. Any subset can be overridden from a TOML file.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostModel {
    pub frequency_mhz: f64,
    pub pipeline_depth: u64,
    pub dsp_float_mul: u64,
    pub dsp_float_add: u64,
    pub dsp_float_div: u64,
    pub dsp_int_mul: u64,
    pub dsp_int_add: u64,
    pub dsp_int_div: u64,
    /// Operator latencies; informational, the model pipelines at II = 1.
    pub latency_int: u64,
    pub latency_float_add: u64,
    pub latency_float_mul: u64,
    pub lut_per_node: u64,
    pub lut_per_access: u64,
    /// Extra address logic for tiled loops: an access inside a loop of tile
    /// size `t` costs `1 + tile_lut_penalty / t` times more.
    pub tile_lut_penalty: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            frequency_mhz: 200.0,
            pipeline_depth: 4,
            dsp_float_mul: 3,
            dsp_float_add: 2,
            dsp_float_div: 0,
            dsp_int_mul: 1,
            dsp_int_add: 1,
            dsp_int_div: 0,
            latency_int: 1,
            latency_float_add: 4,
            latency_float_mul: 3,
            lut_per_node: 200,
            lut_per_access: 20,
            tile_lut_penalty: 16.0,
        }
    }
}

impl CostModel {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        let m: CostModel = toml::from_str(text).map_err(|e| e.to_string())?;
        if m.frequency_mhz <= 0.0 || !m.frequency_mhz.is_finite() {
            return Err("frequency_mhz must be positive".into());
        }
        Ok(m)
    }

    pub fn frequency_hz(&self) -> f64 {
        self.frequency_mhz * 1e6
    }
}

/// Resource limits of a target device.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResourceBudget {
    pub dsp: u64,
    pub bram_banks: u64,
    pub lut: u64,
    pub frequency_mhz: f64,
}

impl Default for ResourceBudget {
    fn default() -> Self {
        ResourceBudget {
            dsp: 6840,
            bram_banks: 4320,
            lut: 1_182_240,
            frequency_mhz: 200.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeQoR {
    pub id: String,
    pub latency: u64,
    pub dsp: u64,
    pub bram_banks: u64,
    pub lut: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QoR {
    pub nodes: Vec<NodeQoR>,
    /// Dataflow initiation interval: the slowest node.
    pub interval: u64,
    pub dsp: u64,
    pub bram_banks: u64,
    pub lut: u64,
    pub frequency_mhz: f64,
    /// Samples per second.
    pub throughput: f64,
    /// Multiply-accumulates per sample.
    pub ops: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EstimateError {
    NotStructural,
    ZeroDsp,
}

impl fmt::Display for EstimateError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EstimateError::NotStructural => f.write_str("estimation needs a structural program (one top schedule)"),
            EstimateError::ZeroDsp => f.write_str("DSP efficiency is undefined for a design without DSPs"),
        }
    }
}

impl std::error::Error for EstimateError {}

struct Ctx<'a> {
    program: &'a Program,
    cost: &'a CostModel,
}

impl Ctx<'_> {
    fn port_latency(&self, region: &Region) -> u64 {
        accessed_buffers(region)
            .iter()
            .filter_map(|b| self.program.ports.iter().find(|p| p.id == *b))
            .map(|p| p.latency as u64)
            .max()
            .unwrap_or(0)
    }

    fn straight_line(r: &Region) -> bool {
        r.ops
            .iter()
            .all(|op| matches!(op, Op::Compute(_) | Op::TokenSend { .. } | Op::TokenRecv { .. }))
    }

    fn region_latency(&self, r: &Region) -> u64 {
        r.ops.iter().map(|op| self.op_latency(op)).sum()
    }

    fn op_latency(&self, op: &Op) -> u64 {
        match op {
            Op::Loop(l) => {
                // Collapse the perfect band below `l`.
                let mut trips = l.trip_count();
                let mut unroll = l.unroll.max(1) as u64;
                let mut cur = l;
                while let [Op::Loop(inner)] = cur.body.ops.as_slice() {
                    trips *= inner.trip_count();
                    unroll *= inner.unroll.max(1) as u64;
                    cur = inner;
                }
                let iters = trips.div_ceil(unroll);
                if Self::straight_line(&cur.body) {
                    iters
                } else {
                    iters * self.region_latency(&cur.body)
                }
            }
            Op::Compute(_) => 1,
            Op::Copy { dst, .. } => self.program.array(dst).map_or(0, |a| a.len()),
            Op::Node(n) => self.node(n).latency,
            Op::Schedule(s) => s.nodes().map(|n| self.node(n).latency).max().unwrap_or(0),
            Op::Task(r) | Op::Dispatch(r) => self.region_latency(r),
            Op::Alloc { .. } | Op::TokenSend { .. } | Op::TokenRecv { .. } => 0,
        }
    }

    fn node(&self, n: &Node) -> NodeQoR {
        let latency = self.cost.pipeline_depth + self.region_latency(&n.body) + self.port_latency(&n.body);
        let (dsp, lut) = self.resources(&n.body);
        let bram_banks = n
            .inputs
            .iter()
            .filter_map(|i| self.program.array(&i.buffer))
            .filter(|a| a.placement == Placement::OnChip)
            .map(|a| a.banks() * a.depth as u64)
            .sum();
        NodeQoR {
            id: n.id.clone(),
            latency,
            dsp,
            bram_banks,
            lut: self.cost.lut_per_node + lut,
        }
    }

    fn op_dsp(&self, c: &Compute) -> u64 {
        let elem = self.program.array(&c.write.array).map_or(ElemType::F32, |a| a.elem);
        let (mul, add, div) = (c.muls() as u64, c.adds() as u64, c.divs() as u64);
        if elem.is_float() {
            mul * self.cost.dsp_float_mul + add * self.cost.dsp_float_add + div * self.cost.dsp_float_div
        } else {
            mul * self.cost.dsp_int_mul + add * self.cost.dsp_int_add + div * self.cost.dsp_int_div
        }
    }

    /// `(dsp, lut)` of a region, counting each statement once per parallel
    /// copy. Nested nodes count with their own overhead.
    fn resources(&self, r: &Region) -> (u64, u64) {
        let mut dsp = 0u64;
        let mut lut = 0f64;
        fn walk(cx: &Ctx, r: &Region, copies: u64, min_tile: Option<u32>, dsp: &mut u64, lut: &mut f64) {
            for op in &r.ops {
                match op {
                    Op::Loop(l) => {
                        let tile = match (min_tile, l.tile) {
                            (Some(a), Some(b)) => Some(a.min(b)),
                            (a, b) => a.or(b),
                        };
                        walk(cx, &l.body, copies * l.unroll.max(1) as u64, tile, dsp, lut);
                    }
                    Op::Compute(c) => {
                        *dsp += cx.op_dsp(c) * copies;
                        let penalty = min_tile.map_or(1.0, |t| 1.0 + cx.cost.tile_lut_penalty / t.max(1) as f64);
                        *lut += (c.reads.len() + 1) as f64 * cx.cost.lut_per_access as f64 * copies as f64 * penalty;
                    }
                    Op::Copy { .. } => *lut += 2.0 * cx.cost.lut_per_access as f64,
                    Op::Node(n) => {
                        *lut += cx.cost.lut_per_node as f64;
                        walk(cx, &n.body, copies, min_tile, dsp, lut);
                    }
                    other => {
                        if let Some(inner) = other.region() {
                            walk(cx, inner, copies, min_tile, dsp, lut);
                        }
                    }
                }
            }
        }
        walk(self, r, 1, None, &mut dsp, &mut lut);
        (dsp, lut.round() as u64)
    }
}

/// Latency and resources of one node under its current unroll annotations.
pub fn estimate_node(program: &Program, node: &Node, cost: &CostModel) -> NodeQoR {
    Ctx { program, cost }.node(node)
}

/// Multiply-accumulates per execution of the program.
pub fn mac_count(program: &Program) -> u64 {
    fn walk(r: &Region, mult: u64) -> u64 {
        r.ops
            .iter()
            .map(|op| match op {
                Op::Loop(l) => walk(&l.body, mult * l.trip_count()),
                Op::Compute(c) => mult * c.muls() as u64,
                other => other.region().map_or(0, |inner| walk(inner, mult)),
            })
            .sum()
    }
    walk(&program.top, 1)
}

/// Total on-chip memory banks: every on-chip buffer's banks times its
/// ping-pong depth.
pub fn bram_banks(program: &Program) -> u64 {
    let used: BTreeSet<String> = accessed_buffers(&program.top).into_iter().collect();
    let mut allocated = BTreeSet::new();
    for_each_op(&program.top, &mut |op| {
        if let Op::Alloc { buffer } = op {
            allocated.insert(buffer.clone());
        }
    });
    program
        .arrays
        .iter()
        .filter(|a| a.placement == Placement::OnChip && (used.contains(&a.name) || allocated.contains(&a.name)))
        .map(|a| a.banks() * a.depth as u64)
        .sum()
}

/// QoR of the top schedule.
pub fn estimate_schedule(program: &Program, cost: &CostModel) -> Result<QoR, EstimateError> {
    let s = program.top_schedule().ok_or(EstimateError::NotStructural)?;
    let cx = Ctx { program, cost };
    let nodes: Vec<NodeQoR> = s.nodes().map(|n| cx.node(n)).collect();
    let interval = nodes.iter().map(|n| n.latency).max().unwrap_or(0);
    let dsp = nodes.iter().map(|n| n.dsp).sum();
    let lut = nodes.iter().map(|n| n.lut).sum();
    let throughput = if interval == 0 {
        0.0
    } else {
        cost.frequency_hz() / interval as f64
    };
    Ok(QoR {
        nodes,
        interval,
        dsp,
        bram_banks: bram_banks(program),
        lut,
        frequency_mhz: cost.frequency_mhz,
        throughput,
        ops: mac_count(program),
    })
}

/// Throughput x MACs / (DSPs x frequency).
pub fn dsp_efficiency(throughput: f64, ops: f64, dsp: u64, frequency_hz: f64) -> Result<f64, EstimateError> {
    if dsp == 0 {
        return Err(EstimateError::ZeroDsp);
    }
    Ok(throughput * ops / (dsp as f64 * frequency_hz))
}

pub fn report_efficiency(qor: &QoR) -> Result<f64, EstimateError> {
    dsp_efficiency(qor.throughput, qor.ops as f64, qor.dsp, qor.frequency_mhz * 1e6)
}

impl QoR {
    /// Key/value report, one entry per line.
    pub fn to_report(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("interval = {}\n", self.interval));
        s.push_str(&format!("throughput = {:.6}\n", self.throughput));
        s.push_str(&format!("frequency_mhz = {}\n", self.frequency_mhz));
        s.push_str(&format!("ops = {}\n", self.ops));
        s.push_str(&format!("dsp = {}\n", self.dsp));
        s.push_str(&format!("bram_banks = {}\n", self.bram_banks));
        s.push_str(&format!("lut = {}\n", self.lut));
        match report_efficiency(self) {
            Ok(e) => s.push_str(&format!("dsp_efficiency = {e:.9}\n")),
            Err(_) => s.push_str("dsp_efficiency = \"n/a\"\n"),
        }
        for n in &self.nodes {
            s.push_str(&format!(
                "\n[node.{}]\nlatency = {}\ndsp = {}\nbram_banks = {}\nlut = {}\n",
                n.id, n.latency, n.dsp, n.bram_banks, n.lut
            ));
        }
        s
    }
}
