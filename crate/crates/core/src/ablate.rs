//! Design-space sweep over parallel factor, tile size and the two
//! parallelization heuristics, on the estimator.

use crate::exec::{self, Exec};
use crate::ir::Program;
use crate::pipeline::{compile_program, Options, PipelineError};
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    IaCa,
    Ia,
    Ca,
    Naive,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::IaCa, Variant::Ia, Variant::Ca, Variant::Naive];

    pub fn name(self) -> &'static str {
        match self {
            Variant::IaCa => "ia+ca",
            Variant::Ia => "ia",
            Variant::Ca => "ca",
            Variant::Naive => "naive",
        }
    }

    pub fn flags(self) -> (bool, bool) {
        match self {
            Variant::IaCa => (true, true),
            Variant::Ia => (true, false),
            Variant::Ca => (false, true),
            Variant::Naive => (false, false),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| format!("unknown variant `{s}` (ia+ca, ia, ca, naive)"))
    }
}

#[derive(Debug, Clone)]
pub struct Grid {
    pub factors: Vec<u64>,
    /// `None` leaves loops untiled.
    pub tiles: Vec<Option<u32>>,
    pub variants: Vec<Variant>,
}

impl Grid {
    pub fn cells(&self) -> Vec<(u64, Option<u32>, Variant)> {
        let mut out = Vec::new();
        for &f in &self.factors {
            for &t in &self.tiles {
                for &v in &self.variants {
                    out.push((f, t, v));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub factor: u64,
    pub tile: Option<u32>,
    pub variant: Variant,
    pub throughput: f64,
    pub interval: u64,
    pub dsp: u64,
    pub bram_banks: u64,
    pub lut: u64,
}

pub const CSV_HEADER: &str = "max_parallel_factor,tile_size,variant,throughput,interval,dsp,bram_banks,lut";

impl Row {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{:.6},{},{},{},{}",
            self.factor,
            self.tile.map_or_else(|| "none".to_string(), |t| t.to_string()),
            self.variant,
            self.throughput,
            self.interval,
            self.dsp,
            self.bram_banks,
            self.lut
        )
    }
}

/// Compiles every cell (concurrently under [`Exec::Parallel`]); rows come
/// back in grid order.
pub fn sweep(program: &Program, base: &Options, grid: &Grid, exec: Exec) -> Result<Vec<Row>, PipelineError> {
    let cells = grid.cells();
    exec::map(exec, &cells, |&(factor, tile, variant)| {
        let (ia, ca) = variant.flags();
        let opts = Options {
            max_parallel_factor: factor,
            tile_size: tile,
            intensity_aware: ia,
            connection_aware: ca,
            // Cells already run concurrently.
            exec: Exec::Sequential,
            ..base.clone()
        };
        let c = compile_program(program, &opts, false)?;
        Ok(Row {
            factor,
            tile,
            variant,
            throughput: c.qor.throughput,
            interval: c.qor.interval,
            dsp: c.qor.dsp,
            bram_banks: c.qor.bram_banks,
            lut: c.qor.lut,
        })
    })
    .into_iter()
    .collect()
}

pub fn to_csv(rows: &[Row]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.to_csv());
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus;

    #[test]
    fn empty_and_single_grids() {
        let p = corpus::load("listing1");
        let empty = Grid {
            factors: vec![],
            tiles: vec![None],
            variants: Variant::ALL.to_vec(),
        };
        let rows = sweep(&p, &Options::default(), &empty, Exec::Parallel).unwrap();
        assert_eq!(to_csv(&rows), format!("{CSV_HEADER}\n"));
        let one = Grid {
            factors: vec![8],
            tiles: vec![None],
            variants: vec![Variant::IaCa],
        };
        let rows = sweep(&p, &Options::default(), &one, Exec::Parallel).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(to_csv(&rows).lines().count(), 2);
    }

    #[test]
    fn parallel_sweep_matches_sequential() {
        let p = corpus::load("2mm-small");
        let g = Grid {
            factors: vec![1, 4, 16],
            tiles: vec![None, Some(4)],
            variants: Variant::ALL.to_vec(),
        };
        let a = sweep(&p, &Options::default(), &g, Exec::Sequential).unwrap();
        let b = sweep(&p, &Options::default(), &g, Exec::Parallel).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 24);
    }

    #[test]
    fn variant_names() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>(), Ok(v));
        }
    }
}
