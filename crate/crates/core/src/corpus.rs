//! Bundled example kernels (`crates/core/examples/*.hk`).

use crate::frontend::{parse_str, SourceUnit};
use crate::ir::Program;

macro_rules! kernel {
    ($name:literal) => {
        ($name, include_str!(concat!("../examples/", $name, ".hk")))
    };
}

/// `(name, source)` for every bundled kernel.
pub const KERNELS: &[(&str, &str)] = &[
    kernel!("listing1"),
    kernel!("diamond"),
    kernel!("multiproducer-internal"),
    kernel!("multiproducer-external"),
    kernel!("2mm-small"),
    kernel!("3mm-small"),
    kernel!("bicg-small"),
    kernel!("gesummv-small"),
    kernel!("jacobi2d-small"),
    kernel!("single-loop"),
    kernel!("elementwise-chain"),
];

pub fn source(name: &str) -> Option<&'static str> {
    KERNELS.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

/// Parses a bundled kernel. Panics on unknown names or parse errors, which
/// are bugs in the corpus.
pub fn load(name: &str) -> Program {
    let src = source(name).unwrap_or_else(|| panic!("no bundled kernel `{name}`"));
    let unit = SourceUnit::new(src, format!("{name}.hk"));
    parse_str(&unit.text, &unit.default_name()).unwrap_or_else(|e| panic!("{name}.hk: {e}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::verify;

    #[test]
    fn every_kernel_parses_and_verifies() {
        for (name, _) in KERNELS {
            let p = load(name);
            verify(&p).unwrap_or_else(|d| panic!("{name}: {d:?}"));
        }
    }

    #[test]
    fn listing1_interfaces() {
        let p = load("listing1");
        let iface: Vec<_> = p
            .arrays
            .iter()
            .filter(|a| a.interface)
            .map(|a| a.name.as_str())
            .collect();
        assert_eq!(iface, ["A_in", "B_in", "C"]);
    }
}
