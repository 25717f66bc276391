//! Pipeline invariants on randomly generated kernels.

use hida::emit::{emit, Vitis};
use hida::frontend::parse_str;
use hida::functional::{FusionConfig, Profitability, ELEMENTWISE, PRODUCER_CONSUMER};
use hida::interp;
use hida::ir::{dump, for_each_op, load, Op, Program};
use hida::parallelize::{divisors, node_loops};
use hida::pipeline::{run_stage, Options, Stage};
use hida::structural::{producer_counts, BalanceMode, NodeGraph};
use proptest::prelude::*;

#[derive(Debug, Clone)]
enum Stmt {
    /// `dst[i][j] = a op b`, optionally reading `a` transposed.
    Elementwise {
        dst: usize,
        a: usize,
        b: usize,
        transpose: bool,
        op: char,
    },
    /// `dst = a * b` with an initializing statement.
    Matmul { dst: usize, a: usize, b: usize },
    /// `dst[i][j] += a[i][j]`, with no initialization.
    Accumulate { dst: usize, a: usize },
}

#[derive(Debug, Clone)]
struct Kernel {
    n: u64,
    temps: usize,
    stmts: Vec<Stmt>,
}

/// Array 0 is the input `X`, 1 the output `Y`, the rest on-chip temporaries.
fn name(k: usize) -> String {
    match k {
        0 => "X".into(),
        1 => "Y".into(),
        t => format!("T{}", t - 2),
    }
}

impl Kernel {
    fn source(&self) -> String {
        let n = self.n;
        let mut s = String::from("kernel rand;\n");
        s.push_str(&format!(
            "array X[{n}][{n}] : f32 @ external;\narray Y[{n}][{n}] : f32 @ external;\n"
        ));
        for t in 0..self.temps {
            s.push_str(&format!("array T{t}[{n}][{n}] : f32 @ onchip;\n"));
        }
        for st in &self.stmts {
            match st {
                Stmt::Elementwise { dst, a, b, transpose, op } => {
                    let ai = if *transpose { "[j][i]" } else { "[i][j]" };
                    s.push_str(&format!(
                        "for i in 0..{n} {{ for j in 0..{n} {{ {}[i][j] = {}{ai} {op} {}[i][j]; }} }}\n",
                        name(*dst),
                        name(*a),
                        name(*b)
                    ));
                }
                Stmt::Matmul { dst, a, b } => s.push_str(&format!(
                    "for i in 0..{n} {{ for j in 0..{n} {{ {d}[i][j] = 0.0; for k in 0..{n} {{ {d}[i][j] += {}[i][k] * {}[k][j]; }} }} }}\n",
                    name(*a),
                    name(*b),
                    d = name(*dst)
                )),
                Stmt::Accumulate { dst, a } => s.push_str(&format!(
                    "for i in 0..{n} {{ for j in 0..{n} {{ {}[i][j] += {}[i][j]; }} }}\n",
                    name(*dst),
                    name(*a)
                )),
            }
        }
        s
    }
}

fn kernel() -> impl Strategy<Value = Kernel> {
    (prop::sample::select(vec![4u64, 6, 8]), 1usize..4, 1usize..6).prop_flat_map(|(n, temps, len)| {
        let arrays = temps + 2;
        let stmt = prop_oneof![
            (
                1..arrays,
                0..arrays,
                0..arrays,
                any::<bool>(),
                prop::sample::select(vec!['+', '-', '*'])
            )
                .prop_map(|(dst, a, b, transpose, op)| Stmt::Elementwise {
                    dst,
                    a,
                    b,
                    transpose,
                    op
                }),
            (1..arrays, 0..arrays, 0..arrays).prop_map(|(dst, a, b)| Stmt::Matmul { dst, a, b }),
            (1..arrays, 0..arrays).prop_map(|(dst, a)| Stmt::Accumulate { dst, a }),
        ];
        // The final statement always writes Y so the kernel has an output.
        (prop::collection::vec(stmt, len), 0..arrays, 0..arrays).prop_map(move |(mut stmts, a, b)| {
            stmts.push(Stmt::Elementwise {
                dst: 1,
                a,
                b,
                transpose: false,
                op: '+',
            });
            // Temporaries are read only once something has written them.
            let mut written = vec![false; arrays];
            written[0] = true;
            written[1] = true;
            let fix = |x: &mut usize, w: &[bool]| {
                if !w[*x] {
                    *x = 0;
                }
            };
            for st in &mut stmts {
                let dst = match st {
                    Stmt::Elementwise { dst, a, b, .. } | Stmt::Matmul { dst, a, b } => {
                        fix(a, &written);
                        fix(b, &written);
                        *dst
                    }
                    Stmt::Accumulate { dst, a } => {
                        fix(a, &written);
                        *dst
                    }
                };
                written[dst] = true;
            }
            Kernel { n, temps, stmts }
        })
    })
}

fn options() -> impl Strategy<Value = Options> {
    (
        prop::sample::select(vec![1u64, 2, 4, 8, 16, 64]),
        any::<bool>(),
        any::<bool>(),
        prop::sample::select(vec![BalanceMode::OnChip, BalanceMode::SoftFifo, BalanceMode::Off]),
        0u8..4,
        any::<bool>(),
        prop::option::of(prop::sample::select(vec![2u32, 4])),
    )
        .prop_map(|(f, ia, ca, balance, pats, crit, tile)| {
            let mut patterns = Vec::new();
            if pats & 1 != 0 {
                patterns.push(ELEMENTWISE);
            }
            if pats & 2 != 0 {
                patterns.push(PRODUCER_CONSUMER);
            }
            Options {
                max_parallel_factor: f,
                intensity_aware: ia,
                connection_aware: ca,
                balance,
                external_memory: Some(true),
                tile_size: tile,
                fusion: FusionConfig {
                    patterns,
                    profitability: if crit {
                        Profitability::CriticalBound
                    } else {
                        Profitability::Never
                    },
                },
                ..Options::default()
            }
        })
}

fn stages(p: &Program, opts: &Options) -> Vec<(Stage, Program)> {
    let mut cur = p.clone();
    let mut out = vec![(Stage::Parse, cur.clone())];
    for s in &Stage::ALL[1..] {
        cur = run_stage(*s, &cur, opts).unwrap_or_else(|e| panic!("{e}")).program;
        out.push((*s, cur.clone()));
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn every_stage_preserves_semantics(k in kernel(), opts in options(), seed in 0u64..1000) {
        let p = parse_str(&k.source(), "rand").unwrap();
        let all = stages(&p, &opts);
        let inputs = interp::random_inputs(&p, seed);
        let want = interp::run(&p, &inputs).unwrap();
        for (stage, q) in &all {
            let got = interp::run(q, &inputs).unwrap();
            prop_assert!(interp::compare(&want, &got, 4).is_ok(), "{stage}: {:?}\n{}", interp::compare(&want, &got, 4), k.source());
        }
    }

    #[test]
    fn structural_invariants(k in kernel(), opts in options()) {
        let p = parse_str(&k.source(), "rand").unwrap();
        let all = stages(&p, &opts);
        let after = |s: Stage| &all.iter().find(|(t, _)| *t == s).unwrap().1;

        let elim = after(Stage::Eliminate);
        for (b, n) in producer_counts(elim) {
            prop_assert!(n == 1 || !elim.array(&b).unwrap().is_internal(), "`{b}` has {n} producers");
        }

        let bal = after(Stage::Balance);
        if opts.balance != BalanceMode::Off {
            for_each_op(&bal.top, &mut |op| {
                if let Op::Schedule(s) = op {
                    assert!(NodeGraph::new(bal, s).is_balanced(), "{}", dump(bal));
                }
            });
        }

        let last = &all.last().unwrap().1;
        for_each_op(&last.top, &mut |op| {
            if let Op::Node(n) = op {
                let mut prod = 1u64;
                for l in node_loops(n) {
                    assert_eq!(l.trip % l.unroll as u64, 0, "unroll must divide trip");
                    if let Some(t) = l.tile {
                        assert_eq!(t % l.unroll, 0, "unroll must divide tile");
                    }
                    prod *= l.unroll as u64;
                }
                assert!(prod <= opts.max_parallel_factor.max(1), "product {prod} over {}", opts.max_parallel_factor);
            }
        });
        for a in &last.arrays {
            for (d, e) in a.partition.iter().zip(&a.shape) {
                prop_assert!(d.factor as u64 <= *e);
            }
        }

        let text = dump(last);
        prop_assert_eq!(&load(&text).unwrap(), last);
        prop_assert_eq!(emit(last, &Vitis).unwrap(), emit(last, &Vitis).unwrap());
    }

    #[test]
    fn divisors_are_exactly_the_divisors(n in 1u64..5000) {
        let d = divisors(n);
        prop_assert!(d.windows(2).all(|w| w[0] < w[1]));
        let brute: Vec<u64> = (1..=n).filter(|k| n % k == 0).collect();
        prop_assert_eq!(d, brute);
    }

    #[test]
    fn ulp_distance_is_a_metric(a in -1e6f32..1e6, b in -1e6f32..1e6) {
        prop_assert_eq!(interp::ulp_distance(a, b), interp::ulp_distance(b, a));
        prop_assert_eq!(interp::ulp_distance(a, a), 0);
    }
}
