//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.
//!
//! Set `THINLAYER_SKIP_FINEST=1` to drop the finest epsilon from the
//! convergence study (rates are then fitted on three points).

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};
use thinlayer::cell_solver::{
    effective_tensor, solve_auxiliary_problems, solve_boundary_layer, solve_cell_problems, SampledCoefficient,
};
use thinlayer::geometry::{Orientation, StripeGeometry};
use thinlayer::harness::{run_study, AuxiliarySummary, StudyOptions};
use thinlayer::macro_solver::{MacroStepper, MacroSystem};
use thinlayer::micro_solver::{MicroStepper, MicroSystem};
use thinlayer::numerics::{max_abs, norm2, solve_dense, CsrMatrix, SymTensor2};
use thinlayer::scenario::expr::{BinOp, Func};
use thinlayer::scenario::parser::parse_at;
use thinlayer::scenario::{parse_expression, parse_scenario, Bindings, Expr, Scenario, SyntaxErrorKind, Var};
use thinlayer::timestep::TimeGrid;

const ACCEPT: &str = include_str!("../scenarios/accept.scn");

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

fn null_microstructure() -> Outcome {
    let start = Instant::now();
    let (d11, d22) = (3.0, 0.5);
    let coef = SampledCoefficient::from_fn(16, |_, _| SymTensor2::new(d11, 0.0, d22)).unwrap();
    let aux = solve_auxiliary_problems(coef, SymTensor2::scalar(1.0), SymTensor2::scalar(1.0), 8).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    let w1 = max_abs(&aux.cells.cells[0].w);
    let bl = max_abs(&aux.layer_plus.w).max(max_abs(&aux.layer_minus.w));
    let w2 = max_abs(&aux.second.w);
    let d_err = (aux.tensor.d11() - d11).abs();
    let pass = w1 <= 1e-9 && bl <= 1e-9 && w2 <= 1e-9 && d_err <= 1e-10 && elapsed < 5.0;
    Outcome::new(
        pass,
        format!("|w1|={w1:.2e} |w_bl|={bl:.2e} |w2|={w2:.2e} |D*-D11|={d_err:.2e} time={elapsed:.2}s"),
    )
}

fn d_star(resolution: usize, a: impl Fn(f64, f64) -> f64) -> f64 {
    let coef = SampledCoefficient::from_fn(resolution, |y1, y2| SymTensor2::scalar(a(y1, y2))).unwrap();
    let cells = solve_cell_problems(&coef).unwrap();
    effective_tensor(&coef, &cells).unwrap().d11()
}

/// Brute-force 1D periodic cell solve `(a (1 + w'))' = 0` with `n` P1
/// elements, by direct elimination with `w_0 = 0` pinned. Returns
/// `int a (1 + w')`.
fn laminate_1d(n: usize, a: impl Fn(f64) -> f64) -> f64 {
    let h = 1.0 / n as f64;
    let ae: Vec<f64> = (0..n).map(|e| a((e as f64 + 0.5) * h)).collect();
    let m = n - 1;
    let mut k = vec![vec![0.0; m]; m];
    let mut b = vec![0.0; m];
    for e in 0..n {
        let nodes = [(e, -1.0), ((e + 1) % n, 1.0)];
        for &(p, sp) in &nodes {
            if p == 0 {
                continue;
            }
            b[p - 1] -= ae[e] * sp;
            for &(q, sq) in &nodes {
                if q != 0 {
                    k[p - 1][q - 1] += ae[e] * sp * sq / h;
                }
            }
        }
    }
    let rows: Vec<&[f64]> = k.iter().map(|r| r.as_slice()).collect();
    let w = solve_dense(&thinlayer::numerics::DenseMatrix::from_rows(&rows), &b).unwrap();
    let node = |i: usize| if i.is_multiple_of(n) { 0.0 } else { w[i % n - 1] };
    (0..n).map(|e| ae[e] * (h + node(e + 1) - node(e))).sum()
}

fn laminates() -> Outcome {
    let start = Instant::now();
    let vertical = |_: f64, y2: f64| if y2 < 0.0 { 1.0 } else { 3.0 };
    let tangential = |y1: f64, _: f64| if y1 < 0.5 { 1.0 } else { 4.0 };
    let dv = d_star(64, vertical);
    let dt = d_star(64, tangential);
    let elapsed = start.elapsed().as_secs_f64();
    // closed forms: arithmetic mean across the layer, harmonic mean along it
    let (ov, ot) = (2.0, 1.6);
    let brute = laminate_1d(4096, |y| tangential(y, 0.0));
    let pass = (dv - ov).abs() <= 2e-3 && (dt - ot).abs() <= 2e-3 && (brute - ot).abs() <= 2e-3 && elapsed < 30.0;
    Outcome::new(pass, format!("vertical D*={dv:.6} tangential D*={dt:.6} 1D oracle={brute:.6} time={elapsed:.2}s"))
}

fn voigt_reuss() -> Outcome {
    let resolution = 16;
    let blocks = (4usize, 8usize);
    let mut runner = TestRunner::new(Config { cases: 20, failure_persistence: None, ..Config::default() });
    let worst = std::cell::Cell::new(f64::INFINITY);
    let strategy = prop::collection::vec(1.0f64..=5.0, blocks.0 * blocks.1);
    let result = runner.run(&strategy, |vals| {
        let a = |y1: f64, y2: f64| {
            let i = ((y1 * blocks.0 as f64) as usize).min(blocks.0 - 1);
            let k = (((y2 + 1.0) * 0.5 * blocks.1 as f64) as usize).min(blocks.1 - 1);
            vals[k * blocks.0 + i]
        };
        let coef = SampledCoefficient::from_fn(resolution, |y1, y2| SymTensor2::scalar(a(y1, y2))).unwrap();
        let cells = solve_cell_problems(&coef).unwrap();
        let d = effective_tensor(&coef, &cells).unwrap().d11();
        // bounds from the same quadrature-point values the solver integrates
        let g = coef.grid();
        let samples: Vec<f64> = (0..g.ny() - 1)
            .flat_map(|k| (0..g.nx()).flat_map(move |i| (0..4).map(move |q| (i, k, q))))
            .map(|(i, k, q)| coef.at(i, k, q).xx)
            .collect();
        let n = samples.len() as f64;
        let arithmetic = samples.iter().sum::<f64>() / n;
        let harmonic = n / samples.iter().map(|v| 1.0 / v).sum::<f64>();
        worst.set(worst.get().min((d - harmonic + 1e-3).min(arithmetic + 1e-3 - d)));
        if harmonic - 1e-3 <= d && d <= arithmetic + 1e-3 {
            Ok(())
        } else {
            Err(TestCaseError::fail(format!("D*={d} outside [{harmonic}, {arithmetic}]")))
        }
    });
    match result {
        Ok(()) => Outcome::new(true, format!("20 cases, smallest margin {:.3e}", worst.get())),
        Err(e) => Outcome::new(false, e.to_string()),
    }
}

fn boundary_layer() -> Outcome {
    let n = 16;
    let trace: Vec<f64> = (0..n).map(|i| (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos()).collect();
    let stripe = StripeGeometry { length: 8, resolution: n, orientation: Orientation::Plus };
    let bl = solve_boundary_layer(SymTensor2::scalar(1.0), &trace, &stripe).unwrap();
    let omega = bl.decay.omega;
    let target = 2.0 * std::f64::consts::PI;
    let rel = (omega - target).abs() / target;

    let s = parse_scenario(ACCEPT).unwrap();
    let coef = SampledCoefficient::from_layer(&s.d_m, s.study.resolution).unwrap();
    let aux =
        solve_auxiliary_problems(coef, s.d_plus_tensor(), s.d_minus_tensor(), s.study.stripe_length).unwrap();
    let summary = AuxiliarySummary::new(&aux);
    let (rp, rm) = (summary.slab_ratio_plus, summary.slab_ratio_minus);
    let pass = rel <= 0.15 && rp < 1.0 && rm < 1.0;
    Outcome::new(pass, format!("omega={omega:.4} (rel err {rel:.3}) stripe ratios +{rp:.3e} -{rm:.3e}"))
}

fn conservative_scenario() -> Scenario {
    let text = ACCEPT
        .replace("f_plus = \"0.5*z/(1 + z^2)\"", "f_plus = \"0\"")
        .replace("f_minus = \"0.5*z/(1 + z^2)\"", "f_minus = \"0\"")
        .replace("g_M = \"-z + sin(2*pi*y1)\"", "g_M = \"0\"");
    let s = parse_scenario(&text).unwrap();
    for e in [&s.f_plus, &s.f_minus, &s.g_m] {
        assert_eq!(e.eval(&Bindings::new()), Ok(0.0));
    }
    s
}

fn relative_drift(masses: &[f64]) -> f64 {
    masses.iter().map(|m| (m - masses[0]).abs()).fold(0.0, f64::max) / masses[0].abs()
}

fn conservation() -> Outcome {
    let s = conservative_scenario();
    let dt = 1e-3;
    let time = TimeGrid::new(200.0 * dt, dt).unwrap();
    let micro = MicroSystem::new(&s, 8, 4, dt).unwrap();
    let mut us = MicroStepper::new(&micro, &s, time).unwrap();
    let mut micro_mass = vec![micro.operator.total_mass(us.state())];
    while !us.is_done() {
        us.advance().unwrap();
        micro_mass.push(micro.operator.total_mass(us.state()));
    }
    let coef = SampledCoefficient::from_layer(&s.d_m, 4).unwrap();
    let aux = solve_auxiliary_problems(coef, s.d_plus_tensor(), s.d_minus_tensor(), 8).unwrap();
    let mac = MacroSystem::new(&s, &aux.tensor, 32, dt).unwrap();
    let mut ms = MacroStepper::new(&mac, &s, time).unwrap();
    let mut macro_mass = vec![mac.operator.total_mass(ms.state())];
    while !ms.is_done() {
        ms.advance().unwrap();
        macro_mass.push(mac.operator.total_mass(ms.state()));
    }
    let (d_micro, d_macro) = (relative_drift(&micro_mass), relative_drift(&macro_mass));
    let steps = (micro_mass.len() - 1, macro_mass.len() - 1);
    let pass = d_micro <= 1e-12 && d_macro <= 1e-12 && steps == (200, 200);
    Outcome::new(pass, format!("micro drift {d_micro:.2e}, macro drift {d_macro:.2e} over {} steps", steps.0))
}

/// `(M + dt K) c_new = M c_old + dt load` solved by dense elimination.
fn dense_step(mass: &CsrMatrix, stiffness: &CsrMatrix, dt: f64, c: &[f64], load: &[f64]) -> Vec<f64> {
    let a = CsrMatrix::linear_combination(1.0, mass, dt, stiffness).unwrap().to_dense();
    let mc = mass.mul_vec(c);
    let rhs: Vec<f64> = mc.iter().zip(load).map(|(m, l)| m + dt * l).collect();
    solve_dense(&a, &rhs).unwrap()
}

fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm2(&d) / norm2(b)
}

fn dense_oracle() -> Outcome {
    let s = parse_scenario(ACCEPT).unwrap();
    let dt = 0.01;
    let time = TimeGrid::new(dt, dt).unwrap();

    let micro = MicroSystem::new(&s, 4, 2, dt).unwrap();
    let mut us = MicroStepper::new(&micro, &s, time).unwrap();
    let (c0, load) = (us.state().to_vec(), us.load().unwrap());
    us.advance().unwrap();
    let oracle = dense_step(&micro.operator.mass, &micro.operator.stiffness, dt, &c0, &load);
    let e_micro = relative_error(us.state(), &oracle);

    let coef = SampledCoefficient::from_layer(&s.d_m, 4).unwrap();
    let aux = solve_auxiliary_problems(coef, s.d_plus_tensor(), s.d_minus_tensor(), 8).unwrap();
    let mac = MacroSystem::new(&s, &aux.tensor, 8, dt).unwrap();
    let mut ms = MacroStepper::new(&mac, &s, time).unwrap();
    let (c0, load) = (ms.state().to_vec(), ms.load().unwrap());
    ms.advance().unwrap();
    let oracle = dense_step(&mac.operator.mass, &mac.operator.stiffness, dt, &c0, &load);
    let e_macro = relative_error(ms.state(), &oracle);

    let (nu, nm) = (micro.grid.node_count(), mac.grid.node_count());
    let pass = e_micro <= 1e-10 && e_macro <= 1e-10 && nu <= 200 && nm <= 200;
    Outcome::new(pass, format!("micro {nu} nodes err {e_micro:.2e}, macro {nm} nodes err {e_macro:.2e}"))
}

fn convergence() -> Outcome {
    let s = parse_scenario(ACCEPT).unwrap();
    let mut options = StudyOptions::from_scenario(&s);
    let skip = std::env::var("THINLAYER_SKIP_FINEST").is_ok_and(|v| !v.is_empty() && v != "0");
    if skip {
        options.inv_epsilons.pop();
    }
    let start = Instant::now();
    let report = match run_study(&s, &options) {
        Ok(r) => r,
        Err(e) => return Outcome::new(false, format!("study failed: {e}")),
    };
    let elapsed = start.elapsed().as_secs_f64();
    let (p1, p2) = (report.rate_first.p(), report.rate_second.p());
    let composites: Vec<(f64, f64)> = report
        .points
        .iter()
        .filter_map(|p| p.report.as_ref())
        .map(|r| (r.first.composite, r.second.as_ref().map_or(f64::NAN, |s| s.composite)))
        .collect();
    let finest_two = composites.len() >= 2 && composites[composites.len() - 2..].iter().all(|(c1, c2)| c2 < c1);
    let pass = composites.len() == options.inv_epsilons.len()
        && p1.is_some_and(|p| (0.4..=0.85).contains(&p))
        && p2.is_some_and(|p| p >= 0.8)
        && finest_two;
    let table: Vec<String> = composites.iter().map(|(a, b)| format!("{a:.3e}/{b:.3e}")).collect();
    Outcome::new(
        pass,
        format!(
            "eps^-1={:?} p1={:.4} p2={:.4} composite_1/2=[{}] time={elapsed:.1}s",
            options.inv_epsilons,
            p1.unwrap_or(f64::NAN),
            p2.unwrap_or(f64::NAN),
            table.join(", ")
        ),
    )
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let scenario = Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios/accept.scn");
    let run = |jobs: &str, out: &Path| {
        Command::new(env!("CARGO_BIN_EXE_thinlayer"))
            .arg("study")
            .arg(&scenario)
            .args(["--epsilons", "1/4,1/8,1/16", "--jobs", jobs, "--out"])
            .arg(out)
            .stdout(std::process::Stdio::null())
            .status()
            .map(|s| s.code())
    };
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let (ra, rb) = (run("1", &a), run("3", &b));
    if !matches!((&ra, &rb), (Ok(Some(0)), Ok(Some(0)))) {
        return Outcome::new(false, format!("study exit codes {ra:?} {rb:?}"));
    }
    let (ca, cb) = (std::fs::read(a.join("study.csv")).unwrap(), std::fs::read(b.join("study.csv")).unwrap());
    Outcome::new(ca == cb, format!("study.csv {} bytes, identical across --jobs 1 and 3: {}", ca.len(), ca == cb))
}

enum Expect {
    Value(f64),
    Error(usize, usize, SyntaxErrorKind),
}

fn grammar_cases() -> Vec<(&'static str, Vec<Var>, Expect)> {
    use Expect::*;
    use SyntaxErrorKind as K;
    let all = Var::ALL.to_vec();
    let deep: &'static str = Box::leak(format!("{}1{}", "(".repeat(250), ")".repeat(250)).into_boxed_str());
    vec![
        ("1 + 2*3", all.clone(), Value(7.0)),
        ("2^3^2", all.clone(), Value(512.0)),
        ("-2^2", all.clone(), Value(-4.0)),
        ("(1+2)*3", all.clone(), Value(9.0)),
        ("min(1, max(2, 3))", all.clone(), Value(1.0)),
        ("sin(pi/2) + cos(0)", all.clone(), Value(2.0)),
        ("1.5e2", all.clone(), Value(150.0)),
        ("  3\t", all.clone(), Value(3.0)),
        ("2*-3", all.clone(), Value(-6.0)),
        ("exp(0) + abs(-4)", all.clone(), Value(5.0)),
        ("x1*y2 - t/z", all.clone(), Value(2.0 * 3.0 - 4.0 / 8.0)),
        ("1 +", all.clone(), Error(1, 4, K::UnexpectedEnd { expected: "an operand" })),
        ("1 + * 2", all.clone(), Error(1, 5, K::UnexpectedToken { found: "*".into(), expected: "an operand" })),
        ("2 $ 3", all.clone(), Error(1, 3, K::UnexpectedChar('$'))),
        ("foo(1)", all.clone(), Error(1, 1, K::UnknownFunction("foo".into()))),
        ("sin(1, 2)", all.clone(), Error(1, 1, K::WrongArity { function: "sin", expected: 1, found: 2 })),
        ("max(1)", all.clone(), Error(1, 1, K::WrongArity { function: "max", expected: 2, found: 1 })),
        ("w + 1", all.clone(), Error(1, 1, K::UnknownVariable("w".into()))),
        (
            "x1 + z",
            vec![Var::T, Var::Z],
            Error(1, 1, K::DisallowedVariable { name: "x1".into(), allowed: "t, z".into() }),
        ),
        ("(1 + 2", all.clone(), Error(1, 7, K::UnexpectedEnd { expected: "`)`" })),
        (
            "1 2",
            all.clone(),
            Error(1, 3, K::UnexpectedToken { found: "2".into(), expected: "an operator or end of input" }),
        ),
        ("1.2.3", all.clone(), Error(1, 1, K::InvalidNumber("1.2.3".into()))),
        (
            "sin 1",
            all.clone(),
            Error(1, 5, K::UnexpectedToken { found: "1".into(), expected: "`(` after function name" }),
        ),
        ("min(1,)", all.clone(), Error(1, 7, K::UnexpectedToken { found: ")".into(), expected: "an operand" })),
        (deep, all, Error(1, 201, K::TooDeep)),
    ]
}

fn arb_expr() -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![
        (0.0f64..1e6).prop_map(Expr::Num),
        (0u32..1000).prop_map(|n| Expr::Num(n as f64)),
        Just(Expr::Pi),
        prop::sample::select(Var::ALL.to_vec()).prop_map(Expr::Var),
    ];
    leaf.prop_recursive(5, 48, 3, |inner| {
        let op = prop::sample::select(vec![BinOp::Add, BinOp::Sub, BinOp::Mul, BinOp::Div, BinOp::Pow]);
        prop_oneof![
            inner.clone().prop_map(|e| Expr::Neg(Box::new(e))),
            (op, inner.clone(), inner.clone()).prop_map(|(o, l, r)| Expr::Bin(o, Box::new(l), Box::new(r))),
            (prop::sample::select(Func::ALL.to_vec()), prop::collection::vec(inner, 2)).prop_map(|(f, mut args)| {
                args.truncate(f.arity());
                Expr::Call(f, args)
            }),
        ]
    })
}

fn parser_suite() -> Outcome {
    let b = Bindings::new().with(Var::X1, 2.0).with(Var::Y2, 3.0).with(Var::T, 4.0).with(Var::Z, 8.0);
    let cases = grammar_cases();
    let mut failures = Vec::new();
    for (src, allowed, expect) in &cases {
        let got = parse_expression(src, allowed);
        let ok = match (expect, &got) {
            (Expect::Value(v), Ok(e)) => e.eval(&b).is_ok_and(|x| (x - v).abs() <= 1e-12 * v.abs().max(1.0)),
            (Expect::Error(line, column, kind), Err(e)) => e.line == *line && e.column == *column && e.kind == *kind,
            _ => false,
        };
        if !ok {
            failures.push(format!("{:?}: {got:?}", &src[..src.len().min(16)]));
        }
    }
    // positions are reported relative to where the value starts in the file
    let offset = parse_at("1 +", &Var::ALL, 3, 10).unwrap_err();
    if (offset.line, offset.column) != (3, 13) {
        failures.push(format!("parse_at offset: {offset:?}"));
    }

    let mut runner = TestRunner::new(Config { cases: 100, failure_persistence: None, ..Config::default() });
    let round_trip = runner.run(&arb_expr(), |e| {
        let text = e.to_string();
        let back = parse_expression(&text, &Var::ALL).map_err(|err| TestCaseError::fail(format!("{text}: {err}")))?;
        prop_assert_eq!(&back, &e, "printed as {}", text);
        Ok(())
    });
    if let Err(err) = round_trip {
        failures.push(format!("round trip: {err}"));
    }
    Outcome::new(
        failures.is_empty(),
        format!("{} grammar cases, 100 round trips, failures: [{}]", cases.len(), failures.join("; ")),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("null microstructure", null_microstructure),
        ("laminate oracles", laminates),
        ("Voigt-Reuss bounds", voigt_reuss),
        ("boundary-layer decay", boundary_layer),
        ("mass conservation", conservation),
        ("dense oracle step", dense_oracle),
        ("convergence rates", convergence),
        ("determinism", determinism),
        ("expression parser", parser_suite),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (k, (name, f)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|p| name.contains(p.as_str())) {
            continue;
        }
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Outcome::new(false, format!("panicked: {msg}"))
        });
        let status = if outcome.pass { "PASS" } else { "FAIL" };
        println!("criterion {} ({name}): {status} {}", k + 1, outcome.detail);
        if !outcome.pass {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} criterion/criteria failed");
        std::process::exit(1);
    }
}
