mod common;

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use nonholo::controllability::{contour_integral, stokes_check, ComplexFn, CAVEAT_NON_SIMPLY_CONNECTED};
use nonholo::optimal::{elliptic_time_map, integrate_extremal, reduce_oscillator, shoot, ShootOptions};
use nonholo::steering::{plan_residue_chain, residue_unit_phase, verify_plan, Method, SteeringPlan};
use nonholo::{
    classify, fiber_displacement, gradient_field, parse_expr, simulate, ExcludedSet, ExtremalProblem, InputSignal,
    Loop, ProbeBudget, Shape, SystemModel, VectorField, Verdict,
};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = std::result::Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn r2(c: &[&str]) -> SystemModel {
    SystemModel::general_r2(VectorField::parse(c).unwrap()).unwrap()
}

/// `u1 = c1 cos(2 pi t)`, `u2 = c2 sin(2 pi t)` on `[0, 1]`.
fn loop_inputs(c1: f64, c2: f64) -> InputSignal {
    InputSignal::uniform(
        1.0,
        vec![
            Shape::Sinusoid { amplitude: c1, omega: TAU, phase: 0.0 },
            Shape::Sinusoid { amplitude: c2, omega: TAU, phase: -FRAC_PI_2 },
        ],
    )
    .unwrap()
}

fn fiber_after_loop(sys: &SystemModel, c1: f64, c2: f64, step: f64) -> f64 {
    simulate(sys, &loop_inputs(c1, c2), &[0.0; 3], 1.0, step).unwrap().final_state()[2]
}

fn oscillator_loop() -> Check {
    let x3 = fiber_after_loop(&r2(&["x2^2", "-x1^2"]), 2.0, TAU, 1e-4);
    ensure((x3 + 2.0).abs() < 1e-6, format!("x3(1) = {x3:.12}"))
}

fn harmonic_loop() -> Check {
    let x3 = fiber_after_loop(&r2(&["x1^2 - x2^2", "2*x1*x2"]), 2.0 * PI * PI, 1.0, 1e-4);
    ensure((x3 - 1.0).abs() < 1e-6, format!("x3(1) = {x3:.12}"))
}

fn classic_transfer() -> Check {
    let p = ExtremalProblem::energy(SystemModel::Classic, vec![0.0; 3], vec![0.0, 0.0, 1.0], 1.0).unwrap();
    let sol = shoot(&p, &ShootOptions::default()).map_err(|e| e.to_string())?;
    let rate = 2.0 * sol.lambda.abs();
    ensure(
        (rate - TAU).abs() < 1e-6 && sol.residual < 1e-6 && (sol.cost - TAU).abs() < 1e-6,
        format!("rate {rate:.9}, residual {:.2e}, cost {:.9}", sol.residual, sol.cost),
    )
}

fn residue_formula() -> Check {
    let mut worst: f64 = 0.0;
    for n in 1..=4u32 {
        let th = PI / n as f64;
        for a in [Complex64::new(1.0, 0.0), Complex64::new(th.cos(), th.sin())] {
            let got = contour_integral(&ComplexFn::conj_power(n), &Loop::circle([a.re, a.im], 1.0)).unwrap();
            let want = Complex64::new(0.0, TAU * n as f64) * a.conj().powu(n - 1);
            worst = worst.max((got - want).norm());
        }
    }
    ensure(worst < 1e-8, format!("max error {worst:.2e}"))
}

fn winding() -> Check {
    let f = VectorField::parse(&["-x2/(x1^2+x2^2)", "x1/(x1^2+x2^2)"]).unwrap().with_excluded(ExcludedSet::origin());
    let sys = SystemModel::general_r2(f).unwrap();
    let mut worst: f64 = 0.0;
    for turns in 1..=3 {
        let w = TAU * turns as f64;
        let u = InputSignal::uniform(
            1.0,
            vec![
                Shape::Sinusoid { amplitude: -w, omega: w, phase: -FRAC_PI_2 },
                Shape::Sinusoid { amplitude: w, omega: w, phase: 0.0 },
            ],
        )
        .unwrap();
        let gain = fiber_displacement(&sys, &u, &[1.0, 0.0, 0.0], 1.0, 1e-4).unwrap()[0];
        worst = worst.max((gain / turns as f64 - TAU).abs());
    }
    ensure(worst < 1e-8, format!("max per-loop error {worst:.2e}"))
}

fn residue_chain() -> Check {
    let sys = SystemModel::conj_power(2);
    let plan = plan_residue_chain(2, &[0.0, 0.0, 4.0 * PI, 4.0 * PI]).map_err(|e| e.to_string())?;
    let v = verify_plan(&sys, &plan, &[0.0; 4]).map_err(|e| e.to_string())?;
    let err = common::dist(&v.achieved, &[0.0, 0.0, 4.0 * PI, 4.0 * PI]);
    let one = SteeringPlan {
        method: Method::ResidueChain,
        phases: vec![residue_unit_phase(2, 0).unwrap()],
        predicted_endpoint: vec![0.0; 4],
    };
    let first = verify_plan(&sys, &one, &[0.0; 4]).map_err(|e| e.to_string())?;
    let (w1, w2) = (first.achieved[2], first.achieved[3]);
    ensure(
        err < 1e-4 && w1.abs() < 1e-6 && (w2 - 4.0 * PI).abs() < 1e-6,
        format!("endpoint error {err:.2e}, phase 1 gain ({w1:.2e}, {w2:.9})"),
    )
}

fn stokes() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for k in 0..50 {
        let dim = if k % 2 == 0 { 2 } else { 3 };
        let comps: Vec<String> = (0..dim).map(|_| common::random_poly(&mut rng, dim, 3)).collect();
        let refs: Vec<&str> = comps.iter().map(String::as_str).collect();
        let f = VectorField::parse(&refs).unwrap();
        let center: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let plane = if dim == 2 { (0, 1) } else { [(0, 1), (0, 2), (1, 2)][k % 3] };
        let gamma = Loop::new(center, rng.random_range(0.2..1.5), 1, plane).unwrap();
        let s = stokes_check(&f, &gamma).unwrap();
        worst = worst.max((s.line - s.surface).abs() / s.line.abs().max(1.0));
    }
    ensure(worst < 1e-6, format!("max relative mismatch {worst:.2e}"))
}

fn gauge() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let f = VectorField::parse(&["x2^2", "-x1^2"]).unwrap();
    let u = loop_inputs(1.1, 0.9);
    let x0 = [0.2, -0.4, 0.0];
    let a = fiber_displacement(&SystemModel::general_r2(f.clone()).unwrap(), &u, &x0, 1.0, 1e-3).unwrap()[0];
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let phi = parse_expr(&common::random_poly(&mut rng, 2, 4)).unwrap();
        let g = f.plus(&gradient_field(&phi, 2).unwrap()).unwrap();
        let b = fiber_displacement(&SystemModel::general_r2(g).unwrap(), &u, &x0, 1.0, 1e-3).unwrap()[0];
        worst = worst.max((a - b).abs());
    }
    ensure(worst < 1e-8, format!("max difference {worst:.2e}"))
}

fn verdicts() -> Check {
    let budget = ProbeBudget::default();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..5 {
        let phi = parse_expr(&common::random_poly(&mut rng, 2, 4)).unwrap();
        let sys = SystemModel::general_r2(gradient_field(&phi, 2).unwrap()).unwrap();
        let v = classify(&sys, &budget).unwrap().verdict;
        if v != Verdict::Uncontrollable {
            return Err(format!("gradient of {phi} classified {v:?}"));
        }
    }
    let punctured =
        VectorField::parse(&["x1/(x1^2+x2^2)", "x2/(x1^2+x2^2)"]).unwrap().with_excluded(ExcludedSet::origin());
    let r = classify(&SystemModel::general_r2(punctured).unwrap(), &budget).unwrap();
    if r.verdict != Verdict::Uncontrollable || !r.has_caveat(CAVEAT_NON_SIMPLY_CONNECTED) {
        return Err(format!("punctured field: {:?} {:?}", r.verdict, r.caveats));
    }
    let mut worst: f64 = 0.0;
    for (re, im) in [("x1", "x2"), ("x1^2 - x2^2", "2*x1*x2")] {
        let f = ComplexFn::parse(re, im).unwrap();
        for c in [[0.0, 0.0], [1.0, -0.5], [-1.2, 0.7]] {
            for rad in [0.25, 1.0] {
                worst = worst.max(contour_integral(&f, &Loop::circle(c, rad)).unwrap().norm());
            }
        }
        let sys = SystemModel::complex_plane(parse_expr(re).unwrap(), parse_expr(im).unwrap(), None).unwrap();
        let v = classify(&sys, &budget).unwrap().verdict;
        if v != Verdict::Uncontrollable {
            return Err(format!("{re} + i {im} classified {v:?}"));
        }
    }
    ensure(worst < 1e-10, format!("max holomorphic contour integral {worst:.2e}"))
}

fn two_oscillators() -> Check {
    let p = ExtremalProblem::energy(r2(&["x2^2", "-x1^2"]), vec![0.0; 3], vec![0.0, 0.0, 0.1], 1.0).unwrap();
    let sol = shoot(&p, &ShootOptions { step: Some(1e-4), ..ShootOptions::default() }).map_err(|e| e.to_string())?;
    let red = reduce_oscillator(&sol).map_err(|e| e.to_string())?;
    let traj = &sol.trajectory;
    let z: Vec<f64> = traj.states.iter().map(|x| x[0] + x[1]).collect();
    let zd: Vec<f64> = traj.velocities.iter().map(|v| v[0] + v[1]).collect();
    let amp = red.z_amplitude();
    let mut worst: f64 = 0.0;
    let mut crossings = 0;
    for k in 1..20 {
        let theta = red.theta0 + FRAC_PI_2 * k as f64 / 20.0;
        let t_map = elliptic_time_map(&red, theta).map_err(|e| e.to_string())?;
        if t_map >= 1.0 {
            break;
        }
        let t_ode = common::crossing_time(&traj.times, &z, &zd, amp * theta.sin(), 0.0)
            .ok_or_else(|| format!("no crossing of level theta = {theta}"))?;
        worst = worst.max((t_map - t_ode).abs());
        crossings += 1;
    }
    ensure(
        red.energy_spread < 1e-6 * red.r * red.r && red.c_spread < 1e-6 * red.r && crossings >= 5 && worst < 1e-5,
        format!(
            "r {:.6}, c {:.6}, spreads {:.1e}/{:.1e}, {crossings} crossings, time map error {worst:.2e}",
            red.r, red.c, red.energy_spread, red.c_spread
        ),
    )
}

fn speed() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for k in 0..10 {
        let dim = if k % 2 == 0 { 2 } else { 3 };
        let comps: Vec<String> = (0..dim).map(|_| common::random_poly(&mut rng, dim, 2)).collect();
        let refs: Vec<&str> = comps.iter().map(String::as_str).collect();
        let f = VectorField::parse(&refs).unwrap();
        let sys = if dim == 2 { SystemModel::general_r2(f) } else { SystemModel::general_r3(f) }.unwrap();
        let p = ExtremalProblem::energy(sys, vec![0.0; dim + 1], vec![0.0; dim + 1], 1.0).unwrap();
        let u0: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let traj = integrate_extremal(&p, rng.random_range(-3.0..3.0), &u0, 1e-4).unwrap();
        let s = traj.speeds();
        worst = worst.max(s.iter().map(|v| (v - s[0]).abs()).fold(0.0, f64::max));
    }
    ensure(worst < 1e-6, format!("max speed drift {worst:.2e}"))
}

fn convergence() -> Check {
    let sys = r2(&["x2^2", "-x1^2"]);
    let err = |h: f64| (fiber_after_loop(&sys, 2.0, TAU, h) + 2.0).abs();
    let (e1, e2) = (err(0.02), err(0.01));
    ensure(e1 / e2 >= 12.0, format!("errors {e1:.3e} -> {e2:.3e}, ratio {:.2}", e1 / e2))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 12] = [
        ("oscillator loop gain", oscillator_loop),
        ("harmonic loop gain", harmonic_loop),
        ("classic minimum-energy transfer", classic_transfer),
        ("conjugate power residues", residue_formula),
        ("winding gain of 1/z", winding),
        ("residue-chain steering", residue_chain),
        ("Stokes on random fields", stokes),
        ("gauge invariance", gauge),
        ("uncontrollability verdicts", verdicts),
        ("two-oscillator conservation and time map", two_oscillators),
        ("speed conservation", speed),
        ("fourth-order convergence", convergence),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail} ({secs:.1}s)", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail} ({secs:.1}s)", i + 1);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
