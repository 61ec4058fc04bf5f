//! Steering plans and their verification.
//!
//! Every planner returns a [`SteeringPlan`]: a list of phases with one input
//! shape per channel, in phase-local time. [`verify_plan`] replays the phases
//! through the RK4 integrator and compares the endpoint with the prediction.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::input::{InputSignal, Shape};
use crate::system::{fiber_displacement, simulate, SystemModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    SinusoidClassic,
    TwoPhase,
    LoopScaling,
    ResidueChain,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::SinusoidClassic => "sinusoid-classic",
            Method::TwoPhase => "two-phase",
            Method::LoopScaling => "loop-scaling",
            Method::ResidueChain => "residue-chain",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub duration: f64,
    pub channels: Vec<Shape>,
    pub rationale: String,
}

impl Phase {
    pub fn signal(&self) -> Result<InputSignal> {
        InputSignal::uniform(self.duration, self.channels.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteeringPlan {
    pub method: Method,
    pub phases: Vec<Phase>,
    pub predicted_endpoint: Vec<f64>,
}

impl SteeringPlan {
    pub fn duration(&self) -> f64 {
        self.phases.iter().map(|p| p.duration).sum()
    }

    /// All phases joined into one signal on `[0, duration]`.
    pub fn signal(&self) -> Result<InputSignal> {
        let mut phases = self.phases.iter();
        let first = phases.next().ok_or_else(|| Error::InvalidArgument("plan has no phases".into()))?.signal()?;
        phases.try_fold(first, |acc, p| acc.then(&p.signal()?))
    }

    /// Input energy `int |u|^2 dt`.
    pub fn cost(&self) -> f64 {
        self.phases
            .iter()
            .map(|p| {
                p.channels
                    .iter()
                    .map(|s| crate::quadrature::adaptive_gauss(|t| s.eval(t).powi(2), 0.0, p.duration, 1e-13))
                    .sum::<f64>()
            })
            .sum()
    }
}

/// Endpoint tolerance of [`verify_plan`].
pub fn verification_tolerance(method: Method) -> f64 {
    match method {
        Method::ResidueChain => 1e-4,
        _ => 1e-6,
    }
}

/// RK4 steps per phase used by [`verify_plan`].
pub const VERIFY_STEPS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verification {
    pub pass: bool,
    pub achieved: Vec<f64>,
    pub error: f64,
    pub tolerance: f64,
}

/// Simulates every phase in turn and compares with the predicted endpoint.
pub fn verify_plan(sys: &SystemModel, plan: &SteeringPlan, from: &[f64]) -> Result<Verification> {
    if plan.predicted_endpoint.len() != sys.state_dim() {
        return Err(Error::DimensionMismatch { expected: sys.state_dim(), got: plan.predicted_endpoint.len() });
    }
    let mut x = from.to_vec();
    for p in &plan.phases {
        if p.channels.len() != sys.n_inputs() {
            return Err(Error::DimensionMismatch { expected: sys.n_inputs(), got: p.channels.len() });
        }
        let traj = simulate(sys, &p.signal()?, &x, p.duration, p.duration / VERIFY_STEPS as f64)?;
        x = traj.final_state().to_vec();
    }
    let error = x.iter().zip(&plan.predicted_endpoint).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let tolerance = verification_tolerance(plan.method);
    Ok(Verification { pass: error < tolerance, achieved: x, error, tolerance })
}

fn predict(sys: &SystemModel, phases: &[Phase], from: &[f64]) -> Result<Vec<f64>> {
    let m = sys.n_inputs();
    let mut x = from.to_vec();
    for p in phases {
        let u = p.signal()?;
        let gains = fiber_displacement(sys, &u, &x, p.duration, p.duration / 1000.0)?;
        let mut base = vec![0.0; m];
        u.integral_into(p.duration, &mut base);
        for i in 0..m {
            x[i] += base[i];
        }
        for (k, g) in gains.iter().enumerate() {
            x[m + k] += g;
        }
    }
    Ok(x)
}

fn check_state(sys: &SystemModel, x: &[f64], what: &str) -> Result<()> {
    if x.len() != sys.state_dim() {
        return Err(Error::DimensionMismatch { expected: sys.state_dim(), got: x.len() });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(what.into()));
    }
    Ok(())
}

fn check_horizon(t: f64) -> Result<()> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::InvalidArgument(format!("horizon must be positive, got {t}")));
    }
    Ok(())
}

fn zero_phase(channels: usize, duration: f64, why: &str) -> Phase {
    Phase { duration, channels: vec![Shape::zero(); channels], rationale: why.into() }
}

/// Classic system from the origin to `(0, 0, a)`: `u` rotates at rate
/// `c = 2 pi / T` (reversed for `a < 0`) with equal initial components and
/// `|u(0)|^2 = 2 pi |a| / T^2`, so the base traces one circle of area `|a| / 2`.
pub fn plan_sinusoid_classic(a: f64, t: f64) -> Result<SteeringPlan> {
    check_horizon(t)?;
    if !a.is_finite() {
        return Err(Error::NonFinite("target".into()));
    }
    let endpoint = vec![0.0, 0.0, a];
    if a == 0.0 {
        return Ok(SteeringPlan {
            method: Method::SinusoidClassic,
            phases: vec![zero_phase(2, t, "target equals start")],
            predicted_endpoint: endpoint,
        });
    }
    let c = a.signum() * TAU / t;
    let amp = (TAU * a.abs()).sqrt() / t;
    let channels = vec![
        Shape::Sinusoid { amplitude: amp, omega: c, phase: FRAC_PI_4 },
        Shape::Sinusoid { amplitude: amp, omega: c, phase: -FRAC_PI_4 },
    ];
    let rationale = format!(
        "u(0) rotated at rate c = {c} with u1(0) = u2(0) = {}; one base circle enclosing area {}",
        amp / 2f64.sqrt(),
        a.abs() / 2.0
    );
    Ok(SteeringPlan {
        method: Method::SinusoidClassic,
        phases: vec![Phase { duration: t, channels, rationale }],
        predicted_endpoint: endpoint,
    })
}

/// Growth factor of the amplitude bracket search.
pub const BRACKET_GROWTH: f64 = 2.0;
/// Largest loop amplitude tried.
pub const AMPLITUDE_CAP: f64 = 1e3;
/// Fiber accuracy of the amplitude root-find.
pub const ROOT_TOL: f64 = 1e-8;
const FIRST_AMPLITUDE: f64 = 1.0 / 64.0;

/// Inputs `u_a = s d1 cos(2 pi t / T)`, `u_b = s d2 sin(2 pi t / T)`.
fn loop_channels(m: usize, plane: (usize, usize), dir: (f64, f64), s: f64, t: f64) -> Vec<Shape> {
    let w = TAU / t;
    let mut ch = vec![Shape::zero(); m];
    ch[plane.0] = Shape::Sinusoid { amplitude: s * dir.0, omega: w, phase: 0.0 };
    ch[plane.1] = Shape::Sinusoid { amplitude: s * dir.1, omega: w, phase: -FRAC_PI_2 };
    ch
}

struct LoopSolution {
    channels: Vec<Shape>,
    amplitude: f64,
    dir: (f64, f64),
    plane: (usize, usize),
}

/// Finds a loop based at `x` whose single-fiber increment equals `gap`.
fn solve_loop(sys: &SystemModel, x: &[f64], gap: f64, t: f64, planes: &[(usize, usize)]) -> Result<LoopSolution> {
    let m = sys.n_inputs();
    let gain = |plane, dir, s: f64| -> Result<f64> {
        let u = InputSignal::uniform(t, loop_channels(m, plane, dir, s, t))?;
        Ok(fiber_displacement(sys, &u, x, t, t / 1000.0)?[0])
    };
    let mut diagnostic = Vec::new();
    for &plane in planes {
        for dir in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
            let h = |s: f64| gain(plane, dir, s).map(|g| g - gap);
            let mut hi = FIRST_AMPLITUDE;
            let mut h_hi = None;
            while hi <= AMPLITUDE_CAP {
                match h(hi) {
                    Ok(v) if v.is_finite() => {
                        if v == 0.0 || v.signum() != (-gap).signum() {
                            h_hi = Some(v);
                            break;
                        }
                    }
                    _ => break,
                }
                hi *= BRACKET_GROWTH;
            }
            let Some(h_hi) = h_hi else {
                diagnostic.push(format!("plane {plane:?} signs {dir:?}: no sign change up to {AMPLITUDE_CAP}"));
                continue;
            };
            if let Some(s) = bracketed_root(&h, 0.0, -gap, hi, h_hi)? {
                return Ok(LoopSolution { channels: loop_channels(m, plane, dir, s, t), amplitude: s, dir, plane });
            }
            diagnostic.push(format!("plane {plane:?} signs {dir:?}: root-find stalled"));
        }
    }
    Err(Error::NoBracket { cap: AMPLITUDE_CAP, diagnostic: diagnostic.join("; ") })
}

/// Bisection on `[lo, hi]` then secant polish to `|h| < ROOT_TOL`.
fn bracketed_root(
    h: &impl Fn(f64) -> Result<f64>,
    mut lo: f64,
    mut h_lo: f64,
    mut hi: f64,
    mut h_hi: f64,
) -> Result<Option<f64>> {
    if h_hi.abs() < ROOT_TOL {
        return Ok(Some(hi));
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        let h_mid = h(mid)?;
        if h_mid.abs() < 1e-3 * ROOT_TOL {
            return Ok(Some(mid));
        }
        if h_mid.signum() == h_lo.signum() {
            lo = mid;
            h_lo = h_mid;
        } else {
            hi = mid;
            h_hi = h_mid;
        }
        if hi - lo < 1e-6 * hi {
            break;
        }
    }
    let (mut a, mut fa, mut b, mut fb) = (lo, h_lo, hi, h_hi);
    if fa.abs() < fb.abs() {
        std::mem::swap(&mut a, &mut b);
        std::mem::swap(&mut fa, &mut fb);
    }
    for _ in 0..30 {
        if fb.abs() < 1e-3 * ROOT_TOL || fa == fb {
            break;
        }
        let next = b - fb * (b - a) / (fb - fa);
        if !(next > lo.min(hi) - (hi - lo) && next.is_finite()) {
            break;
        }
        a = b;
        fa = fb;
        b = next;
        fb = h(b)?;
    }
    Ok((fb.abs() < ROOT_TOL).then_some(b))
}

fn single_fiber_planes(sys: &SystemModel) -> Result<Vec<(usize, usize)>> {
    match sys {
        SystemModel::Classic | SystemModel::GeneralR2 { .. } => Ok(vec![(0, 1)]),
        SystemModel::GeneralR3 { .. } => Ok(vec![(0, 1), (0, 2), (1, 2)]),
        other => Err(Error::UnsupportedVariant(format!("{} has no loop planner", other.name()))),
    }
}

/// Planar system from the origin to `(0, 0, a)` with one scaled elliptic loop.
pub fn plan_loop_scaling(sys: &SystemModel, a: f64, t: f64) -> Result<SteeringPlan> {
    check_horizon(t)?;
    if !matches!(sys, SystemModel::Classic | SystemModel::GeneralR2 { .. }) {
        return Err(Error::UnsupportedVariant(format!("loop scaling needs a planar system, got {}", sys.name())));
    }
    if !a.is_finite() {
        return Err(Error::NonFinite("target".into()));
    }
    let origin = [0.0; 3];
    if a == 0.0 {
        return Ok(SteeringPlan {
            method: Method::LoopScaling,
            phases: vec![zero_phase(2, t, "target equals start")],
            predicted_endpoint: origin.to_vec(),
        });
    }
    let sol = solve_loop(sys, &origin, a, t, &[(0, 1)])?;
    let phases = vec![Phase {
        duration: t,
        channels: sol.channels,
        rationale: format!(
            "loop u1 = c1 cos(2 pi t / T), u2 = c2 sin(2 pi t / T) with (c1, c2) = ({}, {})",
            sol.amplitude * sol.dir.0,
            sol.amplitude * sol.dir.1
        ),
    }];
    let predicted_endpoint = predict(sys, &phases, &origin)?;
    Ok(SteeringPlan { method: Method::LoopScaling, phases, predicted_endpoint })
}

/// Straight base move in `T / 2`, then a closed loop at the target base point
/// in `T / 2` that makes up the remaining fiber gap. When the base already
/// sits at its target the loop gets the whole horizon.
pub fn plan_two_phase(sys: &SystemModel, from: &[f64], to: &[f64], t: f64) -> Result<SteeringPlan> {
    check_horizon(t)?;
    let planes = single_fiber_planes(sys)?;
    check_state(sys, from, "start state")?;
    check_state(sys, to, "target state")?;
    let m = sys.n_inputs();
    let delta: Vec<f64> = (0..m).map(|i| to[i] - from[i]).collect();
    let moves = delta.iter().any(|d| *d != 0.0);

    let mut phases = Vec::new();
    let loop_time = if moves { 0.5 * t } else { t };
    if moves {
        phases.push(Phase {
            duration: 0.5 * t,
            channels: delta.iter().map(|d| Shape::Constant { value: d / (0.5 * t) }).collect(),
            rationale: "constant inputs carry the base coordinates to their targets".into(),
        });
    }
    let after = predict(sys, &phases, from)?;
    let gap = to[m] - after[m];
    if gap.abs() > 1e-12 * to[m].abs().max(1.0) {
        let sol = solve_loop(sys, &after, gap, loop_time, &planes)?;
        phases.push(Phase {
            duration: loop_time,
            channels: sol.channels,
            rationale: format!(
                "closed loop in plane ({}, {}) at the target base point closes fiber gap {gap} (amplitude {})",
                sol.plane.0 + 1,
                sol.plane.1 + 1,
                sol.amplitude
            ),
        });
    } else if phases.is_empty() {
        phases.push(zero_phase(m, t, "target equals start"));
    }
    let predicted_endpoint = predict(sys, &phases, from)?;
    Ok(SteeringPlan { method: Method::TwoPhase, phases, predicted_endpoint })
}

/// Fiber gain `(dw1, dw2)` of the unit residue loops for `F = conj(z)^n`:
/// the circle through the origin centred at 1, and the one centred at
/// `e^{i pi / n}`, both counter-clockwise.
pub fn residue_directions(n: u32) -> [[f64; 2]; 2] {
    let k = 2.0 * n as f64 * PI;
    let th = PI / n as f64;
    [[0.0, k], [k * th.sin(), -k * th.cos()]]
}

/// Loop through the origin around `s e^{i alpha}` with radius `s`,
/// traversed once in `duration` (`sigma = 1` counter-clockwise).
fn residue_loop(alpha: f64, s: f64, sigma: f64, duration: f64) -> Vec<Shape> {
    let w = TAU / duration;
    let phase = alpha - sigma * FRAC_PI_2;
    vec![
        Shape::Sinusoid { amplitude: s * w, omega: sigma * w, phase },
        Shape::Sinusoid { amplitude: s * w, omega: sigma * w, phase: phase - FRAC_PI_2 },
    ]
}

/// Phase durations of the residue chain.
pub fn residue_phase_durations(n: u32) -> [f64; 2] {
    [1.0, 2.0 * n as f64]
}

/// `z' = u`, `w' = conj(z)^n u` from the origin to `(0, 0, a, b)`:
/// `(a, b) = c1 d1 + c2 d2` over the two residue directions; each multiplier
/// is realised by scaling its loop by `|c|^(1/(n+1))` and reversing it when
/// `c < 0`.
pub fn plan_residue_chain(n: u32, target: &[f64]) -> Result<SteeringPlan> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("residue chain needs n >= 2, got {n}")));
    }
    if target.len() != 4 {
        return Err(Error::DimensionMismatch { expected: 4, got: target.len() });
    }
    if target.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("target".into()));
    }
    if target[0] != 0.0 || target[1] != 0.0 {
        return Err(Error::InvalidArgument("residue chain steers only the fiber; base target must be 0".into()));
    }
    let [d1, d2] = residue_directions(n);
    let det = d1[0] * d2[1] - d1[1] * d2[0];
    assert!(det.abs() > 1e-12, "residue directions are independent for n >= 2");
    let (a, b) = (target[2], target[3]);
    let c1 = (a * d2[1] - b * d2[0]) / det;
    let c2 = (d1[0] * b - d1[1] * a) / det;

    let sys = SystemModel::conj_power(n);
    let durations = residue_phase_durations(n);
    let centres = [0.0, PI / n as f64];
    let mut phases = Vec::new();
    for (k, c) in [c1, c2].into_iter().enumerate() {
        if c == 0.0 {
            continue;
        }
        let s = c.abs().powf(1.0 / (n as f64 + 1.0));
        let sigma = c.signum();
        phases.push(Phase {
            duration: durations[k],
            channels: residue_loop(centres[k], s, sigma, durations[k]),
            rationale: format!(
                "{} circle through the origin centred at {s} e^(i {}), multiplier c{} = {c}",
                if sigma > 0.0 { "counter-clockwise" } else { "clockwise" },
                centres[k],
                k + 1
            ),
        });
    }
    if phases.is_empty() {
        phases.push(zero_phase(2, 1.0, "target equals start"));
    }
    let predicted_endpoint = predict(&sys, &phases, &[0.0; 4])?;
    Ok(SteeringPlan { method: Method::ResidueChain, phases, predicted_endpoint })
}

/// The unscaled counter-clockwise residue loops, one per phase.
pub fn residue_unit_phase(n: u32, which: usize) -> Result<Phase> {
    let durations = residue_phase_durations(n);
    let centre = [0.0, PI / n.max(1) as f64];
    if which > 1 {
        return Err(Error::InvalidArgument(format!("residue phase index {which} out of range")));
    }
    Ok(Phase {
        duration: durations[which],
        channels: residue_loop(centre[which], 1.0, 1.0, durations[which]),
        rationale: "unit residue loop".into(),
    })
}

/// Chooses a planner for the variant and boundary states.
pub fn plan(sys: &SystemModel, from: &[f64], to: &[f64], t: f64) -> Result<SteeringPlan> {
    check_state(sys, from, "start state")?;
    check_state(sys, to, "target state")?;
    let at_origin = |x: &[f64]| x[..2].iter().all(|v| *v == 0.0);
    match sys {
        SystemModel::Classic if from.iter().all(|v| *v == 0.0) && at_origin(to) => plan_sinusoid_classic(to[2], t),
        SystemModel::GeneralR2 { .. } if from.iter().all(|v| *v == 0.0) && at_origin(to) => {
            plan_loop_scaling(sys, to[2], t)
        }
        SystemModel::Classic | SystemModel::GeneralR2 { .. } | SystemModel::GeneralR3 { .. } => {
            plan_two_phase(sys, from, to, t)
        }
        SystemModel::ComplexPlane { .. } => match sys.conj_power_degree() {
            Some(n) if n >= 2 && from.iter().all(|v| *v == 0.0) => plan_residue_chain(n, to),
            _ => Err(Error::UnsupportedVariant(
                "complex-plane systems are planned with the residue chain for conj(z)^n, n >= 2, from the origin"
                    .into(),
            )),
        },
        other => Err(Error::UnsupportedVariant(format!("no steering planner for {}", other.name()))),
    }
}
