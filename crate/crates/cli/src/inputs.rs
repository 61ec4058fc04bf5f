//! Input signals from the command line.
//!
//! A spec lists one shape per channel, separated by `;`:
//! `cos(amplitude, omega, phase)`, `sin(amplitude, omega, phase)`,
//! `const(value)`, `poly(c0, c1, ...)` or `zero`. A path to a JSON file is
//! read instead when it exists; the file holds either a list of shapes or a
//! list of channels, each a list of `{start, end, shape}` segments.

use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use nonholo::{Channel, InputSignal, Segment, Shape};
use serde::Deserialize;

#[derive(Deserialize)]
#[serde(untagged)]
enum FileSpec {
    Shapes(Vec<Shape>),
    Channels(Vec<Vec<Segment>>),
}

pub fn resolve(spec: &str, channels: usize, duration: f64) -> Result<InputSignal> {
    let path = Path::new(spec);
    let signal = if path.is_file() {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        let parsed: FileSpec = serde_json::from_str(&text)
            .with_context(|| format!("{}: not a list of shapes or channels", path.display()))?;
        match parsed {
            FileSpec::Shapes(s) => InputSignal::uniform(duration, s)?,
            FileSpec::Channels(c) => {
                let c = c.into_iter().map(Channel::new).collect::<nonholo::Result<Vec<_>>>()?;
                InputSignal::new(c)?
            }
        }
    } else {
        let shapes = spec.split(';').map(|s| parse_shape(s.trim())).collect::<Result<Vec<_>>>()?;
        InputSignal::uniform(duration, shapes)?
    };
    ensure!(signal.n_channels() == channels, "inputs have {} channels, system needs {channels}", signal.n_channels());
    ensure!(
        (signal.duration() - duration).abs() <= 1e-12 * duration.max(1.0),
        "inputs cover [0, {}], horizon is {duration}",
        signal.duration()
    );
    Ok(signal)
}

fn parse_shape(s: &str) -> Result<Shape> {
    if s == "zero" {
        return Ok(Shape::zero());
    }
    let (name, rest) = s.split_once('(').with_context(|| format!("bad input shape '{s}'"))?;
    let args = rest.strip_suffix(')').with_context(|| format!("missing ')' in '{s}'"))?;
    let nums = args
        .split(',')
        .map(|a| a.trim().parse::<f64>().with_context(|| format!("bad number '{}' in '{s}'", a.trim())))
        .collect::<Result<Vec<_>>>()?;
    ensure!(nums.iter().all(|v| v.is_finite()), "non-finite parameter in '{s}'");
    let shape = match (name.trim(), nums.as_slice()) {
        ("cos", [a, w, p]) => Shape::Sinusoid { amplitude: *a, omega: *w, phase: *p },
        ("sin", [a, w, p]) => Shape::Sinusoid { amplitude: *a, omega: *w, phase: p - std::f64::consts::FRAC_PI_2 },
        ("const", [v]) => Shape::Constant { value: *v },
        ("poly", c) if !c.is_empty() => Shape::Polynomial { coeffs: c.to_vec() },
        _ => bail!("bad input shape '{s}'"),
    };
    Ok(shape)
}
