//! Reader and writer for the plain-text BAL problem format.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use super::{BaProblem, CameraState, Observation, PointState};
use crate::scalar::Real;

#[derive(Debug, Error)]
pub enum BalError {
    #[error("line {line}: unexpected end of input while reading {expected}")]
    Truncated { line: usize, expected: &'static str },
    #[error("line {line}: `{token}` is not a valid {expected}")]
    InvalidNumber {
        line: usize,
        token: String,
        expected: &'static str,
    },
    #[error("line {line}: {kind} index {index} out of range (count {count})")]
    IndexOutOfRange {
        line: usize,
        kind: &'static str,
        index: usize,
        count: usize,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}

struct Tokens<'a> {
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
    current: Option<(usize, std::str::SplitWhitespace<'a>)>,
    last_line: usize,
}

impl<'a> Tokens<'a> {
    fn new(text: &'a str) -> Self {
        Tokens {
            lines: text.lines().enumerate(),
            current: None,
            last_line: 1,
        }
    }

    fn next_token(&mut self) -> Option<(usize, &'a str)> {
        loop {
            if let Some((line, it)) = self.current.as_mut() {
                if let Some(tok) = it.next() {
                    return Some((*line, tok));
                }
            }
            let (idx, text) = self.lines.next()?;
            self.last_line = idx + 1;
            self.current = Some((idx + 1, text.split_whitespace()));
        }
    }

    fn index(&mut self, expected: &'static str) -> Result<(usize, usize), BalError> {
        let (line, tok) = self.next_token().ok_or(BalError::Truncated {
            line: self.last_line,
            expected,
        })?;
        tok.parse::<usize>()
            .map(|v| (line, v))
            .map_err(|_| BalError::InvalidNumber {
                line,
                token: tok.to_string(),
                expected,
            })
    }

    fn real<T: Real>(&mut self, expected: &'static str) -> Result<T, BalError> {
        let (line, tok) = self.next_token().ok_or(BalError::Truncated {
            line: self.last_line,
            expected,
        })?;
        match tok.parse::<T>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(BalError::InvalidNumber {
                line,
                token: tok.to_string(),
                expected,
            }),
        }
    }
}

/// Parses a BAL problem. Numbers are read directly in precision `T` and the
/// observation order of the file is kept as the edge order.
pub fn parse_bal<T: Real, R: Read>(mut reader: R) -> Result<BaProblem<T>, BalError> {
    let mut text = String::new();
    reader.read_to_string(&mut text)?;
    let mut tokens = Tokens::new(&text);

    let (_, num_cameras) = tokens.index("camera count")?;
    let (_, num_points) = tokens.index("point count")?;
    let (_, num_observations) = tokens.index("observation count")?;

    let mut observations = Vec::with_capacity(num_observations);
    for _ in 0..num_observations {
        let (line, camera) = tokens.index("observation camera index")?;
        if camera >= num_cameras {
            return Err(BalError::IndexOutOfRange {
                line,
                kind: "camera",
                index: camera,
                count: num_cameras,
            });
        }
        let (line, point) = tokens.index("observation point index")?;
        if point >= num_points {
            return Err(BalError::IndexOutOfRange {
                line,
                kind: "point",
                index: point,
                count: num_points,
            });
        }
        let x = tokens.real("observation pixel")?;
        let y = tokens.real("observation pixel")?;
        observations.push(Observation::new(camera, point, [x, y]));
    }

    let mut cameras = Vec::with_capacity(num_cameras);
    for _ in 0..num_cameras {
        let mut p = [T::zero(); 9];
        for v in p.iter_mut() {
            *v = tokens.real("camera parameter")?;
        }
        cameras.push(CameraState::from_params(&p));
    }

    let mut points = Vec::with_capacity(num_points);
    for _ in 0..num_points {
        let x = tokens.real("point coordinate")?;
        let y = tokens.real("point coordinate")?;
        let z = tokens.real("point coordinate")?;
        points.push(PointState::new(x, y, z));
    }

    let problem = BaProblem {
        cameras,
        points,
        observations,
    };
    problem.validate();
    Ok(problem)
}

pub fn read_bal<T: Real>(path: impl AsRef<Path>) -> Result<BaProblem<T>, BalError> {
    parse_bal(BufReader::new(File::open(path)?))
}

/// Writes the problem in BAL format with 17 significant digits per value.
pub fn write_bal<T: Real, W: Write>(problem: &BaProblem<T>, writer: W) -> io::Result<()> {
    let mut w = BufWriter::new(writer);
    writeln!(
        w,
        "{} {} {}",
        problem.num_cameras(),
        problem.num_points(),
        problem.num_observations()
    )?;
    for o in &problem.observations {
        writeln!(
            w,
            "{} {} {:.16e} {:.16e}",
            o.camera,
            o.point,
            o.pixel[0].as_f64(),
            o.pixel[1].as_f64()
        )?;
    }
    for c in &problem.cameras {
        for v in c.params() {
            writeln!(w, "{:.16e}", v.as_f64())?;
        }
    }
    for p in &problem.points {
        for v in p.position {
            writeln!(w, "{:.16e}", v.as_f64())?;
        }
    }
    w.flush()
}
