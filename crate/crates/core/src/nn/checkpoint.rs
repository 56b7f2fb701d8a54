//! Plain-text weight checkpoints.
//!
//! ```text
//! gmr-network v1
//! layers <count>
//! layer <in> <out> <activation>
//! w <out*in values, row-major>
//! b <out values>
//! ...
//! ```
//!
//! Values are written with Rust's shortest round-trip formatting, so a
//! save/load cycle is bit-exact.

use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector};

use super::{Activation, Dense, Network};
use crate::error::{Error, Result};
use crate::scalar::Real;

pub const HEADER: &str = "gmr-network v1";

pub fn write_network<T: Real, W: Write>(net: &Network<T>, mut out: W) -> Result<()> {
    writeln!(out, "{HEADER}")?;
    writeln!(out, "layers {}", net.layers().len())?;
    for layer in net.layers() {
        writeln!(
            out,
            "layer {} {} {}",
            layer.input_dim(),
            layer.output_dim(),
            layer.activation.name()
        )?;
        write!(out, "w")?;
        for r in 0..layer.weights.nrows() {
            for c in 0..layer.weights.ncols() {
                write!(out, " {:?}", layer.weights[(r, c)])?;
            }
        }
        writeln!(out)?;
        write!(out, "b")?;
        for v in layer.bias.iter() {
            write!(out, " {v:?}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

fn next_line<R: BufRead>(lines: &mut std::io::Lines<R>) -> Result<String> {
    loop {
        match lines.next() {
            Some(line) => {
                let line = line?;
                if !line.trim().is_empty() {
                    return Ok(line);
                }
            }
            None => return Err(Error::Format("unexpected end of file".into())),
        }
    }
}

fn parse_values<T: Real>(line: &str, tag: &str, count: usize) -> Result<Vec<T>> {
    let mut parts = line.split_whitespace();
    if parts.next() != Some(tag) {
        return Err(Error::Format(format!("expected `{tag}` row")));
    }
    let values: Vec<T> = parts
        .map(|p| {
            p.parse::<T>()
                .map_err(|_| Error::Format(format!("bad number `{p}`")))
        })
        .collect::<Result<_>>()?;
    if values.len() != count {
        return Err(Error::Format(format!(
            "`{tag}` row has {} values, expected {count}",
            values.len()
        )));
    }
    Ok(values)
}

pub fn read_network<T: Real, R: BufRead>(input: R) -> Result<Network<T>> {
    let mut lines = input.lines();
    let header = next_line(&mut lines)?;
    if header.trim() != HEADER {
        return Err(Error::Format(format!("unsupported header `{header}`")));
    }
    let count_line = next_line(&mut lines)?;
    let count: usize = count_line
        .strip_prefix("layers ")
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| Error::Format("expected `layers <count>`".into()))?;
    let mut layers = Vec::with_capacity(count);
    for _ in 0..count {
        let spec = next_line(&mut lines)?;
        let fields: Vec<&str> = spec.split_whitespace().collect();
        if fields.len() != 4 || fields[0] != "layer" {
            return Err(Error::Format(format!("bad layer line `{spec}`")));
        }
        let input_dim: usize = fields[1]
            .parse()
            .map_err(|_| Error::Format("layer input dim".into()))?;
        let output_dim: usize = fields[2]
            .parse()
            .map_err(|_| Error::Format("layer output dim".into()))?;
        let activation = Activation::from_name(fields[3])
            .ok_or_else(|| Error::Format(format!("unknown activation `{}`", fields[3])))?;
        let w = parse_values::<T>(&next_line(&mut lines)?, "w", input_dim * output_dim)?;
        let b = parse_values::<T>(&next_line(&mut lines)?, "b", output_dim)?;
        layers.push(Dense {
            weights: DMatrix::from_row_slice(output_dim, input_dim, &w),
            bias: DVector::from_vec(b),
            activation,
        });
    }
    Network::new(layers)
}
