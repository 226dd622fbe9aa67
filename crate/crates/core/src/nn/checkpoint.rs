//! Plain-text weight checkpoints.
//!
//! ```text
//! activesvdd-densenet 1
//! layers <count>
//! layer <in> <out> <leaky_relu|identity> <bias|nobias>
//! <in rows of out values>
//! [<out bias values>]
//! ...
//! ```
//!
//! Values are written in shortest round-trip form, so reading a checkpoint
//! reproduces every weight bit for bit.

use std::io::{BufRead, Write};

use ndarray::{Array1, Array2};

use super::{Activation, Dense, DenseNet, NnError};
use crate::scalar::Scalar;

pub const CHECKPOINT_MAGIC: &str = "activesvdd-densenet";
const VERSION: u32 = 1;

fn bad(msg: impl Into<String>) -> NnError {
    NnError::Checkpoint(msg.into())
}

pub(crate) fn write_values<T: Scalar, W: Write>(out: &mut W, values: impl Iterator<Item = T>) -> std::io::Result<()> {
    let line: Vec<String> = values.map(|v| format!("{v:?}")).collect();
    writeln!(out, "{}", line.join(" "))
}

pub(crate) fn parse_values<T: Scalar>(line: &str, expected: usize) -> Result<Vec<T>, NnError> {
    let values: Vec<T> = line
        .split_whitespace()
        .map(|tok| tok.parse::<T>().map_err(|_| bad(format!("bad number `{tok}`"))))
        .collect::<Result<_, _>>()?;
    if values.len() != expected {
        return Err(bad(format!("expected {expected} values, found {}", values.len())));
    }
    Ok(values)
}

pub(crate) fn next_line<R: BufRead>(lines: &mut std::io::Lines<R>) -> Result<String, NnError> {
    match lines.next() {
        Some(line) => Ok(line?),
        None => Err(bad("unexpected end of checkpoint")),
    }
}

impl<T: Scalar> DenseNet<T> {
    pub fn write_checkpoint<W: Write>(&self, mut out: W) -> Result<(), NnError> {
        writeln!(out, "{CHECKPOINT_MAGIC} {VERSION}")?;
        writeln!(out, "layers {}", self.layers.len())?;
        for layer in &self.layers {
            writeln!(
                out,
                "layer {} {} {} {}",
                layer.input_width(),
                layer.output_width(),
                layer.activation.token(),
                if layer.bias.is_some() { "bias" } else { "nobias" }
            )?;
            for row in layer.weights.rows() {
                write_values(&mut out, row.iter().copied())?;
            }
            if let Some(b) = &layer.bias {
                write_values(&mut out, b.iter().copied())?;
            }
        }
        Ok(())
    }

    pub fn read_checkpoint<R: BufRead>(input: R) -> Result<Self, NnError> {
        Self::read_from_lines(&mut input.lines())
    }

    pub(crate) fn read_from_lines<R: BufRead>(lines: &mut std::io::Lines<R>) -> Result<Self, NnError> {
        let head = next_line(lines)?;
        if head.trim() != format!("{CHECKPOINT_MAGIC} {VERSION}") {
            return Err(bad(format!("unrecognized header `{head}`")));
        }
        let count_line = next_line(lines)?;
        let count: usize = count_line
            .strip_prefix("layers ")
            .and_then(|c| c.trim().parse().ok())
            .ok_or_else(|| bad("missing layer count"))?;
        let mut layers = Vec::with_capacity(count);
        for _ in 0..count {
            let spec = next_line(lines)?;
            let parts: Vec<&str> = spec.split_whitespace().collect();
            let (rows, cols, activation, bias) = match parts.as_slice() {
                ["layer", r, c, a, b] => (
                    r.parse::<usize>().map_err(|_| bad("bad layer input width"))?,
                    c.parse::<usize>().map_err(|_| bad("bad layer output width"))?,
                    Activation::from_token(a).ok_or_else(|| bad(format!("unknown activation `{a}`")))?,
                    match *b {
                        "bias" => true,
                        "nobias" => false,
                        other => return Err(bad(format!("bad bias flag `{other}`"))),
                    },
                ),
                _ => return Err(bad(format!("bad layer line `{spec}`"))),
            };
            let mut flat = Vec::with_capacity(rows * cols);
            for _ in 0..rows {
                flat.extend(parse_values::<T>(&next_line(lines)?, cols)?);
            }
            let weights = Array2::from_shape_vec((rows, cols), flat).map_err(|e| bad(e.to_string()))?;
            let bias = if bias {
                Some(Array1::from(parse_values::<T>(&next_line(lines)?, cols)?))
            } else {
                None
            };
            layers.push(Dense {
                weights,
                bias,
                activation,
            });
        }
        DenseNet::from_layers(layers)
    }
}
