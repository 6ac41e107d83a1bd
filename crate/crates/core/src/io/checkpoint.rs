//! Text checkpoints.
//!
//! ```text
//! VNN 1
//! family = fourier
//! M = 4
//! omega = 1.0000000000000000e0
//! widths = 2,4,1
//! modes = layer
//! scaling = identity
//! loss = mse
//! output_activation = none
//! trainable_alpha = 1
//! seed = 42
//! tensor hidden.1.weights 2 4
//! <2 lines of 4 comma-separated values>
//! tensor hidden.1.bias 1 4
//! tensor hidden.1.alpha 4 1
//! tensor output.weights 4 1
//! tensor output.bias 1 1
//! [tensor output.alpha M 1]      only with output_activation = variational
//! end
//! ```
//!
//! Tensors are row-major, one matrix row per line, each value written with
//! 17 significant digits. `trainable_alpha` has one flag per hidden layer,
//! followed by one for the output activation when it exists.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2};
use thiserror::Error;

use crate::activation::{ActivationMode, VariationalActivation};
use crate::basis::{BasisFamily, BasisKind};
use crate::loss::LossKind;
use crate::network::{HiddenLayer, Network, OutputLayer, Scaling};

pub const MAGIC: &str = "VNN";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("cannot access checkpoint {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line 1: unsupported checkpoint header `{found}` (expected `{MAGIC} {VERSION}`)")]
    Version { found: String },
    #[error("line {line}: shape error: {message}")]
    Shape { line: usize, message: String },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: checkpoint truncated, expected {expected}")]
    Truncated { line: usize, expected: String },
    #[error("cannot save network: {0}")]
    Unsupported(String),
}

/// A network with the metadata stored alongside it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub network: Network,
    pub loss: LossKind,
    /// Seed the network was initialized and trained with.
    pub seed: u64,
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn push_tensor(out: &mut String, name: &str, rows: usize, cols: usize, values: impl Iterator<Item = f64>) {
    writeln!(out, "tensor {name} {rows} {cols}").expect("writing to a String");
    let values: Vec<f64> = values.collect();
    for row in values.chunks(cols) {
        let line: Vec<String> = row.iter().map(|&v| fmt_f64(v)).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
}

fn push_matrix(out: &mut String, name: &str, m: &Array2<f64>) {
    push_tensor(out, name, m.nrows(), m.ncols(), m.iter().copied());
}

fn push_vector(out: &mut String, name: &str, v: &Array1<f64>) {
    push_tensor(out, name, 1, v.len(), v.iter().copied());
}

impl Checkpoint {
    pub fn new(network: Network, loss: LossKind, seed: u64) -> Self {
        Checkpoint { network, loss, seed }
    }

    pub fn to_text(&self) -> Result<String, CheckpointError> {
        let net = &self.network;
        let family = *net.hidden()[0].activation.family();
        let same_family = net
            .hidden()
            .iter()
            .map(|l| l.activation.family())
            .chain(net.output().activation.as_ref().map(|a| a.family()))
            .all(|f| *f == family);
        if !same_family {
            return Err(CheckpointError::Unsupported(
                "all layers must share one basis family".into(),
            ));
        }
        let join = |items: Vec<String>| items.join(",");
        let flag = |b: bool| if b { "1".to_string() } else { "0".to_string() };
        let mut flags: Vec<String> = net.hidden().iter().map(|l| flag(l.trainable_alpha)).collect();
        if net.output().activation.is_some() {
            flags.push(flag(net.output().trainable_alpha));
        }

        let mut s = String::new();
        writeln!(s, "{MAGIC} {VERSION}").unwrap();
        writeln!(s, "family = {}", family.kind()).unwrap();
        writeln!(s, "M = {}", family.size()).unwrap();
        writeln!(s, "omega = {}", fmt_f64(family.omega())).unwrap();
        writeln!(s, "widths = {}", join(net.widths().iter().map(|w| w.to_string()).collect())).unwrap();
        writeln!(
            s,
            "modes = {}",
            join(net.hidden().iter().map(|l| l.activation.mode().to_string()).collect())
        )
        .unwrap();
        writeln!(s, "scaling = {}", net.output().scaling).unwrap();
        writeln!(s, "loss = {}", self.loss).unwrap();
        let out_act = if net.output().activation.is_some() { "variational" } else { "none" };
        writeln!(s, "output_activation = {out_act}").unwrap();
        writeln!(s, "trainable_alpha = {}", join(flags)).unwrap();
        writeln!(s, "seed = {}", self.seed).unwrap();
        for (i, layer) in net.hidden().iter().enumerate() {
            let n = i + 1;
            push_matrix(&mut s, &format!("hidden.{n}.weights"), &layer.weights);
            push_vector(&mut s, &format!("hidden.{n}.bias"), &layer.bias);
            push_matrix(&mut s, &format!("hidden.{n}.alpha"), layer.activation.coeffs());
        }
        push_matrix(&mut s, "output.weights", &net.output().weights);
        push_vector(&mut s, "output.bias", &net.output().bias);
        if let Some(act) = &net.output().activation {
            push_matrix(&mut s, "output.alpha", act.coeffs());
        }
        s.push_str("end\n");
        Ok(s)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        let path = path.as_ref();
        let text = self.to_text()?;
        std::fs::write(path, text).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CheckpointError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CheckpointError> {
        Parser::new(text).checkpoint()
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
    ckpt.save(path)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, CheckpointError> {
    Checkpoint::load(path)
}

struct Parser<'a> {
    lines: std::iter::Peekable<std::iter::Enumerate<std::str::Lines<'a>>>,
    last_line: usize,
}

impl<'a> Parser<'a> {
    fn new(text: &'a str) -> Self {
        Parser {
            lines: text.lines().enumerate().peekable(),
            last_line: 0,
        }
    }

    fn next_line(&mut self, expected: &str) -> Result<(usize, &'a str), CheckpointError> {
        match self.lines.next() {
            Some((i, l)) => {
                self.last_line = i + 1;
                Ok((i + 1, l.trim_end()))
            }
            None => Err(CheckpointError::Truncated {
                line: self.last_line + 1,
                expected: expected.to_owned(),
            }),
        }
    }

    fn header(&mut self, key: &str) -> Result<(usize, &'a str), CheckpointError> {
        let (line, text) = self.next_line(&format!("header key `{key}`"))?;
        match text.split_once('=') {
            Some((k, v)) if k.trim() == key => Ok((line, v.trim())),
            _ => Err(CheckpointError::Parse {
                line,
                message: format!("expected header key `{key}`, got `{text}`"),
            }),
        }
    }

    fn parse_err(line: usize, what: &str, value: &str) -> CheckpointError {
        CheckpointError::Parse {
            line,
            message: format!("invalid {what} `{value}`"),
        }
    }

    fn scalar<T: std::str::FromStr>(&mut self, key: &str) -> Result<(usize, T), CheckpointError> {
        let (line, v) = self.header(key)?;
        v.parse().map(|t| (line, t)).map_err(|_| Self::parse_err(line, key, v))
    }

    fn list<T: std::str::FromStr>(&mut self, key: &str) -> Result<(usize, Vec<T>), CheckpointError> {
        let (line, v) = self.header(key)?;
        let items = v
            .split(',')
            .map(|s| s.trim().parse().map_err(|_| Self::parse_err(line, key, s)))
            .collect::<Result<Vec<T>, _>>()?;
        Ok((line, items))
    }

    fn tensor(&mut self, name: &str, rows: usize, cols: usize) -> Result<Array2<f64>, CheckpointError> {
        let (line, head) = self.next_line(&format!("tensor {name}"))?;
        let parts: Vec<&str> = head.split_whitespace().collect();
        if parts.len() != 4 || parts[0] != "tensor" || parts[1] != name {
            return Err(CheckpointError::Parse {
                line,
                message: format!("expected `tensor {name} <rows> <cols>`, got `{head}`"),
            });
        }
        let r: usize = parts[2].parse().map_err(|_| Self::parse_err(line, "row count", parts[2]))?;
        let c: usize = parts[3].parse().map_err(|_| Self::parse_err(line, "column count", parts[3]))?;
        if (r, c) != (rows, cols) {
            return Err(CheckpointError::Shape {
                line,
                message: format!("tensor {name} is {r}x{c} but the header implies {rows}x{cols}"),
            });
        }
        let mut values = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let (line, text) = self.next_line(&format!("a row of tensor {name}"))?;
            let before = values.len();
            for field in text.split(',') {
                let v: f64 = field
                    .trim()
                    .parse()
                    .map_err(|_| Self::parse_err(line, "number", field))?;
                if !v.is_finite() {
                    return Err(Self::parse_err(line, "finite number", field));
                }
                values.push(v);
            }
            if values.len() - before != cols {
                return Err(CheckpointError::Shape {
                    line,
                    message: format!("row of tensor {name} has {} values, expected {cols}", values.len() - before),
                });
            }
        }
        Ok(Array2::from_shape_vec((rows, cols), values).expect("row-major values match shape"))
    }

    fn checkpoint(mut self) -> Result<Checkpoint, CheckpointError> {
        let (_, magic) = self.next_line("the `VNN 1` header")?;
        if magic.trim() != format!("{MAGIC} {VERSION}") {
            return Err(CheckpointError::Version {
                found: magic.to_owned(),
            });
        }
        let (line, kind) = self.header("family")?;
        let kind: BasisKind = kind.parse().map_err(|_| Self::parse_err(line, "family", kind))?;
        let (_, m): (_, usize) = self.scalar("M")?;
        let (line, omega): (_, f64) = self.scalar("omega")?;
        let family = BasisFamily::new(kind, m, omega).map_err(|e| CheckpointError::Parse {
            line,
            message: e.to_string(),
        })?;
        let (wline, widths): (_, Vec<usize>) = self.list("widths")?;
        if widths.len() < 3 || widths.contains(&0) {
            return Err(CheckpointError::Shape {
                line: wline,
                message: "widths need input, at least one hidden and output entries, all positive".into(),
            });
        }
        let n = widths.len() - 2;
        let (mline, modes): (_, Vec<String>) = self.list("modes")?;
        if modes.len() != n {
            return Err(CheckpointError::Shape {
                line: mline,
                message: format!("{} modes for {n} hidden layers", modes.len()),
            });
        }
        let modes = modes
            .iter()
            .map(|m| m.parse::<ActivationMode>().map_err(|_| Self::parse_err(mline, "mode", m)))
            .collect::<Result<Vec<_>, _>>()?;
        let (line, scaling) = self.header("scaling")?;
        let scaling: Scaling = scaling.parse().map_err(|_| Self::parse_err(line, "scaling", scaling))?;
        let (line, loss) = self.header("loss")?;
        let loss: LossKind = loss.parse().map_err(|_| Self::parse_err(line, "loss", loss))?;
        let (line, out_act) = self.header("output_activation")?;
        let variational_output = match out_act {
            "none" => false,
            "variational" => true,
            other => return Err(Self::parse_err(line, "output_activation", other)),
        };
        let (fline, flags): (_, Vec<u8>) = self.list("trainable_alpha")?;
        let expected_flags = n + usize::from(variational_output);
        if flags.len() != expected_flags || flags.iter().any(|&f| f > 1) {
            return Err(CheckpointError::Shape {
                line: fline,
                message: format!("expected {expected_flags} trainable_alpha flags (0 or 1)"),
            });
        }
        let (_, seed): (_, u64) = self.scalar("seed")?;

        let build_err = |line: usize, e: crate::error::VnnError| CheckpointError::Shape {
            line,
            message: e.to_string(),
        };
        let mut hidden = Vec::with_capacity(n);
        for l in 0..n {
            let idx = l + 1;
            let (fan_in, fan_out) = (widths[l], widths[l + 1]);
            let weights = self.tensor(&format!("hidden.{idx}.weights"), fan_in, fan_out)?;
            let bias = self.tensor(&format!("hidden.{idx}.bias"), 1, fan_out)?.row(0).to_owned();
            let cols = if modes[l] == ActivationMode::Layer { 1 } else { fan_out };
            let alpha = self.tensor(&format!("hidden.{idx}.alpha"), m, cols)?;
            let activation = VariationalActivation::new(family, modes[l], fan_out, alpha)
                .map_err(|e| build_err(self.last_line, e))?;
            hidden.push(HiddenLayer {
                weights,
                bias,
                activation,
                trainable_alpha: flags[l] == 1,
            });
        }
        let (fan_in, fan_out) = (widths[n], widths[n + 1]);
        let weights = self.tensor("output.weights", fan_in, fan_out)?;
        let bias = self.tensor("output.bias", 1, fan_out)?.row(0).to_owned();
        let activation = if variational_output {
            let alpha = self.tensor("output.alpha", m, 1)?;
            Some(
                VariationalActivation::new(family, ActivationMode::Layer, fan_out, alpha)
                    .map_err(|e| build_err(self.last_line, e))?,
            )
        } else {
            None
        };
        let (line, end) = self.next_line("`end`")?;
        if end != "end" {
            return Err(CheckpointError::Parse {
                line,
                message: format!("expected `end`, got `{end}`"),
            });
        }
        let output = OutputLayer {
            weights,
            bias,
            activation,
            trainable_alpha: if variational_output { flags[n] == 1 } else { true },
            scaling,
        };
        let network = Network::from_parts(hidden, output).map_err(|e| build_err(self.last_line, e))?;
        Ok(Checkpoint { network, loss, seed })
    }
}
