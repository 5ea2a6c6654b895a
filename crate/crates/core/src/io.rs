//! Trajectory CSV files, model checkpoints and loss histories.
//!
//! Numbers are written with `{:.16e}` (17 significant digits), which
//! round-trips every finite `f64` exactly and does not depend on locale.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::fnode::{FnodeModel, Standardization};
use crate::integrate::Trajectory;
use crate::net::{Activation, Init, Layer, Mlp};

/// First line of every checkpoint.
pub const CHECKPOINT_VERSION: &str = "fnode-checkpoint v1";

/// Relative tolerance on sample spacing when reading a trajectory.
const DT_RTOL: f64 = 1e-6;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Column names for a trajectory with `n_z` coordinates.
pub fn trajectory_header(n_z: usize, with_accels: bool, n_u: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend((0..n_z).map(|i| format!("q{i}")));
    h.extend((0..n_z).map(|i| format!("v{i}")));
    if with_accels {
        h.extend((0..n_z).map(|i| format!("a{i}")));
    }
    h.extend((0..n_u).map(|i| format!("u{i}")));
    h
}

/// Writes `traj` as CSV; see [`trajectory_header`] for the columns.
pub fn write_trajectory(traj: &Trajectory, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    write_trajectory_to(traj, BufWriter::new(file)).map_err(|e| match e {
        Error::Io { source, .. } => Error::Io {
            path: path.to_path_buf(),
            source,
        },
        other => other,
    })
}

/// [`write_trajectory`] to any writer.
pub fn write_trajectory_to<W: Write>(traj: &Trajectory, out: W) -> Result<()> {
    let wrap = |e: csv::Error| Error::Io {
        path: PathBuf::from("<stream>"),
        source: e.into(),
    };
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(trajectory_header(traj.n_z(), traj.accels.is_some(), traj.n_u()))
        .map_err(wrap)?;
    let mut record = Vec::new();
    for i in 0..traj.len() {
        record.clear();
        record.push(fmt_f64(traj.time(i)));
        record.extend(traj.states.row(i).iter().map(|&v| fmt_f64(v)));
        if let Some(a) = &traj.accels {
            record.extend(a.row(i).iter().map(|&v| fmt_f64(v)));
        }
        if let Some(u) = &traj.inputs {
            record.extend(u.row(i).iter().map(|&v| fmt_f64(v)));
        }
        w.write_record(&record).map_err(wrap)?;
    }
    w.flush().map_err(|source| Error::Io {
        path: PathBuf::from("<stream>"),
        source,
    })
}

/// Column layout decoded from a header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Layout {
    n_z: usize,
    accels: bool,
    n_u: usize,
}

fn parse_header(fields: &[&str]) -> std::result::Result<Layout, String> {
    if fields.first().map(|s| s.trim()) != Some("t") {
        return Err("header must start with `t`".into());
    }
    let count = |prefix: char| {
        fields[1..]
            .iter()
            .filter(|f| f.trim().starts_with(prefix))
            .count()
    };
    let n_z = count('q');
    if n_z == 0 {
        return Err("header has no position columns".into());
    }
    let n_a = count('a');
    if n_a != 0 && n_a != n_z {
        return Err(format!("header has {n_a} acceleration columns for {n_z} coordinates"));
    }
    let layout = Layout {
        n_z,
        accels: n_a == n_z,
        n_u: count('u'),
    };
    let expected = trajectory_header(layout.n_z, layout.accels, layout.n_u);
    let got: Vec<&str> = fields.iter().map(|s| s.trim()).collect();
    if got != expected {
        return Err(format!("unexpected header `{}`, expected `{}`", got.join(","), expected.join(",")));
    }
    Ok(layout)
}

/// Reads a trajectory written by [`write_trajectory`].
///
/// Time must increase strictly at a uniform step. A single-row file
/// gets `dt = 1`.
pub fn read_trajectory(path: &Path) -> Result<Trajectory> {
    let file = File::open(path).map_err(io_err(path))?;
    read_trajectory_from(BufReader::new(file), path)
}

/// [`read_trajectory`] from any reader; `path` is used in messages only.
pub fn read_trajectory_from<R: std::io::Read>(input: R, path: &Path) -> Result<Trajectory> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(input);
    let mut records = reader.records();
    let header = match records.next() {
        None => return Err(parse_err(path, 1, "no header")),
        Some(r) => r.map_err(|e| parse_err(path, 1, e.to_string()))?,
    };
    let fields: Vec<&str> = header.iter().collect();
    let layout = parse_header(&fields).map_err(|m| parse_err(path, 1, m))?;
    let width = fields.len();

    let mut times = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (k, rec) in records.enumerate() {
        let line = k + 2;
        let rec = rec.map_err(|e| parse_err(path, line, e.to_string()))?;
        if rec.len() == 1 && rec[0].trim().is_empty() {
            continue;
        }
        if rec.len() != width {
            return Err(parse_err(
                path,
                line,
                format!("expected {width} columns, found {}", rec.len()),
            ));
        }
        let mut values = Vec::with_capacity(width);
        for (j, f) in rec.iter().enumerate() {
            let v: f64 = f
                .trim()
                .parse()
                .map_err(|_| parse_err(path, line, format!("column {} is not a number: `{f}`", fields[j])))?;
            if !v.is_finite() {
                return Err(parse_err(path, line, format!("column {} is not finite", fields[j])));
            }
            values.push(v);
        }
        if let Some(&prev) = times.last() {
            if values[0] <= prev {
                return Err(parse_err(path, line, "time is not strictly increasing"));
            }
        }
        times.push(values[0]);
        rows.push(values);
    }
    if rows.is_empty() {
        return Err(parse_err(path, 2, "no data rows"));
    }
    let dt = if times.len() > 1 { times[1] - times[0] } else { 1.0 };
    for (i, w) in times.windows(2).enumerate() {
        if ((w[1] - w[0]) - dt).abs() > DT_RTOL * dt {
            return Err(parse_err(path, i + 3, "time step is not uniform"));
        }
    }

    let n = rows.len();
    let nz = layout.n_z;
    let block = |start: usize, cols: usize| DMatrix::from_fn(n, cols, |i, j| rows[i][start + j]);
    let mut traj = Trajectory::new(times[0], dt, block(1, 2 * nz))?;
    if layout.accels {
        traj = traj.with_accels(block(1 + 2 * nz, nz))?;
    }
    if layout.n_u > 0 {
        let start = 1 + 2 * nz + if layout.accels { nz } else { 0 };
        traj = traj.with_inputs(block(start, layout.n_u))?;
    }
    Ok(traj)
}

/// Saves a model as text: version, dims, activation, init, then every
/// layer (weight rows followed by the bias row) and the four
/// standardization vectors.
pub fn write_checkpoint(model: &FnodeModel, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    write_checkpoint_to(model, &mut w).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

fn join(values: impl IntoIterator<Item = f64>) -> String {
    values.into_iter().map(fmt_f64).collect::<Vec<_>>().join(" ")
}

pub fn write_checkpoint_to<W: Write>(model: &FnodeModel, w: &mut W) -> std::io::Result<()> {
    let mlp = &model.mlp;
    writeln!(w, "{CHECKPOINT_VERSION}")?;
    let dims: Vec<String> = mlp.dims().iter().map(ToString::to_string).collect();
    writeln!(w, "dims {}", dims.join(" "))?;
    writeln!(w, "activation {}", mlp.activation().name())?;
    writeln!(w, "init {}", mlp.init().name())?;
    for layer in mlp.layers() {
        for row in layer.weights.row_iter() {
            writeln!(w, "{}", join(row.iter().copied()))?;
        }
        writeln!(w, "{}", join(layer.bias.iter().copied()))?;
    }
    writeln!(w, "input_mean {}", join(model.input_stats.mean.iter().copied()))?;
    writeln!(w, "input_std {}", join(model.input_stats.std.iter().copied()))?;
    writeln!(w, "target_mean {}", join(model.target_stats.mean.iter().copied()))?;
    writeln!(w, "target_std {}", join(model.target_stats.std.iter().copied()))?;
    Ok(())
}

struct Lines<'a> {
    path: &'a Path,
    inner: std::iter::Enumerate<std::io::Lines<Box<dyn BufRead + 'a>>>,
}

impl Lines<'_> {
    fn next(&mut self) -> Result<(usize, String)> {
        match self.inner.next() {
            Some((i, Ok(l))) => Ok((i + 1, l)),
            Some((_, Err(e))) => Err(io_err(self.path)(e)),
            None => Err(parse_err(self.path, 0, "unexpected end of checkpoint")),
        }
    }

    fn numbers(&mut self, expected: usize, prefix: Option<&str>) -> Result<Vec<f64>> {
        let (line, text) = self.next()?;
        let mut body = text.as_str();
        if let Some(p) = prefix {
            body = body
                .strip_prefix(p)
                .ok_or_else(|| parse_err(self.path, line, format!("expected `{p}`")))?;
        }
        let values: Vec<f64> = body
            .split_whitespace()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| parse_err(self.path, line, e.to_string()))?;
        if values.len() != expected {
            return Err(parse_err(
                self.path,
                line,
                format!("expected {expected} values, found {}", values.len()),
            ));
        }
        Ok(values)
    }

    fn keyword(&mut self, key: &str) -> Result<(usize, String)> {
        let (line, text) = self.next()?;
        match text.strip_prefix(key).and_then(|r| r.strip_prefix(' ')) {
            Some(rest) => Ok((line, rest.trim().to_string())),
            None => Err(parse_err(self.path, line, format!("expected `{key} ...`"))),
        }
    }
}

/// Loads a model saved by [`write_checkpoint`].
pub fn read_checkpoint(path: &Path) -> Result<FnodeModel> {
    let file = File::open(path).map_err(io_err(path))?;
    read_checkpoint_from(BufReader::new(file), path)
}

pub fn read_checkpoint_from<R: BufRead>(input: R, path: &Path) -> Result<FnodeModel> {
    let boxed: Box<dyn BufRead> = Box::new(input);
    let mut lines = Lines {
        path,
        inner: boxed.lines().enumerate(),
    };
    let (line, version) = lines.next().map_err(|_| parse_err(path, 1, "empty checkpoint"))?;
    if version.trim() != CHECKPOINT_VERSION {
        return Err(parse_err(path, line, format!("unsupported checkpoint version `{version}`")));
    }
    let (line, dims_text) = lines.keyword("dims")?;
    let dims: Vec<usize> = dims_text
        .split_whitespace()
        .map(str::parse)
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| parse_err(path, line, format!("bad dims: {e}")))?;
    if dims.len() < 2 || dims.contains(&0) {
        return Err(parse_err(path, line, "dims need at least two positive entries"));
    }
    let (line, act) = lines.keyword("activation")?;
    let activation: Activation = act.parse().map_err(|_| parse_err(path, line, format!("unknown activation `{act}`")))?;
    let (line, ini) = lines.keyword("init")?;
    let init: Init = ini.parse().map_err(|_| parse_err(path, line, format!("unknown init `{ini}`")))?;

    let mut layers = Vec::with_capacity(dims.len() - 1);
    for w in dims.windows(2) {
        let (fan_in, fan_out) = (w[0], w[1]);
        let mut weights = DMatrix::zeros(fan_out, fan_in);
        for r in 0..fan_out {
            let row = lines.numbers(fan_in, None)?;
            for (c, v) in row.into_iter().enumerate() {
                weights[(r, c)] = v;
            }
        }
        let bias = DVector::from_vec(lines.numbers(fan_out, None)?);
        layers.push(Layer { weights, bias });
    }
    let mlp = Mlp::from_layers(layers, activation, init)?;
    let (n_in, n_out) = (dims[0], *dims.last().unwrap());
    let input_stats = Standardization {
        mean: lines.numbers(n_in, Some("input_mean"))?,
        std: lines.numbers(n_in, Some("input_std"))?,
    };
    let target_stats = Standardization {
        mean: lines.numbers(n_out, Some("target_mean"))?,
        std: lines.numbers(n_out, Some("target_std"))?,
    };
    FnodeModel::new(mlp, input_stats, target_stats)
}

/// Writes `epoch,loss` rows.
pub fn write_loss_history(history: &[f64], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    let mut body = String::from("epoch,loss\n");
    for (i, l) in history.iter().enumerate() {
        body.push_str(&format!("{i},{}\n", fmt_f64(*l)));
    }
    w.write_all(body.as_bytes()).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}
