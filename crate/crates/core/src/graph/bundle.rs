//! Plain-text graph bundle: `meta.json`, `edges.tsv`, `features.csv`,
//! `labels.csv`, `masks.csv`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Graph, Split};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleMeta {
    pub n: usize,
    pub d: usize,
    pub classes: usize,
}

fn parse_err(file: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        file: file.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn read(dir: &Path, name: &str) -> Result<(PathBuf, String)> {
    let path = dir.join(name);
    match fs::read_to_string(&path) {
        Ok(s) => Ok((path, s)),
        Err(e) => Err(parse_err(&path, 0, format!("cannot read: {e}"))),
    }
}

/// Non-blank lines with 1-based line numbers.
fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(k, l)| (k + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
}

fn expect_rows(path: &Path, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(parse_err(path, got, format!("expected {want} rows, found {got}")));
    }
    Ok(())
}

pub fn load_bundle<T: Scalar>(dir: impl AsRef<Path>) -> Result<Graph<T>> {
    let dir = dir.as_ref();

    let (meta_path, meta_text) = read(dir, "meta.json")?;
    let meta: BundleMeta = serde_json::from_str(&meta_text)
        .map_err(|e| parse_err(&meta_path, e.line(), e.to_string()))?;

    let (path, text) = read(dir, "edges.tsv")?;
    let mut edges = Vec::new();
    for (ln, line) in lines(&text) {
        let mut it = line.split_whitespace();
        let (a, b) = match (it.next(), it.next(), it.next()) {
            (Some(a), Some(b), None) => (a, b),
            _ => return Err(parse_err(&path, ln, "expected two node ids")),
        };
        let parse = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| parse_err(&path, ln, format!("bad node id {s:?}")))
        };
        let (a, b) = (parse(a)?, parse(b)?);
        if a >= meta.n || b >= meta.n {
            return Err(parse_err(
                &path,
                ln,
                format!("node id out of range: {a} {b} (n = {})", meta.n),
            ));
        }
        if a == b {
            return Err(parse_err(&path, ln, format!("self-loop on node {a}")));
        }
        edges.push((a, b));
    }

    let (path, text) = read(dir, "features.csv")?;
    let mut data = Vec::with_capacity(meta.n * meta.d);
    let mut rows = 0;
    for (ln, line) in lines(&text) {
        let before = data.len();
        for tok in line.split(',') {
            let v: T = tok
                .trim()
                .parse()
                .map_err(|_| parse_err(&path, ln, format!("bad real {tok:?}")))?;
            if v.is_nan() {
                return Err(parse_err(&path, ln, "NaN feature"));
            }
            data.push(v);
        }
        if data.len() - before != meta.d {
            return Err(parse_err(
                &path,
                ln,
                format!("expected {} columns, found {}", meta.d, data.len() - before),
            ));
        }
        rows += 1;
    }
    expect_rows(&path, rows, meta.n)?;
    let features = Tensor::from_vec(vec![meta.n, meta.d], data)?;

    let (path, text) = read(dir, "labels.csv")?;
    let mut labels = Vec::with_capacity(meta.n);
    for (ln, line) in lines(&text) {
        let y: usize = line
            .parse()
            .map_err(|_| parse_err(&path, ln, format!("bad label {line:?}")))?;
        if y >= meta.classes {
            return Err(parse_err(
                &path,
                ln,
                format!("label {y} outside [0, {})", meta.classes),
            ));
        }
        labels.push(y);
    }
    expect_rows(&path, labels.len(), meta.n)?;

    let (path, text) = read(dir, "masks.csv")?;
    let mut splits = Vec::with_capacity(meta.n);
    for (ln, line) in lines(&text) {
        let s = Split::parse(line).ok_or_else(|| {
            parse_err(&path, ln, format!("expected train, val or test, found {line:?}"))
        })?;
        splits.push(s);
    }
    expect_rows(&path, splits.len(), meta.n)?;

    Graph::new(meta.n, edges, features, labels, meta.classes, splits).map_err(|e| match e {
        Error::Config(msg) => parse_err(&path, 0, msg),
        other => other,
    })
}

/// Writes `g` as a bundle into `dir`, creating it if needed. Reals are
/// written with 17 significant digits so that loading is exact.
pub fn save_bundle<T: Scalar>(g: &Graph<T>, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let meta = BundleMeta {
        n: g.n(),
        d: g.feature_dim(),
        classes: g.classes(),
    };
    fs::write(
        dir.join("meta.json"),
        serde_json::to_string(&meta).expect("meta serialises") + "\n",
    )?;

    let mut f = fs::File::create(dir.join("edges.tsv"))?;
    for &(i, j) in g.edges() {
        writeln!(f, "{i}\t{j}")?;
    }

    let mut f = std::io::BufWriter::new(fs::File::create(dir.join("features.csv"))?);
    for i in 0..g.n() {
        let row: Vec<String> = g
            .features()
            .row(i)
            .iter()
            .map(|x| format!("{:.16e}", x))
            .collect();
        writeln!(f, "{}", row.join(","))?;
    }
    f.flush()?;

    let mut f = fs::File::create(dir.join("labels.csv"))?;
    for y in g.labels() {
        writeln!(f, "{y}")?;
    }

    let mut f = fs::File::create(dir.join("masks.csv"))?;
    for s in g.splits() {
        writeln!(f, "{}", s.as_str())?;
    }
    Ok(())
}
