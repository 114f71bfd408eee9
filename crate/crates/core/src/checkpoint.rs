//! Model checkpoints as a sectioned text file.
//!
//! ```text
//! treenet-checkpoint 1
//! kind rlstm
//! dim 50
//! lineage 42 1
//! block embeddings 10001 50
//! <row 0: 50 space-separated values>
//! ...
//! block rlstm.input.left 50 50
//! ...
//! end
//! ```
//!
//! Blocks appear in a fixed order: `embeddings`, then the composer blocks
//! (`rnn.W`, `rnn.b`, or for each RLSTM gate `rlstm.<gate>.left`,
//! `rlstm.<gate>.right`, `rlstm.<gate>.bias`, gates in the order input,
//! forget_left, forget_right, output, candidate), then `classifier.W` and
//! `classifier.b`. Each block header gives `rows cols` (vectors have one
//! column and are written one value per line). Values use Rust's shortest
//! round-trip float formatting, so reading a checkpoint back reproduces the
//! model bit for bit.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Model, ModelKind};

const MAGIC: &str = "treenet-checkpoint";
const VERSION: u32 = 1;

pub fn checkpoint_to_string(model: &Model) -> String {
    let mut out = String::new();
    let n = model.dim();
    writeln!(out, "{MAGIC} {VERSION}").unwrap();
    writeln!(out, "kind {}", model.kind()).unwrap();
    writeln!(out, "dim {n}").unwrap();
    let lineage: Vec<String> = model.lineage.iter().map(u64::to_string).collect();
    writeln!(out, "lineage {}", lineage.join(" ")).unwrap();

    let emb = model.embeddings.matrix();
    let mut blocks = vec![("embeddings".to_string(), emb.rows(), emb.cols(), emb.as_slice())];
    blocks.extend(
        model
            .dense_blocks()
            .into_iter()
            .map(|b| (b.name, b.rows, b.cols, b.data)),
    );
    for (name, rows, cols, data) in blocks {
        writeln!(out, "block {name} {rows} {cols}").unwrap();
        for row in data.chunks(cols) {
            let mut first = true;
            for v in row {
                if !first {
                    out.push(' ');
                }
                first = false;
                write!(out, "{v:e}").unwrap();
            }
            out.push('\n');
        }
    }
    out.push_str("end\n");
    out
}

pub fn write_checkpoint(model: &Model, path: &Path) -> Result<()> {
    fs::write(path, checkpoint_to_string(model)).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<Model> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_checkpoint(&text, &path.display().to_string())
}

pub fn parse_checkpoint(text: &str, origin: &str) -> Result<Model> {
    let err = |line: usize, msg: String| Error::Parse {
        path: origin.to_string(),
        line,
        column: 1,
        message: msg,
    };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let mut next = |what: &str| {
        lines
            .next()
            .ok_or_else(|| err(0, format!("unexpected end of file, expected {what}")))
    };
    let field = |(line, l): (usize, &str), key: &str| -> Result<String> {
        l.strip_prefix(key)
            .and_then(|r| r.strip_prefix(' ').or(if r.is_empty() { Some("") } else { None }))
            .map(str::to_string)
            .ok_or_else(|| err(line, format!("expected `{key} ...`, found {l:?}")))
    };

    let header = next("header")?;
    if field(header, MAGIC)? != VERSION.to_string() {
        return Err(err(1, format!("unsupported checkpoint version in {:?}", header.1)));
    }
    let kind_line = next("kind")?;
    let kind: ModelKind = field(kind_line, "kind")?
        .parse()
        .map_err(|e: Error| err(kind_line.0, e.to_string()))?;
    let dim_line = next("dim")?;
    let dim: usize = field(dim_line, "dim")?
        .parse()
        .map_err(|_| err(dim_line.0, "bad dimension".into()))?;
    let lineage_line = next("lineage")?;
    let lineage = field(lineage_line, "lineage")?
        .split_whitespace()
        .map(|s| s.parse::<u64>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|_| err(lineage_line.0, "bad lineage".into()))?;

    // Build a zero-shaped model and fill it block by block.
    if dim == 0 {
        return Err(err(dim_line.0, "dimension must be at least 1".into()));
    }
    let mut model = Model::zeros(kind, dim);
    model.lineage = lineage;
    let expected: Vec<(String, usize, usize)> = {
        let emb = model.embeddings.matrix();
        let mut v = vec![("embeddings".to_string(), emb.rows(), emb.cols())];
        v.extend(model.dense_blocks().into_iter().map(|b| (b.name, b.rows, b.cols)));
        v
    };
    let mut values: Vec<Vec<f64>> = Vec::with_capacity(expected.len());
    for (name, rows, cols) in &expected {
        let hdr = next("block header")?;
        let want = format!("{name} {rows} {cols}");
        if field(hdr, "block")? != want {
            return Err(err(hdr.0, format!("expected block `{want}`, found {:?}", hdr.1)));
        }
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..*rows {
            let (line, l) = next("block row")?;
            let before = data.len();
            for tok in l.split(' ') {
                data.push(
                    tok.parse::<f64>()
                        .map_err(|_| err(line, format!("bad number {tok:?} in {name}")))?,
                );
            }
            if data.len() - before != *cols {
                return Err(err(line, format!("{name}: expected {cols} values per row")));
            }
        }
        values.push(data);
    }
    let end = next("end")?;
    if end.1 != "end" {
        return Err(err(end.0, format!("expected `end`, found {:?}", end.1)));
    }

    let mut values = values.into_iter();
    model
        .embeddings
        .matrix_mut()
        .as_mut_slice()
        .copy_from_slice(&values.next().expect("embeddings block"));
    for (dst, src) in model.dense_blocks_mut().into_iter().zip(values) {
        dst.copy_from_slice(&src);
    }
    Ok(model)
}
