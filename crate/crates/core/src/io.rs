//! Matrix file formats, the MovieLens ratings reader, tensor bundles and
//! atomic file writes.
//!
//! Dense CSV: one matrix row per line, comma-separated decimals.
//!
//! Sparse triples: a `rows,cols` header line, then one `row,col,value` line
//! per entry with 0-based indices. Blank lines are ignored.
//!
//! Tensor bundle (binary, little-endian):
//!
//! ```text
//! b"DCMFTB01"                     8-byte magic
//! u32 count
//! count × {
//!     u32 name_len, name_len bytes of UTF-8 name,
//!     u64 rows, u64 cols,
//!     rows·cols × f64 in row-major order
//! }
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autoencoder::{AeWeights, Layer};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, RealMatrix, SparseMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MatrixFormat {
    #[default]
    DenseCsv,
    SparseTriples,
    /// Tab-separated `user item rating timestamp`, 1-based ids.
    Movielens,
}

fn load_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Load {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn parse_f64(path: &Path, line: usize, tok: &str) -> Result<f64> {
    tok.trim()
        .parse::<f64>()
        .map_err(|_| load_err(path, line, format!("`{}` is not a number", tok.trim())))
}

fn parse_usize(path: &Path, line: usize, tok: &str) -> Result<usize> {
    tok.trim()
        .parse::<usize>()
        .map_err(|_| load_err(path, line, format!("`{}` is not a non-negative integer", tok.trim())))
}

pub fn parse_dense_csv(path: &Path, text: &str) -> Result<Matrix> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (no, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|t| parse_f64(path, no + 1, t))
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(load_err(
                    path,
                    no + 1,
                    format!("ragged row: {} values, expected {}", row.len(), first.len()),
                ));
            }
        }
        rows.push(row);
    }
    let cols = rows.first().map_or(0, Vec::len);
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(Matrix::from_shape_vec((rows.len(), cols), flat).expect("rows checked equal"))
}

pub fn parse_sparse_triples(path: &Path, text: &str) -> Result<SparseMatrix> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (hno, header) = lines
        .next()
        .ok_or_else(|| load_err(path, 1, "missing `rows,cols` header"))?;
    let dims: Vec<&str> = header.split(',').collect();
    if dims.len() != 2 {
        return Err(load_err(path, hno + 1, "header must be `rows,cols`"));
    }
    let rows = parse_usize(path, hno + 1, dims[0])?;
    let cols = parse_usize(path, hno + 1, dims[1])?;
    let mut seen = std::collections::HashSet::new();
    let mut entries = Vec::new();
    for (no, line) in lines {
        let t: Vec<&str> = line.split(',').collect();
        if t.len() != 3 {
            return Err(load_err(path, no + 1, "expected `row,col,value`"));
        }
        let (i, j) = (parse_usize(path, no + 1, t[0])?, parse_usize(path, no + 1, t[1])?);
        let v = parse_f64(path, no + 1, t[2])?;
        if i >= rows || j >= cols {
            return Err(load_err(path, no + 1, format!("({i}, {j}) outside {rows}x{cols}")));
        }
        if !seen.insert((i, j)) {
            return Err(load_err(path, no + 1, format!("duplicate entry ({i}, {j})")));
        }
        entries.push((i, j, v));
    }
    SparseMatrix::new(rows, cols, entries)
}

pub fn load_matrix(path: &Path, format: MatrixFormat) -> Result<RealMatrix> {
    let text = fs::read_to_string(path)?;
    match format {
        MatrixFormat::DenseCsv => Ok(RealMatrix::Dense(parse_dense_csv(path, &text)?)),
        MatrixFormat::SparseTriples => Ok(RealMatrix::Sparse(parse_sparse_triples(path, &text)?)),
        MatrixFormat::Movielens => parse_movielens(path, &text, true, ML100K_SHAPE),
    }
}

pub const ML100K_SHAPE: (usize, usize) = (943, 1682);

/// MovieLens-100K ratings as a 943×1682 sparse matrix; `binarize` maps every rating to 1.
pub fn load_movielens_100k(path: &Path, binarize: bool) -> Result<RealMatrix> {
    let text = fs::read_to_string(path)?;
    parse_movielens(path, &text, binarize, ML100K_SHAPE)
}

pub fn parse_movielens(path: &Path, text: &str, binarize: bool, shape: (usize, usize)) -> Result<RealMatrix> {
    let mut seen = std::collections::HashSet::new();
    let mut entries = Vec::new();
    for (no, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let t: Vec<&str> = line.split('\t').collect();
        if t.len() != 4 {
            return Err(load_err(path, no + 1, "expected `user\\titem\\trating\\ttimestamp`"));
        }
        let u = parse_usize(path, no + 1, t[0])?;
        let i = parse_usize(path, no + 1, t[1])?;
        let r = parse_f64(path, no + 1, t[2])?;
        if u == 0 || i == 0 || u > shape.0 || i > shape.1 {
            return Err(load_err(path, no + 1, format!("ids ({u}, {i}) outside 1..={}x1..={}", shape.0, shape.1)));
        }
        if !seen.insert((u, i)) {
            return Err(load_err(path, no + 1, format!("duplicate rating for ({u}, {i})")));
        }
        entries.push((u - 1, i - 1, if binarize { 1.0 } else { r }));
    }
    Ok(RealMatrix::Sparse(SparseMatrix::new(shape.0, shape.1, entries)?))
}

pub fn dense_csv_string(m: &Matrix) -> String {
    let mut out = String::with_capacity(m.len() * 12);
    for row in m.rows() {
        let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

/// Write to a sibling temp file, then rename over `path`.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_matrix_csv(path: &Path, m: &Matrix) -> Result<()> {
    atomic_write(path, dense_csv_string(m).as_bytes())
}

const MAGIC: &[u8; 8] = b"DCMFTB01";

pub fn encode_tensors(tensors: &[(String, Matrix)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, m) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(m.nrows() as u64).to_le_bytes());
        out.extend_from_slice(&(m.ncols() as u64).to_le_bytes());
        for v in m.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_tensors(path: &Path, bytes: &[u8]) -> Result<Vec<(String, Matrix)>> {
    let bad = |msg: &str| load_err(path, 0, msg);
    let mut at = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        let s = bytes.get(at..at + n).ok_or_else(|| bad("truncated tensor bundle"))?;
        at += n;
        Ok(s)
    };
    if take(8)? != MAGIC {
        return Err(bad("not a tensor bundle"));
    }
    let count = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes"));
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let len = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as usize;
        let name = String::from_utf8(take(len)?.to_vec()).map_err(|_| bad("tensor name is not UTF-8"))?;
        let rows = u64::from_le_bytes(take(8)?.try_into().expect("8 bytes")) as usize;
        let cols = u64::from_le_bytes(take(8)?.try_into().expect("8 bytes")) as usize;
        let n = rows.checked_mul(cols).ok_or_else(|| bad("tensor too large"))?;
        let raw = take(n.checked_mul(8).ok_or_else(|| bad("tensor too large"))?)?;
        let vals: Vec<f64> = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        out.push((name, Matrix::from_shape_vec((rows, cols), vals).expect("length checked")));
    }
    Ok(out)
}

/// Tensors named `{prefix}/layer{i}/w` and `{prefix}/layer{i}/b` (bias as one row).
pub fn weights_to_tensors(prefix: &str, w: &AeWeights) -> Vec<(String, Matrix)> {
    let mut out = Vec::new();
    for (i, l) in w.layers.iter().enumerate() {
        out.push((format!("{prefix}/layer{i}/w"), l.weights.clone()));
        let b = l.bias.clone().insert_axis(ndarray::Axis(0));
        out.push((format!("{prefix}/layer{i}/b"), b));
    }
    out
}

pub fn weights_from_tensors(prefix: &str, tensors: &[(String, Matrix)], seed: u64) -> Result<AeWeights> {
    let find = |name: String| {
        tensors
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, m)| m.clone())
            .ok_or(Error::Lookup { kind: "tensor", id: name })
    };
    let mut layers = Vec::new();
    while tensors.iter().any(|(n, _)| *n == format!("{prefix}/layer{}/w", layers.len())) {
        let i = layers.len();
        let weights = find(format!("{prefix}/layer{i}/w"))?;
        let b = find(format!("{prefix}/layer{i}/b"))?;
        if b.nrows() != 1 || b.ncols() != weights.ncols() {
            return Err(Error::Shape { op: "bias", left: b.dim(), right: (1, weights.ncols()) });
        }
        layers.push(Layer { weights, bias: b.row(0).to_owned() });
    }
    if layers.is_empty() {
        return Err(Error::Lookup { kind: "tensor", id: format!("{prefix}/layer0/w") });
    }
    Ok(AeWeights { layers, seed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autoencoder::{init_weights, plan_architecture, Activation};
    use ndarray::array;

    fn p() -> &'static Path {
        Path::new("mem")
    }

    #[test]
    fn sparse_triples_example() {
        let m = parse_sparse_triples(p(), "2,2\n0,1,3.5").unwrap();
        assert_eq!(m.to_dense(), array![[0.0, 3.5], [0.0, 0.0]]);
    }

    #[test]
    fn dense_example() {
        assert_eq!(parse_dense_csv(p(), "1,2\n3,4\n").unwrap(), array![[1.0, 2.0], [3.0, 4.0]]);
    }

    #[test]
    fn load_errors_carry_line_numbers() {
        let line_of = |r: Result<SparseMatrix>| match r {
            Err(Error::Load { line, .. }) => line,
            other => panic!("expected load error, got {other:?}"),
        };
        assert_eq!(line_of(parse_sparse_triples(p(), "2,2\n0,1,3.5\n0,1,1.0")), 3);
        assert_eq!(line_of(parse_sparse_triples(p(), "2,2\n2,0,1")), 2);
        assert_eq!(line_of(parse_sparse_triples(p(), "2,2\n0,0,x")), 2);
        assert_eq!(line_of(parse_sparse_triples(p(), "")), 1);
        match parse_dense_csv(p(), "1,2\n3\n") {
            Err(Error::Load { line: 2, msg, .. }) => assert!(msg.contains("ragged")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn movielens_lines() {
        let m = parse_movielens(p(), "1\t1\t5\t0\n", true, ML100K_SHAPE).unwrap();
        assert_eq!(m.shape(), (943, 1682));
        assert_eq!(m.to_sparse().entries(), &[(0, 0, 1.0)]);
        let raw = parse_movielens(p(), "2\t3\t4\t9\n", false, ML100K_SHAPE).unwrap();
        assert_eq!(raw.to_sparse().entries(), &[(1, 2, 4.0)]);
        assert!(matches!(
            parse_movielens(p(), "1\t1\t5\t0\n1\t2\tfive\t0\n", true, ML100K_SHAPE),
            Err(Error::Load { line: 2, .. })
        ));
        assert!(parse_movielens(p(), "944\t1\t5\t0\n", true, ML100K_SHAPE).is_err());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let m = array![[0.1, -2.5e-17], [1.0 / 3.0, 7.0]];
        assert_eq!(parse_dense_csv(p(), &dense_csv_string(&m)).unwrap(), m);
    }

    #[test]
    fn tensor_bundle_round_trip() {
        let plan = plan_architecture(12, 0.5, 3, Activation::Tanh).unwrap();
        let w = init_weights(&plan, 4);
        let mut t = weights_to_tensors("e1", &w);
        t.push(("u/e1".into(), array![[1.5, f64::MIN_POSITIVE]]));
        let bytes = encode_tensors(&t);
        let back = decode_tensors(p(), &bytes).unwrap();
        assert_eq!(back, t);
        assert_eq!(weights_from_tensors("e1", &back, 4).unwrap(), w);
        assert!(decode_tensors(p(), &bytes[..bytes.len() - 1]).is_err());
        assert!(decode_tensors(p(), b"garbage!").is_err());
    }

    #[test]
    fn atomic_write_replaces_whole_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub").join("m.csv");
        write_matrix_csv(&path, &array![[1.0]]).unwrap();
        write_matrix_csv(&path, &array![[2.0, 3.0]]).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "2.0,3.0\n");
        let leftovers: Vec<_> = fs::read_dir(path.parent().unwrap()).unwrap().collect();
        assert_eq!(leftovers.len(), 1);
    }
}
