//! On-disk formats: edge-list text, binary CSR, feature text and label text.
//!
//! Binary CSR layout (all little-endian):
//!
//! ```text
//! b"SPLG" | version: u32 | n: u64 | m: u64 | feat_dim: u64
//! row_offsets: (n + 1) × u64 | col_indices: m × u64 | features: n × feat_dim × f64
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::Graph;
use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub const BINARY_MAGIC: &[u8; 4] = b"SPLG";
pub const BINARY_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphFormat {
    EdgeList,
    BinaryCsr,
}

impl std::str::FromStr for GraphFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "edge-list" | "edgelist" | "text" => Ok(Self::EdgeList),
            "binary-csr" | "binary" | "csr" => Ok(Self::BinaryCsr),
            other => Err(Error::InvalidArgument(format!(
                "unknown graph format {other:?}"
            ))),
        }
    }
}

impl GraphFormat {
    pub fn name(self) -> &'static str {
        match self {
            Self::EdgeList => "edge-list",
            Self::BinaryCsr => "binary-csr",
        }
    }

    /// Guesses the format from the file extension (`.splg` is binary).
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("splg") | Some("bin") => Self::BinaryCsr,
            _ => Self::EdgeList,
        }
    }
}

/// Loads a graph and optionally attaches features from a text file.
///
/// For edge lists the vertex count is `num_vertices` if given, otherwise the
/// feature row count if a feature file is given, otherwise `max id + 1`.
pub fn load_graph(
    path: &Path,
    format: GraphFormat,
    features: Option<&Path>,
    num_vertices: Option<usize>,
) -> Result<Graph> {
    let feats = features.map(load_features_text).transpose()?;
    let graph = match format {
        GraphFormat::EdgeList => {
            let n = num_vertices.or(feats.as_ref().map(Matrix::rows));
            load_edge_list(path, n)?
        }
        GraphFormat::BinaryCsr => {
            let g = load_binary(path)?;
            if let Some(n) = num_vertices {
                if n != g.num_vertices() {
                    return Err(Error::BadBinary(format!(
                        "file holds {} vertices, expected {n}",
                        g.num_vertices()
                    )));
                }
            }
            g
        }
    };
    match feats {
        Some(f) => graph.with_features(f),
        None => Ok(graph),
    }
}

/// Parses `u v` lines (arc `u → v`). `#` starts a comment.
pub fn load_edge_list(path: &Path, num_vertices: Option<usize>) -> Result<Graph> {
    let reader = BufReader::new(File::open(path)?);
    let mut edges = Vec::new();
    let mut max_id = None::<usize>;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let body = line.split('#').next().unwrap_or("");
        let mut toks = body.split_whitespace();
        let Some(a) = toks.next() else { continue };
        let parse_err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        };
        let b = toks
            .next()
            .ok_or_else(|| parse_err("expected two vertex ids".into()))?;
        if toks.next().is_some() {
            return Err(parse_err("expected exactly two vertex ids".into()));
        }
        let u: usize = a
            .parse()
            .map_err(|_| parse_err(format!("bad vertex id {a:?}")))?;
        let v: usize = b
            .parse()
            .map_err(|_| parse_err(format!("bad vertex id {b:?}")))?;
        if let Some(n) = num_vertices {
            if u >= n || v >= n {
                return Err(parse_err(format!(
                    "vertex id {} out of range (n = {n})",
                    u.max(v)
                )));
            }
        }
        max_id = Some(max_id.map_or(u.max(v), |m| m.max(u).max(v)));
        edges.push((u, v));
    }
    let n = num_vertices.unwrap_or_else(|| max_id.map_or(0, |m| m + 1));
    Graph::from_edges(n, &edges)
}

pub fn save_edge_list(graph: &Graph, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(
        w,
        "# {} vertices, {} arcs",
        graph.num_vertices(),
        graph.num_edges()
    )?;
    for (u, v) in graph.edges() {
        writeln!(w, "{u} {v}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_binary(graph: &Graph, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(BINARY_MAGIC)?;
    w.write_all(&BINARY_VERSION.to_le_bytes())?;
    let n = graph.num_vertices() as u64;
    let m = graph.num_edges() as u64;
    let d = graph.feat_dim() as u64;
    for x in [n, m, d] {
        w.write_all(&x.to_le_bytes())?;
    }
    for &o in graph.row_offsets() {
        w.write_all(&(o as u64).to_le_bytes())?;
    }
    for &c in graph.col_indices() {
        w.write_all(&(c as u64).to_le_bytes())?;
    }
    if let Some(f) = graph.features() {
        for &x in f.as_slice() {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_binary(path: &Path) -> Result<Graph> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::BadBinary("truncated header".into()))?;
    if &magic != BINARY_MAGIC {
        return Err(Error::BadBinary("bad magic bytes".into()));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != BINARY_VERSION {
        return Err(Error::BadBinary(format!("unsupported version {version}")));
    }
    let n = read_u64(&mut r)? as usize;
    let m = read_u64(&mut r)? as usize;
    let d = read_u64(&mut r)? as usize;
    let mut offsets = Vec::with_capacity(n + 1);
    for _ in 0..=n {
        offsets.push(read_u64(&mut r)? as usize);
    }
    let mut cols = Vec::with_capacity(m);
    for _ in 0..m {
        cols.push(read_u64(&mut r)? as usize);
    }
    let features = if d > 0 {
        let mut data = Vec::with_capacity(n * d);
        let mut b8 = [0u8; 8];
        for _ in 0..n * d {
            r.read_exact(&mut b8)
                .map_err(|_| Error::BadBinary("truncated feature block".into()))?;
            data.push(f64::from_le_bytes(b8));
        }
        Some(Matrix::from_vec(n, d, data)?)
    } else {
        None
    };
    Graph::from_csr(offsets, cols, features)
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)
        .map_err(|_| Error::BadBinary("unexpected end of file".into()))?;
    Ok(u64::from_le_bytes(b))
}

/// One row per vertex, whitespace-separated reals.
pub fn load_features_text(path: &Path) -> Result<Matrix> {
    let reader = BufReader::new(File::open(path)?);
    let mut data = Vec::new();
    let mut dim = None;
    let mut rows = 0;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let before = data.len();
        for tok in body.split_whitespace() {
            let x: f64 = tok.parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: format!("bad real {tok:?}"),
            })?;
            data.push(x);
        }
        let width = data.len() - before;
        match dim {
            None => dim = Some(width),
            Some(d) if d != width => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    msg: format!("expected {d} values, found {width}"),
                })
            }
            _ => {}
        }
        rows += 1;
    }
    Matrix::from_vec(rows, dim.unwrap_or(0), data)
}

pub fn save_features_text(features: &Matrix, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for i in 0..features.rows() {
        let row: Vec<String> = features.row(i).iter().map(|x| x.to_string()).collect();
        writeln!(w, "{}", row.join(" "))?;
    }
    w.flush()?;
    Ok(())
}

/// One non-negative integer class label per line, line number = vertex id.
pub fn load_labels(path: &Path) -> Result<Vec<usize>> {
    let reader = BufReader::new(File::open(path)?);
    let mut labels = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        labels.push(body.parse().map_err(|_| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: format!("bad label {body:?}"),
        })?);
    }
    Ok(labels)
}

pub fn save_labels(labels: &[usize], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for l in labels {
        writeln!(w, "{l}")?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn edge_list_with_comments() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "g.txt", "# header\n0 1\n\n1   2 # trailing\n");
        let g = load_graph(&p, GraphFormat::EdgeList, None, None).unwrap();
        assert_eq!(g.num_vertices(), 3);
        assert_eq!(g.in_neighbors(1), &[0]);
        assert_eq!(g.in_neighbors(2), &[1]);
        assert!(g.features().is_none());
    }

    #[test]
    fn empty_edge_list_with_explicit_n() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "g.txt", "# nothing\n");
        let g = load_graph(&p, GraphFormat::EdgeList, None, Some(3)).unwrap();
        assert_eq!(g.row_offsets(), &[0, 0, 0, 0]);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "g.txt", "0 1\n1 x\n");
        match load_edge_list(&p, None) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        let p = write(dir.path(), "h.txt", "0 1\n\n0 5\n");
        match load_edge_list(&p, Some(3)) {
            Err(Error::Parse { line, msg, .. }) => {
                assert_eq!(line, 3);
                assert!(msg.contains("out of range"));
            }
            other => panic!("unexpected {other:?}"),
        }
        let p = write(dir.path(), "k.txt", "0 1 2\n");
        assert!(load_edge_list(&p, None).is_err());
    }

    #[test]
    fn feature_row_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let g = write(dir.path(), "g.txt", "0 1\n1 2\n");
        let f = write(dir.path(), "f.txt", "1 2\n3 4\n");
        assert!(matches!(
            load_graph(&g, GraphFormat::EdgeList, Some(&f), Some(3)),
            Err(Error::FeatureRows { rows: 2, n: 3 })
        ));
        let f = write(dir.path(), "f2.txt", "1 2\n3\n");
        assert!(load_features_text(&f).is_err());
        let f = write(dir.path(), "f3.txt", "1 2\n3 4\n5 6\n");
        let g = load_graph(&g, GraphFormat::EdgeList, Some(&f), None).unwrap();
        assert_eq!(g.features().unwrap().row(2), &[5., 6.]);
    }

    #[test]
    fn binary_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let feats = Matrix::from_vec(4, 2, (0..8).map(|x| x as f64 * 0.25).collect()).unwrap();
        let g = Graph::from_edges(4, &[(0, 1), (2, 1), (3, 0), (1, 1)])
            .unwrap()
            .with_features(feats)
            .unwrap();
        let p = dir.path().join("g.splg");
        save_binary(&g, &p).unwrap();
        let back = load_graph(&p, GraphFormat::from_path(&p), None, None).unwrap();
        assert_eq!(back, g);
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(&bytes[..4], b"SPLG");
        assert_eq!(bytes.len(), 4 + 4 + 24 + 5 * 8 + 4 * 8 + 8 * 8);

        let bad = write(dir.path(), "bad.splg", "NOPE");
        assert!(matches!(load_binary(&bad), Err(Error::BadBinary(_))));
        std::fs::write(&bad, &bytes[..bytes.len() - 3]).unwrap();
        assert!(load_binary(&bad).is_err());
    }

    #[test]
    fn text_helpers_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let g = Graph::from_edges(3, &[(0, 2), (1, 2)]).unwrap();
        let p = dir.path().join("e.txt");
        save_edge_list(&g, &p).unwrap();
        assert_eq!(load_edge_list(&p, Some(3)).unwrap(), g);
        let f = Matrix::from_vec(2, 2, vec![0.1, 1e-17, -3.5, 2.0]).unwrap();
        let fp = dir.path().join("f.txt");
        save_features_text(&f, &fp).unwrap();
        assert_eq!(load_features_text(&fp).unwrap(), f);
        let lp = dir.path().join("l.txt");
        save_labels(&[3, 0, 1], &lp).unwrap();
        assert_eq!(load_labels(&lp).unwrap(), vec![3, 0, 1]);
    }
}
