//! Plain-text dataset directories.
//!
//! ```text
//! meta.txt       n=<int> / f=<int> / c=<int>, one per line; '#' lines ignored
//! edges.tsv      u<TAB>v per undirected edge, 0 <= u < v < n
//! features.tsv   n lines of f tab-separated floats
//! labels.tsv     n lines, one integer each
//! train.idx      one node index per line (also val.idx, test.idx)
//! mask.tsv       optional; n lines of 0/1, 1 = known
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::graphdata::{Graph, IncompleteGraph, MaskMatrix, Splits};
use crate::numerics::Tensor;

struct TextFile {
    path: PathBuf,
    text: String,
}

impl TextFile {
    fn open(dir: &Path, name: &str) -> Result<Self> {
        let path = dir.join(name);
        let text = fs::read_to_string(&path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::data(&path, 0, "missing file"),
            _ => Error::io(&path, e),
        })?;
        Ok(Self { path, text })
    }

    /// Non-empty lines with their 1-based line numbers.
    fn lines(&self) -> impl Iterator<Item = (usize, &str)> {
        self.text
            .lines()
            .enumerate()
            .map(|(k, l)| (k + 1, l.trim_end_matches('\r')))
            .filter(|(_, l)| !l.trim().is_empty())
    }

    fn err(&self, line: usize, msg: impl Into<String>) -> Error {
        Error::data(&self.path, line, msg)
    }
}

fn parse_num<T: std::str::FromStr>(file: &TextFile, line: usize, tok: &str, what: &str) -> Result<T> {
    tok.trim()
        .parse()
        .map_err(|_| file.err(line, format!("cannot parse {what} from {tok:?}")))
}

fn read_meta(dir: &Path) -> Result<(usize, usize, usize)> {
    let file = TextFile::open(dir, "meta.txt")?;
    let (mut n, mut f, mut c) = (None, None, None);
    for (ln, line) in file.lines() {
        if line.trim_start().starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| file.err(ln, format!("expected key=value, got {line:?}")))?;
        let v: usize = parse_num(&file, ln, value, key.trim())?;
        match key.trim() {
            "n" => n = Some(v),
            "f" => f = Some(v),
            "c" => c = Some(v),
            other => return Err(file.err(ln, format!("unknown key {other:?}"))),
        }
    }
    let need = |v: Option<usize>, k: &str| v.ok_or_else(|| file.err(0, format!("missing {k}=")));
    Ok((need(n, "n")?, need(f, "f")?, need(c, "c")?))
}

fn read_index_file(dir: &Path, name: &str, n: usize) -> Result<Vec<usize>> {
    let file = TextFile::open(dir, name)?;
    file.lines()
        .map(|(ln, l)| {
            let i: usize = parse_num(&file, ln, l, "node index")?;
            if i >= n {
                return Err(file.err(ln, format!("index out of range: {i} >= n={n}")));
            }
            Ok(i)
        })
        .collect()
}

/// Loads and validates a dataset directory. `mask.tsv`, if present, is
/// ignored; use [`load_incomplete`] to honor it.
pub fn load_dataset(dir: &Path) -> Result<Graph> {
    let (n, f, c) = read_meta(dir)?;

    let feat_file = TextFile::open(dir, "features.tsv")?;
    let mut data = Vec::with_capacity(n * f);
    let mut rows = 0;
    for (ln, line) in feat_file.lines() {
        let before = data.len();
        for tok in line.split('\t') {
            data.push(parse_num::<f64>(&feat_file, ln, tok, "feature")?);
        }
        if data.len() - before != f {
            return Err(feat_file.err(ln, format!("expected {f} columns, found {}", data.len() - before)));
        }
        rows += 1;
    }
    if rows != n {
        return Err(feat_file.err(0, format!("expected {n} rows, found {rows}")));
    }
    let features = Tensor::from_vec(n, f, data)?;

    let label_file = TextFile::open(dir, "labels.tsv")?;
    let mut labels = Vec::with_capacity(n);
    for (ln, line) in label_file.lines() {
        let y: usize = parse_num(&label_file, ln, line, "label")?;
        if y >= c {
            return Err(label_file.err(ln, format!("label out of range: {y} >= c={c}")));
        }
        labels.push(y);
    }
    if labels.len() != n {
        return Err(label_file.err(0, format!("expected {n} labels, found {}", labels.len())));
    }

    let edge_file = TextFile::open(dir, "edges.tsv")?;
    let mut neighbors = vec![Vec::new(); n];
    for (ln, line) in edge_file.lines() {
        let (a, b) = line
            .split_once('\t')
            .ok_or_else(|| edge_file.err(ln, format!("expected u<TAB>v, got {line:?}")))?;
        let u: usize = parse_num(&edge_file, ln, a, "node index")?;
        let v: usize = parse_num(&edge_file, ln, b, "node index")?;
        if u >= n || v >= n {
            return Err(edge_file.err(ln, format!("index out of range: ({u}, {v}) with n={n}")));
        }
        if u >= v {
            return Err(edge_file.err(ln, format!("asymmetric edge list: entry ({u}, {v}) must satisfy u < v")));
        }
        neighbors[u].push(v);
        neighbors[v].push(u);
    }
    for (i, list) in neighbors.iter_mut().enumerate() {
        list.sort_unstable();
        if let Some(w) = list.windows(2).find(|w| w[0] == w[1]) {
            return Err(edge_file.err(0, format!("duplicate edge ({}, {})", i.min(w[0]), i.max(w[0]))));
        }
    }

    let splits = Splits {
        train: read_index_file(dir, "train.idx", n)?,
        val: read_index_file(dir, "val.idx", n)?,
        test: read_index_file(dir, "test.idx", n)?,
    };
    Graph::from_neighbors(features, neighbors, labels, c, splits).map_err(|e| Error::data(dir, 0, e.to_string()))
}

/// Loads a dataset together with its `mask.tsv` (all known when absent).
pub fn load_incomplete(dir: &Path) -> Result<IncompleteGraph> {
    let graph = load_dataset(dir)?;
    let n = graph.num_nodes();
    if !dir.join("mask.tsv").exists() {
        return Ok(IncompleteGraph::complete(graph));
    }
    let file = TextFile::open(dir, "mask.tsv")?;
    let mut known = Vec::with_capacity(n);
    for (ln, line) in file.lines() {
        known.push(match line.trim() {
            "1" => true,
            "0" => false,
            other => return Err(file.err(ln, format!("mask entry must be 0 or 1, got {other:?}"))),
        });
    }
    if known.len() != n {
        return Err(file.err(0, format!("expected {n} mask lines, found {}", known.len())));
    }
    IncompleteGraph::new(graph, MaskMatrix::from_known(known))
}

fn write(dir: &Path, name: &str, body: String) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, body).map_err(|e| Error::io(path, e))
}

fn render_graph(g: &Graph, provenance: &[String]) -> Vec<(&'static str, String)> {
    let mut meta = String::new();
    for line in provenance {
        let _ = writeln!(meta, "# {line}");
    }
    let _ = write!(
        meta,
        "n={}\nf={}\nc={}\n",
        g.num_nodes(),
        g.feature_dim(),
        g.num_classes()
    );

    let mut edges = String::new();
    for (u, v) in g.edges() {
        let _ = writeln!(edges, "{u}\t{v}");
    }

    let mut features = String::new();
    for r in 0..g.num_nodes() {
        for (j, v) in g.features().row(r).iter().enumerate() {
            if j > 0 {
                features.push('\t');
            }
            // Display for f64 prints the shortest string that parses back
            // to the same bits.
            let _ = write!(features, "{v}");
        }
        features.push('\n');
    }

    let lines = |xs: &[usize]| {
        xs.iter().fold(String::new(), |mut s, x| {
            let _ = writeln!(s, "{x}");
            s
        })
    };
    vec![
        ("meta.txt", meta),
        ("edges.tsv", edges),
        ("features.tsv", features),
        ("labels.tsv", lines(g.labels())),
        ("train.idx", lines(&g.splits().train)),
        ("val.idx", lines(&g.splits().val)),
        ("test.idx", lines(&g.splits().test)),
    ]
}

/// Writes a complete dataset directory (no `mask.tsv`).
pub fn save_dataset(g: &Graph, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, body) in render_graph(g, &[]) {
        write(dir, name, body)?;
    }
    Ok(())
}

/// Writes an incomplete graph, always including `mask.tsv`. `provenance`
/// lines become `#` comments at the top of `meta.txt`.
pub fn save_incomplete(g: &IncompleteGraph, dir: &Path, provenance: &[String]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, body) in render_graph(g.graph(), provenance) {
        write(dir, name, body)?;
    }
    let mask: String = g
        .mask()
        .known()
        .iter()
        .map(|&k| if k { "1\n" } else { "0\n" })
        .collect();
    write(dir, "mask.tsv", mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphdata::{apply_feature_mask, fixtures};

    #[test]
    fn triangle_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let g = fixtures::triangle();
        save_dataset(&g, dir.path()).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back, g);
        assert_eq!(back.edge_count(), 3);
    }

    #[test]
    fn masked_roundtrip_keeps_mask() {
        let dir = tempfile::tempdir().unwrap();
        let ig = apply_feature_mask(&fixtures::triangle(), 0.5, 3).unwrap();
        save_incomplete(&ig, dir.path(), &["test".into()]).unwrap();
        let back = load_incomplete(dir.path()).unwrap();
        assert_eq!(back, ig);
    }

    #[test]
    fn awkward_floats_roundtrip_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let x = Tensor::from_rows(&[
            vec![0.1 + 0.2, -0.0, 1e-300],
            vec![f64::MAX, 1.0 / 3.0, 123_456_789.123_456_79],
        ]);
        let g = Graph::from_edges(x, &[(0, 1)], vec![0, 0], 1, Splits::default()).unwrap();
        save_dataset(&g, dir.path()).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        for (a, b) in back.features().data().iter().zip(g.features().data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn out_of_range_edge_reports_file_and_line() {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&fixtures::triangle(), dir.path()).unwrap();
        fs::write(dir.path().join("edges.tsv"), "0\t1\n0\t5\n").unwrap();
        let err = load_dataset(dir.path()).unwrap_err().to_string();
        assert!(err.contains("edges.tsv:2"), "{err}");
        assert!(err.contains("index out of range"), "{err}");
    }

    #[test]
    fn reversed_edge_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&fixtures::triangle(), dir.path()).unwrap();
        fs::write(dir.path().join("edges.tsv"), "1\t0\n").unwrap();
        let err = load_dataset(dir.path()).unwrap_err().to_string();
        assert!(err.contains("asymmetric"), "{err}");
    }

    #[test]
    fn label_out_of_range() {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&fixtures::triangle(), dir.path()).unwrap();
        fs::write(dir.path().join("labels.tsv"), "0\n1\n7\n").unwrap();
        let err = load_dataset(dir.path()).unwrap_err().to_string();
        assert!(err.contains("labels.tsv:3"), "{err}");
    }

    #[test]
    fn missing_file_is_named() {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&fixtures::triangle(), dir.path()).unwrap();
        fs::remove_file(dir.path().join("val.idx")).unwrap();
        let err = load_dataset(dir.path()).unwrap_err().to_string();
        assert!(err.contains("val.idx") && err.contains("missing file"), "{err}");
    }

    #[test]
    fn unwritable_target_is_an_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("plain-file");
        fs::write(&blocker, "x").unwrap();
        let err = save_dataset(&fixtures::triangle(), &blocker.join("sub")).unwrap_err();
        assert!(matches!(err, Error::Io { .. }), "{err}");
    }
}
