//! Plain-text task directory format.
//!
//! ```text
//! task_dir/
//!   meta.tsv        num_nodes <n> / feature_dim <D> / num_classes <C>
//!   edges.tsv       u<TAB>v per line, 0-based
//!   features.tsv    n lines of D tab-separated floats
//!   labels.tsv      n lines, class index or -1
//!   splits.tsv      n lines, train|val|test|none
//!   edge_relations.tsv   optional, generating relation per edge line
//! ```
//!
//! A sequence directory holds `task_000`, `task_001`, ... and a
//! `manifest.tsv` listing them in order.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{Csr, SplitKind, Splits, TaskGraph, TaskSequence};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MANIFEST_FILE: &str = "manifest.tsv";

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Non-empty lines with their 1-based line numbers.
fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty())
}

struct Meta {
    num_nodes: usize,
    feature_dim: usize,
    num_classes: usize,
}

fn parse_meta(path: &Path) -> Result<Meta> {
    let text = read(path)?;
    let (mut n, mut d, mut c) = (None, None, None);
    for (line, l) in lines(&text) {
        let mut parts = l.split_whitespace();
        let (Some(key), Some(val), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(Error::data(path, line, "expected `<key> <value>`"));
        };
        let val: usize = val
            .parse()
            .map_err(|_| Error::data(path, line, format!("`{val}` is not a count")))?;
        match key {
            "num_nodes" => n = Some(val),
            "feature_dim" => d = Some(val),
            "num_classes" => c = Some(val),
            other => return Err(Error::data(path, line, format!("unknown key `{other}`"))),
        }
    }
    let missing = |k: &str| Error::data(path, 0, format!("missing `{k}`"));
    Ok(Meta {
        num_nodes: n.ok_or_else(|| missing("num_nodes"))?,
        feature_dim: d.ok_or_else(|| missing("feature_dim"))?,
        num_classes: c.ok_or_else(|| missing("num_classes"))?,
    })
}

fn expect_rows(path: &Path, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::data(path, got, format!("{got} rows, expected {want}")));
    }
    Ok(())
}

/// Reads one task directory and builds its CSR adjacency.
pub fn load_task_dir(dir: &Path) -> Result<TaskGraph> {
    let meta = parse_meta(&dir.join("meta.tsv"))?;
    let n = meta.num_nodes;

    let path = dir.join("edges.tsv");
    let text = read(&path)?;
    let mut edges = Vec::new();
    let mut seen = HashSet::new();
    for (line, l) in lines(&text) {
        let mut parts = l.split('\t');
        let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(Error::data(&path, line, "expected `u<TAB>v`"));
        };
        let parse = |s: &str| -> Result<usize> {
            let u: usize = s
                .trim()
                .parse()
                .map_err(|_| Error::data(&path, line, format!("`{s}` is not a node index")))?;
            if u >= n {
                return Err(Error::data(&path, line, format!("node index {u} out of range for {n} nodes")));
            }
            Ok(u)
        };
        let (u, v) = (parse(a)?, parse(b)?);
        if !seen.insert((u.min(v), u.max(v))) {
            return Err(Error::data(&path, line, format!("duplicate edge ({u}, {v})")));
        }
        edges.push((u, v));
    }

    let path = dir.join("features.tsv");
    let text = read(&path)?;
    let mut data = Vec::with_capacity(n * meta.feature_dim);
    let mut rows = 0;
    for (line, l) in lines(&text) {
        let before = data.len();
        for tok in l.split('\t') {
            let v: f64 = tok
                .trim()
                .parse()
                .map_err(|_| Error::data(&path, line, format!("`{tok}` is not a number")))?;
            if !v.is_finite() {
                return Err(Error::data(&path, line, "non-finite feature"));
            }
            data.push(v);
        }
        if data.len() - before != meta.feature_dim {
            return Err(Error::data(
                &path,
                line,
                format!("{} values, expected {}", data.len() - before, meta.feature_dim),
            ));
        }
        rows += 1;
    }
    expect_rows(&path, rows, n)?;
    let features = Tensor::matrix(n, meta.feature_dim, data)?;

    let path = dir.join("labels.tsv");
    let text = read(&path)?;
    let mut labels = Vec::with_capacity(n);
    for (line, l) in lines(&text) {
        let v: i64 = l
            .trim()
            .parse()
            .map_err(|_| Error::data(&path, line, format!("`{l}` is not a label")))?;
        labels.push(match v {
            -1 => None,
            v if v >= 0 && (v as usize) < meta.num_classes => Some(v as usize),
            v => return Err(Error::data(&path, line, format!("label {v} outside [0, {})", meta.num_classes))),
        });
    }
    expect_rows(&path, labels.len(), n)?;

    let path = dir.join("splits.tsv");
    let text = read(&path)?;
    let mut kinds = Vec::with_capacity(n);
    for (line, l) in lines(&text) {
        let kind = SplitKind::parse(l.trim())
            .ok_or_else(|| Error::data(&path, line, format!("unknown split `{l}`")))?;
        if kind == SplitKind::Train && labels.get(kinds.len()).copied().flatten().is_none() {
            return Err(Error::data(&path, line, "train node has no label"));
        }
        kinds.push(kind);
    }
    expect_rows(&path, kinds.len(), n)?;

    let edge_relations = {
        let path = dir.join("edge_relations.tsv");
        if path.exists() {
            let text = read(&path)?;
            let mut rel = Vec::new();
            for (line, l) in lines(&text) {
                rel.push(
                    l.trim()
                        .parse()
                        .map_err(|_| Error::data(&path, line, "bad relation id"))?,
                );
            }
            expect_rows(&path, rel.len(), edges.len())?;
            Some(rel)
        } else {
            None
        }
    };

    let csr = Csr::build(&edges, n)?;
    let task = TaskGraph {
        features,
        edges,
        csr,
        labels,
        splits: Splits::from_kinds(kinds),
        num_classes: meta.num_classes,
        edge_relations,
    };
    task.validate()?;
    Ok(task)
}

/// Writes a task directory. Floats use the shortest round-trip decimal form.
pub fn write_task_dir(task: &TaskGraph, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let n = task.num_nodes();
    write(
        &dir.join("meta.tsv"),
        &format!(
            "num_nodes\t{n}\nfeature_dim\t{}\nnum_classes\t{}\n",
            task.feature_dim(),
            task.num_classes
        ),
    )?;

    let mut s = String::new();
    for &(u, v) in &task.edges {
        writeln!(s, "{u}\t{v}").unwrap();
    }
    write(&dir.join("edges.tsv"), &s)?;

    let mut s = String::new();
    for u in 0..n {
        let row: Vec<String> = task.features.row(u).iter().map(|v| format!("{v:?}")).collect();
        s.push_str(&row.join("\t"));
        s.push('\n');
    }
    write(&dir.join("features.tsv"), &s)?;

    let mut s = String::new();
    for y in &task.labels {
        match y {
            Some(y) => writeln!(s, "{y}").unwrap(),
            None => s.push_str("-1\n"),
        }
    }
    write(&dir.join("labels.tsv"), &s)?;

    let mut s = String::new();
    for k in task.splits.kinds() {
        s.push_str(k.as_str());
        s.push('\n');
    }
    write(&dir.join("splits.tsv"), &s)?;

    if let Some(rel) = &task.edge_relations {
        let mut s = String::new();
        for r in rel {
            writeln!(s, "{r}").unwrap();
        }
        write(&dir.join("edge_relations.tsv"), &s)?;
    }
    Ok(())
}

pub fn task_dir_name(t: usize) -> String {
    format!("task_{t:03}")
}

/// Writes every task plus the manifest. `notes` become `#` comment lines
/// at the top of the manifest.
pub fn write_sequence(seq: &TaskSequence, dir: &Path, notes: &[String]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = String::new();
    for note in notes {
        writeln!(manifest, "# {note}").unwrap();
    }
    for (t, task) in seq.tasks().iter().enumerate() {
        let name = task_dir_name(t);
        write_task_dir(task, &dir.join(&name))?;
        manifest.push_str(&name);
        manifest.push('\n');
    }
    write(&dir.join(MANIFEST_FILE), &manifest)
}

/// Loads the tasks listed in `manifest.tsv`, in manifest order.
pub fn load_sequence(dir: &Path) -> Result<TaskSequence> {
    let path = dir.join(MANIFEST_FILE);
    let text = read(&path)?;
    let mut tasks = Vec::new();
    for (line, l) in lines(&text).filter(|(_, l)| !l.starts_with('#')) {
        let sub: PathBuf = dir.join(l.trim());
        if !sub.is_dir() {
            return Err(Error::data(&path, line, format!("no task directory `{l}`")));
        }
        tasks.push(load_task_dir(&sub)?);
    }
    if tasks.is_empty() {
        return Err(Error::data(&path, 0, "manifest lists no tasks"));
    }
    TaskSequence::new(tasks)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_files(dir: &Path, files: &[(&str, &str)]) {
        for (name, body) in files {
            fs::write(dir.join(name), body).unwrap();
        }
    }

    fn minimal(dir: &Path) {
        write_files(
            dir,
            &[
                ("meta.tsv", "num_nodes 2\nfeature_dim 1\nnum_classes 2\n"),
                ("edges.tsv", "0\t1\n"),
                ("features.tsv", "0.5\n-1.25\n"),
                ("labels.tsv", "0\n1\n"),
                ("splits.tsv", "train\ntest\n"),
            ],
        );
    }

    #[test]
    fn loads_minimal_task() {
        let tmp = tempfile::tempdir().unwrap();
        minimal(tmp.path());
        let t = load_task_dir(tmp.path()).unwrap();
        assert_eq!(t.csr.offsets(), &[0, 2, 4]);
        assert_eq!(t.labels, vec![Some(0), Some(1)]);
        assert_eq!(t.splits.kind(1), SplitKind::Test);
    }

    #[test]
    fn out_of_range_edge_names_file_and_line() {
        let tmp = tempfile::tempdir().unwrap();
        minimal(tmp.path());
        write_files(
            tmp.path(),
            &[
                ("meta.tsv", "num_nodes 3\nfeature_dim 1\nnum_classes 2\n"),
                ("edges.tsv", "0\t1\n5\t1\n"),
                ("features.tsv", "0\n0\n0\n"),
                ("labels.tsv", "0\n1\n-1\n"),
                ("splits.tsv", "train\ntest\nnone\n"),
            ],
        );
        let err = load_task_dir(tmp.path()).unwrap_err();
        match &err {
            Error::Data { file, line, msg } => {
                assert!(file.ends_with("edges.tsv"));
                assert_eq!(*line, 2);
                assert!(msg.contains("out of range"), "{msg}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_edge_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        minimal(tmp.path());
        write_files(tmp.path(), &[("edges.tsv", "0\t1\n1\t0\n")]);
        assert!(matches!(load_task_dir(tmp.path()), Err(Error::Data { line: 2, .. })));
    }

    #[test]
    fn missing_file_is_an_error() {
        let tmp = tempfile::tempdir().unwrap();
        minimal(tmp.path());
        fs::remove_file(tmp.path().join("labels.tsv")).unwrap();
        assert!(matches!(load_task_dir(tmp.path()), Err(Error::Io { .. })));
    }

    #[test]
    fn unlabeled_train_node_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        minimal(tmp.path());
        write_files(tmp.path(), &[("labels.tsv", "-1\n1\n")]);
        assert!(matches!(load_task_dir(tmp.path()), Err(Error::Data { line: 1, .. })));
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let tmp = tempfile::tempdir().unwrap();
        let vals = [0.1, -1e-300, std::f64::consts::PI, 12345.678901234567, -0.0, 5e300];
        let features = Tensor::matrix(3, 2, vals.to_vec()).unwrap();
        let splits = Splits::from_kinds(vec![SplitKind::Train, SplitKind::Val, SplitKind::Test]);
        let mut task = TaskGraph::new(features, vec![(0, 2), (1, 1)], vec![Some(1), None, Some(0)], splits, 2)
            .unwrap();
        task.edge_relations = Some(vec![3, 0]);
        write_task_dir(&task, tmp.path()).unwrap();
        let back = load_task_dir(tmp.path()).unwrap();
        assert_eq!(back.features.to_le_bytes(), task.features.to_le_bytes());
        assert_eq!(back.edges, task.edges);
        assert_eq!(back.labels, task.labels);
        assert_eq!(back.splits, task.splits);
        assert_eq!(back.edge_relations, task.edge_relations);
    }
}
