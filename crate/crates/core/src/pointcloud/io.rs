//! ASCII OFF meshes and XYZ point lists.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{PointCloud, TriMesh};
use crate::error::{Error, Result};
use crate::vec3::Vec3;

/// Non-empty, comment-stripped lines with their 1-based line numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().filter_map(|(i, line)| {
        let line = line.split('#').next().unwrap_or("").trim();
        (!line.is_empty()).then_some((i + 1, line))
    })
}

struct Cursor<'a, I: Iterator<Item = (usize, &'a str)>> {
    lines: I,
    source: &'a str,
    last_line: usize,
}

impl<'a, I: Iterator<Item = (usize, &'a str)>> Cursor<'a, I> {
    fn err(&self, line: usize, msg: impl Into<String>) -> Error {
        Error::Parse {
            source_name: self.source.to_string(),
            line,
            msg: msg.into(),
        }
    }

    fn next_line(&mut self, what: &str) -> Result<(usize, &'a str)> {
        match self.lines.next() {
            Some((n, l)) => {
                self.last_line = n;
                Ok((n, l))
            }
            None => Err(self.err(
                self.last_line + 1,
                format!("unexpected end of file, expected {what}"),
            )),
        }
    }

    fn parse<T: std::str::FromStr>(&self, line: usize, tok: &str, what: &str) -> Result<T> {
        tok.parse()
            .map_err(|_| self.err(line, format!("expected {what}, found `{tok}`")))
    }
}

/// Parses an ASCII OFF mesh; polygons are fan-triangulated.
///
/// Accepts counts on the header line (`OFF 8 6 0`), on the following line,
/// or glued to the keyword (`OFF8 6 0`).
pub fn parse_off(text: &str, source: &str) -> Result<TriMesh> {
    let mut cur = Cursor {
        lines: content_lines(text),
        source,
        last_line: 0,
    };
    let (hline, header) = cur.next_line("OFF header")?;
    let rest = header
        .strip_prefix("OFF")
        .ok_or_else(|| cur.err(hline, format!("missing OFF header, found `{header}`")))?;
    let rest = rest.trim();
    let (cline, counts) = if rest.is_empty() {
        cur.next_line("vertex/face counts")?
    } else {
        (hline, rest)
    };
    let toks: Vec<&str> = counts.split_whitespace().collect();
    if toks.len() < 2 {
        return Err(cur.err(cline, "expected vertex and face counts"));
    }
    let nv: usize = cur.parse(cline, toks[0], "vertex count")?;
    let nf: usize = cur.parse(cline, toks[1], "face count")?;

    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (n, line) = cur.next_line("vertex")?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() < 3 {
            return Err(cur.err(n, "vertex needs three coordinates"));
        }
        let mut v = [0.0; 3];
        for (c, tok) in v.iter_mut().zip(&toks) {
            *c = cur.parse::<f64>(n, tok, "coordinate")?;
            if !c.is_finite() {
                return Err(cur.err(n, "non-finite coordinate"));
            }
        }
        vertices.push(v);
    }

    let mut faces = Vec::with_capacity(nf);
    for _ in 0..nf {
        let (n, line) = cur.next_line("face")?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        let count: usize = cur.parse(n, toks[0], "face vertex count")?;
        if count < 3 {
            return Err(cur.err(n, format!("face with {count} vertices")));
        }
        if toks.len() < count + 1 {
            return Err(cur.err(n, format!("face lists fewer than {count} indices")));
        }
        let mut idx = Vec::with_capacity(count);
        for tok in &toks[1..=count] {
            let i: usize = cur.parse(n, tok, "vertex index")?;
            if i >= nv {
                return Err(cur.err(
                    n,
                    format!("vertex index {i} out of range for {nv} vertices"),
                ));
            }
            idx.push(i);
        }
        for w in 1..count - 1 {
            faces.push([idx[0], idx[w], idx[w + 1]]);
        }
    }
    TriMesh::new(vertices, faces)
}

pub fn load_off(path: &Path) -> Result<TriMesh> {
    let text = fs::read_to_string(path).map_err(Error::io(path))?;
    parse_off(&text, &path.display().to_string())
}

/// Parses `x y z [part_label]` lines. Labels must be on all lines or none.
pub fn parse_xyz(text: &str, source: &str) -> Result<PointCloud> {
    let err = |line: usize, msg: String| Error::Parse {
        source_name: source.to_string(),
        line,
        msg,
    };
    let mut points = Vec::new();
    let mut labels = Vec::new();
    let mut labelled: Option<bool> = None;
    for (n, line) in content_lines(text) {
        let toks: Vec<&str> = line.split_whitespace().collect();
        if !(3..=4).contains(&toks.len()) {
            return Err(err(n, format!("expected 3 or 4 fields, found {}", toks.len())));
        }
        let mut p: Vec3 = [0.0; 3];
        for (c, tok) in p.iter_mut().zip(&toks) {
            *c = tok
                .parse()
                .map_err(|_| err(n, format!("expected coordinate, found `{tok}`")))?;
        }
        let has_label = toks.len() == 4;
        if *labelled.get_or_insert(has_label) != has_label {
            return Err(err(n, "part labels must be given on every line or none".into()));
        }
        if has_label {
            labels.push(
                toks[3]
                    .parse()
                    .map_err(|_| err(n, format!("expected part label, found `{}`", toks[3])))?,
            );
        }
        points.push(p);
    }
    let cloud = PointCloud::new(points)?;
    if labelled == Some(true) {
        cloud.with_part_labels(labels)
    } else {
        Ok(cloud)
    }
}

pub fn load_xyz(path: &Path) -> Result<PointCloud> {
    let text = fs::read_to_string(path).map_err(Error::io(path))?;
    parse_xyz(&text, &path.display().to_string())
}

pub fn write_xyz(cloud: &PointCloud, path: &Path) -> Result<()> {
    let mut out = String::new();
    for (i, p) in cloud.points().iter().enumerate() {
        let _ = write!(out, "{} {} {}", p[0], p[1], p[2]);
        if let Some(labels) = cloud.part_labels() {
            let _ = write!(out, " {}", labels[i]);
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(Error::io(path))
}
