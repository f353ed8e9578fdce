//! Dataset parsing and the mapping of data coordinates onto the bin grid.
//!
//! Two CSV layouts are understood: long-format trajectories (`line_id,x,y`,
//! one vertex per row) and wide-format time series (one series per row, one
//! time step per column). Both parsers also accept the JSON document
//! `{ "lines": [ { "id": int, "points": [[x, y], ...] } ] }`.

use std::collections::HashMap;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl From<(f64, f64)> for Point {
    fn from((x, y): (f64, f64)) -> Self {
        Self { x, y }
    }
}

/// An ordered vertex chain with a dense line ID.
#[derive(Debug, Clone, PartialEq)]
pub struct Polyline {
    pub id: u32,
    pub vertices: Vec<Point>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub xmin: f64,
    pub ymin: f64,
    pub xmax: f64,
    pub ymax: f64,
}

impl BBox {
    pub const fn new(xmin: f64, ymin: f64, xmax: f64, ymax: f64) -> Self {
        Self { xmin, ymin, xmax, ymax }
    }

    pub fn width(&self) -> f64 {
        self.xmax - self.xmin
    }

    pub fn height(&self) -> f64 {
        self.ymax - self.ymin
    }

    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.xmin && p.x <= self.xmax && p.y >= self.ymin && p.y <= self.ymax
    }

    fn enclosing<'a>(points: impl IntoIterator<Item = &'a Point>) -> Option<Self> {
        let mut it = points.into_iter();
        let first = it.next()?;
        let mut bb = BBox::new(first.x, first.y, first.x, first.y);
        for p in it {
            bb.xmin = bb.xmin.min(p.x);
            bb.ymin = bb.ymin.min(p.y);
            bb.xmax = bb.xmax.max(p.x);
            bb.ymax = bb.ymax.max(p.y);
        }
        Some(bb)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LineKind {
    Timeseries,
    Trajectory,
}

/// The raw line population. Line `i` of `lines` always carries ID `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct LineSet {
    lines: Vec<Polyline>,
    bbox: BBox,
    kind: LineKind,
}

impl LineSet {
    /// Builds a line set from vertex chains, assigning IDs `0..N` in order and
    /// computing the enclosing box.
    pub fn from_vertices(chains: Vec<Vec<Point>>, kind: LineKind) -> Result<Self> {
        let bbox = BBox::enclosing(chains.iter().flatten()).ok_or(Error::EmptyInput)?;
        Self::with_bbox(chains, bbox, kind)
    }

    /// Like [`LineSet::from_vertices`] but with an explicit bounding box, which
    /// must enclose every vertex and have positive extent.
    pub fn with_bbox(chains: Vec<Vec<Point>>, bbox: BBox, kind: LineKind) -> Result<Self> {
        if chains.is_empty() {
            return Err(Error::EmptyInput);
        }
        if !(bbox.width() > 0.0 && bbox.height() > 0.0) {
            return Err(Error::DegenerateBounds { width: bbox.width(), height: bbox.height() });
        }
        let mut lines = Vec::with_capacity(chains.len());
        for (i, vertices) in chains.into_iter().enumerate() {
            if vertices.len() < 2 {
                return Err(Error::InvalidParameter(format!(
                    "polyline {i} has {} vertex; at least 2 are required",
                    vertices.len()
                )));
            }
            if let Some(p) = vertices.iter().find(|p| !p.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "polyline {i} has a non-finite vertex ({}, {})",
                    p.x, p.y
                )));
            }
            if let Some(p) = vertices.iter().find(|p| !bbox.contains(**p)) {
                return Err(Error::InvalidParameter(format!(
                    "vertex ({}, {}) of polyline {i} lies outside the bounding box",
                    p.x, p.y
                )));
            }
            lines.push(Polyline { id: i as u32, vertices });
        }
        Ok(Self { lines, bbox, kind })
    }

    pub fn lines(&self) -> &[Polyline] {
        &self.lines
    }

    pub fn len(&self) -> usize {
        self.lines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }

    pub fn bbox(&self) -> BBox {
        self.bbox
    }

    pub fn kind(&self) -> LineKind {
        self.kind
    }

    pub fn point_count(&self) -> usize {
        self.lines.iter().map(|l| l.vertices.len()).sum()
    }
}

/// A parsed dataset together with the original identifier of each dense ID.
#[derive(Debug, Clone)]
pub struct ParsedLines {
    pub lineset: LineSet,
    pub original_ids: Vec<String>,
}

#[derive(Deserialize)]
struct JsonDataset {
    lines: Vec<JsonLine>,
}

#[derive(Deserialize)]
struct JsonLine {
    id: i64,
    points: Vec<[f64; 2]>,
}

fn looks_like_json(text: &str) -> bool {
    text.trim_start().starts_with('{')
}

fn parse_json(text: &str, kind: LineKind) -> Result<ParsedLines> {
    let doc: JsonDataset = serde_json::from_str(text)?;
    let mut chains = Vec::with_capacity(doc.lines.len());
    let mut original_ids = Vec::with_capacity(doc.lines.len());
    let mut seen = HashMap::new();
    for line in doc.lines {
        if seen.insert(line.id, ()).is_some() {
            return Err(Error::InvalidParameter(format!("duplicate line id {}", line.id)));
        }
        if line.points.len() < 2 {
            warn!("line {} has fewer than 2 vertices; skipped", line.id);
            continue;
        }
        chains.push(line.points.iter().map(|&[x, y]| Point::new(x, y)).collect());
        original_ids.push(line.id.to_string());
    }
    finish(chains, original_ids, kind)
}

fn finish(chains: Vec<Vec<Point>>, original_ids: Vec<String>, kind: LineKind) -> Result<ParsedLines> {
    if chains.is_empty() {
        return Err(Error::EmptyInput);
    }
    let lineset = LineSet::from_vertices(chains, kind)?;
    Ok(ParsedLines { lineset, original_ids })
}

fn parse_coord(field: &str, line: usize, what: &str) -> Result<f64> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| Error::Malformed { line, message: format!("{what} {field:?} is not a number") })?;
    if !v.is_finite() {
        return Err(Error::Malformed { line, message: format!("{what} {field:?} is not finite") });
    }
    Ok(v)
}

/// Parses long-format trajectory CSV (`line_id,x,y`, optional header) or the
/// JSON dataset document.
///
/// Lines keep the order in which their IDs first appear. Lines with fewer than
/// two vertices are dropped with a warning; if nothing is left the input is
/// rejected.
pub fn parse_trajectories(text: &str) -> Result<ParsedLines> {
    if text.trim().is_empty() {
        return Err(Error::EmptyInput);
    }
    if looks_like_json(text) {
        return parse_json(text, LineKind::Trajectory);
    }
    let mut reader =
        csv::ReaderBuilder::new().has_headers(false).flexible(true).trim(csv::Trim::All).from_reader(text.as_bytes());

    let mut index: HashMap<String, usize> = HashMap::new();
    let mut chains: Vec<Vec<Point>> = Vec::new();
    let mut original_ids = Vec::new();
    let mut first = true;
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != 3 {
            return Err(Error::Malformed {
                line,
                message: format!("expected 3 fields (line_id,x,y), found {}", record.len()),
            });
        }
        if first {
            first = false;
            let numeric = record[1].parse::<f64>().is_ok() && record[2].parse::<f64>().is_ok();
            if !numeric {
                // header row
                continue;
            }
        }
        let id = &record[0];
        if id.is_empty() {
            return Err(Error::Malformed { line, message: "empty line_id".into() });
        }
        let p = Point::new(parse_coord(&record[1], line, "x")?, parse_coord(&record[2], line, "y")?);
        let slot = *index.entry(id.to_string()).or_insert_with(|| {
            chains.push(Vec::new());
            original_ids.push(id.to_string());
            chains.len() - 1
        });
        chains[slot].push(p);
    }
    if chains.is_empty() {
        return Err(Error::EmptyInput);
    }

    let (mut kept, mut kept_ids) = (Vec::new(), Vec::new());
    for (chain, id) in chains.into_iter().zip(original_ids) {
        if chain.len() < 2 {
            warn!("line {id} has a single vertex; skipped");
            continue;
        }
        kept.push(chain);
        kept_ids.push(id);
    }
    if kept.is_empty() {
        return Err(Error::InvalidParameter("every polyline has one vertex; at least 2 are required".into()));
    }
    finish(kept, kept_ids, LineKind::Trajectory)
}

/// Parses wide-format time-series CSV (one series per row; column `j` is time
/// step `j`) or the JSON dataset document.
///
/// Empty cells are missing samples and their vertex is omitted, so a series
/// keeps one ID no matter how many gaps it has. A first row made only of
/// non-numeric cells is taken as a header.
pub fn parse_timeseries(text: &str) -> Result<ParsedLines> {
    if text.trim().is_empty() {
        return Err(Error::EmptyInput);
    }
    if looks_like_json(text) {
        return parse_json(text, LineKind::Timeseries);
    }
    let mut reader =
        csv::ReaderBuilder::new().has_headers(false).flexible(true).trim(csv::Trim::All).from_reader(text.as_bytes());

    let mut chains = Vec::new();
    let mut original_ids = Vec::new();
    let mut row_index = 0usize;
    let mut first = true;
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if first {
            first = false;
            let is_header = record.iter().any(|c| !c.is_empty())
                && record.iter().filter(|c| !c.is_empty()).all(|c| c.parse::<f64>().is_err());
            if is_header {
                continue;
            }
        }
        let mut vertices = Vec::with_capacity(record.len());
        for (step, cell) in record.iter().enumerate() {
            if cell.is_empty() {
                continue;
            }
            let y = parse_coord(cell, line, &format!("cell in column {}", step + 1))?;
            vertices.push(Point::new(step as f64, y));
        }
        if vertices.is_empty() {
            return Err(Error::Malformed { line, message: "row has no values".into() });
        }
        let id = row_index.to_string();
        row_index += 1;
        if vertices.len() < 2 {
            warn!("series {id} has a single value; skipped");
            continue;
        }
        chains.push(vertices);
        original_ids.push(id);
    }
    if row_index == 0 {
        return Err(Error::EmptyInput);
    }
    if chains.is_empty() {
        return Err(Error::InvalidParameter("every series has one value; at least 2 are required".into()));
    }
    finish(chains, original_ids, LineKind::Timeseries)
}

/// Affine map from data units to bin units: `bin = data * scale + offset`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transform {
    pub scale_x: f64,
    pub scale_y: f64,
    pub offset_x: f64,
    pub offset_y: f64,
}

impl Transform {
    pub const IDENTITY: Transform = Transform { scale_x: 1.0, scale_y: 1.0, offset_x: 0.0, offset_y: 0.0 };

    pub fn apply(&self, p: Point) -> Point {
        Point::new(p.x * self.scale_x + self.offset_x, p.y * self.scale_y + self.offset_y)
    }
}

/// The bin grid. Bin `(col, row)` covers `[col, col+1) x [row, row+1)` in bin
/// units; row 0 is the bottom of the plot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub width: u32,
    pub height: u32,
    pub transform: Transform,
}

pub const MIN_GRID_SIDE: u32 = 8;

impl GridSpec {
    pub fn new(width: u32, height: u32, transform: Transform) -> Result<Self> {
        if width < MIN_GRID_SIDE || height < MIN_GRID_SIDE {
            return Err(Error::InvalidParameter(format!(
                "grid must be at least {MIN_GRID_SIDE}x{MIN_GRID_SIDE}, got {width}x{height}"
            )));
        }
        Ok(Self { width, height, transform })
    }

    pub fn bin_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn index(&self, col: u32, row: u32) -> usize {
        row as usize * self.width as usize + col as usize
    }

    pub fn col_row(&self, index: usize) -> (u32, u32) {
        ((index % self.width as usize) as u32, (index / self.width as usize) as u32)
    }

    pub fn center(&self, index: usize) -> Point {
        let (c, r) = self.col_row(index);
        Point::new(c as f64 + 0.5, r as f64 + 0.5)
    }
}

/// Fits a `width x height` grid over the line set's bounding box.
pub fn fit_grid(ls: &LineSet, width: u32, height: u32, preserve_aspect: bool) -> Result<GridSpec> {
    fit_bbox(ls.bbox(), width, height, preserve_aspect)
}

pub fn fit_bbox(bbox: BBox, width: u32, height: u32, preserve_aspect: bool) -> Result<GridSpec> {
    let (bw, bh) = (bbox.width(), bbox.height());
    if !(bw > 0.0 && bh > 0.0) {
        return Err(Error::DegenerateBounds { width: bw, height: bh });
    }
    let (w, h) = (width as f64, height as f64);
    let transform = if preserve_aspect {
        let s = (w / bw).min(h / bh);
        Transform {
            scale_x: s,
            scale_y: s,
            offset_x: (w - bw * s) / 2.0 - bbox.xmin * s,
            offset_y: (h - bh * s) / 2.0 - bbox.ymin * s,
        }
    } else {
        let (sx, sy) = (w / bw, h / bh);
        Transform { scale_x: sx, scale_y: sy, offset_x: -bbox.xmin * sx, offset_y: -bbox.ymin * sy }
    };
    GridSpec::new(width, height, transform)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_line_csv() {
        let parsed = parse_trajectories("0,0,0\n0,1,1\n1,0,1\n1,1,0").unwrap();
        let ls = &parsed.lineset;
        assert_eq!(ls.len(), 2);
        assert_eq!(ls.bbox(), BBox::new(0.0, 0.0, 1.0, 1.0));
        assert_eq!(ls.lines()[1].vertices, vec![Point::new(0.0, 1.0), Point::new(1.0, 0.0)]);
        assert_eq!(parsed.original_ids, vec!["0", "1"]);
    }

    #[test]
    fn header_and_sparse_ids_are_redensified() {
        let parsed = parse_trajectories("line_id,x,y\n17,0,0\n17,1,1\nabc,0,1\nabc,2,0\n").unwrap();
        let ids: Vec<u32> = parsed.lineset.lines().iter().map(|l| l.id).collect();
        assert_eq!(ids, vec![0, 1]);
        assert_eq!(parsed.original_ids, vec!["17", "abc"]);
    }

    #[test]
    fn single_vertex_rejected() {
        let err = parse_trajectories("0,0,0").unwrap_err();
        assert!(err.to_string().contains("one vertex"), "{err}");
    }

    #[test]
    fn short_lines_are_dropped() {
        let parsed = parse_trajectories("0,0,0\n1,0,0\n1,1,1\n").unwrap();
        assert_eq!(parsed.lineset.len(), 1);
        assert_eq!(parsed.original_ids, vec!["1"]);
    }

    #[test]
    fn malformed_row_reports_line() {
        match parse_trajectories("0,0,0\n0,1,1\n0,x,2\n").unwrap_err() {
            Error::Malformed { line, .. } => assert_eq!(line, 3),
            e => panic!("unexpected {e}"),
        }
        match parse_trajectories("0,0,0\n0,1\n").unwrap_err() {
            Error::Malformed { line, .. } => assert_eq!(line, 2),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn empty_input() {
        assert!(matches!(parse_trajectories("  \n"), Err(Error::EmptyInput)));
        assert!(matches!(parse_timeseries(""), Err(Error::EmptyInput)));
    }

    #[test]
    fn timeseries_rows() {
        let ls = parse_timeseries("1,2,3").unwrap().lineset;
        assert_eq!(ls.lines()[0].vertices, vec![Point::new(0.0, 1.0), Point::new(1.0, 2.0), Point::new(2.0, 3.0)]);
        assert_eq!(ls.kind(), LineKind::Timeseries);
    }

    #[test]
    fn timeseries_gap_is_omitted() {
        let ls = parse_timeseries("1,,3").unwrap().lineset;
        assert_eq!(ls.lines()[0].vertices, vec![Point::new(0.0, 1.0), Point::new(2.0, 3.0)]);
        // Longer gaps also keep one line per series.
        let ls = parse_timeseries("1,,,,5,6\n2,3,4,5,6,7").unwrap().lineset;
        assert_eq!(ls.len(), 2);
        assert_eq!(ls.lines()[0].vertices.len(), 3);
    }

    #[test]
    fn timeseries_errors() {
        assert!(matches!(parse_timeseries("1,2\n3,abc\n"), Err(Error::Malformed { line: 2, .. })));
        assert!(matches!(parse_timeseries("1,2\n,,\n"), Err(Error::Malformed { line: 2, .. })));
    }

    #[test]
    fn timeseries_header_row() {
        let parsed = parse_timeseries("t0,t1,t2\n1,2,3\n4,5,6\n").unwrap();
        assert_eq!(parsed.lineset.len(), 2);
    }

    #[test]
    fn json_accepted_by_both_parsers() {
        let doc = r#"{ "lines": [ { "id": 5, "points": [[0,0],[1,2]] }, { "id": 9, "points": [[1,1],[2,0]] } ] }"#;
        for parsed in [parse_trajectories(doc).unwrap(), parse_timeseries(doc).unwrap()] {
            assert_eq!(parsed.lineset.len(), 2);
            assert_eq!(parsed.original_ids, vec!["5", "9"]);
            assert_eq!(parsed.lineset.bbox(), BBox::new(0.0, 0.0, 2.0, 2.0));
        }
    }

    #[test]
    fn fit_grid_examples() {
        let unit = LineSet::from_vertices(vec![vec![Point::new(0.0, 0.0), Point::new(1.0, 1.0)]], LineKind::Trajectory)
            .unwrap();
        let g = fit_grid(&unit, 100, 100, false).unwrap();
        assert_eq!(g.transform, Transform { scale_x: 100.0, scale_y: 100.0, offset_x: 0.0, offset_y: 0.0 });

        let wide = fit_bbox(BBox::new(0.0, 0.0, 2.0, 1.0), 100, 100, true).unwrap();
        assert_eq!(wide.transform.scale_x, 50.0);
        assert_eq!(wide.transform.scale_y, 50.0);
        assert_eq!(wide.transform.offset_x, 0.0);
        assert_eq!(wide.transform.offset_y, 25.0);

        let centered = fit_bbox(BBox::new(-5.0, -5.0, 5.0, 5.0), 64, 64, false).unwrap();
        assert!((centered.transform.scale_x - 6.4).abs() < 1e-12);
        assert!((centered.transform.scale_y - 6.4).abs() < 1e-12);
    }

    #[test]
    fn fit_grid_rejects_degenerate() {
        assert!(matches!(fit_bbox(BBox::new(0.0, 1.0, 5.0, 1.0), 64, 64, false), Err(Error::DegenerateBounds { .. })));
        assert!(fit_bbox(BBox::new(0.0, 0.0, 1.0, 1.0), 4, 64, false).is_err());
    }
}
