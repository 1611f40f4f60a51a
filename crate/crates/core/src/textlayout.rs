//! OCR post-processing: resize geometry, group recognized words into lines
//! and paragraphs, and rasterize text masks.
//!
//! Grouping works on the axis-aligned bounding box of each word quad. Every
//! threshold is relative to a median word or line height, so grouping does
//! not change under translation or uniform scaling of the input.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{OcrDoc, Point, Quad, Rect, WordBox};

pub const DEFAULT_DOWNSAMPLE_TARGET: u32 = 384;
pub const DEFAULT_MASK_DILATION_PX: u32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LayoutParams {
    /// Fraction of the shorter box height two words must overlap vertically
    /// to share a line.
    pub line_overlap_min: f64,
    /// Largest horizontal gap between line neighbours, in median word heights.
    pub word_gap_factor: f64,
    /// Largest vertical gap between lines of one paragraph, in median line heights.
    pub para_gap_factor: f64,
    /// Words below this confidence are ignored.
    pub min_confidence: f64,
}

impl Default for LayoutParams {
    fn default() -> Self {
        LayoutParams {
            line_overlap_min: 0.5,
            word_gap_factor: 1.5,
            para_gap_factor: 1.5,
            min_confidence: 0.0,
        }
    }
}

impl LayoutParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.line_overlap_min > 0.0 && self.line_overlap_min <= 1.0) {
            return Err(Error::validation("line_overlap_min must lie in (0,1]"));
        }
        for (name, v) in [
            ("word_gap_factor", self.word_gap_factor),
            ("para_gap_factor", self.para_gap_factor),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::validation(format!("{name} must be positive and finite")));
            }
        }
        if !(0.0..=1.0).contains(&self.min_confidence) {
            return Err(Error::validation("min_confidence must lie in [0,1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Paragraph {
    /// Words joined by single spaces, lines joined by `\n`.
    pub text: String,
    pub bbox: Rect,
    pub line_count: usize,
    pub word_count: usize,
}

/// Shrinks so the short edge equals `target` when it is strictly longer,
/// rounding to the nearest pixel (halves round up).
pub fn downsample_dims(w: u32, h: u32, target: u32) -> (u32, u32) {
    let short = w.min(h);
    if short <= target {
        return (w, h);
    }
    let scale = |v: u32| -> u32 {
        let num = v as u64 * target as u64;
        let q = (num + short as u64 / 2) / short as u64;
        q.max(1) as u32
    };
    (scale(w), scale(h))
}

/// Multiplies every quad coordinate; the OCR canvas size scales with it.
pub fn scale_boxes(doc: &OcrDoc, sx: f32, sy: f32) -> Result<OcrDoc> {
    if !(sx > 0.0 && sx.is_finite() && sy > 0.0 && sy.is_finite()) {
        return Err(Error::validation(format!(
            "scale factors must be positive, got ({sx}, {sy})"
        )));
    }
    let scale_dim = |v: u32, s: f32| ((v as f64 * s as f64).round() as u32).max(1);
    Ok(OcrDoc {
        image_id: doc.image_id.clone(),
        engine: doc.engine,
        ocr_width_px: scale_dim(doc.ocr_width_px, sx),
        ocr_height_px: scale_dim(doc.ocr_height_px, sy),
        words: doc
            .words
            .iter()
            .map(|w| WordBox {
                quad: w.quad.scaled(sx, sy),
                ..w.clone()
            })
            .collect(),
    })
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n == 0 {
        return 0.0;
    }
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

struct DisjointSet {
    parent: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        DisjointSet {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // smaller root wins so group identity is order-independent
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }

    fn groups(&mut self) -> Vec<Vec<usize>> {
        let n = self.parent.len();
        let mut by_root: Vec<Vec<usize>> = vec![Vec::new(); n];
        for i in 0..n {
            let r = self.find(i);
            by_root[r].push(i);
        }
        by_root.into_iter().filter(|g| !g.is_empty()).collect()
    }
}

fn vertical_overlap(a: &Rect, b: &Rect) -> f64 {
    (a.bottom.min(b.bottom) - a.top.max(b.top)).max(0.0)
}

fn horizontal_gap(a: &Rect, b: &Rect) -> f64 {
    (a.left.max(b.left) - a.right.min(b.right)).max(0.0)
}

fn vertical_gap(a: &Rect, b: &Rect) -> f64 {
    (a.top.max(b.top) - a.bottom.min(b.bottom)).max(0.0)
}

fn spans_overlap_horizontally(a: &Rect, b: &Rect) -> bool {
    a.left.max(b.left) < a.right.min(b.right)
}

struct Line {
    words: Vec<usize>,
    bbox: Rect,
}

fn union_all(rects: impl Iterator<Item = Rect>) -> Rect {
    rects.reduce(|a, b| a.union(&b)).expect("group is non-empty")
}

/// Groups words into lines, lines into paragraphs, and orders paragraphs top
/// to bottom (left to right on ties).
///
/// Two words share a line when their vertical overlap is at least
/// `line_overlap_min` of the shorter height and their horizontal gap is at
/// most `word_gap_factor` median word heights. Two lines share a paragraph
/// when they overlap horizontally and their vertical gap is at most
/// `para_gap_factor` median line heights. Both relations are closed
/// transitively.
pub fn merge_words(words: &[WordBox], p: &LayoutParams) -> Vec<Paragraph> {
    let words: Vec<&WordBox> = words
        .iter()
        .filter(|w| w.confidence as f64 >= p.min_confidence)
        .collect();
    if words.is_empty() {
        return Vec::new();
    }
    let boxes: Vec<Rect> = words.iter().map(|w| w.quad.bbox()).collect();
    let median_word_h = median(&mut boxes.iter().map(Rect::height).collect::<Vec<_>>());
    let max_word_gap = p.word_gap_factor * median_word_h;

    let mut ds = DisjointSet::new(words.len());
    for i in 0..words.len() {
        for j in (i + 1)..words.len() {
            let (a, b) = (&boxes[i], &boxes[j]);
            let min_h = a.height().min(b.height());
            if vertical_overlap(a, b) >= p.line_overlap_min * min_h && horizontal_gap(a, b) <= max_word_gap {
                ds.union(i, j);
            }
        }
    }
    let mut lines: Vec<Line> = ds
        .groups()
        .into_iter()
        .map(|mut g| {
            g.sort_by(|&a, &b| {
                boxes[a]
                    .left
                    .total_cmp(&boxes[b].left)
                    .then(boxes[a].top.total_cmp(&boxes[b].top))
                    .then(a.cmp(&b))
            });
            let bbox = union_all(g.iter().map(|&i| boxes[i]));
            Line { words: g, bbox }
        })
        .collect();
    lines.sort_by(|a, b| reading_order(&a.bbox, &b.bbox).then(a.words[0].cmp(&b.words[0])));

    let median_line_h = median(&mut lines.iter().map(|l| l.bbox.height()).collect::<Vec<_>>());
    let max_line_gap = p.para_gap_factor * median_line_h;
    let mut ds = DisjointSet::new(lines.len());
    for i in 0..lines.len() {
        for j in (i + 1)..lines.len() {
            let (a, b) = (&lines[i].bbox, &lines[j].bbox);
            if spans_overlap_horizontally(a, b) && vertical_gap(a, b) <= max_line_gap {
                ds.union(i, j);
            }
        }
    }

    let mut paragraphs: Vec<(usize, Paragraph)> = ds
        .groups()
        .into_iter()
        .map(|group| {
            // `lines` is already in reading order and groups keep index order
            let text = group
                .iter()
                .map(|&li| {
                    lines[li]
                        .words
                        .iter()
                        .map(|&wi| words[wi].text.as_str())
                        .collect::<Vec<_>>()
                        .join(" ")
                })
                .collect::<Vec<_>>()
                .join("\n");
            let bbox = union_all(group.iter().map(|&li| lines[li].bbox));
            let word_count = group.iter().map(|&li| lines[li].words.len()).sum();
            (
                group[0],
                Paragraph {
                    text,
                    bbox,
                    line_count: group.len(),
                    word_count,
                },
            )
        })
        .collect();
    paragraphs.sort_by(|a, b| reading_order(&a.1.bbox, &b.1.bbox).then(a.0.cmp(&b.0)));
    paragraphs.into_iter().map(|(_, p)| p).collect()
}

fn reading_order(a: &Rect, b: &Rect) -> std::cmp::Ordering {
    a.top.total_cmp(&b.top).then(a.left.total_cmp(&b.left))
}

/// Paragraph texts joined by a blank line.
pub fn concat_paragraphs(ps: &[Paragraph]) -> String {
    ps.iter().map(|p| p.text.as_str()).collect::<Vec<_>>().join("\n\n")
}

/// One bit per pixel, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bitmap {
    pub width: u32,
    pub height: u32,
    bits: Vec<bool>,
}

impl Bitmap {
    pub fn new(width: u32, height: u32) -> Self {
        Bitmap {
            width,
            height,
            bits: vec![false; width as usize * height as usize],
        }
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize]
    }

    fn set(&mut self, x: u32, y: u32) {
        self.bits[y as usize * self.width as usize + x as usize] = true;
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Fraction of set pixels.
    pub fn coverage(&self) -> f64 {
        if self.bits.is_empty() {
            return 0.0;
        }
        self.count_ones() as f64 / self.bits.len() as f64
    }

    /// Binary PBM (P4): rows padded to whole bytes, most significant bit
    /// first, 1 = set.
    pub fn to_pbm(&self) -> Vec<u8> {
        let mut out = format!("P4\n{} {}\n", self.width, self.height).into_bytes();
        let row_bytes = (self.width as usize).div_ceil(8);
        for y in 0..self.height {
            let mut row = vec![0u8; row_bytes];
            for x in 0..self.width {
                if self.get(x, y) {
                    row[x as usize / 8] |= 0x80 >> (x % 8);
                }
            }
            out.extend_from_slice(&row);
        }
        out
    }

    pub fn from_pbm(bytes: &[u8]) -> Result<Bitmap> {
        let mut fields = Vec::new();
        let mut pos = 0;
        while fields.len() < 3 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(Error::Format("PBM header is incomplete".into()));
            }
            fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
        }
        pos += 1;
        if fields[0] != "P4" {
            return Err(Error::Format(format!("not a P4 bitmap: {}", fields[0])));
        }
        let parse = |s: &str| {
            s.parse::<u32>()
                .map_err(|_| Error::Format(format!("bad PBM size {s:?}")))
        };
        let (w, h) = (parse(&fields[1])?, parse(&fields[2])?);
        let row_bytes = (w as usize).div_ceil(8);
        let need = row_bytes * h as usize;
        let data = bytes.get(pos..pos + need).ok_or(Error::Truncated {
            expected: need as u64,
            actual: bytes.len().saturating_sub(pos) as u64,
        })?;
        let mut bm = Bitmap::new(w, h);
        for y in 0..h {
            for x in 0..w {
                if data[y as usize * row_bytes + x as usize / 8] & (0x80 >> (x % 8)) != 0 {
                    bm.set(x, y);
                }
            }
        }
        Ok(bm)
    }
}

fn cross(o: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Andrew's monotone chain; counter-clockwise in a y-up frame.
fn convex_hull(mut pts: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut lower: Vec<(f64, f64)> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<(f64, f64)> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

fn inside_convex(hull: &[(f64, f64)], p: (f64, f64)) -> bool {
    match hull.len() {
        0 => false,
        1 => hull[0] == p,
        2 => {
            let (a, b) = (hull[0], hull[1]);
            cross(a, b, p) == 0.0
                && p.0 >= a.0.min(b.0)
                && p.0 <= a.0.max(b.0)
                && p.1 >= a.1.min(b.1)
                && p.1 <= a.1.max(b.1)
        }
        n => (0..n).all(|i| cross(hull[i], hull[(i + 1) % n], p) >= 0.0),
    }
}

/// Sets every pixel whose centre lies in some quad grown by `dilation_px` in
/// the Chebyshev metric. Quads are treated as their convex hull and clipped
/// to the canvas.
pub fn render_text_mask(w: u32, h: u32, quads: &[Quad], dilation_px: u32) -> Bitmap {
    let mut bm = Bitmap::new(w, h);
    let d = dilation_px as f64;
    for quad in quads {
        // Minkowski sum of the quad with a (2d x 2d) square
        let mut pts = Vec::with_capacity(16);
        for Point { x, y } in quad.0 {
            for (ox, oy) in [(-d, -d), (d, -d), (d, d), (-d, d)] {
                pts.push((x as f64 + ox, y as f64 + oy));
            }
        }
        let hull = convex_hull(pts);
        let bb = union_all(hull.iter().map(|&(x, y)| Rect {
            left: x,
            top: y,
            right: x,
            bottom: y,
        }));
        let x0 = (bb.left - 0.5).ceil().max(0.0) as i64;
        let y0 = (bb.top - 0.5).ceil().max(0.0) as i64;
        let x1 = ((bb.right - 0.5).floor() as i64).min(w as i64 - 1);
        let y1 = ((bb.bottom - 0.5).floor() as i64).min(h as i64 - 1);
        for y in y0..=y1 {
            for x in x0..=x1 {
                if inside_convex(&hull, (x as f64 + 0.5, y as f64 + 0.5)) {
                    bm.set(x as u32, y as u32);
                }
            }
        }
    }
    bm
}
