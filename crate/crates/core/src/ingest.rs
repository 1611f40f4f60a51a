//! Parsing and normalization of external inputs: image metadata, native OCR
//! output from PaddleOCR / EasyOCR, and the `TRFG` embedding file format.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::artifact;
use crate::error::{Error, Result};

/// Per-image metadata record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageMeta {
    pub image_id: String,
    pub url: String,
    pub width_px: u32,
    pub height_px: u32,
    pub p_text: f64,
    pub p_watermark: f64,
    pub p_unsafe: f64,
    pub sha256: String,
}

impl ImageMeta {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("p_text", self.p_text),
            ("p_watermark", self.p_watermark),
            ("p_unsafe", self.p_unsafe),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::validation(format!("field {name} = {p} outside [0,1]")));
            }
        }
        if self.width_px == 0 || self.height_px == 0 {
            return Err(Error::validation("width_px and height_px must be >= 1"));
        }
        if !is_sha256_hex(&self.sha256) {
            return Err(Error::validation(format!(
                "field sha256 = {:?} is not 64 lowercase hex chars",
                self.sha256
            )));
        }
        Ok(())
    }
}

fn is_sha256_hex(s: &str) -> bool {
    s.len() == 64 && s.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f'))
}

/// A line of a JSONL input that failed to parse or validate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LineError {
    /// 1-based line number.
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct MetadataParse {
    pub records: Vec<ImageMeta>,
    pub errors: Vec<LineError>,
}

/// Reads JSONL metadata. Malformed or invalid lines are collected, not fatal.
pub fn parse_metadata(path: impl AsRef<Path>) -> Result<MetadataParse> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = MetadataParse::default();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        push_metadata_line(&mut out, idx + 1, &line);
    }
    Ok(out)
}

pub fn parse_metadata_str(text: &str) -> MetadataParse {
    let mut out = MetadataParse::default();
    for (idx, line) in text.lines().enumerate() {
        push_metadata_line(&mut out, idx + 1, line);
    }
    out
}

fn push_metadata_line(out: &mut MetadataParse, line_no: usize, line: &str) {
    if line.trim().is_empty() {
        return;
    }
    let parsed = serde_json::from_str::<ImageMeta>(line)
        .map_err(|e| e.to_string())
        .and_then(|m| m.validate().map(|_| m).map_err(|e| e.to_string()));
    match parsed {
        Ok(m) => out.records.push(m),
        Err(message) => out.errors.push(LineError { line: line_no, message }),
    }
}

/// OCR engine that produced a result.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    Paddle,
    Easy,
}

impl fmt::Display for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Engine::Paddle => "paddle",
            Engine::Easy => "easy",
        })
    }
}

impl std::str::FromStr for Engine {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "paddle" | "paddleocr" => Ok(Engine::Paddle),
            "easy" | "easyocr" => Ok(Engine::Easy),
            other => Err(Error::validation(format!("unknown OCR engine {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f32,
    pub y: f32,
}

impl Point {
    pub const fn new(x: f32, y: f32) -> Self {
        Point { x, y }
    }
}

/// Axis-aligned rectangle in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub left: f64,
    pub top: f64,
    pub right: f64,
    pub bottom: f64,
}

impl Rect {
    pub fn width(&self) -> f64 {
        self.right - self.left
    }

    pub fn height(&self) -> f64 {
        self.bottom - self.top
    }

    pub fn union(&self, other: &Rect) -> Rect {
        Rect {
            left: self.left.min(other.left),
            top: self.top.min(other.top),
            right: self.right.max(other.right),
            bottom: self.bottom.max(other.bottom),
        }
    }

    pub fn contains(&self, other: &Rect) -> bool {
        self.left <= other.left && self.top <= other.top && self.right >= other.right && self.bottom >= other.bottom
    }
}

/// Four corner points, clockwise starting from the top-left-most corner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quad(pub [Point; 4]);

impl Quad {
    /// Reorders points clockwise (in image coordinates, y down) starting from
    /// the point with the smallest `x + y`.
    pub fn canonical(points: [Point; 4]) -> Quad {
        let cx = points.iter().map(|p| p.x as f64).sum::<f64>() / 4.0;
        let cy = points.iter().map(|p| p.y as f64).sum::<f64>() / 4.0;
        let mut pts = points;
        // With y pointing down, increasing atan2 angle sweeps clockwise on screen.
        pts.sort_by(|a, b| {
            let aa = (a.y as f64 - cy).atan2(a.x as f64 - cx);
            let ab = (b.y as f64 - cy).atan2(b.x as f64 - cx);
            aa.total_cmp(&ab)
        });
        let start = (0..4)
            .min_by(|&i, &j| {
                let si = pts[i].x + pts[i].y;
                let sj = pts[j].x + pts[j].y;
                si.total_cmp(&sj).then(pts[i].y.total_cmp(&pts[j].y))
            })
            .unwrap_or(0);
        pts.rotate_left(start);
        Quad(pts)
    }

    pub fn from_rect(left: f32, top: f32, right: f32, bottom: f32) -> Quad {
        Quad([
            Point::new(left, top),
            Point::new(right, top),
            Point::new(right, bottom),
            Point::new(left, bottom),
        ])
    }

    /// Shoelace area (absolute value).
    pub fn area(&self) -> f64 {
        let p = &self.0;
        let mut twice = 0.0f64;
        for i in 0..4 {
            let a = p[i];
            let b = p[(i + 1) % 4];
            twice += a.x as f64 * b.y as f64 - b.x as f64 * a.y as f64;
        }
        twice.abs() / 2.0
    }

    pub fn bbox(&self) -> Rect {
        let xs = self.0.iter().map(|p| p.x as f64);
        let ys = self.0.iter().map(|p| p.y as f64);
        Rect {
            left: xs.clone().fold(f64::INFINITY, f64::min),
            right: xs.fold(f64::NEG_INFINITY, f64::max),
            top: ys.clone().fold(f64::INFINITY, f64::min),
            bottom: ys.fold(f64::NEG_INFINITY, f64::max),
        }
    }

    pub fn scaled(&self, sx: f32, sy: f32) -> Quad {
        Quad(self.0.map(|p| Point::new(p.x * sx, p.y * sy)))
    }

    pub fn translated(&self, dx: f32, dy: f32) -> Quad {
        Quad(self.0.map(|p| Point::new(p.x + dx, p.y + dy)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordBox {
    pub text: String,
    pub confidence: f32,
    pub quad: Quad,
    pub engine: Engine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcrDoc {
    pub image_id: String,
    pub engine: Engine,
    pub ocr_width_px: u32,
    pub ocr_height_px: u32,
    pub words: Vec<WordBox>,
}

/// Entries dropped while normalizing native OCR output.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct OcrWarnings {
    pub empty_text: usize,
    pub degenerate_quad: usize,
    pub out_of_bounds: usize,
    pub malformed: usize,
}

impl OcrWarnings {
    pub fn total(&self) -> usize {
        self.empty_text + self.degenerate_quad + self.out_of_bounds + self.malformed
    }
}

#[derive(Debug, Clone)]
pub struct OcrParse {
    pub doc: OcrDoc,
    pub warnings: OcrWarnings,
}

/// Coordinates this far outside the canvas are clamped instead of rejected.
const CLAMP_TOLERANCE_PX: f32 = 1.0;

/// Reads one engine-native OCR JSON file.
///
/// Accepts either the bare result list, or an object wrapper
/// `{"image_id", "width", "height", "result": [...]}` as written by the
/// extraction sidecar. Without a wrapper the image id is the file stem and the
/// canvas size is taken from the largest coordinate.
pub fn parse_ocr(path: impl AsRef<Path>, engine: Engine) -> Result<OcrParse> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_ocr_str(&text, engine, &stem)
}

pub fn parse_ocr_str(text: &str, engine: Engine, default_id: &str) -> Result<OcrParse> {
    let root: Value = serde_json::from_str(text).map_err(|e| Error::parse(Some(e.line()), e.to_string()))?;
    let (image_id, dims, entries) = match &root {
        Value::Array(items) => (default_id.to_string(), None, items.as_slice()),
        Value::Object(map) => {
            let id = map
                .get("image_id")
                .and_then(Value::as_str)
                .unwrap_or(default_id)
                .to_string();
            let w = map.get("width").and_then(Value::as_u64);
            let h = map.get("height").and_then(Value::as_u64);
            let dims = w.zip(h).map(|(w, h)| (w as u32, h as u32));
            let items = map
                .get("result")
                .or_else(|| map.get("words"))
                .and_then(Value::as_array)
                .ok_or_else(|| Error::parse(None, "OCR object has no `result` array"))?;
            (id, dims, items.as_slice())
        }
        _ => return Err(Error::parse(None, "OCR JSON must be a list or an object")),
    };
    // PaddleOCR wraps results per page: [[entry, entry, ...]].
    let entries: Vec<&Value> = match entries {
        [Value::Array(inner)] if engine == Engine::Paddle && inner.first().is_some_and(is_paddle_entry) => {
            inner.iter().collect()
        }
        _ => entries.iter().collect(),
    };

    let mut warnings = OcrWarnings::default();
    let mut raw = Vec::with_capacity(entries.len());
    for entry in entries {
        match decode_entry(entry, engine) {
            Some(w) => raw.push(w),
            None => warnings.malformed += 1,
        }
    }

    let (width, height) = dims.unwrap_or_else(|| {
        let mx = raw
            .iter()
            .flat_map(|(q, _, _)| q.iter().map(|p| p.x))
            .fold(0.0f32, f32::max);
        let my = raw
            .iter()
            .flat_map(|(q, _, _)| q.iter().map(|p| p.y))
            .fold(0.0f32, f32::max);
        (mx.ceil().max(1.0) as u32, my.ceil().max(1.0) as u32)
    });

    let mut words = Vec::with_capacity(raw.len());
    for (points, text, conf) in raw {
        if text.is_empty() {
            warnings.empty_text += 1;
            continue;
        }
        let Some(points) = clamp_points(points, width as f32, height as f32) else {
            warnings.out_of_bounds += 1;
            continue;
        };
        let quad = Quad::canonical(points);
        if quad.area() <= 0.0 {
            warnings.degenerate_quad += 1;
            continue;
        }
        words.push(WordBox {
            text,
            confidence: conf.clamp(0.0, 1.0),
            quad,
            engine,
        });
    }
    if warnings.total() > 0 {
        tracing::warn!(image_id = %image_id, ?warnings, "dropped OCR entries");
    }
    Ok(OcrParse {
        doc: OcrDoc {
            image_id,
            engine,
            ocr_width_px: width,
            ocr_height_px: height,
            words,
        },
        warnings,
    })
}

fn is_paddle_entry(v: &Value) -> bool {
    v.as_array()
        .is_some_and(|a| a.len() == 2 && a[0].as_array().is_some_and(|b| b.len() == 4))
}

fn decode_points(v: &Value) -> Option<[Point; 4]> {
    let arr = v.as_array()?;
    if arr.len() != 4 {
        return None;
    }
    let mut pts = [Point::new(0.0, 0.0); 4];
    for (slot, p) in pts.iter_mut().zip(arr) {
        let xy = p.as_array()?;
        if xy.len() != 2 {
            return None;
        }
        let x = xy[0].as_f64()? as f32;
        let y = xy[1].as_f64()? as f32;
        if !x.is_finite() || !y.is_finite() {
            return None;
        }
        *slot = Point::new(x, y);
    }
    Some(pts)
}

fn decode_entry(v: &Value, engine: Engine) -> Option<([Point; 4], String, f32)> {
    let arr = v.as_array()?;
    match engine {
        // [box, [text, conf]]
        Engine::Paddle => {
            if arr.len() != 2 {
                return None;
            }
            let pair = arr[1].as_array()?;
            let text = pair.first()?.as_str()?.to_string();
            let conf = pair.get(1)?.as_f64()? as f32;
            Some((decode_points(&arr[0])?, text, conf))
        }
        // [box, text, conf]
        Engine::Easy => {
            if arr.len() != 3 {
                return None;
            }
            let text = arr[1].as_str()?.to_string();
            let conf = arr[2].as_f64()? as f32;
            Some((decode_points(&arr[0])?, text, conf))
        }
    }
}

fn clamp_points(points: [Point; 4], w: f32, h: f32) -> Option<[Point; 4]> {
    let mut out = points;
    for p in out.iter_mut() {
        if p.x < -CLAMP_TOLERANCE_PX
            || p.y < -CLAMP_TOLERANCE_PX
            || p.x > w + CLAMP_TOLERANCE_PX
            || p.y > h + CLAMP_TOLERANCE_PX
        {
            return None;
        }
        p.x = p.x.clamp(0.0, w);
        p.y = p.y.clamp(0.0, h);
    }
    Some(out)
}

/// Dense row-major float table keyed by id.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    ids: Vec<String>,
    dim: usize,
    data: Vec<f32>,
}

impl EmbeddingMatrix {
    pub fn new(ids: Vec<String>, dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::validation("embedding dim must be positive"));
        }
        if data.len() != ids.len() * dim {
            return Err(Error::validation(format!(
                "data length {} != {} rows x {} dims",
                data.len(),
                ids.len(),
                dim
            )));
        }
        let mut seen = HashSet::with_capacity(ids.len());
        for id in &ids {
            if id.contains('\n') || id.contains('\r') {
                return Err(Error::validation(format!("id {id:?} contains a line break")));
            }
            if !seen.insert(id.as_str()) {
                return Err(Error::validation(format!("duplicate id {id:?}")));
            }
        }
        Ok(EmbeddingMatrix { ids, dim, data })
    }

    pub fn from_rows(ids: Vec<String>, rows: &[Vec<f32>]) -> Result<Self> {
        let dim = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::validation("rows have unequal length"));
        }
        let data = rows.iter().flatten().copied().collect();
        Self::new(ids, dim, data)
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = (&str, &[f32])> {
        self.ids
            .iter()
            .map(String::as_str)
            .zip(self.data.chunks_exact(self.dim))
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }

    /// Keeps only rows whose id is in `keep`, preserving row order.
    pub fn select(&self, keep: &HashSet<&str>) -> EmbeddingMatrix {
        let mut ids = Vec::new();
        let mut data = Vec::new();
        for (id, row) in self.rows() {
            if keep.contains(id) {
                ids.push(id.to_string());
                data.extend_from_slice(row);
            }
        }
        EmbeddingMatrix {
            ids,
            dim: self.dim,
            data,
        }
    }

    pub fn select_indices(&self, idx: &[usize]) -> EmbeddingMatrix {
        let mut ids = Vec::with_capacity(idx.len());
        let mut data = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            ids.push(self.ids[i].clone());
            data.extend_from_slice(self.row(i));
        }
        EmbeddingMatrix {
            ids,
            dim: self.dim,
            data,
        }
    }
}

pub const EMBEDDING_MAGIC: &[u8; 4] = b"TRFG";
pub const EMBEDDING_VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 8 + 4;

/// Encodes the data file part of the embedding format (no ids).
pub fn encode_matrix(dim: usize, rows: usize, data: &[f32]) -> Vec<u8> {
    let mut buf = Vec::with_capacity(HEADER_LEN + data.len() * 4);
    buf.extend_from_slice(EMBEDDING_MAGIC);
    buf.extend_from_slice(&EMBEDDING_VERSION.to_le_bytes());
    buf.extend_from_slice(&(rows as u64).to_le_bytes());
    buf.extend_from_slice(&(dim as u32).to_le_bytes());
    for v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

/// Decodes a `TRFG` block, returning `(rows, dim, data)`.
pub fn decode_matrix(bytes: &[u8]) -> Result<(usize, usize, Vec<f32>)> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated {
            expected: HEADER_LEN as u64,
            actual: bytes.len() as u64,
        });
    }
    if &bytes[..4] != EMBEDDING_MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected \"TRFG\"",
            String::from_utf8_lossy(&bytes[..4])
        )));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != EMBEDDING_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let n = u64::from_le_bytes(bytes[6..14].try_into().expect("8 bytes"));
    let d = u32::from_le_bytes(bytes[14..18].try_into().expect("4 bytes"));
    if d == 0 {
        return Err(Error::Format("dimension must be positive".into()));
    }
    let expected = n
        .checked_mul(d as u64)
        .and_then(|c| c.checked_mul(4))
        .and_then(|c| c.checked_add(HEADER_LEN as u64))
        .ok_or_else(|| Error::Format("declared size overflows".into()))?;
    let actual = bytes.len() as u64;
    if actual < expected {
        return Err(Error::Truncated { expected, actual });
    }
    if actual > expected {
        return Err(Error::Format(format!(
            "{} trailing bytes after payload",
            actual - expected
        )));
    }
    let data = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok((n as usize, d as usize, data))
}

/// Path of the companion id index for an embedding file.
pub fn ids_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".ids");
    PathBuf::from(s)
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (n, dim, data) = decode_matrix(&bytes)?;
    let idp = ids_path(path);
    let id_text = fs::read_to_string(&idp).map_err(|e| Error::io(&idp, e))?;
    let ids: Vec<String> = id_text.lines().map(str::to_string).collect();
    if ids.len() != n {
        return Err(Error::validation(format!(
            "{} lists {} ids but the matrix has {n} rows",
            idp.display(),
            ids.len()
        )));
    }
    EmbeddingMatrix::new(ids, dim, data)
}

/// Writes the data file and its `.ids` companion, each atomically.
pub fn write_embeddings(m: &EmbeddingMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_matrix(m.dim, m.len(), &m.data);
    let mut ids = String::new();
    for id in &m.ids {
        ids.push_str(id);
        ids.push('\n');
    }
    artifact::write_atomic(&ids_path(path), ids.as_bytes())?;
    artifact::write_atomic(path, &bytes)
}

/// Scales every row to unit L2 norm. Fails on an all-zero (or non-finite) row.
pub fn normalize_rows(m: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
    let mut data = m.data.clone();
    for (i, row) in data.chunks_exact_mut(m.dim).enumerate() {
        let norm = l2_norm(row);
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::validation(format!(
                "row {:?} has zero or non-finite norm",
                m.ids[i]
            )));
        }
        for v in row.iter_mut() {
            *v = (*v as f64 / norm) as f32;
        }
    }
    Ok(EmbeddingMatrix {
        ids: m.ids.clone(),
        dim: m.dim,
        data,
    })
}

pub(crate) fn l2_norm(row: &[f32]) -> f64 {
    row.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt()
}
