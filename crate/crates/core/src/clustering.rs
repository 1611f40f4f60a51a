//! k-means over row-normalized embeddings, nearest-centroid assignment,
//! keep-list filtering with a per-cluster cap, and a static HTML gallery for
//! inspecting clusters by eye.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::artifact;
use crate::error::{Error, Result};
use crate::ingest::{decode_matrix, encode_matrix, l2_norm, EmbeddingMatrix};

pub const DEFAULT_K: usize = 100;
pub const DEFAULT_SAMPLE_N: usize = 50_000;
pub const DEFAULT_CAP_PER_CLUSTER: usize = 52_000;
pub const DEFAULT_MAX_ITER: usize = 100;
pub const DEFAULT_TOL: f64 = 1e-4;

/// Rows must be unit-norm within this tolerance to be clustered.
const UNIT_NORM_TOL: f64 = 1e-3;

pub(crate) fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform sample of `n` items without replacement, returned in input order.
pub fn sample_ids<T: Clone>(ids: &[T], n: usize, seed: u64) -> Result<Vec<T>> {
    let idx = sample_indices(ids.len(), n, seed)?;
    Ok(idx.into_iter().map(|i| ids[i].clone()).collect())
}

pub fn sample_indices(len: usize, n: usize, seed: u64) -> Result<Vec<usize>> {
    if n > len {
        return Err(Error::validation(format!("cannot sample {n} items from {len}")));
    }
    let mut rng = rng_for(seed);
    let mut idx = index::sample(&mut rng, len, n).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub k: usize,
    pub dim: usize,
    /// `k * dim` values, row-major.
    pub centroids: Vec<f32>,
    pub seed: u64,
    pub iterations_run: usize,
    pub inertia: f64,
}

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    k: usize,
    dim: usize,
    seed: u64,
    iterations_run: usize,
    inertia: f64,
}

impl ClusterModel {
    pub fn centroid(&self, c: usize) -> &[f32] {
        &self.centroids[c * self.dim..(c + 1) * self.dim]
    }

    /// One JSON header line followed by the centroids as a `TRFG` block.
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = ModelHeader {
            k: self.k,
            dim: self.dim,
            seed: self.seed,
            iterations_run: self.iterations_run,
            inertia: self.inertia,
        };
        let mut out = serde_json::to_vec(&header).expect("header serializes");
        out.push(b'\n');
        out.extend(encode_matrix(self.dim, self.k, &self.centroids));
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Format("cluster model has no header line".into()))?;
        let header: ModelHeader =
            serde_json::from_slice(&bytes[..nl]).map_err(|e| Error::Format(format!("cluster model header: {e}")))?;
        let (rows, dim, centroids) = decode_matrix(&bytes[nl + 1..])?;
        if rows != header.k || dim != header.dim {
            return Err(Error::Format(format!(
                "header says {}x{}, payload is {rows}x{dim}",
                header.k, header.dim
            )));
        }
        if centroids.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("cluster model has non-finite centroids"));
        }
        Ok(ClusterModel {
            k: header.k,
            dim,
            centroids,
            seed: header.seed,
            iterations_run: header.iterations_run,
            inertia: header.inertia,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        artifact::write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KmeansParams {
    pub k: usize,
    pub seed: u64,
    pub max_iter: usize,
    /// Convergence threshold on the largest centroid displacement.
    pub tol: f64,
}

impl KmeansParams {
    pub fn new(k: usize, seed: u64) -> Self {
        KmeansParams {
            k,
            seed,
            max_iter: DEFAULT_MAX_ITER,
            tol: DEFAULT_TOL,
        }
    }
}

#[derive(Debug, Clone)]
pub struct KmeansFit {
    pub model: ClusterModel,
    /// Training labels under the final centroids.
    pub labels: Vec<usize>,
    /// Inertia after each assignment step, ending with the final centroids.
    pub inertia_trace: Vec<f64>,
}

fn sq_dist(a: &[f32], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &c)| {
            let d = x as f64 - c;
            d * d
        })
        .sum()
}

fn sq_dist_f32(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &c)| {
            let d = x as f64 - c as f64;
            d * d
        })
        .sum()
}

/// Index of the nearest centroid; ties go to the lowest index.
fn nearest(row: &[f32], centroids: &[f64], dim: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, cent) in centroids.chunks_exact(dim).enumerate() {
        let d = sq_dist(row, cent);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn assign_all(x: &EmbeddingMatrix, centroids: &[f64]) -> Vec<(usize, f64)> {
    let dim = x.dim();
    (0..x.len())
        .into_par_iter()
        .map(|i| nearest(x.row(i), centroids, dim))
        .collect()
}

fn kmeans_pp_init(x: &EmbeddingMatrix, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = x.len();
    let dim = x.dim();
    let mut centroids = Vec::with_capacity(k * dim);
    let first = rng.random_range(0..n);
    centroids.extend(x.row(first).iter().map(|&v| v as f64));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(x.row(i), &centroids[..dim])).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 && target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            // rounding can leave `target` just past the end; take the last weighted point
            if d2[chosen] == 0.0 {
                chosen = d2.iter().rposition(|&w| w > 0.0).unwrap_or(chosen);
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let start = centroids.len();
        centroids.extend(x.row(pick).iter().map(|&v| v as f64));
        let new = &centroids[start..start + dim];
        debug_assert_eq!(start, c * dim);
        for (i, slot) in d2.iter_mut().enumerate() {
            let d = sq_dist(x.row(i), new);
            if d < *slot {
                *slot = d;
            }
        }
    }
    centroids
}

/// Lloyd's algorithm with k-means++ seeding.
///
/// Centroid sums are accumulated sequentially in row order so results do not
/// depend on the thread count. An empty cluster is re-seeded at the training
/// point farthest from its current centroid.
pub fn kmeans_fit(x: &EmbeddingMatrix, params: &KmeansParams) -> Result<KmeansFit> {
    let n = x.len();
    let dim = x.dim();
    let k = params.k;
    if k == 0 {
        return Err(Error::validation("k must be at least 1"));
    }
    if n < k {
        return Err(Error::validation(format!("need at least k={k} rows, got {n}")));
    }
    if x.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::validation("embedding matrix contains NaN or infinity"));
    }
    for (id, row) in x.rows() {
        let norm = l2_norm(row);
        if (norm - 1.0).abs() > UNIT_NORM_TOL {
            return Err(Error::validation(format!(
                "row {id:?} is not unit-norm (|x| = {norm}); normalize rows first"
            )));
        }
    }

    let mut rng = rng_for(params.seed);
    let mut centroids = kmeans_pp_init(x, k, &mut rng);
    let mut trace = Vec::new();
    let mut iterations = 0;

    for _ in 0..params.max_iter {
        let assignment = assign_all(x, &centroids);
        trace.push(assignment.iter().map(|a| a.1).sum());
        iterations += 1;

        let mut sums = vec![0.0f64; k * dim];
        let mut counts = vec![0usize; k];
        for (i, &(c, _)) in assignment.iter().enumerate() {
            counts[c] += 1;
            for (s, &v) in sums[c * dim..(c + 1) * dim].iter_mut().zip(x.row(i)) {
                *s += v as f64;
            }
        }

        let mut next = centroids.clone();
        let mut taken: HashSet<usize> = HashSet::new();
        for c in 0..k {
            let slot = &mut next[c * dim..(c + 1) * dim];
            if counts[c] > 0 {
                let inv = counts[c] as f64;
                for (dst, s) in slot.iter_mut().zip(&sums[c * dim..(c + 1) * dim]) {
                    // centroids stay f32-representable so the stored model
                    // reproduces the traced inertia exactly
                    *dst = ((s / inv) as f32) as f64;
                }
            } else {
                let far = assignment.iter().enumerate().filter(|(i, _)| !taken.contains(i)).fold(
                    None::<(usize, f64)>,
                    |best, (i, &(_, d))| match best {
                        Some((_, bd)) if bd >= d => best,
                        _ => Some((i, d)),
                    },
                );
                if let Some((i, _)) = far {
                    taken.insert(i);
                    for (dst, &v) in slot.iter_mut().zip(x.row(i)) {
                        *dst = v as f64;
                    }
                }
            }
        }

        let shift = centroids
            .chunks_exact(dim)
            .zip(next.chunks_exact(dim))
            .map(|(a, b)| a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt())
            .fold(0.0, f64::max);
        centroids = next;
        if shift < params.tol {
            break;
        }
    }

    let centroids_f32: Vec<f32> = centroids.iter().map(|&v| v as f32).collect();
    let final_assignment = assign_all(x, &centroids);
    let inertia: f64 = final_assignment.iter().map(|a| a.1).sum();
    trace.push(inertia);

    Ok(KmeansFit {
        model: ClusterModel {
            k,
            dim,
            centroids: centroids_f32,
            seed: params.seed,
            iterations_run: iterations,
            inertia,
        },
        labels: final_assignment.into_iter().map(|a| a.0).collect(),
        inertia_trace: trace,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub id: String,
    pub cluster: usize,
    /// Squared Euclidean distance to the assigned centroid.
    pub distance: f64,
}

/// Nearest-centroid assignment by squared Euclidean distance, ties to the
/// lowest cluster index.
pub fn assign(model: &ClusterModel, x: &EmbeddingMatrix) -> Result<Vec<Assignment>> {
    if x.dim() != model.dim {
        return Err(Error::validation(format!(
            "embedding dim {} does not match model dim {}",
            x.dim(),
            model.dim
        )));
    }
    let out = (0..x.len())
        .into_par_iter()
        .map(|i| {
            let row = x.row(i);
            let mut best = (0, f64::INFINITY);
            for c in 0..model.k {
                let d = sq_dist_f32(row, model.centroid(c));
                if d < best.1 {
                    best = (c, d);
                }
            }
            Assignment {
                id: x.ids()[i].clone(),
                cluster: best.0,
                distance: best.1,
            }
        })
        .collect();
    Ok(out)
}

/// Curator-edited selection of clusters plus the per-cluster cap.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterKeepList {
    /// Kept cluster indices. Order is meaningful: it is the curator's ranking,
    /// used to resolve ordinal references such as "the 3rd cluster".
    pub keep: Vec<usize>,
    #[serde(default = "default_cap")]
    pub cap_per_cluster: usize,
}

fn default_cap() -> usize {
    DEFAULT_CAP_PER_CLUSTER
}

impl ClusterKeepList {
    pub fn validate(&self, k: usize) -> Result<()> {
        if self.cap_per_cluster == 0 {
            return Err(Error::validation("cap_per_cluster must be >= 1"));
        }
        let mut seen = HashSet::new();
        for &c in &self.keep {
            if c >= k {
                return Err(Error::validation(format!("kept cluster {c} >= k={k}")));
            }
            if !seen.insert(c) {
                return Err(Error::validation(format!("cluster {c} listed twice")));
            }
        }
        Ok(())
    }

    /// Cluster index of the 1-based `ordinal`-th kept cluster.
    pub fn by_ordinal(&self, ordinal: usize) -> Result<usize> {
        ordinal
            .checked_sub(1)
            .and_then(|i| self.keep.get(i).copied())
            .ok_or_else(|| {
                Error::validation(format!(
                    "keep-list has {} clusters, no ordinal {ordinal}",
                    self.keep.len()
                ))
            })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(Some(e.line()), e.to_string()))
    }
}

/// Drops ids outside the keep-set and samples at most `cap` ids per kept
/// cluster. Survivors are returned in input order.
pub fn cap_per_cluster(assignments: &[Assignment], keep: &ClusterKeepList, seed: u64) -> Vec<String> {
    let kept: HashSet<usize> = keep.keep.iter().copied().collect();
    let mut members: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, a) in assignments.iter().enumerate() {
        if kept.contains(&a.cluster) {
            members.entry(a.cluster).or_default().push(i);
        }
    }
    let mut survivors = Vec::new();
    for (&cluster, idx) in &members {
        if idx.len() > keep.cap_per_cluster {
            let picked =
                sample_indices(idx.len(), keep.cap_per_cluster, cluster_seed(seed, cluster)).expect("cap < len");
            survivors.extend(picked.into_iter().map(|j| idx[j]));
        } else {
            survivors.extend_from_slice(idx);
        }
    }
    survivors.sort_unstable();
    survivors.into_iter().map(|i| assignments[i].id.clone()).collect()
}

/// Independent stream per cluster so one cluster's size never perturbs
/// another cluster's sample.
pub(crate) fn cluster_seed(seed: u64, cluster: usize) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ (cluster as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const IMAGE_EXTENSIONS: [&str; 6] = ["jpg", "jpeg", "png", "webp", "gif", "bmp"];

fn html_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for ch in s.chars() {
        match ch {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            _ => out.push(ch),
        }
    }
    out
}

fn find_image(image_dir: &Path, id: &str) -> Option<PathBuf> {
    IMAGE_EXTENSIONS
        .iter()
        .map(|ext| image_dir.join(format!("{id}.{ext}")))
        .find(|p| p.is_file())
}

pub fn cluster_page_name(cluster: usize) -> String {
    format!("cluster_{cluster:03}.html")
}

#[derive(Debug, Clone)]
pub struct GalleryReport {
    pub pages: Vec<PathBuf>,
    pub index: PathBuf,
    pub keep_list_skeleton: PathBuf,
    pub missing_images: usize,
}

/// Writes one HTML page per cluster (up to `per_cluster` sampled thumbnails),
/// an `index.html`, and an empty `keep_list.json` for the curator to fill in.
pub fn export_gallery(
    assignments: &[Assignment],
    k: usize,
    image_dir: &Path,
    per_cluster: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<GalleryReport> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut members: Vec<Vec<&Assignment>> = vec![Vec::new(); k];
    for a in assignments {
        if a.cluster >= k {
            return Err(Error::validation(format!(
                "assignment to cluster {} >= k={k}",
                a.cluster
            )));
        }
        members[a.cluster].push(a);
    }

    let mut pages = Vec::with_capacity(k);
    let mut missing = 0;
    let mut index = String::from(
        "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>Clusters</title></head><body>\n<h1>Clusters</h1>\n<ul>\n",
    );
    for (c, list) in members.iter().enumerate() {
        let shown: Vec<&Assignment> = if list.len() > per_cluster {
            sample_indices(list.len(), per_cluster, cluster_seed(seed, c))
                .expect("per_cluster < len")
                .into_iter()
                .map(|i| list[i])
                .collect()
        } else {
            list.clone()
        };
        let mut page = format!(
            "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>Cluster {c}</title>\n<style>.thumb{{display:inline-block;margin:4px}}.thumb img{{max-width:160px;max-height:160px}}.missing{{width:160px;height:160px;background:#ccc}}</style></head><body>\n<h1 data-cluster=\"{c}\">Cluster {c} ({} images)</h1>\n",
            list.len()
        );
        if list.is_empty() {
            page.push_str("<p class=\"empty\">empty</p>\n");
        }
        for a in shown {
            let id = html_escape(&a.id);
            match find_image(image_dir, &a.id) {
                Some(p) => {
                    let src = html_escape(&p.to_string_lossy());
                    let _ = writeln!(
                        page,
                        "<div class=\"thumb\" data-id=\"{id}\" data-cluster=\"{c}\"><img src=\"{src}\" alt=\"{id}\" loading=\"lazy\"></div>"
                    );
                }
                None => {
                    missing += 1;
                    let _ = writeln!(
                        page,
                        "<div class=\"thumb\" data-id=\"{id}\" data-cluster=\"{c}\"><div class=\"missing\">{id}</div></div>"
                    );
                }
            }
        }
        page.push_str("<p><a href=\"index.html\">index</a></p>\n</body></html>\n");
        let path = out_dir.join(cluster_page_name(c));
        artifact::write_atomic(&path, page.as_bytes())?;
        pages.push(path);
        let _ = writeln!(
            index,
            "<li><a href=\"{}\">cluster {c}</a> ({} images)</li>",
            cluster_page_name(c),
            list.len()
        );
    }
    index.push_str("</ul>\n</body></html>\n");
    let index_path = out_dir.join("index.html");
    artifact::write_atomic(&index_path, index.as_bytes())?;

    let skeleton = ClusterKeepList {
        keep: Vec::new(),
        cap_per_cluster: DEFAULT_CAP_PER_CLUSTER,
    };
    let skeleton_path = out_dir.join("keep_list.json");
    let mut json = serde_json::to_vec_pretty(&skeleton).expect("keep-list serializes");
    json.push(b'\n');
    artifact::write_atomic(&skeleton_path, &json)?;

    Ok(GalleryReport {
        pages,
        index: index_path,
        keep_list_skeleton: skeleton_path,
        missing_images: missing,
    })
}
