//! Occlusion-aware query–gallery distance and its batched matrix form.
//! Also CMC / mAP evaluation and averaged part-similarity matrices.

use rayon::prelude::*;
use serde::Serialize;

use crate::data::{read_matrix, write_matrix, UNLABELED};
use crate::error::{Error, Result};
use crate::pooling::PartFeatureSet;

/// P part embeddings of dimension d plus visibility and identity labels.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    dim: usize,
    values: Vec<f32>,
    visible: Vec<bool>,
    pub person_id: i64,
    pub camera_id: i64,
}

impl EmbeddingSet {
    pub fn new(dim: usize, values: Vec<f32>, visible: Vec<bool>) -> Result<Self> {
        if dim == 0 || visible.is_empty() {
            return Err(Error::InvalidShape(format!(
                "{} parts of dimension {dim}",
                visible.len()
            )));
        }
        if values.len() != dim * visible.len() {
            return Err(Error::LengthMismatch {
                expected: dim * visible.len(),
                found: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self {
            dim,
            values,
            visible,
            person_id: UNLABELED,
            camera_id: -1,
        })
    }

    pub fn with_identity(mut self, person_id: i64, camera_id: i64) -> Self {
        self.person_id = person_id;
        self.camera_id = camera_id;
        self
    }

    pub fn num_parts(&self) -> usize {
        self.visible.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn part(&self, p: usize) -> &[f32] {
        &self.values[p * self.dim..(p + 1) * self.dim]
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn visible(&self) -> &[bool] {
        &self.visible
    }

    pub fn identity(&self) -> Identity {
        Identity {
            person_id: self.person_id,
            camera_id: self.camera_id,
        }
    }
}

/// Cosine distance `1 − a·b / (‖a‖‖b‖)` in `[0, 2]`; 1 when either vector is zero.
pub fn cos_dist(a: &[f32], b: &[f32]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 1.0;
    }
    (1.0 - dot / (na.sqrt() * nb.sqrt())).clamp(0.0, 2.0)
}

/// Mean of per-part distances over the query's visible parts.
pub fn occlusion_aware_mean(part_dists: &[f64], query_visible: &[bool]) -> Result<f64> {
    if part_dists.len() != query_visible.len() {
        return Err(Error::DimMismatch(format!(
            "{} part distances vs {} visibility flags",
            part_dists.len(),
            query_visible.len()
        )));
    }
    let mut num = 0.0;
    let mut den = 0usize;
    for (&d, &v) in part_dists.iter().zip(query_visible) {
        if v {
            num += d;
            den += 1;
        }
    }
    if den == 0 {
        return Err(Error::NoVisiblePart);
    }
    Ok(num / den as f64)
}

fn check_compatible(q: &EmbeddingSet, g: &EmbeddingSet) -> Result<()> {
    if q.num_parts() != g.num_parts() || q.dim != g.dim {
        return Err(Error::DimMismatch(format!(
            "query {}×{} vs gallery {}×{}",
            q.num_parts(),
            q.dim,
            g.num_parts(),
            g.dim
        )));
    }
    Ok(())
}

/// Distance between a query and a gallery image, ignoring parts the query
/// cannot see. Gallery visibility is not consulted: an invisible gallery part
/// keeps its embedding of the zero vector.
pub fn query_gallery_distance(q: &EmbeddingSet, g: &EmbeddingSet) -> Result<f64> {
    check_compatible(q, g)?;
    let dists: Vec<f64> = (0..q.num_parts())
        .map(|p| cos_dist(q.part(p), g.part(p)))
        .collect();
    occlusion_aware_mean(&dists, &q.visible)
}

/// Q×N query–gallery distances, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f32>,
}

impl DistanceMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::LengthMismatch {
                expected: rows * cols,
                found: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.values[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        write_matrix(self.rows, self.cols, &self.values)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (rows, cols, values) = read_matrix(bytes)?;
        Self::new(rows, cols, values)
    }
}

const LANES: usize = 8;
const QUERY_BLOCK: usize = 16;

type Lanes = [f32; LANES];

#[inline(always)]
fn mac(acc: &mut Lanes, q: &[f32], g: &[f32]) {
    for i in 0..LANES {
        acc[i] += q[i] * g[i];
    }
}

/// Tail products and the fixed pairwise lane reduction. Every kernel below
/// funnels through this, so all tile shapes give bit-identical entries.
#[inline(always)]
fn finish(mut acc: Lanes, q_tail: &[f32], g_tail: &[f32]) -> f32 {
    for (i, (&x, &y)) in q_tail.iter().zip(g_tail).enumerate() {
        acc[i] += x * y;
    }
    let mut width = LANES;
    while width > 1 {
        width /= 2;
        for i in 0..width {
            acc[i] += acc[i + width];
        }
    }
    acc[0]
}

#[inline(always)]
fn split(v: &[f32]) -> (std::slice::ChunksExact<'_, f32>, &[f32]) {
    let c = v.chunks_exact(LANES);
    let tail = c.remainder();
    (c, tail)
}

#[inline(always)]
fn dot1(q: &[f32], g: &[f32]) -> f32 {
    let (qc, qt) = split(q);
    let (gc, gt) = split(g);
    let mut acc = [0.0; LANES];
    for (a, b) in qc.zip(gc) {
        mac(&mut acc, a, b);
    }
    finish(acc, qt, gt)
}

/// Four queries against two gallery rows.
#[inline(always)]
fn dot4x2(q: [&[f32]; 4], g: [&[f32]; 2]) -> [[f32; 2]; 4] {
    let (q0, t0) = split(q[0]);
    let (q1, t1) = split(q[1]);
    let (q2, t2) = split(q[2]);
    let (q3, t3) = split(q[3]);
    let (g0, u0) = split(g[0]);
    let (g1, u1) = split(g[1]);
    let mut acc = [[[0.0; LANES]; 2]; 4];
    for (((((a0, a1), a2), a3), b0), b1) in q0.zip(q1).zip(q2).zip(q3).zip(g0).zip(g1) {
        mac(&mut acc[0][0], a0, b0);
        mac(&mut acc[1][0], a1, b0);
        mac(&mut acc[2][0], a2, b0);
        mac(&mut acc[3][0], a3, b0);
        mac(&mut acc[0][1], a0, b1);
        mac(&mut acc[1][1], a1, b1);
        mac(&mut acc[2][1], a2, b1);
        mac(&mut acc[3][1], a3, b1);
    }
    let qt = [t0, t1, t2, t3];
    let gt = [u0, u1];
    let mut out = [[0.0; 2]; 4];
    for r in 0..4 {
        for c in 0..2 {
            out[r][c] = finish(acc[r][c], qt[r], gt[c]);
        }
    }
    out
}

#[inline(always)]
fn fill_rows_portable(q_block: &[f32], gallery: &[f32], len: usize, out: &mut [f32]) {
    let cols = gallery.len() / len;
    let rows = q_block.len() / len;
    let q = |r: usize| &q_block[r * len..(r + 1) * len];
    let g = |c: usize| &gallery[c * len..(c + 1) * len];
    let mut put = |r: usize, c: usize, dot: f32| out[r * cols + c] = (1.0 - dot).clamp(0.0, 2.0);
    let mut r = 0;
    while r + 4 <= rows {
        let qs = [q(r), q(r + 1), q(r + 2), q(r + 3)];
        let mut c = 0;
        while c + 2 <= cols {
            let t = dot4x2(qs, [g(c), g(c + 1)]);
            for (i, row) in t.iter().enumerate() {
                put(r + i, c, row[0]);
                put(r + i, c + 1, row[1]);
            }
            c += 2;
        }
        if c < cols {
            for i in 0..4 {
                put(r + i, c, dot1(qs[i], g(c)));
            }
        }
        r += 4;
    }
    for r in r..rows {
        for c in 0..cols {
            put(r, c, dot1(q(r), g(c)));
        }
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn fill_rows_avx2(q_block: &[f32], gallery: &[f32], len: usize, out: &mut [f32]) {
    // Same scalar program as the portable path; only the vector width differs,
    // so the results are bit-identical.
    fill_rows_portable(q_block, gallery, len, out)
}

fn fill_rows(q_block: &[f32], gallery: &[f32], len: usize, out: &mut [f32]) {
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: the CPU supports AVX2, checked above.
            unsafe { fill_rows_avx2(q_block, gallery, len, out) };
            return;
        }
    }
    fill_rows_portable(q_block, gallery, len, out)
}

/// Concatenated unit-normalised parts; zero parts stay zero. Query parts are
/// additionally scaled by `v_p / Σv` so one dot product yields the masked mean.
fn normalized_concat(e: &EmbeddingSet, weights: Option<&[f32]>, out: &mut [f32]) {
    for p in 0..e.num_parts() {
        let part = e.part(p);
        let norm = part.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt();
        let w = weights.map_or(1.0, |w| w[p] as f64);
        let scale = if norm > 0.0 { w / norm } else { 0.0 };
        for (o, &x) in out[p * e.dim..(p + 1) * e.dim].iter_mut().zip(part) {
            *o = (x as f64 * scale) as f32;
        }
    }
}

/// All query–gallery distances. Each entry is computed independently, so the
/// result does not depend on the number of threads.
///
/// Entries are stored as f32 and agree with [`query_gallery_distance`] to
/// within f32 rounding (about 1e-6).
pub fn distance_matrix(queries: &[EmbeddingSet], gallery: &[EmbeddingSet]) -> Result<DistanceMatrix> {
    let Some(first) = queries.first().or(gallery.first()) else {
        return DistanceMatrix::new(0, 0, Vec::new());
    };
    let (parts, dim) = (first.num_parts(), first.dim);
    for e in queries.iter().chain(gallery) {
        check_compatible(first, e)?;
    }
    let len = parts * dim;

    let mut q_mat = vec![0.0f32; queries.len() * len];
    q_mat
        .par_chunks_mut(len)
        .zip(queries)
        .try_for_each(|(out, q)| {
            let n_vis = q.visible.iter().filter(|&&v| v).count();
            if n_vis == 0 {
                return Err(Error::NoVisiblePart);
            }
            let w: Vec<f32> = q
                .visible
                .iter()
                .map(|&v| if v { (1.0 / n_vis as f64) as f32 } else { 0.0 })
                .collect();
            normalized_concat(q, Some(&w), out);
            Ok(())
        })?;
    let mut g_mat = vec![0.0f32; gallery.len() * len];
    g_mat
        .par_chunks_mut(len)
        .zip(gallery)
        .for_each(|(out, g)| normalized_concat(g, None, out));

    let cols = gallery.len();
    let mut values = vec![0.0f32; queries.len() * cols];
    if cols > 0 {
        values
            .par_chunks_mut(QUERY_BLOCK * cols)
            .zip(q_mat.par_chunks(QUERY_BLOCK * len))
            .for_each(|(out, q_block)| fill_rows(q_block, &g_mat, len, out));
    }
    DistanceMatrix::new(queries.len(), cols, values)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Identity {
    pub person_id: i64,
    pub camera_id: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalOptions {
    /// Exclude gallery items sharing the query's identity and camera.
    pub exclude_same_camera: bool,
    /// For CMC only, count each gallery identity once (its best-ranked item).
    pub single_gallery_shot: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            exclude_same_camera: true,
            single_gallery_shot: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub rank1: f64,
    pub rank5: f64,
    pub rank10: f64,
    #[serde(rename = "mAP")]
    pub map: f64,
    /// Queries that had at least one valid match and were scored.
    pub num_queries: usize,
    pub num_skipped: usize,
    /// `cmc[k]` = fraction of scored queries whose first match is within the top `k + 1`.
    #[serde(skip)]
    pub cmc: Vec<f64>,
}

struct QueryScore {
    first_hit: usize,
    ap: f64,
}

fn score_query(
    row: &[f32],
    query: Identity,
    gallery: &[Identity],
    opts: &EvalOptions,
    order: &mut Vec<usize>,
) -> Option<QueryScore> {
    order.clear();
    order.extend(0..row.len());
    order.sort_unstable_by(|&a, &b| row[a].total_cmp(&row[b]).then(a.cmp(&b)));

    let is_match = |g: &Identity| query.person_id > 0 && g.person_id == query.person_id;
    let is_junk = |g: &Identity| {
        opts.exclude_same_camera && is_match(g) && g.camera_id == query.camera_id
    };

    let mut hits = 0usize;
    let mut precision_sum = 0.0;
    let mut rank = 0usize;
    for &j in order.iter() {
        let g = &gallery[j];
        if is_junk(g) {
            continue;
        }
        rank += 1;
        if is_match(g) {
            hits += 1;
            precision_sum += hits as f64 / rank as f64;
        }
    }
    if hits == 0 {
        return None;
    }

    let mut seen = std::collections::HashSet::new();
    let mut cmc_rank = 0usize;
    let mut first_hit = None;
    for &j in order.iter() {
        let g = &gallery[j];
        if is_junk(g) {
            continue;
        }
        if opts.single_gallery_shot && g.person_id > 0 && !seen.insert(g.person_id) {
            continue;
        }
        if is_match(g) {
            first_hit = Some(cmc_rank);
            break;
        }
        cmc_rank += 1;
    }
    Some(QueryScore {
        first_hit: first_hit.expect("a match exists"),
        ap: precision_sum / hits as f64,
    })
}

/// CMC and mAP under the Market-1501 protocol. Same-identity same-camera
/// gallery items are junk; `person_id <= 0` gallery items are distractors.
/// Ties go to the lower gallery index. Queries without a valid match are skipped.
pub fn evaluate(
    dists: &DistanceMatrix,
    queries: &[Identity],
    gallery: &[Identity],
    opts: &EvalOptions,
) -> Result<EvalReport> {
    if dists.rows() != queries.len() || dists.cols() != gallery.len() {
        return Err(Error::DimMismatch(format!(
            "distance matrix {}×{} vs {} queries, {} gallery",
            dists.rows(),
            dists.cols(),
            queries.len(),
            gallery.len()
        )));
    }
    let scores: Vec<Option<QueryScore>> = (0..queries.len())
        .into_par_iter()
        .map_init(Vec::new, |order, q| {
            score_query(dists.row(q), queries[q], gallery, opts, order)
        })
        .collect();

    let mut hist = vec![0usize; gallery.len().max(10)];
    let mut ap_sum = 0.0;
    let mut n = 0usize;
    for s in scores.iter().flatten() {
        hist[s.first_hit] += 1;
        ap_sum += s.ap;
        n += 1;
    }
    if n == 0 {
        return Err(Error::NoValidQueries);
    }
    let mut cmc = Vec::with_capacity(hist.len());
    let mut acc = 0usize;
    for h in hist {
        acc += h;
        cmc.push(acc as f64 / n as f64);
    }
    Ok(EvalReport {
        rank1: cmc[0],
        rank5: cmc[4],
        rank10: cmc[9],
        map: ap_sum / n as f64,
        num_queries: n,
        num_skipped: queries.len() - n,
        cmc,
    })
}

/// Cosine similarity matrix between the parts of each image, averaged over
/// images. Returned row-major, `P × P`, with a unit diagonal.
pub fn part_similarity_matrix(sets: &[PartFeatureSet]) -> Result<Vec<f64>> {
    let first = sets.first().ok_or(Error::EmptyDataset)?;
    let p = first.num_parts();
    for s in sets {
        if s.num_parts() != p || s.dim() != first.dim() {
            return Err(Error::DimMismatch(format!(
                "part set {}×{} vs {}×{}",
                s.num_parts(),
                s.dim(),
                p,
                first.dim()
            )));
        }
    }
    let per_image: Vec<Vec<f64>> = sets
        .par_iter()
        .map(|s| {
            let mut m = vec![0.0; p * p];
            for i in 0..p {
                m[i * p + i] = 1.0;
                for j in i + 1..p {
                    let sim = 1.0 - cos_dist(s.part(i), s.part(j));
                    m[i * p + j] = sim;
                    m[j * p + i] = sim;
                }
            }
            m
        })
        .collect();
    let mut avg = vec![0.0; p * p];
    for m in &per_image {
        for (a, v) in avg.iter_mut().zip(m) {
            *a += v;
        }
    }
    let n = sets.len() as f64;
    avg.iter_mut().for_each(|a| *a /= n);
    for i in 0..p {
        avg[i * p + i] = 1.0;
    }
    Ok(avg)
}
