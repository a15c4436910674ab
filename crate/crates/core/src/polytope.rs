//! Polytopic uncertainty sets built from several fitted predictors.
//!
//! The `h` entries with the largest max−min spread across the source models
//! each get an interval `[min, max]`; every other entry is frozen at its
//! mean. Vertices are generated by repeated doubling: starting from the
//! mean model, step `p` copies the current vertex list, sets entry `p` to its
//! max in the first copy and to its min in the second. Vertex `i` therefore
//! carries the max of entry `p` exactly when bit `p-1` of `i` is clear.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::artifact::content_hash;
use crate::edmd::LinearPredictor;
use crate::linalg::matrix_serde;
use crate::observables::Dictionary;

#[derive(Debug, Error, PartialEq)]
pub enum PolytopeError {
    #[error("no models given")]
    Empty,
    #[error("model {index} has shape {got:?}, expected {expected:?}")]
    Dimension {
        index: usize,
        expected: (usize, usize, usize),
        got: (usize, usize, usize),
    },
    #[error("h = {h} exceeds the {available} entries in the selected blocks")]
    TooManyThresholds { h: usize, available: usize },
    #[error("invalid convex weights: {0}")]
    Weights(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Block {
    A,
    B,
    Bw,
}

impl Block {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "a" => Some(Self::A),
            "b" => Some(Self::B),
            "bw" | "b_w" => Some(Self::Bw),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EntryId {
    pub block: Block,
    pub row: usize,
    pub col: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockStats {
    #[serde(with = "matrix_serde")]
    pub max: DMatrix<f64>,
    #[serde(with = "matrix_serde")]
    pub min: DMatrix<f64>,
    #[serde(with = "matrix_serde")]
    pub mean: DMatrix<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntryStats {
    pub a: BlockStats,
    pub b: BlockStats,
    pub b_w: BlockStats,
}

impl EntryStats {
    pub fn block(&self, b: Block) -> &BlockStats {
        match b {
            Block::A => &self.a,
            Block::B => &self.b,
            Block::Bw => &self.b_w,
        }
    }
}

fn block_of(m: &LinearPredictor, b: Block) -> &DMatrix<f64> {
    match b {
        Block::A => &m.a,
        Block::B => &m.b,
        Block::Bw => &m.b_w,
    }
}

fn shape(m: &LinearPredictor) -> (usize, usize, usize) {
    (m.a.nrows(), m.b.ncols(), m.b_w.ncols())
}

/// Entrywise max, min and mean across models. The mean sums sorted values
/// so the result does not depend on model order.
pub fn entry_stats(models: &[LinearPredictor]) -> Result<EntryStats, PolytopeError> {
    let first = models.first().ok_or(PolytopeError::Empty)?;
    let expected = shape(first);
    for (index, m) in models.iter().enumerate() {
        let got = shape(m);
        if got != expected || m.a.ncols() != expected.0 || m.b.nrows() != expected.0 || m.b_w.nrows() != expected.0 {
            return Err(PolytopeError::Dimension { index, expected, got });
        }
    }
    let stats = |b: Block| {
        let (r, c) = block_of(first, b).shape();
        let mut out = BlockStats {
            max: DMatrix::zeros(r, c),
            min: DMatrix::zeros(r, c),
            mean: DMatrix::zeros(r, c),
        };
        let mut vals = Vec::with_capacity(models.len());
        for i in 0..r {
            for j in 0..c {
                vals.clear();
                vals.extend(models.iter().map(|m| block_of(m, b)[(i, j)]));
                vals.sort_by(f64::total_cmp);
                out.min[(i, j)] = vals[0];
                out.max[(i, j)] = vals[vals.len() - 1];
                out.mean[(i, j)] = vals.iter().sum::<f64>() / vals.len() as f64;
            }
        }
        out
    };
    Ok(EntryStats {
        a: stats(Block::A),
        b: stats(Block::B),
        b_w: stats(Block::Bw),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vertex {
    #[serde(with = "matrix_serde")]
    pub a: DMatrix<f64>,
    #[serde(with = "matrix_serde")]
    pub b: DMatrix<f64>,
    #[serde(with = "matrix_serde")]
    pub b_w: DMatrix<f64>,
}

impl Vertex {
    fn block_mut(&mut self, b: Block) -> &mut DMatrix<f64> {
        match b {
            Block::A => &mut self.a,
            Block::B => &mut self.b,
            Block::Bw => &mut self.b_w,
        }
    }

    pub fn get(&self, e: EntryId) -> f64 {
        match e.block {
            Block::A => self.a[(e.row, e.col)],
            Block::B => self.b[(e.row, e.col)],
            Block::Bw => self.b_w[(e.row, e.col)],
        }
    }

    pub fn to_predictor(&self) -> LinearPredictor {
        LinearPredictor::new(self.a.clone(), self.b.clone(), self.b_w.clone())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolytopeModel {
    pub h: usize,
    pub blocks: Vec<Block>,
    /// Varied entries in rank order (largest spread first).
    pub varied: Vec<EntryId>,
    pub vertices: Vec<Vertex>,
    pub stats: EntryStats,
    /// Sorted content hashes of the source predictors.
    pub sources: Vec<String>,
    pub dictionary: Option<Dictionary>,
}

impl PolytopeModel {
    pub fn features(&self) -> usize {
        self.stats.a.mean.nrows()
    }

    pub fn inputs(&self) -> usize {
        self.stats.b.mean.ncols()
    }
}

/// Entries of the selected blocks ranked by spread, largest first. Equal
/// spreads keep block order (A, B, B_w) and then row-major order.
pub fn ranked_entries(stats: &EntryStats, blocks: &[Block]) -> Vec<(EntryId, f64)> {
    let mut chosen: Vec<Block> = blocks.to_vec();
    chosen.sort();
    chosen.dedup();
    let mut entries = Vec::new();
    for b in chosen {
        let s = stats.block(b);
        for row in 0..s.max.nrows() {
            for col in 0..s.max.ncols() {
                entries.push((EntryId { block: b, row, col }, s.max[(row, col)] - s.min[(row, col)]));
            }
        }
    }
    entries.sort_by(|x, y| y.1.total_cmp(&x.1));
    entries
}

pub fn build_polytope(models: &[LinearPredictor], h: usize, blocks: &[Block]) -> Result<PolytopeModel, PolytopeError> {
    let stats = entry_stats(models)?;
    let ranked = ranked_entries(&stats, blocks);
    if h > ranked.len() {
        return Err(PolytopeError::TooManyThresholds {
            h,
            available: ranked.len(),
        });
    }
    let varied: Vec<EntryId> = ranked.iter().take(h).map(|(e, _)| *e).collect();

    let mut vertices = vec![Vertex {
        a: stats.a.mean.clone(),
        b: stats.b.mean.clone(),
        b_w: stats.b_w.mean.clone(),
    }];
    for e in &varied {
        let s = stats.block(e.block);
        let (hi, lo) = (s.max[(e.row, e.col)], s.min[(e.row, e.col)]);
        let mut low = vertices.clone();
        for v in &mut vertices {
            v.block_mut(e.block)[(e.row, e.col)] = hi;
        }
        for v in &mut low {
            v.block_mut(e.block)[(e.row, e.col)] = lo;
        }
        vertices.extend(low);
    }

    let mut sources: Vec<String> = models.iter().map(content_hash).collect();
    sources.sort();
    let mut chosen = blocks.to_vec();
    chosen.sort();
    chosen.dedup();
    Ok(PolytopeModel {
        h,
        blocks: chosen,
        varied,
        vertices,
        stats,
        sources,
        dictionary: models[0].dictionary.clone(),
    })
}

/// `Σ α_i (Ã_i, B̃_i, B̃_wi)`
pub fn convex_combine(alphas: &[f64], vertices: &[Vertex]) -> Result<LinearPredictor, PolytopeError> {
    if vertices.is_empty() {
        return Err(PolytopeError::Empty);
    }
    if alphas.len() != vertices.len() {
        return Err(PolytopeError::Weights(format!(
            "{} weights for {} vertices",
            alphas.len(),
            vertices.len()
        )));
    }
    if let Some(a) = alphas.iter().find(|a| !(**a >= 0.0) || !a.is_finite()) {
        return Err(PolytopeError::Weights(format!("weight {a} is not a nonnegative number")));
    }
    let sum: f64 = alphas.iter().sum();
    if (sum - 1.0).abs() > 1e-12 {
        return Err(PolytopeError::Weights(format!("weights sum to {sum}")));
    }
    let v0 = &vertices[0];
    let mut a = DMatrix::zeros(v0.a.nrows(), v0.a.ncols());
    let mut b = DMatrix::zeros(v0.b.nrows(), v0.b.ncols());
    let mut b_w = DMatrix::zeros(v0.b_w.nrows(), v0.b_w.ncols());
    for (w, v) in alphas.iter().zip(vertices) {
        a += &v.a * *w;
        b += &v.b * *w;
        b_w += &v.b_w * *w;
    }
    let mut p = LinearPredictor::new(a, b, b_w);
    p.dataset_id = "convex-combination".into();
    Ok(p)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpreadEntry {
    pub entry: EntryId,
    pub min: f64,
    pub max: f64,
    pub spread: f64,
    pub varied: bool,
}

/// Ranked spreads of the selected blocks plus a 10-bin histogram over
/// `[0, largest spread]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpreadReport {
    pub entries: Vec<SpreadEntry>,
    pub bin_width: f64,
    pub histogram: Vec<usize>,
}

pub fn spread_report(poly: &PolytopeModel) -> SpreadReport {
    let ranked = ranked_entries(&poly.stats, &poly.blocks);
    let top = ranked.first().map_or(0.0, |e| e.1);
    let bins = 10;
    let bin_width = if top > 0.0 { top / bins as f64 } else { 0.0 };
    let mut histogram = vec![0; bins];
    let entries = ranked
        .iter()
        .map(|&(entry, spread)| {
            let bin = if bin_width > 0.0 {
                ((spread / bin_width) as usize).min(bins - 1)
            } else {
                0
            };
            histogram[bin] += 1;
            let s = poly.stats.block(entry.block);
            SpreadEntry {
                entry,
                min: s.min[(entry.row, entry.col)],
                max: s.max[(entry.row, entry.col)],
                spread,
                varied: poly.varied.contains(&entry),
            }
        })
        .collect();
    SpreadReport {
        entries,
        bin_width,
        histogram,
    }
}
