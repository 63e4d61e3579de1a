//! Embedding export, exact t-SNE under cosine distance, and neighbour
//! queries over exported embeddings.

use std::cmp::Ordering;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::index::sample;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{ViewingEvent, TIME_SLOT};
use crate::model::{precompute_content_embeddings, JcceModel, ModelError};
use crate::tensor::{RngState, Tensor};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("zero-norm embedding in row {0}")]
    ZeroNorm(usize),
    #[error("malformed embedding table at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, AnalysisError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowKind {
    Context,
    Content,
}

impl RowKind {
    fn as_str(self) -> &'static str {
        match self {
            RowKind::Context => "context",
            RowKind::Content => "content",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRow {
    pub kind: RowKind,
    pub id: String,
    /// Genre watched (context rows) or the genre itself (content rows).
    pub true_genre: String,
    /// Rank-1 recommendation; empty for content rows.
    pub rec_genre: String,
    /// Empty for content rows.
    pub time_slot: String,
    pub embedding: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EmbeddingTable {
    pub rows: Vec<EmbeddingRow>,
}

impl EmbeddingTable {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.rows.first().map_or(0, |r| r.embedding.len())
    }

    /// Embeddings as an `n x E` matrix.
    pub fn matrix(&self) -> Tensor {
        let dim = self.dim();
        Tensor::from_vec(
            self.rows.len(),
            dim,
            self.rows.iter().flat_map(|r| r.embedding.iter().copied()).collect(),
        )
        .expect("rows share a dimension")
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = ["kind", "id", "true_genre", "rec_genre", "time_slot"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        header.extend((0..self.dim()).map(|i| format!("e{i}")));
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![
                r.kind.as_str().to_string(),
                r.id.clone(),
                r.true_genre.clone(),
                r.rec_genre.clone(),
                r.time_slot.clone(),
            ];
            rec.extend(r.embedding.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(input);
        let header = rd.headers()?.clone();
        let fixed = ["kind", "id", "true_genre", "rec_genre", "time_slot"];
        if header.len() < fixed.len() || header.iter().zip(fixed).any(|(h, f)| h != f) {
            return Err(AnalysisError::Parse {
                line: 1,
                message: format!("expected header starting with {}", fixed.join(",")),
            });
        }
        let dim = header.len() - fixed.len();
        let mut rows = Vec::new();
        for (i, rec) in rd.records().enumerate() {
            let line = i + 2;
            let rec = rec?;
            let bad = |message: String| AnalysisError::Parse { line, message };
            let kind = match &rec[0] {
                "context" => RowKind::Context,
                "content" => RowKind::Content,
                other => return Err(bad(format!("unknown row kind {other:?}"))),
            };
            let embedding = (0..dim)
                .map(|j| rec[fixed.len() + j].parse::<f64>().map_err(|e| bad(e.to_string())))
                .collect::<Result<Vec<f64>>>()?;
            rows.push(EmbeddingRow {
                kind,
                id: rec[1].to_string(),
                true_genre: rec[2].to_string(),
                rec_genre: rec[3].to_string(),
                time_slot: rec[4].to_string(),
                embedding,
            });
        }
        Ok(EmbeddingTable { rows })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

/// Embeds `sample_size` test contexts drawn without replacement (in test
/// order) plus every catalog genre.
pub fn export_embeddings(
    model: &JcceModel,
    test: &[ViewingEvent],
    sample_size: usize,
    seed: u64,
) -> Result<EmbeddingTable> {
    if sample_size > test.len() {
        return Err(AnalysisError::Config(format!(
            "sample size {sample_size} exceeds the {} test events",
            test.len()
        )));
    }
    let index = precompute_content_embeddings(model)?;
    let catalog = model.space.catalog();
    let mut picks = sample(&mut RngState::derived(seed, "analysis/sample"), test.len(), sample_size).into_vec();
    picks.sort_unstable();
    let mut rows = Vec::with_capacity(sample_size + catalog.len());
    for i in picks {
        let e = &test[i];
        let embedding = model.context_embedding(e)?;
        let top = index.rank(&embedding)?[0].content_id;
        rows.push(EmbeddingRow {
            kind: RowKind::Context,
            id: format!("event-{i}"),
            true_genre: e.genre.clone(),
            rec_genre: catalog.genre(top).to_string(),
            time_slot: e.attrs.get(TIME_SLOT).cloned().unwrap_or_default(),
            embedding,
        });
    }
    for k in 0..catalog.len() {
        rows.push(EmbeddingRow {
            kind: RowKind::Content,
            id: catalog.genre(k).to_string(),
            true_genre: catalog.genre(k).to_string(),
            rec_genre: String::new(),
            time_slot: String::new(),
            embedding: index.embeddings().row(k).to_vec(),
        });
    }
    Ok(EmbeddingTable { rows })
}

fn unit_rows(x: &Tensor) -> Result<Vec<Vec<f64>>> {
    (0..x.rows())
        .map(|i| {
            let r = x.row(i);
            let n = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n == 0.0 {
                return Err(AnalysisError::ZeroNorm(i));
            }
            Ok(r.iter().map(|v| v / n).collect())
        })
        .collect()
}

/// `d(u, v) = 1 - cos(u, v)`: symmetric, zero diagonal, within `[0, 2]`.
pub fn cosine_distances(x: &Tensor) -> Result<Tensor> {
    let n = x.rows();
    let unit = unit_rows(x)?;
    let upper: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (i + 1..n)
                .map(|j| {
                    let c: f64 = unit[i].iter().zip(&unit[j]).map(|(a, b)| a * b).sum();
                    1.0 - c.clamp(-1.0, 1.0)
                })
                .collect()
        })
        .collect();
    let mut d = Tensor::zeros(n, n);
    for (i, row) in upper.iter().enumerate() {
        for (off, &v) in row.iter().enumerate() {
            let j = i + 1 + off;
            d.set(i, j, v);
            d.set(j, i, v);
        }
    }
    Ok(d)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub early_exaggeration: f64,
    pub exaggeration_iterations: usize,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    pub momentum_switch: usize,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        TsneConfig {
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: 200.0,
            early_exaggeration: 12.0,
            exaggeration_iterations: 250,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            momentum_switch: 250,
            seed: 0,
        }
    }
}

impl TsneConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if n < 4 {
            return Err(AnalysisError::Config(format!("t-SNE needs at least 4 points, got {n}")));
        }
        if n > 5000 {
            return Err(AnalysisError::Config(format!("exact t-SNE is limited to 5000 points, got {n}")));
        }
        if !(self.perplexity > 0.0 && self.perplexity < (n - 1) as f64 / 3.0) {
            return Err(AnalysisError::Config(format!(
                "perplexity {} is infeasible for {n} points (must be below {:.3})",
                self.perplexity,
                (n - 1) as f64 / 3.0
            )));
        }
        if self.iterations < 250 {
            return Err(AnalysisError::Config("t-SNE needs at least 250 iterations".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(AnalysisError::Config("t-SNE learning rate must be positive".into()));
        }
        Ok(())
    }
}

/// Conditional affinities `p_{j|i}`, row-normalised, each row's bandwidth
/// found by bisection so that its entropy matches `ln(perplexity)`.
pub fn conditional_affinities(distances: &Tensor, perplexity: f64) -> Tensor {
    let n = distances.rows();
    let target = perplexity.ln();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let d = distances.row(i);
            let mut beta = 1.0;
            let (mut lo, mut hi) = (0.0, f64::INFINITY);
            let mut p = vec![0.0; n];
            for _ in 0..200 {
                // Shift by the nearest neighbour distance for stability.
                let dmin = (0..n).filter(|&j| j != i).map(|j| d[j]).fold(f64::INFINITY, f64::min);
                let mut sum = 0.0;
                let mut weighted = 0.0;
                for j in 0..n {
                    p[j] = if j == i { 0.0 } else { (-beta * (d[j] - dmin)).exp() };
                    sum += p[j];
                    weighted += p[j] * (d[j] - dmin);
                }
                let entropy = sum.ln() + beta * weighted / sum;
                for v in p.iter_mut() {
                    *v /= sum;
                }
                let diff = entropy - target;
                if diff.abs() < 1e-10 {
                    break;
                }
                if diff > 0.0 {
                    lo = beta;
                    beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
                } else {
                    hi = beta;
                    beta = (beta + lo) / 2.0;
                }
            }
            p
        })
        .collect();
    Tensor::from_vec(n, n, rows.into_iter().flatten().collect()).expect("square")
}

#[derive(Debug, Clone, PartialEq)]
pub struct TsneResult {
    /// `n x 2` coordinates.
    pub coords: Tensor,
    /// `(iteration, KL(P || Q))` every 50 iterations, without exaggeration.
    pub kl: Vec<(usize, f64)>,
}

/// Exact t-SNE of the rows of `x` under cosine distance.
pub fn tsne_project(x: &Tensor, cfg: &TsneConfig) -> Result<TsneResult> {
    let n = x.rows();
    cfg.validate(n)?;
    let d = cosine_distances(x)?;
    let cond = conditional_affinities(&d, cfg.perplexity);
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                p[i * n + j] = ((cond.get(i, j) + cond.get(j, i)) / (2.0 * n as f64)).max(1e-12);
            }
        }
    }

    let normal = Normal::new(0.0, 1e-4).expect("valid sd");
    let mut rng = RngState::derived(cfg.seed, "analysis/tsne");
    let mut y: Vec<[f64; 2]> = (0..n).map(|_| [normal.sample(&mut rng), normal.sample(&mut rng)]).collect();
    let mut update = vec![[0.0; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    let mut num = vec![0.0; n * n];
    let mut kl = Vec::new();

    for it in 0..cfg.iterations {
        let exaggeration = if it < cfg.exaggeration_iterations { cfg.early_exaggeration } else { 1.0 };
        let momentum = if it < cfg.momentum_switch { cfg.initial_momentum } else { cfg.final_momentum };
        let mut zsum = 0.0;
        for i in 0..n {
            for j in 0..n {
                let v = if i == j {
                    0.0
                } else {
                    let dx = y[i][0] - y[j][0];
                    let dy = y[i][1] - y[j][1];
                    1.0 / (1.0 + dx * dx + dy * dy)
                };
                num[i * n + j] = v;
                zsum += v;
            }
        }
        if (it + 1) % 50 == 0 || it == 0 {
            let mut k = 0.0;
            for idx in 0..n * n {
                if idx / n != idx % n {
                    let q = (num[idx] / zsum).max(1e-12);
                    k += p[idx] * (p[idx] / q).ln();
                }
            }
            kl.push((it + 1, k));
        }
        for i in 0..n {
            let mut g = [0.0; 2];
            for j in 0..n {
                if i == j {
                    continue;
                }
                let w = num[i * n + j];
                let m = (exaggeration * p[i * n + j] - w / zsum) * w;
                g[0] += 4.0 * m * (y[i][0] - y[j][0]);
                g[1] += 4.0 * m * (y[i][1] - y[j][1]);
            }
            for c in 0..2 {
                gains[i][c] = if (g[c] > 0.0) != (update[i][c] > 0.0) {
                    gains[i][c] + 0.2
                } else {
                    (gains[i][c] * 0.8).max(0.01)
                };
                update[i][c] = momentum * update[i][c] - cfg.learning_rate * gains[i][c] * g[c];
            }
        }
        for i in 0..n {
            y[i][0] += update[i][0];
            y[i][1] += update[i][1];
        }
        let mean = y.iter().fold([0.0; 2], |a, v| [a[0] + v[0], a[1] + v[1]]);
        for v in y.iter_mut() {
            v[0] -= mean[0] / n as f64;
            v[1] -= mean[1] / n as f64;
        }
    }
    Ok(TsneResult {
        coords: Tensor::from_vec(n, 2, y.into_iter().flatten().collect()).expect("n x 2"),
        kl,
    })
}

/// Projection CSV: the table's label columns followed by `x,y`.
pub fn write_projection<W: Write>(table: &EmbeddingTable, coords: &Tensor, out: W) -> Result<()> {
    if coords.shape() != (table.len(), 2) {
        return Err(AnalysisError::Config(format!(
            "projection has shape {:?}, expected ({}, 2)",
            coords.shape(),
            table.len()
        )));
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["kind", "id", "true_genre", "rec_genre", "time_slot", "x", "y"])?;
    for (i, r) in table.rows.iter().enumerate() {
        w.write_record([
            r.kind.as_str(),
            &r.id,
            &r.true_genre,
            &r.rec_genre,
            &r.time_slot,
            &coords.get(i, 0).to_string(),
            &coords.get(i, 1).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// The `k` rows most cosine-similar to `query`, as `(row id, similarity)`,
/// ties broken by ascending id.
pub fn nearest_neighbors(query: &[f64], table: &EmbeddingTable, k: usize) -> Result<Vec<(String, f64)>> {
    if k > table.len() {
        return Err(AnalysisError::Config(format!("k = {k} exceeds the {} table rows", table.len())));
    }
    let qn = query.iter().map(|v| v * v).sum::<f64>().sqrt();
    if qn == 0.0 {
        return Err(AnalysisError::Config("zero-norm query embedding".into()));
    }
    let mut scored: Vec<(&str, f64)> = table
        .rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            if r.embedding.len() != query.len() {
                return Err(AnalysisError::Config(format!(
                    "query has dimension {}, table rows have {}",
                    query.len(),
                    r.embedding.len()
                )));
            }
            let rn = r.embedding.iter().map(|v| v * v).sum::<f64>().sqrt();
            if rn == 0.0 {
                return Err(AnalysisError::ZeroNorm(i));
            }
            let dot: f64 = r.embedding.iter().zip(query).map(|(a, b)| a * b).sum();
            Ok((r.id.as_str(), (dot / (rn * qn)).clamp(-1.0, 1.0)))
        })
        .collect::<Result<_>>()?;
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then(a.0.cmp(b.0)));
    Ok(scored.into_iter().take(k).map(|(id, s)| (id.to_string(), s)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn planted(n_per: usize, dim: usize, seed: u64) -> (Tensor, Vec<usize>) {
        let mut rng = RngState::seed_from(seed);
        let noise = Normal::new(0.0, 0.3).unwrap();
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for c in 0..3 {
            for _ in 0..n_per {
                for k in 0..dim {
                    let centre = if k % 3 == c { 3.0 } else { 0.0 };
                    data.push(centre + noise.sample(&mut rng));
                }
                labels.push(c);
            }
        }
        (Tensor::from_vec(3 * n_per, dim, data).unwrap(), labels)
    }

    #[test]
    fn distance_matrix_properties() {
        let (x, _) = planted(5, 6, 1);
        let d = cosine_distances(&x).unwrap();
        for i in 0..x.rows() {
            assert_eq!(d.get(i, i), 0.0);
            for j in 0..x.rows() {
                assert_eq!(d.get(i, j), d.get(j, i));
                assert!((0.0..=2.0).contains(&d.get(i, j)));
            }
        }
        let zero = Tensor::from_rows(&[[0.0, 0.0], [1.0, 0.0]]);
        assert!(matches!(cosine_distances(&zero), Err(AnalysisError::ZeroNorm(0))));
    }

    #[test]
    fn affinity_rows_sum_to_one_with_target_perplexity() {
        let (x, _) = planted(20, 10, 2);
        let d = cosine_distances(&x).unwrap();
        let p = conditional_affinities(&d, 10.0);
        for i in 0..p.rows() {
            let row = p.row(i);
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            let h: f64 = -row.iter().filter(|&&v| v > 0.0).map(|v| v * v.ln()).sum::<f64>();
            assert!((h.exp() - 10.0).abs() < 1e-3, "perplexity {}", h.exp());
        }
    }

    #[test]
    fn infeasible_perplexity() {
        let (x, _) = planted(3, 4, 0);
        let cfg = TsneConfig::default();
        assert!(matches!(tsne_project(&x, &cfg), Err(AnalysisError::Config(_))));
    }

    fn planar_distance(y: &Tensor, i: usize, j: usize) -> f64 {
        ((y.get(i, 0) - y.get(j, 0)).powi(2) + (y.get(i, 1) - y.get(j, 1)).powi(2)).sqrt()
    }

    fn median(mut v: Vec<f64>) -> f64 {
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v[v.len() / 2]
    }

    #[test]
    fn identical_points_land_together() {
        let (mut x, _) = planted(10, 6, 3);
        let r0 = x.row(0).to_vec();
        x.row_mut(1).copy_from_slice(&r0);
        let cfg = TsneConfig {
            perplexity: 5.0,
            iterations: 500,
            learning_rate: 10.0,
            ..TsneConfig::default()
        };
        let y = tsne_project(&x, &cfg).unwrap().coords;
        let all: Vec<f64> = (0..y.rows())
            .flat_map(|i| (i + 1..y.rows()).map(move |j| (i, j)))
            .map(|(i, j)| planar_distance(&y, i, j))
            .collect();
        assert!(planar_distance(&y, 0, 1) < 0.05 * median(all));
    }

    #[test]
    fn planted_clusters_separate_and_kl_falls() {
        let (x, labels) = planted(40, 9, 5);
        // Step size scaled to the sample, as 200 overshoots for 120 points.
        let cfg = TsneConfig {
            learning_rate: 20.0,
            ..TsneConfig::default()
        };
        let res = tsne_project(&x, &cfg).unwrap();
        let y = &res.coords;
        let (mut within, mut between) = (Vec::new(), Vec::new());
        for i in 0..y.rows() {
            for j in i + 1..y.rows() {
                let d = planar_distance(y, i, j);
                if labels[i] == labels[j] { within.push(d) } else { between.push(d) }
            }
        }
        assert!(median(within) < 0.5 * median(between));
        // Post-exaggeration the objective trends down; momentum may cause
        // small transient upticks.
        let late: Vec<f64> = res.kl.iter().filter(|(it, _)| *it >= 250).map(|x| x.1).collect();
        assert!(late.windows(2).all(|w| w[1] <= 1.05 * w[0]), "{late:?}");
        assert!(late.last().unwrap() <= &late[0]);
    }

    #[test]
    fn deterministic_given_seed() {
        let (x, _) = planted(8, 5, 4);
        let cfg = TsneConfig {
            perplexity: 5.0,
            iterations: 250,
            ..TsneConfig::default()
        };
        assert_eq!(tsne_project(&x, &cfg).unwrap(), tsne_project(&x, &cfg).unwrap());
    }

    #[test]
    fn empty_sample_exports_only_content_rows() {
        use crate::features::{testutil::event, FeatureSpace, Schema};
        use crate::model::EncoderConfig;
        let events = vec![event("drama-00", "drama"), event("news-00", "news")];
        let space = FeatureSpace::fit(&events, &Schema::default_tv()).unwrap();
        let cfg = EncoderConfig {
            hidden: vec![6],
            out_dim: 3,
            ..EncoderConfig::default()
        };
        let model = JcceModel::new(space, cfg.clone(), cfg, &mut RngState::seed_from(1)).unwrap();
        let t = export_embeddings(&model, &events, 0, 3).unwrap();
        assert_eq!(t.len(), 2);
        assert!(t.rows.iter().all(|r| r.kind == RowKind::Content));
        let t = export_embeddings(&model, &events, 2, 3).unwrap();
        assert_eq!(t.rows[0].embedding, model.context_embedding(&events[0]).unwrap());
        let top = crate::model::recommend(&model, &events[1], &precompute_content_embeddings(&model).unwrap()).unwrap();
        assert_eq!(t.rows[1].rec_genre, model.space.catalog().genre(top[0].content_id));
        assert!(export_embeddings(&model, &events, 3, 3).is_err());
    }

    #[test]
    fn neighbours() {
        let table = EmbeddingTable {
            rows: [("a", [1.0, 0.0]), ("b", [0.0, 1.0]), ("c", [0.0, -1.0]), ("d", [2.0, 0.0])]
                .iter()
                .map(|(id, e)| EmbeddingRow {
                    kind: RowKind::Content,
                    id: id.to_string(),
                    true_genre: id.to_string(),
                    rec_genre: String::new(),
                    time_slot: String::new(),
                    embedding: e.to_vec(),
                })
                .collect(),
        };
        let nn = nearest_neighbors(&[3.0, 0.0], &table, 2).unwrap();
        assert_eq!(nn.iter().map(|x| x.0.as_str()).collect::<Vec<_>>(), vec!["a", "d"]);
        let all = nearest_neighbors(&[0.0, 1.0], &table, 4).unwrap();
        assert_eq!(all[0].0, "b");
        assert_eq!(all.len(), 4);
        assert!(nearest_neighbors(&[0.0, 0.0], &table, 1).is_err());
        assert!(nearest_neighbors(&[1.0, 0.0], &table, 5).is_err());

        let mut buf = Vec::new();
        table.write_csv(&mut buf).unwrap();
        assert_eq!(EmbeddingTable::read_csv(buf.as_slice()).unwrap(), table);
    }
}
