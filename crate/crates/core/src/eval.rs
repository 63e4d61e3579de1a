//! Ranking metrics, paired significance tests and report files.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::baselines::{BaselineError, Ranker};
use crate::features::ViewingEvent;
use crate::model::rank_of;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("hit vectors differ in length: {left} vs {right}")]
    Length { left: usize, right: usize },
    #[error("no ranks to aggregate")]
    Empty,
    #[error("rank must be at least 1")]
    Rank,
    #[error(transparent)]
    Ranker(#[from] BaselineError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, EvalError>;

fn check_ranks(ranks: &[usize]) -> Result<()> {
    if ranks.is_empty() {
        return Err(EvalError::Empty);
    }
    if ranks.contains(&0) {
        return Err(EvalError::Rank);
    }
    Ok(())
}

/// Fraction of targets ranked within the top `k`.
pub fn hit_ratio(ranks: &[usize], k: usize) -> Result<f64> {
    if k < 1 {
        return Err(EvalError::Config("K must be at least 1".into()));
    }
    check_ranks(ranks)?;
    Ok(ranks.iter().filter(|&&r| r <= k).count() as f64 / ranks.len() as f64)
}

/// Mean reciprocal rank.
pub fn mrr(ranks: &[usize]) -> Result<f64> {
    check_ranks(ranks)?;
    // Summed in input order, so the result does not depend on how the ranks
    // were computed.
    Ok(ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / ranks.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum McNemarTest {
    /// Two-sided binomial test on the discordant pairs.
    Exact,
    /// Continuity-corrected χ² with one degree of freedom.
    ChiSquare,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McNemar {
    /// `min(b, c)` for the exact test, the corrected χ² otherwise.
    pub statistic: f64,
    pub p_value: f64,
    /// A hit, B miss.
    pub b: usize,
    /// A miss, B hit.
    pub c: usize,
    pub test: McNemarTest,
}

/// Below this many discordant pairs the exact binomial test is used.
pub const MCNEMAR_EXACT_BELOW: usize = 25;

pub fn mcnemar(hits_a: &[bool], hits_b: &[bool]) -> Result<McNemar> {
    if hits_a.len() != hits_b.len() {
        return Err(EvalError::Length {
            left: hits_a.len(),
            right: hits_b.len(),
        });
    }
    let b = hits_a.iter().zip(hits_b).filter(|&(&a, &b)| a && !b).count();
    let c = hits_a.iter().zip(hits_b).filter(|&(&a, &b)| !a && b).count();
    Ok(mcnemar_counts(b, c))
}

/// McNemar's test from the discordant counts alone.
pub fn mcnemar_counts(b: usize, c: usize) -> McNemar {
    let n = b + c;
    if n < MCNEMAR_EXACT_BELOW {
        let k = b.min(c);
        // Two-sided: double the smaller tail, capped at 1.
        let mut tail = 0.0;
        let mut coef = 1.0; // C(n, 0)
        for i in 0..=k {
            if i > 0 {
                coef = coef * (n - i + 1) as f64 / i as f64;
            }
            tail += coef;
        }
        let p = (2.0 * tail / 2f64.powi(n as i32)).min(1.0);
        McNemar {
            statistic: k as f64,
            p_value: p,
            b,
            c,
            test: McNemarTest::Exact,
        }
    } else {
        let d = (b as f64 - c as f64).abs() - 1.0;
        let x = d * d / n as f64;
        McNemar {
            statistic: x,
            p_value: chi2_sf_1dof(x),
            b,
            c,
            test: McNemarTest::ChiSquare,
        }
    }
}

/// Upper tail of the χ² distribution with one degree of freedom.
pub fn chi2_sf_1dof(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    libm::erfc((x / 2.0).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub method: String,
    pub ks: Vec<usize>,
    /// `hit_ratios[i]` is HR@`ks[i]`.
    pub hit_ratios: Vec<f64>,
    pub mrr: f64,
    /// 1-based target rank per test event; `catalog_size + 1` when the
    /// target is not in the catalog.
    pub ranks: Vec<usize>,
    pub hits_at_1: Vec<bool>,
    pub n_test: usize,
    pub n_missing: usize,
    pub catalog_size: usize,
}

impl EvalReport {
    pub fn hit_ratio(&self, k: usize) -> Result<f64> {
        hit_ratio(&self.ranks, k)
    }

    pub fn hits_at(&self, k: usize) -> Vec<bool> {
        self.ranks.iter().map(|&r| r <= k).collect()
    }

    /// HR@K for every K from 1 to the catalog size.
    pub fn curve(&self) -> Vec<f64> {
        let mut counts = vec![0usize; self.catalog_size + 2];
        for &r in &self.ranks {
            counts[r.min(self.catalog_size + 1)] += 1;
        }
        let n = self.ranks.len() as f64;
        let mut acc = 0;
        (1..=self.catalog_size)
            .map(|k| {
                acc += counts[k];
                acc as f64 / n
            })
            .collect()
    }
}

/// Ranks each test event's genre with `ranker` and aggregates the metrics.
///
/// Events are scored in parallel; the query nonce is the event's position,
/// so the report does not depend on scheduling.
pub fn evaluate(ranker: &dyn Ranker, test: &[ViewingEvent], ks: &[usize]) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(EvalError::Empty);
    }
    if ks.contains(&0) {
        return Err(EvalError::Config("K must be at least 1".into()));
    }
    let catalog = ranker.catalog();
    let size = catalog.len();
    let ranks: Vec<usize> = test
        .par_iter()
        .enumerate()
        .map(|(i, e)| -> Result<usize> {
            let scores = ranker.scores(e, i as u64)?;
            Ok(match catalog.id_of(&e.genre) {
                Some(t) => rank_of(&scores, t),
                None => size + 1,
            })
        })
        .collect::<Result<_>>()?;
    let hit_ratios = ks.iter().map(|&k| hit_ratio(&ranks, k)).collect::<Result<_>>()?;
    Ok(EvalReport {
        method: ranker.name().to_string(),
        ks: ks.to_vec(),
        hit_ratios,
        mrr: mrr(&ranks)?,
        hits_at_1: ranks.iter().map(|&r| r == 1).collect(),
        n_missing: ranks.iter().filter(|&&r| r > size).count(),
        n_test: ranks.len(),
        ranks,
        catalog_size: size,
    })
}

/// Long-format metric table: `method,metric,k,value` with one `hr` row per
/// configured K and one `mrr` row (empty K) per method.
pub fn write_table<W: Write>(reports: &[EvalReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["method", "metric", "k", "value"])?;
    for r in reports {
        for (k, hr) in r.ks.iter().zip(&r.hit_ratios) {
            w.write_record([r.method.as_str(), "hr", &k.to_string(), &hr.to_string()])?;
        }
        w.write_record([r.method.as_str(), "mrr", "", &r.mrr.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// `method,k,hit_ratio` for K = 1..catalog size.
pub fn write_curve<W: Write>(reports: &[EvalReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["method", "k", "hit_ratio"])?;
    for r in reports {
        for (i, hr) in r.curve().iter().enumerate() {
            w.write_record([r.method.as_str(), &(i + 1).to_string(), &hr.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairwiseTest {
    pub method_a: String,
    pub method_b: String,
    pub k: usize,
    pub result: McNemar,
}

/// McNemar tests on hit@`k` for every unordered pair of reports.
pub fn pairwise_mcnemar(reports: &[EvalReport], k: usize) -> Result<Vec<PairwiseTest>> {
    let mut out = Vec::new();
    for (i, a) in reports.iter().enumerate() {
        for b in &reports[i + 1..] {
            out.push(PairwiseTest {
                method_a: a.method.clone(),
                method_b: b.method.clone(),
                k,
                result: mcnemar(&a.hits_at(k), &b.hits_at(k))?,
            });
        }
    }
    Ok(out)
}

pub fn write_mcnemar<W: Write>(tests: &[PairwiseTest], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["method_a", "method_b", "k", "b", "c", "statistic", "p_value", "test"])?;
    for t in tests {
        let test = match t.result.test {
            McNemarTest::Exact => "exact",
            McNemarTest::ChiSquare => "chi_square",
        };
        w.write_record([
            t.method_a.clone(),
            t.method_b.clone(),
            t.k.to_string(),
            t.result.b.to_string(),
            t.result.c.to_string(),
            t.result.statistic.to_string(),
            t.result.p_value.to_string(),
            test.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
