//! Filtered link-prediction ranking: mean rank and Hits@k per direction.

use serde::{Deserialize, Serialize};

use crate::cdc::{self, CdcParams};
use crate::error::{Error, Result};
use crate::kgdata::{Triplet, TripletIndex};
use crate::numerics::Real;
use crate::text_encoder::{CdcPlusScorer, PlusScore};

/// Anything that assigns plausibility scores to triplets.
pub trait Scorer: Sync {
    fn score_batch(&self, triplets: &[Triplet]) -> Result<Vec<f64>>;
}

/// Eval-mode structural scores.
pub struct CdcScorer<'a, T>(pub &'a CdcParams<T>);

impl<T: Real> Scorer for CdcScorer<'_, T> {
    fn score_batch(&self, triplets: &[Triplet]) -> Result<Vec<f64>> {
        Ok(cdc::score_batch(triplets, self.0)?.into_iter().map(Real::f64).collect())
    }
}

/// A description-augmented scorer fixed to one of its outputs.
pub struct PlusScorer<'a, T> {
    pub inner: CdcPlusScorer<'a, T>,
    pub which: PlusScore,
}

impl<T: Real> Scorer for PlusScorer<'_, T> {
    fn score_batch(&self, triplets: &[Triplet]) -> Result<Vec<f64>> {
        Ok(self
            .inner
            .score_batch(triplets, self.which)?
            .into_iter()
            .map(Real::f64)
            .collect())
    }
}

/// Wraps a closure as a [`Scorer`].
pub struct FnScorer<F>(pub F);

impl<F> Scorer for FnScorer<F>
where
    F: Fn(&[Triplet]) -> Vec<f64> + Sync,
{
    fn score_batch(&self, triplets: &[Triplet]) -> Result<Vec<f64>> {
        Ok((self.0)(triplets))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Corrupt the head: predict `h` given `(r, t)`.
    Head,
    /// Corrupt the tail.
    Tail,
}

impl Direction {
    pub const BOTH: [Direction; 2] = [Direction::Head, Direction::Tail];

    pub fn replace(self, t: Triplet, e: usize) -> Triplet {
        match self {
            Direction::Head => Triplet::new(e, t.r, t.t),
            Direction::Tail => Triplet::new(t.h, t.r, e),
        }
    }

    pub fn target(self, t: Triplet) -> usize {
        match self {
            Direction::Head => t.h,
            Direction::Tail => t.t,
        }
    }
}

/// Candidates whose corruption of `triplet` is not a known positive, plus
/// the true entity.
pub fn filtered_candidates(
    triplet: Triplet,
    direction: Direction,
    candidates: &[usize],
    filter: &TripletIndex,
) -> Vec<usize> {
    let truth = direction.target(triplet);
    let mut out: Vec<usize> = candidates
        .iter()
        .copied()
        .filter(|&e| e == truth || !filter.contains(&direction.replace(triplet, e)))
        .collect();
    if !out.contains(&truth) {
        out.push(truth);
    }
    out
}

/// Rank of a triplet among its filtered corruptions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rank {
    /// `1 +` candidates scoring strictly higher.
    pub optimistic: usize,
    /// `1 +` other candidates scoring at least as high.
    pub pessimistic: usize,
    pub candidates: usize,
}

pub fn rank_triplet<S: Scorer + ?Sized>(
    triplet: Triplet,
    direction: Direction,
    scorer: &S,
    candidates: &[usize],
    filter: &TripletIndex,
) -> Result<Rank> {
    let truth = direction.target(triplet);
    let ents = filtered_candidates(triplet, direction, candidates, filter);
    let mut batch = Vec::with_capacity(ents.len());
    batch.push(triplet);
    batch.extend(
        ents.iter()
            .filter(|&&e| e != truth)
            .map(|&e| direction.replace(triplet, e)),
    );
    let scores = scorer.score_batch(&batch)?;
    if scores.len() != batch.len() {
        return Err(Error::Shape(format!(
            "scorer returned {} scores for {} triplets",
            scores.len(),
            batch.len()
        )));
    }
    for (t, s) in batch.iter().zip(&scores) {
        if !s.is_finite() {
            return Err(Error::NonFiniteScore { h: t.h, r: t.r, t: t.t });
        }
    }
    let pos = scores[0];
    let above = scores[1..].iter().filter(|&&s| s > pos).count();
    let tied = scores[1..].iter().filter(|&&s| s == pos).count();
    Ok(Rank {
        optimistic: 1 + above,
        pessimistic: 1 + above + tied,
        candidates: batch.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DirectionReport {
    pub mr: f64,
    pub hits10: f64,
    pub hits1: f64,
    /// Same metrics with ties counted against the positive.
    pub mr_pessimistic: f64,
    pub hits10_pessimistic: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Averaged {
    pub mr: f64,
    pub hits10: f64,
    pub hits1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankingReport {
    pub head: DirectionReport,
    pub tail: DirectionReport,
    pub averaged: Averaged,
}

/// Neumaier-compensated sum.
fn compensated_sum(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (mut sum, mut c) = (0.0f64, 0.0f64);
    for x in xs {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            c += (sum - t) + x;
        } else {
            c += (x - t) + sum;
        }
        sum = t;
    }
    sum + c
}

fn direction_report(ranks: &[Rank]) -> DirectionReport {
    let n = ranks.len() as f64;
    let frac = |pred: &dyn Fn(&Rank) -> bool| ranks.iter().filter(|r| pred(r)).count() as f64 / n;
    DirectionReport {
        mr: compensated_sum(ranks.iter().map(|r| r.optimistic as f64)) / n,
        hits10: frac(&|r| r.optimistic <= 10),
        hits1: frac(&|r| r.optimistic <= 1),
        mr_pessimistic: compensated_sum(ranks.iter().map(|r| r.pessimistic as f64)) / n,
        hits10_pessimistic: frac(&|r| r.pessimistic <= 10),
        n: ranks.len(),
    }
}

/// Runs `f` on a pool of `threads` workers, or the global pool if `None`.
pub fn with_threads<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> Result<R> {
    match threads {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// Ranks every triplet of `test` in both directions.
pub fn rank_all<S: Scorer + ?Sized>(
    test: &[Triplet],
    scorer: &S,
    candidates: &[usize],
    filter: &TripletIndex,
    direction: Direction,
) -> Result<Vec<Rank>> {
    use rayon::prelude::*;
    test.par_iter()
        .map(|&t| rank_triplet(t, direction, scorer, candidates, filter))
        .collect()
}

pub fn evaluate<S: Scorer + ?Sized>(
    test: &[Triplet],
    scorer: &S,
    candidates: &[usize],
    filter: &TripletIndex,
    threads: Option<usize>,
) -> Result<RankingReport> {
    if test.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    let (head, tail) = with_threads(threads, || {
        Ok::<_, Error>((
            rank_all(test, scorer, candidates, filter, Direction::Head)?,
            rank_all(test, scorer, candidates, filter, Direction::Tail)?,
        ))
    })??;
    let head = direction_report(&head);
    let tail = direction_report(&tail);
    Ok(RankingReport {
        head,
        tail,
        averaged: Averaged {
            mr: 0.5 * (head.mr + tail.mr),
            hits10: 0.5 * (head.hits10 + tail.hits10),
            hits1: 0.5 * (head.hits1 + tail.hits1),
        },
    })
}

/// Test triplets grouped by which side holds an entity unseen in training.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ZeroShotSplit {
    /// New head, seen tail.
    pub new_head: Vec<Triplet>,
    /// Seen head, new tail.
    pub new_tail: Vec<Triplet>,
    /// Both new.
    pub new_both: Vec<Triplet>,
    /// Triplets whose entities were both seen.
    pub excluded: usize,
}

impl ZeroShotSplit {
    pub const NAMES: [&'static str; 3] = ["N-h", "N-t", "N-ht"];

    pub fn parts(&self) -> [&[Triplet]; 3] {
        [&self.new_head, &self.new_tail, &self.new_both]
    }

    pub fn len(&self) -> usize {
        self.new_head.len() + self.new_tail.len() + self.new_both.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn split_zero_shot(test: &[Triplet], seen: impl Fn(usize) -> bool) -> ZeroShotSplit {
    let mut split = ZeroShotSplit::default();
    for &t in test {
        match (seen(t.h), seen(t.t)) {
            (false, true) => split.new_head.push(t),
            (true, false) => split.new_tail.push(t),
            (false, false) => split.new_both.push(t),
            (true, true) => split.excluded += 1,
        }
    }
    if split.excluded > 0 {
        log::warn!(
            "zero-shot split: excluded {} triplets with both entities seen",
            split.excluded
        );
    }
    split
}

/// `Σ size_i · h_i / Σ size_i` over `(h_i, size_i)` pairs.
pub fn weighted_total(parts: &[(f64, usize)]) -> Result<f64> {
    let total: usize = parts.iter().map(|p| p.1).sum();
    if total == 0 {
        return Err(Error::EmptyTestSet);
    }
    Ok(compensated_sum(parts.iter().map(|&(h, n)| h * n as f64)) / total as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroShotPart {
    pub name: String,
    pub size: usize,
    /// `None` when the part is empty.
    pub report: Option<RankingReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroShotReport {
    pub parts: Vec<ZeroShotPart>,
    /// Size-weighted averaged Hits@10 over the non-empty parts.
    pub weighted_hits10: f64,
    pub excluded: usize,
}

pub fn evaluate_zero_shot<S: Scorer + ?Sized>(
    split: &ZeroShotSplit,
    scorer: &S,
    candidates: &[usize],
    filter: &TripletIndex,
    threads: Option<usize>,
) -> Result<ZeroShotReport> {
    let mut parts = Vec::new();
    let mut weights = Vec::new();
    for (name, triplets) in ZeroShotSplit::NAMES.iter().zip(split.parts()) {
        let report = if triplets.is_empty() {
            None
        } else {
            let r = evaluate(triplets, scorer, candidates, filter, threads)?;
            weights.push((r.averaged.hits10, triplets.len()));
            Some(r)
        };
        parts.push(ZeroShotPart {
            name: name.to_string(),
            size: triplets.len(),
            report,
        });
    }
    Ok(ZeroShotReport {
        parts,
        weighted_hits10: weighted_total(&weights)?,
        excluded: split.excluded,
    })
}
