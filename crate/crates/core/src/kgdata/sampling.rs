use std::collections::HashSet;

use rand::seq::{index, SliceRandom};
use rand::Rng;

use super::{Triplet, TripletIndex, TripletSet};
use crate::error::{Error, Result};

/// Consecutive rejected corruptions before sampling gives up.
pub const MAX_REJECTIONS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelationStats {
    /// Mean tails per distinct head.
    pub tph: f64,
    /// Mean heads per distinct tail.
    pub hpt: f64,
    pub p_replace_head: f64,
}

impl RelationStats {
    pub fn p_replace_tail(&self) -> f64 {
        1.0 - self.p_replace_head
    }
}

/// Per-relation head/tail corruption probabilities, from the training split.
#[derive(Debug, Clone)]
pub struct BernStats {
    per_relation: Vec<Option<RelationStats>>,
}

impl BernStats {
    pub fn get(&self, r: usize) -> Result<RelationStats> {
        self.per_relation
            .get(r)
            .copied()
            .flatten()
            .ok_or(Error::UnknownRelationStats(r))
    }

    pub fn p_replace_head(&self, r: usize) -> Result<f64> {
        Ok(self.get(r)?.p_replace_head)
    }

    pub fn num_relations(&self) -> usize {
        self.per_relation.len()
    }
}

pub fn bern_stats(train: &TripletSet, num_relations: usize) -> Result<BernStats> {
    if train.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    let mut count = vec![0usize; num_relations];
    let mut heads: Vec<HashSet<usize>> = vec![HashSet::new(); num_relations];
    let mut tails: Vec<HashSet<usize>> = vec![HashSet::new(); num_relations];
    for t in train.iter() {
        count[t.r] += 1;
        heads[t.r].insert(t.h);
        tails[t.r].insert(t.t);
    }
    let per_relation = (0..num_relations)
        .map(|r| {
            (count[r] > 0).then(|| {
                let tph = count[r] as f64 / heads[r].len() as f64;
                let hpt = count[r] as f64 / tails[r].len() as f64;
                RelationStats {
                    tph,
                    hpt,
                    p_replace_head: tph / (tph + hpt),
                }
            })
        })
        .collect();
    Ok(BernStats { per_relation })
}

/// Corrupts the head (with probability `p_replace_head`) or the tail of
/// `pos`, redrawing the replacement until the result is not in `known`.
pub fn sample_negative<R: Rng + ?Sized>(
    pos: Triplet,
    stats: &BernStats,
    num_entities: usize,
    known: &TripletIndex,
    rng: &mut R,
) -> Result<Triplet> {
    let replace_head = rng.random::<f64>() < stats.p_replace_head(pos.r)?;
    for _ in 0..MAX_REJECTIONS {
        let e = rng.random_range(0..num_entities);
        let cand = if replace_head {
            Triplet { h: e, ..pos }
        } else {
            Triplet { t: e, ..pos }
        };
        if !known.contains(&cand) {
            return Ok(cand);
        }
    }
    Err(Error::SamplingExhausted {
        h: pos.h,
        r: pos.r,
        t: pos.t,
        attempts: MAX_REJECTIONS,
    })
}

/// Aligned positive/negative pairs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub positives: Vec<Triplet>,
    pub negatives: Vec<Triplet>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.positives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positives.is_empty()
    }

    /// Positives followed by negatives.
    pub fn all(&self) -> impl Iterator<Item = &Triplet> {
        self.positives.iter().chain(&self.negatives)
    }

    pub fn from_positives<R: Rng + ?Sized>(
        positives: Vec<Triplet>,
        stats: &BernStats,
        num_entities: usize,
        known: &TripletIndex,
        rng: &mut R,
    ) -> Result<Self> {
        let negatives = positives
            .iter()
            .map(|&p| sample_negative(p, stats, num_entities, known, rng))
            .collect::<Result<_>>()?;
        Ok(Self { positives, negatives })
    }
}

/// `n_b` positives drawn without replacement, each with a fresh negative.
pub fn make_batch<R: Rng + ?Sized>(
    train: &TripletSet,
    n_b: usize,
    stats: &BernStats,
    num_entities: usize,
    known: &TripletIndex,
    rng: &mut R,
) -> Result<Batch> {
    if n_b == 0 || n_b > train.len() {
        return Err(Error::BatchSize {
            requested: n_b,
            available: train.len(),
        });
    }
    let positives = index::sample(rng, train.len(), n_b)
        .into_iter()
        .map(|i| train.triplets[i])
        .collect();
    Batch::from_positives(positives, stats, num_entities, known, rng)
}

/// Shuffles `0..n` and slices it into batches of `n_b`; the last batch may
/// be short, so every positive appears exactly once per epoch.
pub fn epoch_batches<R: Rng + ?Sized>(n: usize, n_b: usize, rng: &mut R) -> Result<Vec<Vec<usize>>> {
    if n_b == 0 || n_b > n {
        return Err(Error::BatchSize {
            requested: n_b,
            available: n,
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    Ok(order.chunks(n_b).map(<[usize]>::to_vec).collect())
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::kgdata::Split;

    fn set(ts: &[(usize, usize, usize)]) -> TripletSet {
        TripletSet::from_triplets(Split::Train, ts.iter().map(|&(h, r, t)| Triplet::new(h, r, t)))
    }

    #[test]
    fn stats_examples() {
        // a=0, b=1, x=2, y=3, z=4
        let s = bern_stats(&set(&[(0, 0, 2), (0, 0, 3), (1, 0, 2)]), 1).unwrap();
        let r = s.get(0).unwrap();
        assert_eq!((r.tph, r.hpt, r.p_replace_head), (1.5, 1.5, 0.5));

        let s = bern_stats(&set(&[(0, 0, 2)]), 1).unwrap();
        let r = s.get(0).unwrap();
        assert_eq!((r.tph, r.hpt, r.p_replace_head), (1.0, 1.0, 0.5));

        let s = bern_stats(&set(&[(0, 0, 2), (0, 0, 3), (0, 0, 4)]), 1).unwrap();
        let r = s.get(0).unwrap();
        assert_eq!((r.tph, r.hpt, r.p_replace_head), (3.0, 1.0, 0.75));
        assert_eq!(r.p_replace_head + r.p_replace_tail(), 1.0);
    }

    #[test]
    fn stats_errors() {
        assert!(bern_stats(&TripletSet::new(Split::Train), 1).is_err());
        let s = bern_stats(&set(&[(0, 0, 1)]), 2).unwrap();
        assert!(matches!(s.p_replace_head(1), Err(Error::UnknownRelationStats(1))));
    }

    fn forced(p: f64) -> BernStats {
        BernStats {
            per_relation: vec![Some(RelationStats {
                tph: 1.0,
                hpt: 1.0,
                p_replace_head: p,
            })],
        }
    }

    #[test]
    fn forced_branches() {
        let train = set(&[(0, 0, 1)]);
        let known = TripletIndex::from_sets([&train]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pos = Triplet::new(0, 0, 1);
        for _ in 0..200 {
            let n = sample_negative(pos, &forced(1.0), 5, &known, &mut rng).unwrap();
            assert_eq!((n.r, n.t), (0, 1));
            assert_ne!(n.h, 0);
            let n = sample_negative(pos, &forced(0.0), 5, &known, &mut rng).unwrap();
            assert_eq!((n.h, n.r), (0, 0));
            assert_ne!(n.t, 1);
        }
    }

    #[test]
    fn exhausted_when_every_corruption_is_known() {
        // Two entities, all four (h, r, t) combinations are positives.
        let train = set(&[(0, 0, 0), (0, 0, 1), (1, 0, 0), (1, 0, 1)]);
        let stats = bern_stats(&train, 1).unwrap();
        let known = TripletIndex::from_sets([&train]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = sample_negative(Triplet::new(0, 0, 1), &stats, 2, &known, &mut rng).unwrap_err();
        assert!(matches!(
            err,
            Error::SamplingExhausted {
                attempts: MAX_REJECTIONS,
                ..
            }
        ));
    }

    #[test]
    fn batch_contracts() {
        let train = set(&(0..10).map(|i| (i, 0, (i + 1) % 10)).collect::<Vec<_>>());
        let stats = bern_stats(&train, 1).unwrap();
        let known = TripletIndex::from_sets([&train]);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let b = make_batch(&train, 2, &stats, 10, &known, &mut rng).unwrap();
        assert_eq!((b.positives.len(), b.negatives.len()), (2, 2));
        assert_ne!(b.positives[0], b.positives[1]);
        assert!(b.negatives.iter().all(|n| !known.contains(n)));
        assert!(matches!(
            make_batch(&train, 11, &stats, 10, &known, &mut rng),
            Err(Error::BatchSize {
                requested: 11,
                available: 10
            })
        ));
        let again = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            make_batch(&train, 5, &stats, 10, &known, &mut rng).unwrap()
        };
        assert_eq!(again(9), again(9));
    }

    #[test]
    fn epoch_covers_every_positive_once() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let batches = epoch_batches(23, 5, &mut rng).unwrap();
        assert_eq!(batches.len(), 5);
        assert_eq!(batches.last().unwrap().len(), 3);
        let mut all: Vec<usize> = batches.concat();
        all.sort_unstable();
        assert_eq!(all, (0..23).collect::<Vec<_>>());
    }
}
