use std::collections::HashSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::Rating;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionSummary {
    pub count: usize,
    /// `None` when there are no ratings.
    pub mean: Option<f64>,
    /// Sample standard deviation; 0 for a single rating.
    pub sd: Option<f64>,
}

impl CriterionSummary {
    /// Integer sums keep the result exact and independent of rating order.
    fn from_scores(scores: impl Iterator<Item = u8>) -> Self {
        let (mut n, mut s, mut q) = (0u64, 0u64, 0u64);
        for x in scores {
            let x = u64::from(x);
            n += 1;
            s += x;
            q += x * x;
        }
        if n == 0 {
            return Self {
                count: 0,
                mean: None,
                sd: None,
            };
        }
        let mean = s as f64 / n as f64;
        let sd = if n == 1 {
            0.0
        } else {
            ((n * q - s * s) as f64 / (n * (n - 1)) as f64).sqrt()
        };
        Self {
            count: n as usize,
            mean: Some(mean),
            sd: Some(sd),
        }
    }

    /// "M ± SD" to two decimals, or "n/a".
    pub fn display(&self) -> String {
        match (self.mean, self.sd) {
            (Some(m), Some(sd)) => format!("{m:.2} ± {sd:.2}"),
            _ => "n/a".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySummary {
    pub ratings: usize,
    pub raters: usize,
    pub items: usize,
    pub relevance: CriterionSummary,
    pub diversity: CriterionSummary,
    pub accuracy: CriterionSummary,
}

/// Pooled statistics: every rating weighs the same regardless of rater or
/// item. `items` counts distinct rated items.
pub fn summarize(ratings: &[Rating]) -> StudySummary {
    let raters: HashSet<&str> = ratings.iter().map(|r| r.rater_id.as_str()).collect();
    let items: HashSet<&str> = ratings.iter().map(|r| r.item_id.as_str()).collect();
    StudySummary {
        ratings: ratings.len(),
        raters: raters.len(),
        items: items.len(),
        relevance: CriterionSummary::from_scores(ratings.iter().map(|r| r.relevance)),
        diversity: CriterionSummary::from_scores(ratings.iter().map(|r| r.diversity)),
        accuracy: CriterionSummary::from_scores(ratings.iter().map(|r| r.accuracy)),
    }
}

pub fn summary_csv(summary: &StudySummary) -> String {
    let mut out = String::from("criterion,count,mean,sd,display\n");
    for (name, c) in [
        ("relevance", &summary.relevance),
        ("diversity", &summary.diversity),
        ("accuracy", &summary.accuracy),
    ] {
        let num = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let _ = writeln!(out, "{name},{},{},{},{}", c.count, num(c.mean), num(c.sd), c.display());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ratings(scores: &[u8]) -> Vec<Rating> {
        scores
            .iter()
            .enumerate()
            .map(|(i, &s)| Rating {
                rater_id: format!("r{}", i % 3),
                item_id: format!("item{i:02}"),
                relevance: s,
                diversity: s,
                accuracy: s,
                timestamp: 0,
            })
            .collect()
    }

    #[test]
    fn three_four_five() {
        let s = summarize(&ratings(&[3, 4, 5]));
        assert_eq!(s.relevance.mean, Some(4.0));
        assert!((s.relevance.sd.unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(s.relevance.display(), "4.00 ± 1.00");
        assert_eq!((s.ratings, s.raters, s.items), (3, 3, 3));
    }

    #[test]
    fn constant_scores_and_singletons() {
        let s = summarize(&ratings(&[4; 7]));
        assert_eq!((s.accuracy.mean, s.accuracy.sd), (Some(4.0), Some(0.0)));
        let s = summarize(&ratings(&[2]));
        assert_eq!((s.accuracy.mean, s.accuracy.sd), (Some(2.0), Some(0.0)));
    }

    #[test]
    fn empty_has_null_means() {
        let s = summarize(&[]);
        assert_eq!(s.ratings, 0);
        assert_eq!(s.relevance.mean, None);
        assert_eq!(s.relevance.display(), "n/a");
        let json = serde_json::to_value(&s).unwrap();
        assert!(json["relevance"]["mean"].is_null());
    }

    #[test]
    fn csv_export() {
        let csv = summary_csv(&summarize(&ratings(&[3, 4, 5])));
        assert_eq!(csv.lines().nth(1).unwrap(), "relevance,3,4,1,4.00 ± 1.00");
    }

    proptest! {
        #[test]
        fn permutation_invariant(mut scores in proptest::collection::vec(1u8..=5, 1..60), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let a = summarize(&ratings(&scores));
            scores.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let b = summarize(&ratings(&scores));
            prop_assert_eq!(&a.relevance, &b.relevance);
            let m = a.relevance.mean.unwrap();
            prop_assert!((1.0..=5.0).contains(&m));
            prop_assert!(a.relevance.sd.unwrap() >= 0.0);
        }
    }
}
