//! Temporal splitting and category-stratified downsampling.
//!
//! The split is strict: every learning item's timestamp precedes every
//! test item's. Within each pool, per-category quotas follow proportional
//! allocation with largest-remainder rounding, and item selection inside a
//! category is most-recent-first with commit-id tie-breaking.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use core::fmt;

use serde::{Deserialize, Serialize};

/// One sampleable item: the tagged commit reduced to what the sampler needs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleItem {
    pub commit_id: String,
    pub author_time: i64,
    pub category: String,
}

/// Where the learn/test boundary lies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cutoff {
    /// Items with `author_time <= t` learn; strictly later items test.
    Timestamp(i64),
    /// Fraction of the chronologically ordered items (0 < f < 1) that
    /// falls on the learn side; normalized to a timestamp boundary.
    Fraction(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub learn_quota: u64,
    pub test_quota: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitOutcome {
    /// Selected commit ids, chronological (oldest first).
    pub learn: Vec<String>,
    pub test: Vec<String>,
    /// The normalized timestamp boundary T*.
    pub boundary: i64,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SplitError {
    NoItems,
    /// The cutoff leaves one side empty.
    EmptyPool { pool: &'static str },
    InvalidCutoff(String),
}

impl fmt::Display for SplitError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SplitError::NoItems => write!(f, "no items to split"),
            SplitError::EmptyPool { pool } => {
                write!(f, "cutoff leaves the {pool} pool empty")
            }
            SplitError::InvalidCutoff(reason) => write!(f, "invalid cutoff: {reason}"),
        }
    }
}

impl core::error::Error for SplitError {}

/// Proportional allocation of `quota` across category populations using
/// the largest-remainder method. Remainder ties go to the larger
/// population, then to the lexicographically smaller label. The returned
/// allocations sum to `min(quota, total population)`.
pub fn largest_remainder(populations: &[(String, u64)], quota: u64) -> Vec<(String, u64)> {
    let total: u64 = populations.iter().map(|(_, n)| n).sum();
    if total == 0 || quota == 0 {
        return populations.iter().map(|(l, _)| (l.clone(), 0)).collect();
    }
    if quota >= total {
        return populations.to_vec();
    }

    // floor(quota * n / total) per category, then distribute what remains
    // by descending remainder.
    let mut alloc: Vec<(String, u64)> = Vec::with_capacity(populations.len());
    let mut remainders: Vec<(usize, u128, u64)> = Vec::with_capacity(populations.len());
    let mut assigned = 0u64;
    for (idx, (label, n)) in populations.iter().enumerate() {
        let exact = quota as u128 * *n as u128;
        let floor = (exact / total as u128) as u64;
        let remainder = exact % total as u128;
        alloc.push((label.clone(), floor));
        remainders.push((idx, remainder, *n));
        assigned += floor;
    }

    let mut leftover = quota - assigned;
    remainders.sort_by(|a, b| {
        b.1.cmp(&a.1) // larger remainder first
            .then(b.2.cmp(&a.2)) // then larger population
            .then(alloc[a.0].0.cmp(&alloc[b.0].0)) // then label ascending
    });
    for (idx, _, n) in remainders {
        if leftover == 0 {
            break;
        }
        if alloc[idx].1 < n {
            alloc[idx].1 += 1;
            leftover -= 1;
        }
    }
    alloc
}

/// Splits tagged items at the cutoff and downsamples each pool per its
/// quota, stratified by category.
pub fn split_and_sample(
    items: &[SampleItem],
    cutoff: Cutoff,
    config: SamplingConfig,
) -> Result<SplitOutcome, SplitError> {
    if items.is_empty() {
        return Err(SplitError::NoItems);
    }

    let mut sorted: Vec<&SampleItem> = items.iter().collect();
    sorted.sort_by(|a, b| {
        a.author_time
            .cmp(&b.author_time)
            .then_with(|| a.commit_id.cmp(&b.commit_id))
    });

    let boundary = match cutoff {
        Cutoff::Timestamp(t) => t,
        Cutoff::Fraction(f) => {
            if !(f > 0.0 && f < 1.0) {
                return Err(SplitError::InvalidCutoff(
                    "fraction must lie strictly between 0 and 1".to_string(),
                ));
            }
            let n = sorted.len();
            // Truncation equals floor here: f and n are positive.
            let k = ((f * n as f64) as usize).clamp(1, n - 1);
            sorted[k - 1].author_time
        }
    };

    let learn_pool: Vec<&SampleItem> = sorted
        .iter()
        .copied()
        .filter(|i| i.author_time <= boundary)
        .collect();
    let test_pool: Vec<&SampleItem> = sorted
        .iter()
        .copied()
        .filter(|i| i.author_time > boundary)
        .collect();
    if learn_pool.is_empty() {
        return Err(SplitError::EmptyPool { pool: "learn" });
    }
    if test_pool.is_empty() {
        return Err(SplitError::EmptyPool { pool: "test" });
    }

    let mut warnings = Vec::new();
    let learn = sample_pool(&learn_pool, config.learn_quota, "learn", &mut warnings);
    let test = sample_pool(&test_pool, config.test_quota, "test", &mut warnings);

    Ok(SplitOutcome {
        learn,
        test,
        boundary,
        warnings,
    })
}

/// Per-category selection: quota allocated by largest remainder, items
/// picked most-recent-first (commit-id ascending on equal timestamps),
/// final list re-sorted chronologically.
fn sample_pool(
    pool: &[&SampleItem],
    quota: u64,
    pool_name: &str,
    warnings: &mut Vec<String>,
) -> Vec<String> {
    if quota as usize >= pool.len() {
        if (quota as usize) > pool.len() {
            warnings.push(alloc::format!(
                "{pool_name} quota {quota} exceeds available {}; taking all",
                pool.len()
            ));
        }
        return pool.iter().map(|i| i.commit_id.clone()).collect();
    }

    let mut categories: Vec<(String, Vec<&SampleItem>)> = Vec::new();
    for item in pool {
        match categories.iter_mut().find(|(l, _)| *l == item.category) {
            Some((_, members)) => members.push(item),
            None => categories.push((item.category.clone(), alloc::vec![*item])),
        }
    }
    categories.sort_by(|a, b| a.0.cmp(&b.0));

    let populations: Vec<(String, u64)> = categories
        .iter()
        .map(|(l, m)| (l.clone(), m.len() as u64))
        .collect();
    let allocation = largest_remainder(&populations, quota);

    let mut selected: Vec<&SampleItem> = Vec::with_capacity(quota as usize);
    for ((label, take), (_, mut members)) in allocation.into_iter().zip(categories) {
        debug_assert_eq!(label, members[0].category);
        // Recency first: newest timestamps, then commit id ascending.
        members.sort_by(|a, b| {
            b.author_time
                .cmp(&a.author_time)
                .then_with(|| a.commit_id.cmp(&b.commit_id))
        });
        selected.extend(members.into_iter().take(take as usize));
    }

    selected.sort_by(|a, b| {
        a.author_time
            .cmp(&b.author_time)
            .then_with(|| a.commit_id.cmp(&b.commit_id))
    });
    selected.into_iter().map(|i| i.commit_id.clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn item(id: &str, t: i64, cat: &str) -> SampleItem {
        SampleItem {
            commit_id: id.to_string(),
            author_time: t,
            category: cat.to_string(),
        }
    }

    #[test]
    fn largest_remainder_hand_case() {
        let pops = alloc::vec![("A".to_string(), 6), ("B".to_string(), 2)];
        let alloc = largest_remainder(&pops, 4);
        assert_eq!(alloc, alloc::vec![("A".to_string(), 3), ("B".to_string(), 1)]);
    }

    #[test]
    fn allocation_conserves_quota() {
        let pops = alloc::vec![
            ("a".to_string(), 7),
            ("b".to_string(), 5),
            ("c".to_string(), 3),
            ("d".to_string(), 1),
        ];
        for quota in 0..=16 {
            let alloc = largest_remainder(&pops, quota);
            let sum: u64 = alloc.iter().map(|(_, n)| n).sum();
            assert_eq!(sum, quota.min(16), "quota {quota}");
            for ((_, n), (_, pop)) in alloc.iter().zip(&pops) {
                assert!(n <= pop);
            }
        }
    }

    #[test]
    fn split_is_temporally_sound() {
        let items: Vec<SampleItem> = (0..10)
            .map(|i| item(&alloc::format!("c{i}"), 100 + i, if i % 2 == 0 { "x" } else { "y" }))
            .collect();
        let out = split_and_sample(
            &items,
            Cutoff::Fraction(0.8),
            SamplingConfig {
                learn_quota: 4,
                test_quota: 2,
            },
        )
        .unwrap();
        assert_eq!(out.learn.len(), 4);
        assert_eq!(out.test.len(), 2);
        let time_of = |id: &String| items.iter().find(|i| &i.commit_id == id).unwrap().author_time;
        let max_learn = out.learn.iter().map(time_of).max().unwrap();
        let min_test = out.test.iter().map(time_of).min().unwrap();
        assert!(max_learn < min_test);
    }

    #[test]
    fn empty_test_pool_is_hard_error() {
        let items = alloc::vec![item("a", 1, "x"), item("b", 2, "x")];
        let err = split_and_sample(
            &items,
            Cutoff::Timestamp(10),
            SamplingConfig {
                learn_quota: 2,
                test_quota: 1,
            },
        )
        .unwrap_err();
        assert_eq!(err, SplitError::EmptyPool { pool: "test" });
    }

    #[test]
    fn quota_exceeding_pool_takes_all_and_warns() {
        let items = alloc::vec![item("a", 1, "x"), item("b", 2, "x"), item("c", 3, "x")];
        let out = split_and_sample(
            &items,
            Cutoff::Timestamp(2),
            SamplingConfig {
                learn_quota: 10,
                test_quota: 1,
            },
        )
        .unwrap();
        assert_eq!(out.learn.len(), 2);
        assert!(out.warnings.iter().any(|w| w.contains("learn quota")));
    }

    #[test]
    fn recency_first_selection() {
        // Category x has 3 items; quota 2 within the learn pool must pick
        // the two most recent ones.
        let items = alloc::vec![
            item("old", 1, "x"),
            item("mid", 2, "x"),
            item("new", 3, "x"),
            item("t", 9, "x"),
        ];
        let out = split_and_sample(
            &items,
            Cutoff::Timestamp(3),
            SamplingConfig {
                learn_quota: 2,
                test_quota: 1,
            },
        )
        .unwrap();
        assert_eq!(out.learn, alloc::vec!["mid".to_string(), "new".to_string()]);
    }

    #[test]
    fn equal_times_break_by_commit_id() {
        let items = alloc::vec![
            item("b", 5, "x"),
            item("a", 5, "x"),
            item("z", 9, "x"),
        ];
        let out = split_and_sample(
            &items,
            Cutoff::Timestamp(5),
            SamplingConfig {
                learn_quota: 1,
                test_quota: 1,
            },
        )
        .unwrap();
        assert_eq!(out.learn, alloc::vec!["a".to_string()]);
    }

    #[test]
    fn deterministic_output() {
        let items: Vec<SampleItem> = (0..30)
            .map(|i| {
                item(
                    &alloc::format!("c{:02}", i),
                    1000 + (i * 37) % 50,
                    ["arch", "conc", "test"][(i % 3) as usize],
                )
            })
            .collect();
        let cfg = SamplingConfig {
            learn_quota: 8,
            test_quota: 3,
        };
        let a = split_and_sample(&items, Cutoff::Fraction(0.7), cfg).unwrap();
        let b = split_and_sample(&items, Cutoff::Fraction(0.7), cfg).unwrap();
        assert_eq!(a, b);
    }
}
