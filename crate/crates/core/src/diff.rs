//! Line-level longest common subsequence and difference-line extraction.
//!
//! Lines compare by exact string equality, indentation included. When several
//! alignments share the maximal length, backtracking prefers stepping back on
//! the chosen side, which makes the result deterministic.

use std::collections::{BTreeSet, HashMap};

use crate::model::{split_lines, CodeVersion, DiffLines};

/// Maximal common subsequence as `(index_in_plus, index_in_minus)` pairs.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LineAlignment {
    pub matches: Vec<(usize, usize)>,
}

impl LineAlignment {
    pub fn len(&self) -> usize {
        self.matches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matches.is_empty()
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum DiffError {
    #[error("dilation radius {0} is not one of 0, 1, 2")]
    BadRadius(usize),
    #[error("diff index {index} is outside a {total}-line program")]
    IndexOutOfRange { index: usize, total: usize },
}

fn intern<'a>(lines: &[&'a str], table: &mut HashMap<&'a str, u32>) -> Vec<u32> {
    lines
        .iter()
        .map(|l| {
            let next = table.len() as u32;
            *table.entry(*l).or_insert(next)
        })
        .collect()
}

/// Computes a longest common subsequence of two line lists.
pub fn lcs_lines<S: AsRef<str>>(plus_lines: &[S], minus_lines: &[S]) -> LineAlignment {
    let plus: Vec<&str> = plus_lines.iter().map(AsRef::as_ref).collect();
    let minus: Vec<&str> = minus_lines.iter().map(AsRef::as_ref).collect();
    let mut table = HashMap::new();
    let a = intern(&plus, &mut table);
    let b = intern(&minus, &mut table);
    let (n, m) = (a.len(), b.len());
    if n == 0 || m == 0 {
        return LineAlignment::default();
    }

    // dp[i][j] = LCS length of a[..i] and b[..j]
    let w = m + 1;
    let mut dp = vec![0u32; (n + 1) * w];
    for i in 1..=n {
        for j in 1..=m {
            dp[i * w + j] = if a[i - 1] == b[j - 1] {
                dp[(i - 1) * w + j - 1] + 1
            } else {
                dp[(i - 1) * w + j].max(dp[i * w + j - 1])
            };
        }
    }

    let mut matches = Vec::with_capacity(dp[n * w + m] as usize);
    let (mut i, mut j) = (n, m);
    while i > 0 && j > 0 {
        if a[i - 1] == b[j - 1] {
            matches.push((i - 1, j - 1));
            i -= 1;
            j -= 1;
        } else if dp[(i - 1) * w + j] >= dp[i * w + j - 1] {
            i -= 1;
        } else {
            j -= 1;
        }
    }
    matches.reverse();
    LineAlignment { matches }
}

/// Returns `(D+, D-)`: lines of `chosen` and `rejected` outside the LCS.
pub fn extract_diff(chosen: &CodeVersion, rejected: &CodeVersion) -> (DiffLines, DiffLines) {
    let plus = split_lines(&chosen.source);
    let minus = split_lines(&rejected.source);
    let alignment = lcs_lines(&plus, &minus);
    let kept_plus: BTreeSet<usize> = alignment.matches.iter().map(|m| m.0).collect();
    let kept_minus: BTreeSet<usize> = alignment.matches.iter().map(|m| m.1).collect();
    let d_plus = DiffLines::from_indices(
        &chosen.source,
        (0..plus.len()).filter(|i| !kept_plus.contains(i)),
    );
    let d_minus = DiffLines::from_indices(
        &rejected.source,
        (0..minus.len()).filter(|i| !kept_minus.contains(i)),
    );
    (d_plus, d_minus)
}

/// Widens each diff line to a window of `radius` lines on both sides.
///
/// Returns sorted line indices clipped to `[0, total_lines)`; callers re-read
/// the text with [`DiffLines::from_indices`].
pub fn dilate_diff(
    diff: &DiffLines,
    radius: usize,
    total_lines: usize,
) -> Result<Vec<usize>, DiffError> {
    if radius > 2 {
        return Err(DiffError::BadRadius(radius));
    }
    let mut out = BTreeSet::new();
    for index in diff.indices() {
        if index >= total_lines {
            return Err(DiffError::IndexOutOfRange {
                index,
                total: total_lines,
            });
        }
        let lo = index.saturating_sub(radius);
        let hi = (index + radius).min(total_lines - 1);
        out.extend(lo..=hi);
    }
    Ok(out.into_iter().collect())
}

#[cfg(test)]
pub(crate) mod oracle {
    /// Longest common subsequence length by enumerating every subsequence of
    /// the shorter list and testing containment in the longer one.
    pub fn brute_force_lcs_len(a: &[&str], b: &[&str]) -> usize {
        let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
        let mut best = 0;
        for bits in 0u32..(1u32 << short.len()) {
            let count = bits.count_ones() as usize;
            if count <= best {
                continue;
            }
            let sub: Vec<&str> = (0..short.len())
                .filter(|i| bits & (1 << i) != 0)
                .map(|i| short[i])
                .collect();
            let mut it = long.iter();
            if sub.iter().all(|s| it.any(|l| l == s)) {
                best = count;
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::oracle::brute_force_lcs_len;
    use super::*;
    use crate::model::{validate_pair, PairVerdict, PreferencePair, Provenance, TaskSpec};
    use proptest::prelude::*;

    fn v(src: &str) -> CodeVersion {
        CodeVersion::new(0, src)
    }

    #[test]
    fn lcs_example_matches_oracle() {
        let a = ["a", "b", "c"];
        let b = ["a", "x", "c"];
        assert_eq!(brute_force_lcs_len(&a, &b), 2);
        assert_eq!(lcs_lines(&a, &b).matches, vec![(0, 0), (2, 2)]);
    }

    #[test]
    fn lcs_identity_and_empty() {
        let l = ["x", "y", "x", "z"];
        assert_eq!(
            lcs_lines(&l, &l).matches,
            vec![(0, 0), (1, 1), (2, 2), (3, 3)]
        );
        let empty: [&str; 0] = [];
        assert!(lcs_lines(&empty, &["a"]).is_empty());
    }

    #[test]
    fn tie_break_prefers_chosen_side_step() {
        // Both ["a"] and ["b"] are maximal; stepping back on the plus side
        // first leaves the earlier plus line "a" to match.
        let m = lcs_lines(&["a", "b"], &["b", "a"]).matches;
        assert_eq!(m, vec![(0, 1)]);
    }

    #[test]
    fn lines_compare_with_indentation() {
        let m = lcs_lines(&["  x"], &["x"]);
        assert!(m.is_empty());
    }

    #[test]
    fn extract_diff_examples() {
        let (dp, dm) = extract_diff(&v("a\nb\nc"), &v("a\nx\nc"));
        assert_eq!(dp, DiffLines::from_indices("a\nb\nc", [1]));
        assert_eq!(dm, DiffLines::from_indices("a\nx\nc", [1]));
        assert_eq!(dp.entries[0].text, "b");
        assert_eq!(dm.entries[0].text, "x");

        let (dp, dm) = extract_diff(&v("same\ncode\n"), &v("same\ncode\n"));
        assert!(dp.is_empty() && dm.is_empty());

        let (dp, dm) = extract_diff(&v("a"), &v(""));
        assert_eq!(dp, DiffLines::from_indices("a", [0]));
        assert!(dm.is_empty());
    }

    #[test]
    fn corrupted_diff_fails_validation() {
        let chosen = CodeVersion::new(2, "def f(x):\n    y = x + 1\n    return y\n");
        let rejected = CodeVersion::new(0, "def f(x):\n    y = x - 1\n    return x\n");
        let (dp, mut dm) = extract_diff(&chosen, &rejected);
        let mut pair = PreferencePair {
            x: TaskSpec::new("t", "inc").unwrap(),
            chosen,
            rejected,
            diff_plus: dp,
            diff_minus: dm.clone(),
            provenance: Provenance {
                trace_id: "t".into(),
                chosen_iteration: 2,
                rejected_iteration: 0,
                rng_seed: 1,
            },
        };
        assert!(validate_pair(&pair).is_ok());
        dm.entries.pop();
        pair.diff_minus = dm;
        assert_eq!(
            validate_pair(&pair),
            PairVerdict::Violation("LCS reconstruction mismatch".into())
        );
    }

    fn diff_of(indices: &[usize]) -> DiffLines {
        DiffLines {
            entries: indices
                .iter()
                .map(|&i| crate::model::DiffEntry {
                    index: i,
                    text: String::new(),
                })
                .collect(),
        }
    }

    #[test]
    fn dilation_examples() {
        assert_eq!(dilate_diff(&diff_of(&[3]), 1, 10).unwrap(), vec![2, 3, 4]);
        assert_eq!(dilate_diff(&diff_of(&[2, 5]), 0, 10).unwrap(), vec![2, 5]);
        // brute-force interval union for {0, 9}, r = 2, total 10
        let expected: Vec<usize> = (0..10usize)
            .filter(|x| [0usize, 9].iter().any(|&i| x.abs_diff(i) <= 2))
            .collect();
        assert_eq!(expected, vec![0, 1, 2, 7, 8, 9]);
        assert_eq!(dilate_diff(&diff_of(&[0, 9]), 2, 10).unwrap(), expected);
    }

    #[test]
    fn dilation_errors() {
        assert_eq!(
            dilate_diff(&diff_of(&[1]), 3, 10),
            Err(DiffError::BadRadius(3))
        );
        assert!(matches!(
            dilate_diff(&diff_of(&[10]), 1, 10),
            Err(DiffError::IndexOutOfRange { .. })
        ));
    }

    fn lines_strategy() -> impl Strategy<Value = Vec<&'static str>> {
        prop::collection::vec(prop::sample::select(vec!["a", "b", "c"]), 0..=8)
    }

    proptest! {
        #[test]
        fn lcs_length_matches_brute_force(a in lines_strategy(), b in lines_strategy()) {
            let m = lcs_lines(&a, &b);
            prop_assert_eq!(m.len(), brute_force_lcs_len(&a, &b));
            for w in m.matches.windows(2) {
                prop_assert!(w[0].0 < w[1].0 && w[0].1 < w[1].1);
            }
            for &(i, j) in &m.matches {
                prop_assert_eq!(a[i], b[j]);
            }
        }

        #[test]
        fn dilation_is_monotone(idx in prop::collection::btree_set(0usize..30, 0..6), r in 0usize..2) {
            let d = diff_of(&idx.iter().copied().collect::<Vec<_>>());
            let small: BTreeSet<usize> = dilate_diff(&d, r, 30).unwrap().into_iter().collect();
            let big: BTreeSet<usize> = dilate_diff(&d, r + 1, 30).unwrap().into_iter().collect();
            prop_assert!(small.is_subset(&big));
        }
    }
}
