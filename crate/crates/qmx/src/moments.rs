//! Empirical moment vectors: joint positive-response frequencies over item
//! subsets, plus the empirical attribute distribution of latent profiles.
//!
//! Counting is exact integer accumulation with a single final division per
//! entry. Subjects are stored as response bitmasks, so an AND count is a
//! mask-containment test and an OR count a mask-intersection test per
//! subject; when profitable the counts are taken over a histogram of
//! distinct response patterns instead of raw subjects.

use crate::error::{Error, Result};
use crate::model::{AttributeDistribution, AttributeProfile, Model, ResponseMatrix};
use crate::tmatrix::ComboSet;

/// Response patterns are histogrammed before counting when the item count
/// permits a dense `2^m` table.
const HISTOGRAM_ITEM_LIMIT: usize = 16;

/// An empirical moment vector aligned with a [`ComboSet`].
///
/// For `Model::Dina` (AND kind), entry `r` is the fraction of subjects
/// answering every item of subset `r` positively; for `Model::Dino` (OR
/// kind), the fraction answering at least one positively.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentVector {
    values: Vec<f64>,
    combos: ComboSet,
    kind: Model,
    sample_size: usize,
}

impl MomentVector {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn combos(&self) -> &ComboSet {
        &self.combos
    }

    pub fn kind(&self) -> Model {
        self.kind
    }

    pub fn sample_size(&self) -> usize {
        self.sample_size
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// AND moments: for each subset, the fraction of subjects with positive
/// responses to every item of the subset.
pub fn and_moments(r: &ResponseMatrix, combos: &ComboSet) -> Result<MomentVector> {
    moments(Model::Dina, r, combos)
}

/// OR moments: for each subset, the fraction of subjects with a positive
/// response to at least one item of the subset.
pub fn or_moments(r: &ResponseMatrix, combos: &ComboSet) -> Result<MomentVector> {
    moments(Model::Dino, r, combos)
}

/// AND moments for DINA, OR moments for DINO.
pub fn moments(kind: Model, r: &ResponseMatrix, combos: &ComboSet) -> Result<MomentVector> {
    if combos.num_items() != r.num_items() {
        return Err(Error::DimensionMismatch {
            context: "moments (combination set vs response items)",
            expected: r.num_items(),
            actual: combos.num_items(),
        });
    }
    let n = r.num_subjects();
    let counts = if r.num_items() <= HISTOGRAM_ITEM_LIMIT
        && (1usize << r.num_items()) < n.saturating_mul(4)
    {
        counts_via_histogram(kind, r, combos)
    } else {
        counts_via_scan(kind, r, combos)
    };
    let values = counts.iter().map(|&c| c as f64 / n as f64).collect();
    Ok(MomentVector {
        values,
        combos: combos.clone(),
        kind,
        sample_size: n,
    })
}

fn counts_via_scan(kind: Model, r: &ResponseMatrix, combos: &ComboSet) -> Vec<u64> {
    combos
        .subsets()
        .iter()
        .map(|&s| {
            r.row_masks()
                .iter()
                .filter(|&&resp| match kind {
                    Model::Dina => resp & s == s,
                    Model::Dino => resp & s != 0,
                })
                .count() as u64
        })
        .collect()
}

fn counts_via_histogram(kind: Model, r: &ResponseMatrix, combos: &ComboSet) -> Vec<u64> {
    let mut hist = vec![0u64; 1 << r.num_items()];
    for &resp in r.row_masks() {
        hist[resp as usize] += 1;
    }
    let patterns: Vec<(u64, u64)> = hist
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0)
        .map(|(pat, &c)| (pat as u64, c))
        .collect();
    combos
        .subsets()
        .iter()
        .map(|&s| {
            patterns
                .iter()
                .filter(|&&(pat, _)| match kind {
                    Model::Dina => pat & s == s,
                    Model::Dino => pat & s != 0,
                })
                .map(|&(_, c)| c)
                .sum()
        })
        .collect()
}

/// Relative frequencies of the given latent profiles over all `2^k`
/// profiles. Counts are integers; each entry is one exact division by the
/// sample size.
pub fn empirical_distribution(
    profiles: &[AttributeProfile],
    k: usize,
) -> Result<AttributeDistribution> {
    if profiles.is_empty() {
        return Err(Error::Empty { what: "latent profile list" });
    }
    let mut counts = vec![0u64; 1usize << k];
    for p in profiles {
        if p.k() != k {
            return Err(Error::DimensionMismatch {
                context: "empirical distribution (profile length)",
                expected: k,
                actual: p.k(),
            });
        }
        counts[p.index() as usize] += 1;
    }
    let n = profiles.len() as f64;
    AttributeDistribution::new(k, counts.iter().map(|&c| c as f64 / n).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ItemParams, QMatrix};
    use crate::tmatrix::MomentMatrix;

    fn four_subjects() -> ResponseMatrix {
        ResponseMatrix::from_rows(&[vec![1, 1], vec![1, 0], vec![0, 1], vec![1, 1]]).unwrap()
    }

    #[test]
    fn and_moment_worked_example() {
        let combos = ComboSet::from_subsets(2, vec![0b01, 0b10, 0b11]).unwrap();
        let mv = and_moments(&four_subjects(), &combos).unwrap();
        assert_eq!(mv.values(), &[0.75, 0.75, 0.5]);
        assert_eq!(mv.sample_size(), 4);
    }

    #[test]
    fn or_moment_worked_example() {
        let combos = ComboSet::from_subsets(2, vec![0b01, 0b10, 0b11]).unwrap();
        let mv = or_moments(&four_subjects(), &combos).unwrap();
        assert_eq!(mv.values(), &[0.75, 0.75, 1.0]);
    }

    #[test]
    fn constant_responses() {
        let ones = ResponseMatrix::from_rows(&[vec![1, 1, 1]; 5]).unwrap();
        let zeros = ResponseMatrix::from_rows(&[vec![0, 0, 0]; 5]).unwrap();
        let combos = ComboSet::saturated(3).unwrap();
        assert!(and_moments(&ones, &combos).unwrap().values().iter().all(|&v| v == 1.0));
        assert!(and_moments(&zeros, &combos).unwrap().values().iter().all(|&v| v == 0.0));
        assert!(or_moments(&zeros, &combos).unwrap().values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn singleton_or_equals_singleton_and() {
        let combos = ComboSet::up_to_order(2, 1).unwrap();
        let r = four_subjects();
        assert_eq!(
            and_moments(&r, &combos).unwrap().values(),
            or_moments(&r, &combos).unwrap().values()
        );
    }

    #[test]
    fn histogram_and_scan_agree() {
        let mut state = 99u64;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            state >> 33
        };
        let rows: Vec<u64> = (0..300).map(|_| next() % (1 << 6)).collect();
        let r = ResponseMatrix::from_bitmasks(300, 6, rows).unwrap();
        let combos = ComboSet::saturated(6).unwrap();
        for kind in [Model::Dina, Model::Dino] {
            assert_eq!(
                counts_via_scan(kind, &r, &combos),
                counts_via_histogram(kind, &r, &combos)
            );
        }
    }

    #[test]
    fn empirical_distribution_worked_example() {
        let p11 = AttributeProfile::from_bits(&[1, 1]).unwrap();
        let p10 = AttributeProfile::from_bits(&[1, 0]).unwrap();
        let d = empirical_distribution(&[p11, p11, p10], 2).unwrap();
        // Index order 00, 10, 01, 11.
        assert_eq!(d.probabilities()[0], 0.0);
        assert!((d.probabilities()[1] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(d.probabilities()[2], 0.0);
        assert!((d.probabilities()[3] - 2.0 / 3.0).abs() < 1e-15);

        let single = empirical_distribution(&[p10], 2).unwrap();
        assert_eq!(single.probabilities(), &[0.0, 1.0, 0.0, 0.0]);

        assert!(empirical_distribution(&[], 2).is_err());
    }

    #[test]
    fn subset_monotonicity() {
        // AND moments shrink and OR moments grow as subsets gain items.
        let mut state = 4242u64;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            state >> 33
        };
        let rows: Vec<u64> = (0..200).map(|_| next() % (1 << 5)).collect();
        let r = ResponseMatrix::from_bitmasks(200, 5, rows).unwrap();
        let combos = ComboSet::saturated(5).unwrap();
        let alpha = and_moments(&r, &combos).unwrap();
        let beta = or_moments(&r, &combos).unwrap();
        let subsets = combos.subsets();
        for (i, &s) in subsets.iter().enumerate() {
            for (j, &t) in subsets.iter().enumerate() {
                if t & s == t {
                    // t is a subset of s
                    assert!(alpha.values()[i] <= alpha.values()[j] + 1e-15);
                    assert!(beta.values()[i] + 1e-15 >= beta.values()[j]);
                }
            }
        }
    }

    #[test]
    fn noise_free_identity_is_integer_exact() {
        // With c = 1, g = 0 under DINA, subset counts equal the total count
        // of latent profiles capable of the subset: an integer identity.
        let mut state = 31u64;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            state >> 33
        };
        for _ in 0..20 {
            let m = 5;
            let k = 3;
            let rows: Vec<u64> = (0..m).map(|_| next() % (1 << k)).collect();
            let q = QMatrix::from_bitmasks(m, k, rows, None).unwrap();
            let n = 50usize;
            let profiles: Vec<AttributeProfile> = (0..n)
                .map(|_| AttributeProfile::new(k, (next() % (1 << k)) as u32).unwrap())
                .collect();
            let resp: Vec<u64> = profiles
                .iter()
                .map(|p| {
                    (0..m)
                        .filter(|&i| crate::model::dina_capable(p.mask(), q.row_mask(i)))
                        .fold(0u64, |acc, i| acc | 1 << i)
                })
                .collect();
            let r = ResponseMatrix::from_bitmasks(n, m, resp).unwrap();
            let combos = ComboSet::saturated(m).unwrap();
            let alpha = and_moments(&r, &combos).unwrap();
            let mut profile_counts = vec![0u64; 1 << k];
            for p in &profiles {
                profile_counts[p.index() as usize] += 1;
            }
            for (idx, &s) in combos.subsets().iter().enumerate() {
                // Independent oracle: count subjects whose profile is capable
                // of every item in the subset.
                let capable_count: u64 = (0..(1u64 << k))
                    .filter(|&a| {
                        (0..m).all(|i| {
                            s >> i & 1 == 0 || crate::model::dina_capable(a, q.row_mask(i))
                        })
                    })
                    .map(|a| profile_counts[a as usize])
                    .sum();
                let direct = (alpha.values()[idx] * n as f64).round() as u64;
                assert_eq!(direct, capable_count);
            }
            // The float identity alpha = T(Q) p-hat then holds to rounding.
            let params = ItemParams::noise_free(m);
            let t = MomentMatrix::build(Model::Dina, &q, &params, &combos).unwrap();
            let p_hat = empirical_distribution(&profiles, k).unwrap();
            let predicted = t.apply(p_hat.probabilities()).unwrap();
            for (a, b) in alpha.values().iter().zip(&predicted) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
