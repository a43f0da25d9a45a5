//! Category co-occurrence and prevalence comparisons over classified
//! documents.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal, StudentsT};

use crate::classifier::Prediction;
use crate::corpus::{CityEntry, CityGroup, Document, SourceKind};
use crate::taxonomy::{Category, LabelVector, NUM_CATEGORIES};

/// Number of distinct category pairs, the Bonferroni family for
/// correlation tests.
pub const CATEGORY_PAIRS: usize = NUM_CATEGORIES * (NUM_CATEGORIES - 1) / 2;

pub fn bonferroni_threshold(alpha: f64, m: usize) -> f64 {
    alpha / m.max(1) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub method: String,
    pub n: usize,
    pub values: [[f64; NUM_CATEGORIES]; NUM_CATEGORIES],
    /// Categories constant across all documents. Their off-diagonal
    /// entries are undefined and stored as 0.
    pub constant: Vec<Category>,
}

impl CorrelationMatrix {
    pub fn get(&self, a: Category, b: Category) -> f64 {
        self.values[a.index()][b.index()]
    }

    pub fn is_degenerate(&self, a: Category, b: Category) -> bool {
        a != b && (self.constant.contains(&a) || self.constant.contains(&b))
    }

    pub fn identity() -> Self {
        let mut values = [[0.0; NUM_CATEGORIES]; NUM_CATEGORIES];
        for (i, row) in values.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        CorrelationMatrix {
            method: "phi".into(),
            n: 0,
            values,
            constant: Vec::new(),
        }
    }
}

/// Phi coefficient (Pearson on 0/1 indicators) between every pair of
/// categories. Failed parses are skipped.
pub fn correlate(preds: &[Prediction]) -> CorrelationMatrix {
    let vs: Vec<LabelVector> = preds.iter().filter(|p| p.is_scorable()).map(|p| p.labels).collect();
    correlate_vectors(&vs)
}

pub fn correlate_vectors(vs: &[LabelVector]) -> CorrelationMatrix {
    let n = vs.len();
    let mut count = [0u64; NUM_CATEGORIES];
    let mut both = [[0u64; NUM_CATEGORIES]; NUM_CATEGORIES];
    for v in vs {
        let bits = v.to_bools();
        for i in 0..NUM_CATEGORIES {
            if !bits[i] {
                continue;
            }
            count[i] += 1;
            for j in 0..NUM_CATEGORIES {
                if bits[j] {
                    both[i][j] += 1;
                }
            }
        }
    }
    let nf = n as f64;
    let constant: Vec<Category> = Category::ALL
        .iter()
        .copied()
        .filter(|c| count[c.index()] == 0 || count[c.index()] == n as u64)
        .collect();
    let mut values = [[0.0; NUM_CATEGORIES]; NUM_CATEGORIES];
    for i in 0..NUM_CATEGORIES {
        values[i][i] = 1.0;
        for j in (i + 1)..NUM_CATEGORIES {
            let (ci, cj) = (count[i] as f64, count[j] as f64);
            let var = ci * (nf - ci) * cj * (nf - cj);
            let r = if var > 0.0 {
                ((nf * both[i][j] as f64 - ci * cj) / var.sqrt()).clamp(-1.0, 1.0)
            } else {
                0.0
            };
            values[i][j] = r;
            values[j][i] = r;
        }
    }
    CorrelationMatrix {
        method: "phi".into(),
        n,
        values,
        constant,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationTest {
    pub a: Category,
    pub b: Category,
    pub r: f64,
    pub t: f64,
    pub p_value: f64,
    pub significant: bool,
    pub degenerate: bool,
}

/// Two-sided t-test of each off-diagonal r against zero, Bonferroni
/// corrected over the 120 category pairs.
pub fn correlation_significance(m: &CorrelationMatrix, alpha: f64) -> Vec<CorrelationTest> {
    let threshold = bonferroni_threshold(alpha, CATEGORY_PAIRS);
    let df = m.n as f64 - 2.0;
    let dist = (df > 0.0).then(|| StudentsT::new(0.0, 1.0, df).unwrap());
    let mut out = Vec::with_capacity(CATEGORY_PAIRS);
    for i in 0..NUM_CATEGORIES {
        for j in (i + 1)..NUM_CATEGORIES {
            let (a, b) = (Category::ALL[i], Category::ALL[j]);
            let r = m.values[i][j];
            let degenerate = m.is_degenerate(a, b) || dist.is_none();
            let (t, p) = match &dist {
                Some(_) if degenerate => (0.0, 1.0),
                Some(_) if r.abs() >= 1.0 => (f64::INFINITY.copysign(r), 0.0),
                Some(d) => {
                    let t = r * (df / (1.0 - r * r)).sqrt();
                    (t, (2.0 * d.sf(t.abs())).min(1.0))
                }
                None => (0.0, 1.0),
            };
            out.push(CorrelationTest {
                a,
                b,
                r,
                t,
                p_value: p,
                significant: !degenerate && p < threshold,
                degenerate,
            });
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    /// Two-proportion z-test with pooled variance.
    ZTest,
    /// Pearson chi-square on the 2x2 table, no continuity correction.
    ChiSquare,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Group {
    A,
    B,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryComparison {
    pub category: Category,
    pub prevalence_a: f64,
    pub prevalence_b: f64,
    /// z (signed, A minus B) or chi-square.
    pub statistic: f64,
    pub p_value: f64,
    pub significant: bool,
    /// Both groups constant and equal for this category; no test run.
    pub skipped: bool,
}

impl CategoryComparison {
    /// +1 when A is higher, -1 when B is higher.
    pub fn direction(&self) -> i8 {
        match self.prevalence_a.partial_cmp(&self.prevalence_b) {
            Some(std::cmp::Ordering::Greater) => 1,
            Some(std::cmp::Ordering::Less) => -1,
            _ => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupComparison {
    pub label_a: String,
    pub label_b: String,
    pub n_a: usize,
    pub n_b: usize,
    pub alpha: f64,
    pub m: usize,
    pub threshold: f64,
    pub test: TestKind,
    pub rows: Vec<CategoryComparison>,
}

impl GroupComparison {
    pub fn significant(&self) -> impl Iterator<Item = &CategoryComparison> {
        self.rows.iter().filter(|r| r.significant)
    }
}

fn positives(vs: &[LabelVector]) -> [u64; NUM_CATEGORIES] {
    let mut k = [0u64; NUM_CATEGORIES];
    for v in vs {
        for c in v.categories() {
            k[c.index()] += 1;
        }
    }
    k
}

/// Compares per-category prevalence between two sets of label vectors.
pub fn compare_vectors(
    a: &[LabelVector],
    b: &[LabelVector],
    labels: (&str, &str),
    alpha: f64,
    m: usize,
    test: TestKind,
) -> GroupComparison {
    let threshold = bonferroni_threshold(alpha, m);
    let (ka, kb) = (positives(a), positives(b));
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let chi = ChiSquared::new(1.0).unwrap();
    let rows = Category::ALL
        .iter()
        .map(|&c| {
            let (xa, xb) = (ka[c.index()] as f64, kb[c.index()] as f64);
            let pa = if na > 0.0 { xa / na } else { 0.0 };
            let pb = if nb > 0.0 { xb / nb } else { 0.0 };
            let pooled = (xa + xb) / (na + nb).max(1.0);
            let se = (pooled * (1.0 - pooled) * (1.0 / na + 1.0 / nb)).sqrt();
            if !(se > 0.0) || !se.is_finite() {
                return CategoryComparison {
                    category: c,
                    prevalence_a: pa,
                    prevalence_b: pb,
                    statistic: 0.0,
                    p_value: 1.0,
                    significant: false,
                    skipped: true,
                };
            }
            let z = (pa - pb) / se;
            let (statistic, p) = match test {
                TestKind::ZTest => (z, (2.0 * normal.sf(z.abs())).min(1.0)),
                TestKind::ChiSquare => (z * z, chi.sf(z * z)),
            };
            CategoryComparison {
                category: c,
                prevalence_a: pa,
                prevalence_b: pb,
                statistic,
                p_value: p,
                significant: p < threshold,
                skipped: false,
            }
        })
        .collect();
    GroupComparison {
        label_a: labels.0.to_string(),
        label_b: labels.1.to_string(),
        n_a: a.len(),
        n_b: b.len(),
        alpha,
        m,
        threshold,
        test,
        rows,
    }
}

/// Splits scorable predictions by `partition` and compares the groups.
/// Documents missing from the partition are ignored.
pub fn compare_groups(
    preds: &[Prediction],
    partition: &HashMap<String, Group>,
    labels: (&str, &str),
    alpha: f64,
    m: usize,
    test: TestKind,
) -> GroupComparison {
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for p in preds.iter().filter(|p| p.is_scorable()) {
        match partition.get(&p.doc_id) {
            Some(Group::A) => a.push(p.labels),
            Some(Group::B) => b.push(p.labels),
            None => {}
        }
    }
    compare_vectors(&a, &b, labels, alpha, m, test)
}

/// Large cities go to group A, small to group B.
pub fn city_group_partition(docs: &[Document], roster: &[CityEntry]) -> HashMap<String, Group> {
    let by_city: HashMap<&str, CityGroup> = roster.iter().map(|c| (c.city.as_str(), c.group)).collect();
    docs.iter()
        .filter_map(|d| {
            by_city.get(d.city.as_str()).map(|g| {
                let group = match g {
                    CityGroup::Large => Group::A,
                    CityGroup::Small => Group::B,
                };
                (d.id.clone(), group)
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourcePrevalence {
    pub source: SourceKind,
    pub n: usize,
    pub prevalence: [f64; NUM_CATEGORIES],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceComparison {
    pub prevalence: Vec<SourcePrevalence>,
    /// Bonferroni family: 16 times the number of source pairs.
    pub m: usize,
    pub contrasts: Vec<GroupComparison>,
}

/// Prevalence per source plus every pairwise source contrast.
pub fn compare_sources(
    preds: &[Prediction],
    source_of: &HashMap<String, SourceKind>,
    alpha: f64,
    test: TestKind,
) -> SourceComparison {
    let mut by: BTreeMap<SourceKind, Vec<LabelVector>> = BTreeMap::new();
    for p in preds.iter().filter(|p| p.is_scorable()) {
        if let Some(s) = source_of.get(&p.doc_id) {
            by.entry(*s).or_default().push(p.labels);
        }
    }
    let prevalence = by
        .iter()
        .map(|(s, vs)| {
            let k = positives(vs);
            SourcePrevalence {
                source: *s,
                n: vs.len(),
                prevalence: k.map(|x| x as f64 / vs.len() as f64),
            }
        })
        .collect();
    let sources: Vec<SourceKind> = by.keys().copied().collect();
    let pairs = sources.len() * sources.len().saturating_sub(1) / 2;
    let m = NUM_CATEGORIES * pairs;
    let mut contrasts = Vec::new();
    for i in 0..sources.len() {
        for j in (i + 1)..sources.len() {
            let (a, b) = (sources[i], sources[j]);
            contrasts.push(compare_vectors(&by[&a], &by[&b], (a.id(), b.id()), alpha, m, test));
        }
    }
    SourceComparison {
        prevalence,
        m,
        contrasts,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vectors(bits: &[u16]) -> Vec<LabelVector> {
        bits.iter().map(|b| LabelVector::from_bits(*b)).collect()
    }

    fn pearson(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len() as f64;
        let mx = x.iter().sum::<f64>() / n;
        let my = y.iter().sum::<f64>() / n;
        let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
        let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
        sxy / (sxx * syy).sqrt()
    }

    #[test]
    fn hand_fixtures() {
        // category 0: 1,1,0,0; category 1: 1,0,1,0; category 2 complements 0
        let m = correlate_vectors(&vectors(&[0b011, 0b001, 0b110, 0b100]));
        let (c0, c1, c2) = (Category::ALL[0], Category::ALL[1], Category::ALL[2]);
        assert_eq!(m.get(c0, c1), 0.0);
        assert!((m.get(c0, c2) + 1.0).abs() < 1e-12);
        assert_eq!(m.get(c0, c0), 1.0);
        assert!(m.constant.contains(&Category::Racist));
        assert!(m.is_degenerate(c0, Category::Racist));
    }

    #[test]
    fn correlation_t_test_two_df() {
        // with df = 2 the two-sided t p-value reduces to 1 - |r|
        let m = correlate_vectors(&vectors(&[0b11, 0b01, 0, 0]));
        let tests = correlation_significance(&m, 0.05);
        assert_eq!(tests.len(), CATEGORY_PAIRS);
        let t01 = &tests[0];
        assert_eq!((t01.a, t01.b), (Category::ALL[0], Category::ALL[1]));
        assert!((t01.r - 1.0 / 3f64.sqrt()).abs() < 1e-12);
        assert!((t01.p_value - (1.0 - t01.r.abs())).abs() < 1e-9);
        assert!(!t01.significant && !t01.degenerate);
        assert!(tests[1..].iter().all(|t| t.degenerate && !t.significant && t.p_value == 1.0));
    }

    #[test]
    fn perfect_correlation_is_significant() {
        let bits: Vec<u16> = (0..40).map(|i| if i % 2 == 0 { 0b11 } else { 0 }).collect();
        let tests = correlation_significance(&correlate_vectors(&vectors(&bits)), 0.05);
        assert!(tests[0].significant);
        assert_eq!(tests[0].p_value, 0.0);
    }

    #[test]
    fn bonferroni() {
        assert_eq!(bonferroni_threshold(0.05, 16), 0.003125);
        assert_eq!(CATEGORY_PAIRS, 120);
    }

    #[test]
    fn identical_groups_are_not_different() {
        let g = vectors(&[0x1, 0x3, 0x7, 0xf0f0, 0, 0x8000]);
        let cmp = compare_vectors(&g, &g, ("a", "b"), 0.05, 16, TestKind::ZTest);
        assert_eq!(cmp.threshold, 0.003125);
        assert_eq!(cmp.significant().count(), 0);
        assert!(cmp.rows.iter().all(|r| r.p_value == 1.0));
    }

    #[test]
    fn three_fold_prevalence_detected() {
        let hg = Category::HarmfulGeneralization;
        let mk = |n: usize, pos: usize| -> Vec<LabelVector> {
            (0..n)
                .map(|i| if i < pos { LabelVector::EMPTY.with(hg) } else { LabelVector::EMPTY })
                .collect()
        };
        let (a, b) = (mk(400, 120), mk(400, 40));
        let cmp = compare_vectors(&a, &b, ("social", "formal"), 0.05, 16, TestKind::ZTest);
        let row = &cmp.rows[hg.index()];
        // closed form: pooled 0.2, se sqrt(0.2*0.8*2/400)
        let z = (0.3 - 0.1) / (0.2f64 * 0.8 * 2.0 / 400.0).sqrt();
        assert!((row.statistic - z).abs() < 1e-12);
        assert!(row.significant);
        assert_eq!(row.direction(), 1);
        assert_eq!(cmp.significant().count(), 1);
        let chi = compare_vectors(&a, &b, ("social", "formal"), 0.05, 16, TestKind::ChiSquare);
        assert!((chi.rows[hg.index()].statistic - z * z).abs() < 1e-9);
        assert!((chi.rows[hg.index()].p_value - row.p_value).abs() < 1e-12);
    }

    #[test]
    fn all_zero_categories_are_skipped() {
        let a = vectors(&[0, 0, 0]);
        let cmp = compare_vectors(&a, &a, ("a", "b"), 0.05, 16, TestKind::ZTest);
        assert!(cmp.rows.iter().all(|r| r.skipped && !r.significant));
    }

    #[test]
    fn single_source_has_no_contrasts() {
        let preds: Vec<Prediction> = (0..3)
            .map(|i| Prediction {
                doc_id: format!("d{i}"),
                model_id: "m".into(),
                mode: crate::classifier::PromptMode::ZeroShot,
                labels: LabelVector::from_bits(i),
                raw_response: String::new(),
                parse_status: crate::classifier::ParseStatus::Ok,
            })
            .collect();
        let src: HashMap<_, _> = preds.iter().map(|p| (p.doc_id.clone(), SourceKind::News)).collect();
        let cmp = compare_sources(&preds, &src, 0.05, TestKind::ZTest);
        assert_eq!(cmp.prevalence.len(), 1);
        assert!(cmp.contrasts.is_empty());
        assert_eq!(cmp.m, 0);
    }

    proptest! {
        #[test]
        fn matches_brute_force_pearson(bits in proptest::collection::vec(any::<u16>(), 2..80)) {
            let vs = vectors(&bits);
            let m = correlate_vectors(&vs);
            for i in 0..NUM_CATEGORIES {
                prop_assert_eq!(m.values[i][i], 1.0);
                for j in 0..NUM_CATEGORIES {
                    prop_assert_eq!(m.values[i][j], m.values[j][i]);
                    prop_assert!((-1.0..=1.0).contains(&m.values[i][j]));
                    if i == j { continue; }
                    let x: Vec<f64> = vs.iter().map(|v| v.to_bools()[i] as u8 as f64).collect();
                    let y: Vec<f64> = vs.iter().map(|v| v.to_bools()[j] as u8 as f64).collect();
                    let r = pearson(&x, &y);
                    if r.is_finite() {
                        prop_assert!((m.values[i][j] - r).abs() < 1e-9);
                    } else {
                        prop_assert_eq!(m.values[i][j], 0.0);
                    }
                }
            }
        }

        #[test]
        fn group_swap_antisymmetric(a in proptest::collection::vec(any::<u16>(), 1..60), b in proptest::collection::vec(any::<u16>(), 1..60)) {
            let (a, b) = (vectors(&a), vectors(&b));
            let ab = compare_vectors(&a, &b, ("a", "b"), 0.05, 16, TestKind::ZTest);
            let ba = compare_vectors(&b, &a, ("b", "a"), 0.05, 16, TestKind::ZTest);
            for (x, y) in ab.rows.iter().zip(&ba.rows) {
                prop_assert!((x.statistic + y.statistic).abs() < 1e-12);
                prop_assert!((x.p_value - y.p_value).abs() < 1e-12);
            }
        }

        #[test]
        fn larger_m_never_adds_significance(a in proptest::collection::vec(any::<u16>(), 1..60), b in proptest::collection::vec(any::<u16>(), 1..60), m in 1usize..200) {
            let (a, b) = (vectors(&a), vectors(&b));
            let lo = compare_vectors(&a, &b, ("a", "b"), 0.05, m, TestKind::ZTest);
            let hi = compare_vectors(&a, &b, ("a", "b"), 0.05, m + 1, TestKind::ZTest);
            for (x, y) in lo.rows.iter().zip(&hi.rows) {
                prop_assert!(!y.significant || x.significant);
            }
        }
    }
}
