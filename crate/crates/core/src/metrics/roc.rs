use serde::Serialize;

use super::ScoreRecord;
use crate::error::{ensure, Result};

/// Number of uniformly spaced FAR samples used by [`tauc`] by default.
pub const DEFAULT_GRID: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RocPoint {
    pub far: f64,
    pub tar: f64,
    /// Lowest score flagged at this operating point; `+inf` for the origin.
    pub threshold: f64,
}

/// Operating points of a threshold sweep, from `(0, 0)` to `(1, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RocCurve {
    points: Vec<RocPoint>,
    counts: Vec<(u64, u64)>,
    negatives: u64,
    positives: u64,
}

impl RocCurve {
    /// Builds a curve from explicit `(far, tar)` vertices. Vertices must be
    /// non-decreasing in both coordinates, start at FAR 0 and end at `(1, 1)`.
    pub fn from_points(points: &[(f64, f64)]) -> Result<Self> {
        ensure!(points.len() >= 2, InvalidArgument, "a curve needs at least two points");
        ensure!(
            points.iter().all(|&(f, t)| (0.0..=1.0).contains(&f) && (0.0..=1.0).contains(&t)),
            InvalidArgument,
            "curve coordinates must lie in [0, 1]"
        );
        ensure!(
            points.windows(2).all(|w| w[0].0 <= w[1].0 && w[0].1 <= w[1].1),
            InvalidArgument,
            "curve must be non-decreasing"
        );
        ensure!(points[0].0 == 0.0 && points[points.len() - 1] == (1.0, 1.0), InvalidArgument, "curve must span FAR 0 to (1, 1)");
        let n = points.len();
        Ok(RocCurve {
            points: points
                .iter()
                .enumerate()
                .map(|(i, &(far, tar))| RocPoint { far, tar, threshold: (n - 1 - i) as f64 })
                .collect(),
            counts: Vec::new(),
            negatives: 0,
            positives: 0,
        })
    }

    pub fn points(&self) -> &[RocPoint] {
        &self.points
    }

    pub fn negatives(&self) -> u64 {
        self.negatives
    }

    pub fn positives(&self) -> u64 {
        self.positives
    }

    /// Largest TAR among operating points whose FAR does not exceed `far`.
    fn step(&self, far: f64) -> f64 {
        self.points.iter().take_while(|p| p.far <= far).map(|p| p.tar).fold(0.0, f64::max)
    }
}

fn class_counts(records: &[ScoreRecord]) -> Result<(u64, u64)> {
    ensure!(records.iter().all(|r| r.score.is_finite()), InvalidArgument, "scores must be finite");
    let pos = records.iter().filter(|r| r.label.is_manipulated()).count() as u64;
    let neg = records.len() as u64 - pos;
    ensure!(pos > 0 && neg > 0, InvalidArgument, "ROC needs both classes ({} natural, {} manipulated)", neg, pos);
    Ok((neg, pos))
}

/// Exact sweep over every distinct score; tied scores move together.
pub fn roc(records: &[ScoreRecord]) -> Result<RocCurve> {
    let (neg, pos) = class_counts(records)?;
    let mut order: Vec<&ScoreRecord> = records.iter().collect();
    order.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut points = vec![RocPoint { far: 0.0, tar: 0.0, threshold: f64::INFINITY }];
    let mut counts = vec![(0, 0)];
    let (mut fp, mut tp) = (0u64, 0u64);
    let mut i = 0;
    while i < order.len() {
        let t = order[i].score;
        while i < order.len() && order[i].score == t {
            if order[i].label.is_manipulated() {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint { far: fp as f64 / neg as f64, tar: tp as f64 / pos as f64, threshold: t });
        counts.push((fp, tp));
    }
    Ok(RocCurve { points, counts, negatives: neg, positives: pos })
}

/// Trapezoidal area under the curve. For curves built by [`roc`] the area is
/// accumulated in integer pair counts and equals the Mann–Whitney statistic.
pub fn auc(curve: &RocCurve) -> f64 {
    if curve.counts.is_empty() {
        return partial_area(curve, 1.0);
    }
    let twice: u128 = curve
        .counts
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) as u128 * (w[1].1 + w[0].1) as u128)
        .sum();
    twice as f64 / (2 * curve.negatives as u128 * curve.positives as u128) as f64
}

/// Mann–Whitney AUC from mid-ranks; ties between classes count one half.
pub fn auc_rank(records: &[ScoreRecord]) -> Result<f64> {
    let (neg, pos) = class_counts(records)?;
    let mut order: Vec<&ScoreRecord> = records.iter().collect();
    order.sort_by(|a, b| a.score.total_cmp(&b.score));
    // Twice the rank sum of the positives, so mid-ranks stay integral.
    let mut twice_rank_sum: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && order[j].score == order[i].score {
            j += 1;
        }
        let twice_mid = (i + 1 + j) as u128;
        twice_rank_sum += twice_mid * order[i..j].iter().filter(|r| r.label.is_manipulated()).count() as u128;
        i = j;
    }
    let twice_u = twice_rank_sum - pos as u128 * (pos as u128 + 1);
    Ok(twice_u as f64 / (2 * neg as u128 * pos as u128) as f64)
}

fn check_far(far: f64) -> Result<()> {
    ensure!(far > 0.0 && far <= 1.0, InvalidArgument, "FAR cutoff must lie in (0, 1], got {}", far);
    Ok(())
}

/// TAR at the largest achieved FAR not exceeding `far` (step semantics).
pub fn tar_at_far(curve: &RocCurve, far: f64) -> Result<f64> {
    check_far(far)?;
    Ok(curve.step(far))
}

/// How [`tauc`] samples the FAR interval `(0, cutoff]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaucMode {
    /// `n` uniformly spaced FAR values, TAR by step evaluation.
    Grid(usize),
    /// The achieved operating points with `0 < FAR <= cutoff`.
    Vertices,
}

impl Default for TaucMode {
    fn default() -> Self {
        TaucMode::Grid(DEFAULT_GRID)
    }
}

/// Mean TAR over the FAR interval `(0, cutoff]`.
pub fn tauc(curve: &RocCurve, cutoff: f64, mode: TaucMode) -> Result<f64> {
    check_far(cutoff)?;
    match mode {
        TaucMode::Grid(n) => {
            ensure!(n >= 1, InvalidArgument, "tAUC grid needs at least one point");
            let pts = curve.points();
            let (mut k, mut best, mut total) = (0, 0.0f64, 0.0);
            for i in 1..=n {
                let x = cutoff * (i as f64 / n as f64);
                while k < pts.len() && pts[k].far <= x {
                    best = best.max(pts[k].tar);
                    k += 1;
                }
                total += best;
            }
            // The mean of a non-decreasing sequence cannot exceed its last
            // term; the clamp only strips summation rounding.
            Ok((total / n as f64).min(best))
        }
        TaucMode::Vertices => {
            let tars: Vec<f64> = curve.points().iter().filter(|p| p.far > 0.0 && p.far <= cutoff).map(|p| p.tar).collect();
            if tars.is_empty() {
                return Ok(curve.step(cutoff));
            }
            Ok(tars.iter().sum::<f64>() / tars.len() as f64)
        }
    }
}

/// Trapezoidal area under the vertex polyline over FAR in `[0, f]`.
fn partial_area(curve: &RocCurve, f: f64) -> f64 {
    let mut area = 0.0;
    for w in curve.points().windows(2) {
        let (a, b) = (w[0], w[1]);
        if a.far >= f {
            break;
        }
        if b.far <= f {
            area += (b.far - a.far) * (a.tar + b.tar) / 2.0;
        } else {
            let t = (f - a.far) / (b.far - a.far);
            let mid = a.tar + t * (b.tar - a.tar);
            area += (f - a.far) * (a.tar + mid) / 2.0;
        }
    }
    area
}

/// McClish-standardized partial AUC up to FAR `f`: 0.5 at chance, 1 at
/// perfection.
pub fn pauc_standardized(curve: &RocCurve, f: f64) -> Result<f64> {
    check_far(f)?;
    let a = partial_area(curve, f);
    let chance = f * f / 2.0;
    Ok((0.5 * (1.0 + (a - chance) / (f - chance))).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Label;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn records(natural: &[f64], manipulated: &[f64]) -> Vec<ScoreRecord> {
        let nat = natural.iter().enumerate().map(|(i, &s)| ScoreRecord::new(format!("n{i}"), 0, s, Label::Natural));
        let man = manipulated.iter().enumerate().map(|(i, &s)| ScoreRecord::new(format!("m{i}"), 0, s, Label::Manipulated));
        nat.chain(man).collect()
    }

    fn pair_count_auc(natural: &[f64], manipulated: &[f64]) -> f64 {
        let mut wins = 0.0;
        for &m in manipulated {
            for &n in natural {
                wins += if m > n { 1.0 } else if m == n { 0.5 } else { 0.0 };
            }
        }
        wins / (natural.len() * manipulated.len()) as f64
    }

    fn pairs(curve: &RocCurve) -> Vec<(f64, f64)> {
        curve.points().iter().map(|p| (p.far, p.tar)).collect()
    }

    /// TAR 0.5 on FAR [0, 0.05), 1 beyond.
    fn two_step() -> RocCurve {
        RocCurve::from_points(&[(0.0, 0.0), (0.0, 0.5), (0.05, 0.5), (0.05, 1.0), (1.0, 1.0)]).unwrap()
    }

    #[test]
    fn perfect_separation_passes_through_top_left() {
        let c = roc(&records(&[0.1, 0.2], &[0.7, 0.9])).unwrap();
        assert!(pairs(&c).contains(&(0.0, 1.0)));
        assert_eq!(auc(&c), 1.0);
        assert_eq!(tar_at_far(&c, 0.01).unwrap(), 1.0);
        assert_eq!(tauc(&c, 0.1, TaucMode::default()).unwrap(), 1.0);
        assert_eq!(pauc_standardized(&c, 0.1).unwrap(), 1.0);
    }

    #[test]
    fn total_tie_is_the_diagonal() {
        let c = roc(&records(&[0.5; 3], &[0.5; 4])).unwrap();
        assert_eq!(pairs(&c), vec![(0.0, 0.0), (1.0, 1.0)]);
        assert_eq!(tar_at_far(&c, 0.5).unwrap(), 0.0);
        assert_eq!(auc(&c), 0.5);
        assert_eq!(pauc_standardized(&c, 0.3).unwrap(), 0.5);
    }

    #[test]
    fn six_score_fixture() {
        let (nat, man) = ([0.1, 0.2, 0.3], [0.25, 0.8, 0.9]);
        let r = records(&nat, &man);
        assert_eq!(pair_count_auc(&nat, &man), 8.0 / 9.0);
        assert_eq!(auc(&roc(&r).unwrap()), 8.0 / 9.0);
        assert_eq!(auc_rank(&r).unwrap(), 8.0 / 9.0);
    }

    #[test]
    fn single_class_is_rejected() {
        assert!(roc(&records(&[0.1, 0.2], &[])).is_err());
        assert!(auc_rank(&records(&[], &[0.3])).is_err());
    }

    #[test]
    fn uninformative_scores_give_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let r: Vec<ScoreRecord> = (0..10_000)
            .map(|i| {
                let label = if rng.gen_bool(0.5) { Label::Manipulated } else { Label::Natural };
                ScoreRecord::new(format!("v{i}"), 0, rng.gen::<f64>(), label)
            })
            .collect();
        let a = auc(&roc(&r).unwrap());
        assert!((a - 0.5).abs() < 0.02, "{a}");
    }

    #[test]
    fn tar_lookup_on_hand_built_curve() {
        let c = RocCurve::from_points(&[(0.0, 0.2), (0.01, 0.4), (0.05, 0.7), (0.2, 0.9), (1.0, 1.0)]).unwrap();
        assert_eq!(tar_at_far(&c, 0.005).unwrap(), 0.2);
        assert_eq!(tar_at_far(&c, 0.05).unwrap(), 0.7);
        assert_eq!(tar_at_far(&c, 0.1).unwrap(), 0.7);
        assert!(tar_at_far(&c, 0.0).is_err());
    }

    #[test]
    fn tauc_on_hand_built_curve() {
        let c = two_step();
        let t = tauc(&c, 0.1, TaucMode::Grid(DEFAULT_GRID)).unwrap();
        assert!((t - 0.75).abs() <= 1.0 / DEFAULT_GRID as f64, "{t}");
        assert_eq!(tauc(&c, 0.1, TaucMode::Vertices).unwrap(), 0.75);
        let zero = RocCurve::from_points(&[(0.0, 0.0), (0.5, 0.0), (1.0, 1.0)]).unwrap();
        assert_eq!(tauc(&zero, 0.1, TaucMode::default()).unwrap(), 0.0);
    }

    #[test]
    fn pauc_on_hand_built_curve() {
        let p = pauc_standardized(&two_step(), 0.1).unwrap();
        let expected = 0.5 * (1.0 + (0.075 - 0.005) / (0.1 - 0.005));
        assert!((p - expected).abs() < 1e-12);
        assert!((p - 0.8684).abs() < 1e-4);
        let diag = RocCurve::from_points(&[(0.0, 0.0), (1.0, 1.0)]).unwrap();
        for f in [0.01, 0.1, 0.5, 1.0] {
            assert_eq!(pauc_standardized(&diag, f).unwrap(), 0.5);
        }
    }

    fn instance() -> impl Strategy<Value = (Vec<u8>, Vec<u8>)> {
        // Small integer scores force plenty of ties.
        (1usize..25, 1usize..25)
            .prop_flat_map(|(n, m)| (prop::collection::vec(0u8..12, n), prop::collection::vec(0u8..12, m)))
    }

    fn to_records(nat: &[u8], man: &[u8]) -> Vec<ScoreRecord> {
        let f = |v: &[u8]| v.iter().map(|&s| s as f64).collect::<Vec<_>>();
        records(&f(nat), &f(man))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn rank_and_geometric_auc_agree((nat, man) in instance()) {
            let r = to_records(&nat, &man);
            let geometric = auc(&roc(&r).unwrap());
            let rank = auc_rank(&r).unwrap();
            prop_assert!((geometric - rank).abs() <= 1e-12);
            let f: Vec<f64> = nat.iter().map(|&s| s as f64).collect();
            let g: Vec<f64> = man.iter().map(|&s| s as f64).collect();
            prop_assert!((rank - pair_count_auc(&f, &g)).abs() <= 1e-12);
        }

        #[test]
        fn full_range_pauc_is_auc((nat, man) in instance()) {
            let c = roc(&to_records(&nat, &man)).unwrap();
            prop_assert!((pauc_standardized(&c, 1.0).unwrap() - auc(&c)).abs() <= 1e-12);
        }

        #[test]
        fn curve_is_monotone_and_bounded((nat, man) in instance()) {
            let c = roc(&to_records(&nat, &man)).unwrap();
            let p = c.points();
            prop_assert_eq!((p[0].far, p[0].tar), (0.0, 0.0));
            prop_assert_eq!((p[p.len() - 1].far, p[p.len() - 1].tar), (1.0, 1.0));
            for w in p.windows(2) {
                prop_assert!(w[0].far <= w[1].far && w[0].tar <= w[1].tar);
            }
        }

        #[test]
        fn monotone_transform_changes_nothing((nat, man) in instance(), f in 0.01f64..=1.0) {
            let r = to_records(&nat, &man);
            let t: Vec<ScoreRecord> = r.iter().map(|x| ScoreRecord { score: (x.score * 0.37).exp() - 5.0, ..x.clone() }).collect();
            let (a, b) = (roc(&r).unwrap(), roc(&t).unwrap());
            prop_assert_eq!(pairs(&a), pairs(&b));
            prop_assert_eq!(auc(&a).to_bits(), auc(&b).to_bits());
            prop_assert_eq!(tauc(&a, f, TaucMode::default()).unwrap().to_bits(), tauc(&b, f, TaucMode::default()).unwrap().to_bits());
            prop_assert_eq!(pauc_standardized(&a, f).unwrap().to_bits(), pauc_standardized(&b, f).unwrap().to_bits());
            prop_assert_eq!(tar_at_far(&a, f).unwrap().to_bits(), tar_at_far(&b, f).unwrap().to_bits());
        }

        #[test]
        fn tauc_is_bounded_by_endpoint_tar((nat, man) in instance(), f in 0.001f64..=1.0) {
            let c = roc(&to_records(&nat, &man)).unwrap();
            let t = tauc(&c, f, TaucMode::default()).unwrap();
            prop_assert!(0.0 <= t && t <= tar_at_far(&c, f).unwrap());
            let p = pauc_standardized(&c, f).unwrap();
            prop_assert!((0.0..=1.0).contains(&p));
        }
    }
}
