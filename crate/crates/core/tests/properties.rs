mod common;

use common::oracles::brute_force_auc;
use proptest::prelude::*;
use weakfish_core::localizer::aggregate;
use weakfish_core::metrics::{confusion_at, roc_auc};
use weakfish_core::trainer::{step_schedule, Phase, ScheduleAction, ScheduleConfig, ScheduleState};

/// Score sets with both classes present; scores on a coarse grid so ties are
/// common.
fn scored_set() -> impl Strategy<Value = Vec<(f64, u8)>> {
    prop::collection::vec((0u32..20, 0u8..2), 2..80)
        .prop_filter("both classes", |v| v.iter().any(|s| s.1 == 0) && v.iter().any(|s| s.1 == 1))
        .prop_map(|v| v.into_iter().map(|(s, l)| (s as f64 / 19.0, l)).collect())
}

proptest! {
    #[test]
    fn auc_matches_pairwise_count(scores in scored_set()) {
        let auc = roc_auc(&scores).unwrap().auc;
        prop_assert!((auc - brute_force_auc(&scores)).abs() <= 1e-12);
    }

    #[test]
    fn auc_ignores_order_and_monotone_maps(scores in scored_set(), seed in any::<u64>()) {
        let auc = roc_auc(&scores).unwrap().auc;
        let mut shuffled = scores.clone();
        let mut rng = seed;
        for i in (1..shuffled.len()).rev() {
            rng = rng.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            shuffled.swap(i, (rng >> 33) as usize % (i + 1));
        }
        prop_assert_eq!(roc_auc(&shuffled).unwrap().auc, auc);
        let mapped: Vec<(f64, u8)> = scores.iter().map(|&(s, l)| ((3.0 * s).exp() - 1.0, l)).collect();
        prop_assert!((roc_auc(&mapped).unwrap().auc - auc).abs() <= 1e-12);
    }

    #[test]
    fn reversed_scores_complement_auc(scores in scored_set()) {
        let auc = roc_auc(&scores).unwrap().auc;
        let reversed: Vec<(f64, u8)> = scores.iter().map(|&(s, l)| (1.0 - s, l)).collect();
        prop_assert!((roc_auc(&reversed).unwrap().auc - (1.0 - auc)).abs() <= 1e-12);
    }

    #[test]
    fn confusion_partitions_and_moves_with_threshold(scores in scored_set(), t in 0.0f64..1.0) {
        let lo = confusion_at(&scores, t).unwrap();
        let hi = confusion_at(&scores, (t + 0.1).min(1.0)).unwrap();
        prop_assert_eq!(lo.total() as usize, scores.len());
        prop_assert_eq!(lo.positives(), hi.positives());
        prop_assert!(hi.fp <= lo.fp);
        prop_assert!(hi.fn_ >= lo.fn_);
    }

    #[test]
    fn triage_aggregation_is_permutation_invariant(
        scores in prop::collection::vec(0.0f64..1.0, 1..40),
        rot in 0usize..40,
        t in 0.0f64..1.0,
    ) {
        let mut rotated = scores.clone();
        rotated.rotate_left(rot % scores.len());
        let mut reversed = scores.clone();
        reversed.reverse();
        let base = aggregate(&scores, t);
        prop_assert_eq!(aggregate(&rotated, t), base);
        prop_assert_eq!(aggregate(&reversed, t), base);
        prop_assert_eq!(base.1, scores.iter().any(|&s| s >= t));
    }

    #[test]
    fn schedule_lr_only_moves_by_halving_or_restart(
        accs in prop::collection::vec(0u8..8, 1..400),
        finetune in any::<bool>(),
    ) {
        let cfg = ScheduleConfig::default();
        let phase = if finetune { Phase::Finetune } else { Phase::Baseline };
        let initial = 1e-3;
        let mut state = ScheduleState::new(initial, phase);
        let mut restarts = 0;
        for a in accs {
            let before = state.lr;
            let step = step_schedule(&state, a as f64 / 8.0, &cfg);
            match step.action {
                ScheduleAction::Continue => prop_assert_eq!(step.state.lr, before),
                ScheduleAction::HalveLr => prop_assert_eq!(step.state.lr, before / 2.0),
                ScheduleAction::Restart => {
                    restarts += 1;
                    prop_assert!(!finetune);
                    prop_assert!((step.state.lr - initial * 0.9f64.powi(restarts)).abs() <= 1e-15);
                }
                ScheduleAction::Stop => break,
            }
            state = step.state;
        }
        prop_assert!(restarts <= cfg.max_restarts as i32);
    }
}
