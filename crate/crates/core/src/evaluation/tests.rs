use proptest::prelude::*;

use super::*;
use crate::config::{DataSource, PipelineConfig};
use crate::dataset::{build_sequences, generate_synthetic, Dataset, SplitSpec, SyntheticSpec};
use crate::selection::{Budget, Strategy};

fn seq(history: Vec<usize>, target: usize) -> UserSequence {
    UserSequence {
        user_id: "u".into(),
        history,
        target,
        timestamp: 0,
        position: 1,
    }
}

#[test]
fn top_rank_scores_one() {
    let m = rank_and_score(|_| vec![0.0, 5.0, 1.0], &[seq(vec![0], 1)], &[10]).unwrap();
    assert_eq!((m.recall_at(10), m.ndcg_at(10)), (1.0, 1.0));
}

#[test]
fn rank_eleven_boundary() {
    // 20 items, the target has the 11th largest score
    let scores: Vec<f64> = (0..20).map(|i| -(i as f64)).collect();
    let s = seq(vec![], 10);
    assert_eq!(rank_of_target(&scores, &s.history, s.target), 11);
    let m = rank_and_score(|_| scores.clone(), &[s], &[10, 20]).unwrap();
    assert_eq!((m.recall_at(10), m.ndcg_at(10)), (0.0, 0.0));
    assert_eq!(m.recall_at(20), 1.0);
    assert_eq!(m.ndcg_at(20), 1.0 / 12f64.log2());
}

#[test]
fn hand_ranked_five_item_toy() {
    let logits = vec![0.1, 0.5, 0.3, 0.9, 0.3];
    // item 3 is in the history; item 4 ties with item 2 but has the higher index
    assert_eq!(rank_of_target(&logits, &[3], 2), 2);
    assert_eq!(rank_of_target(&logits, &[3], 4), 3);
    assert_eq!(rank_of_target(&logits, &[], 2), 3);
    let test = vec![seq(vec![3], 2), seq(vec![3], 4), seq(vec![0], 3)];
    let m = rank_and_score(|_| logits.clone(), &test, &[1, 2, 3]).unwrap();
    assert_eq!(m.recall_at(1), 1.0 / 3.0);
    assert_eq!(m.recall_at(2), 2.0 / 3.0);
    assert_eq!(m.recall_at(3), 1.0);
    let expected = (1.0 + 1.0 / 3f64.log2() + 1.0 / 4f64.log2()) / 3.0;
    assert!((m.ndcg_at(3) - expected).abs() < 1e-15);
}

#[test]
fn target_in_history_still_competes() {
    assert_eq!(rank_of_target(&[1.0, 2.0, 3.0], &[2, 1], 2), 1);
    assert_eq!(rank_of_target(&[1.0, 2.0, 3.0], &[2], 0), 2);
}

#[test]
fn unknown_targets_are_skipped() {
    let m = rank_and_score(|_| vec![1.0, 0.0], &[seq(vec![], 0), seq(vec![], 7)], &[1]).unwrap();
    assert_eq!((m.n_evaluated, m.n_skipped), (1, 1));
    assert_eq!(m.recall_at(1), 1.0);
    assert!(rank_and_score(|_| vec![1.0], &[], &[1]).is_err());
}

proptest! {
    #[test]
    fn metrics_are_consistent(
        logits in prop::collection::vec(-3.0f64..3.0, 2..30),
        picks in prop::collection::vec((any::<prop::sample::Index>(), prop::collection::vec(any::<prop::sample::Index>(), 0..5)), 1..20),
    ) {
        let n = logits.len();
        let test: Vec<_> = picks
            .iter()
            .map(|(t, h)| seq(h.iter().map(|i| i.index(n)).collect(), t.index(n)))
            .collect();
        let m = rank_and_score(|_| logits.clone(), &test, &[1, 3, 5, 10, 20]).unwrap();
        prop_assert!(m.is_consistent());
        for s in &test {
            let r = rank_of_target(&logits, &s.history, s.target);
            let others = (0..n).filter(|j| *j == s.target || !s.history.contains(j)).count();
            prop_assert!(r >= 1 && r <= others);
        }
    }
}

fn small_data() -> Dataset {
    let rows = generate_synthetic(&SyntheticSpec::new(120, 30, 0.2, 0.5, 2)).unwrap();
    build_sequences(&rows, &SplitSpec::default(), 1).unwrap()
}

fn small_cfg() -> PipelineConfig {
    let mut cfg = PipelineConfig::new(DataSource::Synthetic(SyntheticSpec::default()));
    cfg.surrogate.train.epochs = 3;
    cfg.influence.iterations = 200;
    cfg.target.model.embed_dim = 8;
    cfg.target.model.pretrain.epochs = 3;
    cfg.target.finetune.epochs = 2;
    cfg.selection.budget = Budget::Count(16);
    cfg.selection.n_groups = 4;
    cfg
}

#[test]
fn single_strategy_single_seed() {
    let data = small_data();
    let report = compare_selectors(&data, &[Strategy::Random], &[0], &small_cfg()).unwrap();
    assert_eq!(report.rows.len(), 1);
    assert!(report.rows[0].metrics.as_ref().unwrap().is_consistent());
    assert_eq!(report.summary.len(), 4);
    assert!(report.phases.contains_key("score_influence"));
    let csv = report.to_csv();
    assert!(csv.starts_with("strategy,seed,metric,K,value,wallclock_s\n"));
    assert_eq!(csv.lines().count(), 5);
    assert!(report.to_table().contains("random"));
}

#[test]
fn repeated_runs_match_and_failures_are_isolated() {
    let data = small_data();
    let mut cfg = small_cfg();
    cfg.evaluation.full_finetune = true;
    let mut shared = prepare_shared(&data, &cfg).unwrap();
    let strategies = [Strategy::Dealrec, Strategy::Random];
    let a = compare_with(&data, &shared, &strategies, &[3], &cfg).unwrap();
    let b = compare_with(&data, &shared, &strategies, &[3], &cfg).unwrap();
    assert_eq!(a.rows.iter().map(|r| &r.metrics).collect::<Vec<_>>(), b.rows.iter().map(|r| &r.metrics).collect::<Vec<_>>());
    assert_eq!(a.rows.last().unwrap().strategy, "full");

    shared.effort.pop();
    let broken = compare_with(&data, &shared, &strategies, &[3], &cfg).unwrap();
    assert!(broken.rows[0].error.is_some());
    assert!(broken.rows[1].metrics.is_some());
    assert!(broken.mean("dealrec", "ndcg", 10).is_none());
    assert!(broken.mean("random", "ndcg", 10).is_some());
    assert!(broken.to_csv().contains("dealrec,3,failed"));
}
