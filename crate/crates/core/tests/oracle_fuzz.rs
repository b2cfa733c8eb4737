use consensus_core::oracle::{check_equivalence_with, random_table, tie_model, Outcome};
use consensus_core::{check_equivalence, enumerate_vote_table, DiscreteInstance, TieRule};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn instance(seed: u64, agents: usize, max_atoms: usize, horizon: usize) -> Option<DiscreteInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = random_table(&mut rng, max_atoms, 1e-3);
    let inst = DiscreteInstance::new(model, agents, horizon).unwrap();
    (!enumerate_vote_table(&inst).has_near_tie()).then_some(inst)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn engine_matches_oracle(seed in any::<u64>(), agents in 1usize..=3, atoms in 2usize..=4, horizon in 1usize..=6) {
        if let Some(inst) = instance(seed, agents, atoms, horizon) {
            let report = check_equivalence(&inst);
            prop_assert!(report.is_match(), "{}", report.line(&seed.to_string()));
        }
    }

    #[test]
    fn oracle_posteriors_are_normalized(seed in any::<u64>(), agents in 1usize..=3, atoms in 2usize..=4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = DiscreteInstance::new(random_table(&mut rng, atoms, 1e-3), agents, 4).unwrap();
        let table = enumerate_vote_table(&inst);
        prop_assert!(table.max_normalization_error() < 1e-12);
        prop_assert!(table.min_margin() >= 0.0 && table.min_margin() <= 0.5);
    }

    /// Vectors share a history class after round t exactly when they produced
    /// the same public votes in rounds 1..=t.
    #[test]
    fn history_classes_partition_the_vectors(seed in any::<u64>(), agents in 1usize..=3, atoms in 2usize..=4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = DiscreteInstance::new(random_table(&mut rng, atoms, 1e-3), agents, 4).unwrap();
        let table = enumerate_vote_table(&inst);
        let history = |v: usize, t: usize| -> Vec<bool> {
            (1..=t).flat_map(|r| (0..agents).map(move |i| (r, i))).map(|(r, i)| table.vote(v, r, i)).collect()
        };
        for t in 0..=4 {
            let classes = table.history_classes(t);
            prop_assert_eq!(classes.len(), inst.n_vectors());
            for u in 0..inst.n_vectors() {
                for v in 0..u {
                    prop_assert_eq!(classes[u] == classes[v], history(u, t) == history(v, t));
                }
            }
        }
    }
}

#[test]
fn hiring_committees_match_up_to_the_budget() {
    for agents in 1..=8 {
        let inst = DiscreteInstance::hiring(agents, 6).unwrap();
        let report = check_equivalence(&inst);
        assert!(report.is_match(), "{}", report.line(&format!("hiring-{agents}")));
    }
}

#[test]
fn a_wrong_tie_rule_is_caught() {
    let inst = DiscreteInstance::new(tie_model(), 3, 3).unwrap();
    let table = enumerate_vote_table(&inst);
    assert!(check_equivalence_with(&inst, &table, TieRule::VoteZero).is_match());
    let report = check_equivalence_with(&inst, &table, TieRule::VoteOne);
    match report.outcome {
        Outcome::Diverge { round, .. } => assert_eq!(round, 1),
        other => panic!("expected a divergence, got {other:?}"),
    }
}
