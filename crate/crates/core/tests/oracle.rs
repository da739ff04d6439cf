mod common;

use std::sync::Arc;

use proptest::prelude::*;

use gridarena::agents::{run_episode, DoNothingAgent};
use gridarena::oracle::{
    build_graph, enumerate_topologies, evaluate_chain, evaluate_chains, longest_path, solve_oracle, ChoiceLattice,
    Node, OracleError, RewardMatrix, DEFAULT_TOPOLOGY_CAP,
};
use gridarena::{Action, ActionDictionary, Environment, Mode, RuleParams, Topology};

/// Best score over every action sequence, tracking cooldown counters
/// explicitly.
fn brute_force(m: &RewardMatrix, lat: &ChoiceLattice, cooldown: u32) -> Option<f64> {
    #[allow(clippy::too_many_arguments)]
    fn go(m: &RewardMatrix, lat: &ChoiceLattice, cd: u32, tau: usize, t: usize, c: Vec<u32>, acc: f64, best: &mut Option<f64>) {
        if t + 1 == m.horizon() {
            *best = Some(best.map_or(acc, |b: f64| b.max(acc)));
            return;
        }
        let tick = |mut c: Vec<u32>| {
            c.iter_mut().for_each(|x| *x = x.saturating_sub(1));
            c
        };
        if let Some(r) = m.get(tau, t + 1) {
            go(m, lat, cd, tau, t + 1, tick(c.clone()), acc + r, best);
        }
        for a in (0..lat.n_assets()).filter(|&a| c[a] == 0) {
            for choice in (0..lat.radix(a)).filter(|&x| x != lat.choice(tau, a)) {
                let dest = lat.with_choice(tau, a, choice);
                if let Some(r) = m.get(dest, t + 1) {
                    let mut next = c.clone();
                    next[a] = cd;
                    go(m, lat, cd, dest, t + 1, tick(next), acc + r, best);
                }
            }
        }
    }
    let mut best = None;
    go(m, lat, cooldown, 0, 0, vec![0; lat.n_assets()], m.get(0, 0)?, &mut best);
    best
}

fn instance() -> impl Strategy<Value = (Vec<usize>, Vec<Vec<Option<f64>>>, u32)> {
    (prop::collection::vec(2usize..4, 0..3), 1usize..6, 0u32..4).prop_flat_map(|(radices, horizon, cooldown)| {
        let n: usize = radices.iter().product();
        let cell = prop_oneof![1 => Just(None), 6 => (0u8..5).prop_map(|v| Some(v as f64))];
        let rows = prop::collection::vec(prop::collection::vec(cell, horizon), n).prop_map(|mut rows| {
            rows[0][0] = Some(rows[0][0].unwrap_or(0.0));
            rows
        });
        (Just(radices), rows, Just(cooldown))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn longest_path_equals_brute_force((radices, rows, cooldown) in instance()) {
        let lat = ChoiceLattice::new(radices);
        let m = RewardMatrix::from_rows(&rows).unwrap();
        let rules = RuleParams { cooldown, ..RuleParams::default() };
        let dp = longest_path(&build_graph(&lat, &m, rules, false).unwrap());
        match (dp, brute_force(&m, &lat, cooldown)) {
            (Ok(p), Some(b)) => {
                prop_assert_eq!(p.score, b);
                prop_assert_eq!(p.topologies.len(), m.horizon());
                prop_assert_eq!(p.moves.len(), m.horizon() - 1);
            }
            (Err(OracleError::NoFeasiblePath { .. }), None) => {}
            (dp, bf) => prop_assert!(false, "dp {:?} vs brute force {:?}", dp, bf),
        }
    }

    #[test]
    fn relaxing_cooldowns_never_lowers_the_bound((radices, rows, cooldown) in instance()) {
        let lat = ChoiceLattice::new(radices);
        let m = RewardMatrix::from_rows(&rows).unwrap();
        let rules = RuleParams { cooldown, ..RuleParams::default() };
        let exact = longest_path(&build_graph(&lat, &m, rules, false).unwrap());
        let relaxed = longest_path(&build_graph(&lat, &m, rules, true).unwrap());
        if let Ok(e) = exact {
            prop_assert!(relaxed.unwrap().score >= e.score);
        }
    }

    #[test]
    fn edges_advance_one_step_to_feasible_nodes((radices, rows, cooldown) in instance()) {
        let lat = ChoiceLattice::new(radices);
        let m = RewardMatrix::from_rows(&rows).unwrap();
        let g = build_graph(&lat, &m, RuleParams { cooldown, ..RuleParams::default() }, false).unwrap();
        for topology in 0..lat.len() {
            for window in 0..g.windows().len() {
                for t in 0..g.horizon() {
                    for e in g.out_edges(Node { topology, window, t }) {
                        prop_assert_eq!(e.to.t, t + 1);
                        prop_assert_eq!(Some(e.weight), m.get(e.to.topology, e.to.t));
                        prop_assert!(lat.distance(topology, e.to.topology) <= 1);
                        prop_assert_eq!(e.action.is_none(), e.to.topology == topology);
                    }
                }
            }
        }
    }
}

#[test]
fn reference_chain_equals_do_nothing_scores() {
    let (case, scenario) = common::calibrated(48, 0.05, &[5, 10, 13]);
    for mode in [Mode::Easy, Mode::Hard] {
        let row = evaluate_chain(&case, &scenario, &Topology::reference(&case), mode, RuleParams::default()).unwrap();
        let dn = run_episode(&mut DoNothingAgent, case.clone(), scenario.clone(), mode, None).unwrap();
        for (t, s) in dn.steps.iter().enumerate() {
            if dn.game_over_step.is_some_and(|g| t >= g) {
                assert_eq!(row[t], None);
            } else {
                assert_eq!(row[t], Some(s.score), "{mode:?} t={t}");
            }
        }
    }
}

#[test]
fn larger_dictionary_never_lowers_the_bound() {
    let (case, scenario) = common::calibrated(24, 0.05, &[5, 10, 13]);
    let full = ActionDictionary::ieee14_default();
    let small = ActionDictionary::new(&case, full.actions()[..4].to_vec()).unwrap();
    let rules = RuleParams::default();
    let score = |d: &ActionDictionary| {
        let space = enumerate_topologies(&case, d, DEFAULT_TOPOLOGY_CAP).unwrap();
        solve_oracle(&case, &scenario, &space, Mode::Easy, rules, false, None).unwrap().score
    };
    let empty = score(&ActionDictionary::new(&case, vec![]).unwrap());
    let (s, f) = (score(&small), score(&full));
    assert!(empty <= s && s <= f, "{empty} {s} {f}");
    let dn = run_episode(&mut DoNothingAgent, case.clone(), scenario.clone(), Mode::Easy, None).unwrap();
    assert_eq!(empty, dn.score);
}

#[test]
fn course_replays_to_the_oracle_score() {
    let (case, scenario) = common::calibrated(36, 0.05, &[5, 10, 13]);
    let space = enumerate_topologies(&case, &ActionDictionary::ieee14_default(), DEFAULT_TOPOLOGY_CAP).unwrap();
    let rec = solve_oracle(&case, &scenario, &space, Mode::Easy, RuleParams::default(), false, None).unwrap();
    let mut env = Environment::reset(case.clone(), scenario.clone(), Mode::Easy).unwrap();
    let mut total = env.initial_score();
    for a in rec.actions(scenario.horizon()) {
        let r = env.step(&a).unwrap();
        assert!(r.info.illegal.is_none() && !r.info.diverged, "{a}");
        total += r.score;
    }
    assert!((total - rec.score).abs() <= 1e-9, "{total} vs {}", rec.score);
    assert_eq!(rec.n_actions, rec.course.len());
}

#[test]
fn cached_and_fresh_matrices_agree() {
    let (case, scenario) = common::calibrated(12, 0.05, &[5, 10, 13]);
    let space = enumerate_topologies(&case, &ActionDictionary::ieee14_default(), DEFAULT_TOPOLOGY_CAP).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let rules = RuleParams::default();
    let fresh = solve_oracle(&case, &scenario, &space, Mode::Easy, rules, false, None).unwrap();
    let first = solve_oracle(&case, &scenario, &space, Mode::Easy, rules, false, Some(dir.path())).unwrap();
    let second = solve_oracle(&case, &scenario, &space, Mode::Easy, rules, false, Some(dir.path())).unwrap();
    assert_eq!(fresh, first);
    assert_eq!(first, second);
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);

    // A different scenario must not hit the same cache entry.
    let mut other = (*scenario).clone();
    other.injections[3].loads[0] += 1.0;
    other.injections[3].generators[0] += 1.0;
    solve_oracle(&case, &Arc::new(other), &space, Mode::Easy, rules, false, Some(dir.path())).unwrap();
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 2);
}

#[test]
fn hard_mode_chains_mask_after_game_over() {
    let (case, scenario) = common::calibrated(24, 0.4, &[5, 10, 13, 16, 17]);
    let space = enumerate_topologies(&case, &ActionDictionary::ieee14_default(), DEFAULT_TOPOLOGY_CAP).unwrap();
    let m = evaluate_chains(&case, &scenario, &space, Mode::Hard, RuleParams::default()).unwrap();
    for tau in 0..m.n_topologies() {
        let row = m.row(tau);
        if let Some(first_gap) = row.iter().position(Option::is_none) {
            assert!(row[first_gap..].iter().all(Option::is_none), "topology {tau}");
        }
    }
}

#[test]
fn dictionary_rejects_non_actions() {
    let case = gridarena::GridCase::ieee14();
    assert!(matches!(
        ActionDictionary::new(&case, vec![Action::DoNothing]),
        Err(OracleError::NotUnitary(_))
    ));
    let same = Action::SetSubstation { substation: 4, buses: vec![1; 6] };
    assert!(matches!(ActionDictionary::new(&case, vec![same]), Err(OracleError::NoOpAction(_))));
}
