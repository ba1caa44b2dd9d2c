use lcmsec::scenarios::{self, CONVERGENCE_LIMIT_MS};
use lcmsec::transport::SimConfig;

fn lossy(seed: u64) -> SimConfig {
    SimConfig { seed, loss: 0.1, ..SimConfig::default() }
}

#[test]
fn seeded_runs_are_bitwise_reproducible() {
    for seed in [3, 17] {
        let a = scenarios::convergence(5, &lossy(seed)).unwrap();
        let b = scenarios::convergence(5, &lossy(seed)).unwrap();
        assert_eq!(a, b);
        assert!(a.converged_ms.is_some());
    }
    let other = scenarios::convergence(5, &lossy(4)).unwrap();
    assert_ne!(other.transcript, scenarios::convergence(5, &lossy(3)).unwrap().transcript);
}

#[test]
fn small_groups_converge_under_loss() {
    for n in [2, 3, 6] {
        for seed in 0..5 {
            let run = scenarios::convergence(n, &lossy(seed)).unwrap();
            let t = run.converged_ms.unwrap_or_else(|| panic!("n={n} seed={seed} did not converge"));
            assert!(t <= CONVERGENCE_LIMIT_MS);
            assert!(run.joins >= 2 * n as u64, "every node joins both scopes");
        }
    }
}

#[test]
fn only_joiners_and_three_representatives_transmit() {
    for (p, j) in [(2, 1), (3, 2), (5, 1), (8, 4)] {
        let run = scenarios::join(p, j, p as u64 * 10 + j as u64).unwrap();
        assert!(run.keys_agree, "p={p} j={j}");
        assert!(run.efficient(), "p={p} j={j}: {:#?}", run.joins);
        let in_group = run.joins.iter().filter(|i| i.p.len() == p).count();
        assert!(in_group >= 2, "expected a Join in the group and the channel scope");
    }
}

#[test]
fn replayed_round_two_neither_keys_nor_blocks() {
    for seed in 0..5 {
        let run = scenarios::replay_round2(seed).unwrap();
        assert!(run.injected > 0);
        assert!(run.honest_agree, "{run:?}");
        assert!(run.group_instance >= 2, "{run:?}");
        assert!(run.rejected > 0, "{run:?}");
    }
}

#[test]
fn impostors_are_isolated() {
    for seed in 0..4 {
        let run = scenarios::unauthorized_node(seed).unwrap();
        assert!(run.isolated(), "{run:?}");
    }
}
