use proptest::prelude::*;
use std::collections::BTreeSet;
use twinner_core::agr::{AgentKind, AgrError, EnvKind, RoleData, RoleName, World};

/// Each agent joins an arbitrary subset of up to six environments.
fn memberships() -> impl Strategy<Value = Vec<BTreeSet<usize>>> {
    proptest::collection::vec(proptest::collection::btree_set(0usize..6, 0..4), 2..8)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]
    #[test]
    fn delivery_iff_environments_intersect(sets in memberships(), pairs in proptest::collection::vec((0usize..8, 0usize..8), 1..10)) {
        let mut w = World::new(0);
        let envs: Vec<_> = (0..6).map(|i| w.create_environment(&format!("e{i}"), EnvKind::Network).unwrap()).collect();
        let agents: Vec<_> = (0..sets.len()).map(|i| w.create_agent(&format!("a{i}"), AgentKind::Person).unwrap()).collect();
        for (a, set) in agents.iter().zip(&sets) {
            for e in set {
                w.assume_role(*a, envs[*e], RoleName::Resident, RoleData::new()).unwrap();
            }
        }
        for (s, r) in pairs {
            let (s, r) = (s % sets.len(), r % sets.len());
            let shared = !sets[s].is_disjoint(&sets[r]);
            let before = w.inbox(agents[r]).len();
            match w.send_message(agents[s], agents[r], RoleData::new()) {
                Ok(receipt) => {
                    prop_assert!(shared);
                    let via = envs.iter().position(|e| *e == receipt.via_environment).unwrap();
                    prop_assert_eq!(Some(&via), sets[s].intersection(&sets[r]).next());
                    prop_assert_eq!(w.inbox(agents[r]).len(), before + 1);
                }
                Err(AgrError::NoSharedEnvironment { .. }) => {
                    prop_assert!(!shared);
                    prop_assert_eq!(w.inbox(agents[r]).len(), before);
                }
                Err(e) => prop_assert!(false, "unexpected error {e}"),
            }
        }
    }
}
