mod common;

use std::collections::{BTreeMap, BTreeSet};

use common::*;
use proptest::prelude::*;
use relbn::count::*;
use relbn::Error;

#[test]
fn toy_completed_table_counts_all_pairs() {
    let (data, vdb) = toy();
    let backend = Builtin::new(&data);
    let counter = Counter::new(&vdb, &backend);
    let vars = ids(&["RA(P0,S0)", "Capability(P0,S0)", "Salary(P0,S0)"]);
    let ct = counter.ct(&vars).unwrap();
    assert_eq!(ct.total(), 9);
    let q = QuerySpec::new([("RA(P0,S0)", "T"), ("Capability(P0,S0)", "3"), ("Salary(P0,S0)", "high")]);
    assert_eq!(count_query(&ct, &q).unwrap(), 1);
    let na = QuerySpec::new([("RA(P0,S0)", "F"), ("Capability(P0,S0)", "n/a"), ("Salary(P0,S0)", "n/a")]);
    assert_eq!(count_query(&ct, &na).unwrap(), 5);
}

#[test]
fn toy_positive_table_only_has_true_tuples() {
    let (data, vdb) = toy();
    let backend = Builtin::new(&data);
    let counter = Counter::new(&vdb, &backend);
    let ct = counter
        .positive_ct(&ids(&["RA(P0,S0)", "Capability(P0,S0)", "Salary(P0,S0)"]))
        .unwrap();
    assert_eq!(ct.total(), 4);
    assert!(ct.rows().all(|(v, _)| &*v[0] != "F"));
}

#[test]
fn toy_every_subset_matches_brute_force() {
    let (data, vdb) = toy();
    let backend = Builtin::new(&data);
    let counter = Counter::new(&vdb, &backend);
    let oracle = Oracle::new(&data, &vdb);
    for subset in subsets(&vdb.ids()) {
        assert_eq!(counter.ct(&subset).unwrap(), oracle.ct(&subset), "subset {subset:?}");
    }
}

#[test]
fn self_relationship_subsets_match_brute_force() {
    for seed in 0..3 {
        let (data, vdb) = small_dataset(seed, true);
        assert!(vdb.ids().contains(&"Knows(P0,P1)".to_string()), "{:?}", vdb.ids());
        let backend = Builtin::new(&data);
        let counter = Counter::new(&vdb, &backend);
        let oracle = Oracle::new(&data, &vdb);
        for subset in subsets(&vdb.ids()) {
            assert_eq!(counter.ct(&subset).unwrap(), oracle.ct(&subset), "seed {seed} subset {subset:?}");
        }
    }
}

#[test]
fn pinned_merged_and_scoped_requests_match_brute_force() {
    let (data, vdb) = small_dataset(4, true);
    let backend = Builtin::new(&data);
    let counter = Counter::new(&vdb, &backend);
    let oracle = Oracle::new(&data, &vdb);
    let vars = ids(&["age(P0)", "age(P1)", "Knows(P0,P1)", "role(P0,C0)"]);
    let merge: BTreeMap<String, String> = [("P1".to_string(), "P0".to_string())].into();
    let scope: BTreeSet<String> = ids(&["P0", "P1", "C0"]).into_iter().collect();

    let plain = CountRequest::new(vars.clone());
    assert_eq!(counter.completed_ct(&plain).unwrap(), oracle.ct_general(&vars, &scope, &BTreeMap::new(), None));

    let mut merged = CountRequest::new(vars.clone());
    merged.merge = merge.clone();
    assert_eq!(counter.completed_ct(&merged).unwrap(), oracle.ct_general(&vars, &scope, &merge, None));

    let pinned = merged.clone().pinned("P0", "person2");
    assert_eq!(
        counter.completed_ct(&pinned).unwrap(),
        oracle.ct_general(&vars, &scope, &merge, Some(("P0", "person2")))
    );

    let wider = ids(&["kind(C0)"]);
    let scoped = CountRequest::new(wider.clone()).with_scope(["P0", "P1"]);
    let wide_scope: BTreeSet<String> = ids(&["C0", "P0", "P1"]).into_iter().collect();
    assert_eq!(counter.completed_ct(&scoped).unwrap(), oracle.ct_general(&wider, &wide_scope, &BTreeMap::new(), None));
}

#[test]
fn block_slices_equal_single_tables_and_cover_isolated_entities() {
    let (data, vdb) = toy();
    let backend = Builtin::new(&data);
    let counter = Counter::new(&vdb, &backend);
    let vars = ids(&["RA(P0,S0)", "Capability(P0,S0)", "Salary(P0,S0)"]);
    let block = counter.block_ct(&vars, "S0").unwrap();
    assert_eq!(block.slices.len(), 3);
    let totals: BTreeSet<u64> = block.slices.values().map(ContingencyTable::total).collect();
    assert_eq!(totals, [3].into());
    for (id, slice) in &block.slices {
        assert_eq!(slice, &counter.target_ct(&vars, "S0", id).unwrap());
    }
    let jack = counter.target_ct(&vars, "S0", "jack").unwrap();
    assert_eq!(jack.total(), 3);
    assert!(matches!(counter.target_ct(&vars, "S0", "nobody"), Err(Error::Validation(_))));

    // A student without any RA tuple still gets an all-false slice.
    let (data, vdb) = small_dataset(1, false);
    let backend = Builtin::new(&data);
    let counter = Counter::new(&vdb, &backend);
    let oracle = Oracle::new(&data, &vdb);
    let vars = ids(&["Member(P0,C0)", "smokes(P0)"]);
    let block = counter.block_ct(&vars, "P0").unwrap();
    let scope: BTreeSet<String> = ids(&["P0", "C0"]).into_iter().collect();
    assert_eq!(block.slices.len() as u64, vdb.population("P0").unwrap());
    for (id, slice) in &block.slices {
        assert_eq!(slice, &oracle.ct_general(&vars, &scope, &BTreeMap::new(), Some(("P0", id))));
    }
}

#[test]
fn local_tables_from_joint_equal_direct_counts() {
    for (data, vdb) in [toy(), small_dataset(2, true)] {
        let backend = Builtin::new(&data);
        let counter = Counter::new(&vdb, &backend);
        let joint = counter.joint_ct(10_000_000).unwrap();
        let pre = Precount::new(&vdb, joint.clone(), CountScope::Family);
        let on_demand = OnDemand::new(Counter::new(&vdb, &backend), CountScope::Family);
        for subset in subsets(&vdb.ids()).into_iter().step_by(7) {
            let direct = counter.ct(&subset).unwrap();
            assert_eq!(local_ct(&vdb, &joint, &subset).unwrap(), direct);
            assert_eq!(pre.family_ct(&subset).unwrap(), direct);
            assert_eq!(on_demand.family_ct(&subset).unwrap(), direct);
            // Without rescaling the projection keeps the joint scope.
            let scoped = counter
                .completed_ct(&CountRequest::new(subset.clone()).with_scope(vdb.fo_vars_of(&vdb.ids()).unwrap()))
                .unwrap();
            assert_eq!(project_ct(&joint, &subset).unwrap(), scoped);
        }
    }
}

#[test]
fn joint_table_size_guard() {
    let (data, vdb) = toy();
    let backend = Builtin::new(&data);
    let counter = Counter::new(&vdb, &backend);
    assert!(matches!(counter.joint_ct(2), Err(Error::Validation(_))));
    assert!(joint_row_bound(&vdb).unwrap() <= 9);
}

#[test]
fn metaquery_for_toy_relationship() {
    let (_, vdb) = toy();
    let mq = build_metaquery(&ids(&["RA(P0,S0)", "Capability(P0,S0)", "Salary(P0,S0)"]), &vdb).unwrap();
    let tables: BTreeSet<&str> = mq.from_list.iter().map(|f| f.table.as_str()).collect();
    assert_eq!(tables, ["Professor", "RA", "Student"].into());
    assert_eq!(mq.where_list.len(), 2);
    assert_eq!(mq.output_columns(), ids(&["Capability(P0,S0)", "Salary(P0,S0)"]));
    let sql = mq.render_sql();
    assert!(sql.starts_with("SELECT COUNT(*) AS \"count\""), "{sql}");
    assert!(sql.contains("GROUP BY"));
    assert!(matches!(build_metaquery(&[], &vdb), Err(Error::Validation(_))));
    assert!(build_metaquery(&ids(&["Nope(X0)"]), &vdb).is_err());
}

#[test]
fn query_log_records_sql() {
    let (data, vdb) = toy();
    let backend = Builtin::new(&data);
    let counter = Counter::new(&vdb, &backend).with_log();
    counter.ct(&ids(&["RA(P0,S0)", "Popularity(P0)"])).unwrap();
    let log = counter.take_log();
    assert_eq!(log.len(), counter.queries_executed());
    assert!(log.iter().all(|q| q.starts_with("SELECT")));
}

#[cfg(feature = "sqlite")]
#[test]
fn sqlite_reproduces_builtin_rows() {
    let (data, vdb) = toy();
    let builtin = Builtin::new(&data);
    let sqlite = Sqlite::in_memory(&data).unwrap();
    for subset in subsets(&vdb.ids()) {
        let a = Counter::new(&vdb, &builtin).ct(&subset).unwrap();
        let b = Counter::new(&vdb, &sqlite).ct(&subset).unwrap();
        assert_eq!(a, b, "{subset:?}");
    }
    let mq = build_metaquery(&ids(&["RA(P0,S0)", "Capability(P0,S0)", "Salary(P0,S0)"]), &vdb).unwrap();
    let mut x = builtin.execute(&mq).unwrap();
    let mut y = sqlite.execute(&mq).unwrap();
    x.sort();
    y.sort();
    assert_eq!(x, y);
    assert!(Sqlite::connect("postgres://x", &data).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    // Completed tables count every grounding exactly once.
    #[test]
    fn completed_totals_are_population_products(seed in 0u64..500, mask in 1u64..256, self_rel: bool) {
        let (data, vdb) = small_dataset(seed, self_rel);
        let all = vdb.ids();
        let subset: Vec<String> = all.iter().enumerate().filter(|(i, _)| mask & (1 << (i % 8)) != 0).map(|(_, v)| v.clone()).collect();
        prop_assume!(!subset.is_empty());
        let backend = Builtin::new(&data);
        let ct = Counter::new(&vdb, &backend).ct(&subset).unwrap();
        let expected: u64 = vdb.fo_vars_of(&subset).unwrap().iter().map(|v| vdb.population(v).unwrap()).product();
        prop_assert_eq!(ct.total(), expected);
    }

    // Summing out a column of a completed table gives the table without it.
    #[test]
    fn marginalization_is_consistent(seed in 0u64..500, drop in 0usize..8) {
        let (data, vdb) = small_dataset(seed, false);
        let all = vdb.ids();
        let backend = Builtin::new(&data);
        let counter = Counter::new(&vdb, &backend);
        let full = counter.ct(&all).unwrap();
        let kept: Vec<String> = all.iter().enumerate().filter(|(i, _)| *i != drop % all.len()).map(|(_, v)| v.clone()).collect();
        let scoped = counter.completed_ct(&CountRequest::new(kept.clone()).with_scope(vdb.fo_vars_of(&all).unwrap())).unwrap();
        prop_assert_eq!(full.project(&kept).unwrap(), scoped);
    }
}
