//! Timestamp graphs against a literal brute force over every simple loop.

use std::collections::BTreeSet;

use proptest::prelude::*;

use prcc_core::{build_share_graph, is_loop, timestamp_graph, DirectedEdge, ReplicaId, ShareGraph, Topology};

type Regs = Vec<BTreeSet<u8>>;

/// Every ordering of every non-empty subset of `pool`.
fn arrangements(pool: &[u32]) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    fn go(pool: &[u32], cur: &mut Vec<u32>, used: &mut Vec<bool>, out: &mut Vec<Vec<u32>>) {
        if !cur.is_empty() {
            out.push(cur.clone());
        }
        for k in 0..pool.len() {
            if !used[k] {
                used[k] = true;
                cur.push(pool[k]);
                go(pool, cur, used, out);
                cur.pop();
                used[k] = false;
            }
        }
    }
    go(pool, &mut Vec::new(), &mut vec![false; pool.len()], &mut out);
    out
}

fn shared(regs: &Regs, a: u32, b: u32) -> BTreeSet<u8> {
    regs[a as usize - 1].intersection(&regs[b as usize - 1]).copied().collect()
}

fn union_of(regs: &Regs, vs: &[u32]) -> BTreeSet<u8> {
    vs.iter().flat_map(|v| regs[*v as usize - 1].iter().copied()).collect()
}

fn nonempty_minus(a: &BTreeSet<u8>, b: &BTreeSet<u8>) -> bool {
    a.difference(b).next().is_some()
}

/// `(i, l_1..l_s, r_1..r_t, i)` with `r_{t+1} = i`, tested condition by condition.
fn literal_loop(regs: &Regs, i: u32, l: &[u32], r: &[u32]) -> bool {
    let s = l.len();
    let (k, j) = (l[s - 1], r[0]);
    let before_k = union_of(regs, &l[..s - 1]);
    let all_l = union_of(regs, l);
    let r_at = |q: usize| if q <= r.len() { r[q - 1] } else { i };
    nonempty_minus(&shared(regs, j, k), &before_k)
        && nonempty_minus(&shared(regs, j, r_at(2)), &before_k)
        && (2..=r.len()).all(|q| nonempty_minus(&shared(regs, r_at(q), r_at(q + 1)), &all_l))
}

fn oracle(regs: &Regs, g: &ShareGraph, i: u32) -> BTreeSet<DirectedEdge> {
    let adjacent = |a: u32, b: u32| g.contains_edge(DirectedEdge::new(a, b));
    let mut out: BTreeSet<DirectedEdge> = g.edges().filter(|e| e.touches(ReplicaId(i))).collect();
    let others: Vec<u32> = (1..=regs.len() as u32).filter(|v| *v != i).collect();
    for cycle in arrangements(&others).into_iter().filter(|c| c.len() >= 2) {
        let mut closed = vec![i];
        closed.extend(&cycle);
        closed.push(i);
        if !closed.windows(2).all(|w| adjacent(w[0], w[1])) {
            continue;
        }
        for s in 1..cycle.len() {
            let (l, r) = cycle.split_at(s);
            if literal_loop(regs, i, l, r) {
                out.insert(DirectedEdge::new(r[0], l[s - 1]));
            }
        }
    }
    out
}

fn topology(regs: &Regs) -> Topology {
    let names: Vec<Vec<String>> = regs.iter().map(|s| s.iter().map(|x| format!("x{x}")).collect()).collect();
    let refs: Vec<Vec<&str>> = names.iter().map(|v| v.iter().map(String::as_str).collect()).collect();
    let slices: Vec<&[&str]> = refs.iter().map(Vec::as_slice).collect();
    Topology::from_sets(&slices).expect("every replica stores something")
}

fn placements() -> impl Strategy<Value = Regs> {
    (2usize..=5, 1u8..=6).prop_flat_map(|(n, nregs)| {
        prop::collection::vec(prop::collection::btree_set(0..nregs, 1..=nregs as usize), n)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn timestamp_graph_matches_brute_force(regs in placements()) {
        let g = build_share_graph(&topology(&regs));
        for i in 1..=regs.len() as u32 {
            let tsg = timestamp_graph(&g, ReplicaId(i)).unwrap();
            prop_assert_eq!(&tsg.edges, &oracle(&regs, &g, i));
        }
    }

    #[test]
    fn witnesses_pass_is_loop(regs in placements()) {
        let g = build_share_graph(&topology(&regs));
        for i in 1..=regs.len() as u32 {
            let tsg = timestamp_graph(&g, ReplicaId(i)).unwrap();
            for (e, w) in &tsg.witnesses {
                prop_assert!(!e.touches(ReplicaId(i)));
                prop_assert!(is_loop(&g, w, *e).unwrap());
            }
            let witnessed = tsg.edges.iter().filter(|e| !e.touches(ReplicaId(i))).count();
            prop_assert_eq!(witnessed, tsg.witnesses.len());
        }
    }
}

#[test]
fn oracle_reproduces_diamond() {
    let regs: Regs = vec![
        BTreeSet::from([0, 4, 5]), // a y w
        BTreeSet::from([1, 3, 4]), // b x y
        BTreeSet::from([2, 3, 6]), // c x z
        BTreeSet::from([7, 4, 6, 5]), // d y z w
    ];
    let g = build_share_graph(&topology(&regs));
    let e1 = oracle(&regs, &g, 1);
    assert!(e1.contains(&DirectedEdge::new(4, 3)));
    assert!(!e1.contains(&DirectedEdge::new(3, 4)));
    assert!(literal_loop(&regs, 1, &[2, 3], &[4]));
    assert!(!literal_loop(&regs, 1, &[4], &[3, 2]));
}
