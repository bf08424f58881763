use std::collections::{BTreeMap, HashSet};

use proptest::prelude::*;

use query_specificity::bipartite::{BipartiteGraph, Node, WalkParams};
use query_specificity::classifier::{self, LossConfig};
use query_specificity::eval::{evaluate, PositiveClass};
use query_specificity::heuristic::PatternGraph;
use query_specificity::patterns::{self, is_subsequence, MinedQuery, MiningParams};
use query_specificity::pipeline::{self, IterMode, RunConfig};
use query_specificity::qqgraph::{self, QQGraph};
use query_specificity::querylog::{ingest, ingest_sharded, QueryId, SearchRecord, UrlId};
use query_specificity::related::{self, Assembled, SizeWindow};
use query_specificity::Label;

fn click_edges(max_q: usize, max_u: usize) -> impl Strategy<Value = (usize, usize, Vec<(QueryId, UrlId, f64)>)> {
    (1..=max_q, 1..=max_u).prop_flat_map(|(nq, nu)| {
        let cells = proptest::collection::btree_map((0..nq, 0..nu), 1u32..20, 1..=nq * nu);
        cells.prop_map(move |m| {
            let edges = m.into_iter().map(|((q, u), c)| (QueryId(q as u32), UrlId(u as u32), c as f64)).collect();
            (nq, nu, edges)
        })
    })
}

fn label() -> impl Strategy<Value = Label> {
    prop_oneof![Just(Label::Lookup), Just(Label::Exploratory)]
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn sharded_ingest_matches_single_pass(
        rows in proptest::collection::vec(("[a-c]{1,2}( [a-c]{1,2})?", 0u8..4, 1u64..9), 1..40),
        shard in 1usize..10,
    ) {
        let records: Vec<SearchRecord> = rows.iter().map(|(q, u, c)| SearchRecord::new(q.as_str(), format!("u{u}"), *c)).collect();
        let whole = ingest(records.clone()).unwrap();
        let parts = ingest_sharded(&records, shard).unwrap();
        prop_assert!(whole.content_eq(&parts));
    }

    #[test]
    fn transitions_are_distributions((nq, nu, edges) in click_edges(6, 6)) {
        let g = BipartiteGraph::from_edges(nq, nu, &edges).unwrap();
        for q in 0..nq as u32 {
            if let Ok(dist) = g.walk_transition(Node::Query(QueryId(q))) {
                let total: f64 = dist.iter().map(|d| d.1).sum();
                prop_assert!((total - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn hitting_tables_are_sorted_and_bounded((nq, nu, edges) in click_edges(6, 5), horizon in 2usize..16) {
        let g = BipartiteGraph::from_edges(nq, nu, &edges).unwrap();
        let params = WalkParams { horizon, threshold: horizon as f64 + 1.0 };
        for table in g.all_hitting_times(params) {
            prop_assert!(table.entries.iter().all(|&(q, v)| q != table.anchor && v > 0.0 && v <= horizon as f64));
            prop_assert!(table.entries.windows(2).all(|w| w[0].1 <= w[1].1));
        }
    }

    #[test]
    fn longer_horizons_never_shorten_hitting_times((nq, nu, edges) in click_edges(5, 4), h in 2usize..12) {
        let g = BipartiteGraph::from_edges(nq, nu, &edges).unwrap();
        for t in 0..nq as u32 {
            let short = g.truncated_to_target(QueryId(t), h);
            let long = g.truncated_to_target(QueryId(t), h + 2);
            prop_assert!(short.iter().zip(&long).all(|(s, l)| *l >= *s - 1e-12));
        }
    }

    #[test]
    fn jaccard_is_symmetric_and_bounded(
        x in proptest::collection::btree_map(0u32..8, 0.1f64..10.0, 0..6),
        y in proptest::collection::btree_map(0u32..8, 0.1f64..10.0, 0..6),
    ) {
        let (x, y): (Vec<_>, Vec<_>) = (x.into_iter().collect(), y.into_iter().collect());
        let a = qqgraph::weighted_jaccard(&x, &y);
        prop_assert_eq!(a, qqgraph::weighted_jaccard(&y, &x));
        prop_assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn relation_scores_are_symmetric_products(
        edges in proptest::collection::btree_map((0u32..7, 0u32..7), 0.05f64..=1.0, 1..15),
    ) {
        let edges: Vec<(QueryId, QueryId, f64)> = edges
            .into_iter()
            .filter(|((a, b), _)| a < b)
            .map(|((a, b), w)| (QueryId(a), QueryId(b), w))
            .collect();
        prop_assume!(!edges.is_empty());
        let g = QQGraph::from_edges(&edges).unwrap();
        let nodes = g.nodes();
        let from: BTreeMap<QueryId, BTreeMap<QueryId, f64>> = nodes
            .iter()
            .map(|&s| (s, qqgraph::relation_from(&g, &nodes, s).into_iter().collect()))
            .collect();
        for (s, row) in &from {
            for (t, v) in row {
                prop_assert!(*v > 0.0 && *v <= 1.0);
                let back = from[t][s];
                prop_assert!((back - v).abs() <= 1e-12 * v.max(back));
                if let Some(w) = g.weight(*s, *t) {
                    prop_assert!(*v >= w - 1e-15);
                }
            }
        }
    }

    #[test]
    fn k_core_has_min_degree_and_is_maximal(
        n in 1usize..9,
        pairs in proptest::collection::vec((0usize..9, 0usize..9), 0..30),
        k in 1usize..4,
    ) {
        let edges: Vec<(usize, usize)> = pairs.into_iter().filter(|&(a, b)| a < n && b < n && a != b).collect();
        let g = PatternGraph::new(vec![1.0; n], &edges);
        let all: Vec<usize> = (0..n).collect();
        let core = g.k_core(&all, k);
        let inside: HashSet<usize> = core.iter().copied().collect();
        for &v in &core {
            prop_assert!(g.neighbors(v).iter().filter(|w| inside.contains(w)).count() >= k);
        }
        // Adding back any peeled node cannot give a valid larger core.
        for v in (0..n).filter(|v| !inside.contains(v)) {
            let mut grown: Vec<usize> = core.clone();
            grown.push(v);
            prop_assert!(g.k_core(&grown, k).len() <= core.len());
        }
    }

    #[test]
    fn mined_patterns_respect_their_invariants(
        rows in proptest::collection::vec((proptest::collection::vec(0usize..7, 1..5), 1u64..30), 40..70),
    ) {
        let vocab = ["how", "to", "bake", "bread", "at", "home", "fast"];
        let queries: Vec<MinedQuery> = rows
            .iter()
            .map(|(ws, f)| MinedQuery::new(&ws.iter().map(|&i| vocab[i]).collect::<Vec<_>>().join(" "), *f))
            .collect();
        let params = MiningParams::default();
        let dict = patterns::mine_patterns(&queries, &params).unwrap();
        let mut multisets = HashSet::new();
        for p in &dict.patterns {
            prop_assert!(p.confidence > 0.5);
            prop_assert!(p.q_p.len() >= dict.k_min);
            prop_assert!(p.q_p.iter().all(|i| p.q_pprime.binary_search(i).is_ok()));
            prop_assert!(p.q_p.iter().all(|&i| is_subsequence(&p.words, &queries[i].words)));
            for &i in p.q_pprime.iter().filter(|i| p.q_p.binary_search(i).is_err()) {
                prop_assert!(!is_subsequence(&p.words, &queries[i].words));
                prop_assert!(p.words.iter().all(|w| queries[i].words.contains(w)));
            }
            let mut key = p.words.clone();
            key.sort();
            prop_assert!(multisets.insert(key));
        }
    }

    #[test]
    fn related_sets_respect_the_window(
        walk in proptest::collection::btree_map(0u32..300, 0.5f64..15.0, 0..200),
        relation in proptest::collection::btree_map(0u32..300, 0.3f64..=1.0, 0..200),
        min in 1usize..60,
        extra in 0usize..100,
    ) {
        let window = SizeWindow { min, max: min + extra };
        let walk: Vec<_> = walk.into_iter().map(|(q, v)| (QueryId(q), v)).collect();
        let relation: Vec<_> = relation.into_iter().map(|(q, v)| (QueryId(q), v)).collect();
        let union: HashSet<QueryId> = walk.iter().chain(&relation).map(|e| e.0).filter(|&q| q != QueryId(0)).collect();
        match related::assemble(QueryId(0), &walk, &relation, window) {
            Assembled::Eligible(set) => {
                prop_assert!(set.len() >= window.min && set.len() <= window.max);
                prop_assert!(set.ids().all(|q| q != QueryId(0) && union.contains(&q)));
            }
            Assembled::Ineligible(n) => {
                prop_assert_eq!(n, union.len());
                prop_assert!(n < window.min);
            }
        }
    }

    #[test]
    fn loss_is_nonnegative_and_bounded(
        v in proptest::collection::vec(-3.0f64..3.0, 12),
        prob in 0.0f64..=1.0,
        target in prop_oneof![Just(0.0), Just(1.0)],
        eta in 0.0f64..=1.0,
        margin in 0.0f64..0.5,
    ) {
        let (a, p, n) = (&v[0..4], &v[4..8], &v[8..12]);
        let cfg = LossConfig { margin, eta };
        let value = classifier::loss(a, p, n, prob, target, &cfg).unwrap();
        let d_ap: f64 = a.iter().zip(p).map(|(x, y)| (x - y) * (x - y)).sum();
        let bce = classifier::loss::bce(prob, target);
        prop_assert!(value >= 0.0);
        prop_assert!(value <= eta * (d_ap + margin) + (1.0 - eta) * bce + 1e-12);
    }

    #[test]
    fn metrics_are_consistent(pairs in proptest::collection::vec((label(), label()), 1..60)) {
        let (pred, truth): (Vec<Label>, Vec<Label>) = pairs.into_iter().unzip();
        let m = evaluate(&pred, &truth, PositiveClass::Exploratory).unwrap();
        prop_assert_eq!(m.confusion.total(), pred.len() as f64);
        prop_assert!((0.0..=1.0).contains(&m.accuracy) && (0.0..=1.0).contains(&m.f1));
        let agree = pred.iter().zip(&truth).filter(|(p, t)| p == t).count();
        prop_assert!((m.accuracy - agree as f64 / pred.len() as f64).abs() < 1e-15);
    }

    #[test]
    fn run_config_text_round_trips(
        seed in any::<u64>(),
        noise in 0.0f64..0.5,
        beta in 0.0f64..0.99,
        epochs in 1usize..50,
        mode in prop_oneof![Just(IterMode::None), Just(IterMode::Iterative), Just(IterMode::Sgit)],
    ) {
        let mut cfg = RunConfig { seed, label_noise: noise, iter_mode: mode, ..RunConfig::default() };
        cfg.iter.beta = beta;
        cfg.train.epochs = epochs;
        prop_assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn noise_flips_the_requested_share(n in 0u32..200, fraction in 0.0f64..=1.0, seed in any::<u64>()) {
        let clean: BTreeMap<QueryId, Label> = (0..n).map(|i| (QueryId(i), if i % 3 == 0 { Label::Lookup } else { Label::Exploratory })).collect();
        let mut noisy = clean.clone();
        let flipped = pipeline::inject_noise(&mut noisy, fraction, seed).unwrap();
        prop_assert_eq!(flipped, (fraction * n as f64).round() as usize);
        prop_assert_eq!(clean.iter().filter(|(k, v)| noisy[k] != **v).count(), flipped);
    }
}
