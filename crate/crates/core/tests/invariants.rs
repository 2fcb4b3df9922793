use std::collections::BTreeMap;

use proptest::prelude::*;

use ragforge::clients::{ModelClient, StubClient};
use ragforge::evaluation::{recall_at_k, EvalItem, QaType, RankedRef};
use ragforge::pipeline::{answer_query, PipelineConfig};
use ragforge::segmentation::{segment, split_sentences, SegmentConfig, Tokenizer, WordPunctTokenizer};
use ragforge::vectorstore::{Collection, Metric, PartitionKey, Payload, VectorRecord};
use ragforge::REFUSAL;

const USERS: [&str; 3] = ["public", "ann", "ben"];

fn record(id: usize, vector: Vec<f32>) -> VectorRecord {
    VectorRecord {
        chunk_id: format!("c{id:04}"),
        vector,
        model: "m".into(),
        payload: Payload {
            doc_id: format!("d{id}"),
            text: format!("text {id}"),
            metadata: BTreeMap::new(),
        },
    }
}

fn store_strategy(dim: usize) -> impl Strategy<Value = Vec<(usize, Vec<f32>)>> {
    prop::collection::vec((0..USERS.len(), prop::collection::vec(-1.0f32..1.0, dim)), 1..60)
}

fn build(rows: &[(usize, Vec<f32>)], dim: usize) -> Collection {
    let mut c = Collection::new("p", dim, Metric::Cosine, "m");
    for (i, (p, v)) in rows.iter().enumerate() {
        c.insert(&PartitionKey::parse(USERS[*p]).unwrap(), vec![record(i, v.clone())]).unwrap();
    }
    c
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn search_respects_scope_order_and_threshold(
        rows in store_strategy(6),
        q in prop::collection::vec(-1.0f32..1.0, 6),
        scope_mask in 0u8..8,
        top_n in 1usize..20,
        threshold in -1.0f64..1.0,
    ) {
        let store = build(&rows, 6);
        let scope: Vec<PartitionKey> = (0..3)
            .filter(|i| scope_mask >> i & 1 == 1)
            .map(|i| PartitionKey::parse(USERS[i]).unwrap())
            .collect();
        let hits = store.search(&q, top_n, threshold, &scope).unwrap();
        prop_assert!(hits.len() <= top_n);
        for h in &hits {
            prop_assert!(scope.contains(&h.partition));
            prop_assert!(h.similarity >= threshold);
            prop_assert!(h.similarity <= 1.0 + 1e-9);
        }
        for w in hits.windows(2) {
            prop_assert!(
                w[0].similarity > w[1].similarity
                    || (w[0].similarity == w[1].similarity && w[0].chunk_id < w[1].chunk_id)
            );
        }
        let eligible = rows
            .iter()
            .filter(|(p, _)| scope_mask >> p & 1 == 1)
            .count();
        if hits.len() < top_n {
            let all = store.search(&q, 1000, -1.0, &scope).unwrap();
            let above = all.iter().filter(|h| h.similarity >= threshold).count();
            prop_assert_eq!(hits.len(), above);
            prop_assert!(all.len() <= eligible);
        }
    }

    #[test]
    fn persist_round_trip(rows in store_strategy(4)) {
        let store = build(&rows, 4);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.bin");
        store.persist(&path).unwrap();
        let loaded = Collection::load(&path).unwrap();
        prop_assert_eq!(loaded.len(), store.len());
        let scope = store.all_partitions();
        let q = &rows[0].1;
        prop_assert_eq!(
            loaded.search(q, 100, -1.0, &scope).unwrap(),
            store.search(q, 100, -1.0, &scope).unwrap()
        );
    }

    #[test]
    fn segmentation_partitions_sentences(
        sentences in prop::collection::vec(prop::collection::vec("[a-f]{1,6}", 1..30), 1..25),
        budget in 16usize..80,
    ) {
        let text: String = sentences
            .iter()
            .map(|s| format!("{}.", s.join(" ")))
            .collect::<Vec<_>>()
            .join(" ");
        let tok = WordPunctTokenizer;
        let client = StubClient::new(16);
        let chunks = segment("d", &text, SegmentConfig { max_tokens: budget }, &client, &tok).unwrap();
        let n = split_sentences(&text, &tok).len();
        let mut next = 0;
        for (i, c) in chunks.iter().enumerate() {
            prop_assert_eq!(c.ordinal, i);
            prop_assert_eq!(c.sentence_range.start, next);
            prop_assert!(c.sentence_range.end > c.sentence_range.start);
            next = c.sentence_range.end;
            if !c.oversized {
                prop_assert!(tok.count(&c.text) <= budget);
            } else {
                prop_assert_eq!(c.sentence_range.len(), 1);
            }
        }
        prop_assert_eq!(next, n);
    }

    #[test]
    fn recall_is_monotone_in_k(
        lists in prop::collection::vec(
            (prop::collection::vec(0u8..20, 0..3), prop::collection::vec(0u8..20, 0..40)),
            1..30,
        ),
        ks in prop::collection::vec(1usize..50, 1..8),
    ) {
        let items: Vec<EvalItem> = lists
            .iter()
            .map(|(gold, _)| EvalItem {
                question: "q".into(),
                reference_answer: String::new(),
                reference_statements: Vec::new(),
                gold_chunk_ids: gold.iter().map(|g| format!("c{g}")).collect(),
                gold_doc_ids: Vec::new(),
                qa_type: QaType::ALL[0],
            })
            .collect();
        let ranked: Vec<Vec<RankedRef>> = lists
            .iter()
            .map(|(_, r)| {
                r.iter()
                    .map(|c| RankedRef { chunk_id: format!("c{c}"), doc_id: format!("d{c}"), similarity: 0.0 })
                    .collect()
            })
            .collect();
        let res = recall_at_k(&items, &ranked, &ks).unwrap();
        for p in &res.points {
            prop_assert!((0.0..=1.0).contains(&p.rate));
        }
        for w in res.points.windows(2) {
            prop_assert!(w[0].k < w[1].k);
            prop_assert!(w[0].rate <= w[1].rate);
        }
    }

    #[test]
    fn pipeline_never_cites_outside_scope(query in "[a-z ]{1,40}") {
        let client = StubClient::default();
        let mut store = Collection::new("p", client.dim(), Metric::Cosine, client.model_tag());
        let docs = ["lava flows downhill", "glaciers carve valleys", "rivers deposit silt"];
        for (i, d) in docs.iter().enumerate() {
            let key = PartitionKey::parse(USERS[i]).unwrap();
            let mut r = record(i, client.embed_one(d));
            r.payload.text = d.to_string();
            r.model = client.model_tag().to_string();
            store.insert(&key, vec![r]).unwrap();
        }
        let config = PipelineConfig {
            scope: vec![PartitionKey::public(), PartitionKey::user("ann").unwrap()],
            score_threshold: -1.0,
            ..PipelineConfig::default()
        };
        let (answer, _) = answer_query(&query, &config, &store, &client).unwrap();
        for c in &answer.retrieved {
            prop_assert!(c.partition.as_str() != "ben");
        }
        prop_assert!(answer.citations.iter().all(|id| id != "c0002"));
        if answer.unanswerable {
            prop_assert_eq!(answer.text.as_str(), REFUSAL);
        }
    }
}
