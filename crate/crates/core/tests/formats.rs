use confmpu::data::{
    parse_corpus, parse_dictionary, subset_dictionary, ClassSet, Corpus, DictEntry, Dictionary, GoldLabel,
};
use confmpu::eval::{decode_spans, spans_to_labels};
use confmpu::model::{Head, ModelParams};
use proptest::prelude::*;

fn corpus_from(labels: &[Vec<usize>]) -> Corpus {
    let texts = labels
        .iter()
        .enumerate()
        .map(|(s, row)| (0..row.len()).map(|t| format!("w{s}_{t}")).collect())
        .collect();
    let gold = labels
        .iter()
        .map(|row| row.iter().map(|c| GoldLabel::from_class_id(*c)).collect())
        .collect();
    Corpus::new(ClassSet::new(["A", "B", "C"]).unwrap(), texts)
        .unwrap()
        .with_gold(gold)
        .unwrap()
}

fn label_table() -> impl Strategy<Value = Vec<Vec<usize>>> {
    prop::collection::vec(prop::collection::vec(0usize..4, 1..12), 1..6)
}

proptest! {
    #[test]
    fn spans_round_trip_through_labels(labels in label_table()) {
        let c = corpus_from(&labels);
        let spans = decode_spans(&labels, &c).unwrap();
        let lengths: Vec<usize> = labels.iter().map(Vec::len).collect();
        prop_assert_eq!(spans_to_labels(&spans, &lengths), labels);
        for s in &spans {
            prop_assert!(s.start < s.end && s.class_id > 0);
        }
    }

    #[test]
    fn corpus_tsv_round_trips(labels in label_table()) {
        let c = corpus_from(&labels);
        let back = parse_corpus(&c.to_tsv(), "mem").unwrap();
        prop_assert_eq!(back.to_tsv(), c.to_tsv());
        prop_assert_eq!(back.gold_ids().unwrap(), labels);
    }

    #[test]
    fn dictionary_subsets_are_ordered_prefixes(n in 1usize..40, fraction in 0.01f64..=1.0) {
        let classes = ClassSet::new(["A"]).unwrap();
        let entries = (0..n).map(|i| DictEntry { surface: vec![format!("s{i}")], class: 1 }).collect();
        let d = Dictionary::new(classes.clone(), entries).unwrap();
        let sub = subset_dictionary(&d, fraction).unwrap();
        prop_assert_eq!(sub.len(), (fraction * n as f64 - 1e-9).ceil() as usize);
        prop_assert_eq!(sub.entries(), &d.entries()[..sub.len()]);
        let reparsed = parse_dictionary(&sub.to_text(), &classes, "mem").unwrap();
        prop_assert_eq!(reparsed.entries(), sub.entries());
    }

    #[test]
    fn model_bytes_round_trip(seed in any::<u64>(), hidden in 1usize..6, softmax in any::<bool>()) {
        let (head, k) = if softmax { (Head::Softmax, 3) } else { (Head::Sigmoid, 1) };
        let p = ModelParams::init(4, &[hidden], head, k, seed).unwrap();
        prop_assert_eq!(ModelParams::from_bytes(&p.to_bytes()).unwrap(), p);
    }
}
