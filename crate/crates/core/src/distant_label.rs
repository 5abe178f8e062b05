//! Dictionary-driven distant labeling and label-quality measurement.

use std::collections::{BTreeMap, HashMap};

use serde::Serialize;

use crate::data::{ClassId, Corpus, Dictionary, DistantLabel, GoldLabel, TokenTable};
use crate::error::{Error, Result};

const MODULE: &str = "distant_label";

/// Leftmost-longest exact matcher over token sequences.
///
/// Candidates are indexed by their first word. At equal length the entry
/// that appears first in the dictionary wins.
pub struct Matcher {
    case_sensitive: bool,
    // first word -> (surface, class), longest first, then dictionary order
    by_first: HashMap<String, Vec<(Vec<String>, ClassId)>>,
}

impl Matcher {
    pub fn new(d: &Dictionary, case_sensitive: bool) -> Self {
        let norm = |w: &str| normalize(w, case_sensitive);
        let mut by_first: HashMap<String, Vec<(usize, Vec<String>, ClassId)>> = HashMap::new();
        for (order, e) in d.entries().iter().enumerate() {
            let surface: Vec<String> = e.surface.iter().map(|w| norm(w)).collect();
            by_first
                .entry(surface[0].clone())
                .or_default()
                .push((order, surface, e.class));
        }
        let by_first = by_first
            .into_iter()
            .map(|(k, mut v)| {
                v.sort_by(|a, b| b.1.len().cmp(&a.1.len()).then(a.0.cmp(&b.0)));
                (k, v.into_iter().map(|(_, s, c)| (s, c)).collect())
            })
            .collect();
        Self {
            case_sensitive,
            by_first,
        }
    }

    /// Labels one sentence. Returns one label per word.
    pub fn label(&self, words: &[&str]) -> Vec<DistantLabel> {
        let words: Vec<String> = words
            .iter()
            .map(|w| normalize(w, self.case_sensitive))
            .collect();
        let mut out = vec![DistantLabel::Unlabeled; words.len()];
        let mut p = 0;
        while p < words.len() {
            let hit = self.by_first.get(&words[p]).and_then(|cands| {
                cands
                    .iter()
                    .find(|(s, _)| p + s.len() <= words.len() && words[p..p + s.len()] == s[..])
            });
            match hit {
                Some((s, class)) => {
                    for l in &mut out[p..p + s.len()] {
                        *l = DistantLabel::Positive(*class);
                    }
                    p += s.len();
                }
                None => p += 1,
            }
        }
        out
    }
}

fn normalize(w: &str, case_sensitive: bool) -> String {
    if case_sensitive {
        w.to_string()
    } else {
        w.to_lowercase()
    }
}

/// Returns a copy of `c` whose distant table is produced by greedy
/// leftmost-longest matching against `d`. Existing distant labels are
/// replaced.
pub fn annotate(c: &Corpus, d: &Dictionary, case_sensitive: bool) -> Result<Corpus> {
    let matcher = Matcher::new(d, case_sensitive);
    let table: TokenTable<DistantLabel> = c
        .sentences()
        .iter()
        .map(|s| matcher.label(&s.texts()))
        .collect();
    c.clone().with_distant(table)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassQuality {
    pub precision: f64,
    pub recall: f64,
    pub matched_count: usize,
    pub correct_count: usize,
    pub gold_count: usize,
}

/// Token-level precision and recall of distant labels against gold, per class.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelQualityReport {
    pub per_class: BTreeMap<ClassId, ClassQuality>,
}

impl LabelQualityReport {
    /// Flat JSON object keyed by class name.
    pub fn to_json(&self, c: &Corpus) -> serde_json::Value {
        let map: serde_json::Map<String, serde_json::Value> = self
            .per_class
            .iter()
            .map(|(id, q)| {
                (
                    c.classes().name(*id).unwrap_or("?").to_string(),
                    serde_json::to_value(q).expect("plain struct"),
                )
            })
            .collect();
        serde_json::Value::Object(map)
    }
}

pub fn label_quality(distant: &Corpus, gold: &Corpus) -> Result<LabelQualityReport> {
    let d = distant
        .distant()
        .ok_or_else(|| Error::invalid(MODULE, "first corpus has no distant labels"))?;
    let g = gold
        .gold()
        .ok_or_else(|| Error::invalid(MODULE, "second corpus has no gold labels"))?;
    if distant.num_classes() != gold.num_classes() {
        return Err(Error::invalid(MODULE, "class sets differ"));
    }
    let same_shape = distant.sentences().len() == gold.sentences().len()
        && distant
            .sentences()
            .iter()
            .zip(gold.sentences())
            .all(|(a, b)| a.len() == b.len());
    if !same_shape {
        return Err(Error::invalid(MODULE, "corpora have different token structure"));
    }
    let k = distant.num_classes();
    let mut matched = vec![0usize; k + 1];
    let mut correct = vec![0usize; k + 1];
    let mut gold_n = vec![0usize; k + 1];
    for (drow, grow) in d.iter().zip(g) {
        for (dl, gl) in drow.iter().zip(grow) {
            if let GoldLabel::Positive(c) = *gl {
                gold_n[c] += 1;
            }
            if let DistantLabel::Positive(c) = *dl {
                matched[c] += 1;
                if *gl == GoldLabel::Positive(c) {
                    correct[c] += 1;
                }
            }
        }
    }
    let per_class = (1..=k)
        .map(|c| {
            let precision = if matched[c] == 0 {
                1.0
            } else {
                correct[c] as f64 / matched[c] as f64
            };
            let recall = if gold_n[c] == 0 {
                0.0
            } else {
                correct[c] as f64 / gold_n[c] as f64
            };
            (
                c,
                ClassQuality {
                    precision,
                    recall,
                    matched_count: matched[c],
                    correct_count: correct[c],
                    gold_count: gold_n[c],
                },
            )
        })
        .collect();
    Ok(LabelQualityReport { per_class })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{parse_corpus, parse_dictionary, ClassSet};

    fn words(s: &str) -> Vec<&str> {
        s.split(' ').collect()
    }

    #[test]
    fn dictionary_misses_are_unlabeled() {
        let cls = ClassSet::new(["Disease"]).unwrap();
        let d = parse_dictionary("sepsis\tDisease\n", &cls, "d").unwrap();
        let m = Matcher::new(&d, true);
        let labels = m.label(&words("patient developed sepsis and neutropenia"));
        assert_eq!(labels[2], DistantLabel::Positive(1));
        assert_eq!(labels[4], DistantLabel::Unlabeled);
        assert_eq!(labels.iter().filter(|l| l.class().is_some()).count(), 1);
    }

    #[test]
    fn absent_entries_leave_all_unlabeled() {
        let cls = ClassSet::new(["Disease"]).unwrap();
        let d = parse_dictionary("cholera\tDisease\n", &cls, "d").unwrap();
        let labels = Matcher::new(&d, true).label(&words("patient developed sepsis"));
        assert!(labels.iter().all(|l| *l == DistantLabel::Unlabeled));
    }

    #[test]
    fn longest_match_wins() {
        let cls = ClassSet::new(["ORG", "LOC"]).unwrap();
        let d = parse_dictionary("New\tORG\nNew York\tLOC\n", &cls, "d").unwrap();
        let labels = Matcher::new(&d, true).label(&words("in New York"));
        assert_eq!(
            labels,
            vec![
                DistantLabel::Unlabeled,
                DistantLabel::Positive(2),
                DistantLabel::Positive(2)
            ]
        );
        // the shorter entry still applies where the longer one does not fit
        let labels = Matcher::new(&d, true).label(&words("New Jersey"));
        assert_eq!(labels[0], DistantLabel::Positive(1));
    }

    #[test]
    fn equal_length_tie_goes_to_first_entry() {
        let cls = ClassSet::new(["A", "B"]).unwrap();
        let d = parse_dictionary("x y\tB\nx y\tA\n", &cls, "d").unwrap();
        let labels = Matcher::new(&d, true).label(&words("x y"));
        assert_eq!(labels, vec![DistantLabel::Positive(2); 2]);
    }

    #[test]
    fn matches_do_not_overlap() {
        let cls = ClassSet::new(["A", "B"]).unwrap();
        let d = parse_dictionary("a b\tA\nb c\tB\n", &cls, "d").unwrap();
        let labels = Matcher::new(&d, true).label(&words("a b c"));
        assert_eq!(
            labels,
            vec![
                DistantLabel::Positive(1),
                DistantLabel::Positive(1),
                DistantLabel::Unlabeled
            ]
        );
    }

    #[test]
    fn case_flag() {
        let cls = ClassSet::new(["A"]).unwrap();
        let d = parse_dictionary("Sepsis\tA\n", &cls, "d").unwrap();
        assert_eq!(Matcher::new(&d, true).label(&["sepsis"])[0], DistantLabel::Unlabeled);
        assert_eq!(Matcher::new(&d, false).label(&["sepsis"])[0], DistantLabel::Positive(1));
    }

    #[test]
    fn annotate_replaces_existing_labels() {
        let c = parse_corpus("#classes: A\nx\tO\tA\ny\tA\tO\n", "t").unwrap();
        let cls = c.classes().clone();
        let d = parse_dictionary("y\tA\n", &cls, "d").unwrap();
        let out = annotate(&c, &d, true).unwrap();
        assert_eq!(
            out.distant().unwrap()[0],
            vec![DistantLabel::Unlabeled, DistantLabel::Positive(1)]
        );
        assert_eq!(out.gold(), c.gold());
    }

    #[test]
    fn quality_identity_and_counts() {
        let mut text = String::from("#classes: Disease\n");
        for i in 0..10 {
            let distant = if i < 2 { "Disease" } else { "O" };
            text.push_str(&format!("d{i}\tDisease\t{distant}\n"));
        }
        text.push_str("x\tO\tO\n");
        let c = parse_corpus(&text, "t").unwrap();
        let q = label_quality(&c, &c).unwrap();
        let d = &q.per_class[&1];
        assert_eq!(d.precision, 1.0);
        assert!((d.recall - 0.2).abs() < 1e-15);
        assert_eq!((d.matched_count, d.gold_count), (2, 10));

        let g = c.gold().unwrap().iter().map(|r| {
            r.iter().map(|l| match l {
                GoldLabel::Negative => DistantLabel::Unlabeled,
                GoldLabel::Positive(c) => DistantLabel::Positive(*c),
            }).collect()
        }).collect();
        let exact = c.clone().with_distant(g).unwrap();
        let q = label_quality(&exact, &exact).unwrap();
        assert_eq!(q.per_class[&1].precision, 1.0);
        assert_eq!(q.per_class[&1].recall, 1.0);
        let json = q.to_json(&exact);
        assert_eq!(json["Disease"]["recall"], 1.0);
    }

    #[test]
    fn quality_rejects_mismatched_structure() {
        let a = parse_corpus("#classes: A\nx\tO\tO\n", "t").unwrap();
        let b = parse_corpus("#classes: A\nx\tO\ny\tO\n", "t").unwrap();
        assert!(label_quality(&a, &b).is_err());
    }
}
