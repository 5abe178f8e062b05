//! Corpus and dictionary model plus the plain-text formats they are read
//! from and written to.
//!
//! Corpus TSV layout:
//!
//! ```text
//! #classes: Chemical,Disease
//! EGFR<TAB>Chemical<TAB>Chemical
//! inhibitors<TAB>O<TAB>O
//!
//! next<TAB>O<TAB>O
//! ```
//!
//! `<TAB>` stands for a tab character. One token per line, a blank line between sentences. Column two is the
//! gold label and column three the distant label; `O` means negative in the
//! gold column and unlabeled in the distant column. A corpus that carries
//! distant labels but no gold declares its layout with a second header line
//! `#columns: distant`.
//!
//! Dictionary layout: one `surface<TAB>class` entry per line, multi-word
//! surfaces separated by single spaces.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

const MODULE: &str = "data";

/// Class ids run `1..=k`; `0` is reserved for the negative class.
pub type ClassId = usize;

/// Per-sentence, per-token table aligned with a corpus.
pub type TokenTable<T> = Vec<Vec<T>>;

/// Ordered entity class names. The id of a class is its 1-based position.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassSet {
    names: Vec<String>,
}

impl ClassSet {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.is_empty() {
            return Err(Error::invalid(MODULE, "at least one class is required"));
        }
        for (i, name) in names.iter().enumerate() {
            if name.is_empty() || name == "O" || name.contains([',', '\t', '\n', ' ']) {
                return Err(Error::invalid(MODULE, format!("invalid class name {name:?}")));
            }
            if names[..i].contains(name) {
                return Err(Error::invalid(MODULE, format!("duplicate class name {name:?}")));
            }
        }
        Ok(Self { names })
    }

    /// Number of positive classes `k`.
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, id: ClassId) -> Option<&str> {
        id.checked_sub(1)
            .and_then(|i| self.names.get(i))
            .map(String::as_str)
    }

    pub fn id(&self, name: &str) -> Option<ClassId> {
        self.names.iter().position(|n| n == name).map(|i| i + 1)
    }

    fn header(&self) -> String {
        format!("#classes: {}", self.names.join(","))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    pub sentence_index: usize,
    pub position: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum GoldLabel {
    Negative,
    Positive(ClassId),
}

impl GoldLabel {
    pub fn from_class_id(id: ClassId) -> Self {
        if id == 0 {
            GoldLabel::Negative
        } else {
            GoldLabel::Positive(id)
        }
    }

    pub fn class_id(self) -> ClassId {
        match self {
            GoldLabel::Negative => 0,
            GoldLabel::Positive(c) => c,
        }
    }
}

/// A dictionary-derived label. `Unlabeled` means "not matched", which is not
/// the same as negative.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DistantLabel {
    Unlabeled,
    Positive(ClassId),
}

impl DistantLabel {
    pub fn class(self) -> Option<ClassId> {
        match self {
            DistantLabel::Unlabeled => None,
            DistantLabel::Positive(c) => Some(c),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sentence {
    pub tokens: Vec<Token>,
}

impl Sentence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn texts(&self) -> Vec<&str> {
        self.tokens.iter().map(|t| t.text.as_str()).collect()
    }
}

/// Sentences plus optional gold and distant label tables.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Corpus {
    classes: ClassSet,
    sentences: Vec<Sentence>,
    gold: Option<TokenTable<GoldLabel>>,
    distant: Option<TokenTable<DistantLabel>>,
}

impl Corpus {
    /// Builds an unlabeled corpus from pre-tokenized sentences.
    pub fn new(classes: ClassSet, sentences: Vec<Vec<String>>) -> Result<Self> {
        let mut out = Vec::with_capacity(sentences.len());
        for (si, words) in sentences.into_iter().enumerate() {
            if words.is_empty() {
                return Err(Error::invalid(MODULE, format!("sentence {si} is empty")));
            }
            let tokens = words
                .into_iter()
                .enumerate()
                .map(|(position, text)| {
                    if text.is_empty() || text.contains(['\t', '\n']) {
                        Err(Error::invalid(
                            MODULE,
                            format!("invalid token {text:?} in sentence {si}"),
                        ))
                    } else {
                        Ok(Token {
                            text,
                            sentence_index: si,
                            position,
                        })
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            out.push(Sentence { tokens });
        }
        Ok(Self {
            classes,
            sentences: out,
            gold: None,
            distant: None,
        })
    }

    pub fn with_gold(mut self, gold: TokenTable<GoldLabel>) -> Result<Self> {
        self.check_table(&gold, "gold")?;
        for label in gold.iter().flatten() {
            if let GoldLabel::Positive(c) = *label {
                self.check_class(c)?;
            }
        }
        self.gold = Some(gold);
        Ok(self)
    }

    pub fn with_distant(mut self, distant: TokenTable<DistantLabel>) -> Result<Self> {
        self.check_table(&distant, "distant")?;
        for label in distant.iter().flatten() {
            if let DistantLabel::Positive(c) = *label {
                self.check_class(c)?;
            }
        }
        self.distant = Some(distant);
        Ok(self)
    }

    pub fn without_gold(mut self) -> Self {
        self.gold = None;
        self
    }

    pub fn without_distant(mut self) -> Self {
        self.distant = None;
        self
    }

    fn check_class(&self, c: ClassId) -> Result<()> {
        if c == 0 || c > self.classes.len() {
            return Err(Error::invalid(MODULE, format!("class id {c} out of range 1..={}", self.classes.len())));
        }
        Ok(())
    }

    /// Verifies that `table` has exactly one entry per token.
    pub fn check_table<T>(&self, table: &TokenTable<T>, what: &str) -> Result<()> {
        if table.len() != self.sentences.len() {
            return Err(Error::invalid(
                MODULE,
                format!(
                    "{what} table has {} sentences, corpus has {}",
                    table.len(),
                    self.sentences.len()
                ),
            ));
        }
        for (i, (row, s)) in table.iter().zip(&self.sentences).enumerate() {
            if row.len() != s.len() {
                return Err(Error::invalid(
                    MODULE,
                    format!("{what} table sentence {i} has {} entries, expected {}", row.len(), s.len()),
                ));
            }
        }
        Ok(())
    }

    pub fn classes(&self) -> &ClassSet {
        &self.classes
    }

    /// Number of positive classes `k`.
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn sentences(&self) -> &[Sentence] {
        &self.sentences
    }

    pub fn gold(&self) -> Option<&TokenTable<GoldLabel>> {
        self.gold.as_ref()
    }

    pub fn distant(&self) -> Option<&TokenTable<DistantLabel>> {
        self.distant.as_ref()
    }

    pub fn num_tokens(&self) -> usize {
        self.sentences.iter().map(Sentence::len).sum()
    }

    /// Gold labels as class ids (0 = negative).
    pub fn gold_ids(&self) -> Option<TokenTable<ClassId>> {
        self.gold.as_ref().map(|g| {
            g.iter()
                .map(|row| row.iter().map(|l| l.class_id()).collect())
                .collect()
        })
    }

    /// Splits at sentence `at`: sentences `[0, at)` and `[at, len)`.
    /// Sentence indices are renumbered from zero in each half.
    pub fn split_at(&self, at: usize) -> Result<(Corpus, Corpus)> {
        if at > self.sentences.len() {
            return Err(Error::invalid(MODULE, format!("split point {at} beyond corpus length")));
        }
        Ok((self.slice(0, at), self.slice(at, self.sentences.len())))
    }

    fn slice(&self, start: usize, end: usize) -> Corpus {
        let sentences = self.sentences[start..end]
            .iter()
            .enumerate()
            .map(|(si, s)| Sentence {
                tokens: s
                    .tokens
                    .iter()
                    .map(|t| Token {
                        sentence_index: si,
                        ..t.clone()
                    })
                    .collect(),
            })
            .collect();
        Corpus {
            classes: self.classes.clone(),
            sentences,
            gold: self.gold.as_ref().map(|g| g[start..end].to_vec()),
            distant: self.distant.as_ref().map(|d| d[start..end].to_vec()),
        }
    }

    /// Renders the corpus in canonical TSV form.
    pub fn to_tsv(&self) -> String {
        let mut out = self.classes.header();
        out.push('\n');
        if self.gold.is_none() && self.distant.is_some() {
            out.push_str("#columns: distant\n");
        }
        for (si, s) in self.sentences.iter().enumerate() {
            if si > 0 {
                out.push('\n');
            }
            for (ti, t) in s.tokens.iter().enumerate() {
                out.push_str(&t.text);
                if let Some(g) = &self.gold {
                    out.push('\t');
                    out.push_str(match g[si][ti] {
                        GoldLabel::Negative => "O",
                        GoldLabel::Positive(c) => self.classes.name(c).unwrap_or("O"),
                    });
                }
                if let Some(d) = &self.distant {
                    out.push('\t');
                    out.push_str(match d[si][ti] {
                        DistantLabel::Unlabeled => "O",
                        DistantLabel::Positive(c) => self.classes.name(c).unwrap_or("O"),
                    });
                }
                out.push('\n');
            }
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), &self.to_tsv())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Layout {
    TokensOnly,
    Gold,
    Distant,
    GoldDistant,
}

impl Layout {
    fn columns(self) -> usize {
        match self {
            Layout::TokensOnly => 1,
            Layout::Gold | Layout::Distant => 2,
            Layout::GoldDistant => 3,
        }
    }
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let text = read_file(path)?;
    parse_corpus(&text, &path.display().to_string())
}

/// Parses corpus TSV text. `origin` is used in error messages only.
pub fn parse_corpus(text: &str, origin: &str) -> Result<Corpus> {
    let err = |line: usize, msg: String| Error::parse(MODULE, origin, line, msg);
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l)).peekable();

    let (first_no, first) = match lines.next() {
        Some(l) => l,
        None => return Err(err(1, "empty corpus".into())),
    };
    let classes = first
        .strip_prefix("#classes:")
        .ok_or_else(|| err(first_no, "first line must be \"#classes: name1,name2,...\"".into()))?;
    let classes = ClassSet::new(classes.split(',').map(str::trim))
        .map_err(|e| err(first_no, e.to_string()))?;

    let mut layout = None;
    if let Some((no, l)) = lines.peek().copied() {
        if let Some(cols) = l.strip_prefix("#columns:") {
            lines.next();
            layout = Some(match cols.trim() {
                "" => Layout::TokensOnly,
                "gold" => Layout::Gold,
                "distant" => Layout::Distant,
                "gold,distant" => Layout::GoldDistant,
                other => return Err(err(no, format!("unknown column layout {other:?}"))),
            });
        }
    }

    let mut sentences: Vec<Vec<String>> = Vec::new();
    let mut gold: TokenTable<GoldLabel> = Vec::new();
    let mut distant: TokenTable<DistantLabel> = Vec::new();
    let mut in_sentence = false;

    for (no, line) in lines {
        if line.trim().is_empty() {
            in_sentence = false;
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let layout = *layout.get_or_insert(match fields.len() {
            1 => Layout::TokensOnly,
            2 => Layout::Gold,
            3 => Layout::GoldDistant,
            n => return Err(err(no, format!("expected 1 to 3 tab-separated columns, found {n}"))),
        });
        if fields.len() != layout.columns() {
            return Err(err(
                no,
                format!("expected {} columns, found {}", layout.columns(), fields.len()),
            ));
        }
        if fields[0].is_empty() {
            return Err(err(no, "empty token".into()));
        }
        if !in_sentence {
            sentences.push(Vec::new());
            gold.push(Vec::new());
            distant.push(Vec::new());
            in_sentence = true;
        }
        sentences.last_mut().unwrap().push(fields[0].to_string());
        let class_of = |name: &str| -> Result<Option<ClassId>> {
            if name == "O" {
                Ok(None)
            } else {
                classes
                    .id(name)
                    .map(Some)
                    .ok_or_else(|| err(no, format!("unknown class name {name:?}")))
            }
        };
        match layout {
            Layout::TokensOnly => {}
            Layout::Gold => gold
                .last_mut()
                .unwrap()
                .push(class_of(fields[1])?.map_or(GoldLabel::Negative, GoldLabel::Positive)),
            Layout::Distant => distant
                .last_mut()
                .unwrap()
                .push(class_of(fields[1])?.map_or(DistantLabel::Unlabeled, DistantLabel::Positive)),
            Layout::GoldDistant => {
                gold.last_mut()
                    .unwrap()
                    .push(class_of(fields[1])?.map_or(GoldLabel::Negative, GoldLabel::Positive));
                distant
                    .last_mut()
                    .unwrap()
                    .push(class_of(fields[2])?.map_or(DistantLabel::Unlabeled, DistantLabel::Positive));
            }
        }
    }

    if sentences.is_empty() {
        return Err(err(1, "empty corpus".into()));
    }
    let layout = layout.unwrap_or(Layout::TokensOnly);
    let mut corpus = Corpus::new(classes, sentences)?;
    if matches!(layout, Layout::Gold | Layout::GoldDistant) {
        corpus = corpus.with_gold(gold)?;
    }
    if matches!(layout, Layout::Distant | Layout::GoldDistant) {
        corpus = corpus.with_distant(distant)?;
    }
    Ok(corpus)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DictEntry {
    pub surface: Vec<String>,
    pub class: ClassId,
}

/// Ordered dictionary; entry order is load order and is significant for
/// subsetting and tie-breaking.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dictionary {
    classes: ClassSet,
    entries: Vec<DictEntry>,
}

impl Dictionary {
    pub fn new(classes: ClassSet, entries: Vec<DictEntry>) -> Result<Self> {
        for e in &entries {
            if e.surface.is_empty() || e.surface.iter().any(|w| w.is_empty()) {
                return Err(Error::invalid(MODULE, "dictionary surfaces must be non-empty"));
            }
            if e.class == 0 || e.class > classes.len() {
                return Err(Error::invalid(MODULE, format!("dictionary class id {} out of range", e.class)));
            }
        }
        Ok(Self { classes, entries })
    }

    pub fn classes(&self) -> &ClassSet {
        &self.classes
    }

    pub fn entries(&self) -> &[DictEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            let _ = writeln!(
                out,
                "{}\t{}",
                e.surface.join(" "),
                self.classes.name(e.class).unwrap_or("?")
            );
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), &self.to_text())
    }
}

pub fn load_dictionary(path: impl AsRef<Path>, classes: &ClassSet) -> Result<Dictionary> {
    let path = path.as_ref();
    let text = read_file(path)?;
    parse_dictionary(&text, classes, &path.display().to_string())
}

pub fn parse_dictionary(text: &str, classes: &ClassSet, origin: &str) -> Result<Dictionary> {
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let no = i + 1;
        if line.is_empty() {
            continue;
        }
        let (surface, class) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(MODULE, origin, no, "expected surface<TAB>class"))?;
        if surface.trim().is_empty() {
            return Err(Error::parse(MODULE, origin, no, "blank surface"));
        }
        let words: Vec<String> = surface.split(' ').map(str::to_string).collect();
        if words.iter().any(String::is_empty) {
            return Err(Error::parse(MODULE, origin, no, "surface words must be separated by single spaces"));
        }
        let class = classes
            .id(class)
            .ok_or_else(|| Error::parse(MODULE, origin, no, format!("unknown class name {class:?}")))?;
        entries.push(DictEntry {
            surface: words,
            class,
        });
    }
    Ok(Dictionary {
        classes: classes.clone(),
        entries,
    })
}

/// First `ceil(fraction * len)` entries, in original order.
pub fn subset_dictionary(d: &Dictionary, fraction: f64) -> Result<Dictionary> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid(MODULE, format!("fraction must be in (0, 1], got {fraction}")));
    }
    let n = subset_len(d.len(), fraction);
    Ok(Dictionary {
        classes: d.classes.clone(),
        entries: d.entries[..n].to_vec(),
    })
}

/// `ceil(fraction * len)`, tolerant to products like `0.6 * 5 = 3.0000000000000004`.
pub(crate) fn subset_len(len: usize, fraction: f64) -> usize {
    let raw = fraction * len as f64;
    let n = (raw - 1e-9 * raw.max(1.0)).ceil().max(0.0) as usize;
    n.min(len)
}

/// Writes a per-token real-valued table: one value per line, blank line
/// between sentences.
pub fn token_values_to_text(values: &TokenTable<f64>) -> String {
    let mut out = String::new();
    for (si, row) in values.iter().enumerate() {
        if si > 0 {
            out.push('\n');
        }
        for v in row {
            let _ = writeln!(out, "{v}");
        }
    }
    out
}

pub fn write_token_values(path: impl AsRef<Path>, values: &TokenTable<f64>) -> Result<()> {
    write_file(path.as_ref(), &token_values_to_text(values))
}

/// Reads a per-token value table and checks it against the corpus shape.
pub fn load_token_values(path: impl AsRef<Path>, corpus: &Corpus) -> Result<TokenTable<f64>> {
    let path = path.as_ref();
    let origin = path.display().to_string();
    let text = read_file(path)?;
    let mut table: TokenTable<f64> = Vec::new();
    let mut in_sentence = false;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            in_sentence = false;
            continue;
        }
        let v: f64 = line
            .trim()
            .parse()
            .map_err(|_| Error::parse(MODULE, &origin, i + 1, format!("not a number: {line:?}")))?;
        if !in_sentence {
            table.push(Vec::new());
            in_sentence = true;
        }
        table.last_mut().unwrap().push(v);
    }
    corpus.check_table(&table, "value")?;
    Ok(table)
}

pub(crate) fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn classes() -> ClassSet {
        ClassSet::new(["Chemical", "Disease"]).unwrap()
    }

    #[test]
    fn loads_gold_column() {
        let c = parse_corpus("#classes: Chemical,Disease\nEGFR\tChemical\ninhibitors\tO\n", "t").unwrap();
        assert_eq!(c.num_tokens(), 2);
        let gold = c.gold().unwrap();
        assert_eq!(gold[0][0], GoldLabel::Positive(1));
        assert_eq!(gold[0][1], GoldLabel::Negative);
        assert!(c.distant().is_none());
    }

    #[test]
    fn empty_file_is_rejected() {
        let e = parse_corpus("", "t").unwrap_err();
        assert!(e.to_string().contains("empty corpus"), "{e}");
        let e = parse_corpus("#classes: A\n\n", "t").unwrap_err();
        assert!(e.to_string().contains("empty corpus"), "{e}");
    }

    #[test]
    fn three_columns_populate_both_tables() {
        let text = "#classes: Chemical,Disease\n\
                    patient\tO\tO\n\
                    developed\tO\tO\n\
                    sepsis\tDisease\tDisease\n\
                    \n\
                    EGFR\tChemical\tO\n\
                    dose\tO\tO\n";
        let c = parse_corpus(text, "t").unwrap();
        assert_eq!(c.sentences().len(), 2);
        assert_eq!(c.num_tokens(), 5);
        let gold = c.gold().unwrap();
        let distant = c.distant().unwrap();
        assert_eq!(gold[0][2], GoldLabel::Positive(2));
        assert_eq!(distant[0][2], DistantLabel::Positive(2));
        assert_eq!(gold[1][0], GoldLabel::Positive(1));
        assert_eq!(distant[1][0], DistantLabel::Unlabeled);
        assert_eq!(c.sentences()[1].tokens[1].position, 1);
        assert_eq!(c.sentences()[1].tokens[1].sentence_index, 1);
        assert_eq!(c.to_tsv(), text);
    }

    #[test]
    fn distant_only_layout_round_trips() {
        let text = "#classes: A\n#columns: distant\nx\tA\ny\tO\n";
        let c = parse_corpus(text, "t").unwrap();
        assert!(c.gold().is_none());
        assert_eq!(c.distant().unwrap()[0][0], DistantLabel::Positive(1));
        assert_eq!(c.to_tsv(), text);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let e = parse_corpus("#classes: A\nx\tA\ny\tO\tO\n", "f.tsv").unwrap_err();
        assert!(e.to_string().contains("f.tsv:3"), "{e}");
        let e = parse_corpus("#classes: A\nx\tB\n", "f.tsv").unwrap_err();
        assert!(e.to_string().contains(":2:") && e.to_string().contains("unknown class"), "{e}");
        assert!(parse_corpus("x\tA\n", "f").is_err());
    }

    #[test]
    fn dictionary_entries() {
        let cls = ClassSet::new(["Disease", "LOC"]).unwrap();
        let d = parse_dictionary("sepsis\tDisease\nNew York\tLOC\n", &cls, "d").unwrap();
        assert_eq!(d.entries()[0].surface, vec!["sepsis"]);
        assert_eq!(d.entries()[0].class, 1);
        assert_eq!(d.entries()[1].surface, vec!["New", "York"]);
        assert_eq!(d.entries()[1].class, 2);
    }

    #[test]
    fn dictionary_duplicates_keep_order() {
        let cls = classes();
        let d = parse_dictionary("a\tChemical\nb\tDisease\na\tChemical\nc\tChemical\n", &cls, "d").unwrap();
        let surfaces: Vec<_> = d.entries().iter().map(|e| e.surface.join(" ")).collect();
        assert_eq!(surfaces, ["a", "b", "a", "c"]);
        assert_eq!(d.to_text(), "a\tChemical\nb\tDisease\na\tChemical\nc\tChemical\n");
    }

    #[test]
    fn dictionary_errors() {
        let cls = classes();
        let e = parse_dictionary("a\tChemical\nx\tGene\n", &cls, "d").unwrap_err();
        assert!(e.to_string().contains("d:2"), "{e}");
        let e = parse_dictionary("\tChemical\n", &cls, "d").unwrap_err();
        assert!(e.to_string().contains("blank surface"), "{e}");
    }

    fn dict_of(n: usize) -> Dictionary {
        let cls = ClassSet::new(["A"]).unwrap();
        let entries = (0..n)
            .map(|i| DictEntry {
                surface: vec![format!("w{i}")],
                class: 1,
            })
            .collect();
        Dictionary::new(cls, entries).unwrap()
    }

    #[test]
    fn subset_sizes() {
        assert_eq!(subset_dictionary(&dict_of(10), 0.2).unwrap().len(), 2);
        assert_eq!(subset_dictionary(&dict_of(10), 1.0).unwrap(), dict_of(10));
        assert_eq!(subset_dictionary(&dict_of(7), 0.5).unwrap().len(), 4);
        assert_eq!(subset_dictionary(&dict_of(5), 0.6).unwrap().len(), 3);
        assert_eq!(subset_dictionary(&dict_of(3), 0.01).unwrap().len(), 1);
        assert!(subset_dictionary(&dict_of(3), 0.0).is_err());
        assert!(subset_dictionary(&dict_of(3), 1.5).is_err());
    }

    #[test]
    fn token_values_round_trip() {
        let c = parse_corpus("#classes: A\na\nb\n\nc\n", "t").unwrap();
        let values = vec![vec![0.25, 0.1], vec![0.999]];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.txt");
        write_token_values(&p, &values).unwrap();
        assert_eq!(load_token_values(&p, &c).unwrap(), values);
    }

    #[test]
    fn split_renumbers_sentences() {
        let c = parse_corpus("#classes: A\na\tA\n\nb\tO\n\nc\tO\n", "t").unwrap();
        let (head, tail) = c.split_at(2).unwrap();
        assert_eq!(head.sentences().len(), 2);
        assert_eq!(tail.sentences()[0].tokens[0].text, "c");
        assert_eq!(tail.sentences()[0].tokens[0].sentence_index, 0);
        assert_eq!(tail.gold().unwrap()[0][0], GoldLabel::Negative);
    }
}
