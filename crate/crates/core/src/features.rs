//! Token feature vectors: a context-averaged word embedding followed by
//! `n` dictionary lexicon bits.

use std::collections::{HashMap, HashSet};
use std::ops::Deref;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{read_file, Corpus, Dictionary, Sentence, TokenTable};
use crate::error::{Error, Result};

const MODULE: &str = "features";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EmbedSource {
    /// Deterministic pseudo-random unit vectors keyed by `(text, seed)`.
    Hashed { seed: u64 },
    /// word2vec text format; out-of-vocabulary words fall back to hashing
    /// with `fallback_seed`.
    File {
        path: PathBuf,
        #[serde(default)]
        fallback_seed: u64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureConfig {
    pub embed_dim: usize,
    /// Lexicon window `n`; one bit per span length `1..=n`.
    pub window: usize,
    pub embed_source: EmbedSource,
    pub context_radius: usize,
    /// When false the lexicon bits are present but always zero.
    #[serde(default = "yes")]
    pub use_lexicon: bool,
    #[serde(default = "yes")]
    pub case_sensitive: bool,
}

fn yes() -> bool {
    true
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            embed_dim: 16,
            window: 3,
            embed_source: EmbedSource::Hashed { seed: 0 },
            context_radius: 0,
            use_lexicon: true,
            case_sensitive: true,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 {
            return Err(Error::invalid(MODULE, "embed_dim must be at least 1"));
        }
        if self.window == 0 {
            return Err(Error::invalid(MODULE, "window must be at least 1"));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.embed_dim + self.window
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector(pub Vec<f64>);

impl Deref for FeatureVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

pub type FeatureTable = TokenTable<FeatureVector>;

/// Hashed unit-norm embedding of `text` under `seed`.
pub fn hashed_embedding(text: &str, seed: u64, dim: usize) -> Vec<f64> {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(text.as_bytes());
    let digest: [u8; 32] = hasher.finalize().into();
    let mut rng = ChaCha8Rng::from_seed(digest);
    let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    } else {
        v[0] = 1.0;
    }
    v
}

/// Parses a word2vec text file. A leading `count dim` header is accepted.
pub fn load_embeddings(path: impl AsRef<Path>, dim: usize) -> Result<HashMap<String, Vec<f64>>> {
    let path = path.as_ref();
    parse_embeddings(&read_file(path)?, dim, &path.display().to_string())
}

pub fn parse_embeddings(text: &str, dim: usize, origin: &str) -> Result<HashMap<String, Vec<f64>>> {
    let mut table = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if i == 0 && fields.len() == 2 && fields.iter().all(|f| f.parse::<usize>().is_ok()) {
            continue;
        }
        if fields.len() != dim + 1 {
            return Err(Error::parse(
                MODULE,
                origin,
                i + 1,
                format!("expected a word and {dim} values, found {} fields", fields.len()),
            ));
        }
        let values = fields[1..]
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::parse(MODULE, origin, i + 1, format!("bad value {f:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        table.insert(fields[0].to_string(), values);
    }
    Ok(table)
}

/// Renders an embedding table in word2vec text format, sorted by word.
pub fn embeddings_to_text(table: &HashMap<String, Vec<f64>>, dim: usize) -> String {
    let mut words: Vec<&String> = table.keys().collect();
    words.sort();
    let mut out = format!("{} {}\n", words.len(), dim);
    for w in words {
        out.push_str(w);
        for v in &table[w] {
            out.push(' ');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    out
}

/// Set of dictionary surfaces (any class) for lexicon lookups.
pub struct Lexicon {
    surfaces: HashSet<Vec<String>>,
    case_sensitive: bool,
}

impl Lexicon {
    pub fn new(d: &Dictionary, case_sensitive: bool) -> Self {
        let surfaces = d
            .entries()
            .iter()
            .map(|e| e.surface.iter().map(|w| norm(w, case_sensitive)).collect())
            .collect();
        Self {
            surfaces,
            case_sensitive,
        }
    }

    /// Bit `j-1` of token `p` is 1 iff some `j`-gram covering `p` is a surface.
    pub fn bits(&self, words: &[&str], n: usize) -> Vec<Vec<f64>> {
        let words: Vec<String> = words.iter().map(|w| norm(w, self.case_sensitive)).collect();
        let len = words.len();
        let mut bits = vec![vec![0.0; n]; len];
        for j in 1..=n.min(len) {
            for start in 0..=len - j {
                if self.surfaces.contains(&words[start..start + j]) {
                    for row in &mut bits[start..start + j] {
                        row[j - 1] = 1.0;
                    }
                }
            }
        }
        bits
    }
}

fn norm(w: &str, case_sensitive: bool) -> String {
    if case_sensitive {
        w.to_string()
    } else {
        w.to_lowercase()
    }
}

pub fn lexicon_features(s: &Sentence, d: &Dictionary, n: usize) -> Vec<Vec<f64>> {
    Lexicon::new(d, true).bits(&s.texts(), n)
}

/// Loads the lookup table named by the config (empty for hashed
/// embeddings) together with the seed used for words missing from it.
pub fn resolve_embeddings(cfg: &FeatureConfig) -> Result<(HashMap<String, Vec<f64>>, u64)> {
    cfg.validate()?;
    match &cfg.embed_source {
        EmbedSource::Hashed { seed } => Ok((HashMap::new(), *seed)),
        EmbedSource::File {
            path,
            fallback_seed,
        } => Ok((load_embeddings(path, cfg.embed_dim)?, *fallback_seed)),
    }
}

/// Owns the resolved embedding source so files are read once.
pub struct Featurizer {
    cfg: FeatureConfig,
    table: HashMap<String, Vec<f64>>,
    fallback_seed: u64,
    lexicon: Lexicon,
}

impl Featurizer {
    pub fn new(cfg: &FeatureConfig, d: &Dictionary) -> Result<Self> {
        let (table, fallback_seed) = resolve_embeddings(cfg)?;
        Ok(Self::with_table(cfg.clone(), table, fallback_seed, d))
    }

    pub fn with_table(
        cfg: FeatureConfig,
        table: HashMap<String, Vec<f64>>,
        fallback_seed: u64,
        d: &Dictionary,
    ) -> Self {
        let lexicon = Lexicon::new(d, cfg.case_sensitive);
        Self {
            cfg,
            table,
            fallback_seed,
            lexicon,
        }
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.cfg
    }

    pub fn embed(&self, text: &str) -> Vec<f64> {
        match self.table.get(text) {
            Some(v) => v.clone(),
            None => hashed_embedding(text, self.fallback_seed, self.cfg.embed_dim),
        }
    }

    pub fn sentence(&self, s: &Sentence) -> Vec<FeatureVector> {
        let words = s.texts();
        let embeds: Vec<Vec<f64>> = words.iter().map(|w| self.embed(w)).collect();
        let bits = if self.cfg.use_lexicon {
            self.lexicon.bits(&words, self.cfg.window)
        } else {
            vec![vec![0.0; self.cfg.window]; words.len()]
        };
        let r = self.cfg.context_radius;
        (0..words.len())
            .map(|p| {
                let lo = p.saturating_sub(r);
                let hi = (p + r).min(words.len() - 1);
                let mut v = vec![0.0; self.cfg.dim()];
                for e in &embeds[lo..=hi] {
                    for (acc, x) in v.iter_mut().zip(e) {
                        *acc += x;
                    }
                }
                let count = (hi - lo + 1) as f64;
                if count > 1.0 {
                    v[..self.cfg.embed_dim].iter_mut().for_each(|x| *x /= count);
                }
                v[self.cfg.embed_dim..].copy_from_slice(&bits[p]);
                FeatureVector(v)
            })
            .collect()
    }

    pub fn featurize(&self, c: &Corpus) -> FeatureTable {
        c.sentences().iter().map(|s| self.sentence(s)).collect()
    }
}

pub fn embed(text: &str, cfg: &FeatureConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    match &cfg.embed_source {
        EmbedSource::Hashed { seed } => Ok(hashed_embedding(text, *seed, cfg.embed_dim)),
        EmbedSource::File {
            path,
            fallback_seed,
        } => {
            let table = load_embeddings(path, cfg.embed_dim)?;
            Ok(table
                .get(text)
                .cloned()
                .unwrap_or_else(|| hashed_embedding(text, *fallback_seed, cfg.embed_dim)))
        }
    }
}

pub fn featurize(c: &Corpus, d: &Dictionary, cfg: &FeatureConfig) -> Result<FeatureTable> {
    Ok(Featurizer::new(cfg, d)?.featurize(c))
}

/// Debug dump, one token per row.
pub fn write_feature_csv(path: impl AsRef<Path>, c: &Corpus, table: &FeatureTable) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    let dim = table.iter().flatten().next().map_or(0, |v| v.len());
    let mut header = vec!["sentence".to_string(), "position".into(), "token".into()];
    header.extend((0..dim).map(|i| format!("f{i}")));
    w.write_record(&header)?;
    for (s, row) in c.sentences().iter().zip(table) {
        for (t, v) in s.tokens.iter().zip(row) {
            let mut rec = vec![t.sentence_index.to_string(), t.position.to_string(), t.text.clone()];
            rec.extend(v.iter().map(|x| x.to_string()));
            w.write_record(&rec)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{parse_corpus, parse_dictionary, ClassSet};

    fn sentence(text: &str) -> Sentence {
        let c = Corpus::new(
            ClassSet::new(["A"]).unwrap(),
            vec![text.split(' ').map(String::from).collect()],
        )
        .unwrap();
        c.sentences()[0].clone()
    }

    #[test]
    fn lexicon_bits_per_span_length() {
        let cls = ClassSet::new(["LOC"]).unwrap();
        let d = parse_dictionary("New York\tLOC\n", &cls, "d").unwrap();
        let bits = lexicon_features(&sentence("in New York city"), &d, 2);
        assert_eq!(bits[1], vec![0.0, 1.0]);
        assert_eq!(bits[2], vec![0.0, 1.0]);
        assert_eq!(bits[0], vec![0.0, 0.0]);
        assert_eq!(bits[3], vec![0.0, 0.0]);

        let d = parse_dictionary("sepsis\tLOC\n", &cls, "d").unwrap();
        let bits = lexicon_features(&sentence("sepsis"), &d, 3);
        assert_eq!(bits[0], vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn empty_dictionary_gives_zero_bits() {
        let d = Dictionary::new(ClassSet::new(["A"]).unwrap(), vec![]).unwrap();
        let bits = lexicon_features(&sentence("a b c"), &d, 3);
        assert!(bits.iter().flatten().all(|b| *b == 0.0));
    }

    #[test]
    fn hashed_embeddings_are_deterministic_unit_vectors() {
        let a = hashed_embedding("cat", 7, 16);
        assert_eq!(a, hashed_embedding("cat", 7, 16));
        assert_ne!(a, hashed_embedding("cat", 8, 16));
        assert_ne!(a, hashed_embedding("dog", 7, 16));
        for w in ["cat", "dog", "α", "x"] {
            let v = hashed_embedding(w, 3, 5);
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn embedding_file_lookup_and_fallback() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.txt");
        std::fs::write(&path, "cat 0.1 0.2\n").unwrap();
        let cfg = FeatureConfig {
            embed_dim: 2,
            embed_source: EmbedSource::File {
                path: path.clone(),
                fallback_seed: 4,
            },
            ..FeatureConfig::default()
        };
        assert_eq!(embed("cat", &cfg).unwrap(), vec![0.1, 0.2]);
        assert_eq!(embed("dog", &cfg).unwrap(), hashed_embedding("dog", 4, 2));

        std::fs::write(&path, "2 2\ncat 0.1 0.2\ndog 1 x\n").unwrap();
        let e = embed("cat", &cfg).unwrap_err();
        assert!(e.to_string().contains(":3:"), "{e}");
        std::fs::write(&path, "cat 0.1\n").unwrap();
        assert!(embed("cat", &cfg).is_err());
    }

    #[test]
    fn featurize_shapes_and_windows() {
        let c = parse_corpus("#classes: A\nx\ny\nz\n", "t").unwrap();
        let d = parse_dictionary("y\tA\n", c.classes(), "d").unwrap();
        let mut cfg = FeatureConfig {
            embed_dim: 4,
            window: 2,
            embed_source: EmbedSource::Hashed { seed: 11 },
            ..FeatureConfig::default()
        };
        let t = featurize(&c, &d, &cfg).unwrap();
        assert!(t.iter().flatten().all(|v| v.len() == 6));
        assert_eq!(&t[0][0][..4], &hashed_embedding("x", 11, 4)[..]);
        assert_eq!(&t[0][1][4..], &[1.0, 0.0]);

        cfg.context_radius = 1;
        let t = featurize(&c, &d, &cfg).unwrap();
        let e: Vec<Vec<f64>> = ["x", "y", "z"].iter().map(|w| hashed_embedding(w, 11, 4)).collect();
        for i in 0..4 {
            let mean = (e[0][i] + e[1][i] + e[2][i]) / 3.0;
            assert!((t[0][1][i] - mean).abs() < 1e-15);
            let edge = (e[0][i] + e[1][i]) / 2.0;
            assert!((t[0][0][i] - edge).abs() < 1e-15);
        }

        cfg.use_lexicon = false;
        let t = featurize(&c, &d, &cfg).unwrap();
        assert_eq!(&t[0][1][4..], &[0.0, 0.0]);
    }

    #[test]
    fn embeddings_text_round_trip() {
        let mut table = HashMap::new();
        table.insert("b".to_string(), vec![0.1 + 0.2, -3.0]);
        table.insert("a".to_string(), vec![1e-300, 2.5]);
        let text = embeddings_to_text(&table, 2);
        assert!(text.starts_with("2 2\na "));
        assert_eq!(parse_embeddings(&text, 2, "t").unwrap(), table);
    }
}
