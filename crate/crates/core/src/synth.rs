//! Synthetic corpora with known ground truth.
//!
//! Every generated word belongs to exactly one of three families:
//!
//! - entity words `e{c}s{j}w{m}`: word `m` of surface `j` in the pool of
//!   class `c`. Always gold class `c`, so `lambda = 1`.
//! - ambiguous words `a{c}s{j}`: gold class `c` with probability
//!   `ambiguity`, negative otherwise, so `lambda = ambiguity`.
//! - background words `w{j}`: negative except for a small leak rate into
//!   class `1 + j % k`, so `lambda = leak > 0`.
//!
//! Only entity surfaces enter the dictionary, and each entity word occurs
//! only inside its own surface, so dictionary matching is exact and the
//! distant recall of a dictionary can be predicted by counting.
//!
//! Word vectors are drawn around one centroid per family so that unseen
//! entity surfaces of a class resemble seen ones.

use std::collections::{BTreeMap, HashMap};

use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{subset_len, ClassId, ClassSet, Corpus, DictEntry, Dictionary, GoldLabel, TokenTable};
use crate::error::{Error, Result};
use crate::risk::Population;

const MODULE: &str = "synth";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub k: usize,
    pub sentences: usize,
    /// Inclusive range of target sentence lengths. A multi-word surface may
    /// overrun the target by up to `max_surface_len - 1` tokens.
    pub sentence_len: (usize, usize),
    /// Distinct surfaces in each class pool.
    pub entity_surfaces: usize,
    pub max_surface_len: usize,
    /// Ambiguous single-word surfaces per class.
    pub ambiguous_surfaces: usize,
    pub background_words: usize,
    /// Target token fraction of each positive class.
    pub priors: Vec<f64>,
    /// Share of each class's entity tokens that come from ambiguous words.
    pub ambiguous_share: f64,
    /// Probability that an ambiguous word occurrence is an entity.
    pub ambiguity: f64,
    /// Probability that a background word occurrence is an entity.
    pub leak: f64,
    /// Fraction of each class pool placed in the emitted dictionary.
    pub coverage: f64,
    /// Distance of family centroids from the origin in embedding space.
    pub separation: f64,
    pub embed_dim: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            k: 2,
            sentences: 2000,
            sentence_len: (8, 16),
            entity_surfaces: 150,
            max_surface_len: 3,
            ambiguous_surfaces: 10,
            background_words: 800,
            priors: vec![0.1, 0.08],
            ambiguous_share: 0.05,
            ambiguity: 0.5,
            leak: 0.005,
            coverage: 1.0,
            separation: 2.0,
            embed_dim: 16,
            seed: 0,
        }
    }
}

/// Per-unit sampling masses derived from the target priors.
struct UnitMasses {
    entity: Vec<f64>,
    ambiguous: Vec<f64>,
    background: f64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::invalid(MODULE, msg));
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if self.priors.len() != self.k {
            return bad(format!("{} priors given for k = {}", self.priors.len(), self.k));
        }
        if self.priors.iter().any(|p| !(*p > 0.0 && *p < 1.0)) || self.priors.iter().sum::<f64>() >= 1.0 {
            return bad("priors must lie in (0, 1) and sum below 1".into());
        }
        if self.sentences == 0 {
            return bad("sentences must be at least 1".into());
        }
        let (lo, hi) = self.sentence_len;
        if lo == 0 || lo > hi {
            return bad(format!("bad sentence length range ({lo}, {hi})"));
        }
        if self.entity_surfaces == 0 || self.max_surface_len == 0 || self.background_words == 0 {
            return bad("entity_surfaces, max_surface_len and background_words must be positive".into());
        }
        if !(self.coverage > 0.0 && self.coverage <= 1.0) {
            return bad(format!("coverage must be in (0, 1], got {}", self.coverage));
        }
        if !(self.ambiguity > 0.0 && self.ambiguity < 1.0) {
            return bad(format!("ambiguity must be in (0, 1), got {}", self.ambiguity));
        }
        if !(self.leak > 0.0 && self.leak < 1.0) {
            return bad(format!("leak must be in (0, 1), got {}", self.leak));
        }
        if !(0.0..1.0).contains(&self.ambiguous_share) {
            return bad(format!("ambiguous_share must be in [0, 1), got {}", self.ambiguous_share));
        }
        if self.ambiguous_share > 0.0 && self.ambiguous_surfaces == 0 {
            return bad("ambiguous_share > 0 needs at least one ambiguous surface".into());
        }
        if self.separation < 0.0 || !self.separation.is_finite() {
            return bad("separation must be a finite value >= 0".into());
        }
        if self.embed_dim == 0 {
            return bad("embed_dim must be at least 1".into());
        }
        self.unit_masses().map(|_| ())
    }

    pub fn class_names(&self) -> Vec<String> {
        (1..=self.k).map(|c| format!("E{c}")).collect()
    }

    /// Solves for token masses so that the expected class fractions match
    /// the target priors, accounting for ambiguity and leaks.
    fn unit_masses(&self) -> Result<UnitMasses> {
        let k = self.k as f64;
        let s = self.ambiguous_share;
        let total: f64 = self.priors.iter().sum();
        let background = (1.0 - total * (1.0 - s) - s * total / self.ambiguity) / (1.0 - self.leak);
        let ambiguous: Vec<f64> = self.priors.iter().map(|p| s * p / self.ambiguity).collect();
        let entity: Vec<f64> = self
            .priors
            .iter()
            .map(|p| p * (1.0 - s) - background * self.leak / k)
            .collect();
        if background <= 0.0 || entity.iter().any(|x| *x <= 0.0) {
            return Err(Error::invalid(
                MODULE,
                "priors, ambiguity and leak rate leave no room for some token family",
            ));
        }
        Ok(UnitMasses {
            entity,
            ambiguous,
            background,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WordKind {
    Entity(ClassId),
    Ambiguous(ClassId),
    Background,
}

/// Recovers the family of a generated word, or `None` for foreign text.
pub fn word_kind(text: &str, spec: &SynthSpec) -> Option<WordKind> {
    parse_word(text, spec).map(|(kind, _)| kind)
}

/// Family plus the surface (or word) index within its pool.
fn parse_word(text: &str, spec: &SynthSpec) -> Option<(WordKind, usize)> {
    let index = |s: &str| -> Option<usize> {
        (!s.is_empty() && s.bytes().all(|b| b.is_ascii_digit()) && (s == "0" || !s.starts_with('0')))
            .then(|| s.parse().ok())
            .flatten()
    };
    if let Some(rest) = text.strip_prefix('e') {
        let (c, rest) = rest.split_once('s')?;
        let (j, m) = rest.split_once('w')?;
        let (c, j, m) = (index(c)?, index(j)?, index(m)?);
        let ok = (1..=spec.k).contains(&c) && j < spec.entity_surfaces && m < spec.max_surface_len;
        return ok.then_some((WordKind::Entity(c), j));
    }
    if let Some(rest) = text.strip_prefix('a') {
        let (c, j) = rest.split_once('s')?;
        let (c, j) = (index(c)?, index(j)?);
        let ok = (1..=spec.k).contains(&c) && j < spec.ambiguous_surfaces;
        return ok.then_some((WordKind::Ambiguous(c), j));
    }
    let j = index(text.strip_prefix('w')?)?;
    (j < spec.background_words).then_some((WordKind::Background, j))
}

/// Exact generator facts, written next to the corpus as JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bookkeeping {
    pub spec: SynthSpec,
    pub num_tokens: usize,
    pub negative_tokens: usize,
    pub class_tokens: BTreeMap<String, usize>,
    /// Exact gold token fractions.
    pub priors: BTreeMap<String, f64>,
    pub dictionary_entries: BTreeMap<String, usize>,
    /// Gold tokens of each class covered by a dictionary surface.
    pub dictionary_tokens: BTreeMap<String, usize>,
    pub predicted_recall: BTreeMap<String, f64>,
    pub predicted_precision: BTreeMap<String, f64>,
    /// `lambda` per word family: entity, ambiguous, background.
    pub lambda: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_path: Option<String>,
}

impl Bookkeeping {
    /// Exact priors ordered by class id.
    pub fn prior_vec(&self) -> Vec<f64> {
        self.spec.class_names().iter().map(|n| self.priors[n]).collect()
    }
}

pub struct Synthetic {
    /// Gold-labeled corpus without distant labels.
    pub corpus: Corpus,
    /// Dictionary at the spec's coverage.
    pub dictionary: Dictionary,
    /// Dictionary holding every entity surface. Its prefixes are balanced
    /// across classes, so `subset_dictionary(full, rho)` approximates
    /// coverage `rho` for every class at once.
    pub full_dictionary: Dictionary,
    pub lambda: TokenTable<f64>,
    pub embeddings: HashMap<String, Vec<f64>>,
    pub bookkeeping: Bookkeeping,
}

fn entity_word(c: ClassId, j: usize, m: usize) -> String {
    format!("e{c}s{j}w{m}")
}

fn ambiguous_word(c: ClassId, j: usize) -> String {
    format!("a{c}s{j}")
}

fn background_word(j: usize) -> String {
    format!("w{j}")
}

fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    v.iter_mut().for_each(|x| *x /= norm);
    v
}

/// Builds a dictionary from per-class ranked surface lists, taking `take[c]`
/// surfaces of class `c` and interleaving classes rank by rank.
fn interleaved_dictionary(classes: &ClassSet, pools: &[Vec<Vec<String>>], take: &[usize]) -> Result<Dictionary> {
    let longest = take.iter().copied().max().unwrap_or(0);
    let mut entries = Vec::new();
    for rank in 0..longest {
        for (ci, pool) in pools.iter().enumerate() {
            if rank < take[ci] {
                entries.push(DictEntry {
                    surface: pool[rank].clone(),
                    class: ci + 1,
                });
            }
        }
    }
    Dictionary::new(classes.clone(), entries)
}

pub fn generate(spec: &SynthSpec) -> Result<Synthetic> {
    spec.validate()?;
    let masses = spec.unit_masses()?;
    let k = spec.k;
    let names = spec.class_names();
    let classes = ClassSet::new(names.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let pools: Vec<Vec<Vec<String>>> = (1..=k)
        .map(|c| {
            (0..spec.entity_surfaces)
                .map(|j| {
                    let len = rng.random_range(1..=spec.max_surface_len);
                    (0..len).map(|m| entity_word(c, j, m)).collect()
                })
                .collect()
        })
        .collect();

    // unit weights: entity surface of class c, ambiguous word of class c, background
    let mut weights = Vec::with_capacity(2 * k + 1);
    for (c, pool) in pools.iter().enumerate() {
        let mean_len = pool.iter().map(Vec::len).sum::<usize>() as f64 / pool.len() as f64;
        weights.push(masses.entity[c] / mean_len);
    }
    weights.extend(&masses.ambiguous);
    weights.push(masses.background);
    let units = WeightedIndex::new(&weights).map_err(|e| Error::invalid(MODULE, e.to_string()))?;

    let mut sentences = Vec::with_capacity(spec.sentences);
    let mut gold = Vec::with_capacity(spec.sentences);
    for _ in 0..spec.sentences {
        let target = rng.random_range(spec.sentence_len.0..=spec.sentence_len.1);
        let mut words = Vec::new();
        let mut labels = Vec::new();
        while words.len() < target {
            let u = units.sample(&mut rng);
            if u < k {
                let surface = &pools[u][rng.random_range(0..spec.entity_surfaces)];
                words.extend(surface.iter().cloned());
                labels.extend(std::iter::repeat_n(GoldLabel::Positive(u + 1), surface.len()));
            } else if u < 2 * k {
                let c = u - k + 1;
                words.push(ambiguous_word(c, rng.random_range(0..spec.ambiguous_surfaces)));
                labels.push(if rng.random::<f64>() < spec.ambiguity {
                    GoldLabel::Positive(c)
                } else {
                    GoldLabel::Negative
                });
            } else {
                let j = rng.random_range(0..spec.background_words);
                words.push(background_word(j));
                labels.push(if rng.random::<f64>() < spec.leak {
                    GoldLabel::Positive(1 + j % k)
                } else {
                    GoldLabel::Negative
                });
            }
        }
        sentences.push(words);
        gold.push(labels);
    }

    let embeddings = embedding_table(spec, &pools, &mut rng);
    let corpus = Corpus::new(classes.clone(), sentences)?.with_gold(gold)?;

    let take: Vec<usize> = vec![subset_len(spec.entity_surfaces, spec.coverage); k];
    let dictionary = interleaved_dictionary(&classes, &pools, &take)?;
    let full_dictionary = interleaved_dictionary(&classes, &pools, &vec![spec.entity_surfaces; k])?;

    let lambda = true_lambda_table(&corpus, spec)?;
    let bookkeeping = bookkeep(spec, &corpus, &take);
    Ok(Synthetic {
        corpus,
        dictionary,
        full_dictionary,
        lambda,
        embeddings,
        bookkeeping,
    })
}

fn embedding_table(spec: &SynthSpec, pools: &[Vec<Vec<String>>], rng: &mut ChaCha8Rng) -> HashMap<String, Vec<f64>> {
    let d = spec.embed_dim;
    let centroids: Vec<Vec<f64>> = (0..=spec.k).map(|_| unit_vector(rng, d)).collect();
    let noise = Normal::new(0.0, 1.0 / (d as f64).sqrt()).expect("positive sd");
    let draw = |center: &[f64], rng: &mut ChaCha8Rng| -> Vec<f64> {
        center
            .iter()
            .map(|m| spec.separation * m + noise.sample(rng))
            .collect()
    };
    let mut table = HashMap::new();
    for (ci, pool) in pools.iter().enumerate() {
        for surface in pool {
            for w in surface {
                table.insert(w.clone(), draw(&centroids[ci + 1], rng));
            }
        }
    }
    for c in 1..=spec.k {
        let mid: Vec<f64> = centroids[0].iter().zip(&centroids[c]).map(|(a, b)| (a + b) / 2.0).collect();
        for j in 0..spec.ambiguous_surfaces {
            table.insert(ambiguous_word(c, j), draw(&mid, rng));
        }
    }
    for j in 0..spec.background_words {
        table.insert(background_word(j), draw(&centroids[0], rng));
    }
    table
}

fn bookkeep(spec: &SynthSpec, corpus: &Corpus, take: &[usize]) -> Bookkeeping {
    let names = spec.class_names();
    let k = spec.k;
    let mut class_tokens = vec![0usize; k + 1];
    let mut dict_tokens = vec![0usize; k + 1];
    let gold = corpus.gold().expect("generated with gold");
    for (s, labels) in corpus.sentences().iter().zip(gold) {
        for (t, g) in s.tokens.iter().zip(labels) {
            class_tokens[g.class_id()] += 1;
            if let Some((WordKind::Entity(c), j)) = parse_word(&t.text, spec) {
                if j < take[c - 1] {
                    dict_tokens[c] += 1;
                }
            }
        }
    }
    let n = corpus.num_tokens();
    let per_class = |f: &dyn Fn(usize) -> f64| -> BTreeMap<String, f64> {
        names.iter().enumerate().map(|(i, name)| (name.clone(), f(i + 1))).collect()
    };
    let per_class_count = |v: &[usize]| -> BTreeMap<String, usize> {
        names.iter().enumerate().map(|(i, name)| (name.clone(), v[i + 1])).collect()
    };
    let lambda = BTreeMap::from([
        ("entity".to_string(), 1.0),
        ("ambiguous".to_string(), spec.ambiguity),
        ("background".to_string(), spec.leak),
    ]);
    Bookkeeping {
        spec: spec.clone(),
        num_tokens: n,
        negative_tokens: class_tokens[0],
        class_tokens: per_class_count(&class_tokens),
        priors: per_class(&|c| class_tokens[c] as f64 / n as f64),
        dictionary_entries: names.iter().cloned().zip(take.iter().copied()).collect(),
        dictionary_tokens: per_class_count(&dict_tokens),
        predicted_recall: per_class(&|c| {
            if class_tokens[c] == 0 {
                0.0
            } else {
                dict_tokens[c] as f64 / class_tokens[c] as f64
            }
        }),
        predicted_precision: per_class(&|_| 1.0),
        lambda,
        lambda_path: None,
    }
}

fn true_lambda_table(corpus: &Corpus, spec: &SynthSpec) -> Result<TokenTable<f64>> {
    corpus
        .sentences()
        .iter()
        .map(|s| {
            s.tokens
                .iter()
                .map(|t| match word_kind(&t.text, spec) {
                    Some(WordKind::Entity(_)) => Ok(1.0),
                    Some(WordKind::Ambiguous(_)) => Ok(spec.ambiguity),
                    Some(WordKind::Background) => Ok(spec.leak),
                    None => Err(Error::invalid(
                        MODULE,
                        format!(
                            "token {:?} at sentence {}, position {} was not produced by the generator",
                            t.text, t.sentence_index, t.position
                        ),
                    )),
                })
                .collect()
        })
        .collect()
}

/// Exact `p(y > 0 | word)` for every token of a generated corpus.
pub fn true_lambda(corpus: &Corpus, bookkeeping: &Bookkeeping) -> Result<TokenTable<f64>> {
    if corpus.num_classes() != bookkeeping.spec.k {
        return Err(Error::invalid(MODULE, "corpus class count differs from the generator's"));
    }
    true_lambda_table(corpus, &bookkeeping.spec)
}

/// Uniform distribution over the tokens of a gold-labeled corpus. Points are
/// `(sentence, position)` pairs and priors are exact token fractions.
pub struct CorpusPopulation {
    all: Vec<(usize, usize)>,
    by_class: Vec<Vec<(usize, usize)>>,
}

impl CorpusPopulation {
    pub fn new(corpus: &Corpus) -> Result<Self> {
        let gold = corpus
            .gold()
            .ok_or_else(|| Error::invalid(MODULE, "population needs gold labels"))?;
        let mut all = Vec::new();
        let mut by_class = vec![Vec::new(); corpus.num_classes() + 1];
        for (si, row) in gold.iter().enumerate() {
            for (p, g) in row.iter().enumerate() {
                all.push((si, p));
                by_class[g.class_id()].push((si, p));
            }
        }
        if let Some(c) = (1..by_class.len()).find(|c| by_class[*c].is_empty()) {
            return Err(Error::invalid(MODULE, format!("class {c} has no gold tokens")));
        }
        Ok(Self { all, by_class })
    }
}

impl Population for CorpusPopulation {
    type Point = (usize, usize);

    fn num_classes(&self) -> usize {
        self.by_class.len() - 1
    }

    fn prior(&self, class: ClassId) -> f64 {
        self.by_class[class].len() as f64 / self.all.len() as f64
    }

    fn sample_marginal(&self, rng: &mut ChaCha8Rng) -> (usize, usize) {
        self.all[rng.random_range(0..self.all.len())]
    }

    fn sample_class(&self, class: ClassId, rng: &mut ChaCha8Rng) -> (usize, usize) {
        let pool = &self.by_class[class];
        pool[rng.random_range(0..pool.len())]
    }
}

/// Isotropic Gaussian class-conditionals with a shared standard deviation.
/// `means[0]` is the negative class.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianMixture {
    means: Vec<Vec<f64>>,
    sd: f64,
    priors: Vec<f64>,
}

impl GaussianMixture {
    pub fn new(means: Vec<Vec<f64>>, sd: f64, priors: Vec<f64>) -> Result<Self> {
        if means.len() < 2 || priors.len() != means.len() - 1 {
            return Err(Error::invalid(MODULE, "need k + 1 means and k priors"));
        }
        let dim = means[0].len();
        if dim == 0 || means.iter().any(|m| m.len() != dim) {
            return Err(Error::invalid(MODULE, "means must share a positive dimension"));
        }
        if sd.is_nan() || sd <= 0.0 || priors.iter().any(|p| p.is_nan() || *p <= 0.0) || priors.iter().sum::<f64>() >= 1.0 {
            return Err(Error::invalid(MODULE, "sd must be positive and priors in (0, 1) summing below 1"));
        }
        Ok(Self { means, sd, priors })
    }

    /// Two positive classes and a negative class in the plane.
    pub fn default_mixture() -> Self {
        Self::new(
            vec![vec![0.0, 0.0], vec![2.0, 0.0], vec![0.0, 2.0]],
            1.0,
            vec![0.15, 0.1],
        )
        .expect("valid constants")
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    fn weight(&self, class: ClassId) -> f64 {
        if class == 0 {
            1.0 - self.priors.iter().sum::<f64>()
        } else {
            self.priors[class - 1]
        }
    }

    /// Posterior `p(y | x)` over `0..=k`.
    pub fn posterior(&self, x: &[f64]) -> Vec<f64> {
        let logs: Vec<f64> = self
            .means
            .iter()
            .enumerate()
            .map(|(c, m)| {
                let d2: f64 = m.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
                self.weight(c).ln() - d2 / (2.0 * self.sd * self.sd)
            })
            .collect();
        let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
        let z: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / z).collect()
    }

    /// `p(y > 0 | x)`, computed as `1 - p(y = 0 | x)` when that is stabler.
    pub fn lambda(&self, x: &[f64]) -> f64 {
        let post = self.posterior(x);
        post[1..].iter().sum::<f64>()
    }

    fn draw(&self, class: ClassId, rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.means[class]
            .iter()
            .map(|m| m + self.sd * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }
}

impl Population for GaussianMixture {
    type Point = Vec<f64>;

    fn num_classes(&self) -> usize {
        self.priors.len()
    }

    fn prior(&self, class: ClassId) -> f64 {
        self.priors[class - 1]
    }

    fn sample_marginal(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for c in 1..self.means.len() {
            acc += self.priors[c - 1];
            if u < acc {
                return self.draw(c, rng);
            }
        }
        self.draw(0, rng)
    }

    fn sample_class(&self, class: ClassId, rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.draw(class, rng)
    }
}
