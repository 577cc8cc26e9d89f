//! Synthetic languages with ground-truth translations.
//!
//! A small base grammar ("en") generates sentences as sequences of lexicon
//! entries with selectional preferences (each animal has its own verbs and
//! adjectives, each transitive verb its own objects). Other languages are
//! word-substitution ciphers of the base: every lexicon entry gets an
//! invented surface form, except personal names, which stay shared across
//! all languages. Related languages copy a fraction of another cipher's
//! forms.

use std::collections::{BTreeMap, HashSet};

use rand::seq::IndexedRandom;
use rand::Rng as _;

use crate::corpus::{CorpusCollection, Document, LanguageCode, MonolingualCorpus, ParallelCorpus};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::tokenizer::{train_vocab, VocabConfig, Vocabulary};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Class {
    Det,
    Animal,
    Person,
    Name,
    Thing,
    Place,
    Intransitive,
    Transitive,
    Adjective,
    Preposition,
}

const LEXICON: &[(Class, &[&str])] = &[
    (Class::Det, &["the", "a"]),
    (
        Class::Animal,
        &["dog", "cat", "bird", "horse", "fish", "cow", "fox", "bear"],
    ),
    (
        Class::Person,
        &["man", "woman", "boy", "girl", "king", "farmer"],
    ),
    (Class::Name, &["anna", "omar", "lena", "taro"]),
    (
        Class::Thing,
        &[
            "ball", "book", "apple", "house", "tree", "bread", "stone", "cup", "letter", "boat",
        ],
    ),
    (Class::Place, &["park", "river", "garden", "city", "forest"]),
    (
        Class::Intransitive,
        &[
            "runs", "sleeps", "swims", "flies", "barks", "sings", "waits", "jumps",
        ],
    ),
    (
        Class::Transitive,
        &[
            "sees", "reads", "eats", "builds", "finds", "holds", "throws", "paints",
        ],
    ),
    (
        Class::Adjective,
        &[
            "big", "small", "red", "old", "green", "happy", "quiet", "young",
        ],
    ),
    (Class::Preposition, &["near", "under", "in", "behind"]),
];

const CONSONANTS: &[&str] = &[
    "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z",
];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u"];

/// A language of the toy family: one surface form per lexicon entry.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyLanguage {
    pub code: LanguageCode,
    pub forms: Vec<String>,
    /// Place adjectives after the noun they modify.
    pub adjective_after_noun: bool,
}

/// Lexicon, preferences and the registry of invented forms.
#[derive(Clone, Debug)]
pub struct ToyWorld {
    classes: Vec<Class>,
    base: Vec<&'static str>,
    by_class: BTreeMap<Class, Vec<usize>>,
    /// Preferred verbs and adjectives per noun, objects per transitive verb.
    verbs_of: BTreeMap<usize, Vec<usize>>,
    adjectives_of: BTreeMap<usize, Vec<usize>>,
    objects_of: BTreeMap<usize, Vec<usize>>,
    used: HashSet<String>,
    rng: Rng,
}

impl ToyWorld {
    pub fn new(seed: u64) -> Self {
        let mut classes = Vec::new();
        let mut base = Vec::new();
        let mut by_class: BTreeMap<Class, Vec<usize>> = BTreeMap::new();
        for &(class, words) in LEXICON {
            for &w in words {
                by_class.entry(class).or_default().push(base.len());
                classes.push(class);
                base.push(w);
            }
        }
        let mut rng = rng::derive(seed, &[0x70f]);
        let pick = |rng: &mut Rng, pool: &[usize], n: usize| -> Vec<usize> {
            let mut v: Vec<usize> = pool.choose_multiple(rng, n).copied().collect();
            v.sort_unstable();
            v
        };
        let mut verbs_of = BTreeMap::new();
        let mut adjectives_of = BTreeMap::new();
        let mut objects_of = BTreeMap::new();
        for &a in &by_class[&Class::Animal] {
            verbs_of.insert(a, pick(&mut rng, &by_class[&Class::Intransitive], 2));
        }
        for &p in by_class[&Class::Person]
            .iter()
            .chain(&by_class[&Class::Name])
        {
            verbs_of.insert(p, pick(&mut rng, &by_class[&Class::Transitive], 3));
        }
        for &v in &by_class[&Class::Transitive] {
            objects_of.insert(v, pick(&mut rng, &by_class[&Class::Thing], 3));
        }
        for class in [Class::Animal, Class::Person, Class::Thing, Class::Place] {
            for &n in &by_class[&class] {
                adjectives_of.insert(n, pick(&mut rng, &by_class[&Class::Adjective], 2));
            }
        }
        let used = base.iter().map(|w| w.to_string()).collect();
        ToyWorld {
            classes,
            base,
            by_class,
            verbs_of,
            adjectives_of,
            objects_of,
            used,
            rng,
        }
    }

    pub fn lexicon_size(&self) -> usize {
        self.base.len()
    }

    pub fn class_of(&self, word: usize) -> Class {
        self.classes[word]
    }

    /// The base language itself.
    pub fn base(&self) -> ToyLanguage {
        ToyLanguage {
            code: LanguageCode::new("en").expect("valid code"),
            forms: self.base.iter().map(|w| w.to_string()).collect(),
            adjective_after_noun: false,
        }
    }

    fn fresh_form(&mut self) -> String {
        loop {
            let syllables = self.rng.random_range(2..=3);
            let w: String = (0..syllables)
                .map(|_| {
                    format!(
                        "{}{}",
                        CONSONANTS.choose(&mut self.rng).expect("nonempty"),
                        VOWELS.choose(&mut self.rng).expect("nonempty")
                    )
                })
                .collect();
            if self.used.insert(w.clone()) {
                return w;
            }
        }
    }

    /// A full substitution cipher of the base language (names stay shared).
    pub fn cipher(&mut self, code: &str) -> Result<ToyLanguage> {
        let code = LanguageCode::new(code)?;
        let forms = (0..self.base.len())
            .map(|i| {
                if self.classes[i] == Class::Name {
                    self.base[i].to_string()
                } else {
                    self.fresh_form()
                }
            })
            .collect();
        Ok(ToyLanguage {
            code,
            forms,
            adjective_after_noun: false,
        })
    }

    /// A cipher that reuses `of`'s forms for a `share` fraction of the
    /// non-name lexicon and invents the rest.
    pub fn related(&mut self, of: &ToyLanguage, code: &str, share: f64) -> Result<ToyLanguage> {
        if !(0.0..=1.0).contains(&share) {
            return Err(Error::Config(format!("share {share} outside [0, 1]")));
        }
        let code = LanguageCode::new(code)?;
        let candidates: Vec<usize> = (0..self.base.len())
            .filter(|&i| self.classes[i] != Class::Name)
            .collect();
        let n = (share * candidates.len() as f64).round() as usize;
        let shared: HashSet<usize> = candidates
            .choose_multiple(&mut self.rng, n)
            .copied()
            .collect();
        let forms = (0..self.base.len())
            .map(|i| {
                if self.classes[i] == Class::Name || shared.contains(&i) {
                    of.forms[i].clone()
                } else {
                    self.fresh_form()
                }
            })
            .collect();
        Ok(ToyLanguage {
            code,
            forms,
            adjective_after_noun: of.adjective_after_noun,
        })
    }

    fn maybe_adjective(&self, rng: &mut Rng, noun: usize, out: &mut Vec<usize>) {
        if rng.random_bool(0.5) {
            out.push(*self.adjectives_of[&noun].choose(rng).expect("nonempty"));
        }
    }

    fn noun_phrase(&self, rng: &mut Rng, noun: usize, out: &mut Vec<usize>) {
        out.push(*self.by_class[&Class::Det].choose(rng).expect("nonempty"));
        self.maybe_adjective(rng, noun, out);
        out.push(noun);
    }

    /// One base sentence as lexicon indices.
    pub fn sentence(&self, rng: &mut Rng) -> Vec<usize> {
        let mut out = Vec::new();
        let any = |rng: &mut Rng, c: Class| *self.by_class[&c].choose(rng).expect("nonempty");
        if rng.random_bool(0.45) {
            let a = any(rng, Class::Animal);
            self.noun_phrase(rng, a, &mut out);
            out.push(*self.verbs_of[&a].choose(rng).expect("nonempty"));
        } else {
            let subj = if rng.random_bool(0.3) {
                let n = any(rng, Class::Name);
                out.push(n);
                n
            } else {
                let p = any(rng, Class::Person);
                self.noun_phrase(rng, p, &mut out);
                p
            };
            let v = *self.verbs_of[&subj].choose(rng).expect("nonempty");
            out.push(v);
            let obj = *self.objects_of[&v].choose(rng).expect("nonempty");
            self.noun_phrase(rng, obj, &mut out);
        }
        if rng.random_bool(0.35) {
            out.push(any(rng, Class::Preposition));
            let place = any(rng, Class::Place);
            self.noun_phrase(rng, place, &mut out);
        }
        out
    }

    /// Surface string of a base sentence in `lang`.
    pub fn render(&self, lang: &ToyLanguage, words: &[usize]) -> String {
        let mut order: Vec<usize> = words.to_vec();
        if lang.adjective_after_noun {
            let mut i = 0;
            while i + 1 < order.len() {
                if self.classes[order[i]] == Class::Adjective {
                    order.swap(i, i + 1);
                    i += 2;
                } else {
                    i += 1;
                }
            }
        }
        order
            .iter()
            .map(|&w| lang.forms[w].as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Monolingual documents drawn from a stream seeded by `seed`.
    pub fn monolingual(
        &self,
        lang: &ToyLanguage,
        documents: usize,
        sentences_per_document: usize,
        seed: u64,
    ) -> Result<MonolingualCorpus> {
        let mut rng = rng::derive(seed, &[0x3030]);
        let docs: Vec<Document> = (0..documents)
            .map(|_| {
                (0..sentences_per_document)
                    .map(|_| self.render(lang, &self.sentence(&mut rng)))
                    .collect()
            })
            .collect();
        MonolingualCorpus::new(lang.code.clone(), docs)
    }

    /// `n` aligned pairs of the same base sentences.
    pub fn parallel(
        &self,
        src: &ToyLanguage,
        tgt: &ToyLanguage,
        n: usize,
        seed: u64,
    ) -> Result<ParallelCorpus> {
        let mut rng = rng::derive(seed, &[0x9a9a]);
        let pairs = (0..n)
            .map(|_| {
                let s = self.sentence(&mut rng);
                (self.render(src, &s), self.render(tgt, &s))
            })
            .collect();
        ParallelCorpus::new(src.code.clone(), tgt.code.clone(), pairs)
    }
}

/// Languages, corpora and vocabulary of one toy experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyTaskConfig {
    pub seed: u64,
    /// `(code, share)`: a cipher of the base language reusing `share` of its forms.
    pub ciphers: Vec<(String, f64)>,
    /// `(code, of, share)`: a language reusing `share` of cipher `of`'s forms.
    pub related: Vec<(String, String, f64)>,
    pub documents: usize,
    pub sentences_per_document: usize,
    pub vocab_size: usize,
}

impl Default for ToyTaskConfig {
    fn default() -> Self {
        ToyTaskConfig {
            seed: 1,
            ciphers: vec![("xx".into(), 0.0)],
            related: Vec::new(),
            documents: 200,
            sentences_per_document: 8,
            vocab_size: 400,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ToyTask {
    pub config: ToyTaskConfig,
    pub world: ToyWorld,
    pub languages: BTreeMap<LanguageCode, ToyLanguage>,
    /// One monolingual corpus per language, token counts filled in.
    pub collection: CorpusCollection,
    pub vocab: Vocabulary,
}

impl ToyTask {
    pub fn build(cfg: &ToyTaskConfig) -> Result<Self> {
        let mut world = ToyWorld::new(cfg.seed);
        let base = world.base();
        let mut languages = BTreeMap::new();
        let mut order = vec![base.clone()];
        for (code, share) in &cfg.ciphers {
            let lang = if *share > 0.0 {
                world.related(&base, code, *share)?
            } else {
                world.cipher(code)?
            };
            order.push(lang);
        }
        for (code, of, share) in &cfg.related {
            let of = order
                .iter()
                .find(|l| l.code.as_str() == of)
                .cloned()
                .ok_or_else(|| Error::UnknownLanguage(of.clone()))?;
            order.push(world.related(&of, code, *share)?);
        }
        let mut corpora = Vec::new();
        for (i, lang) in order.iter().enumerate() {
            let seed = rng::derive(cfg.seed, &[0x5eed, i as u64]).random();
            corpora.push(world.monolingual(
                lang,
                cfg.documents,
                cfg.sentences_per_document,
                seed,
            )?);
            if languages.insert(lang.code.clone(), lang.clone()).is_some() {
                return Err(Error::DuplicateLanguage(lang.code.to_string()));
            }
        }
        let mut collection = CorpusCollection::new(corpora)?;
        let vocab = train_vocab(
            &collection,
            &VocabConfig {
                target_size: cfg.vocab_size,
                ..VocabConfig::default()
            },
        )?;
        collection.count_tokens(&vocab);
        Ok(ToyTask {
            config: cfg.clone(),
            world,
            languages,
            collection,
            vocab,
        })
    }

    pub fn base_code(&self) -> LanguageCode {
        LanguageCode::new("en").expect("valid code")
    }

    pub fn language(&self, code: &LanguageCode) -> Result<&ToyLanguage> {
        self.languages
            .get(code)
            .ok_or_else(|| Error::UnknownLanguage(code.to_string()))
    }

    /// Pairs for one named split. Splits of the same task never share a base
    /// sentence: each draws from its own stream and skips sentences claimed
    /// by the splits before it in [`SPLITS`].
    pub fn parallel(
        &self,
        src: &LanguageCode,
        tgt: &LanguageCode,
        n: usize,
        split: &str,
    ) -> Result<ParallelCorpus> {
        let pos = SPLITS
            .iter()
            .position(|s| *s == split)
            .ok_or_else(|| Error::Config(format!("unknown split {split:?}")))?;
        if pos + 1 < SPLITS.len() && n > SPLIT_CAP {
            return Err(Error::Config(format!(
                "{split} split is capped at {SPLIT_CAP} pairs"
            )));
        }
        let (s, t) = (self.language(src)?, self.language(tgt)?);
        let sentences = self.split_sentences(pos, n);
        let pairs = sentences
            .iter()
            .map(|w| (self.world.render(s, w), self.world.render(t, w)))
            .collect();
        ParallelCorpus::new(src.clone(), tgt.clone(), pairs)
    }

    fn split_sentences(&self, pos: usize, n: usize) -> Vec<Vec<usize>> {
        // Earlier splits are regenerated at their reserved size, so a split's
        // contents never depend on the sizes requested for the others.
        let mut claimed: HashSet<Vec<usize>> = HashSet::new();
        for p in 0..pos {
            let drawn = self.draw(p, SPLIT_CAP, &claimed);
            claimed.extend(drawn);
        }
        self.draw(pos, n, &claimed)
    }

    fn draw(&self, pos: usize, n: usize, claimed: &HashSet<Vec<usize>>) -> Vec<Vec<usize>> {
        let mut r = rng::derive(self.config.seed, &[0x5b1, pos as u64]);
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let w = self.world.sentence(&mut r);
            if !claimed.contains(&w) {
                out.push(w);
            }
        }
        out
    }
}

/// Split names in claiming order.
pub const SPLITS: [&str; 3] = ["test", "valid", "train"];
/// Maximum size of each held-out split.
pub const SPLIT_CAP: usize = 1000;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worlds_are_deterministic() {
        let mut a = ToyWorld::new(1);
        let mut b = ToyWorld::new(1);
        assert_eq!(a.cipher("xx").unwrap(), b.cipher("xx").unwrap());
        let la = a.base();
        let ma = a.monolingual(&la, 3, 4, 9).unwrap();
        let mb = b.monolingual(&la, 3, 4, 9).unwrap();
        assert_eq!(ma.to_text(), mb.to_text());
    }

    #[test]
    fn cipher_is_a_bijection_sharing_only_names() {
        let mut w = ToyWorld::new(2);
        let en = w.base();
        let xx = w.cipher("xx").unwrap();
        let distinct: HashSet<&String> = xx.forms.iter().collect();
        assert_eq!(distinct.len(), xx.forms.len());
        for i in 0..w.lexicon_size() {
            assert_eq!(en.forms[i] == xx.forms[i], w.class_of(i) == Class::Name);
        }
    }

    #[test]
    fn parallel_pairs_translate_word_by_word() {
        let mut w = ToyWorld::new(3);
        let en = w.base();
        let xx = w.cipher("xx").unwrap();
        let map: BTreeMap<&str, &str> = en
            .forms
            .iter()
            .map(String::as_str)
            .zip(xx.forms.iter().map(String::as_str))
            .collect();
        let par = w.parallel(&en, &xx, 50, 4).unwrap();
        for p in &par.pairs {
            let mapped: Vec<&str> = p.source.split(' ').map(|t| map[t]).collect();
            assert_eq!(mapped.join(" "), p.target);
        }
    }

    #[test]
    fn related_language_shares_the_requested_fraction() {
        let mut w = ToyWorld::new(4);
        let a = w.cipher("aa").unwrap();
        let b = w.related(&a, "bb", 0.5).unwrap();
        let non_names = (0..w.lexicon_size())
            .filter(|&i| w.class_of(i) != Class::Name)
            .count();
        let shared = (0..w.lexicon_size())
            .filter(|&i| w.class_of(i) != Class::Name && a.forms[i] == b.forms[i])
            .count();
        assert_eq!(shared, (0.5 * non_names as f64).round() as usize);
    }

    #[test]
    fn adjective_reordering() {
        let mut w = ToyWorld::new(5);
        let mut xx = w.cipher("xx").unwrap();
        xx.adjective_after_noun = true;
        let s = vec![
            0,
            w.by_class[&Class::Adjective][0],
            w.by_class[&Class::Animal][0],
        ];
        let r = w.render(&xx, &s);
        let parts: Vec<&str> = r.split(' ').collect();
        assert_eq!(parts[1], xx.forms[s[2]]);
        assert_eq!(parts[2], xx.forms[s[1]]);
    }

    #[test]
    fn task_splits_are_disjoint_and_stable() {
        let task = ToyTask::build(&ToyTaskConfig {
            documents: 20,
            ..ToyTaskConfig::default()
        })
        .unwrap();
        let (xx, en) = (LanguageCode::new("xx").unwrap(), task.base_code());
        let test = task.parallel(&xx, &en, 200, "test").unwrap();
        let train = task.parallel(&xx, &en, 2000, "train").unwrap();
        let seen: HashSet<&str> = train.pairs.iter().map(|p| p.target.as_str()).collect();
        assert!(test.pairs.iter().all(|p| !seen.contains(p.target.as_str())));
        let small = task.parallel(&xx, &en, 50, "train").unwrap();
        assert_eq!(small.pairs[..], train.pairs[..50]);
        assert!(task.parallel(&xx, &en, SPLIT_CAP + 1, "valid").is_err());
        assert_eq!(task.collection.num_languages(), 2);
        assert!(task
            .collection
            .corpora
            .values()
            .all(|c| c.sentence_count() == 160));
    }
}
