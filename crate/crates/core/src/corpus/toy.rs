//! A small probabilistic English-like grammar with gold dependency heads.
//!
//! Sentences carry subject-verb and determiner-noun number agreement,
//! optional adjectives, prepositional phrases, `who` relative clauses,
//! adverbs and `and` coordination, so a masked-LM has real syntax to pick up.
//! Heads follow Universal Dependencies conventions (content words head
//! function words; the main verb is the root). The same generator produces
//! the pre-training corpus, the treebank for probing, a span-extraction
//! task and a sentence-polarity task.

use rand::seq::IndexedRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Zipf};
use serde::{Deserialize, Serialize};

use super::dependency::{DepSentence, DependencyCorpus};
use crate::error::{Error, Result};
use crate::rng::{purpose, substream, Rng};

const ANIMATE: [(&str, &str); 20] = [
    ("dog", "dogs"),
    ("cat", "cats"),
    ("bird", "birds"),
    ("horse", "horses"),
    ("teacher", "teachers"),
    ("doctor", "doctors"),
    ("farmer", "farmers"),
    ("child", "children"),
    ("student", "students"),
    ("pilot", "pilots"),
    ("singer", "singers"),
    ("baker", "bakers"),
    ("king", "kings"),
    ("queen", "queens"),
    ("wolf", "wolves"),
    ("fox", "foxes"),
    ("lawyer", "lawyers"),
    ("nurse", "nurses"),
    ("poet", "poets"),
    ("sailor", "sailors"),
];

const INANIMATE: [(&str, &str); 12] = [
    ("book", "books"),
    ("car", "cars"),
    ("house", "houses"),
    ("tree", "trees"),
    ("river", "rivers"),
    ("table", "tables"),
    ("letter", "letters"),
    ("garden", "gardens"),
    ("song", "songs"),
    ("ball", "balls"),
    ("box", "boxes"),
    ("city", "cities"),
];

const TRANSITIVE: [(&str, &str); 12] = [
    ("sees", "see"),
    ("likes", "like"),
    ("chases", "chase"),
    ("finds", "find"),
    ("helps", "help"),
    ("watches", "watch"),
    ("follows", "follow"),
    ("visits", "visit"),
    ("carries", "carry"),
    ("paints", "paint"),
    ("remembers", "remember"),
    ("admires", "admire"),
];

const INTRANSITIVE: [(&str, &str); 8] = [
    ("sleeps", "sleep"),
    ("runs", "run"),
    ("sings", "sing"),
    ("laughs", "laugh"),
    ("waits", "wait"),
    ("smiles", "smile"),
    ("dances", "dance"),
    ("swims", "swim"),
];

const DET_SINGULAR: [&str; 3] = ["a", "this", "every"];
const DET_PLURAL: [&str; 3] = ["these", "those", "many"];
const DET_ANY: &str = "the";

const POSITIVE: [&str; 8] = ["happy", "kind", "brave", "clever", "gentle", "cheerful", "lovely", "calm"];
const NEGATIVE: [&str; 8] = ["sad", "cruel", "angry", "lazy", "rude", "nasty", "gloomy", "bitter"];
const NEUTRAL: [&str; 8] = ["big", "small", "old", "young", "red", "tall", "green", "quiet"];
const ADVERBS: [&str; 6] = ["often", "rarely", "quickly", "slowly", "always", "never"];
const PREPOSITIONS: [&str; 5] = ["near", "with", "behind", "under", "beside"];

/// Every surface form the grammar can emit.
pub fn lexicon() -> Vec<&'static str> {
    let pairs = ANIMATE.iter().chain(&INANIMATE).chain(&TRANSITIVE).chain(&INTRANSITIVE);
    let mut words: Vec<&str> = pairs.flat_map(|&(a, b)| [a, b]).collect();
    words.extend(DET_SINGULAR.iter().chain(&DET_PLURAL));
    words.push(DET_ANY);
    words.extend(POSITIVE.iter().chain(&NEGATIVE).chain(&NEUTRAL));
    words.extend(ADVERBS.iter().chain(&PREPOSITIONS));
    words.extend(["who", "and", "."]);
    words
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Negative,
    Neutral,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pos {
    Det,
    Adj(Polarity),
    Noun,
    Verb,
    Adv,
    Prep,
    Who,
    And,
    Punct,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToyWord {
    pub form: &'static str,
    /// Singular form for nouns and verbs, the form itself otherwise.
    pub lemma: &'static str,
    pub pos: Pos,
    /// 0-based head; `None` for the root.
    pub head: Option<usize>,
}

/// A finite verb with its arguments. Spans are inclusive word indices of
/// the core noun phrase (determiner, adjectives, noun).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Clause {
    pub verb: usize,
    pub subject: (usize, usize),
    pub object: Option<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToySentence {
    pub words: Vec<ToyWord>,
    /// Main and coordinated verbs; relative-clause verbs are not listed.
    pub clauses: Vec<Clause>,
    pub mood: Polarity,
}

impl ToySentence {
    pub fn forms(&self) -> Vec<&'static str> {
        self.words.iter().map(|w| w.form).collect()
    }

    pub fn text(&self) -> String {
        self.forms().join(" ")
    }

    pub fn to_dependency(&self) -> DepSentence {
        DepSentence {
            forms: self.words.iter().map(|w| w.form.to_string()).collect(),
            heads: self.words.iter().map(|w| w.head.map_or(0, |h| h + 1)).collect(),
        }
    }
}

/// Production probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrammarConfig {
    /// Probability of each of up to two adjective slots.
    pub adjective: f64,
    pub prepositional_phrase: f64,
    pub relative_clause: f64,
    pub adverb: f64,
    pub transitive: f64,
    pub coordination: f64,
    /// Exponent of the Zipf law over each word list (0 is uniform).
    pub zipf_exponent: f64,
    /// Chance that a corpus noun or transitive verb is drawn from the
    /// document's recurring cast instead of the whole lexicon.
    pub topic_reuse: f64,
}

impl Default for GrammarConfig {
    fn default() -> Self {
        GrammarConfig {
            adjective: 0.4,
            prepositional_phrase: 0.2,
            relative_clause: 0.15,
            adverb: 0.25,
            transitive: 0.7,
            coordination: 0.15,
            zipf_exponent: 1.0,
            topic_reuse: 0.5,
        }
    }
}

impl GrammarConfig {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.adjective,
            self.prepositional_phrase,
            self.relative_clause,
            self.adverb,
            self.transitive,
            self.coordination,
            self.topic_reuse,
        ];
        if all.iter().all(|p| (0.0..=1.0).contains(p)) && self.zipf_exponent >= 0.0 && self.zipf_exponent.is_finite() {
            Ok(())
        } else {
            Err(Error::Parameter(format!("grammar probabilities must lie in [0, 1]: {self:?}")))
        }
    }
}

/// Nouns and verbs that recur through one document.
#[derive(Debug, Clone)]
struct Cast {
    animate: Vec<(&'static str, &'static str)>,
    inanimate: Vec<(&'static str, &'static str)>,
    transitive: Vec<(&'static str, &'static str)>,
}

/// Zipf-weighted draw: earlier entries are more frequent.
fn pick<T: Copy>(rng: &mut Rng, list: &[T], exponent: f64) -> T {
    let zipf = Zipf::new(list.len() as f64, exponent).expect("non-empty list, exponent >= 0");
    list[zipf.sample(rng) as usize - 1]
}

impl Cast {
    fn draw(rng: &mut Rng, exponent: f64) -> Self {
        Cast {
            animate: (0..3).map(|_| pick(rng, &ANIMATE, exponent)).collect(),
            inanimate: (0..2).map(|_| pick(rng, &INANIMATE, exponent)).collect(),
            transitive: (0..2).map(|_| pick(rng, &TRANSITIVE, exponent)).collect(),
        }
    }
}

struct Builder<'a> {
    config: &'a GrammarConfig,
    cast: Option<&'a Cast>,
    mood: Polarity,
    words: Vec<ToyWord>,
}

impl Builder<'_> {
    fn push(&mut self, form: &'static str, lemma: &'static str, pos: Pos) -> usize {
        self.words.push(ToyWord { form, lemma, pos, head: None });
        self.words.len() - 1
    }

    fn attach(&mut self, dependent: usize, head: usize) {
        self.words[dependent].head = Some(head);
    }

    fn pick<T: Copy>(&self, rng: &mut Rng, list: &[T]) -> T {
        pick(rng, list, self.config.zipf_exponent)
    }

    /// A word pair from `lexicon`, or from the cast's `recurring` list.
    fn lexical(
        &self,
        rng: &mut Rng,
        lexicon: &[(&'static str, &'static str)],
        recurring: impl Fn(&Cast) -> &[(&'static str, &'static str)],
    ) -> (&'static str, &'static str) {
        match self.cast {
            Some(c) if rng.random_bool(self.config.topic_reuse) => *recurring(c).choose(rng).unwrap(),
            _ => self.pick(rng, lexicon),
        }
    }

    fn adjective(&mut self, rng: &mut Rng) -> usize {
        let (list, pol) = match self.mood {
            Polarity::Positive if rng.random_bool(0.5) => (&POSITIVE, Polarity::Positive),
            Polarity::Negative if rng.random_bool(0.5) => (&NEGATIVE, Polarity::Negative),
            _ => (&NEUTRAL, Polarity::Neutral),
        };
        let w = self.pick(rng, list);
        self.push(w, w, Pos::Adj(pol))
    }

    /// Determiner, adjectives and noun; returns `(start, noun)`.
    fn core_np(&mut self, rng: &mut Rng, animate: bool, plural: bool, max_adjectives: usize) -> (usize, usize) {
        let det = if rng.random_bool(0.4) {
            DET_ANY
        } else if plural {
            self.pick(rng, &DET_PLURAL)
        } else {
            self.pick(rng, &DET_SINGULAR)
        };
        let start = self.push(det, det, Pos::Det);
        let mut modifiers = vec![start];
        for _ in 0..max_adjectives {
            if rng.random_bool(self.config.adjective) {
                modifiers.push(self.adjective(rng));
            }
        }
        let (sg, pl) = if animate || rng.random_bool(0.5) {
            self.lexical(rng, &ANIMATE, |c| &c.animate)
        } else {
            self.lexical(rng, &INANIMATE, |c| &c.inanimate)
        };
        let noun = self.push(if plural { pl } else { sg }, sg, Pos::Noun);
        for m in modifiers {
            self.attach(m, noun);
        }
        (start, noun)
    }

    /// Core noun phrase plus optional prepositional phrase and relative
    /// clause; returns the core span.
    fn noun_phrase(&mut self, rng: &mut Rng, animate: bool, plural: bool, relative: bool) -> (usize, usize) {
        let (start, noun) = self.core_np(rng, animate, plural, 2);
        if rng.random_bool(self.config.prepositional_phrase) {
            let p = self.pick(rng, &PREPOSITIONS);
            let prep = self.push(p, p, Pos::Prep);
            let plural2 = rng.random_bool(0.5);
            let (_, object) = self.core_np(rng, false, plural2, 1);
            self.attach(prep, object);
            self.attach(object, noun);
        }
        if relative && rng.random_bool(self.config.relative_clause) {
            let who = self.push("who", "who", Pos::Who);
            let verb = self.verb(rng, false, plural, None);
            self.attach(who, verb);
            self.attach(verb, noun);
        }
        (start, noun)
    }

    fn verb(&mut self, rng: &mut Rng, transitive: bool, plural: bool, avoid: Option<&str>) -> usize {
        let (sg, pl) = loop {
            let v = if transitive {
                self.lexical(rng, &TRANSITIVE, |c| &c.transitive)
            } else {
                self.pick(rng, &INTRANSITIVE)
            };
            if Some(v.0) != avoid {
                break v;
            }
        };
        self.push(if plural { pl } else { sg }, sg, Pos::Verb)
    }

    /// Verb (with optional object) agreeing with a subject of number `plural`.
    fn predicate(&mut self, rng: &mut Rng, plural: bool, avoid: Option<&str>) -> (usize, Option<(usize, usize)>) {
        if rng.random_bool(self.config.transitive) {
            let verb = self.verb(rng, true, plural, avoid);
            let object_plural = rng.random_bool(0.5);
            let object = self.noun_phrase(rng, false, object_plural, false);
            self.attach(object.1, verb);
            (verb, Some(object))
        } else {
            (self.verb(rng, false, plural, avoid), None)
        }
    }
}

/// Seeded sentence generator.
#[derive(Debug, Clone, Default)]
pub struct ToyGrammar {
    pub config: GrammarConfig,
}

impl ToyGrammar {
    pub fn new(config: GrammarConfig) -> Result<Self> {
        config.validate()?;
        Ok(ToyGrammar { config })
    }

    /// A sentence whose adjectives are drawn from `mood` (plus neutral ones).
    pub fn sentence_with_mood(&self, rng: &mut Rng, mood: Polarity) -> ToySentence {
        self.build(rng, mood, None)
    }

    fn build(&self, rng: &mut Rng, mood: Polarity, cast: Option<&Cast>) -> ToySentence {
        let mut b = Builder {
            config: &self.config,
            cast,
            mood,
            words: Vec::with_capacity(24),
        };
        let plural = rng.random_bool(0.5);
        let subject = b.noun_phrase(rng, true, plural, true);
        let adverb = rng.random_bool(b.config.adverb).then(|| {
            let a = b.pick(rng, &ADVERBS);
            b.push(a, a, Pos::Adv)
        });
        let (verb, object) = b.predicate(rng, plural, None);
        b.attach(subject.1, verb);
        if let Some(a) = adverb {
            b.attach(a, verb);
        }
        let mut clauses = vec![Clause { verb, subject, object }];
        if rng.random_bool(b.config.coordination) {
            let and = b.push("and", "and", Pos::And);
            let avoid = b.words[verb].lemma;
            let (second, object) = b.predicate(rng, plural, Some(avoid));
            b.attach(and, second);
            b.attach(second, verb);
            clauses.push(Clause { verb: second, subject, object });
        }
        let stop = b.push(".", ".", Pos::Punct);
        b.attach(stop, verb);
        ToySentence {
            words: b.words,
            clauses,
            mood,
        }
    }

    pub fn sentence(&self, rng: &mut Rng) -> ToySentence {
        let mood = *[Polarity::Positive, Polarity::Negative, Polarity::Neutral].choose(rng).unwrap();
        self.sentence_with_mood(rng, mood)
    }

    /// Corpus text: one sentence per line, documents of 4 to 8 sentences
    /// separated by blank lines. Each document has a small recurring cast
    /// of nouns and transitive verbs.
    pub fn corpus_text(&self, rng: &mut Rng, sentences: usize) -> String {
        let mut out = String::new();
        let mut left = sentences;
        while left > 0 {
            let k = rng.random_range(4..=8).min(left);
            if !out.is_empty() {
                out.push('\n');
            }
            let cast = Cast::draw(rng, self.config.zipf_exponent);
            for _ in 0..k {
                let mood = *[Polarity::Positive, Polarity::Negative, Polarity::Neutral].choose(rng).unwrap();
                out.push_str(&self.build(rng, mood, Some(&cast)).text());
                out.push('\n');
            }
            left -= k;
        }
        out
    }

    pub fn treebank(&self, rng: &mut Rng, sentences: usize) -> DependencyCorpus {
        let s = (0..sentences).map(|_| self.sentence(rng).to_dependency()).collect();
        DependencyCorpus::new(s).expect("grammar emits well-formed trees")
    }

    /// Question-answering examples over two-sentence contexts.
    pub fn span_examples(&self, rng: &mut Rng, count: usize) -> Vec<SpanExample> {
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            let first = self.sentence(rng);
            let second = self.sentence(rng);
            let offset = first.words.len();
            let words: Vec<&ToyWord> = first.words.iter().chain(&second.words).collect();
            let shift = |(a, b): (usize, usize)| (a + offset, b + offset);
            let clauses: Vec<Clause> = first
                .clauses
                .iter()
                .cloned()
                .chain(second.clauses.iter().map(|c| Clause {
                    verb: c.verb + offset,
                    subject: shift(c.subject),
                    object: c.object.map(shift),
                }))
                .collect();
            let clause = clauses.choose(rng).unwrap().clone();
            let lemma = words[clause.verb].lemma;
            if words.iter().filter(|w| w.pos == Pos::Verb && w.lemma == lemma).count() != 1 {
                continue;
            }
            let verb = words[clause.verb].form;
            let ask_object = clause.object.is_some() && rng.random_bool(0.5);
            let (question, span) = if ask_object {
                (vec![verb, "who"], clause.object.unwrap())
            } else {
                (vec!["who", verb], clause.subject)
            };
            out.push(SpanExample {
                question: question.into_iter().map(String::from).collect(),
                context: words.iter().map(|w| w.form.to_string()).collect(),
                answer: span,
            });
        }
        out
    }

    /// Sentences labelled by the polarity of their adjectives (1 = positive).
    /// Each contains at least one polar adjective.
    pub fn classification_examples(&self, rng: &mut Rng, count: usize) -> Vec<ClassificationExample> {
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            let positive = rng.random_bool(0.5);
            let mood = if positive { Polarity::Positive } else { Polarity::Negative };
            let s = self.sentence_with_mood(rng, mood);
            if s.words.iter().any(|w| w.pos == Pos::Adj(mood)) {
                out.push(ClassificationExample {
                    words: s.forms().into_iter().map(String::from).collect(),
                    label: positive as usize,
                });
            }
        }
        out
    }
}

/// Seed and sizes of the data files shipped in `data/`.
pub const BUNDLE_SEED: u64 = 20_240_601;
pub const BUNDLE_CORPUS_SENTENCES: usize = 4000;
pub const BUNDLE_TREEBANK_SENTENCES: usize = 800;

/// Regenerates the shipped corpus text and treebank TSV.
pub fn bundle() -> (String, String) {
    let g = ToyGrammar::default();
    let corpus = g.corpus_text(&mut substream(BUNDLE_SEED, purpose::DATA), BUNDLE_CORPUS_SENTENCES);
    let treebank = g.treebank(&mut substream(BUNDLE_SEED, purpose::PROBE), BUNDLE_TREEBANK_SENTENCES);
    (corpus, treebank.to_tsv())
}

/// `who VERB` asks for the verb's subject, `VERB who` for its object.
/// `answer` is an inclusive word span of `context`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanExample {
    pub question: Vec<String>,
    pub context: Vec<String>,
    pub answer: (usize, usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassificationExample {
    pub words: Vec<String>,
    pub label: usize,
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn rng() -> Rng {
        substream(11, purpose::DATA)
    }

    #[test]
    fn lexicon_is_unique() {
        let words = lexicon();
        let set: HashSet<_> = words.iter().collect();
        assert_eq!(set.len(), words.len());
    }

    #[test]
    fn sentences_are_valid_trees_with_verb_root() {
        let g = ToyGrammar::default();
        let mut r = rng();
        for i in 0..500 {
            let s = g.sentence(&mut r);
            s.to_dependency().validate(i).unwrap();
            let root = s.words.iter().position(|w| w.head.is_none()).unwrap();
            assert_eq!(s.words[root].pos, Pos::Verb);
            assert_eq!(s.words.last().unwrap().form, ".");
            for c in &s.clauses {
                assert_eq!(s.words[c.subject.1].pos, Pos::Noun);
                assert_eq!(s.words[c.subject.0].pos, Pos::Det);
            }
        }
    }

    #[test]
    fn subject_verb_agreement() {
        let g = ToyGrammar::default();
        let mut r = rng();
        for _ in 0..200 {
            let s = g.sentence(&mut r);
            let c = &s.clauses[0];
            let noun = &s.words[c.subject.1];
            let verb = &s.words[c.verb];
            assert_eq!(noun.form == noun.lemma, verb.form == verb.lemma, "{}", s.text());
        }
    }

    #[test]
    fn heads_follow_conventions() {
        let g = ToyGrammar::new(GrammarConfig {
            adjective: 1.0,
            prepositional_phrase: 1.0,
            relative_clause: 1.0,
            adverb: 1.0,
            transitive: 1.0,
            coordination: 1.0,
            ..GrammarConfig::default()
        })
        .unwrap();
        let s = g.sentence(&mut rng());
        let w = &s.words;
        let head_pos = |i: usize| w[w[i].head.unwrap()].pos;
        for (i, word) in w.iter().enumerate() {
            match word.pos {
                Pos::Det | Pos::Adj(_) | Pos::Prep => assert_eq!(head_pos(i), Pos::Noun),
                Pos::Who | Pos::And | Pos::Adv | Pos::Punct => assert_eq!(head_pos(i), Pos::Verb),
                _ => {}
            }
        }
        assert_eq!(s.clauses.len(), 2);
        assert_eq!(w[s.clauses[1].verb].head, Some(s.clauses[0].verb));
    }

    #[test]
    fn generation_is_deterministic() {
        let g = ToyGrammar::default();
        assert_eq!(g.corpus_text(&mut rng(), 30), g.corpus_text(&mut rng(), 30));
        assert_eq!(g.span_examples(&mut rng(), 20), g.span_examples(&mut rng(), 20));
    }

    #[test]
    fn corpus_documents() {
        let text = ToyGrammar::default().corpus_text(&mut rng(), 50);
        let docs: Vec<&str> = text.split("\n\n").collect();
        assert!(docs.len() >= 50 / 8);
        assert_eq!(text.lines().filter(|l| !l.is_empty()).count(), 50);
    }

    #[test]
    fn span_answers_are_core_noun_phrases_of_the_asked_verb() {
        let mut r = rng();
        for ex in ToyGrammar::default().span_examples(&mut r, 300) {
            let (a, b) = ex.answer;
            assert!(a <= b && b < ex.context.len());
            let verb = if ex.question[0] == "who" { &ex.question[1] } else { &ex.question[0] };
            assert_eq!(ex.context.iter().filter(|w| *w == verb).count(), 1);
            assert!(DET_SINGULAR.contains(&ex.context[a].as_str())
                || DET_PLURAL.contains(&ex.context[a].as_str())
                || ex.context[a] == DET_ANY);
        }
    }

    #[test]
    fn classification_labels_match_adjectives() {
        for ex in ToyGrammar::default().classification_examples(&mut rng(), 200) {
            let pos = ex.words.iter().any(|w| POSITIVE.contains(&w.as_str()));
            let neg = ex.words.iter().any(|w| NEGATIVE.contains(&w.as_str()));
            assert_eq!((pos, neg), (ex.label == 1, ex.label == 0));
        }
    }

    #[test]
    fn bundled_files_match_the_generator() {
        let (corpus, treebank) = bundle();
        assert!(corpus == crate::corpus::BUNDLED_CORPUS, "data/toy_corpus.txt is stale; run the generate_toy_data example");
        assert!(treebank == crate::corpus::BUNDLED_TREEBANK, "data/toy_treebank.tsv is stale");
    }

    #[test]
    fn rejects_bad_probabilities() {
        let mut c = GrammarConfig::default();
        c.adverb = 1.5;
        assert!(ToyGrammar::new(c).is_err());
    }
}
