use std::collections::{HashMap, HashSet};

/// Anything that can score how likely a text is to be English.
pub trait LanguageClassifier: Send + Sync {
    fn english_probability(&self, text: &str) -> f64;
}

const SEEDS: [(&str, &str); 6] = [
    ("en", include_str!("seed/en.txt")),
    ("de", include_str!("seed/de.txt")),
    ("fr", include_str!("seed/fr.txt")),
    ("es", include_str!("seed/es.txt")),
    ("nl", include_str!("seed/nl.txt")),
    ("ru", include_str!("seed/ru.txt")),
];

/// Lowercased letters with every other run collapsed to one space, padded
/// with a space on both sides.
fn normalize(text: &str) -> Vec<char> {
    let mut out = vec![' '];
    for c in text.chars() {
        if c.is_alphabetic() {
            out.extend(c.to_lowercase());
        } else if out.last() != Some(&' ') {
            out.push(' ');
        }
    }
    if out.last() != Some(&' ') {
        out.push(' ');
    }
    out
}

fn trigrams(text: &str) -> Vec<[char; 3]> {
    normalize(text).windows(3).map(|w| [w[0], w[1], w[2]]).collect()
}

struct LanguageModel {
    name: String,
    counts: HashMap<[char; 3], u32>,
    total: u32,
}

/// Character-trigram naive Bayes with add-one smoothing and uniform priors.
/// Trigrams unseen in every training language carry no evidence and are
/// skipped, so text in an unknown script gets a uniform posterior.
pub struct TrigramClassifier {
    models: Vec<LanguageModel>,
    vocab: HashSet<[char; 3]>,
}

impl TrigramClassifier {
    pub fn train<'a>(samples: impl IntoIterator<Item = (&'a str, &'a str)>) -> Self {
        let mut models: Vec<LanguageModel> = Vec::new();
        let mut vocab = HashSet::new();
        for (lang, text) in samples {
            let i = match models.iter().position(|m| m.name == lang) {
                Some(i) => i,
                None => {
                    models.push(LanguageModel {
                        name: lang.to_string(),
                        counts: HashMap::new(),
                        total: 0,
                    });
                    models.len() - 1
                }
            };
            for t in trigrams(text) {
                *models[i].counts.entry(t).or_insert(0) += 1;
                models[i].total += 1;
                vocab.insert(t);
            }
        }
        TrigramClassifier { models, vocab }
    }

    /// Trained on the bundled seed paragraphs.
    pub fn bundled() -> Self {
        TrigramClassifier::train(SEEDS)
    }

    pub fn languages(&self) -> Vec<&str> {
        self.models.iter().map(|m| m.name.as_str()).collect()
    }

    /// Posterior over the trained languages, in training order.
    pub fn posterior(&self, text: &str) -> Vec<f64> {
        let v = self.vocab.len() as f64;
        let mut scores = vec![0.0f64; self.models.len()];
        for t in trigrams(text).iter().filter(|t| self.vocab.contains(*t)) {
            for (s, m) in scores.iter_mut().zip(&self.models) {
                let c = m.counts.get(t).copied().unwrap_or(0) as f64;
                *s += ((c + 1.0) / (m.total as f64 + v)).ln();
            }
        }
        let top = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exp: Vec<f64> = scores.iter().map(|s| (s - top).exp()).collect();
        let z: f64 = exp.iter().sum();
        exp.into_iter().map(|e| e / z).collect()
    }

    pub fn probability(&self, text: &str, lang: &str) -> f64 {
        match self.models.iter().position(|m| m.name == lang) {
            Some(i) => self.posterior(text)[i],
            None => 0.0,
        }
    }
}

impl LanguageClassifier for TrigramClassifier {
    fn english_probability(&self, text: &str) -> f64 {
        self.probability(text, "en")
    }
}
