//! Synthetic corpora in which each class is announced by one planted keyword
//! hidden among random filler words.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::text::{Example, Label};

#[derive(Clone, Debug, PartialEq)]
pub struct PlantedKeywords {
    pub classes: usize,
    /// Size of the filler vocabulary.
    pub fillers: usize,
    /// Text length in words, keyword included.
    pub min_len: usize,
    pub max_len: usize,
}

impl PlantedKeywords {
    pub fn new(classes: usize, fillers: usize, min_len: usize, max_len: usize) -> Self {
        assert!(classes > 0 && fillers > 0 && min_len >= 1 && min_len <= max_len);
        Self {
            classes,
            fillers,
            min_len,
            max_len,
        }
    }

    pub fn keyword(&self, class: usize) -> String {
        format!("key{class}")
    }

    pub fn class_names(&self) -> Vec<String> {
        (0..self.classes).map(|c| format!("class{c}")).collect()
    }

    fn text(&self, planted: &[usize], rng: &mut ChaCha8Rng) -> String {
        let len = rng.gen_range(self.min_len..=self.max_len).max(planted.len());
        let mut words: Vec<String> = (0..len - planted.len())
            .map(|_| format!("w{}", rng.gen_range(0..self.fillers)))
            .collect();
        for &c in planted {
            let at = rng.gen_range(0..=words.len());
            words.insert(at, self.keyword(c));
        }
        words.join(" ")
    }

    /// `count` single-label texts with classes cycling through `0..classes`
    /// before shuffling, so every class is equally represented.
    pub fn multiclass(&self, count: usize, seed: u64) -> Vec<Example> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out: Vec<Example> = (0..count)
            .map(|i| {
                let class = i % self.classes;
                Example {
                    label: Label::Class(class),
                    text: self.text(&[class], &mut rng),
                }
            })
            .collect();
        out.shuffle(&mut rng);
        out
    }

    /// `count` texts, each carrying between 1 and `max_labels` distinct
    /// classes, one keyword per class.
    pub fn multilabel(&self, count: usize, max_labels: usize, seed: u64) -> Vec<Example> {
        assert!(max_labels >= 1 && max_labels <= self.classes);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let all: Vec<usize> = (0..self.classes).collect();
        (0..count)
            .map(|_| {
                let k = rng.gen_range(1..=max_labels);
                let chosen: Vec<usize> = all.choose_multiple(&mut rng, k).copied().collect();
                Example {
                    text: self.text(&chosen, &mut rng),
                    label: Label::set(chosen),
                }
            })
            .collect()
    }
}
