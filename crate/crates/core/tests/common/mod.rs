//! Planted-topic review generator shared by the integration tests.
#![allow(dead_code)]

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const ASPECTS: [&str; 3] = ["food", "service", "ambience"];
pub const SENTIMENTS: [&str; 2] = ["good", "bad"];

const ASPECT_SEEDS: [[&str; 4]; 3] = [
    ["food", "dish", "menu", "meal"],
    ["service", "staff", "waiter", "server"],
    ["ambience", "atmosphere", "decor", "music"],
];
const SENTIMENT_SEEDS: [[&str; 4]; 2] = [["good", "great", "excellent", "nice"], ["bad", "terrible", "awful", "poor"]];

pub const PLANTED_PER_TOPIC: usize = 20;

/// Token mixture of the generator. Each position is a planted term of the
/// document's own joint topic, an aspect seed, a sentiment seed, or (with
/// the remaining probability) a planted term of a uniformly drawn joint topic.
#[derive(Debug, Clone, Copy)]
pub struct Mix {
    pub planted: f64,
    pub aspect_seed: f64,
    pub sentiment_seed: f64,
    /// Relative frequency of each joint topic, indexed `s * 3 + a`.
    pub weights: [f64; 6],
}

impl Default for Mix {
    fn default() -> Self {
        Mix {
            planted: 0.55,
            aspect_seed: 0.06,
            sentiment_seed: 0.06,
            weights: [0.28, 0.14, 0.10, 0.10, 0.24, 0.14],
        }
    }
}

#[derive(Debug, Clone)]
pub struct LabeledLine {
    pub text: String,
    pub aspect: usize,
    pub sentiment: usize,
}

#[derive(Debug, Clone)]
pub struct Synthetic {
    pub train: Vec<String>,
    pub train_gold: Vec<(usize, usize)>,
    pub test: Vec<LabeledLine>,
    /// Exclusive terms of each joint topic, indexed `s * 3 + a`.
    pub planted: Vec<Vec<String>>,
}

pub fn planted_term(s: usize, a: usize, i: usize) -> String {
    format!("{}{}{:02}", SENTIMENTS[s], ASPECTS[a], i)
}

pub fn schema_text() -> String {
    let mut out = String::from("[aspects]\n");
    for (a, seeds) in ASPECTS.iter().zip(ASPECT_SEEDS) {
        out.push_str(&format!("{a}: {}\n", seeds.join(" ")));
    }
    out.push_str("[sentiments]\n");
    for (s, seeds) in SENTIMENTS.iter().zip(SENTIMENT_SEEDS) {
        out.push_str(&format!("{s}: {}\n", seeds.join(" ")));
    }
    out
}

fn document(rng: &mut ChaCha8Rng, mix: &Mix, s: usize, a: usize) -> String {
    let len = rng.random_range(8..=15);
    let words: Vec<String> = (0..len)
        .map(|_| {
            let mut u: f64 = rng.random();
            if u < mix.planted {
                return planted_term(s, a, rng.random_range(0..PLANTED_PER_TOPIC));
            }
            u -= mix.planted;
            if u < mix.aspect_seed {
                return ASPECT_SEEDS[a][rng.random_range(0..4)].to_string();
            }
            u -= mix.aspect_seed;
            if u < mix.sentiment_seed {
                return SENTIMENT_SEEDS[s][rng.random_range(0..4)].to_string();
            }
            let j = rng.random_range(0..6);
            planted_term(j / 3, j % 3, rng.random_range(0..PLANTED_PER_TOPIC))
        })
        .collect();
    words.join(" ")
}

pub fn generate(seed: u64, n_train: usize, n_test: usize, mix: &Mix) -> Synthetic {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let topics = WeightedIndex::new(mix.weights).unwrap();
    let draw = |rng: &mut ChaCha8Rng| {
        let j = topics.sample(rng);
        let (s, a) = (j / 3, j % 3);
        (document(rng, mix, s, a), s, a)
    };
    let mut train = Vec::with_capacity(n_train);
    let mut train_gold = Vec::with_capacity(n_train);
    for _ in 0..n_train {
        let (text, s, a) = draw(&mut rng);
        train.push(text);
        train_gold.push((a, s));
    }
    let test = (0..n_test)
        .map(|_| {
            let (text, s, a) = draw(&mut rng);
            LabeledLine {
                text,
                aspect: a,
                sentiment: s,
            }
        })
        .collect();
    let planted = (0..6)
        .map(|j| (0..PLANTED_PER_TOPIC).map(|i| planted_term(j / 3, j % 3, i)).collect())
        .collect();
    Synthetic {
        train,
        train_gold,
        test,
        planted,
    }
}

/// The standard benchmark: 2,000 training and 300 held-out documents.
pub fn benchmark() -> Synthetic {
    generate(7, 2000, 300, &Mix::default())
}

pub fn test_file(lines: &[LabeledLine]) -> String {
    lines
        .iter()
        .map(|l| format!("{}\t{}\t{}\n", l.text, ASPECTS[l.aspect], SENTIMENTS[l.sentiment]))
        .collect()
}
