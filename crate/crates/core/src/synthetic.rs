//! Generated corpora with known latent structure: templated sentences from
//! ten topic clusters, and dialogs whose turn topics follow a Markov chain.
//! Every turn carries its cluster as the `act` label.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{RawCorpus, RawTurn, Speaker};

pub const NUM_CLUSTERS: usize = 10;

const CLUSTERS: [(&str, [&str; 3], [&str; 4]); NUM_CLUSTERS] = [
    ("weather", ["check", "predict", "watch"], ["rain", "snow", "wind", "forecast"]),
    ("food", ["cook", "order", "taste"], ["pizza", "soup", "salad", "noodles"]),
    ("music", ["play", "stream", "tune"], ["guitar", "song", "album", "piano"]),
    ("travel", ["book", "cancel", "plan"], ["flight", "hotel", "train", "cruise"]),
    ("sports", ["join", "coach", "score"], ["match", "team", "league", "goal"]),
    ("movies", ["rent", "review", "film"], ["drama", "comedy", "sequel", "trailer"]),
    ("books", ["read", "borrow", "print"], ["novel", "poem", "chapter", "library"]),
    ("work", ["email", "schedule", "finish"], ["report", "meeting", "deadline", "project"]),
    ("health", ["treat", "test", "heal"], ["fever", "doctor", "clinic", "injury"]),
    ("shopping", ["buy", "return", "wrap"], ["shoes", "jacket", "gift", "receipt"]),
];

const TEMPLATES: [&[&str]; 4] = [
    &["i", "want", "to", "$V", "the", "$N"],
    &["please", "$V", "the", "$N", "now"],
    &["can", "you", "$V", "a", "$N"],
    &["we", "should", "$V", "some", "$N", "today"],
];

/// A point of the generating process: cluster, template, verb, noun.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SentenceKind {
    pub cluster: usize,
    pub template: usize,
    pub verb: usize,
    pub noun: usize,
}

impl SentenceKind {
    pub fn random<R: Rng + ?Sized>(cluster: usize, rng: &mut R) -> Self {
        Self {
            cluster,
            template: rng.gen_range(0..TEMPLATES.len()),
            verb: rng.gen_range(0..3),
            noun: rng.gen_range(0..4),
        }
    }

    pub fn tokens(&self) -> Vec<String> {
        let (_, verbs, nouns) = CLUSTERS[self.cluster];
        TEMPLATES[self.template]
            .iter()
            .map(|&w| match w {
                "$V" => verbs[self.verb].to_string(),
                "$N" => nouns[self.noun].to_string(),
                _ => w.to_string(),
            })
            .collect()
    }

    pub fn label(&self) -> &'static str {
        CLUSTERS[self.cluster].0
    }

    fn turn(&self, speaker: Option<Speaker>) -> RawTurn {
        let mut t = RawTurn::new(self.tokens());
        t.act = Some(self.label().to_string());
        t.speaker = speaker;
        t
    }
}

/// `n` one-sentence dialogs with uniformly drawn clusters.
pub fn cluster_sentences(n: usize, seed: u64) -> RawCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dialogs = (0..n)
        .map(|_| {
            let c = rng.gen_range(0..NUM_CLUSTERS);
            vec![SentenceKind::random(c, &mut rng).turn(None)]
        })
        .collect();
    RawCorpus { dialogs, dropped_empty: 0 }
}

/// How the next turn depends on the current one.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Transition {
    /// The next turn is a fixed function of the current one (cluster moves
    /// along a fixed permutation; template, verb and noun are kept).
    Deterministic,
    /// The next cluster follows the permutation with probability `follow`,
    /// otherwise is uniform; the rest of the next turn is drawn afresh.
    Stochastic { follow: f64 },
}

/// The fixed cluster permutation of the Markov dialogs.
pub fn successor(cluster: usize) -> usize {
    (cluster * 3 + 1) % NUM_CLUSTERS
}

/// `n` dialogs of `turns` alternating user/system turns.
pub fn markov_dialogs(n: usize, turns: usize, transition: Transition, seed: u64) -> RawCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dialogs = (0..n)
        .map(|_| {
            let mut kind = SentenceKind::random(rng.gen_range(0..NUM_CLUSTERS), &mut rng);
            let mut out = Vec::with_capacity(turns);
            for j in 0..turns {
                let speaker = if j % 2 == 0 { Speaker::Usr } else { Speaker::Sys };
                out.push(kind.turn(Some(speaker)));
                kind = match transition {
                    Transition::Deterministic => SentenceKind {
                        cluster: successor(kind.cluster),
                        ..kind
                    },
                    Transition::Stochastic { follow } => {
                        let c = if rng.gen::<f64>() < follow {
                            successor(kind.cluster)
                        } else {
                            *(0..NUM_CLUSTERS).collect::<Vec<_>>().choose(&mut rng).unwrap()
                        };
                        SentenceKind::random(c, &mut rng)
                    }
                };
            }
            out
        })
        .collect();
    RawCorpus { dialogs, dropped_empty: 0 }
}
