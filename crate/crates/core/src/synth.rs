//! Synthetic doctor–patient conversations with gold summaries.
//!
//! Each sample mentions a few symptoms from the builtin lexicon, some
//! reported by the patient and some denied; the gold summary lists the
//! reported ones and a `Denies X.` sentence per denied one. Every
//! `conceptless_every`-th sample is an administrative exchange whose
//! conversation and summary contain no lexicon concept.

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Sample, Speaker, Turn};
use crate::rng::DetRng;

/// (surface text, canonical concept in the builtin lexicon)
pub const SYMPTOMS: &[(&str, &str)] = &[
    ("fever", "fever"),
    ("chills", "chills"),
    ("a cough", "cough"),
    ("a sore throat", "sore throat"),
    ("a runny nose", "rhinorrhea"),
    ("nasal congestion", "nasal congestion"),
    ("headaches", "headache"),
    ("dizziness", "dizziness"),
    ("fatigue", "fatigue"),
    ("body aches", "body aches"),
    ("joint pain", "joint pain"),
    ("back pain", "back pain"),
    ("chest pain", "chest pain"),
    ("shortness of breath", "shortness of breath"),
    ("wheezing", "wheezing"),
    ("nausea", "nausea"),
    ("vomiting", "vomiting"),
    ("diarrhea", "diarrhea"),
    ("constipation", "constipation"),
    ("abdominal pain", "abdominal pain"),
    ("heartburn", "heartburn"),
    ("a rash", "rash"),
    ("itching", "itching"),
    ("ear pain", "ear pain"),
    ("sneezing", "sneezing"),
    ("palpitations", "palpitations"),
    ("night sweats", "night sweats"),
    ("insomnia", "insomnia"),
    ("painful urination", "dysuria"),
    ("leg swelling", "leg swelling"),
];

const ADMIN_TOPICS: &[&str] = &[
    "a prescription refill",
    "scheduling a follow up visit",
    "a work excuse note",
    "updating the pharmacy on file",
    "copies of recent lab paperwork",
    "insurance forms for a specialist referral",
];

const OPENERS: &[&str] = &[
    "Hi, what brings you in today?",
    "Hello, how can I help you today?",
    "Good morning, what seems to be the problem?",
];

fn default_density() -> f64 {
    3.0
}
fn default_negation_rate() -> f64 {
    0.3
}
fn default_prefix() -> String {
    "s".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthOptions {
    pub n: usize,
    pub seed: u64,
    #[serde(default = "default_prefix")]
    pub id_prefix: String,
    /// Mean number of symptom mentions per clinical sample, in `[1, 6]`.
    #[serde(default = "default_density")]
    pub density: f64,
    /// Probability that a mentioned symptom is denied rather than reported.
    #[serde(default = "default_negation_rate")]
    pub negation_rate: f64,
    /// Every k-th sample (1-based) carries no lexicon concept at all.
    #[serde(default)]
    pub conceptless_every: Option<usize>,
}

impl SynthOptions {
    pub fn new(n: usize, seed: u64) -> Self {
        Self {
            n,
            seed,
            id_prefix: default_prefix(),
            density: default_density(),
            negation_rate: default_negation_rate(),
            conceptless_every: None,
        }
    }
}

fn pick<'a, T>(rng: &mut DetRng, items: &'a [T]) -> &'a T {
    &items[rng.below(items.len() as u64) as usize]
}

fn join_list(items: &[&str]) -> String {
    match items {
        [] => String::new(),
        [one] => one.to_string(),
        [init @ .., last] => format!("{} and {last}", init.join(", ")),
    }
}

fn strip_article(s: &str) -> &str {
    s.trim_start_matches("a ").trim_start_matches("an ")
}

pub fn generate(opts: &SynthOptions) -> Corpus {
    let mut rng = DetRng::new(opts.seed);
    let width = opts.n.max(1).to_string().len().max(4);
    let extra_p = ((opts.density - 1.0) / 5.0).clamp(0.0, 1.0);
    let samples = (0..opts.n)
        .map(|i| {
            let id = format!("{}{:0width$}", opts.id_prefix, i, width = width);
            let conceptless = opts
                .conceptless_every
                .is_some_and(|k| k > 0 && (i + 1) % k == 0);
            if conceptless {
                admin_sample(&mut rng, id)
            } else {
                let count = 1 + (0..5).filter(|_| rng.unit() < extra_p).count();
                clinical_sample(&mut rng, id, count, opts.negation_rate)
            }
        })
        .collect();
    Corpus::from_samples(samples).expect("generated samples are valid")
}

fn admin_sample(rng: &mut DetRng, id: String) -> Sample {
    let topic = *pick(rng, ADMIN_TOPICS);
    let turns = vec![
        Turn {
            speaker: Speaker::Doctor,
            text: pick(rng, OPENERS).to_string(),
        },
        Turn {
            speaker: Speaker::Patient,
            text: format!("I am just writing about {topic}."),
        },
        Turn {
            speaker: Speaker::Doctor,
            text: "Sure, I can take care of that for you.".into(),
        },
        Turn {
            speaker: Speaker::Patient,
            text: "Thank you very much.".into(),
        },
    ];
    Sample {
        id,
        turns,
        gold_summary: Some(format!("Patient requests help with {topic}.")),
    }
}

fn clinical_sample(rng: &mut DetRng, id: String, count: usize, negation_rate: f64) -> Sample {
    let picks = rng.sample_indices(SYMPTOMS.len(), count.min(SYMPTOMS.len()));
    let mut reported: Vec<&str> = Vec::new();
    let mut denied: Vec<&str> = Vec::new();
    for (n, idx) in picks.into_iter().enumerate() {
        // the first symptom is always reported so the visit has a complaint
        if n > 0 && rng.unit() < negation_rate {
            denied.push(SYMPTOMS[idx].0);
        } else {
            reported.push(SYMPTOMS[idx].0);
        }
    }
    let days = 1 + rng.below(14);
    let mut turns = vec![
        Turn {
            speaker: Speaker::Doctor,
            text: pick(rng, OPENERS).to_string(),
        },
        Turn {
            speaker: Speaker::Patient,
            text: format!("I have had {} for about {days} days.", join_list(&reported)),
        },
        Turn {
            speaker: Speaker::Doctor,
            text: "I am sorry to hear that. Has it been getting worse?".into(),
        },
        Turn {
            speaker: Speaker::Patient,
            text: if rng.unit() < 0.5 {
                "It has been about the same.".into()
            } else {
                "A little worse since yesterday.".into()
            },
        },
    ];
    for d in &denied {
        let bare = strip_article(d);
        turns.push(Turn {
            speaker: Speaker::Doctor,
            text: format!("Any {bare}?"),
        });
        turns.push(Turn {
            speaker: Speaker::Patient,
            text: format!("No {bare}."),
        });
    }
    turns.push(Turn {
        speaker: Speaker::Doctor,
        text: "Thanks, I will review this and follow up with a plan.".into(),
    });

    let reported_bare: Vec<&str> = reported.iter().map(|s| strip_article(s)).collect();
    let mut summary = format!(
        "Patient reports {} for {days} days.",
        join_list(&reported_bare)
    );
    for d in &denied {
        summary.push_str(&format!(" Denies {}.", strip_article(d)));
    }
    Sample {
        id,
        turns,
        gold_summary: Some(summary),
    }
}
