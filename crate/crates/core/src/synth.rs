//! Seeded synthetic biomedical-style corpora for tests, demos and benchmarks.

use chrono::{Duration, NaiveDate};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::Document;

pub struct Theme {
    pub name: &'static str,
    /// Themes sharing a family share part of their vocabulary.
    pub family: usize,
    pub title_terms: &'static [&'static str],
    pub terms: &'static [&'static str],
}

pub const THEMES: &[Theme] = &[
    Theme {
        name: "Cancer Treatment",
        family: 0,
        title_terms: &["chemotherapy", "tumor", "oncology", "immunotherapy", "carcinoma"],
        terms: &[
            "cancer", "tumor", "chemotherapy", "immunotherapy", "metastasis", "oncology", "radiotherapy",
            "carcinoma", "checkpoint", "inhibitor", "remission", "lymphoma", "malignant", "biopsy", "survival",
        ],
    },
    Theme {
        name: "Cystic Fibrosis",
        family: 1,
        title_terms: &["cystic", "fibrosis", "cftr", "modulator", "airway"],
        terms: &[
            "cystic", "fibrosis", "cftr", "modulator", "airway", "mucus", "pancreatic", "chloride", "sweat",
            "pulmonary", "exacerbation", "ivacaftor", "genotype", "mutation", "clearance",
        ],
    },
    Theme {
        name: "Cardiovascular Disease",
        family: 0,
        title_terms: &["cardiac", "heart", "arterial", "hypertension", "stroke"],
        terms: &[
            "cardiac", "heart", "arterial", "hypertension", "stroke", "coronary", "atrial", "fibrillation",
            "cholesterol", "statin", "ventricular", "myocardial", "infarction", "vascular", "anticoagulant",
        ],
    },
    Theme {
        name: "Infectious Disease",
        family: 2,
        title_terms: &["vaccine", "viral", "infection", "antibiotic", "pathogen"],
        terms: &[
            "vaccine", "viral", "infection", "antibiotic", "pathogen", "bacterial", "antiviral", "immunity",
            "transmission", "outbreak", "resistance", "antibody", "influenza", "sepsis", "epidemic",
        ],
    },
    Theme {
        name: "Neurodegeneration",
        family: 1,
        title_terms: &["alzheimer", "neuronal", "dementia", "parkinson", "cognitive"],
        terms: &[
            "alzheimer", "neuronal", "dementia", "parkinson", "cognitive", "amyloid", "tau", "synaptic",
            "neurodegeneration", "hippocampus", "dopamine", "memory", "plaque", "microglia", "decline",
        ],
    },
    Theme {
        name: "Diabetes and Metabolism",
        family: 2,
        title_terms: &["diabetes", "insulin", "glucose", "metabolic", "obesity"],
        terms: &[
            "diabetes", "insulin", "glucose", "metabolic", "obesity", "glycemic", "pancreas", "adipose",
            "lipid", "resistance", "hba1c", "metformin", "weight", "beta", "secretion",
        ],
    },
];

const FAMILY_TERMS: &[&[&str]] = &[
    &["therapy", "drug", "dose", "efficacy", "response", "regimen", "targeted"],
    &["gene", "genetic", "inherited", "variant", "expression", "protein", "cellular"],
    &["risk", "population", "incidence", "screening", "prevention", "mortality", "chronic"],
];

const FILLER: &[&str] = &[
    "we", "study", "patients", "results", "analysis", "cohort", "observed", "clinical", "significant",
    "associated", "trial", "treatment", "outcomes", "evidence", "data",
];

const OPENERS: &[&str] = &["We report", "This study examines", "Our analysis shows", "Here we describe", "We evaluated"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub docs: usize,
    pub days: u32,
    pub start: NaiveDate,
    pub themes: usize,
    pub seed: u64,
    pub sentences_per_doc: (usize, usize),
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            docs: 2000,
            days: 90,
            start: NaiveDate::from_ymd_opt(2024, 1, 1).expect("valid date"),
            themes: THEMES.len(),
            seed: 42,
            sentences_per_doc: (4, 6),
        }
    }
}

/// A generated document together with the theme it was drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthDoc {
    pub doc: Document,
    pub theme: usize,
}

fn sentence(rng: &mut ChaCha8Rng, theme: &Theme) -> String {
    let opener = OPENERS.choose(rng).expect("non-empty");
    let n_terms = rng.gen_range(5..9);
    let mut words: Vec<&str> = (0..n_terms).map(|_| *theme.terms.choose(rng).expect("non-empty")).collect();
    for _ in 0..rng.gen_range(2..4) {
        words.push(FAMILY_TERMS[theme.family].choose(rng).expect("non-empty"));
    }
    words.push(FILLER.choose(rng).expect("non-empty"));
    words.push(FILLER.choose(rng).expect("non-empty"));
    words.shuffle(rng);
    format!("{opener} {}.", words.join(" "))
}

/// Deterministic corpus: documents cycle through the first `themes`
/// themes and are spread uniformly over `days` days from `start`.
pub fn generate(cfg: &SynthConfig) -> Vec<SynthDoc> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let themes = cfg.themes.clamp(1, THEMES.len());
    let (lo, hi) = cfg.sentences_per_doc;
    (0..cfg.docs)
        .map(|i| {
            let t = i % themes;
            let theme = &THEMES[t];
            let day = if cfg.days == 0 { 0 } else { rng.gen_range(0..cfg.days) };
            let a = theme.title_terms.choose(&mut rng).expect("non-empty");
            let b = theme.terms.choose(&mut rng).expect("non-empty");
            let n = rng.gen_range(lo..=hi.max(lo));
            let body = (0..n).map(|_| sentence(&mut rng, theme)).collect::<Vec<_>>().join(" ");
            SynthDoc {
                doc: Document {
                    doc_id: format!("doc-{i:05}"),
                    title: format!("{} {a} and {b} study {i}", theme.name.split(' ').next().unwrap_or("")),
                    body,
                    pub_date: cfg.start + Duration::days(day as i64),
                    journal: format!("Journal of {}", theme.name),
                    authors: vec![format!("Author {}", rng.gen_range(1..200)), format!("Author {}", rng.gen_range(1..200))],
                },
                theme: t,
            }
        })
        .collect()
}

pub fn generate_documents(cfg: &SynthConfig) -> Vec<Document> {
    generate(cfg).into_iter().map(|s| s.doc).collect()
}

/// Corpus as JSON lines in the ingest format.
pub fn to_jsonl(docs: &[Document]) -> String {
    let mut out = String::new();
    for d in docs {
        out.push_str(&serde_json::to_string(&crate::ingest::CorpusRecord::from(d)).expect("records serialize"));
        out.push('\n');
    }
    out
}
