//! Synthetic spurious-correlation corpus: a category descriptor that
//! predicts the labeled answer at a configurable strength, used to
//! demonstrate mitigation direction at desk scale.

use indexmap::IndexMap;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::category::Category;
use crate::corpus::QAItem;
use crate::error::Result;
use crate::lexicon::Lexicon;
use crate::perturb::{self, TripletMode};
use crate::trainer::loss::{QaExample, TripletText};
use crate::trainer::TaskExample;

/// Answer-determining symptom markers (three interchangeable synonyms per
/// option, so per-item signal strength varies) and the option texts.
pub const MARKERS: [[&str; 3]; 4] = [
    ["polyuria", "polydipsia", "glycosuria"],
    ["hemoptysis", "pleurisy", "bronchospasm"],
    ["photophobia", "phonophobia", "diplopia"],
    ["bradycardia", "syncope", "palpitations"],
];
const OPTION_TEXTS: [&str; 4] = [
    "alpha therapy",
    "beta therapy",
    "gamma therapy",
    "delta therapy",
];
const FILLERS: [&str; 10] = [
    "fatigue",
    "nausea",
    "dizziness",
    "chronic cough",
    "mild fever",
    "insomnia",
    "headache",
    "myalgia",
    "night sweats",
    "poor appetite",
];

/// How the descriptor-answer correlation enters the training data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BiasMode {
    /// The labeling process itself is biased: descriptor-bearing examples
    /// are labeled with the spurious target at the correlation strength,
    /// regardless of the marker. This is the regime mitigation training
    /// faces: the task signal actively teaches the shortcut.
    LabelBias,
    /// Honest labels; the descriptor is attached mostly to items whose true
    /// answer is the target, so the correlation is in the sampling only.
    Selection,
}

#[derive(Debug, Clone)]
pub struct SynthConfig {
    /// Training items (the published desk-scale run uses 2000).
    pub items: usize,
    /// Correlation strength: P(labeled answer = spurious target | descriptor
    /// present).
    pub correlation: f64,
    pub bias_mode: BiasMode,
    /// The category whose descriptor carries the spurious signal.
    pub biased_category: Category,
    /// The option index the descriptor is tied to.
    pub spurious_target: usize,
    /// LabelBias: P(descriptor present) per item. Selection: P(descriptor
    /// present | answer = target), with the off-target rate derived so the
    /// stated correlation holds.
    pub token_rate_on_target: f64,
    /// Categories for triplet construction and held-out auditing.
    pub audit_categories: Vec<Category>,
    pub eval_items: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            items: 2000,
            correlation: 0.9,
            bias_mode: BiasMode::LabelBias,
            biased_category: Category::LowIncome,
            spurious_target: 3,
            token_rate_on_target: 0.35,
            audit_categories: vec![
                Category::Lgbt,
                Category::LowIncome,
                Category::Unemployed,
                Category::Disabled,
                Category::Illiterate,
                Category::Homeless,
            ],
            eval_items: 400,
            seed: 7,
        }
    }
}

impl SynthConfig {
    /// P(descriptor present | answer != target) solving
    /// P(target | descriptor) = correlation with uniform golds over 4 options.
    pub fn token_rate_off_target(&self) -> f64 {
        let p_target = 0.25;
        self.token_rate_on_target * p_target * (1.0 - self.correlation)
            / (self.correlation * (1.0 - p_target))
    }
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub task_examples: Vec<TaskExample>,
    pub triplets: Vec<TripletText>,
    /// Held-out neutral items; gold is always marker-determined.
    pub eval_items: Vec<QAItem>,
}

fn options_map() -> IndexMap<String, String> {
    ["A", "B", "C", "D"]
        .iter()
        .zip(OPTION_TEXTS)
        .map(|(l, t)| (l.to_string(), t.to_string()))
        .collect()
}

/// One question: a marker synonym for the gold option plus a variable number
/// of filler complaints, so per-item signal strength and dilution vary.
fn question(rng: &mut ChaCha8Rng, gold: usize) -> String {
    let age = rng.gen_range(22..88);
    let marker = MARKERS[gold][rng.gen_range(0..3)];
    let n_fillers = rng.gen_range(1..6);
    let mut fillers: Vec<&str> = Vec::new();
    while fillers.len() < n_fillers {
        let f = FILLERS[rng.gen_range(0..FILLERS.len())];
        if !fillers.contains(&f) {
            fillers.push(f);
        }
    }
    format!(
        "A {age}-year-old patient presents with {marker}, {}. What is the next step?",
        fillers.join(", ")
    )
}

/// Generate the corpus.
///
/// In `LabelBias` mode each item contributes its neutral example with the
/// true label, plus - for a `token_rate_on_target` share of items - a
/// descriptor-bearing example whose label is the spurious target at the
/// correlation strength. In `Selection` mode labels are never biased and the
/// descriptor is attached to items by answer-dependent sampling instead.
pub fn generate(config: &SynthConfig, lexicon: &Lexicon) -> Result<SynthCorpus> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let option_texts: Vec<String> = OPTION_TEXTS.iter().map(|s| s.to_string()).collect();
    let off_rate = config.token_rate_off_target();
    let mut task_examples = Vec::new();
    let mut triplets = Vec::new();

    for i in 0..config.items {
        let gold = rng.gen_range(0..4);
        let text = question(&mut rng, gold);
        let item_id = format!("syn{i:05}");
        let generated = perturb::generate_variants(
            &item_id,
            &text,
            &config.audit_categories,
            lexicon,
            config.seed,
            None,
        )?;
        let biased_variant = || {
            generated
                .variants
                .iter()
                .find(|v| v.category == config.biased_category)
                .expect("biased category among audit categories")
                .text
                .clone()
        };

        match config.bias_mode {
            BiasMode::LabelBias => {
                task_examples.push(TaskExample::Qa(QaExample {
                    question: generated.base.text.clone(),
                    options: option_texts.clone(),
                    gold_index: gold,
                }));
                if rng.gen_range(0.0..1.0) < config.token_rate_on_target {
                    let label = if rng.gen_range(0.0..1.0) < config.correlation {
                        config.spurious_target
                    } else {
                        gold
                    };
                    task_examples.push(TaskExample::Qa(QaExample {
                        question: biased_variant(),
                        options: option_texts.clone(),
                        gold_index: label,
                    }));
                }
            }
            BiasMode::Selection => {
                let token_rate = if gold == config.spurious_target {
                    config.token_rate_on_target
                } else {
                    off_rate
                };
                let question = if rng.gen_range(0.0..1.0) < token_rate {
                    biased_variant()
                } else {
                    generated.base.text.clone()
                };
                task_examples.push(TaskExample::Qa(QaExample {
                    question,
                    options: option_texts.clone(),
                    gold_index: gold,
                }));
            }
        }

        // Different-compound negatives: two factors, neither the positive's.
        // Compounded-on-positive negatives share the positive's descriptor
        // tokens, and under mean pooling the hinge's push on the negative
        // then cancels most of its pull on the positive; disjoint compounds
        // keep the alignment pressure intact.
        let cats = &config.audit_categories;
        for (ci, variant) in generated.variants.iter().enumerate() {
            let c2 = cats[(ci + 1) % cats.len()];
            let c3 = cats[(ci + 2) % cats.len()];
            let first = perturb::inject(&item_id, &generated.base.text, c2, lexicon, config.seed)?;
            let negative = perturb::inject(&item_id, &first.text, c3, lexicon, config.seed)?;
            triplets.push(TripletText {
                anchor: generated.base.text.clone(),
                positive: variant.text.clone(),
                negative: negative.text,
            });
        }
    }

    let mut eval_items = Vec::new();
    for i in 0..config.eval_items {
        let gold = rng.gen_range(0..4);
        let text = question(&mut rng, gold);
        let options = options_map();
        let gold_label = options.keys().nth(gold).expect("4 options").clone();
        eval_items.push(QAItem {
            id: format!("eval{i:05}"),
            question: text,
            options,
            gold: gold_label,
            meta: Default::default(),
        });
    }

    Ok(SynthCorpus {
        task_examples,
        triplets,
        eval_items,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_shape_and_determinism() {
        let lexicon = Lexicon::default_lexicon().unwrap();
        let config = SynthConfig {
            items: 20,
            eval_items: 5,
            ..SynthConfig::default()
        };
        let a = generate(&config, &lexicon).unwrap();
        let b = generate(&config, &lexicon).unwrap();
        // One neutral example per item plus the descriptor-bearing share.
        assert!(a.task_examples.len() >= 20 && a.task_examples.len() <= 40);
        assert_eq!(a.triplets.len(), 20 * config.audit_categories.len());
        assert_eq!(a.eval_items.len(), 5);
        assert_eq!(a.task_examples, b.task_examples);
        assert_eq!(a.triplets, b.triplets);
    }

    #[test]
    fn neutral_questions_carry_no_category_terms() {
        let lexicon = Lexicon::default_lexicon().unwrap();
        let config = SynthConfig {
            items: 10,
            eval_items: 10,
            ..SynthConfig::default()
        };
        let corpus = generate(&config, &lexicon).unwrap();
        for item in &corpus.eval_items {
            assert!(
                perturb::detect_attributes(&item.question, &lexicon).is_empty(),
                "eval question not neutral: {}",
                item.question
            );
        }
    }

    fn token_target_rate(corpus: &SynthCorpus, target: usize) -> (usize, f64) {
        let mut with_token = 0usize;
        let mut on_target = 0usize;
        for example in &corpus.task_examples {
            if let TaskExample::Qa(qa) = example {
                if qa.question.contains("low-income") || qa.question.contains("low income") {
                    with_token += 1;
                    if qa.gold_index == target {
                        on_target += 1;
                    }
                }
            }
        }
        (with_token, on_target as f64 / with_token.max(1) as f64)
    }

    #[test]
    fn descriptor_predicts_the_label_at_the_configured_strength() {
        let lexicon = Lexicon::default_lexicon().unwrap();
        let config = SynthConfig {
            items: 4000,
            eval_items: 1,
            ..SynthConfig::default()
        };
        let corpus = generate(&config, &lexicon).unwrap();
        let (with_token, rate) = token_target_rate(&corpus, config.spurious_target);
        assert!(with_token > 500, "only {with_token} descriptor examples");
        assert!(
            (rate - config.correlation).abs() < 0.05,
            "P(target label | descriptor) = {rate}"
        );
        // Neutral examples keep honest labels: their marker matches the gold.
        for example in &corpus.task_examples {
            if let TaskExample::Qa(qa) = example {
                if !qa.question.contains("low-income") && !qa.question.contains("low income") {
                    assert!(
                        super::MARKERS[qa.gold_index]
                            .iter()
                            .any(|m| qa.question.contains(m)),
                        "neutral example mislabeled: {}",
                        qa.question
                    );
                }
            }
        }
    }

    #[test]
    fn selection_mode_never_flips_labels() {
        let lexicon = Lexicon::default_lexicon().unwrap();
        let config = SynthConfig {
            items: 3000,
            eval_items: 1,
            bias_mode: BiasMode::Selection,
            token_rate_on_target: 1.0,
            ..SynthConfig::default()
        };
        let corpus = generate(&config, &lexicon).unwrap();
        assert_eq!(corpus.task_examples.len(), 3000);
        let (with_token, rate) = token_target_rate(&corpus, config.spurious_target);
        assert!(with_token > 300);
        assert!((rate - config.correlation).abs() < 0.05, "rate {rate}");
        for example in &corpus.task_examples {
            if let TaskExample::Qa(qa) = example {
                assert!(super::MARKERS[qa.gold_index]
                    .iter()
                    .any(|m| qa.question.contains(m)));
            }
        }
    }
}
