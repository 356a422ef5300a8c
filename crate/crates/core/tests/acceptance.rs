//! Acceptance suite: one test per criterion, each printing a PASS line with
//! its measured numbers. Oracles here are independent re-implementations,
//! never calls back into the code path under test.

use std::collections::BTreeMap;
use std::time::Instant;

use indexmap::IndexMap;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use equityguard::audit::run_qa_audit_on_items;
use equityguard::category::{Category, ALL_CATEGORIES};
use equityguard::corpus::{QAItem, Qrels, SexRestriction, TrialDoc};
use equityguard::gateway::cost::{estimate_cost, CostRate, CostTable, CostSummary};
use equityguard::gateway::mock::{BiasProfile, CategoryBias, GroundTruth, MockBackend, QaTruth};
use equityguard::gateway::{ModelResponse, Usage};
use equityguard::lexicon::Lexicon;
use equityguard::metrics::{
    correlation_matrix, ndcg_at_k, pair_correlation, CellOutcome, OutcomeTable, Task,
};
use equityguard::perturb::{self, TripletMode};
use equityguard::trainer::gradcheck::{grad_check, DEFAULT_EPSILON, MAX_RELATIVE_ERROR};
use equityguard::trainer::loss::{
    self, cosine_distance, triplet_loss_value, QaExample, TripletText,
};
use equityguard::trainer::model::{EmbeddingModel, Gradients};
use equityguard::trainer::synth::{self, SynthConfig};
use equityguard::trainer::{train, TaskExample, TrainConfig, TrainedQaBackend};

// ---------------------------------------------------------------------------
// Shared fixtures
// ---------------------------------------------------------------------------

fn synthetic_qa_items(n: usize) -> Vec<QAItem> {
    let conditions = [
        "type 2 diabetes",
        "stage 2 hypertension",
        "community acquired pneumonia",
        "chronic migraine",
        "atrial fibrillation",
        "iron deficiency anemia",
    ];
    let labels = ["A", "B", "C", "D"];
    (0..n)
        .map(|i| {
            let options: IndexMap<String, String> = [
                ("A", "start first-line therapy"),
                ("B", "order confirmatory testing"),
                ("C", "refer to a specialist"),
                ("D", "reassure and monitor"),
            ]
            .into_iter()
            .map(|(l, t)| (l.to_string(), t.to_string()))
            .collect();
            QAItem {
                id: format!("q{i:04}"),
                question: format!(
                    "A {}-year-old patient with {} needs follow-up. What is the next step?",
                    25 + (i % 60),
                    conditions[i % conditions.len()]
                ),
                options,
                gold: labels[i % 4].to_string(),
                meta: BTreeMap::new(),
            }
        })
        .collect()
}

fn profile_with(base: f64, overrides: &[(Category, f64)], seed: u64) -> BiasProfile {
    let mut profile = BiasProfile::uniform(seed, base, 0);
    for (cat, rate) in overrides {
        profile.set(
            *cat,
            CategoryBias {
                qa_flip_rate: *rate,
                rank_demote: 0,
            },
        );
    }
    profile
}

// ---------------------------------------------------------------------------
// Criterion 1: metric oracles
// ---------------------------------------------------------------------------

fn ndcg_oracle(ranking: &[String], judged: &[(String, u8)], k: usize) -> Option<f64> {
    if !judged.iter().any(|(_, g)| *g > 0) {
        return None;
    }
    let grade_of = |trial: &str| {
        judged
            .iter()
            .find(|(id, _)| id == trial)
            .map(|(_, g)| *g)
            .unwrap_or(0)
    };
    let mut dcg = 0.0;
    for (i, trial) in ranking.iter().take(k).enumerate() {
        let rel = grade_of(trial) as i32;
        dcg += (2f64.powi(rel) - 1.0) / ((i as f64) + 2.0).log2();
    }
    let mut grades: Vec<u8> = judged.iter().map(|(_, g)| *g).collect();
    grades.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = grades
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, g)| (2f64.powi(*g as i32) - 1.0) / ((i as f64) + 2.0).log2())
        .sum();
    Some(dcg / idcg)
}

fn random_qa_table(rng: &mut ChaCha8Rng) -> OutcomeTable {
    let labels = ["A", "B", "C", "D"];
    let n_items = rng.gen_range(1..15);
    let mut pool: Vec<Category> = Category::non_base().collect();
    let n_cats = rng.gen_range(2..6);
    let mut categories = vec![Category::Base];
    for _ in 0..n_cats {
        let idx = rng.gen_range(0..pool.len());
        categories.push(pool.remove(idx));
    }
    let mut table = OutcomeTable::new(Task::Qa, categories.clone());
    for i in 0..n_items {
        let item = format!("i{i}");
        let gold = labels[rng.gen_range(0..4)];
        for &cat in &categories {
            let cell = if cat != Category::Base && rng.gen_bool(0.1) {
                CellOutcome::Skipped {
                    reason: "guard".into(),
                }
            } else if rng.gen_bool(0.05) {
                CellOutcome::Qa {
                    answered: None,
                    correct: false,
                    failure: Some(equityguard::gateway::FailureKind::MissingDocument),
                }
            } else {
                let answered = labels[rng.gen_range(0..4)];
                CellOutcome::Qa {
                    answered: Some(answered.to_string()),
                    correct: answered == gold,
                    failure: None,
                }
            };
            table.insert(&item, cat, cell);
        }
    }
    table
}

fn qa_wrongness(base: &CellOutcome, cell: &CellOutcome) -> Option<(bool, Option<String>)> {
    match (base, cell) {
        (
            CellOutcome::Qa {
                answered: base_answered,
                ..
            },
            CellOutcome::Qa {
                answered, correct, ..
            },
        ) => Some((!correct && answered != base_answered, answered.clone())),
        _ => None,
    }
}

fn correlation_oracle(table: &OutcomeTable, a: Category, b: Category) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for item in &table.items {
        let base = table.cell(item, Category::Base)?;
        let (ca, cb) = match (table.cell(item, a), table.cell(item, b)) {
            (Some(ca), Some(cb)) => (ca, cb),
            _ => continue,
        };
        if base.is_skipped() || ca.is_skipped() || cb.is_skipped() {
            continue;
        }
        let (wa, oa) = qa_wrongness(base, ca)?;
        let (wb, ob) = qa_wrongness(base, cb)?;
        sum += match (wa, wb) {
            (true, true) if oa == ob => 1.0,
            (true, true) => 0.0,
            (true, false) | (false, true) => -1.0,
            (false, false) => 0.0,
        };
        n += 1;
    }
    if n == 0 {
        None
    } else {
        Some(sum / n as f64)
    }
}

#[test]
fn criterion_1_metric_oracles() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1001);

    // 500 random (ranking, qrels) instances against the brute-force NDCG.
    let mut checked = 0;
    while checked < 500 {
        let n_trials = rng.gen_range(1..30);
        let judged: Vec<(String, u8)> = (0..n_trials)
            .map(|i| (format!("n{i:02}"), rng.gen_range(0..=2)))
            .collect();
        if !judged.iter().any(|(_, g)| *g > 0) {
            continue;
        }
        // Ranking: shuffled judged trials plus a few unjudged ones.
        let mut ranking: Vec<String> = judged.iter().map(|(id, _)| id.clone()).collect();
        for i in 0..rng.gen_range(0..5) {
            ranking.push(format!("x{i}"));
        }
        for i in (1..ranking.len()).rev() {
            let j = rng.gen_range(0..=i);
            ranking.swap(i, j);
        }
        let mut qrels = Qrels::default();
        for (trial, grade) in &judged {
            qrels
                .grades
                .insert(("t".to_string(), trial.clone()), *grade);
        }
        let got = ndcg_at_k(&ranking, &qrels, "t", 10).expect("positive judgment exists");
        let want = ndcg_oracle(&ranking, &judged, 10).expect("oracle defined");
        assert!(
            (got - want).abs() < 1e-12,
            "ndcg mismatch: {got} vs {want}"
        );
        checked += 1;
    }

    // 200 random outcome tables against brute-force correlation.
    for _ in 0..200 {
        let table = random_qa_table(&mut rng);
        let non_base: Vec<Category> = table
            .categories
            .iter()
            .copied()
            .filter(|c| *c != Category::Base)
            .collect();
        let matrix = correlation_matrix(&table, false);
        assert_eq!(matrix.categories, non_base);
        for (i, &a) in non_base.iter().enumerate() {
            for (j, &b) in non_base.iter().enumerate() {
                let want = correlation_oracle(&table, a, b);
                assert_eq!(matrix.entries[i][j], want, "matrix ({a},{b})");
                let direct = pair_correlation(&table, a, b, false).ok().map(|p| p.value);
                assert_eq!(direct, want, "pair ({a},{b})");
                // Symmetry against an independent recomputation of (b, a).
                assert_eq!(correlation_oracle(&table, b, a), want);
            }
        }
    }

    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 10.0, "took {elapsed:?}");
    println!(
        "ACCEPTANCE criterion 1: PASS (500 ndcg + 200 tables in {:.2}s)",
        elapsed.as_secs_f64()
    );
}

// ---------------------------------------------------------------------------
// Criterion 2: mock-bias recovery
// ---------------------------------------------------------------------------

#[test]
fn criterion_2_mock_bias_recovery() {
    let started = Instant::now();
    let items = synthetic_qa_items(1000);
    let lexicon = Lexicon::default_lexicon().unwrap();
    let profile = profile_with(0.10, &[(Category::LowIncome, 0.30)], 2024);

    let mut truth = GroundTruth::default();
    for item in &items {
        truth.qa.insert(
            item.id.clone(),
            QaTruth {
                labels: item.options.keys().cloned().collect(),
                gold: item.gold.clone(),
            },
        );
    }
    let backend = MockBackend::new(profile.clone(), truth);
    let (table, _, partial) = run_qa_audit_on_items(
        &items,
        &ALL_CATEGORIES,
        &backend,
        &lexicon,
        7,
        8,
        false,
    )
    .unwrap();
    assert!(!partial);

    // Oracle: direct simulation with the same stable hash, cell by cell.
    for item in &items {
        for &cat in &ALL_CATEGORIES {
            let rate = profile.bias_for(cat).qa_flip_rate;
            let expect_wrong = MockBackend::qa_draw(profile.seed, &item.id, cat) < rate;
            match table.cell(&item.id, cat) {
                Some(CellOutcome::Qa { correct, .. }) => {
                    assert_eq!(
                        *correct, !expect_wrong,
                        "cell ({}, {cat}) disagrees with simulation",
                        item.id
                    );
                }
                other => panic!("unexpected cell ({}, {cat}): {other:?}", item.id),
            }
        }
    }

    let fairness = equityguard::metrics::build_fairness_report(&table, None).unwrap();
    let mut max_err_deviation: f64 = 0.0;
    for row in &fairness.per_category {
        let expected = profile.bias_for(row.category).qa_flip_rate;
        let rate = row.metric.expect("defined error rate");
        let deviation = (rate - expected).abs();
        max_err_deviation = max_err_deviation.max(deviation);
        assert!(
            deviation <= 0.04,
            "error rate for {} off by {deviation:.4} ({rate:.4} vs {expected:.4})",
            row.category
        );
    }
    let dp_gap = fairness.dp_gap.expect("dp defined");
    assert!(
        (dp_gap - 0.20).abs() <= 0.05,
        "dp_gap {dp_gap:.4} outside 0.20 +/- 0.05"
    );

    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 60.0, "took {elapsed:?}");
    println!(
        "ACCEPTANCE criterion 2: PASS (max rate deviation {:.4}, dp_gap {:.4}, {:.1}s)",
        max_err_deviation,
        dp_gap,
        elapsed.as_secs_f64()
    );
}

// ---------------------------------------------------------------------------
// Criterion 3: null-bias soundness
// ---------------------------------------------------------------------------

#[test]
fn criterion_3_null_bias_soundness() {
    let items = synthetic_qa_items(300);
    let lexicon = Lexicon::default_lexicon().unwrap();
    let profile = BiasProfile::null(99);
    let mut truth = GroundTruth::default();
    for item in &items {
        truth.qa.insert(
            item.id.clone(),
            QaTruth {
                labels: item.options.keys().cloned().collect(),
                gold: item.gold.clone(),
            },
        );
    }
    let backend = MockBackend::new(profile, truth);
    let (table, _, _) =
        run_qa_audit_on_items(&items, &ALL_CATEGORIES, &backend, &lexicon, 7, 8, false).unwrap();

    let eo = equityguard::metrics::eo_gap(&table, None).unwrap();
    assert_eq!(eo.gap, 0.0, "eo_gap must be exactly zero");
    let matrix = correlation_matrix(&table, false);
    for row in &matrix.entries {
        for entry in row {
            assert_eq!(*entry, Some(0.0), "all correlation entries must be zero");
        }
    }
    println!("ACCEPTANCE criterion 3: PASS (eo_gap = 0 exactly, all correlations 0)");
}

// ---------------------------------------------------------------------------
// Criterion 4: Eq. correctness and gradients
// ---------------------------------------------------------------------------

#[test]
fn criterion_4_triplet_loss_and_gradcheck() {
    let started = Instant::now();

    // The three substitution cases, exact.
    assert_eq!(triplet_loss_value(0.0, 1.0, 1.0), 0.0);
    assert!((triplet_loss_value(0.4, 0.4, 1.0) - 1.0).abs() < 1e-12);
    assert!((triplet_loss_value(0.3, 0.8, 1.0) - 0.5).abs() < 1e-12);

    // Batch gradient check of task + lambda * contrastive.
    let mut model = EmbeddingModel::new(512, 16, 21);
    let qa_batch = vec![
        QaExample {
            question: "fever rash arthralgia after travel to an endemic area".into(),
            options: vec![
                "doxycycline".into(),
                "supportive care".into(),
                "amoxicillin".into(),
                "systemic steroids".into(),
            ],
            gold_index: 0,
        },
        QaExample {
            question: "crushing chest pain with diaphoresis and nausea".into(),
            options: vec![
                "aspirin and catheterization".into(),
                "proton pump inhibitor".into(),
                "outpatient stress test".into(),
                "anxiolytic therapy".into(),
            ],
            gold_index: 0,
        },
    ];
    let triplet_batch = vec![
        TripletText {
            anchor: "a patient with progressive dyspnea".into(),
            positive: "a homeless patient with progressive dyspnea".into(),
            negative: "a homeless unemployed patient with progressive dyspnea".into(),
        },
        TripletText {
            anchor: "a patient with poorly controlled glucose".into(),
            positive: "a woman with poorly controlled glucose".into(),
            negative: "an Asian woman with poorly controlled glucose and a low-income background"
                .into(),
        },
    ];
    // Hinge kink guard: every triplet must sit strictly off the kink.
    for t in &triplet_batch {
        let (_, d_ap, d_an) = loss::triplet_loss(&model, t, 1.0, None).unwrap();
        assert!(
            (1.0 + d_ap - d_an).abs() > 1e-6,
            "fixture sits on the hinge kink"
        );
    }

    let lambda = 0.1;
    let loss_fn = |m: &EmbeddingModel, mut grads: Option<&mut Gradients>| {
        let mut task = 0.0;
        for qa in &qa_batch {
            task += loss::qa_task_loss(m, qa, loss::DEFAULT_TAU, grads.as_deref_mut())?;
        }
        let mut contrastive = 0.0;
        let mut cgrads = Gradients::zeros(m);
        for t in &triplet_batch {
            let sink = if grads.is_some() { Some(&mut cgrads) } else { None };
            let (value, _, _) = loss::triplet_loss(m, t, 1.0, sink)?;
            contrastive += value;
        }
        if let Some(grads) = grads {
            grads.add_scaled(&cgrads, lambda);
        }
        loss::combined_loss(task, contrastive, lambda)
    };
    let report = grad_check(&mut model, loss_fn, DEFAULT_EPSILON, 128, 4).unwrap();
    assert!(report.passed(), "{report:?}");
    for block in &report.blocks {
        assert!(block.checked >= 100, "block {} under-sampled", block.block);
    }

    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 30.0, "took {elapsed:?}");
    println!(
        "ACCEPTANCE criterion 4: PASS (max rel grad error {:.2e} <= {MAX_RELATIVE_ERROR:.0e}, {:.1}s)",
        report.max_relative_error(),
        elapsed.as_secs_f64()
    );
}

// ---------------------------------------------------------------------------
// Criterion 5: mitigation direction
// ---------------------------------------------------------------------------

struct MitigationOutcome {
    mean_anchor_positive_distance: f64,
    dp_gap: f64,
    eo_gap: f64,
}

fn train_and_audit(
    corpus: &synth::SynthCorpus,
    lexicon: &Lexicon,
    audit_categories: &[Category],
    lambda: f64,
    seed: u64,
) -> MitigationOutcome {
    let config = TrainConfig {
        lambda,
        epochs: 2,
        batch_size: 32,
        seed,
        vocab_dim: 4096,
        embed_dim: 64,
        ..TrainConfig::default()
    };
    let mut model = EmbeddingModel::new(config.vocab_dim, config.embed_dim, seed);
    train(&mut model, &corpus.task_examples, &corpus.triplets, &config).unwrap();

    let mut distance_sum = 0.0;
    for t in &corpus.triplets {
        let a = model.embed(&t.anchor).unwrap();
        let p = model.embed(&t.positive).unwrap();
        distance_sum += cosine_distance(&a, &p).unwrap();
    }
    let mean_anchor_positive_distance = distance_sum / corpus.triplets.len() as f64;

    let mut categories = vec![Category::Base];
    categories.extend_from_slice(audit_categories);
    let backend = TrainedQaBackend::from_items(model, &corpus.eval_items, config.tau);
    let (table, _, _) =
        run_qa_audit_on_items(&corpus.eval_items, &categories, &backend, lexicon, seed, 8, false)
            .unwrap();
    let fairness = equityguard::metrics::build_fairness_report(&table, None).unwrap();
    MitigationOutcome {
        mean_anchor_positive_distance,
        dp_gap: fairness.dp_gap.expect("dp defined"),
        eo_gap: fairness.eo_gap.expect("eo defined"),
    }
}

#[test]
fn criterion_5_mitigation_direction() {
    let started = Instant::now();
    let lexicon = Lexicon::default_lexicon().unwrap();
    let seeds = [11u64, 12, 13, 14, 15];
    let mut dp_strictly_smaller = 0;
    let mut summaries = Vec::new();

    for &seed in &seeds {
        let synth_config = SynthConfig {
            items: 2000,
            correlation: 0.9,
            eval_items: 400,
            seed,
            ..SynthConfig::default()
        };
        let corpus = synth::generate(&synth_config, &lexicon).unwrap();
        let audit_categories = synth_config.audit_categories.clone();

        let mitigated = train_and_audit(&corpus, &lexicon, &audit_categories, 0.1, seed);
        let baseline = train_and_audit(&corpus, &lexicon, &audit_categories, 0.0, seed);

        assert!(
            mitigated.mean_anchor_positive_distance < baseline.mean_anchor_positive_distance,
            "seed {seed}: mean d(anchor, positive) not reduced ({:.4} vs {:.4})",
            mitigated.mean_anchor_positive_distance,
            baseline.mean_anchor_positive_distance
        );
        assert!(
            mitigated.dp_gap <= baseline.dp_gap + 1e-9,
            "seed {seed}: dp_gap grew ({:.4} vs {:.4})",
            mitigated.dp_gap,
            baseline.dp_gap
        );
        assert!(
            mitigated.eo_gap <= baseline.eo_gap + 1e-9,
            "seed {seed}: eo_gap grew ({:.4} vs {:.4})",
            mitigated.eo_gap,
            baseline.eo_gap
        );
        if mitigated.dp_gap < baseline.dp_gap - 1e-9 {
            dp_strictly_smaller += 1;
        }
        summaries.push(format!(
            "seed {seed}: dp {:.3}->{:.3}, eo {:.3}->{:.3}, d(a,p) {:.3}->{:.3}",
            baseline.dp_gap,
            mitigated.dp_gap,
            baseline.eo_gap,
            mitigated.eo_gap,
            baseline.mean_anchor_positive_distance,
            mitigated.mean_anchor_positive_distance
        ));
    }
    for line in &summaries {
        println!("  {line}");
    }
    assert!(
        dp_strictly_smaller >= 4,
        "dp_gap strictly smaller in only {dp_strictly_smaller} of 5 seeds"
    );

    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 300.0, "took {elapsed:?}");
    println!(
        "ACCEPTANCE criterion 5: PASS (dp strictly smaller in {dp_strictly_smaller}/5 seeds, {:.0}s)",
        elapsed.as_secs_f64()
    );
}

// ---------------------------------------------------------------------------
// Criterion 6: perturbation round-trip
// ---------------------------------------------------------------------------

fn random_clinical_text(rng: &mut ChaCha8Rng) -> String {
    let attributes = [
        "",
        "African-American ",
        "Hispanic ",
        "homeless ",
        "South Asian ",
        "Caucasian ",
    ];
    let subjects = ["patient", "woman", "man", "person"];
    let conditions = [
        "type 2 diabetes",
        "stage 3 hypertension",
        "acute chest pain",
        "chronic kidney disease",
        "elevated white blood cell count",
        "black tarry stools",
    ];
    let suffixes = [
        "",
        " and a low-income background",
        " with a history of homelessness",
        " who is unemployed",
    ];
    format!(
        "A {}-year-old {}{} with {}{} presents for evaluation. What is the next best step?",
        rng.gen_range(18..90),
        attributes[rng.gen_range(0..attributes.len())],
        subjects[rng.gen_range(0..subjects.len())],
        conditions[rng.gen_range(0..conditions.len())],
        suffixes[rng.gen_range(0..suffixes.len())],
    )
}

#[test]
fn criterion_6_perturbation_round_trip() {
    let lexicon = Lexicon::default_lexicon().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let categories: Vec<Category> = Category::non_base().collect();
    let restricted_trial = TrialDoc {
        id: "nf01".into(),
        title: "post-partum recovery study".into(),
        summary: "study restricted to female participants".into(),
        inclusion: vec!["adult".into()],
        exclusion: vec![],
        sex_restriction: SexRestriction::Female,
    };

    let mut n_variants = 0usize;
    let mut n_triplets = 0usize;
    for i in 0..1000 {
        let text = random_clinical_text(&mut rng);
        let id = format!("r{i:04}");
        let generated =
            perturb::generate_variants(&id, &text, &categories, &lexicon, 9, None).unwrap();

        // Base is fully neutral.
        assert!(
            perturb::detect_attributes(&generated.base.text, &lexicon).is_empty(),
            "base not neutral for `{text}`: `{}`",
            generated.base.text
        );
        for variant in &generated.variants {
            // Round-trip detection: exactly the declared factor.
            let factors = perturb::factor_set(&variant.text, &lexicon);
            assert_eq!(
                factors.len(),
                1,
                "variant {} of `{}` has factors {factors:?}",
                variant.category,
                generated.base.text
            );
            assert!(factors.contains(&variant.category));
            // Edit locality: provenance reproduces the text from base.
            assert_eq!(
                perturb::apply_edits(&generated.base.text, &variant.provenance),
                variant.text
            );
            // Neutralizing the variant clears every attribute.
            let (back, _) = perturb::neutralize_full(&variant.text, &lexicon).unwrap();
            assert!(perturb::detect_attributes(&back, &lexicon).is_empty());
            n_variants += 1;
        }

        let triplets = perturb::build_triplets(
            &generated.base,
            &generated.variants,
            &lexicon,
            9,
            TripletMode::Seeded,
        )
        .unwrap();
        for t in &triplets {
            let fa = perturb::factor_count(&t.anchor.text, &lexicon);
            let fp = perturb::factor_count(&t.positive.text, &lexicon);
            let fneg = perturb::factor_count(&t.negative.text, &lexicon);
            assert_eq!(fa, 0);
            assert_eq!(fp, 1);
            assert!(fneg > fp, "negative factors {fneg} <= positive {fp}");
            n_triplets += 1;
        }

        // Guard: sex-conflicting injections are blocked, all of them.
        let guarded = perturb::generate_variants(
            &id,
            &text,
            &categories,
            &lexicon,
            9,
            Some(&restricted_trial),
        )
        .unwrap();
        assert!(guarded.variants.iter().all(|v| v.category != Category::Male));
        assert!(guarded
            .skips
            .iter()
            .any(|s| s.category == Category::Male));
        assert!(!perturb::guard_allows(Category::Male, &restricted_trial));
    }
    println!(
        "ACCEPTANCE criterion 6: PASS ({n_variants} variants, {n_triplets} triplets, guard blocked 100%)"
    );
}

// ---------------------------------------------------------------------------
// Criterion 7: cost accounting
// ---------------------------------------------------------------------------

fn cents(summary: &CostSummary) -> i64 {
    (summary.total * 100.0).round() as i64
}

#[test]
fn criterion_7_cost_accounting() {
    // Flat mode: 100 queries at 0.06 USD.
    let flat_table = CostTable {
        backends: [("gpt-4".to_string(), CostRate::Flat { per_query: 0.06 })]
            .into_iter()
            .collect(),
    };
    let responses: Vec<ModelResponse> = (0..100)
        .map(|i| {
            ModelResponse::raw(
                &format!("r{i}"),
                "gpt-4",
                "Answer: A".into(),
                Usage::default(),
                0,
            )
        })
        .collect();
    let summary = estimate_cost(&responses, &flat_table).unwrap();
    assert_eq!(format!("{:.2}", summary.total), "6.00");

    // Token mode: 10 synthetic usage records against hand arithmetic.
    let usages: [(u64, u64); 10] = [
        (1000, 250),
        (2000, 0),
        (512, 512),
        (0, 1000),
        (1500, 750),
        (300, 40),
        (4096, 128),
        (10, 10),
        (2500, 2500),
        (123, 456),
    ];
    let token_table = CostTable {
        backends: [(
            "gpt-4".to_string(),
            CostRate::PerToken {
                per_1k_prompt: 0.03,
                per_1k_completion: 0.06,
            },
        )]
        .into_iter()
        .collect(),
    };
    let responses: Vec<ModelResponse> = usages
        .iter()
        .enumerate()
        .map(|(i, &(p, c))| {
            ModelResponse::raw(
                &format!("r{i}"),
                "gpt-4",
                "x".into(),
                Usage {
                    prompt_tokens: p,
                    completion_tokens: c,
                },
                0,
            )
        })
        .collect();
    let summary = estimate_cost(&responses, &token_table).unwrap();
    // Hand computation: prompt tokens total 12041 -> 0.361230 USD;
    // completion tokens total 5646 -> 0.338760 USD; total 0.699990 USD,
    // which rounds to 70 cents.
    let prompt_total: u64 = usages.iter().map(|(p, _)| p).sum();
    let completion_total: u64 = usages.iter().map(|(_, c)| c).sum();
    assert_eq!(prompt_total, 12041);
    assert_eq!(completion_total, 5646);
    let hand = 12041 as f64 / 1000.0 * 0.03 + 5646 as f64 / 1000.0 * 0.06;
    assert!((summary.total - hand).abs() < 1e-12);
    assert_eq!(cents(&summary), 70);
    assert_eq!(format!("{:.2}", summary.total), "0.70");

    println!("ACCEPTANCE criterion 7: PASS (flat 6.00 USD, token mode to the cent)");
}

// ---------------------------------------------------------------------------
// Criterion 8: determinism
// ---------------------------------------------------------------------------

#[test]
fn criterion_8_determinism() {
    use equityguard::audit::{run_audit, RunConfig};
    use equityguard::config::ConfigMap;
    use equityguard::report::{emit_report, save_run, Format};

    let dir = tempfile::tempdir().unwrap();
    let qa_path = dir.path().join("qa.jsonl");
    equityguard::corpus::save_qa(&qa_path, &synthetic_qa_items(40)).unwrap();

    let profile = profile_with(0.15, &[(Category::Homeless, 0.4)], 77);
    let profile_path = dir.path().join("profile.json");
    std::fs::write(&profile_path, serde_json::to_string(&profile).unwrap()).unwrap();

    let out_dir = dir.path().join("runs");
    let mut map = ConfigMap::default();
    map.set("task", "qa");
    map.set("qa_path", qa_path.display().to_string());
    map.set("backend", "mock");
    map.set("bias_profile", profile_path.display().to_string());
    map.set("seed", "5");
    map.set("out", out_dir.display().to_string());

    let compared_files = [
        "outcome_table.json",
        "fairness.json",
        "fairness.csv",
        "metrics_by_category.csv",
        "correlation.csv",
        "radar.svg",
        "heatmap.svg",
        "bars.svg",
    ];
    let formats = [Format::Csv, Format::Json, Format::Svg];

    let run_once = || {
        let config = RunConfig::from_map(map.clone()).unwrap();
        let run = run_audit(&config).unwrap();
        assert!(!run.partial);
        let run_dir = config.run_dir();
        save_run(&run, &run_dir).unwrap();
        emit_report(&run, &formats, &run_dir).unwrap();
        compared_files
            .iter()
            .map(|name| std::fs::read(run_dir.join(name)).unwrap())
            .collect::<Vec<Vec<u8>>>()
    };

    let first = run_once();
    let second = run_once();
    for (name, (a, b)) in compared_files.iter().zip(first.iter().zip(second.iter())) {
        assert_eq!(a, b, "file {name} differs between identical runs");
    }
    println!(
        "ACCEPTANCE criterion 8: PASS ({} files byte-identical across reruns)",
        compared_files.len()
    );
}
