mod common;

use std::collections::BTreeMap;

use common::{cnn_source, random_anns, random_corpus, rng, GenOptions};
use nas_curator::adapt::{adapt_model, adapt_optimizer, default_optimizer, emit_source, Dialect};
use nas_curator::ann::denormalize;
use nas_curator::characteristics::{from_model, DataCharacteristics};
use nas_curator::corpus::{select_top_starred, RepoMeta};
use nas_curator::database::ModelDatabase;
use nas_curator::matching::{
    arch_graph, architecture_equivalent, closest_model, deltas, filter_most_used, select_initial, similarity_matrix,
    DeltaVector,
};
use nas_curator::miner::{extract_models, mine_sources, ProgramSource};
use nas_curator::transform::{apply, pre_search_violations, transform_pre_search, DropoutRates, TransformRule};
use nas_curator::{ann_equal, normalize, AbstractNeuralNetwork, LayerVocabulary, Literal, OptimizerSpec};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

fn ann_from(seed: u64, o: GenOptions) -> AbstractNeuralNetwork {
    random_anns(seed, 1, o).remove(0)
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::with_cases(64) })]

    #[test]
    fn normalize_inverts_denormalize(seed in any::<u64>()) {
        let ann = ann_from(seed, GenOptions::MIXED);
        let back = normalize(&denormalize(&ann).unwrap()).unwrap();
        prop_assert_eq!(&back.nodes, &ann.nodes);
        prop_assert_eq!(&back.edges, &ann.edges);
    }

    #[test]
    fn normalized_nodes_carry_no_activation_kwarg(seed in any::<u64>()) {
        let ann = ann_from(seed, GenOptions::MIXED);
        prop_assert!(ann.nodes.iter().all(|n| !n.named.contains_key("activation")));
    }

    #[test]
    fn ann_equal_is_an_equivalence(seeds in proptest::collection::vec(0u64..6, 3)) {
        // A small seed pool makes equal pairs common.
        let anns: Vec<AbstractNeuralNetwork> = seeds
            .iter()
            .enumerate()
            .map(|(i, &s)| ann_from(s, GenOptions::MIXED).with_provenance(format!("copy{i}")))
            .collect();
        let (a, b, c) = (&anns[0], &anns[1], &anns[2]);
        prop_assert!(ann_equal(a, a));
        prop_assert_eq!(ann_equal(a, b), ann_equal(b, a));
        if ann_equal(a, b) && ann_equal(b, c) {
            prop_assert!(ann_equal(a, c));
        }
        prop_assert_eq!(ann_equal(a, b), seeds[0] == seeds[1]);
    }

    #[test]
    fn mining_is_per_file_pure(seed in any::<u64>()) {
        let (files, _) = random_corpus(&mut rng(seed));
        let vocab = LayerVocabulary::default();
        let all = mine_sources(&files, &vocab);
        let mut reversed = files.clone();
        reversed.reverse();
        prop_assert_eq!(&mine_sources(&reversed, &vocab).models, &all.models);
        let r = &all.report;
        prop_assert!(r.complete_models >= r.supported_models && r.supported_models >= r.deduped_models);
        for (path, text) in &files {
            let once = extract_models(&ProgramSource::new(path.clone(), text.clone()));
            let twice = extract_models(&ProgramSource::new(path.clone(), text.clone()));
            prop_assert_eq!(&once.models, &twice.models);
            for m in &once.models {
                let again = normalize(&denormalize(m).unwrap()).unwrap();
                prop_assert_eq!(&again.nodes, &m.nodes);
            }
        }
    }

    #[test]
    fn top_starred_is_a_sorted_permutation_invariant_subset(
        stars in proptest::collection::vec(0u64..20, 0..30),
        n in 0usize..40,
        shuffle in any::<u64>(),
    ) {
        let day = chrono::NaiveDate::from_ymd_opt(2018, 5, 1).unwrap();
        let repos: Vec<RepoMeta> = stars
            .iter()
            .enumerate()
            .map(|(i, &s)| RepoMeta { full_name: format!("owner/r{:02}", (i * 7) % 31), url: String::new(), stars: s, created: day })
            .collect();
        let top = select_top_starred(&repos, n);
        prop_assert_eq!(top.len(), n.min(repos.len()));
        prop_assert!(top.iter().all(|r| repos.contains(r)));
        prop_assert!(top.windows(2).all(|w| w[0].stars >= w[1].stars));
        let mut shuffled = repos.clone();
        shuffled.shuffle(&mut rng(shuffle));
        prop_assert_eq!(select_top_starred(&shuffled, n), top);
    }

    #[test]
    fn database_save_load_is_bit_exact(seed in any::<u64>()) {
        let vocab = LayerVocabulary::default();
        let anns = random_anns(seed, 6, GenOptions::SUPPORTED);
        let db = ModelDatabase::from_models(anns, &vocab).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("db.json");
        db.save(&p).unwrap();
        let back = ModelDatabase::load(&p, &vocab).unwrap();
        prop_assert_eq!(&back, &db);
        let p2 = dir.path().join("db2.json");
        back.save(&p2).unwrap();
        prop_assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn characteristics_round_trip_through_adaptation(
        seed in any::<u64>(),
        side in 8u32..96,
        channels in prop_oneof![Just(1u32), Just(3u32)],
        classes in 2u32..50,
    ) {
        let ann = ann_from(seed, GenOptions::SUPPORTED);
        let dc = DataCharacteristics::new(side, side + 3, channels, classes);
        if let Ok(adapted) = adapt_model(&ann, &dc) {
            prop_assert_eq!(from_model(&adapted).unwrap(), dc);
        }
    }

    #[test]
    fn adapt_changes_only_shape_and_units_on_chains(seed in any::<u64>(), side in 16u32..64, classes in 2u32..30) {
        let ann = ann_from(seed, GenOptions::SUPPORTED);
        prop_assume!(ann.is_chain());
        let dc = DataCharacteristics::new(side, side, 3, classes);
        let Ok(adapted) = adapt_model(&ann, &dc) else { return Ok(()) };
        prop_assert_eq!(&adapted.edges, &ann.edges);
        let mut changed = Vec::new();
        for (i, (a, b)) in ann.nodes.iter().zip(&adapted.nodes).enumerate() {
            prop_assert_eq!(&a.func, &b.func);
            for (k, v) in a.named.iter() {
                if b.named.get(k) != Some(v) {
                    changed.push((i, k.clone()));
                }
            }
            for (k, v) in a.positional.iter() {
                if b.positional.get(k) != Some(v) {
                    changed.push((i, format!("arg{k}")));
                }
            }
            prop_assert_eq!(a.named.len(), b.named.len());
        }
        let output = ann.nodes.iter().rposition(|n| n.func == "linear").unwrap();
        let allowed = [(0, "input_shape".to_string()), (output, "arg2".to_string())];
        prop_assert!(changed.iter().all(|c| allowed.contains(c)), "unexpected changes {:?}", changed);
    }

    #[test]
    fn adapt_optimizer_is_total(func in "[A-Za-z]{1,8}", lr in 1e-5f64..1.0) {
        let vocab = LayerVocabulary::default();
        let mined = OptimizerSpec::new(func.clone()).with("lr", Literal::Float(lr));
        let (spec, warning) = adapt_optimizer(Some(&mined), &vocab, &default_optimizer());
        if vocab.supported_optimizers.contains(&func) {
            prop_assert_eq!(spec, mined);
            prop_assert!(warning.is_none());
        } else {
            prop_assert_eq!(spec, default_optimizer());
            prop_assert!(warning.is_some());
        }
    }

    #[test]
    fn deltas_match_recomputation(
        a in (1u32..300, 1u32..300, 1u32..4, 1u32..100),
        b in (1u32..300, 1u32..300, 1u32..4, 1u32..100),
    ) {
        let m = DataCharacteristics::new(a.0, a.1, a.2, a.3);
        let dc = DataCharacteristics::new(b.0, b.1, b.2, b.3);
        let d = deltas(&m, &dc);
        prop_assert_eq!(d.delta_i, (a.2 as f64 - b.2 as f64).abs());
        prop_assert_eq!(d.delta_o, (a.3 as f64 - b.3 as f64).abs());
        let expected = ((a.0 as f64 - b.0 as f64).powi(2) + (a.1 as f64 - b.1 as f64).powi(2)).sqrt();
        prop_assert!((d.delta_s - expected).abs() <= 1e-12 * expected.max(1.0));
    }

    #[test]
    fn closest_model_is_permutation_invariant(
        pts in proptest::collection::vec((0u32..4, 0u32..4), 1..20),
        shuffle in any::<u64>(),
    ) {
        let ds: Vec<DeltaVector> = pts.iter().map(|&(o, s)| DeltaVector { delta_i: 0.0, delta_o: o as f64, delta_s: s as f64 }).collect();
        let best = ds[closest_model(&ds).unwrap()];
        let mut perm: Vec<usize> = (0..ds.len()).collect();
        perm.shuffle(&mut rng(shuffle));
        let shuffled: Vec<DeltaVector> = perm.iter().map(|&i| ds[i]).collect();
        let k = closest_model(&shuffled).unwrap();
        // The winning value is the same; ties resolve to the earliest
        // position of the permuted list.
        prop_assert_eq!(shuffled[k], best);
        prop_assert!(shuffled[..k].iter().all(|d| (d.delta_o, d.delta_s) != (best.delta_o, best.delta_s)));
    }

    #[test]
    fn select_initial_returns_one_cluster(seed in any::<u64>()) {
        let mut r = rng(seed);
        let anns = random_anns(seed, 12, GenOptions::SUPPORTED);
        let vocab = LayerVocabulary::default();
        let mut db = ModelDatabase::from_models(anns, &vocab).unwrap();
        for rec in &mut db.records {
            rec.characteristics = Some(DataCharacteristics::new(r.random_range(8..64), r.random_range(8..64), 3, r.random_range(2..20)));
        }
        let dc = DataCharacteristics::new(32, 32, 3, 10);
        let cs = select_initial(&db, &dc, 1e-4, seed).unwrap();
        let members = cs.indices();
        prop_assert!(cs.clusters.iter().filter(|c| **c == members).count() == 1);
        prop_assert!(members.contains(&cs.closest));
    }

    #[test]
    fn similarity_has_unit_diagonal(seed in any::<u64>()) {
        let g = arch_graph(&ann_from(seed, GenOptions::MIXED));
        let m = similarity_matrix(&g, &g);
        for (i, row) in m.iter().enumerate() {
            prop_assert!((row[i] - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn filtering_returns_an_equivalent_subset(seed in any::<u64>(), n in 1usize..20, threshold in 1usize..10) {
        let anns = random_anns(seed, n, GenOptions::MIXED);
        let refs: Vec<&AbstractNeuralNetwork> = anns.iter().collect();
        let kept = filter_most_used(&refs, threshold);
        prop_assert!(!kept.is_empty());
        prop_assert!(kept.iter().all(|&k| k < n));
        if n <= threshold {
            prop_assert_eq!(kept, (0..n).collect::<Vec<_>>());
            return Ok(());
        }
        let graphs: Vec<_> = kept.iter().map(|&k| arch_graph(&anns[k])).collect();
        for a in &graphs {
            for b in &graphs {
                prop_assert!(architecture_equivalent(a, b));
            }
        }
    }

    #[test]
    fn rules_are_idempotent_and_keep_the_architecture(seed in any::<u64>()) {
        let ann = ann_from(seed, GenOptions::MIXED);
        for rule in [TransformRule::BatchNorm, TransformRule::GlobalAvgPool, TransformRule::ActivationReLU, TransformRule::Dropout] {
            let once = apply(rule, &ann, DropoutRates::default());
            prop_assert_eq!(&apply(rule, &once, DropoutRates::default()), &once, "{:?}", rule);
            prop_assert_eq!(arch_graph(&once), arch_graph(&ann), "{:?}", rule);
        }
        let pre = transform_pre_search(&ann);
        prop_assert!(pre_search_violations(&pre).is_empty());
        prop_assert_eq!(transform_pre_search(&pre), pre);
    }

    #[test]
    fn emitted_source_mines_back(seed in any::<u64>(), functional in any::<bool>()) {
        let ann = ann_from(seed, GenOptions::MIXED);
        let dialect = if functional || !ann.is_chain() { Dialect::Functional } else { Dialect::Sequential };
        let src = emit_source(&ann, ann.optimizer.as_ref(), dialect, false).unwrap();
        let mined = extract_models(&ProgramSource::new("emitted.py", src.clone())).models;
        prop_assert_eq!(mined.len(), 1, "{}", src);
        prop_assert!(ann_equal(&mined[0], &ann), "{}", src);
        prop_assert_eq!(&mined[0].optimizer, &ann.optimizer);
    }
}

#[test]
fn generator_expectations_hold_on_single_programs() {
    let mut r = rng(11);
    let vocab = LayerVocabulary::default();
    let mut seen = BTreeMap::new();
    for i in 0..300 {
        let (src, ex) = cnn_source(&mut r, GenOptions::MIXED);
        let out = mine_sources(&[(format!("p{i}.py"), src.clone())], &vocab);
        assert_eq!(out.report.models_extracted, 1, "{src}");
        assert_eq!(out.report.complete_models, usize::from(ex.complete), "{src}");
        assert_eq!(out.report.supported_models, usize::from(ex.supported), "{src}");
        *seen.entry((ex.complete, ex.supported)).or_insert(0) += 1;
    }
    // Every outcome class occurs.
    assert_eq!(seen.len(), 3, "{seen:?}");
}
