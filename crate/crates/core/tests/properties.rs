mod common;

use std::collections::HashSet;

use proptest::prelude::*;

use semcross::episodes::{
    augment, decode_ppm, encode_ppm, sample_episode, ClassEntry, Dataset, ItemRef, Split,
};
use semcross::io;
use semcross::model::total_loss;
use semcross::rng;
use semcross::semantics::{aux_loss, soft_target, tokenize, AuxLossKind, SoftLabel, WordVectorTable};
use semcross::tensor::{Graph, Tensor};
use semcross::trainer::{mean_ci95, RunConfig};

fn dataset(classes: usize, items: usize) -> Dataset {
    let classes = (0..classes)
        .map(|c| ClassEntry {
            label: format!("class{c}"),
            split: Split::Train,
            items: (0..items).map(|_| Tensor::zeros(&[3, 2, 2])).collect(),
        })
        .collect();
    Dataset::new(classes).unwrap()
}

fn distribution(raw: &[f64]) -> Vec<f64> {
    common::softmax(raw)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn episodes_are_disjoint_exact_and_bijective(
        ways in 1usize..6, shots in 1usize..4, queries in 1usize..5, seed in any::<u64>()
    ) {
        let ds = dataset(7, 9);
        let ep = sample_episode(&ds, Split::Train, ways, shots, queries, &mut rng::child(seed, 0)).unwrap();
        prop_assert_eq!(ep.support.len(), ways * shots);
        prop_assert_eq!(ep.query.len(), ways * queries);
        let support: HashSet<ItemRef> = ep.support.iter().map(|p| p.0).collect();
        let query: HashSet<ItemRef> = ep.query.iter().map(|p| p.0).collect();
        prop_assert!(support.is_disjoint(&query));
        prop_assert_eq!(support.len() + query.len(), ways * (shots + queries));
        let classes: HashSet<usize> = ep.class_map.iter().copied().collect();
        prop_assert_eq!(classes.len(), ways);
        for &(r, label) in ep.items() {
            prop_assert!(label < ways);
            prop_assert_eq!(ep.class_map[label], r.class);
        }
        let again = sample_episode(&ds, Split::Train, ways, shots, queries, &mut rng::child(seed, 0)).unwrap();
        prop_assert_eq!(ep, again);
    }

    #[test]
    fn augmentation_keeps_shape_and_range(h in 16usize..40, w in 16usize..40, size in 8usize..48, seed in any::<u64>()) {
        let img = Tensor::<f32>::uniform(&[3, h, w], 0.0, 1.0, &mut rng::child(seed, 1));
        let out = augment(&img, &mut rng::child(seed, 2), size).unwrap();
        prop_assert_eq!(out.shape(), &[3, size, size]);
        prop_assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn softmax_rows_sum_to_one(rows in 1usize..6, cols in 1usize..9, tau in 0.05f64..5.0, seed in any::<u64>()) {
        let x = Tensor::<f64>::uniform(&[rows, cols], -30.0, 30.0, &mut rng::child(seed, 0));
        let mut g = Graph::new();
        let v = g.constant(x);
        let s = g.softmax(v, 1, tau).unwrap();
        for row in g.value(s).data().chunks(cols) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn kl_is_non_negative_and_zero_on_self(a in prop::collection::vec(-5.0f64..5.0, 1..12), shift in -3.0f64..3.0) {
        let t = SoftLabel::new(distribution(&a), "t").unwrap();
        let b: Vec<f64> = a.iter().enumerate().map(|(i, v)| v + shift * (i as f64).sin()).collect();
        let p = SoftLabel::new(distribution(&b), "p").unwrap();
        prop_assert!(aux_loss(&p, &t, AuxLossKind::Kl).unwrap() >= -1e-12);
        prop_assert!(aux_loss(&t, &t, AuxLossKind::Kl).unwrap().abs() < 1e-12);
        prop_assert!(aux_loss(&p, &t, AuxLossKind::Mse).unwrap() >= 0.0);
    }

    #[test]
    fn total_loss_is_a_convex_blend(l_cls in 0.0f64..10.0, l_aux in 0.0f64..10.0, lambda in 0.0f64..=1.0) {
        let t = total_loss(l_cls, l_aux, lambda).unwrap();
        prop_assert!((t - ((1.0 - lambda) * l_cls + lambda * l_aux)).abs() < 1e-12);
        prop_assert!(t >= l_cls.min(l_aux) - 1e-12 && t <= l_cls.max(l_aux) + 1e-12);
    }

    #[test]
    fn container_roundtrip(dims in prop::collection::vec(1usize..5, 1..4), seed in any::<u64>()) {
        let t = Tensor::<f32>::uniform(&dims, -100.0, 100.0, &mut rng::child(seed, 0));
        let entries = vec![("w".to_string(), t.clone()), ("b".to_string(), Tensor::scalar(1.5))];
        let back = io::decode::<f32>(&io::encode(&entries)).unwrap();
        prop_assert_eq!(back, entries);
    }

    #[test]
    fn ppm_roundtrip_on_8bit_levels(h in 1usize..12, w in 1usize..12, seed in any::<u64>()) {
        let levels = Tensor::<f32>::uniform(&[3, h, w], 0.0, 256.0, &mut rng::child(seed, 0));
        let img = levels.map(|v| v.floor().min(255.0) / 255.0);
        prop_assert_eq!(decode_ppm(&encode_ppm(&img).unwrap()).unwrap(), img);
    }

    #[test]
    fn soft_targets_are_distributions(v in prop::collection::vec(-4.0f64..4.0, 2..16), tau in 0.1f64..4.0) {
        let table = WordVectorTable::from_entries([("snow".to_string(), v.clone()), ("leopard".to_string(), v)]).unwrap();
        let t = soft_target("Snow_Leopard", &table, tau).unwrap();
        prop_assert!((t.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tokens_never_contain_separators(s in "[A-Za-z _-]{0,20}") {
        for tok in tokenize(&s) {
            prop_assert!(!tok.is_empty());
            prop_assert!(!tok.contains([' ', '_', '-']));
            prop_assert_eq!(tok.to_lowercase(), tok.clone());
        }
    }

    #[test]
    fn ci_matches_two_pass_recomputation(v in prop::collection::vec(0.0f64..=1.0, 1..50)) {
        let (m, h) = mean_ci95(&v);
        let (m2, h2) = common::ci95(&v);
        prop_assert!((m - m2).abs() < 1e-10 && (h - h2).abs() < 1e-10);
    }

    #[test]
    fn config_roundtrips_through_text(ways in 1usize..10, lambda in 0.0f64..=1.0, tau in 0.01f64..10.0, seed in any::<u64>()) {
        let cfg = RunConfig { ways, lambda, tau, seed, ..RunConfig::default() };
        prop_assert_eq!(RunConfig::parse_str(&cfg.to_text()).unwrap(), cfg);
    }
}
