use std::fs;

use semcross::episodes::{generate_synthetic, load_manifest, write_ppm, Split, SyntheticConfig};
use semcross::model::Model;
use semcross::tensor::Tensor;
use semcross::trainer::{evaluate, model_config, sweep, train, RunConfig, SweepParam, TaskData};

fn small_data(seed: u64) -> TaskData {
    let cfg = SyntheticConfig { items_per_class: 10, image_size: 18, word_dim: 8, ..Default::default() };
    let s = generate_synthetic(&cfg, seed).unwrap();
    TaskData::new(s.dataset, &s.vectors, 1.0).unwrap()
}

fn small_run() -> RunConfig {
    RunConfig::parse_str(
        "ways = 5\nqueries = 2\nepochs = 15\nepisodes_per_epoch = 10\nval_episodes = 2\n\
         eval_episodes = 40\nimage_size = 16\nfilters = 8,8\n",
    )
    .unwrap()
}

fn l2(a: &Tensor<f32>, b: &Tensor<f32>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| ((x - y) as f64).powi(2)).sum::<f64>().sqrt()
}

#[test]
fn twins_are_closer_in_pixel_space_than_other_pairs() {
    let s = generate_synthetic(&SyntheticConfig::default(), 0).unwrap();
    let classes = &s.dataset.classes;
    let mean_between = |a: usize, b: usize| {
        let mut total = 0.0;
        for x in &classes[a].items {
            for y in &classes[b].items {
                total += l2(x, y);
            }
        }
        total / (classes[a].items.len() * classes[b].items.len()) as f64
    };
    let (mut twin, mut other) = (Vec::new(), Vec::new());
    for a in 0..classes.len() {
        for b in a + 1..classes.len() {
            let d = mean_between(a, b);
            if s.info[a].twin == Some(b) {
                twin.push(d);
            } else {
                other.push(d);
            }
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert_eq!(twin.len(), 2);
    assert!(mean(&twin) < mean(&other), "twins {} vs others {}", mean(&twin), mean(&other));
}

#[test]
fn trained_model_beats_chance_and_constant_model_sits_at_it() {
    let data = small_data(3);
    let cfg = small_run();
    let run = train(&cfg, &data, 1, Some(60)).unwrap();
    let acc = run.test.unwrap().mean_acc;
    assert!(acc > 1.0 / cfg.ways as f64 + 0.1, "test accuracy {acc}");

    // All-zero parameters embed every image identically, so every query is
    // equidistant from every prototype.
    let mut model = Model::<f32>::new(model_config(&cfg, data.word_dim), 0).unwrap();
    for (_, p) in model.params.params_mut() {
        *p = Tensor::zeros(p.shape());
    }
    let report = evaluate(&model, &data.dataset, Split::Test, &cfg, 200, 2).unwrap();
    let chance = 1.0 / cfg.ways as f64;
    assert!((report.mean_acc - chance).abs() <= 3.0 * report.ci95 / 1.96 + 1e-12, "{}", report.mean_acc);
}

#[test]
fn evaluation_ignores_thread_count() {
    let data = small_data(4);
    let cfg = small_run();
    let model = Model::<f32>::new(model_config(&cfg, data.word_dim), 9).unwrap();
    let one = evaluate(&model, &data.dataset, Split::Val, &cfg, 13, 1).unwrap();
    let three = evaluate(&model, &data.dataset, Split::Val, &cfg, 13, 3).unwrap();
    assert_eq!(one.accuracies, three.accuracies);
    assert_eq!(one.losses, three.losses);
}

#[test]
fn single_value_sweep_gives_one_row() {
    let data = small_data(5);
    let mut cfg = small_run();
    cfg.epochs = 1;
    let rows = sweep(&cfg, &data, SweepParam::Tau, &[0.5], 1).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].value, 0.5);
    assert!(sweep(&cfg, &data, SweepParam::Scale, &[0.5, -1.0], 1).is_err());
}

#[test]
fn manifest_layout_defines_splits_and_labels() {
    let dir = tempfile::tempdir().unwrap();
    let img = Tensor::<f32>::full(&[3, 4, 4], 0.5);
    for (split, class) in [("train", "a"), ("train", "b"), ("train", "snow_leopard"), ("val", "c"), ("test", "d")] {
        let d = dir.path().join(split).join(class);
        fs::create_dir_all(&d).unwrap();
        write_ppm(&d.join("0.ppm"), &img).unwrap();
    }
    let ds = load_manifest(dir.path()).unwrap();
    assert_eq!(ds.split_classes(Split::Train).len(), 3);
    assert_eq!(ds.split_classes(Split::Val).len(), 1);
    assert_eq!(ds.split_classes(Split::Test).len(), 1);
    assert!(ds.classes.iter().any(|c| c.label == "snow_leopard"));

    fs::create_dir_all(dir.path().join("val/empty")).unwrap();
    let err = load_manifest(dir.path()).unwrap_err();
    assert_eq!(err.exit_code(), 3);
    assert!(err.to_string().contains("empty"));
}
