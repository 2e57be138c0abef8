use seglab::data::{NormStats, Split, SynthConfig};
use seglab::image::Sample;
use seglab::models::{NetConfig, Network};
use seglab::nn::PaddingMode;
use seglab::pipeline::{prepare, Prepared};
use seglab::posenc::PeConfig;
use seglab::train::{log_csv, train, train_step, AdamConfig, AdamState, Selection, TrainConfig};

fn samples(split: Split, n: usize) -> Vec<Sample> {
    let cfg = SynthConfig::default();
    (0..n).map(|i| cfg.sample(split, i)).collect()
}

fn prepared(train_n: usize, val_n: usize, pe: &PeConfig) -> (Prepared, Prepared) {
    let tr = samples(Split::Train, train_n);
    let stats = NormStats::compute(&tr).unwrap();
    (
        prepare(&tr, &stats, pe, None).unwrap(),
        prepare(&samples(Split::Val, val_n), &stats, pe, None).unwrap(),
    )
}

#[test]
fn small_cnn_memorizes_one_sample() {
    let pe = PeConfig::with_lambda(10.0).unwrap();
    let (tr, _) = prepared(1, 1, &pe);
    let mut net = Network::new(NetConfig::small_cnn(3, 1.0, PaddingMode::Zero), 0).unwrap();
    let mut adam = AdamState::new(AdamConfig::default());
    let (x, t) = tr.gather(&[0]);
    let mut last = f64::INFINITY;
    for step in 1..=200 {
        last = train_step(&mut net, &mut adam, x.clone(), &t).unwrap();
        if last < 0.05 {
            eprintln!("loss {last} after {step} steps");
            return;
        }
    }
    panic!("loss still {last} after 200 steps");
}

fn tiny_config(seed: u64, selection: Selection) -> TrainConfig {
    TrainConfig {
        epochs: 3,
        batch_size: 4,
        seed,
        selection,
        ..TrainConfig::default()
    }
}

#[test]
fn identical_seeds_give_identical_checkpoints_and_logs() {
    let (tr, va) = prepared(10, 3, &PeConfig::OFF);
    let run = || {
        let net = Network::new(NetConfig::small_cnn(1, 0.125, PaddingMode::Reflect), 5).unwrap();
        train(net, &tr, &va, &tiny_config(5, Selection::BestVal)).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.network, b.network);
    assert_eq!(a.selected_epoch, b.selected_epoch);
    let strip = |o: &seglab::train::TrainOutcome| {
        o.log
            .iter()
            .map(|e| (e.epoch, e.train_loss.to_bits(), e.val_dice.to_bits()))
            .collect::<Vec<_>>()
    };
    assert_eq!(strip(&a), strip(&b));

    let dir = tempfile::tempdir().unwrap();
    let (pa, pb) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"));
    a.network.save(&pa).unwrap();
    b.network.save(&pb).unwrap();
    let blob = |p: &std::path::Path| std::fs::read(seglab::models::blob_path(p)).unwrap();
    assert_eq!(blob(&pa), blob(&pb));
}

#[test]
fn log_has_one_row_per_epoch_and_best_val_dominates_last() {
    let (tr, va) = prepared(9, 3, &PeConfig::OFF);
    let net = Network::new(NetConfig::small_cnn(1, 0.125, PaddingMode::Zero), 1).unwrap();
    let out = train(net, &tr, &va, &tiny_config(1, Selection::BestVal)).unwrap();
    let epochs: Vec<usize> = out.log.iter().map(|e| e.epoch).collect();
    assert_eq!(epochs, vec![1, 2, 3]);
    let best = out.log[out.selected_epoch - 1].val_dice;
    assert!(best >= out.log.last().unwrap().val_dice);
    assert!(out.log.iter().all(|e| e.val_dice <= best));

    let csv = log_csv(&out.log, &AdamConfig::default());
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("# adam lr=0.001"));
    assert_eq!(lines.next(), Some("epoch,train_loss,val_dice,wall_seconds"));
    assert_eq!(lines.count(), 3);
}

#[test]
fn last_selection_returns_final_network() {
    let (tr, va) = prepared(5, 2, &PeConfig::OFF);
    let net = Network::new(NetConfig::small_cnn(1, 0.125, PaddingMode::Zero), 2).unwrap();
    let out = train(net, &tr, &va, &tiny_config(2, Selection::Last)).unwrap();
    assert_eq!(out.selected_epoch, 3);
}

#[test]
fn empty_splits_are_rejected() {
    let (tr, va) = prepared(2, 1, &PeConfig::OFF);
    let empty = Prepared {
        inputs: seglab::Tensor::zeros(seglab::Shape::new(0, 1, 64, 64)),
        masks: Vec::new(),
    };
    let net = || Network::new(NetConfig::small_cnn(1, 0.125, PaddingMode::Zero), 0).unwrap();
    assert!(train(net(), &empty, &va, &TrainConfig::default()).is_err());
    assert!(train(net(), &tr, &empty, &TrainConfig::default()).is_err());
}

#[test]
fn divergence_reports_epoch_and_batch() {
    let (tr, va) = prepared(4, 1, &PeConfig::OFF);
    let mut cfg = tiny_config(0, Selection::Last);
    cfg.adam.lr = f64::INFINITY;
    cfg.batch_size = 1;
    let net = Network::new(NetConfig::small_cnn(1, 0.125, PaddingMode::Zero), 0).unwrap();
    match train(net, &tr, &va, &cfg) {
        Err(seglab::Error::Diverged { epoch, batch, .. }) => {
            assert_eq!(epoch, 1);
            assert!(batch >= 1);
        }
        Err(e) => panic!("unexpected error {e}"),
        Ok(_) => panic!("training with infinite lr should diverge"),
    }
}
