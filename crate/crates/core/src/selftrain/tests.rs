use super::*;
use crate::chem::parse_smiles;

const ACTIVES: [&str; 10] = [
    "NS(=O)(=O)c1ccccc1",
    "CNS(=O)(=O)c1ccccc1",
    "NS(=O)(=O)c1ccc(C)cc1",
    "NS(=O)(=O)c1ccc(Cl)cc1",
    "NS(=O)(=O)c1ccc(O)cc1",
    "CCNS(=O)(=O)c1ccccc1",
    "NS(=O)(=O)c1ccc(N)cc1",
    "NS(=O)(=O)c1ccc(F)cc1",
    "NS(=O)(=O)c1cccc(C)c1",
    "NS(=O)(=O)c1ccccc1C",
];

const INACTIVES: [&str; 10] = [
    "CCCCO", "CCCCCC", "CC(C)O", "CCOCC", "CCCN", "C1CCCCC1", "CC(=O)C", "CCCCCCO", "OCCO", "CC(C)CC",
];

fn fixture() -> LabeledSet {
    let mols = ACTIVES
        .iter()
        .chain(INACTIVES.iter())
        .map(|s| parse_smiles(s).unwrap())
        .collect();
    let labels = (0..20).map(|i| i < 10).collect();
    LabeledSet::new(mols, labels, Origin::Original)
}

fn model() -> LogisticModel {
    LogisticModel::new(2, 1024, 1e-4)
}

fn encoded(m: &LogisticModel, set: &LabeledSet) -> Vec<Vec<u32>> {
    set.molecules.iter().map(|x| m.encode(x)).collect()
}

#[test]
fn zero_model_is_undecided() {
    let m = model();
    let d = fixture();
    let x = encoded(&m, &d);
    assert!(predict(&m, &x).iter().all(|&z| z == 0.0));
    assert!(pseudo_label(&m, &x, 0.9).is_empty());
}

#[test]
fn epoch_reduces_loss_on_separable_data() {
    let mut m = model();
    let d = fixture();
    let x = encoded(&m, &d);
    let refs: Vec<&Vec<u32>> = x.iter().collect();
    let pairs: Vec<(&Vec<u32>, bool)> = x.iter().zip(d.labels.iter().copied()).collect();
    let before = m.loss(&pairs);
    train_epoch(&mut m, &refs, &d.labels, 0.05, 128, 1).unwrap();
    assert!(m.loss(&pairs) <= before);
}

#[test]
fn trained_model_separates_fixture() {
    let mut m = model();
    let d = fixture();
    let x = encoded(&m, &d);
    let refs: Vec<&Vec<u32>> = x.iter().collect();
    for e in 0..200 {
        train_epoch(&mut m, &refs, &d.labels, 0.5, 8, e).unwrap();
    }
    let s = predict(&m, &x);
    let worst_active = s[..10].iter().cloned().fold(f64::INFINITY, f64::min);
    let best_inactive = s[10..].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    assert!(worst_active > best_inactive);
    // relabeling atoms does not change scores
    let p = d.molecules[0].permuted(&(0..d.molecules[0].atom_count()).rev().collect::<Vec<_>>());
    assert_eq!(m.logit(&m.encode(&p)), s[0]);
}

#[test]
fn single_class_is_degenerate() {
    let mut m = model();
    let d = fixture();
    let x = encoded(&m, &d);
    let refs: Vec<&Vec<u32>> = x.iter().collect();
    assert!(matches!(
        train_epoch(&mut m, &refs, &[false; 20], 0.1, 128, 0),
        Err(SelfTrainError::DegenerateData { actives: 0, .. })
    ));
}

#[test]
fn balanced_epoch_composition() {
    let labels: Vec<bool> = (0..50).map(|i| i < 5).collect();
    let order = balanced_order(&labels, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    assert_eq!(order.len(), 90);
    assert_eq!(order.iter().filter(|&&i| labels[i]).count(), 45);
    for i in 0..50 {
        assert!(order.contains(&i));
    }
}

#[test]
fn gradient_matches_central_differences() {
    let d = fixture();
    let mut r = ChaCha8Rng::seed_from_u64(11);
    let base = model();
    let x = encoded(&base, &d);
    let pairs: Vec<(&Vec<u32>, bool)> = x.iter().zip(d.labels.iter().copied()).collect();
    // coordinates that are active in the fixture, plus the bias
    let mut used: Vec<usize> = x.iter().flatten().map(|&i| i as usize).collect();
    used.sort();
    used.dedup();
    for _ in 0..10 {
        let mut m = base.clone();
        for w in m.weights.iter_mut() {
            *w = r.random_range(-0.5..0.5);
        }
        m.bias = r.random_range(-0.5..0.5);
        let g = m.gradient(&pairs);
        let mut coords: Vec<usize> = (0..4).map(|_| used[r.random_range(0..used.len())]).collect();
        coords.push(m.nbits);
        for &c in &coords {
            let h = 1e-5;
            let mut plus = m.clone();
            let mut minus = m.clone();
            if c == m.nbits {
                plus.bias += h;
                minus.bias -= h;
            } else {
                plus.weights[c] += h;
                minus.weights[c] -= h;
            }
            let fd = (plus.loss(&pairs) - minus.loss(&pairs)) / (2.0 * h);
            let rel = (g[c] - fd).abs() / g[c].abs().max(fd.abs()).max(1e-8);
            assert!(rel < 1e-5, "coord {c}: {} vs {fd}", g[c]);
        }
    }
}

#[test]
fn pseudo_labels_follow_threshold() {
    let m = model();
    // bias-only models give every molecule the same confidence
    let d = fixture();
    let x = encoded(&m, &d);
    let mut confident = m.clone();
    confident.bias = (0.95f64 / 0.05).ln();
    assert_eq!(pseudo_label(&confident, &x, 0.9).len(), 20);
    assert!(pseudo_label(&confident, &x, 0.96).is_empty());
    // three items with confidences 0.95, 0.7, 0.91 via one distinguishing bit each
    let mut mock = LogisticModel::new(2, 8, 0.0);
    mock.weights[0] = (0.95f64 / 0.05).ln();
    mock.weights[1] = (0.7f64 / 0.3).ln();
    mock.weights[2] = (0.91f64 / 0.09).ln();
    let items = vec![vec![0u32], vec![1], vec![2]];
    assert_eq!(pseudo_label(&mock, &items, 0.9), vec![0, 2]);
}

#[test]
fn pseudo_sets_shrink_as_tau_grows() {
    let mut m = model();
    let d = fixture();
    let x = encoded(&m, &d);
    let refs: Vec<&Vec<u32>> = x.iter().collect();
    for e in 0..5 {
        train_epoch(&mut m, &refs, &d.labels, 0.3, 4, e).unwrap();
    }
    let mut prev = pseudo_label(&m, &x, 0.51);
    for tau in [0.6, 0.7, 0.8, 0.9, 0.95, 0.99] {
        let cur = pseudo_label(&m, &x, tau);
        assert!(cur.iter().all(|i| prev.contains(i)));
        prev = cur;
    }
}

fn small_cfg() -> SelfTrainConfig {
    SelfTrainConfig {
        e_start: 4,
        e_freq: 2,
        tau: 0.6,
        epochs: 12,
        lr: 0.2,
        batch_size: 8,
        seed: 5,
        ..Default::default()
    }
}

fn generated() -> Vec<MolGraph> {
    ["NS(=O)(=O)c1ccc(Br)cc1", "CCCCCCCC", "NS(=O)(=O)c1ccc(CC)cc1", "CCOC"]
        .iter()
        .map(|s| parse_smiles(s).unwrap())
        .collect()
}

#[test]
fn self_training_schedule() {
    let d = fixture();
    let (_, hist) = self_train(model(), &d, &generated(), &d, &small_cfg()).unwrap();
    assert_eq!(hist.epochs.len(), 12);
    assert!(hist.epochs[..4].iter().all(|r| r.n_pseudo == 0));
    assert!(hist.epochs[4..].iter().any(|r| r.n_pseudo > 0));
    // pseudo sets only change at refresh epochs
    for e in 5..12 {
        if e % 2 == 1 {
            assert_eq!(hist.epochs[e].n_pseudo, hist.epochs[e - 1].n_pseudo);
        }
    }
    let best = hist
        .epochs
        .iter()
        .map(|r| r.val_score)
        .fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(hist.epochs[hist.best_epoch].val_score, best);
}

#[test]
fn high_tau_reduces_to_plain_training() {
    let d = fixture();
    let mut cfg = small_cfg();
    cfg.tau = 0.9999;
    let (ma, ha) = self_train(model(), &d, &generated(), &d, &cfg).unwrap();
    let (mb, hb) = self_train(model(), &d, &[], &d, &cfg).unwrap();
    assert_eq!(ma, mb);
    assert_eq!(ha, hb);
}

#[test]
fn config_validation() {
    let mut c = SelfTrainConfig::default();
    assert!(c.validate().is_ok());
    c.tau = 0.5;
    assert!(c.validate().is_err());
    let c = SelfTrainConfig {
        e_start: 100,
        ..Default::default()
    };
    assert!(c.validate().is_err());
    let c = SelfTrainConfig::default();
    assert_eq!(c.learning_rate(0), 0.1);
    assert!((c.learning_rate(50) - 0.1 * 0.5f64.powf(0.9)).abs() < 1e-15);
}

#[test]
fn checkpoint_and_history_files() {
    let dir = tempfile::tempdir().unwrap();
    let mut m = model();
    m.weights[3] = 0.1 + 0.2;
    m.bias = -1.0 / 3.0;
    let path = dir.path().join("model.json");
    m.save(&path).unwrap();
    assert_eq!(LogisticModel::load(&path).unwrap(), m);
    std::fs::write(&path, r#"{"version": 9, "model": null}"#).unwrap();
    assert!(LogisticModel::load(&path).is_err());

    let h = History {
        epochs: vec![EpochRecord {
            epoch: 0,
            loss: 0.5,
            val_score: 0.25,
            n_pseudo: 3,
        }],
        best_epoch: 0,
        metric: ValidationMetric::Bedroc,
    };
    let mut buf = Vec::new();
    h.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("epoch,loss,val_bedroc,n_pseudo\n0,"));

    let cfg = SelfTrainConfig {
        val_metric: "logauc".parse().unwrap(),
        ..small_cfg()
    };
    let d = fixture();
    let (_, hist) = self_train(model(), &d, &[], &d, &cfg).unwrap();
    let mut buf = Vec::new();
    hist.write_csv(&mut buf).unwrap();
    assert!(String::from_utf8(buf)
        .unwrap()
        .starts_with("epoch,loss,val_logauc,n_pseudo\n"));
    assert!("auc".parse::<ValidationMetric>().is_err());
}
