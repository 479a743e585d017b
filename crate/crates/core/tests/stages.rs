use auxrn_core::config::TrainConfig;
use auxrn_core::error::Error;
use auxrn_core::graphworld::{NavGraph, Split, SplitFractions, WorldParams};
use auxrn_core::params::ParamStore;
use auxrn_core::training::{
    augment_backtranslate, augment_for, dataset_for, pre_explore, resolve, run_ablation,
    train_worlds, Trainer,
};

fn tiny() -> TrainConfig {
    TrainConfig {
        seed: 11,
        hidden: 8,
        embed: 6,
        n_worlds: 4,
        world: WorldParams {
            n_nodes: 8,
            avg_degree: 3.0,
            view_dim: 8,
        },
        episodes_per_world: 8,
        fractions: SplitFractions([0.5, 0.1, 0.2, 0.2]),
        iterations: 3,
        batch_size: 3,
        eval_every: 2,
        augment_samples: 5,
        pre_explore_samples: 4,
        pre_explore_iterations: 2,
        ..TrainConfig::default()
    }
}

fn all_pairs(g: &NavGraph) -> Vec<Vec<f64>> {
    let n = g.num_nodes();
    let mut d = vec![vec![f64::INFINITY; n]; n];
    for (i, row) in d.iter_mut().enumerate() {
        row[i] = 0.0;
    }
    for (a, b) in g.edges() {
        d[a][b] = g.edge_length(a, b);
        d[b][a] = g.edge_length(a, b);
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                d[i][j] = d[i][j].min(d[i][k] + d[k][j]);
            }
        }
    }
    d
}

#[test]
fn ablation_table_shape_and_invariants() {
    let cfg = tiny();
    let ds = dataset_for(&cfg).unwrap();
    let table = run_ablation(&cfg, &ds).unwrap();
    let names: Vec<&str> = table.rows.iter().map(|r| r.name.as_str()).collect();
    assert_eq!(
        names,
        ["baseline", "+speaker", "+progress", "+matching", "+angle", "+total"]
    );
    assert_eq!(table.progress_variants.len(), 2);
    for r in table.rows.iter().chain(&table.progress_variants) {
        for s in [r.seen, r.unseen] {
            assert!(s.spl <= s.sr + 1e-12, "{}: SPL {} above SR {}", r.name, s.spl, s.sr);
            assert!(s.episodes > 0);
        }
    }
    assert_eq!(table, run_ablation(&cfg, &ds).unwrap());
}

#[test]
fn resuming_from_a_snapshot_replays_the_same_updates() {
    let cfg = tiny();
    let ds = dataset_for(&cfg).unwrap();
    let pool = ds.split(Split::TrainSeen);
    let step = |t: &mut Trainer| {
        let batch = t.sample_batch(&pool).unwrap();
        let refs = resolve(&ds, &batch).unwrap();
        t.step(&refs, &cfg.aux).unwrap()
    };

    let mut straight = Trainer::new(cfg.clone()).unwrap();
    for _ in 0..4 {
        step(&mut straight);
    }
    let mut first = Trainer::new(cfg.clone()).unwrap();
    step(&mut first);
    step(&mut first);
    let mut resumed = Trainer::from_snapshot(cfg.clone(), &first.snapshot(None)).unwrap();
    step(&mut resumed);
    step(&mut resumed);
    assert_eq!(resumed.store, straight.store);
    assert_eq!(resumed.opt.velocity(), straight.opt.velocity());
    assert_eq!(resumed.iteration, 4);
}

#[test]
fn augmented_paths_are_shortest_and_labels_fit_the_vocabulary() {
    let cfg = tiny();
    let ds = dataset_for(&cfg).unwrap();
    let t = Trainer::new(cfg).unwrap();
    let worlds = train_worlds(&ds);
    let aug = augment_backtranslate(&t.model, &t.store, &ds, &worlds, 12, 5, 1000).unwrap();
    assert_eq!(aug.len(), 12);
    for (k, e) in aug.iter().enumerate() {
        assert_eq!(e.id, 1000 + k as u64);
        let g = ds.graph(e.world_seed).unwrap();
        let d = all_pairs(g);
        let len: f64 = e.path.windows(2).map(|w| g.edge_length(w[0], w[1])).sum();
        assert_eq!(len, d[e.start][e.goal]);
        assert!(e.instruction.tokens.len() <= auxrn_core::graphworld::vocab::MAX_LEN);
        assert!(e
            .instruction
            .tokens
            .iter()
            .all(|&w| (w as usize) < auxrn_core::graphworld::vocab::SIZE));
    }
}

#[test]
fn missing_speaker_is_rejected() {
    let cfg = tiny();
    let ds = dataset_for(&cfg).unwrap();
    let t = Trainer::new(cfg).unwrap();
    let worlds = train_worlds(&ds);
    let empty = ParamStore::new();
    let err = augment_backtranslate(&t.model, &empty, &ds, &worlds, 3, 5, 0).unwrap_err();
    assert!(matches!(err, Error::MissingSpeaker));

    let mut broken = t.store.clone();
    let out_w = t.model.speaker.out_w;
    broken.get_mut(out_w).data[0] = f64::NAN;
    let err = augment_backtranslate(&t.model, &broken, &ds, &worlds, 3, 5, 0).unwrap_err();
    assert!(matches!(err, Error::MissingSpeaker));
}

#[test]
fn pre_explore_without_iterations_keeps_the_checkpoint() {
    let mut cfg = tiny();
    cfg.pre_explore_iterations = 0;
    let ds = dataset_for(&cfg).unwrap();
    let mut t = Trainer::new(cfg).unwrap();
    let before = t.snapshot(None);
    let unseen = augment_for(&t, &ds, true).unwrap();
    let report = pre_explore(&mut t, &ds, &unseen).unwrap();
    assert_eq!(report.last.store, before.store);
    assert_eq!(t.iteration, before.iteration);
    assert!(report.steps.is_empty());
}
