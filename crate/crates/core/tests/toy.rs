use layerscale::curve::ScaleSchedule;
use layerscale::rope::entropy;
use layerscale::toy::{
    calibrate_delta, random_tokens, retrieval_accuracy, Capture, ForwardOptions, RetrievalTask,
    ToyModel, ToyModelConfig,
};

#[test]
fn zero_margin_favours_the_nearest_slot() {
    let cfg = ToyModelConfig::default();
    let model = ToyModel::new(cfg.clone()).unwrap();
    let task = RetrievalTask::standard(cfg.seq_len, 0.0, 0);
    let ones = ScaleSchedule::uniform(cfg.n_layers, 1.0).unwrap();
    let acc = retrieval_accuracy(&model, &task, &ones, 32).unwrap();
    assert!(acc.last >= acc.middle, "{acc:?}");
    assert_eq!(acc.sample_count, 32);
}

#[test]
fn calibration_lands_in_the_band() {
    let cfg = ToyModelConfig {
        seq_len: 256,
        ..ToyModelConfig::default()
    };
    let model = ToyModel::new(cfg.clone()).unwrap();
    let mut task = RetrievalTask::standard(cfg.seq_len, 0.0, 5);
    let ones = ScaleSchedule::uniform(cfg.n_layers, 1.0).unwrap();
    task.delta = calibrate_delta(&model, &task, &ones, 32, (20.0, 60.0)).unwrap();
    let acc = retrieval_accuracy(&model, &task, &ones, 32).unwrap();
    assert!((20.0..=60.0).contains(&acc.middle), "{acc:?}");
}

#[test]
fn row_entropy_is_bounded_by_visible_prefix() {
    let cfg = ToyModelConfig {
        n_layers: 3,
        seq_len: 64,
        ..ToyModelConfig::default()
    };
    let model = ToyModel::new(cfg.clone()).unwrap();
    let tokens = random_tokens(cfg.seq_len, cfg.d_model(), 1.0, 2);
    let sched = ScaleSchedule::uniform(cfg.n_layers, 1.5).unwrap();
    let out = model
        .forward(
            &tokens,
            &sched,
            &ForwardOptions {
                capture: Capture::Full,
                entropy: true,
            },
        )
        .unwrap();
    for layer in &out.attention {
        for head in layer {
            for (pos, row) in head.rows().into_iter().enumerate() {
                let h = entropy(row.as_slice().unwrap()).unwrap();
                assert!(h >= 0.0 && h <= ((pos + 1) as f64).ln() + 1e-12);
                assert!(row.iter().skip(pos + 1).all(|p| *p == 0.0));
            }
        }
    }
    let profile = out.entropy_profile();
    assert_eq!(profile.len(), 3);
    assert!(profile.iter().all(|h| *h <= (cfg.seq_len as f64).ln()));
}
