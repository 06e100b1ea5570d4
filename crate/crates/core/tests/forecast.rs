use chrono::NaiveDate;
use ndarray::{s, Array2, Array3};

use hydrocube::datacube::bimonthly_dates;
use hydrocube::forecast::{
    self, ForecastFamily, ForecastModel, ForecastModelSpec, ForecastTrainConfig, SequenceSample,
};
use hydrocube::metrics::SsimParams;

fn shrinking_disks(t_len: usize, side: usize, r0: f64, step: f64) -> Array3<f32> {
    let c = side as f64 / 2.0;
    Array3::from_shape_fn((t_len, side, side), |(t, i, j)| {
        let r = r0 - step * t as f64;
        let d2 = (i as f64 + 0.5 - c).powi(2) + (j as f64 + 0.5 - c).powi(2);
        (d2 < r * r) as u8 as f32
    })
}

fn dates(n: usize) -> Vec<NaiveDate> {
    bimonthly_dates(NaiveDate::from_ymd_opt(2018, 1, 1).unwrap(), n)
}

#[test]
fn persistence_mse_counts_changed_pixels() {
    let maps = shrinking_disks(10, 24, 10.0, 0.7);
    let samples = forecast::sequence_samples(&maps, &dates(10), "a", 3, 24, 24).unwrap();
    assert_eq!(samples.len(), 7);
    let preds: Vec<Array2<f32>> = samples
        .iter()
        .map(|s| forecast::persistence_baseline(&s.history).unwrap().0)
        .collect();
    let targets: Vec<_> = samples.iter().map(|s| s.target.view()).collect();
    let scores = forecast::score(&preds, &targets, &SsimParams::default()).unwrap();

    let mut changed = 0usize;
    for t in 3..10 {
        let (prev, next) = (maps.slice(s![t - 1, .., ..]), maps.slice(s![t, .., ..]));
        changed += prev.iter().zip(next.iter()).filter(|(a, b)| a != b).count();
    }
    let expected = changed as f64 / (7 * 24 * 24) as f64;
    assert!((scores.mse - expected).abs() < 1e-12, "{} vs {expected}", scores.mse);
    assert!(changed > 0);
}

#[test]
fn windows_cover_every_target_once() {
    let maps = shrinking_disks(6, 16, 6.0, 0.5);
    let samples = forecast::sequence_samples(&maps, &dates(6), "a", 2, 8, 8).unwrap();
    assert_eq!(samples.len(), 4 * 4);
    let first = &samples[0];
    assert_eq!(first.history.dim(), (2, 8, 8));
    assert_eq!(first.target, maps.slice(s![2, 0..8, 0..8]));
    assert!(forecast::sequence_samples(&maps, &dates(5), "a", 2, 8, 8).is_err());
    assert!(forecast::sequence_samples(&maps, &dates(6), "a", 0, 8, 8).is_err());
}

fn constant_samples(n: usize, location: &str) -> Vec<SequenceSample> {
    let date = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
    (0..n)
        .map(|i| {
            let v = (i % 2) as f32;
            SequenceSample {
                history: Array3::from_elem((3, 8, 8), v),
                target: Array2::from_elem((8, 8), v),
                location: location.into(),
                target_date: date,
            }
        })
        .collect()
}

#[test]
fn convlstm_learns_constant_sequences() {
    let train = constant_samples(32, "train");
    let val = constant_samples(8, "val");
    let spec = ForecastModelSpec {
        hidden: 4,
        depth: 1,
        history_len: 3,
        ..ForecastModelSpec::new(ForecastFamily::ConvLstm)
    };
    let config = ForecastTrainConfig {
        epochs: 12,
        batch_size: 8,
        learning_rate: 1e-2,
        seed: 1,
        ..Default::default()
    };
    let (model, training) = forecast::train_forecaster_on(&train, &val, spec, &config).unwrap();
    assert!(training.best.mse < 0.02, "val mse {}", training.best.mse);
    assert!(training.best.mse < training.log[0].val.mse);
    let out = forecast::predict_next(&model, &val[1].history).unwrap();
    assert!(out.0.iter().all(|&p| p > 0.5));
}

#[test]
fn predict_next_rejects_wrong_history_length() {
    let spec = ForecastModelSpec {
        hidden: 2,
        depth: 1,
        history_len: 4,
        ..ForecastModelSpec::new(ForecastFamily::TdCnn)
    };
    let model = ForecastModel::new(spec, 0).unwrap();
    assert!(forecast::predict_next(&model, &Array3::zeros((3, 8, 8))).is_err());
    let p = forecast::predict_next(&model, &Array3::zeros((4, 8, 8))).unwrap();
    assert_eq!(p.dim(), (8, 8));
    assert!(p.0.iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn every_family_round_trips_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let history = shrinking_disks(3, 8, 3.0, 0.5);
    for family in ForecastFamily::ALL {
        let spec = ForecastModelSpec {
            hidden: 3,
            depth: 1,
            history_len: 3,
            ..ForecastModelSpec::new(family)
        };
        let model = ForecastModel::new(spec, 7).unwrap();
        let path = dir.path().join(family.slug());
        model.save(&path).unwrap();
        let back = ForecastModel::load(&path).unwrap();
        assert_eq!(back.spec, model.spec);
        let (a, b) = (
            forecast::predict_next(&model, &history).unwrap(),
            forecast::predict_next(&back, &history).unwrap(),
        );
        assert_eq!(a.0, b.0);
    }
}
