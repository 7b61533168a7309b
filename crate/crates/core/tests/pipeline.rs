use std::io::Write;

use sectorboost_core::committee::{error_rate, predict_all, LearnerKind};
use sectorboost_core::dataset::{partition_by_sector, split_train_test};
use sectorboost_core::export::{model_from_json, model_to_json, write_dataset_csv};
use sectorboost_core::pipeline::{backtest_on_dataset, fit_sector_models, run_on_dataset, run_pipeline, Mode, RunConfig};
use sectorboost_core::synth::{generate, SyntheticSpec};
use sectorboost_core::{Classifier, Error, Quarter, Sector, TrainedLearner};

fn quick() -> RunConfig {
    RunConfig {
        max_trees: 60,
        workers: 1,
        ..RunConfig::default()
    }
}

fn quarters(start: (i32, u8), end: (i32, u8)) -> (Quarter, Quarter) {
    (Quarter::new(start.0, start.1).unwrap(), Quarter::new(end.0, end.1).unwrap())
}

#[test]
fn noiseless_committee_generalizes_from_ten_percent() {
    let data = generate(&SyntheticSpec {
        sectors: 1,
        records_per_sector: 600,
        noise: 0.0,
        seed: 21,
        ..SyntheticSpec::default()
    })
    .unwrap()
    .dataset;
    let report = run_on_dataset(&data, &quick()).unwrap();
    let s = &report.sectors[0];
    assert_eq!(s.train_size, 60);
    assert!(s.committee.test_error <= 0.05, "{:?}", s.committee);
}

#[test]
fn one_quarter_horizon_matches_frozen_test_error() {
    let (q1, q2) = quarters((2009, 1), (2009, 2));
    let data = generate(&SyntheticSpec {
        sectors: 1,
        records_per_sector: 300,
        noise: 0.5,
        start: q1,
        end: q2,
        seed: 4,
        ..SyntheticSpec::default()
    })
    .unwrap()
    .dataset;
    let config = RunConfig {
        train_fraction: 0.5,
        ..quick()
    };
    let report = backtest_on_dataset(&data, &config, q1, q2).unwrap();
    let s = &report.sectors[0];
    assert_eq!(s.series.len(), 1);
    assert_eq!(s.series[0].quarter, q2);

    let sector = s.sector;
    let part = &partition_by_sector(&data)[&sector];
    let (train, _) = split_train_test(&part.filter_quarter(q1), 0.5, config.split_seed(sector)).unwrap();
    let fitted = fit_sector_models(sector, &train, &config, config.sector_seed(sector)).unwrap();
    let held = fitted.prepare(&part.filter_quarter(q2));
    let direct = error_rate(&predict_all(&fitted.committee, &held).unwrap(), &held.labels()).unwrap();
    assert_eq!(s.series[0].error, Some(direct));
    assert_eq!(s.series[0].records, held.len());
}

#[test]
fn horizon_must_follow_training_quarter() {
    let (q1, q2) = quarters((2009, 1), (2009, 2));
    let data = generate(&SyntheticSpec::default()).unwrap().dataset;
    assert!(matches!(
        backtest_on_dataset(&data, &quick(), q2, q1),
        Err(Error::InvalidParameter(_))
    ));
    assert!(backtest_on_dataset(&data, &quick(), q1, q1).is_err());
}

#[test]
fn csv_run_counts_rejected_rows() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("panel.csv");
    let data = generate(&SyntheticSpec {
        sectors: 2,
        records_per_sector: 150,
        seed: 8,
        ..SyntheticSpec::default()
    })
    .unwrap()
    .dataset;
    write_dataset_csv(&data, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let sector_col = header.iter().position(|h| h.contains("sector")).unwrap();
    let mut bad: Vec<&str> = lines.next().unwrap().split(',').collect();
    bad[sector_col] = "not-a-sector";
    let mut f = std::fs::OpenOptions::new().append(true).open(&path).unwrap();
    writeln!(f, "{}", bad.join(",")).unwrap();
    drop(f);

    let config = RunConfig {
        input: Some(path.clone()),
        train_fraction: 0.3,
        ..quick()
    };
    let report = run_pipeline(&config).unwrap();
    assert_eq!(report.rejected_rows, 1);
    assert_eq!(report.mode, Mode::PerSector);
    assert_eq!(report.sectors.len(), 2);
    let direct = run_on_dataset(&data, &config).unwrap();
    for (x, y) in report.sectors.iter().zip(&direct.sectors) {
        assert_eq!(x.fingerprint, y.fingerprint);
        assert_eq!(x.predictions, y.predictions);
    }

    let missing = RunConfig {
        input: Some(dir.path().join("absent.csv")),
        ..quick()
    };
    assert!(run_pipeline(&missing).is_err());
}

#[test]
fn kernel_models_survive_a_file_round_trip() {
    let data = generate(&SyntheticSpec {
        sectors: 1,
        records_per_sector: 200,
        seed: 13,
        ..SyntheticSpec::default()
    })
    .unwrap()
    .dataset;
    let config = RunConfig {
        train_fraction: 0.5,
        ..quick()
    };
    let sector = Sector::GICS[0];
    let (train, test) = split_train_test(&data, 0.5, 1).unwrap();
    let fitted = fit_sector_models(sector, &train, &config, 2).unwrap();
    let held = fitted.prepare(&test);
    let dir = tempfile::tempdir().unwrap();
    for learner in &fitted.committee.learners {
        let text = match learner.kind() {
            LearnerKind::Svm | LearnerKind::Rvm => model_to_json(learner).unwrap(),
            _ => {
                assert!(model_to_json(learner).is_err());
                continue;
            }
        };
        let path = dir.path().join(format!("{}.json", learner.kind().name()));
        std::fs::write(&path, &text).unwrap();
        let back: TrainedLearner = model_from_json(&std::fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(&back, learner);
        for r in &held.records {
            assert_eq!(back.decide(&r.features).unwrap(), learner.decide(&r.features).unwrap());
        }
    }
}
