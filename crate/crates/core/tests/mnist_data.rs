//! Checks the bundled MNIST files load with the expected shape and
//! per-class counts.

mod support;

use imparq::datasets::{DataSource, DatasetSpec, Task};

#[test]
fn bundled_mnist_has_the_standard_layout() {
    let data = DatasetSpec {
        source: DataSource::MnistIdx {
            dir: support::mnist_dir(),
        },
        task: Task::Multiclass,
    }
    .materialize()
    .expect("bundled MNIST should load");

    assert_eq!(data.train.len(), 60_000);
    assert_eq!(data.test.len(), 10_000);
    assert_eq!(data.class_count, 10);
    assert!(data.train.iter().all(|s| s.features.len() == 784));
    assert!(data
        .train
        .iter()
        .take(100)
        .all(|s| s.features.iter().all(|&v| (0.0..=1.0).contains(&v))));

    let train_count = |c: usize| data.train.iter().filter(|s| s.label == c).count();
    let test_count = |c: usize| data.test.iter().filter(|s| s.label == c).count();
    assert_eq!(train_count(1), 6_742);
    assert_eq!(train_count(3), 6_131);
    assert_eq!(train_count(5), 5_421);
    assert_eq!(test_count(1), 1_135);
    assert_eq!(test_count(3), 1_010);
    assert_eq!(test_count(5), 892);
}

#[test]
fn binary_three_versus_five_filters_to_those_digits() {
    let data = DatasetSpec {
        source: DataSource::MnistIdx {
            dir: support::mnist_dir(),
        },
        task: Task::Binary {
            positive: 3,
            negative: 5,
        },
    }
    .materialize()
    .unwrap();

    assert_eq!(data.train.len(), 6_131 + 5_421);
    assert_eq!(data.test.len(), 1_010 + 892);
    assert_eq!(data.train.iter().filter(|s| s.label == 1).count(), 6_131);
    assert_eq!(data.test.iter().filter(|s| s.label == 0).count(), 892);
}
