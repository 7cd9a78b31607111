use std::fs;
use std::path::Path;

use nas_curator::characteristics::{from_dataset, from_manifest, CharError, DataCharacteristics, Task};

fn gray(path: &Path, w: u32, h: u32) {
    image::GrayImage::new(w, h).save(path).unwrap();
}

fn rgb(path: &Path, w: u32, h: u32) {
    image::RgbImage::new(w, h).save(path).unwrap();
}

#[test]
fn image_directory_gives_shape_and_class_count() {
    let dir = tempfile::tempdir().unwrap();
    for class in ["cat", "dog", "bird"] {
        fs::create_dir(dir.path().join(class)).unwrap();
        for i in 0..2 {
            rgb(&dir.path().join(class).join(format!("{i}.png")), 40, 30);
        }
    }
    fs::create_dir(dir.path().join("empty")).unwrap();
    fs::write(dir.path().join("README.txt"), "not an image").unwrap();
    let dc = from_dataset(dir.path()).unwrap();
    // Every class directory counts, even an empty one.
    assert_eq!(dc, DataCharacteristics::new(30, 40, 3, 4));
}

#[test]
fn listing_order_does_not_matter() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let classes = ["x", "y", "z", "w"];
    for c in classes {
        fs::create_dir(a.path().join(c)).unwrap();
        gray(&a.path().join(c).join("img.png"), 28, 28);
    }
    for c in classes.iter().rev() {
        fs::create_dir(b.path().join(c)).unwrap();
        gray(&b.path().join(c).join("img.png"), 28, 28);
    }
    assert_eq!(from_dataset(a.path()).unwrap(), from_dataset(b.path()).unwrap());
    assert_eq!(from_dataset(a.path()).unwrap(), DataCharacteristics::new(28, 28, 1, 4));
}

#[test]
fn channel_mismatch_is_rejected_and_size_follows_the_first_image() {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir(dir.path().join("a")).unwrap();
    gray(&dir.path().join("a").join("1.png"), 16, 16);
    rgb(&dir.path().join("a").join("2.png"), 16, 16);
    assert!(matches!(from_dataset(dir.path()), Err(CharError::InconsistentImages(..))));
    // Sizes may differ; the first image in path order decides.
    let sizes = tempfile::tempdir().unwrap();
    fs::create_dir(sizes.path().join("a")).unwrap();
    gray(&sizes.path().join("a").join("1.png"), 16, 12);
    gray(&sizes.path().join("a").join("2.png"), 17, 16);
    assert_eq!(from_dataset(sizes.path()).unwrap(), DataCharacteristics::new(12, 16, 1, 1));
    let empty = tempfile::tempdir().unwrap();
    assert!(matches!(from_dataset(empty.path()), Err(CharError::EmptyDataset(_))));
}

#[test]
fn manifests() {
    let dc = from_manifest(r#"{"height": 64, "width": 48, "channels": 1, "task": "regression"}"#).unwrap();
    assert_eq!((dc.output_channel, dc.task), (1, Task::Regression));
    assert!(from_manifest(r#"{"height": 64, "width": 48, "channels": 3}"#).is_err());
    assert!(from_manifest(r#"{"height": 64, "width": 48, "channels": 3, "num_classes": 2, "depth": 1}"#).is_err());
    let file = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/manifest.json");
    assert_eq!(from_dataset(Path::new(file)).unwrap(), DataCharacteristics::new(32, 32, 3, 10));
}
