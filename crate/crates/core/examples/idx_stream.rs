//! Writes a glyph task as IDX files, reads it back through task specs with
//! transforms, and prints the resulting stream.

use degm::cli::gen_synthetic;
use degm::data::{build_stream, Source, SyntheticKind, TaskSpec, Transform};

fn main() -> degm::Result<()> {
    let dir = std::env::temp_dir().join("degm-idx-example");
    let prefix = dir.join("glyphs");
    for p in gen_synthetic(SyntheticKind::Glyphs, 200, 50, 28 * 28, 0, &prefix)? {
        println!("wrote {}", p.display());
    }
    let file = |s: &str| dir.join(format!("glyphs-{s}.idx"));
    let spec = |name: &str, transforms: Vec<Transform>, labels: Option<Vec<u8>>| TaskSpec {
        name: name.into(),
        source: Source::Idx {
            train_images: file("train-images"),
            train_labels: Some(file("train-labels")),
            test_images: file("test-images"),
            test_labels: Some(file("test-labels")),
        },
        transforms,
        labels,
        max_train: None,
        max_test: None,
    };
    let specs = [
        spec("digits-0-4", vec![], Some(vec![0, 1, 2, 3, 4])),
        spec("inverted", vec![Transform::Invert], None),
        spec("rotated-binary", vec![Transform::Rotate90, Transform::Binarize { threshold: 0.5 }], None),
    ];
    let stream = build_stream(&specs, 0, true)?;
    for t in &stream.tasks {
        println!("{}: {} train, {} test, {} pixels, image {:?}", t.name, t.train.len(), t.test.len(), t.input_dim(), t.train.image);
    }
    Ok(())
}
