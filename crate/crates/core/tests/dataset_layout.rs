use std::fs;
use std::path::Path;

use nucleo::dataset::{load_dataset, DatasetError, DatasetLayout};
use nucleo::image::save_gray;
use nucleo::{GrayImage, Split};

fn frame(dir: &Path, name: &str) {
    save_gray(&GrayImage::filled(40, 30, 200), &dir.join(name)).unwrap();
}

#[test]
fn flat_layout_with_bmp_and_txt() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    fs::write(root.join("labels.csv"), "frame,split,grade\n1,1,H\nframe002,0,N\n").unwrap();
    frame(root, "frame001.bmp");
    frame(root, "frame002.png");
    fs::write(root.join("frame001.txt"), "3 4\n5\t6\n").unwrap();
    fs::write(root.join("frame002.txt"), "").unwrap();

    let layout = DatasetLayout::discover(root).unwrap();
    assert_eq!(layout.images_dir, root);
    assert_eq!(layout.points_dir, root);

    let gt = load_dataset(root).unwrap();
    assert_eq!(gt.len(), 2);
    let f1 = gt.get("frame001").unwrap();
    assert_eq!(f1.split, Split::Test);
    assert_eq!(f1.gt_points.len(), 2);
    assert!(gt.get("frame002").unwrap().gt_points.is_empty());
}

#[test]
fn edf_directory_holds_images_and_points() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let edf = root.join("EDF");
    fs::create_dir(&edf).unwrap();
    fs::write(root.join("label.csv"), "frame000,L,0\n").unwrap();
    frame(&edf, "frame000.png");
    fs::write(edf.join("frame000.csv"), "x,y\n10,10\n").unwrap();

    let layout = DatasetLayout::discover(root).unwrap();
    assert_eq!(layout.points_dir, edf);
    assert_eq!(load_dataset(root).unwrap().frames()[0].gt_points.len(), 1);
}

#[test]
fn missing_pieces_are_named() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    assert!(matches!(load_dataset(root), Err(DatasetError::MissingLabels(_))));

    fs::write(root.join("label.csv"), "frame000,N,1\n").unwrap();
    fs::create_dir(root.join("points")).unwrap();
    fs::write(root.join("points/frame000.csv"), "1,1\n").unwrap();
    assert!(matches!(load_dataset(root), Err(DatasetError::MissingImage(id)) if id == "frame000"));

    frame(root, "frame000.png");
    fs::write(root.join("points/frame000.csv"), "1,1\n40,2\n").unwrap();
    let err = load_dataset(root).unwrap_err();
    assert!(matches!(err, DatasetError::PointOutOfBounds { index: 1, .. }), "{err}");
}

#[test]
fn duplicate_frames_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    fs::write(root.join("label.csv"), "frame000,N,1\n0,H,0\n").unwrap();
    frame(root, "frame000.png");
    fs::write(root.join("frame000.csv"), "").unwrap();
    assert!(matches!(load_dataset(root), Err(DatasetError::DuplicateFrameId(_))));
}
