use eadnet::autograd::{ParamKind, ParamStore};
use eadnet::labels::IGNORE_LABEL;
use eadnet::metrics::ConfusionMatrix;
use eadnet::netpbm::{decode_pgm_labels, decode_ppm, load_ppm, Palette};
use eadnet::synth::{synth_dataset, SynthConfig};
use eadnet::weights::{encode_weights, load_weights, load_weights_into, save_weights};
use eadnet::{Error, LabelMap, Tensor};

#[test]
fn white_pixel_and_label_bytes() {
    let img = decode_ppm(b"P6\n1 1\n255\n\xff\xff\xff").unwrap();
    assert_eq!(img.data(), &[1.0, 1.0, 1.0]);
    let labels = decode_pgm_labels(b"P5 3 1 255\n\x00\x01\xff").unwrap();
    assert_eq!(labels.data(), &[0, 1, IGNORE_LABEL]);
}

#[test]
fn netpbm_files_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.ppm");
    std::fs::write(&path, b"P6\n# comment\n2 1\n255\n\x00\x80\xff\x10\x20\x30").unwrap();
    let t = load_ppm(&path).unwrap();
    assert_eq!(t.dims(), [1, 3, 1, 2]);
    assert_eq!(t.at(0, 2, 0, 0), 1.0);
    std::fs::write(&path, b"P6\n2 1\n255\n\x00").unwrap();
    assert!(matches!(load_ppm(&path), Err(Error::Parse(_))));
    assert!(matches!(load_ppm(dir.path().join("missing.ppm")), Err(Error::Io(_))));
}

#[test]
fn palette_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("palette.txt");
    std::fs::write(&path, "0 0 0 0\n1 255 0 0\n").unwrap();
    let p = Palette::load(&path).unwrap();
    assert_eq!(p.color(1), [255, 0, 0]);
}

fn store() -> ParamStore<f32> {
    let mut s = ParamStore::new();
    s.insert("c.weight", Tensor::from_fn([3, 2, 3, 3], |a, b, c, d| (a * 27 + b * 9 + c * 3 + d) as f32 * 0.01), ParamKind::ConvWeight)
        .unwrap();
    s.insert("c.bias", Tensor::full([1, 3, 1, 1], -0.5), ParamKind::ConvBias).unwrap();
    s.insert("c_bn.running_var", Tensor::full([1, 3, 1, 1], 2.0), ParamKind::BnRunningVar).unwrap();
    s
}

#[test]
fn weight_files() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.bin");
    save_weights(&store(), &path).unwrap();
    let loaded = load_weights(&path).unwrap();
    assert_eq!(loaded.get("c.weight").unwrap(), store().get("c.weight").unwrap());
    assert_eq!(loaded.entry("c_bn.running_var").unwrap().kind, ParamKind::BnRunningVar);

    let bytes = encode_weights(&store());
    std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
    let mut target = store();
    assert!(matches!(load_weights_into(&mut target, &path), Err(Error::Parse(_))));

    let mut wrong = ParamStore::<f32>::new();
    wrong.insert("c.weight", Tensor::zeros([3, 2, 1, 1]), ParamKind::ConvWeight).unwrap();
    wrong.insert("c.bias", Tensor::zeros([1, 3, 1, 1]), ParamKind::ConvBias).unwrap();
    wrong.insert("c_bn.running_var", Tensor::zeros([1, 3, 1, 1]), ParamKind::BnRunningVar).unwrap();
    std::fs::write(&path, encode_weights(&wrong)).unwrap();
    assert!(matches!(load_weights_into(&mut target, &path), Err(Error::Shape(_))));
    assert_eq!(target.get("c.bias").unwrap().data(), &[-0.5; 3]);
}

#[test]
fn synthetic_classes_all_appear() {
    let data = synth_dataset(42, 100, &SynthConfig::new(64, 4)).unwrap();
    let mut counts = [0u64; 4];
    for s in &data {
        for &l in s.labels.data() {
            counts[l as usize] += 1;
        }
    }
    assert!(counts.iter().all(|&c| c > 0), "{counts:?}");
    assert!(synth_dataset(1, 1, &SynthConfig::new(60, 4)).is_err());
    assert!(synth_dataset(1, 1, &SynthConfig::new(64, 1)).is_err());
}

#[test]
fn confusion_matrix_properties() {
    let truth = LabelMap::new([1, 2, 4], vec![0, 1, 2, 2, 1, 1, 0, 2]).unwrap();
    let pred = LabelMap::new([1, 2, 4], vec![0, 2, 2, 1, 1, 1, 0, 0]).unwrap();
    let mut whole = ConfusionMatrix::new(3);
    whole.accumulate(&pred, &truth).unwrap();

    let mut reversed = ConfusionMatrix::new(3);
    for i in (0..8).rev() {
        let t = LabelMap::new([1, 1, 1], vec![truth.data()[i]]).unwrap();
        let p = LabelMap::new([1, 1, 1], vec![pred.data()[i]]).unwrap();
        reversed.accumulate(&p, &t).unwrap();
    }
    assert_eq!(reversed, whole);

    let mut tripled = ConfusionMatrix::new(3);
    for _ in 0..3 {
        tripled.merge(&whole).unwrap();
    }
    assert!((tripled.miou().unwrap().miou - whole.miou().unwrap().miou).abs() < 1e-12);

    let wrong_t = LabelMap::new([1, 1, 2], vec![0, 1]).unwrap();
    let wrong_p = LabelMap::new([1, 1, 2], vec![1, 0]).unwrap();
    let mut cm = ConfusionMatrix::new(2);
    cm.accumulate(&wrong_p, &wrong_t).unwrap();
    assert_eq!(cm.miou().unwrap().miou, 0.0);
}
