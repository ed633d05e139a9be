use hipe::image::quantize_u8;
use hipe::{load_image, save_image, HipeError, Image};

fn write_raw(path: &std::path::Path, img: image::DynamicImage) {
    img.save(path).unwrap();
}

#[test]
fn white_8bit_png_loads_as_one() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("white.png");
    write_raw(
        &p,
        image::DynamicImage::ImageLuma8(image::GrayImage::from_pixel(3, 2, image::Luma([255]))),
    );
    let img = load_image(&p).unwrap();
    assert_eq!((img.width(), img.height(), img.channels()), (3, 2, 1));
    assert!(img.data().iter().all(|&v| v == 1.0));
}

#[test]
fn sixteen_bit_is_normalized_by_65535() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("deep.png");
    let buf = image::ImageBuffer::<image::Rgb<u16>, Vec<u16>>::from_pixel(
        2,
        2,
        image::Rgb([65535, 0, 32768]),
    );
    write_raw(&p, image::DynamicImage::ImageRgb16(buf));
    let img = load_image(&p).unwrap();
    assert_eq!(img.channels(), 3);
    assert_eq!(img.get(1, 1, 0), 1.0);
    assert_eq!(img.get(1, 1, 1), 0.0);
    assert!((img.get(1, 1, 2) - 32768.0 / 65535.0).abs() < 1e-15);
}

#[test]
fn pgm_gives_one_channel_and_ppm_three() {
    let dir = tempfile::tempdir().unwrap();
    let gray = Image::new(2, 2, 1, vec![0.0, 0.25, 0.5, 1.0]).unwrap();
    let rgb = Image::filled(2, 3, 3, 0.4).unwrap();
    let (pg, pp) = (dir.path().join("a.pgm"), dir.path().join("b.ppm"));
    save_image(&gray, &pg).unwrap();
    save_image(&rgb, &pp).unwrap();
    assert_eq!(load_image(&pg).unwrap().channels(), 1);
    let back = load_image(&pp).unwrap();
    assert_eq!((back.width(), back.height(), back.channels()), (2, 3, 3));
}

#[test]
fn round_trip_within_one_level() {
    let dir = tempfile::tempdir().unwrap();
    let img = hipe::oracle::random_image(9, 7, 3, 3);
    let p = dir.path().join("r.png");
    save_image(&img, &p).unwrap();
    let back = load_image(&p).unwrap();
    assert!(img.max_abs_diff(&back).unwrap() <= 0.5 / 255.0 + 1e-12);
}

#[test]
fn out_of_range_values_are_clamped_on_save() {
    assert_eq!(quantize_u8(-0.3), 0);
    assert_eq!(quantize_u8(1.7), 255);
    assert_eq!(quantize_u8(0.5), 128);
}

#[test]
fn alpha_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("rgba.png");
    write_raw(
        &p,
        image::DynamicImage::ImageRgba8(image::RgbaImage::new(2, 2)),
    );
    assert!(matches!(load_image(&p), Err(HipeError::Format(_))));
}

#[test]
fn unsupported_and_missing_files() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("junk.png");
    std::fs::write(&p, b"not an image").unwrap();
    assert!(matches!(load_image(&p), Err(HipeError::Format(_))));
    assert!(matches!(
        load_image(dir.path().join("absent.png")),
        Err(HipeError::Io { .. })
    ));
}

#[test]
fn save_leaves_no_temporary_files() {
    let dir = tempfile::tempdir().unwrap();
    save_image(
        &Image::filled(4, 4, 1, 0.5).unwrap(),
        dir.path().join("x.png"),
    )
    .unwrap();
    let names: Vec<_> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    assert_eq!(names, vec![std::ffi::OsString::from("x.png")]);
}
