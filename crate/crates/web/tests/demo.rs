use image::{Rgb, Rgb32FImage};
use lookalike_web::{compare, knee_summary, projection_summary, rgba_to_image};

fn icon(shift: u32) -> Rgb32FImage {
    Rgb32FImage::from_fn(48, 48, |x, y| {
        Rgb([
            ((x + shift) % 48) as f32 / 48.0,
            (y % 16) as f32 / 16.0,
            ((x ^ y) % 7) as f32 / 7.0,
        ])
    })
}

#[test]
fn identical_icons_are_zero_apart() {
    let a = icon(0);
    let r = compare(&a, &a, 6.0, 3).unwrap();
    for key in [
        "content_cos",
        "style_cos",
        "content_l2",
        "style_l2",
        "combined_cos",
        "combined_normalized",
    ] {
        assert!(r[key].as_f64().unwrap().abs() < 1e-9, "{key} = {}", r[key]);
    }
    assert_eq!(r["gram_a"], r["gram_b"]);
    assert_eq!(r["gram_a"].as_array().unwrap().len(), 8);
}

#[test]
fn different_icons_stay_within_bounds() {
    let r = compare(&icon(0), &icon(17), 6.0, 3).unwrap();
    let combined = r["combined_cos"].as_f64().unwrap();
    assert!(combined > 0.0 && combined <= 7.0);
    let norm = r["combined_normalized"].as_f64().unwrap();
    assert!((norm - combined / 7.0).abs() < 1e-12);
}

#[test]
fn rgba_length_is_checked() {
    assert!(rgba_to_image(&[0; 15], 2, 2).is_err());
    let img = rgba_to_image(&[255, 0, 51, 7, 0, 255, 0, 255], 2, 1).unwrap();
    assert_eq!(img.get_pixel(0, 0).0, [1.0, 0.0, 0.2]);
    assert_eq!(img.get_pixel(1, 0).0, [0.0, 1.0, 0.0]);
}

#[test]
fn projection_summary_reports_expected_density() {
    let r = projection_summary(2080, 256, 1, 20).unwrap();
    let density = r["density"].as_f64().unwrap();
    let expected = 1.0 / 2080f64.sqrt();
    assert!((density / expected - 1.0).abs() < 0.1, "{density} vs {expected}");
    assert!((r["magnitude"].as_f64().unwrap() - 2080f64.powf(0.25)).abs() < 1e-12);
    assert_eq!(r["pairs"], 190);
}

#[test]
fn knee_summary_for_sqrt_and_line() {
    let sqrt: Vec<(f64, f64)> = (0..=100)
        .map(|i| (i as f64 / 100.0, (i as f64 / 100.0).sqrt()))
        .collect();
    let knee = knee_summary(&sqrt).unwrap()["knee"].as_f64().unwrap();
    assert!((knee - 0.25).abs() <= 0.01, "{knee}");

    let line: Vec<(f64, f64)> = (0..=100).map(|i| (i as f64 / 100.0, i as f64 / 100.0)).collect();
    assert!(knee_summary(&line).unwrap()["knee"].is_null());
}
