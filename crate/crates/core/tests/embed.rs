mod common;

use std::path::PathBuf;

use proptest::prelude::*;
use velogen_core::cad::{to_cad, CadTemplate};
use velogen_core::embed::augment::apply;
use velogen_core::embed::bridge::BridgeClient;
use velogen_core::embed::reference::{embed_with, raw_features, unproject, RAW_LEN};
use velogen_core::embed::{
    augment_views, embed_views_avg, read_embeddings, reference_embed, write_embeddings, AugmentationParams,
    BridgeConfig, EmbedError, EmbedderHandle, Embedding, FeatureWeights,
};
use velogen_core::geom::Rgb8;
use velogen_core::render::{render_doc, RasterImage};
use velogen_core::schema::{DesignSchema, DesignVector};

fn render(d: &DesignVector) -> RasterImage {
    render_doc(&to_cad(d, &CadTemplate::reference(), &DesignSchema::reference()).unwrap()).unwrap()
}

fn bike() -> RasterImage {
    render(&DesignSchema::reference().default_design())
}

fn colored(r: f64, g: f64, b: f64) -> RasterImage {
    let s = DesignSchema::reference();
    render(&common::with(&s, s.default_design(), &[("red", r), ("green", g), ("blue", b)], &[]))
}

fn cosine(a: &Embedding, b: &Embedding) -> f64 {
    let (a, b) = (a.to_f64(), b.to_f64());
    let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
    dot / (a.iter().map(|x| x * x).sum::<f64>().sqrt() * b.iter().map(|x| x * x).sum::<f64>().sqrt())
}

#[test]
fn white_image_has_the_hand_computed_embedding() {
    // Only the histogram block is nonzero: every channel of every pixel is
    // 255, which lands in the top of the 8 bins. Weighted by 1 and scaled
    // to unit length, each of the three bins holds 1/√3.
    let white = RasterImage::filled(64, 40, Rgb8::WHITE);
    let back = unproject(&reference_embed(&white).to_f64());
    let mut want = vec![0.0; 512];
    for c in 0..3 {
        want[48 + c * 8 + 7] = 1.0 / 3f64.sqrt();
    }
    for (i, (g, w)) in back.iter().zip(&want).enumerate() {
        assert!((g - w).abs() < 1e-6, "index {i}: {g} vs {w}");
    }
}

#[test]
fn embeddings_are_unit_length_and_repeatable() {
    let img = bike();
    let a = reference_embed(&img);
    assert!((a.norm() - 1.0).abs() < 1e-6);
    assert_eq!(a, reference_embed(&img));
    let mut h = EmbedderHandle::reference();
    assert_eq!(h.embed_image(&img).unwrap(), h.embed_image(&img).unwrap());
}

#[test]
fn frame_color_moves_the_embedding() {
    let red = reference_embed(&colored(1.0, 0.0, 0.0));
    let yellow = reference_embed(&colored(1.0, 1.0, 0.0));
    assert!(cosine(&red, &yellow) < 0.999, "{}", cosine(&red, &yellow));
    let again = reference_embed(&colored(1.0, 0.0, 0.0));
    assert_eq!(red, again);
    assert!((cosine(&red, &again) - 1.0).abs() < 1e-12);
}

#[test]
fn identity_views_equal_the_single_embedding() {
    let img = bike();
    let id = apply(&img, &AugmentationParams::identity());
    assert_eq!(id, img);
    let one = embed_views_avg(&mut EmbedderHandle::reference(), &img, 1, 3).unwrap();
    let mut h = EmbedderHandle::reference();
    let view = augment_views(&h.preprocess(&img), 1, 3).remove(0);
    assert_eq!(one, h.embed_image(&view).unwrap());
}

#[test]
fn views_are_deterministic() {
    let img = bike();
    assert_eq!(augment_views(&img, 5, 77), augment_views(&img, 5, 77));
    assert_ne!(augment_views(&img, 2, 77), augment_views(&img, 2, 78));
}

#[test]
fn flat_image_survives_every_view() {
    let red = RasterImage::filled(120, 80, Rgb8([200, 30, 10]));
    for v in augment_views(&red, 20, 5) {
        assert!(v.pixels.chunks_exact(3).all(|p| p == [200, 30, 10]));
    }
}

#[test]
fn two_color_views_only_blend() {
    // red on white: any blend keeps R = 255 and G = B
    let mut img = RasterImage::filled(160, 100, Rgb8::WHITE);
    for y in 30..70 {
        for x in 40..(40 + y) {
            img.set(x, y, Rgb8([255, 0, 0]));
        }
    }
    for v in augment_views(&img, 20, 9) {
        assert!(v.pixels.chunks_exact(3).all(|p| p[0] == 255 && p[1] == p[2]));
    }
}

#[test]
fn averaging_reduces_variance() {
    let img = bike();
    let mut h = EmbedderHandle::reference();
    let var = |embs: &[Embedding]| {
        let n = embs.len() as f64;
        let mut total = 0.0;
        for k in 0..512 {
            let mean = embs.iter().map(|e| e.values()[k] as f64).sum::<f64>() / n;
            total += embs.iter().map(|e| (e.values()[k] as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0);
        }
        total / 512.0
    };
    let averaged: Vec<_> = (0..10).map(|s| embed_views_avg(&mut h, &img, 5, 1000 + s).unwrap()).collect();
    let single: Vec<_> = (0..50).map(|s| embed_views_avg(&mut h, &img, 1, 2000 + s).unwrap()).collect();
    let (va, vs) = (var(&averaged), var(&single));
    assert!(va <= vs, "averaged {va} vs single {vs}");
}

#[test]
fn histogram_block_ignores_mirroring() {
    let mut img = RasterImage::filled(90, 50, Rgb8::WHITE);
    for y in 5..45 {
        for x in 3..(3 + y) {
            img.set(x, y, Rgb8([(x * 5) as u8, 90, (y * 3) as u8]));
        }
    }
    let mut mirror = img.clone();
    for y in 0..50 {
        for x in 0..90 {
            mirror.set(89 - x, y, img.get(x, y));
        }
    }
    let (a, b) = (raw_features(&img), raw_features(&mirror));
    assert_eq!(a.len(), RAW_LEN);
    assert_eq!(&a[48..72], &b[48..72]);
}

#[test]
fn weights_scale_blocks() {
    let img = bike();
    let only_hist = FeatureWeights {
        grid_rgb: 0.0,
        histogram: 1.0,
        orientation: 0.0,
        moments: 0.0,
        luminance: 0.0,
    };
    let back = unproject(&embed_with(&img, &only_hist).to_f64());
    assert!(back[..48].iter().chain(&back[72..]).all(|v| v.abs() < 1e-6));
}

#[test]
fn embedding_file_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("e.f32");
    let embs = vec![reference_embed(&bike()), reference_embed(&colored(0.0, 0.0, 1.0))];
    write_embeddings(&path, &embs).unwrap();
    assert_eq!(read_embeddings(&path).unwrap(), embs);
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(bytes.len(), 16 + 2 * 512 * 4);
    assert_eq!(&bytes[..4], b"VEMB");
    std::fs::write(&path, &bytes[..100]).unwrap();
    assert!(read_embeddings(&path).is_err());
}

proptest! {
    #[test]
    fn drawn_params_in_range(seed in any::<u64>(), view in 0u32..64) {
        let p = AugmentationParams::draw(seed, view);
        prop_assert!(p.in_range());
        prop_assert_eq!(p.clone(), AugmentationParams::draw(seed, view));
    }

    #[test]
    fn mean_is_one_lipschitz(seed in 0u64..1000, eps in 0.0f32..0.1) {
        let base: Vec<Embedding> = (0..5)
            .map(|k| Embedding::new((0..512).map(|i| (((i * 31 + k * 7) as u64 ^ seed) % 97) as f32 / 97.0).collect()))
            .collect();
        let moved: Vec<Embedding> = base
            .iter()
            .enumerate()
            .map(|(k, e)| Embedding::new(e.values().iter().map(|v| v + eps * (k as f32 / 5.0)).collect()))
            .collect();
        let (a, b) = (Embedding::mean(&base).unwrap(), Embedding::mean(&moved).unwrap());
        for (x, y) in a.values().iter().zip(b.values()) {
            prop_assert!((x - y).abs() <= eps + 1e-6);
        }
    }
}

fn mock(args: &str) -> BridgeConfig {
    let script = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/mock_bridge.py");
    BridgeConfig::from_command_line(&format!("python3 {} {args}", script.display())).unwrap()
}

#[test]
fn bridge_handshake_and_requests() {
    let mut h = EmbedderHandle::external(&mock("")).unwrap();
    assert_eq!(h.model_tag(), "mock-sha256");
    let img = bike();
    let a = h.embed_image(&img).unwrap();
    assert_eq!(a, h.embed_image(&img).unwrap());
    assert!((a.norm() - 1.0).abs() < 1e-5);
    let t = h.embed_text("a yellow mountain bike").unwrap();
    assert_eq!(t, h.embed_text("a yellow mountain bike").unwrap());
    assert_ne!(t, h.embed_text("a bicycle").unwrap());
    // averaging happens on this side, one request per view
    let avg = embed_views_avg(&mut h, &img, 5, 0).unwrap();
    assert!(avg.norm() < 1.0 + 1e-5);
}

#[test]
fn bridge_errors_keep_the_session() {
    let mut c = BridgeClient::spawn(&mock("")).unwrap();
    assert!(matches!(c.embed_png(b"not a png"), Err(EmbedError::Remote { .. })));
    assert!(matches!(c.embed_text(""), Err(EmbedError::Remote { .. })));
    assert!(c.embed_text("still alive").is_ok());
}

#[test]
fn bridge_handshake_is_checked() {
    assert!(matches!(EmbedderHandle::external(&mock("--dim 768")), Err(EmbedError::Dimension(768))));
    assert!(matches!(EmbedderHandle::external(&mock("--protocol 2")), Err(EmbedError::ProtocolVersion(2))));
}

#[test]
fn bridge_failures_are_reported() {
    let mut c = BridgeClient::spawn(&mock("--die-after 1")).unwrap();
    assert!(c.embed_text("one").is_ok());
    assert!(matches!(c.embed_text("two"), Err(EmbedError::Unreachable(_))));
    let mut c = BridgeClient::spawn(&mock("--wrong-id")).unwrap();
    assert!(matches!(c.embed_text("x"), Err(EmbedError::Protocol(_))));
    let down = BridgeConfig::from_command_line("/nonexistent/bridge").unwrap();
    assert!(matches!(EmbedderHandle::external(&down), Err(EmbedError::Unreachable(_))));
}

#[test]
fn reference_handle_has_no_text() {
    let mut h = EmbedderHandle::reference();
    assert!(matches!(h.embed_text("a bicycle"), Err(EmbedError::Unsupported(_))));
}
