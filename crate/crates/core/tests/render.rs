mod common;

use std::collections::HashMap;
use std::path::PathBuf;

use common::{fixture_designs, random_feasible, with};
use proptest::prelude::*;
use velogen_core::cad::{to_cad, CadTemplate};
use velogen_core::constraints::{check, RuleSet};
use velogen_core::geom::{Rgb8, Vec2};
use velogen_core::render::scene::SUSPENSION_FORK_EXTRA;
use velogen_core::render::{
    decode_png, encode_png, rasterize, render_doc, to_svg, BikeParams, Primitive, RasterImage, SvgScene, ViewBox,
};
use velogen_core::schema::{DesignSchema, DesignVector};

fn render_design(d: &DesignVector) -> RasterImage {
    let s = DesignSchema::reference();
    render_doc(&to_cad(d, &CadTemplate::reference(), &s).unwrap()).unwrap()
}

fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/golden")
}

/// Set `VELOGEN_BLESS=1` to rewrite the golden images.
#[test]
fn golden_images() {
    let bless = std::env::var_os("VELOGEN_BLESS").is_some();
    let s = DesignSchema::reference();
    let rules = RuleSet::reference();
    for (name, d) in fixture_designs() {
        let rep = check(&d, &s, &rules);
        assert!(rep.is_feasible(), "{name}: {:?}", rep.violations);
        let img = render_design(&d);
        let path = golden_dir().join(format!("{name}.png"));
        if bless {
            std::fs::create_dir_all(golden_dir()).unwrap();
            std::fs::write(&path, encode_png(&img)).unwrap();
            continue;
        }
        let want = decode_png(&std::fs::read(&path).unwrap()).unwrap();
        assert_eq!((img.width, img.height), (want.width, want.height));
        let diff = img.pixels.iter().zip(&want.pixels).filter(|(a, b)| a != b).count();
        assert_eq!(diff, 0, "{name}: {diff} channel values differ");
    }
}

#[test]
fn rendering_is_repeatable() {
    for (_, d) in fixture_designs() {
        assert_eq!(encode_png(&render_design(&d)), encode_png(&render_design(&d)));
    }
}

fn unit_box() -> ViewBox {
    ViewBox {
        x: -500.0,
        y: -500.0,
        width: 1000.0,
        height: 1000.0,
    }
}

#[test]
fn filled_circle_area() {
    for (radius, w, h) in [(100.0, 1070, 679), (37.0, 1070, 679), (400.0, 500, 500), (250.0, 300, 640)] {
        let mut scene = SvgScene::empty(unit_box());
        scene.primitives.push(Primitive::Circle {
            center: Vec2::new(13.0, -7.0),
            radius,
            stroke: None,
            fill: Some(Rgb8::BLACK),
        });
        let img = rasterize(&scene, w, h, 4).unwrap();
        // 1000 scene units span 90% of the shorter side
        let r_px = radius * 0.9 * w.min(h) as f64 / 1000.0;
        let ink: f64 = img
            .pixels
            .chunks_exact(3)
            .map(|p| 1.0 - p[0] as f64 / 255.0)
            .sum();
        let area = std::f64::consts::PI * r_px * r_px;
        assert!((ink - area).abs() / area < 0.015, "r={radius}: ink {ink} vs {area}");
    }
}

#[test]
fn empty_scene_is_white() {
    let img = rasterize(&SvgScene::empty(unit_box()), 1070, 679, 4).unwrap();
    assert_eq!((img.width, img.height), (1070, 679));
    assert!(img.pixels.iter().all(|&v| v == 255));
}

#[test]
fn png_roundtrip_and_truncation() {
    let mut img = RasterImage::filled(31, 17, Rgb8::WHITE);
    for (k, v) in img.pixels.iter_mut().enumerate() {
        *v = (k * 7919 % 256) as u8;
    }
    let bytes = encode_png(&img);
    assert_eq!(decode_png(&bytes).unwrap(), img);
    assert!(decode_png(&bytes[..bytes.len() / 2]).is_err());
    let white = RasterImage::filled(8, 8, Rgb8::WHITE);
    assert!(decode_png(&encode_png(&white)).unwrap().pixels.iter().all(|&v| v == 255));
}

#[test]
fn modal_color_is_the_frame_color() {
    let s = DesignSchema::reference();
    let tire = BikeParams::default().style.tire_color;
    for d in random_feasible(100, 11) {
        let img = render_design(&d);
        let rgb = d.real(&s, "red").zip(d.real(&s, "green")).zip(d.real(&s, "blue")).unwrap();
        let want = Rgb8::from_unit(rgb.0 .0, rgb.0 .1, rgb.1);
        let mut counts: HashMap<[u8; 3], usize> = HashMap::new();
        for p in img.pixels.chunks_exact(3) {
            let c = [p[0], p[1], p[2]];
            if c != Rgb8::WHITE.0 && c != tire.0 {
                *counts.entry(c).or_default() += 1;
            }
        }
        let modal = counts.iter().max_by_key(|(c, n)| (**n, **c)).unwrap().0;
        assert_eq!(*modal, want.0, "{d:?}");
    }
}

#[test]
fn frame_primitives_carry_design_color() {
    let s = DesignSchema::reference();
    let (_, yellow) = &fixture_designs()[1];
    let yellow_lines = |d: &DesignVector| {
        let p = BikeParams::from_design(d, &s);
        assert_eq!(p.frame_color, Rgb8([255, 255, 0]));
        let scene = to_svg(&p.solve().unwrap(), &p);
        let n = scene
            .primitives
            .iter()
            .filter(|q| matches!(q, Primitive::Line { stroke, .. } if stroke.color == Rgb8([255, 255, 0])))
            .count();
        (n, scene.primitives.len())
    };
    let rigid = with(&s, yellow.clone(), &[], &[("fork_style", "rigid")]);
    // six tubes plus one or two fork legs
    let (n_susp, total_susp) = yellow_lines(yellow);
    let (n_rigid, total_rigid) = yellow_lines(&rigid);
    assert_eq!((n_susp, n_rigid), (8, 7));
    assert_eq!(total_susp - total_rigid, SUSPENSION_FORK_EXTRA);
}

#[test]
fn tires_are_stroked_with_their_widths() {
    let s = DesignSchema::reference();
    for d in random_feasible(20, 5) {
        let p = BikeParams::from_design(&d, &s);
        let scene = to_svg(&p.solve().unwrap(), &p);
        let widths: Vec<f64> = scene
            .primitives
            .iter()
            .filter_map(|q| match q {
                Primitive::Circle { stroke: Some(st), .. } if st.color == p.style.tire_color => Some(st.width),
                _ => None,
            })
            .collect();
        assert_eq!(widths, vec![p.tire_width_rear, p.tire_width_front]);
    }
}

/// Every feasible design renders. The bulk runs at a small canvas; a slice
/// also goes through the full-size path.
#[test]
fn feasible_designs_always_render() {
    let designs = random_feasible(100_000, 23);
    for (k, d) in designs.iter().enumerate() {
        let p = BikeParams::from_design(d, &DesignSchema::reference());
        let scene = to_svg(&p.solve().unwrap(), &p);
        assert!(scene.is_finite());
        let img = if k % 100 == 0 {
            rasterize(&scene, 1070, 679, 4).unwrap()
        } else {
            rasterize(&scene, 107, 68, 1).unwrap()
        };
        assert!(img.pixels.iter().any(|&v| v != 255));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn scale_equivariance(k in 0.5f64..2.0, idx in 0usize..5) {
        let (_, d) = &fixture_designs()[idx];
        let p = BikeParams::from_design(d, &DesignSchema::reference());
        let g = p.solve().unwrap();
        let gk = p.scaled(k).solve().unwrap();
        for ((name, a), (_, b)) in g.points().iter().zip(gk.points().iter()) {
            prop_assert!((*a * k).distance(*b) <= 1e-9 * (1.0 + a.length() * k), "{}", name);
        }
    }
}
