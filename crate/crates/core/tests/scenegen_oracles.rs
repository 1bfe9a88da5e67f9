//! Renderer checks against closed-form silhouettes and the split protocol.

use viewmerge::error::Error;
use viewmerge::numerics::Rng;
use viewmerge::scenegen::{
    make_splits, object_mask, render, render_background, Background, ConceptTokens, Elevation, ObjectId, SceneSpec,
    SplitRequest, ViewId, DEFAULT_GRID,
};

/// Frozen camera constants: (elevation, vertical squash, centre row fraction).
const CAMERA: [(Elevation, f64, f64); 4] = [
    (Elevation::Low, 0.6, 0.64),
    (Elevation::Mid, 0.7, 0.6),
    (Elevation::High, 0.85, 0.55),
    (Elevation::Top, 1.0, 0.5),
];
const RADIUS_FRACTION: f64 = 0.34;

/// Pixels whose centre lies inside the projected unit disk, an axis-aligned
/// ellipse whatever the azimuth.
fn ellipse_count(grid: usize, squash: f64, centre_row: f64) -> usize {
    let g = grid as f64;
    let (r, cx, cy) = (RADIUS_FRACTION * g, g / 2.0, centre_row * g);
    let mut n = 0;
    for i in 0..grid {
        for j in 0..grid {
            let dx = (j as f64 + 0.5 - cx) / r;
            let dy = (i as f64 + 0.5 - cy) / (r * squash);
            if dx * dx + dy * dy <= 1.0 {
                n += 1;
            }
        }
    }
    n
}

fn count(m: &viewmerge::numerics::Matrix) -> usize {
    m.data().iter().filter(|&&v| v > 0.5).count()
}

#[test]
fn circle_masks_match_brute_force_ellipse() {
    for grid in [16, DEFAULT_GRID, 40] {
        for (elevation, squash, row) in CAMERA {
            let oracle = ellipse_count(grid, squash, row);
            for az in 0..8 {
                let view = ViewId::new(elevation, az).unwrap();
                let got = count(&object_mask(ObjectId::Circle, view, grid));
                assert!(got.abs_diff(oracle) <= 1, "grid {grid} {}: {got} vs {oracle}", view.name());
            }
        }
    }
}

#[test]
fn polygon_areas_track_closed_form() {
    // Silhouette area in pixels is the canonical area times R²·squash.
    let cases = [(ObjectId::Square, 1.44f64 * 1.44), (ObjectId::Diamond, 2.0), (ObjectId::Bar, 1.9 * 0.8)];
    let grid = 96;
    let r = RADIUS_FRACTION * grid as f64;
    for (object, area) in cases {
        for (elevation, squash, _) in CAMERA {
            for az in [0u8, 1, 2, 5] {
                let view = ViewId::new(elevation, az).unwrap();
                let expect = area * r * r * squash;
                let got = count(&object_mask(object, view, grid)) as f64;
                assert!((got - expect).abs() / expect < 0.06, "{object:?} {}: {got} vs {expect:.1}", view.name());
            }
        }
    }
}

#[test]
fn image_is_fill_on_mask_and_background_elsewhere() {
    for (k, object) in ObjectId::ALL.into_iter().enumerate() {
        let view = ViewId::from_index((k * 7) % ViewId::COUNT).unwrap();
        let bg = Background::ALL[k % Background::ALL.len()];
        let scene = render(&SceneSpec::new(object, view, bg), 11).unwrap();
        let backdrop = render_background(bg, view, DEFAULT_GRID, 11);
        for idx in 0..scene.image.len() {
            let px = scene.image.data()[idx];
            if scene.mask.data()[idx] > 0.5 {
                assert_eq!(px, object.intensity());
            } else {
                assert_eq!(px, backdrop.data()[idx]);
            }
        }
    }
}

#[test]
fn asymmetric_object_is_identifiable_per_view() {
    let masks: Vec<_> = ViewId::all().into_iter().map(|v| object_mask(ObjectId::Arrow, v, DEFAULT_GRID)).collect();
    for a in 0..masks.len() {
        for b in a + 1..masks.len() {
            assert_ne!(masks[a], masks[b], "views {a} and {b} render the same silhouette");
        }
    }
}

fn request() -> SplitRequest {
    SplitRequest {
        target_view: ViewId::new(Elevation::Low, 3).unwrap(),
        view_object: ObjectId::Square,
        novel_object: ObjectId::Heart,
        n_object_shots: 4,
        background: Background::TableEdge,
        grid: DEFAULT_GRID,
        object_shot_views: None,
    }
}

#[test]
fn heldout_is_the_novel_object_at_the_target_view() {
    for seed in 0..5 {
        let req = request();
        let tokens = ConceptTokens::draw(&mut Rng::new(seed)).unwrap();
        let s = make_splits(&req, tokens, seed).unwrap();
        let truth = render(&SceneSpec::new(req.novel_object, req.target_view, req.background), seed).unwrap();
        assert_eq!(s.heldout, truth);
        assert_eq!(s.view_shot.items.len(), 1);
        assert_eq!(s.view_shot.items[0].scene.spec.view, req.target_view);
        assert_eq!(s.view_shot.items[0].scene.spec.object, req.view_object);
        assert_eq!(s.object_shots.len(), 4);
        for item in &s.object_shots.items {
            assert_ne!(item.scene.spec.view, req.target_view);
            assert_eq!(item.scene.spec.object, req.novel_object);
        }
    }
}

#[test]
fn split_protocol_violations_are_rejected() {
    let tokens = ConceptTokens::draw(&mut Rng::new(0)).unwrap();
    let same = SplitRequest { novel_object: ObjectId::Square, ..request() };
    assert!(matches!(make_splits(&same, tokens, 0), Err(Error::Protocol(_))));
    let leaky = SplitRequest {
        n_object_shots: 2,
        object_shot_views: Some(vec![ViewId::new(Elevation::Low, 3).unwrap(), ViewId::new(Elevation::Top, 0).unwrap()]),
        ..request()
    };
    assert!(matches!(make_splits(&leaky, tokens, 0), Err(Error::Protocol(_))));
    let none = SplitRequest { n_object_shots: 0, ..request() };
    assert!(matches!(make_splits(&none, tokens, 0), Err(Error::Parameter(_))));
}
