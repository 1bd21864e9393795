use std::collections::{BTreeMap, HashSet};

use hazardforge_core::backends::wire::EditBody;
use hazardforge_core::backends::{first_keyword, parse_completeness, Completeness};
use hazardforge_core::geometry::{
    composite_inside, crop_after_pad, crop_to_mask, distance_mask, intrusion_mask, rasterize_mask, region_for_action,
    GeometryOverrides,
};
use hazardforge_core::planner::plan;
use hazardforge_core::seeds::{item_seed, trial_seed};
use hazardforge_core::{
    parse_answer, ActionDirection, BenchItem, Edge, EditRequest, Frame, ImageDims, MaskRegion, ObjectCategory,
    PadSpec, ScenarioKind, Source,
};
use image::{Luma, Rgb, RgbImage};
use proptest::prelude::*;

fn dims() -> impl Strategy<Value = ImageDims> {
    (3u32..4000, 1u32..3000).prop_map(|(w, h)| ImageDims::new(w, h).unwrap())
}

fn direction() -> impl Strategy<Value = ActionDirection> {
    prop::sample::select(ActionDirection::ALL.to_vec())
}

/// Geometry overrides that resolve for the given width: `0 < l < r < W`.
fn overrides(w: u32) -> impl Strategy<Value = GeometryOverrides> {
    (1..w - 1, 0.001f64..=1.0).prop_flat_map(move |(l, d)| {
        (l + 1..w).prop_map(move |r| GeometryOverrides {
            intrusion_half_width: Some(l),
            pad_width: Some(r),
            distance_band: Some(d),
        })
    })
}

proptest! {
    #[test]
    fn intrusion_keeps_l_columns(d in dims(), side in prop::sample::select(vec![Edge::Left, Edge::Right])) {
        let w = d.width;
        prop_assume!(w >= 4);
        let cfg = GeometryOverrides::default().resolve(d).unwrap();
        let m = intrusion_mask(side, d, &cfg).unwrap();
        let pad = PadSpec::new(side, cfg.pad_width, w).unwrap();
        let keep = crop_after_pad(ImageDims::new(w + cfg.pad_width, d.height).unwrap(), pad).unwrap();
        prop_assert_eq!(keep.width(), w);
        prop_assert_eq!(m.to_original(w).unwrap().width(), cfg.intrusion_half_width);
        prop_assert!(m.x_max <= w + cfg.pad_width);
    }

    #[test]
    fn overridden_geometry_stays_consistent(
        (d, o) in dims().prop_flat_map(|d| (Just(d), overrides(d.width))),
        side in prop::sample::select(vec![Edge::Left, Edge::Right]),
        gt in direction(),
        vp in 0.0f64..1.0,
    ) {
        let cfg = o.resolve(d).unwrap();
        let m = intrusion_mask(side, d, &cfg).unwrap();
        let edge = if side == Edge::Left { cfg.pad_width } else { d.width };
        prop_assert!(m.x_min < edge && edge < m.x_max);
        prop_assert_eq!(m.to_original(d.width).unwrap().width(), cfg.intrusion_half_width);

        let region = region_for_action(gt, d).unwrap();
        let vp_y = ((vp * f64::from(d.height)) as u32).min(d.height - 1);
        let band = distance_mask(&region, vp_y, d, &cfg).unwrap();
        prop_assert!(region.contains(&band));
        prop_assert!(band.y_min <= vp_y && vp_y < band.y_max);
    }

    #[test]
    fn rasterized_mask_matches_crop(w in 3u32..120, h in 1u32..90, a in 0.0f64..1.0, b in 0.0f64..1.0, c in 0.0f64..1.0, e in 0.0f64..1.0) {
        let (x0, x1) = ((a * f64::from(w - 1)) as u32, 1 + (b * f64::from(w - 1)) as u32);
        let (y0, y1) = ((c * f64::from(h - 1)) as u32, 1 + (e * f64::from(h - 1)) as u32);
        prop_assume!(x0 < x1 && y0 < y1);
        let mask = MaskRegion::new(x0, x1, y0, y1, Frame::Original).unwrap();
        let d = ImageDims::new(w, h).unwrap();
        let raster = rasterize_mask(&mask, d).unwrap();
        let lit = raster.pixels().filter(|p| p[0] == 255).count() as u64;
        prop_assert_eq!(lit, mask.area());
        prop_assert!(raster.pixels().all(|p| p[0] == 0 || p[0] == 255));

        // the crop of an image whose red channel is the mask is all 255
        let img = RgbImage::from_fn(w, h, |x, y| {
            let Luma([v]) = *raster.get_pixel(x, y);
            Rgb([v, 0, 0])
        });
        let crop = crop_to_mask(&img, &mask).unwrap();
        prop_assert_eq!(crop.dimensions(), (mask.width(), mask.height()));
        prop_assert!(crop.pixels().all(|p| p[0] == 255));

        // y flip: mask row y_min is the raster row h - 1 - y_min
        prop_assert_eq!(raster.get_pixel(x0, h - 1 - y0)[0], 255);

        let edited = RgbImage::from_pixel(w, h, Rgb([9, 9, 9]));
        let out = composite_inside(&img, &edited, &mask).unwrap();
        for (x, y, p) in out.enumerate_pixels() {
            let inside = raster.get_pixel(x, y)[0] == 255;
            prop_assert_eq!(p, if inside { edited.get_pixel(x, y) } else { img.get_pixel(x, y) });
        }
    }

    #[test]
    fn every_plan_validates(d in dims(), gt in direction(), vp in 0.0f64..1.0) {
        prop_assume!(d.width >= 30);
        let cfg = GeometryOverrides::default().resolve(d).unwrap();
        let item = BenchItem {
            id: "p".into(),
            image: "p.png".into(),
            question: "q".into(),
            gt,
            source: Source::DriveBench,
            scenario: None,
            category: None,
            origin: None,
        };
        let vp_y = ((vp * f64::from(d.height)) as u32).min(d.height - 1);
        for scenario in ScenarioKind::ALL {
            for category in ObjectCategory::ALL {
                match plan(&item, scenario, category, d, &cfg, vp_y) {
                    Ok(p) => prop_assert!(p.validate().is_ok(), "{:?}", p.validate()),
                    Err(e) => prop_assert!(e.is_inapplicable(), "{e}"),
                }
            }
        }
    }

    #[test]
    fn parse_answer_is_total_and_idempotent(raw in ".{0,80}") {
        if let Some(a) = parse_answer(&raw) {
            prop_assert_eq!(parse_answer(a.option_text()), Some(a));
            prop_assert_eq!(parse_answer(&a.letter().to_string()), Some(a));
        }
    }

    #[test]
    fn letter_before_phrase(prefix in "[a-z ]{0,20}", d in direction(), other in direction()) {
        let text = format!("{prefix} {} because I would {}", d.letter(), other.option_text());
        prop_assert_eq!(parse_answer(&text), Some(d));
    }

    #[test]
    fn first_keyword_is_earliest(pad in "[xyz ]{0,10}", order in prop::bool::ANY) {
        let (a, b) = if order { ("complete", "incomplete") } else { ("incomplete", "complete") };
        let text = format!("{pad} {a} or {b}");
        let expected = if order { Completeness::Complete } else { Completeness::Incomplete };
        prop_assert_eq!(parse_completeness(&text), Some(expected));
        prop_assert_eq!(first_keyword(&text.to_uppercase(), &[("complete", 1), ("incomplete", 2)]), Some(if order { 1 } else { 2 }));
    }

    #[test]
    fn wire_body_round_trips(
        image in prop::collection::vec(any::<u8>(), 0..64),
        mask in prop::collection::vec(any::<u8>(), 0..64),
        prompt in ".{1,40}",
        seed in any::<u64>(),
        params in prop::collection::btree_map("[a-z]{1,6}", ".{0,8}", 0..4),
    ) {
        let req = EditRequest { image, mask, prompt, seed, params };
        let body = EditBody::from(&req);
        let json = serde_json::to_string(&body).unwrap();
        let back: EditBody = serde_json::from_str(&json).unwrap();
        prop_assert_eq!(back.into_request().unwrap(), req);
    }

    #[test]
    fn trial_seeds_are_distinct(run in any::<u64>(), id in "[a-z0-9_]{1,30}") {
        let base = item_seed(run, &id);
        let seeds: HashSet<u64> = (0..4).flat_map(|s| (1..=5).map(move |t| trial_seed(base, s, t))).collect();
        prop_assert_eq!(seeds.len(), 20);
        prop_assert_eq!(item_seed(run, &id), base);
    }
}

#[test]
fn params_order_does_not_matter() {
    let mut a = BTreeMap::new();
    a.insert("z".to_string(), "1".to_string());
    a.insert("a".to_string(), "2".to_string());
    let req = EditRequest {
        image: vec![1],
        mask: vec![2],
        prompt: "p".into(),
        seed: 1,
        params: a,
    };
    let json = serde_json::to_string(&EditBody::from(&req)).unwrap();
    assert!(json.find("\"a\"").unwrap() < json.find("\"z\"").unwrap());
}
