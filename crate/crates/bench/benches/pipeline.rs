use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, Criterion};
use hazardforge_core::backends::stub::{StubEditor, StubJudge};
use hazardforge_core::fixtures::{converging_lines, SceneStyle};
use hazardforge_core::geometry::{distance_mask, intrusion_mask, rasterize_mask, region_for_action, GeometryOverrides};
use hazardforge_core::orchestrator::{run_plan, GenerateConfig};
use hazardforge_core::planner::plan;
use hazardforge_core::vp_detect::detect_vp;
use hazardforge_core::{
    ActionDirection, Backends, BenchItem, Edge, ImageDims, Judge, ObjectCategory, ScenarioKind, Source, VpParams,
};

fn geometry(c: &mut Criterion) {
    let dims = ImageDims::new(1600, 900).unwrap();
    let cfg = GeometryOverrides::default().resolve(dims).unwrap();
    c.bench_function("geometry/masks", |b| {
        b.iter(|| {
            for gt in ActionDirection::ALL {
                let region = region_for_action(gt, dims).unwrap();
                black_box(distance_mask(&region, 400, dims, &cfg).unwrap());
            }
            black_box(intrusion_mask(Edge::Left, dims, &cfg).unwrap());
            black_box(intrusion_mask(Edge::Right, dims, &cfg).unwrap());
        })
    });
    let region = region_for_action(ActionDirection::Center, dims).unwrap();
    c.bench_function("geometry/rasterize_1600x900", |b| {
        b.iter(|| black_box(rasterize_mask(&region, dims).unwrap()))
    });
}

fn vp(c: &mut Criterion) {
    let img = converging_lines(640, 360, (330.0, 150.0), &[20.0, 35.0, 145.0, 160.0], &SceneStyle::default());
    let params = VpParams::default();
    c.bench_function("vp_detect/640x360", |b| b.iter(|| black_box(detect_vp(&img, &params).unwrap())));
}

fn stub_plan(c: &mut Criterion) {
    let img = converging_lines(320, 192, (160.0, 80.0), &[25.0, 155.0], &SceneStyle::default());
    let dims = ImageDims::of(&img).unwrap();
    let geometry = GeometryOverrides::default().resolve(dims).unwrap();
    let item = BenchItem {
        id: "bench".into(),
        image: "bench.png".into(),
        question: "What is the safest action for the ego vehicle?".into(),
        gt: ActionDirection::Left,
        source: Source::DriveBench,
        scenario: None,
        category: None,
        origin: None,
    };
    let backends = Backends {
        editor: Arc::new(StubEditor::default()),
        judge: Judge::new(Arc::new(StubJudge::default())),
    };
    let cfg = GenerateConfig::default();
    for scenario in [ScenarioKind::Static, ScenarioKind::Intrusion] {
        let p = plan(&item, scenario, ObjectCategory::Deer, dims, &geometry, 80).unwrap();
        c.bench_function(&format!("stub_plan/{}", scenario.name()), |b| {
            b.iter(|| black_box(run_plan(&img, &p, &backends, &cfg, 7, None)))
        });
    }
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = geometry, vp, stub_plan
}
criterion_main!(benches);
