use roomforge::config::PipelineConfig;
use roomforge::geometry::{Aabb3, Vec3};
use roomforge::perception::{AffineDepth, MockScript, MockStudio, ScriptedObject};
use roomforge::pipeline::{events_jsonl, initial_scene, run_furniture_pass, run_passes, run_small_object_pass, AssetLibrary};
use roomforge::scene::{serialize_scene, Category, EventKind, ObjectInstance, ObjectSpec, Room, SceneState};
use roomforge::validate::validate_scene;
use roomforge::view_mask::{object_view, ReceptacleKind};

fn cfg(room: Room) -> PipelineConfig {
    let mut c = PipelineConfig { room: Some(room), ..Default::default() };
    c.views.width = 192;
    c.views.height = 192;
    c.perception.samples_per_view = 1;
    c
}

fn obj(name: &str, cat: Category, min: [f64; 3], max: [f64; 3]) -> ScriptedObject {
    ScriptedObject {
        name: name.into(),
        description: format!("a {name}"),
        category: cat,
        bbox: Aabb3::new(Vec3::new(min[0], min[1], min[2]), Vec3::new(max[0], max[1], max[2])),
    }
}

fn furniture(id: &str, name: &str, size: [f64; 3], at: [f64; 2], yaw: f64) -> ObjectInstance {
    let spec = ObjectSpec::new(name, "", Category::FloorObject);
    ObjectInstance::new(id, spec, "proxy", size, Vec3::new(at[0], at[1], 0.0), yaw, [1.0; 3])
}

fn affine() -> MockScript {
    MockScript { depth: Some(AffineDepth { a: 0.5, b: 2.0 }), ..Default::default() }
}

#[test]
fn pre_arranged_objects_stay_put() {
    let dir = tempfile::tempdir().unwrap();
    let mut scene = SceneState::new(Room::rectangle(5.0, 4.0, 2.8), 0);
    scene.instances.push(furniture("wardrobe-000", "wardrobe", [1.2, 0.6, 2.0], [0.7, 0.3], 0.0));
    let path = dir.path().join("start.scene.json");
    std::fs::write(&path, serialize_scene(&scene)).unwrap();

    let mut c = cfg(Room::rectangle(1.0, 1.0, 1.0));
    c.room = None;
    c.scene = Some(path);
    c.stop.max_views = 1;
    let mut script = affine();
    script.inpaint.insert(
        0,
        vec![
            obj("sofa", Category::FloorObject, [0.4, 2.3, 0.0], [2.0, 3.2, 0.8]),
            obj("armchair", Category::FloorObject, [2.0, 1.2, 0.0], [2.8, 1.9, 0.9]),
        ],
    );
    let mut studio = MockStudio::new(script, 0);
    let out = run_passes(&c, &mut studio, &AssetLibrary::default()).unwrap();
    assert_eq!(out.instances[0], scene.instances[0]);
    assert_eq!(out.instances.len(), 3, "{:#?}", out.pass_log);
    assert!(validate_scene(&out).is_empty());
}

#[test]
fn every_attempt_is_logged_when_nothing_is_accepted() {
    let mut c = cfg(Room::rectangle(4.0, 4.0, 2.8));
    c.perception.samples_per_view = 2;
    let mut studio = MockStudio::new(MockScript::default(), 0);
    let scene = run_furniture_pass(initial_scene(&c).unwrap(), &c, &mut studio, &AssetLibrary::default()).unwrap();
    assert_eq!(scene.count_events(EventKind::ViewSelected), 3);
    assert_eq!(scene.count_events(EventKind::InpaintRejected), 3 * 4);
    assert_eq!(scene.count_events(EventKind::InpaintAccepted), 0);
    assert_eq!(studio.calls("inpaint"), 3 * 4 * 2);
    assert!(scene.instances.is_empty());
}

#[test]
fn scene_without_receptacles_is_left_alone() {
    let c = cfg(Room::rectangle(4.0, 4.0, 2.8));
    let mut scene = SceneState::new(Room::rectangle(4.0, 4.0, 2.8), 0);
    scene.instances.push(furniture("sofa-000", "sofa", [2.0, 0.9, 0.8], [2.0, 0.5], 0.0));
    scene.instances.push(furniture("armchair-001", "armchair", [0.8, 0.8, 0.9], [3.0, 2.5], 0.0));
    let mut studio = MockStudio::new(MockScript::default(), 0);
    let out = run_small_object_pass(scene.clone(), &c, &mut studio, &AssetLibrary::default()).unwrap();
    assert_eq!(out, scene);
    assert_eq!(studio.calls("inpaint"), 0);
}

#[test]
fn shelf_close_up_looks_straight_in() {
    for yaw in [0.0, std::f64::consts::FRAC_PI_2, std::f64::consts::PI] {
        let shelf = furniture("bookcase-000", "bookcase", [0.8, 0.35, 1.8], [2.0, 2.0], yaw);
        let cam = object_view(&shelf, ReceptacleKind::Inside, 60.0, 256, 256).unwrap();
        let f = cam.forward();
        assert!(f.z.abs() < 1e-9, "forward {f:?}");
        let (fx, fy) = roomforge::scene::front_direction(yaw);
        assert!((f.x + fx).abs() < 1e-9 && (f.y + fy).abs() < 1e-9, "camera should face the shelf front");
        for p in shelf.world_bbox.corners() {
            let (u, v, _) = cam.project(&p).visible().unwrap();
            assert!(cam.in_frame(u, v));
        }
    }
}

#[test]
fn four_items_land_on_a_table() {
    let c = cfg(Room::rectangle(5.0, 4.0, 2.8));
    let mut scene = SceneState::new(Room::rectangle(5.0, 4.0, 2.8), 0);
    scene.instances.push(furniture("dining_table-000", "dining table", [1.6, 0.9, 0.75], [2.5, 2.0], 0.0));
    let mut script = affine();
    let items = vec![
        obj("vase", Category::SmallObject, [1.9, 1.8, 0.75], [2.05, 1.95, 1.0]),
        obj("plate", Category::SmallObject, [2.3, 1.75, 0.75], [2.55, 2.0, 0.78]),
        obj("jug", Category::SmallObject, [2.75, 1.8, 0.75], [2.9, 1.95, 0.95]),
        obj("candle", Category::SmallObject, [3.0, 2.1, 0.75], [3.06, 2.16, 0.9]),
    ];
    script.inpaint.insert(0, items.clone());
    let mut studio = MockStudio::new(script, 0);
    let out = run_small_object_pass(scene, &c, &mut studio, &AssetLibrary::default()).unwrap();
    let small: Vec<&ObjectInstance> = out.instances.iter().filter(|i| i.spec.category == Category::SmallObject).collect();
    assert_eq!(small.len(), 4, "{:#?}", out.pass_log);
    for truth in &items {
        let inst = small.iter().find(|i| i.spec.name == truth.name).unwrap();
        assert!((inst.world_bbox.min.z - 0.75).abs() <= 1e-3, "{} floats at {}", truth.name, inst.world_bbox.min.z);
        let (a, b) = (inst.world_bbox.center(), truth.bbox.center());
        assert!((a.x - b.x).hypot(a.y - b.y) <= 0.02, "{} lands at {a:?}", truth.name);
    }
    assert!(validate_scene(&out).is_empty());
}

#[test]
fn event_log_is_ordered_and_reproducible() {
    let run = || {
        let mut c = cfg(Room::rectangle(5.0, 4.0, 2.8));
        c.stop.max_views = 1;
        let mut script = affine();
        script.inpaint.insert(
            0,
            vec![
                obj("sofa", Category::FloorObject, [0.4, 2.3, 0.0], [2.0, 3.2, 0.8]),
                obj("coffee table", Category::FloorObject, [2.0, 1.2, 0.0], [3.0, 1.9, 0.5]),
            ],
        );
        script.inpaint.insert(
            1,
            vec![
                obj("vase", Category::SmallObject, [2.2, 1.4, 0.5], [2.35, 1.55, 0.75]),
                obj("book", Category::SmallObject, [2.5, 1.35, 0.5], [2.75, 1.55, 0.56]),
                obj("bowl", Category::SmallObject, [2.55, 1.65, 0.5], [2.8, 1.8, 0.6]),
            ],
        );
        let mut studio = MockStudio::new(script, 0);
        run_passes(&c, &mut studio, &AssetLibrary::default()).unwrap()
    };
    let (a, b) = (run(), run());
    assert!(a.pass_log.windows(2).all(|w| w[0].ordinal < w[1].ordinal));
    assert_eq!(events_jsonl(&a), events_jsonl(&b));
    assert_eq!(serialize_scene(&a), serialize_scene(&b));
    assert_eq!(a.instances.len(), 5, "{:#?}", a.pass_log);
}
