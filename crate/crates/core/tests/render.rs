use articulate::geom::{Pose, Vec3};
use articulate::kinematics::*;
use articulate::render::*;

fn box_object(half: f64) -> ArticulatedObject<f64> {
    ArticulatedObject {
        category: Category::Switch,
        seed: 0,
        base: Pose::identity(),
        links: vec![LinkGeometry {
            name: "base".into(),
            shapes: vec![Shape::Box { half: Vec3::splat(half), pose: Pose::identity() }],
            handle: None,
        }],
        joints: vec![],
    }
}

fn front_camera(distance: f64) -> Camera<f64> {
    Camera::look_at(Vec3::c(0.0, -distance, 0.0), Vec3::zero(), 50.0, 96, 96).unwrap()
}

#[test]
fn empty_scene_renders_no_hits() {
    let d = render_scene(&Scene::<f64>::empty(), &front_camera(1.0));
    assert_eq!(d.hits(), 0);
    assert!(depth_to_pointcloud(&d, &front_camera(1.0)).is_empty());
}

#[test]
fn face_on_box_center_depth() {
    let cam = front_camera(1.0);
    let d = render_depth(&box_object(0.5), &cam);
    assert!((d.at(48, 48) - 0.5).abs() < 1e-3);
    assert_eq!(d, render_depth(&box_object(0.5), &cam));
    assert!(d.data.iter().all(|&z| z == 0.0 || (z > 0.0 && z <= FAR_PLANE)));
}

#[test]
fn center_pixel_backprojects_onto_optical_axis() {
    let cam = front_camera(1.0);
    let mut d = DepthImage::zeros(96, 96);
    d.data[48 * 96 + 48] = 0.7;
    let cloud = depth_to_pointcloud(&d, &cam);
    assert_eq!(cloud.len(), 1);
    let expected = cam.pose.trans + cam.optical_axis() * 0.7;
    assert!((cloud[0] - expected).norm() < 1e-12);
}

#[test]
fn backprojected_points_lie_on_the_surface() {
    let obj = make_object::<f64>(Category::CabinetPrismatic, 2, &[0.4, 0.0]).unwrap();
    let scene = Scene::new(&obj);
    for cam in default_views(obj.centroid(), &CameraConfig::default()).unwrap() {
        let depth = render_scene(&scene, &cam);
        let cloud = depth_to_pointcloud(&depth, &cam);
        assert!(!cloud.is_empty());
        for p in cloud {
            assert!(scene.distance(p).abs() < 2.0 * HIT_TOLERANCE);
        }
    }
}

#[test]
fn default_views_form_a_mirrored_arc() {
    let c = Vec3::c(0.2, -0.1, 0.3);
    let views = default_views::<f64>(c, &CameraConfig::default()).unwrap();
    assert_eq!(views.len(), 5);
    let mirror = |v: Vec3<f64>| Vec3::c(-v.x, v.y, v.z);
    let (a, b) = (&views[0], &views[4]);
    assert!((mirror(a.pose.trans - c) - (b.pose.trans - c)).norm() < 1e-12);
    assert!((mirror(a.optical_axis()) - b.optical_axis()).norm() < 1e-12);
    let mid = &views[2];
    let to_center = (c - mid.pose.trans).normalized();
    assert!((mid.optical_axis() - to_center).norm() < 1e-12);
}

#[test]
fn invalid_grid_is_rejected() {
    let cam = front_camera(1.0);
    let d = DepthImage::zeros(96, 96);
    let mut grid = GridConfig::cube(Vec3::zero(), 1.2, 8, 4.0);
    grid.voxel_size = 0.0;
    assert!(tsdf_single_view(&d, &cam, &grid).is_err());
    assert!(tsdf_fuse::<f64>(&[], &GridConfig::cube(Vec3::zero(), 1.2, 8, 4.0)).is_err());
}

#[test]
fn single_view_of_a_plane_stores_scaled_distance() {
    let obj = box_object(0.3);
    let cam = front_camera(1.2);
    let depth = render_depth(&obj, &cam);
    let vol = tsdf_single_view(&depth, &cam, &GridConfig::cube(Vec3::zero(), 1.2, 48, 4.0)).unwrap();
    let mut checked = 0;
    for i in 18..30 {
        for k in 18..30 {
            for j in 0..48 {
                let c = vol.voxel_center(i, j, k);
                let delta = -0.3 - c.y;
                let idx = vol.index(i, j, k);
                if delta > 0.0 && delta < vol.trunc {
                    assert!((vol.tsdf[idx] * vol.trunc - delta).abs() <= vol.voxel_size, "voxel ({i},{j},{k})");
                    checked += 1;
                }
            }
        }
    }
    assert!(checked > 100);
}

#[test]
fn unobserved_voxels_keep_their_initial_value() {
    let obj = box_object(0.3);
    let cam = front_camera(1.2);
    let depth = render_depth(&obj, &cam);
    let vol = tsdf_single_view(&depth, &cam, &GridConfig::cube(Vec3::zero(), 1.2, 24, 4.0)).unwrap();
    // The box's back side lies far behind the observed front face.
    let idx = vol.index(12, 20, 12);
    assert!(vol.voxel_center(12, 20, 12).y > 0.3);
    assert_eq!((vol.tsdf[idx], vol.weight[idx]), (1.0, 0.0));
    assert!(vol.tsdf.iter().all(|v| (-1.0..=1.0).contains(v)));
}

#[test]
fn fusing_a_view_twice_doubles_weights() {
    let obj = box_object(0.25);
    let cam = front_camera(1.0);
    let depth = render_depth(&obj, &cam);
    let grid = GridConfig::cube(Vec3::zero(), 1.2, 24, 4.0);
    let once = tsdf_single_view(&depth, &cam, &grid).unwrap();
    let twice = tsdf_fuse(&[(&depth, &cam), (&depth, &cam)], &grid).unwrap();
    assert_eq!(once, tsdf_fuse(&[(&depth, &cam)], &grid).unwrap());
    for i in 0..once.tsdf.len() {
        assert!((once.tsdf[i] - twice.tsdf[i]).abs() < 1e-12);
        assert_eq!(twice.weight[i], 2.0 * once.weight[i]);
    }
}

#[test]
fn tsdf_roundtrips_through_container() {
    let obj = box_object(0.25);
    let cam = front_camera(1.0);
    let vol = tsdf_single_view(&render_depth(&obj, &cam), &cam, &GridConfig::cube(Vec3::zero(), 1.2, 12, 4.0)).unwrap();
    let mut c = tensor::container::Container::new();
    let small = articulate::datagen::cast_volume(&vol);
    small.to_container(&mut c, "tsdf").unwrap();
    assert_eq!(TsdfVolume::<f32>::from_container(&c, "tsdf").unwrap(), small);
}
