//! Raycast ground truth: per-pixel depth and headlight-shaded grayscale
//! images rendered from the scene camera.

use crate::acoustics::SimError;
use crate::geom::Vec3;
use crate::scene::RoomScene;
use crate::signal::{normalize_depth, DepthMap, GrayImage};
use ndarray::Array2;

/// Image sizes the generators support.
pub const RESOLUTIONS: [usize; 4] = [16, 32, 64, 128];

/// Horizontal field of view in degrees (square images share it vertically).
pub const FOV_DEG: f64 = 90.0;

struct Hit {
    distance: f64,
    /// Surface normal oriented toward the camera.
    normal: Vec3,
}

/// Nearest surface along a ray from inside the room: the room shell or an
/// obstacle box.
fn cast_ray(scene: &RoomScene, origin: Vec3, dir: Vec3) -> Hit {
    let room = scene.room_aabb();
    let mut best_t = room.ray_exit(origin, dir);
    let mut best_box = room;
    let mut inward = true;
    for ob in &scene.obstacles {
        let bb = ob.aabb();
        if let Some(enter) = bb.ray_enter(origin, dir, 1e-9) {
            if enter < best_t {
                best_t = enter;
                best_box = bb;
                inward = false;
            }
        }
    }
    let p = origin + dir * best_t;
    // identify the face by the closest box plane
    let mut normal = Vec3::ZERO;
    let mut best_gap = f64::INFINITY;
    for axis in 0..3 {
        for (plane, sign) in [(best_box.min.axis(axis), -1.0), (best_box.max.axis(axis), 1.0)] {
            let gap = (p.axis(axis) - plane).abs();
            if gap < best_gap {
                best_gap = gap;
                let mut n = Vec3::ZERO;
                n.set_axis(axis, sign);
                normal = n;
            }
        }
    }
    if inward {
        // room walls face inward
        normal = -normal;
    }
    if normal.dot(dir) > 0.0 {
        normal = -normal;
    }
    Hit {
        distance: best_t,
        normal,
    }
}

fn camera_rays(scene: &RoomScene, resolution: usize) -> impl Iterator<Item = (usize, usize, Vec3)> + '_ {
    let cam = scene.camera_pose;
    let forward = cam.forward.normalized();
    let right = cam.right();
    let up = cam.true_up();
    let tan_half = (FOV_DEG.to_radians() / 2.0).tan();
    (0..resolution).flat_map(move |row| {
        (0..resolution).map(move |col| {
            let x = (2.0 * (col as f64 + 0.5) / resolution as f64 - 1.0) * tan_half;
            let y = (2.0 * (row as f64 + 0.5) / resolution as f64 - 1.0) * tan_half;
            let dir = (forward + right * x - up * y).normalized();
            (row, col, dir)
        })
    })
}

fn check_camera(scene: &RoomScene, resolution: usize) -> Result<(), SimError> {
    if !RESOLUTIONS.contains(&resolution) {
        return Err(SimError::BadResolution(resolution));
    }
    scene.validate()?;
    for (i, ob) in scene.obstacles.iter().enumerate() {
        if ob.aabb().contains(scene.camera_pose.position) {
            return Err(SimError::CameraInsideObstacle(i));
        }
    }
    Ok(())
}

/// Pinhole raycast depth (90° FOV): per-pixel nearest-hit distance clipped
/// to 12 m and normalized to [0, 1].
pub fn render_depth_map(scene: &RoomScene, resolution: usize) -> Result<DepthMap, SimError> {
    check_camera(scene, resolution)?;
    let mut raw = Array2::zeros((resolution, resolution));
    let valid = Array2::from_elem((resolution, resolution), true);
    for (row, col, dir) in camera_rays(scene, resolution) {
        raw[[row, col]] = cast_ray(scene, scene.camera_pose.position, dir).distance;
    }
    Ok(normalize_depth(&raw, &valid).expect("raycast distances are non-negative"))
}

/// Same raycast as [`render_depth_map`] with Lambert shading from a fixed
/// headlight aimed along the camera forward axis.
pub fn render_grayscale(scene: &RoomScene, resolution: usize) -> Result<GrayImage, SimError> {
    check_camera(scene, resolution)?;
    let ambient = 0.15;
    let forward = scene.camera_pose.forward.normalized();
    let mut values = Array2::zeros((resolution, resolution));
    for (row, col, dir) in camera_rays(scene, resolution) {
        let hit = cast_ray(scene, scene.camera_pose.position, dir);
        let lambert = (-hit.normal.dot(forward)).max(0.0);
        values[[row, col]] = ambient + (1.0 - ambient) * lambert;
    }
    Ok(GrayImage {
        values,
        resolution,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{CameraPose, Obstacle};
    use crate::MIC_BASELINE;

    fn room_with_camera(size: Vec3, pos: Vec3, forward: Vec3) -> RoomScene {
        RoomScene {
            room_size: size,
            obstacles: vec![],
            wall_absorption: 0.3,
            emitter_pose: pos,
            receiver_baseline: MIC_BASELINE,
            camera_pose: CameraPose {
                position: pos,
                forward,
                up: Vec3::new(0.0, 0.0, 1.0),
            },
            rng_seed: 0,
        }
    }

    // camera 6 m from the facing wall: center pixels read 6/12 = 0.5
    #[test]
    fn center_pixel_reads_half_at_six_meters() {
        let scene = room_with_camera(
            Vec3::new(8.0, 8.0, 3.0),
            Vec3::new(2.0, 4.0, 1.5),
            Vec3::new(1.0, 0.0, 0.0),
        );
        let d = render_depth_map(&scene, 32).unwrap();
        // center 4 pixels straddle the axis; all see almost exactly 6 m
        for (r, c) in [(15, 15), (15, 16), (16, 15), (16, 16)] {
            assert!((d.values[[r, c]] - 0.5).abs() < 0.01, "at {r},{c}");
        }
    }

    // elongated room: the far wall is beyond 12 m and clips to 1.0
    #[test]
    fn far_wall_clips_to_one() {
        let scene = room_with_camera(
            Vec3::new(5.0, 30.0, 3.0),
            Vec3::new(2.5, 1.0, 1.5),
            Vec3::new(0.0, 1.0, 0.0),
        );
        let d = render_depth_map(&scene, 16).unwrap();
        assert_eq!(d.values[[8, 8]], 1.0);
    }

    #[test]
    fn depth_always_in_unit_range() {
        for seed in 0..20 {
            let scene = crate::scene::random_scene(seed);
            let d = render_depth_map(&scene, 16).unwrap();
            assert!(d.values.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn rejects_unsupported_resolution() {
        let scene = room_with_camera(
            Vec3::new(4.0, 4.0, 3.0),
            Vec3::new(2.0, 2.0, 1.5),
            Vec3::new(1.0, 0.0, 0.0),
        );
        assert!(matches!(
            render_depth_map(&scene, 20),
            Err(SimError::BadResolution(20))
        ));
    }

    #[test]
    fn rejects_camera_inside_obstacle() {
        let mut scene = room_with_camera(
            Vec3::new(4.0, 4.0, 3.0),
            Vec3::new(2.0, 2.0, 1.5),
            Vec3::new(1.0, 0.0, 0.0),
        );
        scene.obstacles.push(Obstacle {
            center: Vec3::new(2.0, 2.0, 1.5),
            half_extent: Vec3::new(0.3, 0.3, 0.3),
            absorption: 0.3,
        });
        // scene.validate() itself rejects the rig inside an obstacle
        assert!(render_depth_map(&scene, 16).is_err());
    }

    // frontal wall under a forward headlight: every row is uniform
    #[test]
    fn frontal_wall_shades_uniform_rows() {
        let scene = room_with_camera(
            Vec3::new(8.0, 8.0, 3.0),
            Vec3::new(1.0, 4.0, 1.5),
            Vec3::new(1.0, 0.0, 0.0),
        );
        let g = render_grayscale(&scene, 32).unwrap();
        // pick interior rows whose rays all end on the facing wall
        for row in 12..20 {
            let first = g.values[[row, 12]];
            for col in 12..20 {
                assert!((g.values[[row, col]] - first).abs() < 1e-12);
            }
        }
        assert!(g.values.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn grayscale_is_deterministic() {
        let scene = crate::scene::random_scene(5);
        let a = render_grayscale(&scene, 64).unwrap();
        let b = render_grayscale(&scene, 64).unwrap();
        assert_eq!(a.values, b.values);
    }

    #[test]
    fn obstacle_appears_closer_than_wall() {
        let mut scene = room_with_camera(
            Vec3::new(10.0, 8.0, 3.0),
            Vec3::new(1.0, 4.0, 1.5),
            Vec3::new(1.0, 0.0, 0.0),
        );
        scene.obstacles.push(Obstacle {
            center: Vec3::new(4.0, 4.0, 1.5),
            half_extent: Vec3::new(0.4, 0.6, 0.6),
            absorption: 0.3,
        });
        let d = render_depth_map(&scene, 32).unwrap();
        let center = d.values[[16, 16]];
        let edge = d.values[[16, 1]];
        // box face at x=3.6 is 2.6 m away -> 0.2167; side rays travel farther
        assert!((center - 2.6 / 12.0).abs() < 0.01, "center {center}");
        assert!(edge > center);
    }
}
