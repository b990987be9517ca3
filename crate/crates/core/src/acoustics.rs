//! Image-source echo tracing for rectangular rooms with box obstacles.
//!
//! Wall reflections use the classic mirror-image lattice: every image of the
//! emitter across wall sequences corresponds to a lattice point
//! `(±e + 2 m L)` per axis, with a known reflection count per axis. Obstacle
//! boxes contribute first-order specular reflections off faces visible to
//! both the emitter and the receiver; higher-order obstacle bounces and
//! diffraction are not modeled.

use crate::geom::Vec3;
use crate::scene::{ReceiverId, RoomScene, SceneError};
use thiserror::Error;

/// Reflection orders above this are rejected to bound the image lattice.
pub const MAX_TRACE_ORDER: u32 = 6;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("max_order {0} exceeds limit {MAX_TRACE_ORDER}")]
    OrderTooHigh(u32),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error("no echo paths supplied")]
    NoPaths,
    #[error("path delay of {0} samples exceeds the {1}-sample window")]
    DelayOutOfWindow(usize, usize),
    #[error("sample rate must be 44100 Hz, got {0}")]
    BadSampleRate(f64),
    #[error("camera is inside obstacle {0}")]
    CameraInsideObstacle(usize),
    #[error("unsupported resolution {0} (expected 16, 32, 64, or 128)")]
    BadResolution(usize),
}

/// One propagation path from the emitter to a receiver.
#[derive(Debug, Clone)]
pub struct EchoPath {
    /// Total traveled distance in meters.
    pub path_length: f64,
    /// Number of surface bounces along the path (0 = direct).
    pub reflection_count: u32,
    /// Unit vector at the receiver pointing toward the (image) source.
    pub arrival_direction: Vec3,
    /// `Π(1 − absorption) / path_length`.
    pub amplitude: f64,
    pub receiver_id: ReceiverId,
}

/// Per-axis mirror images of a coordinate with their reflection counts.
fn axis_images(e: f64, room_len: f64, max_order: u32) -> Vec<(f64, u32)> {
    let k = max_order as i64;
    let mut out = Vec::new();
    // even images e + 2mL carry |2m| reflections
    let half = k / 2;
    for m in -half..=half {
        out.push((e + 2.0 * m as f64 * room_len, (2 * m).unsigned_abs() as u32));
    }
    // odd images -e + 2mL carry |2m - 1| reflections
    let lo = (1 - k).div_euclid(2);
    let hi = (1 + k).div_euclid(2);
    for m in lo..=hi {
        let count = (2 * m - 1).unsigned_abs() as u32;
        if count <= max_order {
            out.push((-e + 2.0 * m as f64 * room_len, count));
        }
    }
    out
}

/// Enumerates echo paths up to `max_order` wall reflections, plus
/// first-order obstacle-face reflections when `max_order >= 1`.
///
/// Every (image source, receiver) pair yields one path; path lengths are the
/// exact Euclidean distances to the mirrored emitter positions and
/// amplitudes are `(1 − absorption)^order / length`.
pub fn trace_image_sources(scene: &RoomScene, max_order: u32) -> Result<Vec<EchoPath>, SimError> {
    if max_order > MAX_TRACE_ORDER {
        return Err(SimError::OrderTooHigh(max_order));
    }
    scene.validate()?;

    let e = scene.emitter_pose;
    let xs = axis_images(e.x, scene.room_size.x, max_order);
    let ys = axis_images(e.y, scene.room_size.y, max_order);
    let zs = axis_images(e.z, scene.room_size.z, max_order);

    let receivers = scene.receiver_positions();
    let ids = [ReceiverId::Left, ReceiverId::Right];
    let mut paths = Vec::new();

    let push_image = |image: Vec3, order: u32, keep: f64, paths: &mut Vec<EchoPath>| {
        for (recv, id) in receivers.iter().zip(ids) {
            let length = image.distance(*recv);
            if length < 1e-9 {
                continue;
            }
            paths.push(EchoPath {
                path_length: length,
                reflection_count: order,
                arrival_direction: (image - *recv).normalized(),
                amplitude: keep / length,
                receiver_id: id,
            });
        }
    };

    let keep_wall = 1.0 - scene.wall_absorption;
    for &(ix, rx) in &xs {
        for &(iy, ry) in &ys {
            for &(iz, rz) in &zs {
                let order = rx + ry + rz;
                if order > max_order {
                    continue;
                }
                let image = Vec3::new(ix, iy, iz);
                push_image(image, order, keep_wall.powi(order as i32), &mut paths);
            }
        }
    }

    if max_order >= 1 {
        for ob in &scene.obstacles {
            let keep = 1.0 - ob.absorption;
            let bb = ob.aabb();
            for axis in 0..3 {
                for (plane, outward) in [(bb.min.axis(axis), -1.0), (bb.max.axis(axis), 1.0)] {
                    // emitter must face the outward side of this face
                    if (e.axis(axis) - plane) * outward <= 0.0 {
                        continue;
                    }
                    let mut image = e;
                    image.set_axis(axis, 2.0 * plane - e.axis(axis));
                    for (recv, id) in receivers.iter().zip(ids) {
                        if (recv.axis(axis) - plane) * outward <= 0.0 {
                            continue;
                        }
                        // reflection point: segment image -> receiver crossing the face plane
                        let denom = recv.axis(axis) - image.axis(axis);
                        if denom.abs() < 1e-12 {
                            continue;
                        }
                        let t = (plane - image.axis(axis)) / denom;
                        if !(0.0..=1.0).contains(&t) {
                            continue;
                        }
                        let hit = image + (*recv - image) * t;
                        let inside_face = (0..3).filter(|&a| a != axis).all(|a| {
                            hit.axis(a) >= bb.min.axis(a) && hit.axis(a) <= bb.max.axis(a)
                        });
                        if !inside_face {
                            continue;
                        }
                        let length = image.distance(*recv);
                        if length < 1e-9 {
                            continue;
                        }
                        paths.push(EchoPath {
                            path_length: length,
                            reflection_count: 1,
                            arrival_direction: (image - *recv).normalized(),
                            amplitude: keep / length,
                            receiver_id: id,
                        });
                    }
                }
            }
        }
    }

    Ok(paths)
}
