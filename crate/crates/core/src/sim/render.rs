use nalgebra::{Vector2, Vector3};

use super::texture::texture;
use super::Room;
use crate::camera::PinholeCamera;
use crate::flow::ImageGray;
use crate::geom::Pose3;

/// Ray-casts the textured inside of `room` from a camera at `t_wc`. Each
/// face carries its own value-noise texture with texels of `texel` meters.
pub fn render_view(
    room: &Room,
    cam: &PinholeCamera,
    t_wc: &Pose3,
    seed: u64,
    texel: f64,
) -> ImageGray {
    let origin = t_wc.trans;
    ImageGray::from_fn(cam.width, cam.height, |x, y| {
        let d = t_wc.rot * cam.unproject(&Vector2::new(x as f64, y as f64));
        match hit(room, &origin, &d) {
            Some((face, u, v)) => {
                texture(seed.wrapping_add(face as u64 * 7919), u / texel, v / texel)
            }
            None => 0.5,
        }
    })
}

/// First face hit from inside the room and the 2D coordinates on that face.
fn hit(room: &Room, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<(usize, f64, f64)> {
    let planes = [
        (0, room.half_x),
        (0, -room.half_x),
        (1, room.half_y),
        (1, -room.half_y),
        (2, room.z_min),
        (2, room.z_max),
    ];
    let mut best: Option<(f64, usize)> = None;
    for (face, &(axis, c)) in planes.iter().enumerate() {
        if d[axis].abs() < 1e-12 {
            continue;
        }
        let t = (c - o[axis]) / d[axis];
        if t > 0.0 && best.is_none_or(|(bt, _)| t < bt) {
            best = Some((t, face));
        }
    }
    let (t, face) = best?;
    let p = o + d * t;
    let (u, v) = match planes[face].0 {
        0 => (p.y, p.z),
        1 => (p.x, p.z),
        _ => (p.x, p.y),
    };
    Some((face, u, v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::StereoRig;
    use crate::geom::Rot3;

    #[test]
    fn render_is_deterministic_and_textured() {
        let rig = StereoRig::forward_looking(64, 48, 40.0, 0.11);
        let pose = Pose3::new(Rot3::identity(), Vector3::new(0.0, 0.0, 1.5)) * rig.cams[0].t_ic;
        let a = render_view(&Room::default(), &rig.cams[0], &pose, 3, 0.05);
        let b = render_view(&Room::default(), &rig.cams[0], &pose, 3, 0.05);
        assert_eq!(a, b);
        let mean = a.data().iter().sum::<f64>() / a.data().len() as f64;
        let var = a.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / a.data().len() as f64;
        assert!(var > 1e-3);
        assert!(a.data().iter().all(|v| (0.1..=0.9).contains(v)));
    }
}
