// The in-frame region of the pitch as the camera follows the ball.
//
// cargo run --release --example camera_view

use graph_imputer::camera::{frustum_footprint, view_polygon, CameraConfig};
use graph_imputer::tracking::PitchSpec;

pub fn run_example() -> graph_imputer::Result<()> {
    let pitch = PitchSpec::default();
    let cam = CameraConfig::broadcast_preset(&pitch);
    println!(
        "camera at ({:.1}, {:.1}, {:.1}) m, field of view {:.1}° x {:.1}°",
        cam.position[0],
        cam.position[1],
        cam.position[2],
        cam.h_fov.to_degrees(),
        cam.v_fov.to_degrees()
    );
    for ball in [[52.5, 34.0], [10.0, 10.0], [95.0, 60.0], [52.5, 2.0]] {
        let quad = frustum_footprint(&cam, ball)?;
        let poly = view_polygon(&cam, ball, &pitch)?;
        let share = 100.0 * poly.area() / pitch.area();
        println!("ball at ({:.1}, {:.1}): {:.0}% of the pitch in view", ball[0], ball[1], share);
        let near = quad[0];
        println!("  near-left frustum corner on the ground ({:.2}, {:.2})", near[0], near[1]);
        for v in poly.vertices() {
            println!("  vertex ({:8.3}, {:8.3})", v[0], v[1]);
        }
        assert!(poly.contains(ball));
    }
    Ok(())
}

fn main() {
    if let Err(e) = run_example() {
        eprintln!("error: {e}");
        std::process::exit(2);
    }
}
