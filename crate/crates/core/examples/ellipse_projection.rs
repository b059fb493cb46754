//! Projects an ellipsoid landmark into a camera and compares the resulting
//! ellipse with a detection box.
//!
//! ```text
//! cargo run --example ellipse_projection
//! ```

use nalgebra::{UnitQuaternion, Vector3};

use cliploc::geometry::{
    bbox_to_ellipse, dual_conic_to_ellipse, ellipse_iou, ellipsoid_to_dual_quadric, project_dual_quadric, BBox,
    Camera, Ellipsoid, PoseWC,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cam = Camera::new(525.0, 525.0, 319.5, 239.5, 640, 480)?;

    // Sphere 5 m in front of the camera: the silhouette is a circle of
    // radius f·r/√(d²−r²).
    let sphere = ellipsoid_to_dual_quadric(&Ellipsoid::sphere(Vector3::new(0.0, 0.0, 5.0), 1.0)?);
    let circle = dual_conic_to_ellipse(&project_dual_quadric(&sphere, &PoseWC::identity(), &cam)?)?;
    println!(
        "sphere: center {:.3?}, radius {:.4} px (analytic {:.4})",
        circle.center().as_slice(),
        circle.semi_axes().x,
        525.0 / 24f64.sqrt()
    );

    // A rotated box-shaped object seen from a displaced camera.
    let table = Ellipsoid::new(
        Vector3::new(0.3, -0.2, 4.0),
        Vector3::new(0.8, 0.4, 0.2),
        UnitQuaternion::from_euler_angles(0.2, -0.1, 0.6).into_inner(),
    )?;
    let pose = PoseWC::from_camera_to_world(
        UnitQuaternion::from_euler_angles(0.0, 0.05, 0.0),
        Vector3::new(0.2, 0.1, 0.0),
    );
    let projected = dual_conic_to_ellipse(&project_dual_quadric(&ellipsoid_to_dual_quadric(&table), &pose, &cam)?)?;
    println!(
        "ellipsoid: center {:.2?}, semi-axes {:.2?}, angle {:.3} rad",
        projected.center().as_slice(),
        projected.semi_axes().as_slice(),
        projected.angle()
    );

    // Detections are boxes; verification compares their inscribed ellipses.
    let tight = BBox::around_ellipse(&projected);
    for (name, shift) in [("tight box", 0.0), ("shifted 20 px", 20.0), ("shifted 80 px", 80.0)] {
        let b = BBox::new(tight.xmin + shift, tight.ymin, tight.xmax + shift, tight.ymax)?;
        println!("{name:>14}: IoU {:.4}", ellipse_iou(&bbox_to_ellipse(&b), &projected));
    }
    Ok(())
}
