//! Recovers a camera pose from three 3D-2D correspondences and disambiguates
//! the P3P branches with ellipse overlap.
//!
//! ```text
//! cargo run --example p3p
//! ```

use nalgebra::{UnitQuaternion, Vector3};

use cliploc::geometry::{BBox, Camera, Ellipsoid, PoseWC, ellipsoid_to_dual_quadric, project_dual_quadric, dual_conic_to_ellipse};
use cliploc::pnp::{select_pose, solve_p3p, Correspondence3D2D, SampledLandmark};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cam = Camera::new(525.0, 525.0, 319.5, 239.5, 640, 480)?;
    let truth = PoseWC::from_camera_to_world(
        UnitQuaternion::from_euler_angles(0.1, -0.3, 0.05),
        Vector3::new(-0.5, 0.2, -4.0),
    );
    let objects = [
        Ellipsoid::sphere(Vector3::new(0.4, 0.3, 0.5), 0.3)?,
        Ellipsoid::sphere(Vector3::new(-0.8, -0.2, 0.1), 0.25)?,
        Ellipsoid::sphere(Vector3::new(0.1, -0.6, -0.4), 0.35)?,
    ];

    // Synthetic detections: the box around each projected landmark.
    let quadrics: Vec<_> = objects.iter().map(ellipsoid_to_dual_quadric).collect();
    let boxes = quadrics
        .iter()
        .map(|q| Ok(BBox::around_ellipse(&dual_conic_to_ellipse(&project_dual_quadric(q, &truth, &cam)?)?)))
        .collect::<Result<Vec<_>, cliploc::geometry::GeometryError>>()?;

    // P3P works on points: landmark centers against box centers.
    let corr = [0, 1, 2].map(|i| Correspondence3D2D::new(*objects[i].center(), boxes[i].center()));
    let poses = solve_p3p(&corr, &cam)?;
    println!("{} real P3P solutions", poses.len());
    for (i, p) in poses.iter().enumerate() {
        println!(
            "  #{i}: camera at {:.3?}, {:.4} m and {:.3}° from truth",
            p.camera_center().as_slice(),
            (p.camera_center() - truth.camera_center()).norm(),
            p.rotation_angle_to(&truth).to_degrees()
        );
    }

    let sampled: Vec<_> = quadrics
        .iter()
        .zip(&boxes)
        .map(|(quadric, bbox)| SampledLandmark { quadric, bbox })
        .collect();
    let w = select_pose(&poses, &sampled, &cam);
    println!("selected #{w}");
    Ok(())
}
