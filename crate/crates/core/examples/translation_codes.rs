//! Encodes the motion between two poses as crop-relative image offsets and a depth
//! ratio, then decodes it back.

use nalgebra::Vector3;
use objtrack::geometry::{
    axis_angle_to_matrix, decode_translation, encode_translation, matrix_to_axis_angle, project, relative_rotation,
    rot_x, rot_y, BBox, CameraIntrinsics, CropSpec, Pose,
};

fn main() -> objtrack::Result<()> {
    let k = CameraIntrinsics::new(250.0, 250.0, 64.0, 64.0)?;
    let prev = Pose::new(rot_x(0.3), Vector3::new(20.0, -10.0, 800.0));
    let cur = Pose::new(rot_y(0.2) * rot_x(0.3), Vector3::new(35.0, -4.0, 760.0));
    let crop = CropSpec::new(BBox::new(40, 40, 48, 48), 32, 32)?;

    let code = encode_translation(&k, &prev, &cur, &crop)?;
    println!("du = {:.5}, dv = {:.5}, s = {:.5}", code.du, code.dv, code.s);

    let (u, v, z) = project(&k, &prev.translation)?;
    let step = decode_translation(&k, (u, v), z, &code, &crop)?;
    let t = prev.translation + step.delta_t;
    println!("decoded T = {:.6?}, error {:.2e} mm", t, (t - cur.translation).norm());

    let omega = matrix_to_axis_angle(&relative_rotation(&prev.rotation, &cur.rotation)?)?;
    let r = axis_angle_to_matrix(&omega)? * prev.rotation;
    println!("omega = {:.5?}, rotation error {:.2e}", omega, (r - cur.rotation).norm());
    Ok(())
}
