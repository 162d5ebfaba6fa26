//! PLY interop: round trips and files laid out like trained splat exports.

use std::io::Write;

use nalgebra::{UnitQuaternion, Vector3};
use splat_refine::scene::{generate_synthetic, load_ply, read_ply, write_ply, SH_C0};
use splat_refine::{Error, SyntheticSpec};

#[test]
fn round_trip_preserves_all_fields() {
    let scene = generate_synthetic(&SyntheticSpec {
        count: 1000,
        seed: 3,
        extent: 4.0,
        scale_range: (0.005, 0.5),
        opacity_range: (0.01, 0.99),
        ..SyntheticSpec::default()
    })
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scene.ply");
    write_ply(&path, &scene).unwrap();
    let back = load_ply(&path).unwrap();
    assert_eq!(back.len(), 1000);
    for (i, (a, b)) in scene.primitives.iter().zip(&back.primitives).enumerate() {
        assert!((a.mean - b.mean).amax() < 1e-6, "{i} mean");
        assert!((a.scale - b.scale).amax() < 1e-6, "{i} scale");
        assert!((a.opacity - b.opacity).abs() < 1e-6, "{i} opacity");
        for c in 0..3 {
            assert!((a.color[c] - b.color[c]).abs() < 1e-6, "{i} color");
        }
        let (qa, qb) = (a.rotation.quaternion(), b.rotation.quaternion());
        let sign = if qa.dot(qb) < 0.0 { -1.0 } else { 1.0 };
        assert!((qa.coords - qb.coords * sign).amax() < 1e-6, "{i} rotation");
    }
}

/// Writes a binary PLY in the layout produced by common splat trainers:
/// normals, DC color, 45 higher-order coefficients, raw logit opacity,
/// log scales and an unnormalized quaternion.
fn trained_style_ply(rows: &[[f32; 62]]) -> Vec<u8> {
    let mut names = vec!["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"]
        .into_iter()
        .map(String::from)
        .collect::<Vec<_>>();
    names.extend((0..45).map(|i| format!("f_rest_{i}")));
    names.extend(["opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"].map(String::from));
    assert_eq!(names.len(), 62);
    let mut out = Vec::new();
    write!(out, "ply\nformat binary_little_endian 1.0\nelement vertex {}\n", rows.len()).unwrap();
    for n in &names {
        writeln!(out, "property float {n}").unwrap();
    }
    out.extend_from_slice(b"end_header\n");
    for r in rows {
        for v in r {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

#[test]
fn trained_layout_loads_with_higher_bands_dropped() {
    let mut row = [0.0f32; 62];
    row[..3].copy_from_slice(&[0.5, -1.0, 2.0]);
    row[6..9].copy_from_slice(&[1.0, 0.0, -1.0]);
    for (i, v) in row[9..54].iter_mut().enumerate() {
        *v = 0.1 * i as f32;
    }
    row[54] = 2.0; // logit opacity
    row[55..58].copy_from_slice(&[-3.0, -2.0, -1.0]);
    row[58..62].copy_from_slice(&[2.0, 0.0, 0.0, 2.0]);
    let mut second = row;
    second[0] = -0.25;
    second[54] = -1.0;
    let scene = read_ply(trained_style_ply(&[row, second]).as_slice()).unwrap();
    assert_eq!(scene.len(), 2);
    let g = &scene.primitives[0];
    assert_eq!(g.mean, Vector3::new(0.5, -1.0, 2.0));
    let expect_color = [0.5 + SH_C0, 0.5, 0.5 - SH_C0];
    for c in 0..3 {
        assert!((g.color[c] - expect_color[c]).abs() < 1e-6);
    }
    assert!((g.opacity - 1.0 / (1.0 + (-2.0f64).exp())).abs() < 1e-6);
    assert!((g.scale - Vector3::new((-3.0f64).exp(), (-2.0f64).exp(), (-1.0f64).exp())).amax() < 1e-7);
    let expect_rot = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(1.0, 0.0, 0.0, 1.0));
    assert!(g.rotation.angle_to(&expect_rot) < 1e-6);
    assert!((scene.primitives[1].mean.x + 0.25).abs() < 1e-7);
    assert!((scene.primitives[1].opacity - 1.0 / (1.0 + 1.0f64.exp())).abs() < 1e-6);
}

#[test]
fn unreadable_path_is_named() {
    let err = load_ply("/nonexistent/dir/scene.ply").unwrap_err();
    assert!(matches!(err, Error::Io { .. }));
    assert!(err.to_string().contains("/nonexistent/dir/scene.ply"));
}
