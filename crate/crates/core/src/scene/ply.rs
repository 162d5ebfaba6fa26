//! Binary little-endian PLY in the layout produced by common Gaussian
//! splatting exporters.
//!
//! On load, colors come from the SH DC band only (`f_rest_*` is skipped),
//! scales are exponentiated, opacities pass through a sigmoid, and rotations
//! (`rot_0` = w) are normalized.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::{Quaternion, Unit, Vector3};

use super::{GaussianPrimitive, Scene};
use crate::error::{Error, Result};

/// Zeroth-order spherical harmonic constant, `1 / (2 sqrt(pi))`.
pub const SH_C0: f64 = 0.28209479177387814;

/// Number of `f_rest_*` coefficients in a degree-3 export (15 per channel).
const REST_COEFFS: usize = 45;

const REQUIRED: [&str; 14] = [
    "x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2", "opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2",
    "rot_3",
];

#[derive(Clone, Copy, Debug, PartialEq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn read(self, r: &mut impl Read) -> std::io::Result<f64> {
        Ok(match self {
            Scalar::I8 => r.read_i8()? as f64,
            Scalar::U8 => r.read_u8()? as f64,
            Scalar::I16 => r.read_i16::<LittleEndian>()? as f64,
            Scalar::U16 => r.read_u16::<LittleEndian>()? as f64,
            Scalar::I32 => r.read_i32::<LittleEndian>()? as f64,
            Scalar::U32 => r.read_u32::<LittleEndian>()? as f64,
            Scalar::F32 => r.read_f32::<LittleEndian>()? as f64,
            Scalar::F64 => r.read_f64::<LittleEndian>()?,
        })
    }
}

#[derive(Debug)]
struct Property {
    name: String,
    kind: Scalar,
    is_list: bool,
}

#[derive(Debug)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

fn read_header(r: &mut impl BufRead) -> Result<Vec<Element>> {
    let mut line = String::new();
    let mut next_line = |r: &mut dyn BufRead| -> Result<String> {
        line.clear();
        let n = r.read_line(&mut line).map_err(|e| Error::Format(format!("reading PLY header: {e}")))?;
        if n == 0 {
            return Err(Error::Format("PLY header ended before end_header".into()));
        }
        Ok(line.trim_end_matches(['\n', '\r']).to_string())
    };

    if next_line(r)? != "ply" {
        return Err(Error::Format("missing 'ply' magic".into()));
    }
    let mut format_seen = false;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        let l = next_line(r)?;
        let tokens: Vec<&str> = l.split_whitespace().collect();
        match tokens.as_slice() {
            ["end_header"] => break,
            ["format", fmt, _version] => {
                if *fmt != "binary_little_endian" {
                    return Err(Error::Format(format!(
                        "unsupported PLY format {fmt:?}; only binary_little_endian is read"
                    )));
                }
                format_seen = true;
            }
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => {
                let count = count.parse().map_err(|_| Error::Format(format!("bad element count {count:?}")))?;
                elements.push(Element { name: name.to_string(), count, properties: Vec::new() });
            }
            ["property", "list", count_ty, item_ty, name] => {
                let el = elements.last_mut().ok_or_else(|| Error::Format("property before any element".into()))?;
                let (Some(_), Some(kind)) = (Scalar::parse(count_ty), Scalar::parse(item_ty)) else {
                    return Err(Error::Format(format!("unknown list types in {l:?}")));
                };
                el.properties.push(Property { name: name.to_string(), kind, is_list: true });
            }
            ["property", ty, name] => {
                let el = elements.last_mut().ok_or_else(|| Error::Format("property before any element".into()))?;
                let kind = Scalar::parse(ty).ok_or_else(|| Error::Format(format!("unknown property type {ty:?}")))?;
                el.properties.push(Property { name: name.to_string(), kind, is_list: false });
            }
            _ => return Err(Error::Format(format!("unrecognized header line {l:?}"))),
        }
    }
    if !format_seen {
        return Err(Error::Format("PLY header has no format line".into()));
    }
    Ok(elements)
}

/// Reads a splat PLY stream. The background of the returned scene is black.
pub fn read_ply(reader: impl Read) -> Result<Scene> {
    let mut r = BufReader::new(reader);
    let elements = read_header(&mut r)?;
    let vertex_pos = elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| Error::Format("PLY has no 'vertex' element".into()))?;

    // Elements stored before the vertices must be skipped byte-wise.
    for el in &elements[..vertex_pos] {
        if el.properties.iter().any(|p| p.is_list) {
            return Err(Error::Format(format!("cannot skip list-valued element {:?} preceding vertices", el.name)));
        }
        let stride: usize = el.properties.iter().map(|p| p.kind.size()).sum();
        let mut skip = (&mut r).take((stride * el.count) as u64);
        let copied = std::io::copy(&mut skip, &mut std::io::sink())
            .map_err(|e| Error::Format(format!("skipping element {:?}: {e}", el.name)))?;
        if copied as usize != stride * el.count {
            return Err(Error::Format(format!("truncated element {:?}", el.name)));
        }
    }

    let vertex = &elements[vertex_pos];
    if let Some(p) = vertex.properties.iter().find(|p| p.is_list) {
        return Err(Error::Format(format!("vertex list property {:?} is not supported", p.name)));
    }
    let mut slots = [usize::MAX; REQUIRED.len()];
    for (slot, name) in slots.iter_mut().zip(REQUIRED) {
        *slot = vertex
            .properties
            .iter()
            .position(|p| p.name == name)
            .ok_or_else(|| Error::Format(format!("missing vertex property {name:?}")))?;
    }

    let mut values = vec![0.0f64; vertex.properties.len()];
    let mut primitives = Vec::with_capacity(vertex.count);
    for index in 0..vertex.count {
        for (v, p) in values.iter_mut().zip(&vertex.properties) {
            *v = p
                .kind
                .read(&mut r)
                .map_err(|e| Error::Format(format!("truncated vertex data at element {index}: {e}")))?;
        }
        let get = |i: usize| values[slots[i]];
        for (i, name) in REQUIRED.iter().enumerate() {
            if !get(i).is_finite() {
                return Err(Error::Data { index, message: format!("non-finite {name} = {}", get(i)) });
            }
        }
        let q = Quaternion::new(get(10), get(11), get(12), get(13));
        let norm = q.norm();
        if norm < 1e-12 {
            return Err(Error::Data { index, message: "zero-length rotation".into() });
        }
        let scale = Vector3::new(get(7).exp(), get(8).exp(), get(9).exp());
        if scale.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::Data { index, message: format!("scale overflows after exp: {:?}", scale.as_slice()) });
        }
        let dc = |c: f64| (0.5 + SH_C0 * c).clamp(0.0, 1.0);
        primitives.push(GaussianPrimitive {
            mean: Vector3::new(get(0), get(1), get(2)),
            rotation: Unit::new_unchecked(q / norm),
            scale,
            opacity: 1.0 / (1.0 + (-get(6)).exp()),
            color: [dc(get(3)), dc(get(4)), dc(get(5))],
        });
    }
    Scene::new(primitives, [0.0; 3])
}

pub fn load_ply(path: impl AsRef<Path>) -> Result<Scene> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_ply(file)
}

fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-7, 1.0 - 1e-7);
    (p / (1.0 - p)).ln()
}

/// Writes the standard splat export layout: position, zero normals, DC and
/// (zeroed) rest SH coefficients, logit opacity, log scales, rotation.
pub fn write_ply_to(writer: impl Write, scene: &Scene) -> std::io::Result<()> {
    let mut w = BufWriter::new(writer);
    writeln!(w, "ply")?;
    writeln!(w, "format binary_little_endian 1.0")?;
    writeln!(w, "element vertex {}", scene.primitives.len())?;
    let mut names: Vec<String> =
        ["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"].iter().map(|s| s.to_string()).collect();
    names.extend((0..REST_COEFFS).map(|i| format!("f_rest_{i}")));
    names.extend(
        ["opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"].iter().map(|s| s.to_string()),
    );
    for n in &names {
        writeln!(w, "property float {n}")?;
    }
    writeln!(w, "end_header")?;

    for g in &scene.primitives {
        let q = g.rotation.quaternion();
        let mut put = |v: f64| w.write_f32::<LittleEndian>(v as f32);
        put(g.mean.x)?;
        put(g.mean.y)?;
        put(g.mean.z)?;
        for _ in 0..3 {
            put(0.0)?;
        }
        for c in g.color {
            put((c - 0.5) / SH_C0)?;
        }
        for _ in 0..REST_COEFFS {
            put(0.0)?;
        }
        put(logit(g.opacity))?;
        for s in g.scale.iter() {
            put(s.ln())?;
        }
        for v in [q.w, q.i, q.j, q.k] {
            put(v)?;
        }
    }
    w.flush()
}

pub fn write_ply(path: impl AsRef<Path>, scene: &Scene) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_ply_to(file, scene).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Builds a binary PLY by hand with the given float properties per vertex.
    fn handmade(props: &[&str], rows: &[Vec<f32>], extra_header: &str) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(b"ply\nformat binary_little_endian 1.0\ncomment handmade\n");
        out.extend_from_slice(extra_header.as_bytes());
        out.extend_from_slice(format!("element vertex {}\n", rows.len()).as_bytes());
        for p in props {
            out.extend_from_slice(format!("property float {p}\n").as_bytes());
        }
        out.extend_from_slice(b"end_header\n");
        for row in rows {
            for v in row {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    #[test]
    fn dc_zero_is_mid_gray_and_zero_logit_is_half() {
        let row = vec![0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0];
        let scene = read_ply(handmade(&REQUIRED, &[row], "").as_slice()).unwrap();
        let g = &scene.primitives[0];
        assert_eq!(g.color, [0.5, 0.5, 0.5]);
        assert_eq!(g.opacity, 0.5);
        assert_eq!(g.scale, Vector3::new(1.0, 1.0, 1.0));
    }

    #[test]
    fn missing_property_is_named() {
        let props: Vec<&str> = REQUIRED.iter().copied().filter(|p| *p != "scale_1").collect();
        let row = vec![0.0; props.len()];
        let err = read_ply(handmade(&props, &[row], "").as_slice()).unwrap_err();
        assert!(matches!(&err, Error::Format(m) if m.contains("scale_1")), "{err}");
    }

    #[test]
    fn non_finite_value_reports_index() {
        let ok = vec![0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0];
        let mut bad = ok.clone();
        bad[1] = f32::NAN;
        let err = read_ply(handmade(&REQUIRED, &[ok, bad], "").as_slice()).unwrap_err();
        assert!(matches!(err, Error::Data { index: 1, .. }), "{err}");
    }

    #[test]
    fn ascii_format_rejected() {
        let text = b"ply\nformat ascii 1.0\nelement vertex 0\nend_header\n";
        assert!(matches!(read_ply(&text[..]), Err(Error::Format(_))));
        assert!(read_ply(&b"plx\n"[..]).is_err());
    }

    #[test]
    fn truncated_body_is_error() {
        let row = vec![0.0; REQUIRED.len()];
        let mut bytes = handmade(&REQUIRED, &[row], "");
        bytes.truncate(bytes.len() - 3);
        assert!(read_ply(bytes.as_slice()).is_err());
    }

    #[test]
    fn skips_leading_scalar_elements_and_mixed_types() {
        let mut out = Vec::new();
        out.extend_from_slice(b"ply\nformat binary_little_endian 1.0\nelement camera 1\nproperty double fx\n");
        out.extend_from_slice(b"element vertex 1\nproperty double x\nproperty uchar tag\n");
        for p in &REQUIRED[1..] {
            out.extend_from_slice(format!("property float {p}\n").as_bytes());
        }
        out.extend_from_slice(b"end_header\n");
        out.extend_from_slice(&500.0f64.to_le_bytes());
        out.extend_from_slice(&0.25f64.to_le_bytes());
        out.push(7);
        let rest: [f32; 13] = [0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0];
        for v in rest {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let scene = read_ply(out.as_slice()).unwrap();
        assert_eq!(scene.primitives[0].mean, Vector3::new(0.25, 0.0, 1.0));
    }
}
