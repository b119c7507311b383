//! Scene serialization: a JSON manifest next to a binary little-endian PLY
//! payload.
//!
//! The PLY carries one vertex per Gaussian with double-precision properties
//! x, y, z, scale_0..2, rot_0..3 (w, x, y, z), opacity, red, green, blue,
//! offset_l{level}_{x,y,z} per hierarchy level, and an int instance_id that
//! is -1 when no ground-truth label exists. Doubles keep the round trip
//! exact; point-cloud viewers read them natively.

use std::io::Write;
use std::path::{Path, PathBuf};

use byteorder::{ByteOrder, LittleEndian};
use nalgebra::{Quaternion, Unit, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{Aabb, GaussianPrimitive, GtInstance, Scene};

const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    version: u32,
    levels: usize,
    bounds: Aabb,
    #[serde(default)]
    gt_instances: Vec<GtInstance>,
    /// PLY payload path, relative to the manifest.
    payload: String,
}

fn ply_path_for(manifest_path: &Path) -> (String, PathBuf) {
    let stem = manifest_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scene".to_string());
    let name = format!("{stem}.ply");
    let full = manifest_path.with_file_name(&name);
    (name, full)
}

fn property_names(levels: usize) -> Vec<String> {
    let mut names: Vec<String> = [
        "x", "y", "z", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3",
        "opacity", "red", "green", "blue",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for l in 0..levels {
        for axis in ["x", "y", "z"] {
            names.push(format!("offset_l{l}_{axis}"));
        }
    }
    names
}

pub fn save_scene(scene: &Scene, manifest_path: &Path) -> Result<()> {
    let (ply_name, ply_full) = ply_path_for(manifest_path);
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        levels: scene.levels,
        bounds: scene.bounds,
        gt_instances: scene.gt_instances.clone(),
        payload: ply_name,
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(manifest_path, json).map_err(|e| Error::io(manifest_path, e))?;

    let doubles = property_names(scene.levels);
    let mut header = String::from("ply\nformat binary_little_endian 1.0\n");
    header.push_str(&format!("element vertex {}\n", scene.len()));
    for name in &doubles {
        header.push_str(&format!("property double {name}\n"));
    }
    header.push_str("property int instance_id\nend_header\n");

    let stride = doubles.len() * 8 + 4;
    let mut body = vec![0u8; scene.len() * stride];
    for (i, g) in scene.gaussians.iter().enumerate() {
        let mut vals = Vec::with_capacity(doubles.len());
        vals.extend_from_slice(&[g.position.x, g.position.y, g.position.z]);
        vals.extend_from_slice(&[g.scale.x, g.scale.y, g.scale.z]);
        let q = g.rotation.quaternion();
        vals.extend_from_slice(&[q.w, q.i, q.j, q.k]);
        vals.push(g.opacity);
        vals.extend_from_slice(&[g.color.x, g.color.y, g.color.z]);
        for off in &g.offsets {
            vals.extend_from_slice(&[off.x, off.y, off.z]);
        }
        let base = i * stride;
        for (k, v) in vals.iter().enumerate() {
            LittleEndian::write_f64(&mut body[base + k * 8..base + k * 8 + 8], *v);
        }
        let id = g.instance_label.map(|l| l as i32).unwrap_or(-1);
        LittleEndian::write_i32(&mut body[base + stride - 4..base + stride], id);
    }

    let mut file = std::fs::File::create(&ply_full).map_err(|e| Error::io(&ply_full, e))?;
    file.write_all(header.as_bytes())
        .and_then(|_| file.write_all(&body))
        .map_err(|e| Error::io(&ply_full, e))
}

pub fn load_scene(manifest_path: &Path) -> Result<Scene> {
    let text = std::fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Json {
        path: manifest_path.into(),
        source: e,
    })?;
    if manifest.version != MANIFEST_VERSION {
        return Err(Error::Version {
            path: manifest_path.into(),
            found: manifest.version,
            expected: MANIFEST_VERSION,
        });
    }
    let ply_full = manifest_path.with_file_name(&manifest.payload);
    let bytes = std::fs::read(&ply_full).map_err(|e| Error::io(&ply_full, e))?;

    let parse_err = |offset: usize, msg: String| Error::Parse {
        path: ply_full.clone(),
        offset: offset as u64,
        msg,
    };

    let header_end = find_subsequence(&bytes, b"end_header\n")
        .ok_or_else(|| parse_err(bytes.len(), "missing end_header".into()))?
        + b"end_header\n".len();
    let header = std::str::from_utf8(&bytes[..header_end])
        .map_err(|e| parse_err(e.valid_up_to(), "header is not utf-8".into()))?;

    let mut lines = header.lines();
    let mut offset = 0usize;
    let mut expect = |want: &str, lines: &mut std::str::Lines| -> Result<()> {
        let line = lines.next().unwrap_or("");
        if line != want {
            return Err(parse_err(offset, format!("expected '{want}', got '{line}'")));
        }
        offset += line.len() + 1;
        Ok(())
    };
    expect("ply", &mut lines)?;
    expect("format binary_little_endian 1.0", &mut lines)?;

    let vertex_line = lines.next().unwrap_or("");
    let count: usize = vertex_line
        .strip_prefix("element vertex ")
        .and_then(|n| n.parse().ok())
        .ok_or_else(|| parse_err(offset, format!("expected vertex element, got '{vertex_line}'")))?;

    let expected_props = property_names(manifest.levels);
    for name in &expected_props {
        let line = lines.next().unwrap_or("");
        if line != format!("property double {name}") {
            return Err(parse_err(
                header_end,
                format!("expected property '{name}', got '{line}'"),
            ));
        }
    }
    let line = lines.next().unwrap_or("");
    if line != "property int instance_id" {
        return Err(parse_err(header_end, format!("expected instance_id property, got '{line}'")));
    }
    let line = lines.next().unwrap_or("");
    if line != "end_header" {
        return Err(parse_err(header_end, format!("unexpected extra header line '{line}'")));
    }

    let stride = expected_props.len() * 8 + 4;
    let need = header_end + count * stride;
    if bytes.len() < need {
        return Err(parse_err(
            bytes.len(),
            format!("truncated payload: need {need} bytes, have {}", bytes.len()),
        ));
    }

    let mut gaussians = Vec::with_capacity(count);
    for i in 0..count {
        let base = header_end + i * stride;
        let rec = &bytes[base..base + stride];
        let d = |k: usize| LittleEndian::read_f64(&rec[k * 8..k * 8 + 8]);
        let position = Vector3::new(d(0), d(1), d(2));
        let scale = Vector3::new(d(3), d(4), d(5));
        let rotation = Unit::new_unchecked(Quaternion::new(d(6), d(7), d(8), d(9)));
        let opacity = d(10);
        let color = Vector3::new(d(11), d(12), d(13));
        let mut offsets = Vec::with_capacity(manifest.levels);
        for l in 0..manifest.levels {
            let k = 14 + 3 * l;
            offsets.push(Vector3::new(d(k), d(k + 1), d(k + 2)));
        }
        let id = LittleEndian::read_i32(&rec[stride - 4..stride]);
        if !position.iter().all(|v| v.is_finite()) {
            return Err(parse_err(base, format!("non-finite position in vertex {i}")));
        }
        gaussians.push(GaussianPrimitive {
            position,
            scale,
            rotation,
            opacity,
            color,
            offsets,
            instance_label: if id < 0 { None } else { Some(id as u32) },
        });
    }

    let mut scene = Scene::new(gaussians, manifest.levels, manifest.bounds)?;
    scene.gt_instances = manifest.gt_instances;
    Ok(scene)
}

fn find_subsequence(haystack: &[u8], needle: &[u8]) -> Option<usize> {
    haystack.windows(needle.len()).position(|w| w == needle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{generate_synthetic_scene, InstanceSpec, ShapeSpec, SyntheticSceneSpec};

    fn three_instance_scene() -> Scene {
        let spec = SyntheticSceneSpec {
            seed: 21,
            levels: 2,
            instances: (0..3)
                .map(|i| InstanceSpec {
                    shape: ShapeSpec::SphereShell { radius: 1.0 },
                    center: [3.0 * i as f64, 0.0, 0.0],
                    count: 40,
                    scale_factor: 1.0,
                    color: None,
                })
                .collect(),
            background: None,
            opacity: 0.9,
            surface_jitter: 0.0,
        };
        generate_synthetic_scene(&spec).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let mut scene = three_instance_scene();
        // Nonzero offsets must survive too.
        scene.gaussians[0].offsets[1] = Vector3::new(0.1, -0.25, 1e-17);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scene.json");
        scene.save(&path).unwrap();
        let loaded = Scene::load(&path).unwrap();
        assert_eq!(scene, loaded);
    }

    #[test]
    fn empty_scene_round_trips() {
        let scene = Scene {
            gaussians: Vec::new(),
            levels: 1,
            bounds: Aabb { min: [0.0; 3], max: [0.0; 3] },
            gt_instances: Vec::new(),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.json");
        scene.save(&path).unwrap();
        let loaded = Scene::load(&path).unwrap();
        assert_eq!(scene, loaded);
    }

    #[test]
    fn truncated_payload_is_a_parse_error() {
        let scene = three_instance_scene();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scene.json");
        scene.save(&path).unwrap();
        let ply = dir.path().join("scene.ply");
        let bytes = std::fs::read(&ply).unwrap();
        std::fs::write(&ply, &bytes[..bytes.len() - 10]).unwrap();
        match Scene::load(&path) {
            Err(Error::Parse { offset, .. }) => assert!(offset > 0),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn version_mismatch_is_explicit() {
        let scene = three_instance_scene();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scene.json");
        scene.save(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, text.replace("\"version\": 1", "\"version\": 99")).unwrap();
        assert!(matches!(Scene::load(&path), Err(Error::Version { found: 99, .. })));
    }
}
