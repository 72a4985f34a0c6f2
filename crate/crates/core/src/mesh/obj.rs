use super::{is_degenerate, MeshError, TriMesh};
use crate::math::Pt3;

fn parse_index(tok: &str, line: usize, count: usize) -> Result<u32, MeshError> {
    let head = tok.split('/').next().unwrap_or("");
    let raw: i64 = head.parse().map_err(|_| MeshError::Parse {
        line,
        msg: format!("malformed face index `{tok}`"),
    })?;
    // OBJ indices are 1-based; negative values count back from the last vertex.
    let resolved = if raw < 0 { count as i64 + raw } else { raw - 1 };
    if raw == 0 || resolved < 0 || resolved >= count as i64 {
        return Err(MeshError::IndexOutOfRange {
            line,
            index: raw,
            count,
        });
    }
    Ok(resolved as u32)
}

/// Parses Wavefront OBJ text. Only `v` and `f` records are read; polygons are
/// fan-triangulated and normals are recomputed from the geometry.
pub fn load_obj(text: &str) -> Result<TriMesh, MeshError> {
    let mut vertices: Vec<Pt3> = Vec::new();
    let mut triangles: Vec<[u32; 3]> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        let mut toks = content.split_whitespace();
        match toks.next() {
            Some("v") => {
                let coords: Vec<f64> = toks
                    .take(3)
                    .map(|t| {
                        t.parse::<f64>().map_err(|_| MeshError::Parse {
                            line,
                            msg: format!("malformed coordinate `{t}`"),
                        })
                    })
                    .collect::<Result<_, _>>()?;
                if coords.len() != 3 {
                    return Err(MeshError::Parse {
                        line,
                        msg: "vertex needs three coordinates".into(),
                    });
                }
                if coords.iter().any(|c| !c.is_finite()) {
                    return Err(MeshError::NonFinite { line });
                }
                vertices.push(Pt3::new(coords[0], coords[1], coords[2]));
            }
            Some("f") => {
                let idx: Vec<u32> = toks
                    .map(|t| parse_index(t, line, vertices.len()))
                    .collect::<Result<_, _>>()?;
                if idx.len() < 3 {
                    return Err(MeshError::Parse {
                        line,
                        msg: "face needs at least three vertices".into(),
                    });
                }
                for k in 1..idx.len() - 1 {
                    let tri = [idx[0], idx[k], idx[k + 1]];
                    if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                        return Err(MeshError::ZeroAreaFace { line });
                    }
                    let [a, b, c] = tri.map(|i| vertices[i as usize]);
                    if is_degenerate(&a, &b, &c) {
                        return Err(MeshError::ZeroAreaFace { line });
                    }
                    triangles.push(tri);
                }
            }
            _ => {}
        }
    }
    TriMesh::new(vertices, triangles)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::mesh::primitives;

    pub(crate) const UNIT_CUBE_OBJ: &str = "\
# unit cube
v 0 0 0
v 1 0 0
v 1 1 0
v 0 1 0
v 0 0 1
v 1 0 1
v 1 1 1
v 0 1 1
f 1 4 3 2
f 5 6 7 8
f 1 2 6 5
f 2 3 7 6
f 3 4 8 7
f 4 1 5 8
";

    #[test]
    fn unit_cube_fan_triangulates() {
        let mesh = load_obj(UNIT_CUBE_OBJ).unwrap();
        assert_eq!(mesh.vertices().len(), 8);
        assert_eq!(mesh.triangle_count(), 12);
        assert!(mesh.is_watertight());
        // outward normals
        let c = mesh.aabb().center();
        for i in 0..12 {
            let [a, _, _] = mesh.triangle(i);
            assert!(mesh.face_normals()[i].dot(&(a - c)) > 0.0);
        }
    }

    #[test]
    fn out_of_range_index_reports_line() {
        let text = UNIT_CUBE_OBJ.replace("f 5 6 7 8", "f 5 6 7 9");
        match load_obj(&text) {
            Err(MeshError::IndexOutOfRange { line, index, count }) => {
                assert_eq!((line, index, count), (11, 9, 8));
                assert!(load_obj(&text).unwrap_err().to_string().contains("index out of range"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_non_finite_and_zero_area() {
        assert_eq!(load_obj("v 0 0 nan\n"), Err(MeshError::NonFinite { line: 1 }));
        let flat = "v 0 0 0\nv 1 0 0\nv 2 0 0\nf 1 2 3\n";
        assert_eq!(load_obj(flat), Err(MeshError::ZeroAreaFace { line: 4 }));
        assert!(matches!(load_obj("v 0 0 0\nf 1 x 2\n"), Err(MeshError::Parse { line: 2, .. })));
    }

    #[test]
    fn handles_slashes_and_negative_indices() {
        let text = "v 0 0 0\nv 1 0 0\nv 0 1 0\nvn 0 0 1\nf -3/1/1 -2/2/1 -1/3/1\n";
        let mesh = load_obj(text).unwrap();
        assert_eq!(mesh.triangles(), &[[0, 1, 2]]);
    }

    #[test]
    fn torus_triangle_count_and_roundtrip() {
        // 32 x 32 torus grid: 1024 vertices. A closed genus-1 triangulation always has
        // F = 2V, so 1024 vertices give 2048 triangles.
        let torus = primitives::torus(0.02, 0.006, 32, 32);
        let mesh = load_obj(&torus.to_obj()).unwrap();
        assert_eq!(mesh.vertices().len(), 1024);
        assert_eq!(mesh.triangle_count(), 2048);
        assert!(mesh.is_watertight());
        assert_eq!(mesh.triangles(), torus.triangles());
    }
}
