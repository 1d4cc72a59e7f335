//! Triangular meshes of 2D domains with a three-part boundary.
//!
//! Boundary tags: 1 = clamped, 2 = traction, 3 = contact. Boundary edges are
//! stored with the counterclockwise orientation of the domain boundary
//! (interior on the left), which fixes the sign of tangential quantities.
//!
//! Text format: a header line `N T E` with the node, triangle and edge
//! counts, followed by `id x y` per node, `id n1 n2 n3` per triangle and
//! `id n1 n2 tag` per boundary edge. Ids are 0-based; `#` starts a comment.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

pub const TAG_CLAMPED: u8 = 1;
pub const TAG_TRACTION: u8 = 2;
pub const TAG_CONTACT: u8 = 3;

/// Oriented boundary edge with its part tag.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BoundaryEdge {
    pub nodes: [usize; 2],
    pub tag: u8,
}

/// Triangulation with tagged boundary.
#[derive(Clone, Debug)]
pub struct Mesh {
    nodes: Vec<[f64; 2]>,
    triangles: Vec<[usize; 3]>,
    boundary: Vec<BoundaryEdge>,
}

/// Tag assignment for the four sides of a generated rectangle.
#[derive(Clone, Copy, Debug)]
pub struct BoundaryTags {
    pub left: u8,
    pub right: u8,
    pub bottom: u8,
    pub top: u8,
}

impl Default for BoundaryTags {
    fn default() -> Self {
        Self {
            left: TAG_CLAMPED,
            right: TAG_TRACTION,
            bottom: TAG_CONTACT,
            top: TAG_TRACTION,
        }
    }
}

impl Mesh {
    pub fn new(
        nodes: Vec<[f64; 2]>,
        triangles: Vec<[usize; 3]>,
        boundary: Vec<BoundaryEdge>,
    ) -> Result<Self> {
        let mesh = Self {
            nodes,
            triangles,
            boundary,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn nodes(&self) -> &[[f64; 2]] {
        &self.nodes
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn boundary(&self) -> &[BoundaryEdge] {
        &self.boundary
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Twice the signed area of a triangle; positive for counterclockwise.
    pub fn double_area(&self, tri: &[usize; 3]) -> f64 {
        let [a, b, c] = [self.nodes[tri[0]], self.nodes[tri[1]], self.nodes[tri[2]]];
        (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1])
    }

    pub fn edge_length(&self, edge: &BoundaryEdge) -> f64 {
        let a = self.nodes[edge.nodes[0]];
        let b = self.nodes[edge.nodes[1]];
        ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt()
    }

    /// Nodes incident to any boundary edge with the given tag.
    pub fn tagged_nodes(&self, tag: u8) -> Vec<usize> {
        let mut seen = vec![false; self.node_count()];
        for edge in &self.boundary {
            if edge.tag == tag {
                seen[edge.nodes[0]] = true;
                seen[edge.nodes[1]] = true;
            }
        }
        (0..self.node_count()).filter(|i| seen[*i]).collect()
    }

    /// Structural invariants: positive areas, oriented boundary edges each
    /// owned by exactly one triangle, tags partitioning the full boundary,
    /// and a nonempty clamped part.
    pub fn validate(&self) -> Result<()> {
        for (idx, node) in self.nodes.iter().enumerate() {
            if !node[0].is_finite() || !node[1].is_finite() {
                return Err(Error::Validation(format!("node {idx} has non-finite coordinates")));
            }
        }
        for (idx, tri) in self.triangles.iter().enumerate() {
            for v in tri {
                if *v >= self.node_count() {
                    return Err(Error::Validation(format!("triangle {idx} references node {v}")));
                }
            }
            if self.double_area(tri) <= 0.0 {
                return Err(Error::Validation(format!(
                    "triangle {idx} is degenerate or clockwise (signed area {:.3e})",
                    0.5 * self.double_area(tri)
                )));
            }
        }
        // Count directed edges; a boundary edge appears in exactly one
        // triangle, directed with the interior on its left.
        let mut directed: HashMap<(usize, usize), usize> = HashMap::new();
        for tri in &self.triangles {
            for e in 0..3 {
                let key = (tri[e], tri[(e + 1) % 3]);
                *directed.entry(key).or_insert(0) += 1;
            }
        }
        let mut boundary_edges: HashMap<(usize, usize), u8> = HashMap::new();
        for (idx, edge) in self.boundary.iter().enumerate() {
            if !(1..=3).contains(&edge.tag) {
                return Err(Error::Validation(format!("edge {idx} has tag {} outside 1..=3", edge.tag)));
            }
            let key = (edge.nodes[0], edge.nodes[1]);
            let fwd = directed.get(&key).copied().unwrap_or(0);
            let rev = directed.get(&(key.1, key.0)).copied().unwrap_or(0);
            if fwd != 1 || rev != 0 {
                return Err(Error::Validation(format!(
                    "edge {idx} ({} -> {}) is not a counterclockwise boundary edge of exactly one triangle",
                    key.0, key.1
                )));
            }
            if boundary_edges.insert(key, edge.tag).is_some() {
                return Err(Error::Validation(format!(
                    "edge {} -> {} is tagged more than once",
                    key.0, key.1
                )));
            }
        }
        // Every topological boundary edge must be tagged.
        for (key, count) in &directed {
            if *count == 1 && !directed.contains_key(&(key.1, key.0)) && !boundary_edges.contains_key(key)
            {
                return Err(Error::Validation(format!(
                    "boundary edge {} -> {} carries no tag",
                    key.0, key.1
                )));
            }
        }
        if !self.boundary.iter().any(|e| e.tag == TAG_CLAMPED) {
            return Err(Error::Validation("clamped boundary part is empty".into()));
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut tokens: Vec<(usize, Vec<&str>)> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            tokens.push((lineno + 1, content.split_whitespace().collect()));
        }
        let mut iter = tokens.into_iter();
        let (line, header) = iter
            .next()
            .ok_or(Error::ParseMesh { line: 1, message: "missing header line".into() })?;
        if header.len() != 3 {
            return Err(Error::ParseMesh {
                line,
                message: format!("header needs 3 counts, found {}", header.len()),
            });
        }
        let parse_count = |s: &str, line: usize| -> Result<usize> {
            s.parse().map_err(|_| Error::ParseMesh {
                line,
                message: format!("invalid count '{s}'"),
            })
        };
        let n_nodes = parse_count(header[0], line)?;
        let n_tris = parse_count(header[1], line)?;
        let n_edges = parse_count(header[2], line)?;

        let mut nodes = vec![None; n_nodes];
        let mut triangles = vec![None; n_tris];
        let mut boundary = vec![None; n_edges];
        let expect = |fields: &[&str], count: usize, line: usize| -> Result<()> {
            if fields.len() != count {
                Err(Error::ParseMesh {
                    line,
                    message: format!("expected {count} fields, found {}", fields.len()),
                })
            } else {
                Ok(())
            }
        };

        for section in 0..3 {
            let count = [n_nodes, n_tris, n_edges][section];
            for _ in 0..count {
                let (line, fields) = iter.next().ok_or(Error::ParseMesh {
                    line: 0,
                    message: "unexpected end of file".into(),
                })?;
                let id = parse_count(fields.first().copied().unwrap_or(""), line)?;
                if id >= count {
                    return Err(Error::ParseMesh {
                        line,
                        message: format!("id {id} out of range 0..{count}"),
                    });
                }
                match section {
                    0 => {
                        expect(&fields, 3, line)?;
                        let x: f64 = fields[1].parse().map_err(|_| Error::ParseMesh {
                            line,
                            message: format!("invalid coordinate '{}'", fields[1]),
                        })?;
                        let y: f64 = fields[2].parse().map_err(|_| Error::ParseMesh {
                            line,
                            message: format!("invalid coordinate '{}'", fields[2]),
                        })?;
                        nodes[id] = Some([x, y]);
                    }
                    1 => {
                        expect(&fields, 4, line)?;
                        let mut tri = [0usize; 3];
                        for (slot, f) in tri.iter_mut().zip(&fields[1..4]) {
                            *slot = parse_count(f, line)?;
                        }
                        triangles[id] = Some(tri);
                    }
                    _ => {
                        expect(&fields, 4, line)?;
                        let a = parse_count(fields[1], line)?;
                        let b = parse_count(fields[2], line)?;
                        let tag: u8 = fields[3].parse().map_err(|_| Error::ParseMesh {
                            line,
                            message: format!("invalid tag '{}'", fields[3]),
                        })?;
                        boundary[id] = Some(BoundaryEdge { nodes: [a, b], tag });
                    }
                }
            }
        }
        if let Some((line, _)) = iter.next() {
            return Err(Error::ParseMesh {
                line,
                message: "trailing content after declared sections".into(),
            });
        }
        let unwrap_all = |msg: &str, line: usize| Error::ParseMesh {
            line,
            message: msg.into(),
        };
        let nodes: Vec<[f64; 2]> = nodes
            .into_iter()
            .collect::<Option<_>>()
            .ok_or_else(|| unwrap_all("duplicate or missing node id", 0))?;
        let triangles: Vec<[usize; 3]> = triangles
            .into_iter()
            .collect::<Option<_>>()
            .ok_or_else(|| unwrap_all("duplicate or missing triangle id", 0))?;
        let boundary: Vec<BoundaryEdge> = boundary
            .into_iter()
            .collect::<Option<_>>()
            .ok_or_else(|| unwrap_all("duplicate or missing edge id", 0))?;
        Mesh::new(nodes, triangles, boundary)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| Error::Io(format!("{}: {e}", path.as_ref().display())))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{} {} {}",
            self.nodes.len(),
            self.triangles.len(),
            self.boundary.len()
        );
        for (i, n) in self.nodes.iter().enumerate() {
            let _ = writeln!(out, "{i} {} {}", n[0], n[1]);
        }
        for (i, t) in self.triangles.iter().enumerate() {
            let _ = writeln!(out, "{i} {} {} {}", t[0], t[1], t[2]);
        }
        for (i, e) in self.boundary.iter().enumerate() {
            let _ = writeln!(out, "{i} {} {} {}", e.nodes[0], e.nodes[1], e.tag);
        }
        out
    }
}

/// Structured crossed-triangle mesh of `[0, width] x [0, height]` with
/// `nx x ny` cells, two triangles per cell with alternating diagonals.
pub fn generate_rect_mesh(
    nx: usize,
    ny: usize,
    width: f64,
    height: f64,
    tags: BoundaryTags,
) -> Result<Mesh> {
    if nx == 0 || ny == 0 {
        return Err(Error::InvalidArgument("cell counts must be at least 1".into()));
    }
    if !(width > 0.0 && height > 0.0) {
        return Err(Error::InvalidArgument("rectangle dimensions must be positive".into()));
    }
    let node_id = |i: usize, j: usize| j * (nx + 1) + i;
    let mut nodes = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            nodes.push([width * i as f64 / nx as f64, height * j as f64 / ny as f64]);
        }
    }
    let mut triangles = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let (a, b, c, d) = (
                node_id(i, j),
                node_id(i + 1, j),
                node_id(i + 1, j + 1),
                node_id(i, j + 1),
            );
            if (i + j) % 2 == 0 {
                triangles.push([a, b, c]);
                triangles.push([a, c, d]);
            } else {
                triangles.push([a, b, d]);
                triangles.push([b, c, d]);
            }
        }
    }
    // Counterclockwise boundary walk: bottom, right, top, left.
    let mut boundary = Vec::with_capacity(2 * (nx + ny));
    for i in 0..nx {
        boundary.push(BoundaryEdge {
            nodes: [node_id(i, 0), node_id(i + 1, 0)],
            tag: tags.bottom,
        });
    }
    for j in 0..ny {
        boundary.push(BoundaryEdge {
            nodes: [node_id(nx, j), node_id(nx, j + 1)],
            tag: tags.right,
        });
    }
    for i in (0..nx).rev() {
        boundary.push(BoundaryEdge {
            nodes: [node_id(i + 1, ny), node_id(i, ny)],
            tag: tags.top,
        });
    }
    for j in (0..ny).rev() {
        boundary.push(BoundaryEdge {
            nodes: [node_id(0, j + 1), node_id(0, j)],
            tag: tags.left,
        });
    }
    Mesh::new(nodes, triangles, boundary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_cell_mesh_counts() {
        let mesh = generate_rect_mesh(1, 1, 1.0, 1.0, BoundaryTags::default()).unwrap();
        assert_eq!(mesh.node_count(), 4);
        assert_eq!(mesh.triangles().len(), 2);
        assert_eq!(mesh.boundary().len(), 4);
    }

    #[test]
    fn two_by_one_mesh_counts() {
        let mesh = generate_rect_mesh(2, 1, 2.0, 1.0, BoundaryTags::default()).unwrap();
        assert_eq!(mesh.node_count(), 6);
        assert_eq!(mesh.triangles().len(), 4);
    }

    #[test]
    fn generated_meshes_pass_validation() {
        for (nx, ny) in [(1, 1), (3, 2), (8, 8)] {
            let mesh = generate_rect_mesh(nx, ny, 2.0, 1.0, BoundaryTags::default()).unwrap();
            mesh.validate().unwrap();
            for tri in mesh.triangles() {
                assert!(mesh.double_area(tri) > 0.0);
            }
        }
    }

    #[test]
    fn zero_dimension_is_rejected() {
        assert!(generate_rect_mesh(0, 1, 1.0, 1.0, BoundaryTags::default()).is_err());
        assert!(generate_rect_mesh(1, 1, 0.0, 1.0, BoundaryTags::default()).is_err());
    }

    #[test]
    fn text_round_trip() {
        let mesh = generate_rect_mesh(3, 2, 1.5, 1.0, BoundaryTags::default()).unwrap();
        let text = mesh.to_text();
        let back = Mesh::parse(&text).unwrap();
        assert_eq!(back.node_count(), mesh.node_count());
        assert_eq!(back.triangles(), mesh.triangles());
        assert_eq!(back.boundary(), mesh.boundary());
    }

    #[test]
    fn parse_reports_line_numbers() {
        let text = "2 0 0\n0 0.0 0.0\n1 bad 1.0\n";
        match Mesh::parse(text) {
            Err(Error::ParseMesh { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn comments_are_ignored() {
        let mesh = generate_rect_mesh(1, 1, 1.0, 1.0, BoundaryTags::default()).unwrap();
        let mut text = String::from("# header comment\n");
        text.push_str(&mesh.to_text());
        assert!(Mesh::parse(&text).is_ok());
    }

    #[test]
    fn missing_clamped_part_is_rejected() {
        let tags = BoundaryTags {
            left: TAG_TRACTION,
            right: TAG_TRACTION,
            bottom: TAG_CONTACT,
            top: TAG_TRACTION,
        };
        assert!(matches!(
            generate_rect_mesh(2, 2, 1.0, 1.0, tags),
            Err(Error::Validation(_))
        ));
    }
}
