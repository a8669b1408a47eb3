use std::collections::HashMap;
use std::fmt::Write as _;
use std::str::FromStr;

use super::DataError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PartLabel {
    Wall,
    Floor,
    Roof,
    Stair,
    Furniture,
    Door,
    Window,
    Ground,
    Other,
}

impl PartLabel {
    pub const ALL: [PartLabel; 9] = [
        PartLabel::Wall,
        PartLabel::Floor,
        PartLabel::Roof,
        PartLabel::Stair,
        PartLabel::Furniture,
        PartLabel::Door,
        PartLabel::Window,
        PartLabel::Ground,
        PartLabel::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PartLabel::Wall => "wall",
            PartLabel::Floor => "floor",
            PartLabel::Roof => "roof",
            PartLabel::Stair => "stair",
            PartLabel::Furniture => "furniture",
            PartLabel::Door => "door",
            PartLabel::Window => "window",
            PartLabel::Ground => "ground",
            PartLabel::Other => "other",
        }
    }

    /// Openings and terrain, dropped before voxelization.
    pub fn is_filtered(self) -> bool {
        matches!(self, PartLabel::Door | PartLabel::Window | PartLabel::Ground)
    }

    /// Label from an OBJ object name such as `wall_01` or `Door.003`.
    pub fn from_object_name(name: &str) -> PartLabel {
        let stem: String = name.chars().take_while(|c| c.is_ascii_alphabetic()).collect();
        stem.to_ascii_lowercase().parse().unwrap_or(PartLabel::Other)
    }
}

impl FromStr for PartLabel {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        PartLabel::ALL.into_iter().find(|l| l.as_str() == s).ok_or(())
    }
}

pub type Point = [f64; 3];

#[derive(Clone, Debug, PartialEq)]
pub struct Triangle {
    pub vertices: [Point; 3],
    pub label: PartLabel,
    /// Index into `HouseMesh::objects`.
    pub object: usize,
}

impl Triangle {
    pub fn area(&self) -> f64 {
        let [a, b, c] = self.vertices;
        let n = cross(sub(b, a), sub(c, a));
        0.5 * dot(n, n).sqrt()
    }
}

/// Labeled triangle soup grouped into named objects.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct HouseMesh {
    pub triangles: Vec<Triangle>,
    pub objects: Vec<String>,
}

impl HouseMesh {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn add_object(&mut self, name: impl Into<String>, label: PartLabel, triangles: &[[Point; 3]]) {
        let object = self.objects.len();
        self.objects.push(name.into());
        self.triangles.extend(triangles.iter().map(|&vertices| Triangle { vertices, label, object }));
    }

    /// Closed axis-aligned box as 12 outward-facing triangles.
    pub fn add_box(&mut self, name: impl Into<String>, label: PartLabel, min: Point, max: Point) {
        self.add_object(name, label, &box_triangles(min, max));
    }

    pub fn bounds(&self) -> Option<(Point, Point)> {
        let mut it = self.triangles.iter().flat_map(|t| t.vertices);
        let first = it.next()?;
        Some(it.fold((first, first), |(lo, hi), p| {
            ([lo[0].min(p[0]), lo[1].min(p[1]), lo[2].min(p[2])], [hi[0].max(p[0]), hi[1].max(p[1]), hi[2].max(p[2])])
        }))
    }

    pub fn surface_area(&self) -> f64 {
        self.triangles.iter().map(Triangle::area).sum()
    }

    /// Triangle indices per object.
    pub fn object_groups(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.objects.len()];
        for (i, t) in self.triangles.iter().enumerate() {
            groups[t.object].push(i);
        }
        groups
    }

    /// Watertight test: every undirected edge is shared by exactly two triangles
    /// of the group. Vertices are welded by exact coordinates.
    pub fn is_closed(&self, group: &[usize]) -> bool {
        if group.len() < 4 {
            return false;
        }
        let key = |p: Point| p.map(f64::to_bits);
        let mut edges: HashMap<([u64; 3], [u64; 3]), u32> = HashMap::new();
        for &i in group {
            let v = self.triangles[i].vertices;
            for (a, b) in [(v[0], v[1]), (v[1], v[2]), (v[2], v[0])] {
                let (ka, kb) = (key(a), key(b));
                let e = if ka <= kb { (ka, kb) } else { (kb, ka) };
                *edges.entry(e).or_default() += 1;
            }
        }
        edges.values().all(|&c| c == 2)
    }

    pub fn to_obj(&self) -> String {
        let mut out = String::new();
        let mut next = 1usize;
        for (obj, tris) in self.object_groups().into_iter().enumerate() {
            let _ = writeln!(out, "o {}", self.objects[obj]);
            let mut index: HashMap<[u64; 3], usize> = HashMap::new();
            let mut faces = Vec::with_capacity(tris.len());
            for i in tris {
                let mut f = [0usize; 3];
                for (k, p) in self.triangles[i].vertices.iter().enumerate() {
                    f[k] = *index.entry(p.map(f64::to_bits)).or_insert_with(|| {
                        let _ = writeln!(out, "v {} {} {}", p[0], p[1], p[2]);
                        next += 1;
                        next - 1
                    });
                }
                faces.push(f);
            }
            for f in faces {
                let _ = writeln!(out, "f {} {} {}", f[0], f[1], f[2]);
            }
        }
        out
    }
}

/// Parse ASCII OBJ; `o`/`g` names carry the part label, polygons are fan-triangulated.
pub fn parse_obj(text: &str) -> Result<HouseMesh, DataError> {
    let mut mesh = HouseMesh::default();
    let mut verts: Vec<Point> = Vec::new();
    let mut current: Option<(usize, PartLabel)> = None;
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        let mut parts = line.split_whitespace();
        let Some(tag) = parts.next() else { continue };
        let bad = |msg: &str| DataError::Obj { line: n + 1, message: msg.to_string() };
        match tag {
            "v" => {
                let c: Vec<f64> = parts.take(3).map(str::parse).collect::<Result<_, _>>().map_err(|_| bad("bad vertex"))?;
                if c.len() != 3 || c.iter().any(|x| !x.is_finite()) {
                    return Err(bad("vertex needs three finite coordinates"));
                }
                verts.push([c[0], c[1], c[2]]);
            }
            "o" | "g" => {
                let name = parts.collect::<Vec<_>>().join(" ");
                let name = if name.is_empty() { format!("object_{}", mesh.objects.len()) } else { name };
                current = Some((mesh.objects.len(), PartLabel::from_object_name(&name)));
                mesh.objects.push(name);
            }
            "f" => {
                let idx: Vec<usize> = parts
                    .map(|p| {
                        let first = p.split('/').next().unwrap_or("");
                        let i: i64 = first.parse().map_err(|_| bad("bad face index"))?;
                        let resolved = if i < 0 { verts.len() as i64 + i } else { i - 1 };
                        if resolved < 0 || resolved >= verts.len() as i64 {
                            return Err(bad("face index out of range"));
                        }
                        Ok(resolved as usize)
                    })
                    .collect::<Result<_, _>>()?;
                if idx.len() < 3 {
                    return Err(bad("face needs at least three vertices"));
                }
                let (object, label) = *current.get_or_insert_with(|| {
                    mesh.objects.push("other".into());
                    (mesh.objects.len() - 1, PartLabel::Other)
                });
                for k in 1..idx.len() - 1 {
                    mesh.triangles.push(Triangle { vertices: [verts[idx[0]], verts[idx[k]], verts[idx[k + 1]]], label, object });
                }
            }
            _ => {}
        }
    }
    Ok(mesh)
}

/// Drop doors, windows and ground; everything else is kept with its label.
pub fn filter_parts(mesh: &HouseMesh) -> HouseMesh {
    HouseMesh {
        triangles: mesh.triangles.iter().filter(|t| !t.label.is_filtered()).cloned().collect(),
        objects: mesh.objects.clone(),
    }
}

pub(crate) fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn dot(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn cross(a: Point, b: Point) -> Point {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

pub fn box_triangles(min: Point, max: Point) -> Vec<[Point; 3]> {
    let c = |i: usize| -> Point {
        [if i & 1 == 0 { min[0] } else { max[0] }, if i & 2 == 0 { min[1] } else { max[1] }, if i & 4 == 0 { min[2] } else { max[2] }]
    };
    // Quads listed counter-clockwise seen from outside.
    const QUADS: [[usize; 4]; 6] = [[0, 2, 3, 1], [4, 5, 7, 6], [0, 1, 5, 4], [2, 6, 7, 3], [0, 4, 6, 2], [1, 3, 7, 5]];
    QUADS.iter().flat_map(|q| [[c(q[0]), c(q[1]), c(q[2])], [c(q[0]), c(q[2]), c(q[3])]]).collect()
}
