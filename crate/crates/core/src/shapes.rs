//! Analytic test surfaces as triangle meshes.

use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cloud::Point3;
use crate::error::{Error, Result};
use crate::mesh::TriangleMesh;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Sphere,
    Torus,
    Cube,
    Cylinder,
    Plane,
}

impl Shape {
    pub const ALL: [Shape; 5] = [Shape::Sphere, Shape::Torus, Shape::Cube, Shape::Cylinder, Shape::Plane];

    pub fn name(&self) -> &'static str {
        match self {
            Shape::Sphere => "sphere",
            Shape::Torus => "torus",
            Shape::Cube => "cube",
            Shape::Cylinder => "cylinder",
            Shape::Plane => "plane",
        }
    }

    pub fn mesh(&self) -> TriangleMesh {
        let (v, t) = match self {
            Shape::Sphere => sphere(1.0, 48, 96),
            Shape::Torus => torus(0.7, 0.3, 96, 48),
            Shape::Cube => cube(1.0),
            Shape::Cylinder => cylinder(0.5, 1.5, 96),
            Shape::Plane => plane(1.0),
        };
        TriangleMesh::new(v, t).expect("generated meshes are valid")
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Shape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Shape::ALL
            .into_iter()
            .find(|sh| sh.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown shape {s:?}")))
    }
}

type Raw = (Vec<Point3>, Vec<[usize; 3]>);

/// Grid of `rows × cols` quads over a `(u, v)` parameterization, `u` wrapping.
fn wrapped_grid(rows: usize, cols: usize, f: impl Fn(f64, f64) -> Point3) -> Raw {
    let mut v = Vec::new();
    for i in 0..=rows {
        for j in 0..cols {
            v.push(f(j as f64 / cols as f64, i as f64 / rows as f64));
        }
    }
    let id = |i: usize, j: usize| i * cols + (j % cols);
    let mut t = Vec::new();
    for i in 0..rows {
        for j in 0..cols {
            t.push([id(i, j), id(i, j + 1), id(i + 1, j + 1)]);
            t.push([id(i, j), id(i + 1, j + 1), id(i + 1, j)]);
        }
    }
    (v, t)
}

fn sphere(r: f64, rings: usize, segments: usize) -> Raw {
    let (v, mut t) = wrapped_grid(rings, segments, |u, v| {
        let theta = v * std::f64::consts::PI;
        let phi = u * TAU;
        Point3::new(r * theta.sin() * phi.cos(), r * theta.sin() * phi.sin(), r * theta.cos())
    });
    // pole rows collapse to a single position; drop the slivers they form
    let pole = |i: usize| (i < segments || i >= rings * segments).then_some(i < segments);
    t.retain(|tri| {
        let poles: Vec<bool> = tri.iter().filter_map(|&i| pole(i)).collect();
        !(poles.len() >= 2 && poles.iter().all(|&p| p == poles[0]))
    });
    (v, t)
}

fn torus(major: f64, minor: f64, segments: usize, rings: usize) -> Raw {
    let (mut v, mut t) = wrapped_grid(rings, segments, |u, w| {
        let phi = u * TAU;
        let theta = w * TAU;
        let rr = major + minor * theta.cos();
        Point3::new(rr * phi.cos(), rr * phi.sin(), minor * theta.sin())
    });
    // close the minor circle: last row duplicates the first
    let last = rings * segments;
    for tri in &mut t {
        for idx in tri.iter_mut() {
            if *idx >= last {
                *idx -= last;
            }
        }
    }
    v.truncate(last);
    (v, t)
}

fn cube(half: f64) -> Raw {
    let mut v = Vec::new();
    for i in 0..8 {
        let s = |bit: usize| if i & bit != 0 { half } else { -half };
        v.push(Point3::new(s(1), s(2), s(4)));
    }
    let faces = [[0, 2, 3, 1], [4, 5, 7, 6], [0, 1, 5, 4], [2, 6, 7, 3], [0, 4, 6, 2], [1, 3, 7, 5]];
    let t = faces
        .iter()
        .flat_map(|f| [[f[0], f[1], f[2]], [f[0], f[2], f[3]]])
        .collect();
    (v, t)
}

fn cylinder(r: f64, height: f64, segments: usize) -> Raw {
    let h = height / 2.0;
    let (mut v, mut t) = wrapped_grid(1, segments, |u, w| {
        let phi = u * TAU;
        Point3::new(r * phi.cos(), r * phi.sin(), -h + w * height)
    });
    for (ring, z) in [(0usize, -h), (1, h)] {
        let center = v.len();
        v.push(Point3::new(0.0, 0.0, z));
        for j in 0..segments {
            let a = ring * segments + j;
            let b = ring * segments + (j + 1) % segments;
            t.push([center, a, b]);
        }
    }
    (v, t)
}

fn plane(half: f64) -> Raw {
    let v = vec![
        Point3::new(-half, -half, 0.0),
        Point3::new(half, -half, 0.0),
        Point3::new(half, half, 0.0),
        Point3::new(-half, half, 0.0),
    ];
    (v, vec![[0, 1, 2], [0, 2, 3]])
}
