//! Triangle meshes: closest-point queries, an AABB hierarchy, and
//! area-weighted surface sampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cloud::{Point3, PointCloud, Vec3};
use crate::error::{Error, Result};

/// Triangles with doubled area at or below this are dropped at construction.
pub const DEGENERATE_AREA: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct TriangleMesh {
    vertices: Vec<Point3>,
    triangles: Vec<[usize; 3]>,
    degenerate_count: usize,
}

impl TriangleMesh {
    /// Validates indices and drops zero-area triangles (counted in
    /// [`degenerate_count`](Self::degenerate_count)).
    pub fn new(vertices: Vec<Point3>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        let nv = vertices.len();
        if let Some(t) = triangles.iter().find(|t| t.iter().any(|&i| i >= nv)) {
            return Err(Error::InvalidConfig(format!(
                "triangle {t:?} references a vertex out of range (have {nv})"
            )));
        }
        let before = triangles.len();
        let triangles: Vec<[usize; 3]> = triangles
            .into_iter()
            .filter(|t| {
                let [a, b, c] = t.map(|i| vertices[i]);
                (b - a).cross(&(c - a)).norm() * 0.5 > DEGENERATE_AREA
            })
            .collect();
        let degenerate_count = before - triangles.len();
        if degenerate_count > 0 {
            log::warn!("dropped {degenerate_count} degenerate triangle(s)");
        }
        Ok(Self {
            vertices,
            triangles,
            degenerate_count,
        })
    }

    pub fn vertices(&self) -> &[Point3] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn degenerate_count(&self) -> usize {
        self.degenerate_count
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn triangle(&self, i: usize) -> [Point3; 3] {
        self.triangles[i].map(|v| self.vertices[v])
    }

    pub fn area(&self) -> f64 {
        (0..self.triangles.len())
            .map(|i| {
                let [a, b, c] = self.triangle(i);
                (b - a).cross(&(c - a)).norm() * 0.5
            })
            .sum()
    }

    /// Uniform-by-area surface sampling with barycentric coordinates.
    pub fn sample_surface(&self, n: usize, seed: u64) -> Result<PointCloud> {
        if self.triangles.is_empty() {
            return Err(Error::EmptyInput("mesh"));
        }
        let mut cdf = Vec::with_capacity(self.triangles.len());
        let mut acc = 0.0;
        for i in 0..self.triangles.len() {
            let [a, b, c] = self.triangle(i);
            acc += (b - a).cross(&(c - a)).norm();
            cdf.push(acc);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let points = (0..n)
            .map(|_| {
                let u: f64 = rng.random::<f64>() * acc;
                let t = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
                let [a, b, c] = self.triangle(t);
                let (mut r1, mut r2): (f64, f64) = (rng.random(), rng.random());
                if r1 + r2 > 1.0 {
                    r1 = 1.0 - r1;
                    r2 = 1.0 - r2;
                }
                a + (b - a) * r1 + (c - a) * r2
            })
            .collect();
        PointCloud::new(points)
    }
}

/// Closest point on triangle `abc` to `p` (Voronoi-region walk over
/// vertex, edge and face regions).
pub fn closest_point_on_triangle(p: &Point3, a: &Point3, b: &Point3, c: &Point3) -> Point3 {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return a + ab * v;
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return a + ac * w;
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return b + (c - b) * w;
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    a + ab * v + ac * w
}

pub fn point_triangle_dist_sq(p: &Point3, tri: &[Point3; 3]) -> f64 {
    let q = closest_point_on_triangle(p, &tri[0], &tri[1], &tri[2]);
    (p - q).norm_squared()
}

#[derive(Debug, Clone, Copy)]
struct Aabb {
    min: Vec3,
    max: Vec3,
}

impl Aabb {
    fn empty() -> Self {
        Self {
            min: Vec3::repeat(f64::INFINITY),
            max: Vec3::repeat(f64::NEG_INFINITY),
        }
    }

    fn grow(&mut self, p: &Point3) {
        self.min = self.min.inf(&p.coords);
        self.max = self.max.sup(&p.coords);
    }

    fn dist_sq(&self, p: &Point3) -> f64 {
        let mut d = 0.0;
        for i in 0..3 {
            let v = p[i];
            let e = if v < self.min[i] {
                self.min[i] - v
            } else if v > self.max[i] {
                v - self.max[i]
            } else {
                0.0
            };
            d += e * e;
        }
        d
    }
}

#[derive(Debug, Clone)]
struct BvhNode {
    bounds: Aabb,
    /// Leaf: `(start, count)` into `order`; inner: children in `left`/`right`.
    start: usize,
    count: usize,
    left: usize,
    right: usize,
}

/// Bounding-volume hierarchy over a mesh's triangles for exact
/// closest-surface queries.
#[derive(Debug, Clone)]
pub struct Bvh<'a> {
    mesh: &'a TriangleMesh,
    order: Vec<usize>,
    nodes: Vec<BvhNode>,
}

const BVH_LEAF: usize = 4;

impl<'a> Bvh<'a> {
    pub fn build(mesh: &'a TriangleMesh) -> Result<Self> {
        if mesh.is_empty() {
            return Err(Error::EmptyInput("mesh"));
        }
        let centroids: Vec<Point3> = (0..mesh.triangles.len())
            .map(|i| {
                let [a, b, c] = mesh.triangle(i);
                Point3::from((a.coords + b.coords + c.coords) / 3.0)
            })
            .collect();
        let mut bvh = Self {
            mesh,
            order: (0..mesh.triangles.len()).collect(),
            nodes: Vec::new(),
        };
        bvh.build_node(0, centroids.len(), &centroids);
        Ok(bvh)
    }

    fn build_node(&mut self, start: usize, end: usize, centroids: &[Point3]) -> usize {
        let mut bounds = Aabb::empty();
        let mut cbounds = Aabb::empty();
        for &t in &self.order[start..end] {
            for p in self.mesh.triangle(t) {
                bounds.grow(&p);
            }
            cbounds.grow(&centroids[t]);
        }
        let id = self.nodes.len();
        self.nodes.push(BvhNode {
            bounds,
            start,
            count: end - start,
            left: 0,
            right: 0,
        });
        let extent = cbounds.max - cbounds.min;
        let axis = extent.imax();
        if end - start <= BVH_LEAF || extent[axis] <= 0.0 {
            return id;
        }
        let mid = start + (end - start) / 2;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            centroids[a][axis].total_cmp(&centroids[b][axis]).then(a.cmp(&b))
        });
        let left = self.build_node(start, mid, centroids);
        let right = self.build_node(mid, end, centroids);
        let node = &mut self.nodes[id];
        node.count = 0;
        node.left = left;
        node.right = right;
        id
    }

    /// Squared distance from `p` to the nearest point on the mesh surface.
    pub fn closest_dist_sq(&self, p: &Point3) -> f64 {
        let mut best = f64::INFINITY;
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n];
            if node.bounds.dist_sq(p) > best {
                continue;
            }
            if node.count > 0 {
                for &t in &self.order[node.start..node.start + node.count] {
                    let d = point_triangle_dist_sq(p, &self.mesh.triangle(t));
                    if d < best {
                        best = d;
                    }
                }
            } else {
                let (l, r) = (node.left, node.right);
                let dl = self.nodes[l].bounds.dist_sq(p);
                let dr = self.nodes[r].bounds.dist_sq(p);
                // push the farther child first so the nearer is explored first
                if dl <= dr {
                    stack.push(r);
                    stack.push(l);
                } else {
                    stack.push(l);
                    stack.push(r);
                }
            }
        }
        best
    }
}
