//! Geometry of the d-dimensional search space: axis-aligned boxes,
//! splitting hyperplanes, and plane equations (PEs).
//!
//! A PE is the ordered list of (hyperplane, side) labels collected on the
//! path from the partition-tree root down to a leaf. Boxes are half-open
//! (`lo <= x < hi` per axis) so that a split tiles its parent exactly.

use std::fmt;

/// A point in the search space.
pub type Point = Vec<f64>;

/// Which side of an axis-aligned hyperplane a region lies on.
///
/// `Plus` is the closed upper side (`x[dim] >= value`), `Minus` the open
/// lower side (`x[dim] < value`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Plus,
    Minus,
}

impl Side {
    pub fn opposite(self) -> Side {
        match self {
            Side::Plus => Side::Minus,
            Side::Minus => Side::Plus,
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Side::Plus => write!(f, "+"),
            Side::Minus => write!(f, "-"),
        }
    }
}

/// An axis-aligned splitting hyperplane: `x[dim] = value`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyperplane {
    pub dim: usize,
    pub value: f64,
}

/// One label of a plane equation: a hyperplane plus the side of it the
/// region lies on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeLabel {
    pub plane: Hyperplane,
    pub side: Side,
}

impl PeLabel {
    /// Whether `point` satisfies this label's half-space.
    pub fn contains(&self, point: &[f64]) -> bool {
        match self.side {
            Side::Plus => point[self.plane.dim] >= self.plane.value,
            Side::Minus => point[self.plane.dim] < self.plane.value,
        }
    }

    pub fn opposite(&self) -> PeLabel {
        PeLabel {
            plane: self.plane,
            side: self.side.opposite(),
        }
    }
}

impl fmt::Display for PeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}{}", self.plane.dim, self.plane.value, self.side)
    }
}

/// Plane equation: the ordered (hyperplane, side) labels identifying a
/// leaf region. Label `i` is the split made at depth `i` on the path from
/// the root, so the list length equals the leaf's depth.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PlaneEquation {
    labels: Vec<PeLabel>,
}

impl PlaneEquation {
    pub fn root() -> Self {
        PlaneEquation { labels: Vec::new() }
    }

    pub fn from_labels(labels: Vec<PeLabel>) -> Self {
        PlaneEquation { labels }
    }

    pub fn labels(&self) -> &[PeLabel] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn push(&mut self, label: PeLabel) {
        self.labels.push(label);
    }

    /// Drop the last label (used when a leaf merges back into its parent).
    pub fn pop(&mut self) -> Option<PeLabel> {
        self.labels.pop()
    }

    /// Length of the longest prefix of this PE whose half-spaces all
    /// contain `point`. Equals `len()` exactly when the point lies in the
    /// region the PE describes.
    pub fn shared_prefix_with_point(&self, point: &[f64]) -> usize {
        self.labels
            .iter()
            .take_while(|label| label.contains(point))
            .count()
    }

    /// Number of leading labels equal in both PEs.
    pub fn match_len(&self, other: &PlaneEquation) -> usize {
        self.labels
            .iter()
            .zip(other.labels.iter())
            .take_while(|(a, b)| a == b)
            .count()
    }

    /// Whether this PE's region intersects the region described by
    /// `required`. In a partition tree two regions intersect exactly when
    /// one label list is a prefix of the other, i.e. the lists agree on
    /// their overlap.
    pub fn compatible_with(&self, required: &[PeLabel]) -> bool {
        self.labels
            .iter()
            .zip(required.iter())
            .all(|(a, b)| a == b)
    }
}

impl fmt::Display for PlaneEquation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, label) in self.labels.iter().enumerate() {
            if i > 0 {
                write!(f, ";")?;
            }
            write!(f, "{label}")?;
        }
        Ok(())
    }
}

/// An axis-aligned box, half-open on every axis: `lo[d] <= x[d] < hi[d]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AaBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl AaBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        assert_eq!(lo.len(), hi.len());
        assert!(lo.iter().zip(&hi).all(|(a, b)| a < b), "degenerate box");
        AaBox { lo, hi }
    }

    /// Unit cube `[0,1)^dims`.
    pub fn unit(dims: usize) -> Self {
        AaBox::new(vec![0.0; dims], vec![1.0; dims])
    }

    pub fn dims(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, point: &[f64]) -> bool {
        point
            .iter()
            .enumerate()
            .all(|(d, &x)| self.lo[d] <= x && x < self.hi[d])
    }

    pub fn volume(&self) -> f64 {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(a, b)| b - a)
            .product()
    }

    pub fn center(&self) -> Point {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(a, b)| 0.5 * (a + b))
            .collect()
    }

    /// Split into (minus, plus) halves. The plane must cut the interior.
    pub fn split(&self, plane: Hyperplane) -> (AaBox, AaBox) {
        assert!(
            self.lo[plane.dim] < plane.value && plane.value < self.hi[plane.dim],
            "split plane outside box interior"
        );
        let mut minus = self.clone();
        let mut plus = self.clone();
        minus.hi[plane.dim] = plane.value;
        plus.lo[plane.dim] = plane.value;
        (minus, plus)
    }

    /// Index of the widest axis.
    pub fn widest_dim(&self) -> usize {
        let mut best = 0;
        let mut best_extent = f64::NEG_INFINITY;
        for d in 0..self.dims() {
            let extent = self.hi[d] - self.lo[d];
            if extent > best_extent {
                best_extent = extent;
                best = d;
            }
        }
        best
    }
}
