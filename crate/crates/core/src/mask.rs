//! Binary masks and the morphology the pipeline relies on.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{self, Geometry, IntensityUnit, Volume3D};

#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask {
    geometry: Geometry,
    bits: Vec<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Connectivity {
    /// Face neighbours only.
    Six,
    /// Faces, edges and corners.
    TwentySix,
}

impl Connectivity {
    fn offsets(self) -> &'static [[i64; 3]] {
        const SIX: [[i64; 3]; 6] = [
            [-1, 0, 0],
            [1, 0, 0],
            [0, -1, 0],
            [0, 1, 0],
            [0, 0, -1],
            [0, 0, 1],
        ];
        static TWENTY_SIX: std::sync::OnceLock<Vec<[i64; 3]>> = std::sync::OnceLock::new();
        match self {
            Connectivity::Six => &SIX,
            Connectivity::TwentySix => TWENTY_SIX.get_or_init(|| {
                let mut v = Vec::with_capacity(26);
                for dz in -1..=1 {
                    for dy in -1..=1 {
                        for dx in -1..=1 {
                            if (dx, dy, dz) != (0, 0, 0) {
                                v.push([dx, dy, dz]);
                            }
                        }
                    }
                }
                v
            }),
        }
    }
}

/// Axial-plane quadrant, split at `(nx/2, ny/2)`; the high side of each
/// axis is half-open (`x >= nx/2` is high-x).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Quadrant {
    /// low x, low y
    Q1,
    /// high x, low y
    Q2,
    /// high x, high y
    Q3,
    /// low x, high y
    Q4,
}

impl Quadrant {
    pub fn classify(x: f64, y: f64, dims: [usize; 3]) -> Quadrant {
        let high_x = x >= dims[0] as f64 / 2.0;
        let high_y = y >= dims[1] as f64 / 2.0;
        match (high_x, high_y) {
            (false, false) => Quadrant::Q1,
            (true, false) => Quadrant::Q2,
            (true, true) => Quadrant::Q3,
            (false, true) => Quadrant::Q4,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Quadrant::Q1 => "Q1",
            Quadrant::Q2 => "Q2",
            Quadrant::Q3 => "Q3",
            Quadrant::Q4 => "Q4",
        }
    }
}

impl std::fmt::Display for Quadrant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Centroid {
    /// Voxel coordinates (x, y, z).
    pub position: [f64; 3],
    pub quadrant: Quadrant,
}

/// Inclusive voxel bounding box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub min: [usize; 3],
    pub max: [usize; 3],
}

impl BoundingBox {
    pub fn contains(&self, p: [usize; 3]) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] <= self.max[a])
    }

    /// Grows by `margin` voxels on every side, clipped to `dims`.
    pub fn expanded(&self, margin: usize, dims: [usize; 3]) -> BoundingBox {
        let mut out = *self;
        for a in 0..3 {
            out.min[a] = self.min[a].saturating_sub(margin);
            out.max[a] = (self.max[a] + margin).min(dims[a] - 1);
        }
        out
    }

    fn extent(&self) -> [usize; 3] {
        [
            self.max[0] - self.min[0] + 1,
            self.max[1] - self.min[1] + 1,
            self.max[2] - self.min[2] + 1,
        ]
    }
}

impl BinaryMask {
    pub fn new(geometry: Geometry, bits: Vec<bool>) -> Result<Self> {
        let geometry = Geometry::new(geometry.dims, geometry.spacing)?;
        if bits.len() != geometry.len() {
            return Err(Error::Shape(format!(
                "{} mask bits for dims {:?}",
                bits.len(),
                geometry.dims
            )));
        }
        Ok(BinaryMask { geometry, bits })
    }

    pub fn empty(geometry: Geometry) -> Self {
        BinaryMask {
            bits: vec![false; geometry.len()],
            geometry,
        }
    }

    pub fn full(geometry: Geometry) -> Self {
        BinaryMask {
            bits: vec![true; geometry.len()],
            geometry,
        }
    }

    pub fn from_indices(
        geometry: Geometry,
        indices: impl IntoIterator<Item = usize>,
    ) -> Result<Self> {
        let mut m = Self::empty(geometry);
        for i in indices {
            if i >= m.bits.len() {
                return Err(Error::Shape(format!("voxel index {i} out of range")));
            }
            m.bits[i] = true;
        }
        Ok(m)
    }

    /// Foreground wherever the volume value is non-zero.
    pub fn from_volume(vol: &Volume3D) -> Self {
        BinaryMask {
            geometry: *vol.geometry(),
            bits: vol.values().iter().map(|&v| v != 0.0).collect(),
        }
    }

    /// 0/1 volume for serialization.
    pub fn to_volume(&self) -> Volume3D {
        let values = self
            .bits
            .iter()
            .map(|&b| if b { 1.0 } else { 0.0 })
            .collect();
        Volume3D::new(self.geometry, values, IntensityUnit::Arbitrary)
            .expect("mask geometry is valid")
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn dims(&self) -> [usize; 3] {
        self.geometry.dims
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> bool {
        self.bits[self.geometry.index(x, y, z)]
    }

    pub fn set(&mut self, x: usize, y: usize, z: usize, value: bool) {
        let i = self.geometry.index(x, y, z);
        self.bits[i] = value;
    }

    pub fn voxel_count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
    }

    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    pub fn intersection_count(&self, other: &BinaryMask) -> usize {
        self.bits
            .iter()
            .zip(&other.bits)
            .filter(|(&a, &b)| a && b)
            .count()
    }

    pub fn bounding_box(&self) -> Option<BoundingBox> {
        let mut it = self.indices();
        let first = self.geometry.coords(it.next()?);
        let mut bb = BoundingBox {
            min: first,
            max: first,
        };
        for i in it {
            let p = self.geometry.coords(i);
            for a in 0..3 {
                bb.min[a] = bb.min[a].min(p[a]);
                bb.max[a] = bb.max[a].max(p[a]);
            }
        }
        Some(bb)
    }

    /// Mask of all voxels inside `bb`.
    pub fn from_box(geometry: Geometry, bb: BoundingBox) -> Self {
        let mut m = Self::empty(geometry);
        for z in bb.min[2]..=bb.max[2] {
            for y in bb.min[1]..=bb.max[1] {
                let row = geometry.index(0, y, z);
                for x in bb.min[0]..=bb.max[0] {
                    m.bits[row + x] = true;
                }
            }
        }
        m
    }

    /// Nearest-neighbour resampling onto another grid with the same physical origin.
    pub fn resample_to(&self, target: Geometry) -> BinaryMask {
        if self.geometry == target {
            return self.clone();
        }
        let src = self.geometry;
        let map = |axis: usize| -> Vec<usize> {
            (0..target.dims[axis])
                .map(|j| {
                    volume::nearest_index(
                        volume::source_coord(j, target.spacing[axis], src.spacing[axis]),
                        src.dims[axis],
                    )
                })
                .collect()
        };
        let (mx, my, mz) = (map(0), map(1), map(2));
        let mut bits = Vec::with_capacity(target.len());
        for &z in &mz {
            for &y in &my {
                for &x in &mx {
                    bits.push(self.get(x, y, z));
                }
            }
        }
        BinaryMask {
            geometry: target,
            bits,
        }
    }
}

#[inline]
fn neighbour(p: [usize; 3], d: [i64; 3], dims: [usize; 3]) -> Option<[usize; 3]> {
    let mut q = [0usize; 3];
    for a in 0..3 {
        let v = p[a] as i64 + d[a];
        if v < 0 || v >= dims[a] as i64 {
            return None;
        }
        q[a] = v as usize;
    }
    Some(q)
}

/// Labels connected foreground components.
///
/// Components are returned largest first; equal sizes keep the order of their
/// smallest linear voxel index.
pub fn connected_components(mask: &BinaryMask, connectivity: Connectivity) -> Vec<BinaryMask> {
    label_components(mask, connectivity)
        .into_iter()
        .map(|voxels| BinaryMask::from_indices(mask.geometry, voxels).expect("indices in range"))
        .collect()
}

/// Voxel index lists per component, same ordering as [`connected_components`].
pub(crate) fn label_components(mask: &BinaryMask, connectivity: Connectivity) -> Vec<Vec<usize>> {
    let g = mask.geometry;
    let offsets = connectivity.offsets();
    let mut visited = vec![false; g.len()];
    let mut components: Vec<Vec<usize>> = Vec::new();
    let mut queue = VecDeque::new();
    for seed in 0..g.len() {
        if !mask.bits[seed] || visited[seed] {
            continue;
        }
        visited[seed] = true;
        queue.push_back(seed);
        let mut voxels = Vec::new();
        while let Some(i) = queue.pop_front() {
            voxels.push(i);
            let p = g.coords(i);
            for &d in offsets {
                if let Some(q) = neighbour(p, d, g.dims) {
                    let j = g.index(q[0], q[1], q[2]);
                    if mask.bits[j] && !visited[j] {
                        visited[j] = true;
                        queue.push_back(j);
                    }
                }
            }
        }
        voxels.sort_unstable();
        components.push(voxels);
    }
    // stable: seeds were discovered in increasing linear order
    components.sort_by_key(|c| std::cmp::Reverse(c.len()));
    components
}

/// Component (26-connected) containing voxel `seed`, or empty if `seed` is background.
pub(crate) fn component_containing(
    mask: &BinaryMask,
    seed: usize,
    connectivity: Connectivity,
) -> BinaryMask {
    let g = mask.geometry;
    let mut out = BinaryMask::empty(g);
    if !mask.bits[seed] {
        return out;
    }
    let offsets = connectivity.offsets();
    let mut queue = VecDeque::from([seed]);
    out.bits[seed] = true;
    while let Some(i) = queue.pop_front() {
        let p = g.coords(i);
        for &d in offsets {
            if let Some(q) = neighbour(p, d, g.dims) {
                let j = g.index(q[0], q[1], q[2]);
                if mask.bits[j] && !out.bits[j] {
                    out.bits[j] = true;
                    queue.push_back(j);
                }
            }
        }
    }
    out
}

/// Centre of mass of the foreground, with its axial quadrant.
pub fn centroid(mask: &BinaryMask) -> Result<Centroid> {
    let mut sums = [0u128; 3];
    let mut count = 0u128;
    for i in mask.indices() {
        let p = mask.geometry.coords(i);
        for a in 0..3 {
            sums[a] += p[a] as u128;
        }
        count += 1;
    }
    if count == 0 {
        return Err(Error::EmptyRegion("centroid of an empty mask".into()));
    }
    let position = [
        sums[0] as f64 / count as f64,
        sums[1] as f64 / count as f64,
        sums[2] as f64 / count as f64,
    ];
    Ok(Centroid {
        position,
        quadrant: Quadrant::classify(position[0], position[1], mask.dims()),
    })
}

/// Fills background regions that are not 6-connected to the volume border.
pub fn fill_holes(mask: &BinaryMask) -> BinaryMask {
    let Some(bb) = mask.bounding_box() else {
        return mask.clone();
    };
    // Everything outside the foreground bounding box reaches the border, so
    // the flood fill only has to run inside the box grown by one voxel.
    let g = mask.geometry;
    let frame = bb.expanded(1, g.dims);
    let ext = frame.extent();
    let local = |p: [usize; 3]| {
        (p[0] - frame.min[0]) + ext[0] * ((p[1] - frame.min[1]) + ext[1] * (p[2] - frame.min[2]))
    };
    let mut outside = vec![false; ext[0] * ext[1] * ext[2]];
    let mut queue = VecDeque::new();
    for z in frame.min[2]..=frame.max[2] {
        for y in frame.min[1]..=frame.max[1] {
            for x in frame.min[0]..=frame.max[0] {
                let on_frame = x == frame.min[0]
                    || x == frame.max[0]
                    || y == frame.min[1]
                    || y == frame.max[1]
                    || z == frame.min[2]
                    || z == frame.max[2];
                if !on_frame || mask.get(x, y, z) {
                    continue;
                }
                // A frame voxel leaks to the border if it is on the volume
                // border or the frame was not clipped on that side.
                let p = [x, y, z];
                let reaches = (0..3).any(|a| {
                    (p[a] == frame.min[a] && (p[a] == 0 || frame.min[a] < bb.min[a]))
                        || (p[a] == frame.max[a]
                            && (p[a] == g.dims[a] - 1 || frame.max[a] > bb.max[a]))
                });
                if reaches {
                    let l = local(p);
                    if !outside[l] {
                        outside[l] = true;
                        queue.push_back(p);
                    }
                }
            }
        }
    }
    let frame_dims = [frame.max[0] + 1, frame.max[1] + 1, frame.max[2] + 1];
    while let Some(p) = queue.pop_front() {
        for &d in Connectivity::Six.offsets() {
            let Some(q) = neighbour(p, d, frame_dims) else {
                continue;
            };
            if !frame.contains(q) || mask.get(q[0], q[1], q[2]) {
                continue;
            }
            let l = local(q);
            if !outside[l] {
                outside[l] = true;
                queue.push_back(q);
            }
        }
    }
    let mut out = mask.clone();
    for z in frame.min[2]..=frame.max[2] {
        for y in frame.min[1]..=frame.max[1] {
            for x in frame.min[0]..=frame.max[0] {
                if !mask.get(x, y, z) && !outside[local([x, y, z])] {
                    out.set(x, y, z, true);
                }
            }
        }
    }
    out
}

/// Foreground voxels with at least one 6-neighbour that is background or outside the grid.
pub fn boundary_voxels(mask: &BinaryMask) -> Vec<[usize; 3]> {
    let g = mask.geometry;
    let mut out = Vec::new();
    for i in mask.indices() {
        let p = g.coords(i);
        let on_edge = Connectivity::Six
            .offsets()
            .iter()
            .any(|&d| match neighbour(p, d, g.dims) {
                None => true,
                Some(q) => !mask.get(q[0], q[1], q[2]),
            });
        if on_edge {
            out.push(p);
        }
    }
    out
}

/// Chebyshev (cube) dilation by `radius` voxels, computed separably per axis.
pub fn dilate_cube(mask: &BinaryMask, radius: usize) -> BinaryMask {
    if radius == 0 {
        return mask.clone();
    }
    let g = mask.geometry;
    let [nx, ny, nz] = g.dims;
    let mut cur = mask.bits.clone();
    let strides = [1, nx, nx * ny];
    for axis in 0..3 {
        let n = g.dims[axis];
        let stride = strides[axis];
        let mut next = vec![false; cur.len()];
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    let p = [x, y, z];
                    if p[axis] != 0 {
                        continue;
                    }
                    let base = g.index(x, y, z);
                    // sliding count of set voxels in the window [k - r, k + r]
                    let mut count = 0usize;
                    for k in 0..radius.min(n) {
                        count += cur[base + k * stride] as usize;
                    }
                    for k in 0..n {
                        if k + radius < n {
                            count += cur[base + (k + radius) * stride] as usize;
                        }
                        if k > radius {
                            count -= cur[base + (k - radius - 1) * stride] as usize;
                        }
                        next[base + k * stride] = count > 0;
                    }
                }
            }
        }
        cur = next;
    }
    BinaryMask {
        geometry: g,
        bits: cur,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn geom(n: [usize; 3]) -> Geometry {
        Geometry::new(n, [4.0; 3]).unwrap()
    }

    fn mask_of(dims: [usize; 3], pts: &[[usize; 3]]) -> BinaryMask {
        let g = geom(dims);
        BinaryMask::from_indices(g, pts.iter().map(|p| g.index(p[0], p[1], p[2]))).unwrap()
    }

    #[test]
    fn isolated_voxels_are_separate_components() {
        let m = mask_of([5, 5, 5], &[[0, 0, 0], [3, 3, 3]]);
        let cc = connected_components(&m, Connectivity::Six);
        assert_eq!(cc.len(), 2);
        assert!(cc.iter().all(|c| c.voxel_count() == 1));
    }

    #[test]
    fn diagonal_neighbours_depend_on_connectivity() {
        let m = mask_of([3, 3, 3], &[[0, 0, 0], [1, 1, 1]]);
        assert_eq!(connected_components(&m, Connectivity::Six).len(), 2);
        assert_eq!(connected_components(&m, Connectivity::TwentySix).len(), 1);
    }

    #[test]
    fn full_mask_is_one_component() {
        let m = BinaryMask::full(geom([4, 3, 2]));
        let cc = connected_components(&m, Connectivity::Six);
        assert_eq!(cc, vec![m]);
        assert!(
            connected_components(&BinaryMask::empty(geom([2, 2, 2])), Connectivity::Six).is_empty()
        );
    }

    #[test]
    fn components_sorted_with_seed_tie_break() {
        let m = mask_of([7, 1, 1], &[[0, 0, 0], [2, 0, 0], [4, 0, 0], [5, 0, 0]]);
        let cc = connected_components(&m, Connectivity::Six);
        assert_eq!(cc.len(), 3);
        assert_eq!(cc[0].voxel_count(), 2);
        assert!(cc[1].get(0, 0, 0));
        assert!(cc[2].get(2, 0, 0));
    }

    #[test]
    fn centroid_examples() {
        let c = centroid(&mask_of([144, 144, 66], &[[10, 20, 5]])).unwrap();
        assert_eq!(c.position, [10.0, 20.0, 5.0]);
        let c = centroid(&mask_of([4, 4, 4], &[[0, 0, 0], [2, 0, 0]])).unwrap();
        assert_eq!(c.position, [1.0, 0.0, 0.0]);
        let c = centroid(&mask_of([144, 144, 66], &[[100, 100, 30]])).unwrap();
        assert_eq!(c.quadrant, Quadrant::Q3);
        assert!(matches!(
            centroid(&BinaryMask::empty(geom([2, 2, 2]))),
            Err(Error::EmptyRegion(_))
        ));
    }

    #[test]
    fn quadrant_split_is_half_open() {
        let d = [144, 144, 66];
        assert_eq!(Quadrant::classify(72.0, 72.0, d), Quadrant::Q3);
        assert_eq!(Quadrant::classify(71.9, 72.0, d), Quadrant::Q4);
        assert_eq!(Quadrant::classify(72.0, 71.9, d), Quadrant::Q2);
        assert_eq!(Quadrant::classify(0.0, 0.0, d), Quadrant::Q1);
        // odd dims split at the fractional centre
        assert_eq!(Quadrant::classify(2.0, 0.0, [5, 5, 1]), Quadrant::Q1);
        assert_eq!(Quadrant::classify(2.5, 0.0, [5, 5, 1]), Quadrant::Q2);
    }

    /// Independent oracle: flood fill from every border voxel over the full grid.
    fn fill_holes_oracle(m: &BinaryMask) -> BinaryMask {
        let g = *m.geometry();
        let mut reach = vec![false; g.len()];
        let mut stack = Vec::new();
        for i in 0..g.len() {
            let p = g.coords(i);
            let border = (0..3).any(|a| p[a] == 0 || p[a] == g.dims[a] - 1);
            if border && !m.bits()[i] {
                reach[i] = true;
                stack.push(i);
            }
        }
        while let Some(i) = stack.pop() {
            let p = g.coords(i);
            for d in Connectivity::Six.offsets() {
                if let Some(q) = neighbour(p, *d, g.dims) {
                    let j = g.index(q[0], q[1], q[2]);
                    if !m.bits()[j] && !reach[j] {
                        reach[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        BinaryMask::new(g, (0..g.len()).map(|i| m.bits()[i] || !reach[i]).collect()).unwrap()
    }

    #[test]
    fn shell_center_is_filled() {
        let g = geom([5, 5, 5]);
        let mut m = BinaryMask::empty(g);
        for z in 1..4 {
            for y in 1..4 {
                for x in 1..4 {
                    m.set(x, y, z, true);
                }
            }
        }
        m.set(2, 2, 2, false);
        let f = fill_holes(&m);
        assert!(f.get(2, 2, 2));
        assert_eq!(f.voxel_count(), 27);
        assert_eq!(f, fill_holes_oracle(&m));
        assert_eq!(fill_holes(&f), f);
    }

    #[test]
    fn shell_touching_border_still_filled() {
        // 3x3x3 shell occupying the whole grid
        let g = geom([3, 3, 3]);
        let mut m = BinaryMask::full(g);
        m.set(1, 1, 1, false);
        assert!(fill_holes(&m).get(1, 1, 1));
        let e = BinaryMask::empty(g);
        assert_eq!(fill_holes(&e), e);
    }

    #[test]
    fn boundary_counts() {
        let single = mask_of([3, 3, 3], &[[1, 1, 1]]);
        assert_eq!(boundary_voxels(&single), vec![[1, 1, 1]]);
        let g = geom([5, 5, 5]);
        let mut cube = BinaryMask::empty(g);
        for z in 1..4 {
            for y in 1..4 {
                for x in 1..4 {
                    cube.set(x, y, z, true);
                }
            }
        }
        let b = boundary_voxels(&cube);
        assert_eq!(b.len(), 26);
        assert!(!b.contains(&[2, 2, 2]));
        assert!(boundary_voxels(&BinaryMask::empty(g)).is_empty());
    }

    #[test]
    fn dilation_matches_brute_force() {
        let m = mask_of([7, 6, 5], &[[3, 3, 2], [0, 0, 0]]);
        let d = dilate_cube(&m, 2);
        let g = *m.geometry();
        for i in 0..g.len() {
            let p = g.coords(i);
            let expect = m.indices().any(|j| {
                let q = g.coords(j);
                (0..3).all(|a| (p[a] as i64 - q[a] as i64).abs() <= 2)
            });
            assert_eq!(d.bits()[i], expect, "voxel {p:?}");
        }
    }

    #[test]
    fn resample_to_same_geometry_is_identity() {
        let m = mask_of([4, 4, 4], &[[1, 2, 3]]);
        assert_eq!(m.resample_to(*m.geometry()), m);
        let coarse = m.resample_to(Geometry::new([2, 2, 2], [8.0; 3]).unwrap());
        assert_eq!(coarse.dims(), [2, 2, 2]);
    }

    fn arb_mask(max: usize) -> impl Strategy<Value = BinaryMask> {
        (1..=max, 1..=max, 1..=max).prop_flat_map(|(x, y, z)| {
            proptest::collection::vec(any::<bool>(), x * y * z)
                .prop_map(move |bits| BinaryMask::new(geom([x, y, z]), bits).unwrap())
        })
    }

    proptest! {
        #[test]
        fn components_partition_input(m in arb_mask(6), six in any::<bool>()) {
            let conn = if six { Connectivity::Six } else { Connectivity::TwentySix };
            let cc = connected_components(&m, conn);
            let mut union = vec![0u32; m.bits().len()];
            for c in &cc {
                for i in c.indices() {
                    union[i] += 1;
                }
            }
            for (i, &b) in m.bits().iter().enumerate() {
                prop_assert_eq!(union[i], b as u32);
            }
            for w in cc.windows(2) {
                prop_assert!(w[0].voxel_count() >= w[1].voxel_count());
            }
        }

        #[test]
        fn fill_holes_matches_oracle_and_is_idempotent(m in arb_mask(7)) {
            let f = fill_holes(&m);
            prop_assert_eq!(&f, &fill_holes_oracle(&m));
            prop_assert!(m.is_subset_of(&f));
            prop_assert_eq!(fill_holes(&f), f);
        }

        #[test]
        fn centroid_translation(pts in proptest::collection::vec((0usize..5, 0usize..5, 0usize..5), 1..20),
                                dx in 0usize..4, dy in 0usize..4, dz in 0usize..4) {
            let dims = [10, 10, 10];
            let base: Vec<[usize; 3]> = pts.iter().map(|&(x, y, z)| [x, y, z]).collect();
            let moved: Vec<[usize; 3]> = base.iter().map(|p| [p[0] + dx, p[1] + dy, p[2] + dz]).collect();
            let a = centroid(&mask_of(dims, &base)).unwrap();
            let b = centroid(&mask_of(dims, &moved)).unwrap();
            let n = {
                let mut s = base.clone();
                s.sort();
                s.dedup();
                s.len() as f64
            };
            // exact when the count divides evenly; otherwise within one rounding step
            for (axis, d) in [dx, dy, dz].into_iter().enumerate() {
                let diff = b.position[axis] - a.position[axis];
                prop_assert!((diff - d as f64).abs() <= 4.0 * f64::EPSILON * 10.0, "n={} diff={}", n, diff);
            }
        }

        #[test]
        fn boundary_is_subset_of_foreground(m in arb_mask(6)) {
            for p in boundary_voxels(&m) {
                prop_assert!(m.get(p[0], p[1], p[2]));
            }
        }
    }
}
