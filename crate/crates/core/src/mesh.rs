//! Hierarchical quadrilateral meshes of a rectangular domain.
//!
//! Cells live on a quadtree rooted at an `n x n` grid of level-0 cells. Node
//! positions are stored as integers on the finest representable lattice so
//! that node identity is exact. Leaves are grouped into *patches* of four
//! siblings (level-0 cells are grouped 2x2), which is the structure the
//! patchwise biquadratic reconstruction needs; refinement always refines
//! whole patches so every leaf keeps a complete patch.

use std::collections::{HashMap, HashSet};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Deepest refinement level below the initial grid.
pub const MAX_LEVEL: u32 = 16;
const UNIT: u64 = 1 << MAX_LEVEL;

/// Axis-aligned rectangle in meters.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        if !(x1 > x0 && y1 > y0) || ![x0, y0, x1, y1].iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "degenerate rectangle ({x0},{y0})-({x1},{y1})"
            )));
        }
        Ok(Rect { x0, y0, x1, y1 })
    }

    /// The square `(0, side)^2`.
    pub fn square(side: f64) -> Self {
        Rect {
            x0: 0.0,
            y0: 0.0,
            x1: side,
            y1: side,
        }
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        p[0] >= self.x0 && p[0] <= self.x1 && p[1] >= self.y0 && p[1] <= self.y1
    }

    pub fn contains_rect(&self, other: &Rect) -> bool {
        other.x0 >= self.x0 && other.x1 <= self.x1 && other.y0 >= self.y0 && other.y1 <= self.y1
    }

    /// Intersection with another rectangle, `None` when it has zero area.
    pub fn intersect(&self, other: &Rect) -> Option<Rect> {
        let r = Rect {
            x0: self.x0.max(other.x0),
            y0: self.y0.max(other.y0),
            x1: self.x1.min(other.x1),
            y1: self.y1.min(other.y1),
        };
        (r.x1 > r.x0 && r.y1 > r.y0).then_some(r)
    }
}

/// Address of a quadtree cell: level and integer position on that level's grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CellKey {
    pub level: u32,
    pub ix: u32,
    pub iy: u32,
}

impl CellKey {
    fn size(&self) -> u64 {
        UNIT >> self.level
    }

    fn origin(&self) -> (u64, u64) {
        (self.ix as u64 * self.size(), self.iy as u64 * self.size())
    }

    fn children(&self) -> [CellKey; 4] {
        let (l, x, y) = (self.level + 1, 2 * self.ix, 2 * self.iy);
        [
            CellKey { level: l, ix: x, iy: y },
            CellKey { level: l, ix: x + 1, iy: y },
            CellKey { level: l, ix: x, iy: y + 1 },
            CellKey { level: l, ix: x + 1, iy: y + 1 },
        ]
    }

    /// Key shared by the four cells of a patch; for level 0 this is the 2x2 group.
    fn patch_key(&self) -> (u32, u32, u32) {
        (self.level, self.ix / 2, self.iy / 2)
    }

    fn siblings(&self) -> [CellKey; 4] {
        let (l, x, y) = (self.level, self.ix & !1, self.iy & !1);
        [
            CellKey { level: l, ix: x, iy: y },
            CellKey { level: l, ix: x + 1, iy: y },
            CellKey { level: l, ix: x, iy: y + 1 },
            CellKey { level: l, ix: x + 1, iy: y + 1 },
        ]
    }

    /// Position of this cell inside its patch: 0..4 as (qx + 2 qy).
    pub fn quadrant(&self) -> usize {
        (self.ix & 1) as usize + 2 * (self.iy & 1) as usize
    }
}

/// A leaf element. Nodes are ordered counter-clockwise from the lower-left corner.
#[derive(Clone, Debug)]
pub struct Element {
    pub nodes: [usize; 4],
    pub cell: CellKey,
}

/// A node on the edge midpoint of a coarser neighbour, slaved to the edge ends.
#[derive(Clone, Debug, PartialEq)]
pub struct HangingNode {
    pub node: usize,
    pub masters: [usize; 2],
    /// Level of the coarse element owning the edge; constraints are resolved coarse to fine.
    pub level: u32,
}

/// Four sibling leaves forming one coarse cell.
#[derive(Clone, Debug)]
pub struct Patch {
    /// Element indices in quadrant order (lower-left, lower-right, upper-left, upper-right).
    pub elements: [usize; 4],
    /// The 3x3 patch nodes, row-major from the lower-left corner.
    pub nodes: [usize; 9],
}

/// Per-element refinement flags.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RefinementMarks {
    flags: Vec<bool>,
}

impl RefinementMarks {
    pub fn none(n_elements: usize) -> Self {
        RefinementMarks {
            flags: vec![false; n_elements],
        }
    }

    pub fn all(n_elements: usize) -> Self {
        RefinementMarks {
            flags: vec![true; n_elements],
        }
    }

    pub fn from_flags(flags: Vec<bool>) -> Self {
        RefinementMarks { flags }
    }

    pub fn set(&mut self, element: usize) {
        self.flags[element] = true;
    }

    pub fn is_marked(&self, element: usize) -> bool {
        self.flags[element]
    }

    pub fn flags(&self) -> &[bool] {
        &self.flags
    }

    pub fn len(&self) -> usize {
        self.flags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flags.is_empty()
    }

    pub fn count(&self) -> usize {
        self.flags.iter().filter(|&&f| f).count()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct RegionGrid {
    rows: usize,
    cols: usize,
}

/// Hierarchical quadrilateral mesh; immutable once built.
#[derive(Clone, Debug)]
pub struct QuadMesh {
    domain: Rect,
    n: usize,
    nodes: Vec<[f64; 2]>,
    node_ij: Vec<(u64, u64)>,
    elements: Vec<Element>,
    hanging: Vec<HangingNode>,
    hanging_of: Vec<Option<usize>>,
    boundary: Vec<bool>,
    patches: Option<Vec<Patch>>,
    patch_of: Vec<usize>,
    regions: Option<RegionGrid>,
    region_id: Vec<usize>,
    node_lookup: HashMap<(u64, u64), usize>,
    leaves: HashSet<CellKey>,
}

/// Uniform `n x n` mesh of `domain`.
pub fn uniform_mesh(domain: Rect, n: usize) -> Result<QuadMesh> {
    if n == 0 {
        return Err(Error::InvalidArgument("mesh needs at least one subdivision".into()));
    }
    let leaves = (0..n as u32)
        .flat_map(|iy| (0..n as u32).map(move |ix| CellKey { level: 0, ix, iy }))
        .collect();
    QuadMesh::from_leaves(domain, n, leaves, None)
}

/// Assign each element to one of `rows x cols` congruent regions by its center.
pub fn region_partition(mesh: &QuadMesh, rows: usize, cols: usize) -> Result<Vec<usize>> {
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidArgument("region grid must be non-empty".into()));
    }
    let d = mesh.domain;
    Ok((0..mesh.n_elements())
        .map(|e| {
            let c = mesh.element_center(e);
            let col = (((c[0] - d.x0) / d.width()) * cols as f64).floor() as usize;
            let row = (((c[1] - d.y0) / d.height()) * rows as f64).floor() as usize;
            row.min(rows - 1) * cols + col.min(cols - 1)
        })
        .collect())
}

impl QuadMesh {
    fn from_leaves(
        domain: Rect,
        n: usize,
        leaves: HashSet<CellKey>,
        regions: Option<RegionGrid>,
    ) -> Result<QuadMesh> {
        let patched = n % 2 == 0;
        let mut sorted: Vec<CellKey> = leaves.iter().copied().collect();
        // Group patch members together, patches ordered by position then level.
        sorted.sort_by_key(|c| {
            let (ox, oy) = c.origin();
            let ps = c.size() * 2;
            (oy / ps * ps, ox / ps * ps, c.level, c.quadrant())
        });

        let side = n as u64 * UNIT;
        let mut node_lookup: HashMap<(u64, u64), usize> = HashMap::new();
        let mut node_ij = Vec::new();
        let mut elements = Vec::with_capacity(sorted.len());
        for cell in &sorted {
            let (ox, oy) = cell.origin();
            let s = cell.size();
            let corners = [(ox, oy), (ox + s, oy), (ox + s, oy + s), (ox, oy + s)];
            let mut ids = [0usize; 4];
            for (slot, c) in ids.iter_mut().zip(corners) {
                *slot = *node_lookup.entry(c).or_insert_with(|| {
                    node_ij.push(c);
                    node_ij.len() - 1
                });
            }
            elements.push(Element { nodes: ids, cell: *cell });
        }

        let to_xy = |(i, j): (u64, u64)| {
            [
                domain.x0 + domain.width() * (i as f64 / side as f64),
                domain.y0 + domain.height() * (j as f64 / side as f64),
            ]
        };
        let nodes: Vec<[f64; 2]> = node_ij.iter().map(|&ij| to_xy(ij)).collect();
        let boundary = node_ij
            .iter()
            .map(|&(i, j)| i == 0 || j == 0 || i == side || j == side)
            .collect();

        let mut hanging = Vec::new();
        let mut hanging_of = vec![None; nodes.len()];
        for el in &elements {
            for edge in 0..4 {
                let a = el.nodes[edge];
                let b = el.nodes[(edge + 1) % 4];
                let (ia, ja) = node_ij[a];
                let (ib, jb) = node_ij[b];
                let mid = ((ia + ib) / 2, (ja + jb) / 2);
                if let Some(&m) = node_lookup.get(&mid) {
                    if hanging_of[m].is_none() {
                        hanging_of[m] = Some(hanging.len());
                        hanging.push(HangingNode {
                            node: m,
                            masters: [a, b],
                            level: el.cell.level,
                        });
                    }
                }
            }
        }
        hanging.sort_by_key(|h| (h.level, h.node));
        for (i, h) in hanging.iter().enumerate() {
            hanging_of[h.node] = Some(i);
        }

        let mut mesh = QuadMesh {
            domain,
            n,
            nodes,
            node_ij,
            elements,
            hanging,
            hanging_of,
            boundary,
            patches: None,
            patch_of: Vec::new(),
            regions: None,
            region_id: Vec::new(),
            node_lookup,
            leaves,
        };
        if patched {
            mesh.build_patches()?;
        }
        match regions {
            Some(g) => mesh.set_regions(g.rows, g.cols)?,
            None => mesh.region_id = vec![0; mesh.elements.len()],
        }
        Ok(mesh)
    }

    fn build_patches(&mut self) -> Result<()> {
        let mut groups: HashMap<(u32, u32, u32), [Option<usize>; 4]> = HashMap::new();
        for (e, el) in self.elements.iter().enumerate() {
            groups.entry(el.cell.patch_key()).or_insert([None; 4])[el.cell.quadrant()] = Some(e);
        }
        let mut keys: Vec<_> = groups.keys().copied().collect();
        keys.sort_by_key(|&(l, x, y)| (y as u64 * (UNIT >> l), x as u64 * (UNIT >> l), l));
        let mut patches = Vec::with_capacity(keys.len());
        let mut patch_of = vec![usize::MAX; self.elements.len()];
        for key in keys {
            let members = groups[&key];
            let mut elements = [0usize; 4];
            for (q, m) in members.iter().enumerate() {
                elements[q] = m.ok_or_else(|| {
                    Error::InvalidArgument(format!("incomplete patch at {key:?}"))
                })?;
            }
            let ll = self.elements[elements[0]].cell;
            let (ox, oy) = ll.origin();
            let s = ll.size();
            let mut nodes = [0usize; 9];
            for j in 0..3u64 {
                for i in 0..3u64 {
                    nodes[(j * 3 + i) as usize] = self.node_lookup[&(ox + i * s, oy + j * s)];
                }
            }
            for &e in &elements {
                patch_of[e] = patches.len();
            }
            patches.push(Patch { elements, nodes });
        }
        self.patches = Some(patches);
        self.patch_of = patch_of;
        Ok(())
    }

    /// Attach a `rows x cols` region grid; element ids follow the element centers.
    pub fn set_regions(&mut self, rows: usize, cols: usize) -> Result<()> {
        self.region_id = region_partition(self, rows, cols)?;
        self.regions = Some(RegionGrid { rows, cols });
        Ok(())
    }

    pub fn with_regions(mut self, rows: usize, cols: usize) -> Result<Self> {
        self.set_regions(rows, cols)?;
        Ok(self)
    }

    /// Refine marked elements into four children each.
    ///
    /// Marks are closed over sibling patches (when the mesh has patches) and
    /// over edge neighbours until neighbouring leaves differ by at most one
    /// level.
    pub fn refine(&self, marks: &RefinementMarks) -> Result<QuadMesh> {
        if marks.len() != self.elements.len() {
            return Err(Error::InvalidArgument(format!(
                "{} marks for {} elements",
                marks.len(),
                self.elements.len()
            )));
        }
        let mut selected: HashSet<CellKey> = self
            .elements
            .iter()
            .zip(marks.flags())
            .filter(|(_, &m)| m)
            .map(|(el, _)| el.cell)
            .collect();
        if selected.is_empty() {
            return Ok(self.clone());
        }
        let patched = self.patches.is_some();
        let mut frontier: Vec<CellKey> = selected.iter().copied().collect();
        while let Some(cell) = frontier.pop() {
            if cell.level + 1 >= MAX_LEVEL {
                return Err(Error::InvalidArgument(format!(
                    "refinement beyond level {MAX_LEVEL}"
                )));
            }
            let mut add = Vec::new();
            if patched {
                add.extend(cell.siblings());
            }
            for nb in self.edge_neighbors(cell) {
                if let Some(leaf) = self.leaf_containing(nb) {
                    if leaf.level < cell.level {
                        add.push(leaf);
                    }
                }
            }
            for c in add {
                if self.leaves.contains(&c) && selected.insert(c) {
                    frontier.push(c);
                }
            }
        }
        let mut leaves: HashSet<CellKey> = self.leaves.difference(&selected).copied().collect();
        for c in &selected {
            leaves.extend(c.children());
        }
        QuadMesh::from_leaves(self.domain, self.n, leaves, self.regions)
    }

    fn edge_neighbors(&self, cell: CellKey) -> Vec<CellKey> {
        let cells_per_side = (self.n as u64) << cell.level;
        let (x, y) = (cell.ix as i64, cell.iy as i64);
        [(x - 1, y), (x + 1, y), (x, y - 1), (x, y + 1)]
            .into_iter()
            .filter(|&(a, b)| a >= 0 && b >= 0 && (a as u64) < cells_per_side && (b as u64) < cells_per_side)
            .map(|(a, b)| CellKey {
                level: cell.level,
                ix: a as u32,
                iy: b as u32,
            })
            .collect()
    }

    /// The leaf at `cell.level` or coarser that covers `cell`, if any.
    fn leaf_containing(&self, cell: CellKey) -> Option<CellKey> {
        (0..=cell.level).rev().find_map(|l| {
            let shift = cell.level - l;
            let k = CellKey {
                level: l,
                ix: cell.ix >> shift,
                iy: cell.iy >> shift,
            };
            self.leaves.contains(&k).then_some(k)
        })
    }

    /// Same mesh with node indices permuted: old node `i` becomes `perm[i]`.
    pub fn renumbered(&self, perm: &[usize]) -> Result<QuadMesh> {
        let nn = self.nodes.len();
        let mut seen = vec![false; nn];
        if perm.len() != nn || perm.iter().any(|&p| p >= nn || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::InvalidArgument("not a permutation of the nodes".into()));
        }
        let mut m = self.clone();
        for (old, &new) in perm.iter().enumerate() {
            m.nodes[new] = self.nodes[old];
            m.node_ij[new] = self.node_ij[old];
            m.boundary[new] = self.boundary[old];
        }
        for el in &mut m.elements {
            el.nodes = el.nodes.map(|i| perm[i]);
        }
        for h in &mut m.hanging {
            h.node = perm[h.node];
            h.masters = h.masters.map(|i| perm[i]);
        }
        m.hanging_of = vec![None; nn];
        for (i, h) in m.hanging.iter().enumerate() {
            m.hanging_of[h.node] = Some(i);
        }
        if let Some(ps) = &mut m.patches {
            for p in ps {
                p.nodes = p.nodes.map(|i| perm[i]);
            }
        }
        for v in m.node_lookup.values_mut() {
            *v = perm[*v];
        }
        Ok(m)
    }

    pub fn domain(&self) -> Rect {
        self.domain
    }

    /// Subdivisions per side of the initial (level-0) grid.
    pub fn base_subdivisions(&self) -> usize {
        self.n
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn nodes(&self) -> &[[f64; 2]] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> [f64; 2] {
        self.nodes[i]
    }

    pub fn elements(&self) -> &[Element] {
        &self.elements
    }

    pub fn element(&self, e: usize) -> &Element {
        &self.elements[e]
    }

    pub fn level(&self, e: usize) -> u32 {
        self.elements[e].cell.level
    }

    pub fn max_level(&self) -> u32 {
        self.elements.iter().map(|e| e.cell.level).max().unwrap_or(0)
    }

    /// Lower-left corner and side lengths of element `e`.
    pub fn element_box(&self, e: usize) -> ([f64; 2], [f64; 2]) {
        let el = &self.elements[e];
        let p0 = self.nodes[el.nodes[0]];
        let p2 = self.nodes[el.nodes[2]];
        (p0, [p2[0] - p0[0], p2[1] - p0[1]])
    }

    pub fn element_rect(&self, e: usize) -> Rect {
        let (p, h) = self.element_box(e);
        Rect {
            x0: p[0],
            y0: p[1],
            x1: p[0] + h[0],
            y1: p[1] + h[1],
        }
    }

    pub fn element_center(&self, e: usize) -> [f64; 2] {
        let (p, h) = self.element_box(e);
        [p[0] + 0.5 * h[0], p[1] + 0.5 * h[1]]
    }

    pub fn element_area(&self, e: usize) -> f64 {
        let (_, h) = self.element_box(e);
        h[0] * h[1]
    }

    /// Smallest element side length.
    pub fn min_h(&self) -> f64 {
        (0..self.n_elements())
            .map(|e| self.element_box(e).1[0])
            .fold(f64::INFINITY, f64::min)
    }

    pub fn max_h(&self) -> f64 {
        (0..self.n_elements())
            .map(|e| self.element_box(e).1[0])
            .fold(0.0, f64::max)
    }

    pub fn hanging_nodes(&self) -> &[HangingNode] {
        &self.hanging
    }

    pub fn hanging_constraint(&self, node: usize) -> Option<&HangingNode> {
        self.hanging_of[node].map(|i| &self.hanging[i])
    }

    pub fn is_hanging(&self, node: usize) -> bool {
        self.hanging_of[node].is_some()
    }

    pub fn is_boundary(&self, node: usize) -> bool {
        self.boundary[node]
    }

    pub fn has_patches(&self) -> bool {
        self.patches.is_some()
    }

    pub fn patches(&self) -> Result<&[Patch]> {
        self.patches.as_deref().ok_or(Error::MissingPatchStructure)
    }

    /// Patch index of element `e` (meshes with patch structure only).
    pub fn patch_of(&self, e: usize) -> Option<usize> {
        self.patches.as_ref().map(|_| self.patch_of[e])
    }

    pub fn region_grid(&self) -> Option<(usize, usize)> {
        self.regions.map(|g| (g.rows, g.cols))
    }

    pub fn region_ids(&self) -> &[usize] {
        &self.region_id
    }

    pub fn n_regions(&self) -> usize {
        self.regions.map_or(1, |g| g.rows * g.cols)
    }

    /// Overwrite hanging-node values with the mean of their masters.
    pub fn apply_constraints(&self, values: &mut [f64]) {
        for h in &self.hanging {
            values[h.node] = 0.5 * (values[h.masters[0]] + values[h.masters[1]]);
        }
    }

    /// Edge-neighbour pairs of leaves as `(element, neighbour)`; coarser
    /// neighbours appear once per fine element touching them.
    pub fn edge_neighbor_pairs(&self) -> Vec<(usize, usize)> {
        let index: HashMap<CellKey, usize> = self
            .elements
            .iter()
            .enumerate()
            .map(|(i, el)| (el.cell, i))
            .collect();
        let mut pairs = Vec::new();
        for (e, el) in self.elements.iter().enumerate() {
            for nb in self.edge_neighbors(el.cell) {
                if let Some(leaf) = self.leaf_containing(nb) {
                    pairs.push((e, index[&leaf]));
                } else {
                    // Neighbour region is refined more finely: its leaves on
                    // the shared edge are found from their own side.
                    continue;
                }
            }
        }
        pairs
    }

    /// Stable digest of geometry and numbering; used to match checkpoints to meshes.
    pub fn hash(&self) -> u64 {
        let mut h = Sha256::new();
        for v in [self.domain.x0, self.domain.y0, self.domain.x1, self.domain.y1] {
            h.update(v.to_le_bytes());
        }
        h.update((self.n as u64).to_le_bytes());
        for &(i, j) in &self.node_ij {
            h.update(i.to_le_bytes());
            h.update(j.to_le_bytes());
        }
        for el in &self.elements {
            for &n in &el.nodes {
                h.update((n as u64).to_le_bytes());
            }
        }
        let d = h.finalize();
        u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const L: f64 = 500e3;

    fn square() -> Rect {
        Rect::square(L)
    }

    fn total_area(m: &QuadMesh) -> f64 {
        (0..m.n_elements()).map(|e| m.element_area(e)).sum()
    }

    fn max_level_jump(m: &QuadMesh) -> u32 {
        m.edge_neighbor_pairs()
            .iter()
            .map(|&(a, b)| m.level(a).abs_diff(m.level(b)))
            .max()
            .unwrap_or(0)
    }

    #[test]
    fn uniform_counts() {
        let m = uniform_mesh(square(), 2).unwrap();
        assert_eq!((m.n_elements(), m.n_nodes()), (4, 9));
        let m = uniform_mesh(square(), 8).unwrap();
        assert_eq!((m.n_elements(), m.n_nodes()), (64, 81));
        assert_eq!(m.element_box(0).1, [62.5e3, 62.5e3]);
        assert!(m.hanging_nodes().is_empty());
        assert!(m.elements().iter().all(|e| e.cell.level == 0));
        assert_eq!(m.patches().unwrap().len(), 16);
    }

    #[test]
    fn single_element_mesh() {
        let m = uniform_mesh(square(), 1).unwrap();
        assert_eq!(m.n_elements(), 1);
        assert_eq!(m.element_box(0).1, [L, L]);
        assert!(matches!(m.patches(), Err(Error::MissingPatchStructure)));
    }

    #[test]
    fn zero_subdivisions_rejected() {
        assert!(uniform_mesh(square(), 0).is_err());
    }

    #[test]
    fn refine_all_and_none() {
        let m = uniform_mesh(square(), 2).unwrap();
        let r = m.refine(&RefinementMarks::all(4)).unwrap();
        assert_eq!(r.n_elements(), 16);
        assert_eq!(r.n_nodes(), 25);
        let same = m.refine(&RefinementMarks::none(4)).unwrap();
        assert_eq!(same.hash(), m.hash());
    }

    #[test]
    fn corner_refinement_is_balanced() {
        let m = uniform_mesh(square(), 4).unwrap();
        let corner = (0..16).find(|&e| m.element_center(e) == [62.5e3, 62.5e3]).unwrap();
        let mut marks = RefinementMarks::none(16);
        marks.set(corner);
        let r = m.refine(&marks).unwrap();
        // The corner's patch (four elements) is quadrisected.
        assert_eq!(r.n_elements(), 12 + 16);
        assert!(max_level_jump(&r) <= 1);
        // Hanging nodes sit on the two interior sides of the refined patch.
        assert_eq!(r.hanging_nodes().len(), 4);
        for h in r.hanging_nodes() {
            let p = r.node(h.node);
            let a = r.node(h.masters[0]);
            let b = r.node(h.masters[1]);
            assert_eq!(p, [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0]);
        }
        assert!((total_area(&r) - L * L).abs() <= 1e-12 * L * L);
    }

    #[test]
    fn repeated_corner_refinement_forces_closure() {
        let mut m = uniform_mesh(square(), 4).unwrap();
        for _ in 0..4 {
            let target = (0..m.n_elements())
                .min_by(|&a, &b| {
                    let ca = m.element_center(a);
                    let cb = m.element_center(b);
                    (ca[0] + ca[1]).partial_cmp(&(cb[0] + cb[1])).unwrap()
                })
                .unwrap();
            let mut marks = RefinementMarks::none(m.n_elements());
            marks.set(target);
            m = m.refine(&marks).unwrap();
            assert!(max_level_jump(&m) <= 1);
            assert!((total_area(&m) - L * L).abs() <= 1e-12 * L * L);
        }
        assert_eq!(m.max_level(), 4);
        // Every leaf belongs to a complete patch.
        let patches = m.patches().unwrap();
        assert_eq!(patches.len() * 4, m.n_elements());
    }

    #[test]
    fn region_counts() {
        let m = uniform_mesh(square(), 4).unwrap();
        let r = region_partition(&m, 4, 4).unwrap();
        let mut counts = vec![0; 16];
        r.iter().for_each(|&i| counts[i] += 1);
        assert!(counts.iter().all(|&c| c == 1));

        let m = uniform_mesh(square(), 8).unwrap();
        let r = region_partition(&m, 4, 4).unwrap();
        let mut counts = vec![0; 16];
        r.iter().for_each(|&i| counts[i] += 1);
        assert!(counts.iter().all(|&c| c == 4));

        let m = uniform_mesh(square(), 16).unwrap().with_regions(4, 4).unwrap();
        let mut area = vec![0.0; 16];
        for e in 0..m.n_elements() {
            area[m.region_ids()[e]] += m.element_area(e);
        }
        for a in area {
            assert!((a - L * L / 16.0).abs() < 1e-6);
        }
    }

    #[test]
    fn regions_survive_refinement() {
        let m = uniform_mesh(square(), 4).unwrap().with_regions(4, 4).unwrap();
        let r = m.refine(&RefinementMarks::all(16)).unwrap();
        assert_eq!(r.region_grid(), Some((4, 4)));
        let mut counts = vec![0; 16];
        r.region_ids().iter().for_each(|&i| counts[i] += 1);
        assert!(counts.iter().all(|&c| c == 4));
    }

    #[test]
    fn renumbering_is_checked() {
        let m = uniform_mesh(square(), 2).unwrap();
        assert!(m.renumbered(&[0, 0, 1, 2, 3, 4, 5, 6, 7]).is_err());
        let perm: Vec<usize> = (0..9).rev().collect();
        let r = m.renumbered(&perm).unwrap();
        assert_eq!(r.node(8), m.node(0));
        assert_ne!(r.hash(), m.hash());
    }
}
