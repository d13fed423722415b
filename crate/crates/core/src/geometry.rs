//! Habitats as axis-aligned boxes, their uniform Cartesian meshes, and the
//! cell-center overlap masks that realize the characteristic functions of
//! pairwise intersections.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("domain {id}: dimension must be 1 or 2, got {dim}")]
    BadDimension { id: usize, dim: usize },
    #[error("domain {id}: lo and hi have different lengths")]
    LengthMismatch { id: usize },
    #[error("domain {id}: axis {axis} has lo={lo} >= hi={hi}")]
    Degenerate { id: usize, axis: usize, lo: f64, hi: f64 },
    #[error("domain ids must be contiguous 1..N, found {found:?}")]
    NonContiguousIds { found: Vec<usize> },
    #[error("all domains must share one dimension")]
    MixedDimensions,
    #[error("no domains")]
    Empty,
    #[error("cell counts must be positive on every axis, got {0:?}")]
    BadCellCount(Vec<usize>),
    #[error("too many domains ({0}); at most 64 are supported")]
    TooMany(usize),
}

/// An open box `(lo, hi)` in one or two dimensions; `id` is 1-based.
#[derive(Debug, Clone, PartialEq)]
pub struct Domain {
    id: usize,
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl Domain {
    pub fn new(id: usize, lo: Vec<f64>, hi: Vec<f64>) -> Result<Self, GeometryError> {
        if lo.len() != hi.len() {
            return Err(GeometryError::LengthMismatch { id });
        }
        if lo.is_empty() || lo.len() > 2 {
            return Err(GeometryError::BadDimension { id, dim: lo.len() });
        }
        for (axis, (&l, &h)) in lo.iter().zip(&hi).enumerate() {
            if !(l < h) || !l.is_finite() || !h.is_finite() {
                return Err(GeometryError::Degenerate { id, axis, lo: l, hi: h });
            }
        }
        Ok(Self { id, lo, hi })
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn measure(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(l, h)| h - l).product()
    }

    /// Point membership in the closed box.
    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(&xi, (&l, &h))| l <= xi && xi <= h)
    }

    /// True when the open boxes share a set of positive measure.
    pub fn overlaps(&self, other: &Domain) -> bool {
        self.lo
            .iter()
            .zip(&self.hi)
            .zip(other.lo.iter().zip(&other.hi))
            .all(|((&l1, &h1), (&l2, &h2))| l1.max(l2) < h1.min(h2))
    }
}

/// The habitats Ω_1..Ω_N.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainSet {
    domains: Vec<Domain>,
}

impl DomainSet {
    /// Domains may be given in any order; they are sorted by id.
    pub fn new(mut domains: Vec<Domain>) -> Result<Self, GeometryError> {
        if domains.is_empty() {
            return Err(GeometryError::Empty);
        }
        if domains.len() > 64 {
            return Err(GeometryError::TooMany(domains.len()));
        }
        domains.sort_by_key(|d| d.id);
        if domains.iter().enumerate().any(|(i, d)| d.id != i + 1) {
            return Err(GeometryError::NonContiguousIds {
                found: domains.iter().map(|d| d.id).collect(),
            });
        }
        let dim = domains[0].dim();
        if domains.iter().any(|d| d.dim() != dim) {
            return Err(GeometryError::MixedDimensions);
        }
        Ok(Self { domains })
    }

    pub fn len(&self) -> usize {
        self.domains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.domains.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.domains[0].dim()
    }

    /// Lookup by 1-based id.
    pub fn get(&self, id: usize) -> Option<&Domain> {
        id.checked_sub(1).and_then(|i| self.domains.get(i))
    }

    pub fn iter(&self) -> impl Iterator<Item = &Domain> {
        self.domains.iter()
    }

    /// Bitmask of the domains whose closed box contains `x` (bit `id-1`).
    pub fn presence(&self, x: &[f64]) -> u64 {
        self.domains
            .iter()
            .filter(|d| d.contains(x))
            .fold(0u64, |acc, d| acc | (1u64 << (d.id - 1)))
    }

    /// Measure of the union, exact for boxes (coordinate compression).
    pub fn union_measure(&self) -> f64 {
        let axes = self.breakpoints();
        let dim = self.dim();
        let mut total = 0.0;
        let counts: Vec<usize> = axes.iter().map(|a| a.len() - 1).collect();
        for_each_index(&counts, |idx| {
            let mid: Vec<f64> = (0..dim)
                .map(|d| 0.5 * (axes[d][idx[d]] + axes[d][idx[d] + 1]))
                .collect();
            if self.presence(&mid) != 0 {
                total += (0..dim)
                    .map(|d| axes[d][idx[d] + 1] - axes[d][idx[d]])
                    .product::<f64>();
            }
        });
        total
    }

    /// Sorted distinct box faces along each axis.
    fn breakpoints(&self) -> Vec<Vec<f64>> {
        (0..self.dim())
            .map(|d| {
                let mut v: Vec<f64> = self
                    .domains
                    .iter()
                    .flat_map(|dom| [dom.lo[d], dom.hi[d]])
                    .collect();
                v.sort_by(f64::total_cmp);
                v.dedup();
                v
            })
            .collect()
    }
}

/// Calls `f` with every multi-index in `0..counts[0] x 0..counts[1] x ...`,
/// first axis fastest.
pub(crate) fn for_each_index(counts: &[usize], mut f: impl FnMut(&[usize])) {
    if counts.contains(&0) {
        return;
    }
    let mut idx = vec![0usize; counts.len()];
    loop {
        f(&idx);
        let mut axis = 0;
        loop {
            if axis == counts.len() {
                return;
            }
            idx[axis] += 1;
            if idx[axis] < counts[axis] {
                break;
            }
            idx[axis] = 0;
            axis += 1;
        }
    }
}

/// A uniform cell-centered mesh of one domain. Cells are numbered with the
/// first axis fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshedDomain {
    domain: Domain,
    cells_per_axis: Vec<usize>,
    h: Vec<f64>,
    centers: Vec<f64>,
    cell_volume: f64,
}

pub fn build_mesh(domain: &Domain, cells_per_axis: &[usize]) -> Result<MeshedDomain, GeometryError> {
    if cells_per_axis.len() != domain.dim() || cells_per_axis.contains(&0) {
        return Err(GeometryError::BadCellCount(cells_per_axis.to_vec()));
    }
    let dim = domain.dim();
    let h: Vec<f64> = (0..dim)
        .map(|d| (domain.hi[d] - domain.lo[d]) / cells_per_axis[d] as f64)
        .collect();
    let mut centers = Vec::with_capacity(cells_per_axis.iter().product::<usize>() * dim);
    for_each_index(cells_per_axis, |idx| {
        for d in 0..dim {
            centers.push(domain.lo[d] + (idx[d] as f64 + 0.5) * h[d]);
        }
    });
    Ok(MeshedDomain {
        domain: domain.clone(),
        cells_per_axis: cells_per_axis.to_vec(),
        cell_volume: h.iter().product(),
        h,
        centers,
    })
}

impl MeshedDomain {
    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn cells_per_axis(&self) -> &[usize] {
        &self.cells_per_axis
    }

    pub fn h(&self) -> &[f64] {
        &self.h
    }

    pub fn len(&self) -> usize {
        self.cells_per_axis.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn center(&self, cell: usize) -> &[f64] {
        let d = self.dim();
        &self.centers[cell * d..(cell + 1) * d]
    }

    pub fn centers(&self) -> impl Iterator<Item = &[f64]> {
        self.centers.chunks_exact(self.dim())
    }

    /// All cells share this volume.
    pub fn cell_volume(&self) -> f64 {
        self.cell_volume
    }

    pub fn volumes(&self) -> Vec<f64> {
        vec![self.cell_volume; self.len()]
    }

    /// Index of the cell whose closure contains `x`, if `x` is in the box.
    pub fn locate(&self, x: &[f64]) -> Option<usize> {
        if !self.domain.contains(x) {
            return None;
        }
        let mut cell = 0;
        let mut stride = 1;
        for d in 0..self.dim() {
            let n = self.cells_per_axis[d];
            let k = ((x[d] - self.domain.lo[d]) / self.h[d]).floor();
            let k = (k.max(0.0) as usize).min(n - 1);
            cell += k * stride;
            stride *= n;
        }
        Some(cell)
    }

    /// Volume-weighted sum of a cell field.
    pub fn integrate(&self, field: &[f64]) -> f64 {
        self.cell_volume * field.iter().sum::<f64>()
    }
}

/// χ_{Ω_other} evaluated at the cell centers of `source`'s mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct OverlapMask {
    pub source: usize,
    pub other: usize,
    pub flags: Vec<bool>,
}

impl OverlapMask {
    pub fn is_empty(&self) -> bool {
        !self.flags.iter().any(|&f| f)
    }
}

pub fn overlap_mask(mesh_j: &MeshedDomain, domain_i: &Domain) -> OverlapMask {
    OverlapMask {
        source: mesh_j.domain.id,
        other: domain_i.id,
        flags: mesh_j.centers().map(|c| domain_i.contains(c)).collect(),
    }
}

/// A maximal set of points where exactly the domains in `active` are present.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionSignature {
    /// Sorted 1-based domain ids.
    pub active: Vec<usize>,
    pub representative_points: Vec<Vec<f64>>,
}

impl RegionSignature {
    pub fn mask(&self) -> u64 {
        self.active.iter().fold(0, |acc, &id| acc | (1u64 << (id - 1)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionPartition {
    pub regions: Vec<RegionSignature>,
    /// Signatures that occur only on sets of zero measure (touching faces),
    /// which no sample point of positive-measure strata can reach.
    pub omitted: Vec<Vec<usize>>,
}

pub fn mask_to_ids(mask: u64) -> Vec<usize> {
    (0..64).filter(|b| mask & (1u64 << b) != 0).map(|b| b + 1).collect()
}

/// Enumerates every non-empty region signature. The strata are the cells of
/// the arrangement cut out by all box faces; each stratum has a constant
/// signature, and representative points are drawn uniformly inside strata
/// (round-robin over the strata of a signature) and re-checked against the
/// boxes before being accepted.
pub fn region_partition(domains: &DomainSet, samples_per_region: usize) -> RegionPartition {
    let axes = domains.breakpoints();
    let dim = domains.dim();
    let counts: Vec<usize> = axes.iter().map(|a| a.len() - 1).collect();
    let mut strata: BTreeMap<u64, Vec<Vec<(f64, f64)>>> = BTreeMap::new();
    for_each_index(&counts, |idx| {
        let bounds: Vec<(f64, f64)> = (0..dim).map(|d| (axes[d][idx[d]], axes[d][idx[d] + 1])).collect();
        let mid: Vec<f64> = bounds.iter().map(|(a, b)| 0.5 * (a + b)).collect();
        let mask = domains.presence(&mid);
        if mask != 0 {
            strata.entry(mask).or_default().push(bounds);
        }
    });

    // Signatures visible only on faces/corners of the arrangement.
    let mut lower_dim = std::collections::BTreeSet::new();
    let probe: Vec<Vec<f64>> = axes
        .iter()
        .map(|a| {
            let mut v = a.clone();
            v.extend(a.windows(2).map(|w| 0.5 * (w[0] + w[1])));
            v
        })
        .collect();
    let probe_counts: Vec<usize> = probe.iter().map(Vec::len).collect();
    for_each_index(&probe_counts, |idx| {
        let x: Vec<f64> = (0..dim).map(|d| probe[d][idx[d]]).collect();
        let mask = domains.presence(&x);
        if mask != 0 && !strata.contains_key(&mask) {
            lower_dim.insert(mask);
        }
    });

    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0001);
    let budget = samples_per_region.max(1);
    let regions = strata
        .iter()
        .map(|(&mask, boxes)| {
            let mut points = Vec::with_capacity(budget);
            let mut attempts = 0;
            while points.len() < budget && attempts < 100 * budget {
                let bounds = &boxes[attempts % boxes.len()];
                attempts += 1;
                let x: Vec<f64> = bounds
                    .iter()
                    .map(|&(a, b)| {
                        let t: f64 = rng.gen_range(0.05..0.95);
                        a + t * (b - a)
                    })
                    .collect();
                if domains.presence(&x) == mask {
                    points.push(x);
                }
            }
            RegionSignature {
                active: mask_to_ids(mask),
                representative_points: points,
            }
        })
        .collect();
    RegionPartition {
        regions,
        omitted: lower_dim.into_iter().map(mask_to_ids).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn interval(id: usize, lo: f64, hi: f64) -> Domain {
        Domain::new(id, vec![lo], vec![hi]).unwrap()
    }

    fn square(id: usize, lo: f64, hi: f64) -> Domain {
        Domain::new(id, vec![lo, lo], vec![hi, hi]).unwrap()
    }

    #[test]
    fn mesh_centers_1d() {
        let m = build_mesh(&interval(1, 0.0, 2.0), &[4]).unwrap();
        let c: Vec<f64> = m.centers().map(|c| c[0]).collect();
        assert_eq!(c, vec![0.25, 0.75, 1.25, 1.75]);
        assert_eq!(m.h(), &[0.5]);
    }

    #[test]
    fn mesh_volumes_2d() {
        let m = build_mesh(&square(1, 0.0, 1.0), &[2, 2]).unwrap();
        assert_eq!(m.volumes(), vec![0.25; 4]);
        assert_eq!(m.center(1), &[0.75, 0.25]);
    }

    #[test]
    fn zero_cells_rejected() {
        assert!(build_mesh(&interval(1, 0.0, 2.0), &[0]).is_err());
        assert!(build_mesh(&square(1, 0.0, 1.0), &[3]).is_err());
    }

    #[test]
    fn degenerate_domain_rejected() {
        assert!(Domain::new(1, vec![1.0], vec![1.0]).is_err());
        assert!(Domain::new(1, vec![0.0, 2.0], vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn ids_must_be_contiguous() {
        let err = DomainSet::new(vec![interval(1, 0.0, 1.0), interval(3, 0.0, 1.0)]).unwrap_err();
        assert!(matches!(err, GeometryError::NonContiguousIds { .. }));
    }

    #[test]
    fn overlap_mask_shifted_intervals() {
        let m = build_mesh(&interval(1, 0.0, 2.0), &[4]).unwrap();
        let mask = overlap_mask(&m, &interval(2, 1.0, 3.0));
        assert_eq!(mask.flags, vec![false, false, true, true]);
        assert!(overlap_mask(&m, m.domain()).flags.iter().all(|&f| f));
    }

    #[test]
    fn disjoint_habitats_give_empty_mask() {
        let m1 = build_mesh(&square(1, 0.0, 2.0), &[8, 8]).unwrap();
        let d3 = square(3, 2.5, 4.5);
        assert!(overlap_mask(&m1, &d3).is_empty());
    }

    #[test]
    fn three_domain_chain_signatures() {
        let set = DomainSet::new(vec![square(1, 0.0, 2.0), square(2, 1.0, 3.0), square(3, 2.5, 4.5)]).unwrap();
        let part = region_partition(&set, 4);
        let sigs: Vec<Vec<usize>> = part.regions.iter().map(|r| r.active.clone()).collect();
        for want in [vec![1], vec![1, 2], vec![2], vec![2, 3], vec![3]] {
            assert!(sigs.contains(&want), "missing {want:?}");
        }
        assert!(!sigs.contains(&vec![1, 3]));
        assert!(!sigs.contains(&vec![1, 2, 3]));
        assert_eq!(sigs.len(), 5);
        for r in &part.regions {
            assert_eq!(r.representative_points.len(), 4);
            for p in &r.representative_points {
                assert_eq!(set.presence(p), r.mask());
            }
        }
        assert!(part.omitted.is_empty());
    }

    #[test]
    fn single_domain_signature() {
        let set = DomainSet::new(vec![interval(1, 0.0, 1.0)]).unwrap();
        let part = region_partition(&set, 3);
        assert_eq!(part.regions.len(), 1);
        assert_eq!(part.regions[0].active, vec![1]);
    }

    #[test]
    fn nested_boxes() {
        let set = DomainSet::new(vec![square(1, 0.0, 4.0), square(2, 1.0, 2.0)]).unwrap();
        let sigs: Vec<Vec<usize>> = region_partition(&set, 2).regions.into_iter().map(|r| r.active).collect();
        assert_eq!(sigs, vec![vec![1], vec![1, 2]]);
    }

    #[test]
    fn touching_faces_are_reported_as_omitted() {
        let set = DomainSet::new(vec![interval(1, 0.0, 1.0), interval(2, 1.0, 2.0)]).unwrap();
        let part = region_partition(&set, 2);
        assert_eq!(part.regions.len(), 2);
        assert_eq!(part.omitted, vec![vec![1, 2]]);
    }

    #[test]
    fn union_measure_inclusion_exclusion() {
        let set = DomainSet::new(vec![square(1, 0.0, 2.0), square(2, 1.0, 3.0)]).unwrap();
        assert!((set.union_measure() - 7.0).abs() < 1e-12);
    }

    #[test]
    fn locate_matches_centers() {
        let m = build_mesh(&square(2, 1.0, 3.0), &[8, 4]).unwrap();
        for (i, c) in m.centers().enumerate() {
            assert_eq!(m.locate(c), Some(i));
        }
        assert_eq!(m.locate(&[0.5, 2.0]), None);
        assert_eq!(m.locate(&[3.0, 3.0]), Some(m.len() - 1));
    }

    #[test]
    fn masks_agree_with_point_in_box_exhaustively() {
        let doms = [square(1, 0.0, 2.0), square(2, 1.0, 3.0), square(3, 0.5, 1.25)];
        for dj in &doms {
            let mesh = build_mesh(dj, &[5, 3]).unwrap();
            for di in &doms {
                let mask = overlap_mask(&mesh, di);
                for (cell, c) in mesh.centers().enumerate() {
                    let inside = (0..2).all(|d| di.lo()[d] <= c[d] && c[d] <= di.hi()[d]);
                    assert_eq!(mask.flags[cell], inside);
                }
            }
        }
    }

    #[test]
    fn refinement_keeps_flags_of_cells_fully_inside_or_outside() {
        let dj = interval(1, 0.0, 2.0);
        let di = interval(2, 0.7, 1.3);
        let coarse = build_mesh(&dj, &[5]).unwrap();
        let fine = build_mesh(&dj, &[20]).unwrap();
        let cm = overlap_mask(&coarse, &di);
        let fm = overlap_mask(&fine, &di);
        for (ci, c) in coarse.centers().enumerate() {
            let (a, b) = (c[0] - 0.2, c[0] + 0.2);
            let inside = a >= 0.7 && b <= 1.3;
            let outside = b <= 0.7 || a >= 1.3;
            if inside || outside {
                for (fi, f) in fine.centers().enumerate() {
                    if f[0] > a && f[0] < b {
                        assert_eq!(fm.flags[fi], cm.flags[ci]);
                    }
                }
            }
        }
    }

    #[test]
    fn mesh_volume_sums_to_box() {
        let d = Domain::new(1, vec![0.0, -1.0], vec![3.0, 2.5]).unwrap();
        let m = build_mesh(&d, &[7, 11]).unwrap();
        let total: f64 = m.volumes().iter().sum();
        assert!((total - d.measure()).abs() <= 1e-12 * d.measure());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn boxes() -> impl Strategy<Value = Vec<(f64, f64, f64, f64)>> {
            proptest::collection::vec((0.0f64..3.0, 0.0f64..3.0, 0.2f64..2.0, 0.2f64..2.0), 1..4)
        }

        proptest! {
            #[test]
            fn union_measure_bounds(specs in boxes()) {
                let domains: Vec<Domain> = specs
                    .iter()
                    .enumerate()
                    .map(|(i, &(x, y, w, h))| Domain::new(i + 1, vec![x, y], vec![x + w, y + h]).unwrap())
                    .collect();
                let largest = domains.iter().map(Domain::measure).fold(0.0, f64::max);
                let total: f64 = domains.iter().map(Domain::measure).sum();
                let set = DomainSet::new(domains).unwrap();
                let u = set.union_measure();
                prop_assert!(u >= largest - 1e-12 && u <= total + 1e-12, "{largest} <= {u} <= {total}");
            }

            #[test]
            fn mesh_centers_lie_in_their_domain(specs in boxes(), nx in 1usize..10, ny in 1usize..10) {
                let domains: Vec<Domain> = specs
                    .iter()
                    .enumerate()
                    .map(|(i, &(x, y, w, h))| Domain::new(i + 1, vec![x, y], vec![x + w, y + h]).unwrap())
                    .collect();
                let set = DomainSet::new(domains.clone()).unwrap();
                for d in &domains {
                    let mesh = build_mesh(d, &[nx, ny]).unwrap();
                    for (cell, c) in mesh.centers().enumerate() {
                        prop_assert!(set.presence(c) & (1u64 << (d.id() - 1)) != 0);
                        prop_assert_eq!(mesh.locate(c), Some(cell));
                    }
                }
            }
        }
    }
}
