//! Bravais lattices, neighbourhood sets and finite supercell domains.
//!
//! Sites are stored by their integer coordinates `n` with position `A n`.
//! Everything here is immutable after construction.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Integer lattice coordinates of a site (or of a lattice direction).
pub type Site = [i64; 2];
pub type Vec2 = [f64; 2];
pub type Mat2 = [[f64; 2]; 2];

const SQRT3: f64 = 1.732_050_807_568_877_2;
const INTEGRALITY_TOL: f64 = 1e-9;

/// Slip period of the projected BCC lattice, `3 / (2 sqrt 2)`.
pub const BCC_PERIOD: f64 = 1.060_660_171_779_821_2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LatticeKind {
    Square,
    Triangular,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CoreChoice {
    /// Centre of a square cell or barycentre of an up-triangle.
    Symmetric,
    /// Arbitrary core position in Cartesian lattice units.
    Custom(Vec2),
}

pub fn mat_vec(m: &Mat2, v: Vec2) -> Vec2 {
    [m[0][0] * v[0] + m[0][1] * v[1], m[1][0] * v[0] + m[1][1] * v[1]]
}

pub fn mat_mul(a: &Mat2, b: &Mat2) -> Mat2 {
    let mut c = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    c
}

pub fn rotation(angle: f64) -> Mat2 {
    let (s, c) = angle.sin_cos();
    [[c, -s], [s, c]]
}

pub fn norm(v: Vec2) -> f64 {
    v[0].hypot(v[1])
}

/// A two-dimensional Bravais lattice together with a dislocation core and
/// its rotation symmetry.
#[derive(Clone, Debug, PartialEq)]
pub struct LatticeSpec {
    pub kind: LatticeKind,
    /// Generator matrix; columns are the primitive vectors.
    pub a: Mat2,
    pub core: Vec2,
    pub rot_order: usize,
    /// Rotation by `2 pi / rot_order`.
    pub q: Mat2,
    /// Whether `L x = Q (x - core) + core` maps the lattice onto itself.
    pub symmetric_core: bool,
    a_inv: Mat2,
    q_int: [[i64; 2]; 2],
}

impl LatticeSpec {
    pub fn new(kind: LatticeKind, core: CoreChoice) -> Result<Self> {
        let (a, rot_order, symmetric) = match kind {
            LatticeKind::Square => ([[1.0, 0.0], [0.0, 1.0]], 4, [0.5, 0.5]),
            LatticeKind::Triangular => ([[1.0, 0.5], [0.0, SQRT3 / 2.0]], 3, [0.5, SQRT3 / 6.0]),
        };
        let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
        let a_inv = [[a[1][1] / det, -a[0][1] / det], [-a[1][0] / det, a[0][0] / det]];
        let q = rotation(2.0 * std::f64::consts::PI / rot_order as f64);

        // Q expressed in integer coordinates, A^-1 Q A.
        let qf = mat_mul(&a_inv, &mat_mul(&q, &a));
        let mut q_int = [[0i64; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                let r = qf[i][j].round();
                if (qf[i][j] - r).abs() > INTEGRALITY_TOL {
                    return Err(Error::BadRotation(format!(
                        "rotation of order {rot_order} does not preserve the {kind:?} lattice"
                    )));
                }
                q_int[i][j] = r as i64;
            }
        }

        let core = match core {
            CoreChoice::Symmetric => symmetric,
            CoreChoice::Custom(c) => c,
        };
        let mut spec = LatticeSpec { kind, a, core, rot_order, q, symmetric_core: false, a_inv, q_int };

        let lc = spec.to_lattice_coords(core);
        if (lc[0] - lc[0].round()).abs() < INTEGRALITY_TOL && (lc[1] - lc[1].round()).abs() < INTEGRALITY_TOL {
            return Err(Error::CoreOnSite(core));
        }
        spec.symmetric_core = [[0, 0], [1, 0], [0, 1]].iter().all(|&x| spec.rotate_site(x).is_ok());
        Ok(spec)
    }

    pub fn det(&self) -> f64 {
        self.a[0][0] * self.a[1][1] - self.a[0][1] * self.a[1][0]
    }

    /// Cartesian position of a site or direction.
    pub fn position(&self, x: Site) -> Vec2 {
        mat_vec(&self.a, [x[0] as f64, x[1] as f64])
    }

    pub fn to_lattice_coords(&self, p: Vec2) -> Vec2 {
        mat_vec(&self.a_inv, p)
    }

    /// Offset of a site from the dislocation core.
    pub fn offset(&self, x: Site) -> Vec2 {
        let p = self.position(x);
        [p[0] - self.core[0], p[1] - self.core[1]]
    }

    /// Rotates a lattice direction by `Q`.
    pub fn rotate_dir(&self, rho: Site) -> Site {
        let q = &self.q_int;
        [q[0][0] * rho[0] + q[0][1] * rho[1], q[1][0] * rho[0] + q[1][1] * rho[1]]
    }

    /// `L x = Q (x - core) + core`.
    pub fn rotate_site(&self, x: Site) -> Result<Site> {
        let d = self.offset(x);
        let r = mat_vec(&self.q, d);
        let lc = self.to_lattice_coords([r[0] + self.core[0], r[1] + self.core[1]]);
        let n = [lc[0].round(), lc[1].round()];
        if (lc[0] - n[0]).abs() > INTEGRALITY_TOL || (lc[1] - n[1]).abs() > INTEGRALITY_TOL {
            return Err(Error::NotOnLattice(x));
        }
        Ok([n[0] as i64, n[1] as i64])
    }

    /// Nearest-neighbour directions (4 on the square, 6 on the triangular lattice).
    pub fn nearest_neighbors(&self) -> NeighborSet {
        let dirs = match self.kind {
            LatticeKind::Square => vec![[1, 0], [0, 1], [-1, 0], [0, -1]],
            LatticeKind::Triangular => vec![[1, 0], [0, 1], [-1, 1], [-1, 0], [0, -1], [1, -1]],
        };
        NeighborSet { dirs, lifts: Vec::new(), vertical: Vec::new(), cutoff: 1.0 }
    }
}

/// A three-dimensional neighbour `sigma = (rho, z)` of the projected BCC lattice.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Lift {
    pub rho: Site,
    pub z: f64,
}

/// Interaction neighbourhood `R`.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborSet {
    /// In-plane directions in integer lattice coordinates.
    pub dirs: Vec<Site>,
    /// Lifted 3D neighbours with `rho != 0` inside the cutoff (projected models only).
    pub lifts: Vec<Lift>,
    /// Heights of purely vertical neighbours (`rho = 0`) inside the cutoff.
    pub vertical: Vec<f64>,
    pub cutoff: f64,
}

impl NeighborSet {
    pub fn len(&self) -> usize {
        self.dirs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dirs.is_empty()
    }

    pub fn position_of(&self, dir: Site) -> Option<usize> {
        self.dirs.iter().position(|&d| d == dir)
    }

    /// Largest in-plane neighbour distance.
    pub fn max_length(&self, spec: &LatticeSpec) -> f64 {
        self.dirs.iter().map(|&d| norm(spec.position(d))).fold(0.0, f64::max)
    }

    /// Permutation `perm[i] = j` with `dirs[j] = map(dirs[i])`, if `dirs` is
    /// closed under `map`.
    pub fn permutation(&self, map: impl Fn(Site) -> Site) -> Option<Vec<usize>> {
        self.dirs.iter().map(|&d| self.position_of(map(d))).collect()
    }
}

/// Generator of the rescaled BCC lattice whose `e3` axis is the `[111]` direction.
pub fn bcc_generator() -> [[f64; 3]; 3] {
    let s = 1.0 / (2.0 * std::f64::consts::SQRT_2);
    [[1.0, 0.5, 0.0], [0.0, SQRT3 / 2.0, 0.0], [s, -s, 3.0 * s]]
}

/// Height offset of the BCC column above the in-plane direction `rho`,
/// reduced into `(-p/2, p/2]`.
pub fn bcc_height(rho: Site) -> f64 {
    let z = (rho[0] - rho[1]) as f64 / (2.0 * std::f64::consts::SQRT_2);
    wrap_period(z, BCC_PERIOD)
}

/// Representative of `x` modulo `p` in `(-p/2, p/2]`.
pub fn wrap_period(x: f64, p: f64) -> f64 {
    let mut r = x - p * (x / p).round();
    if r <= -0.5 * p {
        r += p;
    } else if r > 0.5 * p {
        r -= p;
    }
    r
}

/// First-shell distance of the rescaled BCC lattice (equal to the slip period).
pub fn bcc_first_shell() -> f64 {
    BCC_PERIOD
}

/// Enumerates the projected BCC neighbourhood for cutoff `d`.
///
/// `dirs` holds every in-plane direction with `0 < |rho| < d`, since the
/// vertical offset of a bond can be shifted by any multiple of the period.
/// `lifts` and `vertical` hold the 3D neighbours with `|sigma| < d` in the
/// undeformed crystal.
pub fn bcc_lifts(cutoff: f64) -> Result<NeighborSet> {
    if cutoff < 1.0 {
        return Err(Error::Config(format!("BCC cutoff {cutoff} must be at least 1")));
    }
    let m = bcc_generator();
    let tri = LatticeSpec::new(LatticeKind::Triangular, CoreChoice::Symmetric)?;
    let k = (cutoff * 2.0).ceil() as i64 + 2;
    let mut lifts = Vec::new();
    let mut vertical = Vec::new();
    for n1 in -k..=k {
        for n2 in -k..=k {
            for n3 in -k..=k {
                if (n1, n2, n3) == (0, 0, 0) {
                    continue;
                }
                let n = [n1 as f64, n2 as f64, n3 as f64];
                let s: Vec<f64> = (0..3).map(|i| m[i][0] * n[0] + m[i][1] * n[1] + m[i][2] * n[2]).collect();
                let len = (s[0] * s[0] + s[1] * s[1] + s[2] * s[2]).sqrt();
                if len >= cutoff {
                    continue;
                }
                if n1 == 0 && n2 == 0 {
                    vertical.push(s[2]);
                } else {
                    lifts.push(Lift { rho: [n1, n2], z: s[2] });
                }
            }
        }
    }
    vertical.sort_by(f64::total_cmp);
    lifts.sort_by(|a, b| a.rho.cmp(&b.rho).then(a.z.total_cmp(&b.z)));

    let mut dirs = BTreeSet::new();
    for n1 in -k..=k {
        for n2 in -k..=k {
            if (n1, n2) != (0, 0) && norm(tri.position([n1, n2])) < cutoff {
                dirs.insert([n1, n2]);
            }
        }
    }
    // Keep the nearest-neighbour ordering for the first shell.
    let mut ordered: Vec<Site> = tri.nearest_neighbors().dirs.into_iter().filter(|d| dirs.contains(d)).collect();
    let rest: Vec<Site> = dirs.into_iter().filter(|d| !ordered.contains(d)).collect();
    ordered.extend(rest);
    Ok(NeighborSet { dirs: ordered, lifts, vertical, cutoff })
}

/// Dense lookup from integer coordinates to an index over a bounding box.
#[derive(Clone, Debug, PartialEq)]
pub struct SiteIndex {
    lo: Site,
    extent: [usize; 2],
    slots: Vec<u32>,
}

const EMPTY: u32 = u32::MAX;

impl SiteIndex {
    pub fn new(sites: &[Site]) -> Self {
        if sites.is_empty() {
            return SiteIndex { lo: [0, 0], extent: [0, 0], slots: Vec::new() };
        }
        let mut lo = sites[0];
        let mut hi = sites[0];
        for s in sites {
            for k in 0..2 {
                lo[k] = lo[k].min(s[k]);
                hi[k] = hi[k].max(s[k]);
            }
        }
        let extent = [(hi[0] - lo[0] + 1) as usize, (hi[1] - lo[1] + 1) as usize];
        let mut slots = vec![EMPTY; extent[0] * extent[1]];
        for (i, s) in sites.iter().enumerate() {
            let p = (s[0] - lo[0]) as usize * extent[1] + (s[1] - lo[1]) as usize;
            slots[p] = i as u32;
        }
        SiteIndex { lo, extent, slots }
    }

    pub fn get(&self, x: Site) -> Option<usize> {
        let i = x[0] - self.lo[0];
        let j = x[1] - self.lo[1];
        if i < 0 || j < 0 || i as usize >= self.extent[0] || j as usize >= self.extent[1] {
            return None;
        }
        match self.slots[i as usize * self.extent[1] + j as usize] {
            EMPTY => None,
            k => Some(k as usize),
        }
    }
}

/// Supercell `Omega_R = B_R(core) ∩ Λ`, sites ordered lexicographically.
#[derive(Clone, Debug, PartialEq)]
pub struct Domain {
    pub spec: LatticeSpec,
    pub radius: f64,
    pub sites: Vec<Site>,
    index: SiteIndex,
}

/// Smallest admissible supercell radius (one nearest-neighbour spacing).
pub const MIN_DOMAIN_RADIUS: f64 = 1.0;

impl Domain {
    pub fn ball(spec: &LatticeSpec, radius: f64) -> Result<Self> {
        if !(radius >= MIN_DOMAIN_RADIUS) {
            return Err(Error::DomainTooSmall { radius, min: MIN_DOMAIN_RADIUS });
        }
        let sites = sites_within(spec, radius);
        let index = SiteIndex::new(&sites);
        Ok(Domain { spec: spec.clone(), radius, sites, index })
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn index_of(&self, x: Site) -> Option<usize> {
        self.index.get(x)
    }

    /// Distance of site `i` from the core.
    pub fn radius_of(&self, i: usize) -> f64 {
        norm(self.spec.offset(self.sites[i]))
    }
}

/// All sites with `|A n - core| <= radius`, in lexicographic order.
pub fn sites_within(spec: &LatticeSpec, radius: f64) -> Vec<Site> {
    let c = spec.to_lattice_coords(spec.core);
    let a_inv = spec.to_lattice_coords([1.0, 0.0]);
    let b_inv = spec.to_lattice_coords([0.0, 1.0]);
    // Half-widths of the bounding box of the ball in lattice coordinates.
    let w0 = radius * a_inv[0].hypot(b_inv[0]) + 1.0;
    let w1 = radius * a_inv[1].hypot(b_inv[1]) + 1.0;
    let mut sites = Vec::new();
    for i in (c[0] - w0).floor() as i64..=(c[0] + w0).ceil() as i64 {
        for j in (c[1] - w1).floor() as i64..=(c[1] + w1).ceil() as i64 {
            if norm(spec.offset([i, j])) <= radius {
                sites.push([i, j]);
            }
        }
    }
    sites
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tri() -> LatticeSpec {
        LatticeSpec::new(LatticeKind::Triangular, CoreChoice::Symmetric).unwrap()
    }

    fn square() -> LatticeSpec {
        LatticeSpec::new(LatticeKind::Square, CoreChoice::Symmetric).unwrap()
    }

    #[test]
    fn symmetric_cores() {
        let t = tri();
        assert_eq!(t.a, [[1.0, 0.5], [0.0, 3f64.sqrt() / 2.0]]);
        assert!((t.core[0] - 0.5).abs() < 1e-15 && (t.core[1] - 3f64.sqrt() / 6.0).abs() < 1e-15);
        assert_eq!(t.rot_order, 3);
        assert!(t.symmetric_core);

        let s = square();
        assert_eq!(s.core, [0.5, 0.5]);
        assert_eq!(s.rot_order, 4);
        assert!(s.symmetric_core);
    }

    #[test]
    fn custom_core() {
        let t = LatticeSpec::new(LatticeKind::Triangular, CoreChoice::Custom([0.25, 0.125])).unwrap();
        assert_eq!(t.core, [0.25, 0.125]);
        assert_eq!(t.a, tri().a);
        assert!(!t.symmetric_core);
        assert!(matches!(t.rotate_site([0, 0]), Err(Error::NotOnLattice(_))));
    }

    #[test]
    fn core_on_site_rejected() {
        let r = LatticeSpec::new(LatticeKind::Triangular, CoreChoice::Custom([1.5, 3f64.sqrt() / 2.0]));
        assert!(matches!(r, Err(Error::CoreOnSite(_))));
        let r = LatticeSpec::new(LatticeKind::Square, CoreChoice::Custom([2.0, -1.0]));
        assert!(matches!(r, Err(Error::CoreOnSite(_))));
    }

    #[test]
    fn square_rotation_cycle() {
        let s = square();
        let mut x = [0, 0];
        let expect = [[1, 0], [1, 1], [0, 1], [0, 0]];
        for e in expect {
            x = s.rotate_site(x).unwrap();
            assert_eq!(x, e);
        }
    }

    #[test]
    fn triangular_rotation_has_order_three() {
        let t = tri();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let x = [rng.random_range(-50..50), rng.random_range(-50..50)];
            let y = t.rotate_site(t.rotate_site(t.rotate_site(x).unwrap()).unwrap()).unwrap();
            assert_eq!(x, y);
            assert_ne!(t.rotate_site(x).unwrap(), x);
        }
    }

    #[test]
    fn unit_ball_around_square_centre() {
        let d = Domain::ball(&square(), 1.0).unwrap();
        assert_eq!(d.sites, vec![[0, 0], [0, 1], [1, 0], [1, 1]]);
    }

    #[test]
    fn radius_too_small() {
        assert!(matches!(Domain::ball(&square(), 0.5), Err(Error::DomainTooSmall { .. })));
    }

    #[test]
    fn square_count_matches_brute_force() {
        let d = Domain::ball(&square(), 50.0).unwrap();
        let mut count = 0;
        for i in -60..=60i64 {
            for j in -60..=60i64 {
                let (x, y) = (i as f64 - 0.5, j as f64 - 0.5);
                if x * x + y * y <= 2500.0 {
                    count += 1;
                }
            }
        }
        assert_eq!(d.len(), count);
    }

    #[test]
    fn triangular_count_matches_area_density() {
        let t = tri();
        let d = Domain::ball(&t, 50.0).unwrap();
        let expect = std::f64::consts::PI * 2500.0 / t.det();
        assert!((d.len() as f64 / expect - 1.0).abs() < 0.03);
    }

    #[test]
    fn domain_is_deterministic_and_sorted() {
        let t = tri();
        let a = Domain::ball(&t, 20.0).unwrap();
        let b = Domain::ball(&t, 20.0).unwrap();
        assert_eq!(a.sites, b.sites);
        assert!(a.sites.windows(2).all(|w| w[0] < w[1]));
        for (i, &s) in a.sites.iter().enumerate() {
            assert_eq!(a.index_of(s), Some(i));
        }
        assert_eq!(a.index_of([1000, 0]), None);
    }

    #[test]
    fn rotation_is_a_bijection_of_the_ball() {
        for spec in [tri(), square()] {
            let d = Domain::ball(&spec, 17.3).unwrap();
            let mut hit = vec![false; d.len()];
            for &x in &d.sites {
                let y = spec.rotate_site(x).unwrap();
                let k = d.index_of(y).expect("image stays inside the ball");
                assert!(!hit[k]);
                hit[k] = true;
            }
        }
    }

    #[test]
    fn nearest_neighbours_are_symmetric() {
        for spec in [tri(), square()] {
            let n = spec.nearest_neighbors();
            assert!(n.permutation(|d| spec.rotate_dir(d)).is_some());
            assert!(n.permutation(|d| [-d[0], -d[1]]).is_some());
            for &d in &n.dirs {
                assert!((norm(spec.position(d)) - 1.0).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn bcc_first_shell_has_coordination_eight() {
        let n = bcc_lifts(1.3 * bcc_first_shell()).unwrap();
        // Brute force over the 3D lattice, independent of the lift bookkeeping.
        let m = bcc_generator();
        let mut dists = Vec::new();
        for a in -3..=3i64 {
            for b in -3..=3i64 {
                for c in -3..=3i64 {
                    if (a, b, c) != (0, 0, 0) {
                        let v: Vec<f64> =
                            (0..3).map(|i| m[i][0] * a as f64 + m[i][1] * b as f64 + m[i][2] * c as f64).collect();
                        dists.push((v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt());
                    }
                }
            }
        }
        let min = dists.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!((min - 3.0 / (2.0 * 2f64.sqrt())).abs() < 1e-12);
        assert_eq!(dists.iter().filter(|&&d| (d - min).abs() < 1e-9).count(), 8);

        let in_lifts = n.lifts.iter().filter(|l| {
            let p = tri().position(l.rho);
            ((p[0] * p[0] + p[1] * p[1] + l.z * l.z).sqrt() - min).abs() < 1e-9
        });
        let vertical = n.vertical.iter().filter(|z| (z.abs() - min).abs() < 1e-9).count();
        assert_eq!(in_lifts.count() + vertical, 8);
        // Default cutoff keeps the first two shells: 8 + 6.
        assert_eq!(n.lifts.len() + n.vertical.len(), 14);
        assert_eq!(n.dirs.len(), 6);
    }

    #[test]
    fn bcc_lifts_symmetries() {
        let t = tri();
        let s = [[0.5, 3f64.sqrt() / 2.0], [3f64.sqrt() / 2.0, -0.5]];
        for d in [1.1, 1.379, 1.9, 2.2] {
            let n = bcc_lifts(d).unwrap();
            assert!(n.permutation(|r| t.rotate_dir(r)).is_some());
            let reflect = |r: Site| {
                let p = mat_vec(&s, t.position(r));
                let l = t.to_lattice_coords(p);
                [l[0].round() as i64, l[1].round() as i64]
            };
            assert!(n.permutation(reflect).is_some());
            let mut sum = [0i64; 2];
            for l in &n.lifts {
                assert!(n.lifts.iter().any(|m| m.rho == [-l.rho[0], -l.rho[1]] && (m.z + l.z).abs() < 1e-12));
                sum[0] += l.rho[0];
                sum[1] += l.rho[1];
            }
            assert_eq!(sum, [0, 0]);
        }
    }

    #[test]
    fn bcc_heights_match_lifts() {
        let n = bcc_lifts(2.5).unwrap();
        for l in &n.lifts {
            assert!(wrap_period(l.z - bcc_height(l.rho), BCC_PERIOD).abs() < 1e-12);
        }
    }

    #[test]
    fn wrap_period_range() {
        assert_eq!(wrap_period(0.5, 1.0), 0.5);
        assert_eq!(wrap_period(-0.5, 1.0), 0.5);
        assert!((wrap_period(0.9, 1.0) + 0.1).abs() < 1e-15);
        assert!((wrap_period(-2.3, 1.0) + 0.3).abs() < 1e-12);
    }
}
