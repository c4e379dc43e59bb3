//! Exact composition of per-level residual densities into a full match
//! density, by enumerating every coarse-to-fine residual path per pixel.
//!
//! A pixel's path picks one residual cell at each level from the density
//! of its ancestor pixel at that level; the composed displacement is
//! `Σ 2^(L-l) g^l` and the path mass is the product of the chosen cell
//! masses. Equal displacements from different paths are summed. This is
//! meant for tiny grids, as an oracle.

use std::collections::BTreeMap;

use super::{MatchDensity, Splat, PROB_FLOOR};
use crate::error::{check_same_size, Hd3Error, Result};
use crate::field::{FieldKind, MotionField};

/// Default cap on path expansions per pixel.
pub const DEFAULT_PATH_BUDGET: usize = 1 << 20;

/// One composed displacement and its probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Atom {
    pub offset: [i32; 2],
    pub mass: f64,
}

/// Per-pixel distribution over composed integer displacements.
#[derive(Debug, Clone, PartialEq)]
pub struct FullDensity {
    width: usize,
    height: usize,
    kind: FieldKind,
    atoms: Vec<Vec<Atom>>,
    truncated: Vec<f64>,
    valid: Vec<bool>,
}

impl FullDensity {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn kind(&self) -> FieldKind {
        self.kind
    }

    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.valid[y * self.width + x]
    }

    /// Atoms of pixel `(x, y)`, sorted row-major by offset.
    pub fn atoms(&self, x: usize, y: usize) -> &[Atom] {
        &self.atoms[y * self.width + x]
    }

    /// Mass of paths whose composed displacement fell outside `max_support`.
    pub fn truncated(&self, x: usize, y: usize) -> f64 {
        self.truncated[y * self.width + x]
    }

    /// Retained mass at pixel `(x, y)`.
    pub fn total(&self, x: usize, y: usize) -> f64 {
        self.atoms(x, y).iter().map(|a| a.mass).sum()
    }

    pub fn mass_at(&self, x: usize, y: usize, d: [i32; 2]) -> f64 {
        let atoms = self.atoms(x, y);
        atoms
            .binary_search_by(|a| row_major(a.offset).cmp(&row_major(d)))
            .map(|i| atoms[i].mass)
            .unwrap_or(0.0)
    }

    /// Most probable atom; ties go to the row-major smallest offset.
    pub fn mode(&self, x: usize, y: usize) -> Option<Atom> {
        self.atoms(x, y).iter().fold(None, |best: Option<Atom>, a| match best {
            Some(b) if b.mass >= a.mass => Some(b),
            _ => Some(*a),
        })
    }
}

fn row_major(d: [i32; 2]) -> (i32, i32) {
    (d[1], d[0])
}

/// [`compose_full_density_with_budget`] with [`DEFAULT_PATH_BUDGET`].
pub fn compose_full_density(levels: &[MatchDensity], max_support: i32) -> Result<FullDensity> {
    compose_full_density_with_budget(levels, max_support, DEFAULT_PATH_BUDGET)
}

/// Enumerates all residual paths per finest-level pixel.
///
/// `levels[0]` is the coarsest level and each next level doubles the
/// resolution. Atoms with `max(|dx|, |dy|) > max_support` are dropped and
/// their mass reported through [`FullDensity::truncated`]. A pixel needing
/// more than `budget` path expansions is an error rather than a silent
/// truncation.
pub fn compose_full_density_with_budget(
    levels: &[MatchDensity],
    max_support: i32,
    budget: usize,
) -> Result<FullDensity> {
    let finest = levels
        .last()
        .ok_or_else(|| Hd3Error::InvalidParameter("no density levels".into()))?;
    let kind = finest.support().kind();
    let n = levels.len();
    for (l, level) in levels.iter().enumerate() {
        if level.support().kind() != kind {
            return Err(Hd3Error::SupportMismatch);
        }
        let s = 1usize << (n - 1 - l);
        check_same_size(
            (level.width() * s, level.height() * s),
            (finest.width(), finest.height()),
        )?;
    }

    let (w, h) = finest.size();
    let mut atoms = Vec::with_capacity(w * h);
    let mut truncated = Vec::with_capacity(w * h);
    let mut valid = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            match compose_pixel(levels, x, y, budget)? {
                Some(dist) => {
                    let mut kept = Vec::with_capacity(dist.len());
                    let mut lost = 0.0;
                    for ((dy, dx), mass) in dist {
                        if dx.abs().max(dy.abs()) > max_support {
                            lost += mass;
                        } else {
                            kept.push(Atom {
                                offset: [dx, dy],
                                mass,
                            });
                        }
                    }
                    atoms.push(kept);
                    truncated.push(lost);
                    valid.push(true);
                }
                None => {
                    atoms.push(Vec::new());
                    truncated.push(0.0);
                    valid.push(false);
                }
            }
        }
    }
    Ok(FullDensity {
        width: w,
        height: h,
        kind,
        atoms,
        truncated,
        valid,
    })
}

/// Distribution keyed by `(dy, dx)` so iteration is row-major.
fn compose_pixel(
    levels: &[MatchDensity],
    x: usize,
    y: usize,
    budget: usize,
) -> Result<Option<BTreeMap<(i32, i32), f64>>> {
    let n = levels.len();
    let mut dist: BTreeMap<(i32, i32), f64> = BTreeMap::new();
    dist.insert((0, 0), 1.0);
    let mut work = 0usize;
    for (l, level) in levels.iter().enumerate() {
        let s = n - 1 - l;
        let (ax, ay) = (x >> s, y >> s);
        if !level.is_valid(ax, ay) {
            return Ok(None);
        }
        let support = level.support();
        let cells: Vec<([i32; 2], f64)> = level
            .pixel(ax, ay)
            .iter()
            .enumerate()
            .filter(|(_, m)| **m > 0.0)
            .map(|(k, m)| (support.cell(k), *m))
            .collect();
        work = work.saturating_add(dist.len().saturating_mul(cells.len()));
        if work > budget {
            return Err(Hd3Error::BudgetExceeded {
                x,
                y,
                needed: work,
                budget,
            });
        }
        let mut next = BTreeMap::new();
        for (&(py, px), &pm) in &dist {
            for &(d, m) in &cells {
                *next.entry((2 * py + d[1], 2 * px + d[0])).or_insert(0.0) += pm * m;
            }
        }
        dist = next;
    }
    Ok(Some(dist))
}

/// Mean log-probability of the ground truth under a full density.
///
/// The probability at a real displacement is the bilinear re-weighting of
/// the masses on its containing 2×2 (2×1) integer window, floored at
/// [`PROB_FLOOR`]. Only pixels valid in both inputs count; returns an
/// error when there are none.
pub fn log_likelihood(p_full: &FullDensity, f_gt: &MotionField) -> Result<f64> {
    check_same_size((p_full.width, p_full.height), f_gt.size())?;
    let mut total = 0.0;
    let mut count = 0usize;
    for y in 0..p_full.height {
        for x in 0..p_full.width {
            let Some(v) = f_gt.value(x, y) else { continue };
            if !p_full.is_valid(x, y) {
                continue;
            }
            let prob: f64 = Splat::new(v, p_full.kind)
                .iter()
                .map(|(d, wt)| wt * p_full.mass_at(x, y, d))
                .sum();
            total += prob.max(PROB_FLOOR).ln();
            count += 1;
        }
    }
    if count == 0 {
        return Err(Hd3Error::EmptyRegion);
    }
    Ok(total / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::{v2d, Support};

    fn constant_density(w: usize, h: usize, support: Support, cells: &[([i32; 2], f64)]) -> MatchDensity {
        let mut m = vec![0.0; support.len()];
        for (d, p) in cells {
            m[support.index_of(*d).unwrap()] = *p;
        }
        MatchDensity::from_fn(w, h, support, |_, _| Some(m.clone())).unwrap()
    }

    #[test]
    fn single_level_is_the_density() {
        let s = Support::flow(1);
        let p = constant_density(2, 2, s, &[([0, 0], 0.25), ([1, -1], 0.75)]);
        let full = compose_full_density(std::slice::from_ref(&p), 10).unwrap();
        for y in 0..2 {
            for x in 0..2 {
                assert_eq!(full.mass_at(x, y, [0, 0]), 0.25);
                assert_eq!(full.mass_at(x, y, [1, -1]), 0.75);
                assert_eq!(full.atoms(x, y).len(), 2);
            }
        }
    }

    #[test]
    fn two_delta_levels_compose_to_one_atom() {
        let s = Support::flow(4);
        let coarse = constant_density(2, 2, s, &[([1, 0], 1.0)]);
        let fine = constant_density(4, 4, s, &[([1, -1], 1.0)]);
        let full = compose_full_density(&[coarse, fine], 64).unwrap();
        for y in 0..4 {
            for x in 0..4 {
                assert_eq!(full.atoms(x, y), &[Atom { offset: [3, -1], mass: 1.0 }]);
                assert_eq!(full.truncated(x, y), 0.0);
            }
        }
    }

    #[test]
    fn delta_then_two_point() {
        let s = Support::stereo(4);
        let coarse = constant_density(2, 1, s, &[([-2, 0], 1.0)]);
        let fine = constant_density(4, 2, s, &[([0, 0], 0.5), ([1, 0], 0.5)]);
        let full = compose_full_density(&[coarse, fine], 64).unwrap();
        assert_eq!(
            full.atoms(3, 1),
            &[
                Atom { offset: [-4, 0], mass: 0.5 },
                Atom { offset: [-3, 0], mass: 0.5 }
            ]
        );
    }

    #[test]
    fn merged_paths_sum() {
        // 2*1 + 0 and 2*0 + 2 land on the same displacement.
        let s = Support::stereo(2);
        let coarse = constant_density(1, 1, s, &[([0, 0], 0.5), ([1, 0], 0.5)]);
        let fine = constant_density(2, 2, s, &[([0, 0], 0.5), ([2, 0], 0.5)]);
        let full = compose_full_density(&[coarse, fine], 64).unwrap();
        assert_eq!(full.mass_at(0, 0, [2, 0]), 0.5);
        assert_eq!(full.mass_at(0, 0, [0, 0]), 0.25);
        assert_eq!(full.mass_at(0, 0, [4, 0]), 0.25);
        assert_eq!(full.mode(0, 0).unwrap().offset, [2, 0]);
    }

    #[test]
    fn truncation_is_reported() {
        let s = Support::stereo(2);
        let coarse = constant_density(1, 1, s, &[([2, 0], 0.5), ([0, 0], 0.5)]);
        let fine = constant_density(2, 2, s, &[([1, 0], 1.0)]);
        let full = compose_full_density(&[coarse, fine], 3).unwrap();
        assert_eq!(full.total(1, 1), 0.5);
        assert_eq!(full.truncated(1, 1), 0.5);
    }

    #[test]
    fn budget_is_enforced() {
        let s = Support::flow(4);
        let levels = vec![
            MatchDensity::uniform(1, 1, s),
            MatchDensity::uniform(2, 2, s),
            MatchDensity::uniform(4, 4, s),
        ];
        let err = compose_full_density_with_budget(&levels, 100, 10_000).unwrap_err();
        assert!(matches!(err, Hd3Error::BudgetExceeded { .. }));
    }

    #[test]
    fn resolution_mismatch_rejected() {
        let s = Support::flow(1);
        let levels = vec![MatchDensity::uniform(2, 2, s), MatchDensity::uniform(3, 4, s)];
        assert!(compose_full_density(&levels, 10).is_err());
    }

    #[test]
    fn invalid_ancestor_invalidates_pixel() {
        let s = Support::flow(1);
        let mut coarse = MatchDensity::uniform(2, 2, s);
        coarse.set_invalid(1, 0);
        let fine = MatchDensity::uniform(4, 4, s);
        let full = compose_full_density(&[coarse, fine], 10).unwrap();
        assert!(!full.is_valid(2, 1));
        assert!(full.is_valid(1, 1));
    }

    #[test]
    fn log_likelihood_examples() {
        let s = Support::flow(4);
        let delta = constant_density(1, 1, s, &[([2, -1], 1.0)]);
        let full = compose_full_density(std::slice::from_ref(&delta), 4).unwrap();
        let gt = MotionField::constant(1, 1, FieldKind::Flow, [2.0, -1.0]);
        assert_eq!(log_likelihood(&full, &gt).unwrap(), 0.0);

        let uni = MatchDensity::uniform(1, 1, Support::flow(1));
        let full = compose_full_density(std::slice::from_ref(&uni), 4).unwrap();
        let gt = MotionField::constant(1, 1, FieldKind::Flow, [1.0, 0.0]);
        assert!((log_likelihood(&full, &gt).unwrap() - (1.0f64 / 9.0).ln()).abs() < 1e-12);

        // Splat re-weighted by itself: 0.21² + 0.09² + 0.49² + 0.21² = 0.3364.
        let gt = MotionField::constant(1, 1, FieldKind::Flow, [0.3, 0.7]);
        let full = compose_full_density(&[v2d(&gt, s)], 4).unwrap();
        assert!((log_likelihood(&full, &gt).unwrap() - 0.3364f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn log_likelihood_floors_and_rejects_empty() {
        let s = Support::flow(1);
        let delta = constant_density(1, 1, s, &[([0, 0], 1.0)]);
        let full = compose_full_density(std::slice::from_ref(&delta), 4).unwrap();
        let far = MotionField::constant(1, 1, FieldKind::Flow, [7.0, 7.0]);
        assert!((log_likelihood(&full, &far).unwrap() - PROB_FLOOR.ln()).abs() < 1e-9);
        let none = MotionField::invalid(1, 1, FieldKind::Flow);
        assert!(matches!(log_likelihood(&full, &none), Err(Hd3Error::EmptyRegion)));
    }
}
