//! Morphological complexity metrics of a voxel genome.
//!
//! * heterogeneity: Shannon entropy of the non-empty material mix, divided
//!   by `ln 4` so it lies in `[0, 1]`.
//! * connectivity: mean 4-neighbour degree of non-empty voxels, in `[0, 4]`.
//! * symmetry: mean of `1 - |code(p) - code(p')| / 4` over all cells, where
//!   `p'` is the reflection of `p` across the configured axis.
//! * actuator dispersion: RMS Euclidean distance of actuator voxel centres
//!   `(row, col)` to their centroid.
//!
//! Normalization uses per-grid-size theoretical maxima so that composite
//! values compare across runs: connectivity / 4 and dispersion / (diag / 2)
//! with `diag = sqrt((W-1)^2 + (H-1)^2)`. A zero denominator normalizes to 0.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::genome::{Genome, VoxelType};
use crate::scalar::Scalar;

/// Number of non-empty materials, the entropy normalizer's base.
const MATERIAL_TYPES: usize = 4;

/// Reflection used by [`symmetry`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SymmetryAxis {
    /// Left-right mirror across the vertical mid-line.
    #[default]
    Vertical,
    /// Top-bottom mirror across the horizontal mid-line.
    Horizontal,
    /// Matrix transpose; cells whose image falls outside a non-square grid
    /// are compared against an empty voxel.
    Transpose,
}

impl FromStr for SymmetryAxis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "vertical" => Ok(SymmetryAxis::Vertical),
            "horizontal" => Ok(SymmetryAxis::Horizontal),
            "transpose" => Ok(SymmetryAxis::Transpose),
            other => Err(format!(
                "unknown symmetry axis `{other}` (expected vertical|horizontal|transpose)"
            )),
        }
    }
}

impl fmt::Display for SymmetryAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SymmetryAxis::Vertical => "vertical",
            SymmetryAxis::Horizontal => "horizontal",
            SymmetryAxis::Transpose => "transpose",
        })
    }
}

/// Raw and normalized morphology metrics of one genome.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MorphoMetrics<T> {
    pub heterogeneity: T,
    pub connectivity: T,
    pub symmetry: T,
    pub actuator_dispersion: T,
    pub het_norm: T,
    pub conn_norm: T,
    pub sym_norm: T,
    pub act_norm: T,
    pub composite: T,
}

impl<T: Scalar> MorphoMetrics<T> {
    pub fn compute(g: &Genome) -> Self {
        Self::compute_with_axis(g, SymmetryAxis::Vertical)
    }

    pub fn compute_with_axis(g: &Genome, axis: SymmetryAxis) -> Self {
        let heterogeneity = heterogeneity::<T>(g);
        let connectivity = connectivity::<T>(g);
        let symmetry = symmetry_about::<T>(g, axis);
        let actuator_dispersion = actuator_dispersion::<T>(g);

        let max_disp = max_dispersion::<T>(g.width(), g.height());
        let act_norm = if max_disp > T::zero() {
            (actuator_dispersion / max_disp).min(T::one())
        } else {
            T::zero()
        };
        let het_norm = heterogeneity;
        let conn_norm = connectivity / T::of(4.0);
        let sym_norm = symmetry;
        let composite = (het_norm + conn_norm + sym_norm + act_norm) / T::of(4.0);
        MorphoMetrics {
            heterogeneity,
            connectivity,
            symmetry,
            actuator_dispersion,
            het_norm,
            conn_norm,
            sym_norm,
            act_norm,
            composite,
        }
    }

    /// Normalized values in archive-feature order.
    pub fn normalized(&self) -> [T; 4] {
        [self.het_norm, self.conn_norm, self.sym_norm, self.act_norm]
    }
}

/// Largest possible RMS distance to the centroid for points on the grid.
pub fn max_dispersion<T: Scalar>(width: usize, height: usize) -> T {
    let dw = T::of_usize(width - 1);
    let dh = T::of_usize(height - 1);
    (dw * dw + dh * dh).sqrt() / T::of(2.0)
}

pub fn heterogeneity<T: Scalar>(g: &Genome) -> T {
    let mut counts = [0usize; MATERIAL_TYPES];
    let mut total = 0usize;
    for (_, _, v) in g.voxels() {
        counts[v.code() as usize - 1] += 1;
        total += 1;
    }
    if total == 0 {
        return T::zero();
    }
    let n = T::of_usize(total);
    let entropy: T = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = T::of_usize(c) / n;
            -p * p.ln()
        })
        .sum();
    // clamp away the -0.0 of a single-material body
    (entropy / T::of_usize(MATERIAL_TYPES).ln()).max(T::zero())
}

pub fn connectivity<T: Scalar>(g: &Genome) -> T {
    let (w, h) = (g.width(), g.height());
    let mut voxels = 0usize;
    let mut degree_sum = 0usize;
    for (r, c, _) in g.voxels() {
        voxels += 1;
        let filled = |rr: usize, cc: usize| !g.get(rr, cc).is_empty();
        degree_sum += usize::from(r > 0 && filled(r - 1, c))
            + usize::from(r + 1 < h && filled(r + 1, c))
            + usize::from(c > 0 && filled(r, c - 1))
            + usize::from(c + 1 < w && filled(r, c + 1));
    }
    if voxels == 0 {
        return T::zero();
    }
    T::of_usize(degree_sum) / T::of_usize(voxels)
}

/// Left-right symmetry score.
pub fn symmetry<T: Scalar>(g: &Genome) -> T {
    symmetry_about(g, SymmetryAxis::Vertical)
}

pub fn symmetry_about<T: Scalar>(g: &Genome, axis: SymmetryAxis) -> T {
    let (w, h) = (g.width(), g.height());
    let vmax = T::of(VoxelType::MAX_CODE as f64);
    let mut sum = T::zero();
    for r in 0..h {
        for c in 0..w {
            let here = g.get(r, c).code();
            let there = match axis {
                SymmetryAxis::Vertical => g.get(r, w - 1 - c).code(),
                SymmetryAxis::Horizontal => g.get(h - 1 - r, c).code(),
                SymmetryAxis::Transpose => {
                    if c < h && r < w {
                        g.get(c, r).code()
                    } else {
                        VoxelType::Empty.code()
                    }
                }
            };
            let diff = T::of(here.abs_diff(there) as f64);
            sum += T::one() - diff / vmax;
        }
    }
    sum / T::of_usize(w * h)
}

pub fn actuator_dispersion<T: Scalar>(g: &Genome) -> T {
    let positions: Vec<(T, T)> = g
        .voxels()
        .filter(|(_, _, v)| v.is_actuator())
        .map(|(r, c, _)| (T::of_usize(r), T::of_usize(c)))
        .collect();
    if positions.is_empty() {
        return T::zero();
    }
    let n = T::of_usize(positions.len());
    let mr = positions.iter().map(|p| p.0).sum::<T>() / n;
    let mc = positions.iter().map(|p| p.1).sum::<T>() / n;
    let msd = positions
        .iter()
        .map(|&(r, c)| (r - mr) * (r - mr) + (c - mc) * (c - mc))
        .sum::<T>()
        / n;
    msd.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn g(w: usize, h: usize, codes: &[u8]) -> Genome {
        Genome::from_codes(w, h, codes)
    }

    #[test]
    fn heterogeneity_examples() {
        assert_eq!(heterogeneity::<f64>(&g(2, 2, &[2, 2, 2, 2])), 0.0);
        assert_abs_diff_eq!(heterogeneity::<f64>(&g(2, 1, &[1, 3])), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(heterogeneity::<f64>(&g(2, 2, &[1, 2, 3, 4])), 1.0, epsilon = 1e-15);
        // empties do not count as a material
        assert_abs_diff_eq!(heterogeneity::<f64>(&g(3, 1, &[1, 3, 0])), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn connectivity_examples() {
        assert_eq!(connectivity::<f64>(&g(1, 1, &[3])), 0.0);
        assert_eq!(connectivity::<f64>(&g(2, 2, &[1, 2, 3, 4])), 2.0);
        assert_eq!(connectivity::<f64>(&g(3, 3, &[3; 9])), 24.0 / 9.0);
    }

    #[test]
    fn symmetry_examples() {
        assert_eq!(symmetry::<f64>(&g(3, 2, &[1, 3, 1, 4, 0, 4])), 1.0);
        assert_eq!(symmetry::<f64>(&g(2, 1, &[0, 4])), 0.0);
        assert_abs_diff_eq!(symmetry::<f64>(&g(3, 1, &[1, 2, 3])), 2.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn other_axes() {
        // top-bottom mirror image
        let tb = g(2, 2, &[3, 1, 3, 1]);
        assert_eq!(symmetry_about::<f64>(&tb, SymmetryAxis::Horizontal), 1.0);
        assert!(symmetry_about::<f64>(&tb, SymmetryAxis::Vertical) < 1.0);
        let t = g(2, 2, &[3, 1, 1, 4]);
        assert_eq!(symmetry_about::<f64>(&t, SymmetryAxis::Transpose), 1.0);
        // non-square transpose: (0,1) and (0,2) map outside the 3x1 grid
        let wide = g(3, 1, &[4, 4, 4]);
        assert_abs_diff_eq!(
            symmetry_about::<f64>(&wide, SymmetryAxis::Transpose),
            1.0 / 3.0,
            epsilon = 1e-15
        );
        assert_eq!("transpose".parse::<SymmetryAxis>().unwrap(), SymmetryAxis::Transpose);
        assert!("diagonal".parse::<SymmetryAxis>().is_err());
    }

    #[test]
    fn dispersion_examples() {
        assert_eq!(actuator_dispersion::<f64>(&g(3, 3, &[1, 1, 1, 1, 4, 1, 1, 1, 1])), 0.0);
        assert_eq!(actuator_dispersion::<f64>(&g(3, 1, &[3, 1, 4])), 1.0);
        assert_abs_diff_eq!(
            actuator_dispersion::<f64>(&g(3, 3, &[3, 1, 3, 1, 1, 1, 4, 1, 4])),
            2f64.sqrt(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn single_voxel_composite() {
        let m = MorphoMetrics::<f64>::compute(&g(1, 1, &[3]));
        assert_eq!(m.normalized(), [0.0, 0.0, 1.0, 0.0]);
        assert_eq!(m.composite, 0.25);
    }

    #[test]
    fn symmetric_five_by_five_composite() {
        // alternating rigid/soft, columns 0 and 4 made horizontal actuators
        #[rustfmt::skip]
        let codes = [
            3, 2, 1, 2, 3,
            3, 1, 2, 1, 3,
            3, 2, 1, 2, 3,
            3, 1, 2, 1, 3,
            3, 2, 1, 2, 3,
        ];
        let genome = g(5, 5, &codes);
        let m = MorphoMetrics::<f64>::compute(&genome);
        // by hand: materials 10 actuators, 8 soft, 7 rigid out of 25
        let p = [7.0 / 25.0, 8.0 / 25.0, 10.0 / 25.0];
        let het = -p.iter().map(|x: &f64| x * x.ln()).sum::<f64>() / 4f64.ln();
        let conn = (4.0 * 2.0 + 12.0 * 3.0 + 9.0 * 4.0) / 25.0;
        let sym = 1.0;
        // actuators at columns 0 and 4, rows 0..5: centroid (2, 2)
        let msd = (0..5)
            .map(|r| 2.0 * ((r as f64 - 2.0).powi(2) + 4.0))
            .sum::<f64>()
            / 10.0;
        let disp = msd.sqrt();
        let act = disp / (32f64.sqrt() / 2.0);
        let expected = (het + conn / 4.0 + sym + act) / 4.0;
        assert_abs_diff_eq!(m.composite, expected, epsilon = 1e-14);
        assert_abs_diff_eq!(m.heterogeneity, het, epsilon = 1e-14);
    }

    #[test]
    fn f32_agrees_with_f64() {
        let genome = g(3, 2, &[1, 3, 2, 4, 0, 4]);
        let a = MorphoMetrics::<f64>::compute(&genome);
        let b = MorphoMetrics::<f32>::compute(&genome);
        assert!((a.composite - b.composite as f64).abs() < 1e-6);
    }

    fn arb_genome() -> impl Strategy<Value = Genome> {
        (1usize..=6, 1usize..=6, any::<u64>())
            .prop_map(|(w, h, s)| crate::genome::random_genome(w, h, s).unwrap())
    }

    proptest! {
        #[test]
        fn bounds_hold(genome in arb_genome()) {
            let m = MorphoMetrics::<f64>::compute(&genome);
            prop_assert!((0.0..=1.0).contains(&m.heterogeneity));
            prop_assert!((0.0..=4.0).contains(&m.connectivity));
            prop_assert!((0.0..=1.0).contains(&m.symmetry));
            let cap = max_dispersion::<f64>(genome.width(), genome.height());
            prop_assert!(m.actuator_dispersion <= cap + 1e-12);
            prop_assert!((0.0..=1.0).contains(&m.composite));
        }

        #[test]
        fn symmetry_mirror_invariant(genome in arb_genome()) {
            prop_assert_eq!(symmetry::<f64>(&genome), symmetry::<f64>(&genome.mirrored()));
        }

        #[test]
        fn heterogeneity_relabel_invariant(genome in arb_genome(), perm in Just([2u8, 4, 1, 3]).prop_shuffle()) {
            let relabeled: Vec<u8> = genome
                .cells()
                .iter()
                .map(|v| if v.is_empty() { 0 } else { perm[v.code() as usize - 1] })
                .collect();
            let other = Genome::from_codes(genome.width(), genome.height(), &relabeled);
            let a = heterogeneity::<f64>(&genome);
            let b = heterogeneity::<f64>(&other);
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn dispersion_translation_invariant(genome in arb_genome(), dr in 0usize..4, dc in 0usize..4) {
            let (w, h) = (genome.width() + dc + 1, genome.height() + dr + 2);
            let mut codes = vec![0u8; w * h];
            for (r, c, v) in genome.voxels() {
                codes[(r + dr) * w + c + dc] = v.code();
            }
            let big = Genome::from_codes(w, h, &codes);
            let a = actuator_dispersion::<f64>(&genome);
            let b = actuator_dispersion::<f64>(&big);
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn composite_order_survives_common_scaling(a in arb_genome(), b in arb_genome(), k in 0.01f64..100.0) {
            let ma = MorphoMetrics::<f64>::compute(&a).normalized();
            let mb = MorphoMetrics::<f64>::compute(&b).normalized();
            let mean = |v: [f64; 4], s: f64| v.iter().map(|x| x * s).sum::<f64>() / 4.0;
            let before = mean(ma, 1.0).partial_cmp(&mean(mb, 1.0)).unwrap();
            let after = mean(ma, k).partial_cmp(&mean(mb, k)).unwrap();
            if (mean(ma, 1.0) - mean(mb, 1.0)).abs() > 1e-12 {
                prop_assert_eq!(before, after);
            }
        }
    }
}
