//! Piecewise-linear knot-point parameterization of input trajectories.
//!
//! `p` knots are spread evenly over steps `0..=T−1`; the first sits on step 0
//! and the last on step `T−1`. Each step input is a convex combination of at
//! most two neighbouring knots.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct KnotSchedule {
    horizon: usize,
    knots: usize,
}

/// Knot indices and blend factor for one step: `u_k = (1−c)·U[idx1] + c·U[idx2]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interp {
    pub idx1: usize,
    pub idx2: usize,
    pub c: f64,
}

impl KnotSchedule {
    pub fn new(horizon: usize, knots: usize) -> Result<Self> {
        if horizon == 0 {
            return Err(invalid("horizon", "must be at least 1"));
        }
        if knots == 0 || knots > horizon {
            return Err(invalid(
                "knots",
                format!("must lie in 1..={horizon}, got {knots}"),
            ));
        }
        Ok(Self { horizon, knots })
    }

    /// One knot per step, which is ordinary MPC.
    pub fn full(horizon: usize) -> Result<Self> {
        Self::new(horizon, horizon)
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn knots(&self) -> usize {
        self.knots
    }

    /// `None` for a single knot.
    pub fn spacing(&self) -> Option<f64> {
        (self.knots >= 2).then(|| (self.horizon - 1) as f64 / (self.knots - 1) as f64)
    }

    /// Exact in integer arithmetic, so knot positions never drift under
    /// rounding even when the spacing is fractional.
    pub fn coeffs(&self, k: usize) -> Result<Interp> {
        if k >= self.horizon {
            return Err(Error::StepOutOfRange {
                index: k,
                horizon: self.horizon,
            });
        }
        if self.knots == 1 {
            return Ok(Interp {
                idx1: 0,
                idx2: 0,
                c: 0.0,
            });
        }
        let num = k * (self.knots - 1);
        let den = self.horizon - 1;
        let idx1 = num / den;
        let rem = num - idx1 * den;
        if rem == 0 {
            Ok(Interp {
                idx1,
                idx2: idx1,
                c: 0.0,
            })
        } else {
            Ok(Interp {
                idx1,
                idx2: idx1 + 1,
                c: rem as f64 / den as f64,
            })
        }
    }

    /// `T×p` matrix with `expand(U) = W U`.
    pub fn weight_matrix(&self) -> DMatrix<f64> {
        let mut w = DMatrix::zeros(self.horizon, self.knots);
        for k in 0..self.horizon {
            let ic = self.coeffs(k).expect("k within horizon");
            w[(k, ic.idx1)] += 1.0 - ic.c;
            w[(k, ic.idx2)] += ic.c;
        }
        w
    }
}

pub fn knot_spacing(horizon: usize, knots: usize) -> Result<f64> {
    if knots < 2 {
        return Err(invalid("knots", "spacing needs at least two knots"));
    }
    KnotSchedule::new(horizon, knots)?
        .spacing()
        .ok_or_else(|| invalid("knots", "spacing needs at least two knots"))
}

/// Floating-point form of [`KnotSchedule::coeffs`] for a given spacing.
pub fn interp_coeffs(k: usize, spacing: f64) -> Interp {
    let pos = k as f64 / spacing;
    let mut idx1 = pos.floor();
    // snap positions that land a rounding error below a knot
    if pos - idx1 > 1.0 - 1e-9 {
        idx1 += 1.0;
    }
    let c = ((k as f64 - idx1 * spacing) / spacing).max(0.0);
    let idx1 = idx1 as usize;
    if c < 1e-12 {
        Interp {
            idx1,
            idx2: idx1,
            c: 0.0,
        }
    } else {
        Interp {
            idx1,
            idx2: idx1 + 1,
            c,
        }
    }
}

/// Knot values, one row per knot and one column per input channel.
#[derive(Debug, Clone, PartialEq)]
pub struct KnotTrajectory {
    pub knots: DMatrix<f64>,
}

impl KnotTrajectory {
    pub fn new(knots: DMatrix<f64>) -> Self {
        Self { knots }
    }

    /// From a flat vector laid out knot-major: `[U[0]; U[1]; …]`.
    pub fn from_flat(flat: &[f64], knots: usize, inputs: usize) -> Result<Self> {
        check_dim("flattened knots", knots * inputs, flat.len())?;
        Ok(Self {
            knots: DMatrix::from_row_slice(knots, inputs, flat),
        })
    }

    pub fn knot_count(&self) -> usize {
        self.knots.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.knots.ncols()
    }

    fn check(&self, sched: &KnotSchedule) -> Result<()> {
        check_dim("knot rows", sched.knots(), self.knot_count())
    }
}

pub fn input_at(traj: &KnotTrajectory, sched: &KnotSchedule, k: usize) -> Result<DVector<f64>> {
    traj.check(sched)?;
    let ic = sched.coeffs(k)?;
    let u = traj.knots.row(ic.idx1).transpose() * (1.0 - ic.c)
        + traj.knots.row(ic.idx2).transpose() * ic.c;
    Ok(u)
}

/// `T×m` per-step inputs.
pub fn expand(traj: &KnotTrajectory, sched: &KnotSchedule) -> Result<DMatrix<f64>> {
    traj.check(sched)?;
    let mut out = DMatrix::zeros(sched.horizon(), traj.input_dim());
    for k in 0..sched.horizon() {
        let ic = sched.coeffs(k)?;
        for j in 0..traj.input_dim() {
            out[(k, j)] = (1.0 - ic.c) * traj.knots[(ic.idx1, j)] + ic.c * traj.knots[(ic.idx2, j)];
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    #[test]
    fn spacing_examples() {
        assert_eq!(knot_spacing(5, 3).unwrap(), 2.0);
        assert_eq!(knot_spacing(50, 5).unwrap(), 12.25);
        assert_eq!(knot_spacing(10, 10).unwrap(), 1.0);
        assert!(knot_spacing(10, 1).is_err());
        assert!(knot_spacing(10, 11).is_err());
        assert!(KnotSchedule::new(0, 1).is_err());
    }

    #[test]
    fn coeff_examples() {
        assert_eq!(
            interp_coeffs(0, 2.0),
            Interp {
                idx1: 0,
                idx2: 0,
                c: 0.0
            }
        );
        assert_eq!(
            interp_coeffs(1, 2.0),
            Interp {
                idx1: 0,
                idx2: 1,
                c: 0.5
            }
        );
        assert_eq!(
            interp_coeffs(4, 2.0),
            Interp {
                idx1: 2,
                idx2: 2,
                c: 0.0
            }
        );

        let s = KnotSchedule::new(5, 3).unwrap();
        assert_eq!(
            s.coeffs(1).unwrap(),
            Interp {
                idx1: 0,
                idx2: 1,
                c: 0.5
            }
        );
        assert_eq!(
            s.coeffs(4).unwrap(),
            Interp {
                idx1: 2,
                idx2: 2,
                c: 0.0
            }
        );
        assert!(s.coeffs(5).is_err());
    }

    #[test]
    fn float_and_exact_coeffs_agree() {
        for t in 2..60 {
            for p in 2..=t {
                let s = KnotSchedule::new(t, p).unwrap();
                let dt = s.spacing().unwrap();
                for k in 0..t {
                    let a = s.coeffs(k).unwrap();
                    let b = interp_coeffs(k, dt);
                    let ua = [(a.idx1, 1.0 - a.c), (a.idx2, a.c)];
                    let ub = [(b.idx1, 1.0 - b.c), (b.idx2, b.c)];
                    let weight = |u: &[(usize, f64); 2], i: usize| -> f64 {
                        u.iter().filter(|(j, _)| *j == i).map(|(_, w)| w).sum()
                    };
                    for i in 0..p {
                        assert!(
                            (weight(&ua, i) - weight(&ub, i)).abs() < 1e-9,
                            "T={t} p={p} k={k}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn input_at_examples() {
        let one = KnotSchedule::new(7, 1).unwrap();
        let traj = KnotTrajectory::new(dmatrix![0.7]);
        for k in 0..7 {
            assert_eq!(input_at(&traj, &one, k).unwrap()[0], 0.7);
        }

        let s = KnotSchedule::new(5, 3).unwrap();
        let (a, b, c) = (1.0, -2.0, 4.0);
        let traj = KnotTrajectory::new(dmatrix![a; b; c]);
        assert!((input_at(&traj, &s, 3).unwrap()[0] - (0.5 * b + 0.5 * c)).abs() < 1e-15);
        assert!(input_at(&traj, &s, 5).is_err());

        let full = KnotSchedule::full(4).unwrap();
        let traj = KnotTrajectory::new(dmatrix![1.0, 2.0; 3.0, 4.0; 5.0, 6.0; 7.0, 8.0]);
        for k in 0..4 {
            assert_eq!(
                input_at(&traj, &full, k).unwrap().transpose(),
                traj.knots.row(k)
            );
        }
    }

    #[test]
    fn expand_examples() {
        let s = KnotSchedule::new(3, 2).unwrap();
        let traj = KnotTrajectory::new(dmatrix![0.0; 1.0]);
        assert_eq!(expand(&traj, &s).unwrap(), dmatrix![0.0; 0.5; 1.0]);

        let full = KnotSchedule::full(3).unwrap();
        let traj = KnotTrajectory::new(dmatrix![1.0, -1.0; 2.0, -2.0; 3.0, -3.0]);
        assert_eq!(expand(&traj, &full).unwrap(), traj.knots);

        let wrong = KnotTrajectory::new(dmatrix![1.0; 2.0]);
        assert!(expand(&wrong, &full).is_err());
    }

    #[test]
    fn weight_matrix_matches_expand() {
        let s = KnotSchedule::new(50, 5).unwrap();
        let traj = KnotTrajectory::new(DMatrix::from_fn(5, 2, |i, j| (i * 3 + j) as f64 - 4.0));
        let via_w = s.weight_matrix() * &traj.knots;
        assert!((via_w - expand(&traj, &s).unwrap()).amax() < 1e-12);
        let w = s.weight_matrix();
        for k in 0..50 {
            assert!((w.row(k).sum() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn flat_layout_is_knot_major() {
        let t = KnotTrajectory::from_flat(&[1.0, 2.0, 3.0, 4.0], 2, 2).unwrap();
        assert_eq!(t.knots, dmatrix![1.0, 2.0; 3.0, 4.0]);
        assert!(KnotTrajectory::from_flat(&[1.0], 2, 2).is_err());
    }
}
