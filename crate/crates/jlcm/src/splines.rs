//! B-spline machinery shared by the monotone link transformations and the
//! spline baseline hazards.
//!
//! Everything is built from one Cox-de Boor evaluator on a clamped knot
//! vector. The monotone basis used by link functions consists of degree-3
//! I-splines: tail sums of order-4 (cubic) B-splines, each rising from 0 at
//! the left boundary to 1 at the right, with first derivatives expressible
//! through order-3 B-splines. Baseline hazards use M-splines (B-splines
//! normalized to integrate to one) and their integrated I-spline companions.

use crate::error::Error;
use crate::Result;

/// A clamped knot vector on [lo, hi] with strictly increasing interior knots,
/// supporting B-spline evaluation up to `max_order`.
#[derive(Debug, Clone, PartialEq)]
pub struct KnotVector {
    /// Extended knots: `max_order` copies of each boundary around the
    /// interior knots.
    extended: Vec<f64>,
    interior: usize,
    max_order: usize,
    lo: f64,
    hi: f64,
}

impl KnotVector {
    pub fn new(lo: f64, hi: f64, interior: &[f64], max_order: usize) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite()) || lo >= hi {
            return Err(Error::Domain(format!(
                "knot range must satisfy lo < hi, got [{lo}, {hi}]"
            )));
        }
        let mut last = lo;
        for &k in interior {
            if k <= last || k >= hi {
                return Err(Error::Domain(format!(
                    "interior knots must increase strictly inside ({lo}, {hi}); offending knot {k}"
                )));
            }
            last = k;
        }
        let mut extended = Vec::with_capacity(interior.len() + 2 * max_order);
        extended.extend(std::iter::repeat(lo).take(max_order));
        extended.extend_from_slice(interior);
        extended.extend(std::iter::repeat(hi).take(max_order));
        Ok(Self {
            extended,
            interior: interior.len(),
            max_order,
            lo,
            hi,
        })
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn interior_count(&self) -> usize {
        self.interior
    }

    /// Number of B-splines of the given order on this knot vector.
    pub fn basis_count(&self, order: usize) -> usize {
        self.interior + order
    }

    fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }

    /// Knot value for a B-spline family of the given order. Index 0 is the
    /// first knot relevant to that order (boundary copies beyond `order` are
    /// trimmed so that basis index `i` of order `k` spans knots `i..i+k`).
    #[inline]
    fn knot(&self, order: usize, i: usize) -> f64 {
        self.extended[self.max_order - order + i]
    }

    /// All order-`order` B-spline values at `x` via the Cox-de Boor
    /// recursion, written into `out` (length `basis_count(order)`).
    ///
    /// Uses half-open support [t_i, t_{i+1}) with the right boundary closed,
    /// so the values always form a partition of unity on [lo, hi].
    pub fn bspline_values(&self, order: usize, x: f64, out: &mut [f64]) -> Result<()> {
        let n = self.basis_count(order);
        assert_eq!(out.len(), n);
        if order == 0 || order > self.max_order {
            return Err(Error::Domain(format!(
                "b-spline order must be in 1..={}, got {order}",
                self.max_order
            )));
        }
        if !self.contains(x) {
            return Err(Error::Domain(format!(
                "spline argument {x} outside knot range [{}, {}]",
                self.lo, self.hi
            )));
        }
        out.fill(0.0);
        // Locate the knot interval [t_mu, t_{mu+1}) containing x among the
        // order-`order` knots; clamp to the last nonempty interval at x = hi.
        let n_knots = self.interior + 2 * order;
        let mut mu = order - 1; // first index with t_mu = lo
        while mu + 1 < n_knots - order && x >= self.knot(order, mu + 1) {
            mu += 1;
        }
        // Triangular recurrence: start from the order-1 indicator on the
        // located interval and raise the order. Ascending index order matters:
        // the update at i consumes the lower-order values at i and i+1, and
        // only indices < i have been overwritten when it runs.
        out[mu] = 1.0;
        for k in 2..=order {
            // Basis functions of order k that can be nonzero: mu-k+1..=mu.
            let first = (mu + 1).saturating_sub(k);
            for i in first..=mu {
                let t_i = self.knot(order, i);
                let t_ik1 = self.knot(order, i + k - 1);
                let t_i1 = self.knot(order, i + 1);
                let t_ik = self.knot(order, i + k);
                let mut v = 0.0;
                if t_ik1 > t_i {
                    v += (x - t_i) / (t_ik1 - t_i) * out[i];
                }
                if t_ik > t_i1 {
                    v += (t_ik - x) / (t_ik - t_i1) * out[i + 1];
                }
                out[i] = v;
            }
        }
        Ok(())
    }
}

/// Degree-3 monotone I-spline basis on a clamped knot vector: `m + 3` basis
/// functions for `m` interior knots, each nondecreasing from 0 to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ISplineBasis {
    knots: KnotVector,
}

/// B-spline order whose tail sums give the degree-3 I-splines.
const I_SPLINE_BSPLINE_ORDER: usize = 4;

impl ISplineBasis {
    pub fn new(lo: f64, hi: f64, interior: &[f64]) -> Result<Self> {
        Ok(Self {
            knots: KnotVector::new(lo, hi, interior, I_SPLINE_BSPLINE_ORDER)?,
        })
    }

    pub fn len(&self) -> usize {
        self.knots.interior_count() + 3
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn lo(&self) -> f64 {
        self.knots.lo()
    }

    pub fn hi(&self) -> f64 {
        self.knots.hi()
    }

    /// Basis values at `x`: `out[l] = I_l(x)`, each in [0, 1], nondecreasing
    /// in `x`, exactly 0 at the left boundary and 1 at the right.
    pub fn values(&self, x: f64, out: &mut [f64]) -> Result<()> {
        assert_eq!(out.len(), self.len());
        let nb = self.knots.basis_count(I_SPLINE_BSPLINE_ORDER);
        let mut b = [0.0; 64];
        if nb > 64 {
            return Err(Error::Domain("too many spline basis functions".into()));
        }
        self.knots.bspline_values(I_SPLINE_BSPLINE_ORDER, x, &mut b[..nb])?;
        // I_l = sum of cubic B-splines from index l on (tail of the partition
        // of unity); the l = 0 tail is identically 1 and not part of the basis.
        let mut tail = 0.0;
        let mut tails = [0.0; 64];
        for i in (0..nb).rev() {
            tail += b[i];
            tails[i] = tail;
        }
        for l in 0..self.len() {
            out[l] = tails[l + 1].clamp(0.0, 1.0);
        }
        Ok(())
    }

    /// Derivatives of the basis at `x`: `out[l] = I_l'(x) >= 0`, each a
    /// scaled order-3 B-spline.
    pub fn derivatives(&self, x: f64, out: &mut [f64]) -> Result<()> {
        assert_eq!(out.len(), self.len());
        let order = I_SPLINE_BSPLINE_ORDER - 1;
        let nb = self.knots.basis_count(order);
        let mut b = [0.0; 64];
        self.knots.bspline_values(order, x, &mut b[..nb])?;
        // d/dx sum_{j >= l+1} B_j^(4) telescopes to 3 * B_{l+1}^(3) / gap in
        // the order-4 knot indexing, which is entry l of the order-3 family.
        for l in 0..self.len() {
            let t_j = self.knots.knot(I_SPLINE_BSPLINE_ORDER, l + 1);
            let t_jk = self.knots.knot(I_SPLINE_BSPLINE_ORDER, l + 1 + order);
            out[l] = if t_jk > t_j {
                order as f64 * b[l] / (t_jk - t_j)
            } else {
                0.0
            };
        }
        Ok(())
    }
}

/// Cubic M-spline basis (order 4, normalized to unit integral) with its
/// integrated I-spline companion, used for spline baseline hazards.
#[derive(Debug, Clone, PartialEq)]
pub struct MSplineBasis {
    knots: KnotVector,
}

const M_SPLINE_ORDER: usize = 4;

impl MSplineBasis {
    pub fn new(lo: f64, hi: f64, interior: &[f64]) -> Result<Self> {
        Ok(Self {
            knots: KnotVector::new(lo, hi, interior, M_SPLINE_ORDER + 1)?,
        })
    }

    pub fn len(&self) -> usize {
        self.knots.basis_count(M_SPLINE_ORDER)
    }

    pub fn lo(&self) -> f64 {
        self.knots.lo()
    }

    pub fn hi(&self) -> f64 {
        self.knots.hi()
    }

    /// M-spline values at `x`: nonnegative, each integrating to one over the
    /// knot range.
    pub fn values(&self, x: f64, out: &mut [f64]) -> Result<()> {
        assert_eq!(out.len(), self.len());
        let nb = self.knots.basis_count(M_SPLINE_ORDER);
        let mut b = [0.0; 64];
        self.knots.bspline_values(M_SPLINE_ORDER, x, &mut b[..nb])?;
        for i in 0..nb {
            let t_i = self.knots.knot(M_SPLINE_ORDER, i);
            let t_ik = self.knots.knot(M_SPLINE_ORDER, i + M_SPLINE_ORDER);
            out[i] = if t_ik > t_i {
                M_SPLINE_ORDER as f64 * b[i] / (t_ik - t_i)
            } else {
                0.0
            };
        }
        Ok(())
    }

    /// Integrated basis: `out[i] = int_lo^x M_i(u) du`, each rising 0 -> 1.
    pub fn integrals(&self, x: f64, out: &mut [f64]) -> Result<()> {
        assert_eq!(out.len(), self.len());
        let order = M_SPLINE_ORDER + 1;
        let nb = self.knots.basis_count(order);
        let mut b = [0.0; 64];
        self.knots.bspline_values(order, x, &mut b[..nb])?;
        let mut tail = 0.0;
        let mut tails = [0.0; 64];
        for i in (0..nb).rev() {
            tail += b[i];
            tails[i] = tail;
        }
        // int_lo^x M_i = tail sum of order-5 B-splines starting at i + 1.
        for i in 0..self.len() {
            out[i] = tails[i + 1].clamp(0.0, 1.0);
        }
        Ok(())
    }
}
