//! Bracketed bisection for monotone or convex sign changes.

use crate::Scalar;

/// A bracket `[lo, hi]` around a sign change of some function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bracket<T> {
    pub lo: T,
    pub hi: T,
    pub f_lo: T,
    pub f_hi: T,
}

impl<T: Scalar> Bracket<T> {
    pub fn width(&self) -> T {
        self.hi - self.lo
    }

    pub fn midpoint(&self) -> T {
        self.lo + (self.hi - self.lo) / T::lit(2.0)
    }
}

/// Bisects `f` on `[lo, hi]`, where `f(lo)` and `f(hi)` have strictly opposite
/// signs, until the bracket is narrower than `tol` or cannot shrink further.
///
/// Returns `None` when the endpoints do not straddle a sign change.
pub fn bisect<T, F>(mut f: F, lo: T, hi: T, tol: T, max_iter: usize) -> Option<Bracket<T>>
where
    T: Scalar,
    F: FnMut(T) -> T,
{
    let f_lo = f(lo);
    let f_hi = f(hi);
    if f_lo.is_nan()
        || f_hi.is_nan()
        || f_lo.signum() == f_hi.signum()
        || f_lo == T::zero()
        || f_hi == T::zero()
    {
        if f_lo == T::zero() {
            return Some(Bracket {
                lo,
                hi: lo,
                f_lo,
                f_hi: f_lo,
            });
        }
        if f_hi == T::zero() {
            return Some(Bracket {
                lo: hi,
                hi,
                f_lo: f_hi,
                f_hi,
            });
        }
        return None;
    }
    let mut b = Bracket { lo, hi, f_lo, f_hi };
    for _ in 0..max_iter {
        if b.width() <= tol {
            break;
        }
        let mid = b.midpoint();
        if mid <= b.lo || mid >= b.hi {
            break;
        }
        let fm = f(mid);
        if fm == T::zero() {
            return Some(Bracket {
                lo: mid,
                hi: mid,
                f_lo: fm,
                f_hi: fm,
            });
        }
        if fm.signum() == b.f_lo.signum() {
            b.lo = mid;
            b.f_lo = fm;
        } else {
            b.hi = mid;
            b.f_hi = fm;
        }
    }
    Some(b)
}
