use crate::certify::ProbabilityTables;
use crate::framing::{TsupProjector, DIM};
use crate::scalar::Scalar;

/// Vectors over bins -1..=4 of the current frame: index `b + 1`. Bins -1 and
/// 4 are outside the frame and carry no state weight.
pub(crate) const EXT: usize = DIM + 2;

/// `v |phi+> <phi+| + (1 - v) I / 16` on the frame space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IsotropicState<T> {
    pub v: T,
}

impl<T: Scalar> IsotropicState<T> {
    pub fn new(v: T) -> Self {
        Self { v }
    }

    /// `<ab|rho|ab>` for real vectors over the extended bins.
    pub(crate) fn expectation(&self, a: &[T; EXT], b: &[T; EXT]) -> T {
        let in_frame = |x: &[T; EXT]| -> T { x[1..=DIM].iter().fold(T::zero(), |s, &c| s + c * c) };
        let overlap = (1..=DIM).fold(T::zero(), |s, k| s + a[k] * b[k]) / T::lit(2.0);
        self.v * overlap * overlap
            + (T::one() - self.v) / T::lit(16.0) * in_frame(a) * in_frame(b)
    }

    /// Exact outcome probabilities; `|0'>` is orthogonal to the frame.
    pub fn probability_tables(&self) -> ProbabilityTables<T> {
        let mut t = ProbabilityTables::zeros();
        for i in 0..DIM {
            for j in 0..DIM {
                t.toa[i][j] = self.expectation(&basis(i as i32), &basis(j as i32));
            }
        }
        let vecs: Vec<[T; EXT]> = TsupProjector::all()
            .map(|p| superposition(p.lower as i32, p.sign.value()))
            .collect();
        for (a, va) in vecs.iter().enumerate() {
            for (b, vb) in vecs.iter().enumerate() {
                t.tsup[a][b] = self.expectation(va, vb);
            }
        }
        t
    }

    /// `<phi+|rho|phi+>`.
    pub fn fidelity(&self) -> T {
        self.v + (T::one() - self.v) / T::lit(16.0)
    }
}

/// |bin>, bin in -1..=4.
pub(crate) fn basis<T: Scalar>(bin: i32) -> [T; EXT] {
    let mut x = [T::zero(); EXT];
    x[(bin + 1) as usize] = T::one();
    x
}

/// (|lower> + sign |lower + 1>) / sqrt(2), lower in -1..=3.
pub(crate) fn superposition<T: Scalar>(lower: i32, sign: i8) -> [T; EXT] {
    let h = T::lit(std::f64::consts::FRAC_1_SQRT_2);
    let mut x = [T::zero(); EXT];
    x[(lower + 1) as usize] = h;
    x[(lower + 2) as usize] = if sign > 0 { h } else { -h };
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ideal_tables() {
        let t = IsotropicState::new(1.0f64).probability_tables();
        for i in 0..DIM {
            for j in 0..DIM {
                let want = if i == j { 0.25 } else { 0.0 };
                assert!((t.toa[i][j] - want).abs() < 1e-15);
            }
        }
        for k in 0..3 {
            let (p, m) = (2 * k, 2 * k + 1);
            assert!((t.tsup[p][p] - 0.25).abs() < 1e-15);
            assert!((t.tsup[m][m] - 0.25).abs() < 1e-15);
            assert!(t.tsup[p][m].abs() < 1e-15);
            assert!(t.tsup[m][p].abs() < 1e-15);
        }
    }

    #[test]
    fn maximally_mixed_tables() {
        let t = IsotropicState::new(0.0f64).probability_tables();
        assert!(t.toa.iter().flatten().all(|&x| (x - 1.0 / 16.0).abs() < 1e-15));
        for a in 0..6 {
            for b in 0..6 {
                assert!((t.tsup[a][b] - 1.0 / 16.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn partial_visibility() {
        let t = IsotropicState::new(0.8f64).probability_tables();
        assert!((t.toa[1][1] - 0.2125).abs() < 1e-15);
        assert!((t.toa[1][2] - 0.0125).abs() < 1e-15);
        assert!((IsotropicState::new(0.8f64).fidelity() - 0.8125).abs() < 1e-15);
    }
}
