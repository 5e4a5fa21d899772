//! The controlled plant `x_{t+1} = A x_t + B u_t + w_t`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{check_len, matrix_from_rows, matrix_to_rows, spectral_norm};
use crate::scalar::Real;

/// A known linear time-invariant system with dense `A` (n_x × n_x) and `B` (n_x × n_u).
#[derive(Clone, Debug, PartialEq)]
pub struct LinearSystem<T: Real> {
    a: DMatrix<T>,
    b: DMatrix<T>,
}

impl<T: Real> LinearSystem<T> {
    pub fn new(a: DMatrix<T>, b: DMatrix<T>) -> Result<Self> {
        if a.nrows() == 0 || !a.is_square() {
            return Err(Error::invalid(format!(
                "A must be square and non-empty, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if b.nrows() != a.nrows() || b.ncols() == 0 {
            return Err(Error::invalid(format!(
                "B must be {}xn_u with n_u >= 1, got {}x{}",
                a.nrows(),
                b.nrows(),
                b.ncols()
            )));
        }
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("system matrices contain non-finite entries"));
        }
        Ok(Self { a, b })
    }

    pub fn from_spec(spec: &SystemSpec) -> Result<Self> {
        Self::new(matrix_from_rows(&spec.a, "A")?, matrix_from_rows(&spec.b, "B")?)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let spec: SystemSpec = serde_json::from_str(s)?;
        Self::from_spec(&spec)
    }

    pub fn to_spec(&self) -> SystemSpec {
        SystemSpec {
            a: matrix_to_rows(&self.a),
            b: matrix_to_rows(&self.b),
        }
    }

    pub fn a(&self) -> &DMatrix<T> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<T> {
        &self.b
    }

    pub fn n_x(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_u(&self) -> usize {
        self.b.ncols()
    }

    /// `max{‖B‖, 1}`.
    pub fn kappa_b(&self) -> T {
        spectral_norm(&self.b).max(T::one())
    }

    /// `A - B K`.
    pub fn closed_loop_matrix(&self, k: &DMatrix<T>) -> Result<DMatrix<T>> {
        crate::linalg::check_shape(k, (self.n_u(), self.n_x()), "gain K")?;
        Ok(&self.a - &self.b * k)
    }

    /// Advances one step: `x' = A x + B u + w`.
    pub fn step(&self, state: &SystemState<T>, u: &DVector<T>, w: &DVector<T>) -> Result<SystemState<T>> {
        check_len(&state.x, self.n_x(), "state x")?;
        check_len(u, self.n_u(), "input u")?;
        check_len(w, self.n_x(), "noise w")?;
        Ok(SystemState {
            t: state.t + 1,
            x: self.transition(&state.x, u, w),
        })
    }

    pub(crate) fn transition(&self, x: &DVector<T>, u: &DVector<T>, w: &DVector<T>) -> DVector<T> {
        &self.a * x + &self.b * u + w
    }

    /// Realized noise `w = x_next - A x - B u`.
    pub fn recover_noise(&self, x_next: &DVector<T>, x: &DVector<T>, u: &DVector<T>) -> Result<DVector<T>> {
        check_len(x_next, self.n_x(), "next state")?;
        check_len(x, self.n_x(), "state x")?;
        check_len(u, self.n_u(), "input u")?;
        Ok(x_next - &self.a * x - &self.b * u)
    }
}

/// Time-stamped state.
#[derive(Clone, Debug, PartialEq)]
pub struct SystemState<T: Real> {
    pub t: usize,
    pub x: DVector<T>,
}

impl<T: Real> SystemState<T> {
    /// `x_0 = 0`, the default start.
    pub fn origin(n_x: usize) -> Self {
        Self {
            t: 0,
            x: DVector::zeros(n_x),
        }
    }

    /// Opt-in nonzero initial state.
    pub fn starting_at(x: DVector<T>) -> Self {
        Self { t: 0, x }
    }
}

/// JSON form `{"A": [[...]], "B": [[...]]}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemSpec {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
}
