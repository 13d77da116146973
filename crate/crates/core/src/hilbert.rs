//! Joint spin (x) Fock space: basis construction, elementary operators,
//! expectation values, truncation bookkeeping.
//!
//! Basis ordering is spin-major and fixed across the whole crate:
//! index = s * (fock_cutoff + 1) + n, with s = 0 the lower spin state.
//! In this basis every operator of the model is a real symmetric matrix
//! (the coupling enters as (sp + sm)(a + a_dag)), so operators are stored
//! as real matrices while states stay complex.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::{Error, Result};

/// Dense real operator on the joint spin (x) Fock space.
pub type Operator = DMatrix<f64>;

/// Truncated-space configuration shared by all modules.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SpaceConfig {
    /// Highest Fock index kept; dimension = 2 * (fock_cutoff + 1).
    pub fock_cutoff: usize,
    /// Maximum tolerated population near the cutoff after an evolution.
    pub tail_tolerance: f64,
}

impl Default for SpaceConfig {
    fn default() -> Self {
        Self {
            fock_cutoff: 60,
            tail_tolerance: 1e-6,
        }
    }
}

impl SpaceConfig {
    pub fn new(fock_cutoff: usize) -> Self {
        Self {
            fock_cutoff,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.fock_cutoff < 1 {
            return Err(Error::InvalidParameter(
                "fock_cutoff must be at least 1".into(),
            ));
        }
        if !(self.tail_tolerance > 0.0 && self.tail_tolerance < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "tail_tolerance must lie in (0, 1), got {}",
                self.tail_tolerance
            )));
        }
        Ok(())
    }

    /// Number of Fock levels kept (fock_cutoff + 1).
    pub fn fock_dim(&self) -> usize {
        self.fock_cutoff + 1
    }

    /// Joint-space dimension.
    pub fn dim(&self) -> usize {
        2 * self.fock_dim()
    }

    /// Flat index of |s, n>.
    pub fn index(&self, s: usize, n: usize) -> usize {
        debug_assert!(s < 2 && n <= self.fock_cutoff);
        s * self.fock_dim() + n
    }

    /// Grown configuration used by the cutoff retry ladder.
    pub fn grown(&self) -> Self {
        Self {
            fock_cutoff: (self.fock_cutoff * 3).div_ceil(2),
            tail_tolerance: self.tail_tolerance,
        }
    }
}

/// Pure or mixed state together with the space it lives on.
#[derive(Debug, Clone)]
pub struct QuantumState {
    pub space: SpaceConfig,
    pub repr: StateRepr,
}

#[derive(Debug, Clone)]
pub enum StateRepr {
    Pure(DVector<Complex64>),
    Mixed(DMatrix<Complex64>),
}

impl QuantumState {
    /// Basis state |s, n>.
    pub fn basis(space: SpaceConfig, s: usize, n: usize) -> Self {
        let mut v = DVector::zeros(space.dim());
        v[space.index(s, n)] = Complex64::new(1.0, 0.0);
        Self {
            space,
            repr: StateRepr::Pure(v),
        }
    }

    /// The quench initial state |down, 0>.
    pub fn ground(space: SpaceConfig) -> Self {
        Self::basis(space, 0, 0)
    }

    pub fn dim(&self) -> usize {
        match &self.repr {
            StateRepr::Pure(v) => v.len(),
            StateRepr::Mixed(m) => m.nrows(),
        }
    }

    /// Population of basis index i (diagonal of rho for mixed states).
    pub fn population(&self, i: usize) -> f64 {
        match &self.repr {
            StateRepr::Pure(v) => v[i].norm_sqr(),
            StateRepr::Mixed(m) => m[(i, i)].re,
        }
    }

    /// Marginal phonon distribution, summed over spin.
    pub fn phonon_distribution(&self) -> Vec<f64> {
        let nf = self.space.fock_dim();
        (0..nf)
            .map(|n| self.population(n) + self.population(nf + n))
            .collect()
    }

    /// Checks normalization, Hermiticity and (for mixed states) positivity.
    pub fn validate(&self) -> Result<()> {
        if self.dim() != self.space.dim() {
            return Err(Error::InvalidParameter(format!(
                "state dimension {} does not match space dimension {}",
                self.dim(),
                self.space.dim()
            )));
        }
        match &self.repr {
            StateRepr::Pure(v) => {
                let norm2 = v.iter().map(|c| c.norm_sqr()).sum::<f64>();
                if (norm2 - 1.0).abs() >= 1e-6 {
                    return Err(Error::Numerics(format!(
                        "pure state norm^2 deviates from 1 by {:.3e}",
                        (norm2 - 1.0).abs()
                    )));
                }
            }
            StateRepr::Mixed(m) => {
                let trace: Complex64 = m.diagonal().iter().sum();
                if (trace.re - 1.0).abs() >= 1e-6 || trace.im.abs() >= 1e-9 {
                    return Err(Error::Numerics(format!(
                        "density matrix trace {} deviates from 1",
                        trace
                    )));
                }
                let herm_dev = (0..m.nrows())
                    .flat_map(|i| (0..m.ncols()).map(move |j| (i, j)))
                    .map(|(i, j)| (m[(i, j)] - m[(j, i)].conj()).norm())
                    .fold(0.0_f64, f64::max);
                if herm_dev >= 1e-9 {
                    return Err(Error::Numerics(format!(
                        "density matrix Hermiticity violation {:.3e}",
                        herm_dev
                    )));
                }
                let eig = m.clone().symmetric_eigen();
                let min_eig = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
                if min_eig <= -1e-8 {
                    return Err(Error::Numerics(format!(
                        "density matrix has negative eigenvalue {:.3e}",
                        min_eig
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Annihilation and creation operators on the joint space.
///
/// a|s, n> = sqrt(n) |s, n-1>; a_dag is the adjoint, truncated at the top
/// Fock level so that [a, a_dag] = 1 everywhere except the edge.
pub fn build_ladder(space: &SpaceConfig) -> (Operator, Operator) {
    let nf = space.fock_dim();
    let dim = space.dim();
    let mut a = DMatrix::zeros(dim, dim);
    for s in 0..2 {
        for n in 1..nf {
            a[(space.index(s, n - 1), space.index(s, n))] = (n as f64).sqrt();
        }
    }
    let a_dag = a.transpose();
    (a, a_dag)
}

/// Pauli z and the spin raising/lowering operators on the joint space.
pub fn build_spin(space: &SpaceConfig) -> (Operator, Operator, Operator) {
    let nf = space.fock_dim();
    let dim = space.dim();
    let mut sz = DMatrix::zeros(dim, dim);
    let mut sp = DMatrix::zeros(dim, dim);
    for n in 0..nf {
        sz[(n, n)] = -1.0;
        sz[(nf + n, nf + n)] = 1.0;
        sp[(nf + n, n)] = 1.0;
    }
    let sm = sp.transpose();
    (sz, sp, sm)
}

/// Number operator a_dag a on the joint space.
pub fn number_operator(space: &SpaceConfig) -> Operator {
    let nf = space.fock_dim();
    let dim = space.dim();
    let mut n_op = DMatrix::zeros(dim, dim);
    for s in 0..2 {
        for n in 0..nf {
            let i = space.index(s, n);
            n_op[(i, i)] = n as f64;
        }
    }
    n_op
}

/// Conserved parity Pi = sz (x) (-1)^(a_dag a).
pub fn parity(space: &SpaceConfig) -> Operator {
    let nf = space.fock_dim();
    let dim = space.dim();
    let mut p = DMatrix::zeros(dim, dim);
    for s in 0..2 {
        let spin_sign = if s == 0 { -1.0 } else { 1.0 };
        for n in 0..nf {
            let i = space.index(s, n);
            p[(i, i)] = spin_sign * if n % 2 == 0 { 1.0 } else { -1.0 };
        }
    }
    p
}

fn max_abs_asymmetry(obs: &Operator) -> f64 {
    let mut dev = 0.0_f64;
    for i in 0..obs.nrows() {
        for j in (i + 1)..obs.ncols() {
            dev = dev.max((obs[(i, j)] - obs[(j, i)]).abs());
        }
    }
    dev
}

/// <psi|O|psi> for pure states, Tr(rho O) for mixed states.
///
/// The observable must be Hermitian (symmetric, since operators are real);
/// the imaginary residue of the contraction is checked below 1e-9 and
/// discarded.
pub fn expectation(state: &QuantumState, obs: &Operator) -> Result<f64> {
    if obs.nrows() != obs.ncols() || obs.nrows() != state.dim() {
        return Err(Error::InvalidParameter(format!(
            "observable is {}x{} but the state has dimension {}",
            obs.nrows(),
            obs.ncols(),
            state.dim()
        )));
    }
    if max_abs_asymmetry(obs) >= 1e-12 {
        return Err(Error::InvalidParameter(
            "observable is not Hermitian".into(),
        ));
    }
    let value = match &state.repr {
        StateRepr::Pure(v) => {
            let mut acc = Complex64::new(0.0, 0.0);
            for i in 0..v.len() {
                let mut row = Complex64::new(0.0, 0.0);
                for j in 0..v.len() {
                    let o = obs[(i, j)];
                    if o != 0.0 {
                        row += o * v[j];
                    }
                }
                acc += v[i].conj() * row;
            }
            acc
        }
        StateRepr::Mixed(m) => {
            let mut acc = Complex64::new(0.0, 0.0);
            for i in 0..m.nrows() {
                for j in 0..m.ncols() {
                    let o = obs[(j, i)];
                    if o != 0.0 {
                        acc += o * m[(i, j)];
                    }
                }
            }
            acc
        }
    };
    if value.im.abs() >= 1e-9 {
        return Err(Error::Numerics(format!(
            "expectation value has imaginary residue {:.3e}",
            value.im
        )));
    }
    Ok(value.re)
}

/// Total probability in the top `top_levels` Fock indices, summed over spin.
pub fn tail_population(state: &QuantumState, top_levels: usize) -> Result<f64> {
    let cutoff = state.space.fock_cutoff;
    if top_levels >= cutoff {
        return Err(Error::InvalidParameter(format!(
            "top_levels = {} must be smaller than fock_cutoff = {}",
            top_levels, cutoff
        )));
    }
    let nf = state.space.fock_dim();
    let mut total = 0.0;
    for n in (nf - top_levels)..nf {
        total += state.population(n) + state.population(nf + n);
    }
    Ok(total)
}
