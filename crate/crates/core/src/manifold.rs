//! Geometry of the feature-Gaussian manifold `Z = R^m × R^n × S^n_++`.
//!
//! Points carry a feature vector, a lifted-label mean and a lifted-label
//! covariance. The covariance leg uses the Bures–Wasserstein structure:
//! tangent vectors at `Σ` are symmetric matrices, the metric is
//! `⟨V₁, V₂⟩_Σ = tr(L_Σ[V₁] Σ L_Σ[V₂])` where `L_Σ` inverts the Lyapunov map
//! `H ↦ HΣ + ΣH`, and geodesics are `(I + tL)Σ(I + tL)`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Default lower bound on the eigenvalues of every SPD matrix.
pub const DEFAULT_SPD_FLOOR: f64 = 1e-10;

const SYMMETRY_TOL: f64 = 1e-12;

fn max_abs<T: Real>(a: &DMatrix<T>) -> T {
    a.iter().fold(T::zero(), |acc, v| acc.max(v.abs()))
}

fn max_asymmetry<T: Real>(a: &DMatrix<T>) -> T {
    let n = a.nrows();
    let mut worst = T::zero();
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst
}

fn check_finite<T: Real>(a: &DMatrix<T>, what: &'static str) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

fn check_dim(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            found,
        })
    }
}

/// `(A + Aᵀ)/2`.
pub(crate) fn symmetrize<T: Real>(a: &DMatrix<T>) -> DMatrix<T> {
    let half = T::lit(0.5);
    (a + a.transpose()) * half
}

/// Eigenvalues and orthonormal eigenvectors of a symmetric matrix.
#[derive(Clone, Debug)]
pub struct SymEigen<T: Real> {
    pub values: DVector<T>,
    pub vectors: DMatrix<T>,
}

impl<T: Real> SymEigen<T> {
    pub fn new(a: &DMatrix<T>) -> Self {
        let eig = SymmetricEigen::new(a.clone());
        Self {
            values: eig.eigenvalues,
            vectors: eig.eigenvectors,
        }
    }

    pub fn min_value(&self) -> T {
        self.values
            .iter()
            .fold(T::max_value().unwrap_or_else(T::one), |acc, v| acc.min(*v))
    }

    /// `Q f(Λ) Qᵀ`, symmetrized.
    pub fn map(&self, f: impl Fn(T) -> T) -> DMatrix<T> {
        let scaled = DMatrix::from_fn(self.vectors.nrows(), self.vectors.ncols(), |i, j| {
            self.vectors[(i, j)] * f(self.values[j])
        });
        symmetrize(&(scaled * self.vectors.transpose()))
    }
}

/// A real symmetric `n×n` matrix; tangent vectors of `S^n_++` live here.
#[derive(Clone, Debug, PartialEq)]
pub struct SymMatrix<T: Real>(DMatrix<T>);

impl<T: Real> SymMatrix<T> {
    /// Validates squareness, finiteness and symmetry up to
    /// `1e-12 · max(1, max|A_ij|)`. The stored matrix is re-symmetrized.
    pub fn try_new(a: DMatrix<T>) -> Result<Self> {
        check_dim("symmetric matrix (square)", a.nrows(), a.ncols())?;
        check_finite(&a, "symmetric matrix")?;
        let asym = max_asymmetry(&a);
        let tol = T::lit(SYMMETRY_TOL) * max_abs(&a).max(T::one());
        if asym > tol {
            return Err(Error::NotSymmetric {
                asymmetry: asym.to_f64_lossy(),
            });
        }
        Ok(Self(symmetrize(&a)))
    }

    /// Symmetric part `(A + Aᵀ)/2` of an arbitrary square matrix.
    pub fn symmetric_part(a: &DMatrix<T>) -> Self {
        assert_eq!(a.nrows(), a.ncols(), "symmetric_part needs a square matrix");
        Self(symmetrize(a))
    }

    pub(crate) fn from_symmetric_unchecked(a: DMatrix<T>) -> Self {
        Self(a)
    }

    pub fn zeros(n: usize) -> Self {
        Self(DMatrix::zeros(n, n))
    }

    pub fn identity(n: usize) -> Self {
        Self(DMatrix::identity(n, n))
    }

    pub fn from_diagonal(d: &[T]) -> Self {
        Self(DMatrix::from_diagonal(&DVector::from_column_slice(d)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<T> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<T> {
        self.0
    }

    pub fn scaled(&self, c: T) -> Self {
        Self(&self.0 * c)
    }

    pub fn eigen(&self) -> SymEigen<T> {
        SymEigen::new(&self.0)
    }

    /// Frobenius inner product `tr(AB)`.
    pub fn frobenius_dot(&self, other: &Self) -> T {
        self.0.dot(&other.0)
    }
}

/// A symmetric positive definite matrix with eigenvalues above a floor.
#[derive(Clone, Debug, PartialEq)]
pub struct SpdMatrix<T: Real>(DMatrix<T>);

impl<T: Real> SpdMatrix<T> {
    pub fn try_new(a: DMatrix<T>) -> Result<Self> {
        Self::try_new_with_floor(a, T::lit(DEFAULT_SPD_FLOOR))
    }

    pub fn try_new_with_floor(a: DMatrix<T>, floor: T) -> Result<Self> {
        let sym = SymMatrix::try_new(a)?;
        Self::from_sym_with_floor(sym, floor)
    }

    /// Validates positivity of an already-symmetric matrix.
    pub fn from_sym_with_floor(sym: SymMatrix<T>, floor: T) -> Result<Self> {
        if sym.dim() == 0 {
            return Err(Error::Empty("covariance of dimension zero"));
        }
        let min = sym.eigen().min_value();
        if !(min >= floor) {
            return Err(Error::NotSpd {
                min_eigenvalue: min.to_f64_lossy(),
                floor: floor.to_f64_lossy(),
            });
        }
        Ok(Self(sym.0))
    }

    pub fn identity(n: usize) -> Self {
        Self(DMatrix::identity(n, n))
    }

    pub fn from_diagonal(d: &[T]) -> Result<Self> {
        Self::try_new(DMatrix::from_diagonal(&DVector::from_column_slice(d)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<T> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<T> {
        self.0
    }

    pub fn as_sym(&self) -> SymMatrix<T> {
        SymMatrix(self.0.clone())
    }

    pub fn eigen(&self) -> SymEigen<T> {
        SymEigen::new(&self.0)
    }
}

/// A point `z = (x, μ, Σ)` of the feature-Gaussian manifold.
#[derive(Clone, Debug, PartialEq)]
pub struct Particle<T: Real> {
    pub x: DVector<T>,
    pub mu: DVector<T>,
    pub sigma: SpdMatrix<T>,
}

impl<T: Real> Particle<T> {
    pub fn new(x: DVector<T>, mu: DVector<T>, sigma: SpdMatrix<T>) -> Result<Self> {
        check_dim("particle mean vs covariance", sigma.dim(), mu.len())?;
        if x.iter().chain(mu.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("particle"));
        }
        Ok(Self { x, mu, sigma })
    }

    /// Feature dimension `m`.
    pub fn m(&self) -> usize {
        self.x.len()
    }

    /// Lifted dimension `n`.
    pub fn n(&self) -> usize {
        self.mu.len()
    }

    pub fn same_shape(&self, other: &Self) -> Result<()> {
        check_dim("feature dimension", self.m(), other.m())?;
        check_dim("lifted dimension", self.n(), other.n())
    }
}

/// A tangent vector `(w, v, V) ∈ R^m × R^n × S^n`.
#[derive(Clone, Debug, PartialEq)]
pub struct TangentVector<T: Real> {
    pub x: DVector<T>,
    pub mu: DVector<T>,
    pub sigma: SymMatrix<T>,
}

impl<T: Real> TangentVector<T> {
    pub fn new(x: DVector<T>, mu: DVector<T>, sigma: SymMatrix<T>) -> Result<Self> {
        check_dim("tangent mean vs covariance", sigma.dim(), mu.len())?;
        Ok(Self { x, mu, sigma })
    }

    pub fn zeros(m: usize, n: usize) -> Self {
        Self {
            x: DVector::zeros(m),
            mu: DVector::zeros(n),
            sigma: SymMatrix::zeros(n),
        }
    }

    pub fn zeros_like(z: &Particle<T>) -> Self {
        Self::zeros(z.m(), z.n())
    }

    pub fn m(&self) -> usize {
        self.x.len()
    }

    pub fn n(&self) -> usize {
        self.mu.len()
    }

    pub fn scaled(&self, c: T) -> Self {
        Self {
            x: &self.x * c,
            mu: &self.mu * c,
            sigma: self.sigma.scaled(c),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        Self {
            x: &self.x + &other.x,
            mu: &self.mu + &other.mu,
            sigma: SymMatrix(&self.sigma.0 + &other.sigma.0),
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self {
            x: &self.x - &other.x,
            mu: &self.mu - &other.mu,
            sigma: SymMatrix(&self.sigma.0 - &other.sigma.0),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.x.iter().chain(self.mu.iter()).chain(self.sigma.0.iter()).all(|v| *v == T::zero())
    }

    fn check_at(&self, z: &Particle<T>) -> Result<()> {
        check_dim("tangent feature dimension", z.m(), self.m())?;
        check_dim("tangent lifted dimension", z.n(), self.n())
    }
}

/// Euclidean partial gradients `(∇_x φ, ∇_μ φ, ∇_Σ φ)` of a scalar on `Z`.
#[derive(Clone, Debug, PartialEq)]
pub struct EuclideanGradient<T: Real> {
    pub x: DVector<T>,
    pub mu: DVector<T>,
    pub sigma: SymMatrix<T>,
}

/// Solves `HΣ + ΣH = V` for symmetric `H` (the operator `L_Σ`).
pub fn lyapunov_solve<T: Real>(sigma: &SpdMatrix<T>, v: &SymMatrix<T>) -> Result<SymMatrix<T>> {
    check_dim("lyapunov_solve", sigma.dim(), v.dim())?;
    Ok(lyapunov_solve_eigen(&sigma.eigen(), v))
}

/// Lyapunov solve reusing a precomputed eigendecomposition `Σ = QΛQᵀ`:
/// `H = Q [(QᵀVQ)_ij / (λ_i + λ_j)] Qᵀ`.
pub fn lyapunov_solve_eigen<T: Real>(eig: &SymEigen<T>, v: &SymMatrix<T>) -> SymMatrix<T> {
    let q = &eig.vectors;
    let rotated = q.transpose() * &v.0 * q;
    let n = rotated.nrows();
    let scaled = DMatrix::from_fn(n, n, |i, j| rotated[(i, j)] / (eig.values[i] + eig.values[j]));
    SymMatrix(symmetrize(&(q * scaled * q.transpose())))
}

/// Principal square root of an SPD matrix.
pub fn spd_sqrt<T: Real>(sigma: &SpdMatrix<T>) -> SpdMatrix<T> {
    SpdMatrix(sigma.eigen().map(|l| l.sqrt()))
}

/// Bures distance `[tr(Σ₁ + Σ₂ − 2(Σ₁^{½}Σ₂Σ₁^{½})^{½})]^{½}`.
pub fn bures_distance<T: Real>(sigma1: &SpdMatrix<T>, sigma2: &SpdMatrix<T>) -> Result<T> {
    bures_distance_squared(sigma1, sigma2).map(|b2| b2.sqrt())
}

/// Squared Bures distance, evaluated as `‖Σ₁^{½} − Σ₂^{½}U‖_F²` with `U` the
/// orthogonal polar factor of `Σ₂^{½}Σ₁^{½}`. This equals the trace formula
/// but is a sum of squares, so it never goes negative and vanishes to
/// machine precision for equal arguments.
pub fn bures_distance_squared<T: Real>(sigma1: &SpdMatrix<T>, sigma2: &SpdMatrix<T>) -> Result<T> {
    check_dim("bures_distance", sigma1.dim(), sigma2.dim())?;
    let root1 = spd_sqrt(sigma1);
    let root2 = spd_sqrt(sigma2);
    let svd = (&root2.0 * &root1.0).svd(true, true);
    let u = svd.u.expect("left singular vectors") * svd.v_t.expect("right singular vectors");
    let diff = &root1.0 - &root2.0 * u;
    let b2 = diff.norm_squared();
    if !b2.is_finite() {
        return Err(Error::NonFinite("Bures distance"));
    }
    Ok(b2)
}

/// Bures–Wasserstein metric `tr(L_Σ[V₁] Σ L_Σ[V₂])` on `T_Σ S^n_++`.
pub fn bures_inner<T: Real>(sigma: &SpdMatrix<T>, v1: &SymMatrix<T>, v2: &SymMatrix<T>) -> Result<T> {
    check_dim("bures_inner", sigma.dim(), v1.dim())?;
    check_dim("bures_inner", sigma.dim(), v2.dim())?;
    let eig = sigma.eigen();
    let h1 = lyapunov_solve_eigen(&eig, v1);
    let h2 = lyapunov_solve_eigen(&eig, v2);
    Ok((&h1.0 * &sigma.0 * &h2.0).trace())
}

/// The same metric through the identity `⟨V₁,V₂⟩_Σ = ½ tr(L_Σ[V₁] V₂)`.
pub fn bures_inner_half_trace<T: Real>(
    sigma: &SpdMatrix<T>,
    v1: &SymMatrix<T>,
    v2: &SymMatrix<T>,
) -> Result<T> {
    let h1 = lyapunov_solve(sigma, v1)?;
    check_dim("bures_inner", sigma.dim(), v2.dim())?;
    Ok(h1.frobenius_dot(v2) * T::lit(0.5))
}

/// Product metric `⟨w₁,w₂⟩ + ⟨v₁,v₂⟩ + ⟨V₁,V₂⟩_Σ` at `z`.
pub fn tangent_inner<T: Real>(z: &Particle<T>, a: &TangentVector<T>, b: &TangentVector<T>) -> Result<T> {
    a.check_at(z)?;
    b.check_at(z)?;
    Ok(a.x.dot(&b.x) + a.mu.dot(&b.mu) + bures_inner(&z.sigma, &a.sigma, &b.sigma)?)
}

pub fn tangent_norm<T: Real>(z: &Particle<T>, xi: &TangentVector<T>) -> Result<T> {
    Ok(tangent_norm_squared(z, xi)?.sqrt())
}

pub fn tangent_norm_squared<T: Real>(z: &Particle<T>, xi: &TangentVector<T>) -> Result<T> {
    xi.check_at(z)?;
    let eig = z.sigma.eigen();
    let h = lyapunov_solve_eigen(&eig, &xi.sigma);
    let cov = (&h.0 * &z.sigma.0 * &h.0).trace().max(T::zero());
    Ok(xi.x.norm_squared() + xi.mu.norm_squared() + cov)
}

/// Ground metric `d` on `Z`.
pub fn ground_distance<T: Real>(z1: &Particle<T>, z2: &Particle<T>) -> Result<T> {
    Ok(ground_distance_squared(z1, z2)?.sqrt())
}

pub fn ground_distance_squared<T: Real>(z1: &Particle<T>, z2: &Particle<T>) -> Result<T> {
    z1.same_shape(z2)?;
    let b2 = bures_distance_squared(&z1.sigma, &z2.sigma)?;
    Ok((&z1.x - &z2.x).norm_squared() + (&z1.mu - &z2.mu).norm_squared() + b2)
}

/// Outcome of a geodesic feasibility query.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Feasibility<T> {
    pub feasible: bool,
    /// Minimum eigenvalue of `I + t·L_Σ[V]`.
    pub margin: T,
}

fn step_factor<T: Real>(eig: &SymEigen<T>, v: &SymMatrix<T>, t: T) -> DMatrix<T> {
    let n = v.dim();
    let l = lyapunov_solve_eigen(eig, v);
    DMatrix::identity(n, n) + &l.0 * t
}

pub fn exp_map_feasible<T: Real>(z: &Particle<T>, xi: &TangentVector<T>, t: T) -> Result<Feasibility<T>> {
    exp_map_feasible_with_floor(z, xi, t, T::lit(DEFAULT_SPD_FLOOR))
}

/// Whether `t` lies in the interval keeping `I + t·L_Σ[V]` positive definite.
pub fn exp_map_feasible_with_floor<T: Real>(
    z: &Particle<T>,
    xi: &TangentVector<T>,
    t: T,
    floor: T,
) -> Result<Feasibility<T>> {
    xi.check_at(z)?;
    let factor = step_factor(&z.sigma.eigen(), &xi.sigma, t);
    let margin = SymEigen::new(&factor).min_value();
    Ok(Feasibility {
        feasible: margin > floor,
        margin,
    })
}

pub fn exp_map<T: Real>(z: &Particle<T>, xi: &TangentVector<T>, t: T) -> Result<Particle<T>> {
    exp_map_with_floor(z, xi, t, T::lit(DEFAULT_SPD_FLOOR))
}

/// Riemannian exponential map `exp_z(tξ) = (x + tw, μ + tv, (I+tL)Σ(I+tL))`
/// with `L = L_Σ[V]`.
///
/// Fails with [`Error::InfeasibleStep`] when `I + tL` is not positive definite
/// or the resulting covariance falls below the SPD floor. Never projects.
pub fn exp_map_with_floor<T: Real>(
    z: &Particle<T>,
    xi: &TangentVector<T>,
    t: T,
    floor: T,
) -> Result<Particle<T>> {
    xi.check_at(z)?;
    let factor = step_factor(&z.sigma.eigen(), &xi.sigma, t);
    let margin = SymEigen::new(&factor).min_value();
    if !(margin > floor) {
        return Err(Error::InfeasibleStep {
            margin: margin.to_f64_lossy(),
        });
    }
    let next = symmetrize(&(&factor * &z.sigma.0 * &factor));
    check_finite(&next, "covariance after exponential map")?;
    let min = SymEigen::new(&next).min_value();
    if !(min >= floor) {
        return Err(Error::InfeasibleStep {
            margin: min.to_f64_lossy(),
        });
    }
    let x = &z.x + &xi.x * t;
    let mu = &z.mu + &xi.mu * t;
    if x.iter().chain(mu.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("particle after exponential map"));
    }
    Ok(Particle {
        x,
        mu,
        sigma: SpdMatrix(next),
    })
}

/// Converts Euclidean partial gradients into the Riemannian gradient:
/// `(g_x, g_μ, 2GΣ + 2ΣG)`.
pub fn riemannian_lift<T: Real>(z: &Particle<T>, grad: &EuclideanGradient<T>) -> Result<TangentVector<T>> {
    check_dim("gradient feature dimension", z.m(), grad.x.len())?;
    check_dim("gradient lifted dimension", z.n(), grad.mu.len())?;
    check_dim("gradient covariance dimension", z.n(), grad.sigma.dim())?;
    let gs = &grad.sigma.0 * &z.sigma.0;
    let lifted = (&gs + gs.transpose()) * T::lit(2.0);
    Ok(TangentVector {
        x: grad.x.clone(),
        mu: grad.mu.clone(),
        sigma: SymMatrix::symmetric_part(&lifted),
    })
}

/// Eigenvalue clamp: eigenvalues below `eps` are raised to `eps`.
///
/// The result is returned without re-validating against the SPD floor, so an
/// `eps` below the floor is honored as given.
pub fn spd_regularize<T: Real>(a: &SymMatrix<T>, eps: T) -> SpdMatrix<T> {
    let eig = a.eigen();
    if eig.min_value() > eps {
        return SpdMatrix(a.0.clone());
    }
    SpdMatrix(eig.map(|l| l.max(eps)))
}
