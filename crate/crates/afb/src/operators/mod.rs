//! Forward/backward operator abstractions and a small catalog of concrete
//! operators with closed-form or internally solvable evaluations.
//!
//! The composition `T = T_A o T_B` with `T_B = I - gamma*B` drives every
//! engine in this crate; `S = I - T` is the residual operator whose zeros are
//! the sought fixed points.

pub mod probes;
pub mod prox;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::block::{BlockPartition, BlockVector};
use crate::error::{Error, Result};

/// Largest eigenvalue of a symmetric PSD map given as a matvec closure,
/// by power iteration to relative tolerance `tol`.
pub fn power_iteration(dim: usize, matvec: impl Fn(&[f64]) -> Vec<f64>, tol: f64) -> f64 {
    assert!(dim >= 1);
    // deterministic, non-degenerate start
    let mut v: Vec<f64> = (0..dim).map(|i| 1.0 / (i as f64 + 1.0)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    for x in &mut v {
        *x /= norm;
    }
    let mut lambda = 0.0f64;
    for _ in 0..50_000 {
        let mut w = matvec(&v);
        let rq: f64 = v.iter().zip(&w).map(|(a, b)| a * b).sum();
        let wn = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if wn <= f64::MIN_POSITIVE {
            return 0.0; // operator annihilates the start vector and its orbit
        }
        for x in &mut w {
            *x /= wn;
        }
        v = w;
        if (rq - lambda).abs() <= tol * rq.abs().max(1e-300) || (rq - lambda).abs() <= tol {
            return rq.max(0.0);
        }
        lambda = rq;
    }
    lambda.max(0.0)
}

/// Extreme eigenvalues (min, max) of a symmetric PSD matrix via power
/// iteration plus a spectral shift for the smallest one.
pub fn extreme_eigenvalues(q: &DMatrix<f64>, tol: f64) -> (f64, f64) {
    let dim = q.nrows();
    let mv = |v: &[f64]| -> Vec<f64> {
        let x = DVector::from_column_slice(v);
        (q * x).as_slice().to_vec()
    };
    let lambda_max = power_iteration(dim, mv, tol);
    // lambda_min(Q) = lambda_max - lambda_max(lambda_max*I - Q)
    let shifted = |v: &[f64]| -> Vec<f64> {
        let x = DVector::from_column_slice(v);
        let qx = q * &x;
        (0..dim).map(|i| lambda_max * x[i] - qx[i]).collect()
    };
    let spread = power_iteration(dim, shifted, tol);
    ((lambda_max - spread).max(0.0), lambda_max)
}

enum ForwardMap {
    Zero,
    /// B(x) = Q x + c with Q symmetric PSD.
    Quadratic { q: DMatrix<f64>, c: DVector<f64> },
    Custom(Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>),
}

/// The forward operator `B` together with its constants: `B` is
/// `1/L`-cocoercive and `mu`-strongly monotone (`mu = 0` when unknown).
pub struct ForwardOperator {
    map: ForwardMap,
    l: f64,
    mu: f64,
}

impl ForwardOperator {
    /// B = 0; admissible for every step size.
    pub fn zero() -> Self {
        Self { map: ForwardMap::Zero, l: 0.0, mu: 0.0 }
    }

    /// B = I (gradient of x -> ||x||^2 / 2).
    pub fn identity() -> Self {
        Self::scaled_identity(1.0).expect("unit scaling is valid")
    }

    /// B = c*I for c >= 0.
    pub fn scaled_identity(c: f64) -> Result<Self> {
        if !(c >= 0.0) {
            return Err(Error::InvalidParameter(format!("scaling must be >= 0, got {c}")));
        }
        let map = ForwardMap::Custom(Arc::new(move |x: &[f64]| x.iter().map(|v| c * v).collect()));
        Ok(Self { map, l: c, mu: c })
    }

    /// Gradient of the quadratic `x -> x'Qx/2 + c'x`; `L` and `mu` are the
    /// extreme eigenvalues of `Q`, computed by power iteration rather than
    /// taken on trust.
    pub fn quadratic(q: DMatrix<f64>, c: DVector<f64>) -> Result<Self> {
        let n = q.nrows();
        if q.ncols() != n || c.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: c.len() });
        }
        let scale = q.amax().max(1.0);
        for i in 0..n {
            for j in (i + 1)..n {
                if (q[(i, j)] - q[(j, i)]).abs() > 1e-10 * scale {
                    return Err(Error::InvalidParameter("quadratic forward operator needs a symmetric matrix".into()));
                }
            }
        }
        let (mu, l) = extreme_eigenvalues(&q, 1e-8);
        Self::validated(ForwardMap::Quadratic { q, c }, l, mu)
    }

    /// Gradient of a separable quadratic with per-coordinate curvatures.
    pub fn quadratic_diag(diag: Vec<f64>, c: Vec<f64>) -> Result<Self> {
        if diag.len() != c.len() {
            return Err(Error::DimensionMismatch { expected: diag.len(), got: c.len() });
        }
        if diag.iter().any(|d| *d < 0.0) {
            return Err(Error::InvalidParameter("diagonal curvatures must be >= 0".into()));
        }
        let l = diag.iter().cloned().fold(0.0f64, f64::max);
        let mu = diag.iter().cloned().fold(f64::INFINITY, f64::min);
        let q = DMatrix::from_diagonal(&DVector::from_vec(diag));
        Self::validated(ForwardMap::Quadratic { q, c: DVector::from_vec(c) }, l, mu)
    }

    /// Arbitrary map with caller-supplied constants.
    pub fn from_fn(
        f: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
        l: f64,
        mu: f64,
    ) -> Result<Self> {
        Self::validated(ForwardMap::Custom(Arc::new(f)), l, mu)
    }

    fn validated(map: ForwardMap, l: f64, mu: f64) -> Result<Self> {
        if !(0.0 <= mu && mu <= l + 1e-12) {
            return Err(Error::InvalidParameter(format!(
                "need 0 <= mu <= L, got mu={mu}, L={l}"
            )));
        }
        Ok(Self { map, l, mu: mu.min(l) })
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        match &self.map {
            ForwardMap::Zero => vec![0.0; x.len()],
            ForwardMap::Quadratic { q, c } => {
                let v = DVector::from_column_slice(x);
                let mut out = q * v;
                out += c;
                out.as_slice().to_vec()
            }
            ForwardMap::Custom(f) => f(x),
        }
    }

    /// Inverse cocoercivity constant `L`.
    pub fn inv_cocoercivity(&self) -> f64 {
        self.l
    }

    /// Strong monotonicity constant `mu` (0 when absent).
    pub fn strong_monotonicity(&self) -> f64 {
        self.mu
    }
}

impl std::fmt::Debug for ForwardOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let kind = match &self.map {
            ForwardMap::Zero => "zero",
            ForwardMap::Quadratic { .. } => "quadratic",
            ForwardMap::Custom(_) => "custom",
        };
        f.debug_struct("ForwardOperator")
            .field("kind", &kind)
            .field("l", &self.l)
            .field("mu", &self.mu)
            .finish()
    }
}

/// One separable backward block `T_{A_i} : H_i -> H_i`.
pub enum BackwardBlock {
    Identity,
    /// Projection onto a coordinate box (prox of its indicator).
    BoxProjection { lo: Vec<f64>, hi: Vec<f64> },
    /// Prox of `f(x) = sum_j q_diag_j x_j^2 / 2 + q_lin_j x_j` (closed form).
    SeparableQuadratic { q_diag: Vec<f64>, q_lin: Vec<f64> },
    /// Prox of a box-constrained quadratic, solved by projected gradient.
    BoxQp(BoxQpBlock),
    /// Arbitrary nonexpansive block map `(gamma, v) -> T_{A_i}(v)`.
    Custom {
        dim: usize,
        map: Arc<dyn Fn(f64, &[f64]) -> Vec<f64> + Send + Sync>,
    },
}

/// Cached data for a box-constrained quadratic prox block:
/// `g(x) = x'Qx/2 + q'x + indicator(lo <= x <= hi)`.
pub struct BoxQpBlock {
    pub q: DMatrix<f64>,
    pub lin: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub tol: f64,
    lambda_max: f64,
}

impl BoxQpBlock {
    pub fn new(q: DMatrix<f64>, lin: Vec<f64>, lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        let n = q.nrows();
        if q.ncols() != n || lin.len() != n || lo.len() != n || hi.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: lin.len() });
        }
        if lo.iter().zip(&hi).any(|(a, b)| a > b) {
            return Err(Error::InvalidParameter("box needs lo <= hi".into()));
        }
        let mv = |v: &[f64]| {
            let x = DVector::from_column_slice(v);
            (&q * x).as_slice().to_vec()
        };
        let lambda_max = power_iteration(n, mv, 1e-8);
        Ok(Self { q, lin, lo, hi, tol: prox::DEFAULT_INNER_TOL, lambda_max })
    }

    pub fn lambda_max(&self) -> f64 {
        self.lambda_max
    }
}

impl BackwardBlock {
    /// Expected block dimension, if the block pins one.
    pub fn dim(&self) -> Option<usize> {
        match self {
            BackwardBlock::Identity => None,
            BackwardBlock::BoxProjection { lo, .. } => Some(lo.len()),
            BackwardBlock::SeparableQuadratic { q_diag, .. } => Some(q_diag.len()),
            BackwardBlock::BoxQp(b) => Some(b.lin.len()),
            BackwardBlock::Custom { dim, .. } => Some(*dim),
        }
    }

    /// Applies `T_{A_i}` with step size `gamma` to the block value `v`.
    pub fn apply(&self, gamma: f64, v: &[f64]) -> Result<Vec<f64>> {
        match self {
            BackwardBlock::Identity => Ok(v.to_vec()),
            BackwardBlock::BoxProjection { lo, hi } => {
                if v.len() != lo.len() {
                    return Err(Error::DimensionMismatch { expected: lo.len(), got: v.len() });
                }
                Ok(v.iter()
                    .zip(lo.iter().zip(hi))
                    .map(|(x, (a, b))| x.max(*a).min(*b))
                    .collect())
            }
            BackwardBlock::SeparableQuadratic { q_diag, q_lin } => {
                prox::prox_separable_quadratic(q_diag, q_lin, gamma, v)
            }
            BackwardBlock::BoxQp(b) => prox::prox_box_qp_cached(b, gamma, v),
            BackwardBlock::Custom { dim, map } => {
                if v.len() != *dim {
                    return Err(Error::DimensionMismatch { expected: *dim, got: v.len() });
                }
                Ok(map(gamma, v))
            }
        }
    }
}

impl std::fmt::Debug for BackwardBlock {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let kind = match self {
            BackwardBlock::Identity => "identity",
            BackwardBlock::BoxProjection { .. } => "box_projection",
            BackwardBlock::SeparableQuadratic { .. } => "separable_quadratic",
            BackwardBlock::BoxQp(_) => "box_qp",
            BackwardBlock::Custom { .. } => "custom",
        };
        write!(f, "BackwardBlock::{kind}")
    }
}

/// The separable backward operator `T_A = (T_{A_1}, ..., T_{A_N})`.
#[derive(Debug)]
pub struct BackwardBlocks {
    blocks: Vec<BackwardBlock>,
}

impl BackwardBlocks {
    pub fn new(blocks: Vec<BackwardBlock>) -> Self {
        Self { blocks }
    }

    /// N identical copies cannot be cloned for non-trivial blocks, so the most
    /// common separable catalogs get shortcuts.
    pub fn identity(n_blocks: usize) -> Self {
        Self::new((0..n_blocks).map(|_| BackwardBlock::Identity).collect())
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn block(&self, i: usize) -> &BackwardBlock {
        &self.blocks[i]
    }

    fn check_partition(&self, partition: &BlockPartition) -> Result<()> {
        if self.blocks.len() != partition.num_blocks() {
            return Err(Error::DimensionMismatch {
                expected: partition.num_blocks(),
                got: self.blocks.len(),
            });
        }
        for (i, b) in self.blocks.iter().enumerate() {
            if let Some(d) = b.dim() {
                if d != partition.block_dim(i) {
                    return Err(Error::DimensionMismatch { expected: partition.block_dim(i), got: d });
                }
            }
        }
        Ok(())
    }
}

/// A forward operator, a separable backward operator and a step size; the
/// full description of `T = T_A o (I - gamma*B)` on a partitioned space.
#[derive(Debug)]
pub struct OperatorPair {
    partition: Arc<BlockPartition>,
    pub forward: ForwardOperator,
    pub backward: BackwardBlocks,
    pub gamma: f64,
}

impl OperatorPair {
    /// Validates the admissible step range `0 < gamma < 2/L` on top of the
    /// structural checks.
    pub fn new(
        partition: Arc<BlockPartition>,
        forward: ForwardOperator,
        backward: BackwardBlocks,
        gamma: f64,
    ) -> Result<Self> {
        let pair = Self::new_unchecked(partition, forward, backward, gamma)?;
        let gmax = pair.gamma_max();
        if !(gamma > 0.0 && gamma < gmax) {
            return Err(Error::InvalidParameter(format!(
                "step size gamma={gamma} outside the admissible range (0, {gmax})"
            )));
        }
        Ok(pair)
    }

    /// Structural checks only; callers may build deliberately inadmissible
    /// pairs (gamma = 0, gamma >= 2/L) for probing and edge-case tests.
    pub fn new_unchecked(
        partition: Arc<BlockPartition>,
        forward: ForwardOperator,
        backward: BackwardBlocks,
        gamma: f64,
    ) -> Result<Self> {
        backward.check_partition(&partition)?;
        if !gamma.is_finite() || gamma < 0.0 {
            return Err(Error::InvalidParameter(format!("gamma must be finite and >= 0, got {gamma}")));
        }
        Ok(Self { partition, forward, backward, gamma })
    }

    /// Hard validity bound `2/L` (infinite when `L = 0`).
    pub fn gamma_max(&self) -> f64 {
        let l = self.forward.inv_cocoercivity();
        if l <= 0.0 {
            f64::INFINITY
        } else {
            2.0 / l
        }
    }

    pub fn partition(&self) -> &Arc<BlockPartition> {
        &self.partition
    }

    pub fn num_blocks(&self) -> usize {
        self.partition.num_blocks()
    }

    fn check_conforms(&self, x: &BlockVector) -> Result<()> {
        if x.partition().as_ref() != self.partition.as_ref() {
            return Err(Error::DimensionMismatch {
                expected: self.partition.total_dim(),
                got: x.dim(),
            });
        }
        Ok(())
    }

    /// `T_B x = x - gamma * B(x)`.
    pub fn apply_forward_step(&self, x: &BlockVector) -> Result<BlockVector> {
        self.check_conforms(x)?;
        let bx = self.forward.eval(x.as_slice());
        if bx.len() != x.dim() {
            return Err(Error::DimensionMismatch { expected: x.dim(), got: bx.len() });
        }
        let data = x
            .as_slice()
            .iter()
            .zip(&bx)
            .map(|(xi, bi)| xi - self.gamma * bi)
            .collect();
        BlockVector::new(self.partition.clone(), data)
    }

    /// `T x = T_A(T_B x)`, block `i` of `T_A` applied to block `i` of `T_B x`.
    pub fn apply_t(&self, x: &BlockVector) -> Result<BlockVector> {
        let tb = self.apply_forward_step(x)?;
        let mut out = BlockVector::zeros(self.partition.clone());
        for i in 0..self.partition.num_blocks() {
            let yi = self.backward.block(i).apply(self.gamma, tb.block(i))?;
            out.set_block(i, &yi)?;
        }
        Ok(out)
    }

    /// `S x = x - T x`; zero exactly at fixed points of `T`.
    pub fn apply_s(&self, x: &BlockVector) -> Result<BlockVector> {
        let tx = self.apply_t(x)?;
        Ok(x.sub(&tx))
    }

    /// `||S x||`, the fixed-point residual.
    pub fn residual(&self, x: &BlockVector) -> Result<f64> {
        Ok(self.apply_s(x)?.norm())
    }
}
