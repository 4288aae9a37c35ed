//! Linearised operators at the static wall, their dense matrices and spectra.
//!
//! ```text
//! L1 u = κu'' - u/ε - u/2 + ½cos2θ u + κθ'² u + (1/ε)S[cos θ]cos θ u + (1/ε)S[u]
//! L2 v = κv'' + cos2θ v - (1/ε)S[sin θ v] sin θ + (1/ε)S[cos θ]cos θ v
//! L0   = [[L1, αL2], [-αL1, L2]]
//! ```
//!
//! Kernel of L0 is spanned by (0, θ'); its cokernel by (αθ', θ').

use faer::{Mat, MatRef, Side};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::energy::WallProfile;
use crate::error::{NeelError, Result};
use crate::grid::{Grid, GridSpec, RealField};
use crate::linalg;
use crate::params::RescaledParameters;
use crate::strayfield::{Parity, StrayFieldOperator};

/// Largest matrix handed to the dense matrix exponential.
pub const MAX_EXPM_SIZE: usize = 1024;

/// Matrix-free actions of L1, L2 and L0 at one wall.
#[derive(Debug, Clone)]
pub struct WallOperators {
    grid: Grid,
    params: RescaledParameters,
    stray: StrayFieldOperator,
    trig_parity: Parity,
    sin: Vec<f64>,
    slope: Vec<f64>,
    d2_table: Vec<f64>,
    diag1: Vec<f64>,
    diag2: Vec<f64>,
}

impl WallOperators {
    pub fn new(wall: &WallProfile) -> Result<Self> {
        let grid = wall.grid().clone();
        let params = wall.params;
        let stray = StrayFieldOperator::new(&grid, params.epsilon)?;
        let trig_parity = wall.profile.winding().trig_parity();
        let cos: Vec<f64> = wall.theta().iter().map(|t| t.cos()).collect();
        let sin: Vec<f64> = wall.theta().iter().map(|t| t.sin()).collect();
        let sc = stray.apply_with(&cos, trig_parity);
        let (k, e) = (params.kappa, params.epsilon);
        let slope = wall.derivative().to_vec();
        let mut diag1 = Vec::with_capacity(grid.len());
        let mut diag2 = Vec::with_capacity(grid.len());
        for j in 0..grid.len() {
            let c2 = (2.0 * wall.theta()[j]).cos();
            let scc = sc[j] * cos[j];
            diag1.push(-1.0 / e - 0.5 + 0.5 * c2 + k * slope[j] * slope[j] + scc);
            diag2.push(c2 + scc);
        }
        let d2_table = grid.half_frequencies().iter().map(|xi| -k * xi * xi).collect();
        Ok(Self {
            grid,
            params,
            stray,
            trig_parity,
            sin,
            slope,
            d2_table,
            diag1,
            diag2,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn params(&self) -> &RescaledParameters {
        &self.params
    }

    pub fn slope(&self) -> &[f64] {
        &self.slope
    }

    pub fn stray(&self) -> &StrayFieldOperator {
        &self.stray
    }

    pub fn apply_l1(&self, u: &[f64]) -> Vec<f64> {
        // κu'' + (1/ε)S[u] share one transform.
        let table: Vec<f64> = self
            .d2_table
            .iter()
            .zip(self.stray.multipliers())
            .map(|(a, b)| a + b)
            .collect();
        let lu = self.grid.apply_even(u, &table);
        lu.iter().zip(&self.diag1).zip(u).map(|((l, d), u)| l + d * u).collect()
    }

    pub fn apply_l2(&self, v: &[f64]) -> Vec<f64> {
        let d2v = self.grid.apply_even(v, &self.d2_table);
        let sv: Vec<f64> = self.sin.iter().zip(v).map(|(s, v)| s * v).collect();
        let ssv = self.stray.apply_with(&sv, self.trig_parity);
        (0..v.len())
            .map(|j| d2v[j] + self.diag2[j] * v[j] - ssv[j] * self.sin[j])
            .collect()
    }

    /// L0 (u, v) at damping ratio α.
    pub fn apply_l0(&self, alpha: f64, u: &[f64], v: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let a = self.apply_l1(u);
        let b = self.apply_l2(v);
        let top = a.iter().zip(&b).map(|(a, b)| a + alpha * b).collect();
        let bottom = a.iter().zip(&b).map(|(a, b)| -alpha * a + b).collect();
        (top, bottom)
    }

    fn assemble_with<F: Fn(&[f64]) -> Vec<f64>>(&self, apply: F) -> Mat<f64> {
        let n = self.grid.len();
        let mut m = Mat::<f64>::zeros(n, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            let col = apply(&e);
            e[j] = 0.0;
            for i in 0..n {
                m[(i, j)] = col[i];
            }
        }
        m
    }

    pub fn assemble_l1(&self) -> LinearOperatorMatrix {
        let m = self.assemble_with(|u| self.apply_l1(u));
        LinearOperatorMatrix::new(OperatorLabel::L1, m, Some(self.grid.spec()), true)
    }

    pub fn assemble_l2(&self) -> LinearOperatorMatrix {
        let m = self.assemble_with(|v| self.apply_l2(v));
        LinearOperatorMatrix::new(OperatorLabel::L2, m, Some(self.grid.spec()), true)
    }

    pub fn assemble_l0(&self, alpha: f64) -> LinearOperatorMatrix {
        let l1 = self.assemble_with(|u| self.apply_l1(u));
        let l2 = self.assemble_with(|v| self.apply_l2(v));
        LinearOperatorMatrix::new(
            OperatorLabel::L0 { alpha },
            block_matrix(l1.as_ref(), l2.as_ref(), alpha),
            Some(self.grid.spec()),
            alpha == 0.0,
        )
    }

    /// Kernel vector (0, θ') of L0.
    pub fn kernel_vector(&self) -> Vec<f64> {
        let n = self.grid.len();
        let mut k = vec![0.0; 2 * n];
        k[n..].copy_from_slice(&self.slope);
        k
    }

    /// Cokernel vector (αθ', θ') of L0.
    pub fn cokernel_vector(&self, alpha: f64) -> Vec<f64> {
        let n = self.grid.len();
        let mut k = vec![0.0; 2 * n];
        for j in 0..n {
            k[j] = alpha * self.slope[j];
            k[n + j] = self.slope[j];
        }
        k
    }
}

/// [[A, αB], [-αA, B]].
pub fn block_matrix(a: MatRef<'_, f64>, b: MatRef<'_, f64>, alpha: f64) -> Mat<f64> {
    let n = a.nrows();
    Mat::from_fn(2 * n, 2 * n, |i, j| match (i < n, j < n) {
        (true, true) => a[(i, j)],
        (true, false) => alpha * b[(i, j - n)],
        (false, true) => -alpha * a[(i - n, j)],
        (false, false) => b[(i - n, j - n)],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum OperatorLabel {
    L1,
    L2,
    L0 { alpha: f64 },
    Custom { name: String },
}

impl OperatorLabel {
    pub fn name(&self) -> String {
        match self {
            OperatorLabel::L1 => "L1".into(),
            OperatorLabel::L2 => "L2".into(),
            OperatorLabel::L0 { alpha } => format!("L0(alpha={alpha})"),
            OperatorLabel::Custom { name } => name.clone(),
        }
    }
}

/// Dense real matrix with a label and a measured symmetry defect.
#[derive(Debug, Clone)]
pub struct LinearOperatorMatrix {
    pub label: OperatorLabel,
    pub matrix: Mat<f64>,
    /// Set when the operator is symmetric in exact arithmetic and the
    /// assembled matrix agrees to 1e-10 relative.
    pub symmetric: bool,
    /// max |A - Aᵀ| / max |A|.
    pub asymmetry: f64,
    pub grid: Option<GridSpec>,
}

/// Relative asymmetry accepted for the symmetric path.
pub const SYMMETRY_TOL: f64 = 1e-10;

impl LinearOperatorMatrix {
    pub fn new(label: OperatorLabel, matrix: Mat<f64>, grid: Option<GridSpec>, expect_symmetric: bool) -> Self {
        let scale = linalg::max_abs(matrix.as_ref()).max(f64::MIN_POSITIVE);
        let asymmetry = if matrix.nrows() == matrix.ncols() {
            linalg::asymmetry(matrix.as_ref()) / scale
        } else {
            f64::INFINITY
        };
        Self {
            symmetric: expect_symmetric && asymmetry <= SYMMETRY_TOL,
            label,
            matrix,
            asymmetry,
            grid,
        }
    }

    pub fn custom(name: &str, matrix: Mat<f64>) -> Self {
        Self::new(OperatorLabel::Custom { name: name.into() }, matrix, None, false)
    }

    pub fn size(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        linalg::matvec(self.matrix.as_ref(), v)
    }

    pub fn norm(&self) -> f64 {
        linalg::norm2_estimate(self.matrix.as_ref())
    }
}

/// Relative thresholds used by [`spectrum`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectrumTolerances {
    /// |λ| <= zero_rel ‖op‖ counts as a kernel eigenvalue.
    pub zero_rel: f64,
    /// |Re λ| <= imaginary_rel ‖op‖ counts as lying on the imaginary axis.
    pub imaginary_rel: f64,
}

impl Default for SpectrumTolerances {
    fn default() -> Self {
        Self {
            zero_rel: 1e-6,
            imaginary_rel: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Claim {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Eigenvalues of a dense operator and what they say about the kernel and the
/// imaginary axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub label: String,
    pub size: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub params: Option<RescaledParameters>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub grid: Option<GridSpec>,
    pub symmetric_path: bool,
    pub operator_norm: f64,
    pub tolerances: SpectrumTolerances,
    pub tol_zero: f64,
    pub tol_re: f64,
    /// (re, im), sorted by real part then imaginary part.
    pub eigenvalues: Vec<[f64; 2]>,
    pub kernel_dimension_estimate: usize,
    /// Smallest |λ| among eigenvalues outside the kernel.
    pub spectral_gap: f64,
    /// Largest real part among eigenvalues outside the kernel.
    pub max_real_nonzero: f64,
    pub imaginary_axis_violations: Vec<[f64; 2]>,
    #[serde(default)]
    pub claims: Vec<Claim>,
}

impl SpectrumReport {
    pub fn add_claim(&mut self, name: &str, passed: bool, detail: String) {
        self.claims.push(Claim {
            name: name.into(),
            passed,
            detail,
        });
    }

    pub fn all_claims_pass(&self) -> bool {
        self.claims.iter().all(|c| c.passed)
    }

    /// Eigenvalue of largest real part.
    pub fn max_real(&self) -> f64 {
        self.eigenvalues.iter().map(|z| z[0]).fold(f64::NEG_INFINITY, f64::max)
    }
}

fn build_report(
    label: String,
    size: usize,
    mut eigenvalues: Vec<[f64; 2]>,
    norm: f64,
    tol: &SpectrumTolerances,
    symmetric_path: bool,
) -> SpectrumReport {
    eigenvalues.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    let tol_zero = tol.zero_rel * norm;
    let tol_re = tol.imaginary_rel * norm;
    let modulus = |z: &[f64; 2]| z[0].hypot(z[1]);
    let kernel = eigenvalues.iter().filter(|z| modulus(z) <= tol_zero).count();
    let nonzero = eigenvalues.iter().filter(|z| modulus(z) > tol_zero);
    let spectral_gap = nonzero.clone().map(modulus).fold(f64::INFINITY, f64::min);
    let max_real_nonzero = nonzero.clone().map(|z| z[0]).fold(f64::NEG_INFINITY, f64::max);
    let imaginary_axis_violations = nonzero.filter(|z| z[0].abs() <= tol_re).cloned().collect();
    SpectrumReport {
        label,
        size,
        params: None,
        grid: None,
        symmetric_path,
        operator_norm: norm,
        tolerances: *tol,
        tol_zero,
        tol_re,
        eigenvalues,
        kernel_dimension_estimate: kernel,
        spectral_gap,
        max_real_nonzero,
        imaginary_axis_violations,
        claims: Vec::new(),
    }
}

/// Full dense eigendecomposition. Symmetric operators use the self-adjoint
/// solver on (A + Aᵀ)/2; others are balanced first.
pub fn spectrum(op: &LinearOperatorMatrix, tol: &SpectrumTolerances) -> Result<SpectrumReport> {
    let n = op.size();
    if n != op.matrix.ncols() {
        return Err(NeelError::Dimension {
            expected: "square matrix".into(),
            found: format!("{}x{}", n, op.matrix.ncols()),
        });
    }
    let a = op.matrix.as_ref();
    let (eigs, norm) = if op.symmetric {
        let sym = Mat::from_fn(n, n, |i, j| 0.5 * (a[(i, j)] + a[(j, i)]));
        let vals = sym.self_adjoint_eigenvalues(Side::Lower).map_err(|e| {
            NeelError::Numerical(format!(
                "symmetric eigensolver failed for {}: {e:?} (asymmetry {:.2e})",
                op.label.name(),
                op.asymmetry
            ))
        })?;
        let norm = vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        (vals.into_iter().map(|v| [v, 0.0]).collect::<Vec<_>>(), norm)
    } else {
        let balanced = linalg::balance(a);
        let vals = balanced.eigenvalues().map_err(|e| {
            NeelError::Numerical(format!(
                "eigensolver failed for {}: {e:?} (1-norm {:.3e})",
                op.label.name(),
                linalg::one_norm(a)
            ))
        })?;
        (vals.iter().map(|z| [z.re, z.im]).collect(), op.norm())
    };
    if eigs.iter().any(|z| !z[0].is_finite() || !z[1].is_finite()) {
        return Err(NeelError::Numerical(format!(
            "non-finite eigenvalues for {}",
            op.label.name()
        )));
    }
    let mut report = build_report(op.label.name(), n, eigs, norm, tol, op.symmetric);
    report.grid = op.grid;
    Ok(report)
}

/// 𝒢(u, v) = ⟨-op u, v⟩.
pub fn quadratic_form_g(op: &LinearOperatorMatrix, u: &RealField, v: &RealField) -> Result<f64> {
    let n = u.grid().len();
    if op.size() != n {
        return Err(NeelError::length(op.size(), n));
    }
    if u.grid() != v.grid() {
        return Err(NeelError::grid_mismatch(u.grid(), v.grid()));
    }
    let au = op.apply(u.values());
    Ok(-u.grid().dot(&au, v.values()))
}

/// ℋ(u, v) = ∫(1 + σε/ε) û v̂* for fields of the given parity.
pub fn quadratic_form_h_with(u: &RealField, v: &RealField, epsilon: f64, parity: Parity) -> Result<f64> {
    if u.grid() != v.grid() {
        return Err(NeelError::grid_mismatch(u.grid(), v.grid()));
    }
    let g = u.grid();
    let op = StrayFieldOperator::new(g, epsilon)?;
    let su = op.apply_with(u.values(), parity);
    Ok(g.dot(u.values(), v.values()) + g.dot(&su, v.values()))
}

pub fn quadratic_form_h(u: &RealField, v: &RealField, epsilon: f64) -> Result<f64> {
    quadratic_form_h_with(u, v, epsilon, Parity::Periodic)
}

/// Spectrum of [[A, αB], [-αA, B]] for symmetric A and B.
pub fn block_lemma_check(
    a: MatRef<'_, f64>,
    b: MatRef<'_, f64>,
    alpha: f64,
    tol: &SpectrumTolerances,
) -> Result<SpectrumReport> {
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n || b.ncols() != n {
        return Err(NeelError::Dimension {
            expected: format!("two {n}x{n} matrices"),
            found: format!("{}x{} and {}x{}", a.nrows(), a.ncols(), b.nrows(), b.ncols()),
        });
    }
    for (name, m) in [("A", a), ("B", b)] {
        let scale = linalg::max_abs(m).max(f64::MIN_POSITIVE);
        if linalg::asymmetry(m) > SYMMETRY_TOL * scale {
            return Err(NeelError::InvalidParameter(format!("{name} is not symmetric")));
        }
    }
    let t = LinearOperatorMatrix::custom(&format!("T(alpha={alpha})"), block_matrix(a, b, alpha));
    spectrum(&t, tol)
}

/// Settings for randomized block-lemma trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlockLemmaTrials {
    pub trials: usize,
    pub size: usize,
    pub alphas: Vec<f64>,
    pub seed: u64,
    pub tolerances: SpectrumTolerances,
}

impl Default for BlockLemmaTrials {
    fn default() -> Self {
        Self {
            trials: 100,
            size: 50,
            alphas: vec![0.1, 1.0, 10.0],
            seed: 20240607,
            tolerances: SpectrumTolerances::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockLemmaSummary {
    pub settings: BlockLemmaTrials,
    pub spectra_checked: usize,
    /// (trial, α, eigenvalue) for every nonzero eigenvalue on the imaginary axis.
    pub violations: Vec<(usize, f64, [f64; 2])>,
    /// Smallest |Re λ| / ‖T‖ over nonzero eigenvalues seen.
    pub min_relative_real_part: f64,
}

/// Sum of `bumps` Gaussians with random centres in the middle half of the
/// grid, widths in [1, 4] and amplitudes in [-1, 1]. Smooth enough that
/// spectral derivatives and finite differences of the flow behave.
pub fn random_smooth_field<R: Rng>(grid: &Grid, bumps: usize, rng: &mut R) -> Vec<f64> {
    let l = grid.half_length();
    let shapes: Vec<(f64, f64, f64)> = (0..bumps)
        .map(|_| {
            (
                rng.gen_range(-0.5 * l..=0.5 * l),
                rng.gen_range(1.0..=4.0),
                rng.gen_range(-1.0..=1.0),
            )
        })
        .collect();
    grid.sample(|x| shapes.iter().map(|(c, w, a)| a * (-((x - c) / w).powi(2)).exp()).sum())
}

/// Symmetric matrix with entries uniform in [-1, 1].
pub fn random_symmetric<R: Rng>(n: usize, rng: &mut R) -> Mat<f64> {
    let mut m = Mat::<f64>::zeros(n, n);
    for j in 0..n {
        for i in 0..=j {
            let v = rng.gen_range(-1.0..=1.0);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

/// Draws `trials` symmetric pairs (A, B) and checks the imaginary axis of
/// [[A, αB], [-αA, B]] for each α. Deterministic for a given seed.
pub fn run_block_lemma_trials(settings: &BlockLemmaTrials) -> Result<BlockLemmaSummary> {
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut violations = Vec::new();
    let mut checked = 0;
    let mut min_rel = f64::INFINITY;
    for trial in 0..settings.trials {
        let a = random_symmetric(settings.size, &mut rng);
        let b = random_symmetric(settings.size, &mut rng);
        for &alpha in &settings.alphas {
            let r = block_lemma_check(a.as_ref(), b.as_ref(), alpha, &settings.tolerances)?;
            checked += 1;
            for z in r.eigenvalues.iter().filter(|z| z[0].hypot(z[1]) > r.tol_zero) {
                min_rel = min_rel.min(z[0].abs() / r.operator_norm);
            }
            violations.extend(r.imaginary_axis_violations.iter().map(|z| (trial, alpha, *z)));
        }
    }
    Ok(BlockLemmaSummary {
        settings: settings.clone(),
        spectra_checked: checked,
        violations,
        min_relative_real_part: min_rel,
    })
}

/// Splits f into its range component (f1, f2 - λθ') and the coefficient
/// λ = (αf1 + f2, θ') / ‖θ'‖².
pub fn project_range(
    f1: &RealField,
    f2: &RealField,
    wall: &WallProfile,
    alpha: f64,
) -> Result<(RealField, RealField, f64)> {
    let g = wall.grid();
    for f in [f1, f2] {
        if f.grid() != g {
            return Err(NeelError::grid_mismatch(g, f.grid()));
        }
    }
    let slope = wall.derivative();
    let combined: Vec<f64> = f1
        .values()
        .iter()
        .zip(f2.values())
        .map(|(a, b)| alpha * a + b)
        .collect();
    let lambda = g.dot(&combined, slope) / g.dot(slope, slope);
    let out2 = f2.values().iter().zip(slope).map(|(f, s)| f - lambda * s).collect();
    Ok((f1.clone(), RealField::new(g, out2)?, lambda))
}

/// e^{t op}, dense.
pub fn semigroup(op: &LinearOperatorMatrix, t: f64) -> Result<Mat<f64>> {
    if op.size() > MAX_EXPM_SIZE {
        return Err(NeelError::Resource(format!(
            "dense exponential of a {}x{} matrix exceeds the limit {MAX_EXPM_SIZE}; use a coarser grid",
            op.size(),
            op.size()
        )));
    }
    if !(t >= 0.0 && t.is_finite()) {
        return Err(NeelError::InvalidParameter(format!("t must be nonnegative, got {t}")));
    }
    let scaled = Mat::from_fn(op.size(), op.size(), |i, j| t * op.matrix[(i, j)]);
    linalg::expm(scaled.as_ref())
}

/// e^{t op} u.
pub fn semigroup_action(op: &LinearOperatorMatrix, t: f64, u: &[f64]) -> Result<Vec<f64>> {
    if u.len() != op.size() {
        return Err(NeelError::length(op.size(), u.len()));
    }
    let e = semigroup(op, t)?;
    Ok(linalg::matvec(e.as_ref(), u))
}

/// Minimum-norm least-squares solution of op x = f by a thresholded SVD, with
/// the relative residual ‖op x - f‖ / ‖f‖.
pub fn least_squares(op: &LinearOperatorMatrix, f: &[f64], rel_cutoff: f64) -> Result<(Vec<f64>, f64)> {
    let n = op.size();
    if f.len() != n {
        return Err(NeelError::length(n, f.len()));
    }
    let svd = op
        .matrix
        .svd()
        .map_err(|e| NeelError::Numerical(format!("SVD failed: {e:?}")))?;
    let s = svd.S().column_vector();
    let smax = s[0];
    let u = svd.U();
    let v = svd.V();
    let utf = linalg::transpose_matvec(u, f);
    let mut coef = vec![0.0; n];
    for k in 0..n {
        if s[k] > rel_cutoff * smax {
            coef[k] = utf[k] / s[k];
        }
    }
    let x = linalg::matvec(v, &coef);
    let ax = op.apply(&x);
    let num = ax.iter().zip(f).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let den = f.iter().map(|b| b * b).sum::<f64>().sqrt();
    Ok((x, num / den.max(f64::MIN_POSITIVE)))
}

/// Orthonormal basis (as columns) of the complement of `y`.
pub fn complement_basis(y: &[f64]) -> Mat<f64> {
    let n = y.len();
    let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
    // Householder reflector H with H y ∝ e_0; columns 1.. of H span y⊥.
    let mut w: Vec<f64> = y.iter().map(|v| v / norm).collect();
    let sign = if w[0] >= 0.0 { 1.0 } else { -1.0 };
    w[0] += sign;
    let wn2: f64 = w.iter().map(|v| v * v).sum();
    Mat::from_fn(n, n - 1, |i, j| {
        let col = j + 1;
        let delta = if i == col { 1.0 } else { 0.0 };
        delta - 2.0 * w[i] * w[col] / wn2
    })
}

/// Singular values of Qᵀ M Q, where Q spans the complement of `y`.
pub fn restricted_singular_values(m: MatRef<'_, f64>, y: &[f64]) -> Result<Vec<f64>> {
    let q = complement_basis(y);
    let mq = m * &q;
    let r = q.transpose() * &mq;
    r.singular_values()
        .map_err(|e| NeelError::Numerical(format!("SVD failed: {e:?}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::{solve_wall, SolverOptions};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_wall() -> WallProfile {
        let g = Grid::new(12.0, 128).unwrap();
        solve_wall(&RescaledParameters::default(), &g, &SolverOptions::default()).unwrap()
    }

    #[test]
    fn l1_on_single_mode_matches_hand_evaluation() {
        let wall = small_wall();
        let ops = WallOperators::new(&wall).unwrap();
        let g = wall.grid();
        let l = g.half_length();
        let xi = std::f64::consts::PI / l;
        let u = g.sample(|x| (xi * x).cos());
        let p = wall.params;
        let m = crate::strayfield::rescaled_symbol(xi, p.epsilon).unwrap();
        let cos: Vec<f64> = wall.theta().iter().map(|t| t.cos()).collect();
        let sc = ops.stray.apply_antiperiodic_slice(&cos);
        let got = ops.apply_l1(&u);
        for j in 0..g.len() {
            let t = wall.theta()[j];
            let s = wall.derivative()[j];
            let expect = -p.kappa * xi * xi * u[j] - u[j] / p.epsilon - 0.5 * u[j]
                + 0.5 * (2.0 * t).cos() * u[j]
                + p.kappa * s * s * u[j]
                + sc[j] * cos[j] * u[j]
                + m * u[j];
            assert!((got[j] - expect).abs() < 1e-10);
        }
    }

    #[test]
    fn assembled_matches_matrix_free() {
        let wall = small_wall();
        let ops = WallOperators::new(&wall).unwrap();
        let l0 = ops.assemble_l0(0.7);
        let n = wall.grid().len();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..2 * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let dense = l0.apply(&x);
        let (a, b) = ops.apply_l0(0.7, &x[..n], &x[n..]);
        for j in 0..n {
            assert!((dense[j] - a[j]).abs() < 1e-9);
            assert!((dense[n + j] - b[j]).abs() < 1e-9);
        }
        assert!(ops.assemble_l1().symmetric);
        assert!(ops.assemble_l2().symmetric);
        assert!(!l0.symmetric);
    }

    #[test]
    fn block_lemma_closed_form() {
        let n = 4;
        let a = Mat::from_fn(n, n, |i, j| if i == j { -1.0 } else { 0.0 });
        let r = block_lemma_check(a.as_ref(), a.as_ref(), 3.0, &SpectrumTolerances::default()).unwrap();
        for z in &r.eigenvalues {
            assert!((z[0] + 1.0).abs() < 1e-12);
            assert!((z[1].abs() - 3.0).abs() < 1e-12);
        }
        assert!(r.imaginary_axis_violations.is_empty());
        assert_eq!(r.kernel_dimension_estimate, 0);
    }

    #[test]
    fn block_lemma_rejects_asymmetric() {
        let a = Mat::from_fn(3, 3, |i, j| (i + 2 * j) as f64);
        let b = Mat::<f64>::identity(3, 3);
        assert!(matches!(
            block_lemma_check(a.as_ref(), b.as_ref(), 1.0, &SpectrumTolerances::default()),
            Err(NeelError::InvalidParameter(_))
        ));
    }

    #[test]
    fn project_range_examples() {
        let wall = small_wall();
        let g = wall.grid();
        let zero = RealField::zeros(g);
        let k = wall.derivative_field();
        let (a, b, lam) = project_range(&zero, &k, &wall, 0.5).unwrap();
        assert!((lam - 1.0).abs() < 1e-14);
        assert!(a.values().iter().chain(b.values()).all(|v| v.abs() < 1e-14));
        let f1 = RealField::from_fn(g, |x| (-x * x).exp()).unwrap();
        let f2 = RealField::from_fn(g, |x| x * (-x * x).exp()).unwrap();
        let (o1, o2, lam) = project_range(&f1, &f2, &wall, 0.5).unwrap();
        let comb: Vec<f64> = o1.values().iter().zip(o2.values()).map(|(a, b)| 0.5 * a + b).collect();
        assert!(g.dot(&comb, wall.derivative()).abs() < 1e-12);
        let (_, _, again) = project_range(&o1, &o2, &wall, 0.5).unwrap();
        assert!(again.abs() < 1e-12 && lam != 0.0);
    }

    #[test]
    fn quadratic_h_examples() {
        let g = Grid::new(10.0, 64).unwrap();
        let xi = 3.0 * std::f64::consts::PI / 10.0;
        let u = RealField::from_fn(&g, |x| (xi * x).sin()).unwrap();
        let h = quadratic_form_h(&u, &u, 0.2).unwrap();
        let m = crate::strayfield::rescaled_symbol(xi, 0.2).unwrap();
        assert!((h - (1.0 + m) * u.norm().powi(2)).abs() < 1e-12);
        let v = RealField::from_fn(&g, |x| (-x * x / 4.0).exp()).unwrap();
        let hv = quadratic_form_h(&u, &v, 0.2).unwrap();
        let vh = quadratic_form_h(&v, &u, 0.2).unwrap();
        assert!((hv - vh).abs() < 1e-13);
        assert!(quadratic_form_h(&v, &v, 0.2).unwrap() >= v.norm().powi(2) - 1e-12);
    }

    #[test]
    fn semigroup_size_limit() {
        let op = LinearOperatorMatrix::custom("big", Mat::<f64>::zeros(1026, 1026));
        assert!(matches!(semigroup(&op, 1.0), Err(NeelError::Resource(_))));
    }

    #[test]
    fn complement_basis_is_orthonormal() {
        let y = vec![0.3, -1.0, 2.0, 0.5];
        let q = complement_basis(&y);
        for a in 0..3 {
            let dot: f64 = (0..4).map(|i| q[(i, a)] * y[i]).sum();
            assert!(dot.abs() < 1e-14);
            for b in 0..3 {
                let d: f64 = (0..4).map(|i| q[(i, a)] * q[(i, b)]).sum();
                assert!((d - if a == b { 1.0 } else { 0.0 }).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn random_block_trials_stay_off_axis() {
        let settings = BlockLemmaTrials {
            trials: 5,
            size: 12,
            ..Default::default()
        };
        let s = run_block_lemma_trials(&settings).unwrap();
        assert_eq!(s.spectra_checked, 15);
        assert!(s.violations.is_empty(), "{:?}", s.violations);
        assert_eq!(s, run_block_lemma_trials(&settings).unwrap());
    }
}
