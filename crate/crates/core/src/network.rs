//! Quantum-network objects: block decompositions of the joint unitary, the
//! link operator collecting all length-n block products, and tester Choi
//! chains with their causality constraints.
//!
//! Register conventions used everywhere:
//! - the joint unitary acts on system ⊗ probe with the system index major;
//! - link-operator registers are interleaved I1,O1,I2,O2,...,In,On with I1
//!   most significant, and the system index above all of them;
//! - `Block[k -> l]` is the system operator for probe input k, probe output l.
//!   The appendix-style product notation U_{j,i} corresponds to Block[i -> j];
//!   the round-trip tests against the sequential simulator pin this choice.

use crate::linalg::{kron, ComplexMatrix, HermitianMatrix, ZERO};
use num_complex::Complex64 as C64;
use thiserror::Error;

/// Default cap on a single allocated operator (1 GiB).
pub const DEFAULT_MEMORY_BUDGET: usize = 1 << 30;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("probe index {index} out of range for d_P = {d_p}")]
    IndexOutOfRange { index: usize, d_p: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("matrix of dimension {dim} is not unitary (defect {defect:.3e})")]
    NotUnitary { dim: usize, defect: f64 },
    #[error("memory budget exceeded: {required} bytes required, budget {budget}")]
    MemoryBudget { required: usize, budget: usize },
}

pub type Result<T> = std::result::Result<T, NetworkError>;

/// The unknown joint unitary between target and probe.
#[derive(Debug, Clone)]
pub struct InteractionUnitary {
    d_s: usize,
    d_p: usize,
    matrix: ComplexMatrix,
}

impl InteractionUnitary {
    pub fn new(d_s: usize, d_p: usize, matrix: ComplexMatrix) -> Result<Self> {
        let dim = d_s * d_p;
        if matrix.rows() != dim || matrix.cols() != dim {
            return Err(NetworkError::DimensionMismatch(format!(
                "expected {dim}x{dim} matrix for d_S={d_s}, d_P={d_p}, got {}x{}",
                matrix.rows(),
                matrix.cols()
            )));
        }
        let defect = matrix.unitarity_defect();
        if defect >= 1e-10 {
            return Err(NetworkError::NotUnitary { dim, defect });
        }
        Ok(Self { d_s, d_p, matrix })
    }

    pub fn d_s(&self) -> usize {
        self.d_s
    }

    pub fn d_p(&self) -> usize {
        self.d_p
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.matrix
    }
}

/// Block U_{k,l} = (I_S ⊗ <l|_P) U (I_S ⊗ |k>_P): probe input first, probe
/// output second.
pub fn extract_block(
    u: &InteractionUnitary,
    in_idx: usize,
    out_idx: usize,
) -> Result<ComplexMatrix> {
    let (d_s, d_p) = (u.d_s, u.d_p);
    if in_idx >= d_p {
        return Err(NetworkError::IndexOutOfRange { index: in_idx, d_p });
    }
    if out_idx >= d_p {
        return Err(NetworkError::IndexOutOfRange { index: out_idx, d_p });
    }
    Ok(ComplexMatrix::from_fn(d_s, d_s, |j, i| {
        u.matrix.get(j * d_p + out_idx, i * d_p + in_idx)
    }))
}

/// All d_P^2 blocks, indexed blocks[in][out].
pub fn all_blocks(u: &InteractionUnitary) -> Vec<Vec<ComplexMatrix>> {
    (0..u.d_p)
        .map(|k| {
            (0..u.d_p)
                .map(|l| extract_block(u, k, l).expect("indices in range"))
                .collect()
        })
        .collect()
}

/// The rectangular operator S_U mapping the target space into
/// target ⊗ (2n probe registers).
#[derive(Debug, Clone)]
pub struct LinkOperator {
    pub n: usize,
    pub d_s: usize,
    pub d_p: usize,
    /// Shape (d_S * d_P^(2n)) x d_S, system index major.
    pub matrix: ComplexMatrix,
}

impl LinkOperator {
    /// Register-space dimension d_P^(2n).
    pub fn register_dim(&self) -> usize {
        self.d_p.pow(2 * self.n as u32)
    }

    /// The d_S x d_S slice at the given register value (i1,j1,...,in,jn
    /// packed with i1 most significant): Block[i_n->j_n] ... Block[i1->j1].
    pub fn slice(&self, register: usize) -> ComplexMatrix {
        let reg_dim = self.register_dim();
        ComplexMatrix::from_fn(self.d_s, self.d_s, |s_out, s_in| {
            self.matrix.get(s_out * reg_dim + register, s_in)
        })
    }
}

pub fn build_link(u: &InteractionUnitary, n: usize) -> Result<LinkOperator> {
    build_link_with_budget(u, n, DEFAULT_MEMORY_BUDGET)
}

pub fn build_link_with_budget(
    u: &InteractionUnitary,
    n: usize,
    budget: usize,
) -> Result<LinkOperator> {
    assert!(n >= 1, "build_link needs n >= 1");
    let (d_s, d_p) = (u.d_s, u.d_p);
    let overflow = || NetworkError::MemoryBudget {
        required: usize::MAX,
        budget,
    };
    let reg_dim = d_p.checked_pow(2 * n as u32).ok_or_else(overflow)?;
    let required = reg_dim
        .checked_mul(d_s * d_s)
        .and_then(|x| x.checked_mul(std::mem::size_of::<C64>()))
        .ok_or_else(overflow)?;
    if required > budget {
        return Err(NetworkError::MemoryBudget { required, budget });
    }
    let blocks = all_blocks(u);
    let mut matrix = ComplexMatrix::zeros(d_s * reg_dim, d_s);
    let mut digits = vec![0usize; 2 * n];
    for register in 0..reg_dim {
        // digits of `register` in base d_P, most significant first:
        // i1, j1, i2, j2, ..., in, jn
        let mut rem = register;
        for d in (0..2 * n).rev() {
            digits[d] = rem % d_p;
            rem /= d_p;
        }
        // later probes act later, hence multiply on the left
        let mut acc = ComplexMatrix::identity(d_s);
        for k in 0..n {
            let (i_k, j_k) = (digits[2 * k], digits[2 * k + 1]);
            acc = blocks[i_k][j_k].mul(&acc);
        }
        for s_out in 0..d_s {
            for s_in in 0..d_s {
                matrix.set(s_out * reg_dim + register, s_in, acc.get(s_out, s_in));
            }
        }
    }
    Ok(LinkOperator {
        n,
        d_s,
        d_p,
        matrix,
    })
}

/// (I_S ⊗ <c|) S_U as a d_S x d_S matrix, for a branch vector c on the 2n
/// probe registers.
pub fn action_on_system(c: &[C64], link: &LinkOperator) -> Result<ComplexMatrix> {
    let reg_dim = link.register_dim();
    if c.len() != reg_dim {
        return Err(NetworkError::DimensionMismatch(format!(
            "branch vector has dim {}, registers have dim {reg_dim}",
            c.len()
        )));
    }
    let d_s = link.d_s;
    let mut a = ComplexMatrix::zeros(d_s, d_s);
    for s_out in 0..d_s {
        for s_in in 0..d_s {
            let mut acc = ZERO;
            for (reg, cc) in c.iter().enumerate() {
                if *cc == ZERO {
                    continue;
                }
                acc += cc.conj() * link.matrix.get(s_out * reg_dim + reg, s_in);
            }
            a.set(s_out, s_in, acc);
        }
    }
    Ok(a)
}

/// Sequential circuit semantics: start from `psi_s ⊗ probe_state` on
/// S ⊗ P1..Pn (system index major, probe 1 most significant among probes)
/// and apply U to (S, P_k) for k = 1..n. Returns the final joint state.
///
/// Contracting the probe inputs this way realizes (I_S ⊗ <phi*|_I ⊗ I_O) S_U
/// applied to psi_s; the conjugation happens here and only here.
pub fn sequential_evolution(
    u: &InteractionUnitary,
    psi_s: &[C64],
    probe_state: &[C64],
    n: usize,
) -> Result<Vec<C64>> {
    let (d_s, d_p) = (u.d_s, u.d_p);
    let p_dim = d_p.pow(n as u32);
    if psi_s.len() != d_s || probe_state.len() != p_dim {
        return Err(NetworkError::DimensionMismatch(format!(
            "expected system dim {d_s} and probe-register dim {p_dim}, got {} and {}",
            psi_s.len(),
            probe_state.len()
        )));
    }
    let mut state = vec![ZERO; d_s * p_dim];
    for (s, &a) in psi_s.iter().enumerate() {
        if a == ZERO {
            continue;
        }
        for (p, &b) in probe_state.iter().enumerate() {
            state[s * p_dim + p] = a * b;
        }
    }
    let um = &u.matrix;
    let mut gathered = vec![ZERO; d_s * d_p];
    for k in 0..n {
        let stride_p = d_p.pow((n - 1 - k) as u32);
        let stride_s = p_dim;
        // iterate over configurations of the untouched registers
        let outer = p_dim / (stride_p * d_p);
        for hi in 0..outer {
            for lo in 0..stride_p {
                let base = hi * stride_p * d_p + lo;
                for s in 0..d_s {
                    for p in 0..d_p {
                        gathered[s * d_p + p] = state[s * stride_s + p * stride_p + base];
                    }
                }
                for s2 in 0..d_s {
                    for p2 in 0..d_p {
                        let row = s2 * d_p + p2;
                        let mut acc = ZERO;
                        for (col, &g) in gathered.iter().enumerate() {
                            if g != ZERO {
                                acc += um.get(row, col) * g;
                            }
                        }
                        state[s2 * stride_s + p2 * stride_p + base] = acc;
                    }
                }
            }
        }
    }
    Ok(state)
}

/// The branch operator V(U) = (I_S ⊗ <phi*|_I ⊗ I_O) S_U of shape
/// (d_S * d_P^n) x d_S, computed by sequential simulation of each system
/// basis column.
pub fn branch_operator(
    u: &InteractionUnitary,
    probe_state: &[C64],
    n: usize,
) -> Result<ComplexMatrix> {
    let (d_s, d_p) = (u.d_s, u.d_p);
    let p_dim = d_p.pow(n as u32);
    let mut op = ComplexMatrix::zeros(d_s * p_dim, d_s);
    for s in 0..d_s {
        let mut basis = vec![ZERO; d_s];
        basis[s] = C64::new(1.0, 0.0);
        let col = sequential_evolution(u, &basis, probe_state, n)?;
        for (row, &v) in col.iter().enumerate() {
            op.set(row, s, v);
        }
    }
    Ok(op)
}

/// Partial trace of an operator on ⊗_r C^{dims[r]}, keeping the registers
/// listed in `keep` (strictly ascending original positions).
pub fn partial_trace(m: &ComplexMatrix, dims: &[usize], keep: &[usize]) -> Result<ComplexMatrix> {
    let total: usize = dims.iter().product();
    if m.rows() != total || m.cols() != total {
        return Err(NetworkError::DimensionMismatch(format!(
            "operator is {}x{}, register dims multiply to {total}",
            m.rows(),
            m.cols()
        )));
    }
    if keep.windows(2).any(|w| w[0] >= w[1]) || keep.iter().any(|&k| k >= dims.len()) {
        return Err(NetworkError::DimensionMismatch(
            "keep list must be strictly ascending register indices".into(),
        ));
    }
    let kept_total: usize = keep.iter().map(|&k| dims[k]).product();
    let traced: Vec<usize> = (0..dims.len()).filter(|r| !keep.contains(r)).collect();
    let traced_total: usize = traced.iter().map(|&r| dims[r]).product();

    // stride of each register in the flattened index
    let mut strides = vec![1usize; dims.len()];
    for r in (0..dims.len().saturating_sub(1)).rev() {
        strides[r] = strides[r + 1] * dims[r + 1];
    }
    let expand = |packed: usize, regs: &[usize]| -> usize {
        let mut rem = packed;
        let mut idx = 0usize;
        for &r in regs.iter().rev() {
            idx += (rem % dims[r]) * strides[r];
            rem /= dims[r];
        }
        idx
    };

    let mut out = ComplexMatrix::zeros(kept_total, kept_total);
    for a in 0..kept_total {
        let base_a = expand(a, keep);
        for b in 0..kept_total {
            let base_b = expand(b, keep);
            let mut acc = ZERO;
            for t in 0..traced_total {
                let off = expand(t, &traced);
                acc += m.get(base_a + off, base_b + off);
            }
            out.set(a, b, acc);
        }
    }
    Ok(out)
}

/// Permutation taking a grouped index (i1..in, j1..jn) to the interleaved
/// index (i1, j1, i2, j2, ..., in, jn), all registers of dimension d_p.
fn grouped_to_interleaved_index(g: usize, n: usize, d_p: usize) -> usize {
    let mut digits = vec![0usize; 2 * n];
    let mut rem = g;
    for d in (0..2 * n).rev() {
        digits[d] = rem % d_p;
        rem /= d_p;
    }
    // digits[0..n] = i's, digits[n..2n] = j's
    let mut out = 0usize;
    for k in 0..n {
        out = out * d_p + digits[k];
        out = out * d_p + digits[n + k];
    }
    out
}

/// Reorder a vector on I ⊗ O (grouped: all inputs then all outputs) into the
/// interleaved register layout I1 O1 I2 O2 ...
pub fn vector_grouped_to_interleaved(v: &[C64], n: usize, d_p: usize) -> Vec<C64> {
    let mut out = vec![ZERO; v.len()];
    for (g, &x) in v.iter().enumerate() {
        out[grouped_to_interleaved_index(g, n, d_p)] = x;
    }
    out
}

/// Inverse of [`vector_grouped_to_interleaved`].
pub fn vector_interleaved_to_grouped(v: &[C64], n: usize, d_p: usize) -> Vec<C64> {
    let mut out = vec![ZERO; v.len()];
    for (g, slot) in out.iter_mut().enumerate() {
        *slot = v[grouped_to_interleaved_index(g, n, d_p)];
    }
    out
}

/// Conjugate a square operator on I ⊗ O by the grouped-to-interleaved
/// permutation (rows and columns).
pub fn matrix_grouped_to_interleaved(m: &ComplexMatrix, n: usize, d_p: usize) -> ComplexMatrix {
    let dim = m.rows();
    let mut perm = vec![0usize; dim];
    for (g, p) in perm.iter_mut().enumerate() {
        *p = grouped_to_interleaved_index(g, n, d_p);
    }
    let mut out = ComplexMatrix::zeros(dim, dim);
    for a in 0..dim {
        for b in 0..dim {
            out.set(perm[a], perm[b], m.get(a, b));
        }
    }
    out
}

/// A quantum tester in Choi form: outcome operators M0, M1 on the 2n
/// interleaved registers and the causality chain Gamma^(1..n).
#[derive(Debug, Clone)]
pub struct TesterChoi {
    pub n: usize,
    pub d_p: usize,
    pub m0: ComplexMatrix,
    pub m1: ComplexMatrix,
    /// gammas[k-1] acts on I1 O1 ... I_k (2k-1 registers).
    pub gammas: Vec<ComplexMatrix>,
}

#[derive(Debug, Clone)]
pub struct TesterCheck {
    pub name: String,
    pub residual: f64,
}

#[derive(Debug, Clone)]
pub struct TesterReport {
    pub checks: Vec<TesterCheck>,
    pub pass: bool,
}

impl std::fmt::Display for TesterReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for c in &self.checks {
            writeln!(f, "{:<44} residual {:.3e}", c.name, c.residual)?;
        }
        write!(
            f,
            "tester validation: {}",
            if self.pass { "PASS" } else { "FAIL" }
        )
    }
}

impl TesterChoi {
    /// Tester of a prepare-and-measure protocol: M0 = |phi><phi|_I ⊗ Pi^T_O
    /// (reordered to interleaved registers), with the Gamma chain given by
    /// partial traces of the input-state projector.
    pub fn prepare_measure(
        n: usize,
        d_p: usize,
        input_state: &[C64],
        projector_basis: &[Vec<C64>],
    ) -> Result<Self> {
        let i_dim = d_p.pow(n as u32);
        if input_state.len() != i_dim {
            return Err(NetworkError::DimensionMismatch(format!(
                "input state dim {} != d_P^n = {i_dim}",
                input_state.len()
            )));
        }
        // Pi^T in the computational basis projects onto the conjugated basis.
        let mut pi_t = ComplexMatrix::zeros(i_dim, i_dim);
        for m in projector_basis {
            if m.len() != i_dim {
                return Err(NetworkError::DimensionMismatch(
                    "projector basis vector has wrong dimension".into(),
                ));
            }
            for a in 0..i_dim {
                for b in 0..i_dim {
                    let v = pi_t.get(a, b) + m[a].conj() * m[b];
                    pi_t.set(a, b, v);
                }
            }
        }
        let phi_proj =
            ComplexMatrix::from_fn(i_dim, i_dim, |a, b| input_state[a] * input_state[b].conj());
        let m0_grouped = kron(&phi_proj, &pi_t);
        let m0 = matrix_grouped_to_interleaved(&m0_grouped, n, d_p);

        // Gamma^(k) = rho_{1..k} ⊗ I_{O_1..O_{k-1}} reordered into I1 O1 ... I_k,
        // with rho_{1..k} the reduced input-state projector on probes 1..k.
        let dims: Vec<usize> = vec![d_p; n];
        let mut gammas = Vec::with_capacity(n);
        for k in 1..=n {
            let keep: Vec<usize> = (0..k).collect();
            let rho_k = partial_trace(&phi_proj, &dims, &keep)?;
            let o_dim = d_p.pow((k - 1) as u32);
            let grouped = kron(&rho_k, &ComplexMatrix::identity(o_dim));
            gammas.push(interleave_gamma(&grouped, k, d_p));
        }
        let gamma_n = gammas.last().expect("n >= 1");
        let m1 = kron(gamma_n, &ComplexMatrix::identity(d_p)).sub(&m0);
        Ok(Self {
            n,
            d_p,
            m0,
            m1,
            gammas,
        })
    }

    /// The trivial tester: M0 = 0, maximally mixed preparations.
    pub fn trivial(n: usize, d_p: usize) -> Self {
        let mut gammas: Vec<ComplexMatrix> = Vec::with_capacity(n);
        let mut gamma = ComplexMatrix::identity(d_p).scale(C64::new(1.0 / d_p as f64, 0.0));
        gammas.push(gamma.clone());
        for _ in 2..=n {
            gamma = kron(&gamma, &ComplexMatrix::identity(d_p * d_p))
                .scale(C64::new(1.0 / d_p as f64, 0.0));
            gammas.push(gamma.clone());
        }
        let dim = d_p.pow(2 * n as u32);
        let m1 = kron(gammas.last().unwrap(), &ComplexMatrix::identity(d_p));
        TesterChoi {
            n,
            d_p,
            m0: ComplexMatrix::zeros(dim, dim),
            m1,
            gammas,
        }
    }
}

/// Reorder an operator on (I1..Ik) ⊗ (O1..O_{k-1}) into the chain layout
/// I1 O1 I2 O2 ... O_{k-1} I_k.
fn interleave_gamma(grouped: &ComplexMatrix, k: usize, d_p: usize) -> ComplexMatrix {
    let regs = 2 * k - 1;
    let dim = d_p.pow(regs as u32);
    debug_assert_eq!(grouped.rows(), dim);
    let perm_index = |g: usize| -> usize {
        let mut digits = vec![0usize; regs];
        let mut rem = g;
        for d in (0..regs).rev() {
            digits[d] = rem % d_p;
            rem /= d_p;
        }
        // digits[0..k] = i1..ik, digits[k..] = o1..o_{k-1}
        let mut out = 0usize;
        for r in 0..k - 1 {
            out = out * d_p + digits[r]; // i_{r+1}
            out = out * d_p + digits[k + r]; // o_{r+1}
        }
        out * d_p + digits[k - 1]
    };
    let mut perm = vec![0usize; dim];
    for (g, p) in perm.iter_mut().enumerate() {
        *p = perm_index(g);
    }
    let mut out = ComplexMatrix::zeros(dim, dim);
    for a in 0..dim {
        for b in 0..dim {
            out.set(perm[a], perm[b], grouped.get(a, b));
        }
    }
    out
}

/// Residual-report validation of the tester Choi constraints.
///
/// Pass threshold is 1e-8 on every residual.
pub fn validate_tester(t: &TesterChoi) -> TesterReport {
    const PASS_TOL: f64 = 1e-8;
    let mut checks = Vec::new();
    let full_dim = t.d_p.pow(2 * t.n as u32);

    let shape_ok = t.m0.rows() == full_dim
        && t.m0.cols() == full_dim
        && t.m1.rows() == full_dim
        && t.m1.cols() == full_dim
        && t.gammas.len() == t.n
        && t.gammas.iter().enumerate().all(|(idx, g)| {
            let d = t.d_p.pow((2 * (idx + 1) - 1) as u32);
            g.rows() == d && g.cols() == d
        });
    checks.push(TesterCheck {
        name: "register shapes".into(),
        residual: if shape_ok { 0.0 } else { f64::INFINITY },
    });
    if !shape_ok {
        return TesterReport {
            checks,
            pass: false,
        };
    }

    for (name, m) in [("M0", &t.m0), ("M1", &t.m1)] {
        checks.push(TesterCheck {
            name: format!("{name} Hermitian"),
            residual: m.sub(&m.adjoint()).max_abs(),
        });
        let h = HermitianMatrix::symmetrized(m);
        let psd_defect = match crate::linalg::eigh(&h) {
            Ok((w, _)) => (-w[0]).max(0.0),
            Err(_) => f64::INFINITY,
        };
        checks.push(TesterCheck {
            name: format!("{name} PSD"),
            residual: psd_defect,
        });
    }

    let rhs = kron(&t.gammas[t.n - 1], &ComplexMatrix::identity(t.d_p));
    checks.push(TesterCheck {
        name: "M0 + M1 = I_On ⊗ Gamma^(n)".into(),
        residual: t.m0.add(&t.m1).sub(&rhs).max_abs(),
    });

    for k in (2..=t.n).rev() {
        let gk = &t.gammas[k - 1];
        let regs = 2 * k - 1;
        let dims = vec![t.d_p; regs];
        let keep: Vec<usize> = (0..regs - 1).collect();
        let traced = partial_trace(gk, &dims, &keep).expect("shapes checked");
        let rhs = kron(&t.gammas[k - 2], &ComplexMatrix::identity(t.d_p));
        checks.push(TesterCheck {
            name: format!("tr_I{k} Gamma^({k}) = I_O{} ⊗ Gamma^({})", k - 1, k - 1),
            residual: traced.sub(&rhs).max_abs(),
        });
    }

    checks.push(TesterCheck {
        name: "tr Gamma^(1) = 1".into(),
        residual: (t.gammas[0].trace() - C64::new(1.0, 0.0)).norm(),
    });

    let pass = checks.iter().all(|c| c.residual < PASS_TOL);
    TesterReport { checks, pass }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{haar_unitary, vec_inner, vec_norm, PureState, ONE};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn rng(seed: u64) -> ChaCha12Rng {
        ChaCha12Rng::seed_from_u64(seed)
    }

    fn haar_interaction(d_s: usize, d_p: usize, rng: &mut ChaCha12Rng) -> InteractionUnitary {
        InteractionUnitary::new(d_s, d_p, haar_unitary(d_s * d_p, rng)).unwrap()
    }

    /// Independent oracle: amplitude-by-amplitude sequential circuit for a
    /// fixed register assignment (probe k enters in |i_k>, postselect <j_k|).
    fn sequential_block_product(
        u: &InteractionUnitary,
        ins: &[usize],
        outs: &[usize],
    ) -> ComplexMatrix {
        let (d_s, d_p) = (u.d_s(), u.d_p());
        ComplexMatrix::from_fn(d_s, d_s, |s_out, s_in| {
            let mut state = vec![ZERO; d_s];
            state[s_in] = ONE;
            for (&ik, &jk) in ins.iter().zip(outs) {
                let mut next = vec![ZERO; d_s];
                for (s2, slot) in next.iter_mut().enumerate() {
                    for (s1, amp) in state.iter().enumerate() {
                        if *amp == ZERO {
                            continue;
                        }
                        *slot += u.matrix().get(s2 * d_p + jk, s1 * d_p + ik) * amp;
                    }
                }
                state = next;
            }
            state[s_out]
        })
    }

    #[test]
    fn block_of_product_unitary() {
        let mut r = rng(10);
        let a = haar_unitary(2, &mut r);
        let b = haar_unitary(2, &mut r);
        let u = InteractionUnitary::new(2, 2, kron(&a, &b)).unwrap();
        for k in 0..2 {
            for l in 0..2 {
                let blk = extract_block(&u, k, l).unwrap();
                let expected = a.scale(b.get(l, k));
                assert!(blk.sub(&expected).max_abs() < 1e-14);
            }
        }
    }

    #[test]
    fn block_of_swap() {
        // <j l| SWAP |i k> = delta_{j k} delta_{l i}, so Block[k -> l] = |k><l|
        let mut swap = ComplexMatrix::zeros(4, 4);
        for i in 0..2 {
            for k in 0..2 {
                swap.set(k * 2 + i, i * 2 + k, ONE);
            }
        }
        let u = InteractionUnitary::new(2, 2, swap).unwrap();
        for k in 0..2 {
            for l in 0..2 {
                let blk = extract_block(&u, k, l).unwrap();
                let expected =
                    ComplexMatrix::from_fn(2, 2, |j, i| if j == k && i == l { ONE } else { ZERO });
                assert!(blk.sub(&expected).max_abs() < 1e-14, "k={k} l={l}");
            }
        }
    }

    #[test]
    fn blocks_form_column_isometry() {
        let mut r = rng(11);
        let u = haar_interaction(2, 2, &mut r);
        for k in 0..2 {
            let mut acc = ComplexMatrix::zeros(2, 2);
            for l in 0..2 {
                let b = extract_block(&u, k, l).unwrap();
                acc = acc.add(&b.adjoint().mul(&b));
            }
            assert!(acc.sub(&ComplexMatrix::identity(2)).max_abs() < 1e-12);
        }
        assert!(extract_block(&u, 2, 0).is_err());
    }

    #[test]
    fn block_linearity() {
        let mut r = rng(12);
        let u = haar_interaction(2, 2, &mut r);
        let w = haar_interaction(2, 2, &mut r);
        let alpha = C64::new(0.3, -0.2);
        let beta = C64::new(-1.1, 0.7);
        let mixed = u.matrix().scale(alpha).add(&w.matrix().scale(beta));
        let mixed_block = ComplexMatrix::from_fn(2, 2, |j, i| mixed.get(j * 2 + 1, i * 2));
        let expected = extract_block(&u, 0, 1)
            .unwrap()
            .scale(alpha)
            .add(&extract_block(&w, 0, 1).unwrap().scale(beta));
        assert!(mixed_block.sub(&expected).max_abs() < 1e-13);
    }

    #[test]
    fn link_of_identity() {
        let u = InteractionUnitary::new(2, 2, ComplexMatrix::identity(4)).unwrap();
        let link = build_link(&u, 1).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let slice = link.slice(i * 2 + j);
                let expected = if i == j {
                    ComplexMatrix::identity(2)
                } else {
                    ComplexMatrix::zeros(2, 2)
                };
                assert!(slice.sub(&expected).max_abs() < 1e-14);
            }
        }
    }

    #[test]
    fn link_matches_sequential_oracle() {
        let mut r = rng(13);
        for _ in 0..50 {
            let u = haar_interaction(2, 2, &mut r);
            let link = build_link(&u, 2).unwrap();
            for reg in 0..16 {
                let digits = [(reg >> 3) & 1, (reg >> 2) & 1, (reg >> 1) & 1, reg & 1];
                let slice = link.slice(reg);
                let oracle = sequential_block_product(
                    &u,
                    &[digits[0], digits[2]],
                    &[digits[1], digits[3]],
                );
                assert!(slice.sub(&oracle).max_abs() < 1e-12);
            }
        }
    }

    #[test]
    fn link_norms_brute_force() {
        // Per fixed input string the output-summed branch norms telescope to
        // 1 (unitarity of each step); over all registers that sums to d_P^n.
        let mut r = rng(14);
        for n in [1usize, 2, 3] {
            let u = haar_interaction(2, 2, &mut r);
            let link = build_link(&u, n).unwrap();
            let psi = PureState::haar(2, &mut r);
            let norms: Vec<f64> = (0..link.register_dim())
                .map(|reg| vec_norm(&link.slice(reg).mul_vec(psi.amplitudes())).powi(2))
                .collect();
            // group registers by their input string (i1..in digits)
            let mut per_input = vec![0.0f64; 1 << n];
            for (reg, w) in norms.iter().enumerate() {
                let mut input = 0usize;
                for k in 0..n {
                    input = (input << 1) | ((reg >> (2 * n - 1 - 2 * k)) & 1);
                }
                per_input[input] += w;
            }
            for (i, p) in per_input.iter().enumerate() {
                assert!((p - 1.0).abs() < 1e-10, "n={n}, input {i}: {p}");
            }
            let total: f64 = norms.iter().sum();
            assert!((total - (1 << n) as f64).abs() < 1e-9, "n={n}: {total}");
        }
    }

    #[test]
    fn link_memory_budget() {
        let mut r = rng(15);
        let u = haar_interaction(2, 2, &mut r);
        match build_link_with_budget(&u, 4, 64).unwrap_err() {
            NetworkError::MemoryBudget { required, budget } => assert!(required > budget),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn action_on_basis_vector_is_block_product() {
        let mut r = rng(16);
        let u = haar_interaction(2, 2, &mut r);
        let link = build_link(&u, 2).unwrap();
        let reg = 0b0110; // i1=0, j1=1, i2=1, j2=0
        let mut c = vec![ZERO; 16];
        c[reg] = ONE;
        let a = action_on_system(&c, &link).unwrap();
        let expected = extract_block(&u, 1, 0)
            .unwrap()
            .mul(&extract_block(&u, 0, 1).unwrap());
        assert!(a.sub(&expected).max_abs() < 1e-13);
        assert!(action_on_system(&c[1..], &link).is_err());
    }

    #[test]
    fn w4_branch_is_central_square_of_commutator() {
        // c = (singlet ⊗ singlet on I) ⊗ (|0000> on O), interleaved. The
        // action equals (1/2) [Block(0,0), Block(1,0)]^2 for every U.
        let mut r = rng(17);
        let s = 1.0 / 2f64.sqrt();
        let mut grouped = vec![ZERO; 256];
        let singlet = |a: usize, b: usize| -> f64 {
            match (a, b) {
                (0, 1) => s,
                (1, 0) => -s,
                _ => 0.0,
            }
        };
        for i1 in 0..2usize {
            for i2 in 0..2usize {
                for i3 in 0..2usize {
                    for i4 in 0..2usize {
                        let amp = singlet(i1, i2) * singlet(i3, i4);
                        if amp != 0.0 {
                            // grouped index (i1 i2 i3 i4 | j1 j2 j3 j4), outputs 0000
                            let idx = (((i1 * 2 + i2) * 2 + i3) * 2 + i4) << 4;
                            grouped[idx] = C64::new(amp, 0.0);
                        }
                    }
                }
            }
        }
        let c = vector_grouped_to_interleaved(&grouped, 4, 2);
        for _ in 0..5 {
            let u = haar_interaction(2, 2, &mut r);
            let link = build_link(&u, 4).unwrap();
            let a = action_on_system(&c, &link).unwrap();
            let b00 = extract_block(&u, 0, 0).unwrap();
            let b10 = extract_block(&u, 1, 0).unwrap();
            let comm = b00.mul(&b10).sub(&b10.mul(&b00));
            let expected = comm.mul(&comm).scale(C64::new(0.5, 0.0));
            assert!(a.sub(&expected).max_abs() < 1e-12);
            // and it is central: A = (tr A / 2) I
            let lambda = a.trace() / C64::new(2.0, 0.0);
            let central_defect = a.sub(&ComplexMatrix::identity(2).scale(lambda)).max_abs();
            assert!(central_defect < 1e-12);
        }
    }

    #[test]
    fn product_unitary_action_is_power_of_system_factor() {
        let mut r = rng(18);
        let v = haar_unitary(2, &mut r);
        let vp = haar_unitary(2, &mut r);
        let u = InteractionUnitary::new(2, 2, kron(&v, &vp)).unwrap();
        let n = 3;
        let link = build_link(&u, n).unwrap();
        let vn = v.mul(&v).mul(&v);
        for _ in 0..5 {
            // product-form c across the 2n registers
            let mut c = vec![ONE];
            for _ in 0..2 * n {
                let q = PureState::haar(2, &mut r);
                let mut next = Vec::with_capacity(c.len() * 2);
                for x in &c {
                    for a in q.amplitudes() {
                        next.push(x * a);
                    }
                }
                c = next;
            }
            let act = action_on_system(&c, &link).unwrap();
            let lambda = vec_inner(vn.data(), act.data()) / vec_inner(vn.data(), vn.data());
            assert!(act.sub(&vn.scale(lambda)).max_abs() < 1e-12);
        }
    }

    #[test]
    fn branch_operator_matches_link_contraction() {
        // Conjugation round trip: the sequential route contracts <phi*| at
        // the S_U boundary. Complex-valued phi exercises the sign.
        let mut r = rng(21);
        let n = 2;
        let u = haar_interaction(2, 2, &mut r);
        let phi = PureState::haar(4, &mut r);
        let op = branch_operator(&u, phi.amplitudes(), n).unwrap();
        let link = build_link(&u, n).unwrap();
        let reg_dim = link.register_dim();
        for s_out in 0..2 {
            for o in 0..4 {
                for s_in in 0..2 {
                    let mut acc = ZERO;
                    for (i, amp) in phi.amplitudes().iter().enumerate() {
                        // grouped (i | o) -> interleaved register index
                        let mut grouped = vec![ZERO; reg_dim];
                        grouped[i * 4 + o] = ONE;
                        let inter = vector_grouped_to_interleaved(&grouped, n, 2);
                        let reg = inter.iter().position(|&x| x != ZERO).unwrap();
                        acc += amp * link.matrix.get(s_out * reg_dim + reg, s_in);
                    }
                    let got = op.get(s_out * 4 + o, s_in);
                    assert!((got - acc).norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn partial_trace_identities() {
        let mut r = rng(19);
        let a = haar_unitary(3, &mut r);
        let b = haar_unitary(2, &mut r);
        let m = kron(&a, &b);
        let ta = partial_trace(&m, &[3, 2], &[0]).unwrap();
        assert!(ta.sub(&a.scale(b.trace())).max_abs() < 1e-13);

        let full = partial_trace(&m, &[3, 2], &[]).unwrap();
        assert!((full.get(0, 0) - m.trace()).norm() < 1e-13);

        let tb = partial_trace(&m, &[3, 2], &[1]).unwrap();
        assert!((tb.trace() - m.trace()).norm() < 1e-13);

        assert!(partial_trace(&m, &[4, 2], &[0]).is_err());
        assert!(partial_trace(&m, &[3, 2], &[2]).is_err());
    }

    #[test]
    fn reorder_roundtrip() {
        let mut r = rng(20);
        let v: Vec<C64> = (0..64).map(|_| C64::new(r.random(), r.random())).collect();
        let w = vector_grouped_to_interleaved(&v, 3, 2);
        let back = vector_interleaved_to_grouped(&w, 3, 2);
        assert_eq!(v, back);

        // grouped (i1 i2 i3 | j1 j2 j3) = (100 | 001) maps to interleaved 10 00 01
        let mut v = vec![ZERO; 64];
        v[0b100_001] = ONE;
        let w = vector_grouped_to_interleaved(&v, 3, 2);
        assert_eq!(w[0b10_00_01], ONE);
        assert_eq!(w.iter().filter(|&&x| x != ZERO).count(), 1);
    }

    #[test]
    fn trivial_tester_validates() {
        let t = TesterChoi::trivial(3, 2);
        let report = validate_tester(&t);
        assert!(report.pass, "{report}");
    }

    #[test]
    fn non_psd_tester_fails() {
        let mut t = TesterChoi::trivial(2, 2);
        t.m0.set(0, 0, C64::new(-0.1, 0.0));
        let report = validate_tester(&t);
        assert!(!report.pass);
        let psd = report
            .checks
            .iter()
            .find(|c| c.name == "M0 PSD")
            .expect("check exists");
        assert!((psd.residual - 0.1).abs() < 1e-9);
    }

    #[test]
    fn prepare_measure_tester_validates() {
        // singlet ⊗ singlet input with a one-vector projector; the full W4
        // tester is exercised from the protocols tests.
        let s = 1.0 / 2f64.sqrt();
        let mut input = vec![ZERO; 16];
        for (i1, i2, i3, i4, amp) in [
            (0usize, 1usize, 0usize, 1usize, s * s),
            (0, 1, 1, 0, -s * s),
            (1, 0, 0, 1, -s * s),
            (1, 0, 1, 0, s * s),
        ] {
            input[((i1 * 2 + i2) * 2 + i3) * 2 + i4] = C64::new(amp, 0.0);
        }
        let mut m = vec![ZERO; 16];
        m[0] = ONE;
        let t = TesterChoi::prepare_measure(4, 2, &input, &[m]).unwrap();
        let report = validate_tester(&t);
        assert!(report.pass, "{report}");
        assert!((t.m0.trace() - ONE).norm() < 1e-12);
    }
}
