//! Embedded SDP solver for optimal testers.
//!
//! The problem: maximize tr(M0^T X) over tester Choi operators whose success
//! block is supported in the central subspace. In the transposed picture
//! (N = M0^T, which keeps every constraint shape-identical) it reads
//!
//!   max <X, N>   s.t.  N = B Y B^dag, Y >= 0,  M1 >= 0,
//!                      N + M1 in Aff,
//!
//! with B an orthonormal basis of H^c and Aff the affine set of tester
//! normalizations I_{O_n} ⊗ Gamma^(n) with the causality chain and
//! tr Gamma^(1) = 1. Both constraint sets admit closed-form projections, so
//! the solver is a two-set ADMM (operator splitting): alternate the affine
//! projection (which absorbs the linear objective) with the PSD-cone
//! projection by eigendecomposition, then polish the output by plain
//! alternating projections so that the returned tester satisfies the chain
//! equalities to machine precision.

use crate::linalg::{eigh, ComplexMatrix, HermitianMatrix, ZERO};
use crate::network::TesterChoi;
use crate::subspace::SubspaceBasis;
use num_complex::Complex64 as C64;
use serde::Serialize;

#[derive(Debug, Clone, Copy)]
pub struct SdpOptions {
    pub max_iters: usize,
    pub eps_primal: f64,
    pub eps_dual: f64,
    pub step: f64,
    pub over_relax: f64,
    pub polish_iters: usize,
}

impl Default for SdpOptions {
    fn default() -> Self {
        Self {
            max_iters: 60_000,
            eps_primal: 1e-9,
            eps_dual: 1e-9,
            step: 1.0,
            over_relax: 1.7,
            polish_iters: 400,
        }
    }
}

/// Solver diagnostics, serialized as the JSON report.
#[derive(Debug, Clone, Serialize)]
pub struct SolverDiagnostics {
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub objective: f64,
}

/// Partial trace over the least significant register of dimension `sub`.
fn ptr_last(m: &ComplexMatrix, sub: usize) -> ComplexMatrix {
    let d = m.rows() / sub;
    let mut out = ComplexMatrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            let mut acc = ZERO;
            for s in 0..sub {
                acc += m.get(i * sub + s, j * sub + s);
            }
            out.set(i, j, acc);
        }
    }
    out
}

/// m ⊗ I_sub on the least significant register.
fn kron_id_last(m: &ComplexMatrix, sub: usize) -> ComplexMatrix {
    let d = m.rows();
    let mut out = ComplexMatrix::zeros(d * sub, d * sub);
    for i in 0..d {
        for j in 0..d {
            let v = m.get(i, j);
            if v == ZERO {
                continue;
            }
            for s in 0..sub {
                out.set(i * sub + s, j * sub + s, v);
            }
        }
    }
    out
}

/// Orthogonal projection onto the linear hull of tester normalizations
/// L_n = { I_{O_n} ⊗ Gamma^(n) : tr_{I_k} Gamma^(k) = I_{O_{k-1}} ⊗ Gamma^(k-1) }
/// (the trace normalization is handled separately). Registers are interleaved
/// I1 O1 ... I_n O_n, all of dimension d_p.
pub(crate) fn project_comb_span(m: &ComplexMatrix, k: usize, d_p: usize) -> ComplexMatrix {
    // m lives on 2k registers
    let t = ptr_last(m, d_p).scale(C64::new(1.0 / d_p as f64, 0.0));
    let s = project_chain_head(&t, k, d_p);
    kron_id_last(&s, d_p)
}

/// Projection onto { Gamma on I1..I_k : tr_{I_k} Gamma in L_{k-1} } (2k-1 registers).
fn project_chain_head(g: &ComplexMatrix, k: usize, d_p: usize) -> ComplexMatrix {
    if k == 1 {
        return g.clone();
    }
    let t = ptr_last(g, d_p);
    let tl = project_comb_span(&t, k - 1, d_p);
    let corr = t.sub(&tl).scale(C64::new(1.0 / d_p as f64, 0.0));
    g.sub(&kron_id_last(&corr, d_p))
}

/// Projection onto the affine set Aff = L_n ∩ { tr M = d_p^n }.
fn project_affine(m: &ComplexMatrix, n: usize, d_p: usize) -> ComplexMatrix {
    let dim = m.rows();
    let mut out = project_comb_span(m, n, d_p);
    let target = d_p.pow(n as u32) as f64;
    let corr = (target - out.trace().re) / dim as f64;
    for i in 0..dim {
        let v = out.get(i, i) + C64::new(corr, 0.0);
        out.set(i, i, v);
    }
    out
}

/// PSD projection by spectral clipping, reconstructing through whichever
/// sign class has fewer eigenvalues.
fn project_psd(m: &ComplexMatrix) -> ComplexMatrix {
    let d = m.rows();
    let h = HermitianMatrix::symmetrized(m);
    let (w, v) = eigh(&h).expect("PSD projection eigendecomposition");
    let neg: Vec<usize> = (0..d).filter(|&k| w[k] < 0.0).collect();
    if neg.is_empty() {
        return h.into_matrix();
    }
    let pos: Vec<usize> = (0..d).filter(|&k| w[k] > 0.0).collect();
    if pos.is_empty() {
        return ComplexMatrix::zeros(d, d);
    }
    let reconstruct = |idx: &[usize]| -> ComplexMatrix {
        // sum_k |w_k| v_k v_k^dag over idx, as (V sqrt|w|)(V sqrt|w|)^dag
        let mut a = ComplexMatrix::zeros(d, idx.len());
        for (col, &k) in idx.iter().enumerate() {
            let s = w[k].abs().sqrt();
            for i in 0..d {
                a.set(i, col, v.get(i, k) * s);
            }
        }
        a.mul(&a.adjoint())
    };
    if neg.len() <= pos.len() {
        // clip by adding back the negative part
        h.into_matrix().add(&reconstruct(&neg))
    } else {
        reconstruct(&pos)
    }
}

/// Projection onto { B Y B^dag : Y >= 0 } for B with orthonormal columns.
fn project_supported_psd(m: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
    let small = b.adjoint().mul(&m.mul(b));
    let small_psd = project_psd(&small);
    b.mul(&small_psd.mul(&b.adjoint()))
}

fn frob_dist(a: &ComplexMatrix, b: &ComplexMatrix) -> f64 {
    a.sub(b).fro_norm()
}

/// Real Hilbert-Schmidt inner product of Hermitian operators.
fn hs_inner(a: &ComplexMatrix, b: &ComplexMatrix) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x.conj() * y).re)
        .sum()
}

pub(crate) struct SdpSolution {
    /// N = M0^T, supported in H^c, PSD.
    pub n_mat: ComplexMatrix,
    /// M1 in the transposed picture, PSD.
    pub m1_mat: ComplexMatrix,
    pub objective: f64,
    pub diagnostics: SolverDiagnostics,
}

/// Two-set ADMM with over-relaxation, then alternating-projection polish.
/// Returns a point satisfying the affine constraints to machine precision
/// with PSD defects at the polish tolerance.
pub(crate) fn solve_tester_sdp(
    x_obj: &ComplexMatrix,
    support: &SubspaceBasis,
    n: usize,
    d_p: usize,
    opts: &SdpOptions,
) -> SdpSolution {
    let dim = x_obj.rows();
    let d_support = support.dim();
    let mut b = ComplexMatrix::zeros(dim, d_support);
    for (col, v) in support.vectors().iter().enumerate() {
        for (i, &x) in v.iter().enumerate() {
            b.set(i, col, x);
        }
    }

    // start from the uniform tester split
    let uniform = ComplexMatrix::identity(dim)
        .scale(C64::new(d_p.pow(n as u32) as f64 / dim as f64, 0.0));
    let mut zn = ComplexMatrix::zeros(dim, dim);
    let mut zm = uniform.clone();
    let mut wn = zn.clone();
    let mut wm = zm.clone();
    let mut vn = ComplexMatrix::zeros(dim, dim);
    let mut vm = ComplexMatrix::zeros(dim, dim);

    let tau = opts.step;
    let alpha = opts.over_relax;
    let mut iterations = 0usize;
    let mut primal_residual = f64::INFINITY;
    let mut dual_residual = f64::INFINITY;

    for it in 0..opts.max_iters {
        iterations = it + 1;
        // z-update: objective gradient step on N, then affine projection
        let gn = wn.sub(&vn).add(&x_obj.scale(C64::new(tau, 0.0)));
        let gm = wm.sub(&vm);
        let sum = gn.add(&gm);
        let target = project_affine(&sum, n, d_p);
        let shift = target.sub(&sum).scale(C64::new(0.5, 0.0));
        zn = gn.add(&shift);
        zm = gm.add(&shift);

        // over-relaxation
        let zrn = zn
            .scale(C64::new(alpha, 0.0))
            .add(&wn.scale(C64::new(1.0 - alpha, 0.0)));
        let zrm = zm
            .scale(C64::new(alpha, 0.0))
            .add(&wm.scale(C64::new(1.0 - alpha, 0.0)));

        // w-update: cone projections
        let wn_prev = wn.clone();
        let wm_prev = wm.clone();
        wn = project_supported_psd(&zrn.add(&vn), &b);
        wm = project_psd(&zrm.add(&vm));

        // dual update
        vn = vn.add(&zrn).sub(&wn);
        vm = vm.add(&zrm).sub(&wm);

        if it % 25 == 0 || it + 1 == opts.max_iters {
            let rp = (frob_dist(&zn, &wn).powi(2) + frob_dist(&zm, &wm).powi(2)).sqrt();
            let rd = (frob_dist(&wn, &wn_prev).powi(2) + frob_dist(&wm, &wm_prev).powi(2)).sqrt()
                / tau;
            primal_residual = rp;
            dual_residual = rd;
            if rp < opts.eps_primal && rd < opts.eps_dual {
                break;
            }
        }
    }

    // polish: plain alternating projections between the cone pair and the
    // affine set, starting from the cone-feasible point
    for _ in 0..opts.polish_iters {
        let sum = wn.add(&wm);
        let target = project_affine(&sum, n, d_p);
        let shift = target.sub(&sum).scale(C64::new(0.5, 0.0));
        let an = wn.add(&shift);
        let am = wm.add(&shift);
        let new_wn = project_supported_psd(&an, &b);
        let new_wm = project_psd(&am);
        let moved = frob_dist(&new_wn, &an).max(frob_dist(&new_wm, &am));
        wn = new_wn;
        wm = new_wm;
        if moved < 1e-12 {
            break;
        }
    }
    // final point: exactly affine, PSD up to the last polish move
    let sum = wn.add(&wm);
    let target = project_affine(&sum, n, d_p);
    let shift = target.sub(&sum).scale(C64::new(0.5, 0.0));
    let n_mat = wn.add(&shift);
    let m1_mat = wm.add(&shift);
    let objective = hs_inner(x_obj, &n_mat);

    SdpSolution {
        n_mat,
        m1_mat,
        objective,
        diagnostics: SolverDiagnostics {
            iterations,
            primal_residual,
            dual_residual,
            objective,
        },
    }
}

/// Assemble the tester in the untransposed picture from the solver output:
/// M0 = N^T, Gamma chain recovered by partial traces of N + M1.
pub(crate) fn tester_from_solution(
    n_mat: &ComplexMatrix,
    m1_mat: &ComplexMatrix,
    n: usize,
    d_p: usize,
) -> TesterChoi {
    let msum = n_mat.add(m1_mat);
    let mut gammas_t = Vec::with_capacity(n);
    let mut g = ptr_last(&msum, d_p).scale(C64::new(1.0 / d_p as f64, 0.0));
    gammas_t.push(g.clone());
    for _ in 1..n {
        g = ptr_last(&ptr_last(&g, d_p), d_p).scale(C64::new(1.0 / d_p as f64, 0.0));
        gammas_t.push(g.clone());
    }
    gammas_t.reverse();
    let herm = |m: ComplexMatrix| HermitianMatrix::symmetrized(&m).into_matrix();
    TesterChoi {
        n,
        d_p,
        m0: herm(n_mat.transpose()),
        m1: herm(m1_mat.transpose()),
        gammas: gammas_t.into_iter().map(|g| herm(g.transpose())).collect(),
    }
}
