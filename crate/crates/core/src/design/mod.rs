//! Protocol discovery: the SDP over tester Choi operators, heuristic-driven
//! prepare-and-measure construction for eight probes, and the injective
//! unitary construction behind the arbitrary-dimension existence argument.

mod sdp;

pub use sdp::{SdpOptions, SolverDiagnostics};

use crate::linalg::{
    eigh, haar_unitary, orthonormal_extend, vec_inner, ComplexMatrix, HermitianMatrix,
    LinalgError, PureState, ONE, ZERO,
};
use crate::network::{
    action_on_system, branch_operator, build_link, extract_block, validate_tester,
    InteractionUnitary, LinkOperator, NetworkError, TesterChoi,
};
use crate::protocols::{singlet_product_state, PrepareMeasureProtocol, ProtocolError};
use crate::subspace::{
    certify_family, identify_measurement_space, BranchFamily, CertificationReport, Provenance,
    SubspaceBasis,
};
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DesignError {
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("invalid prior: {0}")]
    Prior(String),
    #[error("certification failed: {0}")]
    Certification(String),
    #[error("solver produced an invalid tester:\n{0}")]
    InvalidTester(String),
    #[error("could not reach a spanning block family after {0} attempts")]
    SpanDeficiency(usize),
    #[error("could not stabilize a positive fixed point after {0} attempts")]
    FixedPointFailure(usize),
}

pub type Result<T> = std::result::Result<T, DesignError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PriorKind {
    HaarSamples,
    FixedList,
    HamiltonianFamily,
}

/// A discrete prior over interaction unitaries; weights sum to one.
#[derive(Clone)]
pub struct PriorSpec {
    pub kind: PriorKind,
    samples: Vec<(InteractionUnitary, f64)>,
}

impl PriorSpec {
    pub fn haar(count: usize, d_s: usize, d_p: usize, seed: u64) -> Result<Self> {
        if count == 0 {
            return Err(DesignError::Prior("prior needs at least one sample".into()));
        }
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let w = 1.0 / count as f64;
        let samples = (0..count)
            .map(|_| {
                (
                    InteractionUnitary::new(d_s, d_p, haar_unitary(d_s * d_p, &mut rng))
                        .expect("Haar is unitary"),
                    w,
                )
            })
            .collect();
        Ok(Self {
            kind: PriorKind::HaarSamples,
            samples,
        })
    }

    pub fn fixed_list(unitaries: Vec<InteractionUnitary>) -> Result<Self> {
        if unitaries.is_empty() {
            return Err(DesignError::Prior("prior needs at least one sample".into()));
        }
        let w = 1.0 / unitaries.len() as f64;
        Ok(Self {
            kind: PriorKind::FixedList,
            samples: unitaries.into_iter().map(|u| (u, w)).collect(),
        })
    }

    pub fn weighted(samples: Vec<(InteractionUnitary, f64)>, kind: PriorKind) -> Result<Self> {
        if samples.is_empty() {
            return Err(DesignError::Prior("prior needs at least one sample".into()));
        }
        if samples.iter().any(|(_, w)| *w < 0.0) {
            return Err(DesignError::Prior("weights must be nonnegative".into()));
        }
        let total: f64 = samples.iter().map(|(_, w)| w).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(DesignError::Prior(format!(
                "weights sum to {total}, expected 1"
            )));
        }
        Ok(Self { kind, samples })
    }

    pub fn samples(&self) -> &[(InteractionUnitary, f64)] {
        &self.samples
    }
}

/// W(U) = (<0|_S ⊗ I_IO) S_U |0>_S on the 2n interleaved registers.
pub fn w_vector(u: &InteractionUnitary, n: usize) -> Vec<C64> {
    let d_p = u.d_p();
    let d_s = u.d_s();
    let blocks = crate::network::all_blocks(u);
    let reg_dim = d_p.pow(2 * n as u32);
    let mut out = vec![ZERO; reg_dim];
    let mut digits = vec![0usize; 2 * n];
    for (reg, slot) in out.iter_mut().enumerate() {
        let mut rem = reg;
        for d in (0..2 * n).rev() {
            digits[d] = rem % d_p;
            rem /= d_p;
        }
        let mut v = vec![ZERO; d_s];
        v[0] = ONE;
        for k in 0..n {
            let b = &blocks[digits[2 * k]][digits[2 * k + 1]];
            v = b.mul_vec(&v);
        }
        *slot = v[0];
    }
    out
}

/// X(rho) = sum_k w_k W(U_k) W(U_k)^dag.
pub fn build_x(prior: &PriorSpec, n: usize) -> HermitianMatrix {
    let d_p = prior.samples[0].0.d_p();
    let dim = d_p.pow(2 * n as u32);
    // stack weighted W vectors as columns, then one product
    let mut a = ComplexMatrix::zeros(dim, prior.samples.len());
    for (col, (u, w)) in prior.samples.iter().enumerate() {
        let wv = w_vector(u, n);
        let s = C64::new(w.sqrt(), 0.0);
        for (i, &x) in wv.iter().enumerate() {
            a.set(i, col, x * s);
        }
    }
    HermitianMatrix::symmetrized(&a.mul(&a.adjoint()))
}

/// Solve the optimal-tester SDP for the given prior with the success block
/// supported in H^c. Returns the validated tester, the optimal average
/// success probability, and solver diagnostics.
pub fn sdp_optimal_tester(
    n: usize,
    d_s: usize,
    d_p: usize,
    prior: &PriorSpec,
    hc: &SubspaceBasis,
    opts: SdpOptions,
) -> Result<(TesterChoi, f64, SolverDiagnostics)> {
    for (u, _) in prior.samples() {
        if u.d_s() != d_s || u.d_p() != d_p {
            return Err(DesignError::Prior(
                "prior sample dimensions do not match the requested scenario".into(),
            ));
        }
    }
    let dim = d_p.pow(2 * n as u32);
    if hc.ambient_dim() != dim {
        return Err(DesignError::Prior(format!(
            "H^c ambient dim {} does not match register dim {dim}",
            hc.ambient_dim()
        )));
    }

    if hc.dim() == 0 {
        // the support constraint forces M0 = 0; the trivial tester is optimal
        let tester = TesterChoi::trivial(n, d_p);
        let diagnostics = SolverDiagnostics {
            iterations: 0,
            primal_residual: 0.0,
            dual_residual: 0.0,
            objective: 0.0,
        };
        return Ok((tester, 0.0, diagnostics));
    }

    let x = build_x(prior, n);
    let solution = sdp::solve_tester_sdp(x.matrix(), hc, n, d_p, &opts);
    let tester = sdp::tester_from_solution(&solution.n_mat, &solution.m1_mat, n, d_p);
    let report = validate_tester(&tester);
    if !report.pass {
        return Err(DesignError::InvalidTester(report.to_string()));
    }
    Ok((tester, solution.objective, solution.diagnostics))
}

/// Success probabilities (and minimum conditioned fidelity) of a tester with
/// support in H^c on a batch of unitaries and initial states. Branches come
/// from the spectral decomposition of M0^T.
pub fn evaluate_tester_batch(
    tester: &TesterChoi,
    hc: &SubspaceBasis,
    unitaries: &[InteractionUnitary],
    states: &[PureState],
) -> Result<(Vec<f64>, f64)> {
    let m0t = tester.m0.transpose();
    let h = HermitianMatrix::symmetrized(&m0t);
    let (w, v) = eigh(&h)?;
    let dim = m0t.rows();
    let cutoff = 1e-12 * w.last().map(|x| x.max(1.0)).unwrap_or(1.0);
    let mut branches: Vec<(f64, Vec<C64>)> = Vec::new();
    for (k, &lam) in w.iter().enumerate() {
        if lam > cutoff {
            branches.push((lam, (0..dim).map(|i| v.get(i, k)).collect()));
        }
    }
    let _ = hc; // the support constraint is already encoded in the spectrum
    let mut values = Vec::with_capacity(unitaries.len());
    let mut min_fid = 1.0f64;
    for (u, psi0) in unitaries.iter().zip(states) {
        let link = build_link(u, tester.n)?;
        let d_s = u.d_s();
        let mut p = 0.0f64;
        let mut rho = ComplexMatrix::zeros(d_s, d_s);
        for (lam, c) in &branches {
            let a = action_on_system(c, &link)?;
            let bv = a.mul_vec(psi0.amplitudes());
            let wgt = lam;
            p += wgt * bv.iter().map(|z| z.norm_sqr()).sum::<f64>();
            for i in 0..d_s {
                for j in 0..d_s {
                    let x = rho.get(i, j) + C64::new(*wgt, 0.0) * bv[i] * bv[j].conj();
                    rho.set(i, j, x);
                }
            }
        }
        values.push(p);
        if p > 1e-6 {
            let fid = vec_inner(psi0.amplitudes(), &rho.mul_vec(psi0.amplitudes())).re / p;
            min_fid = min_fid.min(fid);
        }
    }
    Ok((values, min_fid))
}

/// The two eight-probe input layouts: singlets on consecutive pairs, or on
/// the interleaved pairs (1,3)(2,4)(5,7)(6,8).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum W8Variant {
    PairsSequential,
    PairsInterleaved,
}

impl W8Variant {
    pub fn id(&self) -> &'static str {
        match self {
            W8Variant::PairsSequential => "w8-pairs",
            W8Variant::PairsInterleaved => "w8-interleaved",
        }
    }

    pub fn pairs(&self) -> [(usize, usize); 4] {
        match self {
            W8Variant::PairsSequential => [(0, 1), (2, 3), (4, 5), (6, 7)],
            W8Variant::PairsInterleaved => [(0, 2), (1, 3), (4, 6), (5, 7)],
        }
    }
}

/// Branch family of a fixed probe input state over Haar-random U; ambient is
/// the output register space.
fn measurement_family(phi: &PureState, n: usize, d_s: usize, d_p: usize) -> BranchFamily {
    let phi = phi.clone();
    let out_dim = d_p.pow(n as u32);
    BranchFamily::new(
        d_s,
        out_dim,
        format!("fixed-input family n={n}"),
        move |rng| {
            let u = InteractionUnitary::new(d_s, d_p, haar_unitary(d_s * d_p, rng))
                .expect("Haar is unitary");
            let op = branch_operator(&u, phi.amplitudes(), n).expect("dims fixed");
            (u, op)
        },
    )
}

/// Fixed identification seed: the measurement space is unique, so any seed
/// lands on the same subspace; pinning one keeps the emitted basis stable
/// across runs and subcommands.
pub const W8_DERIVE_SEED: u64 = 0x88;

/// Heuristic #1 applied to a fixed input state at any probe count: identify
/// the measurement space, certify centrality on fresh unitaries, and return
/// the protocol together with the certificate.
pub fn derive_measurement_protocol(
    id: &str,
    phi: PureState,
    n: usize,
    d_p: usize,
    seed: u64,
) -> std::result::Result<(PrepareMeasureProtocol, CertificationReport, bool), ProtocolError> {
    let d_s = 2usize;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut space = identify_measurement_space(&phi, n, d_s, d_p, &mut rng, 1e-9, 10);
    let family = measurement_family(&phi, n, d_s, d_p);
    let report = certify_family(&family, space.vectors(), 100, &mut rng, 1e-8);
    let certified =
        report.all_central() && !report.nonzero_factor_indices(1e-6).is_empty();
    space.provenance = Provenance {
        sampler: format!(
            "{id} measurement space ({})",
            if certified { "certified" } else { "uncertified" }
        ),
        seed,
        termination_count: space.provenance.termination_count,
    };
    let protocol = PrepareMeasureProtocol::new(id, n, d_p, phi, space)?;
    Ok((protocol, report, certified))
}

/// Build an eight-probe protocol from heuristic #1: fix the singlet-product
/// input, identify the maximal sound measurement space, certify it.
/// Certification failure aborts.
pub fn derive_w8(
    variant: W8Variant,
    seed: u64,
) -> std::result::Result<PrepareMeasureProtocol, ProtocolError> {
    let phi = singlet_product_state(&variant.pairs(), 8);
    let (protocol, report, certified) =
        derive_measurement_protocol(variant.id(), phi, 8, 2, seed)?;
    if !certified {
        let worst = report.max_defect.iter().cloned().fold(0.0f64, f64::max);
        return Err(ProtocolError::Certification(format!(
            "{}: measurement space failed certification (worst defect {worst:.3e}, {} live vectors)",
            variant.id(),
            report.nonzero_factor_indices(1e-6).len()
        )));
    }
    Ok(protocol)
}

/// Centrality check for a single branch vector at target dimension 2:
/// is (I ⊗ <c|) S_U within 1e-9 of (tr A / 2) I, and what is the factor.
pub fn central_identity_check_d2(link: &LinkOperator, c: &[C64]) -> Result<(bool, C64)> {
    assert_eq!(link.d_s, 2, "check is specific to qubit targets");
    let a = action_on_system(c, link)?;
    let factor = a.trace() / C64::new(2.0, 0.0);
    let defect = a
        .sub(&ComplexMatrix::identity(2).scale(factor))
        .fro_norm();
    let is_central = defect < 1e-9 * a.fro_norm().max(1.0);
    Ok((is_central, factor))
}

/// Gram-matrix rank of the length-L block products {U_{i_1,0} ... U_{i_L,0}}.
pub fn block_product_span_rank(u: &InteractionUnitary, length: usize) -> Result<usize> {
    let d_s = u.d_s();
    let b0 = extract_block(u, 0, 0)?;
    let b1 = extract_block(u, 0, 1)?;
    let count = 1usize << length;
    let mut products: Vec<ComplexMatrix> = Vec::with_capacity(count);
    for bits in 0..count {
        let mut acc = ComplexMatrix::identity(d_s);
        for pos in 0..length {
            let b = if (bits >> pos) & 1 == 0 { &b0 } else { &b1 };
            acc = b.mul(&acc);
        }
        products.push(acc);
    }
    let mut gram = ComplexMatrix::zeros(count, count);
    for i in 0..count {
        for j in 0..count {
            gram.set(i, j, vec_inner(products[i].data(), products[j].data()));
        }
    }
    let (w, _) = eigh(&HermitianMatrix::symmetrized(&gram))?;
    let top = w.last().copied().unwrap_or(0.0).max(1e-300);
    Ok(w.iter().filter(|&&x| x > 1e-10 * top).count())
}

/// Appendix-style injective unitary: two random blocks whose length-L
/// products span the full matrix algebra, normalized through the positive
/// fixed point of sigma -> sum_i A_i^dag sigma A_i so that the blocks stack
/// into an isometry, then completed to a unitary on S ⊗ C^2.
///
/// Returns the unitary and the product length L = 2 d_S + 1.
pub fn injective_unitary(
    d_s: usize,
    rng: &mut ChaCha12Rng,
) -> Result<(InteractionUnitary, usize)> {
    assert!(d_s >= 2, "injective_unitary needs d_S >= 2");
    let length = 2 * d_s + 1;
    const MAX_ATTEMPTS: usize = 40;

    for _attempt in 0..MAX_ATTEMPTS {
        let mut a_ops: Vec<ComplexMatrix> = (0..2)
            .map(|_| {
                ComplexMatrix::from_fn(d_s, d_s, |_, _| {
                    C64::new(
                        rng.sample::<f64, _>(StandardNormal),
                        rng.sample::<f64, _>(StandardNormal),
                    ) / (2.0 * d_s as f64).sqrt()
                })
            })
            .collect();

        // positive fixed point of sigma -> sum A^dag sigma A by power iteration
        let mut sigma = ComplexMatrix::identity(d_s).scale(C64::new(1.0 / d_s as f64, 0.0));
        let mut lambda = 1.0f64;
        let mut converged = false;
        for _ in 0..20_000 {
            let mut next = ComplexMatrix::zeros(d_s, d_s);
            for a in &a_ops {
                next = next.add(&a.adjoint().mul(&sigma.mul(a)));
            }
            let next = HermitianMatrix::symmetrized(&next).into_matrix();
            let norm = next.fro_norm();
            if norm == 0.0 {
                break;
            }
            let next = next.scale(C64::new(1.0 / norm, 0.0));
            lambda = norm;
            let delta = next.sub(&sigma).fro_norm();
            sigma = next;
            if delta < 1e-15 {
                converged = true;
                break;
            }
        }
        if !converged {
            continue;
        }
        // make the fixed point a positive density operator
        let tr = sigma.trace().re;
        if tr < 0.0 {
            sigma = sigma.scale(C64::new(-1.0, 0.0));
        }
        let sigma = sigma.scale(C64::new(1.0 / sigma.trace().re, 0.0));
        let (w, v) = eigh(&HermitianMatrix::symmetrized(&sigma))?;
        if w[0] <= 1e-8 * w[d_s - 1] {
            continue; // singular fixed point; retry with fresh blocks
        }
        // rescale the blocks to spectral radius one
        let scale = C64::new(1.0 / lambda.sqrt(), 0.0);
        for a in a_ops.iter_mut() {
            *a = a.scale(scale);
        }
        // R = sigma^{1/2}, U_i = R A_i R^{-1}
        let mut r_half = ComplexMatrix::zeros(d_s, d_s);
        let mut r_inv = ComplexMatrix::zeros(d_s, d_s);
        for k in 0..d_s {
            let s = w[k].sqrt();
            for i in 0..d_s {
                for j in 0..d_s {
                    let term = v.get(i, k) * v.get(j, k).conj();
                    let x = r_half.get(i, j) + term * s;
                    r_half.set(i, j, x);
                    let y = r_inv.get(i, j) + term / s;
                    r_inv.set(i, j, y);
                }
            }
        }
        let blocks: Vec<ComplexMatrix> = a_ops
            .iter()
            .map(|a| r_half.mul(&a.mul(&r_inv)))
            .collect();
        // isometry check sum U_i^dag U_i = I
        let mut iso = ComplexMatrix::zeros(d_s, d_s);
        for b in &blocks {
            iso = iso.add(&b.adjoint().mul(b));
        }
        if iso.sub(&ComplexMatrix::identity(d_s)).max_abs() > 1e-11 {
            continue;
        }

        // embed: column (s, probe 0) carries sum_i U_i |s> |i>
        let dim = 2 * d_s;
        let mut m = ComplexMatrix::zeros(dim, dim);
        for s in 0..d_s {
            for (i, b) in blocks.iter().enumerate() {
                for s_out in 0..d_s {
                    m.set(s_out * 2 + i, s * 2, b.get(s_out, s));
                }
            }
        }
        // complete the remaining columns to a unitary
        let mut columns: Vec<Vec<C64>> = (0..d_s)
            .map(|s| (0..dim).map(|r| m.get(r, s * 2)).collect())
            .collect();
        let mut filled = 0usize;
        for cand in 0..dim {
            if filled == d_s {
                break;
            }
            let mut e = vec![ZERO; dim];
            e[cand] = ONE;
            if let Some(v) = orthonormal_extend(&columns, &e, 1e-8) {
                for (r, &x) in v.iter().enumerate() {
                    m.set(r, filled * 2 + 1, x);
                }
                columns.push(v);
                filled += 1;
            }
        }
        if filled != d_s {
            continue;
        }
        let u = InteractionUnitary::new(d_s, 2, m)?;
        // final guarantee: the products at the declared length span B(C^d)
        if block_product_span_rank(&u, length)? != d_s * d_s {
            continue;
        }
        return Ok((u, length));
    }
    Err(DesignError::SpanDeficiency(MAX_ATTEMPTS))
}
