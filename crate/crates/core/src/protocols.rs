//! Resetting protocols: the built-in W4, evaluation by sequential simulation
//! (with an independent link-operator route for cross-checking), soundness
//! verification, the concatenated undo-failure chain, Hamiltonian scenario
//! sweeps, and the CPTP impossibility witness.

use crate::experiment::{derive_seed, run_experiment};
use crate::linalg::{
    eigh, expm_i, haar_unitary, kron, pauli_x, pauli_y, pauli_z, vec_inner, ComplexMatrix,
    HermitianMatrix, LinalgError, PureState, ONE, ZERO,
};
use crate::network::{
    action_on_system, branch_operator, build_link, sequential_evolution,
    vector_grouped_to_interleaved, InteractionUnitary, NetworkError,
};
use crate::subspace::{
    certify_family, complement, identify_perp_span, BranchFamily, Provenance, SubspaceBasis,
};
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("memory budget exceeded at stage {stage}: {required} bytes required, budget {budget}")]
    MemoryBudget {
        stage: usize,
        required: usize,
        budget: usize,
    },
    #[error("certification failed: {0}")]
    Certification(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("design step failed: {0}")]
    Design(String),
}

impl From<crate::design::DesignError> for ProtocolError {
    fn from(e: crate::design::DesignError) -> Self {
        ProtocolError::Design(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, ProtocolError>;

/// A resetting protocol given by one joint input state on all probes and one
/// projective measurement on all returned probes.
#[derive(Debug, Clone)]
pub struct PrepareMeasureProtocol {
    pub id: String,
    pub n: usize,
    pub d_p: usize,
    pub input_state: PureState,
    pub projector: SubspaceBasis,
}

impl PrepareMeasureProtocol {
    pub fn new(
        id: impl Into<String>,
        n: usize,
        d_p: usize,
        input_state: PureState,
        projector: SubspaceBasis,
    ) -> Result<Self> {
        let o_dim = d_p.pow(n as u32);
        if input_state.dim() != o_dim {
            return Err(ProtocolError::Dimension(format!(
                "input state dim {} != d_P^n = {o_dim}",
                input_state.dim()
            )));
        }
        if projector.ambient_dim() != o_dim {
            return Err(ProtocolError::Dimension(format!(
                "projector ambient dim {} != d_P^n = {o_dim}",
                projector.ambient_dim()
            )));
        }
        Ok(Self {
            id: id.into(),
            n,
            d_p,
            input_state,
            projector,
        })
    }
}

/// Two-qubit singlet (|01> - |10>)/sqrt(2).
pub fn singlet() -> PureState {
    let s = 1.0 / 2f64.sqrt();
    PureState::new(vec![ZERO, C64::new(s, 0.0), C64::new(-s, 0.0), ZERO]).expect("normalized")
}

/// Product of singlets on the given qubit pairs (indices 0-based, pairwise
/// disjoint, covering all `n_qubits`).
pub fn singlet_product_state(pairs: &[(usize, usize)], n_qubits: usize) -> PureState {
    assert_eq!(pairs.len() * 2, n_qubits, "pairs must cover all qubits");
    let s = 1.0 / 2f64.sqrt();
    let dim = 1usize << n_qubits;
    let mut amps = vec![ZERO; dim];
    for (idx, slot) in amps.iter_mut().enumerate() {
        let bit = |q: usize| (idx >> (n_qubits - 1 - q)) & 1;
        let mut amp = 1.0f64;
        for &(a, b) in pairs {
            amp *= match (bit(a), bit(b)) {
                (0, 1) => s,
                (1, 0) => -s,
                _ => 0.0,
            };
            if amp == 0.0 {
                break;
            }
        }
        *slot = C64::new(amp, 0.0);
    }
    PureState::new(amps).expect("singlet products are normalized")
}

/// The six-dimensional quasi-symmetric space of four qubits.
pub fn quasi_symmetric_basis() -> SubspaceBasis {
    let h = 0.5;
    let s = 1.0 / 2f64.sqrt();
    let vec_of = |terms: &[(usize, f64)]| -> Vec<C64> {
        let mut v = vec![ZERO; 16];
        for &(idx, c) in terms {
            v[idx] = C64::new(c, 0.0);
        }
        v
    };
    let vectors = vec![
        vec_of(&[(0b0000, 1.0)]),
        vec_of(&[(0b1000, h), (0b0100, h), (0b0010, h), (0b0001, h)]),
        vec_of(&[(0b1010, h), (0b0101, h), (0b1001, h), (0b0110, h)]),
        vec_of(&[(0b0011, s), (0b1100, s)]),
        vec_of(&[(0b1110, h), (0b0111, h), (0b1011, h), (0b1101, h)]),
        vec_of(&[(0b1111, 1.0)]),
    ];
    SubspaceBasis::new(
        16,
        vectors,
        1e-12,
        Provenance::synthetic("quasi-symmetric space"),
    )
    .expect("orthonormal by construction")
}

/// The four-probe qubit resetting protocol: two singlets in, projection onto
/// the quasi-symmetric space out.
pub fn w4() -> PrepareMeasureProtocol {
    PrepareMeasureProtocol::new(
        "w4",
        4,
        2,
        singlet_product_state(&[(0, 1), (2, 3)], 4),
        quasi_symmetric_basis(),
    )
    .expect("dimensions consistent")
}

/// U = (X ⊗ Z + i Y ⊗ X)/sqrt(2); resets with certainty under W4.
pub fn special_xz_unitary() -> InteractionUnitary {
    let m = kron(&pauli_x(), &pauli_z())
        .add(&kron(&pauli_y(), &pauli_x()).scale(C64::new(0.0, 1.0)))
        .scale(C64::new(1.0 / 2f64.sqrt(), 0.0));
    InteractionUnitary::new(2, 2, m).expect("unitary by construction")
}

/// Haar-random product unitary V_S ⊗ V_P (no interaction).
pub fn product_unitary(d_s: usize, d_p: usize, rng: &mut impl Rng) -> InteractionUnitary {
    let v = haar_unitary(d_s, rng);
    let vp = haar_unitary(d_p, rng);
    InteractionUnitary::new(d_s, d_p, kron(&v, &vp)).expect("product of unitaries")
}

/// Haar-random joint unitary.
pub fn haar_interaction(d_s: usize, d_p: usize, rng: &mut impl Rng) -> InteractionUnitary {
    InteractionUnitary::new(d_s, d_p, haar_unitary(d_s * d_p, rng)).expect("Haar is unitary")
}

/// Outcome of running a protocol on one interaction unitary and one initial
/// target state.
#[derive(Debug, Clone)]
pub struct EvaluationOutcome {
    pub p_success: f64,
    /// Conditioned target state on success (dominant eigenvector of the
    /// conditioned density operator; exact for sound protocols).
    pub post_state: PureState,
    /// Conditioned density operator on the target, normalized (zero matrix
    /// when p_success vanishes).
    pub rho_success: ComplexMatrix,
    /// Failure-branch coefficient matrices f_i(U) with their apparatus label.
    pub failure_branch: Vec<(ComplexMatrix, usize)>,
}

impl EvaluationOutcome {
    /// <psi| rho_success |psi>.
    pub fn fidelity_to(&self, psi: &PureState) -> f64 {
        let v = self.rho_success.mul_vec(psi.amplitudes());
        vec_inner(psi.amplitudes(), &v).re
    }
}

/// Success weight, conditioned density operator and post state from the
/// per-projector-vector branch amplitudes.
fn condition_on_success(
    branch_vectors: &[Vec<C64>],
    d_s: usize,
    fallback: &PureState,
) -> (f64, ComplexMatrix, PureState) {
    let p: f64 = branch_vectors
        .iter()
        .map(|v| v.iter().map(|z| z.norm_sqr()).sum::<f64>())
        .sum();
    if p <= 0.0 {
        return (0.0, ComplexMatrix::zeros(d_s, d_s), fallback.clone());
    }
    let mut rho = ComplexMatrix::zeros(d_s, d_s);
    for v in branch_vectors {
        for i in 0..d_s {
            for j in 0..d_s {
                let x = rho.get(i, j) + v[i] * v[j].conj() / p;
                rho.set(i, j, x);
            }
        }
    }
    let h = HermitianMatrix::symmetrized(&rho);
    let (w, vecs) = eigh(&h).expect("conditioned state eigendecomposition");
    let top = w.len() - 1;
    let post: Vec<C64> = (0..d_s).map(|i| vecs.get(i, top)).collect();
    let post = PureState::normalized(post).unwrap_or_else(|_| fallback.clone());
    (p, rho, post)
}

/// Branch amplitudes (I ⊗ <m_k|) applied to an evolved joint state, one
/// d_S-vector per projector basis vector.
fn project_output(evolved: &[C64], basis: &[Vec<C64>], d_s: usize, o_dim: usize) -> Vec<Vec<C64>> {
    basis
        .iter()
        .map(|m| {
            (0..d_s)
                .map(|s| {
                    let mut acc = ZERO;
                    for (o, mo) in m.iter().enumerate() {
                        if *mo != ZERO {
                            acc += mo.conj() * evolved[s * o_dim + o];
                        }
                    }
                    acc
                })
                .collect()
        })
        .collect()
}

fn check_dims(p: &PrepareMeasureProtocol, u: &InteractionUnitary, psi0: &PureState) -> Result<()> {
    if u.d_p() != p.d_p {
        return Err(ProtocolError::Dimension(format!(
            "protocol d_P = {} but unitary d_P = {}",
            p.d_p,
            u.d_p()
        )));
    }
    if psi0.dim() != u.d_s() {
        return Err(ProtocolError::Dimension(format!(
            "initial state dim {} != d_S = {}",
            psi0.dim(),
            u.d_s()
        )));
    }
    Ok(())
}

/// Success weight and conditioned fidelity only (no failure branches).
fn evaluate_lean(
    p: &PrepareMeasureProtocol,
    u: &InteractionUnitary,
    psi0: &PureState,
) -> Result<(f64, f64)> {
    check_dims(p, u, psi0)?;
    let o_dim = p.d_p.pow(p.n as u32);
    let evolved = sequential_evolution(u, psi0.amplitudes(), p.input_state.amplitudes(), p.n)?;
    let branches = project_output(&evolved, p.projector.vectors(), u.d_s(), o_dim);
    let (ps, rho, _) = condition_on_success(&branches, u.d_s(), psi0);
    let fid = if ps > 0.0 {
        vec_inner(psi0.amplitudes(), &rho.mul_vec(psi0.amplitudes())).re
    } else {
        f64::NAN
    };
    Ok((ps, fid))
}

/// Sequential-simulation evaluation: prepare psi0 ⊗ input, interact probe by
/// probe, project the returned probes onto the protocol projector (success)
/// and its orthogonal complement (failure).
pub fn evaluate(
    p: &PrepareMeasureProtocol,
    u: &InteractionUnitary,
    psi0: &PureState,
) -> Result<EvaluationOutcome> {
    check_dims(p, u, psi0)?;
    let d_s = u.d_s();
    let o_dim = p.d_p.pow(p.n as u32);
    let evolved = sequential_evolution(u, psi0.amplitudes(), p.input_state.amplitudes(), p.n)?;
    let success = project_output(&evolved, p.projector.vectors(), d_s, o_dim);
    let (p_success, rho_success, post_state) = condition_on_success(&success, d_s, psi0);

    // failure branches as coefficient matrices f_i(U)
    let comp = complement(&p.projector);
    let vop = branch_operator(u, p.input_state.amplitudes(), p.n)?;
    let failure_branch = comp
        .vectors()
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let f = ComplexMatrix::from_fn(d_s, d_s, |s_out, s_in| {
                let mut acc = ZERO;
                for (o, mo) in m.iter().enumerate() {
                    if *mo != ZERO {
                        acc += mo.conj() * vop.get(s_out * o_dim + o, s_in);
                    }
                }
                acc
            });
            (f, i)
        })
        .collect();

    Ok(EvaluationOutcome {
        p_success,
        post_state,
        rho_success,
        failure_branch,
    })
}

/// Independent evaluation route through the link operator: contract the
/// support vectors phi* ⊗ m_k against S_U and accumulate branch amplitudes.
pub fn evaluate_via_link(
    p: &PrepareMeasureProtocol,
    u: &InteractionUnitary,
    psi0: &PureState,
) -> Result<(f64, PureState)> {
    check_dims(p, u, psi0)?;
    let d_s = u.d_s();
    let o_dim = p.d_p.pow(p.n as u32);
    let link = build_link(u, p.n)?;
    let phi_conj: Vec<C64> = p.input_state.amplitudes().iter().map(|z| z.conj()).collect();
    let mut branches = Vec::with_capacity(p.projector.dim());
    for m in p.projector.vectors() {
        let mut grouped = vec![ZERO; o_dim * o_dim];
        for (i, pc) in phi_conj.iter().enumerate() {
            if *pc == ZERO {
                continue;
            }
            for (o, mo) in m.iter().enumerate() {
                grouped[i * o_dim + o] = pc * mo;
            }
        }
        let c = vector_grouped_to_interleaved(&grouped, p.n, p.d_p);
        let a = action_on_system(&c, &link)?;
        branches.push(a.mul_vec(psi0.amplitudes()));
    }
    let (p_success, _, post) = condition_on_success(&branches, d_s, psi0);
    Ok((p_success, post))
}

/// Per-trial result of a failed soundness check.
#[derive(Debug, Clone)]
pub struct SoundnessFailure {
    pub trial: usize,
    pub p_success: f64,
    pub fidelity: f64,
}

#[derive(Debug, Clone)]
pub struct SoundnessReport {
    pub trials: usize,
    /// Trials with p_success above the evaluation floor 1e-6.
    pub evaluated: usize,
    pub min_fidelity: f64,
    pub failures: Vec<SoundnessFailure>,
    pub tol: f64,
    pub pass: bool,
}

/// Draw (Haar U, Haar psi0) pairs and require conditioned fidelity
/// >= 1 - tol whenever the success probability exceeds 1e-6.
pub fn verify_soundness(
    p: &PrepareMeasureProtocol,
    d_s: usize,
    trials: usize,
    rng: &mut ChaCha12Rng,
    tol: f64,
) -> Result<SoundnessReport> {
    let mut min_fidelity = 1.0f64;
    let mut evaluated = 0usize;
    let mut failures = Vec::new();
    for trial in 0..trials {
        let u = haar_interaction(d_s, p.d_p, rng);
        let psi0 = PureState::haar(d_s, rng);
        let (ps, fid) = evaluate_lean(p, &u, &psi0)?;
        if ps <= 1e-6 {
            continue;
        }
        evaluated += 1;
        min_fidelity = min_fidelity.min(fid);
        if fid < 1.0 - tol {
            failures.push(SoundnessFailure {
                trial,
                p_success: ps,
                fidelity: fid,
            });
        }
    }
    Ok(SoundnessReport {
        trials,
        evaluated,
        min_fidelity,
        failures: failures.clone(),
        tol,
        pass: failures.is_empty() && evaluated > 0,
    })
}

/// Monte Carlo estimate of the Haar-average success probability.
/// Each sample draws (U, psi0) from its derived seed.
pub fn haar_average(p: &PrepareMeasureProtocol, samples: usize, seed: u64) -> Result<(f64, f64)> {
    let proto = p.clone();
    let cfg = format!("haar-average:{}:{}:{}", proto.id, samples, seed);
    let record = run_experiment(&proto.id, &cfg, samples, seed, |_i, s| {
        let mut rng = ChaCha12Rng::seed_from_u64(s);
        let u = haar_interaction(2, proto.d_p, &mut rng);
        let psi0 = PureState::haar(2, &mut rng);
        evaluate_lean(&proto, &u, &psi0)
            .map(|(ps, _)| ps)
            .map_err(|e| e.to_string())
    });
    if record.warnings > 0 {
        return Err(ProtocolError::Config(format!(
            "{} samples failed during haar_average",
            record.warnings
        )));
    }
    Ok((record.mean, record.stderr))
}

// ---------------------------------------------------------------------------
// Concatenated undo-failure chain
// ---------------------------------------------------------------------------

/// One identified undo stage: the central space Q' on apparatus ⊗ new probe
/// outputs, and the complement that becomes the next apparatus basis.
#[derive(Debug, Clone)]
pub struct ConcatStage {
    pub q_prime: SubspaceBasis,
    pub failure_basis: SubspaceBasis,
    /// Q' vectors dropped because centrality certification failed (expected 0).
    pub dropped: usize,
    /// Minimum conditioned fidelity seen at this stage over the sample set.
    pub min_fidelity: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct ConcatOptions {
    pub ident_tol: f64,
    pub stop_count: usize,
    pub cert_trials: usize,
    pub memory_budget: usize,
}

impl Default for ConcatOptions {
    fn default() -> Self {
        Self {
            ident_tol: 1e-9,
            stop_count: 10,
            cert_trials: 100,
            memory_budget: crate::network::DEFAULT_MEMORY_BUDGET,
        }
    }
}

/// State of the undo-failure chain after `stage` extra rounds.
pub struct ConcatenationState {
    pub stage: usize,
    pub d_s: usize,
    pub base: PrepareMeasureProtocol,
    pub base_failure: SubspaceBasis,
    /// Fresh probe pair state injected at every undo round.
    pub pair_state: PureState,
    pub stages: Vec<ConcatStage>,
    pub apparatus_dim: usize,
    /// Cumulative success probability per sampled U (exact branch norms).
    pub cumulative_per_u: Vec<f64>,
    pub cumulative_success: f64,
    pub samples: usize,
    pub seed: u64,
    pub opts: ConcatOptions,
}

/// Extend failure branch vectors by one interaction round: two fresh probes
/// in `gop` (the two-probe branch operator), apparatus label major.
fn extend_branches(fail: &[Vec<C64>], gop: &ComplexMatrix, d_s: usize) -> Vec<Vec<C64>> {
    let o2 = gop.rows() / d_s;
    let mut out = Vec::with_capacity(fail.len() * o2);
    for b in fail {
        for o in 0..o2 {
            out.push(
                (0..d_s)
                    .map(|s_out| {
                        let mut acc = ZERO;
                        for (s_in, x) in b.iter().enumerate() {
                            acc += gop.get(s_out * o2 + o, s_in) * x;
                        }
                        acc
                    })
                    .collect(),
            );
        }
    }
    out
}

/// Contract a register vector against branch vectors: sum_alpha conj(c_a) w_a.
fn contract_branches(c: &[C64], w: &[Vec<C64>], d_s: usize) -> Vec<C64> {
    let mut out = vec![ZERO; d_s];
    for (cc, wv) in c.iter().zip(w) {
        if *cc == ZERO {
            continue;
        }
        for (o, x) in out.iter_mut().zip(wv) {
            *o += cc.conj() * x;
        }
    }
    out
}

/// Per-stage success weights (and conditioned fidelities) of the chain on a
/// fixed (U, psi0), computed exactly from branch norms.
fn chain_stage_weights(
    u: &InteractionUnitary,
    psi0: &PureState,
    base: &PrepareMeasureProtocol,
    base_failure: &SubspaceBasis,
    pair_state: &PureState,
    stages: &[ConcatStage],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let d_s = u.d_s();
    let o_dim = base.d_p.pow(base.n as u32);
    let evolved = sequential_evolution(u, psi0.amplitudes(), base.input_state.amplitudes(), base.n)?;
    let succ = project_output(&evolved, base.projector.vectors(), d_s, o_dim);
    let (p0, rho0, _) = condition_on_success(&succ, d_s, psi0);
    let fid = |rho: &ComplexMatrix, p: f64| -> f64 {
        if p > 0.0 {
            vec_inner(psi0.amplitudes(), &rho.mul_vec(psi0.amplitudes())).re
        } else {
            f64::NAN
        }
    };
    let mut weights = vec![p0];
    let mut fids = vec![fid(&rho0, p0)];
    let mut fail: Vec<Vec<C64>> =
        project_output(&evolved, base_failure.vectors(), d_s, o_dim);
    if !stages.is_empty() {
        let gop = branch_operator(u, pair_state.amplitudes(), 2)?;
        for st in stages {
            let w = extend_branches(&fail, &gop, d_s);
            let branches: Vec<Vec<C64>> = st
                .q_prime
                .vectors()
                .iter()
                .map(|c| contract_branches(c, &w, d_s))
                .collect();
            let (pm, rhom, _) = condition_on_success(&branches, d_s, psi0);
            weights.push(pm);
            fids.push(fid(&rhom, pm));
            fail = st
                .failure_basis
                .vectors()
                .iter()
                .map(|c| contract_branches(c, &w, d_s))
                .collect();
        }
    }
    Ok((weights, fids))
}

/// Failure branch vectors after all existing stages, for one basis column of
/// the target space. Used to assemble the next stage's branch family.
fn failure_vectors_through(
    u: &InteractionUnitary,
    psi0: &[C64],
    base: &PrepareMeasureProtocol,
    base_failure: &SubspaceBasis,
    pair_state: &PureState,
    stages: &[ConcatStage],
) -> Result<Vec<Vec<C64>>> {
    let d_s = u.d_s();
    let o_dim = base.d_p.pow(base.n as u32);
    let evolved = sequential_evolution(u, psi0, base.input_state.amplitudes(), base.n)?;
    let mut fail = project_output(&evolved, base_failure.vectors(), d_s, o_dim);
    if !stages.is_empty() {
        let gop = branch_operator(u, pair_state.amplitudes(), 2)?;
        for st in stages {
            let w = extend_branches(&fail, &gop, d_s);
            fail = st
                .failure_basis
                .vectors()
                .iter()
                .map(|c| contract_branches(c, &w, d_s))
                .collect();
        }
    }
    Ok(fail)
}

impl ConcatenationState {
    /// Stage-0 chain: evaluate the base protocol on `samples` derived-seed
    /// (U, psi0) draws.
    pub fn new(samples: usize, seed: u64, opts: ConcatOptions) -> Result<Self> {
        let base = w4();
        let base_failure = complement(&base.projector);
        let pair_state = singlet();
        let d_s = 2;
        let mut cumulative_per_u = Vec::with_capacity(samples);
        for i in 0..samples {
            let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(seed, i as u64));
            let u = haar_interaction(d_s, base.d_p, &mut rng);
            let psi0 = PureState::haar(d_s, &mut rng);
            let (w, _) = chain_stage_weights(&u, &psi0, &base, &base_failure, &pair_state, &[])?;
            cumulative_per_u.push(w[0]);
        }
        let cumulative_success = cumulative_per_u.iter().sum::<f64>() / samples as f64;
        let apparatus_dim = base_failure.dim();
        Ok(Self {
            stage: 0,
            d_s,
            base,
            base_failure,
            pair_state,
            stages: Vec::new(),
            apparatus_dim,
            cumulative_per_u,
            cumulative_success,
            samples,
            seed,
            opts,
        })
    }

    /// Branch family generating the next stage's register vectors: failure
    /// branches extended by two fresh probes in the pair state.
    pub fn branch_family(&self) -> BranchFamily {
        let d_s = self.d_s;
        let d_p = self.base.d_p;
        let out_dim = self.apparatus_dim * d_p * d_p;
        let base = self.base.clone();
        let base_failure = self.base_failure.clone();
        let pair_state = self.pair_state.clone();
        let stages = self.stages.clone();
        BranchFamily::new(
            d_s,
            out_dim,
            format!(
                "undo-failure family stage {} (apparatus {} ⊗ 2 probes)",
                self.stage + 1,
                self.apparatus_dim
            ),
            move |rng| {
                let u = haar_interaction(d_s, d_p, rng);
                let gop = branch_operator(&u, pair_state.amplitudes(), 2)
                    .expect("pair state dims fixed");
                let mut op = ComplexMatrix::zeros(d_s * out_dim, d_s);
                for s in 0..d_s {
                    let mut basis = vec![ZERO; d_s];
                    basis[s] = ONE;
                    let fail = failure_vectors_through(
                        &u,
                        &basis,
                        &base,
                        &base_failure,
                        &pair_state,
                        &stages,
                    )
                    .expect("chain dims fixed");
                    let w = extend_branches(&fail, &gop, d_s);
                    for (alpha, wv) in w.iter().enumerate() {
                        for (s_out, x) in wv.iter().enumerate() {
                            op.set(s_out * out_dim + alpha, s, *x);
                        }
                    }
                }
                (u, op)
            },
        )
    }

    /// Required working memory for identifying the next stage, in bytes.
    fn next_stage_bytes(&self) -> usize {
        let d = self.apparatus_dim * self.base.d_p * self.base.d_p;
        // perp basis + complement + projector working set
        d.saturating_mul(d).saturating_mul(16).saturating_mul(4)
    }
}

/// Identify the next undo stage, certify it, and fold its success weight
/// into the cumulative per-U probabilities.
pub fn concat_step(state: &ConcatenationState, rng: &mut ChaCha12Rng) -> Result<ConcatenationState> {
    let m = state.stage + 1;
    let required = state.next_stage_bytes();
    if required > state.opts.memory_budget {
        return Err(ProtocolError::MemoryBudget {
            stage: m,
            required,
            budget: state.opts.memory_budget,
        });
    }
    let family = state.branch_family();
    let perp = identify_perp_span(&family, rng, state.opts.ident_tol, state.opts.stop_count);
    let q_raw = complement(&perp);

    // certification against fresh unitaries; uncertified vectors are dropped
    let report = certify_family(&family, q_raw.vectors(), state.opts.cert_trials, rng, 1e-8);
    let kept: Vec<Vec<C64>> = q_raw
        .vectors()
        .iter()
        .zip(&report.max_defect)
        .filter(|(_, &d)| d < 1e-8)
        .map(|(v, _)| v.clone())
        .collect();
    let dropped = q_raw.dim() - kept.len();
    let q_prime = SubspaceBasis::new(
        family.out_dim,
        kept,
        state.opts.ident_tol,
        Provenance {
            sampler: format!("Q' stage {m} (certified)"),
            seed: q_raw.provenance.seed,
            termination_count: q_raw.provenance.termination_count,
        },
    )
    .map_err(ProtocolError::Certification)?;
    let failure_basis = complement(&q_prime);

    let mut stage_rec = ConcatStage {
        q_prime,
        failure_basis,
        dropped,
        min_fidelity: 1.0,
    };
    let mut stages = state.stages.clone();
    stages.push(stage_rec.clone());

    let mut cumulative_per_u = Vec::with_capacity(state.samples);
    let mut min_fid = 1.0f64;
    for i in 0..state.samples {
        let mut srng = ChaCha12Rng::seed_from_u64(derive_seed(state.seed, i as u64));
        let u = haar_interaction(state.d_s, state.base.d_p, &mut srng);
        let psi0 = PureState::haar(state.d_s, &mut srng);
        let (w, f) = chain_stage_weights(
            &u,
            &psi0,
            &state.base,
            &state.base_failure,
            &state.pair_state,
            &stages,
        )?;
        cumulative_per_u.push(state.cumulative_per_u[i] + w[m]);
        if w[m] > 1e-6 && f[m].is_finite() {
            min_fid = min_fid.min(f[m]);
        }
    }
    stage_rec.min_fidelity = min_fid;
    *stages.last_mut().expect("just pushed") = stage_rec;

    let cumulative_success = cumulative_per_u.iter().sum::<f64>() / state.samples as f64;
    let apparatus_dim = stages.last().unwrap().failure_basis.dim();
    Ok(ConcatenationState {
        stage: m,
        d_s: state.d_s,
        base: state.base.clone(),
        base_failure: state.base_failure.clone(),
        pair_state: state.pair_state.clone(),
        stages,
        apparatus_dim,
        cumulative_per_u,
        cumulative_success,
        samples: state.samples,
        seed: state.seed,
        opts: state.opts,
    })
}

#[derive(Debug, Clone)]
pub struct TableRow {
    pub m: usize,
    pub mean: f64,
    pub stderr: f64,
    pub min_fidelity: f64,
}

#[derive(Debug, Clone)]
pub struct ConcatTable {
    pub rows: Vec<TableRow>,
    /// Set when the chain stopped early: (stage reached, reason).
    pub truncated: Option<(usize, String)>,
}

fn row_from(per_u: &[f64], m: usize, min_fidelity: f64) -> TableRow {
    let n = per_u.len();
    let mean = per_u.iter().sum::<f64>() / n as f64;
    let var = per_u.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    TableRow {
        m,
        mean,
        stderr: (var / n as f64).sqrt(),
        min_fidelity,
    }
}

/// Reproduce the concatenated-protocol success table: row m holds the
/// cumulative Monte Carlo success probability after m undo rounds.
pub fn run_concatenated(m_max: usize, samples: usize, seed: u64) -> Result<ConcatTable> {
    run_concatenated_with(m_max, samples, seed, ConcatOptions::default())
}

pub fn run_concatenated_with(
    m_max: usize,
    samples: usize,
    seed: u64,
    opts: ConcatOptions,
) -> Result<ConcatTable> {
    let mut state = ConcatenationState::new(samples, seed, opts)?;
    let mut rows = vec![row_from(&state.cumulative_per_u, 0, 1.0)];
    let mut truncated = None;
    for m in 1..=m_max {
        let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(seed, 1_000_000 + m as u64));
        match concat_step(&state, &mut rng) {
            Ok(next) => {
                rows.push(row_from(
                    &next.cumulative_per_u,
                    m,
                    next.stages.last().unwrap().min_fidelity,
                ));
                state = next;
            }
            Err(ProtocolError::MemoryBudget {
                stage,
                required,
                budget,
            }) => {
                truncated = Some((
                    stage,
                    format!("memory budget exceeded: {required} bytes needed, budget {budget}"),
                ));
                break;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(ConcatTable { rows, truncated })
}

// ---------------------------------------------------------------------------
// Hamiltonian scenario sweeps
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct LambdaDist {
    pub dist: String,
    pub lo: f64,
    pub hi: f64,
}

/// A protocol entry in a scenario configuration: a builtin id or an inline
/// serialized protocol.
#[derive(Debug, Clone)]
pub enum ProtocolChoice {
    Id(String),
    Inline(PrepareMeasureProtocol),
}

#[derive(Debug, Clone)]
pub struct ScenarioConfig {
    pub protocols: Vec<ProtocolChoice>,
    pub t_grid: Vec<f64>,
    pub delta: f64,
    pub lambda: LambdaDist,
    pub samples: usize,
    pub seed: u64,
    /// Fixed part of the interaction Hamiltonian as a Pauli-coefficient map
    /// on S ⊗ P, e.g. {"XY": -1.0}. The free term lambda Z ⊗ I is added
    /// internally (the free Hamiltonian keeps acting during the interaction).
    pub hamiltonian: BTreeMap<String, f64>,
}

#[derive(Debug, Clone)]
pub struct CurveRow {
    pub t: f64,
    pub protocol_id: String,
    pub mean: f64,
    pub stderr: f64,
    pub samples: usize,
    /// Minimum conditioned fidelity over samples with p > 1e-6 (1.0 when no
    /// sample cleared the floor).
    pub min_fidelity: f64,
}

fn pauli_matrix(c: char) -> Option<ComplexMatrix> {
    match c {
        'I' => Some(ComplexMatrix::identity(2)),
        'X' => Some(pauli_x()),
        'Y' => Some(pauli_y()),
        'Z' => Some(pauli_z()),
        _ => None,
    }
}

/// Fixed interaction part of the scenario Hamiltonian on S ⊗ P.
pub fn coupling_hamiltonian(map: &BTreeMap<String, f64>) -> Result<ComplexMatrix> {
    let mut h = ComplexMatrix::zeros(4, 4);
    for (key, &coeff) in map {
        let chars: Vec<char> = key.chars().collect();
        if chars.len() != 2 {
            return Err(ProtocolError::Config(format!(
                "hamiltonian key '{key}' must be two Pauli letters (S then P)"
            )));
        }
        let a = pauli_matrix(chars[0]).ok_or_else(|| {
            ProtocolError::Config(format!("unknown Pauli letter '{}' in '{key}'", chars[0]))
        })?;
        let b = pauli_matrix(chars[1]).ok_or_else(|| {
            ProtocolError::Config(format!("unknown Pauli letter '{}' in '{key}'", chars[1]))
        })?;
        if !coeff.is_finite() {
            return Err(ProtocolError::Config(format!(
                "hamiltonian coefficient for '{key}' is not finite"
            )));
        }
        h = h.add(&kron(&a, &b).scale(C64::new(coeff, 0.0)));
    }
    Ok(h)
}

/// The total interaction U(lambda, T) = e^{-i H_int delta} e^{-i H_0 T} with
/// H_0 = lambda Z and H_int = coupling + lambda Z ⊗ I.
pub fn scenario_unitary(
    coupling: &ComplexMatrix,
    lambda: f64,
    t: f64,
    delta: f64,
) -> Result<InteractionUnitary> {
    let h_int = coupling.add(&kron(&pauli_z(), &ComplexMatrix::identity(2)).scale(C64::new(lambda, 0.0)));
    let h_int = HermitianMatrix::new(h_int).map_err(ProtocolError::Linalg)?;
    let h0 = HermitianMatrix::new(pauli_z().scale(C64::new(lambda, 0.0))).map_err(ProtocolError::Linalg)?;
    let u = expm_i(&h_int, delta)?.mul(&kron(&expm_i(&h0, t)?, &ComplexMatrix::identity(2)));
    InteractionUnitary::new(2, 2, u).map_err(ProtocolError::Network)
}

/// Resolved protocol list for a sweep: prepare-and-measure entries plus the
/// marker for the per-T SDP-optimal four-probe tester.
pub enum ResolvedProtocol {
    Fixed(PrepareMeasureProtocol),
    N4Optimal,
}

pub fn resolve_protocols(choices: &[ProtocolChoice]) -> Result<Vec<ResolvedProtocol>> {
    let mut out = Vec::new();
    for c in choices {
        match c {
            ProtocolChoice::Inline(p) => out.push(ResolvedProtocol::Fixed(p.clone())),
            ProtocolChoice::Id(id) => match id.as_str() {
                "w4" => out.push(ResolvedProtocol::Fixed(w4())),
                "w8-pairs" => out.push(ResolvedProtocol::Fixed(crate::design::derive_w8(
                    crate::design::W8Variant::PairsSequential,
                    crate::design::W8_DERIVE_SEED,
                )?)),
                "w8-interleaved" => out.push(ResolvedProtocol::Fixed(crate::design::derive_w8(
                    crate::design::W8Variant::PairsInterleaved,
                    crate::design::W8_DERIVE_SEED,
                )?)),
                "n4-optimal" => out.push(ResolvedProtocol::N4Optimal),
                other => {
                    return Err(ProtocolError::Config(format!(
                        "unknown protocol id '{other}'"
                    )))
                }
            },
        }
    }
    Ok(out)
}

/// Mean success probability over the lambda prior for every (T, protocol)
/// pair. Rows come back sorted by T, then protocol order.
pub fn scenario_sweep(cfg: &ScenarioConfig) -> Result<Vec<CurveRow>> {
    if cfg.lambda.dist != "uniform" {
        return Err(ProtocolError::Config(format!(
            "unsupported lambda distribution '{}'",
            cfg.lambda.dist
        )));
    }
    if cfg.samples < 2 {
        return Err(ProtocolError::Config("samples must be >= 2".into()));
    }
    let coupling = coupling_hamiltonian(&cfg.hamiltonian)?;
    let protocols = resolve_protocols(&cfg.protocols)?;

    // the SDP support space H^c is T-independent; identify it once
    let needs_sdp = protocols
        .iter()
        .any(|p| matches!(p, ResolvedProtocol::N4Optimal));
    let hc = if needs_sdp {
        let fam = BranchFamily::link_family(4, 2, 2);
        let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(cfg.seed, 0xAC11));
        Some(complement(&identify_perp_span(&fam, &mut rng, 1e-9, 10)))
    } else {
        None
    };

    use rayon::prelude::*;
    let rows: Result<Vec<Vec<CurveRow>>> = cfg
        .t_grid
        .par_iter()
        .enumerate()
        .map(|(ti, &t)| scenario_point(cfg, &coupling, &protocols, hc.as_ref(), ti, t))
        .collect();
    let mut flat: Vec<CurveRow> = rows?.into_iter().flatten().collect();
    flat.sort_by(|a, b| {
        a.t.partial_cmp(&b.t)
            .unwrap()
            .then(a.protocol_id.cmp(&b.protocol_id))
    });
    Ok(flat)
}

fn scenario_point(
    cfg: &ScenarioConfig,
    coupling: &ComplexMatrix,
    protocols: &[ResolvedProtocol],
    hc: Option<&SubspaceBasis>,
    ti: usize,
    t: f64,
) -> Result<Vec<CurveRow>> {
    let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(cfg.seed, ti as u64));
    let mut unitaries = Vec::with_capacity(cfg.samples);
    let mut states = Vec::with_capacity(cfg.samples);
    for _ in 0..cfg.samples {
        let lambda = cfg.lambda.lo + (cfg.lambda.hi - cfg.lambda.lo) * rng.random::<f64>();
        unitaries.push(scenario_unitary(coupling, lambda, t, cfg.delta)?);
        states.push(PureState::haar(2, &mut rng));
    }

    let mut rows = Vec::new();
    for proto in protocols {
        match proto {
            ResolvedProtocol::Fixed(p) => {
                let mut values = Vec::with_capacity(cfg.samples);
                let mut min_fid = 1.0f64;
                for (u, psi0) in unitaries.iter().zip(&states) {
                    let (ps, fid) = evaluate_lean(p, u, psi0)?;
                    values.push(ps);
                    if ps > 1e-6 && fid.is_finite() {
                        min_fid = min_fid.min(fid);
                    }
                }
                rows.push(curve_row(t, &p.id, &values, min_fid));
            }
            ResolvedProtocol::N4Optimal => {
                let hc = hc.expect("H^c resolved when n4-optimal requested");
                let prior = crate::design::PriorSpec::fixed_list(unitaries.clone())?;
                let (tester, _opt, _diag) =
                    crate::design::sdp_optimal_tester(4, 2, 2, &prior, hc, Default::default())?;
                let (values, min_fid) =
                    crate::design::evaluate_tester_batch(&tester, hc, &unitaries, &states)?;
                rows.push(curve_row(t, "n4-optimal", &values, min_fid));
            }
        }
    }
    Ok(rows)
}

fn curve_row(t: f64, id: &str, values: &[f64], min_fidelity: f64) -> CurveRow {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    CurveRow {
        t,
        protocol_id: id.to_string(),
        mean,
        stderr: (var / n as f64).sqrt(),
        samples: n,
        min_fidelity,
    }
}

// ---------------------------------------------------------------------------
// CPTP impossibility witness
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct WitnessReport {
    pub p_success: f64,
    pub fidelity: f64,
    /// |<0|psi0>|: the witness branch vanishes when this is ~0.
    pub overlap_with_zero: f64,
    pub degenerate: bool,
}

/// Apply a (possibly non-unitary) two-site operator on (S, P_k) to a density
/// operator on S ⊗ P1..Pn: rho -> A rho A^dag.
fn apply_two_site_to_density(
    rho: &ComplexMatrix,
    a: &ComplexMatrix,
    d_s: usize,
    d_p: usize,
    n: usize,
    k: usize,
) -> ComplexMatrix {
    let p_dim = d_p.pow(n as u32);
    let dim = d_s * p_dim;
    let stride_p = d_p.pow((n - 1 - k) as u32);
    let joint = d_s * d_p;
    // index decomposition: idx = s * p_dim + hi * stride_p * d_p + p * stride_p + lo
    let gather = |idx: usize| -> (usize, usize) {
        let s = idx / p_dim;
        let rem = idx % p_dim;
        let hi = rem / (stride_p * d_p);
        let p = (rem / stride_p) % d_p;
        let lo = rem % stride_p;
        (s * d_p + p, hi * stride_p + lo)
    };
    let rebuild = |sp: usize, rest: usize| -> usize {
        let s = sp / d_p;
        let p = sp % d_p;
        let hi = rest / stride_p;
        let lo = rest % stride_p;
        s * p_dim + hi * stride_p * d_p + p * stride_p + lo
    };
    // cache the index maps
    let mut to_parts = vec![(0usize, 0usize); dim];
    for (idx, part) in to_parts.iter_mut().enumerate() {
        *part = gather(idx);
    }
    // rho' = A_emb rho A_emb^dag, applied as two passes
    let mut tmp = ComplexMatrix::zeros(dim, dim);
    for col in 0..dim {
        // apply A to the column vector rho[:, col]
        for row_new in 0..dim {
            let (sp_new, rest) = to_parts[row_new];
            let mut acc = ZERO;
            for sp_old in 0..joint {
                let av = a.get(sp_new, sp_old);
                if av == ZERO {
                    continue;
                }
                acc += av * rho.get(rebuild(sp_old, rest), col);
            }
            tmp.set(row_new, col, acc);
        }
    }
    let mut out = ComplexMatrix::zeros(dim, dim);
    for row in 0..dim {
        for col_new in 0..dim {
            let (sp_new, rest) = to_parts[col_new];
            let mut acc = ZERO;
            for sp_old in 0..joint {
                let av = a.get(sp_new, sp_old).conj();
                if av == ZERO {
                    continue;
                }
                acc += tmp.get(row, rebuild(sp_old, rest)) * av;
            }
            out.set(row, col_new, acc);
        }
    }
    out
}

/// Run a protocol's network semantics with channel branches given by Kraus
/// operators on S ⊗ P. Returns success probability and conditioned fidelity
/// to psi0.
pub fn evaluate_via_kraus(
    p: &PrepareMeasureProtocol,
    kraus: &[ComplexMatrix],
    psi0: &PureState,
) -> Result<(f64, f64)> {
    let d_s = psi0.dim();
    let d_p = p.d_p;
    let p_dim = d_p.pow(p.n as u32);
    let dim = d_s * p_dim;
    // rho = |psi0 ⊗ phi><psi0 ⊗ phi|
    let mut joint = vec![ZERO; dim];
    for (s, &a) in psi0.amplitudes().iter().enumerate() {
        for (q, &b) in p.input_state.amplitudes().iter().enumerate() {
            joint[s * p_dim + q] = a * b;
        }
    }
    let mut rho = ComplexMatrix::from_fn(dim, dim, |i, j| joint[i] * joint[j].conj());
    for k in 0..p.n {
        let mut next = ComplexMatrix::zeros(dim, dim);
        for a in kraus {
            next = next.add(&apply_two_site_to_density(&rho, a, d_s, d_p, p.n, k));
        }
        rho = next;
    }
    // project the probes onto the protocol projector
    let pi = p.projector.projector(); // p_dim x p_dim
    let proj = kron(&ComplexMatrix::identity(d_s), &pi);
    let rho_succ = proj.mul(&rho).mul(&proj);
    let p_success = rho_succ.trace().re;
    if p_success <= 1e-12 {
        return Ok((p_success, f64::NAN));
    }
    let dims = [d_s, p_dim];
    let rho_s = crate::network::partial_trace(&rho_succ, &dims, &[0])?;
    let fid = vec_inner(psi0.amplitudes(), &rho_s.mul_vec(psi0.amplitudes())).re / p_success;
    Ok((p_success, fid))
}

/// The witness channel showing resetting cannot survive general CPTP
/// interactions: Kraus operators A0 = (I - |0><0|) ⊗ I and
/// A_{ij} = |0><0| ⊗ |j><i| / sqrt(2) on S ⊗ P.
pub fn witness_kraus_operators() -> Vec<ComplexMatrix> {
    let mut out = Vec::with_capacity(5);
    let mut a0 = ComplexMatrix::zeros(4, 4);
    // (I - |0><0|)_S ⊗ I_P keeps only the s=1 block
    a0.set(2, 2, ONE);
    a0.set(3, 3, ONE);
    out.push(a0);
    let r = C64::new(1.0 / 2f64.sqrt(), 0.0);
    for i in 0..2usize {
        for j in 0..2usize {
            let mut a = ComplexMatrix::zeros(4, 4);
            a.set(j, i, r); // |0><0|_S ⊗ |j><i|_P acts inside the s=0 block
            out.push(a);
        }
    }
    out
}

/// Feed the witness channel through the W4 tester semantics and report the
/// conditioned fidelity; a sound protocol would keep it at 1, the channel
/// provably cannot.
pub fn cptp_impossibility_witness(psi0: &PureState) -> Result<WitnessReport> {
    let p = w4();
    let overlap = psi0.amplitudes()[0].norm();
    let degenerate = overlap < 1e-6;
    let (p_success, fidelity) = evaluate_via_kraus(&p, &witness_kraus_operators(), psi0)?;
    Ok(WitnessReport {
        p_success,
        fidelity,
        overlap_with_zero: overlap,
        degenerate,
    })
}
