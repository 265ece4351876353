//! Randomized identification of central-polynomial subspaces.
//!
//! The workhorse is a Gram-Schmidt sweep over randomly generated branch
//! vectors: the span of vectors (<phi| ⊗ I) Op |phi_perp> over random
//! (U, phi, phi_perp) is the orthogonal complement of the space of register
//! vectors whose contraction with the operator family acts as a multiple of
//! the identity on the target. Termination waits for `stop_count` consecutive
//! in-span samples; a single in-span hit would already certify completion in
//! exact arithmetic, the extra ones guard the float tolerance.

use crate::linalg::{
    eigh, orthonormal_extend, vec_inner, vec_norm, ComplexMatrix, HermitianMatrix, PureState, ZERO,
};
use crate::network::{vector_grouped_to_interleaved, InteractionUnitary};
use num_complex::Complex64 as C64;
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

/// How a basis was produced; carried along for cache keys and reports.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Provenance {
    pub sampler: String,
    pub seed: u64,
    /// Total number of samples drawn before termination.
    pub termination_count: usize,
}

impl Provenance {
    pub fn synthetic(label: &str) -> Self {
        Provenance {
            sampler: label.to_string(),
            seed: 0,
            termination_count: 0,
        }
    }
}

/// An orthonormal basis of a subspace, with the tolerance it was built at.
#[derive(Debug, Clone)]
pub struct SubspaceBasis {
    ambient_dim: usize,
    vectors: Vec<Vec<C64>>,
    tol: f64,
    pub provenance: Provenance,
}

impl SubspaceBasis {
    pub fn new(
        ambient_dim: usize,
        vectors: Vec<Vec<C64>>,
        tol: f64,
        provenance: Provenance,
    ) -> Result<Self, String> {
        for (i, v) in vectors.iter().enumerate() {
            if v.len() != ambient_dim {
                return Err(format!(
                    "vector {i} has dim {} in ambient {ambient_dim}",
                    v.len()
                ));
            }
            let n = vec_norm(v);
            if (n - 1.0).abs() > tol.max(1e-12) * 10.0 {
                return Err(format!("vector {i} has norm {n}"));
            }
            for (j, w) in vectors.iter().take(i).enumerate() {
                let ip = vec_inner(w, v).norm();
                if ip > tol.max(1e-12) * 10.0 {
                    return Err(format!("vectors {j},{i} overlap {ip:.3e}"));
                }
            }
        }
        Ok(Self {
            ambient_dim,
            vectors,
            tol,
            provenance,
        })
    }

    pub fn empty(ambient_dim: usize, tol: f64, provenance: Provenance) -> Self {
        Self {
            ambient_dim,
            vectors: Vec::new(),
            tol,
            provenance,
        }
    }

    pub fn dim(&self) -> usize {
        self.vectors.len()
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient_dim
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    pub fn vectors(&self) -> &[Vec<C64>] {
        &self.vectors
    }

    /// Orthogonal projection P|v>.
    pub fn project(&self, v: &[C64]) -> Vec<C64> {
        let mut out = vec![ZERO; self.ambient_dim];
        for b in &self.vectors {
            let ip = vec_inner(b, v);
            for (o, x) in out.iter_mut().zip(b) {
                *o += ip * x;
            }
        }
        out
    }

    /// Norm of the component of `v` outside the subspace, relative to |v|.
    pub fn projection_defect(&self, v: &[C64]) -> f64 {
        let nv = vec_norm(v);
        if nv == 0.0 {
            return 0.0;
        }
        let p = self.project(v);
        let mut res = 0.0;
        for (a, b) in v.iter().zip(&p) {
            res += (a - b).norm_sqr();
        }
        res.sqrt() / nv
    }

    /// Dense projector matrix.
    pub fn projector(&self) -> ComplexMatrix {
        let d = self.ambient_dim;
        let mut p = ComplexMatrix::zeros(d, d);
        for b in &self.vectors {
            for i in 0..d {
                if b[i] == ZERO {
                    continue;
                }
                for j in 0..d {
                    let v = p.get(i, j) + b[i] * b[j].conj();
                    p.set(i, j, v);
                }
            }
        }
        p
    }
}

/// A family of branch operators: a sampler producing (U, operator) pairs
/// where the operator maps the target space into target ⊗ C^out_dim.
pub struct BranchFamily {
    pub d_s: usize,
    pub out_dim: usize,
    pub description: String,
    sampler: Box<dyn Fn(&mut ChaCha12Rng) -> (InteractionUnitary, ComplexMatrix) + Send + Sync>,
}

impl BranchFamily {
    pub fn new(
        d_s: usize,
        out_dim: usize,
        description: impl Into<String>,
        sampler: impl Fn(&mut ChaCha12Rng) -> (InteractionUnitary, ComplexMatrix)
            + Send
            + Sync
            + 'static,
    ) -> Self {
        Self {
            d_s,
            out_dim,
            description: description.into(),
            sampler: Box::new(sampler),
        }
    }

    /// The link-operator family S_U over Haar-random U: identifies H^c.
    pub fn link_family(n: usize, d_s: usize, d_p: usize) -> Self {
        let out_dim = d_p.pow(2 * n as u32);
        Self::new(
            d_s,
            out_dim,
            format!("S_U family n={n} d_S={d_s} d_P={d_p}"),
            move |rng| {
                let u =
                    InteractionUnitary::new(d_s, d_p, crate::linalg::haar_unitary(d_s * d_p, rng))
                        .expect("Haar matrix is unitary");
                let link = crate::network::build_link(&u, n).expect("within budget");
                let m = link.matrix.clone();
                (u, m)
            },
        )
    }

    pub fn sample(&self, rng: &mut ChaCha12Rng) -> (InteractionUnitary, ComplexMatrix) {
        (self.sampler)(rng)
    }
}

/// Haar-random orthonormal pair (phi, phi_perp) on C^d.
pub fn haar_orthonormal_pair(d: usize, rng: &mut impl Rng) -> (Vec<C64>, Vec<C64>) {
    loop {
        let phi = PureState::haar(d, rng).into_amplitudes();
        let cand = PureState::haar(d, rng).into_amplitudes();
        if let Some(perp) = orthonormal_extend(std::slice::from_ref(&phi), &cand, 1e-6) {
            return (phi, perp);
        }
    }
}

/// Gram-Schmidt accumulation of randomly generated vectors until
/// `stop_count` consecutive samples fall inside the current span.
/// Returns the orthonormal basis and the number of samples drawn.
fn randomized_span(
    ambient: usize,
    tol: f64,
    stop_count: usize,
    rng: &mut ChaCha12Rng,
    mut sample_vector: impl FnMut(&mut ChaCha12Rng) -> Vec<C64>,
) -> (Vec<Vec<C64>>, usize) {
    let mut basis: Vec<Vec<C64>> = Vec::new();
    let mut consecutive = 0usize;
    let mut samples = 0usize;
    while consecutive < stop_count && basis.len() < ambient {
        samples += 1;
        let xi = sample_vector(rng);
        debug_assert_eq!(xi.len(), ambient);
        match orthonormal_extend(&basis, &xi, tol) {
            Some(v) => {
                basis.push(v);
                consecutive = 0;
            }
            None => consecutive += 1,
        }
    }
    (basis, samples)
}

/// Identify the span of (<phi|_S ⊗ I) Op |phi_perp>_S over random samples of
/// the family and random orthonormal (phi, phi_perp). For the S_U family
/// this is H^c_perp; the orthogonal complement of the result is the central
/// subspace.
pub fn identify_perp_span(
    family: &BranchFamily,
    rng: &mut ChaCha12Rng,
    tol: f64,
    stop_count: usize,
) -> SubspaceBasis {
    assert!(stop_count >= 1);
    let (d_s, out_dim) = (family.d_s, family.out_dim);
    let seed_note = rng.random::<u64>();
    let (basis, samples) = randomized_span(out_dim, tol, stop_count, rng, |r| {
        let (_u, op) = family.sample(r);
        let (phi, perp) = haar_orthonormal_pair(d_s, r);
        let applied = op.mul_vec(&perp);
        let mut xi = vec![ZERO; out_dim];
        for (alpha, x) in xi.iter_mut().enumerate() {
            let mut acc = ZERO;
            for (s, p) in phi.iter().enumerate() {
                acc += p.conj() * applied[s * out_dim + alpha];
            }
            *x = acc;
        }
        xi
    });
    SubspaceBasis {
        ambient_dim: out_dim,
        vectors: basis,
        tol,
        provenance: Provenance {
            sampler: family.description.clone(),
            seed: seed_note,
            termination_count: samples,
        },
    }
}

/// Orthonormal basis of the orthogonal complement.
pub fn complement(basis: &SubspaceBasis) -> SubspaceBasis {
    let d = basis.ambient_dim;
    let p = basis.projector();
    let h = HermitianMatrix::symmetrized(&p);
    let (w, v) = eigh(&h).expect("projector eigendecomposition");
    let mut vectors = Vec::new();
    for (k, &lam) in w.iter().enumerate() {
        if lam < 0.5 {
            vectors.push((0..d).map(|i| v.get(i, k)).collect());
        }
    }
    SubspaceBasis {
        ambient_dim: d,
        vectors,
        tol: basis.tol,
        provenance: Provenance {
            sampler: format!("complement of [{}]", basis.provenance.sampler),
            seed: basis.provenance.seed,
            termination_count: basis.provenance.termination_count,
        },
    }
}

/// Orthonormal basis of the intersection, via the null space of
/// (I - P1) + (I - P2).
pub fn intersect(b1: &SubspaceBasis, b2: &SubspaceBasis) -> SubspaceBasis {
    assert_eq!(b1.ambient_dim, b2.ambient_dim, "ambient dims differ");
    let d = b1.ambient_dim;
    let tol = b1.tol.max(b2.tol);
    let g = ComplexMatrix::identity(d)
        .scale(C64::new(2.0, 0.0))
        .sub(&b1.projector())
        .sub(&b2.projector());
    let (w, v) = eigh(&HermitianMatrix::symmetrized(&g)).expect("Gram eigendecomposition");
    let mut vectors = Vec::new();
    for (k, &lam) in w.iter().enumerate() {
        if lam < tol {
            vectors.push((0..d).map(|i| v.get(i, k)).collect());
        }
    }
    SubspaceBasis {
        ambient_dim: d,
        vectors,
        tol,
        provenance: Provenance {
            sampler: format!(
                "intersection of [{}] and [{}]",
                b1.provenance.sampler, b2.provenance.sampler
            ),
            seed: b1.provenance.seed,
            termination_count: b1.provenance.termination_count + b2.provenance.termination_count,
        },
    }
}

/// Spectral-norm distance ||P1 - P2||_2 between the projectors.
pub fn subspace_distance(b1: &SubspaceBasis, b2: &SubspaceBasis) -> f64 {
    assert_eq!(b1.ambient_dim, b2.ambient_dim, "ambient dims differ");
    let diff = b1.projector().sub(&b2.projector());
    let h = HermitianMatrix::symmetrized(&diff);
    let (w, _) = eigh(&h).expect("difference eigendecomposition");
    w.iter().fold(0.0f64, |m, &x| m.max(x.abs()))
}

/// Heuristic #1: the measurement space for a fixed probe input state.
///
/// Off-diagonal vectors (psi_L ⊥ psi_R) span the space the projector must
/// avoid; diagonal vectors (psi_L = psi_R) span the space where the
/// proportionality factor actually lives. The returned space is
/// span{diagonal} ∩ span{off-diagonal}^perp, an orthonormal basis on the
/// output registers.
pub fn identify_measurement_space(
    phi: &PureState,
    n: usize,
    d_s: usize,
    d_p: usize,
    rng: &mut ChaCha12Rng,
    tol: f64,
    stop_count: usize,
) -> SubspaceBasis {
    let o_dim = d_p.pow(n as u32);
    assert_eq!(phi.dim(), o_dim, "input state must live on d_P^n");
    let seed_note = rng.random::<u64>();

    let sample_xi = |r: &mut ChaCha12Rng, diagonal: bool| -> Vec<C64> {
        let u = InteractionUnitary::new(d_s, d_p, crate::linalg::haar_unitary(d_s * d_p, r))
            .expect("Haar matrix is unitary");
        let (psi_l, psi_r) = if diagonal {
            let v = PureState::haar(d_s, r).into_amplitudes();
            (v.clone(), v)
        } else {
            haar_orthonormal_pair(d_s, r)
        };
        let evolved = crate::network::sequential_evolution(&u, &psi_r, phi.amplitudes(), n)
            .expect("dims consistent");
        let mut xi = vec![ZERO; o_dim];
        for (o, x) in xi.iter_mut().enumerate() {
            let mut acc = ZERO;
            for (s, p) in psi_l.iter().enumerate() {
                acc += p.conj() * evolved[s * o_dim + o];
            }
            *x = acc;
        }
        xi
    };

    let (diag_vecs, diag_samples) =
        randomized_span(o_dim, tol, stop_count, rng, |r| sample_xi(r, true));
    let (off_vecs, off_samples) =
        randomized_span(o_dim, tol, stop_count, rng, |r| sample_xi(r, false));

    let h_phi = SubspaceBasis {
        ambient_dim: o_dim,
        vectors: diag_vecs,
        tol,
        provenance: Provenance {
            sampler: format!("H_phi diagonal family n={n}"),
            seed: seed_note,
            termination_count: diag_samples,
        },
    };
    let hc_phi = SubspaceBasis {
        ambient_dim: o_dim,
        vectors: off_vecs,
        tol,
        provenance: Provenance {
            sampler: format!("H^c_phi off-diagonal family n={n}"),
            seed: seed_note,
            termination_count: off_samples,
        },
    };
    let mut result = intersect(&h_phi, &complement(&hc_phi));
    result.provenance = Provenance {
        sampler: format!("measurement space (heuristic #1) n={n} d_S={d_s} d_P={d_p}"),
        seed: seed_note,
        termination_count: diag_samples + off_samples,
    };
    result
}

/// Heuristic #2: the input-state space H_Pi for a fixed output projector.
///
/// Returns the chi with chi ⊗ m ∈ H^c for every basis vector m of `pi`,
/// conjugated back to input states. The empty result means no protocol uses
/// this projector.
pub fn identify_input_space(
    pi: &SubspaceBasis,
    hc: &SubspaceBasis,
    n: usize,
    d_p: usize,
    tol: f64,
) -> SubspaceBasis {
    let o_dim = d_p.pow(n as u32);
    let io_dim = d_p.pow(2 * n as u32);
    assert_eq!(pi.ambient_dim, o_dim, "projector must live on the outputs");
    assert_eq!(hc.ambient_dim, io_dim, "H^c must live on I ⊗ O");
    let i_dim = o_dim;

    // G = sum_a M_a^dag M_a with M_a(chi) = (I - P_Hc) interleave(chi ⊗ m_a);
    // null vectors of G are the valid chi.
    let mut g = ComplexMatrix::zeros(i_dim, i_dim);
    for m in pi.vectors() {
        let mut columns: Vec<Vec<C64>> = Vec::with_capacity(i_dim);
        for i in 0..i_dim {
            let mut grouped = vec![ZERO; io_dim];
            for (o, mo) in m.iter().enumerate() {
                grouped[i * o_dim + o] = *mo;
            }
            let inter = vector_grouped_to_interleaved(&grouped, n, d_p);
            let proj = hc.project(&inter);
            let residual: Vec<C64> = inter.iter().zip(&proj).map(|(a, b)| a - b).collect();
            columns.push(residual);
        }
        for a in 0..i_dim {
            for b in 0..i_dim {
                let v = g.get(a, b) + vec_inner(&columns[a], &columns[b]);
                g.set(a, b, v);
            }
        }
    }
    let (w, v) = eigh(&HermitianMatrix::symmetrized(&g)).expect("Gram eigendecomposition");
    let mut vectors = Vec::new();
    for (k, &lam) in w.iter().enumerate() {
        if lam < tol {
            // chi = phi*; hand back the input state phi
            vectors.push((0..i_dim).map(|i| v.get(i, k).conj()).collect());
        }
    }
    SubspaceBasis {
        ambient_dim: i_dim,
        vectors,
        tol,
        provenance: Provenance {
            sampler: format!(
                "input space (heuristic #2) from [{}]",
                pi.provenance.sampler
            ),
            seed: hc.provenance.seed,
            termination_count: hc.provenance.termination_count,
        },
    }
}

/// Per-vector centrality certificate over fresh Haar samples of a family.
#[derive(Debug, Clone)]
pub struct CertificationReport {
    pub trials: usize,
    /// max over trials of ||A - (tr A / d) I||_F / max(1, ||A||_F), per vector
    pub max_defect: Vec<f64>,
    /// max over trials of |tr A / d|, per vector
    pub max_factor: Vec<f64>,
    pub tol: f64,
}

impl CertificationReport {
    pub fn all_central(&self) -> bool {
        self.max_defect.iter().all(|&d| d < self.tol)
    }

    /// Vectors whose factor never leaves the noise floor act as zero on the
    /// target for every sampled U.
    pub fn nonzero_factor_indices(&self, floor: f64) -> Vec<usize> {
        self.max_factor
            .iter()
            .enumerate()
            .filter(|(_, &f)| f > floor)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Certify centrality of `vectors` against `trials` fresh samples of the
/// family: the action (I ⊗ <c|) Op must stay within `tol` of a multiple of
/// the identity (relative to max(1, ||A||_F)).
pub fn certify_family(
    family: &BranchFamily,
    vectors: &[Vec<C64>],
    trials: usize,
    rng: &mut ChaCha12Rng,
    tol: f64,
) -> CertificationReport {
    let d_s = family.d_s;
    let out_dim = family.out_dim;
    let mut max_defect = vec![0.0f64; vectors.len()];
    let mut max_factor = vec![0.0f64; vectors.len()];
    for _ in 0..trials {
        let (_u, op) = family.sample(rng);
        for (vi, c) in vectors.iter().enumerate() {
            let mut a = ComplexMatrix::zeros(d_s, d_s);
            for s_out in 0..d_s {
                for s_in in 0..d_s {
                    let mut acc = ZERO;
                    for (alpha, cc) in c.iter().enumerate() {
                        if *cc == ZERO {
                            continue;
                        }
                        acc += cc.conj() * op.get(s_out * out_dim + alpha, s_in);
                    }
                    a.set(s_out, s_in, acc);
                }
            }
            let factor = a.trace() / C64::new(d_s as f64, 0.0);
            let defect =
                a.sub(&ComplexMatrix::identity(d_s).scale(factor)).fro_norm() / a.fro_norm().max(1.0);
            max_defect[vi] = max_defect[vi].max(defect);
            max_factor[vi] = max_factor[vi].max(factor.norm());
        }
    }
    CertificationReport {
        trials,
        max_defect,
        max_factor,
        tol,
    }
}
