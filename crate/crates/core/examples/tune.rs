use qreset_core::design::{sdp_optimal_tester, PriorSpec, SdpOptions};
use qreset_core::subspace::{complement, identify_perp_span, BranchFamily};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

fn main() {
    let fam = BranchFamily::link_family(4, 2, 2);
    let mut rng = ChaCha12Rng::seed_from_u64(1);
    let hc = complement(&identify_perp_span(&fam, &mut rng, 1e-9, 10));
    let prior = PriorSpec::haar(200, 2, 2, 2).unwrap();
    for step in [0.25, 0.5, 1.0, 2.0, 4.0] {
        for alpha in [1.7, 1.9] {
            let opts = SdpOptions { step, over_relax: alpha, ..Default::default() };
            let t0 = std::time::Instant::now();
            let (_t, opt, diag) = sdp_optimal_tester(4, 2, 2, &prior, &hc, opts).unwrap();
            println!("step {step:4} alpha {alpha}: {} iters, {:?}, opt {opt:.6}", diag.iterations, t0.elapsed());
        }
    }
}
