//! Implicit-Euler heavy-ball dynamics: closed-form step inverse and the
//! spectral-radius stability map.
//!
//! Prints the per-channel 2x2 inverse for a hand case, sweeps the
//! spectral radius of the inverse step matrix over (gamma, delta) for
//! non-negative state diagonals, and shows an impulse trajectory whose
//! energy decays monotonically.
//!
//! Run: cargo run --release --example heavyball_stability

use momentum_ssm::heavyball_s4::{discretize_implicit, hb_forward, spectral_radius, HeavyBallParams};
use momentum_ssm::numkit::{DiagVec, RealSeq};

fn main() {
    // hand case: gamma = 1, delta = 1, a = 1 gives the Schur factor 1/3
    let p = HeavyBallParams::new(1.0, DiagVec::new(vec![1.0]).unwrap(), vec![1.0], vec![1.0])
        .unwrap();
    let d = discretize_implicit(&p, 1.0).unwrap();
    let b = d.blocks()[0];
    println!("step inverse at (gamma=1, delta=1, a=1):");
    println!("  [{:+.6} {:+.6}]", b[0], b[1]);
    println!("  [{:+.6} {:+.6}]   (schur factor {:.6})", b[2], b[3], d.schur.values[0]);

    println!("\nspectral radius of the inverse step (a = 0..4, radius <= 1 everywhere):");
    for gamma in [0.1, 0.5, 1.0, 2.0] {
        for delta in [0.1, 0.5, 1.0] {
            let p = HeavyBallParams::new(
                gamma,
                DiagVec::new(vec![0.0, 1.0, 2.0, 4.0]).unwrap(),
                vec![1.0; 4],
                vec![1.0; 4],
            )
            .unwrap();
            let r = spectral_radius(&p, delta).unwrap();
            let max = r.iter().cloned().fold(0.0, f64::max);
            println!("  gamma = {gamma:4}  delta = {delta:4}  max radius = {max:.12}");
            assert!(max <= 1.0 + 1e-12);
        }
    }

    // impulse response: one unit kick, then free decay
    let n = 4;
    let p = HeavyBallParams::new(
        0.8,
        DiagVec::new(vec![0.5, 1.0, 2.0, 3.0]).unwrap(),
        vec![1.0; n],
        vec![0.25; n],
    )
    .unwrap();
    let d = discretize_implicit(&p, 0.3).unwrap();
    let mut xs = vec![0.0; 64];
    xs[0] = 1.0;
    let y = hb_forward(&p, &d, &RealSeq::from_scalars(&xs).unwrap()).unwrap();
    println!("\nimpulse response (every 8th step):");
    for step in (0..64).step_by(8) {
        println!("  y[{step:2}] = {:+.6e}", y.get(step, 0));
    }
}
