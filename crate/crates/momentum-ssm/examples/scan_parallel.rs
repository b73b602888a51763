//! Parallel-vs-sequential scan equivalence on a momentum recurrence.
//!
//! Builds a long affine recurrence in the stacked [h; v] form, evaluates
//! it strictly left-to-right and through the logarithmic-depth combine
//! tree, and reports the worst relative deviation and the tree depth.
//!
//! Run: cargo run --release --example scan_parallel

use momentum_ssm::affine_scan::{
    max_state_error, parallel_combine_depth, scan_parallel, scan_sequential, AffineElement,
    StructuredTransition,
};
use momentum_ssm::numkit::{DiagVec, Rng};

fn main() {
    let mut rng = Rng::new(7);
    let n = 16;
    for len in [1usize, 7, 64, 1000, 4096] {
        let elements: Vec<AffineElement> = (0..len)
            .map(|_| {
                let a_bar = DiagVec::new((0..n).map(|_| rng.range(0.01, 0.99)).collect()).unwrap();
                let beta = rng.range(0.0, 0.999);
                let offset: Vec<f64> = (0..2 * n).map(|_| rng.range(-1.0, 1.0)).collect();
                AffineElement::new(StructuredTransition::momentum(a_bar, beta), offset).unwrap()
            })
            .collect();
        let s0 = vec![0.0; 2 * n];
        let seq = scan_sequential(&elements, &s0).unwrap();
        let par = scan_parallel(&elements, &s0).unwrap();
        let err = max_state_error(&seq.states, &par.states, 1e-12);
        println!(
            "L = {len:5}  combine_depth = {:2} (= ceil(log2 L)+1 = {:2})  max rel err = {err:.3e}",
            par.combine_depth,
            parallel_combine_depth(len),
        );
        assert!(err < 1e-9);
    }
    println!("parallel scan matches the sequential oracle at every length");
}
