//! Analytic backward pass of the selective layer checked against central
//! finite differences.
//!
//! Run: cargo run --release --example selective_gradients

use momentum_ssm::affine_scan::ScanMode;
use momentum_ssm::gradient_lab::gradcheck;
use momentum_ssm::numkit::{RealSeq, Rng};
use momentum_ssm::selective_ssm::{ssm_backward, ssm_forward_mode, SelectiveParams};

fn main() {
    let mut rng = Rng::new(11);
    let (d, n, len) = (4, 8, 24);
    let p = SelectiveParams::init(d, n, &mut rng);
    let x = RealSeq::new(len, d, (0..len * d).map(|_| rng.normal() * 0.7).collect()).unwrap();
    let weights: Vec<f64> = (0..len * d).map(|_| rng.normal()).collect();

    let (_, cache) = ssm_forward_mode(&p, &x, ScanMode::Sequential).unwrap();
    let gy = RealSeq::new(len, d, weights.clone()).unwrap();
    let out = ssm_backward(&p, &cache, &gy).unwrap();

    // flatten parameters and gradients side by side for the oracle
    let template = p.clone();
    let loss = |params: &[f64]| -> f64 {
        let mut q = template.clone();
        let mut k = 0;
        for dst in
            [&mut q.a_log, &mut q.w_b, &mut q.w_c, &mut q.w_delta, &mut q.theta_delta, &mut q.skip]
        {
            let len = dst.len();
            dst.copy_from_slice(&params[k..k + len]);
            k += len;
        }
        let (y, _) = ssm_forward_mode(&q, &x, ScanMode::Sequential).unwrap();
        y.data().iter().zip(&weights).map(|(a, b)| a * b).sum()
    };
    let mut point = Vec::new();
    let mut analytic = Vec::new();
    point.extend(&p.a_log);
    point.extend(&p.w_b);
    point.extend(&p.w_c);
    point.extend(&p.w_delta);
    point.extend(&p.theta_delta);
    point.extend(&p.skip);
    analytic.extend(&out.grads.a_log);
    analytic.extend(&out.grads.w_b);
    analytic.extend(&out.grads.w_c);
    analytic.extend(&out.grads.w_delta);
    analytic.extend(&out.grads.theta_delta);
    analytic.extend(&out.grads.skip);

    let check = gradcheck(loss, &point, &analytic, 1e-8).unwrap();
    println!(
        "checked {} coordinates: max relative error {:.3e} (fd consistency {:.3e})",
        check.checked, check.max_rel_err, check.fd_consistency
    );
    assert!(check.max_rel_err < 1e-4);
    println!("analytic backward matches the finite-difference oracle");
}
