//! Grid search for cart-pendulum gains `(k_u, K_P)`.
//!
//! ```sh
//! cargo run --release -p sidapbc --example gain_search
//! ```

use sidapbc::systems::cart_pendulum::{search_gains, CartPendulumParams};

fn main() {
    let k_u: Vec<f64> = vec![-35.0, -40.0, -50.0, -60.0, -80.0, -100.0];
    let k_p: Vec<f64> = vec![0.005, 0.01, 0.02, 0.05, 0.1, 0.2, 0.5];
    let horizon = 40.0;
    let results = search_gains(CartPendulumParams::default(), &k_u, &k_p, horizon);
    println!("k_u,k_p,gains_valid,converged,final_norm,monotonicity_violations");
    for r in &results {
        println!(
            "{},{},{},{},{:.3e},{}",
            r.k_u, r.k_p, r.gains_valid, r.converged, r.final_norm, r.monotonicity_violations
        );
    }
    match results
        .iter()
        .filter(|r| r.converged && r.monotonicity_violations == 0)
        .min_by(|a, b| a.final_norm.total_cmp(&b.final_norm))
    {
        Some(best) => println!("best: k_u = {}, K_P = {}", best.k_u, best.k_p),
        None => println!("no candidate converged"),
    }
}
