use dp_pasgd::models::ProblemConstants;
use dp_pasgd::planner::*;
use dp_pasgd::rng::stream;
use rand::Rng;

fn main() {
    let mut rng = stream(777, &[1]);
    let mut worst: f64 = 0.0;
    for trial in 0..60 {
        let m = rng.gen_range(4..24usize);
        let c = ProblemConstants {
            clip: rng.gen_range(0.5..2.0),
            smoothness: rng.gen_range(0.05..2.0),
            strong_convexity: 0.0, // fill below
            gradient_variance: rng.gen_range(0.0..0.5),
            initial_gap: rng.gen_range(0.1..3.0),
            dim: rng.gen_range(5..200),
            device_count: m,
            batch_sizes: (0..m).map(|_| rng.gen_range(8..256usize)).collect(),
        };
        let c = ProblemConstants { strong_convexity: c.smoothness * rng.gen_range(0.01..0.9), ..c };
        let b = Budgets {
            resource: rng.gen_range(300.0..3000.0),
            epsilon: rng.gen_range(0.5..20.0),
            delta: 10f64.powf(rng.gen_range(-6.0..-2.0)),
            comm_cost: rng.gen_range(20.0..200.0),
            comp_cost: rng.gen_range(0.5..3.0),
        };
        if b.resource < b.comm_cost + b.comp_cost {
            continue;
        }
        let plan = solve(&c, &b).unwrap();
        let oracle = grid_search_bound(&c, &b, 1..=50, None).unwrap();
        let ratio = plan.predicted_bound / oracle.predicted_bound;
        if ratio > worst {
            worst = ratio;
        }
        if ratio > 1.05 {
            println!(
                "trial {trial}: ratio {ratio:.4}  solve(tau={},K={},F={:.5}) grid(tau={},K={},F={:.5})  C={:.0} eps={:.2} c1={:.0} c2={:.2}",
                plan.tau, plan.iterations, plan.predicted_bound,
                oracle.tau, oracle.iterations, oracle.predicted_bound,
                b.resource, b.epsilon, b.comm_cost, b.comp_cost
            );
        }
    }
    println!("worst ratio over random settings: {worst:.5}");
}
