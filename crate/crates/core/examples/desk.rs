use dp_pasgd::datasets::{append_bias, load_csv_from_reader, normalize_unit_ball, Federation, FederationSpec, PartitionMode};
use dp_pasgd::engine::{run_dp_pasgd, RunConfig};
use dp_pasgd::models::{estimate_constants, mean_split_accuracy, LossKernel, ProbeConfig, SplitKind};
use dp_pasgd::planner::{planned_eta, solve, Budgets};
use dp_pasgd::privacy::NoiseSpec;
use dp_pasgd::synth::{adult_categorical_schema, adult_like_csv, ADULT_ROWS};

const ETA_SCALES: [f64; 6] = [1.0, 2.0, 4.0, 8.0, 16.0, 32.0];
const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

fn main() {
    let csv = adult_like_csv(ADULT_ROWS, 20240801);
    let mut schema = adult_categorical_schema();
    schema.feature_columns =
        Some(vec!["education".into(), "marital-status".into(), "occupation".into(), "sex".into()]);
    let mut table = load_csv_from_reader(csv.as_bytes(), &schema).unwrap();
    normalize_unit_ball(&mut table);
    append_bias(&mut table);

    let spec = FederationSpec { devices: 16, mode: PartitionMode::IidEven, seed: 91 };
    let fed = Federation::build(&table, &spec, 128).unwrap();
    let kernel = LossKernel::logistic(0.001);
    let constants = estimate_constants(&kernel, &fed, &ProbeConfig::default()).unwrap();

    println!("-- privacy sweep at C_th = 1000 (planner plans + tuned eta) --");
    for eps in [1.0, 2.0, 4.0, 10.0] {
        let budgets = Budgets { resource: 1000.0, epsilon: eps, delta: 1e-4, comm_cost: 100.0, comp_cost: 1.0 };
        let plan = solve(&constants, &budgets).unwrap();

        // Tune the eta scale on validation accuracy, then report test.
        let mut tuned: Option<(f64, f64, Vec<f64>)> = None; // (val, scale, test accs)
        for scale in ETA_SCALES {
            let mut val_sum = 0.0;
            let mut test_accs = Vec::new();
            let mut diverged = false;
            for &seed in &SEEDS {
                let cfg = RunConfig {
                    tau: plan.tau,
                    iterations: plan.iterations,
                    eta: scale * plan.eta,
                    noise: NoiseSpec::calibrated(
                        plan.iterations as f64,
                        constants.clip,
                        &constants.batch_sizes,
                        budgets.epsilon,
                        budgets.delta,
                    ),
                    clip: constants.clip,
                    delta: budgets.delta,
                    comm_cost: budgets.comm_cost,
                    comp_cost: budgets.comp_cost,
                    seed,
                    eval_every: 10,
                    record_models: false,
                };
                match run_dp_pasgd(&fed, &kernel, &cfg) {
                    Ok(trace) => {
                        val_sum += mean_split_accuracy(&kernel, &fed, &trace.final_model, SplitKind::Val);
                        test_accs.push(trace.snapshots.last().unwrap().mean_test_accuracy);
                    }
                    Err(_) => {
                        diverged = true;
                        break;
                    }
                }
            }
            if diverged {
                continue;
            }
            let val = val_sum / SEEDS.len() as f64;
            if tuned.as_ref().map_or(true, |(v, _, _)| val > *v) {
                tuned = Some((val, scale, test_accs));
            }
        }
        let (val, scale, test_accs) = tuned.unwrap();
        let mean = test_accs.iter().sum::<f64>() / test_accs.len() as f64;
        println!(
            "eps={eps:>4}: plan tau={} K={} | tuned scale {scale} (val {val:.4}) -> test accs {:?} mean {mean:.4}",
            plan.tau,
            plan.iterations,
            test_accs.iter().map(|a| (a * 1e4).round() / 1e4).collect::<Vec<_>>()
        );
    }

    println!("-- planner tau over the budget grid --");
    for cth in [200.0, 500.0, 800.0, 1000.0] {
        let mut taus = Vec::new();
        for eps in [1.0, 2.0, 4.0, 10.0] {
            let budgets = Budgets { resource: cth, epsilon: eps, delta: 1e-4, comm_cost: 100.0, comp_cost: 1.0 };
            let plan = solve(&constants, &budgets).unwrap();
            taus.push((plan.tau, plan.iterations));
        }
        println!("C_th={cth:>5}: (tau, K) over eps {{1,2,4,10}} = {taus:?}");
    }

    println!(
        "planned eta tau=1: {:.4}, tau=10: {:.4}",
        planned_eta(constants.smoothness, 1.0),
        planned_eta(constants.smoothness, 10.0)
    );
}
