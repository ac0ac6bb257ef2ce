//! Finite-difference audit of the jet engine through real networks.

use paac::fd::check_against_fd;
use paac::jet::{slot_dxx, Jet1, Jet2, JetK};
use paac::net::{eval_plan, init_theta, Architecture, NetPlan};
use paac::tape::{input_jet, TapeCell};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn net_value(plan: &NetPlan, theta: &[f64], t: f64, x: &[f64]) -> f64 {
    use paac::jet::Sc;
    let cell: TapeCell<Sc> = TapeCell::new();
    cell.bind_params(theta);
    let tv = cell.input_t(t);
    for (i, &v) in x.iter().enumerate() {
        cell.input_x(v, i);
    }
    cell.var_at(eval_plan(plan, &cell, tv.id, 0)).value()
}

fn audit_one<J: JetK>(plan: &NetPlan, seed: u64) -> f64 {
    let theta = init_theta(plan, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfd);
    let t = rng.gen_range(0.1..0.9);
    let x: Vec<f64> = (0..J::D).map(|_| rng.gen_range(-0.8..0.8)).collect();
    let cell: TapeCell<J> = TapeCell::new();
    cell.bind_params(&theta);
    let jet = input_jet(&cell, t, &x, |c, tv, _| c.var_at(eval_plan(plan, c, tv.id, 0)))
        .unwrap()
        .values();
    let report =
        check_against_fd(|tt, xx| net_value(plan, &theta, tt, xx), t, &x, &jet, 1e-4).unwrap();
    report.max_rel_err
}

#[test]
fn swish_network_jets_match_fd_one_and_two_dim() {
    for seed in 0..20u64 {
        let plan1 = NetPlan::new(Architecture::Residual, 2, 3, 32, 1);
        let e1 = audit_one::<Jet1>(&plan1, seed);
        assert!(e1 <= 1e-5, "d=1 seed {seed}: max rel err {e1}");
        let plan2 = NetPlan::new(Architecture::Residual, 3, 3, 32, 1);
        let e2 = audit_one::<Jet2>(&plan2, seed);
        assert!(e2 <= 1e-5, "d=2 seed {seed}: max rel err {e2}");
    }
}

#[test]
fn gated_network_jets_match_fd() {
    for seed in 0..6u64 {
        let plan = NetPlan::new(Architecture::Gated, 3, 3, 32, 1);
        let e = audit_one::<Jet2>(&plan, seed);
        assert!(e <= 1e-5, "gated seed {seed}: max rel err {e}");
    }
}

#[test]
fn parameter_gradient_of_hessian_entry_matches_fd() {
    // grad_params of a scalar that is itself a jet entry, against central
    // differences in θ at relative 1e-4.
    let plan = NetPlan::new(Architecture::Residual, 3, 3, 32, 1);
    let mut theta = init_theta(&plan, 77);
    let (t, x) = (0.4, [0.25, -0.5]);
    let grad = {
        let cell: TapeCell<Jet2> = TapeCell::new();
        cell.bind_params(&theta);
        let jet =
            input_jet(&cell, t, &x, |c, tv, _| c.var_at(eval_plan(&plan, c, tv.id, 0))).unwrap();
        let loss = jet.dxx(0, 1);
        cell.zero_grad();
        cell.backward(loss);
        cell.param_grad()
    };
    let hess_entry = |theta: &[f64]| -> f64 {
        let cell: TapeCell<Jet2> = TapeCell::new();
        cell.bind_params(theta);
        let out = {
            let tv = cell.input_t(t);
            cell.input_x(x[0], 0);
            cell.input_x(x[1], 1);
            cell.var_at(eval_plan(&plan, &cell, tv.id, 0))
        };
        cell.jet_of(out).dxx(0, 1)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let eps = 2e-6;
    let mut checked = 0;
    while checked < 30 {
        let k = rng.gen_range(0..theta.len());
        let orig = theta[k];
        theta[k] = orig + eps;
        let fp = hess_entry(&theta);
        theta[k] = orig - eps;
        let fm = hess_entry(&theta);
        theta[k] = orig;
        let fd = (fp - fm) / (2.0 * eps);
        let scale = grad[k].abs().max(fd.abs()).max(1e-3);
        assert!(
            (grad[k] - fd).abs() / scale <= 1e-4,
            "θ[{k}]: ad {} vs fd {fd}",
            grad[k]
        );
        checked += 1;
    }

    // Extracted Hessian nodes are mirrored bit-identically.
    let cell: TapeCell<Jet2> = TapeCell::new();
    cell.bind_params(&theta);
    let out = {
        let tv = cell.input_t(t);
        cell.input_x(x[0], 0);
        cell.input_x(x[1], 1);
        cell.var_at(eval_plan(&plan, &cell, tv.id, 0))
    };
    let jv = cell.jet_of(out);
    assert_eq!(jv.dxx(0, 1).to_bits(), jv.dxx(1, 0).to_bits());
    let s01 = cell.extract(out, slot_dxx(2, 0, 1)).value();
    let s10 = cell.extract(out, slot_dxx(2, 1, 0)).value();
    assert_eq!(s01.to_bits(), s10.to_bits());
}
