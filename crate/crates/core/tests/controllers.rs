mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use optctl::baselines::{gpc_step, GpcController, GpcState};
use optctl::costs::{hint_error_ceiling, LinearCost};
use optctl::harness::{rollout, Controller, NoForecast, SlotFeedback};
use optctl::optftrl::{OptFtrlController, OptFtrlParams};
use optctl::oracle::{Oracle, OracleKind, TraceForecaster};
use optctl::plant::{scenario_trace, CostTrace, DisturbanceTrace, LtiSystem, ScenarioConfig, ScenarioId};

fn optftrl(system: &LtiSystem, d: usize, p: usize, kappa_m: f64) -> OptFtrlController {
    OptFtrlController::new(system, OptFtrlParams { d, p, kappa_m }).unwrap()
}

fn drive(
    system: &LtiSystem,
    costs: &CostTrace,
    ws: &DisturbanceTrace,
    ctl: &mut OptFtrlController,
    kind: OracleKind,
    seed: u64,
) -> Vec<DMatrix<f64>> {
    let mut oracle = Oracle::new(kind, seed, 1.0, 1.0, system.d_x(), system.d_u()).unwrap();
    let mut forecaster = TraceForecaster::new(&mut oracle, costs);
    let mut x = DVector::zeros(system.d_x());
    let mut policies = Vec::new();
    for t in 1..=costs.len() {
        policies.push(Controller::policy(ctl).clone());
        let u = Controller::act(ctl, t).unwrap();
        let x_next = system.step(&x, &u, &ws.get(t as i64)).unwrap();
        let fb = SlotFeedback {
            cost: costs.get(t as i64).unwrap(),
            x: &x,
            u: &u,
            x_next: &x_next,
        };
        ctl.end_slot(t, &fb, &mut forecaster).unwrap();
        x = x_next;
    }
    policies
}

#[test]
fn perfect_forecasts_give_exact_hints_for_small_memories() {
    let mut r = rng(11);
    for d in 0..=5 {
        let sys = stable_system(&mut r, 2, 2, 0.2, 1.0);
        let costs = random_costs(&mut r, 120, 2, 2, 1.0);
        let ws = random_disturbances(&mut r, 120, 2, 1.0);
        let mut ctl = optftrl(&sys, d, 3, 1.0);
        drive(&sys, &costs, &ws, &mut ctl, OracleKind::Perfect, 0);
        assert_eq!(ctl.ledger().len(), 120 - d);
        assert!(ctl.ledger().entries().iter().all(|e| e.delta == 0.0), "d={d}");
        assert!(ctl.lambda_history().iter().all(|&l| l == 0.0), "d={d}");
    }
}

#[test]
fn perfect_forecasts_put_unregularized_leader_on_boundary_or_origin() {
    let cfg = ScenarioConfig::reference(ScenarioId::B, 300, 0).unwrap();
    let (costs, ws) = scenario_trace(&cfg).unwrap();
    let sys = cfg.lti_system().unwrap();
    let mut ctl = optftrl(&sys, 4, 3, 1.0);
    let policies = drive(&sys, &costs, &ws, &mut ctl, OracleKind::Perfect, 0);
    for m in &policies[1..] {
        let n = m.norm();
        assert!(n == 0.0 || (n - 1.0).abs() < 1e-12, "{n}");
    }
}

#[test]
fn memoryless_zero_forecast_matches_plain_ftrl() {
    let mut r = rng(12);
    let sys = stable_system(&mut r, 2, 2, 0.3, 1.0);
    let costs = random_costs(&mut r, 80, 2, 2, 1.0);
    let ws = random_disturbances(&mut r, 80, 2, 1.0);
    let mut ctl = optftrl(&sys, 0, 2, 0.7);
    let ours = drive(&sys, &costs, &ws, &mut ctl, OracleKind::Zero, 0);
    let cs: Vec<LinearCost> = costs.iter().cloned().collect();
    let reference = reference_ftrl_memoryless(&cs, ws.as_slice(), 2, 0.7);
    for (t, (a, b)) in ours.iter().zip(&reference).enumerate() {
        assert!((a - b).norm() < 1e-10, "slot {}: {a} vs {b}", t + 1);
    }
}

#[test]
fn memoryless_zero_forecast_error_is_gradient_norm() {
    let mut r = rng(13);
    let sys = stable_system(&mut r, 2, 1, 0.3, 1.0);
    let costs = random_costs(&mut r, 30, 2, 1, 1.0);
    let ws = random_disturbances(&mut r, 30, 2, 1.0);
    let mut ctl = optftrl(&sys, 0, 2, 1.0);
    drive(&sys, &costs, &ws, &mut ctl, OracleKind::Zero, 0);
    for e in ctl.ledger().entries() {
        let t = e.slot as usize;
        let g = costs.get(e.slot).unwrap().beta() * past_window(ws.as_slice(), t, 2).transpose();
        assert!((e.delta - g.norm()).abs() < 1e-12);
    }
}

#[test]
fn single_slot_run_has_no_feedback() {
    let sys = LtiSystem::reference(2f64.sqrt());
    let cfg = ScenarioConfig::reference(ScenarioId::A, 1, 0).unwrap();
    let (costs, ws) = scenario_trace(&cfg).unwrap();
    let mut ctl = optftrl(&sys, 10, 10, 1.0);
    let policies = drive(&sys, &costs, &ws, &mut ctl, OracleKind::Perfect, 0);
    assert_eq!(policies.len(), 1);
    assert!(ctl.ledger().is_empty());
    assert_eq!(ctl.lambda_history(), &[0.0]);
    // M_2 comes from the hint alone; it only involves wbar_0 = 0 here
    assert_eq!(ctl.aggregate_gradient().norm(), 0.0);
}

#[test]
fn hint_errors_respect_triangle_bound_and_ceiling() {
    for (id, rho) in [(ScenarioId::A, 0.5), (ScenarioId::B, 0.1), (ScenarioId::C, 0.9), (ScenarioId::B, 0.0)] {
        let cfg = ScenarioConfig::reference(id, 400, 3).unwrap();
        let (costs, ws) = scenario_trace(&cfg).unwrap();
        let sys = cfg.lti_system().unwrap();
        let mut ctl = optftrl(&sys, 10, 10, 1.0);
        drive(&sys, &costs, &ws, &mut ctl, OracleKind::Bernoulli { rho }, 5);
        let m = hint_error_ceiling(&sys, cfg.alpha_max(), cfg.beta_max(), 10);
        for e in ctl.ledger().entries() {
            assert!(e.delta <= e.partial_error_sum * (1.0 + 1e-12) + 1e-12, "{e:?}");
            assert!(e.partial_error_sum <= m, "{} > {m}", e.partial_error_sum);
        }
    }
}

#[test]
fn lambda_never_decreases_and_policy_stays_feasible() {
    let mut r = rng(14);
    let sys = stable_system(&mut r, 3, 2, 0.15, 1.0);
    let costs = random_costs(&mut r, 300, 3, 2, 0.5);
    let ws = random_disturbances(&mut r, 300, 3, 1.0);
    let mut ctl = optftrl(&sys, 3, 2, 0.5);
    let policies = drive(&sys, &costs, &ws, &mut ctl, OracleKind::Bernoulli { rho: 0.4 }, 9);
    assert!(ctl.lambda_history().windows(2).all(|w| w[1] >= w[0]));
    assert!(ctl.lambda_history().last().unwrap() > &0.0);
    assert!(policies.iter().all(|m| m.norm() <= 0.5 * (1.0 + 1e-9)));
}

#[test]
fn gpc_follows_projected_descent_on_surrogate_gradient() {
    let mut r = rng(15);
    let sys = stable_system(&mut r, 2, 2, 0.2, 1.0);
    let costs = random_costs(&mut r, 40, 2, 2, 1.0);
    let ws = random_disturbances(&mut r, 40, 2, 1.0);
    let (d, p) = (3, 2);
    let state = GpcState::tuned(DMatrix::zeros(2, 4), 1.0, 10.0, 40, 3.0).unwrap();
    let mut ctl = GpcController::new(&sys, d, p, state.clone()).unwrap();
    let mut expected = state;
    let mut x = DVector::zeros(2);
    for t in 1..=40usize {
        assert!((ctl.policy() - &expected.m).norm() < 1e-12);
        // gradient of c_t on the truncated state with M held fixed
        let cost = costs.get(t as i64).unwrap().clone();
        let m0 = expected.m.clone();
        let surrogate = |m: &DMatrix<f64>| {
            let mut xhat = DVector::zeros(2);
            for i in 0..d {
                if t >= i + 2 {
                    let s = t - i - 1;
                    let term = sys.b() * (m * past_window(ws.as_slice(), s, p)) + &ws.as_slice()[s - 1];
                    xhat += sys.a().pow(i as u32) * term;
                }
            }
            cost.alpha().dot(&xhat) + cost.beta().dot(&(m * past_window(ws.as_slice(), t, p)))
        };
        let grad = fd_gradient(surrogate, &m0, 1e-6);
        expected = gpc_step(expected, &grad);
        let u = ctl.act(t).unwrap();
        let x_next = sys.step(&x, &u, &ws.get(t as i64)).unwrap();
        let fb = SlotFeedback {
            cost: costs.get(t as i64).unwrap(),
            x: &x,
            u: &u,
            x_next: &x_next,
        };
        ctl.end_slot(t, &fb, &mut NoForecast).unwrap();
        assert!((ctl.policy() - &expected.m).norm() < 1e-7, "slot {t}");
        expected.m = ctl.policy().clone();
        x = x_next;
    }
}

#[test]
fn controllers_reject_out_of_order_slots() {
    let sys = LtiSystem::reference(1.0);
    let ctl = optftrl(&sys, 2, 2, 1.0);
    let err = Controller::act(&ctl, 3).unwrap_err();
    assert!(err.to_string().contains("slot 3"));
    assert!(err.to_string().contains("act"));
}

#[test]
fn rollout_trajectory_matches_plain_simulation() {
    let mut r = rng(16);
    let sys = stable_system(&mut r, 2, 3, 0.1, 1.0);
    let costs = random_costs(&mut r, 60, 2, 3, 1.0);
    let ws = random_disturbances(&mut r, 60, 2, 1.0);
    let mut ctl = optftrl(&sys, 4, 3, 1.0);
    let mut oracle = Oracle::new(OracleKind::Bernoulli { rho: 0.5 }, 2, 1.0, 1.0, 2, 3).unwrap();
    let mut fc = TraceForecaster::new(&mut oracle, &costs);
    let run = rollout(&sys, &costs, &ws, &mut ctl, &mut fc).unwrap();

    let mut ctl2 = optftrl(&sys, 4, 3, 1.0);
    let policies = drive(&sys, &costs, &ws, &mut ctl2, OracleKind::Bernoulli { rho: 0.5 }, 2);
    let cs: Vec<_> = costs.iter().cloned().collect();
    let sim = simulate(sys.a(), sys.b(), &cs, ws.as_slice(), 3, |t| policies[t - 1].clone());
    for (k, row) in sim.iter().enumerate() {
        assert!((run.costs[k] - row.2).abs() < 1e-9);
        assert!((run.policy_norms[k] - policies[k].norm()).abs() < 1e-12);
    }
}
