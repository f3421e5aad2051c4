//! One PASS/FAIL line per acceptance criterion.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::time::Instant;

use bbqram::circuit::{
    build_doubled_circuit, build_query_circuit, ideal_oracle_output, plus_bus_input, query_input, run_circuit, QueryCircuit,
    RouterInit, ScheduleKind,
};
use bbqram::harness::{
    address_state, estimate_parallel, fit_scaling_exponent, ghz_coherent_experiment, run_sweep, AddressState, ExperimentConfig,
    InitMode, SweepRow, TwirlMode,
};
use bbqram::noise::{bound_theorem3, bound_theorem4, trajectory_fidelity, NoiseDecl, NoiseModel, C64, DEFAULT_A};
use bbqram::oracle::{density_fidelity, exhaustive_chi_fidelity, phase_invariance_check};
use bbqram::pauli::Pauli;
use bbqram::sparse_state::SparseState;
use bbqram::topology::{build_tree, Assignment, RouterModel, WAIT};
use bbqram::twirl::{
    build_edge_twirled_circuit, chi_matrix, dress_circuit, max_off_diagonal, memory_reshuffle, random_channel, sample_edge_frame,
    sample_twirl_frame, superoperator, twirl_channel, TwirlGroup,
};
use bbqram::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

type Outcome = Result<(bool, String)>;

fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

fn memory(n: usize, rng: &mut ChaCha8Rng) -> Vec<u8> {
    (0..1 << n).map(|_| rng.random_range(0..2u8)).collect()
}

fn random_superposition(n: usize, rng: &mut ChaCha8Rng) -> Vec<(usize, C64)> {
    let raw: Vec<C64> = (0..1 << n).map(|_| C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))).collect();
    let norm = raw.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
    raw.into_iter().enumerate().map(|(i, a)| (i, a / norm)).collect()
}

fn noiseless_fidelity(q: &QueryCircuit, data: &SparseState<f64>, init: &RouterInit, memory: &[u8]) -> Result<(f64, SparseState<f64>)> {
    let mut s = query_input(q, data, init)?;
    run_circuit(&mut s, q, None, 0)?;
    Ok((s.fidelity_against_target_over_routers(&ideal_oracle_output(data, memory)?)?, s))
}

fn criterion1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    let mut restored = true;
    for n in 1..=4 {
        let tree = build_tree(n, RouterModel::ThreeLevel)?;
        let x = memory(n, &mut rng);
        let q = build_query_circuit(&tree, &x, ScheduleKind::Pipelined)?;
        let data_layout = Arc::new(q.layout().data_layout());
        let mut inputs: Vec<Vec<(usize, C64)>> = (0..1 << n).map(|i| vec![(i, c(1.0))]).collect();
        inputs.extend((0..50).map(|_| random_superposition(n, &mut rng)));
        for amps in inputs {
            let data = plus_bus_input(data_layout.clone(), &amps)?;
            let (f, out) = noiseless_fidelity(&q, &data, &RouterInit::AllWait, &x)?;
            worst = worst.max((f - 1.0).abs());
            restored &= out.data_part_if_product().is_some_and(|(_, w)| w.iter().all(|&d| d == WAIT));
        }
    }
    Ok((worst <= 1e-12 && restored, format!("max |F - 1| = {worst:.1e}, routers restored = {restored}")))
}

/// One Pauli location per router with three strings, active at `steps`.
fn sparse_pauli_model(tree: &bbqram::topology::TreeTopology, layout: &bbqram::sparse_state::RegisterLayout, p: f64, steps: &[usize]) -> Result<NoiseModel> {
    let decls: Vec<NoiseDecl> = tree
        .routers()
        .map(|r| {
            let terms = if layout.router_sites(r).len() == 4 {
                vec![("XIII".to_string(), 0.5), ("IZII".to_string(), 0.25), ("IIYZ".to_string(), 0.25)]
            } else {
                vec![("XI".to_string(), 0.5), ("IZ".to_string(), 0.25), ("YX".to_string(), 0.25)]
            };
            NoiseDecl::ClusterPauli { support: vec![r], p, terms, steps: Some(steps.to_vec()) }
        })
        .collect();
    NoiseModel::from_decls(tree, layout, &decls)
}

fn criterion2() -> Outcome {
    let cases = [(1, RouterModel::TwoLevel, vec![1, 3, 5, 7]), (2, RouterModel::TwoLevel, vec![4, 8, 12]), (1, RouterModel::ThreeLevel, vec![1, 3, 5, 7])];
    let mut ok = true;
    let mut worst_sigma = 0.0f64;
    let mut worst_oracle = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for (n, model_kind, steps) in cases {
        let tree = build_tree(n, model_kind)?;
        let x = memory(n, &mut rng);
        let q = build_query_circuit(&tree, &x, ScheduleKind::Serial)?;
        let init = if model_kind == RouterModel::ThreeLevel { RouterInit::AllWait } else { RouterInit::AllZero };
        let data = plus_bus_input(Arc::new(q.layout().data_layout()), &random_superposition(n, &mut rng))?;
        for p in [0.01, 0.05] {
            let model = sparse_pauli_model(&tree, q.layout(), p, &steps)?;
            let chi = exhaustive_chi_fidelity(&q, &model, &data, &init)?;
            let dens = density_fidelity(&q, Some(&model), &data, &init)?;
            let input = query_input(&q, &data, &init)?;
            let target = ideal_oracle_output(&data, &x)?;
            let mc = estimate_parallel(100_000, 20 + n as u64, |_, r| trajectory_fidelity(&q, &model, &input, &target, r))?;
            let sigma = mc.stderr.max(1e-300);
            let z = ((mc.mean - chi).abs() / sigma).max((mc.mean - dens).abs() / sigma);
            worst_sigma = worst_sigma.max(z);
            worst_oracle = worst_oracle.max((chi - dens).abs());
            ok &= z <= 3.0 && (chi - dens).abs() <= 1e-10 && chi < 1.0;
        }
    }
    Ok((ok, format!("max MC deviation = {worst_sigma:.2} sigma, max |chi - density| = {worst_oracle:.1e}")))
}

fn base_config(variant: RouterModel, init: InitMode, noise: NoiseDecl) -> ExperimentConfig {
    ExperimentConfig {
        variant,
        init,
        n_min: 1,
        n_max: 4,
        schedule: ScheduleKind::Serial,
        address: AddressState::Uniform,
        noise: vec![noise],
        eps: vec![],
        twirl: TwirlMode::None,
        doubling: false,
        trials: 2000,
        seed: 3,
        init_samples: 1,
        router_digits: None,
        out: None,
    }
}

fn criterion3() -> Outcome {
    let mut cfg = base_config(RouterModel::ThreeLevel, InitMode::AllWait, NoiseDecl::Depolarizing { p: 0.0, routers: None, steps: None });
    cfg.eps = vec![1e-3, 3e-3, 1e-2];
    let r = run_sweep(&cfg)?;
    let worst = r.rows.iter().map(|row| row.infidelity() / row.bound_value).fold(0.0, f64::max);
    let named = r.rows.iter().all(|row| row.bound.name() == "theorem1");
    Ok((r.all_satisfied() && named && r.rows.len() == 12, format!("{} rows, max (1 - F) / bound = {worst:.3}", r.rows.len())))
}

fn criterion4() -> Outcome {
    let eps = 3e-3;
    let noise = NoiseDecl::Depolarizing { p: eps, routers: None, steps: None };
    let mut cfg = base_config(RouterModel::TwoLevel, InitMode::RandomBasis, noise);
    cfg.n_max = 3;
    cfg.doubling = true;
    cfg.init_samples = 20;
    cfg.trials = 400;
    let basis = run_sweep(&cfg)?;
    let mut ok = basis.all_satisfied() && basis.rows.iter().all(|r| r.bound.name() == "theorem3");
    let mut worst = basis.rows.iter().map(|r| r.infidelity() / r.bound_value).fold(0.0, f64::max);
    let mut phase_rows = 0;
    let mut max_dev = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for n in 1..=3 {
        let tree = build_tree(n, RouterModel::TwoLevel)?;
        let x = memory(n, &mut rng);
        let q = build_doubled_circuit(&tree, &x, ScheduleKind::Serial)?;
        let layout = q.layout().clone();
        let model = NoiseModel::depolarizing(&tree, &layout, eps)?;
        let data = address_state(&AddressState::Uniform, &layout, &mut rng)?;
        let target = ideal_oracle_output(&data, &x)?;
        let k = layout.len() - layout.data_len();
        let p_w: Vec<(Vec<u8>, f64)> = (0..4)
            .map(|j| ((0..k).map(|s| ((j * 7 + s * 3 + n) % 5 % 2) as u8).collect(), [0.4, 0.3, 0.2, 0.1][j]))
            .collect();
        let tau = q.tau();
        let bound = bound_theorem3(model.bound_epsilon(&tree)?, tau, n);
        for _ in 0..10 {
            let routers: Vec<(Vec<u8>, C64)> = p_w
                .iter()
                .map(|(w, p)| (w.clone(), C64::from_polar(p.sqrt(), rng.random::<f64>() * std::f64::consts::TAU)))
                .collect();
            let input = SparseState::product(layout.clone(), &data, &routers)?;
            let est = estimate_parallel(400, rng.random(), |_, r| trajectory_fidelity(&q, &model, &input, &target, r))?;
            ok &= 1.0 - est.mean <= bound + 3.0 * est.stderr;
            worst = worst.max((1.0 - est.mean) / bound);
            phase_rows += 1;
        }
        if n <= 2 {
            let sparse = sparse_pauli_model(&tree, &layout, 0.05, &[9])?;
            let r = phase_invariance_check(&q, Some(&sparse), &data, &p_w, 4, 5 + n as u64)?;
            max_dev = max_dev.max(r.max_deviation);
            ok &= r.fidelities[0] < 1.0;
        }
    }
    ok &= max_dev < 1e-10;
    Ok((
        ok,
        format!("{} basis + {phase_rows} phase inits, max (1 - F) / bound = {worst:.3}, phase deviation = {max_dev:.1e}", basis.rows.len()),
    ))
}

fn fit_line(name: &str, rows: &[SweepRow]) -> Result<(bbqram::harness::ExponentFit, String)> {
    let fit = fit_scaling_exponent(rows, 2000, 9)?;
    Ok((fit, format!("{name} {:.2} [{:.2}, {:.2}]", fit.exponent, fit.ci_low, fit.ci_high)))
}

fn criterion5() -> Outcome {
    let kappa = 1e-3f64.sqrt().asin();
    let s = ghz_coherent_experiment(2, 5, kappa, 20_000, 5)?;
    let (coh, a) = fit_line("coherent", &s.coherent.rows)?;
    let (sto, b) = fit_line("stochastic", &s.stochastic.rows)?;
    let separated = coh.exponent - sto.exponent >= 1.0 && coh.ci_low > sto.ci_high;
    let within = s
        .coherent
        .rows
        .iter()
        .chain(&s.stochastic.rows)
        .all(|r| r.infidelity() <= bound_theorem4(r.eps, r.tau, r.n, DEFAULT_A) + 3.0 * r.stderr);
    let series = |rows: &[SweepRow]| rows.iter().map(|r| format!("{:.2e}", r.infidelity())).collect::<Vec<_>>().join(" ");
    Ok((
        separated && within,
        format!(
            "exponents {a} vs {b}; 1 - F coherent [{}], stochastic [{}]; theorem-4 bound held = {within}",
            series(&s.coherent.rows),
            series(&s.stochastic.rows)
        ),
    ))
}

fn criterion6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let group = TwirlGroup::pauli(1);
    let mut off = 0.0f64;
    let mut idem = 0.0f64;
    for _ in 0..100 {
        let ch = random_channel(2, 1 + rng.random_range(0..4), &mut rng);
        let t = twirl_channel(&ch, &group)?;
        off = off.max(max_off_diagonal(&chi_matrix(&t)?));
        let tt = twirl_channel(&t, &group)?;
        let s1 = superoperator(&t.kraus().iter().map(to_d).collect::<Vec<_>>());
        let s2 = superoperator(&tt.kraus().iter().map(to_d).collect::<Vec<_>>());
        idem = idem.max((s1 - s2).iter().map(|z| z.norm()).fold(0.0, f64::max));
    }
    let channel_ok = off < 1e-10 && idem < 1e-10;

    let kappa = 1e-3f64.sqrt().asin();
    let mut cfg = base_config(RouterModel::TwoLevel, InitMode::AllZero, NoiseDecl::Coherent { kappa, routers: None, steps: None });
    cfg.n_min = 2;
    cfg.n_max = 4;
    cfg.address = AddressState::Ghz;
    cfg.doubling = true;
    cfg.trials = 1000;
    cfg.twirl = TwirlMode::InSitu;
    let insitu = run_sweep(&cfg)?;
    cfg.twirl = TwirlMode::EdgeClassical;
    let edge = run_sweep(&cfg)?;
    let ratio = |r: &[SweepRow]| r.iter().map(|row| row.infidelity() / row.bound_value).fold(0.0, f64::max);
    let ok = channel_ok
        && insitu.all_satisfied()
        && edge.all_satisfied()
        && insitu.rows.iter().all(|r| r.bound.name() == "theorem5-in-situ")
        && edge.rows.iter().all(|r| r.bound.name() == "theorem5-classical");
    Ok((
        ok,
        format!(
            "chi off-diagonal {off:.1e}, idempotence {idem:.1e}; in-situ max (1 - F) / bound = {:.3}, edge = {:.3}",
            ratio(&insitu.rows),
            ratio(&edge.rows)
        ),
    ))
}

fn to_d(m: &bbqram::LocalMatrix64) -> bbqram::noise::CMatrix {
    bbqram::noise::CMatrix::from_fn(m.dim, m.dim, |r, c| m.get(r, c))
}

fn retrieves_every_address(q: &QueryCircuit, init: &RouterInit, memory: &[u8]) -> Result<bool> {
    let data_layout = Arc::new(q.layout().data_layout());
    for i in 0..1 << q.tree().depth() {
        let data = plus_bus_input(data_layout.clone(), &[(i, c(1.0))])?;
        if (noiseless_fidelity(q, &data, init, memory)?.0 - 1.0).abs() > 1e-12 {
            return Ok(false);
        }
    }
    Ok(true)
}

fn criterion7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut failures = 0;
    let mut checked = 0;
    for n in 1..=3 {
        let x = memory(n, &mut rng);
        let two = build_tree(n, RouterModel::TwoLevel)?;
        let three = build_tree(n, RouterModel::ThreeLevel)?;
        let doubled = build_doubled_circuit(&two, &x, ScheduleKind::Pipelined)?;
        let single3 = build_query_circuit(&three, &x, ScheduleKind::Serial)?;
        for _ in 0..100 {
            let d = dress_circuit(&doubled, &sample_twirl_frame(&doubled, rng.random())?)?;
            let e2 = build_edge_twirled_circuit(&doubled, &sample_edge_frame(doubled.layout(), true, rng.random()))?;
            let e3 = build_edge_twirled_circuit(&single3, &sample_edge_frame(single3.layout(), false, rng.random()))?;
            for (q, init) in [(&d, RouterInit::AllZero), (&e2, RouterInit::AllZero), (&e3, RouterInit::AllWait)] {
                checked += 1;
                if !retrieves_every_address(q, &init, &x)? {
                    failures += 1;
                }
            }
        }
    }
    Ok((failures == 0, format!("{checked} twirled circuits, {failures} failures")))
}

fn criterion8() -> Outcome {
    let tree = build_tree(2, RouterModel::ThreeLevel)?;
    let layout = bbqram::sparse_state::RegisterLayout::for_tree(&tree, false);
    let decls = vec![
        NoiseDecl::Depolarizing { p: 1e-3, routers: None, steps: None },
        NoiseDecl::ClusterPauli { support: vec![0, 1], p: 5e-4, terms: vec![("ZIZIII".into(), 1.0)], steps: None },
    ];
    let with = NoiseModel::from_decls(&tree, &layout, &decls)?;
    let without = NoiseModel::from_decls(&tree, &layout, &decls[..1])?;
    let report = with.grain_report(&tree)?;
    let cluster = with.locations().iter().position(|l| l.support == BTreeSet::from([0, 1])).expect("cluster present");
    // Levels 1 and 2 contract into the single super-router 0 of the d = 2, u = 2 graining.
    let expected = Assignment { channel: cluster, d: 2, u: 2, super_router: 0 };
    let others_local = report.assignments.iter().filter(|a| a.channel != cluster).all(|a| a.d == 1);
    let ok = report.assignments.contains(&expected)
        && report.assignments.iter().filter(|a| a.channel == cluster).count() == 1
        && others_local
        && report.eps.get(&1) == without.grain_report(&tree)?.eps.get(&1)
        && report.eps.get(&2) == Some(&5e-4);
    Ok((ok, format!("eps by graining = {:?}", report.eps)))
}

fn criterion9() -> Outcome {
    let x: Vec<u8> = vec![0, 1, 1, 0, 1, 1, 0, 0];
    let same = memory_reshuffle(&x, &[Pauli::I, Pauli::Z, Pauli::Z])? == x;
    let half = memory_reshuffle(&x, &[Pauli::X, Pauli::I, Pauli::I])? == [1, 1, 0, 0, 0, 1, 1, 0];
    let labels = [Pauli::Y, Pauli::X, Pauli::Z];
    let back = memory_reshuffle(&memory_reshuffle(&x, &labels)?, &labels)? == x;
    Ok((same && half && back, format!("identity = {same}, half swap = {half}, involution = {back}")))
}

fn main() {
    let criteria: [(u32, &str, fn() -> Outcome); 9] = [
        (1, "noiseless correctness", criterion1),
        (2, "oracle agreement", criterion2),
        (3, "three-level depolarizing bound", criterion3),
        (4, "arbitrary initialization bound", criterion4),
        (5, "coherent noise separation", criterion5),
        (6, "twirling efficacy", criterion6),
        (7, "twirled logical correctness", criterion7),
        (8, "graining accounting", criterion8),
        (9, "memory reshuffle", criterion9),
    ];
    let only: BTreeMap<u32, ()> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).map(|k| (k, ())).collect();
    let mut failed = 0;
    for (k, name, run) in criteria {
        if !only.is_empty() && !only.contains_key(&k) {
            continue;
        }
        let start = Instant::now();
        let (pass, detail) = match run() {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        if !pass {
            failed += 1;
        }
        let verdict = if pass { "PASS" } else { "FAIL" };
        println!("criterion {k} [{name}]: {verdict} ({detail}; {:.1}s)", start.elapsed().as_secs_f64());
    }
    println!("acceptance: {} of {} criteria failed", failed, if only.is_empty() { 9 } else { only.len() });
}
