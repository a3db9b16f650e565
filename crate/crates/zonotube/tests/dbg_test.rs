#[test]
fn dbg_lambda_spread() {
    use zonotube::simbench::*;
    use zonotube::tubegain::*;
    use zonotube::setops::VertexCap;
    use nalgebra::DVector;
    for seed in 1..=12u64 {
        let cfg = ScenarioConfig { seed, steps: 1, ..ScenarioConfig::rosbot_default() };
        let setup = prepare_scenario(&cfg).unwrap();
        let pdw = build_pdw(&setup.sets.mdw, &VertexCap::default()).unwrap();
        let nd = pdw.reduced_dim();
        let ctx = TubeGainContext::new(setup.x_set.h_mat(), &setup.batch, &setup.sets.mdw, pdw, &setup.zw).unwrap();
        let tube = TubeState::initial(&setup.x_set).unwrap();
        let z = ctx.facet_z(&cfg.x0_vec(), &DVector::zeros(4)).unwrap();
        let out = ctx.solve_with_z(&tube, &z, &TubeGainOptions::default()).unwrap();
        let mmax = ctx.coord_max().max();
        match out {
            TubeGainOutcome::Optimal(s) => eprintln!(
                "seed {seed}: lam={:.4} rho={:.4} mmax={:.4} z0={:.4} nd={nd}",
                s.lambda, s.gain.rho, mmax, z[0]
            ),
            TubeGainOutcome::Infeasible { .. } => eprintln!("seed {seed}: INFEASIBLE mmax={mmax:.4} nd={nd}"),
        }
    }
}
