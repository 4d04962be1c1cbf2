use mie_core::dgp::{
    generate_unconfounded, oracle_mie_unconfounded, PropensityLink, PropensitySpec, Sampler, TauSpec, UnconfoundedDgp,
};
use mie_core::inference::{bootstrap, BootstrapPlan};
use mie_core::unconfounded::{estimate_mie_ri, UnconfoundedOptions};
use mie_core::InterventionFamily;

fn dgp() -> UnconfoundedDgp {
    UnconfoundedDgp {
        covariates: vec![Sampler::Uniform { low: -1.0, high: 1.0 }, Sampler::Uniform { low: -1.0, high: 1.0 }],
        propensity: PropensitySpec { link: PropensityLink::Logit, coefficients: vec![0.0, 1.0, -0.5] },
        tau: TauSpec::Linear { coefficients: vec![1.0, 1.5, 0.5] },
        mu0: vec![0.0, 1.0, 1.0],
        noise_sd: 1.0,
    }
}

fn ri(data: &mie_core::Dataset) -> mie_core::Result<f64> {
    Ok(estimate_mie_ri(data, &InterventionFamily::ipsi(), &UnconfoundedOptions::default())?.point)
}

#[test]
fn replicates_do_not_depend_on_thread_count() {
    let data = generate_unconfounded(&dgp(), 800, 3).unwrap();
    let plan = BootstrapPlan::new(200, 11);
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(|| bootstrap(ri, &data, &plan).unwrap())
    };
    assert_eq!(run(1), run(6));
}

#[test]
fn percentile_intervals_cover_the_oracle() {
    let truth = oracle_mie_unconfounded(&dgp(), &InterventionFamily::ipsi()).unwrap().value;
    let mut covered = 0;
    for trial in 0..100u64 {
        let data = generate_unconfounded(&dgp(), 2000, 1000 + trial).unwrap();
        let out = bootstrap(ri, &data, &BootstrapPlan::new(200, trial)).unwrap();
        let s = &out.components[0];
        if s.ci_lower <= truth && truth <= s.ci_upper {
            covered += 1;
        }
    }
    assert!(covered >= 88, "covered {covered} of 100");
}
