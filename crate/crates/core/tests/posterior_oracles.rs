mod common;

use fr_design::model::{sample_observation, MechanisticType, ModelSpec, Observation, Params};
use fr_design::sequential::{Session, SessionConfig};
use fr_design::smc::{
    move_step, posterior_model_probs, DesignState, MoveConfig, ParticleSet, ProposalKernel,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn simulate(id: u8, a: f64, th: f64, designs: &[u32], seed: u64) -> Vec<(u32, u32)> {
    let m = ModelSpec::<f64>::standard(id, 1.0).unwrap();
    let theta = Params::from_natural(a, th, None).unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    designs
        .iter()
        .map(|&d| {
            (
                d,
                sample_observation(&m, &theta, d, 24.0, &mut r).unwrap().n,
            )
        })
        .collect()
}

fn absorb(ids: &[u8], j: usize, data: &[(u32, u32)], seed: u64) -> DesignState<f64> {
    let mut state = DesignState::new(
        ModelSpec::standard_subset(ids).unwrap(),
        j,
        MoveConfig::default(),
        seed,
    )
    .unwrap();
    for &(d, n) in data {
        state.update(Observation::new(d, n, 24.0).unwrap()).unwrap();
    }
    state
}

#[test]
fn evidence_after_five_observations() {
    let data = simulate(3, 0.5, 0.7, &[15, 45, 90, 180, 270], 21);
    let grid = common::grid_posterior(MechanisticType::TypeII, &data, 24.0, 250);
    let state = absorb(&[3], 5000, &data, 21);
    let got = state.sets[0].log_evidence;
    assert!(
        (got - grid.log_evidence).abs() < 0.1,
        "{got} vs {}",
        grid.log_evidence
    );
}

#[test]
fn extra_moves_leave_the_posterior_in_place() {
    let data = simulate(3, 0.5, 0.7, &[30, 120, 250], 8);
    let grid = common::grid_posterior(MechanisticType::TypeII, &data, 24.0, 250);
    let state = absorb(&[3], 2000, &data, 8);
    let mut set: ParticleSet<f64> = state.sets[0].clone();
    let mut r = ChaCha8Rng::seed_from_u64(8);
    set.resample(&mut r);
    let (_, cov) = set.weighted_moments();
    let kernel = ProposalKernel::from_covariance(&cov, 1.0);
    let cfg = MoveConfig {
        max_iterations: 1,
        ..MoveConfig::default()
    };
    for pass in 0..50u64 {
        move_step(&mut set, &state.history, &cfg, &kernel, 8, &[9_000, pass]);
    }
    let (mean, _) = set.weighted_moments();
    for k in 0..2 {
        // Particles are correlated after MCMC; allow a generous multiple of
        // the i.i.d. standard error.
        let se = grid.sd[k] / (set.len() as f64).sqrt();
        assert!(
            (mean[k] - grid.mean[k]).abs() < 6.0 * se,
            "coordinate {k}: {} vs {}",
            mean[k],
            grid.mean[k]
        );
    }
}

#[test]
fn binomial_model_probabilities_match_quadrature() {
    let designs = [10, 40, 80, 160, 300];
    let data = simulate(4, 0.8, 0.3, &designs, 31);
    let state = absorb(&[3, 4], 3000, &data, 31);
    let g2 = common::grid_posterior(MechanisticType::TypeII, &data, 24.0, 250);
    let g3 = common::grid_posterior(MechanisticType::TypeIII, &data, 24.0, 250);
    let want = posterior_model_probs(&[g2.log_evidence, g3.log_evidence], &[0.5, 0.5]);
    let got = state.model_probs();
    for (g, w) in got.iter().zip(&want) {
        assert!((g - w).abs() < 0.03, "{got:?} vs {want:?}");
    }
}

#[test]
fn session_matches_a_fresh_state_fed_the_same_counts() {
    let cfg = SessionConfig {
        particles: 400,
        experiments: 3,
        seed: 12,
        ..SessionConfig::default()
    };
    let truth = Params::from_natural(0.5, 0.7, Some(0.3)).unwrap();
    let session = fr_design::sequential::run_simulation::<f64>(cfg.clone(), 1, &truth).unwrap();
    let data: Vec<(u32, u32)> = session.records().iter().map(|r| (r.d, r.n)).collect();
    let fresh = absorb(&[1, 2, 3, 4], 400, &data, 12);
    assert_eq!(fresh.model_probs(), session.model_probs());
    let replayed = Session::<f64>::replay(cfg, &data).unwrap();
    assert_eq!(replayed.model_probs(), session.model_probs());
}
