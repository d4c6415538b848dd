mod support;

use proto_ope::sepsis::{
    exact_transition_tensor, initial_distribution, initial_state, step, PatientState,
    TreatmentAction, N_ACTIONS, N_STATES,
};
use rand::Rng;
use support::{chi_square_p_value, rng};

#[test]
fn sampled_transitions_match_the_exact_tensor() {
    let mdp = exact_transition_tensor();
    let mut pick = rng(2024);
    let mut sampler = rng(7);
    let mut tested = 0;
    while tested < 50 {
        let s = pick.gen_range(0..N_STATES);
        if mdp.is_terminal(s) {
            continue;
        }
        let a = pick.gen_range(0..N_ACTIONS);
        let state = PatientState::from_index(s).unwrap();
        let action = TreatmentAction::from_index(a).unwrap();
        let mut counts = vec![0u64; N_STATES];
        for _ in 0..100_000 {
            counts[step(&state, action, &mut sampler).unwrap().0.index()] += 1;
        }
        let probs: Vec<f64> = (0..N_STATES).map(|next| mdp.prob(s, a, next)).collect();
        for next in 0..N_STATES {
            assert!(
                probs[next] > 0.0 || counts[next] == 0,
                "({s}, {a}) reached impossible state {next}"
            );
        }
        let p = chi_square_p_value(&counts, &probs);
        assert!(p >= 0.001, "({s}, {a}): chi-square p = {p}");
        tested += 1;
    }
}

#[test]
fn diabetic_fraction_is_one_fifth() {
    let mut r = rng(11);
    let n = 100_000;
    let diabetic = (0..n).filter(|_| initial_state(&mut r).diabetic).count();
    let frac = diabetic as f64 / n as f64;
    assert!((frac - 0.2).abs() <= 0.01, "{frac}");
    let exact: f64 = initial_distribution()
        .iter()
        .enumerate()
        .filter(|&(s, _)| PatientState::from_index(s).unwrap().diabetic)
        .map(|(_, p)| p)
        .sum();
    assert!((exact - 0.2).abs() < 1e-12);
}

#[test]
fn sampled_initial_states_match_the_exact_distribution() {
    let mut r = rng(5);
    let mut counts = vec![0u64; N_STATES];
    for _ in 0..100_000 {
        counts[initial_state(&mut r).index()] += 1;
    }
    assert!(chi_square_p_value(&counts, &initial_distribution()) >= 0.001);
}
