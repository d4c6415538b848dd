//! Synthetic sepsis environment with an exactly enumerable transition model.
//!
//! A patient is described by a diabetes flag, four ordinal vitals and the
//! treatments given at the previous step. Eight actions combine antibiotics,
//! vasopressors and mechanical ventilation. Reaching all-normal vitals under
//! no treatment discharges the patient (+1); three or more abnormal vitals is
//! death (-1).
//!
//! Per-step dynamics are a fixed sequence of random stages (antibiotics,
//! ventilation, vasopressors, then spontaneous fluctuation). Sampling draws one
//! outcome per stage; the exact tensor propagates the same stage outcomes, so
//! the two can never drift apart.

use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::mdp::{sample_index, StochasticPolicy, TabularMdp};
use crate::trajectory::{Termination, Trajectory, TrajectoryDataset};

pub const N_STATES: usize = 1440;
pub const N_ACTIONS: usize = 8;
pub const N_FEATURES: usize = 8;

pub const P_DIABETIC: f64 = 0.2;

/// Level counts and the index of the normal level for each vital.
pub const HEART_RATE_LEVELS: u8 = 3;
pub const SYS_BP_LEVELS: u8 = 3;
pub const OXYGEN_LEVELS: u8 = 2;
pub const GLUCOSE_LEVELS: u8 = 5;
pub const HEART_RATE_NORMAL: u8 = 1;
pub const SYS_BP_NORMAL: u8 = 1;
pub const OXYGEN_NORMAL: u8 = 1;
pub const GLUCOSE_NORMAL: u8 = 2;

const LOW: u8 = 0;
const HIGH3: u8 = 2;

/// Ordinal vital levels.
///
/// * heart rate and systolic BP: 0 = low, 1 = normal, 2 = high
/// * oxygen: 0 = low, 1 = normal
/// * glucose: 0 = very low, 1 = low, 2 = normal, 3 = high, 4 = very high
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Vitals {
    pub heart_rate: u8,
    pub sys_bp: u8,
    pub oxygen: u8,
    pub glucose: u8,
}

impl Vitals {
    pub const NORMAL: Vitals = Vitals {
        heart_rate: HEART_RATE_NORMAL,
        sys_bp: SYS_BP_NORMAL,
        oxygen: OXYGEN_NORMAL,
        glucose: GLUCOSE_NORMAL,
    };

    /// Number of vitals away from their normal level.
    pub fn abnormal_count(&self) -> usize {
        [
            self.heart_rate != HEART_RATE_NORMAL,
            self.sys_bp != SYS_BP_NORMAL,
            self.oxygen != OXYGEN_NORMAL,
            self.glucose != GLUCOSE_NORMAL,
        ]
        .iter()
        .filter(|&&b| b)
        .count()
    }

    fn get(&self, vital: Vital) -> u8 {
        match vital {
            Vital::HeartRate => self.heart_rate,
            Vital::SysBp => self.sys_bp,
            Vital::Oxygen => self.oxygen,
            Vital::Glucose => self.glucose,
        }
    }

    fn with(mut self, vital: Vital, level: u8) -> Vitals {
        match vital {
            Vital::HeartRate => self.heart_rate = level,
            Vital::SysBp => self.sys_bp = level,
            Vital::Oxygen => self.oxygen = level,
            Vital::Glucose => self.glucose = level,
        }
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Vital {
    HeartRate,
    SysBp,
    Oxygen,
    Glucose,
}

impl Vital {
    fn levels(self) -> u8 {
        match self {
            Vital::HeartRate => HEART_RATE_LEVELS,
            Vital::SysBp => SYS_BP_LEVELS,
            Vital::Oxygen => OXYGEN_LEVELS,
            Vital::Glucose => GLUCOSE_LEVELS,
        }
    }

    fn shifted(self, level: u8, delta: i8) -> u8 {
        (level as i8 + delta).clamp(0, self.levels() as i8 - 1) as u8
    }
}

/// Three binary treatments; `index = abx + 2 * vaso + 4 * vent`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct TreatmentAction {
    pub abx: bool,
    pub vaso: bool,
    pub vent: bool,
}

impl TreatmentAction {
    pub const NONE: TreatmentAction = TreatmentAction {
        abx: false,
        vaso: false,
        vent: false,
    };

    pub fn index(self) -> usize {
        self.abx as usize + 2 * self.vaso as usize + 4 * self.vent as usize
    }

    pub fn from_index(index: usize) -> Result<Self> {
        if index >= N_ACTIONS {
            return Err(Error::InvalidArgument(format!(
                "action index {index} out of range"
            )));
        }
        Ok(TreatmentAction {
            abx: index & 1 != 0,
            vaso: index & 2 != 0,
            vent: index & 4 != 0,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PatientState {
    pub diabetic: bool,
    pub vitals: Vitals,
    /// Treatments given at the previous step.
    pub prev: TreatmentAction,
}

impl PatientState {
    pub fn index(&self) -> usize {
        let v = &self.vitals;
        let mut idx = self.diabetic as usize;
        idx = idx * HEART_RATE_LEVELS as usize + v.heart_rate as usize;
        idx = idx * SYS_BP_LEVELS as usize + v.sys_bp as usize;
        idx = idx * OXYGEN_LEVELS as usize + v.oxygen as usize;
        idx = idx * GLUCOSE_LEVELS as usize + v.glucose as usize;
        idx * N_ACTIONS + self.prev.index()
    }

    pub fn from_index(index: usize) -> Result<Self> {
        if index >= N_STATES {
            return Err(Error::InvalidArgument(format!(
                "state index {index} out of range"
            )));
        }
        let prev = TreatmentAction::from_index(index % N_ACTIONS)?;
        let mut rest = index / N_ACTIONS;
        let glucose = (rest % GLUCOSE_LEVELS as usize) as u8;
        rest /= GLUCOSE_LEVELS as usize;
        let oxygen = (rest % OXYGEN_LEVELS as usize) as u8;
        rest /= OXYGEN_LEVELS as usize;
        let sys_bp = (rest % SYS_BP_LEVELS as usize) as u8;
        rest /= SYS_BP_LEVELS as usize;
        let heart_rate = (rest % HEART_RATE_LEVELS as usize) as u8;
        let diabetic = rest / HEART_RATE_LEVELS as usize == 1;
        Ok(PatientState {
            diabetic,
            vitals: Vitals {
                heart_rate,
                sys_bp,
                oxygen,
                glucose,
            },
            prev,
        })
    }

    pub fn is_dead(&self) -> bool {
        self.vitals.abnormal_count() >= 3
    }

    /// All vitals normal and untreated at the last step.
    pub fn is_discharged(&self) -> bool {
        self.vitals.abnormal_count() == 0 && self.prev == TreatmentAction::NONE
    }

    pub fn is_terminal(&self) -> bool {
        self.is_dead() || self.is_discharged()
    }

    /// Reward collected on entering this state.
    pub fn entry_reward(&self) -> f64 {
        if self.is_dead() {
            -1.0
        } else if self.is_discharged() {
            1.0
        } else {
            0.0
        }
    }

    /// Ordinal feature vector: diabetic, heart rate, BP, oxygen, glucose,
    /// previous antibiotics, vasopressors, ventilation.
    pub fn features(&self) -> [f64; N_FEATURES] {
        let v = &self.vitals;
        [
            self.diabetic as u8 as f64,
            v.heart_rate as f64,
            v.sys_bp as f64,
            v.oxygen as f64,
            v.glucose as f64,
            self.prev.abx as u8 as f64,
            self.prev.vaso as u8 as f64,
            self.prev.vent as u8 as f64,
        ]
    }
}

/// Feature rows for every state index.
pub fn feature_table() -> Vec<Vec<f64>> {
    (0..N_STATES)
        .map(|i| {
            PatientState::from_index(i)
                .expect("in range")
                .features()
                .to_vec()
        })
        .collect()
}

// ── Dynamics ────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy)]
enum Stage {
    /// `from` becomes `to` with probability `prob`.
    Jump {
        vital: Vital,
        from: u8,
        to: u8,
        prob: f64,
    },
    /// Shift by `delta` (clamped) with probability `prob`.
    Shift { vital: Vital, delta: i8, prob: f64 },
    /// Diabetic vasopressor response: +1 w.p. `up1`, +2 w.p. `up2` (clamped).
    DoubleShift { vital: Vital, up1: f64, up2: f64 },
    /// ±1 with probability `prob / 2` each, clamped at the bounds.
    Fluctuate { vital: Vital, prob: f64 },
}

impl Stage {
    fn outcomes(self, v: Vitals) -> Vec<(Vitals, f64)> {
        match self {
            Stage::Jump {
                vital,
                from,
                to,
                prob,
            } => {
                if v.get(vital) == from {
                    vec![(v.with(vital, to), prob), (v, 1.0 - prob)]
                } else {
                    vec![(v, 1.0)]
                }
            }
            Stage::Shift { vital, delta, prob } => {
                vec![
                    (v.with(vital, vital.shifted(v.get(vital), delta)), prob),
                    (v, 1.0 - prob),
                ]
            }
            Stage::DoubleShift { vital, up1, up2 } => {
                let l = v.get(vital);
                vec![
                    (v.with(vital, vital.shifted(l, 1)), up1),
                    (v.with(vital, vital.shifted(l, 2)), up2),
                    (v, 1.0 - up1 - up2),
                ]
            }
            Stage::Fluctuate { vital, prob } => {
                let l = v.get(vital);
                vec![
                    (v.with(vital, vital.shifted(l, 1)), prob / 2.0),
                    (v.with(vital, vital.shifted(l, -1)), prob / 2.0),
                    (v, 1.0 - prob),
                ]
            }
        }
    }
}

fn stages(state: &PatientState, action: TreatmentAction) -> Vec<Stage> {
    use Vital::*;
    let prev = state.prev;
    let mut out = Vec::new();
    let mut targeted = Vec::new();

    if action.abx {
        out.push(Stage::Jump {
            vital: HeartRate,
            from: HIGH3,
            to: HEART_RATE_NORMAL,
            prob: 0.5,
        });
        out.push(Stage::Jump {
            vital: SysBp,
            from: HIGH3,
            to: SYS_BP_NORMAL,
            prob: 0.5,
        });
        targeted.extend([HeartRate, SysBp]);
    } else if prev.abx {
        out.push(Stage::Jump {
            vital: HeartRate,
            from: HEART_RATE_NORMAL,
            to: HIGH3,
            prob: 0.1,
        });
        out.push(Stage::Jump {
            vital: SysBp,
            from: SYS_BP_NORMAL,
            to: HIGH3,
            prob: 0.1,
        });
    }

    if action.vent {
        out.push(Stage::Jump {
            vital: Oxygen,
            from: LOW,
            to: OXYGEN_NORMAL,
            prob: 0.7,
        });
        targeted.push(Oxygen);
    } else if prev.vent {
        out.push(Stage::Jump {
            vital: Oxygen,
            from: OXYGEN_NORMAL,
            to: LOW,
            prob: 0.1,
        });
    }

    if action.vaso {
        if state.diabetic {
            out.push(Stage::DoubleShift {
                vital: SysBp,
                up1: 0.5,
                up2: 0.4,
            });
            out.push(Stage::Shift {
                vital: Glucose,
                delta: 1,
                prob: 0.5,
            });
            targeted.extend([SysBp, Glucose]);
        } else {
            out.push(Stage::Shift {
                vital: SysBp,
                delta: 1,
                prob: 0.7,
            });
            targeted.push(SysBp);
        }
    } else if prev.vaso {
        let prob = if state.diabetic { 0.05 } else { 0.1 };
        out.push(Stage::Shift {
            vital: SysBp,
            delta: -1,
            prob,
        });
    }

    for vital in [HeartRate, SysBp, Oxygen, Glucose] {
        if targeted.contains(&vital) {
            continue;
        }
        let prob = if vital == Glucose && state.diabetic {
            0.3
        } else {
            0.1
        };
        out.push(Stage::Fluctuate { vital, prob });
    }
    out
}

/// Exact next-state distribution for a nonterminal state.
pub fn transition_distribution(
    state: &PatientState,
    action: TreatmentAction,
) -> Vec<(PatientState, f64)> {
    let mut dist: BTreeMap<Vitals, f64> = BTreeMap::from([(state.vitals, 1.0)]);
    for stage in stages(state, action) {
        let mut next = BTreeMap::new();
        for (v, p) in dist {
            for (w, q) in stage.outcomes(v) {
                if q > 0.0 {
                    *next.entry(w).or_insert(0.0) += p * q;
                }
            }
        }
        dist = next;
    }
    dist.into_iter()
        .map(|(vitals, p)| {
            (
                PatientState {
                    diabetic: state.diabetic,
                    vitals,
                    prev: action,
                },
                p,
            )
        })
        .collect()
}

/// One simulator step: `(next_state, reward, done)`.
pub fn step<R: Rng + ?Sized>(
    state: &PatientState,
    action: TreatmentAction,
    rng: &mut R,
) -> Result<(PatientState, f64, bool)> {
    if state.is_terminal() {
        return Err(Error::TerminalState(state.index()));
    }
    let mut vitals = state.vitals;
    for stage in stages(state, action) {
        let outcomes = stage.outcomes(vitals);
        vitals = outcomes[sample_index(outcomes.iter().map(|o| o.1), rng)].0;
    }
    let next = PatientState {
        diabetic: state.diabetic,
        vitals,
        prev: action,
    };
    Ok((next, next.entry_reward(), next.is_terminal()))
}

// ── Initial states ──────────────────────────────────────────────────────

fn glucose_initial(diabetic: bool) -> [f64; GLUCOSE_LEVELS as usize] {
    if diabetic {
        [0.1, 0.2, 0.4, 0.2, 0.1]
    } else {
        [0.0, 0.15, 0.7, 0.15, 0.0]
    }
}

const OXYGEN_INITIAL: [f64; 2] = [0.2, 0.8];

/// Accepted initial vitals: at least one and at most two abnormal.
fn acceptable_initial(v: &Vitals) -> bool {
    (1..=2).contains(&v.abnormal_count())
}

/// Draws a fresh patient: diabetic with probability 0.2, no previous
/// treatment, vitals redrawn until the state is nonterminal.
pub fn initial_state<R: Rng + ?Sized>(rng: &mut R) -> PatientState {
    let diabetic = rng.gen::<f64>() < P_DIABETIC;
    let glucose = glucose_initial(diabetic);
    loop {
        let vitals = Vitals {
            heart_rate: rng.gen_range(0..HEART_RATE_LEVELS),
            sys_bp: rng.gen_range(0..SYS_BP_LEVELS),
            oxygen: sample_index(OXYGEN_INITIAL, rng) as u8,
            glucose: sample_index(glucose, rng) as u8,
        };
        if acceptable_initial(&vitals) {
            return PatientState {
                diabetic,
                vitals,
                prev: TreatmentAction::NONE,
            };
        }
    }
}

/// Exact distribution of [`initial_state`] over state indices.
pub fn initial_distribution() -> Vec<f64> {
    let mut dist = vec![0.0; N_STATES];
    for diabetic in [false, true] {
        let glucose = glucose_initial(diabetic);
        let mut entries = Vec::new();
        for heart_rate in 0..HEART_RATE_LEVELS {
            for sys_bp in 0..SYS_BP_LEVELS {
                for oxygen in 0..OXYGEN_LEVELS {
                    for g in 0..GLUCOSE_LEVELS {
                        let vitals = Vitals {
                            heart_rate,
                            sys_bp,
                            oxygen,
                            glucose: g,
                        };
                        let p = OXYGEN_INITIAL[oxygen as usize] * glucose[g as usize] / 9.0;
                        if p > 0.0 && acceptable_initial(&vitals) {
                            entries.push((vitals, p));
                        }
                    }
                }
            }
        }
        let total: f64 = entries.iter().map(|e| e.1).sum();
        let weight = if diabetic {
            P_DIABETIC
        } else {
            1.0 - P_DIABETIC
        };
        for (vitals, p) in entries {
            let s = PatientState {
                diabetic,
                vitals,
                prev: TreatmentAction::NONE,
            };
            dist[s.index()] += weight * p / total;
        }
    }
    dist
}

/// The simulator as a 1440-state tabular MDP.
pub fn exact_transition_tensor() -> TabularMdp {
    let mut rows = Vec::with_capacity(N_STATES * N_ACTIONS);
    let mut reward = Vec::with_capacity(N_STATES);
    let mut terminal = Vec::with_capacity(N_STATES);
    for s in 0..N_STATES {
        let state = PatientState::from_index(s).expect("in range");
        reward.push(state.entry_reward());
        terminal.push(state.is_terminal());
        for a in 0..N_ACTIONS {
            if state.is_terminal() {
                rows.push(vec![(s, 1.0)]);
                continue;
            }
            let action = TreatmentAction::from_index(a).expect("in range");
            rows.push(
                transition_distribution(&state, action)
                    .into_iter()
                    .map(|(n, p)| (n.index(), p))
                    .collect(),
            );
        }
    }
    TabularMdp::from_rows(
        N_STATES,
        N_ACTIONS,
        rows,
        reward,
        terminal,
        initial_distribution(),
    )
    .expect("simulator tensor is a valid MDP")
}

fn check_policy(policy: &StochasticPolicy) -> Result<()> {
    if policy.n_states() != N_STATES || policy.n_actions() != N_ACTIONS {
        return Err(Error::InvalidPolicy(format!(
            "simulator policies are {N_STATES}x{N_ACTIONS}, got {}x{}",
            policy.n_states(),
            policy.n_actions()
        )));
    }
    Ok(())
}

/// Runs one episode of at most `max_len` steps.
pub fn run_episode<R: Rng + ?Sized>(
    policy: &StochasticPolicy,
    max_len: usize,
    rng: &mut R,
) -> Result<Trajectory> {
    let mut state = initial_state(rng);
    let mut traj = Trajectory {
        contexts: Vec::new(),
        actions: Vec::new(),
        step_rewards: Vec::new(),
        terminated: Termination::CensoredAtHorizon,
        final_context: None,
    };
    for _ in 0..max_len {
        let s = state.index();
        let a = sample_index(policy.row(s).iter().copied(), rng);
        let (next, reward, done) = step(&state, TreatmentAction::from_index(a)?, rng)?;
        traj.contexts.push(s);
        traj.actions.push(a);
        traj.step_rewards.push(reward);
        state = next;
        if done {
            traj.terminated = Termination::from_terminal_reward(reward);
            break;
        }
    }
    traj.final_context = Some(state.index());
    Ok(traj)
}

/// `n` independent episodes, each censored at `max_len` steps.
pub fn generate_trajectories<R: Rng + ?Sized>(
    policy: &StochasticPolicy,
    n: usize,
    max_len: usize,
    rng: &mut R,
) -> Result<TrajectoryDataset> {
    check_policy(policy)?;
    if n == 0 || max_len == 0 {
        return Err(Error::InvalidArgument(
            "n and max_len must be positive".into(),
        ));
    }
    (0..n)
        .map(|_| run_episode(policy, max_len, rng))
        .collect::<Result<Vec<_>>>()
        .map(TrajectoryDataset::new)
}

/// Episodes are generated until the dataset holds at least `pairs`
/// (context, action) pairs.
pub fn generate_pair_budget<R: Rng + ?Sized>(
    policy: &StochasticPolicy,
    pairs: usize,
    max_len: usize,
    rng: &mut R,
) -> Result<TrajectoryDataset> {
    check_policy(policy)?;
    if pairs == 0 || max_len == 0 {
        return Err(Error::InvalidArgument(
            "pair budget and max_len must be positive".into(),
        ));
    }
    let mut out = Vec::new();
    let mut total = 0;
    while total < pairs {
        let traj = run_episode(policy, max_len, rng)?;
        total += traj.len();
        out.push(traj);
    }
    Ok(TrajectoryDataset::new(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn index_is_a_bijection() {
        for i in 0..N_STATES {
            assert_eq!(PatientState::from_index(i).unwrap().index(), i);
        }
        assert!(PatientState::from_index(N_STATES).is_err());
    }

    #[test]
    fn action_index_layout() {
        let a = TreatmentAction {
            abx: true,
            vaso: false,
            vent: true,
        };
        assert_eq!(a.index(), 5);
        assert_eq!(TreatmentAction::from_index(5).unwrap(), a);
        assert!(TreatmentAction::from_index(8).is_err());
    }

    #[test]
    fn initial_states_are_untreated_and_live() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..2000 {
            let s = initial_state(&mut rng);
            assert_eq!(s.prev, TreatmentAction::NONE);
            assert!(!s.is_terminal());
        }
    }

    #[test]
    fn death_on_three_abnormal() {
        let state = PatientState {
            diabetic: false,
            vitals: Vitals {
                heart_rate: 2,
                sys_bp: 1,
                oxygen: 0,
                glucose: 2,
            },
            prev: TreatmentAction::NONE,
        };
        for (next, p) in transition_distribution(&state, TreatmentAction::NONE) {
            assert!(p > 0.0);
            if next.vitals.abnormal_count() >= 3 {
                assert!(next.is_terminal());
                assert_eq!(next.entry_reward(), -1.0);
            }
        }
        // sampling agrees on reward/done for the sampled outcome
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let (next, r, done) = step(&state, TreatmentAction::NONE, &mut rng).unwrap();
            if next.vitals.abnormal_count() >= 3 {
                assert_eq!((r, done), (-1.0, true));
            }
        }
    }

    #[test]
    fn discharge_requires_no_treatment() {
        let near = PatientState {
            diabetic: false,
            vitals: Vitals {
                heart_rate: 2,
                ..Vitals::NORMAL
            },
            prev: TreatmentAction::NONE,
        };
        let abx = TreatmentAction::from_index(1).unwrap();
        for (next, _) in transition_distribution(&near, abx) {
            if next.vitals.abnormal_count() == 0 {
                assert_eq!(next.entry_reward(), 0.0);
                assert!(!next.is_terminal());
            }
        }
        let mut saw_normal = false;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let (next, r, done) = step(&near, abx, &mut rng).unwrap();
            if next.vitals.abnormal_count() == 0 {
                saw_normal = true;
                assert_eq!((r, done), (0.0, false));
            }
        }
        assert!(saw_normal);

        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut discharged = false;
        for _ in 0..200 {
            let (next, r, done) = step(&near, TreatmentAction::NONE, &mut rng).unwrap();
            if next.vitals.abnormal_count() == 0 {
                discharged = true;
                assert_eq!((r, done), (1.0, true));
            }
        }
        assert!(discharged);
    }

    #[test]
    fn stepping_terminal_is_an_error() {
        let dead = PatientState {
            diabetic: true,
            vitals: Vitals {
                heart_rate: 0,
                sys_bp: 0,
                oxygen: 0,
                glucose: 2,
            },
            prev: TreatmentAction::NONE,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            step(&dead, TreatmentAction::NONE, &mut rng),
            Err(Error::TerminalState(_))
        ));
    }

    #[test]
    fn next_state_records_action() {
        let state = PatientState::from_index(100).unwrap();
        assert!(!state.is_terminal());
        let action = TreatmentAction::from_index(6).unwrap();
        for (next, _) in transition_distribution(&state, action) {
            assert_eq!(next.prev, action);
            assert_eq!(next.diabetic, state.diabetic);
        }
    }

    #[test]
    fn tensor_rows_and_terminals() {
        let mdp = exact_transition_tensor();
        for s in 0..N_STATES {
            for a in 0..N_ACTIONS {
                let total: f64 = mdp.row(s, a).iter().map(|e| e.1).sum();
                assert!((total - 1.0).abs() < 1e-12);
            }
            if mdp.is_terminal(s) {
                assert_eq!(mdp.row(s, 3), &[(s, 1.0)]);
            }
        }
        let init: f64 = mdp.initial_dist().iter().sum();
        assert!((init - 1.0).abs() < 1e-12);
        assert!(mdp
            .initial_dist()
            .iter()
            .enumerate()
            .all(|(s, &p)| p == 0.0 || !mdp.is_terminal(s)));
    }

    #[test]
    fn generation_is_deterministic_and_capped() {
        let policy = StochasticPolicy::uniform(N_STATES, N_ACTIONS);
        let a = generate_trajectories(&policy, 50, 1, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = generate_trajectories(&policy, 50, 1, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|t| t.len() == 1));
        let c = generate_pair_budget(&policy, 300, 10, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
        assert!(c.n_pairs() >= 300 && c.n_pairs() < 310);
        assert!(c.iter().all(|t| t.len() <= 10));
    }
}
