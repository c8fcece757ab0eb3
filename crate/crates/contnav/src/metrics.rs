//! Stream evaluation metrics.
//!
//! A stream run populates a [`SuccessMatrix`]: `sigma[i][j]` is the
//! success rate on task `j` of the policy held after training task
//! `i`, and `sigma_rand[j]` is the success of an untrained network on
//! task `j`. From the matrix and the strategy ledgers come the six
//! reported quantities: final performance (PER), backward transfer
//! (BWT), forward transfer (FWT), memory ratio (MEM), inference
//! latency (INF), and cumulative training time (TRN).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::maze::{Goal, MazeSpec, Observation, SimConfig};
use crate::policy::{self, Actor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuccessMatrix {
    pub n: usize,
    /// `sigma[i][j]`: success on task j after training task i.
    pub sigma: Vec<Vec<f64>>,
    /// Success of an untrained, freshly seeded network per task.
    pub sigma_rand: Vec<f64>,
    pub eval_episodes: usize,
    pub eval_seed: u64,
}

impl SuccessMatrix {
    pub fn new(n: usize, eval_episodes: usize, eval_seed: u64) -> SuccessMatrix {
        SuccessMatrix {
            n,
            sigma: vec![vec![f64::NAN; n]; n],
            sigma_rand: vec![f64::NAN; n],
            eval_episodes,
            eval_seed,
        }
    }
}

fn check_rates<'a>(vals: impl Iterator<Item = &'a f64>, what: &str) -> Result<()> {
    for v in vals {
        if !v.is_finite() || !(0.0..=1.0).contains(v) {
            return Err(Error::validation(format!("incomplete or invalid {what} entry {v}")));
        }
    }
    Ok(())
}

/// Fraction of fixed-seed episodes (seeds `eval_seed + 0..n`) that
/// reach the goal. The factory builds one fresh actor per episode so
/// cached per-episode state never leaks across rollouts.
pub fn evaluate_success<A, F>(factory: F, maze: &MazeSpec, n_episodes: usize, eval_seed: u64) -> f64
where
    A: Actor,
    F: Fn() -> A + Sync,
{
    assert!(n_episodes >= 1);
    let config = SimConfig::for_family(maze.family);
    let wins = exec::map_indexed(n_episodes, |i| {
        let mut actor = factory();
        policy::rollout(maze, &config, &mut actor, eval_seed + i as u64).unwrap_or(false)
    });
    wins.iter().filter(|w| **w).count() as f64 / n_episodes as f64
}

/// Final performance: mean of the last row.
pub fn compute_per(m: &SuccessMatrix) -> Result<f64> {
    check_rates(m.sigma[m.n - 1].iter(), "final row")?;
    Ok(m.sigma[m.n - 1].iter().sum::<f64>() / m.n as f64)
}

/// Backward transfer: mean of (final row − diagonal).
pub fn compute_bwt(m: &SuccessMatrix) -> Result<f64> {
    check_rates(m.sigma[m.n - 1].iter(), "final row")?;
    check_rates((0..m.n).map(|k| &m.sigma[k][k]), "diagonal")?;
    let s: f64 = (0..m.n).map(|k| m.sigma[m.n - 1][k] - m.sigma[k][k]).sum();
    Ok(s / m.n as f64)
}

/// Forward transfer: mean of (diagonal − untrained baseline).
pub fn compute_fwt(m: &SuccessMatrix) -> Result<f64> {
    check_rates((0..m.n).map(|k| &m.sigma[k][k]), "diagonal")?;
    check_rates(m.sigma_rand.iter(), "random baseline")?;
    let s: f64 = (0..m.n).map(|k| m.sigma[k][k] - m.sigma_rand[k]).sum();
    Ok(s / m.n as f64)
}

/// Memory ratio: parameter footprint over the single-model reference.
pub fn compute_mem(param_count: usize, reference_count: usize) -> Result<f64> {
    if reference_count == 0 {
        return Err(Error::validation("memory reference count is zero"));
    }
    Ok(param_count as f64 / reference_count as f64)
}

/// Mean wall-clock milliseconds per decision of the full action path
/// (subgoal replanning amortized by cycling the step index).
pub fn measure_inf<A: Actor>(actor: &mut A, obs: &Observation, goal: &Goal, n_passes: usize) -> f64 {
    assert!(n_passes >= 1);
    let t0 = std::time::Instant::now();
    for i in 0..n_passes {
        let a = actor.act(obs, goal, i);
        std::hint::black_box(a);
    }
    t0.elapsed().as_secs_f64() * 1e3 / n_passes as f64
}

/// Total training cost in minutes.
pub fn record_trn(ledger: &[f64]) -> Result<f64> {
    if ledger.is_empty() {
        return Err(Error::Empty("training-cost ledger"));
    }
    Ok(ledger.iter().sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maze::{builtin_maze, Action, MazeFamily};
    use crate::policy::HGCBCModel;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn matrix(sigma: Vec<Vec<f64>>, rand: Vec<f64>) -> SuccessMatrix {
        let n = sigma.len();
        SuccessMatrix {
            n,
            sigma,
            sigma_rand: rand,
            eval_episodes: 100,
            eval_seed: 0,
        }
    }

    #[test]
    fn per_bwt_fwt_reference_values() {
        let m = matrix(
            vec![
                vec![0.9, 0.0, 0.0, 0.0],
                vec![0.0, 0.8, 0.0, 0.0],
                vec![0.0, 0.0, 0.7, 0.0],
                vec![0.9, 0.8, 0.7, 0.6],
            ],
            vec![0.0; 4],
        );
        assert!((compute_per(&m).unwrap() - 0.75).abs() < 1e-15);
        assert_eq!(compute_bwt(&m).unwrap(), 0.0);
        // rand all zero: FWT = mean of diagonal.
        assert!((compute_fwt(&m).unwrap() - 0.75).abs() < 1e-15);

        let m2 = matrix(vec![vec![0.8, 0.7], vec![0.7, 0.6]], vec![0.1, 0.2]);
        assert!((compute_bwt(&m2).unwrap() - (-0.05)).abs() < 1e-12);
        assert!((compute_fwt(&m2).unwrap() - 0.55).abs() < 1e-12);
    }

    #[test]
    fn formulas_match_independent_transcription_on_random_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..50 {
            let n = rng.gen_range(1..6);
            let sigma: Vec<Vec<f64>> =
                (0..n).map(|_| (0..n).map(|_| rng.gen::<f64>()).collect()).collect();
            let rand: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
            let m = matrix(sigma.clone(), rand.clone());
            // Straight re-transcriptions of the definitions.
            let per_ref = (0..n).map(|k| sigma[n - 1][k]).sum::<f64>() / n as f64;
            let bwt_ref = (0..n).map(|k| sigma[n - 1][k] - sigma[k][k]).sum::<f64>() / n as f64;
            let fwt_ref = (0..n).map(|k| sigma[k][k] - rand[k]).sum::<f64>() / n as f64;
            assert!((compute_per(&m).unwrap() - per_ref).abs() < 1e-12);
            assert!((compute_bwt(&m).unwrap() - bwt_ref).abs() < 1e-12);
            assert!((compute_fwt(&m).unwrap() - fwt_ref).abs() < 1e-12);
        }
    }

    #[test]
    fn incomplete_matrices_are_rejected() {
        let m = SuccessMatrix::new(3, 100, 0);
        assert!(compute_per(&m).is_err());
        assert!(compute_bwt(&m).is_err());
        assert!(compute_fwt(&m).is_err());
    }

    struct Immobile;
    impl Actor for Immobile {
        fn act(&mut self, _: &Observation, _: &Goal, _: usize) -> Action {
            Action::default()
        }
    }

    #[test]
    fn immobile_actor_never_succeeds_and_evaluation_is_deterministic() {
        let maze = builtin_maze("S-BASE").unwrap();
        let s = evaluate_success(|| Immobile, &maze, 20, 7);
        assert_eq!(s, 0.0);
        let m = HGCBCModel::new(MazeFamily::SimpleTown, [20.0, 20.0], 8, 1);
        let a = evaluate_success(|| m.actor(), &maze, 10, 3);
        let b = evaluate_success(|| m.actor(), &maze, 10, 3);
        assert_eq!(a, b);
    }

    #[test]
    fn memory_ratio_and_training_cost() {
        assert_eq!(compute_mem(300, 100).unwrap(), 3.0);
        assert!(compute_mem(1, 0).is_err());
        assert_eq!(record_trn(&[1.0, 2.0, 3.0]).unwrap(), 6.0);
        assert!(record_trn(&[]).is_err());
    }

    #[test]
    fn latency_measurement_is_positive_and_roughly_stable() {
        let m = HGCBCModel::new(MazeFamily::SimpleTown, [20.0, 20.0], 16, 2);
        let maze = builtin_maze("S-BASE").unwrap();
        let config = SimConfig::for_family(MazeFamily::SimpleTown);
        let (state, goal) = crate::maze::reset(&maze, &config, 1).unwrap();
        let obs = crate::maze::observe(&maze, &state);
        let mut actor = m.actor();
        let a = measure_inf(&mut actor, &obs, &goal, 200);
        let b = measure_inf(&mut actor, &obs, &goal, 200);
        assert!(a > 0.0 && b > 0.0);
        // Soft jitter bound; warm path should be fairly stable.
        assert!((a - b).abs() / a.max(b) < 0.5, "jitter {a} vs {b}");
    }
}
