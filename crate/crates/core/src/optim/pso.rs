//! Particle swarm optimization with Bratton-Kennedy boundary handling.
//!
//! Particles that leave the box keep moving but are not evaluated, so they can
//! never become a personal or global best. Objective values for a generation
//! are computed in parallel; best updates then run in particle order so the
//! outcome does not depend on thread scheduling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PsoParams {
    pub inertia: f64,
    pub cognitive: f64,
    pub social: f64,
    pub particles: usize,
    pub iterations: usize,
    /// Velocity limit as a fraction of each bound width.
    pub velocity_clamp: f64,
    pub seed: u64,
}

impl Default for PsoParams {
    fn default() -> Self {
        PsoParams {
            inertia: 0.1,
            cognitive: 1.0,
            social: 1.0,
            particles: 32,
            iterations: 100,
            velocity_clamp: 0.5,
            seed: 0,
        }
    }
}

impl PsoParams {
    fn check(&self) -> Result<()> {
        if self.particles == 0 {
            return Err(Error::InvalidArgument("swarm needs at least one particle".into()));
        }
        if !(self.velocity_clamp > 0.0) {
            return Err(Error::InvalidArgument("velocity clamp must be positive".into()));
        }
        for (name, v) in [
            ("inertia", self.inertia),
            ("cognitive", self.cognitive),
            ("social", self.social),
        ] {
            if !v.is_finite() {
                return Err(Error::InvalidArgument(format!("{name} weight must be finite")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwarmState {
    pub positions: Vec<Vec<f64>>,
    pub velocities: Vec<Vec<f64>>,
    pub personal_best: Vec<Vec<f64>>,
    /// +∞ until the particle has been evaluated inside the box.
    pub personal_best_value: Vec<f64>,
    pub global_best: Vec<f64>,
    pub global_best_value: f64,
    pub iteration: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsoResult {
    pub best: Vec<f64>,
    pub best_value: f64,
    /// Global-best value after initialization and after each iteration.
    pub history: Vec<f64>,
    pub evaluations: usize,
    /// Evaluations where the objective returned no value.
    pub failures: usize,
}

fn inside(x: &[f64], bounds: &[(f64, f64)]) -> bool {
    x.iter().zip(bounds).all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
}

impl SwarmState {
    /// Uniform positions in the box with half-difference initial velocities;
    /// particle 0 starts at `seed_point` when given.
    pub fn new(bounds: &[(f64, f64)], seed_point: Option<&[f64]>, particles: usize, rng: &mut ChaCha8Rng) -> Self {
        let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> { bounds.iter().map(|&(lo, hi)| rng.random_range(lo..=hi)).collect() };
        let mut positions = Vec::with_capacity(particles);
        let mut velocities = Vec::with_capacity(particles);
        for i in 0..particles {
            let x = match (i, seed_point) {
                (0, Some(s)) => s.to_vec(),
                _ => draw(rng),
            };
            let u = draw(rng);
            velocities.push(u.iter().zip(&x).map(|(a, b)| 0.5 * (a - b)).collect());
            positions.push(x);
        }
        SwarmState {
            personal_best: positions.clone(),
            personal_best_value: vec![f64::INFINITY; particles],
            global_best: positions[0].clone(),
            global_best_value: f64::INFINITY,
            positions,
            velocities,
            iteration: 0,
        }
    }

    /// Fold fresh objective values into personal and global bests in particle order.
    fn absorb(&mut self, values: &[Option<f64>]) {
        for (i, v) in values.iter().enumerate() {
            if let Some(v) = *v {
                if v < self.personal_best_value[i] {
                    self.personal_best_value[i] = v;
                    self.personal_best[i].clone_from(&self.positions[i]);
                }
                if v < self.global_best_value {
                    self.global_best_value = v;
                    self.global_best.clone_from(&self.positions[i]);
                }
            }
        }
    }

    fn step(&mut self, params: &PsoParams, vmax: &[f64], rng: &mut ChaCha8Rng) {
        for i in 0..self.positions.len() {
            for d in 0..vmax.len() {
                let (r1, r2): (f64, f64) = (rng.random(), rng.random());
                let x = self.positions[i][d];
                let v = params.inertia * self.velocities[i][d]
                    + params.cognitive * r1 * (self.personal_best[i][d] - x)
                    + params.social * r2 * (self.global_best[d] - x);
                let v = v.clamp(-vmax[d], vmax[d]);
                self.velocities[i][d] = v;
                self.positions[i][d] = x + v;
            }
        }
        self.iteration += 1;
    }
}

/// Minimize `objective` over the box `bounds`. The objective returns `None`
/// where it cannot be evaluated; such points never become bests.
pub fn minimize<F>(objective: F, bounds: &[(f64, f64)], seed_point: Option<&[f64]>, params: &PsoParams) -> Result<PsoResult>
where
    F: Fn(&[f64]) -> Option<f64> + Sync,
{
    params.check()?;
    if bounds.is_empty() {
        return Err(Error::InvalidArgument("PSO needs at least one dimension".into()));
    }
    if bounds.iter().any(|(lo, hi)| !(lo < hi)) {
        return Err(Error::InvalidArgument("every bound needs low < high".into()));
    }
    if let Some(s) = seed_point {
        if s.len() != bounds.len() {
            return Err(Error::Dimension {
                what: "PSO seed point",
                expected: bounds.len(),
                got: s.len(),
            });
        }
        if !inside(s, bounds) {
            return Err(Error::InvalidArgument("PSO seed point lies outside the bounds".into()));
        }
    }
    let vmax: Vec<f64> = bounds.iter().map(|(lo, hi)| params.velocity_clamp * (hi - lo)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut swarm = SwarmState::new(bounds, seed_point, params.particles, &mut rng);
    let mut evaluations = 0;
    let mut failures = 0;
    let mut history = Vec::with_capacity(params.iterations + 1);

    let mut evaluate = |swarm: &mut SwarmState| {
        let values: Vec<Option<Option<f64>>> = swarm
            .positions
            .par_iter()
            .map(|x| if inside(x, bounds) { Some(objective(x)) } else { None })
            .collect();
        let mut clean = Vec::with_capacity(values.len());
        for v in values {
            match v {
                None => clean.push(None),
                Some(r) => {
                    evaluations += 1;
                    match r {
                        Some(f) if f.is_finite() => clean.push(Some(f)),
                        _ => {
                            failures += 1;
                            clean.push(None);
                        }
                    }
                }
            }
        }
        let before = swarm.global_best_value;
        swarm.absorb(&clean);
        assert!(swarm.global_best_value <= before, "global best must not increase");
    };

    evaluate(&mut swarm);
    history.push(swarm.global_best_value);
    for _ in 0..params.iterations {
        swarm.step(params, &vmax, &mut rng);
        evaluate(&mut swarm);
        history.push(swarm.global_best_value);
    }
    if !swarm.global_best_value.is_finite() {
        return Err(Error::Optimizer(format!(
            "no particle could be evaluated ({failures} failed evaluations)"
        )));
    }
    Ok(PsoResult {
        best: swarm.global_best,
        best_value: swarm.global_best_value,
        history,
        evaluations,
        failures,
    })
}
