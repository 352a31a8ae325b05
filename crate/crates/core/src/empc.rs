//! Evolutionary MPC over knot trajectories.
//!
//! A population of knot trajectories is scored by rolling out the linear
//! model, the cheapest `num_parents` survive unchanged, and the rest of the
//! population is refilled with mutated crossovers of the survivors. Every
//! candidate draws from its own RNG keyed by `(seed, generation, index)`, so
//! results do not depend on how evaluations are scheduled across threads.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::condense::MpcSpec;
use crate::error::{check_dim, invalid, Result};
use crate::param::{Interp, KnotSchedule, KnotTrajectory};

/// Candidates are rolled out together in blocks of this many columns.
const BLOCK: usize = 128;

#[derive(Debug, Clone, PartialEq)]
pub struct EmpcSettings {
    pub num_sims: usize,
    pub num_parents: usize,
    pub generations: usize,
    pub seed: u64,
    /// Per scalar knot value.
    pub mutation_prob: f64,
    /// Chance of taking each scalar from the second parent.
    pub crossover_prob: f64,
    /// Mutation standard deviation per input channel far from the goal.
    /// `None` uses `0.2·(u_max − u_min)`.
    pub sigma_base: Option<Vec<f64>>,
    /// State distance below which the noise shrinks proportionally.
    pub d_ref: f64,
}

impl Default for EmpcSettings {
    fn default() -> Self {
        Self {
            num_sims: 1024,
            num_parents: 64,
            generations: 1,
            seed: 0,
            mutation_prob: 0.5,
            crossover_prob: 0.5,
            sigma_base: None,
            d_ref: 1.0,
        }
    }
}

impl EmpcSettings {
    pub fn validate(&self) -> Result<()> {
        if self.num_parents == 0 || self.num_parents >= self.num_sims {
            return Err(invalid(
                "num_parents",
                format!("must lie in 1..{}, got {}", self.num_sims, self.num_parents),
            ));
        }
        if self.generations == 0 {
            return Err(invalid("generations", "must be at least 1"));
        }
        for (name, p) in [
            ("mutation_prob", self.mutation_prob),
            ("crossover_prob", self.crossover_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(invalid(name, format!("must lie in [0, 1], got {p}")));
            }
        }
        if let Some(s) = &self.sigma_base {
            if s.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(invalid("sigma_base", "must be finite and >= 0"));
            }
        }
        if !(self.d_ref.is_finite() && self.d_ref > 0.0) {
            return Err(invalid("d_ref", "must be finite and > 0"));
        }
        Ok(())
    }

    /// Noise per input channel at state `x0`.
    pub fn noise(&self, spec: &MpcSpec, x0: &DVector<f64>) -> Result<Vec<f64>> {
        let m = spec.input_dim();
        let base = match &self.sigma_base {
            Some(s) => {
                check_dim("sigma_base", m, s.len())?;
                s.clone()
            }
            None => (0..m)
                .map(|j| 0.2 * (spec.u_max()[j] - spec.u_min()[j]))
                .collect(),
        };
        let scale = ((spec.x_goal() - x0).norm() / self.d_ref).min(1.0);
        Ok(base.into_iter().map(|s| s * scale).collect())
    }
}

/// Candidate knot trajectories with their costs, stored flat and knot-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    params: Vec<f64>,
    costs: Vec<f64>,
    knots: usize,
    inputs: usize,
    generation: u64,
}

impl Population {
    pub fn len(&self) -> usize {
        self.costs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.costs.is_empty()
    }

    pub fn costs(&self) -> &[f64] {
        &self.costs
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn knots(&self) -> usize {
        self.knots
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    fn width(&self) -> usize {
        self.knots * self.inputs
    }

    /// Flat knot values of candidate `i`.
    pub fn params(&self, i: usize) -> &[f64] {
        let w = self.width();
        &self.params[i * w..(i + 1) * w]
    }

    pub fn candidate(&self, i: usize) -> KnotTrajectory {
        KnotTrajectory::new(DMatrix::from_row_slice(
            self.knots,
            self.inputs,
            self.params(i),
        ))
    }

    /// Index of the cheapest candidate; ties go to the lower index.
    pub fn best_index(&self) -> usize {
        ranked(&self.costs)[0]
    }

    pub fn best_cost(&self) -> f64 {
        self.costs[self.best_index()]
    }

    pub fn best(&self) -> KnotTrajectory {
        self.candidate(self.best_index())
    }
}

fn ranked(costs: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..costs.len()).collect();
    idx.sort_by(|&a, &b| costs[a].total_cmp(&costs[b]).then(a.cmp(&b)));
    idx
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn candidate_rng(seed: u64, generation: u64, index: usize) -> ChaCha8Rng {
    let key = splitmix(splitmix(splitmix(seed) ^ generation) ^ index as u64);
    ChaCha8Rng::seed_from_u64(key)
}

fn sample_between(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if lo < hi {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

fn check_inputs(spec: &MpcSpec, sched: &KnotSchedule, x0: &DVector<f64>) -> Result<()> {
    check_dim("schedule horizon", spec.horizon(), sched.horizon())?;
    check_dim("x0", spec.state_dim(), x0.len())
}

/// Uniform samples inside the input bounds.
pub fn init_population(
    spec: &MpcSpec,
    sched: &KnotSchedule,
    settings: &EmpcSettings,
    x0: &DVector<f64>,
) -> Result<Population> {
    settings.validate()?;
    check_inputs(spec, sched, x0)?;
    let m = spec.input_dim();
    let p = sched.knots();
    let mut params = vec![0.0; settings.num_sims * p * m];
    for (i, cand) in params.chunks_mut(p * m).enumerate() {
        let mut rng = candidate_rng(settings.seed, 0, i);
        for (k, v) in cand.iter_mut().enumerate() {
            let j = k % m;
            *v = sample_between(&mut rng, spec.u_min()[j], spec.u_max()[j]);
        }
    }
    let costs = evaluate_batch(&params, spec, sched, x0);
    Ok(Population {
        params,
        costs,
        knots: p,
        inputs: m,
        generation: 0,
    })
}

/// Cost of one knot trajectory under the linear model in `spec`.
pub fn evaluate_cost(
    traj: &KnotTrajectory,
    spec: &MpcSpec,
    sched: &KnotSchedule,
    x0: &DVector<f64>,
) -> Result<f64> {
    let model = spec.model();
    evaluate_cost_with(traj, spec, sched, x0, |x, u| model.step(x, u))
}

/// Cost of one knot trajectory with a caller-supplied step function, for
/// models that are not linear.
pub fn evaluate_cost_with<F>(
    traj: &KnotTrajectory,
    spec: &MpcSpec,
    sched: &KnotSchedule,
    x0: &DVector<f64>,
    mut step: F,
) -> Result<f64>
where
    F: FnMut(&DVector<f64>, &DVector<f64>) -> DVector<f64>,
{
    check_inputs(spec, sched, x0)?;
    check_dim("knot columns", spec.input_dim(), traj.input_dim())?;
    let mut x = x0.clone();
    let mut cost = 0.0;
    for k in 0..sched.horizon() {
        let u = crate::param::input_at(traj, sched, k)?;
        cost += spec.stage_cost(&x, &u);
        x = step(&x, &u);
    }
    Ok(cost + spec.state_cost(&x))
}

fn diagonal(m: &DMatrix<f64>) -> Option<Vec<f64>> {
    let n = m.nrows();
    let off = (0..n).any(|i| (0..n).any(|j| i != j && m[(i, j)] != 0.0));
    (!off).then(|| (0..n).map(|i| m[(i, i)]).collect())
}

/// Column-wise `(c − g)ᵀ W (c − g)` added into `out`.
fn add_quadratic(
    cols: &DMatrix<f64>,
    goal: &DVector<f64>,
    w: &DMatrix<f64>,
    diag: Option<&[f64]>,
    out: &mut [f64],
) {
    match diag {
        Some(d) => {
            for (c, o) in out.iter_mut().enumerate() {
                let col = cols.column(c);
                let mut s = 0.0;
                for i in 0..d.len() {
                    let e = col[i] - goal[i];
                    s += d[i] * e * e;
                }
                *o += s;
            }
        }
        None => {
            let mut e = cols.clone();
            for mut col in e.column_iter_mut() {
                col -= goal;
            }
            let we = w * &e;
            for (c, o) in out.iter_mut().enumerate() {
                *o += e.column(c).dot(&we.column(c));
            }
        }
    }
}

fn evaluate_batch(
    params: &[f64],
    spec: &MpcSpec,
    sched: &KnotSchedule,
    x0: &DVector<f64>,
) -> Vec<f64> {
    let width = sched.knots() * spec.input_dim();
    let count = params.len() / width;
    let coeffs: Vec<Interp> = (0..sched.horizon())
        .map(|k| sched.coeffs(k).expect("step in horizon"))
        .collect();
    let qd = diagonal(spec.q());
    let rd = diagonal(spec.r());
    let mut costs = vec![0.0; count];
    costs
        .par_chunks_mut(BLOCK)
        .zip(params.par_chunks(BLOCK * width))
        .for_each(|(out, block)| {
            evaluate_block(block, spec, &coeffs, x0, qd.as_deref(), rd.as_deref(), out);
        });
    costs
}

fn evaluate_block(
    params: &[f64],
    spec: &MpcSpec,
    coeffs: &[Interp],
    x0: &DVector<f64>,
    qd: Option<&[f64]>,
    rd: Option<&[f64]>,
    out: &mut [f64],
) {
    let model = spec.model();
    let n = spec.state_dim();
    let m = spec.input_dim();
    let b = out.len();
    let width = params.len() / b;
    out.iter_mut().for_each(|c| *c = 0.0);
    let mut x = DMatrix::from_fn(n, b, |i, _| x0[i]);
    let mut next = DMatrix::zeros(n, b);
    let mut u = DMatrix::zeros(m, b);
    for ic in coeffs {
        for c in 0..b {
            let cand = &params[c * width..(c + 1) * width];
            for j in 0..m {
                u[(j, c)] = (1.0 - ic.c) * cand[ic.idx1 * m + j] + ic.c * cand[ic.idx2 * m + j];
            }
        }
        add_quadratic(&x, spec.x_goal(), spec.q(), qd, out);
        add_quadratic(&u, spec.u_goal(), spec.r(), rd, out);
        for mut col in next.column_iter_mut() {
            col.copy_from(&model.w);
        }
        next.gemm(1.0, &model.a, &x, 1.0);
        next.gemm(1.0, &model.b, &u, 1.0);
        std::mem::swap(&mut x, &mut next);
    }
    add_quadratic(&x, spec.x_goal(), spec.q(), qd, out);
}

/// One round of selection, crossover and mutation.
pub fn evolve_generation(
    pop: &Population,
    spec: &MpcSpec,
    sched: &KnotSchedule,
    x0: &DVector<f64>,
    settings: &EmpcSettings,
) -> Result<Population> {
    settings.validate()?;
    check_inputs(spec, sched, x0)?;
    check_population(pop, spec, sched, settings)?;
    let m = spec.input_dim();
    let width = pop.width();
    let sigma = settings.noise(spec, x0)?;
    let generation = pop.generation + 1;
    let np = settings.num_parents;
    let order = ranked(&pop.costs);
    let elites = &order[..np];

    let mut params = vec![0.0; pop.params.len()];
    let mut costs = vec![0.0; pop.len()];
    for (slot, &e) in elites.iter().enumerate() {
        params[slot * width..(slot + 1) * width].copy_from_slice(pop.params(e));
        costs[slot] = pop.costs[e];
    }
    let normals: Vec<Option<Normal<f64>>> = sigma
        .iter()
        .map(|&s| (s > 0.0).then(|| Normal::new(0.0, s).expect("finite sigma")))
        .collect();
    params[np * width..]
        .par_chunks_mut(width)
        .enumerate()
        .for_each(|(c, child)| {
            let idx = np + c;
            let mut rng = candidate_rng(settings.seed, generation, idx);
            let a = pop.params(elites[rng.random_range(0..np)]);
            let b = pop.params(elites[rng.random_range(0..np)]);
            for k in 0..width {
                let j = k % m;
                let from_b = rng.random::<f64>() < settings.crossover_prob;
                let mut v = if from_b { b[k] } else { a[k] };
                if rng.random::<f64>() < settings.mutation_prob {
                    if let Some(nd) = &normals[j] {
                        v += nd.sample(&mut rng);
                    }
                }
                child[k] = v.clamp(spec.u_min()[j], spec.u_max()[j]);
            }
        });
    let child_costs = evaluate_batch(&params[np * width..], spec, sched, x0);
    costs[np..].copy_from_slice(&child_costs);
    Ok(Population {
        params,
        costs,
        knots: pop.knots,
        inputs: pop.inputs,
        generation,
    })
}

fn check_population(
    pop: &Population,
    spec: &MpcSpec,
    sched: &KnotSchedule,
    settings: &EmpcSettings,
) -> Result<()> {
    check_dim("population size", settings.num_sims, pop.len())?;
    check_dim("population knots", sched.knots(), pop.knots)?;
    check_dim("population inputs", spec.input_dim(), pop.inputs)
}

/// Costs of `pop` recomputed at a new initial state.
pub fn reevaluate(
    pop: &Population,
    spec: &MpcSpec,
    sched: &KnotSchedule,
    x0: &DVector<f64>,
) -> Result<Population> {
    check_inputs(spec, sched, x0)?;
    check_dim("population knots", sched.knots(), pop.knots)?;
    check_dim("population inputs", spec.input_dim(), pop.inputs)?;
    Ok(Population {
        costs: evaluate_batch(&pop.params, spec, sched, x0),
        ..pop.clone()
    })
}

/// Runs `settings.generations` generations, from scratch or from `prev`, and
/// returns the first input of the best candidate with the final population.
pub fn solve_empc(
    spec: &MpcSpec,
    sched: &KnotSchedule,
    x0: &DVector<f64>,
    settings: &EmpcSettings,
    prev: Option<Population>,
) -> Result<(DVector<f64>, Population)> {
    settings.validate()?;
    let mut pop = match prev {
        Some(p) => {
            check_population(&p, spec, sched, settings)?;
            reevaluate(&p, spec, sched, x0)?
        }
        None => init_population(spec, sched, settings, x0)?,
    };
    for _ in 0..settings.generations {
        pop = evolve_generation(&pop, spec, sched, x0, settings)?;
    }
    let best = pop.best();
    let u = best.knots.row(0).transpose();
    Ok((u, pop))
}
