//! Evolutionary search in design space against a surrogate-predicted
//! embedding.
//!
//! Each generation breeds `population` offspring by binary tournament,
//! uniform crossover and mutation. The `elites` best of parents and
//! offspring together always survive; the rest of the next population is
//! filled with the best remaining offspring.
//!
//! Continuous mutation adds `N(0, σ²)` truncated to ±2σ and clamps to the
//! bounds, with `σ = mutation_scale · (upper − lower) · m` and one step
//! multiplier `m` per offspring drawn log-uniformly from [1e-3, 1].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constraints::{self, RuleSet};
use crate::embed::{EmbedError, EmbedderHandle, Embedding};
use crate::metrics::cosine_similarity;
use crate::schema::{encode_into, validate, DesignSchema, DesignVector, ParamKind, SchemaError, Value};
use crate::surrogate::{NetError, ResidualNet};

pub const DEFAULT_PENALTY: f64 = 0.5;
const MIN_STEP: f64 = 1e-3;
const TRUNCATION: f64 = 2.0;

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("target embedding is zero")]
    ZeroTarget,
    #[error("surrogate expects {net} inputs, schema encodes {schema}")]
    InputDim { net: usize, schema: usize },
    #[error("invalid design: {0}")]
    InvalidDesign(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error(transparent)]
    Net(#[from] NetError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub population: usize,
    pub generations: usize,
    /// Gaussian scale as a fraction of each parameter's range.
    pub mutation_scale: f64,
    /// Probability of resampling each categorical gene.
    pub categorical_mutation: f64,
    pub elites: usize,
    pub seed: u64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            population: 64,
            generations: 300,
            mutation_scale: 0.1,
            categorical_mutation: 0.05,
            elites: 2,
            seed: 0,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<(), OptimError> {
        if self.population < 4 {
            return Err(OptimError::Config("population must be at least 4".into()));
        }
        if self.elites == 0 || self.elites > self.population {
            return Err(OptimError::Config("elites must be in 1..=population".into()));
        }
        if !(0.0..=1.0).contains(&self.categorical_mutation) {
            return Err(OptimError::Config("categorical mutation must be a probability".into()));
        }
        if !(self.mutation_scale > 0.0 && self.mutation_scale.is_finite()) {
            return Err(OptimError::Config("mutation scale must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizationResult {
    pub best: DesignVector,
    /// Objective value of `best`.
    pub best_value: f64,
    /// Raw cosine similarity of `best` (no penalty). `None` for custom
    /// fitness functions.
    pub best_similarity: Option<f64>,
    /// Best-so-far objective value; entry 0 is the initial population.
    pub trajectory: Vec<f64>,
    pub evaluations: usize,
    pub feasible: bool,
    /// The top design was infeasible and `best` is the best feasible design
    /// seen instead. `best_value` is then below the last trajectory entry.
    pub fell_back: bool,
}

/// Cosine similarity to a target, minus a penalty per constraint violation.
pub struct Objective<'a> {
    pub surrogate: &'a ResidualNet,
    target: Vec<f64>,
    pub schema: &'a DesignSchema,
    pub rules: &'a RuleSet,
    pub penalty: f64,
}

impl<'a> Objective<'a> {
    pub fn new(
        surrogate: &'a ResidualNet,
        target: &Embedding,
        schema: &'a DesignSchema,
        rules: &'a RuleSet,
    ) -> Result<Self, OptimError> {
        if target.norm() == 0.0 {
            return Err(OptimError::ZeroTarget);
        }
        if surrogate.topology.input != schema.encoded_len() {
            return Err(OptimError::InputDim {
                net: surrogate.topology.input,
                schema: schema.encoded_len(),
            });
        }
        Ok(Objective {
            surrogate,
            target: target.to_f64(),
            schema,
            rules,
            penalty: DEFAULT_PENALTY,
        })
    }

    pub fn with_penalty(mut self, penalty: f64) -> Self {
        self.penalty = penalty;
        self
    }

    fn check_valid(&self, design: &DesignVector) -> Result<(), OptimError> {
        let v = validate(design, self.schema)?;
        match v.first() {
            Some(v) => Err(OptimError::InvalidDesign(v.to_string())),
            None => Ok(()),
        }
    }

    fn cosine(&self, y: &[f64]) -> f64 {
        // an all-zero prediction points nowhere
        cosine_similarity(y, &self.target).unwrap_or(0.0)
    }

    /// Similarities of valid designs, one network pass for the batch.
    fn similarities(&self, designs: &[DesignVector]) -> Result<Vec<f64>, OptimError> {
        let mut x = Vec::with_capacity(designs.len() * self.schema.encoded_len());
        for d in designs {
            encode_into(d, self.schema, &mut x);
        }
        let y = self.surrogate.forward_batch(&x, designs.len())?;
        Ok(y.chunks_exact(self.surrogate.topology.output).map(|r| self.cosine(r)).collect())
    }

    pub fn similarity(&self, design: &DesignVector) -> Result<f64, OptimError> {
        self.check_valid(design)?;
        Ok(self.similarities(std::slice::from_ref(design))?[0])
    }

    pub fn violations(&self, design: &DesignVector) -> usize {
        constraints::check(design, self.schema, self.rules).violations.len()
    }

    pub fn values(&self, designs: &[DesignVector]) -> Result<Vec<f64>, OptimError> {
        for d in designs {
            self.check_valid(d)?;
        }
        let sims = self.similarities(designs)?;
        Ok(sims
            .iter()
            .zip(designs)
            .map(|(s, d)| s - self.penalty * self.violations(d) as f64)
            .collect())
    }
}

pub fn objective_value(obj: &Objective, design: &DesignVector) -> Result<f64, OptimError> {
    Ok(obj.values(std::slice::from_ref(design))?[0])
}

pub fn optimize(obj: &Objective, start: &DesignVector, cfg: &OptimConfig) -> Result<OptimizationResult, OptimError> {
    obj.check_valid(start)?;
    let fitness = |ds: &[DesignVector]| obj.values(ds).expect("mutation keeps designs valid");
    let feasible = |d: &DesignVector| obj.violations(d) == 0;
    let mut r = evolve(obj.schema, start, cfg, fitness, feasible)?;
    r.best_similarity = Some(obj.similarity(&r.best)?);
    Ok(r)
}

/// Embedding of a text prompt through an external bridge.
pub fn target_from_text(handle: &mut EmbedderHandle, prompt: &str) -> Result<Embedding, EmbedError> {
    handle.embed_text(prompt)
}

fn truncated_normal(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let z: f64 = StandardNormal.sample(rng);
        if z.abs() <= TRUNCATION {
            return z;
        }
    }
}

fn mutate(schema: &DesignSchema, d: &mut DesignVector, cfg: &OptimConfig, step: f64, rng: &mut ChaCha8Rng) {
    for (p, v) in schema.parameters.iter().zip(d.values.iter_mut()) {
        match (&p.kind, v) {
            (ParamKind::Continuous { lower, upper, .. }, Value::Real(x)) => {
                let sigma = cfg.mutation_scale * (upper - lower) * step;
                *x = (*x + sigma * truncated_normal(rng)).clamp(*lower, *upper);
            }
            (ParamKind::Categorical { categories, .. }, Value::Label(i)) => {
                if rng.random::<f64>() < cfg.categorical_mutation {
                    *i = rng.random_range(0..categories.len());
                }
            }
            _ => unreachable!("design validated against schema"),
        }
    }
}

fn log_uniform_step(rng: &mut ChaCha8Rng) -> f64 {
    (MIN_STEP.ln() * rng.random::<f64>()).exp()
}

/// Maximizes `fitness` (evaluated a batch at a time) starting from `start`.
/// `feasible` decides which designs may be returned.
pub fn evolve<F, G>(
    schema: &DesignSchema,
    start: &DesignVector,
    cfg: &OptimConfig,
    fitness: F,
    feasible: G,
) -> Result<OptimizationResult, OptimError>
where
    F: Fn(&[DesignVector]) -> Vec<f64>,
    G: Fn(&DesignVector) -> bool,
{
    cfg.validate()?;
    if let Some(v) = validate(start, schema)?.first() {
        return Err(OptimError::InvalidDesign(v.to_string()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.population;

    let mut pop = vec![start.clone()];
    for _ in 1..n {
        let mut d = start.clone();
        mutate(schema, &mut d, cfg, 1.0, &mut rng);
        pop.push(d);
    }
    let mut fit = fitness(&pop);
    let mut evaluations = n;
    let mut best_feasible: Option<(DesignVector, f64)> = None;
    let mut note_feasible = |designs: &[DesignVector], values: &[f64]| {
        for (d, &v) in designs.iter().zip(values) {
            if best_feasible.as_ref().is_none_or(|b| v > b.1) && feasible(d) {
                best_feasible = Some((d.clone(), v));
            }
        }
    };
    note_feasible(&pop, &fit);
    sort_by_fitness(&mut pop, &mut fit);
    let mut trajectory = vec![fit[0]];

    for _ in 0..cfg.generations {
        let mut kids = Vec::with_capacity(n);
        for _ in 0..n {
            let a = tournament(&fit, &mut rng);
            let b = tournament(&fit, &mut rng);
            let mut child = pop[a].clone();
            for (c, g) in child.values.iter_mut().zip(&pop[b].values) {
                if rng.random::<bool>() {
                    *c = *g;
                }
            }
            let step = log_uniform_step(&mut rng);
            mutate(schema, &mut child, cfg, step, &mut rng);
            kids.push(child);
        }
        let mut kid_fit = fitness(&kids);
        evaluations += n;
        note_feasible(&kids, &kid_fit);
        sort_by_fitness(&mut kids, &mut kid_fit);

        // elites from the union, then the best unused offspring
        let mut next = Vec::with_capacity(n);
        let mut next_fit = Vec::with_capacity(n);
        let (mut i, mut j) = (0, 0);
        while next.len() < cfg.elites {
            if i < n && (j >= n || fit[i] >= kid_fit[j]) {
                next.push(pop[i].clone());
                next_fit.push(fit[i]);
                i += 1;
            } else {
                next.push(kids[j].clone());
                next_fit.push(kid_fit[j]);
                j += 1;
            }
        }
        while next.len() < n {
            if j < n {
                next.push(kids[j].clone());
                next_fit.push(kid_fit[j]);
                j += 1;
            } else {
                next.push(pop[i].clone());
                next_fit.push(fit[i]);
                i += 1;
            }
        }
        pop = next;
        fit = next_fit;
        sort_by_fitness(&mut pop, &mut fit);
        let prev = *trajectory.last().expect("non-empty");
        trajectory.push(prev.max(fit[0]));
    }

    let top_feasible = feasible(&pop[0]);
    let (best, best_value, fell_back) = match (&best_feasible, top_feasible) {
        (_, true) => (pop[0].clone(), fit[0], false),
        (Some((d, v)), false) => (d.clone(), *v, true),
        (None, false) => (pop[0].clone(), fit[0], false),
    };
    Ok(OptimizationResult {
        feasible: top_feasible || fell_back,
        best,
        best_value,
        best_similarity: None,
        trajectory,
        evaluations,
        fell_back,
    })
}

fn tournament(fit: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let a = rng.random_range(0..fit.len());
    let b = rng.random_range(0..fit.len());
    if fit[b] > fit[a] {
        b
    } else {
        a
    }
}

/// Descending by fitness, ties kept in their current order.
fn sort_by_fitness(pop: &mut Vec<DesignVector>, fit: &mut Vec<f64>) {
    let mut idx: Vec<usize> = (0..pop.len()).collect();
    idx.sort_by(|&a, &b| fit[b].total_cmp(&fit[a]));
    *pop = idx.iter().map(|&i| pop[i].clone()).collect();
    *fit = idx.iter().map(|&i| fit[i]).collect();
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surrogate::{predict, Topology};

    fn setup() -> (DesignSchema, RuleSet, ResidualNet) {
        let s = DesignSchema::reference();
        let net = ResidualNet::init_with(
            Topology {
                input: s.encoded_len(),
                width: 16,
                blocks: 1,
                output: 512,
            },
            3,
        )
        .unwrap();
        (s, RuleSet::reference(), net)
    }

    #[test]
    fn objective_examples() {
        let (s, r, net) = setup();
        let d = s.default_design();
        let e = predict(&net, &d, &s).unwrap();
        let obj = Objective::new(&net, &e, &s, &r).unwrap();
        assert!((objective_value(&obj, &d).unwrap() - 1.0).abs() < 1e-6);
        let neg = Embedding::new(e.values().iter().map(|v| -v).collect());
        let obj = Objective::new(&net, &neg, &s, &r).unwrap();
        assert!((objective_value(&obj, &d).unwrap() + 1.0).abs() < 1e-6);
        let zero = Embedding::new(vec![0.0; 512]);
        assert!(matches!(Objective::new(&net, &zero, &s, &r), Err(OptimError::ZeroTarget)));
    }

    #[test]
    fn penalty_per_violation() {
        let (s, r, net) = setup();
        let mut d = s.default_design();
        // big wheels on the shortest frame
        for (name, v) in [
            ("wheel_diameter_front", 760.0),
            ("wheel_diameter_rear", 760.0),
            ("tire_width_front", 65.0),
            ("tire_width_rear", 65.0),
            ("top_tube_length", 500.0),
            ("chain_stay_length", 390.0),
            ("head_angle", 74.0),
        ] {
            d.set(&s, name, Value::Real(v));
        }
        let e = predict(&net, &s.default_design(), &s).unwrap();
        let obj = Objective::new(&net, &e, &s, &r).unwrap();
        let k = obj.violations(&d);
        assert!(k >= 1);
        let v = objective_value(&obj, &d).unwrap();
        assert!((v - (obj.similarity(&d).unwrap() - 0.5 * k as f64)).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        assert!(OptimConfig::default().validate().is_ok());
        for bad in [
            OptimConfig {
                population: 3,
                ..Default::default()
            },
            OptimConfig {
                elites: 0,
                ..Default::default()
            },
            OptimConfig {
                categorical_mutation: 1.5,
                ..Default::default()
            },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn short_run_is_monotone_and_deterministic() {
        let (s, r, net) = setup();
        let start = s.default_design();
        let mut other = start.clone();
        other.set(&s, "red", Value::Real(0.9));
        let target = predict(&net, &other, &s).unwrap();
        let obj = Objective::new(&net, &target, &s, &r).unwrap();
        let cfg = OptimConfig {
            generations: 15,
            population: 16,
            seed: 4,
            ..Default::default()
        };
        let a = optimize(&obj, &start, &cfg).unwrap();
        let b = optimize(&obj, &start, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.trajectory.len(), 16);
        assert!(a.trajectory.windows(2).all(|w| w[1] >= w[0]));
        assert_eq!(a.evaluations, 16 * 16);
        assert!(a.feasible);
    }
}
