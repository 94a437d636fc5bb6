//! Iterative binary-decision depth inference.
//!
//! Starting from the midpoint of the inverse-depth range, every iteration
//! asks the decision oracle, per source view, whether the surface lies in
//! front of or behind the current hypothesis, moves each per-source
//! hypothesis by the shrinking step `R / 2^(t+1)`, and fuses the per-source
//! hypotheses with the configured weights. After `T` iterations the depth is
//! `1 / H^T`.

use rayon::prelude::*;

use crate::decision::{DecisionOracle, DecisionRequest, SoftMask};
use crate::error::{Error, Result};
use crate::fusion::{fuse_hypotheses, WeightOracle};
use crate::geometry::InverseDepthInterval;
use crate::grid::Grid;
use crate::scene::SceneBundle;

/// Per-pixel inverse-depth hypothesis at iteration `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisMap {
    values: Grid<f64>,
    iteration: usize,
    interval: InverseDepthInterval,
}

impl HypothesisMap {
    pub fn new(values: Grid<f64>, iteration: usize, interval: InverseDepthInterval) -> Self {
        Self {
            values,
            iteration,
            interval,
        }
    }

    pub fn values(&self) -> &Grid<f64> {
        &self.values
    }

    pub fn into_values(self) -> Grid<f64> {
        self.values
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn interval(&self) -> &InverseDepthInterval {
        &self.interval
    }

    pub fn width(&self) -> usize {
        self.values.width()
    }

    pub fn height(&self) -> usize {
        self.values.height()
    }

    /// Signed step `ΔR^t` of the current iteration.
    pub fn step_size(&self) -> f64 {
        step_size(self.iteration, self.interval.half_width())
    }

    /// Depth map `1 / H`.
    pub fn depth(&self) -> Grid<f64> {
        self.values.map(|&h| 1.0 / h)
    }
}

/// Constant hypothesis at the inverse-depth midpoint, `t = 0`.
pub fn init_hypothesis(interval: InverseDepthInterval, width: usize, height: usize) -> Result<HypothesisMap> {
    if width == 0 || height == 0 {
        return Err(Error::EmptyInput("hypothesis dimensions"));
    }
    Ok(HypothesisMap::new(
        Grid::filled(width, height, interval.midpoint()),
        0,
        interval,
    ))
}

/// `ΔR^t = R / 2^(t+1)`, sign preserved.
pub fn step_size(iteration: usize, half_width: f64) -> f64 {
    half_width / 2f64.powi(iteration as i32 + 1)
}

/// One decision step: `H^{t+1} = H^t - ΔR^t (2B - 1)`, clamped to the
/// interval. Invalid decisions act as `B = 0.5` and leave `H` unchanged.
pub fn update_hypothesis(hypothesis: &HypothesisMap, mask: &SoftMask) -> Result<HypothesisMap> {
    let (w, h) = (hypothesis.width(), hypothesis.height());
    if (mask.width(), mask.height()) != (w, h) {
        return Err(Error::mismatch("decision mask", &[w, h], &[mask.width(), mask.height()]));
    }
    let step = hypothesis.step_size();
    let interval = hypothesis.interval;
    let values = hypothesis
        .values
        .data()
        .iter()
        .enumerate()
        .map(|(i, &hv)| interval.clamp(hv - step * (2.0 * mask.decision(i) - 1.0)))
        .collect();
    Ok(HypothesisMap::new(
        Grid::from_vec(w, h, values)?,
        hypothesis.iteration + 1,
        interval,
    ))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EngineConfig {
    /// Number of iterations `T`.
    pub iterations: usize,
    /// Worker threads; `0` uses the global pool.
    pub workers: usize,
    pub record_trace: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            iterations: 8,
            workers: 0,
            record_trace: false,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("iteration count must be at least 1".into()));
        }
        Ok(())
    }
}

/// Snapshot of one source view at one iteration.
#[derive(Debug, Clone)]
pub struct SourceStep {
    pub decision: SoftMask,
    pub weight: Grid<f64>,
    /// Per-source hypothesis `H_s^{t+1}`.
    pub hypothesis: Grid<f64>,
}

/// Snapshot of one iteration: the input hypothesis `H^t`, per-source
/// results and the fused `H^{t+1}`.
#[derive(Debug, Clone)]
pub struct TraceStep {
    pub iteration: usize,
    pub hypothesis: Grid<f64>,
    pub sources: Vec<SourceStep>,
    pub fused: Grid<f64>,
}

/// Per-iteration diagnostics; `steps.len() == T`, each with `S` sources.
#[derive(Debug, Clone, Default)]
pub struct Trace {
    pub steps: Vec<TraceStep>,
}

#[derive(Debug, Clone)]
pub struct EngineOutput {
    /// `1 / H^T`.
    pub depth: Grid<f64>,
    pub hypothesis: HypothesisMap,
    pub trace: Option<Trace>,
}

/// Runs `T` decide/update/fuse iterations on `scene`.
///
/// Sources are processed concurrently but fused in index order, so the
/// output does not depend on the worker count.
pub fn run(
    scene: &SceneBundle,
    interval: InverseDepthInterval,
    config: &EngineConfig,
    oracle: &mut dyn DecisionOracle,
    weights: &dyn WeightOracle,
) -> Result<EngineOutput> {
    config.validate()?;
    if config.workers == 0 {
        return run_in_pool(scene, interval, config, oracle, weights);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| run_in_pool(scene, interval, config, oracle, weights))
}

fn run_in_pool(
    scene: &SceneBundle,
    interval: InverseDepthInterval,
    config: &EngineConfig,
    oracle: &mut dyn DecisionOracle,
    weights: &dyn WeightOracle,
) -> Result<EngineOutput> {
    oracle.prepare(scene)?;
    let oracle: &dyn DecisionOracle = oracle;
    let mut hypothesis = init_hypothesis(interval, scene.width(), scene.height())?;
    let mut trace = config.record_trace.then(Trace::default);
    let (lo, hi) = interval.bounds();

    for t in 0..config.iterations {
        let per_source: Vec<(SoftMask, Grid<f64>, Grid<f64>)> = (0..scene.sources.len())
            .into_par_iter()
            .map(|s| {
                let wrap = |e: Error| Error::Oracle {
                    iteration: t,
                    source_index: s,
                    inner: Box::new(e),
                };
                let request = DecisionRequest {
                    scene,
                    source: s,
                    hypothesis: &hypothesis,
                };
                let decision = oracle.decide(&request).map_err(wrap)?;
                let weight = weights.weights(&decision, &hypothesis).map_err(wrap)?;
                let next = update_hypothesis(&hypothesis, &decision.mask).map_err(wrap)?;
                Ok((decision.mask, weight.values().clone(), next.into_values()))
            })
            .collect::<Result<_>>()?;

        let hyps: Vec<Grid<f64>> = per_source.iter().map(|(_, _, h)| h.clone()).collect();
        let ws: Vec<&Grid<f64>> = per_source.iter().map(|(_, w, _)| w).collect();
        let fused = fuse_hypotheses(&hyps, &ws)?;
        if let Some(v) = fused.data().iter().find(|v| !(lo..=hi).contains(*v)) {
            return Err(Error::Invariant(format!(
                "fused hypothesis {v} left [{lo}, {hi}] at iteration {t}"
            )));
        }
        if let Some(trace) = trace.as_mut() {
            trace.steps.push(TraceStep {
                iteration: t,
                hypothesis: hypothesis.values.clone(),
                sources: per_source
                    .into_iter()
                    .map(|(decision, weight, hypothesis)| SourceStep {
                        decision,
                        weight,
                        hypothesis,
                    })
                    .collect(),
                fused: fused.clone(),
            });
        }
        hypothesis = HypothesisMap::new(fused, t + 1, interval);
    }

    Ok(EngineOutput {
        depth: hypothesis.depth(),
        hypothesis,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decision::{Decision, GroundTruthOracle};
    use crate::fusion::{EntropyWeights, UniformWeights};
    use crate::geometry::{intrinsics, Camera};
    use crate::grid::Image;
    use crate::rng::SplitMix64;
    use crate::scene::View;
    use nalgebra::{Matrix3, Vector3};

    fn interval() -> InverseDepthInterval {
        InverseDepthInterval::new(0.5, 2.0).unwrap()
    }

    fn scene(n: usize, sources: usize, seed: u64) -> SceneBundle {
        let mut rng = SplitMix64::new(seed);
        let depth = Grid::from_fn(n, n, |_, _| rng.uniform(0.5, 2.0));
        let k = intrinsics(n as f64, n as f64, n as f64 / 2.0, n as f64 / 2.0);
        let view = |tx: f64, depth: Option<Grid<f64>>| {
            let cam = Camera::new(k, Matrix3::identity(), Vector3::new(tx, 0.0, 0.0), n, n).unwrap();
            View::new(Image::gray(Grid::filled(n, n, 0.5)), cam, depth).unwrap()
        };
        let srcs = (0..sources).map(|s| view(-0.1 * (s + 1) as f64, None)).collect();
        SceneBundle::new(view(0.0, Some(depth)), srcs).unwrap()
    }

    fn cfg(iterations: usize) -> EngineConfig {
        EngineConfig {
            iterations,
            ..EngineConfig::default()
        }
    }

    use crate::decision::ConstantOracle as Constant;

    struct Failing;

    impl DecisionOracle for Failing {
        fn name(&self) -> &'static str {
            "failing"
        }

        fn decide(&self, r: &DecisionRequest<'_>) -> Result<Decision> {
            if r.source == 1 {
                Err(Error::Scene("boom".into()))
            } else {
                Constant(0.5).decide(r)
            }
        }
    }

    #[test]
    fn init_examples() {
        let h = init_hypothesis(interval(), 3, 2).unwrap();
        assert!(h.values().data().iter().all(|v| *v == 1.25));
        assert_eq!(h.iteration(), 0);
        let one = init_hypothesis(InverseDepthInterval::new(1.0, 1.0).unwrap(), 2, 2).unwrap();
        assert!(one.values().data().iter().all(|v| *v == 1.0));
        assert!(init_hypothesis(interval(), 0, 2).is_err());
    }

    #[test]
    fn step_examples() {
        assert_eq!(step_size(0, -0.75), -0.375);
        assert_eq!(step_size(3, -0.75), -0.046875);
        let sum: f64 = (0..60).map(|t| step_size(t, -0.75).abs()).sum();
        assert!((sum - 0.75).abs() < 1e-15);
    }

    #[test]
    fn update_examples() {
        let h = init_hypothesis(interval(), 1, 1).unwrap();
        let up = |b: f64| {
            let m = SoftMask::dense(Grid::filled(1, 1, b)).unwrap();
            update_hypothesis(&h, &m).unwrap().values().data()[0]
        };
        assert_eq!(up(1.0), 1.625);
        assert_eq!(up(0.0), 0.875);
        assert_eq!(up(0.5).to_bits(), 1.25f64.to_bits());

        let invalid = SoftMask::new(Grid::filled(1, 1, 1.0), Grid::filled(1, 1, false)).unwrap();
        assert_eq!(update_hypothesis(&h, &invalid).unwrap().values().data()[0], 1.25);
        assert!(update_hypothesis(&h, &SoftMask::dense(Grid::filled(2, 1, 0.5)).unwrap()).is_err());
    }

    #[test]
    fn half_is_a_fixpoint() {
        let s = scene(8, 2, 1);
        let out = run(&s, interval(), &cfg(1), &mut Constant(0.5), &EntropyWeights).unwrap();
        assert!(out.depth.data().iter().all(|d| *d == 1.0 / 1.25));
    }

    #[test]
    fn ground_truth_oracle_bisects() {
        let s = scene(16, 1, 2);
        let gt = s.reference.depth.clone().unwrap();
        let r = interval().half_width().abs();
        let mut prev_max = f64::INFINITY;
        for t in 1..=10 {
            let out = run(&s, interval(), &cfg(t), &mut GroundTruthOracle, &UniformWeights).unwrap();
            let mut max_err: f64 = 0.0;
            for (h, d) in out.hypothesis.values().data().iter().zip(gt.data()) {
                let e = (h - 1.0 / d).abs();
                assert!(e <= r / 2f64.powi(t as i32) + 1e-9, "t={t} err={e}");
                max_err = max_err.max(e);
            }
            assert!(max_err <= prev_max);
            prev_max = max_err;
        }
    }

    #[test]
    fn identical_sources_match_single_source() {
        let one = run(&scene(12, 1, 3), interval(), &cfg(6), &mut GroundTruthOracle, &UniformWeights).unwrap();
        let three = run(&scene(12, 3, 3), interval(), &cfg(6), &mut GroundTruthOracle, &UniformWeights).unwrap();
        assert_eq!(one.depth, three.depth);
    }

    #[test]
    fn worker_count_does_not_change_output() {
        let s = scene(16, 3, 4);
        let mut outs = Vec::new();
        for workers in [1, 4] {
            let c = EngineConfig {
                iterations: 5,
                workers,
                record_trace: true,
            };
            outs.push(run(&s, interval(), &c, &mut GroundTruthOracle, &EntropyWeights).unwrap());
        }
        assert_eq!(outs[0].depth, outs[1].depth);
        let trace = outs[0].trace.as_ref().unwrap();
        assert_eq!(trace.steps.len(), 5);
        assert!(trace.steps.iter().all(|s| s.sources.len() == 3));
        assert_eq!(&trace.steps[4].fused, outs[0].hypothesis.values());
    }

    #[test]
    fn oracle_errors_carry_context() {
        let err = run(&scene(8, 2, 5), interval(), &cfg(3), &mut Failing, &UniformWeights).unwrap_err();
        match err {
            Error::Oracle {
                iteration,
                source_index,
                ..
            } => assert_eq!((iteration, source_index), (0, 1)),
            other => panic!("unexpected {other}"),
        }
        assert!(run(&scene(8, 1, 5), interval(), &cfg(0), &mut GroundTruthOracle, &UniformWeights).is_err());
    }
}
