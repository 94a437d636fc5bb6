use std::sync::Arc;

use super::{Decision, DecisionOracle, DecisionRequest, SoftMask};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::neural::pipeline::{decide_levels, extract_features, ViewFeatures};
use crate::neural::{Network, Tensor};
use crate::scene::SceneBundle;

/// Learned decisions from the feature pyramid and the decision network.
///
/// [`DecisionOracle::prepare`] caches the pyramid features of every view of
/// the scene; without it features are recomputed on each call.
#[derive(Debug, Clone)]
pub struct NeuralOracle {
    network: Arc<Network>,
    cache: Option<Vec<ViewFeatures>>,
}

impl NeuralOracle {
    pub fn new(network: Arc<Network>) -> Self {
        Self { network, cache: None }
    }

    pub fn network(&self) -> &Arc<Network> {
        &self.network
    }
}

fn to_grid(t: &Tensor) -> Result<Grid<f64>> {
    Grid::from_vec(t.width(), t.height(), t.plane(0).iter().map(|&v| v as f64).collect())
}

impl DecisionOracle for NeuralOracle {
    fn name(&self) -> &'static str {
        "neural"
    }

    fn prepare(&mut self, scene: &SceneBundle) -> Result<()> {
        let features = scene
            .views()
            .map(|v| extract_features(&self.network, &v.image))
            .collect::<Result<Vec<_>>>()?;
        self.cache = Some(features);
        Ok(())
    }

    fn decide(&self, request: &DecisionRequest<'_>) -> Result<Decision> {
        let scene = request.scene;
        let source = scene
            .sources
            .get(request.source)
            .ok_or_else(|| Error::Config(format!("source index {} out of range", request.source)))?;
        let computed;
        let (fr, fs) = match &self.cache {
            Some(c) if c.len() == scene.sources.len() + 1 => (&c[0], &c[request.source + 1]),
            _ => {
                computed = (
                    extract_features(&self.network, &scene.reference.image)?,
                    extract_features(&self.network, &source.image)?,
                );
                (&computed.0, &computed.1)
            }
        };
        let out = decide_levels(
            &self.network,
            &scene.reference.camera,
            &source.camera,
            fr,
            fs,
            request.hypothesis.values(),
        )?;
        let mut grids = out.masks.iter().map(to_grid).collect::<Result<Vec<_>>>()?;
        let full = grids.pop().expect("three levels");
        Ok(Decision {
            mask: SoftMask::new(full, out.valid)?,
            levels: grids,
        })
    }
}
