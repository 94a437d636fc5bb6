//! Posed views and the bundle handed to the engine.

use crate::error::{Error, Result};
use crate::geometry::Camera;
use crate::grid::{Grid, Image};

/// An image with its camera and, optionally, a ground-truth depth map
/// (`NaN` marks pixels without ground truth).
#[derive(Debug, Clone)]
pub struct View {
    pub image: Image,
    pub camera: Camera,
    pub depth: Option<Grid<f64>>,
}

impl View {
    pub fn new(image: Image, camera: Camera, depth: Option<Grid<f64>>) -> Result<Self> {
        let (w, h) = (camera.width(), camera.height());
        if image.width() != w || image.height() != h {
            return Err(Error::mismatch("view image vs camera", &[w, h], &[image.width(), image.height()]));
        }
        if let Some(d) = &depth {
            d.ensure_dims(w, h, "view depth vs camera")?;
        }
        Ok(Self { image, camera, depth })
    }

    pub fn width(&self) -> usize {
        self.camera.width()
    }

    pub fn height(&self) -> usize {
        self.camera.height()
    }

    /// `true` where a finite, positive ground-truth depth exists.
    pub fn validity(&self) -> Option<Grid<bool>> {
        self.depth
            .as_ref()
            .map(|d| d.map(|&v| v.is_finite() && v > 0.0))
    }
}

/// The `count` views whose camera centres are nearest to that of view
/// `reference`, nearest first; ties go to the lower index.
pub fn select_sources(views: &[View], reference: usize, count: usize) -> Result<Vec<usize>> {
    let r = views
        .get(reference)
        .ok_or_else(|| Error::Config(format!("view index {reference} out of range")))?
        .camera
        .center();
    let mut others: Vec<(f64, usize)> = views
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != reference)
        .map(|(i, v)| ((v.camera.center() - r).norm(), i))
        .collect();
    others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(others.into_iter().take(count).map(|(_, i)| i).collect())
}

/// Reference view plus the source views used to infer its depth.
#[derive(Debug, Clone)]
pub struct SceneBundle {
    pub reference: View,
    pub sources: Vec<View>,
}

impl SceneBundle {
    pub fn new(reference: View, sources: Vec<View>) -> Result<Self> {
        if sources.is_empty() {
            return Err(Error::EmptyInput("source views"));
        }
        Ok(Self { reference, sources })
    }

    pub fn width(&self) -> usize {
        self.reference.width()
    }

    pub fn height(&self) -> usize {
        self.reference.height()
    }

    /// All views, reference first.
    pub fn views(&self) -> impl Iterator<Item = &View> {
        std::iter::once(&self.reference).chain(self.sources.iter())
    }

    /// Bundle with view `reference` as reference and `sources` (indices into
    /// `views`) as sources.
    pub fn from_views(views: &[View], reference: usize, sources: &[usize]) -> Result<Self> {
        let get = |i: usize| {
            views
                .get(i)
                .cloned()
                .ok_or_else(|| Error::Config(format!("view index {i} out of range")))
        };
        Self::new(get(reference)?, sources.iter().map(|&i| get(i)).collect::<Result<_>>()?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenegen::presets;

    #[test]
    fn sources_are_nearest_first() {
        let views = presets::plane(8).render_views().unwrap();
        // centres on the x axis: 0, +b, -b, +2b, -2b
        assert_eq!(select_sources(&views, 0, 4).unwrap(), vec![1, 2, 3, 4]);
        assert_eq!(select_sources(&views, 1, 2).unwrap(), vec![0, 3]);
        assert_eq!(select_sources(&views, 4, 10).unwrap(), vec![2, 0, 1, 3]);
        assert!(select_sources(&views, 5, 1).is_err());
    }
}
