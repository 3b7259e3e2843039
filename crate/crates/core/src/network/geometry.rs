use crate::adaptive::choose_from_neighbors;
use crate::cloudio::PointCloud;
use crate::spatial::{ReceptiveField, SpatialIndex};
use crate::{AscnError, Result};

use super::config::{ModelConfig, Neighborhood};

/// Receptive fields of every point of one cloud, plus the chosen sizes.
#[derive(Debug, Clone, PartialEq)]
pub struct StageGeometry {
    pub fields: Vec<ReceptiveField>,
    pub m_star: Vec<usize>,
}

impl StageGeometry {
    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }
}

/// Builds a kd-tree over `cloud` and one receptive field per point, sized
/// by the model's neighbourhood rule and padded to `M_max` slots.
pub fn stage_geometry(cloud: &PointCloud, config: &ModelConfig) -> Result<StageGeometry> {
    if cloud.len() < 2 {
        return Err(AscnError::DegenerateCloud(format!(
            "{} point(s) left; a receptive field needs at least 2",
            cloud.len()
        )));
    }
    let index = SpatialIndex::build(cloud);
    let slots = config.slots();
    let mut fields = Vec::with_capacity(cloud.len());
    let mut m_star = Vec::with_capacity(cloud.len());
    for n in 0..cloud.len() {
        let (neighbors, m) = match config.neighborhood {
            Neighborhood::Adaptive => {
                let neighbors = index.k_nearest(n, config.adaptive.m_max);
                let choice = choose_from_neighbors(cloud, n, &neighbors, &config.adaptive);
                (neighbors, choice.m_star)
            }
            Neighborhood::Fixed(m) => {
                let neighbors = index.k_nearest(n, m);
                let m = neighbors.len();
                (neighbors, m)
            }
        };
        fields.push(ReceptiveField::from_neighbors(cloud, n, &neighbors[..m], slots)?);
        m_star.push(m);
    }
    Ok(StageGeometry { fields, m_star })
}
