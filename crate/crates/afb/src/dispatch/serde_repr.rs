//! JSON representations of dispatch problems (matrices as nested arrays) so
//! generated instances can be persisted and replayed.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::scheduler::AgentClass;

use super::{BatteryAgent, BuildingAgent, DispatchProblem};

fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

fn rows_to_matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j])
}

#[derive(Debug, Serialize, Deserialize)]
struct BuildingRepr {
    class: AgentClass,
    a: Vec<Vec<f64>>,
    b_u: Vec<Vec<f64>>,
    b_w: Vec<Vec<f64>>,
    c: Vec<Vec<f64>>,
    x_init: Vec<f64>,
    horizon: usize,
    u_min: f64,
    u_max: f64,
    y_ref: Vec<f64>,
    temp_penalty: f64,
    band: (f64, f64),
    band_penalty: f64,
    cop: f64,
    baseline: Vec<f64>,
    w_profile: Vec<Vec<f64>>,
    zone_share: Vec<f64>,
}

impl From<&BuildingAgent> for BuildingRepr {
    fn from(b: &BuildingAgent) -> Self {
        Self {
            class: b.class,
            a: matrix_to_rows(&b.a),
            b_u: matrix_to_rows(&b.b_u),
            b_w: matrix_to_rows(&b.b_w),
            c: matrix_to_rows(&b.c),
            x_init: b.x_init.as_slice().to_vec(),
            horizon: b.horizon,
            u_min: b.u_min,
            u_max: b.u_max,
            y_ref: b.y_ref.clone(),
            temp_penalty: b.temp_penalty,
            band: b.band,
            band_penalty: b.band_penalty,
            cop: b.cop,
            baseline: b.baseline.clone(),
            w_profile: b.w_profile.iter().map(|w| w.as_slice().to_vec()).collect(),
            zone_share: b.zone_share.clone(),
        }
    }
}

impl From<BuildingRepr> for BuildingAgent {
    fn from(r: BuildingRepr) -> Self {
        Self {
            class: r.class,
            a: rows_to_matrix(&r.a),
            b_u: rows_to_matrix(&r.b_u),
            b_w: rows_to_matrix(&r.b_w),
            c: rows_to_matrix(&r.c),
            x_init: DVector::from_vec(r.x_init),
            horizon: r.horizon,
            u_min: r.u_min,
            u_max: r.u_max,
            y_ref: r.y_ref,
            temp_penalty: r.temp_penalty,
            band: r.band,
            band_penalty: r.band_penalty,
            cop: r.cop,
            baseline: r.baseline,
            w_profile: r.w_profile.into_iter().map(DVector::from_vec).collect(),
            zone_share: r.zone_share,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ProblemRepr {
    battery: BatteryAgent,
    buildings: Vec<BuildingRepr>,
    r: Vec<f64>,
    alpha1: f64,
    alpha2: f64,
}

impl DispatchProblem {
    pub fn to_json(&self) -> Result<String> {
        let repr = ProblemRepr {
            battery: self.battery.clone(),
            buildings: self.buildings.iter().map(BuildingRepr::from).collect(),
            r: self.r.clone(),
            alpha1: self.alpha1,
            alpha2: self.alpha2,
        };
        serde_json::to_string_pretty(&repr)
            .map_err(|e| crate::error::Error::Config(format!("problem serialization failed: {e}")))
    }

    pub fn from_json(text: &str) -> Result<Arc<Self>> {
        let repr: ProblemRepr = serde_json::from_str(text)
            .map_err(|e| crate::error::Error::Config(format!("problem parse failed: {e}")))?;
        let buildings = repr.buildings.into_iter().map(BuildingAgent::from).collect();
        Ok(Arc::new(Self::new(repr.battery, buildings, repr.r, repr.alpha1, repr.alpha2)?))
    }
}

#[cfg(test)]
mod tests {
    use crate::dispatch::desk_problem;

    #[test]
    fn problem_json_roundtrip() {
        let p = desk_problem(2, 6, 1e-2, 1e4, 5).unwrap();
        let json = p.to_json().unwrap();
        let q = crate::dispatch::DispatchProblem::from_json(&json).unwrap();
        assert_eq!(p.r, q.r);
        assert_eq!(p.buildings, q.buildings);
        assert_eq!(p.battery, q.battery);
        assert_eq!(p.to_json().unwrap(), q.to_json().unwrap());
    }
}
