use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::DcNetwork;
use crate::error::{GicError, Result};

/// Mean Earth radius used by the equirectangular displacement, km.
pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// Geomagnetic disturbance driving the GIC circuit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GmdScenario {
    /// Uniform surface field: magnitude in V/km, direction as a compass bearing
    /// in degrees (0 = field points north, 90 = east).
    Field { magnitude: f64, direction_deg: f64 },
    /// Induced series voltage per DC edge label, volts. Missing edges get 0.
    ExplicitXi(BTreeMap<i64, f64>),
}

impl GmdScenario {
    pub fn field(magnitude: f64, direction_deg: f64) -> Self {
        GmdScenario::Field { magnitude, direction_deg }
    }

    /// Reads an explicit-ξ CSV with header `edge,xi` (edge = DC edge label).
    pub fn from_xi_csv(path: impl AsRef<std::path::Path>) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            edge: i64,
            xi: f64,
        }
        let mut rdr = csv::Reader::from_path(path)?;
        let mut map = BTreeMap::new();
        for row in rdr.deserialize() {
            let row: Row = row?;
            if map.insert(row.edge, row.xi).is_some() {
                return Err(GicError::validation(format!("duplicate xi entry for edge {}", row.edge)));
            }
        }
        Ok(GmdScenario::ExplicitXi(map))
    }

    pub fn magnitude(&self) -> Option<f64> {
        match self {
            GmdScenario::Field { magnitude, .. } => Some(*magnitude),
            GmdScenario::ExplicitXi(_) => None,
        }
    }
}

/// Induced voltage source per DC edge, volts, indexed by dense edge id.
///
/// For a field scenario a line's source is `E_north * dy + E_east * dx` where
/// `(dx, dy)` is the east/north displacement from its `from` to its `to` node in
/// km (equirectangular, evaluated at the mean latitude of the two ends).
/// Transformer windings always get 0.
pub fn materialize_xi(dc: &DcNetwork, scenario: &GmdScenario) -> Result<Vec<f64>> {
    let mut xi = vec![0.0; dc.n_edges()];
    match scenario {
        GmdScenario::Field { magnitude, direction_deg } => {
            if !magnitude.is_finite() || !direction_deg.is_finite() {
                return Err(GicError::validation("non-finite E-field"));
            }
            let bearing = direction_deg.to_radians();
            let e_north = magnitude * bearing.cos();
            let e_east = magnitude * bearing.sin();
            for e in dc.edges.iter().filter(|e| !e.is_transformer_winding()) {
                let (from, to) = (&dc.nodes[e.from], &dc.nodes[e.to]);
                let ((lat1, lon1), (lat2, lon2)) = match (from.coords, to.coords) {
                    (Some(a), Some(b)) => (a, b),
                    _ => {
                        return Err(GicError::validation(format!(
                            "field scenario needs coordinates at both ends of dc edge {}",
                            e.label
                        )))
                    }
                };
                let mean_lat = (0.5 * (lat1 + lat2)).to_radians();
                let dy = EARTH_RADIUS_KM * (lat2 - lat1).to_radians();
                let dx = EARTH_RADIUS_KM * mean_lat.cos() * (lon2 - lon1).to_radians();
                xi[e.id] = e_north * dy + e_east * dx;
            }
        }
        GmdScenario::ExplicitXi(map) => {
            for (&label, &v) in map {
                let e = dc.edges.iter().find(|e| e.label == label).ok_or_else(|| {
                    GicError::validation(format!("explicit xi names unknown dc edge {label}"))
                })?;
                if !v.is_finite() {
                    return Err(GicError::validation(format!("explicit xi on edge {label} is not finite")));
                }
                if e.is_transformer_winding() && v != 0.0 {
                    return Err(GicError::validation(format!(
                        "explicit xi on transformer winding edge {label} must be zero"
                    )));
                }
                xi[e.id] = v;
            }
        }
    }
    Ok(xi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundled;
    use crate::netmodel::{derive_dc_network, DcEdge, DcNode, DcNodeKind, DcRole};

    fn east_line(km: f64) -> DcNetwork {
        // At the equator one degree of longitude is R*pi/180 km.
        let dlon = (km / EARTH_RADIUS_KM).to_degrees();
        DcNetwork {
            nodes: vec![
                DcNode { id: 0, kind: DcNodeKind::Substation(0), a_ground: 1.0, coords: Some((0.0, 0.0)) },
                DcNode { id: 1, kind: DcNodeKind::Substation(1), a_ground: 1.0, coords: Some((0.0, dlon)) },
            ],
            edges: vec![DcEdge { id: 0, label: 1, from: 0, to: 1, gamma: 1.0, source_branch: 0, role: DcRole::Line }],
            substation_nodes: vec![0, 1],
        }
    }

    #[test]
    fn due_east_line_at_45_degrees() {
        let xi = materialize_xi(&east_line(100.0), &GmdScenario::field(10.0, 45.0)).unwrap();
        assert!((xi[0] - 1000.0 * 45f64.to_radians().cos()).abs() < 1e-9);
        assert!((xi[0] - 707.106_781_186_547_5).abs() < 1e-6);
    }

    #[test]
    fn zero_field_gives_zero_sources() {
        let dc = derive_dc_network(&bundled::case12()).unwrap();
        let xi = materialize_xi(&dc, &GmdScenario::field(0.0, 45.0)).unwrap();
        assert!(xi.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn windings_always_zero() {
        let dc = derive_dc_network(&bundled::case12()).unwrap();
        let xi = materialize_xi(&dc, &GmdScenario::field(20.0, 30.0)).unwrap();
        for e in dc.edges.iter().filter(|e| e.is_transformer_winding()) {
            assert_eq!(xi[e.id], 0.0);
        }
        assert!(xi.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn explicit_nonzero_on_winding_is_rejected() {
        let dc = derive_dc_network(&bundled::case5()).unwrap();
        let w = dc.edges.iter().find(|e| e.is_transformer_winding()).unwrap();
        let sc = GmdScenario::ExplicitXi([(w.label, 3.0)].into());
        assert!(matches!(materialize_xi(&dc, &sc), Err(GicError::Validation(_))));
        let ok = GmdScenario::ExplicitXi([(w.label, 0.0)].into());
        assert!(materialize_xi(&dc, &ok).is_ok());
    }

    #[test]
    fn missing_coordinates_rejected_for_field() {
        let mut dc = east_line(10.0);
        dc.nodes[1].coords = None;
        assert!(materialize_xi(&dc, &GmdScenario::field(1.0, 0.0)).is_err());
        let sc = GmdScenario::ExplicitXi([(1, 5.0)].into());
        assert_eq!(materialize_xi(&dc, &sc).unwrap(), vec![5.0]);
    }

    #[test]
    fn xi_is_linear_in_field_magnitude() {
        let dc = derive_dc_network(&bundled::case12()).unwrap();
        for dir in [0.0, 45.0, 133.0] {
            let a = materialize_xi(&dc, &GmdScenario::field(7.0, dir)).unwrap();
            let b = materialize_xi(&dc, &GmdScenario::field(14.0, dir)).unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert!((2.0 * x - y).abs() <= 1e-12 * y.abs().max(1.0));
            }
        }
    }
}
