//! Per-`h` flow recovery errors against the a priori flux bounds.

use std::time::Instant;

use serde::Serialize;

use super::{par_map, Check, ScenarioConfig, ScenarioReport};
use crate::domain::{build_box_mesh, DomainDesc};
use crate::error::{Error, Result};
use crate::flow::{det_residual_ladder, fitted_order, recovery_field, DivFreeField, FLOW_REGION_FACTOR};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowRow {
    pub h: f64,
    pub substeps: usize,
    pub det_residual: f64,
    pub sup_err_v: f64,
    pub bound_flux2: f64,
    pub sup_err_gradv: f64,
    pub bound_flux4: f64,
}

/// Substep counts of the order fit.
pub const ORDER_LADDER: [usize; 5] = [4, 8, 16, 32, 64];

/// Recovery of `curl A` for the configured potential at every `h`, and the
/// RK4 order fit at the first `h`.
pub fn run_flow(cfg: &ScenarioConfig) -> Result<ScenarioReport> {
    cfg.validate()?;
    let DomainDesc::Box(b) = cfg.domain else {
        return Err(Error::Config("the flow sweep needs a box domain".into()));
    };
    let mesh = build_box_mesh(&b, cfg.mesh_n)?;
    let v = DivFreeField::curl_of(cfg.params.potential.clone());
    let substeps = cfg.params.substeps;
    let out = par_map(&cfg.h_list, cfg.workers, |&h| -> Result<(FlowRow, f64)> {
        let t = Instant::now();
        let r = recovery_field(&v, h, substeps, &mesh)?.report;
        let row = FlowRow {
            h,
            substeps,
            det_residual: r.det_residual,
            sup_err_v: r.sup_err_v,
            bound_flux2: r.bound_flux2,
            sup_err_gradv: r.sup_err_gradv,
            bound_flux4: r.bound_flux4,
        };
        Ok((row, t.elapsed().as_secs_f64()))
    });
    let mut rows = Vec::new();
    let mut clock = Vec::new();
    for r in out {
        let (row, s) = r?;
        rows.push(row);
        clock.push(s);
    }
    let points: Vec<_> = mesh.qps().map(|qp| mesh.qp_position(qp)).collect();
    let region = b.inflated(FLOW_REGION_FACTOR);
    let ladder = det_residual_ladder(&v, cfg.h_list[0], &ORDER_LADDER, &points, &region)?;
    let order = fitted_order(&ladder);
    let det_max = rows.iter().map(|r| r.det_residual).fold(0.0, f64::max);
    let checks = vec![
        Check::new("det_residual", det_max <= cfg.params.det_tol, format!("max {det_max:e} <= {:e}", cfg.params.det_tol)),
        Check::new("flux2", rows.iter().all(|r| r.sup_err_v <= r.bound_flux2), "sup |v_h - v| within bound".into()),
        Check::new(
            "flux4",
            rows.iter().all(|r| r.bound_flux4.is_nan() || r.sup_err_gradv <= r.bound_flux4),
            "sup |∇v_h - ∇v| within bound".into(),
        ),
        Check::new("rk4_order", order.is_some_and(|o| o >= 3.8), format!("fitted order {order:?} over {ladder:?}")),
    ];
    let summary = serde_json::json!({ "ladder": ladder, "fitted_order": order });
    ScenarioReport::new("flow", &rows, &summary, checks, clock)
}
