//! Analysis tools: loss-surface curvature and curve export.

mod export;
mod surface;

pub use export::{export_curves, summarize, CurveExport, SummaryRow};
pub use surface::{filter_normalized_direction, loss_surface_curvature, GridConfig, SurfaceGrid};
