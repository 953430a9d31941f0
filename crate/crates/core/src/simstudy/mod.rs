//! Preset validation studies: two generator presets with known signal and
//! missingness structure, reference analyses on complete and complete-case
//! data, a synthetic wide panel with prescribed missingness margins, and a
//! runner that executes the whole pipeline and writes a report bundle.

mod baseline;
mod panel;
mod presets;
mod runner;

pub use baseline::{
    baseline_csv, importance_csv, run_baseline_complete, run_baseline_completecase,
    BaselineCoefficient, BaselineReport,
};
pub use panel::{synthetic_panel, PanelSpec};
pub use presets::{
    generate_study_data, StudyData, StudyKind, StudyScale, StudyTruth,
};
pub use runner::{run_full_study, StudyBundle, StudyConfig};
