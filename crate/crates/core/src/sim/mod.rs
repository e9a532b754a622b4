//! Monte Carlo harnesses: model-based scenarios with regenerated
//! populations, and design-based repeated sampling from one fixed population.

mod design_based;
mod metrics;
mod model_based;
mod population;
mod replicate;
mod scenario;

pub use design_based::{run_design_based, DesignMetrics, DesignOptions, DesignTable};
pub use metrics::{median, MetricsTable, PredictorMetrics, RmseMetrics};
pub use model_based::{run_model_based, ModelBasedOptions, ModelBasedReport, ParameterSummary};
pub use population::{srswor, Population, PopulationArea};
pub use replicate::{EstimationOptions, Predictor, RmseEstimator, TauMode};
pub use scenario::{generate_population, GeneratedPopulation, ScenarioConfig, ScenarioKind};
