//! Weather table ingestion, scaling, windowing and chronological splits.

mod convert;
mod scaler;
mod schema;
mod split;
mod synthetic;
mod table;
mod window;

pub use convert::{convert, Conversion, Layout, KNMI_COLUMNS, KNMI_STATIONS};
pub use scaler::MinMaxScaler;
pub use schema::Schema;
pub use split::{DateRange, HorizonSplits, SplitConfig, SplitPlan, Validation};
pub use synthetic::synthetic_table;
pub use table::{
    content_hash, format_timestamp, load_csv, parse_csv, parse_timestamp, IngestionReport,
    WeatherTable,
};
pub use window::{NormalizedTable, SampleSource, SampleWindow, TensorSamples, WindowSet};
