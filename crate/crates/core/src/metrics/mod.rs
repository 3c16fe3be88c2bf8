//! Image quality metrics, aggregation and significance testing.

mod quality;
mod report;
mod stats;

pub use quality::{mse, psnr, rmse_percent, ssim, SsimParams, PSNR_CAP_DB};
pub use report::{ImageMetrics, MetricReport, ReportSummary};
pub use stats::{aggregate, wilcoxon_signed_rank, Aggregate, WilcoxonResult, WILCOXON_EXACT_MAX_N};
