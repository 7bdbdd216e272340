//! Reasoning-trace embedding analysis: embed each sample's reasoning text,
//! project with exact t-SNE, and measure how well classes separate.

mod error;
mod metrics;
mod plot;
mod traces;
mod tsne;

use std::fmt::Write as _;
use std::path::Path;

use maric_core::backend::Backend;

pub use error::AtlasError;
pub use metrics::silhouette;
pub use plot::{emit_scatter, read_scatter_csv, render_csv, render_svg, write_kl_series, ScatterPoint};
pub use traces::{check_vectors, embed_traces, extract_traces, traces_from_transcripts, EmbeddedTrace, TraceCorpus};
pub use tsne::{
    conditional_probabilities, cost, gradient, initial_layout, joint_probabilities, kl_divergence,
    kl_window_violations, l2_normalize, perplexity_at, perplexity_calibration, q_matrix, squared_distances, tsne,
    tsne_from_p, TsneConfig, TsneOutput, CALIBRATION_TOLERANCE, MAX_BISECTION_STEPS,
};

pub const SCATTER_SVG: &str = "scatter.svg";
pub const SCATTER_CSV: &str = "scatter.csv";
pub const KL_SERIES_CSV: &str = "kl_series.csv";
pub const SILHOUETTE_TXT: &str = "silhouette.txt";

#[derive(Debug, Clone)]
pub struct AtlasOptions {
    pub embed_model: String,
    pub embed_batch: usize,
    pub tsne: TsneConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AtlasReport {
    pub points: usize,
    pub skipped: usize,
    pub dimension: usize,
    /// Silhouette of the 2-D layout under true labels.
    pub silhouette_2d: f64,
    /// Silhouette of the normalized embeddings themselves.
    pub silhouette_embedding: f64,
    pub final_kl: f64,
    pub kl_window_violations: usize,
}

impl AtlasReport {
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "points\t{}", self.points);
        let _ = writeln!(s, "skipped_empty_reasoning\t{}", self.skipped);
        let _ = writeln!(s, "embedding_dimension\t{}", self.dimension);
        let _ = writeln!(s, "silhouette_2d\t{:.4}", self.silhouette_2d);
        let _ = writeln!(s, "silhouette_embedding\t{:.4}", self.silhouette_embedding);
        let _ = writeln!(s, "final_kl\t{:.6}", self.final_kl);
        let _ = writeln!(s, "kl_window_violations\t{}", self.kl_window_violations);
        s
    }
}

/// Embeds and projects the traces, then writes scatter.svg, scatter.csv,
/// kl_series.csv and silhouette.txt under `out_dir`.
pub async fn analyze_corpus(
    mut corpus: TraceCorpus,
    backend: &dyn Backend,
    options: &AtlasOptions,
    out_dir: &Path,
) -> Result<AtlasReport, AtlasError> {
    corpus.traces.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    embed_traces(backend, &options.embed_model, &mut corpus, options.embed_batch).await?;
    let vectors: Vec<Vec<f64>> = corpus
        .traces
        .iter()
        .map(|t| t.vector.clone().expect("embedded above"))
        .collect();
    let dimension = check_vectors(&vectors)?;
    let normalized = l2_normalize(&vectors);
    let out = tsne(&normalized, &options.tsne)?;
    let labels: Vec<&str> = corpus.traces.iter().map(|t| t.label.as_str()).collect();
    let silhouette_2d = silhouette(&out.coordinates, &labels)?;
    let silhouette_embedding = silhouette(&normalized, &labels)?;
    let violations = kl_window_violations(&out.kl_series, options.tsne.exaggeration_iters, 50, 1e-6);
    if !violations.is_empty() {
        tracing::warn!(windows = ?violations, "KL rose within a 50-iteration window; consider a smaller learning rate");
    }

    std::fs::create_dir_all(out_dir).map_err(error::io_err(out_dir))?;
    let points: Vec<ScatterPoint> = corpus
        .traces
        .iter()
        .zip(&out.coordinates)
        .map(|(t, c)| ScatterPoint {
            sample_id: t.sample_id.clone(),
            label: t.label.clone(),
            x: c[0],
            y: c[1],
        })
        .collect();
    emit_scatter(&points, &out_dir.join(SCATTER_CSV), &out_dir.join(SCATTER_SVG))?;
    write_kl_series(&out_dir.join(KL_SERIES_CSV), &out.kl_series)?;
    let report = AtlasReport {
        points: points.len(),
        skipped: corpus.skipped,
        dimension,
        silhouette_2d,
        silhouette_embedding,
        final_kl: out.final_kl,
        kl_window_violations: violations.len(),
    };
    let path = out_dir.join(SILHOUETTE_TXT);
    std::fs::write(&path, report.render()).map_err(error::io_err(&path))?;
    Ok(report)
}

pub async fn run_atlas(
    transcript_log: &Path,
    backend: &dyn Backend,
    options: &AtlasOptions,
    out_dir: &Path,
) -> Result<AtlasReport, AtlasError> {
    let corpus = extract_traces(transcript_log)?;
    analyze_corpus(corpus, backend, options, out_dir).await
}
