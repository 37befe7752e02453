//! Pyramidal inverse-compositional patch tracking with a locally scaled
//! (mean-normalized) SSD residual, grid-based corner detection and a
//! forward-backward consistency check.

mod detect;
mod image;
mod pgm;
mod track;

pub use detect::{corner_score, detect_features, Seed};
pub use image::{
    build_pyramid, from_level, to_level, ImageGray, Level, Pyramid, Sampler, MIN_BASE_SIZE,
};
pub use pgm::{read_pgm, write_pgm};
pub use track::{
    lssd_residuals, template_jacobian, template_jacobian_matrix, track_frame, track_one,
    track_patch, PatchPattern, PatchResult, Se2, Template, Track,
};

use std::io::Write;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("bad image size: {0}")]
    Size(String),
    #[error("{path}: {msg}")]
    Pgm { path: String, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowParams {
    pub levels: usize,
    pub max_iters_per_level: usize,
    /// Update norm (translation plus rotation times patch radius, in base
    /// pixels) below which a level is converged.
    pub convergence_px: f64,
    /// Forward-backward return distance above which a track is dropped.
    pub fb_threshold: f64,
    pub grid_cell: usize,
    pub corner_threshold: f64,
    /// Keep detections this far from the border.
    pub border: usize,
}

impl Default for FlowParams {
    fn default() -> Self {
        Self {
            levels: 4,
            max_iters_per_level: 30,
            convergence_px: 1e-3,
            fb_threshold: 0.4,
            grid_cell: 50,
            corner_threshold: 0.01,
            border: 10,
        }
    }
}

/// Frame-to-frame tracker that keeps one feature per grid cell alive.
pub struct FeatureTracker {
    pub params: FlowParams,
    pub pattern: PatchPattern,
    prev: Option<Pyramid>,
    tracks: Vec<Track>,
    next_id: u64,
}

impl FeatureTracker {
    pub fn new(params: FlowParams) -> Self {
        Self {
            params,
            pattern: PatchPattern::pattern52(),
            prev: None,
            tracks: Vec::new(),
            next_id: 0,
        }
    }

    /// Tracks live features into `img`, drops failures, then seeds empty
    /// cells. Returns the live tracks sorted by id.
    pub fn process(&mut self, img: &ImageGray) -> Result<&[Track], FlowError> {
        let pyr = build_pyramid(img, self.params.levels)?;
        if let Some(prev) = &self.prev {
            self.tracks = track_frame(prev, &pyr, &self.tracks, &self.pattern, &self.params)
                .into_iter()
                .filter(|t| t.alive)
                .collect();
        }
        let existing: Vec<_> = self.tracks.iter().map(|t| t.pos()).collect();
        let seeds = detect_features(
            img,
            self.params.grid_cell,
            &existing,
            self.params.corner_threshold,
            self.params.border,
        );
        for s in seeds {
            self.tracks.push(Track::new(self.next_id, s.pos));
            self.next_id += 1;
        }
        self.prev = Some(pyr);
        Ok(&self.tracks)
    }
}

/// Writes `frame_id,track_id,x,y,angle` rows.
pub fn write_tracks_csv<W: Write>(
    out: &mut W,
    frame_id: u64,
    tracks: &[Track],
    header: bool,
) -> std::io::Result<()> {
    if header {
        writeln!(out, "frame_id,track_id,x,y,angle")?;
    }
    for t in tracks.iter().filter(|t| t.alive) {
        writeln!(
            out,
            "{},{},{},{},{}",
            frame_id, t.id, t.warp.t.x, t.warp.t.y, t.warp.angle
        )?;
    }
    Ok(())
}

/// Runs the tracker over every `.pgm` in `dir` (sorted by name) and writes a
/// track CSV.
pub fn track_directory(dir: &Path, out: &Path, params: FlowParams) -> Result<usize, FlowError> {
    let mut files: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "pgm"))
        .collect();
    files.sort();
    let mut tracker = FeatureTracker::new(params);
    let mut w = std::io::BufWriter::new(std::fs::File::create(out)?);
    for (i, f) in files.iter().enumerate() {
        let img = read_pgm(f)?;
        let tracks = tracker.process(&img)?;
        write_tracks_csv(&mut w, i as u64, tracks, i == 0)?;
    }
    w.flush()?;
    Ok(files.len())
}
