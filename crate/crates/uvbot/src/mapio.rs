//! Prerecorded maps: binary PGM (P5) images plus the usual key/value
//! metadata file (`image`, `resolution`, `origin`, thresholds, `negate`).

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use uvbot_core::world::{Thresholds, WorldError};
use uvbot_core::{Cell, OccupancyGrid, Pose2D};

#[derive(Debug, thiserror::Error)]
pub enum MapError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("malformed PGM header: {0}")]
    MalformedHeader(String),
    #[error("PGM declares {expected} pixel bytes but holds {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("resolution must be positive, got {0}")]
    NonPositiveResolution(f64),
    #[error("{path}: {source}")]
    Metadata {
        path: PathBuf,
        #[source]
        source: serde_yaml::Error,
    },
    #[error("metadata names no image and none was given")]
    NoImage,
    #[error(transparent)]
    Grid(#[from] WorldError),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> MapError + '_ {
    move |source| MapError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapMeta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<PathBuf>,
    pub resolution: f64,
    /// World pose of the lower-left pixel corner: `[x, y, theta]`.
    pub origin: [f64; 3],
    #[serde(default = "default_occupied")]
    pub occupied_thresh: f64,
    #[serde(default = "default_free")]
    pub free_thresh: f64,
    #[serde(default, with = "int_bool")]
    pub negate: bool,
}

fn default_occupied() -> f64 {
    Thresholds::default().occupied
}

fn default_free() -> f64 {
    Thresholds::default().free
}

/// Map-server files write `negate: 0`; accept that as well as booleans.
mod int_bool {
    use serde::{Deserialize, Deserializer, Serializer};

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Flag {
        Bool(bool),
        Int(i64),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
        Ok(match Flag::deserialize(d)? {
            Flag::Bool(b) => b,
            Flag::Int(i) => i != 0,
        })
    }

    pub fn serialize<S: Serializer>(v: &bool, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_i64(i64::from(*v))
    }
}

impl MapMeta {
    pub fn parse(text: &str) -> Result<Self, serde_yaml::Error> {
        serde_yaml::from_str(text)
    }

    pub fn load(path: &Path) -> Result<Self, MapError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Self::parse(&text).map_err(|source| MapError::Metadata { path: path.to_path_buf(), source })
    }

    pub fn thresholds(&self) -> Thresholds {
        Thresholds { occupied: self.occupied_thresh, free: self.free_thresh, negate: self.negate }
    }

    pub fn origin_pose(&self) -> Pose2D {
        Pose2D::new(self.origin[0], self.origin[1], self.origin[2])
    }
}

/// A decoded grayscale image, rows top to bottom, scaled to 8 bits.
#[derive(Debug, Clone, PartialEq)]
pub struct Pgm {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

pub fn parse_pgm(bytes: &[u8]) -> Result<Pgm, MapError> {
    let bad = |m: &str| MapError::MalformedHeader(m.to_string());
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(bad("missing P5 magic"));
    }
    let mut pos = 2;
    let mut field = |name: &str| -> Result<usize, MapError> {
        // Whitespace and comments may separate header fields.
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|b| *b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(MapError::MalformedHeader(format!("expected {name}")));
        }
        std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| MapError::MalformedHeader(format!("{name} out of range")))
    };
    let width = field("width")?;
    let height = field("height")?;
    let maxval = field("maxval")?;
    if width == 0 || height == 0 {
        return Err(bad("zero-sized image"));
    }
    if !(1..=65535).contains(&maxval) {
        return Err(bad("maxval must be in 1..=65535"));
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(bad("header must end in a single whitespace byte"));
    }
    let data = &bytes[pos + 1..];
    let depth = if maxval > 255 { 2 } else { 1 };
    let expected =
        width.checked_mul(height).and_then(|n| n.checked_mul(depth)).ok_or_else(|| bad("image too large"))?;
    if data.len() != expected {
        return Err(MapError::DimensionMismatch { expected, actual: data.len() });
    }
    let scale = |v: usize| ((v.min(maxval) * 255 + maxval / 2) / maxval) as u8;
    let pixels = if depth == 1 {
        data.iter().map(|&b| scale(b as usize)).collect()
    } else {
        data.chunks_exact(2).map(|c| scale(usize::from(u16::from_be_bytes([c[0], c[1]])))).collect()
    };
    Ok(Pgm { width, height, pixels })
}

pub fn encode_pgm(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

pub fn grid_from_pgm(pgm: &Pgm, meta: &MapMeta) -> Result<OccupancyGrid, MapError> {
    if !(meta.resolution > 0.0) || !meta.resolution.is_finite() {
        return Err(MapError::NonPositiveResolution(meta.resolution));
    }
    Ok(OccupancyGrid::from_image(
        pgm.width,
        pgm.height,
        &pgm.pixels,
        meta.resolution,
        meta.origin_pose(),
        &meta.thresholds(),
    )?)
}

pub fn load_map(pgm_path: &Path, meta_path: &Path) -> Result<OccupancyGrid, MapError> {
    let meta = MapMeta::load(meta_path)?;
    let bytes = fs::read(pgm_path).map_err(io_err(pgm_path))?;
    grid_from_pgm(&parse_pgm(&bytes)?, &meta)
}

/// Loads the map whose metadata names its image, relative to the metadata file.
pub fn load_map_meta(meta_path: &Path) -> Result<OccupancyGrid, MapError> {
    let meta = MapMeta::load(meta_path)?;
    let image = meta.image.as_ref().ok_or(MapError::NoImage)?;
    let pgm_path = meta_path.parent().unwrap_or(Path::new(".")).join(image);
    let bytes = fs::read(&pgm_path).map_err(io_err(&pgm_path))?;
    grid_from_pgm(&parse_pgm(&bytes)?, &meta)
}

/// Image row order, map-server shades: 0 occupied, 254 free, 205 unknown.
pub fn grid_to_pixels(grid: &OccupancyGrid) -> Vec<u8> {
    let (w, h) = (grid.width(), grid.height());
    let mut pixels = Vec::with_capacity(w * h);
    for image_row in 0..h {
        let row = h - 1 - image_row;
        pixels.extend(grid.cells()[row * w..(row + 1) * w].iter().map(|c| match c {
            Cell::Free => 254,
            Cell::Occupied => 0,
            Cell::Unknown => 205,
        }));
    }
    pixels
}

/// Writes `<stem>.pgm` and `<stem>.yaml` next to each other and returns the
/// metadata path.
pub fn save_map(grid: &OccupancyGrid, dir: &Path, stem: &str) -> Result<PathBuf, MapError> {
    let pgm = dir.join(format!("{stem}.pgm"));
    let yaml = dir.join(format!("{stem}.yaml"));
    fs::write(&pgm, encode_pgm(grid.width(), grid.height(), &grid_to_pixels(grid))).map_err(io_err(&pgm))?;
    let o = grid.origin();
    let meta = MapMeta {
        image: Some(PathBuf::from(format!("{stem}.pgm"))),
        resolution: grid.resolution(),
        origin: [o.x, o.y, o.theta()],
        occupied_thresh: default_occupied(),
        free_thresh: default_free(),
        negate: false,
    };
    let text = serde_yaml::to_string(&meta).expect("metadata always serializes");
    fs::write(&yaml, text).map_err(io_err(&yaml))?;
    Ok(yaml)
}
