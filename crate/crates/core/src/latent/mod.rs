//! Latent-space side of the pipeline: projecting observations into a
//! generator's latent space, fitting attribute directions and editing
//! latents along them.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

mod attribute;
mod image;
mod project;
mod toys;

pub use attribute::{
    age_attribute, health_attribute, manipulate, manipulation_sweep, single_dim_attribute,
    Attribute, AttributeMetadata, AttributeName, AGE_RIDGE,
};
pub use image::{render_pgm, square_side};
pub use project::{project, Projection, ProjectionConfig};
pub use toys::{
    FeatureExtractor, Generator, IdentityExtractor, IdentityGenerator, LinearExtractor,
    LinearGenerator, MlpGenerator, ToyGenerator,
};

pub const DEFAULT_LATENT_DIM: usize = 512;

/// One line of a latent file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentVector {
    pub id: String,
    pub z: Vec<f64>,
}

impl LatentVector {
    pub fn new(id: impl Into<String>, z: Vec<f64>) -> Result<Self> {
        if let Some(index) = z.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                index,
                context: "latent vector".into(),
            });
        }
        Ok(Self { id: id.into(), z })
    }
}

/// Coordinatewise mean.
pub fn mean_latent<Z: AsRef<[f64]>>(latents: &[Z]) -> Result<Vec<f64>> {
    let first = latents
        .first()
        .ok_or_else(|| Error::invalid("mean of an empty latent set"))?
        .as_ref();
    let mut sum = vec![0.0; first.len()];
    for (i, z) in latents.iter().enumerate() {
        let z = z.as_ref();
        if z.len() != sum.len() {
            return Err(Error::dim(format!(
                "latent {i} has length {}, expected {}",
                z.len(),
                sum.len()
            )));
        }
        sum.iter_mut().zip(z).for_each(|(s, v)| *s += v);
    }
    let n = latents.len() as f64;
    Ok(sum.into_iter().map(|s| s / n).collect())
}

/// Parses one `{"id": ..., "z": [...]}` object per non-blank line and checks
/// that every vector has the same length.
pub fn read_latents(path: &Path) -> Result<Vec<LatentVector>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let label = path.to_path_buf();
    let mut out: Vec<LatentVector> = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: label.clone(),
            row: i + 1,
            message,
        };
        let raw: LatentVector =
            serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        let v = LatentVector::new(raw.id, raw.z).map_err(|e| parse_err(e.to_string()))?;
        if let Some(first) = out.first() {
            if first.z.len() != v.z.len() {
                return Err(parse_err(format!(
                    "latent length {} differs from {}",
                    v.z.len(),
                    first.z.len()
                )));
            }
        }
        out.push(v);
    }
    if out.is_empty() {
        return Err(Error::NoRecords { path: label });
    }
    Ok(out)
}

pub fn write_latents<W: Write>(mut w: W, latents: &[LatentVector]) -> Result<()> {
    for v in latents {
        serde_json::to_writer(&mut w, v)?;
        w.write_all(b"\n")
            .map_err(|e| Error::io("<latent output>", e))?;
    }
    Ok(())
}
