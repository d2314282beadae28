//! Binary trajectory files with a JSON sidecar.
//!
//! The binary file starts with a 32-byte header: the magic `IPSTRAJ1`, then
//! little-endian `u32` values `M`, `L + 1`, `N`, `d` and an `f64` time step.
//! The states follow as little-endian `f64` in `[m][l][i][dim]` order. The
//! sidecar (`<file>.json`) carries the system description and provenance.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::SystemSpec;
use crate::simulate::{Provenance, TrajectoryData};

pub const MAGIC: &[u8; 8] = b"IPSTRAJ1";
pub const HEADER_LEN: usize = 32;
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sidecar {
    pub schema_version: u32,
    pub spec: SystemSpec,
    pub provenance: Provenance,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Format(format!("{what}={v} does not fit the header")))
}

pub fn encode(data: &TrajectoryData) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * data.states().len());
    out.extend_from_slice(MAGIC);
    for (v, what) in [(data.m(), "M"), (data.steps() + 1, "L+1"), (data.n(), "N"), (data.d(), "d")] {
        out.extend_from_slice(&to_u32(v, what)?.to_le_bytes());
    }
    out.extend_from_slice(&data.dt().to_le_bytes());
    for v in data.states() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Parses a binary image; `spec` supplies everything the header does not
/// store and must agree with it.
pub fn decode(bytes: &[u8], spec: SystemSpec, provenance: Provenance) -> Result<TrajectoryData> {
    if bytes.len() < HEADER_LEN || &bytes[..8] != MAGIC {
        return Err(Error::Format("missing IPSTRAJ1 header".into()));
    }
    let word = |k: usize| u32::from_le_bytes(bytes[8 + 4 * k..12 + 4 * k].try_into().unwrap()) as usize;
    let (m, times, n, d) = (word(0), word(1), word(2), word(3));
    let dt = f64::from_le_bytes(bytes[24..32].try_into().unwrap());
    if times == 0 || (times - 1, n, d) != (spec.steps, spec.n, spec.d) || dt.to_bits() != spec.dt.to_bits() {
        return Err(Error::Format(format!(
            "header (L+1={times}, N={n}, d={d}, dt={dt}) disagrees with the sidecar (L={}, N={}, d={}, dt={})",
            spec.steps, spec.n, spec.d, spec.dt
        )));
    }
    let count = m * times * n * d;
    let body = &bytes[HEADER_LEN..];
    if body.len() != 8 * count {
        return Err(Error::Format(format!("expected {} state bytes, found {}", 8 * count, body.len())));
    }
    let states = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    TrajectoryData::from_states(spec, provenance, m, states).map_err(|e| Error::Format(e.to_string()))
}

/// Writes `path` and its sidecar.
pub fn write_trajectories(path: &Path, data: &TrajectoryData) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&encode(data)?)?;
    w.flush()?;
    let side = Sidecar { schema_version: SCHEMA_VERSION, spec: data.spec.clone(), provenance: data.provenance.clone() };
    let json = serde_json::to_string_pretty(&side).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(sidecar_path(path), json)?;
    Ok(())
}

pub fn read_trajectories(path: &Path) -> Result<TrajectoryData> {
    let json = std::fs::read_to_string(sidecar_path(path))?;
    let side: Sidecar = serde_json::from_str(&json).map_err(|e| Error::Format(format!("sidecar: {e}")))?;
    if side.schema_version != SCHEMA_VERSION {
        return Err(Error::Format(format!("unsupported schema_version {}", side.schema_version)));
    }
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    decode(&bytes, side.spec, side.provenance)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::presets::*;
    use crate::model::{sample_weight_matrix, InitDist};
    use crate::simulate::{add_observation_noise, simulate};

    fn sample() -> TrajectoryData {
        let spec = SystemSpec { n: 4, d: 2, sigma: 1e-2, dt: 1e-4, steps: 6, init: InitDist::UniformBox { lo: 0.0, hi: 1.5 }, seed: 11 };
        let a = sample_weight_matrix(4, 2, 11).unwrap();
        let data = simulate(&spec, &a, &lj_basis_exact(2), &lj_coef_exact(), 5).unwrap();
        add_observation_noise(&data, 1e-3, 4)
    }

    #[test]
    fn header_layout() {
        let data = sample();
        let bytes = encode(&data).unwrap();
        assert_eq!(&bytes[..8], b"IPSTRAJ1");
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 5);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 7);
        assert_eq!(u32::from_le_bytes(bytes[16..20].try_into().unwrap()), 4);
        assert_eq!(u32::from_le_bytes(bytes[20..24].try_into().unwrap()), 2);
        assert_eq!(f64::from_le_bytes(bytes[24..32].try_into().unwrap()), 1e-4);
        assert_eq!(bytes.len(), 32 + 8 * 5 * 7 * 4 * 2);
    }

    #[test]
    fn file_round_trip_is_bit_exact() {
        let data = sample();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traj.bin");
        write_trajectories(&path, &data).unwrap();
        let back = read_trajectories(&path).unwrap();
        assert_eq!(back, data);
        assert!(back.states().iter().zip(data.states()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let data = sample();
        let mut bytes = encode(&data).unwrap();
        assert!(decode(&bytes[..bytes.len() - 1], data.spec.clone(), Provenance::default()).is_err());
        let wrong = SystemSpec { n: 3, ..data.spec.clone() };
        assert!(decode(&bytes, wrong, Provenance::default()).is_err());
        bytes[0] = b'X';
        assert!(matches!(decode(&bytes, data.spec.clone(), Provenance::default()), Err(Error::Format(_))));
    }
}
