//! Binary on-disk format for trajectory datasets: a fixed header followed by
//! packed little-endian 64-bit floats, `M x L x (N x amb positions,
//! N x amb velocities)`. Magic bytes "GKD1". Ambient width is 3 on the
//! sphere and 2 on the planar manifolds.

use std::path::Path;

use crate::geometry::{DistanceConvention, Manifold, ManifoldKind, Vec3};
use crate::integrate::{ObservationSet, TrajectoryDataset};
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"GKD1";
pub const VERSION: u32 = 1;

fn push_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn push_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn push_f64(buf: &mut Vec<u8>, v: f64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(Error::InvalidDataset("truncated dataset file".into()));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Serializes the dataset to its byte representation.
pub fn to_bytes(ds: &TrajectoryDataset) -> Result<Vec<u8>> {
    let n = ds.n_agents();
    let l = ds.l_obs();
    let m = ds.m_traj();
    if m == 0 || l == 0 || n == 0 {
        return Err(Error::InvalidDataset("empty dataset".into()));
    }
    let amb = ds.manifold.ambient_dim();
    let mut buf = Vec::with_capacity(64 + m * l * n * amb * 16);
    buf.extend_from_slice(MAGIC);
    push_u32(&mut buf, VERSION);
    buf.push(match ds.manifold.kind {
        ManifoldKind::Euclidean => 0,
        ManifoldKind::Sphere => 1,
        ManifoldKind::PoincareDisk => 2,
    });
    buf.push(match ds.manifold.convention {
        DistanceConvention::PaperFormula => 0,
        DistanceConvention::Factor2 => 1,
    });
    push_u32(&mut buf, ds.manifold.dim as u32);
    push_f64(&mut buf, ds.manifold.radius);
    push_f64(&mut buf, ds.manifold.r_max);
    push_u32(&mut buf, n as u32);
    push_u32(&mut buf, ds.n_types as u32);
    push_u32(&mut buf, l as u32);
    push_u32(&mut buf, m as u32);
    push_f64(&mut buf, ds.t_final);
    push_u64(&mut buf, ds.seed);
    push_u32(&mut buf, amb as u32);
    for &t in &ds.types {
        push_u32(&mut buf, t as u32);
    }
    for &t in &ds.trajectories[0].times {
        push_f64(&mut buf, t);
    }
    for traj in &ds.trajectories {
        debug_assert_eq!(traj.times, ds.trajectories[0].times);
        for (points, vels) in traj.positions.iter().zip(&traj.velocities) {
            for p in points {
                for c in 0..amb {
                    push_f64(&mut buf, p[c]);
                }
            }
            for v in vels {
                for c in 0..amb {
                    push_f64(&mut buf, v[c]);
                }
            }
        }
    }
    Ok(buf)
}

/// Parses a dataset, checking the magic, the version, the exact payload
/// length, and every point's manifold invariants.
pub fn from_bytes(data: &[u8]) -> Result<TrajectoryDataset> {
    let mut rd = Reader { data, pos: 0 };
    if rd.take(4)? != MAGIC {
        return Err(Error::InvalidDataset("bad magic bytes".into()));
    }
    let version = rd.u32()?;
    if version != VERSION {
        return Err(Error::InvalidDataset(format!(
            "unsupported dataset version {version}"
        )));
    }
    let kind = rd.u8()?;
    let convention = match rd.u8()? {
        0 => DistanceConvention::PaperFormula,
        1 => DistanceConvention::Factor2,
        other => {
            return Err(Error::InvalidDataset(format!(
                "unknown distance convention tag {other}"
            )))
        }
    };
    let _dim = rd.u32()?;
    let radius = rd.f64()?;
    let r_max = rd.f64()?;
    let manifold = match kind {
        0 => Manifold::euclidean(r_max)?,
        1 => Manifold::sphere(radius, r_max)?,
        2 => Manifold::poincare(convention, r_max)?,
        other => {
            return Err(Error::InvalidDataset(format!(
                "unknown manifold tag {other}"
            )))
        }
    };
    let n = rd.u32()? as usize;
    let n_types = rd.u32()? as usize;
    let l = rd.u32()? as usize;
    let m = rd.u32()? as usize;
    let t_final = rd.f64()?;
    let seed = rd.u64()?;
    let amb = rd.u32()? as usize;
    if amb != manifold.ambient_dim() {
        return Err(Error::InvalidDataset(format!(
            "ambient width {amb} does not match the manifold"
        )));
    }
    if n == 0 || n_types == 0 || l == 0 || m == 0 {
        return Err(Error::InvalidDataset("empty dataset header".into()));
    }
    let mut types = Vec::with_capacity(n);
    for _ in 0..n {
        let t = rd.u32()? as usize;
        if t >= n_types {
            return Err(Error::InvalidDataset(format!(
                "type label {t} out of range 0..{n_types}"
            )));
        }
        types.push(t);
    }
    let mut times = Vec::with_capacity(l);
    for _ in 0..l {
        times.push(rd.f64()?);
    }
    let expected = rd.pos + m * l * 2 * n * amb * 8;
    if data.len() != expected {
        return Err(Error::InvalidDataset(format!(
            "payload length {} does not match header (expected {expected})",
            data.len()
        )));
    }
    let mut read_vec = |rd: &mut Reader| -> Result<Vec3> {
        let mut p = Vec3::zeros();
        for c in 0..amb {
            p[c] = rd.f64()?;
        }
        Ok(p)
    };
    let mut trajectories = Vec::with_capacity(m);
    for _ in 0..m {
        let mut positions = Vec::with_capacity(l);
        let mut velocities = Vec::with_capacity(l);
        for _ in 0..l {
            let mut pts = Vec::with_capacity(n);
            for _ in 0..n {
                let p = read_vec(&mut rd)?;
                manifold.check_point(&p).map_err(|e| {
                    Error::InvalidDataset(format!("invalid stored point: {e}"))
                })?;
                pts.push(p);
            }
            let mut vels = Vec::with_capacity(n);
            for _ in 0..n {
                vels.push(read_vec(&mut rd)?);
            }
            positions.push(pts);
            velocities.push(vels);
        }
        trajectories.push(ObservationSet {
            times: times.clone(),
            positions,
            velocities,
        });
    }
    Ok(TrajectoryDataset {
        manifold,
        n_types,
        types,
        t_final,
        seed,
        trajectories,
    })
}

pub fn write_dataset(path: &Path, ds: &TrajectoryDataset) -> Result<()> {
    std::fs::write(path, to_bytes(ds)?)?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<TrajectoryDataset> {
    from_bytes(&std::fs::read(path)?)
}
