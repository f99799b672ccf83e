//! Binary checkpointing of a [`SimState`].
//!
//! Little-endian throughout, with a magic header and format version. The
//! file carries enough to resume bit-exactly: rest mesh with annotations,
//! particle state, per-face deformation state, material parameters, grasp
//! attachments, and simulation time. Full 3x3 deformation gradients are also
//! written for external consumers, but restoration uses the Eulerian column
//! directly so a resumed run is bitwise identical to an uninterrupted one.

use super::{Grasp, MaterialParams, SimState};
use crate::error::{Error, Result};
use crate::garment::{BoundaryLoops, GarmentMesh, Region};
use crate::math::{Mat3, Real, Vec3};
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"GARMSIM\0";
const VERSION: u32 = 1;

fn w_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn w_u64(w: &mut impl Write, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn w_f64(w: &mut impl Write, v: Real) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn w_vec3(w: &mut impl Write, v: &Vec3) -> Result<()> {
    for k in 0..3 {
        w_f64(w, v[k])?;
    }
    Ok(())
}

fn w_mat3(w: &mut impl Write, m: &Mat3) -> Result<()> {
    for r in 0..3 {
        for c in 0..3 {
            w_f64(w, m[(r, c)])?;
        }
    }
    Ok(())
}

fn r_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|_| Error::Checkpoint("truncated file".into()))?;
    Ok(u32::from_le_bytes(b))
}

fn r_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)
        .map_err(|_| Error::Checkpoint("truncated file".into()))?;
    Ok(u64::from_le_bytes(b))
}

fn r_f64(r: &mut impl Read) -> Result<Real> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)
        .map_err(|_| Error::Checkpoint("truncated file".into()))?;
    Ok(Real::from_le_bytes(b))
}

fn r_vec3(r: &mut impl Read) -> Result<Vec3> {
    Ok(Vec3::new(r_f64(r)?, r_f64(r)?, r_f64(r)?))
}

fn r_mat3(r: &mut impl Read) -> Result<Mat3> {
    let mut m = Mat3::zeros();
    for row in 0..3 {
        for c in 0..3 {
            m[(row, c)] = r_f64(r)?;
        }
    }
    Ok(m)
}

fn w_loop(w: &mut impl Write, l: &[u32]) -> Result<()> {
    w_u64(w, l.len() as u64)?;
    for &v in l {
        w_u32(w, v)?;
    }
    Ok(())
}

fn r_loop(r: &mut impl Read, nv: usize) -> Result<Vec<u32>> {
    let n = r_u64(r)? as usize;
    if n > nv {
        return Err(Error::Checkpoint("loop longer than vertex count".into()));
    }
    (0..n).map(|_| r_u32(r)).collect()
}

/// Serialize `state` to `path`.
pub fn save(state: &SimState, path: &Path) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(MAGIC)?;
    w_u32(&mut w, VERSION)?;
    w_f64(&mut w, state.h)?;
    w_f64(&mut w, state.time)?;

    let m = &state.material;
    for v in [
        m.youngs_modulus,
        m.shear_stiffness,
        m.normal_stiffness,
        m.density,
        m.thickness,
        m.mu_cloth,
        m.mu_robot,
        m.damping,
    ] {
        w_f64(&mut w, v)?;
    }
    w_vec3(&mut w, &state.params.gravity)?;
    w_f64(&mut w, state.params.speed_cap)?;

    let nv = state.mesh.vertices.len();
    let nf = state.mesh.faces.len();
    w_u64(&mut w, nv as u64)?;
    w_u64(&mut w, nf as u64)?;
    for v in &state.mesh.vertices {
        w_vec3(&mut w, v)?;
    }
    for f in &state.mesh.faces {
        for &v in f {
            w_u32(&mut w, v)?;
        }
    }
    for r in &state.mesh.regions {
        w.write_all(&[*r as u8])?;
    }
    w_f64(&mut w, state.mesh.thickness)?;
    w_loop(&mut w, &state.mesh.loops.hem)?;
    w_loop(&mut w, &state.mesh.loops.collar)?;
    w_loop(&mut w, &state.mesh.loops.armhole_left)?;
    w_loop(&mut w, &state.mesh.loops.armhole_right)?;

    for v in &state.x {
        w_vec3(&mut w, v)?;
    }
    for v in &state.v {
        w_vec3(&mut w, v)?;
    }
    for c in &state.c {
        w_mat3(&mut w, c)?;
    }
    for m in &state.mass {
        w_f64(&mut w, *m)?;
    }
    for d in &state.d3 {
        w_vec3(&mut w, d)?;
    }
    for f in 0..nf {
        w_mat3(&mut w, &state.face_deformation(f))?;
    }

    for grasp in &state.grasps {
        match grasp {
            None => w.write_all(&[0u8])?,
            Some(g) => {
                w.write_all(&[1u8])?;
                w_u64(&mut w, g.particles.len() as u64)?;
                for (p, l) in g.particles.iter().zip(&g.locals) {
                    w_u32(&mut w, *p)?;
                    w_vec3(&mut w, l)?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Restore a state saved by [`save`].
pub fn load(path: &Path) -> Result<SimState> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Checkpoint("file too short for header".into()))?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic; not a checkpoint file".into()));
    }
    let version = r_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let h = r_f64(&mut r)?;
    let time = r_f64(&mut r)?;
    let material = MaterialParams {
        youngs_modulus: r_f64(&mut r)?,
        shear_stiffness: r_f64(&mut r)?,
        normal_stiffness: r_f64(&mut r)?,
        density: r_f64(&mut r)?,
        thickness: r_f64(&mut r)?,
        mu_cloth: r_f64(&mut r)?,
        mu_robot: r_f64(&mut r)?,
        damping: r_f64(&mut r)?,
    };
    let gravity = r_vec3(&mut r)?;
    let speed_cap = r_f64(&mut r)?;

    let nv = r_u64(&mut r)? as usize;
    let nf = r_u64(&mut r)? as usize;
    if nv == 0 || nf == 0 || nv > 50_000_000 || nf > 100_000_000 {
        return Err(Error::Checkpoint(format!(
            "implausible mesh sizes nv={nv}, nf={nf}"
        )));
    }
    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        vertices.push(r_vec3(&mut r)?);
    }
    let mut faces = Vec::with_capacity(nf);
    for _ in 0..nf {
        let f = [r_u32(&mut r)?, r_u32(&mut r)?, r_u32(&mut r)?];
        if f.iter().any(|&v| v as usize >= nv) {
            return Err(Error::Checkpoint("face references missing vertex".into()));
        }
        faces.push(f);
    }
    let mut regions = Vec::with_capacity(nv);
    for _ in 0..nv {
        let mut b = [0u8; 1];
        r.read_exact(&mut b)
            .map_err(|_| Error::Checkpoint("truncated regions".into()))?;
        regions.push(match b[0] {
            1 => Region::CollarPart,
            2 => Region::HemPart,
            _ => Region::Body,
        });
    }
    let thickness = r_f64(&mut r)?;
    let loops = BoundaryLoops {
        hem: r_loop(&mut r, nv)?,
        collar: r_loop(&mut r, nv)?,
        armhole_left: r_loop(&mut r, nv)?,
        armhole_right: r_loop(&mut r, nv)?,
    };

    let mut mesh = GarmentMesh {
        vertices,
        faces,
        rest_metric: Vec::new(),
        rest_area: Vec::new(),
        regions,
        loops,
        thickness,
    };
    mesh.rebuild_rest_data()
        .map_err(|e| Error::Checkpoint(format!("invalid rest mesh: {e}")))?;

    let mut state = SimState::new(mesh, material, h)
        .map_err(|e| Error::Checkpoint(format!("cannot rebuild state: {e}")))?;
    state.params.gravity = gravity;
    state.params.speed_cap = speed_cap;
    state.time = time;
    for i in 0..nv {
        state.x[i] = r_vec3(&mut r)?;
    }
    for i in 0..nv {
        state.v[i] = r_vec3(&mut r)?;
    }
    for i in 0..nv {
        state.c[i] = r_mat3(&mut r)?;
    }
    for i in 0..nv {
        state.mass[i] = r_f64(&mut r)?;
    }
    for f in 0..nf {
        state.d3[f] = r_vec3(&mut r)?;
    }
    for _ in 0..nf {
        // Advisory full deformation gradients; the Eulerian column above is
        // the authoritative state.
        r_mat3(&mut r)?;
    }
    for arm in 0..2 {
        let mut flag = [0u8; 1];
        r.read_exact(&mut flag)
            .map_err(|_| Error::Checkpoint("truncated grasp table".into()))?;
        if flag[0] == 1 {
            let n = r_u64(&mut r)? as usize;
            if n > nv {
                return Err(Error::Checkpoint("grasp larger than vertex count".into()));
            }
            let mut g = Grasp::default();
            for _ in 0..n {
                g.particles.push(r_u32(&mut r)?);
                g.locals.push(r_vec3(&mut r)?);
            }
            state.grasps[arm] = Some(g);
        }
    }
    Ok(state)
}
