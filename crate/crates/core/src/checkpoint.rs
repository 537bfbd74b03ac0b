//! Binary trajectory checkpoints.
//!
//! Layout (all little-endian):
//!
//! ```text
//! header   magic  b"SICP"          4 bytes
//!          version u32             currently 1
//!          kind    u32             0 = primal, 1 = dual
//!          mesh hash u64           QuadMesh::hash of the mesh
//!          nodes   u64             nodal values per array
//!          steps   u64             N
//!          k       f64             step size (s)
//!          t0      f64             initial time (s)
//! primal   N + 1 records (n = 0..=N):
//!          t f64, v_x, v_y, A, H  (nodes f64 each),
//!          newton_iterations, transport_iterations, linear_iterations  u64,
//!          newton_residual, min_a, max_a, min_h, max_h, mass_h        f64
//! dual     N records (n = 1..=N):
//!          t f64 (= t_{n-1}), z_x, z_y, q_A, q_H (nodes f64 each)
//! ```

use std::io::{Read, Write};
use std::sync::Arc;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use crate::adjoint::{DualState, DualTrajectory};
use crate::error::{Error, Result};
use crate::fem::{ScalarField, VectorField2};
use crate::mesh::QuadMesh;
use crate::solver::{State, StepDiagnostics, Trajectory};

pub const MAGIC: [u8; 4] = *b"SICP";
pub const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Primal = 0,
    Dual = 1,
}

/// Parsed checkpoint header.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Header {
    pub version: u32,
    pub kind: Kind,
    pub mesh_hash: u64,
    pub n_nodes: usize,
    pub n_steps: usize,
    pub k: f64,
    pub t0: f64,
}

fn write_header(w: &mut impl Write, h: &Header) -> Result<()> {
    w.write_all(&MAGIC)?;
    w.write_u32::<LE>(h.version)?;
    w.write_u32::<LE>(h.kind as u32)?;
    w.write_u64::<LE>(h.mesh_hash)?;
    w.write_u64::<LE>(h.n_nodes as u64)?;
    w.write_u64::<LE>(h.n_steps as u64)?;
    w.write_f64::<LE>(h.k)?;
    w.write_f64::<LE>(h.t0)?;
    Ok(())
}

pub fn read_header(r: &mut impl Read) -> Result<Header> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != MAGIC {
        return Err(Error::Format("not a trajectory checkpoint".into()));
    }
    let version = r.read_u32::<LE>()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let kind = match r.read_u32::<LE>()? {
        0 => Kind::Primal,
        1 => Kind::Dual,
        other => return Err(Error::Format(format!("unknown record kind {other}"))),
    };
    Ok(Header {
        version,
        kind,
        mesh_hash: r.read_u64::<LE>()?,
        n_nodes: r.read_u64::<LE>()? as usize,
        n_steps: r.read_u64::<LE>()? as usize,
        k: r.read_f64::<LE>()?,
        t0: r.read_f64::<LE>()?,
    })
}

fn write_array(w: &mut impl Write, values: &[f64]) -> Result<()> {
    for &x in values {
        w.write_f64::<LE>(x)?;
    }
    Ok(())
}

fn read_array(r: &mut (impl Read + ?Sized), n: usize) -> Result<Vec<f64>> {
    let mut out = vec![0.0; n];
    r.read_f64_into::<LE>(&mut out)?;
    Ok(out)
}

fn check_mesh(header: &Header, mesh: &QuadMesh, expected: Kind) -> Result<()> {
    if header.kind != expected {
        return Err(Error::Format(format!("expected a {expected:?} checkpoint, found {:?}", header.kind)));
    }
    if header.mesh_hash != mesh.hash() || header.n_nodes != mesh.n_nodes() {
        return Err(Error::MeshMismatch(format!(
            "checkpoint mesh hash {:016x} ({} nodes) does not match {:016x} ({} nodes)",
            header.mesh_hash,
            header.n_nodes,
            mesh.hash(),
            mesh.n_nodes()
        )));
    }
    Ok(())
}

fn uniform_grid(times: &[f64]) -> Result<(f64, f64)> {
    if times.len() < 2 {
        return Err(Error::InvalidArgument("trajectory needs at least one step".into()));
    }
    Ok((times[0], times[1] - times[0]))
}

pub fn write_trajectory(w: &mut impl Write, tr: &Trajectory) -> Result<()> {
    let (t0, k) = uniform_grid(&tr.times)?;
    write_header(
        w,
        &Header {
            version: VERSION,
            kind: Kind::Primal,
            mesh_hash: tr.mesh.hash(),
            n_nodes: tr.mesh.n_nodes(),
            n_steps: tr.n_steps(),
            k,
            t0,
        },
    )?;
    let blank = StepDiagnostics::default();
    for (n, s) in tr.states.iter().enumerate() {
        w.write_f64::<LE>(tr.times[n])?;
        for f in [&s.v.x, &s.v.y, &s.a, &s.h] {
            write_array(w, f.values())?;
        }
        let d = tr.diagnostics.get(n).unwrap_or(&blank);
        for c in [d.newton_iterations, d.transport_iterations, d.linear_iterations] {
            w.write_u64::<LE>(c as u64)?;
        }
        for x in [d.newton_residual, d.min_a, d.max_a, d.min_h, d.max_h, d.mass_h] {
            w.write_f64::<LE>(x)?;
        }
    }
    Ok(())
}

pub fn read_trajectory(r: &mut impl Read, mesh: Arc<QuadMesh>) -> Result<Trajectory> {
    let h = read_header(r)?;
    check_mesh(&h, &mesh, Kind::Primal)?;
    let mut times = Vec::with_capacity(h.n_steps + 1);
    let mut states = Vec::with_capacity(h.n_steps + 1);
    let mut diagnostics = Vec::with_capacity(h.n_steps + 1);
    let field = |r: &mut dyn Read| -> Result<ScalarField> { ScalarField::new(mesh.clone(), read_array(&mut *r, h.n_nodes)?) };
    for _ in 0..=h.n_steps {
        times.push(r.read_f64::<LE>()?);
        let v = VectorField2::new(field(r)?, field(r)?)?;
        let (a, hh) = (field(r)?, field(r)?);
        states.push(State { v, a, h: hh });
        let mut d = StepDiagnostics {
            newton_iterations: r.read_u64::<LE>()? as usize,
            transport_iterations: r.read_u64::<LE>()? as usize,
            linear_iterations: r.read_u64::<LE>()? as usize,
            ..Default::default()
        };
        let mut rest = [0.0; 6];
        r.read_f64_into::<LE>(&mut rest)?;
        [d.newton_residual, d.min_a, d.max_a, d.min_h, d.max_h, d.mass_h] = rest;
        diagnostics.push(d);
    }
    Ok(Trajectory { mesh, times, states, diagnostics })
}

pub fn write_dual(w: &mut impl Write, dual: &DualTrajectory) -> Result<()> {
    let (t0, k) = uniform_grid(&dual.times)?;
    write_header(
        w,
        &Header {
            version: VERSION,
            kind: Kind::Dual,
            mesh_hash: dual.mesh.hash(),
            n_nodes: dual.mesh.n_nodes(),
            n_steps: dual.n_steps(),
            k,
            t0,
        },
    )?;
    for (i, s) in dual.states.iter().enumerate() {
        w.write_f64::<LE>(dual.times[i])?;
        for f in [&s.z.x, &s.z.y, &s.qa, &s.qh] {
            write_array(w, f.values())?;
        }
    }
    Ok(())
}

pub fn read_dual(r: &mut impl Read, mesh: Arc<QuadMesh>) -> Result<DualTrajectory> {
    let h = read_header(r)?;
    check_mesh(&h, &mesh, Kind::Dual)?;
    let field = |r: &mut dyn Read| -> Result<ScalarField> { ScalarField::new(mesh.clone(), read_array(&mut *r, h.n_nodes)?) };
    let mut times = Vec::with_capacity(h.n_steps + 1);
    let mut states = Vec::with_capacity(h.n_steps);
    for _ in 0..h.n_steps {
        times.push(r.read_f64::<LE>()?);
        let z = VectorField2::new(field(r)?, field(r)?)?;
        states.push(DualState { z, qa: field(r)?, qh: field(r)? });
    }
    times.push(h.t0 + h.n_steps as f64 * h.k);
    Ok(DualTrajectory { mesh, times, states })
}

pub fn save_trajectory(path: &std::path::Path, tr: &Trajectory) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_trajectory(&mut w, tr)?;
    w.flush()?;
    Ok(())
}

pub fn load_trajectory(path: &std::path::Path, mesh: Arc<QuadMesh>) -> Result<Trajectory> {
    read_trajectory(&mut std::io::BufReader::new(std::fs::File::open(path)?), mesh)
}

pub fn save_dual(path: &std::path::Path, dual: &DualTrajectory) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_dual(&mut w, dual)?;
    w.flush()?;
    Ok(())
}

pub fn load_dual(path: &std::path::Path, mesh: Arc<QuadMesh>) -> Result<DualTrajectory> {
    read_dual(&mut std::io::BufReader::new(std::fs::File::open(path)?), mesh)
}
