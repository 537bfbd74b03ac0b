//! Legacy ASCII VTK unstructured-grid snapshots.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use seaice_core::mesh::QuadMesh;
use seaice_core::solver::State;

use crate::error::{CliError, CliResult};

const VTK_QUAD: u32 = 9;

/// Renders one state; node order follows the mesh, quads use counter-clockwise corners.
pub fn render(mesh: &QuadMesh, state: &State, time: f64) -> String {
    let mut s = String::new();
    let nn = mesh.n_nodes();
    let ne = mesh.n_elements();
    let _ = writeln!(s, "# vtk DataFile Version 3.0");
    let _ = writeln!(s, "sea ice state t={time}");
    let _ = writeln!(s, "ASCII\nDATASET UNSTRUCTURED_GRID");
    let _ = writeln!(s, "POINTS {nn} double");
    for p in mesh.nodes() {
        let _ = writeln!(s, "{} {} 0", p[0], p[1]);
    }
    let _ = writeln!(s, "CELLS {ne} {}", 5 * ne);
    for el in mesh.elements() {
        let [a, b, c, d] = el.nodes;
        let _ = writeln!(s, "4 {a} {b} {c} {d}");
    }
    let _ = writeln!(s, "CELL_TYPES {ne}");
    for _ in 0..ne {
        let _ = writeln!(s, "{VTK_QUAD}");
    }
    let _ = writeln!(s, "POINT_DATA {nn}");
    for (name, f) in [("A", &state.a), ("H", &state.h)] {
        let _ = writeln!(s, "SCALARS {name} double 1\nLOOKUP_TABLE default");
        for v in f.values() {
            let _ = writeln!(s, "{v}");
        }
    }
    let _ = writeln!(s, "VECTORS v double");
    for (x, y) in state.v.x.values().iter().zip(state.v.y.values()) {
        let _ = writeln!(s, "{x} {y} 0");
    }
    s
}

pub fn write(path: &Path, mesh: &QuadMesh, state: &State, time: f64) -> CliResult<()> {
    std::fs::write(path, render(mesh, state, time)).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

/// Contents of a snapshot read back from disk.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Snapshot {
    pub points: Vec<[f64; 3]>,
    pub cells: Vec<Vec<usize>>,
    pub cell_types: Vec<u32>,
    pub scalars: BTreeMap<String, Vec<f64>>,
    pub vectors: BTreeMap<String, Vec<[f64; 3]>>,
}

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Io(format!("malformed VTK file: {}", msg.into()))
}

pub fn parse(text: &str) -> CliResult<Snapshot> {
    let mut tokens = text.lines().skip(2).flat_map(str::split_whitespace);
    let mut next = || tokens.next().ok_or_else(|| bad("unexpected end of file"));
    fn num<T: std::str::FromStr>(t: &str) -> CliResult<T> {
        t.parse().map_err(|_| bad(format!("bad number '{t}'")))
    }
    let mut snap = Snapshot::default();
    let mut n_points = 0;
    while let Ok(word) = next() {
        match word {
            "ASCII" => {}
            "DATASET" => {
                let kind = next()?;
                if kind != "UNSTRUCTURED_GRID" {
                    return Err(bad(format!("unsupported dataset {kind}")));
                }
            }
            "POINTS" => {
                n_points = num(next()?)?;
                next()?;
                for _ in 0..n_points {
                    snap.points.push([num(next()?)?, num(next()?)?, num(next()?)?]);
                }
            }
            "CELLS" => {
                let n: usize = num(next()?)?;
                next()?;
                for _ in 0..n {
                    let len: usize = num(next()?)?;
                    snap.cells.push((0..len).map(|_| num(next()?)).collect::<CliResult<_>>()?);
                }
            }
            "CELL_TYPES" => {
                let n: usize = num(next()?)?;
                snap.cell_types = (0..n).map(|_| num(next()?)).collect::<CliResult<_>>()?;
            }
            "POINT_DATA" => {
                let n: usize = num(next()?)?;
                if n != n_points {
                    return Err(bad("point data size differs from point count"));
                }
            }
            "SCALARS" => {
                let name = next()?.to_string();
                next()?;
                next()?;
                if next()? != "LOOKUP_TABLE" {
                    return Err(bad("missing LOOKUP_TABLE"));
                }
                next()?;
                let vals = (0..n_points).map(|_| num(next()?)).collect::<CliResult<_>>()?;
                snap.scalars.insert(name, vals);
            }
            "VECTORS" => {
                let name = next()?.to_string();
                next()?;
                let vals = (0..n_points)
                    .map(|_| Ok([num(next()?)?, num(next()?)?, num(next()?)?]))
                    .collect::<CliResult<_>>()?;
                snap.vectors.insert(name, vals);
            }
            other => return Err(bad(format!("unexpected token '{other}'"))),
        }
    }
    Ok(snap)
}

pub fn read(path: &Path) -> CliResult<Snapshot> {
    parse(&std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?)
}
