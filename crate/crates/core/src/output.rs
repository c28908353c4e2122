//! CSV and legacy-VTK writers. Floats are written with 17 significant digits.

use std::io::Write;

use crate::control::OptimizationReport;
use crate::discretization::{Dimension, Discretization};
use crate::potentials::PotentialPair;
use crate::state::{SpaceTimeControl, StateTrajectory, TimeGrid};

/// `t,mean,energy,max_abs_y`, one row per time level.
pub fn write_series<W: Write>(
    mut out: W,
    d: &Discretization,
    pots: &PotentialPair,
    traj: &StateTrajectory,
    grid: &TimeGrid,
) -> std::io::Result<()> {
    writeln!(out, "t,mean,energy,max_abs_y")?;
    let energies = traj.energies(d, pots);
    for (k, (y, e)) in traj.y.iter().zip(energies).enumerate() {
        let mean = d.integrate(y) / d.omega_measure();
        writeln!(out, "{:.16e},{:.16e},{:.16e},{:.16e}", grid.time(k), mean, e, y.max_abs())?;
    }
    Ok(())
}

/// `node,x1,x2,<names...>`, one row per bulk node.
pub fn write_snapshot<W: Write>(mut out: W, d: &Discretization, fields: &[(&str, &[f64])]) -> std::io::Result<()> {
    write!(out, "node,x1,x2")?;
    for (name, _) in fields {
        write!(out, ",{name}")?;
    }
    writeln!(out)?;
    for (i, c) in d.coords().iter().enumerate() {
        write!(out, "{i},{:.16e},{:.16e}", c[0], c[1])?;
        for (_, f) in fields {
            write!(out, ",{:.16e}", f[i])?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// `boundary_node,t,value`, time-major.
pub fn write_control<W: Write>(mut out: W, grid: &TimeGrid, u: &SpaceTimeControl) -> std::io::Result<()> {
    writeln!(out, "boundary_node,t,value")?;
    for (k, v) in u.values.iter().enumerate() {
        let t = grid.time(k);
        for (b, x) in v.iter().enumerate() {
            writeln!(out, "{b},{t:.16e},{x:.16e}")?;
        }
    }
    Ok(())
}

/// `iter,cost,grad_norm,step,vi_residual,active_box_fraction`.
pub fn write_iterations<W: Write>(mut out: W, report: &OptimizationReport) -> std::io::Result<()> {
    writeln!(out, "iter,cost,grad_norm,step,vi_residual,active_box_fraction")?;
    for r in &report.iterates {
        writeln!(
            out,
            "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            r.iter, r.cost, r.grad_norm, r.step, r.vi_residual, r.active_box_fraction
        )?;
    }
    Ok(())
}

/// Legacy ASCII VTK structured grid with point data. Square meshes only.
pub fn write_vtk<W: Write>(mut out: W, d: &Discretization, title: &str, fields: &[(&str, &[f64])]) -> std::io::Result<()> {
    if d.dimension() != Dimension::Two {
        return Err(std::io::Error::new(
            std::io::ErrorKind::InvalidInput,
            "VTK output is only defined for square meshes",
        ));
    }
    let m = d.cells_per_side() + 1;
    writeln!(out, "# vtk DataFile Version 3.0")?;
    writeln!(out, "{}", title.replace('\n', " "))?;
    writeln!(out, "ASCII")?;
    writeln!(out, "DATASET STRUCTURED_GRID")?;
    writeln!(out, "DIMENSIONS {m} {m} 1")?;
    writeln!(out, "POINTS {} double", d.bulk_nodes())?;
    for c in d.coords() {
        writeln!(out, "{:.16e} {:.16e} 0", c[0], c[1])?;
    }
    writeln!(out, "POINT_DATA {}", d.bulk_nodes())?;
    for (name, f) in fields {
        writeln!(out, "SCALARS {name} double 1")?;
        writeln!(out, "LOOKUP_TABLE default")?;
        for v in f.iter() {
            writeln!(out, "{v:.16e}")?;
        }
    }
    Ok(())
}
