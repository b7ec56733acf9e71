//! Lossless CSV serialization of simulation records.
//!
//! Header `time,gen1.speed,...,gen1.u,...,tie1.p,...`; values printed
//! with 17 significant digits so every f64 round-trips bit-exactly.

use std::io::{BufRead, Write};

use super::sim::SimRecord;
use super::GridError;

pub fn write_record<W: Write>(rec: &SimRecord, mut out: W) -> Result<(), GridError> {
    let mut header = vec!["time".to_string()];
    for g in 0..rec.n_gens() {
        header.push(format!("gen{}.speed", g + 1));
    }
    for g in 0..rec.n_gens() {
        header.push(format!("gen{}.u", g + 1));
    }
    for t in 0..rec.n_ties() {
        header.push(format!("tie{}.p", t + 1));
    }
    writeln!(out, "{}", header.join(","))?;
    for k in 0..rec.n_samples() {
        let mut row = Vec::with_capacity(header.len());
        row.push(format!("{:.16e}", rec.time[k]));
        for g in 0..rec.n_gens() {
            row.push(format!("{:.16e}", rec.gen_speed[g][k]));
        }
        for g in 0..rec.n_gens() {
            row.push(format!("{:.16e}", rec.gen_u[g][k]));
        }
        for t in 0..rec.n_ties() {
            row.push(format!("{:.16e}", rec.tie_p[t][k]));
        }
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

pub fn write_record_to_path(rec: &SimRecord, path: &std::path::Path) -> Result<(), GridError> {
    let file = std::fs::File::create(path)?;
    write_record(rec, std::io::BufWriter::new(file))
}

pub fn read_record<R: BufRead>(input: R) -> Result<SimRecord, GridError> {
    let mut lines = input.lines();
    let header = lines
        .next()
        .ok_or_else(|| GridError::Parse("empty record".into()))??;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.first() != Some(&"time") {
        return Err(GridError::Parse(format!(
            "first column must be 'time', got '{}'",
            cols.first().unwrap_or(&"")
        )));
    }
    let n_speed = cols.iter().filter(|c| c.ends_with(".speed")).count();
    let n_u = cols.iter().filter(|c| c.ends_with(".u")).count();
    let n_tie = cols.iter().filter(|c| c.ends_with(".p")).count();
    if n_speed != n_u || n_speed == 0 {
        return Err(GridError::Parse(format!(
            "inconsistent generator columns: {n_speed} speed, {n_u} input"
        )));
    }
    if 1 + n_speed + n_u + n_tie != cols.len() {
        return Err(GridError::Parse(format!(
            "unrecognized columns in header '{header}'"
        )));
    }
    for (g, c) in cols[1..1 + n_speed].iter().enumerate() {
        let want = format!("gen{}.speed", g + 1);
        if *c != want {
            return Err(GridError::Parse(format!("expected column {want}, got {c}")));
        }
    }
    for (g, c) in cols[1 + n_speed..1 + 2 * n_speed].iter().enumerate() {
        let want = format!("gen{}.u", g + 1);
        if *c != want {
            return Err(GridError::Parse(format!("expected column {want}, got {c}")));
        }
    }
    for (t, c) in cols[1 + 2 * n_speed..].iter().enumerate() {
        let want = format!("tie{}.p", t + 1);
        if *c != want {
            return Err(GridError::Parse(format!("expected column {want}, got {c}")));
        }
    }

    let mut rec = SimRecord {
        sample_hz: 0.0,
        time: Vec::new(),
        gen_speed: vec![Vec::new(); n_speed],
        gen_u: vec![Vec::new(); n_speed],
        tie_p: vec![Vec::new(); n_tie],
    };
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let vals: Result<Vec<f64>, _> = line.split(',').map(|v| v.trim().parse()).collect();
        let vals = vals.map_err(|e| {
            GridError::Parse(format!("row {}: {e}", lineno + 2))
        })?;
        if vals.len() != cols.len() {
            return Err(GridError::Parse(format!(
                "row {} has {} values, expected {}",
                lineno + 2,
                vals.len(),
                cols.len()
            )));
        }
        rec.time.push(vals[0]);
        for g in 0..n_speed {
            rec.gen_speed[g].push(vals[1 + g]);
            rec.gen_u[g].push(vals[1 + n_speed + g]);
        }
        for t in 0..n_tie {
            rec.tie_p[t].push(vals[1 + 2 * n_speed + t]);
        }
    }
    if rec.time.len() < 2 {
        return Err(GridError::Parse("record needs at least two samples".into()));
    }
    let dt = rec.time[1] - rec.time[0];
    if !(dt > 0.0) {
        return Err(GridError::Parse(format!(
            "non-increasing time axis: first step {dt}"
        )));
    }
    rec.sample_hz = (1.0 / dt).round();
    Ok(rec)
}

pub fn read_record_from_path(path: &std::path::Path) -> Result<SimRecord, GridError> {
    let file = std::fs::File::open(path)?;
    read_record(std::io::BufReader::new(file))
}
