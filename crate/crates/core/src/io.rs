//! Dump formats: field JSONL, state CSV, path-sum CSV and generic JSONL.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Potential, PotentialField, RegimeProfile};
use crate::pathsum::GeometricPath;
use crate::solver::{Profile, SolutionState};
use crate::spectral::SparseState;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldHeader {
    pub alpha: f64,
    #[serde(rename = "L")]
    pub l: u64,
    pub seed: u64,
    pub profile: RegimeProfile,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SiteRecord {
    pub z: i64,
    pub xi: f64,
    pub dup: bool,
}

/// Header line, then one line per site from −L to L.
pub fn write_field(field: &PotentialField, out: &mut dyn Write) -> Result<()> {
    let header = FieldHeader { alpha: field.alpha, l: field.window, seed: field.seed, profile: field.profile.clone() };
    serde_json::to_writer(&mut *out, &header)?;
    out.write_all(b"\n")?;
    let l = field.window as i64;
    for z in -l..=l {
        let rec = SiteRecord { z, xi: field.xi(z), dup: field.is_dup(z.unsigned_abs()) };
        serde_json::to_writer(&mut *out, &rec)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_field(input: &mut dyn BufRead) -> Result<PotentialField> {
    let mut lines = input.lines();
    let header: FieldHeader = match lines.next() {
        Some(line) => serde_json::from_str(&line?)?,
        None => return Err(Error::Format("empty field dump".into())),
    };
    let l = header.l as usize;
    let mut xi = vec![f64::NAN; 2 * l + 1];
    let mut flags = vec![false; 2 * l + 1];
    let mut seen = vec![false; 2 * l + 1];
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SiteRecord = serde_json::from_str(&line)?;
        if rec.z.unsigned_abs() as usize > l {
            return Err(Error::Format(format!("site {} outside L = {l}", rec.z)));
        }
        let i = (rec.z + l as i64) as usize;
        if seen[i] {
            return Err(Error::Format(format!("site {} listed twice", rec.z)));
        }
        seen[i] = true;
        xi[i] = rec.xi;
        flags[i] = rec.dup;
    }
    if seen.iter().any(|s| !s) {
        return Err(Error::Format("field dump is missing sites".into()));
    }
    let dup: Vec<bool> = (0..=l).map(|n| flags[l + n]).collect();
    if (1..=l).any(|n| flags[l - n] != dup[n]) {
        return Err(Error::Format("dup flags of ±z disagree".into()));
    }
    PotentialField::from_parts(header.profile, header.seed, xi, dup)
}

pub fn save_field(field: &PotentialField, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_field(field, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_field(path: &Path) -> Result<PotentialField> {
    read_field(&mut BufReader::new(File::open(path)?))
}

/// CSV rows (t, z, v, log_v, log_mass) for every site of a dense state, or
/// for the `top` largest sites when given.
pub fn write_state_csv(states: &[SolutionState], top: Option<usize>, out: &mut dyn Write) -> Result<()> {
    writeln!(out, "t,z,v,log_v,log_mass")?;
    for s in states {
        let w = s.window as i64;
        let mut zs: Vec<i64> = (-w..=w).collect();
        if let Some(k) = top {
            zs.sort_by(|a, b| s.log_v_at(*b).total_cmp(&s.log_v_at(*a)).then(a.cmp(b)));
            zs.truncate(k);
            zs.sort_unstable();
        }
        for z in zs {
            let lv = s.log_v_at(z);
            writeln!(out, "{},{},{},{},{}", s.t, z, lv.exp(), lv, s.log_mass)?;
        }
    }
    Ok(())
}

/// Same columns for a sparse large-t state.
pub fn write_sparse_csv(s: &SparseState, top: Option<usize>, out: &mut dyn Write) -> Result<()> {
    writeln!(out, "t,z,v,log_v,log_mass")?;
    let mut sites = s.sites.clone();
    if let Some(k) = top {
        sites.sort_by(|a, b| b.log_v.total_cmp(&a.log_v).then(a.z.cmp(&b.z)));
        sites.truncate(k);
        sites.sort_by_key(|p| p.z);
    }
    for p in sites {
        let lv = Profile::log_v_at(s, p.z);
        writeln!(out, "{},{},{},{},{}", s.t, p.z, lv.exp(), lv, s.log_mass)?;
    }
    Ok(())
}

/// Per-path CSV: step string ("" for the zero-length path) and log U.
pub fn write_path_csv(rows: &[(GeometricPath, f64)], out: &mut dyn Write) -> Result<()> {
    writeln!(out, "steps,length,log_value")?;
    for (p, lv) in rows {
        writeln!(out, "{},{},{}", p.steps(), p.len(), lv)?;
    }
    Ok(())
}

pub fn write_jsonl<T: Serialize>(items: &[T], out: &mut dyn Write) -> Result<()> {
    for it in items {
        serde_json::to_writer(&mut *out, it)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl<T: DeserializeOwned>(input: &mut dyn BufRead) -> Result<Vec<T>> {
    let mut v = Vec::new();
    for line in input.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            v.push(serde_json::from_str(&line)?);
        }
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_potential;

    #[test]
    fn field_round_trip_is_bit_exact() {
        let f = build_potential(&RegimeProfile::critical(3.0, 1.0), 60, 9).unwrap();
        let mut buf = Vec::new();
        write_field(&f, &mut buf).unwrap();
        let g = read_field(&mut buf.as_slice()).unwrap();
        assert_eq!(f.values().len(), g.values().len());
        for (a, b) in f.values().iter().zip(g.values()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(f.dup_mask(), g.dup_mask());
        assert_eq!(f.profile, g.profile);
    }

    #[test]
    fn truncated_dump_is_rejected() {
        let f = build_potential(&RegimeProfile::symmetric(3.0), 5, 1).unwrap();
        let mut buf = Vec::new();
        write_field(&f, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let cut: String = text.lines().take(5).map(|l| format!("{l}\n")).collect();
        assert!(matches!(read_field(&mut cut.as_bytes()), Err(Error::Format(_))));
    }
}
