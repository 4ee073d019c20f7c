//! CSV readers and writers for profiles, kernel tables, velocity tables and
//! output series. Floats are written with Rust's shortest round-trip
//! formatting, so identical inputs give byte-identical files.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::kernels::KernelTable;
use crate::mass_coords::MassProfile;

fn reader(path: &Path) -> Result<csv::Reader<File>> {
    Ok(csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)?)
}

fn parse(field: &str, path: &Path, line: u64) -> Result<f64> {
    field.parse::<f64>().map_err(|_| {
        Error::Config(format!("{}:{line}: cannot parse '{field}' as a number", path.display()))
    })
}

/// Rows of numbers grouped into sections; a row whose first field is not a
/// number starts a new section named by that row.
type Section = (Vec<String>, Vec<(u64, Vec<f64>)>);

fn sections(path: &Path) -> Result<Vec<Section>> {
    let mut out: Vec<Section> = Vec::new();
    for rec in reader(path)?.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.iter().all(str::is_empty) {
            continue;
        }
        let first = rec.get(0).unwrap_or("");
        if first.parse::<f64>().is_err() {
            out.push((rec.iter().map(|s| s.to_ascii_lowercase()).collect(), Vec::new()));
            continue;
        }
        let Some(section) = out.last_mut() else {
            return Err(Error::Config(format!("{}:{line}: data before header row", path.display())));
        };
        if rec.len() != section.0.len() {
            return Err(Error::Config(format!(
                "{}:{line}: expected {} fields, found {}",
                path.display(),
                section.0.len(),
                rec.len()
            )));
        }
        let row = rec.iter().map(|f| parse(f, path, line)).collect::<Result<Vec<_>>>()?;
        section.1.push((line, row));
    }
    Ok(out)
}

fn expect_header(path: &Path, got: &[String], want: &[&str]) -> Result<()> {
    if got.len() != want.len() || got.iter().zip(want).any(|(g, w)| g != w) {
        return Err(Error::Config(format!(
            "{}: expected header '{}', found '{}'",
            path.display(),
            want.join(","),
            got.join(",")
        )));
    }
    Ok(())
}

/// Reads a CDF given as `x,M` rows (values of the full right-continuous CDF
/// at the nodes) optionally followed by an `x,jump` section of atoms.
pub fn read_cdf_csv(path: &Path) -> Result<MassProfile> {
    let secs = sections(path)?;
    let mut nodes = Vec::new();
    let mut full = Vec::new();
    let mut atoms = Vec::new();
    for (header, rows) in &secs {
        match header.get(1).map(String::as_str) {
            Some("m") => {
                expect_header(path, header, &["x", "m"])?;
                for (_, r) in rows {
                    nodes.push(r[0]);
                    full.push(r[1]);
                }
            }
            Some("jump") => {
                expect_header(path, header, &["x", "jump"])?;
                atoms.extend(rows.iter().map(|(_, r)| (r[0], r[1])));
            }
            _ => {
                return Err(Error::Config(format!(
                    "{}: unknown section '{}'",
                    path.display(),
                    header.join(",")
                )))
            }
        }
    }
    let values = nodes
        .iter()
        .zip(&full)
        .map(|(&x, &m)| m - atoms.iter().filter(|a: &&(f64, f64)| a.0 <= x).map(|a| a.1).sum::<f64>())
        .collect();
    MassProfile::new(nodes, values, atoms)
}

/// Writes `x,M` at the profile nodes and an `x,jump` section for atoms.
pub fn write_cdf_csv(path: &Path, profile: &MassProfile) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["x", "M"])?;
    for &x in profile.nodes() {
        w.write_record([fmt(x), fmt(profile.cdf(x))])?;
    }
    if !profile.atoms().is_empty() {
        w.write_record(["x", "jump"])?;
        for &(x, j) in profile.atoms() {
            w.write_record([fmt(x), fmt(j)])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads `x,rho` samples and integrates them to a CDF. Returns the profile
/// and the renormalisation factor applied.
pub fn read_density_csv(path: &Path) -> Result<(MassProfile, f64)> {
    let secs = sections(path)?;
    let [(header, rows)] = secs.as_slice() else {
        return Err(Error::Config(format!("{}: expected a single x,rho section", path.display())));
    };
    expect_header(path, header, &["x", "rho"])?;
    let xs: Vec<f64> = rows.iter().map(|(_, r)| r[0]).collect();
    let rho: Vec<f64> = rows.iter().map(|(_, r)| r[1]).collect();
    MassProfile::from_density_samples(&xs, &rho)
}

/// Reads a pure `d,phi` or general `d,z,phi` kernel table. General tables
/// must list every `(d, z)` pair, in any order.
pub fn read_kernel_table(path: &Path) -> Result<KernelTable> {
    let secs = sections(path)?;
    let [(header, rows)] = secs.as_slice() else {
        return Err(Error::Config(format!("{}: expected a single kernel table", path.display())));
    };
    match header.len() {
        2 => {
            expect_header(path, header, &["d", "phi"])?;
            KernelTable::pure(rows.iter().map(|(_, r)| r[0]).collect(), rows.iter().map(|(_, r)| r[1]).collect())
        }
        3 => {
            expect_header(path, header, &["d", "z", "phi"])?;
            let mut d: Vec<f64> = rows.iter().map(|(_, r)| r[0]).collect();
            let mut z: Vec<f64> = rows.iter().map(|(_, r)| r[1]).collect();
            d.sort_by(f64::total_cmp);
            d.dedup();
            z.sort_by(f64::total_cmp);
            z.dedup();
            let mut values = vec![f64::NAN; d.len() * z.len()];
            for (line, r) in rows {
                let i = d.partition_point(|&p| p < r[0]);
                let j = z.partition_point(|&p| p < r[1]);
                let slot = &mut values[i * z.len() + j];
                if !slot.is_nan() {
                    return Err(Error::Config(format!("{}:{line}: duplicate (d, z) entry", path.display())));
                }
                *slot = r[2];
            }
            if values.iter().any(|v| v.is_nan()) {
                return Err(Error::Config(format!("{}: kernel table is not a full grid", path.display())));
            }
            KernelTable::general(d, z, values)
        }
        _ => Err(Error::Config(format!("{}: kernel table needs 2 or 3 columns", path.display()))),
    }
}

/// Coordinate of a tabulated velocity.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Coordinate {
    Mass,
    Space,
}

/// A velocity table `m,v` or `x,u`, linearly interpolated and held constant
/// beyond its ends.
#[derive(Clone, Debug, PartialEq)]
pub struct TabulatedVelocity {
    pub coordinate: Coordinate,
    pub nodes: Vec<f64>,
    pub values: Vec<f64>,
}

impl TabulatedVelocity {
    pub fn eval(&self, p: f64) -> f64 {
        let n = self.nodes.len();
        if p <= self.nodes[0] {
            return self.values[0];
        }
        if p >= self.nodes[n - 1] {
            return self.values[n - 1];
        }
        let k = self.nodes.partition_point(|&x| x <= p) - 1;
        let t = (p - self.nodes[k]) / (self.nodes[k + 1] - self.nodes[k]);
        self.values[k] + t * (self.values[k + 1] - self.values[k])
    }
}

pub fn read_velocity_csv(path: &Path) -> Result<TabulatedVelocity> {
    let secs = sections(path)?;
    let [(header, rows)] = secs.as_slice() else {
        return Err(Error::Config(format!("{}: expected a single velocity table", path.display())));
    };
    let coordinate = match header.iter().map(String::as_str).collect::<Vec<_>>().as_slice() {
        ["m", "v"] => Coordinate::Mass,
        ["x", "u"] => Coordinate::Space,
        _ => {
            return Err(Error::Config(format!(
                "{}: velocity table header must be 'm,v' or 'x,u'",
                path.display()
            )))
        }
    };
    let nodes: Vec<f64> = rows.iter().map(|(_, r)| r[0]).collect();
    if nodes.is_empty() || nodes.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config(format!("{}: velocity nodes must be strictly increasing", path.display())));
    }
    Ok(TabulatedVelocity { coordinate, nodes, values: rows.iter().map(|(_, r)| r[1]).collect() })
}

/// Shortest round-trip decimal form.
pub fn fmt(x: f64) -> String {
    format!("{x}")
}

/// Writes equal-length columns under `headers`.
pub fn write_columns(path: &Path, headers: &[&str], columns: &[&[f64]]) -> Result<()> {
    let rows = columns.first().map_or(0, |c| c.len());
    if headers.len() != columns.len() || columns.iter().any(|c| c.len() != rows) {
        return Err(Error::Config("column count or length mismatch".into()));
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(headers)?;
    for i in 0..rows {
        w.write_record(columns.iter().map(|c| fmt(c[i])))?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `text` to `path`.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = File::create(path)?;
    f.write_all(text.as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn temp_file(name: &str, body: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("topoflock-io-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let p = dir.join(name);
        let mut f = File::create(&p).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        p
    }

    #[test]
    fn test_cdf_roundtrip_with_atoms() {
        let p = MassProfile::new(vec![0.0, 1.0, 3.0], vec![0.0, 0.2, 0.6], vec![(0.5, 0.1), (2.0, 0.3)]).unwrap();
        let path = temp_file("cdf.csv", "");
        write_cdf_csv(&path, &p).unwrap();
        let q = read_cdf_csv(&path).unwrap();
        for x in [-1.0, 0.0, 0.4, 0.5, 1.0, 2.0, 2.5, 3.0] {
            assert!((p.cdf(x) - q.cdf(x)).abs() < 1e-15);
        }
    }

    #[test]
    fn test_density_csv_renormalises() {
        let path = temp_file("rho.csv", "x,rho\n0,2\n1,2\n");
        let (p, factor) = read_density_csv(&path).unwrap();
        assert!((factor - 2.0).abs() < 1e-15);
        assert!((p.cdf(0.5) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn test_kernel_tables() {
        let path = temp_file("pure.csv", "d,phi\n0,1\n1,0.5\n");
        let t = read_kernel_table(&path).unwrap();
        assert_eq!(t.values, vec![1.0, 0.5]);
        let path = temp_file("gen.csv", "d,z,phi\n1,0,3\n0,0,1\n0,1,2\n1,1,4\n");
        let t = read_kernel_table(&path).unwrap();
        assert_eq!(t.values, vec![1.0, 2.0, 3.0, 4.0]);
        let path = temp_file("bad.csv", "d,z,phi\n0,0,1\n0,1,2\n1,0,3\n");
        assert!(read_kernel_table(&path).is_err());
    }

    #[test]
    fn test_line_numbers_in_errors() {
        let path = temp_file("broken.csv", "m,v\n0,1\n0.5,abc\n");
        let msg = read_velocity_csv(&path).unwrap_err().to_string();
        assert!(msg.contains(":3:"), "{msg}");
    }

    #[test]
    fn test_velocity_table() {
        let path = temp_file("vel.csv", "x,u\n0,0\n1,2\n");
        let v = read_velocity_csv(&path).unwrap();
        assert_eq!(v.coordinate, Coordinate::Space);
        assert_eq!(v.eval(0.25), 0.5);
        assert_eq!(v.eval(5.0), 2.0);
    }
}
