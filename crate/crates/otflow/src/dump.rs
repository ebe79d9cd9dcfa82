//! Text snapshots for fields and clouds.
//!
//! Field dump: header `# grid=torus|box d=<d> n=<n> t=<time> rank=<r>`, then
//! one node per line in row-major order, coordinates first, components after,
//! all with 17 significant digits so values round-trip exactly.
//!
//! Cloud dump: header `# atoms=<N> d=<d> m=<m>`, one atom per line, atom
//! coordinates then value components; an assignment adds a trailing integer
//! `sigma` column.

use crate::diag::{fmt_f64, write_atomic};
use crate::error::{Error, Result};
use crate::grid::{Grid, VectorField};
use crate::rearrange::{LagrangianCloud, Permutation};
use std::path::Path;

pub fn field_to_string(f: &VectorField, t: f64) -> String {
    let g = f.grid();
    let mut out = String::new();
    out.push_str(&format!(
        "# grid={} d={} n={} t={} rank={}\n",
        g.kind_name(),
        g.d(),
        g.n(),
        fmt_f64(t),
        f.ncomp()
    ));
    for j in 0..g.points() {
        let x = g.coord(j);
        let mut line = String::new();
        for axis in 0..g.d() {
            if axis > 0 {
                line.push(' ');
            }
            line.push_str(&fmt_f64(x[axis]));
        }
        for c in 0..f.ncomp() {
            line.push(' ');
            line.push_str(&fmt_f64(f.comp(c)[j]));
        }
        out.push_str(&line);
        out.push('\n');
    }
    out
}

pub fn write_field(path: &Path, f: &VectorField, t: f64) -> Result<()> {
    write_atomic(path, field_to_string(f, t).as_bytes())
}

fn header_value<'a>(tokens: &'a [(&'a str, &'a str)], key: &str) -> Result<&'a str> {
    tokens
        .iter()
        .find(|(k, _)| *k == key)
        .map(|(_, v)| *v)
        .ok_or_else(|| Error::Parse {
            what: "dump header",
            detail: format!("missing {key}="),
        })
}

fn split_header<'a>(line: &'a str, what: &'static str) -> Result<Vec<(&'a str, &'a str)>> {
    let body = line.strip_prefix('#').ok_or(Error::Parse {
        what,
        detail: "first line must start with '#'".into(),
    })?;
    body.split_whitespace()
        .map(|tok| {
            tok.split_once('=').ok_or_else(|| Error::Parse {
                what,
                detail: format!("malformed header token {tok:?}"),
            })
        })
        .collect()
}

fn parse_num<T: std::str::FromStr>(s: &str, what: &'static str) -> Result<T> {
    s.parse().map_err(|_| Error::Parse {
        what,
        detail: format!("bad number {s:?}"),
    })
}

pub fn parse_field(text: &str) -> Result<(VectorField, f64)> {
    let mut lines = text.lines();
    let header = lines.next().ok_or(Error::Parse {
        what: "field dump",
        detail: "empty file".into(),
    })?;
    let tokens = split_header(header, "field dump")?;
    let kind = header_value(&tokens, "grid")?;
    let d: usize = parse_num(header_value(&tokens, "d")?, "field dump")?;
    let n: usize = parse_num(header_value(&tokens, "n")?, "field dump")?;
    let t: f64 = parse_num(header_value(&tokens, "t")?, "field dump")?;
    let rank: usize = parse_num(header_value(&tokens, "rank")?, "field dump")?;
    let grid = match kind {
        "torus" => Grid::torus(d, n)?,
        "box" => {
            if d != 2 {
                return Err(Error::Parse {
                    what: "field dump",
                    detail: format!("box dumps are 2D, header says d={d}"),
                });
            }
            Grid::unit_box(n)?
        }
        other => {
            return Err(Error::Parse {
                what: "field dump",
                detail: format!("unknown grid kind {other:?}"),
            })
        }
    };
    let mut data = vec![0.0; rank * grid.points()];
    let mut count = 0usize;
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        if count >= grid.points() {
            return Err(Error::Parse {
                what: "field dump",
                detail: format!("more than {} data lines", grid.points()),
            });
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|s| parse_num::<f64>(s, "field dump"))
            .collect::<Result<_>>()?;
        if vals.len() != d + rank {
            return Err(Error::Parse {
                what: "field dump",
                detail: format!("line {} has {} columns, expected {}", count + 2, vals.len(), d + rank),
            });
        }
        let x = grid.coord(count);
        for axis in 0..d {
            if (vals[axis] - x[axis]).abs() > 1e-12 {
                return Err(Error::Parse {
                    what: "field dump",
                    detail: format!(
                        "line {}: coordinate {} is {}, grid expects {}",
                        count + 2,
                        axis,
                        vals[axis],
                        x[axis]
                    ),
                });
            }
        }
        for c in 0..rank {
            data[c * grid.points() + count] = vals[d + c];
        }
        count += 1;
    }
    if count != grid.points() {
        return Err(Error::Parse {
            what: "field dump",
            detail: format!("got {count} data lines, expected {}", grid.points()),
        });
    }
    Ok((VectorField::from_data(grid, rank, data)?, t))
}

pub fn read_field(path: &Path) -> Result<(VectorField, f64)> {
    parse_field(&std::fs::read_to_string(path)?)
}

pub fn cloud_to_string(cloud: &LagrangianCloud, sigma: Option<&Permutation>) -> String {
    let mut out = format!(
        "# atoms={} d={} m={}\n",
        cloud.n_atoms(),
        cloud.d(),
        cloud.m()
    );
    for i in 0..cloud.n_atoms() {
        let mut line = String::new();
        for (k, a) in cloud.atom(i).iter().enumerate() {
            if k > 0 {
                line.push(' ');
            }
            line.push_str(&fmt_f64(*a));
        }
        for v in cloud.value(i) {
            line.push(' ');
            line.push_str(&fmt_f64(*v));
        }
        if let Some(p) = sigma {
            line.push(' ');
            line.push_str(&p.apply(i).to_string());
        }
        out.push_str(&line);
        out.push('\n');
    }
    out
}

pub fn write_cloud(
    path: &Path,
    cloud: &LagrangianCloud,
    sigma: Option<&Permutation>,
) -> Result<()> {
    write_atomic(path, cloud_to_string(cloud, sigma).as_bytes())
}

pub fn parse_cloud(text: &str) -> Result<(LagrangianCloud, Option<Permutation>)> {
    let mut lines = text.lines();
    let header = lines.next().ok_or(Error::Parse {
        what: "cloud dump",
        detail: "empty file".into(),
    })?;
    let tokens = split_header(header, "cloud dump")?;
    let n_atoms: usize = parse_num(header_value(&tokens, "atoms")?, "cloud dump")?;
    let d: usize = parse_num(header_value(&tokens, "d")?, "cloud dump")?;
    let m: usize = parse_num(header_value(&tokens, "m")?, "cloud dump")?;
    let n_side = (n_atoms as f64).powf(1.0 / d as f64).round() as usize;
    if n_side.pow(d as u32) != n_atoms {
        return Err(Error::Parse {
            what: "cloud dump",
            detail: format!("{n_atoms} atoms is not an n^{d} uniform grid"),
        });
    }
    let mut values = vec![0.0; n_atoms * m];
    let mut sigma_col: Vec<usize> = Vec::new();
    let mut count = 0usize;
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        if count >= n_atoms {
            return Err(Error::Parse {
                what: "cloud dump",
                detail: format!("more than {n_atoms} rows"),
            });
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        let has_sigma = match cols.len() {
            l if l == d + m => false,
            l if l == d + m + 1 => true,
            l => {
                return Err(Error::Parse {
                    what: "cloud dump",
                    detail: format!("row {} has {l} columns, expected {} or {}", count + 2, d + m, d + m + 1),
                })
            }
        };
        if count > 0 && has_sigma != !sigma_col.is_empty() {
            return Err(Error::Parse {
                what: "cloud dump",
                detail: "inconsistent sigma column".into(),
            });
        }
        for k in 0..m {
            values[count * m + k] = parse_num(cols[d + k], "cloud dump")?;
        }
        if has_sigma {
            sigma_col.push(parse_num(cols[d + m], "cloud dump")?);
        }
        count += 1;
    }
    if count != n_atoms {
        return Err(Error::Parse {
            what: "cloud dump",
            detail: format!("got {count} rows, expected {n_atoms}"),
        });
    }
    let cloud = LagrangianCloud::uniform(d, n_side, m, values)?;
    // Atoms in the file must agree with the uniform cell-center grid the
    // reader reconstructs.
    let text_atoms: Vec<&str> = text.lines().skip(1).filter(|l| !l.trim().is_empty()).collect();
    for (i, line) in text_atoms.iter().enumerate() {
        let cols: Vec<&str> = line.split_whitespace().collect();
        for k in 0..d {
            let got: f64 = parse_num(cols[k], "cloud dump")?;
            if (got - cloud.atom(i)[k]).abs() > 1e-12 {
                return Err(Error::Parse {
                    what: "cloud dump",
                    detail: format!("row {}: atom coordinate differs from the uniform grid", i + 2),
                });
            }
        }
    }
    let sigma = if sigma_col.is_empty() {
        None
    } else {
        Some(Permutation::new(sigma_col)?)
    };
    Ok((cloud, sigma))
}

pub fn read_cloud(path: &Path) -> Result<(LagrangianCloud, Option<Permutation>)> {
    parse_cloud(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;

    #[test]
    fn field_round_trip_is_bit_exact() {
        let g = Grid::torus(2, 8).unwrap();
        let f = presets::torus_field(g, "smooth_random", 9, 1.0).unwrap();
        let text = field_to_string(&f, 0.125);
        let (back, t) = parse_field(&text).unwrap();
        assert_eq!(t, 0.125);
        assert_eq!(back.data(), f.data());
        assert_eq!(field_to_string(&back, t), text);
    }

    #[test]
    fn box_field_round_trips() {
        let g = Grid::unit_box(4).unwrap();
        let f = presets::box_top_heavy(g, 1.0).unwrap();
        let (back, _) = parse_field(&field_to_string(&f, 0.0)).unwrap();
        assert_eq!(back.data(), f.data());
        assert!(!back.grid().is_torus());
    }

    #[test]
    fn rank_three_profile_round_trips() {
        let g = Grid::torus(1, 16).unwrap();
        let f = VectorField::from_fn(g, 3, |c, x| (c as f64) + x[0]);
        let (back, _) = parse_field(&field_to_string(&f, 2.0)).unwrap();
        assert_eq!(back.ncomp(), 3);
        assert_eq!(back.data(), f.data());
    }

    #[test]
    fn cloud_round_trip_with_and_without_sigma() {
        let cloud = presets::cloud_preset("random", 2, 3, 4, 1.0).unwrap();
        let (back, none) = parse_cloud(&cloud_to_string(&cloud, None)).unwrap();
        assert!(none.is_none());
        assert_eq!(back.values(), cloud.values());
        let sigma = Permutation::new(vec![8, 7, 6, 5, 4, 3, 2, 1, 0]).unwrap();
        let (_, got) = parse_cloud(&cloud_to_string(&cloud, Some(&sigma))).unwrap();
        assert_eq!(got.unwrap().as_slice(), sigma.as_slice());
    }

    #[test]
    fn malformed_dumps_are_rejected_with_detail() {
        assert!(parse_field("").is_err());
        assert!(parse_field("no hash\n").is_err());
        let g = Grid::torus(1, 8).unwrap();
        let f = VectorField::zeros(g, 1);
        let text = field_to_string(&f, 0.0);
        let truncated: String = text.lines().take(5).map(|l| format!("{l}\n")).collect();
        let err = parse_field(&truncated).unwrap_err().to_string();
        assert!(err.contains("4 data lines"), "{err}");
        let mut swapped: Vec<String> = text.lines().map(String::from).collect();
        swapped[1] = "0.5 0.0".into();
        assert!(parse_field(&swapped.join("\n")).is_err());
    }
}
