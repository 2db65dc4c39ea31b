use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::grid_paths::{Partition, SampledPath};

/// Shortest representation that parses back to the same `f64`.
pub fn format_float(x: f64) -> String {
    let a = x.abs();
    if x != 0.0 && (a < 1e-5 || a >= 1e16) {
        format!("{x:e}")
    } else {
        format!("{x}")
    }
}

/// Writes `t,x0,...,x{d-1}` rows, one per grid point.
pub fn write_path_csv<W: Write>(path: &SampledPath, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["t".to_string()];
    header.extend((0..path.dim()).map(|k| format!("x{k}")));
    w.write_record(&header)?;
    for (i, &t) in path.grid().points().iter().enumerate() {
        let mut row = vec![format_float(t)];
        row.extend(path.value(i).iter().map(|&v| format_float(v)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_path_csv<R: Read>(input: R) -> Result<SampledPath> {
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr.headers()?.clone();
    let dim = headers.len().saturating_sub(1);
    if headers.get(0) != Some("t") || dim == 0 {
        return Err(Error::invalid("path CSV header must be t,x0,...,x{d-1}"));
    }
    for (k, h) in headers.iter().skip(1).enumerate() {
        if h != format!("x{k}") {
            return Err(Error::invalid(format!("unexpected column '{h}' in path CSV header")));
        }
    }
    let mut times = Vec::new();
    let mut values = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let parse = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::invalid(format!("malformed number '{s}' in path CSV")))
        };
        times.push(parse(&rec[0])?);
        for k in 0..dim {
            values.push(parse(&rec[k + 1])?);
        }
    }
    SampledPath::new(Partition::new(times)?, values, dim)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout() {
        let g = Partition::new(vec![0.0, 0.5, 1.0]).unwrap();
        let p = SampledPath::new(g, vec![0.0, 1.0, 0.1, 1e-7, 0.3, -2.5], 2).unwrap();
        let mut buf = Vec::new();
        write_path_csv(&p, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text, "t,x0,x1\n0,0,1\n0.5,0.1,1e-7\n1,0.3,-2.5\n");
        assert_eq!(read_path_csv(&buf[..]).unwrap(), p);
    }

    #[test]
    fn rejects_bad_header() {
        assert!(read_path_csv("time,x0\n0,1\n1,2\n".as_bytes()).is_err());
        assert!(read_path_csv("t,y\n0,1\n1,2\n".as_bytes()).is_err());
    }
}
