//! The per-iteration CSV trace.
//!
//! One header row, then one row per state `k = 0..=K`. Step columns are
//! empty on the last row. Floats use `{:.16e}`, which round-trips exactly.

use std::io::{Read, Write};

use crate::error::CliError;

pub const COLUMNS: [&str; 13] = [
    "k",
    "lambda",
    "gamma",
    "err_norm",
    "res_norm",
    "erg_res_norm",
    "disp_norm",
    "dist_fix",
    "pw_bound",
    "erg_bound",
    "local_model",
    "cert_value",
    "cert_bound",
];

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TraceRow {
    pub k: usize,
    pub lambda: Option<f64>,
    pub gamma: Option<f64>,
    pub err_norm: Option<f64>,
    pub res_norm: Option<f64>,
    pub erg_res_norm: Option<f64>,
    pub disp_norm: Option<f64>,
    pub dist_fix: Option<f64>,
    pub pw_bound: Option<f64>,
    pub erg_bound: Option<f64>,
    /// Bound on `dist_fix[k+1]^2` from the local recursion.
    pub local_model: Option<f64>,
    pub cert_value: Option<f64>,
    pub cert_bound: Option<f64>,
}

impl TraceRow {
    fn floats(&self) -> [Option<f64>; 12] {
        [
            self.lambda,
            self.gamma,
            self.err_norm,
            self.res_norm,
            self.erg_res_norm,
            self.disp_norm,
            self.dist_fix,
            self.pw_bound,
            self.erg_bound,
            self.local_model,
            self.cert_value,
            self.cert_bound,
        ]
    }

    fn from_floats(k: usize, f: [Option<f64>; 12]) -> TraceRow {
        TraceRow {
            k,
            lambda: f[0],
            gamma: f[1],
            err_norm: f[2],
            res_norm: f[3],
            erg_res_norm: f[4],
            disp_norm: f[5],
            dist_fix: f[6],
            pw_bound: f[7],
            erg_bound: f[8],
            local_model: f[9],
            cert_value: f[10],
            cert_bound: f[11],
        }
    }
}

pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_trace<W: Write>(out: W, rows: &[TraceRow]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| CliError::Io(std::io::Error::other(e));
    w.write_record(COLUMNS).map_err(io)?;
    for r in rows {
        let mut rec = vec![r.k.to_string()];
        rec.extend(r.floats().iter().map(|v| v.map(format_float).unwrap_or_default()));
        w.write_record(&rec).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

pub fn emit(rows: &[TraceRow]) -> String {
    let mut buf = vec![];
    write_trace(&mut buf, rows).expect("in-memory write");
    String::from_utf8(buf).expect("ascii output")
}

/// Parses a trace; a missing or reordered header, a bad number or an empty body is a schema error.
pub fn parse<R: Read>(input: R) -> Result<Vec<TraceRow>, CliError> {
    let bad = |m: String| CliError::Usage(format!("trace: {m}"));
    let mut rd = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header = rd.headers().map_err(|e| bad(e.to_string()))?.clone();
    if header.iter().ne(COLUMNS.iter().copied()) {
        return Err(bad(format!("header {:?} does not match {:?}", header.iter().collect::<Vec<_>>(), COLUMNS)));
    }
    let mut rows = vec![];
    for (line, rec) in rd.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let k: usize = rec[0].parse().map_err(|_| bad(format!("row {}: bad k '{}'", line + 1, &rec[0])))?;
        if k != rows.len() {
            return Err(bad(format!("row {}: expected k = {}, got {k}", line + 1, rows.len())));
        }
        let mut f = [None; 12];
        for (i, slot) in f.iter_mut().enumerate() {
            let s = &rec[i + 1];
            if !s.is_empty() {
                *slot = Some(s.parse::<f64>().map_err(|_| bad(format!("row {}, column {}: '{s}'", line + 1, COLUMNS[i + 1])))?);
            }
        }
        rows.push(TraceRow::from_floats(k, f));
    }
    if rows.is_empty() {
        return Err(bad("no rows".into()));
    }
    Ok(rows)
}
