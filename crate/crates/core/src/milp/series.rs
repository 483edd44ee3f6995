//! Time series of instances and their line-delimited JSON persistence.
//!
//! One record per line:
//!
//! ```text
//! {"format_version":1,"series":"caching-train-0000","t":0,
//!  "num_binary":3,"num_continuous":0,"var_kinds":"BBB",
//!  "num_rows":1,"c":[..],"b":[..],"a":[[row,col,value],..],
//!  "label":{"status":"optimal","z":[..],"objective":-5.0,"solve_seconds":0.0001}}
//! ```
//!
//! `label` is `null` for unlabeled instances. Records of one series are
//! contiguous with `t = 0, 1, 2, …`. Non-finite objectives (infeasible or
//! unbounded labels) are written as the strings `"inf"` / `"-inf"`.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::milp::{Label, MilpInstance};
use crate::sparse::CsrMatrix;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceSeries {
    pub id: String,
    pub instances: Vec<MilpInstance>,
    pub labels: Vec<Option<Label>>,
}

impl InstanceSeries {
    pub fn new(id: impl Into<String>, instances: Vec<MilpInstance>) -> Self {
        let labels = vec![None; instances.len()];
        Self {
            id: id.into(),
            instances,
            labels,
        }
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn labeled_count(&self) -> usize {
        self.labels.iter().filter(|l| l.is_some()).count()
    }

    /// Whether every timestep shares one sparsity pattern and dimensions.
    pub fn shares_structure(&self) -> bool {
        let Some(first) = self.instances.first() else {
            return true;
        };
        let pattern = |inst: &MilpInstance| {
            inst.a()
                .triplets()
                .map(|(i, j, _)| (i, j))
                .collect::<Vec<_>>()
        };
        let base = pattern(first);
        self.instances.iter().all(|inst| {
            inst.num_vars() == first.num_vars()
                && inst.num_rows() == first.num_rows()
                && inst.num_binary() == first.num_binary()
                && pattern(inst) == base
        })
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    format_version: u32,
    series: String,
    t: usize,
    num_binary: usize,
    num_continuous: usize,
    var_kinds: String,
    num_rows: usize,
    c: Vec<f64>,
    b: Vec<f64>,
    a: Vec<(usize, usize, f64)>,
    label: Option<LabelRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LabelRecord {
    status: crate::milp::SolveStatus,
    z: Vec<f64>,
    #[serde(with = "extended_float")]
    objective: f64,
    #[serde(default)]
    solve_seconds: f64,
}

mod extended_float {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Number(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else if *v < 0.0 {
            s.serialize_str("-inf")
        } else {
            s.serialize_str("nan")
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Number(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(serde::de::Error::custom(format!("bad float {other:?}"))),
            },
        }
    }
}

pub fn write_jsonl<W: Write>(series: &[InstanceSeries], mut out: W) -> Result<()> {
    for s in series {
        for (t, (inst, label)) in s.instances.iter().zip(&s.labels).enumerate() {
            let record = Record {
                format_version: FORMAT_VERSION,
                series: s.id.clone(),
                t,
                num_binary: inst.num_binary(),
                num_continuous: inst.num_continuous(),
                var_kinds: (0..inst.num_vars())
                    .map(|j| if j < inst.num_binary() { 'B' } else { 'C' })
                    .collect(),
                num_rows: inst.num_rows(),
                c: inst.c().to_vec(),
                b: inst.b().to_vec(),
                a: inst.a().triplets().collect(),
                label: label.as_ref().map(|l| LabelRecord {
                    status: l.status,
                    z: l.z.clone(),
                    objective: l.objective,
                    solve_seconds: l.solve_seconds,
                }),
            };
            serde_json::to_writer(&mut out, &record)?;
            out.write_all(b"\n")?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_jsonl<R: BufRead>(input: R) -> Result<Vec<InstanceSeries>> {
    let mut series: Vec<InstanceSeries> = Vec::new();
    for (lineno, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |msg: String| Error::Format(format!("line {}: {msg}", lineno + 1));
        let record: Record = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        if record.format_version != FORMAT_VERSION {
            return Err(bad(format!(
                "unsupported format_version {}",
                record.format_version
            )));
        }
        let n = record.num_binary + record.num_continuous;
        let kinds_ok = record.var_kinds.len() == n
            && record
                .var_kinds
                .chars()
                .enumerate()
                .all(|(j, k)| k == if j < record.num_binary { 'B' } else { 'C' });
        if !kinds_ok {
            return Err(bad("var_kinds must list binaries first".into()));
        }
        let a = CsrMatrix::from_triplets(record.num_rows, n, record.a)?;
        let inst = MilpInstance::new(record.c, a, record.b, record.num_binary)?;
        let label = record.label.map(|l| Label {
            status: l.status,
            z: l.z,
            objective: l.objective,
            solve_seconds: l.solve_seconds,
        });
        if let Some(l) = &label {
            if l.z.len() != n {
                return Err(bad("label length differs from variable count".into()));
            }
        }
        match series.last_mut() {
            Some(s) if s.id == record.series => {
                if record.t != s.len() {
                    return Err(bad(format!("expected t = {}, got {}", s.len(), record.t)));
                }
                s.instances.push(inst);
                s.labels.push(label);
            }
            _ => {
                if series.iter().any(|s| s.id == record.series) {
                    return Err(bad(format!("series {} is not contiguous", record.series)));
                }
                if record.t != 0 {
                    return Err(bad(format!("series {} must start at t = 0", record.series)));
                }
                series.push(InstanceSeries {
                    id: record.series,
                    instances: vec![inst],
                    labels: vec![label],
                });
            }
        }
    }
    Ok(series)
}
