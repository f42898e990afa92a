use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::Deserialize;

use super::{Hour, TraceError, TraceSet, UsagePoint, UsageSeries, VmId, VmRecord};

const VMS_HEADER: [&str; 7] = [
    "vm_id",
    "subscriber_id",
    "created_at",
    "deleted_at",
    "requested_cores",
    "requested_mem",
    "requested_net",
];
const USAGE_HEADER: [&str; 3] = ["vm_id", "hour", "usage_rate"];

#[derive(Deserialize)]
struct VmRow {
    vm_id: String,
    subscriber_id: usize,
    created_at: Hour,
    deleted_at: Option<Hour>,
    requested_cores: f64,
    requested_mem: f64,
    requested_net: f64,
}

#[derive(Deserialize)]
struct UsageRow {
    vm_id: String,
    hour: Hour,
    usage_rate: f64,
}

fn parse_err(file: &str, err: csv::Error) -> TraceError {
    let line = err.position().map_or(0, |p| p.line());
    TraceError::Parse {
        file: file.to_owned(),
        line,
        message: err.to_string(),
    }
}

fn check_header<R: Read>(rdr: &mut csv::Reader<R>, file: &str, expected: &[&str]) -> Result<(), TraceError> {
    let header = rdr.headers().map_err(|e| parse_err(file, e))?;
    if header.iter().ne(expected.iter().copied()) {
        return Err(TraceError::Parse {
            file: file.to_owned(),
            line: 1,
            message: format!(
                "expected header '{}', found '{}'",
                expected.join(","),
                header.iter().collect::<Vec<_>>().join(",")
            ),
        });
    }
    Ok(())
}

/// Loads `vms.csv` and `usage.csv` and validates them into a [`TraceSet`].
pub fn load_traces(vms_path: &Path, usage_path: &Path) -> Result<TraceSet, TraceError> {
    read_traces(File::open(vms_path)?, File::open(usage_path)?)
}

pub fn read_traces<V: Read, U: Read>(vms: V, usage: U) -> Result<TraceSet, TraceError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(vms);
    check_header(&mut rdr, "vms.csv", &VMS_HEADER)?;
    let mut records = Vec::new();
    for row in rdr.deserialize::<VmRow>() {
        let row = row.map_err(|e| parse_err("vms.csv", e))?;
        records.push(VmRecord {
            vm_id: VmId(row.vm_id),
            subscriber: row.subscriber_id,
            created_at: row.created_at,
            deleted_at: row.deleted_at,
            requested_cores: row.requested_cores,
            requested_mem: row.requested_mem,
            requested_net: row.requested_net,
        });
    }

    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(usage);
    check_header(&mut rdr, "usage.csv", &USAGE_HEADER)?;
    // Series are kept in first-appearance order so that writing reproduces the input.
    let mut series: Vec<UsageSeries> = Vec::new();
    let mut slot = std::collections::HashMap::new();
    for row in rdr.deserialize::<UsageRow>() {
        let row = row.map_err(|e| parse_err("usage.csv", e))?;
        let i = *slot.entry(row.vm_id.clone()).or_insert_with(|| {
            series.push(UsageSeries {
                vm_id: VmId(row.vm_id.clone()),
                points: Vec::new(),
            });
            series.len() - 1
        });
        series[i].points.push(UsagePoint {
            hour: row.hour,
            rate: row.usage_rate,
        });
    }
    TraceSet::new(records, series, None)
}

/// Writes `vms.csv` and `usage.csv` into `dir`, creating it if needed.
pub fn write_traces(trace: &TraceSet, dir: &Path) -> Result<(), TraceError> {
    std::fs::create_dir_all(dir)?;
    let vms = File::create(dir.join("vms.csv"))?;
    let usage = File::create(dir.join("usage.csv"))?;
    write_traces_to(trace, vms, usage)
}

pub fn write_traces_to<V: Write, U: Write>(trace: &TraceSet, vms: V, usage: U) -> Result<(), TraceError> {
    let to_io = |e: csv::Error| TraceError::Io(e.into());
    let mut w = csv::Writer::from_writer(vms);
    w.write_record(VMS_HEADER).map_err(to_io)?;
    for vm in trace.vms() {
        w.write_record([
            vm.vm_id.0.clone(),
            vm.subscriber.to_string(),
            vm.created_at.to_string(),
            vm.deleted_at.map(|d| d.to_string()).unwrap_or_default(),
            vm.requested_cores.to_string(),
            vm.requested_mem.to_string(),
            vm.requested_net.to_string(),
        ])
        .map_err(to_io)?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_writer(usage);
    w.write_record(USAGE_HEADER).map_err(to_io)?;
    for s in trace.usage() {
        for p in &s.points {
            w.write_record([s.vm_id.0.clone(), p.hour.to_string(), p.rate.to_string()])
                .map_err(to_io)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const VMS: &str =
        "vm_id,subscriber_id,created_at,deleted_at,requested_cores,requested_mem,requested_net\nvm0,0,0,2,4,8,100\n";

    #[test]
    fn minimal_well_formed_input() {
        let t = read_traces(
            VMS.as_bytes(),
            "vm_id,hour,usage_rate\nvm0,0,0.5\nvm0,1,0.25\n".as_bytes(),
        )
        .unwrap();
        assert_eq!(t.num_subscribers(), 1);
        assert_eq!(t.vms().len(), 1);
        assert_eq!(t.usage()[0].points.len(), 2);
        assert_eq!(t.horizon(), 2);
    }

    #[test]
    fn usage_outside_lifetime_is_rejected() {
        let err = read_traces(VMS.as_bytes(), "vm_id,hour,usage_rate\nvm0,5,0.5\n".as_bytes()).unwrap_err();
        assert!(matches!(err, TraceError::Validation(_)), "{err}");
    }

    #[test]
    fn usage_rate_above_one_is_rejected() {
        let err = read_traces(VMS.as_bytes(), "vm_id,hour,usage_rate\nvm0,1,1.3\n".as_bytes()).unwrap_err();
        assert!(matches!(err, TraceError::Validation(_)), "{err}");
    }

    #[test]
    fn malformed_row_reports_line() {
        let bad = format!("{VMS}vm1,0,zero,3,4,8,100\n");
        match read_traces(bad.as_bytes(), "vm_id,hour,usage_rate\n".as_bytes()) {
            Err(TraceError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn empty_deleted_at_is_open_ended() {
        let vms = "vm_id,subscriber_id,created_at,deleted_at,requested_cores,requested_mem,requested_net\nvm0,0,0,,4,8,100\nvm1,0,0,6,4,8,100\n";
        let t = read_traces(vms.as_bytes(), "vm_id,hour,usage_rate\n".as_bytes()).unwrap();
        assert_eq!(t.vms()[0].deleted_at, None);
        assert_eq!(t.vms()[0].end(t.horizon()), 6);
    }

    #[test]
    fn wrong_header_is_a_parse_error() {
        let err = read_traces("a,b\n".as_bytes(), "vm_id,hour,usage_rate\n".as_bytes()).unwrap_err();
        assert!(matches!(err, TraceError::Parse { line: 1, .. }));
    }
}
