use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Direction, Flow, FlowDataset, Label, PacketRecord, TcpFlags};
use crate::error::{Error, Result};

/// Header of the per-packet CSV format, in column order.
pub const CSV_COLUMNS: [&str; 18] = [
    "flow_id",
    "pkt_idx",
    "src_port",
    "dst_port",
    "protocol",
    "length",
    "iat_us",
    "direction",
    "flag_fin",
    "flag_syn",
    "flag_rst",
    "flag_psh",
    "flag_ack",
    "flag_urg",
    "flag_ece",
    "flag_cwr",
    "label",
    "attack_type",
];

#[derive(Debug, Deserialize, Serialize)]
struct Row {
    flow_id: String,
    pkt_idx: u32,
    src_port: u16,
    dst_port: u16,
    protocol: u8,
    length: u32,
    iat_us: u64,
    direction: u8,
    flag_fin: u8,
    flag_syn: u8,
    flag_rst: u8,
    flag_psh: u8,
    flag_ack: u8,
    flag_urg: u8,
    flag_ece: u8,
    flag_cwr: u8,
    label: u8,
    attack_type: String,
}

impl Row {
    fn flags(&self) -> [u8; 8] {
        [
            self.flag_fin,
            self.flag_syn,
            self.flag_rst,
            self.flag_psh,
            self.flag_ack,
            self.flag_urg,
            self.flag_ece,
            self.flag_cwr,
        ]
    }
}

struct PendingFlow {
    flow: Flow,
    indices: Vec<u32>,
}

/// Load a per-packet CSV file and group rows into flows.
pub fn load_flows_csv(path: impl AsRef<Path>) -> Result<FlowDataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_flows_csv(file)
}

/// Parse the per-packet CSV format from any reader.
///
/// Flows appear in order of their first row; packets within a flow are
/// ordered by `pkt_idx`.
pub fn read_flows_csv(reader: impl Read) -> Result<FlowDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::MalformedRow {
            line: 1,
            msg: e.to_string(),
        })?
        .clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(Error::EmptyDataset);
    }
    for col in CSV_COLUMNS {
        if !headers.iter().any(|h| h == col) {
            return Err(Error::MalformedRow {
                line: 1,
                msg: format!("missing column {col:?}"),
            });
        }
    }

    let mut order: Vec<PendingFlow> = Vec::new();
    let mut by_id: HashMap<String, usize> = HashMap::new();

    for record in rdr.records() {
        let record = record.map_err(|e| Error::MalformedRow {
            line: e.position().map_or(0, |p| p.line()),
            msg: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let malformed = |msg: String| Error::MalformedRow { line, msg };
        let row: Row = record
            .deserialize(Some(&headers))
            .map_err(|e| malformed(e.to_string()))?;

        let label = Label::from_bit(row.label)
            .ok_or_else(|| malformed(format!("label must be 0 or 1, got {}", row.label)))?;
        let direction = match row.direction {
            0 => Direction::Forward,
            1 => Direction::Reverse,
            d => return Err(malformed(format!("direction must be 0 or 1, got {d}"))),
        };
        let mut flags = TcpFlags::default();
        for (bit, v) in row.flags().into_iter().enumerate() {
            match v {
                0 | 1 => flags.set(bit, v == 1),
                _ => return Err(malformed(format!("tcp flag values must be 0 or 1, got {v}"))),
            }
        }
        let packet = PacketRecord {
            iat_us: row.iat_us,
            length_bytes: row.length,
            direction,
            tcp_flags: flags,
        };

        match by_id.get(&row.flow_id) {
            Some(&slot) => {
                let pending = &mut order[slot];
                let flow = &pending.flow;
                let reject = |msg: &str| Error::InvalidFlow {
                    flow_id: row.flow_id.clone(),
                    msg: format!("{msg} (line {line})"),
                };
                if flow.label != label {
                    return Err(reject("mixed labels within one flow"));
                }
                if flow.attack_type != row.attack_type {
                    return Err(reject("mixed attack types within one flow"));
                }
                if flow.src_port != row.src_port
                    || flow.dst_port != row.dst_port
                    || flow.protocol != row.protocol
                {
                    return Err(reject("ports/protocol change within one flow"));
                }
                pending.flow.packets.push(packet);
                pending.indices.push(row.pkt_idx);
            }
            None => {
                by_id.insert(row.flow_id.clone(), order.len());
                order.push(PendingFlow {
                    flow: Flow {
                        flow_id: row.flow_id,
                        src_port: row.src_port,
                        dst_port: row.dst_port,
                        protocol: row.protocol,
                        packets: vec![packet],
                        label,
                        attack_type: row.attack_type,
                    },
                    indices: vec![row.pkt_idx],
                });
            }
        }
    }

    if order.is_empty() {
        return Err(Error::EmptyDataset);
    }

    let mut flows = Vec::with_capacity(order.len());
    for PendingFlow { mut flow, indices } in order {
        let mut keyed: Vec<(u32, PacketRecord)> = indices.into_iter().zip(flow.packets).collect();
        keyed.sort_by_key(|(idx, _)| *idx);
        if keyed.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::InvalidFlow {
                flow_id: flow.flow_id,
                msg: "duplicate pkt_idx".to_string(),
            });
        }
        flow.packets = keyed.into_iter().map(|(_, p)| p).collect();
        flow.validate()?;
        flows.push(flow);
    }
    Ok(FlowDataset::new(flows))
}

/// Write a dataset in the per-packet CSV format (`pkt_idx` is 0-based).
pub fn write_flows_csv(ds: &FlowDataset, out: impl Write) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    let to_err = |e: csv::Error| Error::invalid(format!("csv write failed: {e}"));
    for flow in &ds.flows {
        for (i, p) in flow.packets.iter().enumerate() {
            let f = |bit: usize| u8::from(p.tcp_flags.get(bit));
            wtr.serialize(Row {
                flow_id: flow.flow_id.clone(),
                pkt_idx: i as u32,
                src_port: flow.src_port,
                dst_port: flow.dst_port,
                protocol: flow.protocol,
                length: p.length_bytes,
                iat_us: p.iat_us,
                direction: match p.direction {
                    Direction::Forward => 0,
                    Direction::Reverse => 1,
                },
                flag_fin: f(0),
                flag_syn: f(1),
                flag_rst: f(2),
                flag_psh: f(3),
                flag_ack: f(4),
                flag_urg: f(5),
                flag_ece: f(6),
                flag_cwr: f(7),
                label: flow.label.bit(),
                attack_type: flow.attack_type.clone(),
            })
            .map_err(to_err)?;
        }
    }
    wtr.flush()
        .map_err(|e| Error::invalid(format!("csv flush failed: {e}")))?;
    Ok(())
}
