use std::fmt::Write as _;

use serde::Serialize;
use spiking_replay::replay::Codec;

#[derive(Debug, Clone, Serialize)]
pub struct Cell {
    pub codec: Codec,
    pub entries: usize,
    pub neurons: usize,
    pub timesteps: usize,
    pub bits_per_sequence: u64,
    pub bytes: u64,
}

pub fn grid(codecs: &[Codec], entries: usize, neurons: &[usize], timesteps: usize) -> Vec<Cell> {
    let mut out = Vec::new();
    for &codec in codecs {
        for &n in neurons {
            out.push(Cell {
                codec,
                entries,
                neurons: n,
                timesteps,
                bits_per_sequence: codec.bits_per_sequence(timesteps),
                bytes: codec.footprint_bytes(entries, n, timesteps),
            });
        }
    }
    out
}

/// Decimal units with trailing zeros trimmed: 22400000 -> "22.4 MB", 640000 -> "640 kB".
pub fn human_bytes(bytes: u64) -> String {
    let (scale, unit) = match bytes {
        b if b >= 1_000_000_000 => (1e9, "GB"),
        b if b >= 1_000_000 => (1e6, "MB"),
        b if b >= 1_000 => (1e3, "kB"),
        _ => return format!("{bytes} B"),
    };
    let s = format!("{:.3}", bytes as f64 / scale);
    let s = s.trim_end_matches('0').trim_end_matches('.');
    format!("{s} {unit}")
}

fn codec_label(c: &Codec) -> String {
    match c {
        Codec::ChunkThreshold { ratio, threshold } => format!("chunk C_r={ratio} th={threshold}"),
        Codec::Aggregate => "aggregate".into(),
        Codec::Hybrid { ratio } => format!("hybrid C_r={ratio}"),
    }
}

pub fn table(cells: &[Cell], neurons: &[usize]) -> String {
    let mut s = format!("{:<22}", "codec");
    for n in neurons {
        let _ = write!(s, "{:>12}", format!("{n} neurons"));
    }
    s.push('\n');
    for row in cells.chunks(neurons.len()) {
        let _ = write!(s, "{:<22}", codec_label(&row[0].codec));
        for c in row {
            let _ = write!(s, "{:>12}", human_bytes(c.bytes));
        }
        s.push('\n');
    }
    s
}

pub fn csv(cells: &[Cell]) -> String {
    let mut s =
        String::from("codec,ratio,threshold,entries,neurons,timesteps,bits_per_sequence,bytes\n");
    for c in cells {
        let (kind, ratio, threshold) = match c.codec {
            Codec::ChunkThreshold { ratio, threshold } => ("chunk_threshold", ratio, threshold),
            Codec::Aggregate => ("aggregate", c.timesteps, 0),
            Codec::Hybrid { ratio } => ("hybrid", ratio, 0),
        };
        let _ = writeln!(
            s,
            "{kind},{ratio},{threshold},{},{},{},{},{}",
            c.entries, c.neurons, c.timesteps, c.bits_per_sequence, c.bytes
        );
    }
    s
}
