//! On-disk representations: the binary hit stream, the CSV interchange
//! tables, and 16-bit PGM images.
//!
//! Every writer here is deterministic: identical inputs produce identical
//! bytes. Floats are printed with the shortest representation that parses
//! back to the same value, so a write/read/write cycle is byte-stable.

use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write as _};
use std::path::Path;

use qcrt_core::coincidence::{DelayHistogram, PairRecord};
use qcrt_core::event::{PhotonEvent, PixelHit};
use qcrt_core::sim::{Fate, TruthRecord, V2f};

/// First four bytes of a binary hit file.
pub const HIT_MAGIC: [u8; 4] = *b"QCRT";
/// Current binary hit format version.
pub const HIT_VERSION: u16 = 1;
const HIT_HEADER_LEN: usize = 16;
const HIT_RECORD_LEN: usize = 16;

#[derive(Debug)]
pub enum FormatError {
    Io { path: String, source: io::Error },
    /// Structurally broken file. `line` is 1-based for text formats and a
    /// byte offset for binary ones.
    Malformed {
        path: String,
        line: usize,
        reason: String,
    },
}

impl std::fmt::Display for FormatError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FormatError::Io { path, source } => write!(f, "{path}: {source}"),
            FormatError::Malformed { path, line, reason } => {
                write!(f, "{path}:{line}: {reason}")
            }
        }
    }
}

impl std::error::Error for FormatError {}

fn io_err(path: &Path, source: io::Error) -> FormatError {
    FormatError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn bad(path: &Path, line: usize, reason: impl Into<String>) -> FormatError {
    FormatError::Malformed {
        path: path.display().to_string(),
        line,
        reason: reason.into(),
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), FormatError> {
    let mut f = fs::File::create(path).map_err(|e| io_err(path, e))?;
    f.write_all(bytes).map_err(|e| io_err(path, e))?;
    Ok(())
}

// ---------------------------------------------------------------- binary hits

/// Write a time-tagged hit stream. Layout: 16-byte header (magic "QCRT",
/// format version u16, sensor width u16, sensor height u16, all
/// little-endian, then 6 reserved zero bytes), followed by one packed
/// 16-byte record per hit: x u16, y u16, toa_ps u64, tot u16, reserved u16.
pub fn write_hits(
    path: &Path,
    width: u16,
    height: u16,
    hits: &[PixelHit],
) -> Result<(), FormatError> {
    let mut buf = Vec::with_capacity(HIT_HEADER_LEN + hits.len() * HIT_RECORD_LEN);
    buf.extend_from_slice(&HIT_MAGIC);
    buf.extend_from_slice(&HIT_VERSION.to_le_bytes());
    buf.extend_from_slice(&width.to_le_bytes());
    buf.extend_from_slice(&height.to_le_bytes());
    buf.extend_from_slice(&[0u8; 6]);
    for h in hits {
        buf.extend_from_slice(&h.x.to_le_bytes());
        buf.extend_from_slice(&h.y.to_le_bytes());
        buf.extend_from_slice(&h.toa_ps.to_le_bytes());
        buf.extend_from_slice(&h.tot.to_le_bytes());
        buf.extend_from_slice(&0u16.to_le_bytes());
    }
    write_atomic(path, &buf)
}

/// Read a binary hit stream, returning the sensor dimensions from the
/// header and the records in file order.
pub fn read_hits(path: &Path) -> Result<(u16, u16, Vec<PixelHit>), FormatError> {
    let buf = fs::read(path).map_err(|e| io_err(path, e))?;
    if buf.len() < HIT_HEADER_LEN {
        return Err(bad(path, 0, "file shorter than the 16-byte header"));
    }
    if buf[0..4] != HIT_MAGIC {
        return Err(bad(path, 0, "bad magic, expected \"QCRT\""));
    }
    let version = u16::from_le_bytes([buf[4], buf[5]]);
    if version != HIT_VERSION {
        return Err(bad(
            path,
            4,
            format!("unsupported format version {version}, expected {HIT_VERSION}"),
        ));
    }
    let width = u16::from_le_bytes([buf[6], buf[7]]);
    let height = u16::from_le_bytes([buf[8], buf[9]]);
    if buf[10..16] != [0u8; 6] {
        return Err(bad(path, 10, "reserved header bytes must be zero"));
    }
    let body = &buf[HIT_HEADER_LEN..];
    if body.len() % HIT_RECORD_LEN != 0 {
        return Err(bad(
            path,
            buf.len(),
            format!("truncated record: {} trailing bytes", body.len() % HIT_RECORD_LEN),
        ));
    }
    let mut hits = Vec::with_capacity(body.len() / HIT_RECORD_LEN);
    for (i, rec) in body.chunks_exact(HIT_RECORD_LEN).enumerate() {
        let offset = HIT_HEADER_LEN + i * HIT_RECORD_LEN;
        if rec[14..16] != [0u8; 2] {
            return Err(bad(path, offset + 14, "reserved record bytes must be zero"));
        }
        hits.push(PixelHit {
            x: u16::from_le_bytes([rec[0], rec[1]]),
            y: u16::from_le_bytes([rec[2], rec[3]]),
            toa_ps: u64::from_le_bytes(rec[4..12].try_into().unwrap()),
            tot: u16::from_le_bytes([rec[12], rec[13]]),
        });
    }
    Ok((width, height, hits))
}

// ------------------------------------------------------------------ CSV core

fn split_fields<'a>(
    path: &Path,
    lineno: usize,
    line: &'a str,
    expected: usize,
) -> Result<Vec<&'a str>, FormatError> {
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    if fields.len() != expected {
        return Err(bad(
            path,
            lineno,
            format!("expected {expected} fields, found {}", fields.len()),
        ));
    }
    Ok(fields)
}

fn parse<T: std::str::FromStr>(
    path: &Path,
    lineno: usize,
    field: &str,
    what: &str,
) -> Result<T, FormatError> {
    field
        .parse()
        .map_err(|_| bad(path, lineno, format!("bad {what}: {field:?}")))
}

/// Lines of `path` with the mandatory header checked and stripped. Yields
/// (1-based line number, line) for nonempty data lines.
fn csv_lines(
    path: &Path,
    header: &str,
) -> Result<Vec<(usize, String)>, FormatError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, first)) if first.trim() == header => {}
        Some((_, first)) => {
            return Err(bad(
                path,
                1,
                format!("expected header {header:?}, found {:?}", first.trim()),
            ))
        }
        None => return Err(bad(path, 1, format!("empty file, expected header {header:?}"))),
    }
    Ok(lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l.to_string()))
        .collect())
}

// ------------------------------------------------------------------ hits CSV

pub const HITS_HEADER: &str = "x,y,toa_ps,tot";

pub fn write_hits_csv(path: &Path, hits: &[PixelHit]) -> Result<(), FormatError> {
    let mut out = String::with_capacity(64 + hits.len() * 24);
    out.push_str(HITS_HEADER);
    out.push('\n');
    for h in hits {
        writeln!(out, "{},{},{},{}", h.x, h.y, h.toa_ps, h.tot).unwrap();
    }
    write_atomic(path, out.as_bytes())
}

pub fn read_hits_csv(path: &Path) -> Result<Vec<PixelHit>, FormatError> {
    let mut hits = Vec::new();
    for (lineno, line) in csv_lines(path, HITS_HEADER)? {
        let f = split_fields(path, lineno, &line, 4)?;
        hits.push(PixelHit {
            x: parse(path, lineno, f[0], "x pixel")?,
            y: parse(path, lineno, f[1], "y pixel")?,
            toa_ps: parse(path, lineno, f[2], "toa_ps")?,
            tot: parse(path, lineno, f[3], "tot")?,
        });
    }
    Ok(hits)
}

// ---------------------------------------------------------------- events CSV

pub const EVENTS_HEADER: &str = "x,y,t_ns,amplitude";

pub fn write_events_csv(path: &Path, events: &[PhotonEvent]) -> Result<(), FormatError> {
    let mut out = String::with_capacity(64 + events.len() * 40);
    out.push_str(EVENTS_HEADER);
    out.push('\n');
    for e in events {
        writeln!(out, "{},{},{},{}", e.x, e.y, e.t_ns, e.amplitude).unwrap();
    }
    write_atomic(path, out.as_bytes())
}

pub fn read_events_csv(path: &Path) -> Result<Vec<PhotonEvent>, FormatError> {
    let mut events = Vec::new();
    for (lineno, line) in csv_lines(path, EVENTS_HEADER)? {
        let f = split_fields(path, lineno, &line, 4)?;
        events.push(PhotonEvent {
            x: parse(path, lineno, f[0], "x position")?,
            y: parse(path, lineno, f[1], "y position")?,
            t_ns: parse(path, lineno, f[2], "t_ns")?,
            amplitude: parse(path, lineno, f[3], "amplitude")?,
        });
    }
    Ok(events)
}

// ----------------------------------------------------------- calibration CSV

pub const CALIBRATION_HEADER: &str = "tot,correction_ns";

pub fn write_calibration_csv(path: &Path, knots: &[(f64, f64)]) -> Result<(), FormatError> {
    let mut out = String::new();
    out.push_str(CALIBRATION_HEADER);
    out.push('\n');
    for &(tot, corr) in knots {
        writeln!(out, "{tot},{corr}").unwrap();
    }
    write_atomic(path, out.as_bytes())
}

pub fn read_calibration_csv(path: &Path) -> Result<Vec<(f64, f64)>, FormatError> {
    let mut knots = Vec::new();
    for (lineno, line) in csv_lines(path, CALIBRATION_HEADER)? {
        let f = split_fields(path, lineno, &line, 2)?;
        knots.push((
            parse(path, lineno, f[0], "tot")?,
            parse(path, lineno, f[1], "correction_ns")?,
        ));
    }
    Ok(knots)
}

// ----------------------------------------------------------------- pairs CSV

pub const PAIRS_HEADER: &str = "x1,y1,t1_ns,x2,y2,t2_ns,dt_ns";

/// Matched pairs: columns 1 are the image-arm event, columns 2 the
/// Fourier-arm event, dt = t1 - t2. Cluster amplitudes are not carried.
pub fn write_pairs_csv(path: &Path, pairs: &[PairRecord]) -> Result<(), FormatError> {
    let mut out = String::with_capacity(64 + pairs.len() * 80);
    out.push_str(PAIRS_HEADER);
    out.push('\n');
    for p in pairs {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            p.image.x, p.image.y, p.image.t_ns, p.fourier.x, p.fourier.y, p.fourier.t_ns, p.dt_ns
        )
        .unwrap();
    }
    write_atomic(path, out.as_bytes())
}

pub fn read_pairs_csv(path: &Path) -> Result<Vec<PairRecord>, FormatError> {
    let mut pairs = Vec::new();
    for (lineno, line) in csv_lines(path, PAIRS_HEADER)? {
        let f = split_fields(path, lineno, &line, 7)?;
        let image = PhotonEvent {
            x: parse(path, lineno, f[0], "x1")?,
            y: parse(path, lineno, f[1], "y1")?,
            t_ns: parse(path, lineno, f[2], "t1_ns")?,
            amplitude: 0,
        };
        let fourier = PhotonEvent {
            x: parse(path, lineno, f[3], "x2")?,
            y: parse(path, lineno, f[4], "y2")?,
            t_ns: parse(path, lineno, f[5], "t2_ns")?,
            amplitude: 0,
        };
        let dt_ns: f64 = parse(path, lineno, f[6], "dt_ns")?;
        // The writer computes dt from the stored times, so a mismatch means
        // the file was edited inconsistently or corrupted.
        if dt_ns != image.t_ns - fourier.t_ns {
            return Err(bad(
                path,
                lineno,
                format!("dt_ns {} does not equal t1_ns - t2_ns", dt_ns),
            ));
        }
        pairs.push(PairRecord {
            image,
            fourier,
            dt_ns,
        });
    }
    Ok(pairs)
}

// ------------------------------------------------------------- histogram CSV

pub const HISTOGRAM_HEADER: &str = "bin_center_ns,count";

pub fn write_histogram_csv(path: &Path, hist: &DelayHistogram) -> Result<(), FormatError> {
    let mut out = String::with_capacity(64 + hist.counts.len() * 16);
    out.push_str(HISTOGRAM_HEADER);
    out.push('\n');
    for (i, &c) in hist.counts.iter().enumerate() {
        writeln!(out, "{},{}", hist.bin_center_ns(i), c).unwrap();
    }
    write_atomic(path, out.as_bytes())
}

pub fn read_histogram_csv(path: &Path) -> Result<Vec<(f64, u64)>, FormatError> {
    let mut rows = Vec::new();
    for (lineno, line) in csv_lines(path, HISTOGRAM_HEADER)? {
        let f = split_fields(path, lineno, &line, 2)?;
        rows.push((
            parse(path, lineno, f[0], "bin_center_ns")?,
            parse(path, lineno, f[1], "count")?,
        ));
    }
    Ok(rows)
}

// ----------------------------------------------------------------- truth CSV

pub const TRUTH_HEADER: &str = "pair_id,r_x,r_y,theta_x,theta_y,t_ns,fate_image,fate_fourier";

fn fate_str(fate: Fate) -> &'static str {
    match fate {
        Fate::Detected => "detected",
        Fate::AbsorbedByScene => "absorbed",
        Fate::LostToQe => "lost_qe",
        Fate::OffSensor => "off_sensor",
    }
}

fn parse_fate(path: &Path, lineno: usize, s: &str) -> Result<Fate, FormatError> {
    match s {
        "detected" => Ok(Fate::Detected),
        "absorbed" => Ok(Fate::AbsorbedByScene),
        "lost_qe" => Ok(Fate::LostToQe),
        "off_sensor" => Ok(Fate::OffSensor),
        _ => Err(bad(path, lineno, format!("unknown fate {s:?}"))),
    }
}

/// One row of the ground-truth table: the sample-arm photon's emitted
/// kinematics plus what became of each photon. Detection times are not
/// carried by the file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthRow {
    pub pair_id: u64,
    pub r: V2f,
    pub theta: V2f,
    pub t_ns: f64,
    pub fate_image: Fate,
    pub fate_fourier: Fate,
}

pub fn write_truth_csv(path: &Path, truth: &[TruthRecord]) -> Result<(), FormatError> {
    let mut out = String::with_capacity(64 + truth.len() * 64);
    out.push_str(TRUTH_HEADER);
    out.push('\n');
    for t in truth {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            t.pair_id,
            t.r.x,
            t.r.y,
            t.theta.x,
            t.theta.y,
            t.t_emit_ns,
            fate_str(t.image.fate),
            fate_str(t.fourier.fate),
        )
        .unwrap();
    }
    write_atomic(path, out.as_bytes())
}

pub fn read_truth_csv(path: &Path) -> Result<Vec<TruthRow>, FormatError> {
    let mut rows = Vec::new();
    for (lineno, line) in csv_lines(path, TRUTH_HEADER)? {
        let f = split_fields(path, lineno, &line, 8)?;
        rows.push(TruthRow {
            pair_id: parse(path, lineno, f[0], "pair_id")?,
            r: V2f {
                x: parse(path, lineno, f[1], "r_x")?,
                y: parse(path, lineno, f[2], "r_y")?,
            },
            theta: V2f {
                x: parse(path, lineno, f[3], "theta_x")?,
                y: parse(path, lineno, f[4], "theta_y")?,
            },
            t_ns: parse(path, lineno, f[5], "t_ns")?,
            fate_image: parse_fate(path, lineno, f[6])?,
            fate_fourier: parse_fate(path, lineno, f[7])?,
        });
    }
    Ok(rows)
}

// -------------------------------------------------------------------- images

/// 16-bit grayscale PGM. Counts are rounded to the nearest integer and
/// clipped to the 0..=65535 sample range; the return value is the number of
/// clipped pixels so callers can warn about saturation.
pub fn write_image_pgm(path: &Path, counts: &[f64], width: usize, height: usize)
    -> Result<usize, FormatError>
{
    assert_eq!(counts.len(), width * height);
    let mut buf = Vec::with_capacity(32 + counts.len() * 2);
    buf.extend_from_slice(format!("P5\n{width} {height}\n65535\n").as_bytes());
    let mut clipped = 0usize;
    for &c in counts {
        let rounded = c.round();
        let sample = if rounded > 65535.0 {
            clipped += 1;
            65535u16
        } else if rounded < 0.0 {
            clipped += 1;
            0u16
        } else {
            rounded as u16
        };
        // Raw PGM stores the most significant byte first.
        buf.extend_from_slice(&sample.to_be_bytes());
    }
    write_atomic(path, &buf)?;
    Ok(clipped)
}

/// Binary foreground mask as an 8-bit PGM: 255 foreground, 0 background.
pub fn write_mask_pgm(path: &Path, mask: &[bool], width: usize, height: usize)
    -> Result<(), FormatError>
{
    assert_eq!(mask.len(), width * height);
    let mut buf = Vec::with_capacity(32 + mask.len());
    buf.extend_from_slice(format!("P5\n{width} {height}\n255\n").as_bytes());
    buf.extend(mask.iter().map(|&m| if m { 255u8 } else { 0u8 }));
    write_atomic(path, &buf)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pgm {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    /// Row-major samples; 8-bit files are widened.
    pub samples: Vec<u16>,
}

/// Read a binary (P5) PGM. `#` comments between header tokens are accepted.
pub fn read_pgm(path: &Path) -> Result<Pgm, FormatError> {
    let buf = fs::read(path).map_err(|e| io_err(path, e))?;
    if buf.len() < 2 || &buf[0..2] != b"P5" {
        return Err(bad(path, 0, "not a binary PGM (missing P5 magic)"));
    }
    // Header: three whitespace-separated integers after the magic, each
    // optionally preceded by comment lines, then one whitespace byte.
    let mut pos = 2usize;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        loop {
            while pos < buf.len() && buf[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < buf.len() && buf[pos] == b'#' {
                while pos < buf.len() && buf[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < buf.len() && buf[pos].is_ascii_digit() {
            pos += 1;
        }
        if pos == start {
            return Err(bad(path, start, "expected an integer header field"));
        }
        let text = std::str::from_utf8(&buf[start..pos]).unwrap();
        *field = text
            .parse()
            .map_err(|_| bad(path, start, format!("header field out of range: {text}")))?;
    }
    if pos >= buf.len() || !buf[pos].is_ascii_whitespace() {
        return Err(bad(path, pos, "expected single whitespace after maxval"));
    }
    pos += 1;
    let (width, height, maxval) = (fields[0], fields[1], fields[2]);
    if maxval == 0 || maxval > 65535 {
        return Err(bad(path, 0, format!("maxval {maxval} outside 1..=65535")));
    }
    let npx = width * height;
    let data = &buf[pos..];
    let samples = if maxval > 255 {
        if data.len() != npx * 2 {
            return Err(bad(path, pos, format!("expected {} sample bytes, found {}", npx * 2, data.len())));
        }
        data.chunks_exact(2)
            .map(|b| u16::from_be_bytes([b[0], b[1]]))
            .collect()
    } else {
        if data.len() != npx {
            return Err(bad(path, pos, format!("expected {npx} sample bytes, found {}", data.len())));
        }
        data.iter().map(|&b| b as u16).collect()
    };
    Ok(Pgm {
        width,
        height,
        maxval: maxval as u16,
        samples,
    })
}

// -------------------------------------------------------------- CSV matrices

/// Rectangular matrix of floats, one row per line. Used for image counts,
/// depth maps (millimeters), and confidence maps.
pub fn write_matrix_csv(path: &Path, values: &[f64], width: usize, height: usize)
    -> Result<(), FormatError>
{
    assert_eq!(values.len(), width * height);
    let mut out = String::with_capacity(values.len() * 8);
    for y in 0..height {
        let row = &values[y * width..(y + 1) * width];
        for (x, v) in row.iter().enumerate() {
            if x > 0 {
                out.push(',');
            }
            write!(out, "{v}").unwrap();
        }
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

pub fn read_matrix_csv(path: &Path) -> Result<(usize, usize, Vec<f64>), FormatError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut width = 0usize;
    let mut values = Vec::new();
    let mut height = 0usize;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: Result<Vec<f64>, _> = line.split(',').map(|v| v.trim().parse()).collect();
        let row = row.map_err(|_| bad(path, i + 1, "bad float in matrix row"))?;
        if height == 0 {
            width = row.len();
        } else if row.len() != width {
            return Err(bad(
                path,
                i + 1,
                format!("ragged matrix: row has {} values, expected {width}", row.len()),
            ));
        }
        values.extend(row);
        height += 1;
    }
    if height == 0 {
        return Err(bad(path, 1, "empty matrix"));
    }
    Ok((width, height, values))
}

// ----------------------------------------------------------- small index CSVs

pub const STACK_INDEX_HEADER: &str = "slice,z_mm,filename";

pub fn write_stack_index_csv(
    path: &Path,
    entries: &[(usize, f64, String)],
) -> Result<(), FormatError> {
    let mut out = String::new();
    out.push_str(STACK_INDEX_HEADER);
    out.push('\n');
    for (slice, z_mm, filename) in entries {
        writeln!(out, "{slice},{z_mm},{filename}").unwrap();
    }
    write_atomic(path, out.as_bytes())
}

pub fn read_stack_index_csv(path: &Path) -> Result<Vec<(usize, f64, String)>, FormatError> {
    let mut rows = Vec::new();
    for (lineno, line) in csv_lines(path, STACK_INDEX_HEADER)? {
        let f = split_fields(path, lineno, &line, 3)?;
        rows.push((
            parse(path, lineno, f[0], "slice")?,
            parse(path, lineno, f[1], "z_mm")?,
            f[2].to_string(),
        ));
    }
    Ok(rows)
}

pub const DEPTH_HISTOGRAM_HEADER: &str = "z_mm,count";

pub fn write_depth_histogram_csv(
    path: &Path,
    z_mm: &[f64],
    counts: &[u64],
) -> Result<(), FormatError> {
    assert_eq!(z_mm.len(), counts.len());
    let mut out = String::new();
    out.push_str(DEPTH_HISTOGRAM_HEADER);
    out.push('\n');
    for (z, c) in z_mm.iter().zip(counts) {
        writeln!(out, "{z},{c}").unwrap();
    }
    write_atomic(path, out.as_bytes())
}

pub fn read_depth_histogram_csv(path: &Path) -> Result<Vec<(f64, u64)>, FormatError> {
    let mut rows = Vec::new();
    for (lineno, line) in csv_lines(path, DEPTH_HISTOGRAM_HEADER)? {
        let f = split_fields(path, lineno, &line, 2)?;
        rows.push((
            parse(path, lineno, f[0], "z_mm")?,
            parse(path, lineno, f[1], "count")?,
        ));
    }
    Ok(rows)
}
