//! Uniformly sampled multi-channel records and their file formats.
//!
//! CSV layout: optional `#` comment lines carrying `unit=` and
//! `sample_rate_hz=`, then a header `time_s,<channel>,...` and one row per
//! sample.
//!
//! Binary layout (all little-endian):
//!
//! | offset | size | field                                   |
//! |--------|------|-----------------------------------------|
//! | 0      | 4    | magic `LVTS`                            |
//! | 4      | 4    | format version, u32 (= 1)               |
//! | 8      | 8    | sample rate, f64 (Hz)                   |
//! | 16     | 4    | channel count C, u32                    |
//! | 20     | 8    | samples per channel N, u64              |
//! | 28     | 2+k  | unit symbol: u16 length + UTF-8 bytes   |
//! | ...    |      | C channel names: u16 length + UTF-8     |
//! | ...    | 8·C·N| samples, f64, channel-major             |

use std::io::{BufRead, BufReader, Read, Write};

use super::mode::Unit;
use crate::error::{Error, Result};

pub const TRUE_POSITION: &str = "true_position";
pub const MEASURED_POSITION: &str = "measured_position";
pub const FEEDBACK_FORCE: &str = "feedback_force";
pub const ENVELOPE: &str = "envelope";

const MAGIC: &[u8; 4] = b"LVTS";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Channel {
    pub name: String,
    pub values: Vec<f64>,
}

/// A uniformly sampled record. `unit` applies to the coordinate channels;
/// a feedback force channel is in N (or N·m for librational modes).
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    sample_rate: f64,
    unit: Unit,
    channels: Vec<Channel>,
}

impl TimeSeries {
    pub fn new(sample_rate: f64, unit: Unit, channels: Vec<Channel>) -> Result<Self> {
        if !(sample_rate > 0.0 && sample_rate.is_finite()) {
            return Err(Error::invalid(format!("sample rate must be positive, got {sample_rate}")));
        }
        if let Some(first) = channels.first() {
            if channels.iter().any(|c| c.values.len() != first.values.len()) {
                return Err(Error::invalid("all channels must have equal length"));
            }
        }
        for (i, c) in channels.iter().enumerate() {
            if c.name.is_empty() || c.name.contains([',', '\n', '\r']) {
                return Err(Error::invalid(format!("invalid channel name '{}'", c.name)));
            }
            if channels[..i].iter().any(|o| o.name == c.name) {
                return Err(Error::invalid(format!("duplicate channel '{}'", c.name)));
            }
        }
        Ok(TimeSeries { sample_rate, unit, channels })
    }

    pub fn single(name: &str, sample_rate: f64, unit: Unit, values: Vec<f64>) -> Result<Self> {
        Self::new(sample_rate, unit, vec![Channel { name: name.to_string(), values }])
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.sample_rate
    }

    pub fn unit(&self) -> Unit {
        self.unit
    }

    pub fn channels(&self) -> &[Channel] {
        &self.channels
    }

    pub fn len(&self) -> usize {
        self.channels.first().map_or(0, |c| c.values.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn duration(&self) -> f64 {
        self.len() as f64 / self.sample_rate
    }

    pub fn channel(&self, name: &str) -> Option<&[f64]> {
        self.channels.iter().find(|c| c.name == name).map(|c| c.values.as_slice())
    }

    /// The named channel, or the only channel when the record has just one.
    pub fn primary(&self, preferred: &str) -> Option<&[f64]> {
        self.channel(preferred).or_else(|| (self.channels.len() == 1).then(|| self.channels[0].values.as_slice()))
    }

    pub fn time(&self, index: usize) -> f64 {
        index as f64 / self.sample_rate
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# unit={} sample_rate_hz={:?}", self.unit, self.sample_rate)?;
        write!(w, "time_s")?;
        for c in &self.channels {
            write!(w, ",{}", c.name)?;
        }
        writeln!(w)?;
        for i in 0..self.len() {
            write!(w, "{:?}", self.time(i))?;
            for c in &self.channels {
                write!(w, ",{:?}", c.values[i])?;
            }
            writeln!(w)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let reader = BufReader::new(r);
        let mut unit = Unit::Meter;
        let mut sample_rate = None;
        let mut header: Option<Vec<String>> = None;
        let mut times = Vec::new();
        let mut columns: Vec<Vec<f64>> = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                for token in comment.split_whitespace() {
                    if let Some(u) = token.strip_prefix("unit=") {
                        unit = u.parse()?;
                    } else if let Some(fs) = token.strip_prefix("sample_rate_hz=") {
                        sample_rate = Some(
                            fs.parse::<f64>()
                                .map_err(|e| Error::Format(format!("line {}: bad sample rate: {e}", lineno + 1)))?,
                        );
                    }
                }
                continue;
            }
            match &header {
                None => {
                    let names: Vec<String> = line.split(',').map(|s| s.trim().to_string()).collect();
                    if names.first().map(String::as_str) != Some("time_s") {
                        return Err(Error::Format("CSV header must start with time_s".into()));
                    }
                    columns = vec![Vec::new(); names.len() - 1];
                    header = Some(names);
                }
                Some(names) => {
                    let fields: Vec<&str> = line.split(',').collect();
                    if fields.len() != names.len() {
                        return Err(Error::Format(format!(
                            "line {}: expected {} fields, found {}",
                            lineno + 1,
                            names.len(),
                            fields.len()
                        )));
                    }
                    let parse = |s: &str| {
                        s.trim().parse::<f64>().map_err(|e| Error::Format(format!("line {}: '{s}': {e}", lineno + 1)))
                    };
                    times.push(parse(fields[0])?);
                    for (col, f) in columns.iter_mut().zip(&fields[1..]) {
                        col.push(parse(f)?);
                    }
                }
            }
        }
        let names = header.ok_or_else(|| Error::Format("missing CSV header".into()))?;
        let sample_rate = match sample_rate {
            Some(fs) => fs,
            None if times.len() >= 2 => (times.len() - 1) as f64 / (times[times.len() - 1] - times[0]),
            None => return Err(Error::Format("cannot infer sample rate from fewer than 2 rows".into())),
        };
        let channels = names.into_iter().skip(1).zip(columns).map(|(name, values)| Channel { name, values }).collect();
        TimeSeries::new(sample_rate, unit, channels)
    }

    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        fn put_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
            let len = u16::try_from(s.len()).map_err(|_| Error::invalid("name too long"))?;
            w.write_all(&len.to_le_bytes())?;
            w.write_all(s.as_bytes())?;
            Ok(())
        }
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&self.sample_rate.to_le_bytes())?;
        w.write_all(&(self.channels.len() as u32).to_le_bytes())?;
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        put_str(&mut w, self.unit.symbol())?;
        for c in &self.channels {
            put_str(&mut w, &c.name)?;
        }
        for c in &self.channels {
            for v in &c.values {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_binary<R: Read>(r: R) -> Result<Self> {
        let mut r = BufReader::new(r);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a time-series file (bad magic)".into()));
        }
        let version = u32::from_le_bytes(read_array(&mut r)?);
        if version != VERSION {
            return Err(Error::Format(format!("unsupported format version {version}")));
        }
        let sample_rate = f64::from_le_bytes(read_array(&mut r)?);
        let count = u32::from_le_bytes(read_array(&mut r)?) as usize;
        let samples = u64::from_le_bytes(read_array(&mut r)?) as usize;
        let unit: Unit = read_str(&mut r)?.parse()?;
        let names = (0..count).map(|_| read_str(&mut r)).collect::<Result<Vec<_>>>()?;
        let mut channels = Vec::with_capacity(count);
        for name in names {
            let mut values = Vec::with_capacity(samples);
            for _ in 0..samples {
                values.push(f64::from_le_bytes(read_array(&mut r)?));
            }
            channels.push(Channel { name, values });
        }
        TimeSeries::new(sample_rate, unit, channels)
    }
}

fn read_array<R: Read, const N: usize>(r: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(|e| Error::Format(format!("truncated time-series file: {e}")))?;
    Ok(buf)
}

fn read_str<R: Read>(r: &mut R) -> Result<String> {
    let len = u16::from_le_bytes(read_array(r)?) as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf).map_err(|e| Error::Format(format!("truncated time-series file: {e}")))?;
    String::from_utf8(buf).map_err(|e| Error::Format(format!("invalid UTF-8 in name: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> TimeSeries {
        TimeSeries::new(
            1000.0,
            Unit::Meter,
            vec![
                Channel { name: TRUE_POSITION.into(), values: vec![1e-10, -2.5e-11, 3.0e-9] },
                Channel { name: FEEDBACK_FORCE.into(), values: vec![0.0, 1e-18, -4e-17] },
            ],
        )
        .unwrap()
    }

    #[test]
    fn rejects_ragged_channels() {
        let r = TimeSeries::new(
            10.0,
            Unit::Meter,
            vec![Channel { name: "a".into(), values: vec![1.0] }, Channel { name: "b".into(), values: vec![1.0, 2.0] }],
        );
        assert!(r.is_err());
        assert!(TimeSeries::single("a", 0.0, Unit::Meter, vec![]).is_err());
    }

    #[test]
    fn csv_header_layout() {
        let mut buf = Vec::new();
        sample().write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let header = text.lines().find(|l| !l.starts_with('#')).unwrap();
        assert_eq!(header, "time_s,true_position,feedback_force");
    }

    #[test]
    fn csv_without_comment_infers_rate() {
        let text = "time_s,x\n0.0,1.0\n0.5,2.0\n1.0,3.0\n";
        let ts = TimeSeries::read_csv(text.as_bytes()).unwrap();
        assert_eq!(ts.sample_rate(), 2.0);
        assert_eq!(ts.channel("x").unwrap(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn binary_header_bytes() {
        let mut buf = Vec::new();
        sample().write_binary(&mut buf).unwrap();
        assert_eq!(&buf[0..4], b"LVTS");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 1);
        assert_eq!(f64::from_le_bytes(buf[8..16].try_into().unwrap()), 1000.0);
        assert_eq!(u32::from_le_bytes(buf[16..20].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(buf[20..28].try_into().unwrap()), 3);
        assert!(TimeSeries::read_binary(&buf[..buf.len() - 3]).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(TimeSeries::read_binary(bad.as_slice()).is_err());
    }

    proptest! {
        #[test]
        fn csv_and_binary_round_trip(
            values in prop::collection::vec(-1e3f64..1e3, 2..50),
            fs in 1.0f64..1e5,
        ) {
            let scaled: Vec<f64> = values.iter().map(|v| v * 1e-12).collect();
            let ts = TimeSeries::new(fs, Unit::Radian, vec![
                Channel { name: TRUE_POSITION.into(), values: scaled.clone() },
                Channel { name: MEASURED_POSITION.into(), values: values.clone() },
            ]).unwrap();
            let mut csv = Vec::new();
            ts.write_csv(&mut csv).unwrap();
            prop_assert_eq!(&TimeSeries::read_csv(csv.as_slice()).unwrap(), &ts);
            let mut bin = Vec::new();
            ts.write_binary(&mut bin).unwrap();
            prop_assert_eq!(&TimeSeries::read_binary(bin.as_slice()).unwrap(), &ts);
        }
    }
}
