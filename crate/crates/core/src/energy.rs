//! VT-Micro instantaneous fuel consumption.

use std::path::Path;

const BUILTIN_TABLE: &str = include_str!("../data/vt_micro_fuel.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpeedUnit {
    MetresPerSecond,
    KilometresPerHour,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AccelUnit {
    MetresPerSecondSq,
    KilometresPerHourPerSecond,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateUnit {
    MillilitresPerSecond,
    LitresPerSecond,
}

#[derive(Debug, thiserror::Error)]
pub enum EnergyError {
    #[error("fuel table: {0}")]
    Parse(String),
    #[error("reading fuel table: {0}")]
    Io(#[from] std::io::Error),
}

/// Regression matrices for positive (`l`) and negative (`m`) acceleration,
/// indexed `[speed power][acceleration power]`, and the units they expect.
#[derive(Debug, Clone, PartialEq)]
pub struct VtMicroCoefficients {
    pub l: [[f64; 4]; 4],
    pub m: [[f64; 4]; 4],
    pub speed_unit: SpeedUnit,
    pub accel_unit: AccelUnit,
    pub output_unit: RateUnit,
}

impl VtMicroCoefficients {
    /// Placeholder light-duty set shipped with the crate.
    pub fn builtin() -> Self {
        Self::from_text(BUILTIN_TABLE).expect("shipped fuel table is valid")
    }

    /// All-zero matrices in SI units with output in ml/s.
    pub fn zeros() -> Self {
        Self {
            l: [[0.0; 4]; 4],
            m: [[0.0; 4]; 4],
            speed_unit: SpeedUnit::MetresPerSecond,
            accel_unit: AccelUnit::MetresPerSecondSq,
            output_unit: RateUnit::MillilitresPerSecond,
        }
    }

    pub fn load(path: &Path) -> Result<Self, EnergyError> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    /// Parses a `units ...` header line followed by an `L` and an `M` block
    /// of four rows of four numbers each.
    pub fn from_text(text: &str) -> Result<Self, EnergyError> {
        let err = |m: String| EnergyError::Parse(m);
        let mut units: Option<(SpeedUnit, AccelUnit, RateUnit)> = None;
        let mut blocks: [Vec<[f64; 4]>; 2] = [Vec::new(), Vec::new()];
        let mut current: Option<usize> = None;
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("units") {
                units = Some(parse_units(rest).map_err(|m| err(format!("line {}: {m}", n + 1)))?);
                continue;
            }
            match line {
                "L" => current = Some(0),
                "M" => current = Some(1),
                _ => {
                    let b = current.ok_or_else(|| err(format!("line {}: row before L/M block", n + 1)))?;
                    let vals: Vec<f64> = line
                        .split_whitespace()
                        .map(str::parse)
                        .collect::<Result<_, _>>()
                        .map_err(|e| err(format!("line {}: {e}", n + 1)))?;
                    if vals.len() != 4 || vals.iter().any(|v| !v.is_finite()) {
                        return Err(err(format!("line {}: expected 4 finite numbers", n + 1)));
                    }
                    blocks[b].push([vals[0], vals[1], vals[2], vals[3]]);
                }
            }
        }
        let (speed_unit, accel_unit, output_unit) = units.ok_or_else(|| err("missing units header".into()))?;
        let grab = |rows: &Vec<[f64; 4]>, name: &str| -> Result<[[f64; 4]; 4], EnergyError> {
            rows.as_slice()
                .try_into()
                .map_err(|_| err(format!("{name} block must have 4 rows, found {}", rows.len())))
        };
        Ok(Self { l: grab(&blocks[0], "L")?, m: grab(&blocks[1], "M")?, speed_unit, accel_unit, output_unit })
    }
}

fn parse_units(rest: &str) -> Result<(SpeedUnit, AccelUnit, RateUnit), String> {
    let (mut s, mut a, mut o) = (None, None, None);
    for kv in rest.split_whitespace() {
        let (k, v) = kv.split_once('=').ok_or_else(|| format!("bad units entry {kv:?}"))?;
        match (k, v) {
            ("speed", "m/s") => s = Some(SpeedUnit::MetresPerSecond),
            ("speed", "km/h") => s = Some(SpeedUnit::KilometresPerHour),
            ("accel", "m/s2") | ("accel", "m/s^2") => a = Some(AccelUnit::MetresPerSecondSq),
            ("accel", "km/h/s") => a = Some(AccelUnit::KilometresPerHourPerSecond),
            ("output", "ml/s") => o = Some(RateUnit::MillilitresPerSecond),
            ("output", "l/s") => o = Some(RateUnit::LitresPerSecond),
            _ => return Err(format!("unsupported unit {kv:?}")),
        }
    }
    match (s, a, o) {
        (Some(s), Some(a), Some(o)) => Ok((s, a, o)),
        _ => Err("units header must declare speed, accel and output".into()),
    }
}

/// Fuel rate in ml/s at speed `v` (m/s) and acceleration `a` (m/s²).
pub fn fuel_rate(v: f64, a: f64, c: &VtMicroCoefficients) -> f64 {
    let (v, a) = match (c.speed_unit, c.accel_unit) {
        (SpeedUnit::MetresPerSecond, AccelUnit::MetresPerSecondSq) => (v, a),
        (SpeedUnit::KilometresPerHour, AccelUnit::KilometresPerHourPerSecond) => (v * 3.6, a * 3.6),
        (SpeedUnit::MetresPerSecond, AccelUnit::KilometresPerHourPerSecond) => (v, a * 3.6),
        (SpeedUnit::KilometresPerHour, AccelUnit::MetresPerSecondSq) => (v * 3.6, a),
    };
    let k = if a >= 0.0 { &c.l } else { &c.m };
    let mut sum = 0.0;
    let mut vp = 1.0;
    for row in k {
        let mut ap = 1.0;
        for &kij in row {
            sum += kij * vp * ap;
            ap *= a;
        }
        vp *= v;
    }
    let rate = sum.exp();
    match c.output_unit {
        RateUnit::MillilitresPerSecond => rate,
        RateUnit::LitresPerSecond => rate * 1000.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_table_gives_one() {
        let c = VtMicroCoefficients::zeros();
        assert_eq!(fuel_rate(0.0, 0.0, &c), 1.0);
        assert_eq!(fuel_rate(30.0, -2.0, &c), 1.0);
    }

    #[test]
    fn constant_term_identity() {
        let mut c = VtMicroCoefficients::zeros();
        c.l[0][0] = 0.005f64.ln();
        assert!((fuel_rate(0.0, 0.0, &c) - 0.005).abs() < 1e-15);
    }

    #[test]
    fn branch_at_zero_is_l() {
        let mut c = VtMicroCoefficients::zeros();
        c.l[0][0] = 1.0;
        c.m[0][0] = 2.0;
        assert_eq!(fuel_rate(10.0, 0.0, &c), 1.0f64.exp());
        assert_eq!(fuel_rate(10.0, -1e-9, &c), 2.0f64.exp());
    }

    #[test]
    fn builtin_idle_and_cruise() {
        let c = VtMicroCoefficients::builtin();
        assert_eq!(c.speed_unit, SpeedUnit::KilometresPerHour);
        let idle = fuel_rate(0.0, 0.0, &c);
        assert!((idle - (-7.73452f64).exp() * 1000.0).abs() < 1e-12);
        let cruise = fuel_rate(105.0 / 3.6, 0.0, &c);
        assert!(cruise > 1.5 && cruise < 4.0, "{cruise}");
        assert!(fuel_rate(25.0, 1.5, &c) > cruise);
    }

    #[test]
    fn header_required() {
        let no_units: String = BUILTIN_TABLE.lines().filter(|l| !l.starts_with("units")).collect::<Vec<_>>().join("\n");
        assert!(VtMicroCoefficients::from_text(&no_units).is_err());
        let bad = BUILTIN_TABLE.replace("speed=km/h", "speed=mph");
        assert!(VtMicroCoefficients::from_text(&bad).is_err());
        let short = BUILTIN_TABLE.replace(" 1.08e-06    2.47e-07    4.87e-08    3.79e-10\n", "");
        assert!(VtMicroCoefficients::from_text(&short).is_err());
    }
}
