//! Spec-sheet extraction from labelled manual lines.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpecField {
    Height,
    Width,
    MaxSpeed,
    Torque,
    BatteryCapacity,
}

/// Label synonyms, longest first so "max speed" wins over "speed".
const SYNONYMS: &[(&str, SpecField)] = &[
    ("battery capacity", SpecField::BatteryCapacity),
    ("maximum speed", SpecField::MaxSpeed),
    ("overall height", SpecField::Height),
    ("overall width", SpecField::Width),
    ("max velocity", SpecField::MaxSpeed),
    ("stall torque", SpecField::Torque),
    ("rated torque", SpecField::Torque),
    ("motor torque", SpecField::Torque),
    ("body height", SpecField::Height),
    ("body width", SpecField::Width),
    ("top speed", SpecField::MaxSpeed),
    ("max speed", SpecField::MaxSpeed),
    ("battery", SpecField::BatteryCapacity),
    ("capacity", SpecField::BatteryCapacity),
    ("height", SpecField::Height),
    ("torque", SpecField::Torque),
    ("width", SpecField::Width),
    ("speed", SpecField::MaxSpeed),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Confidence {
    /// Read from a `Label: value unit` line.
    Labeled,
    /// Inferred from prose by an external backend.
    Low,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecValue {
    pub value: f64,
    /// Normalised unit: `m`, `cells/tick`, `N*m` or `mAh`.
    pub unit: String,
    pub confidence: Confidence,
}

/// Fields are `None` when the manual does not state them.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RobotSpecSheet {
    pub height_m: Option<SpecValue>,
    pub width_m: Option<SpecValue>,
    pub max_speed: Option<SpecValue>,
    pub torque: Option<SpecValue>,
    pub battery_capacity: Option<SpecValue>,
    pub source: Option<String>,
}

impl RobotSpecSheet {
    fn slot(&mut self, field: SpecField) -> &mut Option<SpecValue> {
        match field {
            SpecField::Height => &mut self.height_m,
            SpecField::Width => &mut self.width_m,
            SpecField::MaxSpeed => &mut self.max_speed,
            SpecField::Torque => &mut self.torque,
            SpecField::BatteryCapacity => &mut self.battery_capacity,
        }
    }

    pub fn get(&self, field: SpecField) -> Option<&SpecValue> {
        match field {
            SpecField::Height => self.height_m.as_ref(),
            SpecField::Width => self.width_m.as_ref(),
            SpecField::MaxSpeed => self.max_speed.as_ref(),
            SpecField::Torque => self.torque.as_ref(),
            SpecField::BatteryCapacity => self.battery_capacity.as_ref(),
        }
    }
}

/// Converts `value unit` into the field's canonical unit. One grid cell is
/// one metre and one tick one second.
fn normalise(field: SpecField, value: f64, unit: &str) -> Option<(f64, &'static str)> {
    let unit = unit.to_lowercase().replace(['·', ' ', '.'], "");
    let unit = unit.as_str();
    Some(match field {
        SpecField::Height | SpecField::Width => {
            let scale = match unit {
                "m" | "" | "meter" | "meters" | "metre" | "metres" => 1.0,
                "cm" => 0.01,
                "mm" => 0.001,
                "in" | "inch" | "inches" => 0.0254,
                "ft" | "feet" => 0.3048,
                _ => return None,
            };
            (value * scale, "m")
        }
        SpecField::MaxSpeed => {
            let scale = match unit {
                "m/s" | "mps" | "cells/tick" | "cell/tick" | "" => 1.0,
                "km/h" | "kph" => 1.0 / 3.6,
                "cm/s" => 0.01,
                "mph" => 0.44704,
                _ => return None,
            };
            (value * scale, "cells/tick")
        }
        SpecField::Torque => {
            let scale = match unit {
                "nm" | "n*m" | "n-m" | "" => 1.0,
                "kgcm" | "kg*cm" | "kgfcm" | "kgf*cm" | "kg-cm" => 0.098_066_5,
                "ozin" | "oz-in" => 0.007_061_55,
                _ => return None,
            };
            (value * scale, "N*m")
        }
        SpecField::BatteryCapacity => {
            let scale = match unit {
                "mah" | "" | "units" => 1.0,
                "ah" => 1000.0,
                _ => return None,
            };
            (value * scale, "mAh")
        }
    })
}

/// Parses `value unit` at the start of `text`.
fn value_and_unit(text: &str) -> Option<(f64, String)> {
    let text = text.trim();
    let end = text
        .char_indices()
        .find(|(_, c)| !(c.is_ascii_digit() || *c == '.' || *c == ',' || *c == '-' || *c == '+'))
        .map_or(text.len(), |(i, _)| i);
    let number: String = text[..end].chars().filter(|c| *c != ',').collect();
    let value: f64 = number.parse().ok()?;
    let unit = text[end..]
        .trim()
        .split(['(', ';', '|'])
        .next()
        .unwrap_or("")
        .trim()
        .trim_end_matches(['.', ','])
        .to_string();
    Some((value, unit))
}

/// `Label: value`, `Label = value` or a two-column table row
/// `| Label | value |`.
fn label_and_value(line: &str) -> Option<(String, String)> {
    let line = line.trim();
    if line.starts_with('|') {
        let cells: Vec<&str> = line.split('|').map(str::trim).filter(|c| !c.is_empty()).collect();
        return match cells.as_slice() {
            [label, value, ..] => Some((label.to_string(), value.to_string())),
            _ => None,
        };
    }
    let line = line.trim_start_matches(['-', '+', '#']).trim();
    let (label, rest) = line.split_once([':', '='])?;
    Some((label.to_string(), rest.to_string()))
}

/// Reads `Label: value unit` lines and two-column table rows. Labels are matched case-insensitively
/// against a fixed synonym table; the first line for a field wins. Values
/// that are non-positive or carry an unknown unit are left absent.
pub fn extract_spec(doc: &str) -> RobotSpecSheet {
    let mut sheet = RobotSpecSheet::default();
    for line in doc.lines() {
        let cleaned: String = line.chars().filter(|c| !matches!(c, '*' | '_' | '`')).collect();
        let Some((label, rest)) = label_and_value(&cleaned) else {
            continue;
        };
        let label = label.trim().to_lowercase();
        let Some(field) = SYNONYMS.iter().find(|(s, _)| *s == label).map(|(_, f)| *f) else {
            continue;
        };
        if sheet.slot(field).is_some() {
            continue;
        }
        let Some((value, unit)) = value_and_unit(&rest) else {
            continue;
        };
        let Some((value, unit)) = normalise(field, value, &unit) else {
            continue;
        };
        if value > 0.0 {
            *sheet.slot(field) = Some(SpecValue {
                value,
                unit: unit.to_string(),
                confidence: Confidence::Labeled,
            });
        }
    }
    sheet
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn direct_labels() {
        let s = extract_spec("Height: 0.30 m\nBattery capacity: 5000 mAh");
        assert_eq!(s.height_m.as_ref().unwrap().value, 0.30);
        assert_eq!(s.battery_capacity.as_ref().unwrap().value, 5000.0);
        assert!(s.width_m.is_none() && s.max_speed.is_none() && s.torque.is_none());
    }

    #[test]
    fn table_rows() {
        let doc = "| Item | Value |\n|------|-------|\n| Overall height | 38 cm |\n| Max speed | 1.2 m/s |\n| Motor torque | 12 kg·cm |";
        let s = extract_spec(doc);
        assert!((s.height_m.unwrap().value - 0.38).abs() < 1e-9);
        assert_eq!(s.max_speed.unwrap().value, 1.2);
        assert!((s.torque.unwrap().value - 1.176_798).abs() < 1e-6);
    }

    #[test]
    fn empty_doc_all_absent() {
        assert_eq!(extract_spec(""), RobotSpecSheet::default());
    }

    #[test]
    fn units_normalised() {
        let s = extract_spec("- **Width**: 28 cm\nTop speed: 3.6 km/h\nStall torque: 10 kg·cm\nBattery: 2.2 Ah");
        assert!((s.width_m.unwrap().value - 0.28).abs() < 1e-12);
        assert!((s.max_speed.unwrap().value - 1.0).abs() < 1e-12);
        assert!((s.torque.unwrap().value - 0.980665).abs() < 1e-9);
        assert_eq!(s.battery_capacity.unwrap().value, 2200.0);
    }

    #[test]
    fn non_positive_values_stay_absent() {
        assert!(extract_spec("Height: 0 m").height_m.is_none());
        assert!(extract_spec("Height: -2 m").height_m.is_none());
    }

    proptest! {
        #[test]
        fn total_on_any_text(text in "\\PC{0,400}") {
            let a = extract_spec(&text);
            prop_assert_eq!(a, extract_spec(&text));
        }
    }
}
