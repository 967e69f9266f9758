use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column layout of a canonical weather CSV: one `<city>_<feature>` column
/// per (city, feature) pair, cities outermost.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub id: String,
    pub cities: Vec<String>,
    pub features: Vec<String>,
    pub wind_feature: String,
    pub targets: Vec<String>,
    /// Hours between consecutive rows.
    pub cadence_hours: u32,
}

impl Schema {
    pub fn denmark() -> Self {
        Self {
            id: "denmark".into(),
            cities: strings(&["aalborg", "aarhus", "esbjerg", "odense", "roskilde"]),
            features: strings(&["temperature", "pressure", "wind_speed", "wind_direction"]),
            wind_feature: "wind_speed".into(),
            targets: strings(&["esbjerg", "odense", "roskilde"]),
            cadence_hours: 1,
        }
    }

    /// Wind speed stays in the source unit of 0.1 m/s.
    pub fn netherlands() -> Self {
        let cities = strings(&[
            "schiphol",
            "de_bilt",
            "leeuwarden",
            "eelde",
            "rotterdam",
            "eindhoven",
            "maastricht",
        ]);
        Self {
            id: "netherlands".into(),
            targets: cities.clone(),
            cities,
            features: strings(&[
                "wind_speed",
                "wind_direction",
                "temperature",
                "dew_point",
                "air_pressure",
                "rain_amount",
            ]),
            wind_feature: "wind_speed".into(),
            cadence_hours: 1,
        }
    }

    pub fn by_id(id: &str) -> Result<Self> {
        match id {
            "denmark" | "dk" => Ok(Self::denmark()),
            "netherlands" | "nl" => Ok(Self::netherlands()),
            other => Err(Error::config(format!(
                "unknown dataset schema `{other}` (expected denmark or netherlands)"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.cities.is_empty() || self.features.is_empty() {
            return Err(Error::config(
                "schema needs at least one city and one feature",
            ));
        }
        if self.cadence_hours == 0 {
            return Err(Error::config("cadence must be at least one hour"));
        }
        self.wind_index()?;
        self.target_indices()?;
        let mut cols = self.column_names();
        cols.sort();
        if cols.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::config("schema produces duplicate column names"));
        }
        Ok(())
    }

    pub fn column_name(&self, city: usize, feature: usize) -> String {
        format!("{}_{}", self.cities[city], self.features[feature])
    }

    /// Column names in storage order (city-major).
    pub fn column_names(&self) -> Vec<String> {
        (0..self.cities.len())
            .flat_map(|c| (0..self.features.len()).map(move |f| (c, f)))
            .map(|(c, f)| self.column_name(c, f))
            .collect()
    }

    pub fn columns(&self) -> usize {
        self.cities.len() * self.features.len()
    }

    pub fn wind_index(&self) -> Result<usize> {
        self.features
            .iter()
            .position(|f| *f == self.wind_feature)
            .ok_or_else(|| {
                Error::config(format!(
                    "wind feature `{}` not in feature list",
                    self.wind_feature
                ))
            })
    }

    pub fn target_indices(&self) -> Result<Vec<usize>> {
        if self.targets.is_empty() {
            return Err(Error::config("schema has no target cities"));
        }
        self.targets
            .iter()
            .map(|t| {
                self.cities
                    .iter()
                    .position(|c| c == t)
                    .ok_or_else(|| Error::config(format!("target city `{t}` not in city list")))
            })
            .collect()
    }

    /// Converts a lead time in hours to a row offset.
    pub fn horizon_steps(&self, hours: u32) -> Result<usize> {
        if hours == 0 || !hours.is_multiple_of(self.cadence_hours) {
            return Err(Error::config(format!(
                "horizon {hours}h is not a positive multiple of the {}h cadence",
                self.cadence_hours
            )));
        }
        Ok((hours / self.cadence_hours) as usize)
    }
}

fn strings(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_schemas_are_valid() {
        for s in [Schema::denmark(), Schema::netherlands()] {
            s.validate().unwrap();
        }
        let dk = Schema::denmark();
        assert_eq!(dk.target_indices().unwrap(), vec![2, 3, 4]);
        assert_eq!(dk.wind_index().unwrap(), 2);
        assert_eq!(dk.columns(), 20);
        assert_eq!(dk.column_names()[2], "aalborg_wind_speed");
        assert_eq!(Schema::netherlands().target_indices().unwrap().len(), 7);
    }

    #[test]
    fn horizon_steps_respect_cadence() {
        let mut s = Schema::denmark();
        assert_eq!(s.horizon_steps(6).unwrap(), 6);
        s.cadence_hours = 6;
        assert_eq!(s.horizon_steps(24).unwrap(), 4);
        assert!(s.horizon_steps(5).is_err());
    }

    #[test]
    fn unknown_target_rejected() {
        let mut s = Schema::denmark();
        s.targets.push("copenhagen".into());
        assert!(s.validate().is_err());
        assert!(Schema::by_id("mars").is_err());
    }
}
