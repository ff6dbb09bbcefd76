//! Topic catalog used when sampling chart specs.

use serde::{Deserialize, Serialize};

/// Measure and unit shown on the value axis for a topic.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopicProfile {
    pub name: String,
    pub measure: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit: Option<String>,
}

const DEFAULT_TOPICS: [(&str, &str, Option<&str>); 38] = [
    ("finance", "Revenue", Some("USD millions")),
    ("healthcare", "Patient Visits", Some("thousands")),
    ("technology", "Active Users", Some("millions")),
    ("education", "Enrollment", Some("thousands")),
    ("energy", "Electricity Output", Some("TWh")),
    ("environment", "CO2 Emissions", Some("Mt")),
    ("agriculture", "Crop Yield", Some("t/ha")),
    ("transportation", "Passenger Trips", Some("millions")),
    ("retail", "Store Sales", Some("USD thousands")),
    ("manufacturing", "Units Produced", Some("thousands")),
    ("real estate", "Median Home Price", Some("USD thousands")),
    ("tourism", "Visitor Arrivals", Some("thousands")),
    ("sports", "Average Attendance", Some("thousands")),
    ("entertainment", "Box Office", Some("USD millions")),
    ("telecommunications", "Data Traffic", Some("PB")),
    ("social media", "Engagement Rate", Some("%")),
    ("e-commerce", "Online Orders", Some("thousands")),
    ("automotive", "Vehicle Sales", Some("thousands")),
    ("aviation", "Flight Departures", Some("thousands")),
    ("public health", "Vaccination Coverage", Some("%")),
    ("demographics", "Population", Some("millions")),
    ("employment", "Unemployment Rate", Some("%")),
    ("housing", "Housing Starts", Some("thousands")),
    ("climate", "Mean Temperature", Some("°C")),
    ("water resources", "Reservoir Storage", Some("million m³")),
    ("food and beverage", "Beverage Sales", Some("million liters")),
    ("pharmaceuticals", "R&D Spending", Some("USD millions")),
    ("banking", "Loan Volume", Some("USD billions")),
    ("insurance", "Premiums Written", Some("USD millions")),
    ("cybersecurity", "Reported Incidents", None),
    ("logistics", "Freight Volume", Some("kt")),
    ("mining", "Ore Extracted", Some("Mt")),
    ("construction", "Construction Output", Some("USD billions")),
    ("fashion", "Apparel Sales", Some("USD millions")),
    ("gaming", "Monthly Players", Some("millions")),
    ("space exploration", "Launch Budget", Some("USD millions")),
    ("nutrition", "Daily Intake", Some("kcal")),
    ("government spending", "Public Expenditure", Some("USD billions")),
];

/// Configurable list of topics. Topics outside the default table get a
/// generic "Value" measure.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopicCatalog {
    topics: Vec<TopicProfile>,
}

impl Default for TopicCatalog {
    fn default() -> Self {
        Self {
            topics: DEFAULT_TOPICS
                .iter()
                .map(|(name, measure, unit)| TopicProfile {
                    name: (*name).to_string(),
                    measure: (*measure).to_string(),
                    unit: unit.map(str::to_string),
                })
                .collect(),
        }
    }
}

impl TopicCatalog {
    /// Builds a catalog from bare names, reusing default profiles where the
    /// name matches one.
    pub fn from_names<I, S>(names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let defaults = Self::default();
        let topics = names
            .into_iter()
            .map(|n| {
                let n = n.as_ref();
                defaults.get(n).cloned().unwrap_or_else(|| TopicProfile {
                    name: n.to_string(),
                    measure: "Value".to_string(),
                    unit: None,
                })
            })
            .collect();
        Self { topics }
    }

    pub fn get(&self, name: &str) -> Option<&TopicProfile> {
        self.topics.iter().find(|t| t.name == name)
    }

    pub fn names(&self) -> Vec<&str> {
        self.topics.iter().map(|t| t.name.as_str()).collect()
    }

    pub fn len(&self) -> usize {
        self.topics.len()
    }

    pub fn is_empty(&self) -> bool {
        self.topics.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_has_38_unique_topics() {
        let c = TopicCatalog::default();
        assert_eq!(c.len(), 38);
        let mut names = c.names();
        names.sort_unstable();
        names.dedup();
        assert_eq!(names.len(), 38);
        for named in ["finance", "healthcare", "technology"] {
            assert!(c.get(named).is_some());
        }
    }

    #[test]
    fn custom_names_fall_back_to_generic_measure() {
        let c = TopicCatalog::from_names(["finance", "astronomy"]);
        assert_eq!(c.get("finance").unwrap().measure, "Revenue");
        assert_eq!(c.get("astronomy").unwrap().measure, "Value");
        assert!(c.get("healthcare").is_none());
    }
}
