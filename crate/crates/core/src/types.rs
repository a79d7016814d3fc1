//! Observation records and the data-source taxonomy.

use std::collections::BTreeMap;
use std::fmt;
use std::marker::PhantomData;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Enums usable as dense array keys.
pub trait Indexed: Copy + Ord + fmt::Display + FromStr + 'static {
    const COUNT: usize;
    const ALL: &'static [Self];
    fn index(self) -> usize;
}

macro_rules! labelled_enum {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $label:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub fn label(self) -> &'static str {
                match self {
                    $($name::$variant => $label),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.label())
            }
        }

        impl FromStr for $name {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s.trim() {
                    $($label => Ok($name::$variant),)+
                    other => Err(format!("unknown {} label `{}`", stringify!($name), other)),
                }
            }
        }

        impl Indexed for $name {
            const COUNT: usize = [$($name::$variant),+].len();
            const ALL: &'static [Self] = &[$($name::$variant),+];
            fn index(self) -> usize {
                self as usize
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(self.label())
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

labelled_enum! {
    /// Main source type `d`.
    SourceType {
        Vr => "vr",
        DhsDirect => "dhs_direct",
        OtherDhsDirect => "other_dhs_direct",
        MicsIndirect => "mics_indirect",
        CensusIndirect => "census_indirect",
        OthersDirect => "others_direct",
        OthersIndirect => "others_indirect",
        OthersHouseholdDeaths => "others_household_deaths",
        OthersLifeTable => "others_life_table",
    }
}

labelled_enum! {
    /// Source subtype `d'`: the twelve rows of the database taxonomy. DHS,
    /// Other DHS and MICS are split by whether sampling errors were reported.
    SourceSubtype {
        Vr => "vr",
        DhsDirectWithSe => "dhs_direct_with_se",
        DhsDirectWithoutSe => "dhs_direct_without_se",
        OtherDhsDirectWithSe => "other_dhs_direct_with_se",
        OtherDhsDirectWithoutSe => "other_dhs_direct_without_se",
        MicsIndirectWithSe => "mics_indirect_with_se",
        MicsIndirectWithoutSe => "mics_indirect_without_se",
        CensusIndirect => "census_indirect",
        OthersDirect => "others_direct",
        OthersIndirect => "others_indirect",
        OthersHouseholdDeaths => "others_household_deaths",
        OthersLifeTable => "others_life_table",
    }
}

labelled_enum! {
    VrStatus {
        NotVr => "not_vr",
        Complete => "complete",
        Incomplete => "incomplete",
    }
}

impl SourceType {
    /// Member of the repeated-observation set: series-level level and slope
    /// biases are estimated for these types.
    pub fn is_repeated(self) -> bool {
        matches!(
            self,
            SourceType::DhsDirect
                | SourceType::OtherDhsDirect
                | SourceType::MicsIndirect
                | SourceType::CensusIndirect
                | SourceType::OthersDirect
                | SourceType::OthersIndirect
        )
    }

    /// Errors are normal for the DHS class and Student-t for the remaining
    /// non-VR types.
    pub fn is_dhs_class(self) -> bool {
        matches!(self, SourceType::DhsDirect | SourceType::OtherDhsDirect)
    }

    pub fn subtype(self, reported_se: bool) -> SourceSubtype {
        use SourceSubtype as S;
        match (self, reported_se) {
            (SourceType::Vr, _) => S::Vr,
            (SourceType::DhsDirect, true) => S::DhsDirectWithSe,
            (SourceType::DhsDirect, false) => S::DhsDirectWithoutSe,
            (SourceType::OtherDhsDirect, true) => S::OtherDhsDirectWithSe,
            (SourceType::OtherDhsDirect, false) => S::OtherDhsDirectWithoutSe,
            (SourceType::MicsIndirect, true) => S::MicsIndirectWithSe,
            (SourceType::MicsIndirect, false) => S::MicsIndirectWithoutSe,
            (SourceType::CensusIndirect, _) => S::CensusIndirect,
            (SourceType::OthersDirect, _) => S::OthersDirect,
            (SourceType::OthersIndirect, _) => S::OthersIndirect,
            (SourceType::OthersHouseholdDeaths, _) => S::OthersHouseholdDeaths,
            (SourceType::OthersLifeTable, _) => S::OthersLifeTable,
        }
    }
}

impl SourceSubtype {
    pub fn parent(self) -> SourceType {
        use SourceSubtype as S;
        match self {
            S::Vr => SourceType::Vr,
            S::DhsDirectWithSe | S::DhsDirectWithoutSe => SourceType::DhsDirect,
            S::OtherDhsDirectWithSe | S::OtherDhsDirectWithoutSe => SourceType::OtherDhsDirect,
            S::MicsIndirectWithSe | S::MicsIndirectWithoutSe => SourceType::MicsIndirect,
            S::CensusIndirect => SourceType::CensusIndirect,
            S::OthersDirect => SourceType::OthersDirect,
            S::OthersIndirect => SourceType::OthersIndirect,
            S::OthersHouseholdDeaths => SourceType::OthersHouseholdDeaths,
            S::OthersLifeTable => SourceType::OthersLifeTable,
        }
    }
}

/// Dense map keyed by an [`Indexed`] enum. Serializes as a label-keyed map.
#[derive(Clone, PartialEq)]
pub struct EnumMap<K: Indexed, V> {
    slots: Vec<Option<V>>,
    _key: PhantomData<K>,
}

impl<K: Indexed, V> Default for EnumMap<K, V> {
    fn default() -> Self {
        Self {
            slots: (0..K::COUNT).map(|_| None).collect(),
            _key: PhantomData,
        }
    }
}

impl<K: Indexed, V> EnumMap<K, V> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, k: K) -> Option<&V> {
        self.slots[k.index()].as_ref()
    }

    pub fn get_mut(&mut self, k: K) -> Option<&mut V> {
        self.slots[k.index()].as_mut()
    }

    pub fn insert(&mut self, k: K, v: V) -> Option<V> {
        self.slots[k.index()].replace(v)
    }

    pub fn contains(&self, k: K) -> bool {
        self.slots[k.index()].is_some()
    }

    pub fn keys(&self) -> impl Iterator<Item = K> + '_ {
        K::ALL.iter().copied().filter(|k| self.contains(*k))
    }

    pub fn iter(&self) -> impl Iterator<Item = (K, &V)> + '_ {
        K::ALL.iter().copied().filter_map(|k| self.get(k).map(|v| (k, v)))
    }

    pub fn len(&self) -> usize {
        self.slots.iter().filter(|s| s.is_some()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl<K: Indexed, V: fmt::Debug> fmt::Debug for EnumMap<K, V> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_map()
            .entries(self.iter().map(|(k, v)| (k.to_string(), v)))
            .finish()
    }
}

impl<K: Indexed, V: Serialize> Serialize for EnumMap<K, V> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeMap;
        let mut m = s.serialize_map(Some(self.len()))?;
        for (k, v) in self.iter() {
            m.serialize_entry(&k.to_string(), v)?;
        }
        m.end()
    }
}

impl<'de, K: Indexed, V: Deserialize<'de>> Deserialize<'de> for EnumMap<K, V> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = BTreeMap::<String, V>::deserialize(d)?;
        let mut out = EnumMap::new();
        for (k, v) in raw {
            let key: K = k
                .parse()
                .map_err(|_| serde::de::Error::custom(format!("unknown key `{k}`")))?;
            out.insert(key, v);
        }
        Ok(out)
    }
}

/// One U5MR data point.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub country: String,
    /// Midpoint of the reference period, decimal years.
    pub ref_year: f64,
    /// Deaths per 1000 live births.
    pub u5mr: f64,
    pub log_u5mr: f64,
    pub series_id: String,
    pub source_type: SourceType,
    /// Sample vital registration (SVR) rather than a full registration system.
    pub sample_vr: bool,
    pub survey_year: Option<f64>,
    /// Standard error on the log scale.
    pub reported_se: Option<f64>,
    pub vr_status: VrStatus,
    pub births: Option<f64>,
    pub deaths: Option<f64>,
}

impl Observation {
    /// Retrospective period: years between reference date and collection.
    pub fn retrospective_period(&self) -> Option<f64> {
        self.survey_year.map(|s| s - self.ref_year)
    }

    /// Date the observation was collected. VR points count as collected in
    /// their own reporting year.
    pub fn collection_year(&self) -> f64 {
        self.survey_year.unwrap_or(self.ref_year)
    }

    pub fn is_vr(&self) -> bool {
        self.source_type == SourceType::Vr
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeriesMeta {
    pub series_id: String,
    pub country: String,
    pub source_type: SourceType,
    pub subtype: SourceSubtype,
    pub repeated: bool,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn repeated_set_matches_taxonomy() {
        let repeated: Vec<_> = SourceType::ALL.iter().copied().filter(|d| d.is_repeated()).collect();
        assert_eq!(
            repeated,
            vec![
                SourceType::DhsDirect,
                SourceType::OtherDhsDirect,
                SourceType::MicsIndirect,
                SourceType::CensusIndirect,
                SourceType::OthersDirect,
                SourceType::OthersIndirect,
            ]
        );
    }

    #[test]
    fn subtypes_cover_twelve_rows() {
        assert_eq!(SourceSubtype::COUNT, 12);
        for &st in SourceSubtype::ALL {
            let parent = st.parent();
            let with = parent.subtype(true);
            let without = parent.subtype(false);
            assert!(st == with || st == without);
        }
    }

    #[test]
    fn labels_round_trip() {
        for &d in SourceType::ALL {
            assert_eq!(d.label().parse::<SourceType>().unwrap(), d);
        }
        assert!("dhs".parse::<SourceType>().is_err());
    }

    #[test]
    fn enum_map_serde() {
        let mut m = EnumMap::<SourceType, f64>::new();
        m.insert(SourceType::CensusIndirect, 0.1);
        let s = toml::to_string(&m).unwrap();
        let back: EnumMap<SourceType, f64> = toml::from_str(&s).unwrap();
        assert_eq!(back, m);
    }
}
