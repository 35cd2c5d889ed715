use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{DetectionEvent, TimetagError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Party {
    A,
    B,
}

/// Measurement arm behind the 50:50 splitter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Arm {
    /// Time of arrival, H/V polarization readout.
    #[serde(rename = "TOA")]
    Toa,
    /// Temporal superposition through the unbalanced interferometer, D/A readout.
    #[serde(rename = "TSUP")]
    Tsup,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Outcome {
    H,
    V,
    D,
    A,
}

impl Outcome {
    fn valid_for(self, arm: Arm) -> bool {
        matches!(
            (arm, self),
            (Arm::Toa, Outcome::H | Outcome::V) | (Arm::Tsup, Outcome::D | Outcome::A)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChannelRole {
    pub party: Party,
    pub arm: Arm,
    pub outcome: Outcome,
}

/// Channel id -> (party, arm, outcome). Serialized as a JSON object keyed
/// by channel id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<u16, ChannelRole>", into = "BTreeMap<u16, ChannelRole>")]
pub struct ChannelMap {
    roles: BTreeMap<u16, ChannelRole>,
}

impl ChannelMap {
    pub fn new(roles: BTreeMap<u16, ChannelRole>) -> Result<Self, TimetagError> {
        let mut seen = BTreeSet::new();
        for (ch, role) in &roles {
            if !role.outcome.valid_for(role.arm) {
                return Err(TimetagError::InvalidChannelMap(format!(
                    "channel {ch}: outcome {:?} not valid for arm {:?}",
                    role.outcome, role.arm
                )));
            }
            if !seen.insert((role.party, role.arm, role.outcome)) {
                return Err(TimetagError::InvalidChannelMap(format!(
                    "channel {ch}: duplicate role {:?}/{:?}/{:?}",
                    role.party, role.arm, role.outcome
                )));
            }
        }
        for party in [Party::A, Party::B] {
            let n = roles.values().filter(|r| r.party == party).count();
            if n != 4 {
                return Err(TimetagError::InvalidChannelMap(format!(
                    "party {party:?} has {n} channels, expected TOA-H, TOA-V, TSUP-D, TSUP-A"
                )));
            }
        }
        Ok(Self { roles })
    }

    /// Party A on channels 0..4 and party B on 4..8, each ordered
    /// TOA-H, TOA-V, TSUP-D, TSUP-A.
    pub fn standard() -> Self {
        let mut roles = BTreeMap::new();
        for (base, party) in [(0u16, Party::A), (4u16, Party::B)] {
            for (i, (arm, outcome)) in [
                (Arm::Toa, Outcome::H),
                (Arm::Toa, Outcome::V),
                (Arm::Tsup, Outcome::D),
                (Arm::Tsup, Outcome::A),
            ]
            .into_iter()
            .enumerate()
            {
                roles.insert(base + i as u16, ChannelRole { party, arm, outcome });
            }
        }
        Self::new(roles).expect("standard map is valid")
    }

    pub fn role(&self, channel: u16) -> Option<ChannelRole> {
        self.roles.get(&channel).copied()
    }

    pub fn channel_for(&self, party: Party, arm: Arm, outcome: Outcome) -> Option<u16> {
        self.roles
            .iter()
            .find(|(_, r)| r.party == party && r.arm == arm && r.outcome == outcome)
            .map(|(c, _)| *c)
    }

    /// Channel ids of one party, ascending.
    pub fn party_channel_ids(&self, party: Party) -> Vec<u16> {
        self.roles
            .iter()
            .filter(|(_, r)| r.party == party)
            .map(|(c, _)| *c)
            .collect()
    }

    pub fn party(&self, party: Party) -> PartyChannels {
        let mut table = Vec::new();
        for (&ch, role) in self.roles.iter().filter(|(_, r)| r.party == party) {
            let idx = ch as usize;
            if table.len() <= idx {
                table.resize(idx + 1, None);
            }
            table[idx] = Some((role.arm, role.outcome));
        }
        PartyChannels { party, table }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("channel map serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, TimetagError> {
        serde_json::from_str(s).map_err(|e| TimetagError::InvalidChannelMap(e.to_string()))
    }
}

impl TryFrom<BTreeMap<u16, ChannelRole>> for ChannelMap {
    type Error = TimetagError;
    fn try_from(roles: BTreeMap<u16, ChannelRole>) -> Result<Self, Self::Error> {
        Self::new(roles)
    }
}

impl From<ChannelMap> for BTreeMap<u16, ChannelRole> {
    fn from(m: ChannelMap) -> Self {
        m.roles
    }
}

/// Fast per-party lookup from channel id to arm and outcome.
#[derive(Debug, Clone)]
pub struct PartyChannels {
    party: Party,
    table: Vec<Option<(Arm, Outcome)>>,
}

impl PartyChannels {
    pub fn party(&self) -> Party {
        self.party
    }

    #[inline]
    pub fn lookup(&self, channel: u16) -> Option<(Arm, Outcome)> {
        self.table.get(channel as usize).copied().flatten()
    }

    /// Fails on the first event whose channel does not belong to this party.
    pub fn check_stream(&self, events: &[DetectionEvent]) -> Result<(), TimetagError> {
        match events.iter().find(|e| self.lookup(e.channel).is_none()) {
            Some(e) => Err(TimetagError::UnknownChannel(e.channel)),
            None => Ok(()),
        }
    }
}
