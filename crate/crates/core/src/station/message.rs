//! Classical messages between stations and their canonical wire form.
//!
//! Wire form is compact JSON with keys in the fixed order `seq`, `from`,
//! `payload`, and doubles rendered with 17 significant digits:
//!
//! ```text
//! {"seq":0,"from":"input_s","payload":{"x":1.2500000000000000e0,"p":-5.0000000000000000e-1}}
//! ```

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::json;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Distributor,
    InputS,
    InputI,
    OutputS,
    OutputI,
}

impl Role {
    pub const ALL: [Role; 5] = [
        Role::Distributor,
        Role::InputS,
        Role::InputI,
        Role::OutputS,
        Role::OutputI,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Distributor => "distributor",
            Role::InputS => "input_s",
            Role::InputI => "input_i",
            Role::OutputS => "output_s",
            Role::OutputI => "output_i",
        }
    }

    pub fn is_input(self) -> bool {
        matches!(self, Role::InputS | Role::InputI)
    }

    pub fn is_output(self) -> bool {
        matches!(self, Role::OutputS | Role::OutputI)
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Payload {
    pub x: f64,
    pub p: f64,
}

/// A homodyne result `(x, p)` sent by an input station.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassicalMessage {
    seq: u64,
    from: Role,
    payload: Payload,
}

impl ClassicalMessage {
    pub fn new(seq: u64, from: Role, x: f64, p: f64) -> Result<Self> {
        if !x.is_finite() || !p.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "message payload ({x}, {p}) is not finite"
            )));
        }
        Ok(ClassicalMessage {
            seq,
            from,
            payload: Payload { x, p },
        })
    }

    pub fn seq(&self) -> u64 {
        self.seq
    }

    pub fn from(&self) -> Role {
        self.from
    }

    pub fn payload(&self) -> Payload {
        self.payload
    }

    pub fn encode(&self) -> Vec<u8> {
        json::to_string(self).into_bytes()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let text = std::str::from_utf8(bytes).map_err(|e| Error::Decode(e.to_string()))?;
        let msg: ClassicalMessage =
            serde_json::from_str(text).map_err(|e| Error::Decode(e.to_string()))?;
        // serde_json already refuses NaN and overflowing literals; keep the
        // invariant explicit anyway.
        ClassicalMessage::new(msg.seq, msg.from, msg.payload.x, msg.payload.p)
            .map_err(|e| Error::Decode(e.to_string()))
    }
}
