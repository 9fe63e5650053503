//! Identifier newtypes and the component reference used by probes and faults.

use std::fmt;

use serde::{Deserialize, Serialize};

macro_rules! id_type {
    ($name:ident, $doc:literal) => {
        #[doc = $doc]
        #[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(id: impl Into<String>) -> Self {
                Self(id.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_owned())
            }
        }
    };
}

id_type!(ReplicaId, "Identifier of a mission-critical virtual machine replica.");
id_type!(FunctionId, "Identifier of a function role served by a peer group.");
id_type!(VmId, "Identifier of a virtual machine platform.");
id_type!(HardwareId, "Identifier of a hardware platform.");
id_type!(ProbeId, "Identifier of a diagnostic probe.");

/// Any component a probe can observe or a fault can hit.
///
/// Serialized externally tagged, e.g. `{"replica": "r1"}` or `{"hardware": "hw1"}`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComponentRef {
    Replica(ReplicaId),
    Vm(VmId),
    Hardware(HardwareId),
}

impl ComponentRef {
    pub fn replica(id: impl Into<String>) -> Self {
        Self::Replica(ReplicaId::new(id))
    }

    pub fn vm(id: impl Into<String>) -> Self {
        Self::Vm(VmId::new(id))
    }

    pub fn hardware(id: impl Into<String>) -> Self {
        Self::Hardware(HardwareId::new(id))
    }

    pub fn as_replica(&self) -> Option<&ReplicaId> {
        match self {
            Self::Replica(id) => Some(id),
            _ => None,
        }
    }
}

impl fmt::Display for ComponentRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Replica(id) => write!(f, "replica:{id}"),
            Self::Vm(id) => write!(f, "vm:{id}"),
            Self::Hardware(id) => write!(f, "hardware:{id}"),
        }
    }
}
