//! Identifier types shared by every stage of the pipeline.

use std::fmt;

use crate::error::{Error, Result};

/// Dense vertex index in `0..num_vertices`.
pub type VertexId = usize;

/// GNN layer index in `0..=num_layers`. Layer 0 holds input features.
pub type LayerIndex = usize;

/// A simulated device, `0..num_devices`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct DeviceId(u32);

impl DeviceId {
    /// Range-checked constructor.
    pub fn new(index: usize, num_devices: usize) -> Result<Self> {
        if index >= num_devices {
            return Err(Error::InvalidArgument(format!(
                "device {index} out of range for {num_devices} devices"
            )));
        }
        Ok(Self(index as u32))
    }

    /// Constructor for indices already known to be in range.
    pub(crate) fn from_index(index: usize) -> Self {
        Self(index as u32)
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for DeviceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Checks that a vertex id is in range.
pub fn check_vertex(id: usize, n: usize) -> Result<VertexId> {
    if id >= n {
        return Err(Error::VertexOutOfRange { id, n });
    }
    Ok(id)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn device_range_checked() {
        assert_eq!(DeviceId::new(3, 4).unwrap().index(), 3);
        assert!(DeviceId::new(4, 4).is_err());
        assert!(check_vertex(5, 5).is_err());
        assert_eq!(check_vertex(0, 1).unwrap(), 0);
    }
}
