//! Command line front end: manifests, pipeline stages and report files.

pub mod error;
pub mod manifest;
pub mod pipeline;

pub use error::{CliError, ErrorRecord, Result};
pub use manifest::{Overrides, RunManifest};

use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    #[test]
    fn sha256_known_vector() {
        assert_eq!(
            super::sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
