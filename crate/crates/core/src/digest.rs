use sha2::{Digest, Sha256};

/// Incremental SHA-256 over length-prefixed fields.
#[derive(Default, Clone)]
pub struct FieldHasher(Sha256);

impl FieldHasher {
    pub fn new() -> Self {
        FieldHasher(Sha256::new())
    }

    pub fn field(&mut self, bytes: impl AsRef<[u8]>) -> &mut Self {
        let bytes = bytes.as_ref();
        self.0.update((bytes.len() as u64).to_le_bytes());
        self.0.update(bytes);
        self
    }

    pub fn finish(&self) -> [u8; 32] {
        self.0.clone().finalize().into()
    }

    pub fn finish_hex(&self) -> String {
        hex::encode(self.finish())
    }
}

pub fn sha256_hex(bytes: impl AsRef<[u8]>) -> String {
    hex::encode(Sha256::digest(bytes.as_ref()))
}
