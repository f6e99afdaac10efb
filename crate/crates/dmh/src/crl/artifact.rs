//! Binary policy artifact: a versioned header plus the flat parameters of
//! the five networks (policy, both critics, both targets) as little-endian
//! 64-bit floats.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::neural::Mlp;

const MAGIC: &[u8; 8] = b"DMHPOL\0\0";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ArtifactError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("not a policy artifact (bad magic)")]
    BadMagic,
    #[error("unsupported artifact version {0}")]
    UnsupportedVersion(u32),
    #[error("artifact is truncated or malformed: {0}")]
    Malformed(String),
    #[error("feature layout mismatch: artifact {artifact:#018x}, runtime {runtime:#018x}")]
    FeatureHashMismatch { artifact: u64, runtime: u64 },
}

/// FNV-1a over the observation layout descriptor; stored in the header so a
/// stale artifact cannot be evaluated against an incompatible featurization.
pub fn feature_layout_hash(descriptor: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in descriptor.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

#[derive(Debug, Clone)]
pub struct PolicyArtifact {
    pub dims: Vec<usize>,
    pub feature_hash: u64,
    pub gamma: f64,
    pub alpha: f64,
    pub lambda: f64,
    pub seed: u64,
    pub policy: Mlp,
    pub q1: Mlp,
    pub q2: Mlp,
    pub target_q1: Mlp,
    pub target_q2: Mlp,
}

impl PolicyArtifact {
    pub fn save(&self, path: &Path) -> Result<(), ArtifactError> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(self.dims.len() as u32).to_le_bytes())?;
        for &d in &self.dims {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        w.write_all(&self.feature_hash.to_le_bytes())?;
        w.write_all(&self.gamma.to_le_bytes())?;
        w.write_all(&self.alpha.to_le_bytes())?;
        w.write_all(&self.lambda.to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        for net in [
            &self.policy,
            &self.q1,
            &self.q2,
            &self.target_q1,
            &self.target_q2,
        ] {
            if net.dims() != self.dims {
                return Err(ArtifactError::Malformed(
                    "network dimensions disagree with header".into(),
                ));
            }
            for p in net.flatten() {
                w.write_all(&p.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<PolicyArtifact, ArtifactError> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(ArtifactError::BadMagic);
        }
        let version = read_u32(&mut r)?;
        if version != FORMAT_VERSION {
            return Err(ArtifactError::UnsupportedVersion(version));
        }
        let n_dims = read_u32(&mut r)? as usize;
        if n_dims < 2 || n_dims > 64 {
            return Err(ArtifactError::Malformed(format!(
                "implausible layer count {n_dims}"
            )));
        }
        let mut dims = Vec::with_capacity(n_dims);
        for _ in 0..n_dims {
            dims.push(read_u64(&mut r)? as usize);
        }
        let feature_hash = read_u64(&mut r)?;
        let gamma = read_f64(&mut r)?;
        let alpha = read_f64(&mut r)?;
        let lambda = read_f64(&mut r)?;
        let seed = read_u64(&mut r)?;
        let mut nets = Vec::with_capacity(5);
        let count = Mlp::zeros(&dims).param_count();
        for _ in 0..5 {
            let mut flat = vec![0.0; count];
            for p in flat.iter_mut() {
                *p = read_f64(&mut r)?;
            }
            nets.push(
                Mlp::from_flat(&dims, &flat)
                    .map_err(|e| ArtifactError::Malformed(e.to_string()))?,
            );
        }
        let mut extra = [0u8; 1];
        if r.read(&mut extra)? != 0 {
            return Err(ArtifactError::Malformed("trailing bytes".into()));
        }
        let target_q2 = nets.pop().unwrap();
        let target_q1 = nets.pop().unwrap();
        let q2 = nets.pop().unwrap();
        let q1 = nets.pop().unwrap();
        let policy = nets.pop().unwrap();
        Ok(PolicyArtifact {
            dims,
            feature_hash,
            gamma,
            alpha,
            lambda,
            seed,
            policy,
            q1,
            q2,
            target_q1,
            target_q2,
        })
    }

    /// Fail unless the artifact was produced for the same feature layout.
    pub fn check_feature_hash(&self, runtime: u64) -> Result<(), ArtifactError> {
        if self.feature_hash != runtime {
            Err(ArtifactError::FeatureHashMismatch {
                artifact: self.feature_hash,
                runtime,
            })
        } else {
            Ok(())
        }
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, ArtifactError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, ArtifactError> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64, ArtifactError> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(f64::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample_artifact() -> PolicyArtifact {
        let dims = vec![5, 4, 3];
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        PolicyArtifact {
            dims: dims.clone(),
            feature_hash: feature_layout_hash("test-layout"),
            gamma: 0.97,
            alpha: 0.1,
            lambda: 0.001,
            seed: 42,
            policy: Mlp::init(&dims, &mut rng),
            q1: Mlp::init(&dims, &mut rng),
            q2: Mlp::init(&dims, &mut rng),
            target_q1: Mlp::init(&dims, &mut rng),
            target_q2: Mlp::init(&dims, &mut rng),
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let art = sample_artifact();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("policy.bin");
        art.save(&path).unwrap();
        let back = PolicyArtifact::load(&path).unwrap();
        assert_eq!(back.dims, art.dims);
        assert_eq!(back.feature_hash, art.feature_hash);
        assert_eq!(back.gamma, art.gamma);
        assert_eq!(back.alpha, art.alpha);
        assert_eq!(back.lambda, art.lambda);
        assert_eq!(back.seed, art.seed);
        assert_eq!(back.policy.flatten(), art.policy.flatten());
        assert_eq!(back.target_q2.flatten(), art.target_q2.flatten());
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.bin");
        std::fs::write(&path, b"NOTAPOLICYFILE__________").unwrap();
        assert!(matches!(
            PolicyArtifact::load(&path),
            Err(ArtifactError::BadMagic)
        ));
    }

    #[test]
    fn truncated_file_rejected() {
        let art = sample_artifact();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("policy.bin");
        art.save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 9]).unwrap();
        assert!(PolicyArtifact::load(&path).is_err());
    }

    #[test]
    fn feature_hash_mismatch_detected() {
        let art = sample_artifact();
        assert!(art.check_feature_hash(art.feature_hash).is_ok());
        assert!(matches!(
            art.check_feature_hash(art.feature_hash ^ 1),
            Err(ArtifactError::FeatureHashMismatch { .. })
        ));
    }

    #[test]
    fn hash_is_stable_and_discriminating() {
        let a = feature_layout_hash("v1|k_max=6|n=2");
        let b = feature_layout_hash("v1|k_max=6|n=2");
        let c = feature_layout_hash("v1|k_max=6|n=3");
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
