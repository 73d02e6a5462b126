//! Calibration container.
//!
//! ```text
//! offset  size  field
//!      0     8  magic "CTCAL001"
//!      8     4  version (u32) = 1
//!     12     1  method: 1 PW-SCP, 2 PW-SCP-ADJ, 3 PW-CRC, 4 PW-CRC-ADJ
//!     13     1  payload kind: 1 quantile grid, 2 lambda
//!     14     1  evaluation mask policy: 0 body, 1 full
//!     15     1  reserved, zero
//!     16     8  alpha (f64)
//!     24     8  n_c (u64)
//!     32     8  n_p (f64)
//!     40     8  P, patients (u64)
//!     48     4  hu_min (f32)
//!     52     4  hu_max (f32)
//!     56    32  config digest (SHA-256)
//!     88     …  payload
//!      …    32  SHA-256 of every preceding byte
//! ```
//!
//! Quantile payload: `saturated` (u8), 3 reserved bytes, height, width
//! (u32), then `height·width` f32 values unless saturated.
//!
//! Lambda payload: `lambda` (f32), `aggregation` (u8: 0 per image,
//! 1 per pixel), 3 reserved bytes, `B` (f64), `q_lo`, `q_hi` (f64).

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use super::{magic_string, read_file, sha256, write_file, IoError, Reader};
use crate::conformal::{CrcCalibration, EvalMaskPolicy, LossAggregation, Quantiles, ScpCalibration};
use crate::grid::{NormalizationSpec, Shape};

pub const CALIBRATION_MAGIC: &[u8; 8] = b"CTCAL001";
pub const CALIBRATION_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    PwScp,
    PwScpAdj,
    PwCrc,
    PwCrcAdj,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::PwScp, Method::PwScpAdj, Method::PwCrc, Method::PwCrcAdj];

    pub fn id(self) -> u8 {
        match self {
            Method::PwScp => 1,
            Method::PwScpAdj => 2,
            Method::PwCrc => 3,
            Method::PwCrcAdj => 4,
        }
    }

    pub fn from_id(id: u8) -> Option<Method> {
        Method::ALL.into_iter().find(|m| m.id() == id)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Method::PwScp => "pw-scp",
            Method::PwScpAdj => "pw-scp-adj",
            Method::PwCrc => "pw-crc",
            Method::PwCrcAdj => "pw-crc-adj",
        }
    }

    pub fn is_crc(self) -> bool {
        matches!(self, Method::PwCrc | Method::PwCrcAdj)
    }

    pub fn is_adjusted(self) -> bool {
        matches!(self, Method::PwScpAdj | Method::PwCrcAdj)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s.to_ascii_lowercase())
            .ok_or_else(|| format!("unknown method {s:?} (expected pw-scp, pw-scp-adj, pw-crc or pw-crc-adj)"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Calibration {
    Scp(ScpCalibration),
    Crc(CrcCalibration),
}

impl Calibration {
    pub fn method(&self) -> Method {
        match self {
            Calibration::Scp(c) if c.adjusted => Method::PwScpAdj,
            Calibration::Scp(_) => Method::PwScp,
            Calibration::Crc(c) if c.adjusted => Method::PwCrcAdj,
            Calibration::Crc(_) => Method::PwCrc,
        }
    }

    pub fn alpha(&self) -> f64 {
        match self {
            Calibration::Scp(c) => c.alpha,
            Calibration::Crc(c) => c.alpha,
        }
    }
}

/// A calibration together with the normalization it was fitted under and
/// the digest of the resolved run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationArtifact {
    pub calibration: Calibration,
    pub spec: NormalizationSpec,
    pub eval_mask_policy: EvalMaskPolicy,
    pub config_digest: [u8; 32],
}

fn aggregation_code(a: LossAggregation) -> u8 {
    match a {
        LossAggregation::PerImage => 0,
        LossAggregation::PerPixel => 1,
    }
}

pub fn encode_calibration(artifact: &CalibrationArtifact) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CALIBRATION_MAGIC);
    out.extend_from_slice(&CALIBRATION_VERSION.to_le_bytes());
    let (n_c, n_p, patients, kind) = match &artifact.calibration {
        Calibration::Scp(c) => (c.n_c, c.n_p, c.patients, 1u8),
        Calibration::Crc(c) => (c.n_c, c.n_p, c.patients, 2u8),
    };
    out.push(artifact.calibration.method().id());
    out.push(kind);
    out.push(artifact.eval_mask_policy.code());
    out.push(0);
    out.extend_from_slice(&artifact.calibration.alpha().to_le_bytes());
    out.extend_from_slice(&(n_c as u64).to_le_bytes());
    out.extend_from_slice(&n_p.to_le_bytes());
    out.extend_from_slice(&(patients as u64).to_le_bytes());
    out.extend_from_slice(&artifact.spec.hu_min.to_le_bytes());
    out.extend_from_slice(&artifact.spec.hu_max.to_le_bytes());
    out.extend_from_slice(&artifact.config_digest);
    match &artifact.calibration {
        Calibration::Scp(c) => {
            let shape = c.qhat.shape();
            out.push(c.qhat.is_saturated() as u8);
            out.extend_from_slice(&[0; 3]);
            out.extend_from_slice(&(shape.height as u32).to_le_bytes());
            out.extend_from_slice(&(shape.width as u32).to_le_bytes());
            if let Some(values) = c.qhat.values() {
                values.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
            }
        }
        Calibration::Crc(c) => {
            out.extend_from_slice(&c.lambda_hat.to_le_bytes());
            out.push(aggregation_code(c.aggregation));
            out.extend_from_slice(&[0; 3]);
            out.extend_from_slice(&c.b.to_le_bytes());
            out.extend_from_slice(&c.bound_quantiles.0.to_le_bytes());
            out.extend_from_slice(&c.bound_quantiles.1.to_le_bytes());
        }
    }
    let digest = sha256(&out);
    out.extend_from_slice(&digest);
    out
}

fn invalid(msg: impl Into<String>) -> IoError {
    IoError::InvalidPayload(msg.into())
}

pub fn decode_calibration(bytes: &[u8]) -> Result<CalibrationArtifact, IoError> {
    let mut r = Reader::new(bytes);
    let magic = r.take(8)?;
    if magic != CALIBRATION_MAGIC {
        return Err(IoError::BadMagic {
            expected: "CTCAL001",
            found: magic_string(magic),
        });
    }
    if bytes.len() < 8 + 32 {
        return Err(IoError::TruncatedPayload {
            expected: 8 + 32,
            actual: bytes.len(),
        });
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 32);
    if sha256(body) != trailer {
        return Err(IoError::DigestMismatch);
    }
    let mut r = Reader::new(body);
    r.take(8)?;
    let version = r.u32()?;
    if version != CALIBRATION_VERSION {
        return Err(IoError::BadVersion(version));
    }
    let method_id = r.u8()?;
    let method = Method::from_id(method_id).ok_or(IoError::UnknownMethod(method_id))?;
    let kind = r.u8()?;
    if kind != if method.is_crc() { 2 } else { 1 } {
        return Err(IoError::MethodPayloadMismatch { method: method_id });
    }
    let policy_code = r.u8()?;
    let eval_mask_policy =
        EvalMaskPolicy::from_code(policy_code).ok_or_else(|| invalid(format!("mask policy code {policy_code}")))?;
    if r.u8()? != 0 {
        return Err(invalid("reserved byte must be zero"));
    }
    let alpha = r.f64()?;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(invalid(format!("alpha {alpha}")));
    }
    let n_c = r.u64()? as usize;
    let n_p = r.f64()?;
    let patients = r.u64()? as usize;
    if n_c == 0 || patients == 0 || !(n_p > 0.0 && n_p.is_finite()) {
        return Err(invalid(format!("counts n_c = {n_c}, n_p = {n_p}, P = {patients}")));
    }
    let spec = NormalizationSpec::new(r.f32()?, r.f32()?)?;
    let config_digest: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
    let adjusted = method.is_adjusted();
    let calibration = if method.is_crc() {
        let lambda_hat = r.f32()?;
        let aggregation = match r.u8()? {
            0 => LossAggregation::PerImage,
            1 => LossAggregation::PerPixel,
            c => return Err(invalid(format!("aggregation code {c}"))),
        };
        if r.take(3)? != [0, 0, 0] {
            return Err(invalid("reserved bytes must be zero"));
        }
        let b = r.f64()?;
        let q = (r.f64()?, r.f64()?);
        if !(lambda_hat >= 0.0 && lambda_hat.is_finite()) || !(b > 0.0 && b.is_finite()) {
            return Err(invalid(format!("lambda {lambda_hat}, B {b}")));
        }
        if !(0.0..=1.0).contains(&q.0) || !(0.0..=1.0).contains(&q.1) || q.0 >= q.1 {
            return Err(invalid(format!("bound quantiles {q:?}")));
        }
        Calibration::Crc(CrcCalibration {
            lambda_hat,
            alpha,
            b,
            n_c,
            patients,
            n_p,
            adjusted,
            aggregation,
            bound_quantiles: q,
        })
    } else {
        let saturated = match r.u8()? {
            0 => false,
            1 => true,
            c => return Err(invalid(format!("saturated flag {c}"))),
        };
        if r.take(3)? != [0, 0, 0] {
            return Err(invalid("reserved bytes must be zero"));
        }
        let (h, w) = (r.u32()? as usize, r.u32()? as usize);
        if h == 0 || w == 0 {
            return Err(invalid(format!("quantile grid {h}x{w}")));
        }
        let shape = Shape::new(h, w);
        let qhat = if saturated {
            Quantiles::Saturated { shape }
        } else {
            let n = h
                .checked_mul(w)
                .filter(|n| n.checked_mul(4).is_some())
                .ok_or_else(|| invalid("grid overflow"))?;
            if r.remaining() < 4 * n {
                return Err(IoError::TruncatedPayload {
                    expected: r.position() + 4 * n + 32,
                    actual: bytes.len(),
                });
            }
            let values: Vec<f32> = (0..n).map(|_| r.f32()).collect::<Result<_, _>>()?;
            if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(invalid("quantiles must be finite and non-negative"));
            }
            Quantiles::Field { shape, values }
        };
        Calibration::Scp(ScpCalibration {
            qhat,
            alpha,
            n_c,
            patients,
            n_p,
            adjusted,
            eval_mask_policy,
        })
    };
    r.finish()?;
    Ok(CalibrationArtifact {
        calibration,
        spec,
        eval_mask_policy,
        config_digest,
    })
}

pub fn write_calibration(path: &Path, artifact: &CalibrationArtifact) -> Result<(), IoError> {
    write_file(path, &encode_calibration(artifact))
}

pub fn read_calibration(path: &Path) -> Result<CalibrationArtifact, IoError> {
    decode_calibration(&read_file(path)?)
}
