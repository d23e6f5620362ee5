//! Wire format for external evaluators.
//!
//! Newline-delimited JSON, one compact object per line, UTF-8. The client
//! opens with a [`Handshake`]; the server answers with a
//! [`HandshakeReply`]. Every [`Request`] is then answered by exactly one
//! [`Response`] carrying the same `id`. Server-side failures travel in the
//! `error` field; a line the server cannot parse is answered with
//! `{"id":null,"error":"parse"}`.

use serde::{Deserialize, Serialize};

use super::{AccuracyTriple, AccuracyUnit, EvalError};

pub const PROTOCOL_NAME: &str = "layerscale-eval";
pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Handshake {
    pub protocol: String,
    pub version: u32,
    pub n_layers: usize,
    pub first_scaled_layer: usize,
}

impl Handshake {
    pub fn new(n_layers: usize, first_scaled_layer: usize) -> Self {
        Self {
            protocol: PROTOCOL_NAME.to_string(),
            version: PROTOCOL_VERSION,
            n_layers,
            first_scaled_layer,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandshakeReply {
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub id: u64,
    pub scales: Vec<f64>,
    pub first_scaled_layer: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub id: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acc_first: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acc_middle: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acc_last: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_count: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Response {
    pub fn success(id: u64, triple: &AccuracyTriple) -> Self {
        Self {
            id: Some(id),
            acc_first: Some(triple.first),
            acc_middle: Some(triple.middle),
            acc_last: Some(triple.last),
            sample_count: Some(triple.sample_count),
            error: None,
        }
    }

    pub fn failure(id: Option<u64>, message: impl Into<String>) -> Self {
        Self {
            id,
            acc_first: None,
            acc_middle: None,
            acc_last: None,
            sample_count: None,
            error: Some(message.into()),
        }
    }

    /// Interprets this line as the answer to request `expected_id`.
    pub fn into_triple(self, expected_id: u64) -> Result<AccuracyTriple, EvalError> {
        if self.id != Some(expected_id) {
            return Err(EvalError::Protocol(format!(
                "response id {:?} does not match request id {expected_id}",
                self.id
            )));
        }
        if let Some(message) = self.error {
            return Err(EvalError::Remote {
                id: expected_id,
                message,
            });
        }
        match (self.acc_first, self.acc_middle, self.acc_last) {
            (Some(f), Some(m), Some(l)) => AccuracyTriple::new(
                f,
                m,
                l,
                self.sample_count.unwrap_or(0),
                AccuracyUnit::Percent,
            ),
            _ => Err(EvalError::Protocol(format!(
                "response {expected_id} is missing accuracy fields"
            ))),
        }
    }
}

/// Serializes a message as one line (without the trailing newline).
pub fn to_line<T: Serialize>(msg: &T) -> String {
    serde_json::to_string(msg).expect("protocol messages always serialize")
}
