// SPDX-License-Identifier: Apache-2.0

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An input value lies outside the domain of the operation.
    #[error("input out of domain: {0}")]
    InputDomain(String),

    /// A table or grid could not be constructed.
    #[error("construction error: {0}")]
    Construction(String),

    /// An inconsistent run or tiling configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// A caller broke a buffer-size or pairing contract.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A serialized table or report could not be decoded.
    #[error("format error: {0}")]
    Format(String),

    #[error("runtime error: {message} (config: {config})")]
    Runtime { message: String, config: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
