/*
Copyright 2026 The msgan Authors

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
*/

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("expected dimension {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid start: {0}")]
    InvalidStart(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("infeasible scenario: {0}")]
    InfeasibleScenario(String),

    #[error("training diverged: {0}")]
    TrainingDiverged(String),

    #[error("no goal configuration found")]
    NoGoalFound,

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dim(expected: usize, actual: usize) -> Self {
        Error::DimensionMismatch { expected, actual }
    }
}
