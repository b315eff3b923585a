//! JSON HTTP service over one loaded model and dataset.
//!
//! | method | path            | body                | response            |
//! |--------|-----------------|---------------------|---------------------|
//! | GET    | `/api/schema`   |                     | [`SchemaResponse`]  |
//! | GET    | `/api/defaults` |                     | `PreferenceProfile` |
//! | POST   | `/api/validate` | [`ValidateRequest`] | [`ValidateResponse`]|
//! | POST   | `/api/recourse` | [`RecourseRequest`] | [`RecourseResponse`]|
//! | POST   | `/api/whatif`   | [`WhatIfRequest`]   | [`WhatIfResponse`]  |
//!
//! Failures return an [`ErrorBody`]: 400 for malformed bodies, bad instances
//! and invalid profiles, 422 when the instance is already favorable.

use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use upar_core::preferences::{default_profile, validate, PreferenceProfile};
use upar_core::Error;

use crate::api::{
    compute, ErrorBody, RecourseRequest, RecourseResponse, SchemaResponse, ValidateRequest,
    ValidateResponse, WhatIfRequest, WhatIfResponse,
};
use crate::setup::Loaded;

pub const PORT_ENV: &str = "UPAR_PORT";
pub const DEFAULT_PORT: u16 = 8080;

pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn bad_request(msg: impl Into<String>) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            body: ErrorBody {
                error: msg.into(),
                violations: Vec::new(),
                probability: None,
                profile_index: None,
            },
        }
    }

    fn at_profile(mut self, index: usize) -> Self {
        self.body.profile_index = Some(index);
        self
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let message = e.to_string();
        match e {
            Error::InvalidProfile(violations) => Self {
                status: StatusCode::BAD_REQUEST,
                body: ErrorBody {
                    error: "invalid preference profile".into(),
                    violations,
                    probability: None,
                    profile_index: None,
                },
            },
            Error::AlreadyPositive(p) => Self {
                status: StatusCode::UNPROCESSABLE_ENTITY,
                body: ErrorBody {
                    error: message,
                    violations: Vec::new(),
                    probability: Some(p),
                    profile_index: None,
                },
            },
            Error::Dimension { .. }
            | Error::InstanceOutOfBounds { .. }
            | Error::InvalidInput(_)
            | Error::NoActionableFeatures => Self::bad_request(message),
            _ => Self {
                status: StatusCode::INTERNAL_SERVER_ERROR,
                body: ErrorBody {
                    error: message,
                    violations: Vec::new(),
                    probability: None,
                    profile_index: None,
                },
            },
        }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        Self::bad_request(r.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type Shared = Arc<Loaded>;

pub fn router(loaded: Loaded) -> Router {
    Router::new()
        .route("/api/schema", get(schema))
        .route("/api/defaults", get(defaults))
        .route("/api/validate", post(validate_profile))
        .route("/api/recourse", post(recourse))
        .route("/api/whatif", post(whatif))
        .with_state(Arc::new(loaded))
}

async fn schema(State(s): State<Shared>) -> Json<SchemaResponse> {
    Json(SchemaResponse::from(&s.schema))
}

async fn defaults(State(s): State<Shared>) -> Result<Json<PreferenceProfile>, ApiError> {
    Ok(Json(default_profile(&s.schema)?))
}

async fn validate_profile(
    State(s): State<Shared>,
    body: Result<Json<ValidateRequest>, JsonRejection>,
) -> Result<Json<ValidateResponse>, ApiError> {
    let Json(req) = body?;
    let violations = validate(&req.preferences, &s.schema);
    Ok(Json(ValidateResponse {
        valid: violations.is_empty(),
        violations,
    }))
}

async fn recourse(
    State(s): State<Shared>,
    body: Result<Json<RecourseRequest>, JsonRejection>,
) -> Result<Json<RecourseResponse>, ApiError> {
    let Json(req) = body?;
    let x = req.instance.to_vector(&s.schema)?;
    let profile = match req.preferences {
        Some(p) => p,
        None => default_profile(&s.schema)?,
    };
    let out = tokio::task::spawn_blocking(move || compute(&s, &x, &profile, req.method, req.seed))
        .await
        .map_err(|e| ApiError::from(Error::InvalidInput(e.to_string())))??;
    Ok(Json(out))
}

async fn whatif(
    State(s): State<Shared>,
    body: Result<Json<WhatIfRequest>, JsonRejection>,
) -> Result<Json<WhatIfResponse>, ApiError> {
    let Json(req) = body?;
    if req.profiles.is_empty() {
        return Err(ApiError::bad_request("`profiles` must not be empty"));
    }
    let x = req.instance.to_vector(&s.schema)?;
    for (k, p) in req.profiles.iter().enumerate() {
        let violations = validate(p, &s.schema);
        if !violations.is_empty() {
            return Err(ApiError::from(Error::InvalidProfile(violations)).at_profile(k));
        }
    }
    let results = tokio::task::spawn_blocking(move || {
        req.profiles
            .iter()
            .map(|p| compute(&s, &x, p, req.method, req.seed))
            .collect::<Result<Vec<_>, _>>()
    })
    .await
    .map_err(|e| ApiError::from(Error::InvalidInput(e.to_string())))??;
    Ok(Json(WhatIfResponse { results }))
}

/// Port from `UPAR_PORT`, falling back to [`DEFAULT_PORT`].
pub fn port_from_env() -> Result<u16, String> {
    match std::env::var(PORT_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| format!("{PORT_ENV}=`{v}` is not a valid port")),
        Err(_) => Ok(DEFAULT_PORT),
    }
}

pub async fn serve(loaded: Loaded, port: u16) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(("0.0.0.0", port)).await?;
    axum::serve(listener, router(loaded)).await
}
