use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde_json::json;

use splitledger_core::auth::AuthError;
use splitledger_core::events::EventError;
use splitledger_core::payments::PaymentError;
use splitledger_core::social::SocialError;
use splitledger_core::split::RuleError;
use splitledger_core::storage::StoreError;
use splitledger_core::MoneyError;

/// An error as it goes over the wire: an HTTP status, a stable
/// machine-readable code and a message for humans.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError { status, code, message: message.into() }
    }

    pub fn malformed(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "MalformedRequest", message)
    }

    pub fn unauthorized() -> Self {
        ApiError::new(StatusCode::UNAUTHORIZED, "Unauthorized", "missing, unknown or expired session")
    }

    pub fn internal(message: impl std::fmt::Display) -> Self {
        log::error!("internal error: {message}");
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", "internal server error")
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "error": { "code": self.code, "message": self.message } });
        (self.status, Json(body)).into_response()
    }
}

const NOT_FOUND: StatusCode = StatusCode::NOT_FOUND;
const UNAUTHORIZED: StatusCode = StatusCode::UNAUTHORIZED;
const FORBIDDEN: StatusCode = StatusCode::FORBIDDEN;
const CONFLICT: StatusCode = StatusCode::CONFLICT;
const INVALID: StatusCode = StatusCode::UNPROCESSABLE_ENTITY;

fn mapped(status: StatusCode, code: &'static str, err: &dyn std::fmt::Display) -> ApiError {
    ApiError::new(status, code, err.to_string())
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::VersionConflict { .. } => mapped(CONFLICT, "VersionConflict", &e),
            other => ApiError::internal(other),
        }
    }
}

impl From<MoneyError> for ApiError {
    fn from(e: MoneyError) -> Self {
        let code = match e {
            MoneyError::PrecisionExceeded => "PrecisionExceeded",
            MoneyError::NegativeAmount => "NegativeAmount",
            MoneyError::NotANumber => "NotANumber",
            MoneyError::Overflow => "Overflow",
        };
        mapped(INVALID, code, &e)
    }
}

impl From<RuleError> for ApiError {
    fn from(e: RuleError) -> Self {
        let code = match e {
            RuleError::RuleLengthMismatch { .. } => "RuleLengthMismatch",
            RuleError::RuleSumMismatch { .. } => "RuleSumMismatch",
            RuleError::RuleAllZero => "RuleAllZero",
            RuleError::NoMembers => "NoMembers",
        };
        mapped(INVALID, code, &e)
    }
}

impl From<AuthError> for ApiError {
    fn from(e: AuthError) -> Self {
        let (status, code) = match &e {
            AuthError::DuplicateEmail => (CONFLICT, "DuplicateEmail"),
            AuthError::DuplicateUsername => (CONFLICT, "DuplicateUsername"),
            AuthError::WeakPassword => (INVALID, "WeakPassword"),
            AuthError::InvalidEmail => (INVALID, "InvalidEmail"),
            AuthError::InvalidUsername => (INVALID, "InvalidUsername"),
            AuthError::InvalidDisplayName => (INVALID, "InvalidDisplayName"),
            AuthError::InvalidAvatar => (INVALID, "InvalidAvatar"),
            AuthError::InvalidCredentials => (UNAUTHORIZED, "InvalidCredentials"),
            AuthError::Unauthorized => (UNAUTHORIZED, "Unauthorized"),
            AuthError::UnknownUser => (NOT_FOUND, "UnknownUser"),
            AuthError::Store(_) => {
                let AuthError::Store(s) = e else { unreachable!() };
                return s.into();
            }
        };
        mapped(status, code, &e)
    }
}

impl From<SocialError> for ApiError {
    fn from(e: SocialError) -> Self {
        let (status, code) = match &e {
            SocialError::UnknownUser => (NOT_FOUND, "UnknownUser"),
            SocialError::AlreadyFriends => (CONFLICT, "AlreadyFriends"),
            SocialError::RequestAlreadyPending => (CONFLICT, "RequestAlreadyPending"),
            SocialError::SelfRequest => (INVALID, "SelfRequest"),
            SocialError::UnknownRequest => (NOT_FOUND, "UnknownRequest"),
            SocialError::NotAddressee => (FORBIDDEN, "NotAddressee"),
            SocialError::AlreadyResolved => (CONFLICT, "AlreadyResolved"),
            SocialError::UnknownConversation => (NOT_FOUND, "UnknownConversation"),
            SocialError::NotParticipant => (FORBIDDEN, "NotParticipant"),
            SocialError::EmptyMessage => (INVALID, "EmptyMessage"),
            SocialError::MessageTooLong => (INVALID, "MessageTooLong"),
            SocialError::EmptyQuery => (INVALID, "EmptyQuery"),
            SocialError::NotFriends => (INVALID, "NotFriends"),
            SocialError::UnknownMessage => (NOT_FOUND, "UnknownMessage"),
            SocialError::InvitationResolved => (CONFLICT, "InvitationResolved"),
            SocialError::Auth(_) | SocialError::Store(_) => {
                return match e {
                    SocialError::Auth(a) => a.into(),
                    SocialError::Store(s) => s.into(),
                    _ => unreachable!(),
                };
            }
        };
        mapped(status, code, &e)
    }
}

impl From<EventError> for ApiError {
    fn from(e: EventError) -> Self {
        let (status, code) = match &e {
            EventError::UnknownEvent => (NOT_FOUND, "UnknownEvent"),
            EventError::NotMember => (FORBIDDEN, "NotMember"),
            EventError::NotInvitee => (FORBIDDEN, "NotInvitee"),
            EventError::NotHost => (FORBIDDEN, "NotHost"),
            EventError::AlreadyResponded => (CONFLICT, "AlreadyResponded"),
            EventError::EventNotOpen => (CONFLICT, "EventNotOpen"),
            EventError::NotConfirmed => (CONFLICT, "NotConfirmed"),
            EventError::AlreadyPaid => (CONFLICT, "AlreadyPaid"),
            EventError::PaymentInProgress => (CONFLICT, "PaymentInProgress"),
            EventError::AmountMismatch { .. } => (CONFLICT, "AmountMismatch"),
            EventError::HasPayments => (CONFLICT, "HasPayments"),
            EventError::NotFriends(_) => (INVALID, "NotFriends"),
            EventError::ZeroTotal => (INVALID, "ZeroTotal"),
            EventError::TooManyMembers => (INVALID, "TooManyMembers"),
            EventError::DuplicateInvitee => (INVALID, "DuplicateInvitee"),
            EventError::InvalidTitle => (INVALID, "InvalidTitle"),
            EventError::DescriptionTooLong => (INVALID, "DescriptionTooLong"),
            EventError::InvalidRule(_) | EventError::Social(_) | EventError::Auth(_) | EventError::Store(_) => {
                return match e {
                    EventError::InvalidRule(r) => r.into(),
                    EventError::Social(s) => s.into(),
                    EventError::Auth(a) => a.into(),
                    EventError::Store(s) => s.into(),
                    _ => unreachable!(),
                };
            }
        };
        mapped(status, code, &e)
    }
}

impl From<PaymentError> for ApiError {
    fn from(e: PaymentError) -> Self {
        let (status, code) = match &e {
            PaymentError::InvalidPan => (INVALID, "InvalidPan"),
            PaymentError::LuhnFailure => (INVALID, "LuhnFailure"),
            PaymentError::InvalidCvv => (INVALID, "InvalidCvv"),
            PaymentError::InvalidExpiry => (INVALID, "InvalidExpiry"),
            PaymentError::ExpiredCard => (INVALID, "ExpiredCard"),
            PaymentError::InvalidHolderName => (INVALID, "InvalidHolderName"),
            PaymentError::GatewayRejected(_) => (INVALID, "GatewayRejected"),
            PaymentError::TooManyCards => (INVALID, "TooManyCards"),
            PaymentError::UnknownCard => (NOT_FOUND, "UnknownCard"),
            PaymentError::NotOwner => (FORBIDDEN, "NotOwner"),
            PaymentError::AlreadyPaid => (CONFLICT, "AlreadyPaid"),
            PaymentError::NotConfirmed => (CONFLICT, "NotConfirmed"),
            PaymentError::GatewayDeclined(_) => (StatusCode::PAYMENT_REQUIRED, "GatewayDeclined"),
            PaymentError::GatewayUnavailable(_) => (StatusCode::BAD_GATEWAY, "GatewayUnavailable"),
            PaymentError::Event(_) | PaymentError::Store(_) => {
                return match e {
                    PaymentError::Event(ev) => ev.into(),
                    PaymentError::Store(s) => s.into(),
                    _ => unreachable!(),
                };
            }
        };
        mapped(status, code, &e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn statuses_follow_error_classes() {
        let cases: Vec<(ApiError, u16, &str)> = vec![
            (PaymentError::AlreadyPaid.into(), 409, "AlreadyPaid"),
            (PaymentError::GatewayUnavailable("x".into()).into(), 502, "GatewayUnavailable"),
            (PaymentError::Event(EventError::UnknownEvent).into(), 404, "UnknownEvent"),
            (EventError::InvalidRule(RuleError::RuleSumMismatch { sum: 9999 }).into(), 422, "RuleSumMismatch"),
            (EventError::Social(SocialError::NotFriends).into(), 422, "NotFriends"),
            (AuthError::InvalidCredentials.into(), 401, "InvalidCredentials"),
            (SocialError::Auth(AuthError::UnknownUser).into(), 404, "UnknownUser"),
            (MoneyError::PrecisionExceeded.into(), 422, "PrecisionExceeded"),
        ];
        for (err, status, code) in cases {
            assert_eq!((err.status.as_u16(), err.code), (status, code));
        }
    }
}
