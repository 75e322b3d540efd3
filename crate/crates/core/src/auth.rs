//! Accounts, credentials and bearer sessions.

use std::fmt;
use std::sync::Arc;

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use chrono::{DateTime, Duration, Utc};
use rand::rngs::OsRng;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use subtle::ConstantTimeEq;
use thiserror::Error;

use crate::clock::Clock;
use crate::ids::UserId;
use crate::repo::Repo;
use crate::schema;
use crate::storage::{Collection, Store, StoreError};

pub const MIN_PASSWORD_LEN: usize = 8;
pub const MAX_PASSWORD_LEN: usize = 128;
const SALT_LEN: usize = 16;
const TOKEN_LEN: usize = 32;
const DIGEST_LEN: usize = 32;

#[derive(Debug, Error)]
pub enum AuthError {
    #[error("email is already registered")]
    DuplicateEmail,
    #[error("username is taken")]
    DuplicateUsername,
    #[error("password must be {MIN_PASSWORD_LEN} to {MAX_PASSWORD_LEN} characters")]
    WeakPassword,
    #[error("email address is not valid")]
    InvalidEmail,
    #[error("username must be 3-20 characters of a-z, 0-9 or _")]
    InvalidUsername,
    #[error("display name must be 1-50 characters")]
    InvalidDisplayName,
    #[error("avatar reference must be 1-100 characters")]
    InvalidAvatar,
    #[error("email or password is incorrect")]
    InvalidCredentials,
    #[error("missing, unknown or expired session")]
    Unauthorized,
    #[error("unknown user")]
    UnknownUser,
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserProfile {
    pub id: UserId,
    /// Always lower case, so it doubles as its own case-insensitive key.
    pub username: String,
    pub display_name: String,
    /// Stored lower-cased.
    pub email: String,
    pub avatar_ref: Option<String>,
    pub created_at: DateTime<Utc>,
}

/// What other users may see of an account.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PublicProfile {
    pub id: UserId,
    pub username: String,
    pub display_name: String,
    pub avatar_ref: Option<String>,
}

impl UserProfile {
    pub fn public(&self) -> PublicProfile {
        PublicProfile {
            id: self.id.clone(),
            username: self.username.clone(),
            display_name: self.display_name.clone(),
            avatar_ref: self.avatar_ref.clone(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Credential {
    user_id: UserId,
    digest: String,
    salt: String,
    iterations: u32,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct SessionRecord {
    user_id: UserId,
    created_at: DateTime<Utc>,
    expires_at: DateTime<Utc>,
}

/// What signup and login hand back to the caller.
#[derive(Clone)]
pub struct SessionGrant {
    pub token: String,
    pub expires_at: DateTime<Utc>,
    pub user: UserProfile,
}

impl fmt::Debug for SessionGrant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SessionGrant")
            .field("token", &"<redacted>")
            .field("expires_at", &self.expires_at)
            .field("user", &self.user.id)
            .finish()
    }
}

#[derive(Clone, Debug)]
pub struct AuthConfig {
    pub session_ttl: Duration,
    pub kdf_iterations: u32,
}

impl Default for AuthConfig {
    fn default() -> Self {
        AuthConfig { session_ttl: Duration::hours(24), kdf_iterations: 100_000 }
    }
}

pub struct AuthService {
    users: Repo<UserProfile>,
    credentials: Repo<Credential>,
    sessions: Repo<SessionRecord>,
    clock: Arc<dyn Clock>,
    config: AuthConfig,
}

impl AuthService {
    pub fn new(store: Arc<dyn Store>, clock: Arc<dyn Clock>, config: AuthConfig) -> Self {
        AuthService {
            users: Repo::new(store.clone(), Collection::Users),
            credentials: Repo::new(store.clone(), Collection::Credentials),
            sessions: Repo::new(store, Collection::Sessions),
            clock,
            config,
        }
    }

    pub fn signup(
        &self,
        display_name: &str,
        username: &str,
        email: &str,
        password: &str,
    ) -> Result<SessionGrant, AuthError> {
        let display_name = check_display_name(display_name)?;
        let username = check_username(username)?;
        let email = check_email(email)?;
        let len = password.chars().count();
        if !(MIN_PASSWORD_LEN..=MAX_PASSWORD_LEN).contains(&len) {
            return Err(AuthError::WeakPassword);
        }

        let user = UserProfile {
            id: UserId::generate(),
            username,
            display_name,
            email,
            avatar_ref: None,
            created_at: self.clock.now(),
        };
        // The unique indexes make this the single point where concurrent
        // signups for the same name or email are decided.
        match self.users.insert(user.id.as_str(), user.clone()) {
            Ok(_) => {}
            Err(StoreError::UniqueViolation { index: schema::USER_EMAIL, .. }) => return Err(AuthError::DuplicateEmail),
            Err(StoreError::UniqueViolation { index: schema::USER_USERNAME, .. }) => {
                return Err(AuthError::DuplicateUsername)
            }
            Err(e) => return Err(e.into()),
        }

        let mut salt = [0u8; SALT_LEN];
        OsRng.fill_bytes(&mut salt);
        let digest = derive(password, &salt, self.config.kdf_iterations);
        self.credentials.insert(
            user.id.as_str(),
            Credential {
                user_id: user.id.clone(),
                digest: URL_SAFE_NO_PAD.encode(digest),
                salt: URL_SAFE_NO_PAD.encode(salt),
                iterations: self.config.kdf_iterations,
            },
        )?;
        log::info!("new account {}", user.id);
        self.open_session(user)
    }

    pub fn login(&self, email: &str, password: &str) -> Result<SessionGrant, AuthError> {
        let key = email.trim().to_lowercase();
        let user = self.users.query(schema::USER_EMAIL, &key)?.into_iter().next();
        let credential = match &user {
            Some(u) => self.credentials.get(u.id.as_str())?,
            None => None,
        };
        let Some((user, credential)) = user.zip(credential) else {
            // Burn the same work as a real check so response time does not
            // reveal whether the account exists.
            derive(password, &[0u8; SALT_LEN], self.config.kdf_iterations);
            return Err(AuthError::InvalidCredentials);
        };
        let c = &credential.value;
        let salt = URL_SAFE_NO_PAD.decode(&c.salt).map_err(|_| AuthError::InvalidCredentials)?;
        let stored = URL_SAFE_NO_PAD.decode(&c.digest).map_err(|_| AuthError::InvalidCredentials)?;
        let actual = derive(password, &salt, c.iterations);
        if !bool::from(actual.as_slice().ct_eq(stored.as_slice())) {
            return Err(AuthError::InvalidCredentials);
        }
        self.open_session(user.value)
    }

    pub fn authenticate(&self, token: &str) -> Result<UserId, AuthError> {
        if token.is_empty() {
            return Err(AuthError::Unauthorized);
        }
        let session = self.sessions.get(&token_key(token))?.ok_or(AuthError::Unauthorized)?;
        if session.value.expires_at <= self.clock.now() {
            return Err(AuthError::Unauthorized);
        }
        Ok(session.value.user_id)
    }

    pub fn logout(&self, token: &str) -> Result<(), AuthError> {
        match self.sessions.delete(&token_key(token)) {
            Ok(()) => Ok(()),
            Err(StoreError::NotFound { .. }) => Err(AuthError::Unauthorized),
            Err(e) => Err(e.into()),
        }
    }

    pub fn profile(&self, user: &UserId) -> Result<UserProfile, AuthError> {
        Ok(self.users.get(user.as_str())?.ok_or(AuthError::UnknownUser)?.value)
    }

    pub fn find_by_username(&self, username: &str) -> Result<Option<UserProfile>, AuthError> {
        let key = username.trim().to_lowercase();
        Ok(self.users.query(schema::USER_USERNAME, &key)?.into_iter().next().map(|v| v.value))
    }

    pub fn all_users(&self) -> Result<Vec<UserProfile>, AuthError> {
        Ok(self.users.scan()?.into_iter().map(|v| v.value).collect())
    }

    /// Only the display name and avatar are editable.
    pub fn update_profile(
        &self,
        user: &UserId,
        display_name: &str,
        avatar_ref: Option<&str>,
    ) -> Result<UserProfile, AuthError> {
        let display_name = check_display_name(display_name)?;
        let avatar_ref = match avatar_ref.map(str::trim) {
            None | Some("") => None,
            Some(a) if a.chars().count() > 100 => return Err(AuthError::InvalidAvatar),
            Some(a) => Some(a.to_owned()),
        };
        let updated = self.users.modify(user.as_str(), |current| {
            Ok::<_, AuthError>(Some(UserProfile {
                display_name: display_name.clone(),
                avatar_ref: avatar_ref.clone(),
                ..current.clone()
            }))
        })?;
        Ok(updated.ok_or(AuthError::UnknownUser)?.value)
    }

    fn open_session(&self, user: UserProfile) -> Result<SessionGrant, AuthError> {
        let mut raw = [0u8; TOKEN_LEN];
        OsRng.fill_bytes(&mut raw);
        let token = URL_SAFE_NO_PAD.encode(raw);
        let now = self.clock.now();
        let expires_at = now + self.config.session_ttl;
        self.sessions
            .insert(&token_key(&token), SessionRecord { user_id: user.id.clone(), created_at: now, expires_at })?;
        Ok(SessionGrant { token, expires_at, user })
    }
}

fn derive(password: &str, salt: &[u8], iterations: u32) -> [u8; DIGEST_LEN] {
    let mut out = [0u8; DIGEST_LEN];
    pbkdf2::pbkdf2_hmac::<Sha256>(password.as_bytes(), salt, iterations, &mut out);
    out
}

/// Sessions are stored under a hash of the token, never the token itself.
fn token_key(token: &str) -> String {
    URL_SAFE_NO_PAD.encode(Sha256::digest(token.as_bytes()))
}

fn check_username(username: &str) -> Result<String, AuthError> {
    let username = username.trim().to_lowercase();
    let ok = (3..=20).contains(&username.len())
        && username.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_');
    if ok {
        Ok(username)
    } else {
        Err(AuthError::InvalidUsername)
    }
}

fn check_display_name(name: &str) -> Result<String, AuthError> {
    let name = name.trim();
    if (1..=50).contains(&name.chars().count()) {
        Ok(name.to_owned())
    } else {
        Err(AuthError::InvalidDisplayName)
    }
}

fn check_email(email: &str) -> Result<String, AuthError> {
    let email = email.trim().to_lowercase();
    let valid = email.len() <= 254
        && !email.chars().any(char::is_whitespace)
        && match email.split_once('@') {
            Some((local, domain)) => {
                !local.is_empty()
                    && !domain.contains('@')
                    && domain.contains('.')
                    && domain.split('.').all(|label| !label.is_empty())
            }
            None => false,
        };
    if valid {
        Ok(email)
    } else {
        Err(AuthError::InvalidEmail)
    }
}
