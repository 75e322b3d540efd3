use std::sync::Arc;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::ws::{Message as WsMessage, WebSocket, WebSocketUpgrade};
use axum::extract::{FromRequest, FromRequestParts, Path, Query, Request, State};
use axum::http::request::Parts;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use futures::{SinkExt, StreamExt};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tokio::sync::mpsc;

use splitledger_core::auth::{SessionGrant, UserProfile};
use splitledger_core::events::NewEvent;
use splitledger_core::ids::{CardId, ConversationId, EventId, RequestId, UserId};
use splitledger_core::payments::NewCard;
use splitledger_core::social::{Message, SearchHit};
use splitledger_core::{Ledger, SplitRule};

use crate::error::ApiError;
use crate::push::PushHub;
use crate::views::*;

#[derive(Clone)]
pub struct AppState {
    pub ledger: Arc<Ledger>,
    pub hub: Arc<PushHub>,
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/auth/signup", post(signup))
        .route("/auth/login", post(login))
        .route("/auth/logout", post(logout))
        .route("/events", get(list_events).post(create_event))
        .route("/events/{id}", get(event_detail))
        .route("/events/{id}/respond", post(respond_invitation))
        .route("/events/{id}/pay", post(pay_share))
        .route("/events/{id}/cancel", post(cancel_event))
        .route("/users/search", get(search_users))
        .route("/friends", get(friends))
        .route("/friends/requests", post(send_friend_request))
        .route("/friends/requests/{id}/respond", post(respond_friend_request))
        .route("/chats", get(list_chats))
        .route("/chats/{id}/messages", get(list_messages).post(send_message))
        .route("/profile", get(get_profile).put(update_profile))
        .route("/cards", get(list_cards).post(add_card))
        .route("/cards/{id}", delete(remove_card))
        .route("/ws", get(push_socket))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "NotFound", "no such route") })
        .with_state(state)
}

/// Runs blocking service code off the async workers.
async fn blocking<T, F>(state: &AppState, f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce(&Ledger) -> Result<T, ApiError> + Send + 'static,
{
    let ledger = state.ledger.clone();
    tokio::task::spawn_blocking(move || f(&ledger)).await.map_err(ApiError::internal)?
}

/// JSON body whose rejections come back in the API error shape.
pub struct Body<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequest<S> for Body<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, ApiError> {
        match Json::<T>::from_request(req, state).await {
            Ok(Json(v)) => Ok(Body(v)),
            Err(rej) => Err(json_rejection(rej)),
        }
    }
}

fn json_rejection(rej: JsonRejection) -> ApiError {
    ApiError::malformed(rej.body_text())
}

pub struct Params<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequestParts<S> for Params<T> {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &S) -> Result<Self, ApiError> {
        match Query::<T>::from_request_parts(parts, state).await {
            Ok(Query(v)) => Ok(Params(v)),
            Err(rej) => Err(query_rejection(rej)),
        }
    }
}

fn query_rejection(rej: QueryRejection) -> ApiError {
    ApiError::malformed(rej.body_text())
}

/// The caller behind a bearer token.
pub struct Caller {
    pub user: UserId,
    pub token: String,
}

fn bearer(parts: &Parts) -> Option<String> {
    let value = parts.headers.get(header::AUTHORIZATION)?.to_str().ok()?;
    let token = value.strip_prefix("Bearer ").or_else(|| value.strip_prefix("bearer "))?;
    Some(token.trim().to_string())
}

fn query_token(parts: &Parts) -> Option<String> {
    parts.uri.query()?.split('&').find_map(|kv| kv.strip_prefix("token=")).map(str::to_string)
}

impl FromRequestParts<AppState> for Caller {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &AppState) -> Result<Self, ApiError> {
        // Browsers cannot set headers on a WebSocket handshake, so the push
        // route also takes the token as a query parameter.
        let token = bearer(parts)
            .or_else(|| (parts.uri.path() == "/ws").then(|| query_token(parts)).flatten())
            .ok_or_else(ApiError::unauthorized)?;
        let user = state.ledger.auth.authenticate(&token).map_err(|_| ApiError::unauthorized())?;
        Ok(Caller { user, token })
    }
}

#[derive(Serialize)]
struct SessionView {
    token: String,
    expires_at: chrono::DateTime<chrono::Utc>,
    user: UserProfile,
}

impl From<SessionGrant> for SessionView {
    fn from(g: SessionGrant) -> Self {
        SessionView { token: g.token, expires_at: g.expires_at, user: g.user }
    }
}

#[derive(Deserialize)]
struct SignupRequest {
    display_name: String,
    username: String,
    email: String,
    password: String,
}

async fn signup(State(state): State<AppState>, Body(req): Body<SignupRequest>) -> Result<Response, ApiError> {
    let grant = blocking(&state, move |l| {
        Ok(l.auth.signup(&req.display_name, &req.username, &req.email, &req.password)?)
    })
    .await?;
    Ok((StatusCode::CREATED, Json(SessionView::from(grant))).into_response())
}

#[derive(Deserialize)]
struct LoginRequest {
    email: String,
    password: String,
}

async fn login(State(state): State<AppState>, Body(req): Body<LoginRequest>) -> Result<Json<SessionView>, ApiError> {
    let grant = blocking(&state, move |l| Ok(l.auth.login(&req.email, &req.password)?)).await?;
    Ok(Json(grant.into()))
}

async fn logout(State(state): State<AppState>, caller: Caller) -> Result<StatusCode, ApiError> {
    blocking(&state, move |l| Ok(l.auth.logout(&caller.token)?)).await?;
    Ok(StatusCode::NO_CONTENT)
}

async fn list_events(State(state): State<AppState>, caller: Caller) -> Result<Json<Vec<HomeEntryView>>, ApiError> {
    let entries = blocking(&state, move |l| Ok(l.events.list_home_events(&caller.user)?)).await?;
    Ok(Json(entries.into_iter().map(Into::into).collect()))
}

#[derive(Deserialize)]
struct CreateEventRequest {
    title: String,
    #[serde(default)]
    description: String,
    total: MoneyInput,
    #[serde(default = "equal_rule")]
    rule: SplitRule,
    #[serde(default)]
    invitees: Vec<UserId>,
}

fn equal_rule() -> SplitRule {
    SplitRule::Equal
}

async fn create_event(
    State(state): State<AppState>,
    caller: Caller,
    Body(req): Body<CreateEventRequest>,
) -> Result<Response, ApiError> {
    let total = req.total.resolve()?;
    let new_event = NewEvent { title: req.title, description: req.description, total, rule: req.rule, invitees: req.invitees };
    let event = blocking(&state, move |l| Ok(l.events.create_event(&caller.user, new_event)?)).await?;
    Ok((StatusCode::CREATED, Json(EventView::from(event))).into_response())
}

async fn event_detail(
    State(state): State<AppState>,
    caller: Caller,
    Path(id): Path<String>,
) -> Result<Json<EventDetailView>, ApiError> {
    let id = EventId::from(id);
    let view = blocking(&state, move |l| {
        let detail = l.events.get_event_detail(&caller.user, &id)?;
        let attempts = l.payments.attempts(&caller.user, &id)?;
        Ok(EventDetailView::new(detail, attempts))
    })
    .await?;
    Ok(Json(view))
}

#[derive(Deserialize)]
struct RespondRequest {
    accept: bool,
}

async fn respond_invitation(
    State(state): State<AppState>,
    caller: Caller,
    Path(id): Path<String>,
    Body(req): Body<RespondRequest>,
) -> Result<Json<ParticipationView>, ApiError> {
    let id = EventId::from(id);
    let p = blocking(&state, move |l| Ok(l.events.respond_invitation(&caller.user, &id, req.accept)?)).await?;
    Ok(Json(p.into()))
}

#[derive(Deserialize)]
struct PayRequest {
    card_id: CardId,
}

async fn pay_share(
    State(state): State<AppState>,
    caller: Caller,
    Path(id): Path<String>,
    Body(req): Body<PayRequest>,
) -> Result<Json<PaymentView>, ApiError> {
    let id = EventId::from(id);
    let payment = blocking(&state, move |l| Ok(l.payments.pay_share(&caller.user, &id, &req.card_id)?)).await?;
    Ok(Json(payment.into()))
}

async fn cancel_event(
    State(state): State<AppState>,
    caller: Caller,
    Path(id): Path<String>,
) -> Result<Json<EventView>, ApiError> {
    let id = EventId::from(id);
    let event = blocking(&state, move |l| Ok(l.events.cancel_event(&caller.user, &id)?)).await?;
    Ok(Json(event.into()))
}

#[derive(Deserialize)]
struct SearchParams {
    #[serde(default)]
    q: String,
}

async fn search_users(
    State(state): State<AppState>,
    caller: Caller,
    Params(params): Params<SearchParams>,
) -> Result<Json<Vec<SearchHit>>, ApiError> {
    let hits = blocking(&state, move |l| Ok(l.social.search_users(&caller.user, &params.q)?)).await?;
    Ok(Json(hits))
}

async fn friends(State(state): State<AppState>, caller: Caller) -> Result<Json<FriendsView>, ApiError> {
    let view = blocking(&state, move |l| {
        let overview = l.social.friends(&caller.user)?;
        let pending = |requests: Vec<_>, incoming: bool| -> Result<Vec<PendingRequestView>, ApiError> {
            requests
                .into_iter()
                .map(|r: splitledger_core::social::FriendRequest| {
                    let other = if incoming { &r.from } else { &r.to };
                    let user = l.auth.profile(other)?.public();
                    Ok(PendingRequestView { request: r.into(), user })
                })
                .collect()
        };
        Ok(FriendsView {
            incoming: pending(overview.incoming, true)?,
            outgoing: pending(overview.outgoing, false)?,
            friends: overview.friends,
        })
    })
    .await?;
    Ok(Json(view))
}

#[derive(Deserialize)]
struct FriendRequestBody {
    username: String,
}

async fn send_friend_request(
    State(state): State<AppState>,
    caller: Caller,
    Body(req): Body<FriendRequestBody>,
) -> Result<Response, ApiError> {
    let request = blocking(&state, move |l| Ok(l.social.send_friend_request(&caller.user, &req.username)?)).await?;
    Ok((StatusCode::CREATED, Json(FriendRequestView::from(request))).into_response())
}

async fn respond_friend_request(
    State(state): State<AppState>,
    caller: Caller,
    Path(id): Path<String>,
    Body(req): Body<RespondRequest>,
) -> Result<Json<FriendRequestView>, ApiError> {
    let id = RequestId::from(id);
    let request =
        blocking(&state, move |l| Ok(l.social.respond_friend_request(&caller.user, &id, req.accept)?)).await?;
    Ok(Json(request.into()))
}

async fn list_chats(State(state): State<AppState>, caller: Caller) -> Result<Json<Vec<ChatView>>, ApiError> {
    let chats = blocking(&state, move |l| Ok(l.social.list_conversations(&caller.user)?)).await?;
    Ok(Json(chats.into_iter().map(Into::into).collect()))
}

#[derive(Deserialize)]
struct MessagesParams {
    after_seq: Option<u64>,
}

async fn list_messages(
    State(state): State<AppState>,
    caller: Caller,
    Path(id): Path<String>,
    Params(params): Params<MessagesParams>,
) -> Result<Json<Vec<Message>>, ApiError> {
    let id = ConversationId::from(id);
    let messages = blocking(&state, move |l| Ok(l.social.messages(&caller.user, &id, params.after_seq)?)).await?;
    Ok(Json(messages))
}

#[derive(Deserialize)]
struct SendMessageRequest {
    #[serde(alias = "content")]
    text: String,
}

async fn send_message(
    State(state): State<AppState>,
    caller: Caller,
    Path(id): Path<String>,
    Body(req): Body<SendMessageRequest>,
) -> Result<Response, ApiError> {
    let id = ConversationId::from(id);
    let message = blocking(&state, move |l| Ok(l.social.send_message(&caller.user, &id, &req.text)?)).await?;
    Ok((StatusCode::CREATED, Json(message)).into_response())
}

async fn get_profile(State(state): State<AppState>, caller: Caller) -> Result<Json<UserProfile>, ApiError> {
    let profile = blocking(&state, move |l| Ok(l.auth.profile(&caller.user)?)).await?;
    Ok(Json(profile))
}

#[derive(Deserialize)]
struct ProfileUpdate {
    display_name: String,
    #[serde(default)]
    avatar_ref: Option<String>,
}

async fn update_profile(
    State(state): State<AppState>,
    caller: Caller,
    Body(req): Body<ProfileUpdate>,
) -> Result<Json<UserProfile>, ApiError> {
    let profile = blocking(&state, move |l| {
        Ok(l.auth.update_profile(&caller.user, &req.display_name, req.avatar_ref.as_deref())?)
    })
    .await?;
    Ok(Json(profile))
}

async fn list_cards(State(state): State<AppState>, caller: Caller) -> Result<Json<Vec<CardView>>, ApiError> {
    let cards = blocking(&state, move |l| Ok(l.payments.list_cards(&caller.user)?)).await?;
    Ok(Json(cards.into_iter().map(Into::into).collect()))
}

#[derive(Deserialize)]
struct AddCardRequest {
    pan: String,
    expiry_month: u32,
    expiry_year: i32,
    holder_name: String,
    cvv: String,
}

async fn add_card(
    State(state): State<AppState>,
    caller: Caller,
    Body(req): Body<AddCardRequest>,
) -> Result<Response, ApiError> {
    let card = NewCard {
        pan: req.pan,
        expiry_month: req.expiry_month,
        expiry_year: req.expiry_year,
        holder_name: req.holder_name,
        cvv: req.cvv,
    };
    let card = blocking(&state, move |l| Ok(l.payments.add_card(&caller.user, card)?)).await?;
    Ok((StatusCode::CREATED, Json(CardView::from(card))).into_response())
}

async fn remove_card(
    State(state): State<AppState>,
    caller: Caller,
    Path(id): Path<String>,
) -> Result<StatusCode, ApiError> {
    let id = CardId::from(id);
    blocking(&state, move |l| Ok(l.payments.remove_card(&caller.user, &id)?)).await?;
    Ok(StatusCode::NO_CONTENT)
}

async fn push_socket(State(state): State<AppState>, caller: Caller, ws: WebSocketUpgrade) -> Response {
    // Register before the upgrade completes so nothing committed after the
    // handshake response is missed.
    let (id, rx) = state.hub.register(&caller.user, &caller.token);
    let hub = state.hub.clone();
    let user = caller.user.clone();
    let failed_hub = state.hub.clone();
    let failed_user = caller.user;
    ws.on_failed_upgrade(move |_| failed_hub.unregister(&failed_user, id))
        .on_upgrade(move |socket| async move {
            pump(socket, rx).await;
            hub.unregister(&user, id);
        })
}

async fn pump(socket: WebSocket, mut rx: mpsc::UnboundedReceiver<String>) {
    let (mut sink, mut stream) = socket.split();
    loop {
        tokio::select! {
            frame = rx.recv() => match frame {
                Some(text) => {
                    if sink.send(WsMessage::Text(text.into())).await.is_err() {
                        break;
                    }
                }
                // Replaced by a newer connection for the same session.
                None => {
                    let _ = sink.send(WsMessage::Close(None)).await;
                    break;
                }
            },
            incoming = stream.next() => match incoming {
                Some(Ok(WsMessage::Close(_))) | None | Some(Err(_)) => break,
                Some(Ok(_)) => {}
            },
        }
    }
}
