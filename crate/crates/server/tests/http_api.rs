mod common;

use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use reqwest::Method;
use serde_json::{json, Value};

use splitledger_core::payments::MockGateway;
use splitledger_core::LedgerOptions;

use common::*;

const PROTECTED: &[(&str, &str)] = &[
    ("POST", "/auth/logout"),
    ("GET", "/events"),
    ("POST", "/events"),
    ("GET", "/events/x"),
    ("POST", "/events/x/respond"),
    ("POST", "/events/x/pay"),
    ("POST", "/events/x/cancel"),
    ("GET", "/users/search?q=a"),
    ("POST", "/friends/requests"),
    ("POST", "/friends/requests/x/respond"),
    ("GET", "/friends"),
    ("GET", "/chats"),
    ("GET", "/chats/x/messages"),
    ("POST", "/chats/x/messages"),
    ("GET", "/profile"),
    ("PUT", "/profile"),
    ("GET", "/cards"),
    ("POST", "/cards"),
    ("DELETE", "/cards/x"),
    ("GET", "/ws"),
];

fn method(m: &str) -> Method {
    m.parse().unwrap()
}

#[test]
fn every_route_but_signup_and_login_needs_a_token() {
    let server = InProcess::start(|hub| LedgerOptions { notifier: hub, auth: fast_auth(), ..Default::default() });
    let api = server.api();
    for (m, path) in PROTECTED {
        for token in [None, Some("not-a-token"), Some("")] {
            let resp = api.call(method(m), path, token, Some(json!({})));
            assert_eq!(resp.status, 401, "{m} {path} with {token:?}: {resp:?}");
            assert_eq!(resp.code(), "Unauthorized");
        }
    }
    let user = api.signup("tokens");
    assert_eq!(api.call(Method::POST, "/auth/logout", Some(&user.token), None).status, 204);
    api.get("/profile", &user.token).expect(401, "Unauthorized");
}

#[test]
fn malformed_requests_get_json_errors() {
    let server = InProcess::start(|hub| LedgerOptions { notifier: hub, auth: fast_auth(), ..Default::default() });
    let api = server.api();
    let user = api.signup("malformed");
    let raw = reqwest::blocking::Client::new()
        .post(format!("http://{}/events", api.addr))
        .bearer_auth(&user.token)
        .header("content-type", "application/json")
        .body("{not json")
        .send()
        .unwrap();
    assert_eq!(raw.status().as_u16(), 400);
    let body: Value = raw.json().unwrap();
    assert_eq!(body["error"]["code"], "MalformedRequest");

    api.post("/events", &user.token, json!({ "title": "x" })).expect(400, "MalformedRequest");
    api.get("/chats/x/messages?after_seq=minus", &user.token).expect(400, "MalformedRequest");
    api.get("/nowhere", &user.token).expect(404, "NotFound");
    api.get("/events/no-such-event", &user.token).expect(404, "UnknownEvent");
    api.post("/events", &user.token, json!({ "title": "t", "total": "-1" })).expect(422, "NegativeAmount");
    api.post("/events", &user.token, json!({ "title": "t", "total": 0 })).expect(422, "ZeroTotal");
    api.post("/events", &user.token, json!({ "title": "t", "total": 1_000_000_000_001u64 })).expect(422, "Overflow");
}

struct Owned {
    user: User,
    card: String,
    chat: String,
    event: String,
    request: String,
}

/// Two users with their own cards, chats, events and requests. Every
/// cross-user access must fail without leaking the owner's data.
#[test]
fn users_cannot_reach_each_others_resources() {
    let server = InProcess::start(|hub| LedgerOptions { notifier: hub, auth: fast_auth(), ..Default::default() });
    let api = server.api();
    let mut owned = Vec::new();
    for name in ["iso_a", "iso_b"] {
        let user = api.signup(name);
        let friend = api.signup(&format!("{name}_friend"));
        let third = api.signup(&format!("{name}_third"));
        api.befriend(&user, &friend);
        let request = api.post("/friends/requests", &third.token, json!({ "username": user.username })).ok();
        let card = api.add_card(&user, GOOD_PAN);
        let chat = api.chat_with(&user, &friend);
        api.post(&format!("/chats/{chat}/messages"), &user.token, json!({ "text": format!("secret of {name}") })).ok();
        let event = api.create_event(&user, &format!("{name} party"), json!(900), json!({"kind": "equal"}), &[&friend]);
        owned.push(Owned {
            user,
            card,
            chat,
            event: event["id"].as_str().unwrap().to_string(),
            request: request["id"].as_str().unwrap().to_string(),
        });
    }

    let mut rng = rand::rngs::StdRng::seed_from_u64(7);
    for round in 0..200 {
        let (me, victim) = if rng.gen() { (&owned[0], &owned[1]) } else { (&owned[1], &owned[0]) };
        let requests: Vec<(Method, String, Option<Value>)> = vec![
            (Method::GET, format!("/chats/{}/messages", victim.chat), None),
            (Method::GET, format!("/chats/{}/messages?after_seq=0", victim.chat), None),
            (Method::POST, format!("/chats/{}/messages", victim.chat), Some(json!({ "text": "hi" }))),
            (Method::DELETE, format!("/cards/{}", victim.card), None),
            (Method::POST, format!("/events/{}/pay", me.event), Some(json!({ "card_id": victim.card }))),
            (Method::GET, format!("/events/{}", victim.event), None),
            (Method::POST, format!("/events/{}/respond", victim.event), Some(json!({ "accept": true }))),
            (Method::POST, format!("/events/{}/pay", victim.event), Some(json!({ "card_id": me.card }))),
            (Method::POST, format!("/events/{}/cancel", victim.event), None),
            (Method::POST, format!("/friends/requests/{}/respond", victim.request), Some(json!({ "accept": true }))),
        ];
        let (m, path, body) = requests.choose(&mut rng).unwrap().clone();
        let resp = api.call(m.clone(), &path, Some(&me.user.token), body);
        assert!(
            matches!(resp.status, 401 | 403 | 404 | 409),
            "round {round}: {m} {path} gave {} {}",
            resp.status,
            resp.body
        );
        let text = resp.body.to_string();
        assert!(!text.contains(&victim.user.token));
        assert!(!text.contains("secret of"), "message leaked: {text}");
    }

    for (me, victim) in [(&owned[0], &owned[1]), (&owned[1], &owned[0])] {
        let listing = [
            api.get("/cards", &me.user.token).ok(),
            api.get("/chats", &me.user.token).ok(),
            api.get("/events", &me.user.token).ok(),
            api.get("/friends", &me.user.token).ok(),
            api.get("/profile", &me.user.token).ok(),
        ]
        .map(|v| v.to_string())
        .join("\n");
        for secret in [&victim.card, &victim.chat, &victim.event, &victim.request, &victim.user.token] {
            assert!(!listing.contains(secret.as_str()), "{} sees {secret}", me.user.username);
        }
    }

    // The victims' resources are untouched.
    for o in &owned {
        assert_eq!(api.get("/cards", &o.user.token).ok().as_array().unwrap().len(), 1);
        let msgs = api.messages(&o.user, &o.chat);
        assert!(msgs.iter().all(|m| m["body"]["content"] != "hi"));
    }
}

/// Whatever a push frame reports must already be visible through the
/// matching GET.
#[test]
fn pushed_state_is_visible_by_polling() {
    let server = InProcess::start(|hub| LedgerOptions { notifier: hub, auth: fast_auth(), ..Default::default() });
    let api = server.api();
    let host = api.signup("pp_host");
    let guest = api.signup("pp_guest");
    let mut host_push = Push::connect(server.addr, &host.token);
    let mut guest_push = Push::connect(server.addr, &guest.token);

    api.post("/friends/requests", &host.token, json!({ "username": guest.username })).ok();
    let check = |push: &mut Push, user: &User, frames: usize| {
        for _ in 0..frames {
            let env = push.next().expect("push frame");
            let payload = &env["payload"];
            match env["type"].as_str().unwrap() {
                "message" | "invitation" => {
                    let chat = payload["conversation_id"].as_str().unwrap();
                    let after = payload["sequence"].as_u64().unwrap() - 1;
                    let polled = api.get(&format!("/chats/{chat}/messages?after_seq={after}"), &user.token).ok();
                    assert_eq!(polled[0]["id"], payload["id"]);
                    assert_eq!(polled[0]["sequence"], payload["sequence"]);
                }
                "friend_request" => {
                    let friends = api.get("/friends", &user.token).ok();
                    let id = &payload["id"];
                    let status = payload["status"].as_str().unwrap();
                    let seen_pending = friends["incoming"]
                        .as_array()
                        .unwrap()
                        .iter()
                        .chain(friends["outgoing"].as_array().unwrap())
                        .any(|r| &r["request"]["id"] == id);
                    assert_eq!(seen_pending, status == "pending", "{friends}");
                    if status == "accepted" {
                        assert!(!friends["friends"].as_array().unwrap().is_empty());
                    }
                }
                "event_update" => {
                    let detail = api.get(&format!("/events/{}", payload["id"].as_str().unwrap()), &user.token).ok();
                    assert_eq!(detail["event"]["state"], payload["state"]);
                }
                other => panic!("unexpected envelope type {other}"),
            }
        }
    };
    check(&mut guest_push, &guest, 2); // request and its chat note

    let requests = api.get("/friends", &guest.token).ok();
    let id = requests["incoming"][0]["request"]["id"].as_str().unwrap().to_string();
    api.post(&format!("/friends/requests/{id}/respond"), &guest.token, json!({ "accept": true })).ok();
    check(&mut host_push, &host, 1);

    let event = api.create_event(&host, "Pizza", json!(2000), json!({ "kind": "equal" }), &[&guest]);
    let event_id = event["id"].as_str().unwrap();
    check(&mut guest_push, &guest, 1);
    api.respond(&guest, event_id, true);
    let card = api.add_card(&guest, GOOD_PAN);
    api.pay(&guest, event_id, &card).ok();
    // The settlement reaches both members.
    let env = host_push.next_matching(10, |e| e["type"] == "event_update" && e["payload"]["state"] == "settled");
    assert_eq!(env["payload"]["state"], "settled");
    let detail = api.get(&format!("/events/{event_id}"), &host.token).ok();
    assert_eq!(detail["event"]["state"], "settled");

    let chat = api.chat_with(&guest, &host);
    for i in 0..20 {
        api.post(&format!("/chats/{chat}/messages"), &guest.token, json!({ "text": format!("m{i}") })).ok();
    }
    let env = host_push.next_matching(40, |e| e["payload"]["body"]["content"] == "m19");
    let polled = api.get(&format!("/chats/{chat}/messages"), &host.token).ok();
    assert_eq!(polled.as_array().unwrap().last().unwrap()["id"], env["payload"]["id"]);
}

#[test]
fn push_channel_is_one_per_session() {
    let server = InProcess::start(|hub| LedgerOptions { notifier: hub, auth: fast_auth(), ..Default::default() });
    let api = server.api();
    let a = api.signup("ws_a");
    let b = api.signup("ws_b");
    let mut first = Push::connect(server.addr, &a.token);
    let mut second = Push::connect(server.addr, &a.token);
    // The first connection is closed in favour of the second.
    assert!(first.next().is_none());
    let user_id = splitledger_core::ids::UserId::from(a.id.clone());
    let deadline = Instant::now() + Duration::from_secs(5);
    while server.hub.connection_count(&user_id) != 1 {
        assert!(Instant::now() < deadline);
        std::thread::sleep(Duration::from_millis(10));
    }
    api.post("/friends/requests", &b.token, json!({ "username": a.username })).ok();
    assert_eq!(second.next().unwrap()["type"], "friend_request");

    let resp = tungstenite::connect(format!("ws://{}/ws?token=wrong", server.addr));
    match resp {
        Err(tungstenite::Error::Http(r)) => assert_eq!(r.status().as_u16(), 401),
        other => panic!("expected 401, got {other:?}"),
    }
}

/// A slow charge ties up one worker, not the server.
#[test]
fn server_stays_responsive_during_a_slow_charge() {
    let gateway = Arc::new(MockGateway::default());
    gateway.set_delay(Duration::from_millis(1500));
    let gw = gateway.clone();
    let server = InProcess::start(move |hub| LedgerOptions {
        notifier: hub,
        gateway: gw,
        auth: fast_auth(),
        ..Default::default()
    });
    let api = server.api();
    let host = api.signup("slow_host");
    let guest = api.signup("slow_guest");
    api.befriend(&host, &guest);
    let card = api.add_card(&guest, GOOD_PAN);
    let event = api.create_event(&host, "Slow", json!(1000), json!({ "kind": "equal" }), &[&guest]);
    let id = event["id"].as_str().unwrap().to_string();
    api.respond(&guest, &id, true);

    let payer = {
        let (api, guest, id, card) = (api.clone(), guest.clone(), id.clone(), card.clone());
        std::thread::spawn(move || api.pay(&guest, &id, &card))
    };
    std::thread::sleep(Duration::from_millis(200));
    for _ in 0..10 {
        let start = Instant::now();
        api.get("/profile", &host.token).ok();
        api.get("/events", &host.token).ok();
        let chat = api.chat_with(&host, &guest);
        api.post(&format!("/chats/{chat}/messages"), &host.token, json!({ "text": "still here" })).ok();
        assert!(start.elapsed() < Duration::from_millis(500), "blocked for {:?}", start.elapsed());
    }
    let paid = payer.join().unwrap().ok();
    assert_eq!(paid["state"], "succeeded");
    assert_eq!(gateway.charge_count(), 1);
}

#[test]
fn gateway_failures_map_to_payment_statuses() {
    let gateway = Arc::new(MockGateway::default());
    let gw = gateway.clone();
    let server =
        InProcess::start(move |hub| LedgerOptions { notifier: hub, gateway: gw, auth: fast_auth(), ..Default::default() });
    let api = server.api();
    let host = api.signup("gw_host");
    let guest = api.signup("gw_guest");
    api.befriend(&host, &guest);
    let good = api.add_card(&guest, GOOD_PAN);
    let bad = api.add_card(&guest, DECLINE_PAN);
    let event = api.create_event(&host, "Gw", json!(1000), json!({ "kind": "equal" }), &[&guest]);
    let id = event["id"].as_str().unwrap().to_string();
    api.respond(&guest, &id, true);

    api.pay(&guest, &id, &bad).expect(402, "GatewayDeclined");
    gateway.set_available(false);
    api.pay(&guest, &id, &good).expect(502, "GatewayUnavailable");
    api.post(
        "/cards",
        &guest.token,
        json!({ "pan": "5555555555554444", "expiry_month": 1, "expiry_year": 2090, "holder_name": "G", "cvv": "999" }),
    )
    .expect(422, "GatewayRejected");
    gateway.set_available(true);
    api.pay(&guest, &id, &good).ok();

    let detail = api.get(&format!("/events/{id}"), &guest.token).ok();
    let states: Vec<&str> = detail["payments"].as_array().unwrap().iter().map(|p| p["state"].as_str().unwrap()).collect();
    assert_eq!(states, vec!["declined", "succeeded"]);
    assert_eq!(detail["payments"][0]["decline_reason"], "card declined");
}

#[test]
fn host_can_cancel_until_someone_pays() {
    let server = InProcess::start(|hub| LedgerOptions { notifier: hub, auth: fast_auth(), ..Default::default() });
    let api = server.api();
    let host = api.signup("cx_host");
    let guest = api.signup("cx_guest");
    api.befriend(&host, &guest);
    let card = api.add_card(&guest, GOOD_PAN);
    let first = api.create_event(&host, "One", json!(1000), json!({ "kind": "equal" }), &[&guest]);
    let second = api.create_event(&host, "Two", json!(1000), json!({ "kind": "equal" }), &[&guest]);
    let (first, second) = (first["id"].as_str().unwrap(), second["id"].as_str().unwrap());

    api.post(&format!("/events/{first}/cancel"), &guest.token, json!({})).expect(403, "NotHost");
    api.respond(&guest, first, true);
    let cancelled = api.post(&format!("/events/{first}/cancel"), &host.token, json!({})).ok();
    assert_eq!(cancelled["state"], "cancelled");
    assert!(!api.home_ids(&guest).contains(&first.to_string()));
    api.pay(&guest, first, &card).expect(409, "EventNotOpen");

    api.respond(&guest, second, true);
    api.pay(&guest, second, &card).ok();
    api.post(&format!("/events/{second}/cancel"), &host.token, json!({})).expect(409, "EventNotOpen");
}

// ---------------------------------------------------------------- process

#[test]
fn startup_line_and_clean_shutdown() {
    let dir = tempfile::tempdir().unwrap();
    let server = Server::file(dir.path());
    assert!(server.startup_line.starts_with("splitledger listening on http://127.0.0.1:"), "{}", server.startup_line);
    let api = server.api();
    api.signup("shutdown");
    assert_eq!(server.terminate(), Some(0));
    assert!(dir.path().join("users.log").exists());

    // Data dir from the environment.
    let env_dir = tempfile::tempdir().unwrap();
    let server = Server::start(&[], &[("SPLITLEDGER_DATA_DIR", env_dir.path().to_str().unwrap())]);
    assert!(server.startup_line.contains("store: file"));
    server.terminate();
    assert!(env_dir.path().join("users.log").exists());
}

#[test]
fn port_in_use_is_reported() {
    let taken = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = taken.local_addr().unwrap().port().to_string();
    let err = Server::try_start(&["--store", "memory", "--port", &port], &[]).err().expect("bind must fail");
    assert_eq!(err.0, Some(1));
    assert!(err.1.contains("already in use"), "{}", err.1);
}

#[test]
fn unwritable_data_dir_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("not-a-dir");
    std::fs::write(&blocker, b"x").unwrap();
    let err = Server::try_start(&["--store", "file", "--data-dir", blocker.to_str().unwrap()], &[])
        .err()
        .expect("open must fail");
    assert_eq!(err.0, Some(1));
    assert!(err.1.contains("not writable"), "{}", err.1);
}

#[test]
fn demo_seed_loads_once() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["--store", "file", "--data-dir", dir.path().to_str().unwrap(), "--seed-demo"];
    for _ in 0..2 {
        let server = Server::start(&args, &[]);
        let api = server.api();
        let login = api
            .call(
                Method::POST,
                "/auth/login",
                None,
                Some(json!({ "email": "alice@example.com", "password": splitledger_server::seed::DEMO_PASSWORD })),
            )
            .ok();
        let token = login["token"].as_str().unwrap();
        let friends = api.get("/friends", token).ok();
        assert_eq!(friends["friends"].as_array().unwrap().len(), 3);
        let home = api.get("/events", token).ok();
        assert_eq!(home.as_array().unwrap().len(), 1);
        assert_eq!(home[0]["title"], "Team dinner");
        assert_eq!(api.get("/cards", token).ok().as_array().unwrap().len(), 1);
        server.terminate();
    }
}
